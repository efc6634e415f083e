//! Axis-aligned rectangle primitives.
//!
//! Boxes are stored in corner form `(x1, y1, x2, y2)` with `(x1, y1)` the
//! top-left and `(x2, y2)` the bottom-right corner, in pixels. All arithmetic
//! is plain `f64`: min/max and products are exact wherever the inputs allow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate {value} at index {index}")]
    NonFiniteCoordinate { index: usize, value: f64 },
    #[error("invalid image dimensions {w}x{h}: both extents must be finite and positive")]
    InvalidImageDims { w: f64, h: f64 },
    #[error("invalid center form: width {bw} and height {bh} must be finite and non-negative")]
    InvalidCenterForm { bw: f64, bh: f64 },
}

/// Canonical axis-aligned box: `x2 >= x1`, `y2 >= y1`, all coordinates finite.
///
/// Zero-area boxes are representable; the metric layer decides where they are
/// acceptable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    /// Builds a canonical box from raw corners, swapping corners where needed.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        canonicalize([x1, y1, x2, y2])
    }

    pub fn from_array(coords: [f64; 4]) -> Result<Self, GeometryError> {
        canonicalize(coords)
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }

    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }

    #[inline]
    pub fn y2(&self) -> f64 {
        self.y2
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    #[inline]
    pub fn area(&self) -> f64 {
        area(self)
    }

    /// Shifts the box by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self, GeometryError> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Multiplies every coordinate by `s` (scaling about the origin).
    pub fn scale(&self, s: f64) -> Result<Self, GeometryError> {
        Self::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    /// True when the box lies within `[0, w] x [0, h]`.
    pub fn is_within(&self, img: &ImageDims) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= img.w() && self.y2 <= img.h()
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            x1: f64,
            y1: f64,
            x2: f64,
            y2: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        BBox::new(raw.x1, raw.y1, raw.x2, raw.y2).map_err(serde::de::Error::custom)
    }
}

/// Input image extents, the normalizer of the corner-distance penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageDims {
    w: f64,
    h: f64,
}

impl ImageDims {
    pub fn new(w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(GeometryError::InvalidImageDims { w, h });
        }
        Ok(Self { w, h })
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.w
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Squared image diagonal `w^2 + h^2`.
    #[inline]
    pub fn diag_sq(&self) -> f64 {
        self.w * self.w + self.h * self.h
    }

    pub fn scale(&self, s: f64) -> Result<Self, GeometryError> {
        Self::new(self.w * s, self.h * s)
    }
}

impl<'de> Deserialize<'de> for ImageDims {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            w: f64,
            h: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        ImageDims::new(raw.w, raw.h).map_err(serde::de::Error::custom)
    }
}

/// Center/size representation of a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterForm {
    pub xc: f64,
    pub yc: f64,
    pub bw: f64,
    pub bh: f64,
}

/// Orders raw corners into a canonical box. Rejects NaN and infinities.
pub fn canonicalize(raw: [f64; 4]) -> Result<BBox, GeometryError> {
    if let Some((index, &value)) = raw.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(GeometryError::NonFiniteCoordinate { index, value });
    }
    let [ax, ay, bx, by] = raw;
    Ok(BBox {
        x1: ax.min(bx),
        y1: ay.min(by),
        x2: ax.max(bx),
        y2: ay.max(by),
    })
}

#[inline]
pub fn area(b: &BBox) -> f64 {
    (b.x2 - b.x1) * (b.y2 - b.y1)
}

/// Overlap area; zero unless the overlap has strictly positive width and height.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw > 0.0 && ih > 0.0 {
        iw * ih
    } else {
        0.0
    }
}

/// Smallest box containing both inputs.
pub fn enclosing_box(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

pub fn to_center_form(b: &BBox) -> CenterForm {
    CenterForm {
        xc: (b.x1 + b.x2) / 2.0,
        yc: (b.y1 + b.y2) / 2.0,
        bw: b.x2 - b.x1,
        bh: b.y2 - b.y1,
    }
}

/// Inverse of [`to_center_form`]. Exact whenever the forward conversion was
/// (e.g. coordinates on a common dyadic grid well inside the f64 mantissa).
pub fn from_center_form(c: &CenterForm) -> Result<BBox, GeometryError> {
    if !(c.bw.is_finite() && c.bh.is_finite() && c.bw >= 0.0 && c.bh >= 0.0) {
        return Err(GeometryError::InvalidCenterForm { bw: c.bw, bh: c.bh });
    }
    let hw = c.bw / 2.0;
    let hh = c.bh / 2.0;
    canonicalize([c.xc - hw, c.yc - hh, c.xc + hw, c.yc + hh])
}
