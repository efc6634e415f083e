//! Losses `1 - metric`, their analytic gradients with respect to the predicted
//! corners, and a central finite-difference oracle.
//!
//! The IoU-family metrics are built from `min`/`max` selections, so they are
//! only piecewise smooth. [`gradient`] refuses to differentiate at a tie and
//! reports [`LossError::NonSmoothPoint`]; [`gradient_one_sided`] resolves ties
//! toward the prediction's coordinate (the prediction is treated as the active
//! argument of every `min`/`max`).
//!
//! CIoU is differentiated with its trade-off weight `alpha` held constant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, ImageDims};
use crate::metrics::{self, MetricError, MetricKind};

/// Coordinate differences at or below this are treated as ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Default central-difference step, suited to pixel-scale coordinates
/// (magnitudes around 1..1e4). Scale it with the coordinate magnitude for
/// other units.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

const COORD_NAMES: [&str; 4] = ["x1", "y1", "x2", "y2"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-smooth point: prediction {} is tied (gap {gap:e})", COORD_NAMES[*coord])]
    NonSmoothPoint { coord: usize, gap: f64 },
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

/// Which loss to evaluate. Image dimensions are carried exactly when the
/// metric needs them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    kind: MetricKind,
    img: Option<ImageDims>,
}

impl LossSpec {
    pub fn new(kind: MetricKind, img: Option<ImageDims>) -> Result<Self, LossError> {
        match (kind.requires_image(), img.is_some()) {
            (true, false) => Err(MetricError::MissingImageDims(kind).into()),
            (false, true) => Err(MetricError::UnexpectedImageDims(kind).into()),
            _ => Ok(Self { kind, img }),
        }
    }

    /// Builds a spec for `kind`, attaching `img` only if the kind uses it.
    pub fn for_image(kind: MetricKind, img: ImageDims) -> Self {
        Self {
            kind,
            img: kind.requires_image().then_some(img),
        }
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn img(&self) -> Option<&ImageDims> {
        self.img.as_ref()
    }
}

/// Partial derivatives of a loss with respect to the predicted corners.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    pub d_x1: f64,
    pub d_y1: f64,
    pub d_x2: f64,
    pub d_y2: f64,
}

impl LossGradient {
    pub fn from_array(g: [f64; 4]) -> Self {
        Self {
            d_x1: g[0],
            d_y1: g[1],
            d_x2: g[2],
            d_y2: g[3],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.d_x1, self.d_y1, self.d_x2, self.d_y2]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|&v| v == 0.0)
    }

    /// Dot product with a direction in corner space.
    pub fn dot(&self, dir: [f64; 4]) -> f64 {
        self.to_array().iter().zip(dir).map(|(g, d)| g * d).sum()
    }
}

pub fn loss(spec: &LossSpec, gt: &BBox, prd: &BBox) -> Result<f64, LossError> {
    let m = metrics::compute(spec.kind, gt, prd, spec.img.as_ref())?;
    Ok(1.0 - m.value)
}

/// First tied `min`/`max` selection that makes the loss non-differentiable at
/// `prd`, as `(coordinate index, gap)`.
pub fn find_tie(kind: MetricKind, gt: &BBox, prd: &BBox) -> Option<(usize, f64)> {
    let p = prd.to_array();
    let g = gt.to_array();
    let iw = p[2].min(g[2]) - p[0].max(g[0]);
    let ih = p[3].min(g[3]) - p[1].max(g[1]);
    let overlapping = iw > TIE_TOLERANCE && ih > TIE_TOLERANCE;
    let uses_enclosure = matches!(
        kind,
        MetricKind::Giou | MetricKind::Diou | MetricKind::Ciou | MetricKind::Eiou
    );

    if overlapping || uses_enclosure {
        for i in 0..4 {
            let gap = (p[i] - g[i]).abs();
            if gap <= TIE_TOLERANCE {
                return Some((i, gap));
            }
        }
    }

    // The overlap switching on or off along one axis while the other axis
    // overlaps is a kink in the intersection area.
    if iw.abs() <= TIE_TOLERANCE && ih > TIE_TOLERANCE {
        let coord = if p[0] >= g[0] && (p[0] - g[2]).abs() <= TIE_TOLERANCE { 0 } else { 2 };
        return Some((coord, iw.abs()));
    }
    if ih.abs() <= TIE_TOLERANCE && iw > TIE_TOLERANCE {
        let coord = if p[1] >= g[1] && (p[1] - g[3]).abs() <= TIE_TOLERANCE { 1 } else { 3 };
        return Some((coord, ih.abs()));
    }
    None
}

/// Analytic gradient; fails with [`LossError::NonSmoothPoint`] at ties.
pub fn gradient(spec: &LossSpec, gt: &BBox, prd: &BBox) -> Result<LossGradient, LossError> {
    // Surface metric precondition errors before tie analysis.
    metrics::compute(spec.kind, gt, prd, spec.img.as_ref())?;
    if let Some((coord, gap)) = find_tie(spec.kind, gt, prd) {
        return Err(LossError::NonSmoothPoint { coord, gap });
    }
    gradient_one_sided(spec, gt, prd)
}

/// Analytic gradient with ties resolved toward the prediction's coordinate.
pub fn gradient_one_sided(
    spec: &LossSpec,
    gt: &BBox,
    prd: &BBox,
) -> Result<LossGradient, LossError> {
    let m = metrics::compute(spec.kind, gt, prd, spec.img.as_ref())?;
    let d_metric = metric_gradient(spec, gt, prd, m.terms.alpha.unwrap_or(0.0));
    Ok(LossGradient::from_array(scale(d_metric, -1.0)))
}

/// Gradient of the corner-distance penalty `(d1^2 + d2^2) / (w^2 + h^2)`:
/// `2 (c_prd - c_gt) / (w^2 + h^2)` per coordinate.
pub fn corner_penalty_gradient(gt: &BBox, prd: &BBox, img: &ImageDims) -> LossGradient {
    let n = img.diag_sq();
    let p = prd.to_array();
    let g = gt.to_array();
    LossGradient::from_array(std::array::from_fn(|i| 2.0 * (p[i] - g[i]) / n))
}

type Grad = [f64; 4];

#[inline]
fn scale(a: Grad, s: f64) -> Grad {
    a.map(|v| v * s)
}

#[inline]
fn add(a: Grad, b: Grad) -> Grad {
    std::array::from_fn(|i| a[i] + b[i])
}

#[inline]
fn sub(a: Grad, b: Grad) -> Grad {
    std::array::from_fn(|i| a[i] - b[i])
}

#[inline]
fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// d(value)/d(prd) for the metric of `spec`, one-sided at ties.
fn metric_gradient(spec: &LossSpec, gt: &BBox, prd: &BBox, alpha: f64) -> Grad {
    let [px1, py1, px2, py2] = prd.to_array();
    let [gx1, gy1, gx2, gy2] = gt.to_array();

    // Intersection: the prediction wins every tie of max(x1)/min(x2).
    let (ax1, ay1, ax2, ay2) = (px1 >= gx1, py1 >= gy1, px2 <= gx2, py2 <= gy2);
    let iw = px2.min(gx2) - px1.max(gx1);
    let ih = py2.min(gy2) - py1.max(gy1);
    let (inter, d_inter) = if iw > 0.0 && ih > 0.0 {
        (
            iw * ih,
            [-ih * ind(ax1), -iw * ind(ay1), ih * ind(ax2), iw * ind(ay2)],
        )
    } else {
        (0.0, [0.0; 4])
    };

    let (pw, ph) = (px2 - px1, py2 - py1);
    let d_pw = [-1.0, 0.0, 1.0, 0.0];
    let d_ph = [0.0, -1.0, 0.0, 1.0];
    let d_area = [-ph, -pw, ph, pw];
    let union = gt.area() + pw * ph - inter;
    let d_union = sub(d_area, d_inter);
    let d_iou = scale(sub(scale(d_inter, union), scale(d_union, inter)), 1.0 / (union * union));

    if spec.kind == MetricKind::Iou {
        return d_iou;
    }
    if let (MetricKind::Mpdiou, Some(img)) = (spec.kind, spec.img.as_ref()) {
        return sub(d_iou, corner_penalty_gradient(gt, prd, img).to_array());
    }

    // Enclosure: the prediction wins every tie of min(x1)/max(x2).
    let (ex1, ey1, ex2, ey2) = (px1 <= gx1, py1 <= gy1, px2 >= gx2, py2 >= gy2);
    let cw = px2.max(gx2) - px1.min(gx1);
    let ch = py2.max(gy2) - py1.min(gy1);
    let d_cw = [-ind(ex1), 0.0, ind(ex2), 0.0];
    let d_ch = [0.0, -ind(ey1), 0.0, ind(ey2)];

    if spec.kind == MetricKind::Giou {
        let c = cw * ch;
        let d_c = add(scale(d_cw, ch), scale(d_ch, cw));
        // value = iou - 1 + U / C
        let d_ratio = scale(sub(scale(d_union, c), scale(d_c, union)), 1.0 / (c * c));
        return add(d_iou, d_ratio);
    }

    let dxc = (px1 + px2) / 2.0 - (gx1 + gx2) / 2.0;
    let dyc = (py1 + py2) / 2.0 - (gy1 + gy2) / 2.0;
    let rho_sq = dxc * dxc + dyc * dyc;
    let d_rho = [dxc, dyc, dxc, dyc];
    let diag = cw * cw + ch * ch;
    let d_diag = add(scale(d_cw, 2.0 * cw), scale(d_ch, 2.0 * ch));
    let d_center_term = scale(sub(scale(d_rho, diag), scale(d_diag, rho_sq)), 1.0 / (diag * diag));
    let d_diou = sub(d_iou, d_center_term);

    match spec.kind {
        MetricKind::Ciou => {
            let theta_gt = (gt.width() / gt.height()).atan();
            let theta_prd = (pw / ph).atan();
            let r = pw * pw + ph * ph;
            let d_theta = add(scale(d_pw, ph / r), scale(d_ph, -pw / r));
            let k = 4.0 / (std::f64::consts::PI * std::f64::consts::PI);
            let d_v = scale(d_theta, -2.0 * k * (theta_gt - theta_prd));
            sub(d_diou, scale(d_v, alpha))
        }
        MetricKind::Eiou => {
            let dw = pw - gt.width();
            let dh = ph - gt.height();
            let d_wterm = sub(
                scale(d_pw, 2.0 * dw / (cw * cw)),
                scale(d_cw, 2.0 * dw * dw / (cw * cw * cw)),
            );
            let d_hterm = sub(
                scale(d_ph, 2.0 * dh / (ch * ch)),
                scale(d_ch, 2.0 * dh * dh / (ch * ch * ch)),
            );
            sub(sub(d_diou, d_wterm), d_hterm)
        }
        _ => d_diou,
    }
}

/// Central finite differences of the loss, one coordinate at a time.
///
/// For CIoU the weight `alpha` is frozen at its value at `prd`, matching the
/// convention of the analytic gradient.
pub fn fd_gradient(
    spec: &LossSpec,
    gt: &BBox,
    prd: &BBox,
    step: f64,
) -> Result<LossGradient, LossError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(LossError::InvalidStep(step));
    }
    let base = metrics::compute(spec.kind, gt, prd, spec.img.as_ref())?;
    let frozen_alpha = base.terms.alpha;
    let eval = |coords: [f64; 4]| -> Result<f64, LossError> {
        let b = BBox::from_array(coords).map_err(|_| LossError::InvalidStep(step))?;
        let m = metrics::compute(spec.kind, gt, &b, spec.img.as_ref())?;
        let value = match (frozen_alpha, m.terms.alpha, m.terms.v) {
            (Some(a0), Some(a), Some(v)) => m.value + a * v - a0 * v,
            _ => m.value,
        };
        Ok(1.0 - value)
    };

    let p = prd.to_array();
    let mut out = [0.0; 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut plus = p;
        let mut minus = p;
        plus[i] += step;
        minus[i] -= step;
        *slot = (eval(plus)? - eval(minus)?) / (2.0 * step);
    }
    Ok(LossGradient::from_array(out))
}
