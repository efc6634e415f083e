//! Box similarity metrics: IoU, GIoU, DIoU, CIoU, EIoU and MPDIoU.
//!
//! Every metric takes the ground truth first and the prediction second and
//! returns a [`MetricResult`] carrying the value together with the
//! intermediate scalars it was built from.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{enclosing_box, to_center_form, BBox, ImageDims};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ground-truth box has zero area: {0:?}")]
    DegenerateGroundTruth(BBox),
    #[error("enclosing box is degenerate (diagonal or extent is zero)")]
    DegenerateEnclosure,
    #[error("aspect ratio undefined: box {0:?} has zero width or height")]
    DegenerateAspect(BBox),
    #[error("metric {0} requires image dimensions")]
    MissingImageDims(MetricKind),
    #[error("metric {0} does not take image dimensions")]
    UnexpectedImageDims(MetricKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Iou,
    Giou,
    Diou,
    Ciou,
    Eiou,
    Mpdiou,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Iou,
        MetricKind::Giou,
        MetricKind::Diou,
        MetricKind::Ciou,
        MetricKind::Eiou,
        MetricKind::Mpdiou,
    ];

    /// Only MPDIoU is normalized by the image diagonal.
    pub fn requires_image(self) -> bool {
        self == MetricKind::Mpdiou
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Iou => "iou",
            MetricKind::Giou => "giou",
            MetricKind::Diou => "diou",
            MetricKind::Ciou => "ciou",
            MetricKind::Eiou => "eiou",
            MetricKind::Mpdiou => "mpdiou",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                format!("unknown metric kind `{s}` (expected one of iou, giou, diou, ciou, eiou, mpdiou)")
            })
    }
}

/// Intermediate scalars. Only the terms a metric uses are populated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MetricTerms {
    pub intersection: f64,
    pub union: f64,
    pub iou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enclosing_area: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enclosing_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enclosing_height: Option<f64>,
    /// Squared distance between box centers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center_dist_sq: Option<f64>,
    /// Squared diagonal of the enclosing box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diag_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Squared top-left corner distance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1_sq: Option<f64>,
    /// Squared bottom-right corner distance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d2_sq: Option<f64>,
    /// `w^2 + h^2` of the image.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricResult {
    pub kind: MetricKind,
    pub value: f64,
    pub terms: MetricTerms,
}

fn check_gt(gt: &BBox) -> Result<(), MetricError> {
    if gt.area() > 0.0 {
        Ok(())
    } else {
        Err(MetricError::DegenerateGroundTruth(*gt))
    }
}

/// Intersection, union and their ratio. `U > 0` follows from `area(gt) > 0`.
fn overlap_terms(gt: &BBox, prd: &BBox) -> MetricTerms {
    let ix1 = gt.x1().max(prd.x1());
    let iy1 = gt.y1().max(prd.y1());
    let ix2 = gt.x2().min(prd.x2());
    let iy2 = gt.y2().min(prd.y2());
    let (iw, ih) = (ix2 - ix1, iy2 - iy1);
    let intersection = if iw > 0.0 && ih > 0.0 { iw * ih } else { 0.0 };
    let union = gt.area() + prd.area() - intersection;
    MetricTerms {
        intersection,
        union,
        iou: intersection / union,
        ..MetricTerms::default()
    }
}

fn center_dist_sq(gt: &BBox, prd: &BBox) -> f64 {
    let g = to_center_form(gt);
    let p = to_center_form(prd);
    let (dx, dy) = (p.xc - g.xc, p.yc - g.yc);
    dx * dx + dy * dy
}

/// Aspect-ratio consistency term `V` of CIoU.
pub(crate) fn aspect_penalty(gt: &BBox, prd: &BBox) -> f64 {
    let d = (gt.width() / gt.height()).atan() - (prd.width() / prd.height()).atan();
    4.0 / (PI * PI) * d * d
}

pub fn iou(gt: &BBox, prd: &BBox) -> Result<MetricResult, MetricError> {
    check_gt(gt)?;
    let terms = overlap_terms(gt, prd);
    Ok(MetricResult {
        kind: MetricKind::Iou,
        value: terms.iou,
        terms,
    })
}

pub fn giou(gt: &BBox, prd: &BBox) -> Result<MetricResult, MetricError> {
    check_gt(gt)?;
    let mut terms = overlap_terms(gt, prd);
    let c = enclosing_box(gt, prd).area();
    terms.enclosing_area = Some(c);
    // C >= U exactly; rounding in U can leave C - U a few ulps below zero.
    let penalty = ((c - terms.union) / c).max(0.0);
    Ok(MetricResult {
        kind: MetricKind::Giou,
        value: terms.iou - penalty,
        terms,
    })
}

/// DIoU value and its terms, shared by DIoU, CIoU and EIoU.
fn diou_terms(gt: &BBox, prd: &BBox) -> Result<(f64, MetricTerms), MetricError> {
    check_gt(gt)?;
    let mut terms = overlap_terms(gt, prd);
    let enc = enclosing_box(gt, prd);
    let (cw, ch) = (enc.width(), enc.height());
    let diag_sq = cw * cw + ch * ch;
    if diag_sq <= 0.0 {
        return Err(MetricError::DegenerateEnclosure);
    }
    let rho_sq = center_dist_sq(gt, prd);
    terms.enclosing_width = Some(cw);
    terms.enclosing_height = Some(ch);
    terms.center_dist_sq = Some(rho_sq);
    terms.diag_sq = Some(diag_sq);
    Ok((terms.iou - rho_sq / diag_sq, terms))
}

pub fn diou(gt: &BBox, prd: &BBox) -> Result<MetricResult, MetricError> {
    let (value, terms) = diou_terms(gt, prd)?;
    Ok(MetricResult {
        kind: MetricKind::Diou,
        value,
        terms,
    })
}

/// CIoU = DIoU - alpha * V. `alpha` is taken as 0 when `V = 0`, the only case
/// where its defining ratio can be 0/0 (identical boxes).
pub fn ciou(gt: &BBox, prd: &BBox) -> Result<MetricResult, MetricError> {
    check_gt(gt)?;
    if prd.width() <= 0.0 || prd.height() <= 0.0 {
        return Err(MetricError::DegenerateAspect(*prd));
    }
    let (d, mut terms) = diou_terms(gt, prd)?;
    let v = aspect_penalty(gt, prd);
    let alpha = if v == 0.0 { 0.0 } else { v / (1.0 - terms.iou + v) };
    terms.v = Some(v);
    terms.alpha = Some(alpha);
    Ok(MetricResult {
        kind: MetricKind::Ciou,
        value: d - alpha * v,
        terms,
    })
}

pub fn eiou(gt: &BBox, prd: &BBox) -> Result<MetricResult, MetricError> {
    let (d, terms) = diou_terms(gt, prd)?;
    let cw = terms.enclosing_width.unwrap_or_default();
    let ch = terms.enclosing_height.unwrap_or_default();
    if cw <= 0.0 || ch <= 0.0 {
        return Err(MetricError::DegenerateEnclosure);
    }
    let dw = prd.width() - gt.width();
    let dh = prd.height() - gt.height();
    Ok(MetricResult {
        kind: MetricKind::Eiou,
        value: d - dw * dw / (cw * cw) - dh * dh / (ch * ch),
        terms,
    })
}

/// Squared top-left and bottom-right corner distances.
pub(crate) fn corner_dists_sq(gt: &BBox, prd: &BBox) -> (f64, f64) {
    let (a, b) = (prd.x1() - gt.x1(), prd.y1() - gt.y1());
    let (c, d) = (prd.x2() - gt.x2(), prd.y2() - gt.y2());
    (a * a + b * b, c * c + d * d)
}

/// IoU minus both corner distances squared, each over the squared image diagonal.
///
/// Boxes outside the image are accepted; the `(-2, 1]` range only holds when
/// both boxes lie inside it.
pub fn mpdiou(gt: &BBox, prd: &BBox, img: &ImageDims) -> Result<MetricResult, MetricError> {
    check_gt(gt)?;
    let mut terms = overlap_terms(gt, prd);
    let (d1_sq, d2_sq) = corner_dists_sq(gt, prd);
    let norm = img.diag_sq();
    terms.d1_sq = Some(d1_sq);
    terms.d2_sq = Some(d2_sq);
    terms.normalizer = Some(norm);
    Ok(MetricResult {
        kind: MetricKind::Mpdiou,
        value: terms.iou - d1_sq / norm - d2_sq / norm,
        terms,
    })
}

/// Dispatches on `kind`. `img` must be present exactly when the kind needs it.
pub fn compute(
    kind: MetricKind,
    gt: &BBox,
    prd: &BBox,
    img: Option<&ImageDims>,
) -> Result<MetricResult, MetricError> {
    match (kind, img) {
        (MetricKind::Mpdiou, Some(img)) => mpdiou(gt, prd, img),
        (MetricKind::Mpdiou, None) => Err(MetricError::MissingImageDims(kind)),
        (_, Some(_)) => Err(MetricError::UnexpectedImageDims(kind)),
        (MetricKind::Iou, None) => iou(gt, prd),
        (MetricKind::Giou, None) => giou(gt, prd),
        (MetricKind::Diou, None) => diou(gt, prd),
        (MetricKind::Ciou, None) => ciou(gt, prd),
        (MetricKind::Eiou, None) => eiou(gt, prd),
    }
}

/// Like [`compute`] but ignores `img` for kinds that do not use it.
pub fn compute_lenient(
    kind: MetricKind,
    gt: &BBox,
    prd: &BBox,
    img: &ImageDims,
) -> Result<MetricResult, MetricError> {
    let img = kind.requires_image().then_some(img);
    compute(kind, gt, prd, img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn img(w: f64, h: f64) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Square gt of side sqrt(800) centered at (50, 50) in a 100x100 image,
    // with concentric predictions scaled by 2 and 1/2.
    fn concentric_k2() -> (BBox, BBox, BBox, ImageDims) {
        let half = 800f64.sqrt() / 2.0;
        let gt = bx(50.0 - half, 50.0 - half, 50.0 + half, 50.0 + half);
        let outer = bx(50.0 - 2.0 * half, 50.0 - 2.0 * half, 50.0 + 2.0 * half, 50.0 + 2.0 * half);
        let inner = bx(50.0 - half / 2.0, 50.0 - half / 2.0, 50.0 + half / 2.0, 50.0 + half / 2.0);
        (gt, outer, inner, img(100.0, 100.0))
    }

    #[test]
    fn iou_examples() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&gt, &gt).unwrap().value, 1.0);
        assert_eq!(iou(&gt, &bx(20.0, 20.0, 30.0, 30.0)).unwrap().value, 0.0);
        let r = iou(&gt, &bx(5.0, 5.0, 15.0, 15.0)).unwrap();
        assert_eq!(r.terms.intersection, 25.0);
        assert_eq!(r.terms.union, 175.0);
        assert_eq!(r.value, 25.0 / 175.0);
    }

    #[test]
    fn degenerate_gt_rejected_everywhere() {
        let gt = bx(0.0, 0.0, 0.0, 10.0);
        let prd = bx(0.0, 0.0, 5.0, 5.0);
        let im = img(20.0, 20.0);
        for kind in MetricKind::ALL {
            let r = compute_lenient(kind, &gt, &prd, &im);
            assert!(matches!(r, Err(MetricError::DegenerateGroundTruth(_))), "{kind}");
        }
    }

    #[test]
    fn degenerate_prediction_is_fine_except_ciou() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let prd = bx(5.0, 0.0, 5.0, 8.0);
        assert_eq!(iou(&gt, &prd).unwrap().value, 0.0);
        assert!(giou(&gt, &prd).is_ok());
        assert!(eiou(&gt, &prd).is_ok());
        assert!(matches!(ciou(&gt, &prd), Err(MetricError::DegenerateAspect(_))));
    }

    #[test]
    fn giou_examples() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(giou(&gt, &gt).unwrap().value, 1.0);
        let (g, outer, _, _) = concentric_k2();
        assert!(close(giou(&g, &outer).unwrap().value, 0.25, 1e-12));
        let adj = giou(&gt, &bx(10.0, 0.0, 20.0, 10.0)).unwrap();
        assert_eq!(adj.terms.enclosing_area, Some(200.0));
        assert_eq!(adj.value, 0.0);
    }

    #[test]
    fn diou_examples() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(diou(&gt, &gt).unwrap().value, 1.0);
        let (g, outer, _, _) = concentric_k2();
        assert!(close(diou(&g, &outer).unwrap().value, 0.25, 1e-12));
        let r = diou(&gt, &bx(10.0, 0.0, 20.0, 10.0)).unwrap();
        assert_eq!(r.terms.center_dist_sq, Some(100.0));
        assert_eq!(r.terms.diag_sq, Some(500.0));
        assert!(close(r.value, -0.2, 1e-15));
    }

    #[test]
    fn ciou_examples() {
        let (g, outer, _, _) = concentric_k2();
        assert!(close(ciou(&g, &outer).unwrap().value, 0.25, 1e-12));

        let gt = bx(0.0, 0.0, 10.0, 20.0);
        let same_aspect = bx(3.0, 4.0, 8.0, 14.0);
        assert_eq!(
            ciou(&gt, &same_aspect).unwrap().value,
            diou(&gt, &same_aspect).unwrap().value
        );

        // Reference values evaluated independently at 30 significant digits.
        let r = ciou(&bx(0.0, 0.0, 10.0, 10.0), &bx(0.0, 0.0, 20.0, 10.0)).unwrap();
        assert_eq!(r.terms.iou, 0.5);
        assert_eq!(r.terms.center_dist_sq, Some(25.0));
        assert_eq!(r.terms.diag_sq, Some(500.0));
        assert!(close(r.terms.v.unwrap(), 0.041_956_461_494_290_57, 1e-15));
        assert!(close(r.terms.alpha.unwrap(), 0.077_416_664_391_467_13, 1e-15));
        assert!(close(r.value, 0.446_751_870_701_442_99, 1e-15));
        assert!(close(r.value, 0.446752, 1e-6));
    }

    #[test]
    fn ciou_identical_boxes_has_zero_alpha() {
        let gt = bx(1.0, 2.0, 5.0, 9.0);
        let r = ciou(&gt, &gt).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.terms.alpha, Some(0.0));
    }

    #[test]
    fn eiou_examples() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(eiou(&gt, &gt).unwrap().value, 1.0);
        let (g, outer, _, _) = concentric_k2();
        assert!(close(eiou(&g, &outer).unwrap().value, -0.25, 1e-12));
        let r = eiou(&gt, &bx(0.0, 0.0, 20.0, 10.0)).unwrap();
        assert!(close(r.value, 0.2, 1e-15));
    }

    #[test]
    fn mpdiou_examples() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let im = img(20.0, 20.0);
        assert_eq!(mpdiou(&gt, &gt, &im).unwrap().value, 1.0);
        let r = mpdiou(&gt, &bx(5.0, 5.0, 15.0, 15.0), &im).unwrap();
        assert_eq!(r.terms.d1_sq, Some(50.0));
        assert_eq!(r.terms.d2_sq, Some(50.0));
        assert_eq!(r.terms.normalizer, Some(800.0));
        assert!(close(r.value, 1.0 / 7.0 - 0.125, 1e-15));
        assert!(close(r.value, 0.017857, 1e-6));

        let (g, outer, inner, im) = concentric_k2();
        assert!(close(1.0 - mpdiou(&g, &outer, &im).unwrap().value, 0.79, 1e-12));
        assert!(close(1.0 - mpdiou(&g, &inner, &im).unwrap().value, 0.76, 1e-12));
    }

    #[test]
    fn dispatch_checks_image_presence() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let im = img(20.0, 20.0);
        assert!(matches!(
            compute(MetricKind::Mpdiou, &gt, &gt, None),
            Err(MetricError::MissingImageDims(_))
        ));
        assert!(matches!(
            compute(MetricKind::Iou, &gt, &gt, Some(&im)),
            Err(MetricError::UnexpectedImageDims(_))
        ));
        assert!(compute(MetricKind::Giou, &gt, &gt, None).is_ok());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("MPDIoU".parse::<MetricKind>().unwrap(), MetricKind::Mpdiou);
        assert_eq!("giou".parse::<MetricKind>().unwrap(), MetricKind::Giou);
        assert!("siou".parse::<MetricKind>().is_err());
        assert_eq!(serde_json::to_string(&MetricKind::Ciou).unwrap(), "\"ciou\"");
    }

    #[test]
    fn theorem_setup_collapses_penalties() {
        let gt = bx(40.0, 30.0, 60.0, 70.0);
        for k in [1.5, 2.0, 3.0, 7.25] {
            let c = to_center_form(&gt);
            let p = bx(
                c.xc - k * c.bw / 2.0,
                c.yc - k * c.bh / 2.0,
                c.xc + k * c.bw / 2.0,
                c.yc + k * c.bh / 2.0,
            );
            let i = iou(&gt, &p).unwrap().value;
            assert!(close(giou(&gt, &p).unwrap().value, i, 1e-14));
            assert!(close(diou(&gt, &p).unwrap().value, i, 1e-14));
            assert!(close(ciou(&gt, &p).unwrap().value, i, 1e-14));
        }
    }

    #[test]
    fn non_overlap_loss_decomposition() {
        let gt = bx(10.0, 10.0, 20.0, 20.0);
        let prd = bx(60.0, 70.0, 75.0, 90.0);
        let im = img(100.0, 100.0);
        let r = mpdiou(&gt, &prd, &im).unwrap();
        let pen = (r.terms.d1_sq.unwrap() + r.terms.d2_sq.unwrap()) / im.diag_sq();
        assert_eq!(r.terms.iou, 0.0);
        assert!(close(1.0 - r.value, 1.0 + pen, 1e-15));
        assert!((0.0..2.0).contains(&pen));
    }

    fn in_image_box(w: f64, h: f64) -> impl Strategy<Value = BBox> {
        (0.0..w, 0.0..h, 0.0..w, 0.0..h).prop_map(|(a, b, c, d)| bx(a, b, c, d))
    }

    fn solid_box(w: f64, h: f64) -> impl Strategy<Value = BBox> {
        in_image_box(w, h).prop_filter("positive extents", |b| b.width() > 1e-3 && b.height() > 1e-3)
    }

    fn all_values(gt: &BBox, prd: &BBox, im: &ImageDims) -> Vec<f64> {
        MetricKind::ALL
            .iter()
            .map(|&k| compute_lenient(k, gt, prd, im).unwrap().value)
            .collect()
    }

    proptest! {
        #[test]
        fn symmetric_under_swap(a in solid_box(200.0, 100.0), b in solid_box(200.0, 100.0)) {
            let im = img(200.0, 100.0);
            let ab = all_values(&a, &b, &im);
            let ba = all_values(&b, &a, &im);
            for (x, y) in ab.iter().zip(&ba) {
                prop_assert!(close(*x, *y, 1e-12), "{x} vs {y}");
            }
        }

        #[test]
        fn ranges_and_ordering(a in solid_box(200.0, 100.0), b in solid_box(200.0, 100.0)) {
            let im = img(200.0, 100.0);
            let v = all_values(&a, &b, &im);
            let (i, g, d, c, e, m) = (v[0], v[1], v[2], v[3], v[4], v[5]);
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!(g > -1.0 && g <= 1.0);
            prop_assert!(d > -1.0 && d <= 1.0);
            prop_assert!(m > -2.0 && m <= 1.0);
            prop_assert!(g <= i && d <= i && m <= i);
            prop_assert!(c <= d && e <= d);
        }

        #[test]
        fn identity_attains_one(a in solid_box(200.0, 100.0)) {
            let im = img(200.0, 100.0);
            for v in all_values(&a, &a, &im) {
                prop_assert_eq!(v, 1.0);
            }
        }

        #[test]
        fn distinct_boxes_below_one(a in solid_box(200.0, 100.0), b in solid_box(200.0, 100.0)) {
            prop_assume!(a != b);
            let im = img(200.0, 100.0);
            for v in all_values(&a, &b, &im) {
                prop_assert!(v < 1.0);
            }
        }

        #[test]
        fn translation_invariance(
            a in solid_box(200.0, 100.0),
            b in solid_box(200.0, 100.0),
            dx in -50.0..50.0f64,
            dy in -50.0..50.0f64,
        ) {
            let im = img(200.0, 100.0);
            let before = all_values(&a, &b, &im);
            let after = all_values(&a.translate(dx, dy).unwrap(), &b.translate(dx, dy).unwrap(), &im);
            for (x, y) in before.iter().zip(&after) {
                prop_assert!(close(*x, *y, 1e-9), "{x} vs {y}");
            }
        }

        #[test]
        fn scale_invariance(
            a in solid_box(200.0, 100.0),
            b in solid_box(200.0, 100.0),
            s in 0.1..10.0f64,
        ) {
            let im = img(200.0, 100.0);
            let (sa, sb) = (a.scale(s).unwrap(), b.scale(s).unwrap());
            for kind in MetricKind::ALL.into_iter().filter(|k| !k.requires_image()) {
                let x = compute(kind, &a, &b, None).unwrap().value;
                let y = compute(kind, &sa, &sb, None).unwrap().value;
                prop_assert!(close(x, y, 1e-9), "{kind}: {x} vs {y}");
            }
            let x = mpdiou(&a, &b, &im).unwrap().value;
            let y = mpdiou(&sa, &sb, &im.scale(s).unwrap()).unwrap().value;
            prop_assert!(close(x, y, 1e-9));
        }

        #[test]
        fn terms_reproduce_value(a in solid_box(200.0, 100.0), b in solid_box(200.0, 100.0)) {
            let im = img(200.0, 100.0);
            let m = mpdiou(&a, &b, &im).unwrap();
            let t = m.terms;
            let rebuilt = t.intersection / t.union
                - t.d1_sq.unwrap() / t.normalizer.unwrap()
                - t.d2_sq.unwrap() / t.normalizer.unwrap();
            prop_assert!(close(m.value, rebuilt, 1e-12 * m.value.abs().max(1.0)));
            prop_assert!(t.union > 0.0);

            let c = ciou(&a, &b).unwrap();
            let t = c.terms;
            let rebuilt = t.iou - t.center_dist_sq.unwrap() / t.diag_sq.unwrap()
                - t.alpha.unwrap() * t.v.unwrap();
            prop_assert!(close(c.value, rebuilt, 1e-12 * c.value.abs().max(1.0)));
        }
    }
}
