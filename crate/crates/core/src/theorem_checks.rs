//! Machine checks for concentric same-aspect-ratio predictions and for the
//! MPDIoU loss bounds.
//!
//! A [`TheoremInstance`] holds a ground truth box and two concentric
//! predictions scaled by `k` and `1/k`. On such pairs GIoU, DIoU, CIoU and EIoU
//! cannot tell the predictions apart (all equal `1/k^2`, EIoU equals
//! `(4k - 2k^2 - 1) / k^2`), while MPDIoU strictly prefers the inner box:
//!
//! ```text
//! MPDIoU_outer = 1/k^2 - (k - 1)^2   (w_gt^2 + h_gt^2) / (2 (w^2 + h^2))
//! MPDIoU_inner = 1/k^2 - (1 - 1/k)^2 (w_gt^2 + h_gt^2) / (2 (w^2 + h^2))
//! ```
//!
//! Since `(k - 1)^2 > (1 - 1/k)^2` for `k > 1`, the outer prediction always has
//! the larger loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{to_center_form, BBox, GeometryError, ImageDims};
use crate::metrics::{self, MetricError};

/// Tolerance for agreement between the closed forms and the metric module.
pub const CLOSED_FORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub check: String,
    pub residual: f64,
    pub gt: [f64; 4],
    pub prd: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoremError {
    #[error("scale factor must be finite and > 1, got {0}")]
    BadScale(f64),
    #[error("box size must be finite and positive, got {0}x{1}")]
    BadSize(f64, f64),
    #[error("outer prediction {0:?} exceeds the image")]
    OutOfImage(BBox),
    #[error("sample count must be positive")]
    NoSamples,
    #[error("assertion `{}` failed (residual {:e}) for gt {:?}, prd {:?}", .0.check, .0.residual, .0.gt, .0.prd)]
    AssertionFailure(Box<Counterexample>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl TheoremError {
    pub fn counterexample(&self) -> Option<&Counterexample> {
        match self {
            TheoremError::AssertionFailure(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremInstance {
    pub gt: BBox,
    pub prd_outer: BBox,
    pub prd_inner: BBox,
    pub k: f64,
    pub img: ImageDims,
}

fn scaled_about(center: (f64, f64), size: (f64, f64), s: f64) -> Result<BBox, GeometryError> {
    let (hw, hh) = (s * size.0 / 2.0, s * size.1 / 2.0);
    BBox::new(center.0 - hw, center.1 - hh, center.0 + hw, center.1 + hh)
}

/// Builds the ground truth at `center` with `size` plus its `k` and `1/k`
/// concentric scalings.
pub fn build_instance(
    center: (f64, f64),
    size: (f64, f64),
    k: f64,
    img: ImageDims,
) -> Result<TheoremInstance, TheoremError> {
    if !(k.is_finite() && k > 1.0) {
        return Err(TheoremError::BadScale(k));
    }
    let (w, h) = size;
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        return Err(TheoremError::BadSize(w, h));
    }
    let gt = scaled_about(center, size, 1.0)?;
    let prd_outer = scaled_about(center, size, k)?;
    let prd_inner = scaled_about(center, size, 1.0 / k)?;
    if !prd_outer.is_within(&img) {
        return Err(TheoremError::OutOfImage(prd_outer));
    }
    Ok(TheoremInstance {
        gt,
        prd_outer,
        prd_inner,
        k,
        img,
    })
}

/// All six metric values of one (gt, prediction) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairValues {
    pub iou: f64,
    pub giou: f64,
    pub diou: f64,
    pub ciou: f64,
    pub eiou: f64,
    pub mpdiou: f64,
}

impl PairValues {
    pub fn evaluate(gt: &BBox, prd: &BBox, img: &ImageDims) -> Result<Self, MetricError> {
        Ok(Self {
            iou: metrics::iou(gt, prd)?.value,
            giou: metrics::giou(gt, prd)?.value,
            diou: metrics::diou(gt, prd)?.value,
            ciou: metrics::ciou(gt, prd)?.value,
            eiou: metrics::eiou(gt, prd)?.value,
            mpdiou: metrics::mpdiou(gt, prd, img)?.value,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EqualityReport {
    pub k: f64,
    pub outer: PairValues,
    pub inner: PairValues,
    /// Largest residual among the equalities checked at the caller's tolerance.
    pub max_residual: f64,
    /// Largest deviation from the closed forms `1/k^2` and `(4k - 2k^2 - 1)/k^2`.
    pub max_closed_form_residual: f64,
}

/// Closed-form IoU of a concentric same-aspect pair scaled by `k` or `1/k`.
pub fn closed_form_iou(k: f64) -> f64 {
    1.0 / (k * k)
}

/// Closed-form EIoU of a concentric same-aspect pair scaled by `k` or `1/k`.
pub fn closed_form_eiou(k: f64) -> f64 {
    (4.0 * k - 2.0 * k * k - 1.0) / (k * k)
}

/// Closed-form MPDIoU for the outer (`k`) and inner (`1/k`) predictions.
pub fn closed_form_mpdiou(k: f64, gt_diag_sq: f64, img: &ImageDims) -> (f64, f64) {
    let base = closed_form_iou(k);
    let r = gt_diag_sq / (2.0 * img.diag_sq());
    let outer = base - (k - 1.0).powi(2) * r;
    let inner = base - (1.0 - 1.0 / k).powi(2) * r;
    (outer, inner)
}

struct Checker<'a> {
    inst: &'a TheoremInstance,
}

impl Checker<'_> {
    fn check(&self, name: &str, prd: &BBox, a: f64, b: f64, tol: f64) -> Result<f64, TheoremError> {
        let residual = (a - b).abs();
        if residual <= tol {
            Ok(residual)
        } else {
            Err(TheoremError::AssertionFailure(Box::new(Counterexample {
                check: name.to_string(),
                residual,
                gt: self.inst.gt.to_array(),
                prd: prd.to_array(),
                k: Some(self.inst.k),
            })))
        }
    }
}

/// Checks that GIoU, DIoU, CIoU and EIoU agree on the outer and inner
/// predictions, that GIoU = DIoU = CIoU = IoU = 1/k^2 on both pairs, and that
/// EIoU equals its closed form. Closed forms are checked at
/// [`CLOSED_FORM_TOL`] regardless of `tol`.
pub fn verify_equalities(inst: &TheoremInstance, tol: f64) -> Result<EqualityReport, TheoremError> {
    let outer = PairValues::evaluate(&inst.gt, &inst.prd_outer, &inst.img)?;
    let inner = PairValues::evaluate(&inst.gt, &inst.prd_inner, &inst.img)?;
    let c = Checker { inst };
    let (po, pi) = (&inst.prd_outer, &inst.prd_inner);

    let mut max_residual = 0.0f64;
    for (name, a, b) in [
        ("giou_outer == giou_inner", outer.giou, inner.giou),
        ("diou_outer == diou_inner", outer.diou, inner.diou),
        ("ciou_outer == ciou_inner", outer.ciou, inner.ciou),
        ("eiou_outer == eiou_inner", outer.eiou, inner.eiou),
        ("iou_outer == iou_inner", outer.iou, inner.iou),
    ] {
        max_residual = max_residual.max(c.check(name, po, a, b, tol)?);
    }
    for (prd, v, side) in [(po, &outer, "outer"), (pi, &inner, "inner")] {
        for (name, x) in [("giou", v.giou), ("diou", v.diou), ("ciou", v.ciou)] {
            let label = format!("{name}_{side} == iou_{side}");
            max_residual = max_residual.max(c.check(&label, prd, x, v.iou, tol)?);
        }
    }

    let mut max_closed = 0.0f64;
    let iou_cf = closed_form_iou(inst.k);
    let eiou_cf = closed_form_eiou(inst.k);
    for (prd, v, side) in [(po, &outer, "outer"), (pi, &inner, "inner")] {
        let r = c.check(&format!("iou_{side} == 1/k^2"), prd, v.iou, iou_cf, CLOSED_FORM_TOL)?;
        max_closed = max_closed.max(r);
        let r = c.check(
            &format!("eiou_{side} == (4k-2k^2-1)/k^2"),
            prd,
            v.eiou,
            eiou_cf,
            CLOSED_FORM_TOL,
        )?;
        max_closed = max_closed.max(r);
    }

    Ok(EqualityReport {
        k: inst.k,
        outer,
        inner,
        max_residual,
        max_closed_form_residual: max_closed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscriminationReport {
    pub k: f64,
    pub mpdiou_outer: f64,
    pub mpdiou_inner: f64,
    pub closed_form_outer: f64,
    pub closed_form_inner: f64,
    /// `MPDIoU_inner - MPDIoU_outer`; positive means the inner box is preferred.
    pub gap: f64,
}

/// Checks that MPDIoU strictly prefers the inner prediction and that both
/// values match their closed forms to [`CLOSED_FORM_TOL`].
pub fn verify_discrimination(inst: &TheoremInstance) -> Result<DiscriminationReport, TheoremError> {
    let mpdiou_outer = metrics::mpdiou(&inst.gt, &inst.prd_outer, &inst.img)?.value;
    let mpdiou_inner = metrics::mpdiou(&inst.gt, &inst.prd_inner, &inst.img)?.value;
    let g = to_center_form(&inst.gt);
    let (closed_form_outer, closed_form_inner) =
        closed_form_mpdiou(inst.k, g.bw * g.bw + g.bh * g.bh, &inst.img);

    let c = Checker { inst };
    c.check(
        "mpdiou_outer closed form",
        &inst.prd_outer,
        mpdiou_outer,
        closed_form_outer,
        CLOSED_FORM_TOL,
    )?;
    c.check(
        "mpdiou_inner closed form",
        &inst.prd_inner,
        mpdiou_inner,
        closed_form_inner,
        CLOSED_FORM_TOL,
    )?;

    let gap = mpdiou_inner - mpdiou_outer;
    if !(gap > 0.0) {
        return Err(TheoremError::AssertionFailure(Box::new(Counterexample {
            check: "mpdiou_inner > mpdiou_outer".to_string(),
            residual: gap,
            gt: inst.gt.to_array(),
            prd: inst.prd_outer.to_array(),
            k: Some(inst.k),
        })));
    }
    Ok(DiscriminationReport {
        k: inst.k,
        mpdiou_outer,
        mpdiou_inner,
        closed_form_outer,
        closed_form_inner,
        gap,
    })
}

/// Draws a random instance with `k` uniform in `(1, k_max]` whose outer box
/// fits the image.
pub fn random_instance<R: Rng>(rng: &mut R, k_max: f64, img: ImageDims) -> Result<TheoremInstance, TheoremError> {
    let k = k_max - (k_max - 1.0) * rng.gen::<f64>();
    let w = img.w() / k * rng.gen_range(0.05..0.95);
    let h = img.h() / k * rng.gen_range(0.05..0.95);
    let cx = rng.gen_range(k * w / 2.0..=img.w() - k * w / 2.0);
    let cy = rng.gen_range(k * h / 2.0..=img.h() - k * h / 2.0);
    build_instance((cx, cy), (w, h), k, img)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremSuiteReport {
    pub samples: usize,
    pub seed: u64,
    pub k_max: f64,
    pub tolerance: f64,
    pub equalities_passed: usize,
    pub discrimination_passed: usize,
    pub max_equality_residual: f64,
    pub max_closed_form_residual: f64,
    pub min_discrimination_gap: f64,
}

/// Runs both verifiers on `samples` seeded random instances, stopping at the
/// first failure.
pub fn run_theorem_suite(samples: usize, seed: u64, tol: f64) -> Result<TheoremSuiteReport, TheoremError> {
    if samples == 0 {
        return Err(TheoremError::NoSamples);
    }
    const K_MAX: f64 = 10.0;
    let img = ImageDims::new(1000.0, 800.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TheoremSuiteReport {
        samples,
        seed,
        k_max: K_MAX,
        tolerance: tol,
        equalities_passed: 0,
        discrimination_passed: 0,
        max_equality_residual: 0.0,
        max_closed_form_residual: 0.0,
        min_discrimination_gap: f64::INFINITY,
    };
    for _ in 0..samples {
        let inst = random_instance(&mut rng, K_MAX, img)?;
        let eq = verify_equalities(&inst, tol)?;
        report.equalities_passed += 1;
        report.max_equality_residual = report.max_equality_residual.max(eq.max_residual);
        report.max_closed_form_residual = report.max_closed_form_residual.max(eq.max_closed_form_residual);
        let d = verify_discrimination(&inst)?;
        report.discrimination_passed += 1;
        report.min_discrimination_gap = report.min_discrimination_gap.min(d.gap);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub samples: usize,
    pub seed: u64,
    pub img: ImageDims,
    pub min_loss: f64,
    pub max_loss: f64,
    pub max_penalty: f64,
    pub violations: usize,
}

fn sample_in_image<R: Rng>(rng: &mut R, img: &ImageDims, positive_area: bool) -> Result<BBox, GeometryError> {
    loop {
        let b = BBox::new(
            rng.gen_range(0.0..=img.w()),
            rng.gen_range(0.0..=img.h()),
            rng.gen_range(0.0..=img.w()),
            rng.gen_range(0.0..=img.h()),
        )?;
        if !positive_area || b.area() > 0.0 {
            return Ok(b);
        }
    }
}

/// Samples in-image pairs and checks `0 <= L_MPDIoU < 3`,
/// `0 <= (d1^2 + d2^2)/(w^2 + h^2) < 2` and `MPDIoU <= IoU`.
pub fn verify_bounds(samples: usize, img: ImageDims, seed: u64) -> Result<BoundsReport, TheoremError> {
    if samples == 0 {
        return Err(TheoremError::NoSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BoundsReport {
        samples,
        seed,
        img,
        min_loss: f64::INFINITY,
        max_loss: f64::NEG_INFINITY,
        max_penalty: 0.0,
        violations: 0,
    };
    for _ in 0..samples {
        let gt = sample_in_image(&mut rng, &img, true)?;
        let prd = sample_in_image(&mut rng, &img, false)?;
        check_bounds_pair(&gt, &prd, &img, &mut report)?;
    }
    Ok(report)
}

/// Checks the bounds on a single pair, folding it into `report`.
pub fn check_bounds_pair(
    gt: &BBox,
    prd: &BBox,
    img: &ImageDims,
    report: &mut BoundsReport,
) -> Result<(), TheoremError> {
    let m = metrics::mpdiou(gt, prd, img)?;
    let loss = 1.0 - m.value;
    let penalty = (m.terms.d1_sq.unwrap_or(0.0) + m.terms.d2_sq.unwrap_or(0.0)) / img.diag_sq();
    let fail = |check: &str, residual: f64| {
        TheoremError::AssertionFailure(Box::new(Counterexample {
            check: check.to_string(),
            residual,
            gt: gt.to_array(),
            prd: prd.to_array(),
            k: None,
        }))
    };
    let result = if !(0.0..3.0).contains(&loss) {
        Err(fail("0 <= loss < 3", loss))
    } else if !(0.0..2.0).contains(&penalty) {
        Err(fail("0 <= corner penalty < 2", penalty))
    } else if m.value > m.terms.iou {
        Err(fail("mpdiou <= iou", m.value - m.terms.iou))
    } else {
        Ok(())
    };
    if result.is_err() {
        report.violations += 1;
        return result;
    }
    report.min_loss = report.min_loss.min(loss);
    report.max_loss = report.max_loss.max(loss);
    report.max_penalty = report.max_penalty.max(penalty);
    Ok(())
}
