//! Synthetic bounding-box regression.
//!
//! The predicted box's corner coordinates are optimized directly by plain
//! gradient descent on one of the six losses, and every iterate is recorded.
//! The comparison protocol (suite families, step size, stopping rules) is our
//! own and is not a reproduction of any detector training run.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{intersection_area, to_center_form, BBox, GeometryError, ImageDims};
use crate::losses::{self, LossError, LossSpec};
use crate::metrics::{self, MetricKind};
use crate::theorem_checks::TheoremInstance;

/// Size of the nudge applied to a tied coordinate before re-differentiating.
pub const TIE_PERTURBATION: f64 = 1e-7;

const MAX_TIE_RETRIES: usize = 8;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at iteration {iter} of case {case_id}")]
    DivergenceDetected { case_id: usize, iter: usize },
    #[error("failed to write records: {0}")]
    IoFailure(#[from] io::Error),
    #[error("failed to write records: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Overlapping,
    Nonoverlapping,
    ContainedSameAspect,
    Random,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Overlapping => "overlapping",
            Family::Nonoverlapping => "nonoverlapping",
            Family::ContainedSameAspect => "contained-same-aspect",
            Family::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Case {
    pub case_id: usize,
    pub gt: BBox,
    pub prd0: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSuite {
    pub family: Family,
    pub img: ImageDims,
    pub cases: Vec<Case>,
}

/// Gradient-descent settings. `step_size` multiplies the loss gradient
/// (units of 1/pixel) to give a displacement in pixels, so it is expressed in
/// pixels squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: MetricKind,
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once the loss drops to this value or below.
    pub stop_loss: f64,
    /// Stop once IoU with the ground truth reaches this value; values above 1
    /// disable the rule.
    pub stop_iou: f64,
    /// Seeds the direction of tie-breaking perturbations.
    pub seed: u64,
}

impl RunConfig {
    pub const DEFAULT_STEP_SIZE: f64 = 10.0;
    pub const DEFAULT_MAX_ITERS: usize = 5000;
    pub const DEFAULT_STOP_LOSS: f64 = 0.01;
    pub const DEFAULT_STOP_IOU: f64 = 0.9;

    pub fn new(kind: MetricKind) -> Self {
        Self {
            kind,
            step_size: Self::DEFAULT_STEP_SIZE,
            max_iters: Self::DEFAULT_MAX_ITERS,
            stop_loss: Self::DEFAULT_STOP_LOSS,
            stop_iou: Self::DEFAULT_STOP_IOU,
            seed: 0,
        }
    }

    /// Sets the step from a value normalized by the squared image diagonal.
    pub fn with_normalized_step(mut self, step: f64, img: &ImageDims) -> Self {
        self.step_size = step * img.diag_sq();
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.max_iters == 0 {
            return Err(SimError::InvalidConfig("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    pub loss: f64,
    pub iou: f64,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    LossThreshold,
    IouThreshold,
    MaxIters,
    /// The gradient vanished identically; no further progress is possible.
    Stalled,
    Diverged,
    /// The loss became undefined for the current iterate (e.g. CIoU on a
    /// zero-width prediction).
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub case_id: usize,
    pub kind: MetricKind,
    pub trajectory: Vec<TrajectoryPoint>,
    /// First iteration at which IoU reached `stop_iou`, if it did.
    pub iterations_to_iou: Option<usize>,
    pub stop_reason: StopReason,
    pub tie_perturbations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ConvergenceRecord {
    pub fn initial(&self) -> &TrajectoryPoint {
        &self.trajectory[0]
    }

    pub fn last(&self) -> &TrajectoryPoint {
        self.trajectory.last().expect("trajectory holds at least the initial point")
    }
}

fn random_box<R: Rng>(rng: &mut R, img: &ImageDims, min_frac: f64, max_frac: f64) -> Result<BBox, GeometryError> {
    let w = img.w() * rng.gen_range(min_frac..max_frac);
    let h = img.h() * rng.gen_range(min_frac..max_frac);
    let x1 = rng.gen_range(0.0..=img.w() - w);
    let y1 = rng.gen_range(0.0..=img.h() - h);
    BBox::new(x1, y1, x1 + w, y1 + h)
}

fn overlapping_case<R: Rng>(rng: &mut R, img: &ImageDims) -> Result<(BBox, BBox), GeometryError> {
    loop {
        let gt = random_box(rng, img, 0.15, 0.4)?;
        let c = to_center_form(&gt);
        let w = c.bw * rng.gen_range(0.6..1.4);
        let h = c.bh * rng.gen_range(0.6..1.4);
        let xc = c.xc + c.bw * rng.gen_range(-0.4..0.4);
        let yc = c.yc + c.bh * rng.gen_range(-0.4..0.4);
        let prd = BBox::new(xc - w / 2.0, yc - h / 2.0, xc + w / 2.0, yc + h / 2.0)?;
        if prd.is_within(img) && intersection_area(&gt, &prd) > 0.0 && prd != gt {
            return Ok((gt, prd));
        }
    }
}

fn nonoverlapping_case<R: Rng>(rng: &mut R, img: &ImageDims) -> Result<(BBox, BBox), GeometryError> {
    loop {
        let gt = random_box(rng, img, 0.15, 0.35)?;
        let c = to_center_form(&gt);
        let w = c.bw * rng.gen_range(0.6..1.4);
        let h = c.bh * rng.gen_range(0.6..1.4);
        // Place the prediction just beyond the ground truth along a random direction.
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let reach = rng.gen_range(1.05..1.6);
        let xc = c.xc + angle.cos() * reach * (c.bw + w) / 2.0 / angle.cos().abs().max(angle.sin().abs());
        let yc = c.yc + angle.sin() * reach * (c.bh + h) / 2.0 / angle.cos().abs().max(angle.sin().abs());
        let prd = BBox::new(xc - w / 2.0, yc - h / 2.0, xc + w / 2.0, yc + h / 2.0)?;
        if prd.is_within(img) && intersection_area(&gt, &prd) == 0.0 {
            return Ok((gt, prd));
        }
    }
}

fn contained_case<R: Rng>(rng: &mut R, img: &ImageDims) -> Result<(BBox, BBox), GeometryError> {
    loop {
        // k in (1, 4]
        let k = 4.0 - 3.0 * rng.gen::<f64>();
        let gt = random_box(rng, img, 0.1, 0.9 / k)?;
        let c = to_center_form(&gt);
        let s = if rng.gen::<bool>() { k } else { 1.0 / k };
        let (hw, hh) = (s * c.bw / 2.0, s * c.bh / 2.0);
        let prd = BBox::new(c.xc - hw, c.yc - hh, c.xc + hw, c.yc + hh)?;
        if prd.is_within(img) {
            return Ok((gt, prd));
        }
    }
}

fn random_case<R: Rng>(rng: &mut R, img: &ImageDims) -> Result<(BBox, BBox), GeometryError> {
    loop {
        let gt = random_box(rng, img, 0.1, 0.5)?;
        let prd = random_box(rng, img, 0.1, 0.5)?;
        if prd != gt {
            return Ok((gt, prd));
        }
    }
}

/// Deterministic suite of `n_cases` pairs drawn for `family`.
pub fn generate_suite(family: Family, n_cases: usize, img: ImageDims, seed: u64) -> Result<ScenarioSuite, SimError> {
    if n_cases == 0 {
        return Err(SimError::InvalidConfig("n_cases must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = (0..n_cases)
        .map(|case_id| {
            let (gt, prd0) = match family {
                Family::Overlapping => overlapping_case(&mut rng, &img)?,
                Family::Nonoverlapping => nonoverlapping_case(&mut rng, &img)?,
                Family::ContainedSameAspect => contained_case(&mut rng, &img)?,
                Family::Random => random_case(&mut rng, &img)?,
            };
            Ok(Case { case_id, gt, prd0 })
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;
    Ok(ScenarioSuite { family, img, cases })
}

/// Gradient at `prd`, nudging tied coordinates off the tie first.
fn smooth_gradient(
    spec: &LossSpec,
    gt: &BBox,
    prd: &mut BBox,
    rng: &mut ChaCha8Rng,
    perturbations: &mut usize,
) -> Result<losses::LossGradient, LossError> {
    for _ in 0..MAX_TIE_RETRIES {
        match losses::gradient(spec, gt, prd) {
            Err(LossError::NonSmoothPoint { coord, .. }) => {
                let mut c = prd.to_array();
                c[coord] += if rng.gen::<bool>() { TIE_PERTURBATION } else { -TIE_PERTURBATION };
                *prd = BBox::from_array(c).map_err(|_| LossError::NonSmoothPoint { coord, gap: 0.0 })?;
                *perturbations += 1;
            }
            other => return other,
        }
    }
    losses::gradient_one_sided(spec, gt, prd)
}

fn run_case(case: &Case, img: &ImageDims, cfg: &RunConfig) -> ConvergenceRecord {
    let spec = LossSpec::for_image(cfg.kind, *img);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (case.case_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut prd = case.prd0;
    let mut record = ConvergenceRecord {
        case_id: case.case_id,
        kind: cfg.kind,
        trajectory: Vec::new(),
        iterations_to_iou: None,
        stop_reason: StopReason::MaxIters,
        tie_perturbations: 0,
        error: None,
    };

    for iter in 0..=cfg.max_iters {
        let evaluated = losses::loss(&spec, &case.gt, &prd)
            .and_then(|l| Ok((l, metrics::iou(&case.gt, &prd)?.value)));
        let (loss, iou) = match evaluated {
            Ok(v) => v,
            Err(e) => {
                record.stop_reason = StopReason::Failed;
                record.error = Some(e.to_string());
                break;
            }
        };
        record.trajectory.push(TrajectoryPoint {
            iter,
            loss,
            iou,
            bbox: prd.to_array(),
        });
        if !loss.is_finite() {
            record.stop_reason = StopReason::Diverged;
            record.error = Some(SimError::DivergenceDetected { case_id: case.case_id, iter }.to_string());
            break;
        }
        if iou >= cfg.stop_iou && record.iterations_to_iou.is_none() {
            record.iterations_to_iou = Some(iter);
        }
        if loss <= cfg.stop_loss {
            record.stop_reason = StopReason::LossThreshold;
            break;
        }
        if iou >= cfg.stop_iou {
            record.stop_reason = StopReason::IouThreshold;
            break;
        }
        if iter == cfg.max_iters {
            break;
        }

        let grad = match smooth_gradient(&spec, &case.gt, &mut prd, &mut rng, &mut record.tie_perturbations) {
            Ok(g) => g,
            Err(e) => {
                record.stop_reason = StopReason::Failed;
                record.error = Some(e.to_string());
                break;
            }
        };
        if grad.is_zero() {
            record.stop_reason = StopReason::Stalled;
            break;
        }
        if !grad.is_finite() {
            record.stop_reason = StopReason::Diverged;
            record.error = Some(SimError::DivergenceDetected { case_id: case.case_id, iter }.to_string());
            break;
        }
        let p = prd.to_array();
        let g = grad.to_array();
        let next: [f64; 4] = std::array::from_fn(|i| p[i] - cfg.step_size * g[i]);
        match BBox::from_array(next) {
            Ok(b) => prd = b,
            Err(e) => {
                record.stop_reason = StopReason::Diverged;
                record.error = Some(e.to_string());
                break;
            }
        }
    }
    record
}

/// Runs every case of `suite` under `cfg`. Cases run in parallel; the output
/// is ordered by case id.
pub fn run_regression(suite: &ScenarioSuite, cfg: &RunConfig) -> Result<Vec<ConvergenceRecord>, SimError> {
    cfg.validate()?;
    Ok(suite
        .cases
        .par_iter()
        .map(|case| run_case(case, &suite.img, cfg))
        .collect())
}

pub const CSV_HEADER: [&str; 9] = ["case_id", "kind", "iter", "loss", "iou", "x1", "y1", "x2", "y2"];

/// Writes one row per (case, iteration), iteration 0 included.
pub fn write_records<W: Write>(records: &[ConvergenceRecord], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        for p in &r.trajectory {
            w.write_record([
                r.case_id.to_string(),
                r.kind.to_string(),
                p.iter.to_string(),
                p.loss.to_string(),
                p.iou.to_string(),
                p.bbox[0].to_string(),
                p.bbox[1].to_string(),
                p.bbox[2].to_string(),
                p.bbox[3].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_records(records: &[ConvergenceRecord], path: &Path) -> Result<(), SimError> {
    write_records(records, File::create(path)?)
}

/// Aggregate convergence statistics of one loss over one suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindStats {
    pub kind: MetricKind,
    pub cases: usize,
    /// Cases whose IoU reached the threshold.
    pub reached: usize,
    pub mean_iterations: Option<f64>,
    pub median_iterations: Option<f64>,
    pub max_iterations: Option<usize>,
    pub stalled: usize,
    pub failed: usize,
    pub mean_initial_iou: f64,
    pub mean_final_iou: f64,
}

pub fn kind_stats(kind: MetricKind, records: &[ConvergenceRecord]) -> KindStats {
    let mut iters: Vec<usize> = records.iter().filter_map(|r| r.iterations_to_iou).collect();
    iters.sort_unstable();
    let n = records.len().max(1) as f64;
    let mean = |v: &[usize]| (!v.is_empty()).then(|| v.iter().sum::<usize>() as f64 / v.len() as f64);
    let median = (!iters.is_empty()).then(|| {
        let m = iters.len() / 2;
        if iters.len().is_multiple_of(2) {
            (iters[m - 1] + iters[m]) as f64 / 2.0
        } else {
            iters[m] as f64
        }
    });
    KindStats {
        kind,
        cases: records.len(),
        reached: iters.len(),
        mean_iterations: mean(&iters),
        median_iterations: median,
        max_iterations: iters.last().copied(),
        stalled: records.iter().filter(|r| r.stop_reason == StopReason::Stalled).count(),
        failed: records
            .iter()
            .filter(|r| matches!(r.stop_reason, StopReason::Failed | StopReason::Diverged))
            .count(),
        mean_initial_iou: records.iter().map(|r| r.initial().iou).sum::<f64>() / n,
        mean_final_iou: records.iter().map(|r| r.last().iou).sum::<f64>() / n,
    }
}

/// Orders kinds by cases reached (descending), then mean iterations.
pub fn rank_kinds(stats: &[KindStats]) -> Vec<MetricKind> {
    let mut v: Vec<&KindStats> = stats.iter().collect();
    v.sort_by(|a, b| {
        b.reached.cmp(&a.reached).then(
            a.mean_iterations
                .unwrap_or(f64::INFINITY)
                .total_cmp(&b.mean_iterations.unwrap_or(f64::INFINITY)),
        )
    });
    v.into_iter().map(|s| s.kind).collect()
}

/// Rate of change of the loss along uniform scaling of the prediction about
/// its center, `dL/d(log s)`, for the outer and inner predictions.
///
/// On a concentric same-aspect instance, equal magnitudes mean the loss pulls
/// equally hard on boxes that are too large and too small.
pub fn scale_slopes(kind: MetricKind, inst: &TheoremInstance) -> Result<(f64, f64), LossError> {
    let spec = LossSpec::for_image(kind, inst.img);
    let slope = |prd: &BBox| -> Result<f64, LossError> {
        let g = losses::gradient(&spec, &inst.gt, prd)?;
        let c = to_center_form(prd);
        let p = prd.to_array();
        Ok(g.dot([p[0] - c.xc, p[1] - c.yc, p[2] - c.xc, p[3] - c.yc]))
    };
    Ok((slope(&inst.prd_outer)?, slope(&inst.prd_inner)?))
}
