//! COCO-style detection evaluation with a pluggable match metric.
//!
//! Detections are matched greedily in descending score order to the
//! still-unmatched ground truth of the same category with the highest metric
//! value at or above the threshold. AP uses 101-point interpolation over the
//! score-ranked precision/recall curve; mAP averages AP over categories and the
//! thresholds `0.50, 0.55, ..., 0.95`. AR@100 averages, over the same
//! thresholds, the recall obtained with at most 100 detections per image and
//! category.
//!
//! With MPDIoU as the match metric the same threshold list is reused. MPDIoU
//! never exceeds IoU, so it is a strictly harsher criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, ImageDims};
use crate::metrics::{self, MetricKind};

/// Detections kept per (image, category), highest scores first.
pub const MAX_DETS: usize = 100;

/// Number of recall sample points of the interpolated AP.
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("schema error at `{pointer}`: {message}")]
    SchemaError { pointer: String, message: String },
    #[error("degenerate ground-truth box #{index} in image `{image_id}`")]
    DegenerateGroundTruth { image_id: String, index: usize },
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("threshold {threshold} is not valid for metric {kind}")]
    InvalidThreshold { threshold: f64, kind: MetricKind },
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write summary: {0}")]
    Csv(#[from] csv::Error),
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> EvalError {
    EvalError::SchemaError {
        pointer: pointer.into(),
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
struct RawDataset {
    images: Vec<RawImage>,
    detections: Vec<RawDetection>,
}

#[derive(Debug, Deserialize)]
struct RawImage {
    image_id: String,
    width: f64,
    height: f64,
    ground_truth: Vec<RawGroundTruth>,
}

#[derive(Debug, Deserialize)]
struct RawGroundTruth {
    bbox: [f64; 4],
    category: String,
}

#[derive(Debug, Deserialize)]
struct RawDetection {
    image_id: String,
    bbox: [f64; 4],
    category: String,
    score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub dims: ImageDims,
    pub ground_truth: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BBox,
    pub category: String,
    pub score: f64,
}

/// Validated dataset. Images are sorted by id; detections are grouped by image
/// in the same order and keep their input order within an image.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DetectionDataset {
    images: Vec<ImageEntry>,
    detections: Vec<Detection>,
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

impl DetectionDataset {
    pub fn images(&self) -> &[ImageEntry] {
        &self.images
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    /// Sorted set of categories appearing in ground truth or detections.
    pub fn categories(&self) -> BTreeSet<&str> {
        self.images
            .iter()
            .flat_map(|im| im.ground_truth.iter().map(|g| g.category.as_str()))
            .chain(self.detections.iter().map(|d| d.category.as_str()))
            .collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self, EvalError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawDataset = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            schema(pointer, e.into_inner().to_string())
        })?;
        Self::validate(raw)
    }

    fn validate(raw: RawDataset) -> Result<Self, EvalError> {
        let mut images = Vec::with_capacity(raw.images.len());
        for (i, im) in raw.images.into_iter().enumerate() {
            let dims = ImageDims::new(im.width, im.height)
                .map_err(|e| schema(format!("/images/{i}/width"), e.to_string()))?;
            let mut ground_truth = Vec::with_capacity(im.ground_truth.len());
            for (j, g) in im.ground_truth.into_iter().enumerate() {
                let bbox = BBox::from_array(g.bbox)
                    .map_err(|e| schema(format!("/images/{i}/ground_truth/{j}/bbox"), e.to_string()))?;
                if bbox.area() <= 0.0 {
                    return Err(EvalError::DegenerateGroundTruth {
                        image_id: im.image_id,
                        index: j,
                    });
                }
                ground_truth.push(GroundTruth {
                    bbox,
                    category: g.category,
                });
            }
            images.push(ImageEntry {
                image_id: im.image_id,
                dims,
                ground_truth,
            });
        }
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.sort_by(|&a, &b| images[a].image_id.cmp(&images[b].image_id));
        for w in order.windows(2) {
            if images[w[0]].image_id == images[w[1]].image_id {
                return Err(schema(
                    format!("/images/{}/image_id", w[1].max(w[0])),
                    format!("duplicate image_id `{}`", images[w[0]].image_id),
                ));
            }
        }
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let rank: BTreeMap<&str, usize> = images
            .iter()
            .enumerate()
            .map(|(i, im)| (im.image_id.as_str(), i))
            .collect();

        let mut detections = Vec::with_capacity(raw.detections.len());
        let mut det_rank = Vec::with_capacity(raw.detections.len());
        for (i, d) in raw.detections.into_iter().enumerate() {
            let Some(&r) = rank.get(d.image_id.as_str()) else {
                return Err(schema(
                    format!("/detections/{i}/image_id"),
                    format!("unknown image_id `{}`", d.image_id),
                ));
            };
            if !(d.score.is_finite() && (0.0..=1.0).contains(&d.score)) {
                return Err(schema(
                    format!("/detections/{i}/score"),
                    format!("score {} outside [0, 1]", d.score),
                ));
            }
            let bbox = BBox::from_array(d.bbox)
                .map_err(|e| schema(format!("/detections/{i}/bbox"), e.to_string()))?;
            det_rank.push(r);
            detections.push(Detection {
                image_id: d.image_id,
                bbox,
                category: d.category,
                score: d.score,
            });
        }
        let mut idx: Vec<usize> = (0..detections.len()).collect();
        idx.sort_by_key(|&i| det_rank[i]);
        let detections = idx.into_iter().map(|i| detections[i].clone()).collect();
        Ok(Self { images, detections })
    }
}

pub fn load_dataset(path: &Path) -> Result<DetectionDataset, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    DetectionDataset::from_json_str(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedDetection {
    pub image_id: String,
    /// Index into [`DetectionDataset::detections`].
    pub detection: usize,
    pub score: f64,
    /// Index of the matched ground truth within its image.
    pub matched_gt: Option<usize>,
}

impl MatchedDetection {
    pub fn is_tp(&self) -> bool {
        self.matched_gt.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryMatches {
    pub category: String,
    pub threshold: f64,
    pub kind: MetricKind,
    /// Ranked by descending score; ties keep dataset order.
    pub detections: Vec<MatchedDetection>,
    pub n_gt: usize,
    pub unmatched_gt: usize,
}

impl CategoryMatches {
    pub fn tp_flags(&self) -> Vec<bool> {
        self.detections.iter().map(MatchedDetection::is_tp).collect()
    }

    pub fn tp_count(&self) -> usize {
        self.detections.iter().filter(|d| d.is_tp()).count()
    }
}

fn check_threshold(threshold: f64, kind: MetricKind) -> Result<(), EvalError> {
    let ok = match kind {
        MetricKind::Iou => threshold > 0.0 && threshold <= 1.0,
        _ => threshold.is_finite() && threshold <= 1.0,
    };
    if ok {
        Ok(())
    } else {
        Err(EvalError::InvalidThreshold { threshold, kind })
    }
}

/// Greedy matching of every detection of `category`.
pub fn match_detections(
    ds: &DetectionDataset,
    category: &str,
    threshold: f64,
    kind: MetricKind,
) -> Result<CategoryMatches, EvalError> {
    match_detections_capped(ds, category, threshold, kind, None)
}

/// Greedy matching keeping at most `max_dets` detections per image.
pub fn match_detections_capped(
    ds: &DetectionDataset,
    category: &str,
    threshold: f64,
    kind: MetricKind,
    max_dets: Option<usize>,
) -> Result<CategoryMatches, EvalError> {
    check_threshold(threshold, kind)?;
    if !ds.categories().contains(category) {
        return Err(EvalError::UnknownCategory(category.to_string()));
    }

    let mut ranked = Vec::new();
    let mut n_gt = 0;
    let mut unmatched_gt = 0;
    let mut det_cursor = 0;
    for im in &ds.images {
        let start = det_cursor;
        while det_cursor < ds.detections.len() && ds.detections[det_cursor].image_id == im.image_id {
            det_cursor += 1;
        }
        let gts: Vec<(usize, &GroundTruth)> = im
            .ground_truth
            .iter()
            .enumerate()
            .filter(|(_, g)| g.category == category)
            .collect();
        let mut dets: Vec<usize> = (start..det_cursor)
            .filter(|&i| ds.detections[i].category == category)
            .collect();
        dets.sort_by(|&a, &b| ds.detections[b].score.total_cmp(&ds.detections[a].score));
        if let Some(cap) = max_dets {
            dets.truncate(cap);
        }

        let mut taken = vec![false; gts.len()];
        for &di in &dets {
            let det = &ds.detections[di];
            let mut best: Option<(usize, f64)> = None;
            for (slot, (_, g)) in gts.iter().enumerate() {
                if taken[slot] {
                    continue;
                }
                // Metric errors (e.g. CIoU on a zero-width detection) never match.
                let Ok(m) = metrics::compute_lenient(kind, &g.bbox, &det.bbox, &im.dims) else {
                    continue;
                };
                if m.value >= threshold && best.is_none_or(|(_, v)| m.value > v) {
                    best = Some((slot, m.value));
                }
            }
            if let Some((slot, _)) = best {
                taken[slot] = true;
            }
            ranked.push(MatchedDetection {
                image_id: im.image_id.clone(),
                detection: di,
                score: det.score,
                matched_gt: best.map(|(slot, _)| gts[slot].0),
            });
        }
        n_gt += gts.len();
        unmatched_gt += taken.iter().filter(|t| !**t).count();
    }
    // Stable: equal scores keep image order, then score order within the image.
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(CategoryMatches {
        category: category.to_string(),
        threshold,
        kind,
        detections: ranked,
        n_gt,
        unmatched_gt,
    })
}

/// 101-point interpolated average precision of score-ranked TP flags.
///
/// `None` when there is neither ground truth nor detections; `0` when
/// detections exist but no ground truth does.
pub fn average_precision(tp: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return (!tp.is_empty()).then_some(0.0);
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let (mut ntp, mut nfp) = (0usize, 0usize);
    for &t in tp {
        if t {
            ntp += 1;
        } else {
            nfp += 1;
        }
        recall.push(ntp as f64 / n_gt as f64);
        precision.push(ntp as f64 / (ntp + nfp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let sum: f64 = (0..RECALL_POINTS)
        .map(|r| {
            let level = r as f64 / (RECALL_POINTS - 1) as f64;
            let idx = recall.partition_point(|&rc| rc < level);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / RECALL_POINTS as f64)
}

/// `0.50, 0.55, ..., 0.95`.
pub fn thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategorySummary {
    pub category: String,
    pub n_gt: usize,
    pub n_det: usize,
    /// AP per threshold.
    pub ap: Vec<Option<f64>>,
    /// Recall per threshold; `None` without ground truth.
    pub recall: Vec<Option<f64>>,
    pub tp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub metric: MetricKind,
    pub thresholds: Vec<f64>,
    pub max_dets: usize,
    pub categories: Vec<CategorySummary>,
    /// AP averaged over categories, per threshold.
    pub ap: Vec<Option<f64>>,
    /// Recall averaged over categories with ground truth, per threshold.
    pub recall: Vec<Option<f64>>,
    /// True positives summed over categories, per threshold.
    pub tp: Vec<usize>,
    pub map: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ar100: Option<f64>,
}

fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(ds: &DetectionDataset, kind: MetricKind) -> Result<EvalSummary, EvalError> {
    let thresholds = thresholds();
    let mut categories = Vec::new();
    for cat in ds.categories() {
        let mut cs = CategorySummary {
            category: cat.to_string(),
            n_gt: 0,
            n_det: 0,
            ap: Vec::with_capacity(thresholds.len()),
            recall: Vec::with_capacity(thresholds.len()),
            tp: Vec::with_capacity(thresholds.len()),
        };
        for &t in &thresholds {
            let m = match_detections_capped(ds, cat, t, kind, Some(MAX_DETS))?;
            let tp = m.tp_count();
            cs.n_gt = m.n_gt;
            cs.n_det = m.detections.len();
            cs.ap.push(average_precision(&m.tp_flags(), m.n_gt));
            cs.recall.push((m.n_gt > 0).then(|| tp as f64 / m.n_gt as f64));
            cs.tp.push(tp);
        }
        categories.push(cs);
    }

    let ap: Vec<Option<f64>> = (0..thresholds.len())
        .map(|t| mean(categories.iter().map(|c| c.ap[t])))
        .collect();
    let recall: Vec<Option<f64>> = (0..thresholds.len())
        .map(|t| mean(categories.iter().map(|c| c.recall[t])))
        .collect();
    let tp = (0..thresholds.len())
        .map(|t| categories.iter().map(|c| c.tp[t]).sum())
        .collect();
    let map = mean(ap.iter().copied());
    let ar100 = mean(recall.iter().copied());
    Ok(EvalSummary {
        metric: kind,
        max_dets: MAX_DETS,
        ap50: ap[0],
        ap75: ap[5],
        map,
        ar100,
        ap,
        recall,
        tp,
        categories,
        thresholds,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Long-format CSV: `category,measure,threshold,value`. Category `all` holds
/// the category means and the headline numbers; empty cells are undefined.
pub fn write_summary_csv<W: Write>(s: &EvalSummary, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "measure", "threshold", "value"])?;
    for c in &s.categories {
        for (i, t) in s.thresholds.iter().enumerate() {
            let t = t.to_string();
            w.write_record([c.category.as_str(), "ap", &t, &fmt_opt(c.ap[i])])?;
            w.write_record([c.category.as_str(), "recall", &t, &fmt_opt(c.recall[i])])?;
            w.write_record([c.category.as_str(), "tp", &t, &c.tp[i].to_string()])?;
        }
    }
    for (i, t) in s.thresholds.iter().enumerate() {
        let t = t.to_string();
        w.write_record(["all", "ap", &t, &fmt_opt(s.ap[i])])?;
        w.write_record(["all", "recall", &t, &fmt_opt(s.recall[i])])?;
        w.write_record(["all", "tp", &t, &s.tp[i].to_string()])?;
    }
    w.write_record(["all", "map", "", &fmt_opt(s.map)])?;
    w.write_record(["all", "ap50", "0.5", &fmt_opt(s.ap50)])?;
    w.write_record(["all", "ap75", "0.75", &fmt_opt(s.ap75)])?;
    w.write_record(["all", "ar100", "", &fmt_opt(s.ar100)])?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
