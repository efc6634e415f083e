#![allow(dead_code)]

use std::path::PathBuf;

use boxreg::MetricKind;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Hand-enumerated evaluation of `fixtures/micro.json`.
pub struct MicroTable {
    /// Mean AP over categories, per threshold.
    pub ap: [f64; 10],
    /// Mean recall over categories with ground truth, per threshold.
    pub recall: [f64; 10],
    pub tp: [usize; 10],
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar100: f64,
    /// Per category (car, dog, person): AP per threshold.
    pub category_ap: [[f64; 10]; 3],
}

// Person detections ranked by score: b/[60,50,80,70] (IoU 1/3 with its
// nearest gt, never a match), a/[20,20,40,35.1] (IoU 0.755, MPDIoU
// 0.755 - 4.9^2/3200 = 0.747496875), b/[50,50,70,70] (exact). Three person
// gts.
//
// FP,TP,TP: interpolated precision 2/3 up to recall 2/3, i.e. recall points
// 0.00..0.66 (67 of 101) -> AP 134/303, recall 2/3.
// FP,FP,TP: precision 1/3 up to recall 1/3, points 0.00..0.33 (34 of 101)
// -> AP 34/303, recall 1/3.
// Car is matched exactly (AP 1, recall 1). Dog has a detection and no gt
// (AP 0, recall undefined).
const PERSON_HIGH: f64 = 134.0 / 303.0;
const PERSON_LOW: f64 = 34.0 / 303.0;

pub fn micro_table(kind: MetricKind) -> MicroTable {
    // Thresholds 0.50..0.95 at which the shifted person detection still matches.
    let matched_up_to = match kind {
        MetricKind::Iou => 6,    // 0.755 >= 0.75
        MetricKind::Mpdiou => 5, // 0.7475 < 0.75
        other => panic!("no table for {other}"),
    };
    let mut t = MicroTable {
        ap: [0.0; 10],
        recall: [0.0; 10],
        tp: [0; 10],
        map: 0.0,
        ap50: 0.0,
        ap75: 0.0,
        ar100: 0.0,
        category_ap: [[1.0; 10], [0.0; 10], [0.0; 10]],
    };
    for i in 0..10 {
        let (person_ap, person_recall, tp) = if i < matched_up_to {
            (PERSON_HIGH, 2.0 / 3.0, 3)
        } else {
            (PERSON_LOW, 1.0 / 3.0, 2)
        };
        t.category_ap[2][i] = person_ap;
        t.ap[i] = (1.0 + 0.0 + person_ap) / 3.0;
        t.recall[i] = (1.0 + person_recall) / 2.0;
        t.tp[i] = tp;
    }
    t.map = t.ap.iter().sum::<f64>() / 10.0;
    t.ap50 = t.ap[0];
    t.ap75 = t.ap[5];
    t.ar100 = t.recall.iter().sum::<f64>() / 10.0;
    t
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
