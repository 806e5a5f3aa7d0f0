//! Occupancy IoU, per-class IoU and mIoU between label grids.

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::TravLabel;
use crate::label::LabelGrid;

const CHUNK: usize = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction and ground truth use different grids")]
    GridSpecMismatch,
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionStats {
    pub tp_occ: u64,
    pub fp_occ: u64,
    pub fn_occ: u64,
    pub tn_occ: u64,
    /// Indexed in [`TravLabel::CLASSES`] order.
    pub classes: [ClassCounts; 3],
}

impl ConfusionStats {
    pub fn total(&self) -> u64 {
        self.tp_occ + self.fp_occ + self.fn_occ + self.tn_occ
    }

    pub fn class(&self, c: TravLabel) -> Option<&ClassCounts> {
        class_slot(c).map(|i| &self.classes[i])
    }

    fn add_pair(&mut self, pred: TravLabel, gt: TravLabel) {
        match (pred.is_occupied(), gt.is_occupied()) {
            (true, true) => self.tp_occ += 1,
            (true, false) => self.fp_occ += 1,
            (false, true) => self.fn_occ += 1,
            (false, false) => self.tn_occ += 1,
        }
        if pred == gt {
            if let Some(i) = class_slot(pred) {
                self.classes[i].tp += 1;
            }
            return;
        }
        if let Some(i) = class_slot(pred) {
            self.classes[i].fp += 1;
        }
        if let Some(i) = class_slot(gt) {
            self.classes[i].fn_ += 1;
        }
    }

    fn merge(mut self, o: Self) -> Self {
        self.tp_occ += o.tp_occ;
        self.fp_occ += o.fp_occ;
        self.fn_occ += o.fn_occ;
        self.tn_occ += o.tn_occ;
        for (a, b) in self.classes.iter_mut().zip(o.classes) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
        self
    }
}

fn class_slot(c: TravLabel) -> Option<usize> {
    TravLabel::CLASSES.iter().position(|&x| x == c)
}

/// Per-voxel comparison. `FP_c` counts voxels predicted `c` whose ground
/// truth differs, `FN_c` voxels with ground truth `c` whose prediction differs.
pub fn confusion(pred: &LabelGrid, gt: &LabelGrid) -> Result<ConfusionStats, EvalError> {
    if pred.spec() != gt.spec() {
        return Err(EvalError::GridSpecMismatch);
    }
    Ok(pred
        .labels()
        .par_chunks(CHUNK)
        .zip(gt.labels().par_chunks(CHUNK))
        .map(|(p, g)| {
            let mut s = ConfusionStats::default();
            for (&a, &b) in p.iter().zip(g) {
                s.add_pair(a, b);
            }
            s
        })
        .reduce(ConfusionStats::default, ConfusionStats::merge))
}

fn ratio(tp: u64, fp: u64, fn_: u64, what: &'static str) -> Result<f64, EvalError> {
    let denom = tp + fp + fn_;
    if denom == 0 {
        return Err(EvalError::UndefinedMetric(what));
    }
    Ok(tp as f64 / denom as f64)
}

pub fn iou_occ(stats: &ConfusionStats) -> Result<f64, EvalError> {
    ratio(stats.tp_occ, stats.fp_occ, stats.fn_occ, "occupancy")
}

pub fn iou_class(stats: &ConfusionStats, c: TravLabel) -> Result<f64, EvalError> {
    let k = stats
        .class(c)
        .ok_or(EvalError::UndefinedMetric("unoccupied is not a class"))?;
    ratio(k.tp, k.fp, k.fn_, "class absent from prediction and ground truth")
}

/// Mean over the classes whose IoU is defined.
pub fn miou(stats: &ConfusionStats) -> Result<f64, EvalError> {
    let defined: Vec<f64> = TravLabel::CLASSES
        .iter()
        .filter_map(|&c| iou_class(stats, c).ok())
        .collect();
    if defined.is_empty() {
        return Err(EvalError::UndefinedMetric("no class present"));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// All metrics with undefined values as `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub iou_occ: Option<f64>,
    /// In [`TravLabel::CLASSES`] order.
    pub iou_class: [Option<f64>; 3],
    pub miou: Option<f64>,
    pub counts: ConfusionStats,
}

pub fn report(stats: &ConfusionStats) -> MetricsReport {
    MetricsReport {
        iou_occ: iou_occ(stats).ok(),
        iou_class: TravLabel::CLASSES.map(|c| iou_class(stats, c).ok()),
        miou: miou(stats).ok(),
        counts: *stats,
    }
}
