//! Segmentation and instance-localization metrics.
//!
//! IoU is accumulated over the whole evaluation set through a single
//! confusion matrix (rows = ground truth, columns = prediction), not
//! averaged per image.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance_assign::AssignmentResult;
use crate::tensor_store::LabelMask;

pub const DEFAULT_IGNORE_ID: u8 = 255;

/// Confusion counts over an ordered class list. The extra last row/column
/// collects labels that are neither listed nor ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<u8>,
    pub ignore_id: u8,
    pub counts: Vec<Vec<u64>>,
    pub ignored: u64,
    #[serde(skip)]
    index: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: &[u8], ignore_id: u8) -> Result<Self> {
        let mut index = vec![classes.len(); 256];
        for (i, &c) in classes.iter().enumerate() {
            if c == ignore_id {
                return Err(Error::Invalid(format!("class {c} equals the ignore id")));
            }
            if index[c as usize] != classes.len() {
                return Err(Error::Invalid(format!("class {c} listed twice")));
            }
            index[c as usize] = i;
        }
        let n = classes.len() + 1;
        Ok(ConfusionMatrix {
            classes: classes.to_vec(),
            ignore_id,
            counts: vec![vec![0; n]; n],
            ignored: 0,
            index,
        })
    }

    pub fn add(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::Shape {
                what: "evaluation pair".into(),
                message: format!(
                    "prediction {}x{} vs ground truth {}x{}",
                    pred.width, pred.height, gt.width, gt.height
                ),
            });
        }
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == self.ignore_id {
                self.ignored += 1;
                continue;
            }
            self.counts[self.index[g as usize]][self.index[p as usize]] += 1;
        }
        Ok(())
    }

    /// Adds another partial matrix over the same class list.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes || self.ignore_id != other.ignore_id {
            return Err(Error::Invalid("merging confusion matrices over different classes".into()));
        }
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(orow) {
                *a += b;
            }
        }
        self.ignored += other.ignored;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `TP / (TP + FP + FN)` for the class at list position `i`, or `None`
    /// when the class appears in neither prediction nor ground truth.
    pub fn iou(&self, i: usize) -> Option<f64> {
        let tp = self.counts[i][i];
        let gt: u64 = self.counts[i].iter().sum();
        let pred: u64 = self.counts.iter().map(|r| r[i]).sum();
        let union = gt + pred - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_class_iou: BTreeMap<u8, f64>,
    /// Mean over every defined class in the list, background included when
    /// listed.
    pub miou: f64,
    /// Mean over defined classes other than background (id 0).
    pub miou_foreground: Option<f64>,
    /// Classes absent from both predictions and ground truth.
    pub undefined_classes: Vec<u8>,
    pub bf_acc: Option<f64>,
    pub af_acc: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub gt_pixels: BTreeMap<u8, u64>,
    pub pred_pixels: BTreeMap<u8, u64>,
    pub ignored_pixels: u64,
    pub images: usize,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>8}  {:>8}  {:>10}  {:>10}", "class", "iou", "gt_px", "pred_px");
        for (i, &c) in self.confusion.classes.iter().enumerate() {
            let iou = self
                .confusion
                .iou(i)
                .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{:>8}  {:>8}  {:>10}  {:>10}",
                c,
                iou,
                self.gt_pixels.get(&c).copied().unwrap_or(0),
                self.pred_pixels.get(&c).copied().unwrap_or(0)
            );
        }
        let _ = writeln!(out, "mIoU (all listed classes): {:.4}", self.miou);
        if let Some(fg) = self.miou_foreground {
            let _ = writeln!(out, "mIoU (foreground only):    {fg:.4}");
        }
        if let (Some(bf), Some(af)) = (self.bf_acc, self.af_acc) {
            let _ = writeln!(out, "bf_acc: {bf:.4}  af_acc: {af:.4}");
        }
        let _ = writeln!(out, "images: {}  ignored pixels: {}", self.images, self.ignored_pixels);
        out
    }
}

/// Dataset-global mIoU over paired prediction and ground-truth masks.
pub fn miou(preds: &[LabelMask], gts: &[LabelMask], classes: &[u8], ignore_id: u8) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let mut confusion = ConfusionMatrix::new(classes, ignore_id)?;
    for (p, g) in preds.iter().zip(gts) {
        confusion.add(p, g)?;
    }
    report_from_confusion(confusion, preds.len())
}

pub fn report_from_confusion(confusion: ConfusionMatrix, images: usize) -> Result<EvalReport> {
    if confusion.classes.is_empty() {
        return Err(Error::Invalid("no classes to evaluate".into()));
    }
    let mut per_class_iou = BTreeMap::new();
    let mut undefined_classes = Vec::new();
    let mut gt_pixels = BTreeMap::new();
    let mut pred_pixels = BTreeMap::new();
    for (i, &c) in confusion.classes.iter().enumerate() {
        gt_pixels.insert(c, confusion.counts[i].iter().sum());
        pred_pixels.insert(c, confusion.counts.iter().map(|r| r[i]).sum());
        match confusion.iou(i) {
            Some(v) => {
                per_class_iou.insert(c, v);
            }
            None => undefined_classes.push(c),
        }
    }
    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| s / n as f64)
    };
    let miou = mean(&mut per_class_iou.values().copied()).unwrap_or(0.0);
    let miou_foreground = mean(&mut per_class_iou.iter().filter(|(&c, _)| c != 0).map(|(_, &v)| v));
    Ok(EvalReport {
        per_class_iou,
        miou,
        miou_foreground,
        undefined_classes,
        bf_acc: None,
        af_acc: None,
        ignored_pixels: confusion.ignored,
        confusion,
        gt_pixels,
        pred_pixels,
        images,
    })
}

/// Greedy and Hungarian results for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAssignments {
    pub greedy: AssignmentResult,
    pub hungarian: AssignmentResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceAccuracy {
    pub bf_acc: f64,
    pub af_acc: f64,
    pub instances: usize,
}

/// Fraction of instances placed on their true segment, before (greedy) and
/// after (Hungarian) solving the joint assignment. `gt_segments[s][i]` is
/// the true segment of instance `i` in scene `s`.
pub fn instance_accuracy(scenes: &[SceneAssignments], gt_segments: &[Vec<usize>]) -> Result<InstanceAccuracy> {
    if scenes.is_empty() {
        return Err(Error::Invalid("no scenes to evaluate".into()));
    }
    if scenes.len() != gt_segments.len() {
        return Err(Error::Invalid(format!(
            "{} scenes but {} ground-truth lists",
            scenes.len(),
            gt_segments.len()
        )));
    }
    let (mut bf, mut af, mut total) = (0usize, 0usize, 0usize);
    for (s, (scene, truth)) in scenes.iter().zip(gt_segments).enumerate() {
        for result in [&scene.greedy, &scene.hungarian] {
            if let Some(a) = result.assignments.iter().find(|a| a.instance >= truth.len()) {
                return Err(Error::Invalid(format!(
                    "scene {s}: no ground truth for instance {}",
                    a.instance
                )));
            }
        }
        for (i, &t) in truth.iter().enumerate() {
            total += 1;
            if scene.greedy.segment_of(i) == Some(t) {
                bf += 1;
            }
            if scene.hungarian.segment_of(i) == Some(t) {
                af += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Invalid("no instances to evaluate".into()));
    }
    Ok(InstanceAccuracy {
        bf_acc: bf as f64 / total as f64,
        af_acc: af as f64 / total as f64,
        instances: total,
    })
}
