//! Segmentation metrics and the Dice + BCE training loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::TissueMask;

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

/// `None` marks a 0/0 ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub dice_weight: f64,
    pub smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { dice_weight: 0.65, smooth: 1.0 }
    }
}

fn same_dims(a: (u32, u32), b: (u32, u32)) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

pub fn confusion_counts(pred: &TissueMask, gt: &TissueMask) -> Result<ConfusionCounts> {
    same_dims(pred.dims(), gt.dims())?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
    }
}

/// A probability raster the size of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub width: u32,
    pub height: u32,
    pub probs: Vec<f64>,
}

impl ProbMap {
    pub fn new(width: u32, height: u32, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != width as usize * height as usize {
            return Err(Error::DimMismatch(format!("{} probabilities for {width}x{height}", probs.len())));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParam("probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, probs })
    }

    pub fn from_mask(mask: &TissueMask) -> Self {
        Self { width: mask.width, height: mask.height, probs: mask.bits.iter().map(|&b| f64::from(b)).collect() }
    }
}

pub fn dice_loss(pred: &ProbMap, gt: &TissueMask, cfg: &LossConfig) -> Result<f64> {
    same_dims((pred.width, pred.height), gt.dims())?;
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.probs.iter().zip(&gt.bits) {
        let g = f64::from(g);
        inter += p * g;
        sp += p;
        sg += g;
    }
    Ok(1.0 - (2.0 * inter + cfg.smooth) / (sp + sg + cfg.smooth))
}

pub fn bce_loss(pred: &ProbMap, gt: &TissueMask) -> Result<f64> {
    same_dims((pred.width, pred.height), gt.dims())?;
    let n = pred.probs.len();
    if n == 0 {
        return Err(Error::InvalidParam("empty raster".into()));
    }
    let sum: f64 = pred
        .probs
        .iter()
        .zip(&gt.bits)
        .map(|(&p, &g)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if g != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / n as f64)
}

pub fn combined_loss(pred: &ProbMap, gt: &TissueMask, cfg: &LossConfig) -> Result<f64> {
    if cfg.dice_weight < 0.0 {
        return Err(Error::InvalidParam("dice weight must be non-negative".into()));
    }
    Ok(cfg.dice_weight * dice_loss(pred, gt, cfg)? + bce_loss(pred, gt)?)
}

/// One line of a batch evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideEval {
    pub slide_id: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_slides: usize,
    /// Metrics of the pooled counts.
    pub micro: Metrics,
    /// Per-metric mean over slides where the metric is defined.
    pub macro_: Metrics,
    pub counts: ConfusionCounts,
}

pub fn summarize(evals: &[SlideEval]) -> EvalSummary {
    let counts = evals.iter().fold(ConfusionCounts::default(), |a, e| a + e.counts);
    let mean = |f: fn(&Metrics) -> Option<f64>| {
        let vals: Vec<f64> = evals.iter().filter_map(|e| f(&e.metrics)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    EvalSummary {
        n_slides: evals.len(),
        micro: metrics(&counts),
        macro_: Metrics {
            accuracy: mean(|m| m.accuracy),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            iou: mean(|m| m.iou),
        },
        counts,
    }
}

/// JSON-lines report: one record per slide then a summary record.
pub fn report_jsonl(evals: &[SlideEval]) -> Result<String> {
    let mut out = String::new();
    for e in evals {
        let mut v = serde_json::to_value(e)?;
        v["record"] = "slide".into();
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    let s = summarize(evals);
    let v = serde_json::json!({
        "record": "summary",
        "n_slides": s.n_slides,
        "counts": s.counts,
        "micro": s.micro,
        "macro": s.macro_,
    });
    out.push_str(&serde_json::to_string(&v)?);
    out.push('\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cc(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn counts_on_4x4() {
        let ones = TissueMask::ones(4, 4, 1.0);
        let zeros = TissueMask::zeros(4, 4, 1.0);
        assert_eq!(confusion_counts(&ones, &ones).unwrap(), cc(16, 0, 0, 0));
        assert_eq!(confusion_counts(&ones, &zeros).unwrap(), cc(0, 16, 0, 0));
        let left = TissueMask::from_fn(4, 4, 1.0, |x, _| x < 2);
        let top = TissueMask::from_fn(4, 4, 1.0, |_, y| y < 2);
        assert_eq!(confusion_counts(&top, &left).unwrap(), cc(4, 4, 4, 4));
        assert!(matches!(confusion_counts(&ones, &TissueMask::ones(4, 5, 1.0)), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn metric_values() {
        let m = metrics(&cc(4, 4, 4, 4));
        assert_eq!(m.precision, Some(0.5));
        assert_eq!(m.recall, Some(0.5));
        assert_eq!(m.f1, Some(0.5));
        assert_eq!(m.iou, Some(4.0 / 12.0));
        assert_eq!(m.accuracy, Some(0.5));
        let m = metrics(&cc(16, 0, 0, 0));
        assert_eq!([m.accuracy, m.precision, m.recall, m.f1, m.iou], [Some(1.0); 5]);
        let m = metrics(&cc(0, 0, 5, 11));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
        assert_eq!(m.iou, Some(0.0));
    }

    #[test]
    fn loss_values() {
        let gt = TissueMask::from_fn(4, 4, 1.0, |x, y| (x + y) % 3 == 0);
        let cfg = LossConfig::default();
        assert_eq!(dice_loss(&ProbMap::from_mask(&gt), &gt, &cfg).unwrap(), 0.0);
        let ones = TissueMask::ones(4, 4, 1.0);
        let zero = ProbMap::new(4, 4, vec![0.0; 16]).unwrap();
        assert!((dice_loss(&zero, &ones, &cfg).unwrap() - (1.0 - 1.0 / 17.0)).abs() < 1e-15);
        assert!(bce_loss(&ProbMap::from_mask(&gt), &gt).unwrap() < 1e-6);
        let half = ProbMap::new(4, 4, vec![0.5; 16]).unwrap();
        assert!((bce_loss(&half, &gt).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(combined_loss(&ProbMap::from_mask(&gt), &gt, &cfg).unwrap() < 1e-6);
        let no_dice = LossConfig { dice_weight: 0.0, ..cfg };
        assert_eq!(combined_loss(&half, &gt, &no_dice).unwrap(), bce_loss(&half, &gt).unwrap());
        let d = dice_loss(&half, &gt, &cfg).unwrap();
        let b = bce_loss(&half, &gt).unwrap();
        assert!((combined_loss(&half, &gt, &cfg).unwrap() - (0.65 * d + b)).abs() < 1e-15);
    }

    #[test]
    fn flipping_a_pixel_increases_losses() {
        let gt = TissueMask::from_fn(8, 8, 1.0, |x, y| x * y > 10);
        let mut probs: Vec<f64> = gt.bits.iter().map(|&b| if b != 0 { 0.9 } else { 0.1 }).collect();
        let before = ProbMap::new(8, 8, probs.clone()).unwrap();
        probs[63] = 0.0; // gt is 1 there
        let after = ProbMap::new(8, 8, probs).unwrap();
        let cfg = LossConfig::default();
        assert!(dice_loss(&after, &gt, &cfg).unwrap() > dice_loss(&before, &gt, &cfg).unwrap());
        assert!(bce_loss(&after, &gt).unwrap() > bce_loss(&before, &gt).unwrap());
    }

    #[test]
    fn report_has_summary() {
        let e = SlideEval { slide_id: "a".into(), counts: cc(4, 4, 4, 4), metrics: metrics(&cc(4, 4, 4, 4)) };
        let empty = SlideEval { slide_id: "b".into(), counts: cc(0, 0, 0, 16), metrics: metrics(&cc(0, 0, 0, 16)) };
        let s = summarize(&[e.clone(), empty.clone()]);
        assert_eq!(s.counts, cc(4, 4, 4, 20));
        assert_eq!(s.macro_.precision, Some(0.5));
        assert_eq!(s.macro_.accuracy, Some(0.75));
        let text = report_jsonl(&[e, empty]).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0]["counts"]["fn"], 4);
        assert_eq!(lines[1]["metrics"]["precision"], serde_json::Value::Null);
        assert_eq!(lines[2]["record"], "summary");
    }

    proptest! {
        #[test]
        fn metric_ranges(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, tn in 0u64..1000) {
            let m = metrics(&cc(tp, fp, fn_, tn));
            for v in [m.accuracy, m.precision, m.recall, m.f1, m.iou].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Some(f1) = m.f1 {
                prop_assert_eq!(f1 == 1.0, fp == 0 && fn_ == 0);
            }
            if tp > 0 {
                prop_assert!(m.iou.unwrap() <= m.f1.unwrap() + 1e-15);
            }
        }

        #[test]
        fn transpose_invariance(w in 1u32..12, h in 1u32..12, a in any::<u64>(), b in any::<u64>()) {
            let pred = TissueMask::from_fn(w, h, 1.0, |x, y| (a >> ((x * 7 + y * 3) % 64)) & 1 == 1);
            let gt = TissueMask::from_fn(w, h, 1.0, |x, y| (b >> ((x * 5 + y * 11) % 64)) & 1 == 1);
            prop_assert_eq!(
                confusion_counts(&pred, &gt).unwrap(),
                confusion_counts(&pred.transpose(), &gt.transpose()).unwrap()
            );
        }
    }
}
