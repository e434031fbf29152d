//! Segmentation and measure metrics, accumulated in count-and-sum form so
//! partial results combine in any order.

use crate::data::{Mask, CLASS_NAMES, CLOUD, SKY, SUN, TRACKER};
use crate::error::{input_err, Result};

fn check_labels(pred: &Mask, gt: &Mask, classes: usize) -> Result<()> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(input_err("masks differ in extent"));
    }
    if pred.labels.is_empty() {
        return Err(input_err("empty mask"));
    }
    if pred.labels.iter().chain(&gt.labels).any(|&l| l as usize >= classes) {
        return Err(input_err(format!("label outside {classes} classes")));
    }
    Ok(())
}

/// Intersection over union for class `k`; 1 when neither mask contains it.
pub fn iou(pred: &Mask, gt: &Mask, k: u8, classes: usize) -> Result<f64> {
    check_labels(pred, gt, classes)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        inter += (p == k && g == k) as usize;
        union += (p == k || g == k) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn pixel_accuracy(pred: &Mask, gt: &Mask, classes: usize) -> Result<f64> {
    check_labels(pred, gt, classes)?;
    let hits = pred.labels.iter().zip(&gt.labels).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.labels.len() as f64)
}

/// `100·Σ|p − g| / Σg`, i.e. mean absolute error over the ground-truth mean.
pub fn nmae(preds: &[f64], gts: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(input_err("nmae needs equally many, at least one, predictions and targets"));
    }
    let total: f64 = gts.iter().sum();
    if total <= 0.0 {
        return Err(input_err("nmae undefined for non-positive ground-truth mean"));
    }
    let err: f64 = preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).sum();
    Ok(100.0 * err / total)
}

/// Running sums for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonAccumulator {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
    pub correct: u64,
    pub pixels: u64,
    pub abs_error: f64,
    pub target_sum: f64,
    pub samples: u64,
}

impl HorizonAccumulator {
    pub fn new(classes: usize) -> Self {
        HorizonAccumulator {
            intersection: vec![0; classes],
            union: vec![0; classes],
            correct: 0,
            pixels: 0,
            abs_error: 0.0,
            target_sum: 0.0,
            samples: 0,
        }
    }

    pub fn add(&mut self, pred: &Mask, gt: &Mask, measure_pred: f64, measure_gt: f64) -> Result<()> {
        let classes = self.intersection.len();
        check_labels(pred, gt, classes)?;
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if p == g {
                self.correct += 1;
                self.intersection[p as usize] += 1;
                self.union[p as usize] += 1;
            } else {
                self.union[p as usize] += 1;
                self.union[g as usize] += 1;
            }
        }
        self.pixels += pred.labels.len() as u64;
        self.abs_error += (measure_pred - measure_gt).abs();
        self.target_sum += measure_gt;
        self.samples += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &HorizonAccumulator) {
        for (a, b) in self.intersection.iter_mut().zip(&other.intersection) {
            *a += b;
        }
        for (a, b) in self.union.iter_mut().zip(&other.union) {
            *a += b;
        }
        self.correct += other.correct;
        self.pixels += other.pixels;
        self.abs_error += other.abs_error;
        self.target_sum += other.target_sum;
        self.samples += other.samples;
    }

    pub fn finish(&self, horizon_min: u32) -> Result<HorizonMetrics> {
        if self.samples == 0 {
            return Err(input_err("no samples accumulated"));
        }
        let iou = self
            .intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| if u == 0 { 1.0 } else { i as f64 / u as f64 })
            .collect();
        let nmae_pct = if self.target_sum > 0.0 {
            100.0 * self.abs_error / self.target_sum
        } else {
            return Err(input_err("nmae undefined for non-positive ground-truth mean"));
        };
        Ok(HorizonMetrics {
            horizon_min,
            iou,
            accuracy: self.correct as f64 / self.pixels as f64,
            nmae_pct,
            samples: self.samples,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMetrics {
    /// Minutes ahead of the last input frame (0 for same-frame evaluation).
    pub horizon_min: u32,
    /// IoU per class index.
    pub iou: Vec<f64>,
    pub accuracy: f64,
    pub nmae_pct: f64,
    pub samples: u64,
}

impl HorizonMetrics {
    pub fn iou_of(&self, class: u8) -> f64 {
        self.iou.get(class as usize).copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub horizons: Vec<HorizonMetrics>,
}

pub const REPORT_HEADER: &str = "horizon_min,iou_cloud,iou_sky,iou_sun,iou_tracker,accuracy,nmae_pct";

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for h in &self.horizons {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                h.horizon_min,
                h.iou_of(CLOUD),
                h.iou_of(SKY),
                h.iou_of(SUN),
                h.iou_of(TRACKER),
                h.accuracy,
                h.nmae_pct
            ));
        }
        out
    }

    pub fn mean_iou(&self, class: u8) -> f64 {
        self.horizons.iter().map(|h| h.iou_of(class)).sum::<f64>() / self.horizons.len() as f64
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>8}", "horizon");
        for name in CLASS_NAMES {
            out.push_str(&format!(" {:>8}", format!("iou_{name}")));
        }
        out.push_str(&format!(" {:>8} {:>8}\n", "acc", "nmae%"));
        for h in &self.horizons {
            out.push_str(&format!("{:>8}", format!("+{}", h.horizon_min)));
            for k in 0..CLASS_NAMES.len() as u8 {
                out.push_str(&format!(" {:>8.4}", h.iou_of(k)));
            }
            out.push_str(&format!(" {:>8.4} {:>8.3}\n", h.accuracy, h.nmae_pct));
        }
        out
    }
}
