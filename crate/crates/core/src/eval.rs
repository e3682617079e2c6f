//! Onset matching, precision/recall/F1, threshold sweeps and fold reports.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::inference::{pick_peak_frames, smooth, OdfSeries, PeakPickConfig};

/// Matching tolerance in seconds.
pub const TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

fn check_sorted(times: &[f64], what: &str) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid(format!("{what} times must be finite and sorted")));
    }
    Ok(())
}

/// One-to-one matching with `|pred - ref| <= tol`. Both lists are walked in
/// time order and each reference takes the earliest unused prediction inside
/// its window, which is a maximum matching for equal-width windows on a line.
pub fn match_onsets(pred: &[f64], reference: &[f64], tol: f64) -> Result<Counts> {
    check_sorted(pred, "predicted")?;
    check_sorted(reference, "reference")?;
    if !(tol >= 0.0) {
        return Err(invalid("tolerance must be non-negative"));
    }
    let mut i = 0;
    let mut tp = 0;
    for &r in reference {
        // predictions too early for this reference are too early for all later ones
        while i < pred.len() && r - pred[i] > tol {
            i += 1;
        }
        if i < pred.len() && (pred[i] - r).abs() <= tol {
            tp += 1;
            i += 1;
        }
    }
    Ok(Counts {
        tp,
        fp: pred.len() - tp,
        fn_: reference.len() - tp,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn prf(c: Counts) -> Prf {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf { precision, recall, f1 }
}

/// `0.01, 0.02, ..., 0.99`.
pub fn default_delta_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub counts: Counts,
    pub prf: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
    /// Index of the best F1; the smallest delta wins ties.
    pub best: usize,
}

impl Sweep {
    pub fn best_point(&self) -> &SweepPoint {
        &self.points[self.best]
    }
}

/// Scores every delta of the grid with counts pooled over all clips.
pub fn sweep_delta(
    odfs: &[OdfSeries],
    refs: &[Vec<f64>],
    cfg: &PeakPickConfig,
    grid: &[f64],
    tol: f64,
) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(invalid("delta grid is empty"));
    }
    if odfs.len() != refs.len() {
        return Err(invalid("one reference list per detection function required"));
    }
    let windows: Vec<_> = odfs.iter().map(|o| cfg.windows(o.hop)).collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(grid.len());
    for &delta in grid {
        if !delta.is_finite() {
            return Err(invalid("delta grid values must be finite"));
        }
        let mut counts = Counts::default();
        for ((odf, r), w) in odfs.iter().zip(refs).zip(&windows) {
            let picks: Vec<f64> = pick_peak_frames(&odf.values, *w, delta)
                .into_iter()
                .map(|t| t as f64 * odf.hop)
                .collect();
            counts = counts + match_onsets(&picks, r, tol)?;
        }
        points.push(SweepPoint {
            delta,
            counts,
            prf: prf(counts),
        });
    }
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.prf.f1 > points[best].prf.f1 {
            best = i;
        }
    }
    Ok(Sweep { points, best })
}

/// Raw and smoothed sweeps over the same clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub raw: Sweep,
    pub smoothed: Sweep,
}

pub fn evaluate_fold(
    fold: usize,
    odfs: &[OdfSeries],
    refs: &[Vec<f64>],
    cfg: &PeakPickConfig,
    grid: &[f64],
    tol: f64,
) -> Result<FoldResult> {
    let smoothed: Vec<OdfSeries> = odfs.iter().map(smooth).collect();
    Ok(FoldResult {
        fold,
        raw: sweep_delta(odfs, refs, cfg, grid, tol)?,
        smoothed: sweep_delta(&smoothed, refs, cfg, grid, tol)?,
    })
}

/// Seeded clip-to-fold assignment; fold sizes differ by at most one.
pub fn crossval(n_clips: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(invalid("cross-validation needs at least 2 folds"));
    }
    if n_clips < k {
        return Err(invalid(format!("{n_clips} clips cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n_clips).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n_clips];
    for (pos, &clip) in order.iter().enumerate() {
        fold[clip] = pos % k;
    }
    Ok(fold)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-fold sweeps for one model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Model name for the summary table, e.g. `LogLogistic` or `Baseline`.
    pub model: String,
    pub threshold: Option<u32>,
    pub folds: Vec<FoldResult>,
}

impl EvalReport {
    pub fn f1_raw(&self) -> (f64, f64) {
        mean_std(&self.folds.iter().map(|f| f.raw.best_point().prf.f1).collect::<Vec<_>>())
    }

    pub fn f1_smoothed(&self) -> (f64, f64) {
        mean_std(
            &self
                .folds
                .iter()
                .map(|f| f.smoothed.best_point().prf.f1)
                .collect::<Vec<_>>(),
        )
    }

    pub fn csv_header() -> &'static str {
        "model,threshold,fold,smoothed,delta,tp,fp,fn,precision,recall,f1,optimal\n"
    }

    /// Rows of every sweep point (no header).
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        let thr = self.threshold.map(|t| t.to_string()).unwrap_or_default();
        for f in &self.folds {
            for (smoothed, sweep) in [(0, &f.raw), (1, &f.smoothed)] {
                for (i, p) in sweep.points.iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{},{},{:.4},{},{},{},{:.6},{:.6},{:.6},{}\n",
                        self.model,
                        thr,
                        f.fold,
                        smoothed,
                        p.delta,
                        p.counts.tp,
                        p.counts.fp,
                        p.counts.fn_,
                        p.prf.precision,
                        p.prf.recall,
                        p.prf.f1,
                        u8::from(i == sweep.best)
                    ));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}{}", Self::csv_header(), self.csv_rows())
    }
}

/// Fixed-width table with the columns `Model, Threshold, F1, F1(S)`.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut out = format!("{:<12} {:>9}  {:<15}  {:<15}\n", "Model", "Threshold", "F1", "F1(S)");
    for r in reports {
        let (m, s) = r.f1_raw();
        let (ms, ss) = r.f1_smoothed();
        let thr = r.threshold.map_or("-".to_string(), |t| t.to_string());
        out.push_str(&format!(
            "{:<12} {:>9}  {:<15}  {:<15}\n",
            r.model,
            thr,
            format!("{m:.3} ± {s:.3}"),
            format!("{ms:.3} ± {ss:.3}")
        ));
    }
    out
}
