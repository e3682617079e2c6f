//! Onset detection function, smoothing and peak picking.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dist::{DistParams, Family};
use crate::error::{invalid, Result};
use crate::predictor::Prediction;
use crate::scalar::Scalar;

/// Where the "within one frame" probability is read off the CDF.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfPoint {
    /// `F(2)`: mass of frames 0 and 1 on the shifted grid.
    #[default]
    Two,
    /// `F(1)`: mass of frame 0 only.
    One,
}

impl CdfPoint {
    fn within<T: Scalar>(self, family: Family, p: DistParams<T>) -> T {
        let k = match self {
            CdfPoint::Two => 1,
            CdfPoint::One => 0,
        };
        T::one() - family.survival(p, k)
    }
}

/// `1 - (1 - p1)(1 - p2)`.
pub fn combine(p1: f64, p2: f64) -> f64 {
    1.0 - (1.0 - p1) * (1.0 - p2)
}

pub fn odf_value<T: Scalar>(family: Family, point: CdfPoint, tte: DistParams<T>, tse: DistParams<T>) -> f64 {
    combine(point.within(family, tte).as_f64(), point.within(family, tse).as_f64())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdfSeries {
    pub values: Vec<f64>,
    /// Seconds per frame.
    pub hop: f64,
}

impl OdfSeries {
    pub fn new(values: Vec<f64>, hop: f64) -> Result<Self> {
        if !(hop > 0.0) {
            return Err(invalid("hop must be positive"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(crate::Error::NonFinite(format!("odf value {v}")));
        }
        Ok(Self { values, hop })
    }

    /// ODF for per-frame predictions; baseline scores are used as-is.
    pub fn from_predictions<T: Scalar>(
        family: Family,
        point: CdfPoint,
        preds: &[Prediction<T>],
        hop: f64,
    ) -> Result<Self> {
        let values = preds
            .iter()
            .map(|p| match *p {
                Prediction::Survival { tte, tse } => odf_value(family, point, tte, tse),
                Prediction::Score(s) => s.as_f64(),
            })
            .collect();
        Self::new(values, hop)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Symmetric 5-point Hamming window scaled to unit sum.
pub fn hamming5() -> [f64; 5] {
    let mut w = [0.0; 5];
    for (n, v) in w.iter_mut().enumerate() {
        *v = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / 4.0).cos();
    }
    let sum: f64 = w.iter().sum();
    w.map(|v| v / sum)
}

/// Centred Hamming smoothing. Frames outside the series count as absent:
/// near the edges the remaining taps are rescaled to unit sum, so a constant
/// series stays constant.
pub fn smooth(series: &OdfSeries) -> OdfSeries {
    let w = hamming5();
    let n = series.values.len() as isize;
    let values = (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (j, wj) in w.iter().enumerate() {
                let i = t + j as isize - 2;
                if (0..n).contains(&i) {
                    acc += wj * series.values[i as usize];
                    norm += wj;
                }
            }
            acc / norm
        })
        .collect();
    OdfSeries {
        values,
        hop: series.hop,
    }
}

/// Peak-picking windows in milliseconds plus the threshold offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakPickConfig {
    pub pre_max_ms: f64,
    pub post_max_ms: f64,
    pub pre_avg_ms: f64,
    pub post_avg_ms: f64,
    pub wait_ms: f64,
    pub delta: f64,
}

impl Default for PeakPickConfig {
    fn default() -> Self {
        Self {
            pre_max_ms: 30.0,
            post_max_ms: 30.0,
            pre_avg_ms: 120.0,
            post_avg_ms: 10.0,
            wait_ms: 0.0,
            delta: 0.1,
        }
    }
}

/// Window extents in whole frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeakWindows {
    pub pre_max: usize,
    pub post_max: usize,
    pub pre_avg: usize,
    pub post_avg: usize,
    pub wait: usize,
}

impl PeakPickConfig {
    pub fn with_delta(self, delta: f64) -> Self {
        Self { delta, ..self }
    }

    pub fn windows(&self, hop: f64) -> Result<PeakWindows> {
        let ms = [
            self.pre_max_ms,
            self.post_max_ms,
            self.pre_avg_ms,
            self.post_avg_ms,
            self.wait_ms,
        ];
        if ms.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !self.delta.is_finite() {
            return Err(invalid("peak-picking windows must be finite and non-negative"));
        }
        if !(hop > 0.0) {
            return Err(invalid("hop must be positive"));
        }
        let f = |v: f64| (v / 1000.0 / hop).round() as usize;
        Ok(PeakWindows {
            pre_max: f(ms[0]),
            post_max: f(ms[1]),
            pre_avg: f(ms[2]),
            post_avg: f(ms[3]),
            wait: f(ms[4]),
        })
    }
}

/// Selected frame indices. A frame is kept when it is the maximum of
/// `[t - pre_max, t + post_max]` (earliest frame of a plateau), reaches the
/// mean of `[t - pre_avg, t + post_avg]` plus `delta`, and lies more than
/// `wait` frames after the previous pick. Windows are inclusive and clamped.
pub fn pick_peak_frames(values: &[f64], w: PeakWindows, delta: f64) -> Vec<usize> {
    let n = values.len();
    let mut picks = Vec::new();
    // deque of candidate indices with decreasing values for the sliding max
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut next_in = 0usize;
    let mut last: Option<usize> = None;
    for t in 0..n {
        let hi = (t + w.post_max).min(n - 1);
        while next_in <= hi {
            while window.back().is_some_and(|&j| values[j] <= values[next_in]) {
                window.pop_back();
            }
            window.push_back(next_in);
            next_in += 1;
        }
        let lo = t.saturating_sub(w.pre_max);
        while window.front().is_some_and(|&j| j < lo) {
            window.pop_front();
        }
        let max = values[*window.front().expect("window holds t")];
        let v = values[t];
        if v != max || (t > 0 && values[t - 1] == v) {
            continue;
        }
        let a = t.saturating_sub(w.pre_avg);
        let b = (t + w.post_avg).min(n - 1);
        let mean = values[a..=b].iter().sum::<f64>() / (b - a + 1) as f64;
        if v < mean + delta {
            continue;
        }
        if last.is_some_and(|l| t - l <= w.wait) {
            continue;
        }
        picks.push(t);
        last = Some(t);
    }
    picks
}

/// Onset times in seconds.
pub fn pick_peaks(series: &OdfSeries, cfg: &PeakPickConfig) -> Result<Vec<f64>> {
    let w = cfg.windows(series.hop)?;
    Ok(pick_peak_frames(&series.values, w, cfg.delta)
        .into_iter()
        .map(|t| t as f64 * series.hop)
        .collect())
}
