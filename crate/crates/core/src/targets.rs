//! Per-frame time-to-event / time-since-event targets with right censoring.

use serde::{Deserialize, Serialize};

use crate::dist::CensoredObservation;
use crate::error::{invalid, Result};

/// Onset times in seconds, strictly increasing and non-negative.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OnsetAnnotation {
    onsets: Vec<f64>,
}

impl OnsetAnnotation {
    pub fn new(onsets: Vec<f64>) -> Result<Self> {
        if onsets.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(invalid("onset times must be finite and non-negative"));
        }
        if onsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("onset times must be strictly increasing"));
        }
        Ok(Self { onsets })
    }

    /// Sorts and de-duplicates. Returns whether the input needed reordering.
    pub fn from_unsorted(mut onsets: Vec<f64>) -> Result<(Self, bool)> {
        let sorted = onsets.windows(2).all(|w| w[0] <= w[1]);
        onsets.sort_by(f64::total_cmp);
        onsets.dedup();
        Ok((Self::new(onsets)?, !sorted))
    }

    pub fn times(&self) -> &[f64] {
        &self.onsets
    }

    pub fn len(&self) -> usize {
        self.onsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onsets.is_empty()
    }
}

/// TTE and TSE observations of one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetFrame {
    pub tte: CensoredObservation,
    pub tse: CensoredObservation,
}

/// Quantizes onset times to frame indices (`round(time / hop)`, ties to
/// even), dropping indices at or beyond `n_frames` and merging duplicates.
pub fn onset_frames(ann: &OnsetAnnotation, hop: f64, n_frames: usize) -> Result<Vec<usize>> {
    if !(hop > 0.0) {
        return Err(invalid(format!("hop must be positive, got {hop}")));
    }
    let mut frames: Vec<usize> = ann
        .times()
        .iter()
        .map(|t| (t / hop).round_ties_even() as usize)
        .filter(|&f| f < n_frames)
        .collect();
    frames.dedup();
    Ok(frames)
}

/// Builds the per-frame targets for a clip of `n_frames` frames.
///
/// TTE is the distance to the next onset at or after the frame; after the
/// last onset it is censored at the distance to the final frame. TSE is the
/// distance to the latest onset at or before the frame; before the first
/// onset it is censored at the distance to frame 0. With a `threshold`, any
/// target above it becomes censored at the threshold.
pub fn compute_targets(onset_frames: &[usize], n_frames: usize, threshold: Option<u32>) -> Result<Vec<TargetFrame>> {
    if onset_frames.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("onset frames must be strictly increasing"));
    }
    if onset_frames.last().is_some_and(|&f| f >= n_frames) {
        return Err(invalid(format!("onset frame outside a clip of {n_frames} frames")));
    }
    if threshold == Some(0) {
        return Err(invalid("threshold must be at least 1 frame"));
    }
    let mut out = Vec::with_capacity(n_frames);
    let mut next = 0usize; // index into onset_frames of the first onset >= t
    for t in 0..n_frames {
        while next < onset_frames.len() && onset_frames[next] < t {
            next += 1;
        }
        let tte = match onset_frames.get(next) {
            Some(&s) => CensoredObservation::observed((s - t) as u32),
            None => CensoredObservation::censored((n_frames - 1 - t) as u32),
        };
        let last = if onset_frames.get(next) == Some(&t) {
            Some(t)
        } else if next > 0 {
            Some(onset_frames[next - 1])
        } else {
            None
        };
        let tse = match last {
            Some(s) => CensoredObservation::observed((t - s) as u32),
            None => CensoredObservation::censored(t as u32),
        };
        out.push(TargetFrame {
            tte: clip(tte, threshold),
            tse: clip(tse, threshold),
        });
    }
    Ok(out)
}

fn clip(obs: CensoredObservation, threshold: Option<u32>) -> CensoredObservation {
    match threshold {
        Some(th) if obs.time > th => CensoredObservation::censored(th),
        _ => obs,
    }
}

/// Frames whose TTE is an observed zero, i.e. the onset frames.
pub fn reconstruct_onsets(targets: &[TargetFrame]) -> Vec<usize> {
    targets
        .iter()
        .enumerate()
        .filter(|(_, f)| f.tte.observed && f.tte.time == 0)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(targets: &[TargetFrame]) -> (Vec<u32>, Vec<u8>, Vec<u32>, Vec<u8>) {
        (
            targets.iter().map(|f| f.tte.time).collect(),
            targets.iter().map(|f| f.tte.observed as u8).collect(),
            targets.iter().map(|f| f.tse.time).collect(),
            targets.iter().map(|f| f.tse.observed as u8).collect(),
        )
    }

    #[test]
    fn quantization() {
        let ann = OnsetAnnotation::new(vec![0.031]).unwrap();
        assert_eq!(onset_frames(&ann, 0.010, 100).unwrap(), vec![3]);
        assert!(onset_frames(&OnsetAnnotation::default(), 0.01, 10).unwrap().is_empty());
        let ann = OnsetAnnotation::new(vec![0.014, 0.016]).unwrap();
        assert_eq!(onset_frames(&ann, 0.010, 100).unwrap(), vec![1, 2]);
        let ann = OnsetAnnotation::new(vec![0.0149, 0.0151, 0.0152]).unwrap();
        assert_eq!(onset_frames(&ann, 0.010, 100).unwrap(), vec![1, 2]);
        let ann = OnsetAnnotation::new(vec![0.05, 2.0]).unwrap();
        assert_eq!(onset_frames(&ann, 0.010, 100).unwrap(), vec![5]);
        assert!(onset_frames(&ann, 0.0, 100).is_err());
    }

    #[test]
    fn annotation_validation() {
        assert!(OnsetAnnotation::new(vec![0.2, 0.1]).is_err());
        assert!(OnsetAnnotation::new(vec![0.1, 0.1]).is_err());
        assert!(OnsetAnnotation::new(vec![-0.1]).is_err());
        let (a, reordered) = OnsetAnnotation::from_unsorted(vec![0.3, 0.1, 0.2]).unwrap();
        assert!(reordered);
        assert_eq!(a.times(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn two_onsets_unclipped() {
        let t = compute_targets(&[3, 8], 12, None).unwrap();
        let (tte, tte_u, tse, tse_u) = split(&t);
        assert_eq!(tte, vec![3, 2, 1, 0, 4, 3, 2, 1, 0, 2, 1, 0]);
        assert_eq!(tte_u, vec![1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0]);
        assert_eq!(tse, vec![0, 1, 2, 0, 1, 2, 3, 4, 0, 1, 2, 3]);
        assert_eq!(tse_u, vec![0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn no_onsets_all_censored() {
        let t = compute_targets(&[], 4, None).unwrap();
        let (tte, tte_u, tse, tse_u) = split(&t);
        assert_eq!(tte, vec![3, 2, 1, 0]);
        assert_eq!(tse, vec![0, 1, 2, 3]);
        assert!(tte_u.iter().chain(&tse_u).all(|&u| u == 0));
    }

    #[test]
    fn clipping() {
        let t = compute_targets(&[3, 8], 12, Some(2)).unwrap();
        assert_eq!(t[0].tte, CensoredObservation::censored(2));
        assert_eq!(t[4].tte, CensoredObservation::censored(2));
        assert_eq!(t[7].tte, CensoredObservation::observed(1));
        assert!(compute_targets(&[3], 12, Some(0)).is_err());
    }

    #[test]
    fn precondition_violations() {
        assert!(compute_targets(&[12], 12, None).is_err());
        assert!(compute_targets(&[5, 3], 12, None).is_err());
    }
}
