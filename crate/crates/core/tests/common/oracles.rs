//! Literal reference implementations used to cross-check the library.
#![allow(dead_code)]

/// Evaluates the three peak conditions frame by frame, exactly as stated.
pub fn pick_peaks_brute(v: &[f64], w: [usize; 5], delta: f64) -> Vec<usize> {
    let [pre_max, post_max, pre_avg, post_avg, wait] = w;
    let n = v.len();
    let mut out: Vec<usize> = Vec::new();
    for t in 0..n {
        let lo = t.saturating_sub(pre_max);
        let hi = (t + post_max).min(n - 1);
        let mut max = f64::NEG_INFINITY;
        for i in lo..=hi {
            if v[i] > max {
                max = v[i];
            }
        }
        let earliest_of_plateau = t == 0 || v[t - 1] != v[t];
        let a = v[t] == max && earliest_of_plateau;

        let lo = t.saturating_sub(pre_avg);
        let hi = (t + post_avg).min(n - 1);
        let mut sum = 0.0;
        for i in lo..=hi {
            sum += v[i];
        }
        let b = v[t] >= sum / (hi - lo + 1) as f64 + delta;

        let c = match out.last() {
            Some(&prev) => t - prev > wait,
            None => true,
        };
        if a && b && c {
            out.push(t);
        }
    }
    out
}

/// Maximum one-to-one matching size by exhaustive search over reference subsets.
pub fn max_matching_brute(pred: &[f64], reference: &[f64], tol: f64) -> usize {
    fn go(i: usize, used: u32, pred: &[f64], reference: &[f64], tol: f64) -> usize {
        if i == pred.len() {
            return 0;
        }
        let mut best = go(i + 1, used, pred, reference, tol);
        for (j, r) in reference.iter().enumerate() {
            if used & (1 << j) == 0 && (pred[i] - r).abs() <= tol {
                best = best.max(1 + go(i + 1, used | (1 << j), pred, reference, tol));
            }
        }
        best
    }
    assert!(reference.len() <= 16);
    go(0, 0, pred, reference, tol)
}

/// Zero-padded convolution with the unit-sum 5-point Hamming window; the
/// result at each frame is divided by the weight that fell inside the series.
pub fn smooth_loop(v: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = (0..5)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / 4.0).cos())
        .collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let mut padded = vec![0.0; 2];
    padded.extend_from_slice(v);
    padded.extend_from_slice(&[0.0, 0.0]);
    let mut mask = vec![0.0; 2];
    mask.extend(std::iter::repeat(1.0).take(v.len()));
    mask.extend_from_slice(&[0.0, 0.0]);
    (0..v.len())
        .map(|t| {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for j in 0..5 {
                if mask[t + j] == 1.0 {
                    acc += w[j] * padded[t + j];
                    norm += w[j];
                }
            }
            acc / norm
        })
        .collect()
}

/// Targets by scanning the whole clip for each frame.
pub fn targets_brute(onsets: &[usize], n: usize) -> Vec<((u32, bool), (u32, bool))> {
    (0..n)
        .map(|t| {
            let next = onsets.iter().copied().filter(|&s| s >= t).min();
            let prev = onsets.iter().copied().filter(|&s| s <= t).max();
            let tte = match next {
                Some(s) => ((s - t) as u32, true),
                None => ((n - 1 - t) as u32, false),
            };
            let tse = match prev {
                Some(s) => ((t - s) as u32, true),
                None => (t as u32, false),
            };
            (tte, tse)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
