//! Randomised agreement checks shared by the integration tests and the
//! acceptance suite.

use onset_tte::dist::{CensoredObservation, DistParams, Family};
use onset_tte::eval::{match_onsets, TOLERANCE};
use onset_tte::inference::{pick_peak_frames, PeakWindows};
use onset_tte::predictor::{ModelConfig, Network};
use onset_tte::targets::{compute_targets, reconstruct_onsets, TargetFrame};
use onset_tte::tensor::{Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{max_matching_brute, pick_peaks_brute, rel_err};

/// Relative-error floor for network gradient checks.
pub const FLOOR: f64 = 1e-6;

/// A 1e-4 nudge to an early conv or batchnorm parameter moves enough units
/// across ReLU and max-pool switch points to bias the difference quotient;
/// the composed network is checked with a smaller step.
pub const NET_STEP: f64 = 1e-6;

/// Up to `max` indices spread over `0..len`.
pub fn sample_indices(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|_| rng.gen_range(0..len)).collect()
    }
}

pub fn random_batch(n: usize, seed: u64) -> (Tensor<f64>, Vec<TargetFrame>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[n, 15, 80, 3], |_| rng.gen_range(0.0..2.0));
    let targets = (0..n)
        .map(|_| {
            let obs = |rng: &mut ChaCha8Rng| {
                let t = rng.gen_range(0..=10);
                if rng.gen_bool(0.6) {
                    CensoredObservation::observed(t)
                } else {
                    CensoredObservation::censored(t)
                }
            };
            TargetFrame {
                tte: obs(&mut rng),
                tse: obs(&mut rng),
            }
        })
        .collect();
    (x, targets)
}

/// Largest relative error over a sample of every trainable parameter tensor.
pub fn network_gradient_error(config: &ModelConfig, per_tensor: usize, seed: u64) -> f64 {
    let mut net = Network::<f64>::build(config).unwrap();
    net.init_scale_bias(4.0);
    let (x, targets) = random_batch(4, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    net.store_mut().zero_grads();
    net.loss_and_grad(x.clone(), &targets, Mode::Infer, &mut rng).unwrap();
    let names: Vec<String> = net
        .store()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.name.clone())
        .collect();
    let mut worst = 0.0f64;
    for name in names {
        let id = net.store().id(&name).unwrap();
        let analytic = net.store().get(id).grad.clone();
        for i in sample_indices(analytic.len(), per_tensor, &mut rng) {
            let orig = net.store().value(id).data()[i];
            net.store_mut().value_mut(id).data_mut()[i] = orig + NET_STEP;
            let lp = net.loss(x.clone(), &targets).unwrap();
            net.store_mut().value_mut(id).data_mut()[i] = orig - NET_STEP;
            let lm = net.loss(x.clone(), &targets).unwrap();
            net.store_mut().value_mut(id).data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * NET_STEP);
            let e = rel_err(analytic.data()[i], fd, FLOOR);
            assert!(e.is_finite());
            worst = worst.max(e);
        }
    }
    worst
}

pub fn draw_params(rng: &mut ChaCha8Rng) -> DistParams<f64> {
    DistParams::new(rng.gen_range(0.3f64..40.0), rng.gen_range(0.3..5.0))
}

pub fn draw_obs(rng: &mut ChaCha8Rng) -> CensoredObservation {
    let t = rng.gen_range(0..40);
    if rng.gen_bool(0.5) {
        CensoredObservation::observed(t)
    } else {
        CensoredObservation::censored(t)
    }
}

/// Worst relative error of the analytic NLL gradient over `draws` random
/// (params, observation) pairs, central differences with step 1e-6 * param.
pub fn nll_gradient_error(family: Family, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let p = draw_params(&mut rng);
        let obs = draw_obs(&mut rng);
        let (da, db) = family.nll_grad(p, obs);
        let loss = |a: f64, b: f64| family.censored_nll(DistParams::new(a, b), obs).unwrap();
        let ha = 1e-6 * p.alpha;
        let hb = 1e-6 * p.beta;
        let fa = (loss(p.alpha + ha, p.beta) - loss(p.alpha - ha, p.beta)) / (2.0 * ha);
        let fb = (loss(p.alpha, p.beta + hb) - loss(p.alpha, p.beta - hb)) / (2.0 * hb);
        worst = worst.max(rel_err(da, fa, 1e-4)).max(rel_err(db, fb, 1e-4));
    }
    worst
}

/// Largest |sum_{k<K} pmf(k) + survival(K-1) - 1| over random parameters.
pub fn normalization_error(family: Family, draws: usize, horizon: u32, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let p = draw_params(&mut rng);
        let mass: f64 = (0..horizon).map(|k| family.pmf(p, k)).sum();
        worst = worst.max((mass + family.survival(p, horizon - 1) - 1.0).abs());
    }
    worst
}

pub fn random_onsets(rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
    let n = rng.gen_range(1..400);
    let mut onsets: Vec<usize> = (0..rng.gen_range(0..20)).map(|_| rng.gen_range(0..n)).collect();
    onsets.sort_unstable();
    onsets.dedup();
    (onsets, n)
}

/// Returns the number of failures over `count` random annotation sets.
pub fn round_trip_failures(count: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..count {
        let (onsets, n) = random_onsets(&mut rng);
        let threshold = if rng.gen_bool(0.5) {
            Some(rng.gen_range(1..30))
        } else {
            None
        };
        let targets = compute_targets(&onsets, n, threshold).unwrap();
        let bad_clip = threshold.is_some_and(|th| {
            targets
                .iter()
                .any(|f| (f.tte.observed && f.tte.time > th) || (f.tse.observed && f.tse.time > th))
        });
        if reconstruct_onsets(&targets) != onsets || bad_clip {
            failures += 1;
        }
    }
    failures
}

pub fn windows(w: [usize; 5]) -> PeakWindows {
    PeakWindows {
        pre_max: w[0],
        post_max: w[1],
        pre_avg: w[2],
        post_avg: w[3],
        wait: w[4],
    }
}

/// Random series with plateaus and repeated values, and random windows.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, [usize; 5], f64) {
    let n = rng.gen_range(1..120);
    let levels = rng.gen_range(2..8);
    let mut v = Vec::with_capacity(n);
    while v.len() < n {
        let x = if rng.gen_bool(0.5) {
            rng.gen_range(0..levels) as f64 / levels as f64
        } else {
            rng.gen::<f64>()
        };
        for _ in 0..rng.gen_range(1..4) {
            v.push(x);
        }
    }
    v.truncate(n);
    let w = [
        rng.gen_range(0..5),
        rng.gen_range(0..5),
        rng.gen_range(0..15),
        rng.gen_range(0..4),
        rng.gen_range(0..4),
    ];
    (v, w, rng.gen_range(-0.1..0.4))
}

/// Number of random instances on which the fast picker and the literal
/// oracle disagree.
pub fn peak_picking_mismatches(count: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .filter(|_| {
            let (v, w, delta) = random_instance(&mut rng);
            pick_peak_frames(&v, windows(w), delta) != pick_peaks_brute(&v, w, delta)
        })
        .count()
}

/// Sorted times on a 10 ms grid (to hit tolerance boundaries) or continuous.
pub fn random_times(rng: &mut ChaCha8Rng, max: usize) -> Vec<f64> {
    let grid = rng.gen_bool(0.5);
    let mut v: Vec<f64> = (0..rng.gen_range(0..=max))
        .map(|_| {
            if grid {
                rng.gen_range(0..60) as f64 * 0.01
            } else {
                rng.gen_range(0.0..0.6)
            }
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Instances where greedy matching and the exhaustive oracle disagree on TP.
pub fn matching_mismatches(count: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .filter(|_| {
            let pred = random_times(&mut rng, 8);
            let reference = random_times(&mut rng, 8);
            let c = match_onsets(&pred, &reference, TOLERANCE).unwrap();
            c.tp != max_matching_brute(&pred, &reference, TOLERANCE)
                || c.fp != pred.len() - c.tp
                || c.fn_ != reference.len() - c.tp
        })
        .count()
}
