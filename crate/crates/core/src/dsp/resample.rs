//! Rational-ratio polyphase resampler with a Blackman-windowed sinc kernel
//! (symmetric, hence linear phase).

use crate::dsp::AudioClip;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

const ZERO_CROSSINGS: f64 = 16.0;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
const MAX_TABLE_PHASES: usize = 4096;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct Kernel {
    cutoff: f64,
    half: isize,
}

impl Kernel {
    fn tap(&self, tau: f64) -> f64 {
        let half = self.half as f64;
        if tau.abs() >= half {
            return 0.0;
        }
        let x = 2.0 * self.cutoff * tau;
        let sinc = if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        let u = (tau + half) / (2.0 * half);
        let two_pi = 2.0 * std::f64::consts::PI;
        let window = 0.42 - 0.5 * (two_pi * u).cos() + 0.08 * (2.0 * two_pi * u).cos();
        2.0 * self.cutoff * sinc * window
    }
}

pub fn resample<T: Scalar>(clip: &AudioClip<T>, target_rate: u32) -> Result<AudioClip<T>> {
    if target_rate == 0 {
        return Err(invalid("target sample rate must be positive"));
    }
    if clip.sample_rate == target_rate || clip.samples.is_empty() {
        return AudioClip::new(clip.samples.clone(), target_rate);
    }
    let g = gcd(u64::from(clip.sample_rate), u64::from(target_rate));
    let up = (u64::from(target_rate) / g) as usize;
    let down = (u64::from(clip.sample_rate) / g) as usize;
    let cutoff = 0.5 * ROLLOFF * (up as f64 / down as f64).min(1.0);
    let kernel = Kernel {
        cutoff,
        half: (ZERO_CROSSINGS / (2.0 * cutoff)).ceil() as isize,
    };
    let taps = 2 * kernel.half as usize;
    let table: Option<Vec<f64>> = (up <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .flat_map(|phase| {
                let frac = phase as f64 / up as f64;
                let k = &kernel;
                (0..taps).map(move |j| k.tap((j as isize - k.half + 1) as f64 - frac))
            })
            .collect()
    });
    let x = &clip.samples;
    let n_in = x.len();
    let n_out = (n_in * up).div_ceil(down);
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let pos = n * down;
        let (i, phase) = ((pos / up) as isize, pos % up);
        let mut acc = 0.0;
        for j in 0..taps {
            let idx = i + j as isize - kernel.half + 1;
            if idx < 0 || idx as usize >= n_in {
                continue;
            }
            let h = match &table {
                Some(t) => t[phase * taps + j],
                None => kernel.tap((j as isize - kernel.half + 1) as f64 - phase as f64 / up as f64),
            };
            acc += h * x[idx as usize].as_f64();
        }
        out.push(T::lit(acc));
    }
    AudioClip::new(out, target_rate)
}
