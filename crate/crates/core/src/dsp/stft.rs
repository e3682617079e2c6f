use rustfft::num_complex::Complex;
use rustfft::{FftNum, FftPlanner};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Row-major `frames x bins` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T> {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn get(&self, frame: usize, bin: usize) -> T {
        self.data[frame * self.bins + bin]
    }

    pub fn row(&self, frame: usize) -> &[T] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// Periodic Hann window.
pub fn hann<T: Scalar>(len: usize) -> Vec<T> {
    (0..len)
        .map(|i| T::lit(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()))
        .collect()
}

/// Magnitude STFT with a Hann window of `window_samples` zero-padded (centred)
/// to the next power of two, and frames centred on `t * hop` by reflection
/// padding. Yields `len / hop + 1` frames of `n_fft / 2 + 1` bins.
pub fn stft_magnitude<T: Scalar + FftNum>(
    samples: &[T],
    window_samples: usize,
    hop_samples: usize,
) -> Result<Spectrogram<T>> {
    if samples.is_empty() {
        return Err(invalid("cannot analyse an empty clip"));
    }
    if window_samples == 0 || hop_samples == 0 {
        return Err(invalid("window and hop must be positive"));
    }
    if window_samples > samples.len() {
        return Err(invalid(format!(
            "window of {window_samples} samples exceeds clip of {}",
            samples.len()
        )));
    }
    let n_fft = window_samples.next_power_of_two();
    let pad = n_fft / 2;
    if samples.len() <= pad {
        return Err(invalid("clip too short for reflection padding"));
    }
    let mut window = vec![T::zero(); n_fft];
    let offset = (n_fft - window_samples) / 2;
    window[offset..offset + window_samples].copy_from_slice(&hann::<T>(window_samples));

    let len = samples.len();
    let padded: Vec<T> = (0..len + 2 * pad)
        .map(|j| {
            let i = j as isize - pad as isize;
            let idx = if i < 0 {
                (-i) as usize
            } else if i as usize >= len {
                2 * (len - 1) - i as usize
            } else {
                i as usize
            };
            samples[idx]
        })
        .collect();

    let frames = len / hop_samples + 1;
    let bins = n_fft / 2 + 1;
    let fft = FftPlanner::<T>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n_fft];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * hop_samples;
        for ((b, x), w) in buf.iter_mut().zip(&padded[start..start + n_fft]).zip(&window) {
            *b = Complex::new(*x * *w, T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram { frames, bins, data })
}
