use crate::dsp::stft::Spectrogram;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Triangular filters with slaney area normalization (`2 / bandwidth`).
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank<T> {
    pub n_mels: usize,
    pub bins: usize,
    /// `n_mels x bins`
    pub weights: Vec<T>,
    /// Non-zero bin range of each band.
    spans: Vec<(usize, usize)>,
}

impl<T: Scalar> MelFilterbank<T> {
    pub fn new(bins: usize, sample_rate: u32, n_mels: usize, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = f64::from(sample_rate) / 2.0;
        if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
            return Err(invalid(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin={fmin} fmax={fmax}"
            )));
        }
        if n_mels == 0 || bins < 2 {
            return Err(invalid("filterbank needs at least one band and two bins"));
        }
        let fft_freqs: Vec<f64> = (0..bins).map(|k| nyquist * k as f64 / (bins - 1) as f64).collect();
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = Vec::with_capacity(n_mels * bins);
        let mut spans = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            let mut row_sum = 0.0;
            for &f in &fft_freqs {
                let lower = (f - left) / (centre - left);
                let upper = (right - f) / (right - centre);
                let w = lower.min(upper).max(0.0) * norm;
                row_sum += w;
                weights.push(T::lit(w));
            }
            let row = &weights[m * bins..];
            let first = row.iter().position(|w| *w != T::zero()).unwrap_or(0);
            let last = row.iter().rposition(|w| *w != T::zero()).map_or(0, |i| i + 1);
            spans.push((first, last.max(first)));
            if row_sum == 0.0 {
                return Err(invalid(format!(
                    "mel band {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; too many bands for {bins} bins"
                )));
            }
        }
        Ok(Self {
            n_mels,
            bins,
            weights,
            spans,
        })
    }

    pub fn row(&self, m: usize) -> &[T] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    pub fn apply(&self, mag: &Spectrogram<T>) -> Result<Spectrogram<T>> {
        if mag.bins != self.bins {
            return Err(invalid(format!(
                "spectrum has {} bins, filterbank {}",
                mag.bins, self.bins
            )));
        }
        let mut data = Vec::with_capacity(mag.frames * self.n_mels);
        for f in 0..mag.frames {
            let spec = mag.row(f);
            for (m, &(a, b)) in self.spans.iter().enumerate() {
                data.push(self.row(m)[a..b].iter().zip(&spec[a..b]).map(|(w, s)| *w * *s).sum());
            }
        }
        Ok(Spectrogram {
            frames: mag.frames,
            bins: self.n_mels,
            data,
        })
    }
}

pub fn mel_project<T: Scalar>(
    mag: &Spectrogram<T>,
    sample_rate: u32,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<Spectrogram<T>> {
    MelFilterbank::new(mag.bins, sample_rate, n_mels, fmin, fmax)?.apply(mag)
}

/// `ln(1 + x)` per cell.
pub fn log_compress<T: Scalar>(mel: &Spectrogram<T>) -> Result<Spectrogram<T>> {
    if let Some(v) = mel.data.iter().find(|v| !(**v >= T::zero())) {
        return Err(invalid(format!("log compression needs non-negative input, got {v}")));
    }
    Ok(Spectrogram {
        frames: mel.frames,
        bins: mel.bins,
        data: mel.data.iter().map(|v| v.ln_1p()).collect(),
    })
}
