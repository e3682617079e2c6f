//! Audio front end: STFT magnitudes, slaney mel filterbanks, log
//! compression, the three-resolution feature stack and chunk extraction.

pub mod cache;
pub mod mel;
pub mod resample;
pub mod stft;
pub mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

pub use mel::{log_compress, mel_project, MelFilterbank};
pub use stft::{stft_magnitude, Spectrogram};

pub const SAMPLE_RATE: u32 = 44_100;
pub const HOP_SECONDS: f64 = 0.010;
pub const N_MELS: usize = 80;
pub const N_CHANNELS: usize = 3;
pub const WINDOW_SECONDS: [f64; N_CHANNELS] = [0.023, 0.046, 0.093];
pub const FMIN: f64 = 27.5;
pub const FMAX: f64 = 16_000.0;
pub const CHUNK_FRAMES: usize = 15;
/// Row of the decision frame inside a chunk.
pub const CHUNK_CENTER: usize = CHUNK_FRAMES / 2;

/// Mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> AudioClip<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Parameters of the feature stack; the defaults are the values used
/// throughout the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_seconds: [f64; N_CHANNELS],
    pub hop_seconds: f64,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            window_seconds: WINDOW_SECONDS,
            hop_seconds: HOP_SECONDS,
            n_mels: N_MELS,
            fmin: FMIN,
            fmax: FMAX,
        }
    }
}

impl FeatureConfig {
    pub fn hop_samples(&self) -> usize {
        (f64::from(self.sample_rate) * self.hop_seconds).round() as usize
    }

    pub fn window_samples(&self, channel: usize) -> usize {
        (f64::from(self.sample_rate) * self.window_seconds[channel]).round() as usize
    }

    /// Log-mel spectrogram of one resolution: `frames x n_mels`.
    pub fn log_mel<T: Scalar + rustfft::FftNum>(&self, clip: &AudioClip<T>, channel: usize) -> Result<Spectrogram<T>> {
        if clip.sample_rate != self.sample_rate {
            return Err(invalid(format!(
                "clip sampled at {} Hz, pipeline expects {} Hz",
                clip.sample_rate, self.sample_rate
            )));
        }
        let mag = stft_magnitude(&clip.samples, self.window_samples(channel), self.hop_samples())?;
        let mel = mel_project(&mag, self.sample_rate, self.n_mels, self.fmin, self.fmax)?;
        log_compress(&mel)
    }
}

/// Stacked log-mel features, `frames x n_mels x 3`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor<T> {
    pub frames: usize,
    pub n_mels: usize,
    pub hop: f64,
    pub values: Vec<T>,
}

impl<T: Scalar> FeatureTensor<T> {
    pub fn frame_len(&self) -> usize {
        self.n_mels * N_CHANNELS
    }

    pub fn frame(&self, t: usize) -> &[T] {
        let n = self.frame_len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, band: usize, channel: usize) -> T {
        self.values[(t * self.n_mels + band) * N_CHANNELS + channel]
    }

    /// Writes the chunk centred on frame `t` into `out` (length
    /// `CHUNK_FRAMES * frame_len`); rows outside the clip are zero.
    pub fn write_chunk(&self, t: usize, out: &mut [T]) -> Result<()> {
        if t >= self.frames {
            return Err(invalid(format!("frame {t} outside a clip of {} frames", self.frames)));
        }
        let n = self.frame_len();
        if out.len() != CHUNK_FRAMES * n {
            return Err(Error::Shape {
                op: "chunk buffer",
                left: vec![out.len()],
                right: vec![CHUNK_FRAMES, self.n_mels, N_CHANNELS],
            });
        }
        for (row, dst) in out.chunks_exact_mut(n).enumerate() {
            let src = (t + row).checked_sub(CHUNK_CENTER).filter(|&s| s < self.frames);
            match src {
                Some(s) => dst.copy_from_slice(self.frame(s)),
                None => dst.fill(T::zero()),
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> FeatureTensor<U> {
        FeatureTensor {
            frames: self.frames,
            n_mels: self.n_mels,
            hop: self.hop,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// A `CHUNK_FRAMES x n_mels x 3` window with the decision frame at row
/// [`CHUNK_CENTER`].
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk<T> {
    pub values: Vec<T>,
    pub center_frame: usize,
}

pub fn extract_chunk<T: Scalar>(feat: &FeatureTensor<T>, t: usize) -> Result<Chunk<T>> {
    let mut values = vec![T::zero(); CHUNK_FRAMES * feat.frame_len()];
    feat.write_chunk(t, &mut values)?;
    Ok(Chunk {
        values,
        center_frame: t,
    })
}

/// Three log-mel resolutions on a shared hop, stacked on the last axis.
/// Clips at another sample rate are resampled first.
pub fn build_features<T: Scalar + rustfft::FftNum>(clip: &AudioClip<T>) -> Result<FeatureTensor<T>> {
    build_features_with(clip, &FeatureConfig::default())
}

pub fn build_features_with<T: Scalar + rustfft::FftNum>(
    clip: &AudioClip<T>,
    cfg: &FeatureConfig,
) -> Result<FeatureTensor<T>> {
    let resampled;
    let clip = if clip.sample_rate == cfg.sample_rate {
        clip
    } else {
        resampled = resample::resample(clip, cfg.sample_rate)?;
        &resampled
    };
    let longest = (0..N_CHANNELS).map(|c| cfg.window_samples(c)).max().unwrap_or(0);
    if clip.samples.len() < longest {
        return Err(invalid(format!(
            "clip of {} samples is shorter than the longest window ({longest})",
            clip.samples.len()
        )));
    }
    let channels = (0..N_CHANNELS)
        .map(|c| cfg.log_mel(clip, c))
        .collect::<Result<Vec<_>>>()?;
    let frames = channels.iter().map(|s| s.frames).min().unwrap_or(0);
    let n_mels = cfg.n_mels;
    let mut values = Vec::with_capacity(frames * n_mels * N_CHANNELS);
    for t in 0..frames {
        for band in 0..n_mels {
            for ch in &channels {
                values.push(ch.get(t, band));
            }
        }
    }
    Ok(FeatureTensor {
        frames,
        n_mels,
        hop: cfg.hop_seconds,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_clip(seconds: f64, seed: u64) -> AudioClip<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (seconds * f64::from(SAMPLE_RATE)) as usize;
        AudioClip::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), SAMPLE_RATE).unwrap()
    }

    #[test]
    fn feature_shape_and_channel_zero() {
        let clip = noise_clip(0.5, 1);
        let feat = build_features(&clip).unwrap();
        assert_eq!(feat.frames, 1 + clip.samples.len() / 441);
        assert_eq!(feat.values.len(), feat.frames * 80 * 3);
        let standalone = FeatureConfig::default().log_mel(&clip, 0).unwrap();
        for t in 0..feat.frames {
            for b in 0..80 {
                assert_eq!(feat.get(t, b, 0), standalone.get(t, b));
            }
        }
        assert!(feat.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn silence_gives_zero_features() {
        let clip = AudioClip::new(vec![0.0f64; 10_000], SAMPLE_RATE).unwrap();
        let feat = build_features(&clip).unwrap();
        assert!(feat.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_clip_rejected() {
        let clip = AudioClip::new(vec![0.0f64; 4000], SAMPLE_RATE).unwrap();
        assert!(build_features(&clip).is_err());
    }

    #[test]
    fn doubling_amplitude_never_decreases() {
        let clip = noise_clip(0.3, 2);
        let loud = AudioClip::new(clip.samples.iter().map(|s| 2.0 * s).collect(), SAMPLE_RATE).unwrap();
        let a = build_features(&clip).unwrap();
        let b = build_features(&loud).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| y >= x));
    }

    #[test]
    fn deterministic_bytes() {
        let clip = noise_clip(0.3, 3);
        let a = build_features(&clip).unwrap();
        let b = build_features(&clip).unwrap();
        let bits = |f: &FeatureTensor<f64>| f.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn click_lands_on_its_frame() {
        for &time in &[0.105, 0.25, 0.4021] {
            let mut samples = vec![0.0f64; 22_050];
            let start = (time * f64::from(SAMPLE_RATE)).round() as usize;
            for (i, s) in samples[start..start + 64].iter_mut().enumerate() {
                *s = if i % 2 == 0 { 0.8 } else { -0.8 } * (-(i as f64) / 10.0).exp();
            }
            let clip = AudioClip::new(samples, SAMPLE_RATE).unwrap();
            let feat = build_features(&clip).unwrap();
            let energy: Vec<f64> = (0..feat.frames)
                .map(|t| (0..80).map(|b| feat.get(t, b, 0)).sum())
                .collect();
            let peak = energy.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let expected = (time / HOP_SECONDS).round() as i64;
            assert!((peak as i64 - expected).abs() <= 1, "peak {peak} expected {expected}");
        }
    }

    fn random_features(frames: usize, seed: u64) -> FeatureTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureTensor {
            frames,
            n_mels: 80,
            hop: HOP_SECONDS,
            values: (0..frames * 240).map(|_| rng.gen()).collect(),
        }
    }

    #[test]
    fn chunk_rows_and_padding() {
        let feat = random_features(20, 4);
        let c = extract_chunk(&feat, 7).unwrap();
        assert_eq!(c.values, feat.values[..15 * 240].to_vec());
        let c0 = extract_chunk(&feat, 0).unwrap();
        assert!(c0.values[..7 * 240].iter().all(|&v| v == 0.0));
        assert_eq!(&c0.values[7 * 240..], &feat.values[..8 * 240]);
        let last = extract_chunk(&feat, 19).unwrap();
        assert!(last.values[8 * 240..].iter().all(|&v| v == 0.0));
        assert!(extract_chunk(&feat, 20).is_err());
        for t in 0..20 {
            let c = extract_chunk(&feat, t).unwrap();
            assert_eq!(&c.values[CHUNK_CENTER * 240..(CHUNK_CENTER + 1) * 240], feat.frame(t));
            assert_eq!(c.center_frame, t);
        }
    }

    #[test]
    fn other_sample_rates_are_resampled() {
        let n = 24_000;
        let samples: Vec<f64> = (0..n).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
        let clip = AudioClip::new(samples, 48_000).unwrap();
        let feat = build_features(&clip).unwrap();
        assert_eq!(feat.frames, 1 + 22_050 / 441);
    }
}
