//! PCM WAV input (16/24-bit integer, 32-bit float) and 32-bit float output.

use std::io::Cursor;
use std::path::Path;

use crate::dsp::AudioClip;
use crate::error::{invalid, io_err, Result};
use crate::scalar::Scalar;

/// Reads a WAV file, mixing all channels down to mono.
pub fn read_wav(path: &Path) -> Result<AudioClip<f64>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_wav(&bytes)
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip<f64>> {
    let mut reader = hound::WavReader::new(Cursor::new(bytes))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            if !(8..=32).contains(&spec.bits_per_sample) {
                return Err(invalid(format!("unsupported bit depth {}", spec.bits_per_sample)));
            }
            let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

pub fn encode_wav_f32<T: Scalar>(clip: &AudioClip<T>) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)?;
        for s in &clip.samples {
            writer.write_sample(s.as_f64() as f32)?;
        }
        writer.finalize()?;
    }
    Ok(cursor.into_inner())
}

pub fn write_wav_f32<T: Scalar>(path: &Path, clip: &AudioClip<T>) -> Result<()> {
    crate::io::write_atomic(path, &encode_wav_f32(clip)?)
}
