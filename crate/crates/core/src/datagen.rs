//! Synthetic onset audio and on-disk datasets of audio/annotation pairs.
//!
//! Layout: `audio/<id>.wav`, `annotations/<id>.onsets.txt`, and an optional
//! `manifest.json`.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, cache, wav, AudioClip, FeatureTensor, SAMPLE_RATE};
use crate::error::{invalid, io_err, Error, Result};
use crate::io::{format_onset_list, parse_onset_list, write_atomic};
use crate::targets::OnsetAnnotation;

pub const AUDIO_DIR: &str = "audio";
pub const ANNOTATION_DIR: &str = "annotations";
pub const ANNOTATION_SUFFIX: &str = ".onsets.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

const CLICK_SECONDS: f64 = 0.005;
const TONE_SECONDS: f64 = 0.100;
const BURST_SECONDS: f64 = 0.050;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// 5 ms decaying white noise.
    Click,
    /// 100 ms decaying sinusoid, 110 to 1760 Hz.
    Tone,
    /// 50 ms decaying white noise.
    NoiseBurst,
}

impl std::str::FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "click" => Ok(EventKind::Click),
            "tone" => Ok(EventKind::Tone),
            "noise_burst" | "noise-burst" | "burst" => Ok(EventKind::NoiseBurst),
            _ => Err(invalid(format!("unknown event kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Seconds.
    pub duration: f64,
    /// Events per second.
    pub density: f64,
    /// Minimum inter-onset gap in seconds.
    pub min_gap: f64,
    pub kind: EventKind,
    /// Ratio of event power to background noise power over the clip.
    pub snr_db: f64,
    pub seed: u64,
    pub sample_rate: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            duration: 30.0,
            density: 1.0,
            min_gap: 0.05,
            kind: EventKind::Click,
            snr_db: 20.0,
            seed: 0,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl SynthSpec {
    fn n_samples(&self) -> usize {
        (self.duration * f64::from(self.sample_rate)).round() as usize
    }

    pub fn n_events(&self) -> usize {
        (self.density * self.duration).round() as usize
    }

    fn gap_samples(&self) -> usize {
        (self.min_gap * f64::from(self.sample_rate)).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration must be positive"));
        }
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return Err(invalid("density must be non-negative"));
        }
        if !(self.min_gap > 0.0 && self.min_gap.is_finite()) {
            return Err(invalid("minimum gap must be positive"));
        }
        if !self.snr_db.is_finite() {
            return Err(invalid("SNR must be finite"));
        }
        if self.sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        let n = self.n_events();
        if n > 0 && (n - 1) * self.gap_samples() >= self.n_samples() {
            return Err(invalid(format!(
                "infeasible: {n} events {}s apart do not fit in {}s",
                self.min_gap, self.duration
            )));
        }
        Ok(())
    }
}

/// Onset sample positions, uniform over all placements that honour the gap.
fn draw_onsets(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = spec.n_events();
    if n == 0 {
        return Vec::new();
    }
    let gap = spec.gap_samples();
    // n free positions in the room left after reserving the gaps, then spread
    let room = spec.n_samples() - 1 - (n - 1) * gap;
    let mut free: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=room)).collect();
    free.sort_unstable();
    free.into_iter().enumerate().map(|(i, p)| p + i * gap).collect()
}

fn render_event(kind: EventKind, out: &mut [f64], start: usize, sr: f64, rng: &mut ChaCha8Rng) {
    let (len, tau) = match kind {
        EventKind::Click => (CLICK_SECONDS, CLICK_SECONDS / 5.0),
        EventKind::Tone => (TONE_SECONDS, TONE_SECONDS / 5.0),
        EventKind::NoiseBurst => (BURST_SECONDS, BURST_SECONDS / 5.0),
    };
    let n = ((len * sr).round() as usize).min(out.len() - start);
    let freq = 110.0 * 16f64.powf(rng.gen::<f64>());
    for i in 0..n {
        let env = (-(i as f64) / (tau * sr)).exp();
        let carrier = match kind {
            EventKind::Tone => (2.0 * std::f64::consts::PI * freq * i as f64 / sr).cos(),
            _ => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        out[start + i] += env * carrier;
    }
}

/// Renders one clip and its exact onset times (`sample / sample_rate`).
pub fn synthesize(spec: &SynthSpec) -> Result<(AudioClip<f64>, OnsetAnnotation)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let onsets = draw_onsets(spec, &mut rng);
    let sr = f64::from(spec.sample_rate);
    let mut samples = vec![0.0; spec.n_samples()];
    for &p in &onsets {
        render_event(spec.kind, &mut samples, p, sr, &mut rng);
    }
    if !onsets.is_empty() {
        let power = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
        let sigma = (power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
        for x in samples.iter_mut() {
            *x += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.99 {
        let g = 0.99 / peak;
        samples.iter_mut().for_each(|x| *x *= g);
    }
    let times = onsets.iter().map(|&p| p as f64 / sr).collect();
    Ok((AudioClip::new(samples, spec.sample_rate)?, OnsetAnnotation::new(times)?))
}

/// Seed of clip `index` in a dataset generated from `seed`.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index as u64)
        .rotate_left(17)
        ^ 0xa076_1d64_78bd_642f
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the dataset root.
    pub audio: PathBuf,
    pub annotation: PathBuf,
    #[serde(default)]
    pub fold: Option<usize>,
    #[serde(default)]
    pub features: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut audio = HashSet::new();
        for e in &self.entries {
            if !ids.insert(&e.id) {
                return Err(invalid(format!("duplicate clip id {:?}", e.id)));
            }
            if !audio.insert(&e.audio) {
                return Err(invalid(format!("audio file {} listed twice", e.audio.display())));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Writes `n_clips` synthetic clips under `root` and returns the manifest
/// (also saved as `manifest.json`). Clip `i` uses `clip_seed(spec.seed, i)`.
pub fn write_synthetic_dataset(root: &Path, spec: &SynthSpec, n_clips: usize) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut entries = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let id = format!("synth_{i:04}");
        let clip_spec = SynthSpec {
            seed: clip_seed(spec.seed, i),
            ..spec.clone()
        };
        let (audio, ann) = synthesize(&clip_spec)?;
        let audio_rel = Path::new(AUDIO_DIR).join(format!("{id}.wav"));
        let ann_rel = Path::new(ANNOTATION_DIR).join(format!("{id}{ANNOTATION_SUFFIX}"));
        wav::write_wav_f32(&root.join(&audio_rel), &audio)?;
        write_atomic(&root.join(&ann_rel), format_onset_list(ann.times()).as_bytes())?;
        entries.push(ManifestEntry {
            id,
            audio: audio_rel,
            annotation: ann_rel,
            fold: None,
            features: None,
        });
    }
    let manifest = DatasetManifest { entries };
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Result of scanning a directory.
#[derive(Clone, Debug)]
pub struct ScannedDataset {
    pub manifest: DatasetManifest,
    /// Files without a partner, relative to the root.
    pub unpaired: Vec<PathBuf>,
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn annotation_stem(name: &str) -> Option<&str> {
    [ANNOTATION_SUFFIX, ".onsets", ".txt"]
        .iter()
        .find_map(|suffix| name.strip_suffix(suffix))
}

/// Pairs `audio/<stem>.wav` with `annotations/<stem>.onsets.txt` (also
/// `.onsets` or `.txt`). Without those subdirectories the root itself is
/// scanned. A `manifest.json` at the root takes precedence over scanning.
pub fn load_dataset(root: &Path) -> Result<ScannedDataset> {
    if !root.is_dir() {
        return Err(Error::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        });
    }
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.is_file() {
        let manifest = DatasetManifest::load(&manifest_path)?;
        if manifest.is_empty() {
            return Err(Error::EmptyDataset {
                root: root.to_path_buf(),
                listing: "manifest.json lists no clips".into(),
            });
        }
        return Ok(ScannedDataset {
            manifest,
            unpaired: Vec::new(),
        });
    }
    let pick = |sub: &str| {
        let d = root.join(sub);
        if d.is_dir() {
            d
        } else {
            root.to_path_buf()
        }
    };
    let audio_dir = pick(AUDIO_DIR);
    let ann_dir = pick(ANNOTATION_DIR);
    let audio_files = list_files(&audio_dir)?;
    let ann_files = list_files(&ann_dir)?;
    let rel = |p: &Path| p.strip_prefix(root).unwrap_or(p).to_path_buf();

    let mut annotations: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut unpaired = Vec::new();
    for p in &ann_files {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        match annotation_stem(name) {
            Some(stem) if !annotations.contains_key(stem) => {
                annotations.insert(stem.to_string(), p.clone());
            }
            Some(_) => unpaired.push(rel(p)),
            None => {}
        }
    }
    let mut entries = Vec::new();
    for p in &audio_files {
        if p.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
            != Some("wav")
        {
            continue;
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        match annotations.remove(&stem) {
            Some(a) => entries.push(ManifestEntry {
                id: stem,
                audio: rel(p),
                annotation: rel(&a),
                fold: None,
                features: None,
            }),
            None => unpaired.push(rel(p)),
        }
    }
    unpaired.extend(annotations.into_values().map(|p| rel(&p)));
    unpaired.sort();
    for p in &unpaired {
        log::warn!("skipping unpaired file {}", p.display());
    }
    if entries.is_empty() {
        let mut listing = format!(
            "found 0 audio/annotation pairs ({} audio files in {}, {} annotation files in {})",
            audio_files.len(),
            audio_dir.display(),
            ann_files.len(),
            ann_dir.display()
        );
        for p in &unpaired {
            listing.push_str(&format!("\n  unpaired: {}", p.display()));
        }
        return Err(Error::EmptyDataset {
            root: root.to_path_buf(),
            listing,
        });
    }
    let manifest = DatasetManifest { entries };
    manifest.validate()?;
    Ok(ScannedDataset { manifest, unpaired })
}

/// Reads an onset list, sorting it if needed. The flag reports whether the
/// file was out of order.
pub fn read_annotation(path: &Path) -> Result<(OnsetAnnotation, bool)> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let times = parse_onset_list(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let (ann, reordered) = OnsetAnnotation::from_unsorted(times)?;
    if reordered {
        log::warn!("{}: onset times were not sorted; sorted on load", path.display());
    }
    Ok((ann, reordered))
}

/// An entry's audio features and annotation.
#[derive(Clone, Debug)]
pub struct LoadedClip {
    pub id: String,
    pub features: FeatureTensor<f64>,
    pub annotation: OnsetAnnotation,
    pub warnings: Vec<String>,
}

/// Loads one entry, reading cached features when `cache_dir` holds a file
/// computed from identical audio and writing one otherwise.
pub fn load_clip(root: &Path, entry: &ManifestEntry, cache_dir: Option<&Path>) -> Result<LoadedClip> {
    let audio = wav::read_wav(&root.join(&entry.audio))?;
    let ann_path = root.join(&entry.annotation);
    let (annotation, reordered) = read_annotation(&ann_path)?;
    let mut warnings = Vec::new();
    if reordered {
        warnings.push(format!(
            "{}: onset times were not sorted; sorted on load",
            ann_path.display()
        ));
    }
    let cache_path = entry
        .features
        .as_ref()
        .map(|p| root.join(p))
        .or_else(|| cache_dir.map(|d| d.join(format!("{}.feat", entry.id))));
    let features = match cache_path {
        Some(path) => {
            let hash = cache::source_hash(&audio);
            match cache::load_if_fresh(&path, &hash)? {
                Some(f) => f,
                None => {
                    let f = dsp::build_features(&audio)?;
                    cache::save(&path, &f, &hash)?;
                    f
                }
            }
        }
        None => dsp::build_features(&audio)?,
    };
    Ok(LoadedClip {
        id: entry.id.clone(),
        features,
        annotation,
        warnings,
    })
}

pub fn load_clips(root: &Path, manifest: &DatasetManifest, cache_dir: Option<&Path>) -> Result<Vec<LoadedClip>> {
    manifest.entries.iter().map(|e| load_clip(root, e, cache_dir)).collect()
}
