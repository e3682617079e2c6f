//! Train/evaluate plumbing shared by the command-line tool and the
//! cross-validation protocol.

use serde::{Deserialize, Serialize};

use crate::datagen::LoadedClip;
use crate::dist::Family;
use crate::error::{invalid, Result};
use crate::eval::{crossval, default_delta_grid, evaluate_fold, sweep_delta, EvalReport, FoldResult, TOLERANCE};
use crate::inference::{smooth, CdfPoint, OdfSeries, PeakPickConfig};
use crate::predictor::{train_with_progress, EpochStats, ModelConfig, Network, TrainReport, TrainingClip, Variant};
use crate::targets::onset_frames;

pub fn onset_frames_of(clip: &LoadedClip) -> Result<Vec<usize>> {
    onset_frames(&clip.annotation, clip.features.hop, clip.features.frames)
}

pub fn training_clips(clips: &[&LoadedClip], threshold: u32) -> Result<Vec<TrainingClip<f64>>> {
    clips
        .iter()
        .map(|c| TrainingClip::new(c.id.clone(), c.features.clone(), &onset_frames_of(c)?, threshold))
        .collect()
}

pub fn clip_odf(net: &Network<f64>, clip: &LoadedClip, point: CdfPoint) -> Result<OdfSeries> {
    let preds = net.predict_clip(&clip.features)?;
    OdfSeries::from_predictions(net.family(), point, &preds, clip.features.hop)
}

/// Peak-picking settings used when scoring models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    pub peak: PeakPickConfig,
    pub grid: Vec<f64>,
    /// Seconds.
    pub tolerance: f64,
    pub cdf_point: CdfPoint,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            peak: PeakPickConfig::default(),
            grid: default_delta_grid(),
            tolerance: TOLERANCE,
            cdf_point: CdfPoint::Two,
        }
    }
}

/// Raw and smoothed sweeps of `net` over `clips`.
pub fn score(net: &Network<f64>, clips: &[&LoadedClip], fold: usize, cfg: &ScoringConfig) -> Result<FoldResult> {
    let odfs = clips
        .iter()
        .map(|c| clip_odf(net, c, cfg.cdf_point))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<f64>> = clips.iter().map(|c| c.annotation.times().to_vec()).collect();
    evaluate_fold(fold, &odfs, &refs, &cfg.peak, &cfg.grid, cfg.tolerance)
}

/// Trains on `clips` and stores the best delta (raw ODF) found on the held-out
/// validation clips in the model metadata.
pub fn fit(
    clips: &[&LoadedClip],
    config: &ModelConfig,
    scoring: &ScoringConfig,
    progress: impl FnMut(&EpochStats),
) -> Result<(Network<f64>, TrainReport)> {
    let train_set = training_clips(clips, config.threshold)?;
    let (mut net, report) = train_with_progress(&train_set, config, progress)?;
    if !report.val_clips.is_empty() {
        let val: Vec<&LoadedClip> = report.val_clips.iter().map(|&i| clips[i]).collect();
        let odfs = val
            .iter()
            .map(|c| clip_odf(&net, c, scoring.cdf_point))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<Vec<f64>> = val.iter().map(|c| c.annotation.times().to_vec()).collect();
        let sweep = sweep_delta(&odfs, &refs, &scoring.peak, &scoring.grid, scoring.tolerance)?;
        net.meta.best_delta = Some(sweep.best_point().delta);
    }
    Ok((net, report))
}

/// Detected onset times for one clip.
pub fn detect(
    net: &Network<f64>,
    clip: &LoadedClip,
    peak: &PeakPickConfig,
    smoothed: bool,
    point: CdfPoint,
) -> Result<Vec<f64>> {
    let mut odf = clip_odf(net, clip, point)?;
    if smoothed {
        odf = smooth(&odf);
    }
    crate::inference::pick_peaks(&odf, peak)
}

/// The cross-validated comparison: every family and threshold, plus the
/// binary baseline, each scored raw and smoothed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Training settings; variant, family and threshold are overridden per run.
    pub model: ModelConfig,
    pub thresholds: Vec<u32>,
    pub families: Vec<Family>,
    pub include_baseline: bool,
    pub folds: usize,
    pub seed: u64,
    pub scoring: ScoringConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            thresholds: vec![5, 10, 20],
            families: vec![Family::LogLogistic, Family::Pareto],
            include_baseline: true,
            folds: 8,
            seed: 0,
            scoring: ScoringConfig::default(),
        }
    }
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::LogLogistic => "LogLogistic",
        Family::Pareto => "Pareto",
    }
}

/// One report per model configuration. `progress` receives a line per
/// finished fold.
pub fn run_protocol(
    clips: &[LoadedClip],
    cfg: &ProtocolConfig,
    mut progress: impl FnMut(&str),
) -> Result<Vec<EvalReport>> {
    if cfg.thresholds.is_empty() && !cfg.include_baseline {
        return Err(invalid("nothing to evaluate"));
    }
    let folds = crossval(clips.len(), cfg.folds, cfg.seed)?;
    let mut runs: Vec<(String, Option<u32>, ModelConfig)> = Vec::new();
    for &family in &cfg.families {
        for &threshold in &cfg.thresholds {
            runs.push((
                family_name(family).to_string(),
                Some(threshold),
                ModelConfig {
                    variant: Variant::Proposed,
                    family,
                    threshold,
                    ..cfg.model.clone()
                },
            ));
        }
    }
    if cfg.include_baseline {
        runs.push((
            "Baseline".to_string(),
            None,
            ModelConfig {
                variant: Variant::Baseline,
                ..cfg.model.clone()
            },
        ));
    }
    let mut reports = Vec::with_capacity(runs.len());
    for (model, threshold, mc) in runs {
        let mut results = Vec::with_capacity(cfg.folds);
        for fold in 0..cfg.folds {
            let train: Vec<&LoadedClip> = clips
                .iter()
                .zip(&folds)
                .filter(|(_, f)| **f != fold)
                .map(|(c, _)| c)
                .collect();
            let test: Vec<&LoadedClip> = clips
                .iter()
                .zip(&folds)
                .filter(|(_, f)| **f == fold)
                .map(|(c, _)| c)
                .collect();
            let (net, _) = fit(&train, &mc, &cfg.scoring, |_| {})?;
            let mut result = score(&net, &test, fold, &cfg.scoring)?;
            result.fold = fold;
            progress(&format!(
                "{model} threshold {} fold {fold}: F1 {:.4} F1(S) {:.4}",
                threshold.map_or("-".into(), |t| t.to_string()),
                result.raw.best_point().prf.f1,
                result.smoothed.best_point().prf.f1
            ));
            results.push(result);
        }
        reports.push(EvalReport {
            model,
            threshold,
            folds: results,
        });
    }
    Ok(reports)
}
