use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{FeatureTensor, CHUNK_FRAMES, N_CHANNELS, N_MELS};
use crate::error::{invalid, Error, Result};
use crate::predictor::{ModelConfig, Network};
use crate::scalar::Scalar;
use crate::targets::{compute_targets, TargetFrame};
use crate::tensor::{momentum_at_epoch, sgd_step, Mode, Tensor};

/// One annotated clip ready for training.
#[derive(Clone, Debug)]
pub struct TrainingClip<T> {
    pub id: String,
    pub features: FeatureTensor<T>,
    pub targets: Vec<TargetFrame>,
}

impl<T: Scalar> TrainingClip<T> {
    pub fn new(
        id: impl Into<String>,
        features: FeatureTensor<T>,
        onset_frames: &[usize],
        threshold: u32,
    ) -> Result<Self> {
        if features.n_mels != N_MELS {
            return Err(invalid(format!("expected {N_MELS} mel bands, got {}", features.n_mels)));
        }
        let targets = compute_targets(onset_frames, features.frames, Some(threshold))?;
        Ok(Self {
            id: id.into(),
            features,
            targets,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub momentum: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    /// Indices into the clip slice passed to [`train`].
    pub train_clips: Vec<usize>,
    pub val_clips: Vec<usize>,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss,momentum`; the validation column is empty
    /// when nothing was held out.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,momentum\n");
        for s in &self.trace {
            let val = s.val_loss.map(|v| format!("{v:.8}")).unwrap_or_default();
            out.push_str(&format!("{},{:.8},{},{:.4}\n", s.epoch, s.train_loss, val, s.momentum));
        }
        out
    }
}

type FrameRef = (u32, u32);

fn assemble<T: Scalar>(clips: &[TrainingClip<T>], frames: &[FrameRef]) -> Result<(Tensor<T>, Vec<TargetFrame>)> {
    let per = CHUNK_FRAMES * N_MELS * N_CHANNELS;
    let mut buf = vec![T::zero(); frames.len() * per];
    let mut targets = Vec::with_capacity(frames.len());
    for (i, &(c, t)) in frames.iter().enumerate() {
        let clip = &clips[c as usize];
        clip.features
            .write_chunk(t as usize, &mut buf[i * per..(i + 1) * per])?;
        targets.push(clip.targets[t as usize]);
    }
    Ok((
        Tensor::new(vec![frames.len(), CHUNK_FRAMES, N_MELS, N_CHANNELS], buf)?,
        targets,
    ))
}

fn frames_of<T>(clips: &[TrainingClip<T>], which: &[usize]) -> Vec<FrameRef> {
    which
        .iter()
        .flat_map(|&c| (0..clips[c].targets.len() as u32).map(move |t| (c as u32, t)))
        .collect()
}

fn mean_loss<T: Scalar>(net: &Network<T>, clips: &[TrainingClip<T>], frames: &[FrameRef], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in frames.chunks(batch) {
        let (x, targets) = assemble(clips, chunk)?;
        total += net.loss(x, &targets)?.as_f64() * chunk.len() as f64;
    }
    Ok(total / frames.len() as f64)
}

/// Trains a fresh network; see [`train_with_progress`].
pub fn train<T: Scalar>(clips: &[TrainingClip<T>], config: &ModelConfig) -> Result<(Network<T>, TrainReport)> {
    train_with_progress(clips, config, |_| {})
}

/// Minibatch SGD with the momentum schedule, keeping the weights of the epoch
/// with the lowest validation loss (or the last epoch when no clips are held
/// out). All randomness derives from `config.seed`.
pub fn train_with_progress<T: Scalar>(
    clips: &[TrainingClip<T>],
    config: &ModelConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<(Network<T>, TrainReport)> {
    config.validate()?;
    if clips.is_empty() {
        return Err(invalid("no training clips"));
    }
    for clip in clips {
        if clip.features.n_mels != N_MELS || clip.targets.len() != clip.features.frames {
            return Err(invalid(format!(
                "clip {} has inconsistent features and targets",
                clip.id
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1e);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if clips.len() >= 2 && config.val_fraction > 0.0 {
        ((clips.len() as f64 * config.val_fraction).round() as usize).clamp(1, clips.len() - 1)
    } else {
        0
    };
    let mut val_clips = order[..n_val].to_vec();
    let mut train_clips = order[n_val..].to_vec();
    val_clips.sort_unstable();
    train_clips.sort_unstable();

    let train_frames = frames_of(clips, &train_clips);
    if train_frames.len() < 2 {
        return Err(invalid("fewer than two training frames"));
    }
    let mut val_frames = frames_of(clips, &val_clips);
    if let Some(cap) = config.val_frames {
        if val_frames.len() > cap {
            val_frames.shuffle(&mut rng);
            val_frames.truncate(cap);
        }
    }

    let mut net = Network::<T>::build(config)?;
    let mean_time = {
        let sum: f64 = train_frames
            .iter()
            .map(|&(c, t)| {
                let f = clips[c as usize].targets[t as usize];
                f64::from(f.tte.time) + f64::from(f.tse.time)
            })
            .sum();
        sum / (2 * train_frames.len()) as f64
    };
    net.init_scale_bias(mean_time.max(0.5));

    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, _)> = None;
    let mut pool = train_frames.clone();
    for epoch in 1..=config.epochs {
        let momentum = momentum_at_epoch(epoch);
        pool.shuffle(&mut rng);
        let n = config.samples_per_epoch.map_or(pool.len(), |cap| cap.min(pool.len()));
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in pool[..n].chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // batchnorm needs two samples
            }
            let (x, targets) = assemble(clips, chunk)?;
            let loss = net
                .loss_and_grad(x, &targets, Mode::Train, &mut rng)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {msg}")),
                    other => other,
                })?;
            sgd_step(net.store_mut(), config.lr, momentum)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            total += loss.as_f64() * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_loss = if val_frames.is_empty() {
            None
        } else {
            Some(mean_loss(&net, clips, &val_frames, config.batch_size)?)
        };
        let stats = EpochStats {
            epoch,
            train_loss: total / seen.max(1) as f64,
            val_loss,
            momentum,
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {}",
            stats.train_loss,
            val_loss.map_or("-".into(), |v| format!("{v:.5}"))
        );
        progress(&stats);
        trace.push(stats);
        let score = val_loss.unwrap_or(f64::NEG_INFINITY);
        if score.is_finite() && best.as_ref().map_or(true, |(s, _, _)| score < *s) {
            best = Some((score, epoch, net.store().clone()));
        }
    }

    let best_epoch = match best {
        Some((_, epoch, store)) => {
            net.restore_params(&store);
            epoch
        }
        None => config.epochs,
    };
    net.meta.epoch = best_epoch;
    Ok((
        net,
        TrainReport {
            trace,
            best_epoch,
            train_clips,
            val_clips,
        },
    ))
}
