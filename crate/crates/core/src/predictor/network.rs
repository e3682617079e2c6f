use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{DistParams, Family};
use crate::dsp::{FeatureTensor, CHUNK_FRAMES, N_CHANNELS, N_MELS};
use crate::error::{invalid, Error, Result};
use crate::predictor::{ModelConfig, Variant, HEAD_INPUTS, TRUNK_OUTPUTS};
use crate::scalar::Scalar;
use crate::targets::TargetFrame;
use crate::tensor::layers::{sigmoid, softplus};
use crate::tensor::{checkpoint, ActivationKind, LayerSpec, Mode, ParamStore, Sequential, Tape, Tensor};

const ALPHA_MIN: f64 = 1e-6;
const BETA_MIN: f64 = 1e-6;
/// Chunks per inference batch.
const INFER_BATCH: usize = 256;

/// Training provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Epoch whose weights were kept.
    pub epoch: usize,
    pub fold: Option<usize>,
    pub config_hash: String,
    /// Peak-picking offset tuned on held-out clips, if any.
    pub best_delta: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelHeader {
    config: ModelConfig,
    trunk: Vec<LayerSpec>,
    head: Vec<LayerSpec>,
    meta: TrainingMeta,
}

/// Per-chunk output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prediction<T> {
    Survival {
        tte: DistParams<T>,
        tse: DistParams<T>,
    },
    /// Onset probability of the baseline classifier.
    Score(T),
}

/// Learnable weights plus the layer layout of one model variant.
#[derive(Clone, Debug)]
pub struct Network<T> {
    config: ModelConfig,
    trunk: Sequential,
    head: Sequential,
    store: ParamStore<T>,
    pub meta: TrainingMeta,
}

pub fn trunk_specs(dropout: f64) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        BatchNorm {
            features: N_MELS * N_CHANNELS,
        },
        Conv2d {
            kh: 7,
            kw: 3,
            in_channels: N_CHANNELS,
            out_channels: 10,
        },
        Activation(ActivationKind::Relu),
        MaxPool { ph: 1, pw: 3 },
        Conv2d {
            kh: 3,
            kw: 3,
            in_channels: 10,
            out_channels: 20,
        },
        Activation(ActivationKind::Relu),
        MaxPool { ph: 1, pw: 3 },
        Flatten,
        Dropout { rate: dropout },
        Dense {
            inputs: 7 * 8 * 20,
            units: 256,
        },
        Activation(ActivationKind::Relu),
        Dropout { rate: dropout },
        Dense {
            inputs: 256,
            units: TRUNK_OUTPUTS,
        },
        Activation(ActivationKind::Tanh),
        BatchNorm {
            features: TRUNK_OUTPUTS,
        },
    ]
}

pub fn head_specs(variant: Variant, dropout: f64) -> Vec<LayerSpec> {
    use LayerSpec::*;
    match variant {
        Variant::Proposed => vec![
            Dropout { rate: dropout },
            Dense {
                inputs: HEAD_INPUTS,
                units: 2,
            },
        ],
        Variant::Baseline => vec![
            Dropout { rate: dropout },
            Dense {
                inputs: TRUNK_OUTPUTS,
                units: 2,
            },
            Activation(ActivationKind::Tanh),
            Dropout { rate: dropout },
            Dense { inputs: 2, units: 1 },
        ],
    }
}

/// Splits `[B, 20]` into the TTE half and the TSE half.
fn split_halves<T: Scalar>(h: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let b = h.shape()[0];
    let mut a = Vec::with_capacity(b * HEAD_INPUTS);
    let mut c = Vec::with_capacity(b * HEAD_INPUTS);
    for row in h.data().chunks_exact(TRUNK_OUTPUTS) {
        a.extend_from_slice(&row[..HEAD_INPUTS]);
        c.extend_from_slice(&row[HEAD_INPUTS..]);
    }
    Ok((
        Tensor::new(vec![b, HEAD_INPUTS], a)?,
        Tensor::new(vec![b, HEAD_INPUTS], c)?,
    ))
}

fn merge_halves<T: Scalar>(a: &Tensor<T>, c: &Tensor<T>) -> Result<Tensor<T>> {
    let b = a.shape()[0];
    let mut out = Vec::with_capacity(b * TRUNK_OUTPUTS);
    for (x, y) in a
        .data()
        .chunks_exact(HEAD_INPUTS)
        .zip(c.data().chunks_exact(HEAD_INPUTS))
    {
        out.extend_from_slice(x);
        out.extend_from_slice(y);
    }
    Tensor::new(vec![b, TRUNK_OUTPUTS], out)
}

fn bce_with_logits<T: Scalar>(z: T, y: bool) -> T {
    let target = if y { T::one() } else { T::zero() };
    z.max(T::zero()) - z * target + (-z.abs()).exp().ln_1p()
}

impl<T: Scalar> Network<T> {
    /// Fresh weights, seeded from `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let trunk = Sequential::build(&trunk_specs(config.dropout), "trunk.", &mut store, &mut rng)?;
        let head = Sequential::build(
            &head_specs(config.variant, config.dropout),
            "head.",
            &mut store,
            &mut rng,
        )?;
        Ok(Self {
            config: config.clone(),
            trunk,
            head,
            store,
            meta: TrainingMeta {
                config_hash: config.hash(),
                ..TrainingMeta::default()
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn trunk(&self) -> &Sequential {
        &self.trunk
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Sets the head bias so that the initial scale output equals `mean_time`
    /// frames. No-op for the baseline.
    pub fn init_scale_bias(&mut self, mean_time: f64) {
        if self.config.variant != Variant::Proposed || !(mean_time > 0.0) {
            return;
        }
        // inverse softplus
        let raw = if mean_time > 30.0 {
            mean_time
        } else {
            mean_time.exp_m1().ln()
        };
        if let Some(id) = self.store.id("head.1.bias") {
            self.store.value_mut(id).data_mut()[0] = T::lit(raw);
        }
    }

    /// Maps one raw head row to distribution parameters and the derivatives
    /// `(d alpha / d raw0, d beta / d raw1)`.
    fn to_params(&self, raw: &[T]) -> (DistParams<T>, T, T) {
        let sp = softplus(raw[0]);
        let (alpha, da) = if sp > T::lit(ALPHA_MIN) {
            (sp, sigmoid(raw[0]))
        } else {
            (T::lit(ALPHA_MIN), T::zero())
        };
        let gamma = T::lit(self.config.gamma);
        let s = sigmoid(raw[1]);
        let (beta, db) = if gamma * s > T::lit(BETA_MIN) {
            (gamma * s, gamma * s * (T::one() - s))
        } else {
            (T::lit(BETA_MIN), T::zero())
        };
        (DistParams::new(alpha, beta), da, db)
    }

    fn check_input(x: &Tensor<T>) -> Result<()> {
        match x.shape() {
            [_, CHUNK_FRAMES, N_MELS, N_CHANNELS] => Ok(()),
            s => Err(Error::Shape {
                op: "network input",
                left: s.to_vec(),
                right: vec![0, CHUNK_FRAMES, N_MELS, N_CHANNELS],
            }),
        }
    }

    /// Deterministic inference on a `[B, 15, 80, 3]` batch.
    pub fn predict(&self, chunks: Tensor<T>) -> Result<Vec<Prediction<T>>> {
        Self::check_input(&chunks)?;
        let h = self.trunk.infer(&self.store, chunks)?;
        match self.config.variant {
            Variant::Proposed => {
                let (a, c) = split_halves(&h)?;
                let ra = self.head.infer(&self.store, a)?;
                let rc = self.head.infer(&self.store, c)?;
                Ok(ra
                    .data()
                    .chunks_exact(2)
                    .zip(rc.data().chunks_exact(2))
                    .map(|(x, y)| Prediction::Survival {
                        tte: self.to_params(x).0,
                        tse: self.to_params(y).0,
                    })
                    .collect())
            }
            Variant::Baseline => {
                let z = self.head.infer(&self.store, h)?;
                Ok(z.data().iter().map(|v| Prediction::Score(sigmoid(*v))).collect())
            }
        }
    }

    /// One prediction per frame of a clip.
    pub fn predict_clip(&self, feat: &FeatureTensor<T>) -> Result<Vec<Prediction<T>>> {
        let per = CHUNK_FRAMES * feat.frame_len();
        let mut out = Vec::with_capacity(feat.frames);
        let mut start = 0;
        while start < feat.frames {
            let end = (start + INFER_BATCH).min(feat.frames);
            let mut buf = vec![T::zero(); (end - start) * per];
            for (i, t) in (start..end).enumerate() {
                feat.write_chunk(t, &mut buf[i * per..(i + 1) * per])?;
            }
            let x = Tensor::new(vec![end - start, CHUNK_FRAMES, feat.n_mels, N_CHANNELS], buf)?;
            out.extend(self.predict(x)?);
            start = end;
        }
        Ok(out)
    }

    fn batch_loss(&self, raw: &[&Tensor<T>], targets: &[TargetFrame]) -> Result<(T, Vec<Tensor<T>>)> {
        let b = targets.len();
        let inv_b = T::one() / T::from_usize(b).unwrap();
        if let Some(bad) = raw.iter().flat_map(|r| r.data()).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network output {bad}")));
        }
        let mut loss = T::zero();
        let grads = match self.config.variant {
            Variant::Proposed => {
                let family = self.config.family;
                let mut g_tte = Tensor::zeros(&[b, 2]);
                let mut g_tse = Tensor::zeros(&[b, 2]);
                for (i, target) in targets.iter().enumerate() {
                    for (out, grad, obs) in [(raw[0], &mut g_tte, target.tte), (raw[1], &mut g_tse, target.tse)] {
                        let (p, da_dr, db_dr) = self.to_params(&out.data()[2 * i..2 * i + 2]);
                        let (l, da, db) = family.nll_and_grad(p, obs);
                        loss += l;
                        let g = grad.data_mut();
                        g[2 * i] = da * da_dr * inv_b;
                        g[2 * i + 1] = db * db_dr * inv_b;
                    }
                }
                vec![g_tte, g_tse]
            }
            Variant::Baseline => {
                let mut g = Tensor::zeros(&[b, 1]);
                for (i, target) in targets.iter().enumerate() {
                    let onset = target.tte.observed && target.tte.time == 0;
                    let z = raw[0].data()[i];
                    loss += bce_with_logits(z, onset);
                    let y = if onset { T::one() } else { T::zero() };
                    g.data_mut()[i] = (sigmoid(z) - y) * inv_b;
                }
                vec![g]
            }
        };
        Ok((loss * inv_b, grads))
    }

    /// Mean training loss of a batch in inference mode, without gradients.
    pub fn loss(&self, chunks: Tensor<T>, targets: &[TargetFrame]) -> Result<T> {
        Self::check_input(&chunks)?;
        if chunks.shape()[0] != targets.len() {
            return Err(invalid("one target per chunk required"));
        }
        let h = self.trunk.infer(&self.store, chunks)?;
        let (loss, _) = match self.config.variant {
            Variant::Proposed => {
                let (a, c) = split_halves(&h)?;
                let ra = self.head.infer(&self.store, a)?;
                let rc = self.head.infer(&self.store, c)?;
                self.batch_loss(&[&ra, &rc], targets)?
            }
            Variant::Baseline => {
                let z = self.head.infer(&self.store, h)?;
                self.batch_loss(&[&z], targets)?
            }
        };
        Ok(loss)
    }

    /// Forward pass, mean loss, and back-propagation into the parameter
    /// gradients (accumulated, not overwritten). Returns the mean loss.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &mut self,
        chunks: Tensor<T>,
        targets: &[TargetFrame],
        mode: Mode,
        rng: &mut R,
    ) -> Result<T> {
        Self::check_input(&chunks)?;
        if chunks.shape()[0] != targets.len() {
            return Err(invalid("one target per chunk required"));
        }
        let mut trunk_tape = Tape::new();
        let h = self
            .trunk
            .forward(&mut self.store, chunks, mode, rng, &mut trunk_tape)?;
        let dh = match self.config.variant {
            Variant::Proposed => {
                let (a, c) = split_halves(&h)?;
                let mut tape_a = Tape::new();
                let mut tape_c = Tape::new();
                let ra = self.head.forward(&mut self.store, a, mode, rng, &mut tape_a)?;
                let rc = self.head.forward(&mut self.store, c, mode, rng, &mut tape_c)?;
                let (loss, mut grads) = self.batch_loss(&[&ra, &rc], targets)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss {loss}")));
                }
                let gc = grads.pop().unwrap();
                let ga = grads.pop().unwrap();
                // both applications of the shared block add into the same gradients
                let dc = self.head.backward(&mut self.store, &mut tape_c, gc)?;
                let da = self.head.backward(&mut self.store, &mut tape_a, ga)?;
                (loss, merge_halves(&da, &dc)?)
            }
            Variant::Baseline => {
                let mut tape = Tape::new();
                let z = self.head.forward(&mut self.store, h, mode, rng, &mut tape)?;
                let (loss, mut grads) = self.batch_loss(&[&z], targets)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss {loss}")));
                }
                (
                    loss,
                    self.head.backward(&mut self.store, &mut tape, grads.pop().unwrap())?,
                )
            }
        };
        let (loss, dh) = dh;
        self.trunk.backward(&mut self.store, &mut trunk_tape, dh)?;
        Ok(loss)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            trunk: self.trunk.clone(),
            head: self.head.clone(),
            store: self.store.cast(),
            meta: self.meta.clone(),
        }
    }

    pub(crate) fn restore_params(&mut self, snapshot: &ParamStore<T>) {
        self.store = snapshot.clone();
    }

    fn header(&self) -> ModelHeader {
        ModelHeader {
            config: self.config.clone(),
            trunk: self.trunk.specs(),
            head: self.head.specs(),
            meta: self.meta.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode(&self.header(), &self.store)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, store): (ModelHeader, ParamStore<T>) = checkpoint::decode(bytes)?;
        header.config.validate()?;
        if header.trunk != trunk_specs(header.config.dropout)
            || header.head != head_specs(header.config.variant, header.config.dropout)
        {
            return Err(Error::Format(
                "checkpoint layer layout does not match its variant".into(),
            ));
        }
        let trunk = Sequential::bind(&header.trunk, "trunk.", &store)?;
        let head = Sequential::bind(&header.head, "head.", &store)?;
        Ok(Self {
            config: header.config,
            trunk,
            head,
            store,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(crate::error::io_err(path))?;
        Self::from_bytes(&bytes)
    }
}
