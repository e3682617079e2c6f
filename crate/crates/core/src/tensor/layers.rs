use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::{self, BatchNormCache, ConvCols, BN_MOMENTUM};
use crate::tensor::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    /// `gamma * sigmoid(x)`
    ScaledSigmoid {
        gamma: f64,
    },
}

impl ActivationKind {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            ActivationKind::Relu => x.max(T::zero()),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Softplus => softplus(x),
            ActivationKind::ScaledSigmoid { gamma } => T::lit(gamma) * sigmoid(x),
        }
    }

    /// Derivative at input `x` whose activation is `y`.
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            ActivationKind::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ActivationKind::Tanh => T::one() - y * y,
            ActivationKind::Sigmoid => y * (T::one() - y),
            ActivationKind::Softplus => sigmoid(x),
            ActivationKind::ScaledSigmoid { gamma } => {
                let s = sigmoid(x);
                T::lit(gamma) * s * (T::one() - s)
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Declarative description of one layer; serialized into checkpoint headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        kh: usize,
        kw: usize,
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool {
        ph: usize,
        pw: usize,
    },
    Dense {
        inputs: usize,
        units: usize,
    },
    /// Normalizes each of the trailing `features` values of a sample; all
    /// other axes (batch and leading spatial axes) are pooled.
    BatchNorm {
        features: usize,
    },
    Dropout {
        rate: f64,
    },
    Activation(ActivationKind),
    Flatten,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Conv2d {
                kh,
                kw,
                in_channels,
                out_channels,
            } => kh > 0 && kw > 0 && in_channels > 0 && out_channels > 0,
            LayerSpec::MaxPool { ph, pw } => ph > 0 && pw > 0,
            LayerSpec::Dense { inputs, units } => inputs > 0 && units > 0,
            LayerSpec::BatchNorm { features } => features > 0,
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate),
            LayerSpec::Activation(ActivationKind::ScaledSigmoid { gamma }) => gamma > 0.0,
            LayerSpec::Activation(_) | LayerSpec::Flatten => true,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid layer hyperparameters: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Weight initialization for conv/dense layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, for layers feeding a ReLU.
    FanIn,
    /// `U(-sqrt(6/(fan_in+fan_out)), ..)`, for tanh and output layers.
    Xavier,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub spec: LayerSpec,
    params: Vec<ParamId>,
}

impl Layer {
    /// Registers the layer's parameters under `name`.
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        spec: LayerSpec,
        name: &str,
        init: Init,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let params = match spec {
            LayerSpec::Conv2d {
                kh,
                kw,
                in_channels,
                out_channels,
            } => {
                let fan_in = kh * kw * in_channels;
                let fan_out = kh * kw * out_channels;
                let w = init_uniform(&[kh, kw, in_channels, out_channels], fan_in, fan_out, init, rng);
                vec![
                    store.add(format!("{name}.kernel"), w, true)?,
                    store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true)?,
                ]
            }
            LayerSpec::Dense { inputs, units } => {
                let w = init_uniform(&[inputs, units], inputs, units, init, rng);
                vec![
                    store.add(format!("{name}.weight"), w, true)?,
                    store.add(format!("{name}.bias"), Tensor::zeros(&[units]), true)?,
                ]
            }
            LayerSpec::BatchNorm { features } => vec![
                store.add(format!("{name}.scale"), Tensor::filled(&[features], T::one()), true)?,
                store.add(format!("{name}.shift"), Tensor::zeros(&[features]), true)?,
                store.add(format!("{name}.running_mean"), Tensor::zeros(&[features]), false)?,
                store.add(
                    format!("{name}.running_var"),
                    Tensor::filled(&[features], T::one()),
                    false,
                )?,
            ],
            _ => Vec::new(),
        };
        Ok(Self { spec, params })
    }

    /// Re-binds a layer to parameters already present in `store` (checkpoint load).
    pub fn bind<T: Scalar>(spec: LayerSpec, name: &str, store: &ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        let names: &[&str] = match spec {
            LayerSpec::Conv2d { .. } => &["kernel", "bias"],
            LayerSpec::Dense { .. } => &["weight", "bias"],
            LayerSpec::BatchNorm { .. } => &["scale", "shift", "running_mean", "running_var"],
            _ => &[],
        };
        let params = names
            .iter()
            .map(|n| {
                let full = format!("{name}.{n}");
                store
                    .id(&full)
                    .ok_or_else(|| Error::Format(format!("missing parameter {full}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, params })
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.params
    }
}

fn init_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    init: Init,
    rng: &mut R,
) -> Tensor<T> {
    let limit = match init {
        Init::FanIn => (6.0 / fan_in as f64).sqrt(),
        Init::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    };
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-limit..limit)))
}

#[derive(Clone, Debug)]
enum Record<T> {
    Conv(ConvCols<T>),
    Pool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor<T>,
    },
    BatchNorm(BatchNormCache<T>),
    Dropout {
        mask: Option<Vec<T>>,
    },
    Activation {
        input: Tensor<T>,
        output: Tensor<T>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
}

/// Intermediate values recorded by a forward pass, consumed by `backward`.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    records: Vec<Record<T>>,
}

impl<T> Tape<T> {
    pub fn new() -> Self {
        Self { records: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A chain of layers sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    /// Builds every layer, picking the initializer of each conv/dense layer
    /// from the activation that follows it.
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        specs: &[LayerSpec],
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let init = match specs[i + 1..].iter().find_map(|s| match s {
                LayerSpec::Activation(a) => Some(*a),
                LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } => Some(ActivationKind::Tanh),
                _ => None,
            }) {
                Some(ActivationKind::Relu) => Init::FanIn,
                _ => Init::Xavier,
            };
            layers.push(Layer::build(spec.clone(), &format!("{prefix}{i}"), init, store, rng)?);
        }
        Ok(Self { layers })
    }

    pub fn bind<T: Scalar>(specs: &[LayerSpec], prefix: &str, store: &ParamStore<T>) -> Result<Self> {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::bind(s.clone(), &format!("{prefix}{i}"), store))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Forward pass recording into `tape`. Train mode updates batchnorm
    /// running statistics in `store` and samples dropout masks from `rng`.
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        input: Tensor<T>,
        mode: Mode,
        rng: &mut R,
        tape: &mut Tape<T>,
    ) -> Result<Tensor<T>> {
        tape.records.clear();
        let mut x = input;
        for layer in &self.layers {
            x = self.step(layer, store, x, mode, rng, Some(tape))?;
        }
        Ok(x)
    }

    /// Inference-mode forward pass without recording; `store` is not modified.
    pub fn infer<T: Scalar>(&self, store: &ParamStore<T>, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input;
        for layer in &self.layers {
            x = infer_layer(layer, store, x)?;
        }
        Ok(x)
    }

    fn step<T: Scalar, R: Rng + ?Sized>(
        &self,
        layer: &Layer,
        store: &mut ParamStore<T>,
        x: Tensor<T>,
        mode: Mode,
        rng: &mut R,
        tape: Option<&mut Tape<T>>,
    ) -> Result<Tensor<T>> {
        let p = &layer.params;
        let (y, record) = match layer.spec {
            LayerSpec::Conv2d { .. } => {
                let (y, cols) = ops::conv2d_forward_cols(&x, store.value(p[0]), store.value(p[1]))?;
                (y, Record::Conv(cols))
            }
            LayerSpec::MaxPool { ph, pw } => {
                let (y, argmax) = ops::maxpool_forward_idx(&x, ph, pw)?;
                (
                    y,
                    Record::Pool {
                        argmax,
                        input_shape: x.shape().to_vec(),
                    },
                )
            }
            LayerSpec::Dense { inputs, .. } => {
                let x = as_matrix(x, inputs)?;
                let y = ops::dense_forward(&x, store.value(p[0]), store.value(p[1]))?;
                (y, Record::Dense { input: x })
            }
            LayerSpec::BatchNorm { features } => match mode {
                Mode::Train => {
                    let (y, cache, mean, var) =
                        ops::batchnorm_train(&x, features, store.value(p[0]).data(), store.value(p[1]).data())?;
                    let keep = T::lit(BN_MOMENTUM);
                    let blend = T::one() - keep;
                    for (r, m) in store.value_mut(p[2]).data_mut().iter_mut().zip(&mean) {
                        *r = keep * *r + blend * *m;
                    }
                    for (r, v) in store.value_mut(p[3]).data_mut().iter_mut().zip(&var) {
                        *r = keep * *r + blend * *v;
                    }
                    (y, Record::BatchNorm(cache))
                }
                Mode::Infer => {
                    let (y, cache) = ops::batchnorm_infer(
                        &x,
                        features,
                        store.value(p[0]).data(),
                        store.value(p[1]).data(),
                        store.value(p[2]).data(),
                        store.value(p[3]).data(),
                    )?;
                    (y, Record::BatchNorm(cache))
                }
            },
            LayerSpec::Dropout { rate } => {
                if mode == Mode::Train && rate > 0.0 {
                    let (y, mask) = ops::dropout_train(&x, rate, rng)?;
                    (y, Record::Dropout { mask: Some(mask) })
                } else {
                    (x, Record::Dropout { mask: None })
                }
            }
            LayerSpec::Activation(kind) => {
                let y = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| kind.apply(*v)).collect())?;
                if tape.is_none() {
                    return Ok(y);
                }
                (y.clone(), Record::Activation { input: x, output: y })
            }
            LayerSpec::Flatten => {
                let shape = x.shape().to_vec();
                let b = shape[0];
                let y = x.reshape(&[b, shape[1..].iter().product()])?;
                (y, Record::Flatten { input_shape: shape })
            }
        };
        if let Some(tape) = tape {
            tape.records.push(record);
        }
        Ok(y)
    }

    /// Back-propagates `grad_out` through the recorded pass, accumulating
    /// parameter gradients into `store`. Returns the gradient with respect to
    /// the input. The tape is consumed.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        tape: &mut Tape<T>,
        grad_out: Tensor<T>,
    ) -> Result<Tensor<T>> {
        if tape.records.len() != self.layers.len() {
            return Err(Error::NoForward);
        }
        let mut g = grad_out;
        for layer in self.layers.iter().rev() {
            let record = tape.records.pop().ok_or(Error::NoForward)?;
            let p = &layer.params;
            g = match (&layer.spec, record) {
                (LayerSpec::Conv2d { .. }, Record::Conv(cols)) => {
                    let (dx, dk, db) = ops::conv2d_backward(&cols, store.value(p[0]), &g)?;
                    store.accumulate(p[0], &dk);
                    store.accumulate(p[1], &db);
                    dx
                }
                (LayerSpec::MaxPool { .. }, Record::Pool { argmax, input_shape }) => {
                    ops::maxpool_backward(&argmax, &input_shape, &g)
                }
                (LayerSpec::Dense { .. }, Record::Dense { input }) => {
                    let (dx, dw, db) = ops::dense_backward(&input, store.value(p[0]), &g)?;
                    store.accumulate(p[0], &dw);
                    store.accumulate(p[1], &db);
                    dx
                }
                (LayerSpec::BatchNorm { features }, Record::BatchNorm(cache)) => {
                    let (dx, ds, dh) = ops::batchnorm_backward(&cache, *features, store.value(p[0]).data(), &g)?;
                    store.accumulate(p[0], &ds);
                    store.accumulate(p[1], &dh);
                    dx
                }
                (LayerSpec::Dropout { .. }, Record::Dropout { mask }) => match mask {
                    Some(mask) => {
                        let mut g = g;
                        g.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
                        g
                    }
                    None => g,
                },
                (LayerSpec::Activation(kind), Record::Activation { input, output }) => {
                    let mut g = g;
                    for ((gv, x), y) in g.data_mut().iter_mut().zip(input.data()).zip(output.data()) {
                        *gv *= kind.derivative(*x, *y);
                    }
                    g
                }
                (LayerSpec::Flatten, Record::Flatten { input_shape }) => g.reshape(&input_shape)?,
                _ => return Err(Error::NoForward),
            };
        }
        Ok(g)
    }
}

fn as_matrix<T: Scalar>(x: Tensor<T>, inputs: usize) -> Result<Tensor<T>> {
    if x.shape().len() == 2 && x.shape()[1] == inputs {
        return Ok(x);
    }
    let b = x.shape()[0];
    if x.len() != b * inputs {
        return Err(Error::Shape {
            op: "dense",
            left: x.shape().to_vec(),
            right: vec![inputs],
        });
    }
    x.reshape(&[b, inputs])
}

fn infer_layer<T: Scalar>(layer: &Layer, store: &ParamStore<T>, x: Tensor<T>) -> Result<Tensor<T>> {
    let p = &layer.params;
    match layer.spec {
        LayerSpec::Conv2d { .. } => ops::conv2d_forward(&x, store.value(p[0]), store.value(p[1])),
        LayerSpec::MaxPool { ph, pw } => ops::maxpool_forward(&x, ph, pw),
        LayerSpec::Dense { inputs, .. } => {
            let x = as_matrix(x, inputs)?;
            ops::dense_forward(&x, store.value(p[0]), store.value(p[1]))
        }
        LayerSpec::BatchNorm { features } => ops::batchnorm_infer(
            &x,
            features,
            store.value(p[0]).data(),
            store.value(p[1]).data(),
            store.value(p[2]).data(),
            store.value(p[3]).data(),
        )
        .map(|(y, _)| y),
        LayerSpec::Dropout { .. } => Ok(x),
        LayerSpec::Activation(kind) => {
            let mut x = x;
            x.data_mut().iter_mut().for_each(|v| *v = kind.apply(*v));
            Ok(x)
        }
        LayerSpec::Flatten => {
            let b = x.shape()[0];
            let n = x.len() / b;
            x.reshape(&[b, n])
        }
    }
}
