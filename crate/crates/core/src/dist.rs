//! Discrete two-parameter survival distributions and the right-censored
//! negative log-likelihood.
//!
//! Each family is defined by a continuous CDF `F` on `[0, inf)`. The discrete
//! time-to-event `k` (in frames, starting at 0) has mass `F(k+1) - F(k)`, so
//! frame 0 carries positive mass, and the survival function is
//! `S(k) = P(tte > k) = 1 - F(k+1)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::targets::TargetFrame;

/// Probabilities are floored at this value before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `F(x) = 1 / (1 + (x/alpha)^-beta)`
    LogLogistic,
    /// Lomax (Pareto type II): `F(x) = 1 - (1 + x/alpha)^-beta`
    Pareto,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loglogistic" | "log_logistic" => Ok(Family::LogLogistic),
            "pareto" | "lomax" => Ok(Family::Pareto),
            _ => Err(invalid(format!("unknown distribution family {s:?}"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::LogLogistic => "loglogistic",
            Family::Pareto => "pareto",
        })
    }
}

/// Scale `alpha` (frames) and shape `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistParams<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> DistParams<T> {
    pub fn new(alpha: T, beta: T) -> Self {
        Self { alpha, beta }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::NonFinite(format!("distribution parameters {self:?}")));
        }
        if self.alpha <= T::zero() || self.beta <= T::zero() {
            return Err(invalid(format!("distribution parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// An event time in frames. When `observed` is false the event is only known
/// to happen strictly after `time` (right censoring).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CensoredObservation {
    pub time: u32,
    pub observed: bool,
}

impl CensoredObservation {
    pub fn observed(time: u32) -> Self {
        Self { time, observed: true }
    }

    pub fn censored(time: u32) -> Self {
        Self { time, observed: false }
    }
}

/// CDF, survival and the survival's partial derivatives at one point.
#[derive(Clone, Copy, Debug)]
struct Point<T> {
    cdf: T,
    surv: T,
    d_alpha: T,
    d_beta: T,
}

impl Family {
    fn point<T: Scalar>(self, p: DistParams<T>, x: T) -> Point<T> {
        if x <= T::zero() {
            return Point {
                cdf: T::zero(),
                surv: T::one(),
                d_alpha: T::zero(),
                d_beta: T::zero(),
            };
        }
        match self {
            Family::LogLogistic => {
                // F = sigmoid(l), S = sigmoid(-l) with l = beta * ln(x/alpha)
                let log_ratio = (x / p.alpha).ln();
                let l = p.beta * log_ratio;
                let cdf = crate::tensor::layers::sigmoid(l);
                let surv = crate::tensor::layers::sigmoid(-l);
                let fs = cdf * surv;
                Point {
                    cdf,
                    surv,
                    d_alpha: p.beta * fs / p.alpha,
                    d_beta: -fs * log_ratio,
                }
            }
            Family::Pareto => {
                let log1p = (x / p.alpha).ln_1p();
                let log_surv = -p.beta * log1p;
                let surv = log_surv.exp();
                Point {
                    cdf: -log_surv.exp_m1(),
                    surv,
                    d_alpha: surv * p.beta * x / (p.alpha * (p.alpha + x)),
                    d_beta: -surv * log1p,
                }
            }
        }
    }

    pub fn cdf<T: Scalar>(self, p: DistParams<T>, x: T) -> Result<T> {
        if x < T::zero() || x.is_nan() {
            return Err(invalid(format!("cdf argument must be non-negative, got {x}")));
        }
        Ok(self.point(p, x).cdf)
    }

    /// `P(tte = k) = F(k+1) - F(k)`.
    pub fn pmf<T: Scalar>(self, p: DistParams<T>, k: u32) -> T {
        self.pmf_grad(p, k).0
    }

    /// `P(tte > k) = 1 - F(k+1)`.
    pub fn survival<T: Scalar>(self, p: DistParams<T>, k: u32) -> T {
        self.point(p, T::lit(f64::from(k) + 1.0)).surv
    }

    /// pmf and its partials, differencing whichever tail is smaller to keep
    /// relative precision.
    fn pmf_grad<T: Scalar>(self, p: DistParams<T>, k: u32) -> (T, T, T) {
        let lo = self.point(p, T::lit(f64::from(k)));
        let hi = self.point(p, T::lit(f64::from(k) + 1.0));
        let mass = if hi.cdf < T::lit(0.5) {
            hi.cdf - lo.cdf
        } else {
            lo.surv - hi.surv
        };
        (mass.max(T::zero()), lo.d_alpha - hi.d_alpha, lo.d_beta - hi.d_beta)
    }

    /// Right-censored negative log-likelihood in nats.
    pub fn censored_nll<T: Scalar>(self, p: DistParams<T>, obs: CensoredObservation) -> Result<T> {
        p.validate()?;
        Ok(self.nll_and_grad(p, obs).0)
    }

    /// `(d loss / d alpha, d loss / d beta)`.
    pub fn nll_grad<T: Scalar>(self, p: DistParams<T>, obs: CensoredObservation) -> (T, T) {
        let (_, da, db) = self.nll_and_grad(p, obs);
        (da, db)
    }

    /// Loss and gradient together. Where the probability sits on the floor the
    /// loss is constant and the gradient is zero.
    pub fn nll_and_grad<T: Scalar>(self, p: DistParams<T>, obs: CensoredObservation) -> (T, T, T) {
        let floor = T::lit(PROB_FLOOR);
        let (prob, da, db) = if obs.observed {
            self.pmf_grad(p, obs.time)
        } else {
            let pt = self.point(p, T::lit(f64::from(obs.time) + 1.0));
            (pt.surv, pt.d_alpha, pt.d_beta)
        };
        if prob <= floor {
            return (-floor.ln(), T::zero(), T::zero());
        }
        (-prob.ln(), -da / prob, -db / prob)
    }
}

/// Sum of the TTE and TSE censored losses.
pub fn joint_frame_loss<T: Scalar>(
    family: Family,
    tte: DistParams<T>,
    tse: DistParams<T>,
    target: &TargetFrame,
) -> Result<T> {
    Ok(family.censored_nll(tte, target.tte)? + family.censored_nll(tse, target.tse)?)
}
