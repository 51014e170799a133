//! ALPHA test supermartingale for one assertion, sampling without
//! replacement, with the `shrinkTrunc` estimator of the assorter mean.
//!
//! The null hypothesis for an assertion is "the population mean of the
//! assorter is at most 1/2". Each draw `j` multiplies the martingale by
//!
//! ```text
//! m_j = ( x·η_j/μ_j + (u − x)·(u − η_j)/(u − μ_j) ) / u
//! ```
//!
//! where `μ_j` is the largest mean the undrawn ballots can have under the
//! null and `η_j` is the bet. Values are kept in the log domain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assertions::Assort;

/// Upper bound of the assorter.
pub const ASSORTER_UPPER: f64 = 1.0;
/// Hypothesised population mean.
pub const NULL_MEAN: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlphaError {
    #[error("eta0 must lie in (1/2, u - eps], got {0}")]
    Eta0OutOfRange(f64),
    #[error("d must be a finite nonnegative number, got {0}")]
    BadShrinkage(f64),
    #[error("c must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("eps must lie in (0, 1/2), got {0}")]
    BadEps(f64),
    #[error("assorter value {0} is not one of 0, 1/2, 1")]
    Domain(f64),
    #[error("all {0} ballots have already been drawn")]
    PopulationExhausted(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams {
    /// Initial estimate of the assorter mean.
    pub eta0: f64,
    /// Weight on `eta0`, in draws.
    pub d: f64,
    /// Lower-truncation bandwidth: the bet is at least `μ + c/√(d + j − 1)`.
    pub c: f64,
    /// Upper truncation gap below `u`.
    pub eps: f64,
}

impl AlphaParams {
    pub const DEFAULT_EPS: f64 = 1e-6;

    /// Parameters with the default `c = (eta0 − 1/2)/2` and `eps = 1e-6`.
    pub fn new(eta0: f64, d: f64) -> Result<Self, AlphaError> {
        Self::with_tuning(eta0, d, (eta0 - NULL_MEAN) / 2.0, Self::DEFAULT_EPS)
    }

    pub fn with_tuning(eta0: f64, d: f64, c: f64, eps: f64) -> Result<Self, AlphaError> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(AlphaError::BadEps(eps));
        }
        if !(eta0 > NULL_MEAN && eta0 <= ASSORTER_UPPER - eps) {
            return Err(AlphaError::Eta0OutOfRange(eta0));
        }
        if !(d.is_finite() && d >= 0.0) {
            return Err(AlphaError::BadShrinkage(d));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(AlphaError::BadBandwidth(c));
        }
        Ok(AlphaParams { eta0, d, c, eps })
    }

    /// `eta0 = 0.52, d = 50`.
    pub fn previous_default() -> Self {
        Self::new(0.52, 50.0).expect("valid")
    }

    /// `eta0 = 0.51, d = 100`.
    pub fn recommended_default() -> Self {
        Self::new(0.51, 100.0).expect("valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaStatus {
    Active,
    /// The null is impossible given the sample; the martingale is +∞.
    Proven,
    /// The null holds whatever remains; increments are pinned to 1.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaState {
    population: u64,
    /// 1-based index of the next draw.
    next_draw: u64,
    /// Twice the running sum of observed assorter values.
    sum_halves: u64,
    log_value: f64,
    log_max: f64,
    status: AlphaStatus,
}

impl AlphaState {
    pub fn new(population: u64) -> Self {
        assert!(population >= 1);
        AlphaState {
            population,
            next_draw: 1,
            sum_halves: 0,
            log_value: 0.0,
            log_max: 0.0,
            status: AlphaStatus::Active,
        }
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn draws(&self) -> u64 {
        self.next_draw - 1
    }

    /// Running sum of observed assorter values.
    pub fn sum(&self) -> f64 {
        self.sum_halves as f64 * 0.5
    }

    pub fn status(&self) -> AlphaStatus {
        self.status
    }

    /// Natural log of the martingale; `+∞` once proven.
    pub fn log_value(&self) -> f64 {
        self.log_value
    }

    pub fn log_max(&self) -> f64 {
        self.log_max
    }

    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }

    /// Conditional null mean of the next draw: `(N/2 − S)/(N − j + 1)`.
    pub fn null_mean(&self) -> f64 {
        let remaining = self.population + 1 - self.next_draw;
        let slack = self.population as f64 - self.sum_halves as f64;
        slack / (2.0 * remaining as f64)
    }

    /// The `shrinkTrunc` bet for the next draw given its null mean `mu`.
    pub fn eta(&self, params: &AlphaParams, mu: f64) -> f64 {
        let u = ASSORTER_UPPER;
        let seen = (self.next_draw - 1) as f64;
        let denom = params.d + seen;
        let raw = if denom > 0.0 { (params.d * params.eta0 + self.sum()) / denom } else { params.eta0 };
        let band = if denom > 0.0 { params.c / denom.sqrt() } else { params.c };
        let lower = mu + band;
        if lower > u - params.eps {
            (mu + u) / 2.0
        } else {
            raw.max(lower).min(u - params.eps)
        }
    }

    /// Folds in one observation and returns the increment `m_j` (`+∞` when
    /// the observation proves the null false).
    pub fn update(&mut self, x: Assort, params: &AlphaParams) -> Result<f64, AlphaError> {
        if self.next_draw > self.population {
            return Err(AlphaError::PopulationExhausted(self.population));
        }
        let m = match self.status {
            AlphaStatus::Proven => f64::INFINITY,
            AlphaStatus::Frozen => 1.0,
            AlphaStatus::Active => {
                let mu = self.null_mean();
                if mu >= ASSORTER_UPPER {
                    self.status = AlphaStatus::Frozen;
                    1.0
                } else if self.sum_halves + x.halves() > self.population {
                    // observed sum now exceeds N/2
                    self.status = AlphaStatus::Proven;
                    f64::INFINITY
                } else {
                    let eta = self.eta(params, mu);
                    let u = ASSORTER_UPPER;
                    let xv = x.value();
                    // mu == 0 forces x == 0 here, so the first term vanishes
                    let up = if x == Assort::For { 0.0 } else { xv * eta / mu };
                    (up + (u - xv) * (u - eta) / (u - mu)) / u
                }
            }
        };
        self.sum_halves += x.halves();
        self.next_draw += 1;
        if m == f64::INFINITY {
            self.log_value = f64::INFINITY;
        } else {
            self.log_value += m.ln();
        }
        self.log_max = self.log_max.max(self.log_value);
        Ok(m)
    }

    /// Like [`update`](Self::update) for a raw value, which must be 0, 1/2 or 1.
    pub fn update_value(&mut self, x: f64, params: &AlphaParams) -> Result<f64, AlphaError> {
        let a = if x == 0.0 {
            Assort::For
        } else if x == 0.5 {
            Assort::Neutral
        } else if x == 1.0 {
            Assort::Against
        } else {
            return Err(AlphaError::Domain(x));
        };
        self.update(a, params)
    }
}
