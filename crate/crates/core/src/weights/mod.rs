//! Weighting schemes for intersection test supermartingales.
//!
//! Each alt-order combines the increments of its requirements' base
//! martingales as a convex combination whose weights may depend only on
//! data up to the previous draw. Base martingale values are handed in as
//! natural logs; weights are returned up to a positive scale factor.

mod ons;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ons::{kkt_residual, project_simplex_quadratic, OnsState};

/// Accepted spellings of a [`SchemeSpec`].
pub const SCHEME_GRAMMAR: &str = "linear | quadratic | largest | linear-plus | quadratic-plus | \
largest-count:W | largest-mean:W | linear-count:W | linear-mean:W | ons:DELTA";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeParseError {
    #[error("unknown scheme {0:?}; expected one of: {SCHEME_GRAMMAR}")]
    Unknown(String),
    #[error("scheme {0:?} needs a window, e.g. {0}:5")]
    MissingWindow(String),
    #[error("window {0:?} is not a positive integer")]
    BadWindow(String),
    #[error("ONS delta {0:?} must be a number greater than 2")]
    BadDelta(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchemeSpec {
    Linear,
    Quadratic,
    Largest,
    LinearPlus,
    QuadraticPlus,
    LargestCount(usize),
    LargestMean(usize),
    LinearCount(usize),
    LinearMean(usize),
    Ons(f64),
}

impl SchemeSpec {
    pub fn window(&self) -> Option<usize> {
        match *self {
            SchemeSpec::LargestCount(w)
            | SchemeSpec::LargestMean(w)
            | SchemeSpec::LinearCount(w)
            | SchemeSpec::LinearMean(w) => Some(w),
            _ => None,
        }
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeSpec::Linear => f.write_str("linear"),
            SchemeSpec::Quadratic => f.write_str("quadratic"),
            SchemeSpec::Largest => f.write_str("largest"),
            SchemeSpec::LinearPlus => f.write_str("linear-plus"),
            SchemeSpec::QuadraticPlus => f.write_str("quadratic-plus"),
            SchemeSpec::LargestCount(w) => write!(f, "largest-count:{w}"),
            SchemeSpec::LargestMean(w) => write!(f, "largest-mean:{w}"),
            SchemeSpec::LinearCount(w) => write!(f, "linear-count:{w}"),
            SchemeSpec::LinearMean(w) => write!(f, "linear-mean:{w}"),
            SchemeSpec::Ons(d) => write!(f, "ons:{d}"),
        }
    }
}

impl FromStr for SchemeSpec {
    type Err = SchemeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let window = |ctor: fn(usize) -> SchemeSpec| match arg {
            None => Err(SchemeParseError::MissingWindow(name.to_string())),
            Some(a) => a
                .parse::<usize>()
                .ok()
                .filter(|&w| w >= 1)
                .map(ctor)
                .ok_or_else(|| SchemeParseError::BadWindow(a.to_string())),
        };
        let plain = |spec: SchemeSpec| match arg {
            None => Ok(spec),
            Some(_) => Err(SchemeParseError::Unknown(s.to_string())),
        };
        match name.to_ascii_lowercase().as_str() {
            "linear" => plain(SchemeSpec::Linear),
            "quadratic" => plain(SchemeSpec::Quadratic),
            "largest" => plain(SchemeSpec::Largest),
            "linear-plus" => plain(SchemeSpec::LinearPlus),
            "quadratic-plus" => plain(SchemeSpec::QuadraticPlus),
            "largest-count" => window(SchemeSpec::LargestCount),
            "largest-mean" => window(SchemeSpec::LargestMean),
            "linear-count" => window(SchemeSpec::LinearCount),
            "linear-mean" => window(SchemeSpec::LinearMean),
            "ons" => {
                let a = arg.ok_or_else(|| SchemeParseError::BadDelta(String::new()))?;
                a.parse::<f64>()
                    .ok()
                    .filter(|d| d.is_finite() && *d > 2.0)
                    .map(SchemeSpec::Ons)
                    .ok_or_else(|| SchemeParseError::BadDelta(a.to_string()))
            }
            _ => Err(SchemeParseError::Unknown(s.to_string())),
        }
    }
}

impl TryFrom<String> for SchemeSpec {
    type Error = SchemeParseError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SchemeSpec> for String {
    fn from(s: SchemeSpec) -> String {
        s.to_string()
    }
}

/// Nonnegative weights, one per requirement, with a positive sum.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    /// Weights rescaled to sum to one.
    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.0.iter().sum();
        self.0.iter().map(|w| w / total).collect()
    }
}

#[derive(Clone, Debug)]
enum History {
    Myopic,
    /// Argmax sets of the last `window` recorded steps and per-requirement
    /// membership counts over them.
    Leaders { window: usize, ring: VecDeque<Vec<usize>>, counts: Vec<u32> },
    /// Log base values of the last `window` recorded steps.
    Levels { window: usize, ring: VecDeque<Vec<f64>> },
    Ons(OnsState),
}

/// Per-alt-order scheme state. Holds only data recorded through
/// [`record_step`](Self::record_step), so weights are predictable.
#[derive(Clone, Debug)]
pub struct SchemeState {
    spec: SchemeSpec,
    r: usize,
    history: History,
}

fn argmax_set(values: &[f64], out: &mut Vec<usize>) {
    out.clear();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.extend((0..values.len()).filter(|&i| values[i] == max));
}

fn indicator(r: usize, set: &[usize], out: &mut Vec<f64>) {
    out.clear();
    out.resize(r, 0.0);
    for &i in set {
        out[i] = 1.0;
    }
}

impl SchemeState {
    pub fn new(spec: SchemeSpec, r: usize) -> Self {
        assert!(r >= 1);
        let history = match spec {
            SchemeSpec::LargestCount(window) | SchemeSpec::LinearCount(window) => {
                History::Leaders { window, ring: VecDeque::with_capacity(window), counts: vec![0; r] }
            }
            SchemeSpec::LargestMean(window) | SchemeSpec::LinearMean(window) => {
                History::Levels { window, ring: VecDeque::with_capacity(window) }
            }
            SchemeSpec::Ons(delta) => History::Ons(OnsState::new(r, delta)),
            _ => History::Myopic,
        };
        SchemeState { spec, r, history }
    }

    pub fn spec(&self) -> SchemeSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.r
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of steps currently held in the look-back buffer.
    pub fn history_len(&self) -> usize {
        match &self.history {
            History::Leaders { ring, .. } => ring.len(),
            History::Levels { ring, .. } => ring.len(),
            _ => 0,
        }
    }

    pub fn ons(&self) -> Option<&OnsState> {
        match &self.history {
            History::Ons(o) => Some(o),
            _ => None,
        }
    }

    pub fn weights(&self, prev_log: &[f64]) -> WeightVector {
        let mut out = Vec::with_capacity(self.r);
        let mut scratch = Vec::new();
        self.fill_weights(prev_log, &mut out, &mut scratch);
        WeightVector(out)
    }

    /// Writes the weights for the next step into `out`, given the log base
    /// values at the previous step. `scratch` is reusable working space.
    pub fn fill_weights(&self, prev_log: &[f64], out: &mut Vec<f64>, scratch: &mut Vec<usize>) {
        let r = self.r;
        debug_assert_eq!(prev_log.len(), r);
        out.clear();

        if prev_log.contains(&f64::INFINITY) {
            out.extend(prev_log.iter().map(|&l| if l == f64::INFINITY { 1.0 } else { 0.0 }));
            return;
        }
        let max = prev_log.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        match (&self.spec, &self.history) {
            (SchemeSpec::Linear, _) => out.extend(prev_log.iter().map(|&l| (l - max).exp())),
            (SchemeSpec::Quadratic, _) => {
                out.extend(prev_log.iter().map(|&l| (2.0 * (l - max)).exp()))
            }
            (SchemeSpec::Largest, _) => {
                argmax_set(prev_log, scratch);
                indicator(r, scratch, out);
            }
            (SchemeSpec::LinearPlus, _) => out.extend(prev_log.iter().map(|&l| {
                if max > 0.0 && l < 0.0 {
                    0.0
                } else {
                    (l - max).exp()
                }
            })),
            (SchemeSpec::QuadraticPlus, _) => out.extend(prev_log.iter().map(|&l| {
                if max > 0.0 && l < 0.0 {
                    0.0
                } else {
                    (2.0 * (l - max)).exp()
                }
            })),
            (_, History::Leaders { ring, counts, .. }) => {
                if ring.is_empty() {
                    out.resize(r, 1.0);
                } else if matches!(self.spec, SchemeSpec::LinearCount(_)) {
                    out.extend(counts.iter().map(|&c| c as f64));
                } else {
                    let top = *counts.iter().max().expect("r >= 1");
                    out.extend(counts.iter().map(|&c| if c == top { 1.0 } else { 0.0 }));
                }
            }
            (_, History::Levels { ring, .. }) => {
                if ring.is_empty() {
                    out.resize(r, 1.0);
                    return;
                }
                // sums of exp(log − shift) are proportional to trailing means
                let shift = ring
                    .iter()
                    .flat_map(|v| v.iter().copied())
                    .fold(f64::NEG_INFINITY, f64::max);
                out.resize(r, 0.0);
                for step in ring {
                    for (o, &l) in out.iter_mut().zip(step) {
                        *o += (l - shift).exp();
                    }
                }
                if matches!(self.spec, SchemeSpec::LargestMean(_)) {
                    let top = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    for o in out.iter_mut() {
                        *o = if *o == top { 1.0 } else { 0.0 };
                    }
                }
            }
            (_, History::Ons(ons)) => out.extend_from_slice(ons.portfolio()),
            (_, History::Myopic) => unreachable!("windowed and ONS schemes keep history"),
        }
    }

    /// Advances the scheme past step `t`, given the log base values and the
    /// increments observed at `t`.
    pub fn record_step(&mut self, current_log: &[f64], increments: &[f64]) {
        match &mut self.history {
            History::Myopic => {}
            History::Leaders { window, ring, counts } => {
                let mut leaders = if ring.len() == *window {
                    ring.pop_front().expect("window >= 1")
                } else {
                    Vec::new()
                };
                for &i in &leaders {
                    counts[i] -= 1;
                }
                argmax_set(current_log, &mut leaders);
                for &i in &leaders {
                    counts[i] += 1;
                }
                ring.push_back(leaders);
            }
            History::Levels { window, ring } => {
                let mut slot = if ring.len() == *window {
                    ring.pop_front().expect("window >= 1")
                } else {
                    Vec::with_capacity(current_log.len())
                };
                slot.clear();
                slot.extend_from_slice(current_log);
                ring.push_back(slot);
            }
            History::Ons(ons) => ons.step(increments),
        }
    }
}

/// Intersection test supermartingale over a fixed list of base
/// martingales: the running product of weighted-average increments.
#[derive(Clone, Debug)]
pub struct IntersectionMartingale {
    scheme: SchemeState,
    log_value: f64,
    log_max: f64,
    weights: Vec<f64>,
    scratch: Vec<usize>,
}

impl IntersectionMartingale {
    pub fn new(spec: SchemeSpec, r: usize) -> Self {
        IntersectionMartingale {
            scheme: SchemeState::new(spec, r),
            log_value: 0.0,
            log_max: 0.0,
            weights: Vec::with_capacity(r),
            scratch: Vec::with_capacity(r),
        }
    }

    pub fn scheme(&self) -> &SchemeState {
        &self.scheme
    }

    pub fn log_value(&self) -> f64 {
        self.log_value
    }

    pub fn log_max(&self) -> f64 {
        self.log_max
    }

    /// Weights used at the most recent step.
    pub fn last_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Applies one step. `prev_log` are the base log values before the draw,
    /// `increments` the base increments of this draw, and `current_log` the
    /// base log values after it. Returns the intersection increment.
    pub fn step(&mut self, prev_log: &[f64], increments: &[f64], current_log: &[f64]) -> f64 {
        if self.log_value == f64::INFINITY {
            return f64::INFINITY;
        }
        if increments.contains(&f64::INFINITY) {
            // a requirement was just shown impossible
            self.log_value = f64::INFINITY;
            self.log_max = f64::INFINITY;
            return f64::INFINITY;
        }
        self.scheme.fill_weights(prev_log, &mut self.weights, &mut self.scratch);
        let mut num = 0.0;
        let mut den = 0.0;
        for (w, m) in self.weights.iter().zip(increments) {
            num += w * m;
            den += w;
        }
        let inc = num / den;
        self.log_value += inc.ln();
        self.log_max = self.log_max.max(self.log_value);
        self.scheme.record_step(current_log, increments);
        inc
    }
}
