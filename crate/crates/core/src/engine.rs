//! Sequential audit over every alternative elimination order.
//!
//! One ALPHA martingale runs per distinct assertion and is shared by all
//! alt-orders that require it. Each alt-order keeps an intersection
//! martingale over its requirements and is rejected, permanently, once its
//! running maximum reaches `1/α`. The audit certifies when every alt-order
//! is rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alpha::{AlphaError, AlphaParams, AlphaState};
use crate::assertions::{build_registry, enumerate_alt_orders, AltOrder, Assort, AssertionRegistry};
use crate::ballots::{CandidateId, Ranking, RankingError, MAX_CANDIDATES};
use crate::weights::{IntersectionMartingale, SchemeSpec};

/// Largest `k` accepted unless the caller raises the limit.
pub const DEFAULT_MAX_CANDIDATES: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("need at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("{k} candidates exceeds the limit of {limit}; raise it explicitly to continue")]
    UnsupportedK { k: usize, limit: usize },
    #[error("reported winner {0} is not a candidate")]
    BadReportedWinner(CandidateId),
    #[error("risk limit must lie in (0, 1), got {0}")]
    BadRiskLimit(f64),
    #[error("invalid ALPHA parameters: {0}")]
    BadAlphaParams(#[from] AlphaError),
    #[error("population must be at least 1")]
    EmptyPopulation,
    #[error("duplicate candidate name {0:?}")]
    DuplicateCandidate(String),
    #[error("ranking mentions candidate index {0}, which is not on the roster")]
    CandidateOutOfRange(CandidateId),
    #[error("invalid ranking: {0}")]
    InvalidRanking(#[from] RankingError),
    #[error("expected {expected} assorter values, got {got}")]
    AssortCount { expected: usize, got: usize },
    #[error("audit is not running (status {0})")]
    NotRunning(AuditStatus),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("ballot log is incomplete, so the audit cannot be replayed")]
    NoBallotLog,
    #[error("ballot stream ended after {draws_seen} of {population} draws without certification")]
    StreamTooShort { draws_seen: u64, population: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub candidates: Vec<String>,
    pub reported_winner: CandidateId,
    pub population: u64,
    pub risk_limit: f64,
    pub scheme: SchemeSpec,
    pub alpha_params: AlphaParams,
    /// Guard on the number of candidates; the work per ballot grows as `k!`.
    #[serde(default = "default_max_candidates")]
    pub max_candidates: usize,
}

fn default_max_candidates() -> usize {
    DEFAULT_MAX_CANDIDATES
}

impl AuditConfig {
    pub fn new(
        candidates: Vec<String>,
        reported_winner: CandidateId,
        population: u64,
        risk_limit: f64,
        scheme: SchemeSpec,
        alpha_params: AlphaParams,
    ) -> Self {
        AuditConfig {
            candidates,
            reported_winner,
            population,
            risk_limit,
            scheme,
            alpha_params,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }

    /// Config with generated candidate names `C0`, `C1`, ...
    pub fn anonymous(
        k: usize,
        reported_winner: CandidateId,
        population: u64,
        risk_limit: f64,
        scheme: SchemeSpec,
        alpha_params: AlphaParams,
    ) -> Self {
        let names = (0..k).map(|i| format!("C{i}")).collect();
        Self::new(names, reported_winner, population, risk_limit, scheme, alpha_params)
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let k = self.candidates.len();
        if k < 2 {
            return Err(EngineError::TooFewCandidates(k));
        }
        if k > self.max_candidates.min(MAX_CANDIDATES) {
            return Err(EngineError::UnsupportedK { k, limit: self.max_candidates.min(MAX_CANDIDATES) });
        }
        for (i, name) in self.candidates.iter().enumerate() {
            if self.candidates[..i].contains(name) {
                return Err(EngineError::DuplicateCandidate(name.clone()));
            }
        }
        if self.reported_winner >= k {
            return Err(EngineError::BadReportedWinner(self.reported_winner));
        }
        if !(self.risk_limit > 0.0 && self.risk_limit < 1.0) {
            return Err(EngineError::BadRiskLimit(self.risk_limit));
        }
        if self.population == 0 {
            return Err(EngineError::EmptyPopulation);
        }
        AlphaParams::with_tuning(
            self.alpha_params.eta0,
            self.alpha_params.d,
            self.alpha_params.c,
            self.alpha_params.eps,
        )
        .map(|_| ())
        .map_err(EngineError::from)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Running,
    Certified,
    FullCount,
}

impl std::fmt::Display for AuditStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AuditStatus::Running => "running",
            AuditStatus::Certified => "certified",
            AuditStatus::FullCount => "full_count",
        })
    }
}

#[derive(Clone, Debug)]
pub struct AltOrderTracker {
    order_id: usize,
    martingale: IntersectionMartingale,
    rejected_at: Option<u64>,
}

impl AltOrderTracker {
    pub fn order_id(&self) -> usize {
        self.order_id
    }

    pub fn log_value(&self) -> f64 {
        self.martingale.log_value()
    }

    pub fn log_max(&self) -> f64 {
        self.martingale.log_max()
    }

    pub fn rejected(&self) -> bool {
        self.rejected_at.is_some()
    }

    /// Draw at which the tracker was rejected.
    pub fn rejected_at(&self) -> Option<u64> {
        self.rejected_at
    }

    pub fn martingale(&self) -> &IntersectionMartingale {
        &self.martingale
    }
}

/// Values of one alt-order after a draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerValue {
    #[serde(with = "extended_f64")]
    pub log_value: f64,
    #[serde(with = "extended_f64")]
    pub log_max: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub draw: u64,
    pub status: AuditStatus,
    pub newly_rejected: Vec<usize>,
    pub rejected_trackers: usize,
    #[serde(with = "extended_f64")]
    pub p_proxy: f64,
    pub trackers: Vec<TrackerValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardOrder {
    pub order_id: usize,
    /// Elimination order, first eliminated first.
    pub order: Vec<String>,
    #[serde(with = "extended_f64")]
    pub running_max: f64,
    #[serde(with = "extended_f64")]
    pub log_running_max: f64,
    #[serde(with = "extended_f64")]
    pub log_value: f64,
    /// `min(1, log max M / log(1/α))`, floored at 0.
    pub progress: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusDoc {
    pub status: AuditStatus,
    pub certified: bool,
    pub draws_seen: u64,
    pub population: u64,
    pub risk_limit: f64,
    pub num_trackers: usize,
    pub rejected_trackers: usize,
    pub num_assertions: usize,
    pub certified_fraction: f64,
    #[serde(with = "extended_f64")]
    pub min_running_max: f64,
    #[serde(with = "extended_f64")]
    pub p_proxy: f64,
    pub hardest: Vec<HardOrder>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Certified { at: u64 },
    FullCount { n: u64 },
}

impl Outcome {
    /// Ballots examined.
    pub fn sample_size(&self) -> u64 {
        match *self {
            Outcome::Certified { at } => at,
            Outcome::FullCount { n } => n,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AuditState {
    config: AuditConfig,
    registry: AssertionRegistry,
    orders: Vec<AltOrder>,
    bases: Vec<AlphaState>,
    base_log: Vec<f64>,
    prev_log: Vec<f64>,
    increments: Vec<f64>,
    trackers: Vec<AltOrderTracker>,
    rejected_count: usize,
    draws_seen: u64,
    status: AuditStatus,
    ballot_log: Vec<Ranking>,
    log_complete: bool,
    scratch_assorts: Vec<Assort>,
    scratch: [Vec<f64>; 3],
}

impl AuditState {
    pub fn new(config: AuditConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let k = config.num_candidates();
        let alt = enumerate_alt_orders(k, config.reported_winner);
        let (registry, orders) = build_registry(&alt);
        let n_assertions = registry.len();
        let trackers = orders
            .iter()
            .enumerate()
            .map(|(order_id, o)| AltOrderTracker {
                order_id,
                martingale: IntersectionMartingale::new(config.scheme, o.requirement_ids.len()),
                rejected_at: None,
            })
            .collect();
        Ok(AuditState {
            bases: vec![AlphaState::new(config.population); n_assertions],
            base_log: vec![0.0; n_assertions],
            prev_log: vec![0.0; n_assertions],
            increments: vec![1.0; n_assertions],
            registry,
            orders,
            trackers,
            rejected_count: 0,
            draws_seen: 0,
            status: AuditStatus::Running,
            ballot_log: Vec::new(),
            log_complete: true,
            scratch_assorts: Vec::with_capacity(n_assertions),
            scratch: Default::default(),
            config,
        })
    }

    /// Builds an audit and feeds it `ballots` in order.
    pub fn replay<'a, I>(config: AuditConfig, ballots: I) -> Result<Self, EngineError>
    where
        I: IntoIterator<Item = &'a Ranking>,
    {
        let mut state = AuditState::new(config)?;
        for b in ballots {
            state.process_ballot(b)?;
        }
        Ok(state)
    }

    pub fn config(&self) -> &AuditConfig {
        &self.config
    }

    pub fn registry(&self) -> &AssertionRegistry {
        &self.registry
    }

    pub fn alt_orders(&self) -> &[AltOrder] {
        &self.orders
    }

    pub fn bases(&self) -> &[AlphaState] {
        &self.bases
    }

    pub fn trackers(&self) -> &[AltOrderTracker] {
        &self.trackers
    }

    pub fn draws_seen(&self) -> u64 {
        self.draws_seen
    }

    pub fn audit_status(&self) -> AuditStatus {
        self.status
    }

    pub fn ballot_log(&self) -> &[Ranking] {
        &self.ballot_log
    }

    pub fn check_ranking(&self, ranking: &Ranking) -> Result<(), EngineError> {
        let k = self.config.num_candidates();
        match ranking.prefs().iter().find(|&&c| c >= k) {
            Some(&c) => Err(EngineError::CandidateOutOfRange(c)),
            None => Ok(()),
        }
    }

    /// Parses a ranking given as candidate names against the roster.
    pub fn ranking_from_names<S: AsRef<str>>(&self, names: &[S]) -> Result<Ranking, EngineError> {
        Ok(crate::ballots::ranking_from_names(&self.config.candidates, names)?)
    }

    /// Processes one drawn ballot and records it in the ballot log.
    pub fn process_ballot(&mut self, ranking: &Ranking) -> Result<StepReport, EngineError> {
        self.check_ranking(ranking)?;
        if self.status != AuditStatus::Running {
            return Err(EngineError::NotRunning(self.status));
        }
        let mut assorts = std::mem::take(&mut self.scratch_assorts);
        self.registry.assort_all(ranking, &mut assorts);
        let newly = self.advance(&assorts);
        self.scratch_assorts = assorts;
        self.ballot_log.push(ranking.clone());
        Ok(self.step_report(newly))
    }

    /// Processes one ballot given directly as its assorter values for every
    /// registered assertion, in registry order. Skips the ballot log, so an
    /// audit driven this way cannot be undone or replayed.
    pub fn process_assorts(&mut self, assorts: &[Assort]) -> Result<AuditStatus, EngineError> {
        if assorts.len() != self.registry.len() {
            return Err(EngineError::AssortCount { expected: self.registry.len(), got: assorts.len() });
        }
        if self.status != AuditStatus::Running {
            return Err(EngineError::NotRunning(self.status));
        }
        self.advance(assorts);
        self.log_complete = false;
        Ok(self.status)
    }

    fn advance(&mut self, assorts: &[Assort]) -> Vec<usize> {
        let params = self.config.alpha_params;
        std::mem::swap(&mut self.prev_log, &mut self.base_log);
        for (id, base) in self.bases.iter_mut().enumerate() {
            self.increments[id] =
                base.update(assorts[id], &params).expect("draws never exceed the population");
            self.base_log[id] = base.log_value();
        }
        self.draws_seen += 1;

        let alpha = self.config.risk_limit;
        let mut newly = Vec::new();
        let [prev, inc, cur] = &mut self.scratch;
        for tracker in self.trackers.iter_mut().filter(|t| t.rejected_at.is_none()) {
            let ids = &self.orders[tracker.order_id].requirement_ids;
            prev.clear();
            inc.clear();
            cur.clear();
            for &id in ids {
                prev.push(self.prev_log[id]);
                inc.push(self.increments[id]);
                cur.push(self.base_log[id]);
            }
            tracker.martingale.step(prev, inc, cur);
            if tracker_p(tracker.martingale.log_max()) <= alpha {
                tracker.rejected_at = Some(self.draws_seen);
                newly.push(tracker.order_id);
            }
        }
        self.rejected_count += newly.len();

        self.status = if self.rejected_count == self.trackers.len() {
            AuditStatus::Certified
        } else if self.draws_seen == self.config.population {
            AuditStatus::FullCount
        } else {
            AuditStatus::Running
        };
        newly
    }

    fn step_report(&self, newly_rejected: Vec<usize>) -> StepReport {
        StepReport {
            draw: self.draws_seen,
            status: self.status,
            newly_rejected,
            rejected_trackers: self.rejected_count,
            p_proxy: self.p_proxy(),
            trackers: self
                .trackers
                .iter()
                .map(|t| TrackerValue { log_value: t.log_value(), log_max: t.log_max(), rejected: t.rejected() })
                .collect(),
        }
    }

    /// Smallest running maximum over all trackers, in the log domain.
    pub fn min_log_running_max(&self) -> f64 {
        self.trackers.iter().map(|t| t.log_max()).fold(f64::INFINITY, f64::min)
    }

    /// `min(1, 1/min running max)`; at most α exactly when certified.
    pub fn p_proxy(&self) -> f64 {
        tracker_p(self.min_log_running_max())
    }

    /// Status snapshot listing the `hardest` alt-orders with the lowest
    /// running maxima (ties by order id).
    pub fn status_with(&self, hardest: usize) -> StatusDoc {
        let names = &self.config.candidates;
        let threshold = -self.config.risk_limit.ln();
        let mut ids: Vec<usize> = (0..self.trackers.len()).collect();
        ids.sort_by(|&a, &b| {
            self.trackers[a].log_max().total_cmp(&self.trackers[b].log_max()).then(a.cmp(&b))
        });
        let hardest = ids
            .into_iter()
            .take(hardest)
            .map(|id| {
                let t = &self.trackers[id];
                HardOrder {
                    order_id: id,
                    order: self.orders[id].order.iter().map(|&c| names[c].clone()).collect(),
                    running_max: t.log_max().exp(),
                    log_running_max: t.log_max(),
                    log_value: t.log_value(),
                    progress: (t.log_max() / threshold).clamp(0.0, 1.0),
                    rejected: t.rejected(),
                }
            })
            .collect();
        let min_log = self.min_log_running_max();
        StatusDoc {
            status: self.status,
            certified: self.status == AuditStatus::Certified,
            draws_seen: self.draws_seen,
            population: self.config.population,
            risk_limit: self.config.risk_limit,
            num_trackers: self.trackers.len(),
            rejected_trackers: self.rejected_count,
            num_assertions: self.registry.len(),
            certified_fraction: self.rejected_count as f64 / self.trackers.len() as f64,
            min_running_max: min_log.exp(),
            p_proxy: tracker_p(min_log),
            hardest,
        }
    }

    pub fn status(&self) -> StatusDoc {
        self.status_with(10)
    }

    /// Consumes ballots until the audit certifies or every ballot has been
    /// examined. Returns immediately if the audit has already stopped.
    pub fn run_to_completion<I>(&mut self, ballots: I) -> Result<Outcome, EngineError>
    where
        I: IntoIterator<Item = Ranking>,
    {
        let mut ballots = ballots.into_iter();
        while self.status == AuditStatus::Running {
            match ballots.next() {
                Some(b) => {
                    self.process_ballot(&b)?;
                }
                None => {
                    return Err(EngineError::StreamTooShort {
                        draws_seen: self.draws_seen,
                        population: self.config.population,
                    })
                }
            }
        }
        Ok(self.outcome().expect("audit has stopped"))
    }

    /// The final outcome, once the audit has stopped.
    pub fn outcome(&self) -> Option<Outcome> {
        match self.status {
            AuditStatus::Running => None,
            AuditStatus::Certified => Some(Outcome::Certified { at: self.draws_seen }),
            AuditStatus::FullCount => Some(Outcome::FullCount { n: self.draws_seen }),
        }
    }

    /// Reverts the last ballot by replaying the log without it.
    pub fn undo_last(&mut self) -> Result<Ranking, EngineError> {
        if !self.log_complete {
            return Err(EngineError::NoBallotLog);
        }
        let mut log = std::mem::take(&mut self.ballot_log);
        let Some(last) = log.pop() else {
            return Err(EngineError::NothingToUndo);
        };
        *self = AuditState::replay(self.config.clone(), &log)?;
        Ok(last)
    }
}

fn tracker_p(log_max: f64) -> f64 {
    (-log_max).exp().min(1.0)
}

/// Serialises `f64` as a JSON number when finite and as `"inf"`, `"-inf"`
/// or `"nan"` otherwise.
pub mod extended_f64 {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct V;

    impl Visitor<'_> for V {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(V)
    }
}
