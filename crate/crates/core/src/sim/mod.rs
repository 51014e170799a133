//! Replicated simulated audits over contests and parameter cells, with
//! aggregation by margin category and default-versus-default comparisons.
//!
//! Each replication shuffles the contest's expanded ballot list with a
//! ChaCha8 generator seeded by [`replication_seed`] and audits the ballots
//! in that order, so a row depends only on the plan and never on
//! scheduling.

pub mod fixtures;
pub mod report;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alpha::{AlphaError, AlphaParams};
use crate::assertions::{build_registry, enumerate_alt_orders, Assort};
use crate::ballots::{
    irv_tabulate, margin_category, parse_profile, CandidateId, Contest, MarginCategory, ParseError,
    ProfileFormat, TieBreak,
};
use crate::engine::{AuditConfig, AuditState, AuditStatus, DEFAULT_MAX_CANDIDATES};
use crate::weights::SchemeSpec;
use report::{Field, Table};

/// `η₀` values of the tuning grid.
pub const GRID_ETA0: [f64; 4] = [0.505, 0.51, 0.52, 0.54];
/// `d` values of the tuning grid.
pub const GRID_D: [f64; 6] = [10.0, 50.0, 100.0, 200.0, 500.0, 1000.0];
pub const DEFAULT_REPLICATIONS: u32 = 500;
pub const DEFAULT_RISK_LIMIT: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("plan has no contests")]
    NoContests,
    #[error("plan has no parameter cells")]
    NoCells,
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("risk limit must lie in (0, 1), got {0}")]
    BadRiskLimit(f64),
    #[error("contest {0:?} has no ballots")]
    EmptyContest(String),
    #[error("contest id {0:?} appears twice in the plan")]
    DuplicateContest(String),
    #[error("contest {0:?} has a single candidate")]
    SingleCandidate(String),
    #[error(transparent)]
    Alpha(#[from] AlphaError),
    #[error("no records for cell {cell} on contest {contest:?}")]
    MissingCell { contest: String, cell: String },
    #[error("could not build thread pool: {0}")]
    ThreadPool(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
}

/// One `(scheme, η₀, d)` combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scheme: SchemeSpec,
    pub eta0: f64,
    pub d: f64,
}

impl Cell {
    pub fn new(scheme: SchemeSpec, eta0: f64, d: f64) -> Self {
        Cell { scheme, eta0, d }
    }

    pub fn previous_default(scheme: SchemeSpec) -> Self {
        let p = AlphaParams::previous_default();
        Cell::new(scheme, p.eta0, p.d)
    }

    pub fn recommended_default(scheme: SchemeSpec) -> Self {
        let p = AlphaParams::recommended_default();
        Cell::new(scheme, p.eta0, p.d)
    }

    pub fn alpha_params(&self) -> Result<AlphaParams, AlphaError> {
        AlphaParams::new(self.eta0, self.d)
    }

    /// ALPHA parameters with `tuning` overriding the default `c` and `eps`.
    pub fn alpha_params_tuned(&self, tuning: Tuning) -> Result<AlphaParams, AlphaError> {
        let p = self.alpha_params()?;
        AlphaParams::with_tuning(self.eta0, self.d, tuning.c.unwrap_or(p.c), tuning.eps.unwrap_or(p.eps))
    }

    fn same(&self, other: &Cell) -> bool {
        self.scheme == other.scheme && self.eta0 == other.eta0 && self.d == other.d
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.scheme, self.eta0, self.d)
    }
}

/// Plan-wide overrides of the ALPHA truncation parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub c: Option<f64>,
    pub eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPlan {
    pub contests: Vec<Contest>,
    pub cells: Vec<Cell>,
    pub replications: u32,
    pub risk_limit: f64,
    pub seed: u64,
    /// Audit with the tabulated runner-up reported as the winner.
    pub wrong_winner: bool,
    pub max_candidates: usize,
    #[serde(default)]
    pub tuning: Tuning,
}

impl SimPlan {
    pub fn new(contests: Vec<Contest>, cells: Vec<Cell>, replications: u32, seed: u64) -> Self {
        SimPlan {
            contests,
            cells,
            replications,
            risk_limit: DEFAULT_RISK_LIMIT,
            seed,
            wrong_winner: false,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            tuning: Tuning::default(),
        }
    }

    /// Cross product of `schemes × eta0s × ds`.
    pub fn grid(
        contests: Vec<Contest>,
        schemes: &[SchemeSpec],
        eta0s: &[f64],
        ds: &[f64],
        replications: u32,
        seed: u64,
    ) -> Self {
        let mut cells = Vec::new();
        for &scheme in schemes {
            for &eta0 in eta0s {
                for &d in ds {
                    cells.push(Cell::new(scheme, eta0, d));
                }
            }
        }
        SimPlan::new(contests, cells, replications, seed)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.contests.is_empty() {
            return Err(SimError::NoContests);
        }
        if self.cells.is_empty() {
            return Err(SimError::NoCells);
        }
        if self.replications == 0 {
            return Err(SimError::NoReplications);
        }
        if !(self.risk_limit > 0.0 && self.risk_limit < 1.0) {
            return Err(SimError::BadRiskLimit(self.risk_limit));
        }
        for (i, c) in self.contests.iter().enumerate() {
            if self.contests[..i].iter().any(|o| o.id == c.id) {
                return Err(SimError::DuplicateContest(c.id.clone()));
            }
        }
        for cell in &self.cells {
            cell.alpha_params_tuned(self.tuning)?;
        }
        Ok(())
    }

    /// Number of audits the plan runs.
    pub fn size(&self) -> usize {
        self.contests.len() * self.cells.len() * self.replications as usize
    }

    /// Short stable digest of everything that determines the plan's output.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.contests {
            h.update(c.id.as_bytes());
            h.update([0]);
            h.update(c.to_canonical_text().as_bytes());
            h.update([0]);
        }
        for cell in &self.cells {
            h.update(cell.to_string().as_bytes());
            h.update([0]);
        }
        h.update(
            format!(
                "{}|{}|{}|{}|{}",
                self.replications, self.risk_limit, self.seed, self.wrong_winner, self.max_candidates
            )
            .as_bytes(),
        );
        if self.tuning != Tuning::default() {
            h.update(format!("|{:?}|{:?}", self.tuning.c, self.tuning.eps).as_bytes());
        }
        hex(&h.finalize()[..6])
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of one replication: the first 8 bytes, little-endian, of the
/// SHA-256 digest of `"{master}|{contest}|{scheme}|{eta0}|{d}|{rep}"`, with
/// reals in Rust's shortest round-trip notation (`0.52`, `50`).
pub fn replication_seed(master: u64, contest_id: &str, cell: &Cell, rep: u32) -> u64 {
    let text = format!("{master}|{contest_id}|{}|{}|{}|{rep}", cell.scheme, cell.eta0, cell.d);
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordOutcome {
    Certified,
    FullCount,
    Error,
}

impl RecordOutcome {
    pub fn name(self) -> &'static str {
        match self {
            RecordOutcome::Certified => "certified",
            RecordOutcome::FullCount => "full_count",
            RecordOutcome::Error => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub contest: String,
    pub category: MarginCategory,
    pub margin: f64,
    pub cell: Cell,
    pub replication: u32,
    pub seed: u64,
    pub outcome: RecordOutcome,
    /// Ballots examined; `N` on a full count, 0 on error.
    pub sample_size: u64,
    pub population: u64,
    pub fraction: f64,
    pub error: Option<String>,
}

/// A contest tabulated and expanded once for all its replications.
#[derive(Clone, Debug)]
pub struct PreparedContest {
    pub contest: Contest,
    pub reported_winner: CandidateId,
    pub margin: f64,
    pub category: MarginCategory,
    line_indices: Vec<u32>,
    /// Assorter values of each distinct ballot line, in registry order.
    line_assorts: Vec<Vec<Assort>>,
}

impl PreparedContest {
    pub fn new(contest: Contest, wrong_winner: bool, max_candidates: usize) -> Result<Self, SimError> {
        let profile = &contest.profile;
        if profile.total() == 0 {
            return Err(SimError::EmptyContest(contest.id.clone()));
        }
        let k = profile.num_candidates();
        if k < 2 {
            return Err(SimError::SingleCandidate(contest.id.clone()));
        }
        let rec = irv_tabulate(profile, TieBreak::LowestIndex);
        let reported_winner =
            if wrong_winner { rec.runner_up().expect("k >= 2") } else { rec.winner() };
        // oversize contests are left for the engine to reject
        let line_assorts = if k <= max_candidates {
            let (registry, _) = build_registry(&enumerate_alt_orders(k, reported_winner));
            profile
                .lines()
                .iter()
                .map(|l| {
                    let mut v = Vec::with_capacity(registry.len());
                    registry.assort_all(&l.ranking, &mut v);
                    v
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(PreparedContest {
            line_indices: profile.expand_line_indices(),
            margin: rec.last_round_margin,
            category: margin_category(rec.last_round_margin),
            reported_winner,
            line_assorts,
            contest,
        })
    }

    pub fn population(&self) -> u64 {
        self.contest.profile.total()
    }
}

/// Runs one replication.
pub fn simulate_audit(
    prepared: &PreparedContest,
    cell: &Cell,
    risk_limit: f64,
    seed: u64,
    replication: u32,
    max_candidates: usize,
    tuning: Tuning,
) -> SimRecord {
    let population = prepared.population();
    let mut record = SimRecord {
        contest: prepared.contest.id.clone(),
        category: prepared.category,
        margin: prepared.margin,
        cell: *cell,
        replication,
        seed,
        outcome: RecordOutcome::Error,
        sample_size: 0,
        population,
        fraction: 0.0,
        error: None,
    };
    let run = || -> Result<(u64, AuditStatus), String> {
        let params = cell.alpha_params_tuned(tuning).map_err(|e| e.to_string())?;
        let mut config = AuditConfig::new(
            prepared.contest.profile.candidates().to_vec(),
            prepared.reported_winner,
            population,
            risk_limit,
            cell.scheme,
            params,
        );
        config.max_candidates = max_candidates;
        let mut state = AuditState::new(config).map_err(|e| e.to_string())?;
        let mut order = prepared.line_indices.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for &line in &order {
            let status =
                state.process_assorts(&prepared.line_assorts[line as usize]).map_err(|e| e.to_string())?;
            if status != AuditStatus::Running {
                break;
            }
        }
        Ok((state.draws_seen(), state.audit_status()))
    };
    match run() {
        Ok((n, status)) => {
            record.outcome = match status {
                AuditStatus::Certified => RecordOutcome::Certified,
                _ => RecordOutcome::FullCount,
            };
            record.sample_size = n;
            record.fraction = n as f64 / population as f64;
        }
        Err(e) => record.error = Some(e),
    }
    record
}

/// Runs every contest × cell × replication on `threads` worker threads.
/// Rows come back in plan order (contest, then cell, then replication)
/// whatever the thread count.
pub fn run_plan(plan: &SimPlan, threads: usize) -> Result<Vec<SimRecord>, SimError> {
    plan.validate()?;
    let prepared: Vec<PreparedContest> = plan
        .contests
        .iter()
        .map(|c| PreparedContest::new(c.clone(), plan.wrong_winner, plan.max_candidates))
        .collect::<Result<_, _>>()?;
    let tasks: Vec<(usize, usize, u32)> = (0..prepared.len())
        .flat_map(|ci| {
            (0..plan.cells.len()).flat_map(move |k| (0..plan.replications).map(move |r| (ci, k, r)))
        })
        .collect();
    let job = |&(ci, k, rep): &(usize, usize, u32)| {
        let p = &prepared[ci];
        let cell = &plan.cells[k];
        let seed = replication_seed(plan.seed, &p.contest.id, cell, rep);
        simulate_audit(p, cell, plan.risk_limit, seed, rep, plan.max_candidates, plan.tuning)
    };
    if threads <= 1 {
        return Ok(tasks.iter().map(job).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SimError::ThreadPool(e.to_string()))?;
    Ok(pool.install(|| tasks.par_iter().map(job).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Category,
    Contest,
    Cell,
}

impl GroupBy {
    pub fn name(self) -> &'static str {
        match self {
            GroupBy::Category => "category",
            GroupBy::Contest => "contest",
            GroupBy::Cell => "cell",
        }
    }
}

impl std::str::FromStr for GroupBy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "category" => Ok(GroupBy::Category),
            "contest" => Ok(GroupBy::Contest),
            "cell" => Ok(GroupBy::Cell),
            _ => Err(format!("unknown grouping {s:?}; expected category, contest or cell")),
        }
    }
}

/// Mean and standard error of one group of records within one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cell: Cell,
    /// Category name, contest id, or `all` when grouping by cell.
    pub group: String,
    pub count: usize,
    pub mean_fraction: f64,
    pub se_fraction: f64,
    pub mean_sample_size: f64,
    pub se_sample_size: f64,
    /// A single record has no spread; its standard errors are set to 0.
    pub degenerate: bool,
}

impl Aggregate {
    pub fn lower_2se(&self) -> f64 {
        self.mean_fraction - 2.0 * self.se_fraction
    }

    pub fn upper_2se(&self) -> f64 {
        self.mean_fraction + 2.0 * self.se_fraction
    }
}

/// Sample mean and `sd/√n` standard error (0 when `n = 1`).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn cell_index(cells: &mut Vec<Cell>, cell: &Cell) -> usize {
    match cells.iter().position(|c| c.same(cell)) {
        Some(i) => i,
        None => {
            cells.push(*cell);
            cells.len() - 1
        }
    }
}

type Group<'a> = ((usize, usize), String, Cell, Vec<&'a SimRecord>);

/// Groups successful records (error rows are skipped). Groups are ordered
/// by first appearance of their cell, then by category (Small first) or by
/// first appearance of the contest.
pub fn aggregate(records: &[SimRecord], group_by: GroupBy) -> Vec<Aggregate> {
    let mut cells = Vec::new();
    let mut contest_order: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    for r in records.iter().filter(|r| r.outcome != RecordOutcome::Error) {
        let ci = cell_index(&mut cells, &r.cell);
        let next = contest_order.len();
        let contest_rank = *contest_order.entry(r.contest.as_str()).or_insert(next);
        let (sub, label) = match group_by {
            GroupBy::Category => (r.category as usize, r.category.name().to_string()),
            GroupBy::Contest => (contest_rank, r.contest.clone()),
            GroupBy::Cell => (0, "all".to_string()),
        };
        let key = (ci, sub);
        let gi = *lookup.entry(key).or_insert_with(|| {
            groups.push((key, label, r.cell, Vec::new()));
            groups.len() - 1
        });
        groups[gi].3.push(r);
    }
    groups.sort_by_key(|g| g.0);
    groups
        .into_iter()
        .map(|(_, group, cell, rows)| {
            let fractions: Vec<f64> = rows.iter().map(|r| r.fraction).collect();
            let sizes: Vec<f64> = rows.iter().map(|r| r.sample_size as f64).collect();
            let (mean_fraction, se_fraction) = mean_se(&fractions);
            let (mean_sample_size, se_sample_size) = mean_se(&sizes);
            Aggregate {
                cell,
                group,
                count: rows.len(),
                mean_fraction,
                se_fraction,
                mean_sample_size,
                se_sample_size,
                degenerate: rows.len() == 1,
            }
        })
        .collect()
}

/// Per-contest change in mean sample size from a baseline cell to a
/// candidate cell. Positive means the candidate samples fewer ballots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub contest: String,
    pub category: MarginCategory,
    pub margin: f64,
    pub baseline_mean: f64,
    pub candidate_mean: f64,
    pub reduction: f64,
    /// `√(SE_baseline² + SE_candidate²)`.
    pub combined_se: f64,
    pub baseline_count: usize,
    pub candidate_count: usize,
}

pub fn compare_reduction(
    records: &[SimRecord],
    baseline: &Cell,
    candidate: &Cell,
) -> Result<Vec<Reduction>, SimError> {
    let by_contest = aggregate(records, GroupBy::Contest);
    let mut contests: Vec<(&str, MarginCategory, f64)> = Vec::new();
    for r in records {
        if !contests.iter().any(|c| c.0 == r.contest) {
            contests.push((r.contest.as_str(), r.category, r.margin));
        }
    }
    contests
        .into_iter()
        .map(|(contest, category, margin)| {
            let find = |cell: &Cell| {
                by_contest.iter().find(|a| a.group == contest && a.cell.same(cell)).ok_or_else(|| {
                    SimError::MissingCell { contest: contest.to_string(), cell: cell.to_string() }
                })
            };
            let b = find(baseline)?;
            let c = find(candidate)?;
            Ok(Reduction {
                contest: contest.to_string(),
                category,
                margin,
                baseline_mean: b.mean_sample_size,
                candidate_mean: c.mean_sample_size,
                reduction: b.mean_sample_size - c.mean_sample_size,
                combined_se: b.se_sample_size.hypot(c.se_sample_size),
                baseline_count: b.count,
                candidate_count: c.count,
            })
        })
        .collect()
}

fn cell_fields(cell: &Cell) -> [Field; 3] {
    [Field::Str(cell.scheme.to_string()), Field::Real(cell.eta0), Field::Real(cell.d)]
}

pub fn records_table(records: &[SimRecord]) -> Table {
    Table {
        columns: vec![
            "contest", "category", "margin", "scheme", "eta0", "d", "replication", "seed", "outcome",
            "sample_size", "population", "fraction", "error",
        ],
        rows: records
            .iter()
            .map(|r| {
                let [s, e, d] = cell_fields(&r.cell);
                vec![
                    Field::Str(r.contest.clone()),
                    Field::Str(r.category.name().into()),
                    Field::Real(r.margin),
                    s,
                    e,
                    d,
                    Field::Int(r.replication as i64),
                    Field::Str(r.seed.to_string()),
                    Field::Str(r.outcome.name().into()),
                    Field::Int(r.sample_size as i64),
                    Field::Int(r.population as i64),
                    Field::Real(r.fraction),
                    Field::Str(r.error.clone().unwrap_or_default()),
                ]
            })
            .collect(),
    }
}

pub fn aggregates_table(group_by: GroupBy, aggregates: &[Aggregate]) -> Table {
    Table {
        columns: vec![
            "group_by", "scheme", "eta0", "d", "group", "count", "mean_fraction", "se_fraction",
            "lower_2se", "upper_2se", "mean_sample_size", "se_sample_size", "degenerate",
        ],
        rows: aggregates
            .iter()
            .map(|a| {
                let [s, e, d] = cell_fields(&a.cell);
                vec![
                    Field::Str(group_by.name().into()),
                    s,
                    e,
                    d,
                    Field::Str(a.group.clone()),
                    Field::Int(a.count as i64),
                    Field::Real(a.mean_fraction),
                    Field::Real(a.se_fraction),
                    Field::Real(a.lower_2se()),
                    Field::Real(a.upper_2se()),
                    Field::Real(a.mean_sample_size),
                    Field::Real(a.se_sample_size),
                    Field::Bool(a.degenerate),
                ]
            })
            .collect(),
    }
}

pub fn reductions_table(baseline: &Cell, candidate: &Cell, reductions: &[Reduction]) -> Table {
    Table {
        columns: vec![
            "contest", "category", "margin", "baseline", "candidate", "baseline_mean", "candidate_mean",
            "reduction", "combined_se", "baseline_count", "candidate_count",
        ],
        rows: reductions
            .iter()
            .map(|r| {
                vec![
                    Field::Str(r.contest.clone()),
                    Field::Str(r.category.name().into()),
                    Field::Real(r.margin),
                    Field::Str(baseline.to_string()),
                    Field::Str(candidate.to_string()),
                    Field::Real(r.baseline_mean),
                    Field::Real(r.candidate_mean),
                    Field::Real(r.reduction),
                    Field::Real(r.combined_se),
                    Field::Int(r.baseline_count as i64),
                    Field::Int(r.candidate_count as i64),
                ]
            })
            .collect(),
    }
}

/// Parses records back from a delimited report, as written by
/// [`records_table`].
pub fn read_records_csv(text: &str) -> Result<Vec<SimRecord>, String> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("missing column {name}"));
    let idx: Vec<usize> = records_table(&[]).columns.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| e.to_string())?;
        let get = |i: usize| row.get(idx[i]).unwrap_or("");
        let bad = |what: &str| format!("row {}: bad {what}", line + 2);
        let real = |i: usize, what: &str| get(i).parse::<f64>().map_err(|_| bad(what));
        let int = |i: usize, what: &str| get(i).parse::<u64>().map_err(|_| bad(what));
        let outcome = match get(8) {
            "certified" => RecordOutcome::Certified,
            "full_count" => RecordOutcome::FullCount,
            "error" => RecordOutcome::Error,
            _ => return Err(bad("outcome")),
        };
        out.push(SimRecord {
            contest: get(0).to_string(),
            category: get(1).parse().map_err(|_| bad("category"))?,
            margin: real(2, "margin")?,
            cell: Cell::new(get(3).parse().map_err(|_| bad("scheme"))?, real(4, "eta0")?, real(5, "d")?),
            replication: int(6, "replication")? as u32,
            seed: int(7, "seed")?,
            outcome,
            sample_size: int(9, "sample_size")?,
            population: int(10, "population")?,
            fraction: real(11, "fraction")?,
            error: Some(get(12).to_string()).filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

/// One-sided upper confidence bound for a binomial proportion
/// (Clopper-Pearson) after `successes` out of `trials`.
pub fn binomial_upper_bound(successes: u64, trials: u64, confidence: f64) -> f64 {
    use statrs::distribution::{Beta, ContinuousCDF};
    assert!(trials > 0 && successes <= trials);
    if successes == trials {
        return 1.0;
    }
    Beta::new(successes as f64 + 1.0, (trials - successes) as f64)
        .expect("positive shape parameters")
        .inverse_cdf(confidence)
}

/// File name `{stem}-{plan hash}.{ext}` for a report of `plan`.
pub fn report_file_name(stem: &str, plan: &SimPlan, format: report::ReportFormat) -> String {
    format!("{stem}-{}.{}", plan.hash(), format.extension())
}

/// Schemes run by the dataset protocol, all at the previous default.
pub fn protocol_schemes() -> Vec<SchemeSpec> {
    vec![
        SchemeSpec::Linear,
        SchemeSpec::Quadratic,
        SchemeSpec::Largest,
        SchemeSpec::LinearPlus,
        SchemeSpec::QuadraticPlus,
        SchemeSpec::LargestCount(5),
        SchemeSpec::LargestMean(5),
        SchemeSpec::LinearCount(7),
        SchemeSpec::LinearMean(7),
        SchemeSpec::Ons(4.0),
    ]
}

/// Every scheme of [`protocol_schemes`] at the previous default, 500
/// replications at a 5% risk limit.
pub fn protocol_plan(contests: Vec<Contest>, seed: u64) -> SimPlan {
    let cells = protocol_schemes().into_iter().map(Cell::previous_default).collect();
    SimPlan::new(contests, cells, DEFAULT_REPLICATIONS, seed)
}

/// Loads every contest file in `dir` (sorted by file name). Files ending
/// in `.json` are read as structured profiles, `.txt` as canonical text,
/// anything else through the margin-irv adapter. Contest ids default to
/// the file stem.
/// Profile format implied by a file extension: `.json` structured, `.txt`
/// canonical text, anything else the margin-IRV layout.
pub fn format_for_path(path: &Path) -> ProfileFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => ProfileFormat::CanonicalStructured,
        Some("txt") => ProfileFormat::CanonicalText,
        _ => ProfileFormat::MarginIrvAdapter,
    }
}

/// Reads one contest; the id defaults to the file stem.
pub fn load_contest_file(path: &Path, format: Option<ProfileFormat>) -> Result<Contest, SimError> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| SimError::Io { path: name.clone(), source: e })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("contest");
    let format = format.unwrap_or_else(|| format_for_path(path));
    parse_profile(&bytes, format, stem).map_err(|e| SimError::Parse { path: name, source: e })
}

/// Reads every file in `dir`, in name order, with formats chosen by
/// [`format_for_path`].
pub fn load_contest_dir(dir: &Path) -> Result<Vec<Contest>, SimError> {
    let io = |e| SimError::Io { path: dir.display().to_string(), source: e };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths.iter().map(|p| load_contest_file(p, None)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballots::{BallotProfile, Ranking};
    use crate::engine::Outcome;

    fn two_candidate(a: u64, b: u64) -> Contest {
        let r = |p: &[usize]| Ranking::new(p.to_vec()).unwrap();
        let profile = BallotProfile::new(vec!["A".into(), "B".into()], vec![(r(&[0]), a), (r(&[1]), b)]).unwrap();
        Contest::new("two", profile, None)
    }

    fn rec(contest: &str, cat: MarginCategory, cell: Cell, n: u64, pop: u64) -> SimRecord {
        SimRecord {
            contest: contest.into(),
            category: cat,
            margin: 0.1,
            cell,
            replication: 0,
            seed: 0,
            outcome: RecordOutcome::Certified,
            sample_size: n,
            population: pop,
            fraction: n as f64 / pop as f64,
            error: None,
        }
    }

    #[test]
    fn decisive_contest_matches_engine_replay() {
        let contest = two_candidate(900, 100);
        let prepared = PreparedContest::new(contest.clone(), false, 6).unwrap();
        let cell = Cell::previous_default(SchemeSpec::Largest);
        for rep in 0..5 {
            let seed = replication_seed(7, "two", &cell, rep);
            let r = simulate_audit(&prepared, &cell, 0.05, seed, rep, 6, Tuning::default());
            // replay the same shuffle through the ballot-level engine path
            let mut order = contest.profile.expand_line_indices();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let config = AuditConfig::new(
                vec!["A".into(), "B".into()],
                0,
                1000,
                0.05,
                SchemeSpec::Largest,
                AlphaParams::previous_default(),
            );
            let mut state = AuditState::new(config).unwrap();
            let out = state
                .run_to_completion(order.iter().map(|&i| contest.profile.lines()[i as usize].ranking.clone()))
                .unwrap();
            assert!(matches!(out, Outcome::Certified { .. }));
            assert_eq!(r.outcome, RecordOutcome::Certified);
            assert_eq!(r.sample_size, out.sample_size());
            assert!(r.sample_size < 100);
            assert_eq!(r, simulate_audit(&prepared, &cell, 0.05, seed, rep, 6, Tuning::default()));
        }
    }

    #[test]
    fn exact_tie_goes_to_full_count() {
        let prepared = PreparedContest::new(two_candidate(50, 50), false, 6).unwrap();
        let cell = Cell::previous_default(SchemeSpec::Largest);
        let r = simulate_audit(&prepared, &cell, 0.05, 3, 0, 6, Tuning::default());
        assert_eq!(r.outcome, RecordOutcome::FullCount);
        assert_eq!(r.sample_size, 100);
        assert_eq!(r.fraction, 1.0);
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let cell = Cell::previous_default(SchemeSpec::Largest);
        let s = replication_seed(42, "c", &cell, 0);
        // first 8 bytes of SHA-256("42|c|largest|0.52|50|0")
        let digest = Sha256::digest(b"42|c|largest|0.52|50|0");
        assert_eq!(s, u64::from_le_bytes(digest[..8].try_into().unwrap()));
        assert_ne!(s, replication_seed(42, "c", &cell, 1));
        assert_ne!(s, replication_seed(43, "c", &cell, 0));
        assert_ne!(s, replication_seed(42, "c", &Cell::new(SchemeSpec::Largest, 0.52, 51.0), 0));
    }

    #[test]
    fn plan_rows_and_thread_independence() {
        let plan = SimPlan::new(vec![two_candidate(70, 30)], vec![Cell::previous_default(SchemeSpec::Largest)], 5, 1);
        let one = run_plan(&plan, 1).unwrap();
        assert_eq!(one.len(), 5);
        let three = run_plan(&plan, 3).unwrap();
        assert_eq!(records_table(&one).to_csv(), records_table(&three).to_csv());
        assert_eq!(SimPlan::grid(vec![two_candidate(70, 30)], &[SchemeSpec::Largest], &GRID_ETA0, &GRID_D, 1, 0).cells.len(), 24);
    }

    #[test]
    fn plan_validation() {
        let cell = Cell::previous_default(SchemeSpec::Largest);
        assert!(matches!(run_plan(&SimPlan::new(vec![], vec![cell], 1, 0), 1), Err(SimError::NoContests)));
        assert!(matches!(run_plan(&SimPlan::new(vec![two_candidate(1, 1)], vec![], 1, 0), 1), Err(SimError::NoCells)));
        assert!(matches!(
            run_plan(&SimPlan::new(vec![two_candidate(1, 1)], vec![cell], 0, 0), 1),
            Err(SimError::NoReplications)
        ));
        let dup = SimPlan::new(vec![two_candidate(1, 1), two_candidate(2, 1)], vec![cell], 1, 0);
        assert!(matches!(run_plan(&dup, 1), Err(SimError::DuplicateContest(_))));
    }

    #[test]
    fn oversize_contest_becomes_error_row() {
        let c = fixtures::synthetic_contest("seven", 7, 1000, 0.2);
        let plan = SimPlan::new(vec![c], vec![Cell::previous_default(SchemeSpec::Largest)], 2, 0);
        let rows = run_plan(&plan, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.outcome == RecordOutcome::Error && r.error.is_some()));
        assert!(aggregate(&rows, GroupBy::Cell).is_empty());
    }

    #[test]
    fn aggregate_arithmetic() {
        let cell = Cell::previous_default(SchemeSpec::Largest);
        let rows: Vec<SimRecord> = [1, 2, 3].iter().map(|&n| rec("x", MarginCategory::Huge, cell, n, 10)).collect();
        let agg = aggregate(&rows, GroupBy::Category);
        assert_eq!(agg.len(), 1);
        assert!((agg[0].mean_fraction - 0.2).abs() < 1e-15);
        assert!((agg[0].se_fraction - 0.1 / 3f64.sqrt()).abs() < 1e-15);
        assert!(!agg[0].degenerate);

        let single = aggregate(&rows[..1], GroupBy::Contest);
        assert_eq!(single[0].se_fraction, 0.0);
        assert!(single[0].degenerate);

        let mut two = rows.clone();
        two.push(rec("y", MarginCategory::Small, cell, 9, 10));
        let agg = aggregate(&two, GroupBy::Category);
        assert_eq!(agg.iter().map(|a| a.group.as_str()).collect::<Vec<_>>(), vec!["Small", "Huge"]);
        let table = aggregates_table(GroupBy::Category, &agg);
        assert_eq!(table.rows.len(), 2);
    }

    #[test]
    fn reductions() {
        let base = Cell::previous_default(SchemeSpec::Largest);
        let cand = Cell::recommended_default(SchemeSpec::Largest);
        let mut rows = vec![
            rec("x", MarginCategory::Small, base, 400, 1000),
            rec("x", MarginCategory::Small, cand, 300, 1000),
            rec("y", MarginCategory::Huge, base, 20, 1000),
            rec("y", MarginCategory::Huge, cand, 25, 1000),
        ];
        let red = compare_reduction(&rows, &base, &cand).unwrap();
        assert_eq!(red[0].reduction, 100.0);
        assert_eq!(red[1].reduction, -5.0);
        assert_eq!(compare_reduction(&rows, &base, &base).unwrap()[0].reduction, 0.0);
        rows.pop();
        assert!(matches!(compare_reduction(&rows, &base, &cand), Err(SimError::MissingCell { .. })));
    }

    #[test]
    fn record_csv_round_trip() {
        let plan = SimPlan::new(
            vec![two_candidate(70, 30)],
            vec![Cell::previous_default(SchemeSpec::LinearCount(7)), Cell::new(SchemeSpec::Ons(4.0), 0.505, 1000.0)],
            3,
            9,
        );
        let rows = run_plan(&plan, 1).unwrap();
        let csv = records_table(&rows).to_csv();
        assert_eq!(csv.lines().count(), 7);
        let back = read_records_csv(&csv).unwrap();
        assert_eq!(back.len(), 6);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.sample_size, b.sample_size);
            assert_eq!(a.seed, b.seed);
            assert!(a.cell.same(&b.cell));
        }
        assert!(report_file_name("records", &plan, report::ReportFormat::Delimited).ends_with(".csv"));
        assert_eq!(plan.hash(), plan.clone().hash());
        let mut other = plan.clone();
        other.seed = 10;
        assert_ne!(plan.hash(), other.hash());
    }

    /// Smallest `p` with `P(X ≤ x; n, p) ≤ 1 − confidence`, by bisection on
    /// the binomial CDF summed directly.
    fn upper_bound_oracle(x: u64, n: u64, confidence: f64) -> f64 {
        let cdf = |p: f64| {
            let mut term = (1.0 - p).powi(n as i32);
            let mut total = term;
            for i in 0..x {
                term *= (n - i) as f64 / (i + 1) as f64 * p / (1.0 - p);
                total += term;
            }
            total
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = (lo + hi) / 2.0;
            if cdf(mid) > 1.0 - confidence {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo + hi) / 2.0
    }

    #[test]
    fn binomial_bound_matches_oracle() {
        for (x, n) in [(0, 2000), (3, 2000), (100, 2000), (10, 50), (49, 50)] {
            let got = binomial_upper_bound(x, n, 0.99);
            let want = upper_bound_oracle(x, n, 0.99);
            assert!((got - want).abs() < 1e-8, "{x}/{n}: {got} vs {want}");
        }
        assert_eq!(binomial_upper_bound(5, 5, 0.99), 1.0);
        // zero events: 1 − 0.01^(1/n)
        assert!((binomial_upper_bound(0, 2000, 0.99) - (1.0 - 0.01f64.powf(1.0 / 2000.0))).abs() < 1e-12);
    }

    #[test]
    fn loads_contest_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.txt"), fixtures::synthetic_contest("b", 3, 100, 0.1).to_canonical_text()).unwrap();
        std::fs::write(
            dir.path().join("a.json"),
            fixtures::synthetic_contest("a", 3, 100, 0.1).to_structured().to_string(),
        )
        .unwrap();
        let got = load_contest_dir(dir.path()).unwrap();
        assert_eq!(got.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn tuning_overrides_reach_the_audit() {
        let contest = fixtures::synthetic_contest("t", 3, 400, 0.1);
        let mut plan = SimPlan::new(vec![contest], vec![Cell::recommended_default(SchemeSpec::Largest)], 3, 1);
        let plain = plan.hash();
        let base = run_plan(&plan, 1).unwrap();
        plan.tuning = Tuning { c: Some(0.4), eps: None };
        assert_ne!(plan.hash(), plain);
        let tuned = run_plan(&plan, 1).unwrap();
        assert!(base.iter().zip(&tuned).any(|(a, b)| a.sample_size != b.sample_size));
        plan.tuning.c = Some(-1.0);
        assert!(matches!(plan.validate(), Err(SimError::Alpha(_))));
    }
}
