//! Ballot profiles, contest files and IRV tabulation.
//!
//! A [`BallotProfile`] is the full population of ballots an audit samples
//! from, stored as distinct rankings with multiplicities. [`irv_tabulate`]
//! is the reference count used to find the reported winner and the
//! last-round margin that places a contest in a [`MarginCategory`].

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense candidate index, `0..k`.
pub type CandidateId = usize;

/// Largest roster a [`StandingSet`] bitmask can hold.
pub const MAX_CANDIDATES: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: candidate {name:?} appears twice in one ranking")]
    DuplicateCandidateInRanking { line: usize, name: String },
    #[error("line {line}: unknown candidate {name:?}")]
    UnknownCandidate { line: usize, name: String },
    #[error("candidate roster is empty")]
    EmptyRoster,
    #[error("candidate {0:?} listed twice in the roster")]
    DuplicateRosterName(String),
    #[error("too many candidates ({0}); at most {MAX_CANDIDATES} are supported")]
    TooManyCandidates(usize),
    #[error("reported winner {0:?} is not on the roster")]
    UnknownReportedWinner(String),
    #[error("contest contains no ballots")]
    NoBallots,
    #[error("structured document: {0}")]
    Structured(String),
}

/// Set of candidates still standing, as a bitmask over candidate indices.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StandingSet(pub u64);

impl StandingSet {
    pub fn full(k: usize) -> Self {
        assert!(k <= MAX_CANDIDATES);
        if k == 64 {
            StandingSet(u64::MAX)
        } else {
            StandingSet((1u64 << k) - 1)
        }
    }

    pub fn from_candidates<I: IntoIterator<Item = CandidateId>>(cands: I) -> Self {
        cands.into_iter().fold(StandingSet(0), |s, c| s.with(c))
    }

    #[inline]
    pub fn contains(self, c: CandidateId) -> bool {
        self.0 >> c & 1 == 1
    }

    #[inline]
    pub fn with(self, c: CandidateId) -> Self {
        StandingSet(self.0 | 1 << c)
    }

    #[inline]
    pub fn without(self, c: CandidateId) -> Self {
        StandingSet(self.0 & !(1 << c))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Members in ascending index order.
    pub fn iter(self) -> impl Iterator<Item = CandidateId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let c = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(c)
            }
        })
    }
}

impl fmt::Debug for StandingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// A voter's preference list. May be partial or empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ranking(Vec<CandidateId>);

impl Ranking {
    /// Builds a ranking, returning the first repeated candidate on failure.
    pub fn new(prefs: Vec<CandidateId>) -> Result<Self, CandidateId> {
        let mut seen = 0u64;
        for &c in &prefs {
            if c >= MAX_CANDIDATES || seen >> c & 1 == 1 {
                return Err(c);
            }
            seen |= 1 << c;
        }
        Ok(Ranking(prefs))
    }

    pub fn empty() -> Self {
        Ranking(Vec::new())
    }

    pub fn prefs(&self) -> &[CandidateId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Highest-ranked candidate of `ranking` that is still in `standing`, or
/// `None` when the ballot is exhausted for that standing set.
#[inline]
pub fn restricted_first_choice(ranking: &Ranking, standing: StandingSet) -> Option<CandidateId> {
    ranking.0.iter().copied().find(|&c| standing.contains(c))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallotLine {
    pub ranking: Ranking,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallotProfile {
    candidates: Vec<String>,
    lines: Vec<BallotLine>,
    total: u64,
}

impl BallotProfile {
    /// Builds a profile, merging repeated rankings and dropping zero counts.
    /// Line order follows first appearance.
    pub fn new(
        candidates: Vec<String>,
        lines: impl IntoIterator<Item = (Ranking, u64)>,
    ) -> Result<Self, ParseError> {
        if candidates.is_empty() {
            return Err(ParseError::EmptyRoster);
        }
        if candidates.len() > MAX_CANDIDATES {
            return Err(ParseError::TooManyCandidates(candidates.len()));
        }
        let mut seen = HashMap::new();
        for name in &candidates {
            if seen.insert(name.as_str(), ()).is_some() {
                return Err(ParseError::DuplicateRosterName(name.clone()));
            }
        }
        let k = candidates.len();
        let mut index: HashMap<Ranking, usize> = HashMap::new();
        let mut merged: Vec<BallotLine> = Vec::new();
        for (ranking, count) in lines {
            assert!(
                ranking.prefs().iter().all(|&c| c < k),
                "ranking refers to a candidate outside the roster"
            );
            if count == 0 {
                continue;
            }
            match index.get(&ranking) {
                Some(&i) => merged[i].count += count,
                None => {
                    index.insert(ranking.clone(), merged.len());
                    merged.push(BallotLine { ranking, count });
                }
            }
        }
        let total = merged.iter().map(|l| l.count).sum();
        Ok(BallotProfile { candidates, lines: merged, total })
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn lines(&self) -> &[BallotLine] {
        &self.lines
    }

    /// Total number of ballots, N.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn candidate_index(&self, name: &str) -> Option<CandidateId> {
        self.candidates.iter().position(|c| c == name)
    }

    /// Parses a ranking written as candidate names.
    pub fn ranking_from_names<S: AsRef<str>>(&self, names: &[S]) -> Result<Ranking, RankingError> {
        ranking_from_names(&self.candidates, names)
    }

    /// Per-ballot line indices, each line repeated by its multiplicity.
    pub fn expand_line_indices(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.total as usize);
        for (i, line) in self.lines.iter().enumerate() {
            out.extend(std::iter::repeat_n(i as u32, line.count as usize));
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RankingError {
    #[error("unknown candidate {0:?}")]
    UnknownCandidate(String),
    #[error("candidate {0:?} ranked twice")]
    Duplicate(String),
}

pub fn ranking_from_names<S: AsRef<str>>(
    roster: &[String],
    names: &[S],
) -> Result<Ranking, RankingError> {
    let mut prefs = Vec::with_capacity(names.len());
    for name in names {
        let name = name.as_ref().trim();
        let c = roster
            .iter()
            .position(|r| r == name)
            .ok_or_else(|| RankingError::UnknownCandidate(name.to_string()))?;
        if prefs.contains(&c) {
            return Err(RankingError::Duplicate(name.to_string()));
        }
        prefs.push(c);
    }
    Ok(Ranking(prefs))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contest {
    pub id: String,
    pub profile: BallotProfile,
    pub reported_winner: Option<CandidateId>,
}

impl Contest {
    pub fn new(
        id: impl Into<String>,
        profile: BallotProfile,
        reported_winner: Option<CandidateId>,
    ) -> Self {
        if let Some(w) = reported_winner {
            assert!(w < profile.num_candidates(), "reported winner out of range");
        }
        Contest { id: id.into(), profile, reported_winner }
    }

    /// Writes the contest in the canonical text format.
    pub fn to_canonical_text(&self) -> String {
        let names = self.profile.candidates();
        let mut out = format!("candidates: {}\n", names.join(","));
        if let Some(w) = self.reported_winner {
            out.push_str(&format!("reported_winner: {}\n", names[w]));
        }
        out.push_str("ballots:\n");
        for line in self.profile.lines() {
            if line.ranking.is_empty() {
                out.push('-');
            } else {
                let r: Vec<&str> = line.ranking.prefs().iter().map(|&c| names[c].as_str()).collect();
                out.push_str(&r.join(","));
            }
            out.push_str(&format!(" : {}\n", line.count));
        }
        out
    }

    pub fn to_structured(&self) -> serde_json::Value {
        let names = self.profile.candidates();
        let ballots: Vec<_> = self
            .profile
            .lines()
            .iter()
            .map(|l| {
                let r: Vec<&str> = l.ranking.prefs().iter().map(|&c| names[c].as_str()).collect();
                serde_json::json!({ "ranking": r, "count": l.count })
            })
            .collect();
        serde_json::json!({
            "id": self.id,
            "candidates": names,
            "reported_winner": self.reported_winner.map(|w| names[w].clone()),
            "ballots": ballots,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileFormat {
    CanonicalText,
    CanonicalStructured,
    MarginIrvAdapter,
}

impl std::str::FromStr for ProfileFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical-text" | "text" => Ok(ProfileFormat::CanonicalText),
            "canonical-structured" | "json" => Ok(ProfileFormat::CanonicalStructured),
            "margin-irv-adapter" | "margin-irv" => Ok(ProfileFormat::MarginIrvAdapter),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

/// Parses a contest. `default_id` names the contest when the format
/// carries no id of its own.
pub fn parse_profile(
    text: &[u8],
    format: ProfileFormat,
    default_id: &str,
) -> Result<Contest, ParseError> {
    let text = std::str::from_utf8(text).map_err(|e| ParseError::MalformedLine {
        line: 0,
        message: format!("input is not UTF-8: {e}"),
    })?;
    let contest = match format {
        ProfileFormat::CanonicalText => parse_canonical_text(text, default_id)?,
        ProfileFormat::CanonicalStructured => parse_structured(text)?,
        ProfileFormat::MarginIrvAdapter => parse_margin_irv(text, default_id)?,
    };
    if contest.profile.total() == 0 {
        return Err(ParseError::NoBallots);
    }
    Ok(contest)
}

fn split_count(line: &str, lineno: usize, sep: char) -> Result<(&str, u64), ParseError> {
    let (lhs, rhs) = line.rsplit_once(sep).ok_or_else(|| ParseError::MalformedLine {
        line: lineno,
        message: format!("expected `ranking {sep} count`"),
    })?;
    let rhs = rhs.trim();
    let count = rhs
        .parse::<u64>()
        .ok()
        .filter(|&c| c > 0 && rhs.bytes().all(|b| b.is_ascii_digit()))
        .ok_or_else(|| ParseError::MalformedLine {
            line: lineno,
            message: format!("count {rhs:?} is not a positive integer"),
        })?;
    Ok((lhs.trim(), count))
}

fn names_to_ranking(
    roster: &[String],
    names: &[&str],
    lineno: usize,
) -> Result<Ranking, ParseError> {
    ranking_from_names(roster, names).map_err(|e| match e {
        RankingError::UnknownCandidate(name) => ParseError::UnknownCandidate { line: lineno, name },
        RankingError::Duplicate(name) => ParseError::DuplicateCandidateInRanking { line: lineno, name },
    })
}

fn parse_canonical_text(text: &str, id: &str) -> Result<Contest, ParseError> {
    let mut roster: Option<Vec<String>> = None;
    let mut winner_name: Option<String> = None;
    let mut in_ballots = false;
    let mut lines = Vec::new();

    for (i, raw) in text.split('\n').enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_ballots {
            if let Some(rest) = line.strip_prefix("candidates:") {
                let names: Vec<String> = rest
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if names.is_empty() {
                    return Err(ParseError::EmptyRoster);
                }
                roster = Some(names);
            } else if let Some(rest) = line.strip_prefix("reported_winner:") {
                winner_name = Some(rest.trim().to_string());
            } else if line == "ballots:" {
                if roster.is_none() {
                    return Err(ParseError::MalformedLine {
                        line: lineno,
                        message: "`ballots:` before `candidates:` header".into(),
                    });
                }
                in_ballots = true;
            } else {
                return Err(ParseError::MalformedLine {
                    line: lineno,
                    message: format!("unexpected header line {line:?}"),
                });
            }
            continue;
        }
        let roster = roster.as_ref().expect("checked at `ballots:`");
        let (lhs, count) = split_count(line, lineno, ':')?;
        let ranking = if lhs == "-" {
            Ranking::empty()
        } else {
            let names: Vec<&str> = lhs.split(',').map(str::trim).collect();
            if names.iter().any(|n| n.is_empty()) {
                return Err(ParseError::MalformedLine {
                    line: lineno,
                    message: "empty candidate name in ranking".into(),
                });
            }
            names_to_ranking(roster, &names, lineno)?
        };
        lines.push((ranking, count));
    }

    let roster = roster.ok_or(ParseError::EmptyRoster)?;
    if !in_ballots {
        return Err(ParseError::MalformedLine {
            line: text.lines().count(),
            message: "missing `ballots:` line".into(),
        });
    }
    let profile = BallotProfile::new(roster, lines)?;
    let winner = resolve_winner(&profile, winner_name)?;
    Ok(Contest::new(id, profile, winner))
}

fn resolve_winner(
    profile: &BallotProfile,
    name: Option<String>,
) -> Result<Option<CandidateId>, ParseError> {
    match name {
        None => Ok(None),
        Some(n) => profile
            .candidate_index(&n)
            .map(Some)
            .ok_or(ParseError::UnknownReportedWinner(n)),
    }
}

#[derive(Deserialize)]
struct StructuredContest {
    id: String,
    candidates: Vec<String>,
    #[serde(default)]
    reported_winner: Option<String>,
    ballots: Vec<StructuredBallot>,
}

#[derive(Deserialize)]
struct StructuredBallot {
    ranking: Vec<String>,
    count: u64,
}

fn parse_structured(text: &str) -> Result<Contest, ParseError> {
    let doc: StructuredContest =
        serde_json::from_str(text).map_err(|e| ParseError::Structured(e.to_string()))?;
    if doc.candidates.is_empty() {
        return Err(ParseError::EmptyRoster);
    }
    let mut lines = Vec::with_capacity(doc.ballots.len());
    for (i, b) in doc.ballots.iter().enumerate() {
        if b.count == 0 {
            return Err(ParseError::MalformedLine {
                line: i + 1,
                message: "count must be positive".into(),
            });
        }
        let names: Vec<&str> = b.ranking.iter().map(String::as_str).collect();
        lines.push((names_to_ranking(&doc.candidates, &names, i + 1)?, b.count));
    }
    let profile = BallotProfile::new(doc.candidates, lines)?;
    let winner = resolve_winner(&profile, doc.reported_winner)?;
    Ok(Contest::new(doc.id, profile, winner))
}

/// Best-effort reader for the public margin-irv contest files: an optional
/// candidate-count line, an optional comma-separated candidate-id line, an
/// optional `-+-+-` separator, then `(c1,c2,...) : count` ballot lines
/// (`,count` is accepted in place of `: count`). Without an id line the
/// roster is the sorted set of ids seen on ballots.
fn parse_margin_irv(text: &str, id: &str) -> Result<Contest, ParseError> {
    let mut declared: Option<Vec<String>> = None;
    let mut raw_ballots: Vec<(usize, Vec<String>, u64)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("-+") {
            continue;
        }
        if let Some(rest) = line.strip_prefix('(') {
            let (inner, tail) = rest.split_once(')').ok_or_else(|| ParseError::MalformedLine {
                line: lineno,
                message: "unterminated `(` in ballot line".into(),
            })?;
            let tail = tail.trim();
            let tail = tail
                .strip_prefix(':')
                .or_else(|| tail.strip_prefix(','))
                .ok_or_else(|| ParseError::MalformedLine {
                    line: lineno,
                    message: "expected `: count` after ranking".into(),
                })?
                .trim();
            let count = tail.parse::<u64>().ok().filter(|&c| c > 0).ok_or_else(|| {
                ParseError::MalformedLine { line: lineno, message: format!("bad count {tail:?}") }
            })?;
            let names: Vec<String> = inner
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            raw_ballots.push((lineno, names, count));
        } else if raw_ballots.is_empty() && line.bytes().all(|b| b.is_ascii_digit()) {
            // candidate count; the roster line or the ballots define the roster
        } else if raw_ballots.is_empty() && declared.is_none() && line.contains(',') {
            let ids: Vec<String> = line
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            // "Contest,Options"-style metadata lines have non-numeric fields
            if ids.iter().all(|s| s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')) {
                declared = Some(ids);
            }
        } else if raw_ballots.is_empty() {
            // free-form header metadata
        } else {
            return Err(ParseError::MalformedLine {
                line: lineno,
                message: format!("unrecognised line {line:?}"),
            });
        }
    }

    let roster = match declared {
        Some(r) => r,
        None => {
            let mut ids: Vec<String> =
                raw_ballots.iter().flat_map(|(_, n, _)| n.iter().cloned()).collect();
            ids.sort_by(|a, b| match (a.parse::<i64>(), b.parse::<i64>()) {
                (Ok(x), Ok(y)) => x.cmp(&y),
                _ => a.cmp(b),
            });
            ids.dedup();
            ids
        }
    };
    if roster.is_empty() {
        return Err(ParseError::EmptyRoster);
    }
    let mut lines = Vec::with_capacity(raw_ballots.len());
    for (lineno, names, count) in &raw_ballots {
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        lines.push((names_to_ranking(&roster, &names, *lineno)?, *count));
    }
    let profile = BallotProfile::new(roster, lines)?;
    Ok(Contest::new(id, profile, None))
}

/// Rule for choosing which of several tied lowest candidates is eliminated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    #[default]
    LowestIndex,
    HighestIndex,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTally {
    pub standing: StandingSet,
    /// Indexed by candidate; zero for eliminated candidates.
    pub tallies: Vec<u64>,
    pub exhausted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EliminationRecord {
    /// First eliminated first; the winner is last.
    pub order: Vec<CandidateId>,
    pub rounds: Vec<RoundTally>,
    pub last_round_margin: f64,
}

impl EliminationRecord {
    pub fn winner(&self) -> CandidateId {
        *self.order.last().expect("order is nonempty")
    }

    /// The candidate eliminated in the final round (none when k = 1).
    pub fn runner_up(&self) -> Option<CandidateId> {
        self.order.len().checked_sub(2).map(|i| self.order[i])
    }
}

/// Counts the contest by IRV.
pub fn irv_tabulate(profile: &BallotProfile, tie_break: TieBreak) -> EliminationRecord {
    let k = profile.num_candidates();
    let n = profile.total();
    let mut standing = StandingSet::full(k);
    let mut order = Vec::with_capacity(k);
    let mut rounds = Vec::with_capacity(k.saturating_sub(1));

    while standing.len() > 1 {
        let mut tallies = vec![0u64; k];
        let mut exhausted = 0u64;
        for line in profile.lines() {
            match restricted_first_choice(&line.ranking, standing) {
                Some(c) => tallies[c] += line.count,
                None => exhausted += line.count,
            }
        }
        let min = standing.iter().map(|c| tallies[c]).min().expect("nonempty");
        let mut tied = standing.iter().filter(|&c| tallies[c] == min);
        let out = match tie_break {
            TieBreak::LowestIndex => tied.next(),
            TieBreak::HighestIndex => tied.last(),
        }
        .expect("some candidate holds the minimum");
        rounds.push(RoundTally { standing, tallies, exhausted });
        order.push(out);
        standing = standing.without(out);
    }
    order.extend(standing.iter());

    let last_round_margin = match (rounds.last(), order.len()) {
        (Some(last), len) if len >= 2 && n > 0 => {
            let winner = order[len - 1];
            let runner_up = order[len - 2];
            last.tallies[winner].saturating_sub(last.tallies[runner_up]) as f64 / n as f64
        }
        _ => 1.0,
    };
    EliminationRecord { order, rounds, last_round_margin }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MarginCategory {
    Small,
    Medium,
    Large,
    Huge,
}

impl MarginCategory {
    pub const ALL: [MarginCategory; 4] =
        [MarginCategory::Small, MarginCategory::Medium, MarginCategory::Large, MarginCategory::Huge];

    pub fn name(self) -> &'static str {
        match self {
            MarginCategory::Small => "Small",
            MarginCategory::Medium => "Medium",
            MarginCategory::Large => "Large",
            MarginCategory::Huge => "Huge",
        }
    }
}

impl fmt::Display for MarginCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MarginCategory {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MarginCategory::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown margin category {s:?}"))
    }
}

/// Buckets a last-round margin. Intervals are closed below: Huge ≥ 10%,
/// Large [4%, 10%), Medium [1.5%, 4%), Small < 1.5%.
pub fn margin_category(last_round_margin: f64) -> MarginCategory {
    if last_round_margin >= 0.10 {
        MarginCategory::Huge
    } else if last_round_margin >= 0.04 {
        MarginCategory::Large
    } else if last_round_margin >= 0.015 {
        MarginCategory::Medium
    } else {
        MarginCategory::Small
    }
}
