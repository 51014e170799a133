//! Line-driven audit loop.

use std::io::{BufRead, Write};

use awaire_core::engine::{AuditState, AuditStatus, EngineError};

use crate::CliError;

/// How to treat a line that is not a valid ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OnBadLine {
    /// Report it on stderr and keep reading (interactive entry).
    Skip,
    /// Stop with a data error (ballot files).
    Fail,
}

/// Parses `"A, B, C"` into names; `-` is an empty ranking.
pub fn parse_names(line: &str) -> Vec<&str> {
    if line == "-" {
        return Vec::new();
    }
    line.split(',').map(str::trim).collect()
}

pub fn status_line(state: &AuditState) -> String {
    let doc = state.status_with(1);
    let mut line = format!(
        "draw {}: {}, p_proxy {:.6}, {}/{} alt-orders rejected",
        doc.draws_seen, doc.status, doc.p_proxy, doc.rejected_trackers, doc.num_trackers
    );
    if let Some(h) = doc.hardest.first() {
        line.push_str(&format!(", hardest {} (max {:.4})", h.order.join(","), h.running_max));
    }
    line
}

/// Feeds ballots from `input` until the audit stops or input ends.
///
/// Each line is a comma-separated ranking, `-` for a ballot with no
/// preferences, `undo` to revert the last ballot, or blank to print the
/// full status document. Lines starting with `#` are ignored.
pub fn run<R: BufRead, W: Write>(
    state: &mut AuditState,
    input: R,
    out: &mut W,
    on_bad_line: OnBadLine,
) -> Result<AuditStatus, CliError> {
    let io = |e: std::io::Error| CliError::Data(format!("i/o error: {e}"));
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(io)?;
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            let doc = serde_json::to_string(&state.status()).expect("status serialises");
            writeln!(out, "{doc}").map_err(io)?;
            continue;
        }
        if line.eq_ignore_ascii_case("undo") {
            match state.undo_last() {
                Ok(_) => writeln!(out, "undo: {}", status_line(state)).map_err(io)?,
                Err(e @ EngineError::NothingToUndo) if on_bad_line == OnBadLine::Skip => {
                    eprintln!("line {}: {e}", lineno + 1)
                }
                Err(e) => return Err(CliError::Data(format!("line {}: {e}", lineno + 1))),
            }
            continue;
        }
        let ranking = match state.ranking_from_names(&parse_names(line)) {
            Ok(r) => r,
            Err(e) if on_bad_line == OnBadLine::Skip => {
                eprintln!("line {}: {e}; ballot not recorded", lineno + 1);
                continue;
            }
            Err(e) => return Err(CliError::Data(format!("line {}: {e}", lineno + 1))),
        };
        state.process_ballot(&ranking).map_err(|e| CliError::Data(format!("line {}: {e}", lineno + 1)))?;
        writeln!(out, "{}", status_line(state)).map_err(io)?;
        if state.audit_status() != AuditStatus::Running {
            break;
        }
    }
    let n = state.draws_seen();
    let summary = match state.audit_status() {
        AuditStatus::Certified => format!("certified after {n} draws"),
        AuditStatus::FullCount => format!("full count required: all {n} ballots examined without certification"),
        AuditStatus::Running => format!("input ended after {n} draws; audit not complete"),
    };
    writeln!(out, "{summary}").map_err(io)?;
    out.flush().map_err(io)?;
    Ok(state.audit_status())
}
