//! IRV count output.

use awaire_core::ballots::{irv_tabulate, margin_category, Contest, TieBreak};
use serde_json::{json, Value};

pub fn text(contest: &Contest) -> String {
    let names = contest.profile.candidates();
    let rec = irv_tabulate(&contest.profile, TieBreak::LowestIndex);
    let mut out = format!("contest: {}\n", contest.id);
    out.push_str(&format!("ballots: {}\n", contest.profile.total()));
    for (i, round) in rec.rounds.iter().enumerate() {
        let tallies: Vec<String> = round.standing.iter().map(|c| format!("{} {}", names[c], round.tallies[c])).collect();
        out.push_str(&format!(
            "round {}: {}; exhausted {}; eliminated {}\n",
            i + 1,
            tallies.join(", "),
            round.exhausted,
            names[rec.order[i]]
        ));
    }
    let order: Vec<&str> = rec.order.iter().map(|&c| names[c].as_str()).collect();
    out.push_str(&format!("elimination order: {}\n", order.join(", ")));
    out.push_str(&format!("winner: {}\n", names[rec.winner()]));
    if let Some(w) = contest.reported_winner {
        if w != rec.winner() {
            out.push_str(&format!("reported winner {} differs from the IRV winner\n", names[w]));
        }
    }
    out.push_str(&format!(
        "last-round margin: {:.6} ({})\n",
        rec.last_round_margin,
        margin_category(rec.last_round_margin)
    ));
    out
}

pub fn structured(contest: &Contest) -> Value {
    let names = contest.profile.candidates();
    let rec = irv_tabulate(&contest.profile, TieBreak::LowestIndex);
    let rounds: Vec<Value> = rec
        .rounds
        .iter()
        .enumerate()
        .map(|(i, round)| {
            let tallies: serde_json::Map<String, Value> =
                round.standing.iter().map(|c| (names[c].clone(), json!(round.tallies[c]))).collect();
            json!({
                "round": i + 1,
                "tallies": tallies,
                "exhausted": round.exhausted,
                "eliminated": names[rec.order[i]],
            })
        })
        .collect();
    json!({
        "contest": contest.id,
        "ballots": contest.profile.total(),
        "candidates": names,
        "rounds": rounds,
        "elimination_order": rec.order.iter().map(|&c| names[c].clone()).collect::<Vec<_>>(),
        "winner": names[rec.winner()],
        "reported_winner": contest.reported_winner.map(|w| names[w].clone()),
        "last_round_margin": rec.last_round_margin,
        "category": margin_category(rec.last_round_margin).name(),
    })
}
