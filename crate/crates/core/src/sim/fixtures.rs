//! Synthetic contests with a chosen last-round margin.
//!
//! Recipe, for `k` candidates named `A`, `B`, `C`, ... and `N` ballots:
//!
//! * the minor candidates `C`.. hold fixed first-preference shares (for
//!   `k = 6`: 12%, 8%, 6%, 4%; for `k = 3`: 20%; otherwise an even split of
//!   30%), rounded down to multiples of 5 ballots;
//! * each minor candidate's ballots are split 40% `[X, A, B]`, 40%
//!   `[X, B, A]` and 20% `[X]` (exhausting);
//! * the remaining ballots are single-preference `[A]` or `[B]`, divided so
//!   that `A` leads `B` by `round(margin · N)` ballots, rounded to an even
//!   number.
//!
//! Transfers from minor candidates are symmetric, so `A` wins and the
//! last-round margin equals the first-preference lead of `A` over `B`.

use crate::ballots::{BallotProfile, Contest, MarginCategory, Ranking};

/// Margin used for each category's fixture.
pub fn category_margin(category: MarginCategory) -> f64 {
    match category {
        MarginCategory::Small => 0.01,
        MarginCategory::Medium => 0.025,
        MarginCategory::Large => 0.06,
        MarginCategory::Huge => 0.15,
    }
}

fn minor_shares(k: usize) -> Vec<f64> {
    match k {
        2 => vec![],
        3 => vec![0.20],
        6 => vec![0.12, 0.08, 0.06, 0.04],
        _ => vec![0.30 / (k - 2) as f64; k - 2],
    }
}

/// Builds the synthetic contest described in the module docs.
pub fn synthetic_contest(id: &str, k: usize, population: u64, margin: f64) -> Contest {
    synthetic_contest_with_minors(id, population, margin, &minor_shares(k))
}

/// Like [`synthetic_contest`] with explicit minor-candidate shares; the
/// contest has `minors.len() + 2` candidates.
pub fn synthetic_contest_with_minors(id: &str, population: u64, margin: f64, minors: &[f64]) -> Contest {
    let k = minors.len() + 2;
    assert!(k <= 26, "fixture names run from A to Z");
    assert!((0.0..1.0).contains(&margin));
    let names: Vec<String> = (0..k).map(|i| ((b'A' + i as u8) as char).to_string()).collect();
    let r = |p: &[usize]| Ranking::new(p.to_vec()).expect("distinct");

    let mut lines = Vec::new();
    let mut minor_total = 0u64;
    for (i, &share) in minors.iter().enumerate() {
        let x = i + 2;
        let count = ((share * population as f64) as u64) / 5 * 5;
        let split = count * 2 / 5;
        lines.push((r(&[x, 0, 1]), split));
        lines.push((r(&[x, 1, 0]), split));
        lines.push((r(&[x]), count - 2 * split));
        minor_total += count;
    }
    let major = population - minor_total;
    let lead = ((margin * population as f64 / 2.0).round() as u64 * 2).min(major);
    let a = (major + lead) / 2;
    lines.push((r(&[0]), a));
    lines.push((r(&[1]), major - a));

    let profile = BallotProfile::new(names, lines).expect("valid roster");
    Contest::new(id, profile, Some(0))
}

/// One `k`-candidate fixture per margin category, Small first, with ids
/// `synthetic-k{k}-{category}`.
pub fn category_suite(k: usize, population: u64) -> Vec<Contest> {
    MarginCategory::ALL
        .iter()
        .map(|&c| {
            let id = format!("synthetic-k{k}-{}", c.name().to_ascii_lowercase());
            synthetic_contest(&id, k, population, category_margin(c))
        })
        .collect()
}
