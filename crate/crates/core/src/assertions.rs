//! Alternative elimination orders and their directly-beats requirements.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ballots::{restricted_first_choice, CandidateId, Ranking, StandingSet};

/// `DB(winner, loser, standing)`: with only `standing` left in the count,
/// `winner` has more votes than `loser`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assertion {
    pub winner: CandidateId,
    pub loser: CandidateId,
    pub standing: StandingSet,
}

impl Assertion {
    pub fn new(winner: CandidateId, loser: CandidateId, standing: StandingSet) -> Self {
        assert_ne!(winner, loser);
        assert!(standing.contains(winner) && standing.contains(loser));
        Assertion { winner, loser, standing }
    }

    /// Canonical ordering key: standing bitmask, then loser, then winner.
    fn key(&self) -> (u64, CandidateId, CandidateId) {
        (self.standing.0, self.loser, self.winner)
    }
}

impl Ord for Assertion {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Assertion {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DB({}, {}, {:?})", self.winner, self.loser, self.standing)
    }
}

/// Assorter value of one ballot for one assertion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Assort {
    /// Ballot counts for the asserted winner.
    For = 0,
    /// Ballot counts for neither, or is exhausted.
    Neutral = 1,
    /// Ballot counts for the asserted loser.
    Against = 2,
}

impl Assort {
    #[inline]
    pub fn value(self) -> f64 {
        self as u8 as f64 * 0.5
    }

    /// Twice the value, as an integer in {0, 1, 2}.
    #[inline]
    pub fn halves(self) -> u64 {
        self as u64
    }
}

/// Assorter for `assertion` on `ballot`: 1 when the ballot's restricted first
/// choice is the asserted loser, 0 when it is the asserted winner, else 1/2.
#[inline]
pub fn assort(assertion: &Assertion, ballot: &Ranking) -> Assort {
    match restricted_first_choice(ballot, assertion.standing) {
        Some(c) if c == assertion.loser => Assort::Against,
        Some(c) if c == assertion.winner => Assort::For,
        _ => Assort::Neutral,
    }
}

/// Rearranges `a` into the next permutation in lexicographic order.
/// Returns false (leaving `a` sorted ascending) after the last one.
fn next_permutation<T: Ord>(a: &mut [T]) -> bool {
    if a.len() < 2 {
        return false;
    }
    let mut i = a.len() - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        a.reverse();
        return false;
    }
    let mut j = a.len() - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Every elimination order (first eliminated first) whose final candidate is
/// not `reported_winner`, in lexicographic order. There are `k! - (k-1)!`.
pub fn enumerate_alt_orders(k: usize, reported_winner: CandidateId) -> Vec<Vec<CandidateId>> {
    assert!(k >= 2 && reported_winner < k);
    let mut perm: Vec<CandidateId> = (0..k).collect();
    let mut out = Vec::new();
    loop {
        if perm[k - 1] != reported_winner {
            out.push(perm.clone());
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    out
}

/// Requirements of an elimination order: at each step the eliminated
/// candidate is directly beaten by every other candidate still standing.
pub fn requirements_for_order(order: &[CandidateId]) -> Vec<Assertion> {
    let k = order.len();
    let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for t in 0..k.saturating_sub(1) {
        let standing = StandingSet::from_candidates(order[t..].iter().copied());
        let out_cand = order[t];
        for beater in standing.without(out_cand).iter() {
            out.push(Assertion::new(beater, out_cand, standing));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AltOrder {
    pub order: Vec<CandidateId>,
    pub requirement_ids: Vec<usize>,
}

/// Deduplicated table of every directly-beats assertion over the standing
/// sets that occur as a suffix of some alt-order, indexed densely in
/// canonical order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssertionRegistry {
    assertions: Vec<Assertion>,
}

impl AssertionRegistry {
    pub fn len(&self) -> usize {
        self.assertions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assertions.is_empty()
    }

    pub fn get(&self, id: usize) -> &Assertion {
        &self.assertions[id]
    }

    pub fn assertions(&self) -> &[Assertion] {
        &self.assertions
    }

    pub fn id_of(&self, a: &Assertion) -> Option<usize> {
        self.assertions.binary_search(a).ok()
    }

    /// Assorter values of `ballot` for every registered assertion, by id.
    pub fn assort_all(&self, ballot: &Ranking, out: &mut Vec<Assort>) {
        out.clear();
        // assertions sharing a standing set are contiguous
        let mut cached: Option<(StandingSet, Option<CandidateId>)> = None;
        for a in &self.assertions {
            let first = match cached {
                Some((s, f)) if s == a.standing => f,
                _ => {
                    let f = restricted_first_choice(ballot, a.standing);
                    cached = Some((a.standing, f));
                    f
                }
            };
            out.push(match first {
                Some(c) if c == a.loser => Assort::Against,
                Some(c) if c == a.winner => Assort::For,
                _ => Assort::Neutral,
            });
        }
    }
}

/// Registers the assertions of every standing set realisable as a suffix of
/// one of `alt_orders` and maps each order's requirements to registry ids.
pub fn build_registry(alt_orders: &[Vec<CandidateId>]) -> (AssertionRegistry, Vec<AltOrder>) {
    let mut standing_sets = BTreeSet::new();
    for order in alt_orders {
        for t in 0..order.len().saturating_sub(1) {
            standing_sets.insert(StandingSet::from_candidates(order[t..].iter().copied()));
        }
    }
    let mut assertions = Vec::new();
    for s in &standing_sets {
        for loser in s.iter() {
            for winner in s.without(loser).iter() {
                assertions.push(Assertion::new(winner, loser, *s));
            }
        }
    }
    assertions.sort();
    let registry = AssertionRegistry { assertions };
    let orders = alt_orders
        .iter()
        .map(|order| AltOrder {
            order: order.clone(),
            requirement_ids: requirements_for_order(order)
                .iter()
                .map(|a| registry.id_of(a).expect("suffix assertions are registered"))
                .collect(),
        })
        .collect();
    (registry, orders)
}

/// Structured export of a registry and per-order requirements, with
/// candidate names.
pub fn export_registry(
    registry: &AssertionRegistry,
    orders: &[AltOrder],
    names: &[String],
) -> serde_json::Value {
    let standing_names =
        |s: StandingSet| s.iter().map(|c| names[c].clone()).collect::<Vec<_>>();
    let assertions: Vec<_> = registry
        .assertions()
        .iter()
        .enumerate()
        .map(|(id, a)| {
            serde_json::json!({
                "id": id,
                "winner": names[a.winner],
                "loser": names[a.loser],
                "standing": standing_names(a.standing),
            })
        })
        .collect();
    let orders: Vec<_> = orders
        .iter()
        .map(|o| {
            serde_json::json!({
                "order": o.order.iter().map(|&c| names[c].clone()).collect::<Vec<_>>(),
                "requirements": o.requirement_ids,
            })
        })
        .collect();
    serde_json::json!({ "assertions": assertions, "alt_orders": orders })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(c: &[usize]) -> StandingSet {
        StandingSet::from_candidates(c.iter().copied())
    }

    fn factorial(n: usize) -> usize {
        (1..=n).product()
    }

    #[test]
    fn alt_order_counts() {
        assert_eq!(enumerate_alt_orders(3, 0).len(), 4);
        assert_eq!(enumerate_alt_orders(6, 2).len(), 600);
        assert_eq!(enumerate_alt_orders(2, 0), vec![vec![0, 1]]);
        for k in 2..=6 {
            for w in 0..k {
                let orders = enumerate_alt_orders(k, w);
                assert_eq!(orders.len(), factorial(k) - factorial(k - 1));
                assert!(orders.iter().all(|o| o[k - 1] != w));
                assert!(orders.windows(2).all(|p| p[0] < p[1]));
            }
        }
    }

    #[test]
    fn requirements_of_three_candidate_order() {
        // order C, B, A
        let reqs: BTreeSet<Assertion> = requirements_for_order(&[2, 1, 0]).into_iter().collect();
        let expected: BTreeSet<Assertion> = [
            Assertion::new(0, 2, set(&[0, 1, 2])),
            Assertion::new(1, 2, set(&[0, 1, 2])),
            Assertion::new(0, 1, set(&[0, 1])),
        ]
        .into_iter()
        .collect();
        assert_eq!(reqs, expected);
        assert_eq!(requirements_for_order(&[0, 1]), vec![Assertion::new(1, 0, set(&[0, 1]))]);
    }

    #[test]
    fn requirement_counts() {
        for k in 2..=6 {
            let order: Vec<usize> = (0..k).rev().collect();
            let expected: usize = (1..k).map(|t| k - t).sum();
            assert_eq!(requirements_for_order(&order).len(), expected);
        }
        assert_eq!(requirements_for_order(&[5, 4, 3, 2, 1, 0]).len(), 15);
    }

    /// Counts ordered pairs over suffix standing sets by brute force.
    fn registry_size_oracle(k: usize, w: usize) -> usize {
        let mut keys = BTreeSet::new();
        for order in enumerate_alt_orders(k, w) {
            for t in 0..k - 1 {
                let s: Vec<usize> = order[t..].to_vec();
                for &i in &s {
                    for &j in &s {
                        if i != j {
                            let mut sorted = s.clone();
                            sorted.sort();
                            keys.insert((sorted, i, j));
                        }
                    }
                }
            }
        }
        keys.len()
    }

    #[test]
    fn registry_sizes() {
        let (reg, orders) = build_registry(&enumerate_alt_orders(2, 0));
        assert_eq!(reg.len(), 2);
        assert_eq!(orders.len(), 1);
        assert_eq!(orders[0].requirement_ids.len(), 1);

        let (reg, _) = build_registry(&enumerate_alt_orders(3, 0));
        assert_eq!(reg.len(), 12);

        for k in 2..=6 {
            let (reg, _) = build_registry(&enumerate_alt_orders(k, 0));
            assert_eq!(reg.len(), registry_size_oracle(k, 0));
            let bound: usize = (2..=k)
                .map(|s| factorial(k) / (factorial(s) * factorial(k - s)) * s * (s - 1))
                .sum();
            assert!(reg.len() <= bound);
        }
        let (reg, _) = build_registry(&enumerate_alt_orders(6, 0));
        assert!(reg.len() <= 480);
    }

    #[test]
    fn registry_is_deterministic_and_consistent() {
        let orders = enumerate_alt_orders(4, 1);
        let (a, oa) = build_registry(&orders);
        let (b, ob) = build_registry(&orders);
        assert_eq!(a.assertions(), b.assertions());
        for (x, y) in oa.iter().zip(&ob) {
            assert_eq!(x.requirement_ids, y.requirement_ids);
        }
        for o in &oa {
            let reqs = requirements_for_order(&o.order);
            for (id, r) in o.requirement_ids.iter().zip(&reqs) {
                assert_eq!(a.get(*id), r);
            }
        }
    }

    #[test]
    fn assorter_values() {
        let c_b_a = Ranking::new(vec![2, 1, 0]).unwrap();
        assert_eq!(assort(&Assertion::new(0, 1, set(&[0, 1, 2])), &c_b_a), Assort::Neutral);
        assert_eq!(assort(&Assertion::new(0, 1, set(&[0, 1])), &c_b_a), Assort::Against);
        let a = Ranking::new(vec![0]).unwrap();
        assert_eq!(assort(&Assertion::new(0, 1, set(&[0, 1])), &a), Assort::For);
        assert_eq!(assort(&Assertion::new(0, 1, set(&[0, 1])), &Ranking::empty()), Assort::Neutral);
        assert_eq!(Assort::Neutral.value(), 0.5);
    }

    #[test]
    fn assort_all_matches_assort() {
        let (reg, _) = build_registry(&enumerate_alt_orders(4, 0));
        let ballots = [vec![3, 1], vec![0, 2, 1, 3], vec![], vec![2]];
        let mut out = Vec::new();
        for b in ballots {
            let b = Ranking::new(b).unwrap();
            reg.assort_all(&b, &mut out);
            for (id, v) in out.iter().enumerate() {
                assert_eq!(*v, assort(reg.get(id), &b));
            }
        }
    }

    #[test]
    fn export_has_names() {
        let names: Vec<String> = vec!["A".into(), "B".into()];
        let (reg, orders) = build_registry(&enumerate_alt_orders(2, 0));
        let doc = export_registry(&reg, &orders, &names);
        assert_eq!(doc["assertions"].as_array().unwrap().len(), 2);
        assert_eq!(doc["alt_orders"][0]["order"], serde_json::json!(["A", "B"]));
    }
}
