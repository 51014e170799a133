use awaire_core::alpha::AlphaParams;
use awaire_core::ballots::Ranking;
use awaire_core::engine::{AuditConfig, AuditState};
use awaire_core::weights::SchemeSpec;
use awaire_service::{CreateSession, Sessions, REPLY_HARDEST, STATUS_HARDEST};
use proptest::prelude::*;

const NAMES: [&str; 3] = ["A", "B", "C"];

#[derive(Clone, Debug)]
enum Op {
    Ballot(Vec<&'static str>),
    Undo,
}

fn op() -> impl Strategy<Value = Op> {
    let ballot = (Just(NAMES.to_vec()).prop_shuffle(), 0usize..=3).prop_map(|(p, n)| Op::Ballot(p[..n].to_vec()));
    prop_oneof![4 => ballot, 1 => Just(Op::Undo)]
}

fn request(scheme: &str) -> CreateSession {
    serde_json::from_value(serde_json::json!({
        "candidates": NAMES,
        "reported_winner": "A",
        "N": 80,
        "scheme": scheme,
    }))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn service_matches_engine_replay(
        ops in prop::collection::vec(op(), 1..60),
        scheme in prop_oneof![Just("largest"), Just("linear-mean:3"), Just("ons:4")],
    ) {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        rt.block_on(async {
            let app = Sessions::in_memory();
            let id = app.create(&request(scheme)).unwrap().id;
            let config = AuditConfig::new(
                NAMES.map(String::from).to_vec(),
                0,
                80,
                0.05,
                scheme.parse::<SchemeSpec>().unwrap(),
                AlphaParams::recommended_default(),
            );
            let mut accepted: Vec<Ranking> = Vec::new();
            for op in &ops {
                match op {
                    Op::Ballot(names) => match app.submit(&id, &names.iter().map(|s| s.to_string()).collect::<Vec<_>>()).await {
                        Ok(reply) => {
                            accepted.push(Ranking::new(names.iter().map(|n| NAMES.iter().position(|m| m == n).unwrap()).collect()).unwrap());
                            let engine = AuditState::replay(config.clone(), &accepted).unwrap();
                            prop_assert_eq!(reply.status, engine.status_with(REPLY_HARDEST));
                        }
                        Err(e) => {
                            prop_assert_eq!(e.status.as_u16(), 409);
                            prop_assert!(AuditState::replay(config.clone(), &accepted).unwrap().outcome().is_some());
                        }
                    },
                    Op::Undo => match app.undo(&id).await {
                        Ok(reply) => {
                            accepted.pop();
                            let engine = AuditState::replay(config.clone(), &accepted).unwrap();
                            prop_assert_eq!(reply.status, engine.status_with(STATUS_HARDEST));
                        }
                        Err(e) => {
                            prop_assert_eq!(e.status.as_u16(), 409);
                            prop_assert!(accepted.is_empty());
                        }
                    },
                }
            }
            Ok(())
        })?;
    }
}
