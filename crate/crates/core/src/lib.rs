//! Ballot-polling risk-limiting audits of IRV contests using adaptively
//! weighted intersections of ALPHA supermartingales, plus the simulation
//! harness used to compare weighting schemes and ALPHA parameters.

pub mod alpha;
pub mod assertions;
pub mod ballots;
pub mod engine;
pub mod sim;
pub mod weights;
