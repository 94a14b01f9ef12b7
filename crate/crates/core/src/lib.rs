//! Stochastic k-server dispatch: instances, k-median solvers, decentralized
//! partition policies, an exact average-cost MDP toolkit, Monte Carlo
//! simulation, and the certification harness built on top of them.

pub mod experiment;
pub mod instance;
pub mod kmedian;
pub mod matching;
pub mod mdp;
pub mod policy;
pub mod report;
pub mod sim;
