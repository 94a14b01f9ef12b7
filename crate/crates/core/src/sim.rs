//! Seeded Monte Carlo simulation of dispatch policies.
//!
//! Replication `r` draws requests from `ChaCha8Rng::seed_from_u64(seed)` with
//! its stream set to `r`, sampling by inverse CDF over the fixed point (or
//! tuple) order. Period `t` serves the current request(s); the initial
//! state's request is served at `t = 0` and fresh requests are drawn after
//! every period.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::instance::{decode_tuple, encode_tuple, Instance, InstanceKind, RequestDistribution};
use crate::mdp::{MdpModel, MdpState, PolicyTable};
use crate::policy::DecentralizedPolicy;

pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.3), seed_from_u64(seed), stream = replication";

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("policy does not match the instance: {0}")]
    Mismatch(String),
    #[error("invalid simulation argument: {0}")]
    InvalidArgument(String),
}

/// A policy the simulator can drive.
#[derive(Clone, Copy, Debug)]
pub enum SimPolicy<'a> {
    Decentralized(&'a DecentralizedPolicy),
    Table {
        model: &'a MdpModel,
        table: &'a PolicyTable,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub burn_in: usize,
}

impl SimConfig {
    /// `burn_in` defaults to a tenth of the horizon.
    pub fn new(horizon: usize, replications: usize, seed: u64) -> Self {
        SimConfig {
            horizon,
            replications,
            seed,
            burn_in: horizon / 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimStats {
    pub horizon: usize,
    pub replications: usize,
    pub burn_in: usize,
    pub mean_cost: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    pub seed: u64,
    pub initial_state: MdpState,
    pub generator: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceStep {
    pub t: usize,
    pub requests: Vec<usize>,
    pub servers: Vec<usize>,
    /// Cost of each request/server pair.
    pub costs: Vec<f64>,
}

impl TraceStep {
    pub fn cost(&self) -> f64 {
        self.costs.iter().sum()
    }
}

enum Sampler {
    /// `n` independent draws from a point cdf.
    Iid { cdf: Vec<f64>, n: usize },
    /// One draw from a cdf over tuple indices.
    Joint { cdf: Vec<f64>, num_points: usize, n: usize },
}

fn cdf_of(pmf: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    pmf.iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

fn inverse_cdf(cdf: &[f64], u: f64) -> usize {
    match cdf.iter().position(|&c| c > u) {
        Some(i) => i,
        // Rounding left the total slightly below u: take the last supported index.
        None => (0..cdf.len())
            .rev()
            .find(|&i| cdf[i] > if i == 0 { 0.0 } else { cdf[i - 1] })
            .unwrap_or(0),
    }
}

impl Sampler {
    fn new(instance: &Instance) -> Self {
        match instance {
            Instance::MultiRequest(m) => match &m.requests {
                RequestDistribution::IidProduct => Sampler::Iid {
                    cdf: cdf_of(&m.base.pmf),
                    n: m.n,
                },
                RequestDistribution::Table(_) => Sampler::Joint {
                    cdf: cdf_of(&m.tuple_pmf()),
                    num_points: m.num_points(),
                    n: m.n,
                },
            },
            other => Sampler::Iid {
                cdf: cdf_of(other.pmf()),
                n: 1,
            },
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [usize]) {
        match self {
            Sampler::Iid { cdf, n } => {
                for slot in out.iter_mut().take(*n) {
                    let u: f64 = rng.gen();
                    *slot = inverse_cdf(cdf, u);
                }
            }
            Sampler::Joint { cdf, num_points, n } => {
                let u: f64 = rng.gen();
                let t = inverse_cdf(cdf, u);
                out.copy_from_slice(&decode_tuple(t, *num_points, *n));
            }
        }
    }
}

fn check(instance: &Instance, policy: SimPolicy, initial: &MdpState) -> Result<(), SimError> {
    let (num_points, k, n) = (instance.num_points(), instance.k(), instance.requests_per_period());
    match policy {
        SimPolicy::Decentralized(p) => {
            let kind_ok = matches!(
                (p, instance.kind()),
                (DecentralizedPolicy::Partition(_), InstanceKind::Metric | InstanceKind::ServerDependent)
                    | (DecentralizedPolicy::Matching(_), InstanceKind::MultiRequest)
            );
            if !kind_ok || p.num_points() != num_points || p.k() != k || p.requests_per_period() != n {
                return Err(SimError::Mismatch(format!(
                    "policy for |S| = {}, k = {}, n = {} on a {} instance with |S| = {num_points}, k = {k}, n = {n}",
                    p.num_points(),
                    p.k(),
                    p.requests_per_period(),
                    instance.kind()
                )));
            }
        }
        SimPolicy::Table { model, table } => {
            if model.instance() != instance {
                return Err(SimError::Mismatch("policy table was built for a different instance".into()));
            }
            if table.actions.len() != model.num_states() {
                return Err(SimError::Mismatch("policy table size differs from the model".into()));
            }
        }
    }
    let valid = initial.server_positions.len() == k
        && initial.request.len() == n
        && initial.server_positions.iter().chain(&initial.request).all(|&x| x < num_points);
    if !valid {
        return Err(SimError::InvalidArgument(format!("initial state {initial:?} does not fit the instance")));
    }
    Ok(())
}

fn decide(policy: SimPolicy, positions: &[usize], requests: &[usize], num_points: usize, out: &mut Vec<usize>) {
    out.clear();
    match policy {
        SimPolicy::Decentralized(DecentralizedPolicy::Partition(p)) => {
            out.extend(requests.iter().map(|&r| p.dispatch(r)))
        }
        SimPolicy::Decentralized(DecentralizedPolicy::Matching(m)) => {
            out.extend(m.dispatch_multi(requests).expect("checked before simulation"))
        }
        SimPolicy::Table { model, table } => {
            let state = encode_tuple(positions, num_points) * model.num_requests() + encode_tuple(requests, num_points);
            out.extend_from_slice(&model.actions()[table.actions[state]]);
        }
    }
}

/// Runs one replication, calling `visit(t, requests, servers, costs)` on
/// every period.
fn run(
    instance: &Instance,
    policy: SimPolicy,
    initial: &MdpState,
    horizon: usize,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(usize, &[usize], &[usize], &[f64]),
) {
    let sampler = Sampler::new(instance);
    let num_points = instance.num_points();
    let mut positions = initial.server_positions.clone();
    let mut requests = initial.request.clone();
    let mut servers = Vec::with_capacity(requests.len());
    let mut costs = Vec::with_capacity(requests.len());
    for t in 0..horizon {
        decide(policy, &positions, &requests, num_points, &mut servers);
        costs.clear();
        costs.extend(
            servers
                .iter()
                .zip(&requests)
                .map(|(&u, &r)| instance.service_cost(u, positions[u], r)),
        );
        for (&u, &r) in servers.iter().zip(&requests) {
            positions[u] = r;
        }
        visit(t, &requests, &servers, &costs);
        sampler.draw(rng, &mut requests);
    }
}

fn replication_rng(seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

/// Estimates the average cost over periods `burn_in..horizon`, averaged
/// across independent replications.
pub fn simulate(
    instance: &Instance,
    policy: SimPolicy,
    initial: &MdpState,
    config: &SimConfig,
) -> Result<SimStats, SimError> {
    check(instance, policy, initial)?;
    if config.horizon <= config.burn_in {
        return Err(SimError::InvalidArgument(format!(
            "horizon {} must exceed burn-in {}",
            config.horizon, config.burn_in
        )));
    }
    if config.replications == 0 {
        return Err(SimError::InvalidArgument("at least one replication is required".into()));
    }
    let window = (config.horizon - config.burn_in) as f64;
    let means: Vec<f64> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(config.seed, r);
            let mut total = 0.0;
            run(instance, policy, initial, config.horizon, &mut rng, |t, _, _, costs| {
                if t >= config.burn_in {
                    total += costs.iter().sum::<f64>();
                }
            });
            total / window
        })
        .collect();
    let reps = means.len() as f64;
    let mean_cost = means.iter().sum::<f64>() / reps;
    let std_error = if means.len() > 1 {
        let var = means.iter().map(|m| (m - mean_cost).powi(2)).sum::<f64>() / (reps - 1.0);
        (var / reps).sqrt()
    } else {
        0.0
    };
    Ok(SimStats {
        horizon: config.horizon,
        replications: config.replications,
        burn_in: config.burn_in,
        mean_cost,
        std_error,
        ci95: (mean_cost - 1.96 * std_error, mean_cost + 1.96 * std_error),
        seed: config.seed,
        initial_state: initial.clone(),
        generator: GENERATOR,
    })
}

/// Period-by-period replay of replication 0.
pub fn trace(
    instance: &Instance,
    policy: SimPolicy,
    initial: &MdpState,
    horizon: usize,
    seed: u64,
) -> Result<Vec<TraceStep>, SimError> {
    check(instance, policy, initial)?;
    let mut rng = replication_rng(seed, 0);
    let mut steps = Vec::with_capacity(horizon);
    run(instance, policy, initial, horizon, &mut rng, |t, requests, servers, costs| {
        steps.push(TraceStep {
            t,
            requests: requests.to_vec(),
            servers: servers.to_vec(),
            costs: costs.to_vec(),
        })
    });
    Ok(steps)
}

/// CSV export: `t,request,server,cost`, or `t,j,request,server,cost` with
/// one row per request/server pair when `multi` is set.
pub fn trace_csv(steps: &[TraceStep], multi: bool) -> String {
    let mut out = String::from(if multi { "t,j,request,server,cost\n" } else { "t,request,server,cost\n" });
    for step in steps {
        for (j, ((r, u), c)) in step.requests.iter().zip(&step.servers).zip(&step.costs).enumerate() {
            if multi {
                out.push_str(&format!("{},{j},{r},{u},{}\n", step.t, crate::report::fmt12(*c)));
            } else {
                out.push_str(&format!("{},{r},{u},{}\n", step.t, crate::report::fmt12(*c)));
            }
        }
    }
    out
}
