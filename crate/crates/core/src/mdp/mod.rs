//! The stochastic k-server problem as an explicit average-cost MDP.
//!
//! A state is the tuple of server positions `(x_1, …, x_k)` together with the
//! current request (or batch of `n` requests). States are numbered
//! lexicographically in `(x_1, …, x_k, x̂_1, …, x̂_n)`, so
//! `state = position_index · |S|^n + request_index`. Coincident servers are
//! kept in the state space.
//!
//! Taking an action moves the dispatched servers onto their requests; the
//! next request is drawn independently of the state. That makes every
//! successor distribution a fixed request pmf attached to one deterministic
//! position tuple, which the solvers exploit by averaging values over
//! requests once per position.

mod bounds;
mod eval;
mod optimal;

pub use bounds::{canonical_h_lower, canonical_h_upper, lemma1_lower, lemma1_upper, PotentialTable};
pub use eval::{evaluate_exact, EvalMethod, EvalResult, RecurrentClass, DENSE_SOLVE_LIMIT};
pub use optimal::{solve_optimal, OptimalSolution, APERIODICITY_ALPHA, MAX_ITERATIONS, SPAN_TOLERANCE};

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::instance::{decode_tuple, encode_tuple, Instance, InstanceKind};
use crate::matching::{min_assignment_cost, CostMatrix};
use crate::policy::DecentralizedPolicy;

/// `build_mdp` refuses models with more states than this.
pub const STATE_LIMIT: usize = 2_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("state space of {count} states exceeds the limit of {limit}")]
    StateSpaceTooLarge { count: u128, limit: usize },
    #[error("{what} block of {size} states exceeds the dense solver limit of {limit}")]
    DenseSolveTooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },
    #[error("linear system is singular or ill-conditioned ({0})")]
    Singular(String),
    #[error("relative value iteration did not converge after {iterations} iterations (span {span:e})")]
    NonConvergence { iterations: usize, span: f64 },
    #[error("policy does not match the model: {0}")]
    Mismatch(String),
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct MdpState {
    pub server_positions: Vec<usize>,
    /// One point for single-request models, `n` points otherwise.
    pub request: Vec<usize>,
}

/// Action per state; each entry indexes `MdpModel::actions`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyTable {
    pub actions: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct MdpModel {
    instance: Instance,
    num_points: usize,
    k: usize,
    n: usize,
    num_positions: usize,
    num_requests: usize,
    /// Injective server tuples, one server per request, in lexicographic order.
    actions: Vec<Vec<usize>>,
    action_lookup: HashMap<Vec<usize>, usize>,
    request_pmf: Vec<f64>,
    request_support: Vec<(usize, f64)>,
    cost: Vec<f64>,
    next_position: Vec<u32>,
}

fn injective_tuples(k: usize, n: usize) -> Vec<Vec<usize>> {
    fn extend(k: usize, n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for u in 0..k {
            if !prefix.contains(&u) {
                prefix.push(u);
                extend(k, n, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(k, n, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Materializes the MDP of an instance.
pub fn build_mdp(instance: &Instance) -> Result<MdpModel, MdpError> {
    let num_points = instance.num_points();
    let k = instance.k();
    let n = instance.requests_per_period();
    if num_points == 0 || k == 0 || n == 0 || n > k {
        return Err(MdpError::Invalid {
            what: "instance",
            detail: format!("|S| = {num_points}, k = {k}, n = {n}"),
        });
    }
    let count = (num_points as u128).saturating_pow((k + n) as u32);
    if count > STATE_LIMIT as u128 {
        return Err(MdpError::StateSpaceTooLarge {
            count,
            limit: STATE_LIMIT,
        });
    }
    let num_positions = num_points.pow(k as u32);
    let num_requests = num_points.pow(n as u32);
    let num_states = num_positions * num_requests;
    let actions = injective_tuples(k, n);
    let action_lookup = actions.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
    let request_pmf = instance.request_tuple_pmf();
    let request_support = request_pmf
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > 0.0)
        .map(|(r, &p)| (r, p))
        .collect();
    let num_actions = actions.len();

    let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..num_states)
        .into_par_iter()
        .map(|state| {
            let mut positions = decode_tuple(state / num_requests, num_points, k);
            let request = decode_tuple(state % num_requests, num_points, n);
            let mut costs = Vec::with_capacity(num_actions);
            let mut nexts = Vec::with_capacity(num_actions);
            for action in &actions {
                let mut c = 0.0;
                for (j, &u) in action.iter().enumerate() {
                    c += instance.service_cost(u, positions[u], request[j]);
                }
                costs.push(c);
                let saved: Vec<usize> = action.iter().map(|&u| positions[u]).collect();
                for (j, &u) in action.iter().enumerate() {
                    positions[u] = request[j];
                }
                nexts.push(encode_tuple(&positions, num_points) as u32);
                for (&u, &x) in action.iter().zip(&saved) {
                    positions[u] = x;
                }
            }
            (costs, nexts)
        })
        .collect();
    let mut cost = Vec::with_capacity(num_states * num_actions);
    let mut next_position = Vec::with_capacity(num_states * num_actions);
    for (c, nx) in rows {
        cost.extend(c);
        next_position.extend(nx);
    }
    Ok(MdpModel {
        instance: instance.clone(),
        num_points,
        k,
        n,
        num_positions,
        num_requests,
        actions,
        action_lookup,
        request_pmf,
        request_support,
        cost,
        next_position,
    })
}

impl MdpModel {
    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn kind(&self) -> InstanceKind {
        self.instance.kind()
    }

    pub fn num_states(&self) -> usize {
        self.num_positions * self.num_requests
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn requests_per_period(&self) -> usize {
        self.n
    }

    pub fn num_positions(&self) -> usize {
        self.num_positions
    }

    pub fn num_requests(&self) -> usize {
        self.num_requests
    }

    /// Server tuple for each action index.
    pub fn actions(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn action_index(&self, servers: &[usize]) -> Option<usize> {
        self.action_lookup.get(servers).copied()
    }

    pub fn request_pmf(&self) -> &[f64] {
        &self.request_pmf
    }

    /// Request tuples with positive probability, as `(request_index, p)`.
    pub fn request_support(&self) -> &[(usize, f64)] {
        &self.request_support
    }

    pub fn state(&self, index: usize) -> MdpState {
        MdpState {
            server_positions: decode_tuple(index / self.num_requests, self.num_points, self.k),
            request: decode_tuple(index % self.num_requests, self.num_points, self.n),
        }
    }

    pub fn state_index(&self, state: &MdpState) -> Result<usize, MdpError> {
        let ok = state.server_positions.len() == self.k
            && state.request.len() == self.n
            && state
                .server_positions
                .iter()
                .chain(&state.request)
                .all(|&p| p < self.num_points);
        if !ok {
            return Err(MdpError::Invalid {
                what: "state",
                detail: format!("{state:?}"),
            });
        }
        Ok(encode_tuple(&state.server_positions, self.num_points) * self.num_requests
            + encode_tuple(&state.request, self.num_points))
    }

    #[inline]
    pub fn position_of(&self, state: usize) -> usize {
        state / self.num_requests
    }

    #[inline]
    pub fn request_of(&self, state: usize) -> usize {
        state % self.num_requests
    }

    #[inline]
    pub fn cost(&self, state: usize, action: usize) -> f64 {
        self.cost[state * self.actions.len() + action]
    }

    /// Server positions after taking `action` in `state`.
    #[inline]
    pub fn next_position(&self, state: usize, action: usize) -> usize {
        self.next_position[state * self.actions.len() + action] as usize
    }

    /// Positive-probability successors of `(state, action)`.
    pub fn successors(&self, state: usize, action: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let base = self.next_position(state, action) * self.num_requests;
        self.request_support.iter().map(move |&(r, p)| (base + r, p))
    }

    /// Dense transition row over all states.
    pub fn transition_row(&self, state: usize, action: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.num_states()];
        for (next, p) in self.successors(state, action) {
            row[next] += p;
        }
        row
    }

    /// `Σ_r p(r) · values[position · |S|^n + r]` for every position.
    pub(crate) fn request_average(&self, values: &[f64]) -> Vec<f64> {
        (0..self.num_positions)
            .map(|pos| {
                let base = pos * self.num_requests;
                self.request_support.iter().map(|&(r, p)| p * values[base + r]).sum()
            })
            .collect()
    }

    pub(crate) fn check_table(&self, table: &PolicyTable) -> Result<(), MdpError> {
        if table.actions.len() != self.num_states() {
            return Err(MdpError::Mismatch(format!(
                "table has {} entries for {} states",
                table.actions.len(),
                self.num_states()
            )));
        }
        if let Some(&a) = table.actions.iter().find(|&&a| a >= self.num_actions()) {
            return Err(MdpError::Mismatch(format!("action {a} out of range")));
        }
        Ok(())
    }

    /// Minimum over injective assignments of `Σ_j cost(u_j, j)` where
    /// `cost(u, j)` is supplied by the caller.
    pub(crate) fn min_matching(&self, mut cost: impl FnMut(usize, usize) -> f64) -> f64 {
        let mut data = Vec::with_capacity(self.n * self.k);
        for j in 0..self.n {
            for u in 0..self.k {
                data.push(cost(u, j));
            }
        }
        min_assignment_cost(&CostMatrix::new(self.n, self.k, &data))
    }
}

/// Table form of a decentralized policy. The action at every state depends
/// only on the request component.
pub fn policy_from_partition(model: &MdpModel, policy: &DecentralizedPolicy) -> Result<PolicyTable, MdpError> {
    if policy.num_points() != model.num_points || policy.k() != model.k {
        return Err(MdpError::Mismatch(format!(
            "policy for |S| = {}, k = {} applied to model with |S| = {}, k = {}",
            policy.num_points(),
            policy.k(),
            model.num_points,
            model.k
        )));
    }
    let compatible = matches!(
        (policy, model.kind()),
        (DecentralizedPolicy::Partition(_), InstanceKind::Metric | InstanceKind::ServerDependent)
            | (DecentralizedPolicy::Matching(_), InstanceKind::MultiRequest)
    );
    if !compatible || policy.requests_per_period() != model.n {
        return Err(MdpError::Mismatch(format!(
            "policy kind does not fit a {} model",
            model.kind()
        )));
    }
    let per_request: Vec<usize> = (0..model.num_requests)
        .map(|r| {
            let request = decode_tuple(r, model.num_points, model.n);
            let servers = policy
                .dispatch_batch(&request)
                .map_err(|e| MdpError::Mismatch(e.to_string()))?;
            model
                .action_index(&servers)
                .ok_or_else(|| MdpError::Mismatch(format!("dispatch {servers:?} is not an action")))
        })
        .collect::<Result<_, _>>()?;
    Ok(PolicyTable {
        actions: (0..model.num_states()).map(|s| per_request[model.request_of(s)]).collect(),
    })
}

/// Cheapest immediate action in every state, lowest index on ties.
pub fn greedy_policy(model: &MdpModel) -> PolicyTable {
    let actions = (0..model.num_states())
        .map(|s| {
            let mut best = 0;
            for a in 1..model.num_actions() {
                if model.cost(s, a) < model.cost(s, best) {
                    best = a;
                }
            }
            best
        })
        .collect();
    PolicyTable { actions }
}
