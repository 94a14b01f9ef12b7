use rayon::prelude::*;

use super::{evaluate_exact, EvalResult, MdpError, MdpModel, PolicyTable};

/// Weight of the original kernel in `(1 − α) I + α P`.
pub const APERIODICITY_ALPHA: f64 = 0.9;
/// Stop once `max(Th − h) − min(Th − h)` falls below this.
pub const SPAN_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 1_000_000;

#[derive(Clone, Debug)]
pub struct OptimalSolution {
    pub table: PolicyTable,
    pub eval: EvalResult,
    pub iterations: usize,
    /// Final span of the Bellman update, an a-posteriori bracket on the gain.
    pub span: f64,
    pub gain_bracket: (f64, f64),
}

/// `c(x, a) + α · E[h(next) | x, a]` minimized over actions; returns the
/// minimum and the lowest minimizing action.
#[inline]
fn best_action(model: &MdpModel, future: &[f64], s: usize) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for a in 0..model.num_actions() {
        let q = model.cost(s, a) + APERIODICITY_ALPHA * future[model.next_position(s, a)];
        if q < best {
            best = q;
            arg = a;
        }
    }
    (best, arg)
}

/// Average-cost optimal policy by relative value iteration on the
/// aperiodicity-transformed kernel, followed by an exact evaluation of the
/// extracted greedy policy.
pub fn solve_optimal(model: &MdpModel) -> Result<OptimalSolution, MdpError> {
    let num_states = model.num_states();
    let mut h = vec![0.0; num_states];
    let mut iterations = 0;
    let mut span = f64::INFINITY;
    let mut bracket = (f64::NEG_INFINITY, f64::INFINITY);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let future = model.request_average(&h);
        let updated: Vec<f64> = (0..num_states)
            .into_par_iter()
            .map(|s| best_action(model, &future, s).0 + (1.0 - APERIODICITY_ALPHA) * h[s])
            .collect();
        let (lo, hi) = updated
            .iter()
            .zip(&h)
            .map(|(t, v)| t - v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        span = hi - lo;
        bracket = (lo, hi);
        let reference = updated[0];
        h = updated.into_iter().map(|v| v - reference).collect();
        if span < SPAN_TOLERANCE {
            break;
        }
    }
    if span >= SPAN_TOLERANCE {
        return Err(MdpError::NonConvergence { iterations, span });
    }
    let future = model.request_average(&h);
    let table = PolicyTable {
        actions: (0..num_states)
            .into_par_iter()
            .map(|s| best_action(model, &future, s).1)
            .collect(),
    };
    let eval = evaluate_exact(model, &table)?;
    Ok(OptimalSolution {
        table,
        eval,
        iterations,
        span,
        gain_bracket: bracket,
    })
}
