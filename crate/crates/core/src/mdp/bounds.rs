//! Drift bounds on average cost from a potential function `h` over states:
//!
//! * upper: `J(μ, x0) ≤ sup_x { r(x, μ(x)) + E[h(X') | x, μ(x)] − h(x) }`
//! * lower: `J(μ*, x0) ≥ inf_{x,u} { r(x, u) + E[h(X') | x, u] − h(x) }`
//!
//! together with the two potentials that make these bounds equal to the
//! k-median optimum (lower) and twice the objective of the deployed medians
//! (upper).

use serde::Serialize;

use super::{MdpError, MdpModel, PolicyTable};
use crate::instance::decode_tuple;
use crate::kmedian::MedianSet;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotentialTable {
    pub values: Vec<f64>,
}

impl PotentialTable {
    pub fn zeros(num_states: usize) -> Self {
        PotentialTable {
            values: vec![0.0; num_states],
        }
    }

    pub fn shifted(&self, offset: f64) -> Self {
        PotentialTable {
            values: self.values.iter().map(|v| v + offset).collect(),
        }
    }
}

fn check_potential(model: &MdpModel, h: &PotentialTable) -> Result<(), MdpError> {
    if h.values.len() != model.num_states() {
        return Err(MdpError::Mismatch(format!(
            "potential has {} entries for {} states",
            h.values.len(),
            model.num_states()
        )));
    }
    if h.values.iter().any(|v| !v.is_finite()) {
        return Err(MdpError::Invalid {
            what: "potential",
            detail: "non-finite value".into(),
        });
    }
    Ok(())
}

/// Upper bound on the gain of `table` from every initial state.
pub fn lemma1_upper(model: &MdpModel, table: &PolicyTable, h: &PotentialTable) -> Result<f64, MdpError> {
    model.check_table(table)?;
    check_potential(model, h)?;
    let future = model.request_average(&h.values);
    Ok((0..model.num_states())
        .map(|s| {
            let a = table.actions[s];
            model.cost(s, a) + future[model.next_position(s, a)] - h.values[s]
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Lower bound on the optimal gain from every initial state.
pub fn lemma1_lower(model: &MdpModel, h: &PotentialTable) -> Result<f64, MdpError> {
    check_potential(model, h)?;
    let future = model.request_average(&h.values);
    Ok((0..model.num_states())
        .flat_map(|s| {
            let future = &future;
            (0..model.num_actions())
                .map(move |a| model.cost(s, a) + future[model.next_position(s, a)] - h.values[s])
        })
        .fold(f64::INFINITY, f64::min))
}

/// Cheapest way to serve the current request(s) from the current positions:
/// `min_i r_i(x_i, x̂)` for single requests, a min-cost matching otherwise.
pub fn canonical_h_lower(model: &MdpModel) -> PotentialTable {
    let instance = model.instance();
    let (num_points, k, n) = (model.num_points(), model.k(), model.requests_per_period());
    let values = (0..model.num_states())
        .map(|s| {
            let positions = decode_tuple(model.position_of(s), num_points, k);
            let request = decode_tuple(model.request_of(s), num_points, n);
            if n == 1 {
                (0..k)
                    .map(|i| instance.service_cost(i, positions[i], request[0]))
                    .fold(f64::INFINITY, f64::min)
            } else {
                model.min_matching(|u, j| instance.service_cost(u, positions[u], request[j]))
            }
        })
        .collect();
    PotentialTable { values }
}

/// Twice the cheapest median-based service of the current request(s), plus
/// the total displacement of each server from its own median.
pub fn canonical_h_upper(model: &MdpModel, medians: &MedianSet) -> Result<PotentialTable, MdpError> {
    let (num_points, k, n) = (model.num_points(), model.k(), model.requests_per_period());
    let m = &medians.medians;
    if m.len() != k || m.iter().any(|&x| x >= num_points) {
        return Err(MdpError::Invalid {
            what: "medians",
            detail: format!("{m:?} for k = {k}, |S| = {num_points}"),
        });
    }
    let instance = model.instance();
    let displacement: Vec<f64> = (0..model.num_positions())
        .map(|pos| {
            decode_tuple(pos, num_points, k)
                .iter()
                .enumerate()
                .map(|(i, &x)| instance.travel(i, x, m[i]))
                .sum()
        })
        .collect();
    let service: Vec<f64> = (0..model.num_requests())
        .map(|r| {
            let request = decode_tuple(r, num_points, n);
            if n == 1 {
                (0..k)
                    .map(|i| instance.service_cost(i, m[i], request[0]))
                    .fold(f64::INFINITY, f64::min)
            } else {
                model.min_matching(|u, j| instance.service_cost(u, m[u], request[j]))
            }
        })
        .collect();
    let values = (0..model.num_states())
        .map(|s| 2.0 * service[model.request_of(s)] + displacement[model.position_of(s)])
        .collect();
    Ok(PotentialTable { values })
}
