use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use super::{MdpError, MdpModel, PolicyTable};

/// Largest block (recurrent class or transient set) solved densely.
pub const DENSE_SOLVE_LIMIT: usize = 6000;
/// Residual above which a linear solve counts as a numerical breakdown.
const RESIDUAL_LIMIT: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMethod {
    Exact,
    Iterative,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecurrentClass {
    pub states: Vec<usize>,
    pub gain: f64,
    /// Stationary distribution over `states`, same order.
    pub stationary: Vec<f64>,
}

/// Long-run average cost of a policy from every initial state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub gain: Vec<f64>,
    pub recurrent_classes: Vec<RecurrentClass>,
    /// Row-major `num_states × num_classes` absorption probabilities.
    #[serde(skip)]
    pub absorption: Vec<f64>,
    pub method: EvalMethod,
}

impl EvalResult {
    pub fn is_unichain(&self) -> bool {
        self.recurrent_classes.len() == 1
    }

    pub fn max_gain(&self) -> f64 {
        self.gain.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_gain(&self) -> f64 {
        self.gain.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Probability of ending in each recurrent class when started at `state`.
    pub fn absorption(&self, state: usize) -> &[f64] {
        let c = self.recurrent_classes.len();
        &self.absorption[state * c..(state + 1) * c]
    }
}

fn solve(a: DMatrix<f64>, b: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>, MdpError> {
    let x = a
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| MdpError::Singular(format!("{what}: LU factorization failed")))?;
    let residual = (&a * &x - &b).amax();
    if !residual.is_finite() || residual > RESIDUAL_LIMIT {
        return Err(MdpError::Singular(format!("{what}: residual {residual:e}")));
    }
    Ok(x)
}

fn check_dense(what: &'static str, size: usize) -> Result<(), MdpError> {
    if size > DENSE_SOLVE_LIMIT {
        Err(MdpError::DenseSolveTooLarge {
            what,
            size,
            limit: DENSE_SOLVE_LIMIT,
        })
    } else {
        Ok(())
    }
}

/// Exact average cost of `table` from every initial state.
///
/// The induced chain is split into recurrent classes (closed strongly
/// connected components). Each class gain is the stationary expectation of
/// the one-step cost; transient states take the absorption-weighted mix of
/// class gains.
pub fn evaluate_exact(model: &MdpModel, table: &PolicyTable) -> Result<EvalResult, MdpError> {
    model.check_table(table)?;
    let num_states = model.num_states();
    let support = model.request_support();
    let num_requests = model.num_requests();
    let base_of = |s: usize| model.next_position(s, table.actions[s]) * num_requests;

    let mut graph = DiGraph::<(), ()>::with_capacity(num_states, num_states * support.len());
    let nodes: Vec<_> = (0..num_states).map(|_| graph.add_node(())).collect();
    for s in 0..num_states {
        let base = base_of(s);
        for &(r, _) in support {
            graph.add_edge(nodes[s], nodes[base + r], ());
        }
    }
    let components = tarjan_scc(&graph);
    let mut component_of = vec![0usize; num_states];
    for (c, comp) in components.iter().enumerate() {
        for node in comp {
            component_of[node.index()] = c;
        }
    }
    let mut classes: Vec<Vec<usize>> = components
        .iter()
        .enumerate()
        .filter(|(c, comp)| {
            comp.iter().all(|node| {
                let base = base_of(node.index());
                support.iter().all(|&(r, _)| component_of[base + r] == *c)
            })
        })
        .map(|(_, comp)| {
            let mut states: Vec<usize> = comp.iter().map(|n| n.index()).collect();
            states.sort_unstable();
            states
        })
        .collect();
    classes.sort_unstable_by_key(|states| states[0]);

    const TRANSIENT: usize = usize::MAX;
    let mut class_of = vec![TRANSIENT; num_states];
    let mut local = vec![0usize; num_states];
    for (c, states) in classes.iter().enumerate() {
        for (i, &s) in states.iter().enumerate() {
            class_of[s] = c;
            local[s] = i;
        }
    }

    let mut recurrent_classes = Vec::with_capacity(classes.len());
    for (c, states) in classes.iter().enumerate() {
        let m = states.len();
        check_dense("recurrent class", m)?;
        let stationary = if m == 1 {
            vec![1.0]
        } else {
            // π (P_C − I) = 0 with the last balance equation replaced by Σπ = 1.
            let mut a = DMatrix::<f64>::zeros(m, m);
            for (i, &s) in states.iter().enumerate() {
                a[(i, i)] -= 1.0;
                let base = base_of(s);
                for &(r, p) in support {
                    let j = local[base + r];
                    debug_assert_eq!(class_of[base + r], c);
                    a[(j, i)] += p;
                }
            }
            for i in 0..m {
                a[(m - 1, i)] = 1.0;
            }
            let mut b = DMatrix::<f64>::zeros(m, 1);
            b[(m - 1, 0)] = 1.0;
            solve(a, b, "stationary distribution")?.column(0).iter().copied().collect()
        };
        let gain = states
            .iter()
            .zip(&stationary)
            .map(|(&s, &pi)| pi * model.cost(s, table.actions[s]))
            .sum();
        recurrent_classes.push(RecurrentClass {
            states: states.clone(),
            gain,
            stationary,
        });
    }

    let num_classes = classes.len();
    let mut absorption = vec![0.0; num_states * num_classes];
    for s in 0..num_states {
        if class_of[s] != TRANSIENT {
            absorption[s * num_classes + class_of[s]] = 1.0;
        }
    }
    let transient: Vec<usize> = (0..num_states).filter(|&s| class_of[s] == TRANSIENT).collect();
    if !transient.is_empty() {
        let t = transient.len();
        check_dense("transient set", t)?;
        for (i, &s) in transient.iter().enumerate() {
            local[s] = i;
        }
        // (I − Q) B = R, with R[i][c] the one-step probability of entering class c.
        let mut a = DMatrix::<f64>::identity(t, t);
        let mut b = DMatrix::<f64>::zeros(t, num_classes);
        for (i, &s) in transient.iter().enumerate() {
            let base = base_of(s);
            for &(r, p) in support {
                let next = base + r;
                match class_of[next] {
                    TRANSIENT => a[(i, local[next])] -= p,
                    c => b[(i, c)] += p,
                }
            }
        }
        let x = solve(a, b, "absorption probabilities")?;
        for (i, &s) in transient.iter().enumerate() {
            for c in 0..num_classes {
                absorption[s * num_classes + c] = x[(i, c)];
            }
        }
    }

    let gain = (0..num_states)
        .map(|s| match class_of[s] {
            TRANSIENT => (0..num_classes)
                .map(|c| absorption[s * num_classes + c] * recurrent_classes[c].gain)
                .sum(),
            c => recurrent_classes[c].gain,
        })
        .collect();
    Ok(EvalResult {
        gain,
        recurrent_classes,
        absorption,
        method: EvalMethod::Exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{line_instance, DistMatrix, MetricInstance};
    use crate::kmedian::MedianSet;
    use crate::mdp::{build_mdp, policy_from_partition};
    use crate::policy::DecentralizedPolicy;

    fn line3_partition() -> (MdpModel, PolicyTable) {
        let inst = line_instance(3, 2).into();
        let model = build_mdp(&inst).unwrap();
        let medians = MedianSet {
            medians: vec![0, 2],
            objective: 1.0 / 3.0,
        };
        let policy = DecentralizedPolicy::build(&inst, &medians).unwrap();
        let table = policy_from_partition(&model, &policy).unwrap();
        (model, table)
    }

    #[test]
    fn line3_partition_gain_is_one_third() {
        let (model, table) = line3_partition();
        let eval = evaluate_exact(&model, &table).unwrap();
        assert!(eval.is_unichain());
        for g in &eval.gain {
            assert!((g - 1.0 / 3.0).abs() < 1e-12, "{g}");
        }
        // Server 2 pinned to s2, server 1 on {s0, s1}.
        let class = &eval.recurrent_classes[0];
        for &s in &class.states {
            let st = model.state(s);
            assert_eq!(st.server_positions[1], 2);
            assert!(st.server_positions[0] <= 1);
        }
    }

    #[test]
    fn single_server_line3_gain_is_eight_ninths() {
        let model = build_mdp(&line_instance(3, 1).into()).unwrap();
        let table = PolicyTable {
            actions: vec![0; model.num_states()],
        };
        let eval = evaluate_exact(&model, &table).unwrap();
        assert!(eval.gain.iter().all(|g| (g - 8.0 / 9.0).abs() < 1e-12));
    }

    #[test]
    fn point_mass_is_multichain_with_zero_gain() {
        let inst = MetricInstance {
            points: vec!["a".into(), "b".into(), "c".into()],
            dist: DistMatrix::from_fn(3, |i, j| (i as f64 - j as f64).abs()),
            pmf: vec![0.0, 1.0, 0.0],
            k: 2,
        };
        let inst = inst.into();
        let model = build_mdp(&inst).unwrap();
        let medians = MedianSet {
            medians: vec![0, 1],
            objective: 0.0,
        };
        let policy = DecentralizedPolicy::build(&inst, &medians).unwrap();
        let table = policy_from_partition(&model, &policy).unwrap();
        let eval = evaluate_exact(&model, &table).unwrap();
        assert!(!eval.is_unichain());
        assert!(eval.gain.iter().all(|&g| g.abs() < 1e-12));
        for s in 0..model.num_states() {
            let total: f64 = eval.absorption(s).iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn table_shape_checked() {
        let (model, _) = line3_partition();
        let bad = PolicyTable { actions: vec![0; 3] };
        assert!(matches!(evaluate_exact(&model, &bad), Err(MdpError::Mismatch(_))));
    }
}
