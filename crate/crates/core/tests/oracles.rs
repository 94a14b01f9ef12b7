//! Independent oracles for the MDP toolkit. Chains are rebuilt here from
//! the instance semantics rather than read back from the model tables.

use kserver_core::instance::{
    encode_tuple, line_instance, random_euclidean_instance, random_multi_request_instance,
    random_server_dependent_instance, Instance,
};
use kserver_core::mdp::{build_mdp, evaluate_exact, solve_optimal, MdpModel, PolicyTable};
use nalgebra::{DMatrix, DVector};

/// Transition matrix and cost vector of every action, from first principles.
struct Kernel {
    /// `p[a]` is the chain when every state takes action `a`.
    p: Vec<DMatrix<f64>>,
    c: Vec<DVector<f64>>,
}

fn kernel(model: &MdpModel, instance: &Instance) -> Kernel {
    let num_states = model.num_states();
    let num_points = instance.num_points();
    let tuple_pmf = instance.request_tuple_pmf();
    let mut p = Vec::new();
    let mut c = Vec::new();
    for servers in model.actions() {
        let mut pa = DMatrix::zeros(num_states, num_states);
        let mut ca = DVector::zeros(num_states);
        for s in 0..num_states {
            let state = model.state(s);
            let mut next = state.server_positions.clone();
            let mut cost = 0.0;
            for (j, &u) in servers.iter().enumerate() {
                let target = state.request[j];
                cost += instance.service_cost(u, state.server_positions[u], target);
                next[u] = target;
            }
            ca[s] = cost;
            let base = encode_tuple(&next, num_points) * tuple_pmf.len();
            for (r, &q) in tuple_pmf.iter().enumerate() {
                pa[(s, base + r)] += q;
            }
        }
        p.push(pa);
        c.push(ca);
    }
    Kernel { p, c }
}

fn policy_chain(kernel: &Kernel, actions: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let n = actions.len();
    let mut p = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    for (s, &a) in actions.iter().enumerate() {
        p.set_row(s, &kernel.p[a].row(s));
        c[s] = kernel.c[a][s];
    }
    (p, c)
}

/// `(1/N) Σ_{t<N} P^t c` with `N = 2^doublings`, via
/// `A_2N = (A_N + P^N A_N) / 2`. Rows of `P^N` are renormalized after each
/// squaring so rounding cannot compound.
fn cesaro_gain(p: &DMatrix<f64>, c: &DVector<f64>, doublings: u32) -> DVector<f64> {
    let n = p.nrows();
    let mut avg = DMatrix::<f64>::identity(n, n);
    let mut power = p.clone();
    for _ in 0..doublings {
        avg = (&avg + &power * &avg) * 0.5;
        power = &power * &power;
        for mut row in power.row_iter_mut() {
            let total = row.sum();
            row /= total;
        }
    }
    avg * c
}

/// `(1 − β) V_β` under discounted policy iteration.
fn discounted_gain(kernel: &Kernel, num_states: usize, beta: f64) -> DVector<f64> {
    let num_actions = kernel.p.len();
    let mut actions = vec![0usize; num_states];
    loop {
        let (p, c) = policy_chain(kernel, &actions);
        let a = DMatrix::<f64>::identity(num_states, num_states) - p * beta;
        let v = a.lu().solve(&c).expect("discounted system is nonsingular");
        let mut changed = false;
        for s in 0..num_states {
            let q = |a: usize| kernel.c[a][s] + beta * (kernel.p[a].row(s) * &v)[0];
            let current = q(actions[s]);
            for b in 0..num_actions {
                if q(b) < current - 1e-12 * (1.0 + current.abs()) {
                    actions[s] = b;
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            return v * (1.0 - beta);
        }
    }
}

/// `(1 − β) V_β = g + (1 − β) h + O((1 − β)^2)`, so two discount levels
/// extrapolate to the gain with an `O(ε^2)` error.
fn vanishing_discount_gain(kernel: &Kernel, num_states: usize, eps: f64) -> DVector<f64> {
    discounted_gain(kernel, num_states, 1.0 - eps) * 2.0 - discounted_gain(kernel, num_states, 1.0 - 2.0 * eps)
}

#[test]
fn optimal_gain_matches_brute_force_over_all_policies() {
    for seed in 0..6u64 {
        let instance: Instance = random_server_dependent_instance(seed, 2, 2, 0.5).unwrap().into();
        let model = build_mdp(&instance).unwrap();
        let kernel = kernel(&model, &instance);
        let (num_states, num_actions) = (model.num_states(), model.num_actions());
        let mut best = vec![f64::INFINITY; num_states];
        let total = num_actions.pow(num_states as u32);
        for code in 0..total {
            let mut rest = code;
            let actions: Vec<usize> = (0..num_states)
                .map(|_| {
                    let a = rest % num_actions;
                    rest /= num_actions;
                    a
                })
                .collect();
            let (p, c) = policy_chain(&kernel, &actions);
            let g = cesaro_gain(&p, &c, 40);
            for s in 0..num_states {
                best[s] = best[s].min(g[s]);
            }
        }
        let sol = solve_optimal(&model).unwrap();
        for s in 0..num_states {
            assert!(
                (sol.eval.gain[s] - best[s]).abs() < 1e-8,
                "seed {seed} state {s}: {} vs brute force {}",
                sol.eval.gain[s],
                best[s]
            );
        }
    }
}

#[test]
fn optimal_gain_matches_vanishing_discount() {
    let instances: Vec<Instance> = vec![
        random_euclidean_instance(11, 3, 2, 0.0).unwrap().into(),
        random_euclidean_instance(12, 4, 2, 0.75).unwrap().into(),
        random_server_dependent_instance(13, 3, 2, 0.25).unwrap().into(),
        random_multi_request_instance(14, 3, 2, 2, 0.5).unwrap().into(),
        line_instance(4, 2).into(),
    ];
    for (i, instance) in instances.iter().enumerate() {
        let model = build_mdp(instance).unwrap();
        let oracle = vanishing_discount_gain(&kernel(&model, instance), model.num_states(), 1e-5);
        let sol = solve_optimal(&model).unwrap();
        for s in 0..model.num_states() {
            assert!(
                (sol.eval.gain[s] - oracle[s]).abs() < 1e-6,
                "instance {i} state {s}: {} vs {}",
                sol.eval.gain[s],
                oracle[s]
            );
        }
    }
}

#[test]
fn exact_evaluation_matches_cesaro_on_arbitrary_tables() {
    let instances: Vec<Instance> = vec![
        random_euclidean_instance(21, 3, 2, 1.0).unwrap().into(),
        random_server_dependent_instance(22, 3, 2, 0.0).unwrap().into(),
        random_multi_request_instance(23, 3, 2, 2, 0.25).unwrap().into(),
    ];
    for (i, instance) in instances.iter().enumerate() {
        let model = build_mdp(instance).unwrap();
        let kernel = kernel(&model, instance);
        for variant in 0..4usize {
            let actions: Vec<usize> = (0..model.num_states())
                .map(|s| (s * 7 + variant * 3 + s / 5) % model.num_actions())
                .collect();
            let eval = evaluate_exact(&model, &PolicyTable { actions: actions.clone() }).unwrap();
            let (p, c) = policy_chain(&kernel, &actions);
            let g = cesaro_gain(&p, &c, 36);
            for s in 0..model.num_states() {
                assert!((eval.gain[s] - g[s]).abs() < 1e-6, "instance {i} table {variant} state {s}");
            }
        }
    }
}

#[test]
fn single_server_on_a_line_pays_the_mean_pair_distance() {
    // For independent uniform X, Y on {0, ..., N-1}: E|X - Y| = (N^2 - 1) / (3N).
    for n in 2..=6usize {
        let model = build_mdp(&line_instance(n, 1).into()).unwrap();
        let eval = evaluate_exact(&model, &PolicyTable {
            actions: vec![0; model.num_states()],
        })
        .unwrap();
        let expected = (n * n - 1) as f64 / (3 * n) as f64;
        assert!(eval.gain.iter().all(|g| (g - expected).abs() < 1e-12), "N = {n}");
    }
}

