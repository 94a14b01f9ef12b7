use proptest::prelude::*;

use kserver_core::instance::{
    load_instance, random_euclidean_instance, random_multi_request_instance, random_server_dependent_instance,
    save_instance, validate, Instance, MultiRequestInstance, RequestDistribution, ServerDependentInstance,
};
use kserver_core::kmedian::{
    generalized_kmedian_exact, kmedian_exact, kmedian_local_search, kmedian_objective, multi_kmedian_exact,
    LocalSearchParams, MedianSet,
};
use kserver_core::matching::{min_assignment_cost, min_cost_assignment, CostMatrix};
use kserver_core::mdp::{
    build_mdp, evaluate_exact, lemma1_lower, lemma1_upper, policy_from_partition, solve_optimal, MdpState,
    PotentialTable,
};
use kserver_core::policy::{build_partition, DecentralizedPolicy};
use kserver_core::sim::{simulate, trace, SimConfig, SimPolicy};

fn small_instance() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 2usize..=6)
        .prop_flat_map(|(seed, points)| (Just(seed), Just(points), 1..=points.min(3), 0.0f64..=1.0))
}

/// Injective assignments of `rows` to `cols`, in lexicographic order.
fn injective(rows: usize, cols: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..rows {
        let mut next = Vec::new();
        for prefix in &out {
            for c in (0..cols).filter(|c| !prefix.contains(c)) {
                let mut longer = prefix.clone();
                longer.push(c);
                next.push(longer);
            }
        }
        out = next;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_instances_validate_and_round_trip(
        (seed, points, k, skew) in small_instance(),
        n in 1usize..=2,
    ) {
        let base = random_euclidean_instance(seed, points, k, skew).unwrap();
        let mut all: Vec<Instance> = vec![
            base.clone().into(),
            random_server_dependent_instance(seed, points, k, skew).unwrap().into(),
        ];
        if n <= k {
            all.push(random_multi_request_instance(seed, points, k, n, skew).unwrap().into());
        }
        for inst in all {
            prop_assert!(validate(&inst).is_valid(), "{:?}", validate(&inst));
            let reloaded = load_instance(&save_instance(&inst)).unwrap();
            prop_assert_eq!(&reloaded, &inst);
        }
        prop_assert_eq!(random_euclidean_instance(seed, points, k, skew).unwrap(), base);
    }

    #[test]
    fn adding_medians_never_increases_the_objective((seed, points, k, skew) in small_instance()) {
        let inst = random_euclidean_instance(seed, points, k, skew).unwrap();
        let mut medians: Vec<usize> = Vec::new();
        let mut previous = f64::INFINITY;
        // Grow along a fixed order and along the exact optimum.
        for m in (0..points).rev() {
            medians.push(m);
            let value = kmedian_objective(&inst, &medians).unwrap();
            prop_assert!(value <= previous + 1e-15);
            previous = value;
        }
        let exact = kmedian_exact(&inst).unwrap();
        for extra in (0..points).filter(|p| !exact.medians.contains(p)) {
            let mut more = exact.medians.clone();
            more.push(extra);
            prop_assert!(kmedian_objective(&inst, &more).unwrap() <= exact.objective + 1e-15);
        }
    }

    #[test]
    fn local_search_never_beats_exact(
        (seed, points, k, skew) in small_instance(),
        swap_size in 1usize..=2,
        ls_seed in any::<u64>(),
    ) {
        let inst = random_euclidean_instance(seed, points, k, skew).unwrap();
        let params = LocalSearchParams { swap_size: swap_size.min(k), improvement_threshold: 0.0, seed: ls_seed };
        let (set, report) = kmedian_local_search(&inst, params).unwrap();
        let exact = kmedian_exact(&inst).unwrap();
        prop_assert!(set.objective >= exact.objective - 1e-12);
        prop_assert!(report.ratio.unwrap() >= 1.0 - 1e-12);
        prop_assert_eq!(set.objective, kmedian_objective(&inst, &set.medians).unwrap());
    }

    #[test]
    fn variant_solvers_reduce_to_the_base_solver((seed, points, k, skew) in small_instance()) {
        let base = random_euclidean_instance(seed, points, k, skew).unwrap();
        let exact = kmedian_exact(&base).unwrap();
        let generalized = generalized_kmedian_exact(&ServerDependentInstance::from_metric(&base)).unwrap();
        prop_assert_eq!(generalized.objective, exact.objective);
        let multi = MultiRequestInstance { base: base.clone(), n: 1, requests: RequestDistribution::IidProduct };
        let m = multi_kmedian_exact(&multi).unwrap();
        prop_assert!((m.objective - exact.objective).abs() < 1e-12);
    }

    #[test]
    fn partition_cells_cover_and_follow_the_cheapest_median((seed, points, k, skew) in small_instance()) {
        let inst: Instance = random_server_dependent_instance(seed, points, k, skew).unwrap().into();
        let medians = MedianSet { medians: (0..k).map(|i| (i * 7 + seed as usize) % points).collect(), objective: 0.0 };
        let policy = build_partition(&inst, &medians).unwrap();
        let mut seen = vec![0usize; points];
        for (i, cell) in policy.cells.iter().enumerate() {
            for &s in cell {
                seen[s] += 1;
                prop_assert_eq!(policy.dispatch(s), i);
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        for s in 0..points {
            let costs: Vec<f64> = (0..k).map(|i| inst.service_cost(i, medians.medians[i], s)).collect();
            let owner = policy.dispatch(s);
            prop_assert!(costs.iter().all(|&c| costs[owner] <= c));
            prop_assert!(costs[..owner].iter().all(|&c| c > costs[owner]));
        }
    }

    #[test]
    fn assignment_matches_brute_force(
        rows in 1usize..=3,
        extra in 0usize..=2,
        raw in proptest::collection::vec(0u8..=4, 15),
    ) {
        let cols = rows + extra;
        let data: Vec<f64> = raw[..rows * cols].iter().map(|&v| v as f64 * 0.5).collect();
        let cost = CostMatrix::new(rows, cols, &data);
        let total = |a: &[usize]| a.iter().enumerate().map(|(r, &c)| cost.get(r, c)).sum::<f64>();
        let candidates = injective(rows, cols);
        let best = candidates.iter().map(|a| total(a)).fold(f64::INFINITY, f64::min);
        let first = candidates.iter().find(|a| total(a) <= best + 1e-12).unwrap();
        let assignment = min_cost_assignment(&cost);
        prop_assert_eq!(&assignment.cols, first);
        prop_assert!((assignment.cost - best).abs() < 1e-12);
        prop_assert!((min_assignment_cost(&cost) - best).abs() < 1e-12);
    }

    #[test]
    fn any_potential_brackets_the_gains(
        seed in any::<u64>(),
        points in 2usize..=4,
        skew in 0.0f64..=1.0,
        values in proptest::collection::vec(-1.0f64..1.0, 64),
    ) {
        let inst: Instance = random_euclidean_instance(seed, points, 2, skew).unwrap().into();
        let model = build_mdp(&inst).unwrap();
        let h = PotentialTable { values: (0..model.num_states()).map(|s| values[s % values.len()]).collect() };
        let exact = kmedian_exact(match &inst { Instance::Metric(m) => m, _ => unreachable!() }).unwrap();
        let table = policy_from_partition(&model, &DecentralizedPolicy::build(&inst, &exact).unwrap()).unwrap();
        let j_mud = evaluate_exact(&model, &table).unwrap().gain;
        let j_opt = solve_optimal(&model).unwrap().eval.gain;
        let upper = lemma1_upper(&model, &table, &h).unwrap();
        let lower = lemma1_lower(&model, &h).unwrap();
        for s in 0..model.num_states() {
            prop_assert!(j_mud[s] <= upper + 1e-9);
            prop_assert!(lower <= j_opt[s] + 1e-9);
            prop_assert!(j_opt[s] <= j_mud[s] + 1e-9);
        }
    }

    #[test]
    fn transition_rows_are_stochastic((seed, points, k, skew) in small_instance()) {
        let inst: Instance = random_server_dependent_instance(seed, points.min(4), k.min(points.min(4)), skew)
            .unwrap()
            .into();
        let model = build_mdp(&inst).unwrap();
        for s in (0..model.num_states()).step_by(7) {
            for a in 0..model.num_actions() {
                let total: f64 = model.successors(s, a).map(|(_, p)| p).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(model.cost(s, a) >= 0.0);
            }
        }
    }

    #[test]
    fn optimal_gain_ignores_server_labels(seed in any::<u64>(), points in 2usize..=4, skew in 0.0f64..=1.0) {
        let inst: Instance = random_euclidean_instance(seed, points, 2, skew).unwrap().into();
        let model = build_mdp(&inst).unwrap();
        let gain = solve_optimal(&model).unwrap().eval.gain;
        for s in 0..model.num_states() {
            let mut st = model.state(s);
            st.server_positions.reverse();
            let t = model.state_index(&st).unwrap();
            prop_assert!((gain[s] - gain[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>(), sim_seed in any::<u64>()) {
        let inst: Instance = random_euclidean_instance(seed, 4, 2, 0.5).unwrap().into();
        let medians = kmedian_exact(match &inst { Instance::Metric(m) => m, _ => unreachable!() }).unwrap();
        let policy = DecentralizedPolicy::build(&inst, &medians).unwrap();
        let initial = MdpState { server_positions: vec![0, 1], request: vec![2] };
        let config = SimConfig::new(2_000, 4, sim_seed);
        let a = simulate(&inst, SimPolicy::Decentralized(&policy), &initial, &config).unwrap();
        let b = simulate(&inst, SimPolicy::Decentralized(&policy), &initial, &config).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.mean_cost >= 0.0);
        prop_assert_eq!(a.ci95, (a.mean_cost - 1.96 * a.std_error, a.mean_cost + 1.96 * a.std_error));
        let t1 = trace(&inst, SimPolicy::Decentralized(&policy), &initial, 300, sim_seed).unwrap();
        let t2 = trace(&inst, SimPolicy::Decentralized(&policy), &initial, 300, sim_seed).unwrap();
        prop_assert_eq!(t1, t2);
    }
}

/// Upper 0.001 quantiles of the chi-square distribution, by degrees of freedom.
const CHI2_999: [f64; 8] = [10.828, 13.816, 16.266, 18.467, 20.515, 22.458, 24.322, 26.124];

#[test]
fn request_frequencies_match_the_pmf() {
    for seed in 0..6u64 {
        let points = 3 + seed as usize;
        let inst: Instance = random_euclidean_instance(seed, points, 2, 0.8).unwrap().into();
        let medians = MedianSet { medians: vec![0, 1], objective: 0.0 };
        let policy = DecentralizedPolicy::build(&inst, &medians).unwrap();
        let initial = MdpState { server_positions: vec![0, 1], request: vec![0] };
        let horizon = 50_000;
        let steps = trace(&inst, SimPolicy::Decentralized(&policy), &initial, horizon + 1, seed).unwrap();
        let mut counts = vec![0usize; points];
        for step in &steps[1..] {
            counts[step.requests[0]] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(inst.pmf())
            .map(|(&c, &p)| {
                let expected = p * horizon as f64;
                (c as f64 - expected).powi(2) / expected
            })
            .sum();
        assert!(chi2 < CHI2_999[points - 2], "seed {seed}: chi2 = {chi2}");
    }
}

#[test]
fn multi_request_frequencies_match_the_product_pmf() {
    let inst: Instance = random_multi_request_instance(5, 3, 2, 2, 0.6).unwrap().into();
    let medians = MedianSet { medians: vec![0, 2], objective: 0.0 };
    let policy = DecentralizedPolicy::build(&inst, &medians).unwrap();
    let initial = MdpState { server_positions: vec![0, 2], request: vec![1, 1] };
    let horizon = 60_000;
    let steps = trace(&inst, SimPolicy::Decentralized(&policy), &initial, horizon + 1, 9).unwrap();
    let pmf = inst.request_tuple_pmf();
    let mut counts = vec![0usize; pmf.len()];
    for step in &steps[1..] {
        counts[step.requests[0] * 3 + step.requests[1]] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&pmf)
        .map(|(&c, &p)| (c as f64 - p * horizon as f64).powi(2) / (p * horizon as f64))
        .sum();
    assert!(chi2 < CHI2_999[pmf.len() - 2], "chi2 = {chi2}");
}
