//! Weighted k-median: exact enumeration, swap-based local search, and the
//! ordered generalizations used by the server-dependent and multi-request
//! variants.
//!
//! All exact solvers scan candidates in lexicographic order and only replace
//! the incumbent on a strict improvement beyond [`TIE_TOLERANCE`], so the
//! lexicographically smallest optimal tuple wins ties.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::instance::{decode_tuple, MetricInstance, MultiRequestInstance, ServerDependentInstance};
use crate::matching::{min_assignment_cost, CostMatrix};

/// Exact solvers refuse to enumerate more candidates than this.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;
/// `kmedian_local_search` attaches an exact comparison when `C(|S|, k)` is at most this.
pub const EXACT_COMPARISON_LIMIT: u128 = 100_000;
pub const DEFAULT_IMPROVEMENT_THRESHOLD: f64 = 1e-6;
/// Relative slack under which two objective values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum KMedianError {
    #[error("median index {index} is out of range for {num_points} points")]
    InvalidMedian { index: usize, num_points: usize },
    #[error("expected {expected} medians, got {found}")]
    WrongMedianCount { expected: usize, found: usize },
    #[error("enumeration of {count} candidates exceeds the limit of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Ordered median tuple with its objective value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MedianSet {
    pub medians: Vec<usize>,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxReport {
    pub heuristic_objective: f64,
    pub exact_objective: Option<f64>,
    pub ratio: Option<f64>,
    pub swaps_used: usize,
    pub iterations: usize,
}

fn is_better(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent - TIE_TOLERANCE * (1.0 + incumbent.abs())
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

fn check_medians(medians: &[usize], num_points: usize) -> Result<(), KMedianError> {
    if medians.is_empty() {
        return Err(KMedianError::InvalidParameter("median list is empty".into()));
    }
    match medians.iter().find(|&&m| m >= num_points) {
        Some(&index) => Err(KMedianError::InvalidMedian { index, num_points }),
        None => Ok(()),
    }
}

fn check_enumeration(count: u128) -> Result<(), KMedianError> {
    if count > ENUMERATION_LIMIT {
        Err(KMedianError::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        })
    } else {
        Ok(())
    }
}

fn objective_unchecked(instance: &MetricInstance, medians: &[usize]) -> f64 {
    (0..instance.num_points())
        .map(|s| {
            let nearest = medians
                .iter()
                .map(|&m| instance.dist.get(m, s))
                .fold(f64::INFINITY, f64::min);
            instance.pmf[s] * nearest
        })
        .sum()
}

/// `Σ_s pmf[s] · min_i dist[m_i][s]`.
pub fn kmedian_objective(instance: &MetricInstance, medians: &[usize]) -> Result<f64, KMedianError> {
    check_medians(medians, instance.num_points())?;
    Ok(objective_unchecked(instance, medians))
}

/// Advances `comb` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] < n - k + i {
            comb[i] += 1;
            for j in (i + 1)..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Advances a non-decreasing tuple over `0..n` (a multiset) in lexicographic order.
fn next_multiset(tuple: &mut [usize], n: usize) -> bool {
    let mut i = tuple.len();
    while i > 0 {
        i -= 1;
        if tuple[i] + 1 < n {
            let v = tuple[i] + 1;
            for slot in tuple[i..].iter_mut() {
                *slot = v;
            }
            return true;
        }
    }
    false
}

/// Advances an arbitrary tuple over `0..n` (odometer order).
fn next_tuple(tuple: &mut [usize], n: usize) -> bool {
    let mut i = tuple.len();
    while i > 0 {
        i -= 1;
        if tuple[i] + 1 < n {
            tuple[i] += 1;
            return true;
        }
        tuple[i] = 0;
    }
    false
}

fn scan(
    mut candidate: Vec<usize>,
    mut advance: impl FnMut(&mut [usize]) -> bool,
    mut objective: impl FnMut(&[usize]) -> f64,
) -> MedianSet {
    let mut best = MedianSet {
        objective: objective(&candidate),
        medians: candidate.clone(),
    };
    while advance(&mut candidate) {
        let value = objective(&candidate);
        if is_better(value, best.objective) {
            best.objective = value;
            best.medians.copy_from_slice(&candidate);
        }
    }
    best
}

/// Global optimum over all k-subsets of the points.
pub fn kmedian_exact(instance: &MetricInstance) -> Result<MedianSet, KMedianError> {
    let (n, k) = (instance.num_points(), instance.k);
    if k == 0 || k > n {
        return Err(KMedianError::InvalidParameter(format!(
            "exact k-median needs 1 <= k <= |S| (k = {k}, |S| = {n})"
        )));
    }
    check_enumeration(binomial(n, k))?;
    Ok(scan(
        (0..k).collect(),
        |c| next_combination(c, n),
        |m| objective_unchecked(instance, m),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalSearchParams {
    /// Maximum number of medians exchanged in one move.
    pub swap_size: usize,
    /// A move is accepted only if it lowers the objective below `(1 - δ)·current`.
    pub improvement_threshold: f64,
    /// Randomizes tie-breaking during greedy seeding.
    pub seed: u64,
}

impl Default for LocalSearchParams {
    fn default() -> Self {
        LocalSearchParams {
            swap_size: 1,
            improvement_threshold: DEFAULT_IMPROVEMENT_THRESHOLD,
            seed: 0,
        }
    }
}

/// Greedy seeding: repeatedly add the point that lowers the objective most,
/// picking uniformly (under `seed`) among tied candidates.
fn greedy_seed(instance: &MetricInstance, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = instance.num_points();
    let mut chosen: Vec<usize> = Vec::with_capacity(instance.k);
    let mut trial = Vec::with_capacity(instance.k);
    for _ in 0..instance.k {
        let mut best = f64::INFINITY;
        let mut tied: Vec<usize> = Vec::new();
        for c in (0..n).filter(|c| !chosen.contains(c)) {
            trial.clear();
            trial.extend_from_slice(&chosen);
            trial.push(c);
            let value = objective_unchecked(instance, &trial);
            if is_better(value, best) {
                best = value;
                tied.clear();
                tied.push(c);
            } else if !is_better(best, value) {
                tied.push(c);
            }
        }
        chosen.push(*tied.choose(rng).expect("k <= |S| leaves a candidate"));
    }
    chosen.sort_unstable();
    chosen
}

/// Best move among all exchanges of up to `swap_size` medians, if any.
fn best_swap(instance: &MetricInstance, current: &[usize], swap_size: usize) -> Option<(Vec<usize>, f64)> {
    let n = instance.num_points();
    let k = current.len();
    let outside: Vec<usize> = (0..n).filter(|p| !current.contains(p)).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut candidate = current.to_vec();
    for q in 1..=swap_size.min(outside.len()) {
        let mut drop: Vec<usize> = (0..q).collect();
        loop {
            let mut add: Vec<usize> = (0..q).collect();
            loop {
                candidate.copy_from_slice(current);
                for (d, a) in drop.iter().zip(&add) {
                    candidate[*d] = outside[*a];
                }
                let value = objective_unchecked(instance, &candidate);
                if best.as_ref().is_none_or(|(_, b)| is_better(value, *b)) {
                    let mut sorted = candidate.clone();
                    sorted.sort_unstable();
                    best = Some((sorted, value));
                }
                if !next_combination(&mut add, outside.len()) {
                    break;
                }
            }
            if !next_combination(&mut drop, k) {
                break;
            }
        }
    }
    best
}

/// Local search from a greedy start. Terminates at a median set that no
/// exchange of at most `swap_size` medians improves by more than a factor
/// `1 - improvement_threshold`.
pub fn kmedian_local_search(
    instance: &MetricInstance,
    params: LocalSearchParams,
) -> Result<(MedianSet, ApproxReport), KMedianError> {
    let (n, k) = (instance.num_points(), instance.k);
    if k == 0 || k > n {
        return Err(KMedianError::InvalidParameter(format!(
            "local search needs 1 <= k <= |S| (k = {k}, |S| = {n})"
        )));
    }
    if params.swap_size == 0 || params.swap_size > k {
        return Err(KMedianError::InvalidParameter(format!(
            "swap size {} must lie in 1..={k}",
            params.swap_size
        )));
    }
    let delta = params.improvement_threshold;
    if !(0.0..1.0).contains(&delta) {
        return Err(KMedianError::InvalidParameter(format!(
            "improvement threshold {delta} must lie in [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut current = greedy_seed(instance, &mut rng);
    let mut value = objective_unchecked(instance, &current);
    let mut iterations = 0;
    let mut swaps_used = 0;
    loop {
        iterations += 1;
        match best_swap(instance, &current, params.swap_size) {
            Some((next, next_value)) if next_value < (1.0 - delta) * value => {
                current = next;
                value = next_value;
                swaps_used += 1;
            }
            _ => break,
        }
    }
    let exact_objective = if binomial(n, k) <= EXACT_COMPARISON_LIMIT {
        Some(kmedian_exact(instance)?.objective)
    } else {
        None
    };
    let ratio = exact_objective.map(|exact| approximation_ratio(value, exact));
    Ok((
        MedianSet {
            medians: current,
            objective: value,
        },
        ApproxReport {
            heuristic_objective: value,
            exact_objective,
            ratio,
            swaps_used,
            iterations,
        },
    ))
}

/// `heuristic / exact`, with `0 / 0 = 1`.
pub fn approximation_ratio(heuristic: f64, exact: f64) -> f64 {
    if exact > 0.0 {
        heuristic / exact
    } else if heuristic <= 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

fn generalized_unchecked(instance: &ServerDependentInstance, medians: &[usize]) -> f64 {
    (0..instance.num_points())
        .map(|s| {
            let best = medians
                .iter()
                .enumerate()
                .map(|(u, &m)| instance.service_cost(u, m, s))
                .fold(f64::INFINITY, f64::min);
            instance.pmf[s] * best
        })
        .sum()
}

/// `Σ_s pmf[s] · min_i (d_i(m_i, s) + c_i(s))`; position `i` of `medians`
/// belongs to server `i`.
pub fn generalized_objective(
    instance: &ServerDependentInstance,
    medians: &[usize],
) -> Result<f64, KMedianError> {
    if medians.len() != instance.k {
        return Err(KMedianError::WrongMedianCount {
            expected: instance.k,
            found: medians.len(),
        });
    }
    check_medians(medians, instance.num_points())?;
    Ok(generalized_unchecked(instance, medians))
}

/// Global optimum over ordered tuples in `S^k`, repeats allowed.
pub fn generalized_kmedian_exact(instance: &ServerDependentInstance) -> Result<MedianSet, KMedianError> {
    let (n, k) = (instance.num_points(), instance.k);
    if k == 0 || n == 0 {
        return Err(KMedianError::InvalidParameter("empty instance".into()));
    }
    check_enumeration((n as u128).saturating_pow(k as u32))?;
    Ok(scan(
        vec![0; k],
        |t| next_tuple(t, n),
        |m| generalized_unchecked(instance, m),
    ))
}

struct MultiObjective<'a> {
    instance: &'a MultiRequestInstance,
    support: Vec<(Vec<usize>, f64)>,
    scratch: Vec<f64>,
}

impl<'a> MultiObjective<'a> {
    fn new(instance: &'a MultiRequestInstance) -> Self {
        let (s, n) = (instance.num_points(), instance.n);
        let support = instance
            .tuple_pmf()
            .into_iter()
            .enumerate()
            .filter(|&(_, p)| p > 0.0)
            .map(|(t, p)| (decode_tuple(t, s, n), p))
            .collect();
        MultiObjective {
            instance,
            support,
            scratch: Vec::new(),
        }
    }

    fn eval(&mut self, medians: &[usize]) -> f64 {
        let dist = &self.instance.base.dist;
        let (n, k) = (self.instance.n, medians.len());
        let mut sum = 0.0;
        for (tuple, p) in &self.support {
            self.scratch.clear();
            for &r in tuple {
                self.scratch.extend(medians.iter().map(|&m| dist.get(m, r)));
            }
            sum += p * min_assignment_cost(&CostMatrix::new(n, k, &self.scratch));
        }
        sum
    }
}

/// `Σ_{s ∈ S^n} p(s) · min_u Σ_j d(m_{u_j}, s_j)` over injective `u`.
pub fn multi_objective(instance: &MultiRequestInstance, medians: &[usize]) -> Result<f64, KMedianError> {
    if medians.len() != instance.base.k {
        return Err(KMedianError::WrongMedianCount {
            expected: instance.base.k,
            found: medians.len(),
        });
    }
    check_medians(medians, instance.num_points())?;
    if instance.n > medians.len() {
        return Err(KMedianError::InvalidParameter("n exceeds k".into()));
    }
    Ok(MultiObjective::new(instance).eval(medians))
}

/// Global optimum of the multi-request objective over multisets of `k`
/// points. The objective is invariant under permuting the medians, so
/// non-decreasing tuples cover `S^k`; repeats are kept because two servers
/// parked on the same point can beat any set of distinct points.
pub fn multi_kmedian_exact(instance: &MultiRequestInstance) -> Result<MedianSet, KMedianError> {
    let (s, k) = (instance.num_points(), instance.base.k);
    if k == 0 || s == 0 || instance.n == 0 || instance.n > k {
        return Err(KMedianError::InvalidParameter(format!(
            "multi-request k-median needs 1 <= n <= k (n = {}, k = {k})",
            instance.n
        )));
    }
    check_enumeration(binomial(s + k - 1, k))?;
    let mut objective = MultiObjective::new(instance);
    Ok(scan(vec![0; k], |t| next_multiset(t, s), |m| objective.eval(m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{line_instance, random_euclidean_instance, RequestDistribution};

    const EPS: f64 = 1e-12;

    #[test]
    fn line3_objectives() {
        let line = line_instance(3, 2);
        assert!((kmedian_objective(&line, &[0, 2]).unwrap() - 1.0 / 3.0).abs() < EPS);
        assert!((kmedian_objective(&line, &[1]).unwrap() - 2.0 / 3.0).abs() < EPS);
        assert_eq!(kmedian_objective(&line, &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(
            kmedian_objective(&line, &[3]),
            Err(KMedianError::InvalidMedian {
                index: 3,
                num_points: 3
            })
        );
    }

    #[test]
    fn exact_line3() {
        let best = kmedian_exact(&line_instance(3, 2)).unwrap();
        assert_eq!(best.medians, vec![0, 1]);
        assert!((best.objective - 1.0 / 3.0).abs() < EPS);
        let best = kmedian_exact(&line_instance(3, 1)).unwrap();
        assert_eq!(best.medians, vec![1]);
        assert!((best.objective - 2.0 / 3.0).abs() < EPS);
        assert_eq!(kmedian_exact(&line_instance(3, 3)).unwrap().objective, 0.0);
    }

    #[test]
    fn exact_guard_reports_count() {
        let big = line_instance(60, 8);
        match kmedian_exact(&big) {
            Err(KMedianError::EnumerationTooLarge { count, .. }) => {
                assert_eq!(count, binomial(60, 8))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn combination_enumeration_is_complete() {
        let mut comb = vec![0, 1];
        let mut seen = vec![comb.clone()];
        while next_combination(&mut comb, 4) {
            seen.push(comb.clone());
        }
        assert_eq!(seen.len(), 6);
        let mut t = vec![0, 0];
        let mut count = 1;
        while next_multiset(&mut t, 3) {
            assert!(t[0] <= t[1]);
            count += 1;
        }
        assert_eq!(count, 6);
    }

    #[test]
    fn local_search_line3() {
        let line = line_instance(3, 2);
        for seed in 0..5 {
            let params = LocalSearchParams {
                swap_size: 1,
                improvement_threshold: 0.0,
                seed,
            };
            let (set, report) = kmedian_local_search(&line, params).unwrap();
            assert!((set.objective - 1.0 / 3.0).abs() < EPS);
            assert!((report.ratio.unwrap() - 1.0).abs() < EPS);
        }
        let (set, report) = kmedian_local_search(&line_instance(3, 3), LocalSearchParams::default()).unwrap();
        assert_eq!(set.objective, 0.0);
        assert_eq!(report.swaps_used, 0);
    }

    #[test]
    fn local_search_parameter_checks() {
        let line = line_instance(3, 2);
        let bad = LocalSearchParams {
            swap_size: 3,
            ..LocalSearchParams::default()
        };
        assert!(kmedian_local_search(&line, bad).is_err());
    }

    #[test]
    fn local_search_is_seed_deterministic() {
        let inst = random_euclidean_instance(11, 9, 3, 0.5).unwrap();
        let params = LocalSearchParams {
            seed: 4,
            ..LocalSearchParams::default()
        };
        assert_eq!(
            kmedian_local_search(&inst, params).unwrap(),
            kmedian_local_search(&inst, params).unwrap()
        );
    }

    #[test]
    fn generalized_reductions() {
        let line = line_instance(3, 2);
        let sd = ServerDependentInstance::from_metric(&line);
        let g = generalized_kmedian_exact(&sd).unwrap();
        assert_eq!(g, kmedian_exact(&line).unwrap());

        let mut single = ServerDependentInstance::from_metric(&line_instance(3, 1));
        single.proc_costs[0] = vec![0.75; 3];
        let g = generalized_kmedian_exact(&single).unwrap();
        assert!((g.objective - (2.0 / 3.0 + 0.75)).abs() < EPS);
    }

    #[test]
    fn generalized_expensive_second_server() {
        let mut sd = ServerDependentInstance::from_metric(&line_instance(3, 2));
        sd.proc_costs[1] = vec![10.0; 3];
        let g = generalized_kmedian_exact(&sd).unwrap();
        assert!((g.objective - 2.0 / 3.0).abs() < EPS);
        assert_eq!(g.medians, vec![1, 0]);
    }

    #[test]
    fn multi_line3_pair_requests() {
        let multi = MultiRequestInstance {
            base: line_instance(3, 2),
            n: 2,
            requests: RequestDistribution::IidProduct,
        };
        // Hand enumeration of the 9 request pairs: {0,2} costs 10/9, {0,1}
        // and {1,2} cost 11/9, {1,1} costs 12/9.
        let best = multi_kmedian_exact(&multi).unwrap();
        assert_eq!(best.medians, vec![0, 2]);
        assert!((best.objective - 10.0 / 9.0).abs() < EPS);
        assert!((multi_objective(&multi, &[0, 1]).unwrap() - 11.0 / 9.0).abs() < EPS);
        assert!((multi_objective(&multi, &[1, 1]).unwrap() - 12.0 / 9.0).abs() < EPS);
        let oracle = |m: [usize; 2]| -> f64 {
            let d = |a: usize, b: usize| (a as f64 - b as f64).abs();
            let mut total = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    total += (d(a, m[0]) + d(b, m[1])).min(d(a, m[1]) + d(b, m[0])) / 9.0;
                }
            }
            total
        };
        let best_oracle = (0..3)
            .flat_map(|i| (i..3).map(move |j| oracle([i, j])))
            .fold(f64::INFINITY, f64::min);
        assert!((best.objective - best_oracle).abs() < EPS);
    }
}
