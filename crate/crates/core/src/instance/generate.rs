//! Seeded instance generators. All randomness comes from `ChaCha8Rng`
//! seeded with `seed_from_u64`, so output is bit-identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    DistMatrix, InstanceError, MetricInstance, MultiRequestInstance, RequestDistribution,
    ServerDependentInstance,
};

fn labels(num_points: usize) -> Vec<String> {
    (0..num_points).map(|i| format!("s{i}")).collect()
}

/// Points `0..num_points` on a line with `d(i, j) = |i - j|` and a uniform pmf.
pub fn line_instance(num_points: usize, k: usize) -> MetricInstance {
    MetricInstance {
        points: labels(num_points),
        dist: DistMatrix::from_fn(num_points, |i, j| (i as f64 - j as f64).abs()),
        pmf: vec![1.0 / num_points as f64; num_points],
        k,
    }
}

fn check_args(num_points: usize, k: usize, skew: f64) -> Result<(), InstanceError> {
    if num_points == 0 {
        return Err(InstanceError::Generator("num_points must be at least 1".into()));
    }
    if k == 0 {
        return Err(InstanceError::Generator("k must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(InstanceError::Generator(format!(
            "distribution skew {skew} is outside [0, 1]"
        )));
    }
    Ok(())
}

fn euclidean(rng: &mut ChaCha8Rng, num_points: usize) -> DistMatrix {
    let coords: Vec<(f64, f64)> = (0..num_points).map(|_| (rng.gen(), rng.gen())).collect();
    let mut dist = DistMatrix::zeros(num_points);
    for i in 0..num_points {
        for j in (i + 1)..num_points {
            let (dx, dy) = (coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
            dist.set_symmetric(i, j, dx.hypot(dy));
        }
    }
    dist
}

/// Uniform pmf blended with an exponential random weighting.
fn skewed_pmf(rng: &mut ChaCha8Rng, num_points: usize, skew: f64) -> Vec<f64> {
    let weights: Vec<f64> = (0..num_points)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
        .collect();
    let total: f64 = weights.iter().sum();
    let uniform = 1.0 / num_points as f64;
    let mut pmf: Vec<f64> = weights
        .iter()
        .map(|w| (1.0 - skew) * uniform + skew * w / total)
        .collect();
    let sum: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= sum);
    pmf
}

/// Random points in the unit square with Euclidean distances.
///
/// `distribution_skew = 0` gives a uniform pmf; larger values move the pmf
/// toward a normalized exponential weighting of the points.
pub fn random_euclidean_instance(
    seed: u64,
    num_points: usize,
    k: usize,
    distribution_skew: f64,
) -> Result<MetricInstance, InstanceError> {
    check_args(num_points, k, distribution_skew)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = euclidean(&mut rng, num_points);
    let pmf = if distribution_skew == 0.0 {
        vec![1.0 / num_points as f64; num_points]
    } else {
        skewed_pmf(&mut rng, num_points, distribution_skew)
    };
    Ok(MetricInstance {
        points: labels(num_points),
        dist,
        pmf,
        k,
    })
}

/// Euclidean base instance where server `u` travels under the base metric
/// scaled by a factor drawn from [0.5, 2] and pays processing costs drawn
/// from [0, 1].
pub fn random_server_dependent_instance(
    seed: u64,
    num_points: usize,
    k: usize,
    distribution_skew: f64,
) -> Result<ServerDependentInstance, InstanceError> {
    let base = random_euclidean_instance(seed, num_points, k, distribution_skew)?;
    // Separate stream so the base instance matches `random_euclidean_instance`.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let dists = (0..k)
        .map(|_| base.dist.scaled(rng.gen_range(0.5..=2.0)))
        .collect();
    let proc_costs = (0..k)
        .map(|_| (0..num_points).map(|_| rng.gen_range(0.0..=1.0)).collect())
        .collect();
    Ok(ServerDependentInstance {
        points: base.points,
        dists,
        proc_costs,
        pmf: base.pmf,
        k,
    })
}

/// Euclidean base instance with `n` IID requests per period.
pub fn random_multi_request_instance(
    seed: u64,
    num_points: usize,
    k: usize,
    n: usize,
    distribution_skew: f64,
) -> Result<MultiRequestInstance, InstanceError> {
    if n == 0 || n > k {
        return Err(InstanceError::Generator(format!(
            "requests per period n = {n} must satisfy 1 <= n <= k = {k}"
        )));
    }
    Ok(MultiRequestInstance {
        base: random_euclidean_instance(seed, num_points, k, distribution_skew)?,
        n,
        requests: RequestDistribution::IidProduct,
    })
}
