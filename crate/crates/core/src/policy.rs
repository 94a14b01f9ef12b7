//! Decentralized dispatch policies built from a median tuple.
//!
//! A [`PartitionPolicy`] assigns every point to exactly one server, the one
//! whose median is cheapest to reach from it. Ties go to the lowest server
//! index. A [`MultiDispatchPolicy`] handles batches of `n` requests by
//! matching requests to medians at minimum total distance.

use serde::Serialize;
use thiserror::Error;

use crate::instance::{Instance, InstanceKind, MultiRequestInstance};
use crate::kmedian::MedianSet;
use crate::matching::{min_cost_assignment, CostMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("median index {index} is out of range for {num_points} points")]
    InvalidMedian { index: usize, num_points: usize },
    #[error("expected {expected} medians (one per server), got {found}")]
    WrongMedianCount { expected: usize, found: usize },
    #[error("{0} instances need a matching policy, not a partition")]
    UnsupportedInstance(InstanceKind),
    #[error("{n} requests cannot be served by {k} servers")]
    TooManyRequests { n: usize, k: usize },
    #[error("request point {point} is out of range for {num_points} points")]
    InvalidRequest { point: usize, num_points: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionVariant {
    Base,
    ServerDependent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    LowestServerIndex,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionPolicy {
    pub medians: MedianSet,
    pub cells: Vec<Vec<usize>>,
    pub variant: PartitionVariant,
    pub tie_break: TieBreak,
    #[serde(skip)]
    owner: Vec<usize>,
}

fn check_medians(medians: &MedianSet, num_points: usize, k: usize) -> Result<(), PolicyError> {
    if medians.medians.len() != k {
        return Err(PolicyError::WrongMedianCount {
            expected: k,
            found: medians.medians.len(),
        });
    }
    match medians.medians.iter().find(|&&m| m >= num_points) {
        Some(&index) => Err(PolicyError::InvalidMedian { index, num_points }),
        None => Ok(()),
    }
}

/// Builds the partition policy for a base or server-dependent instance.
pub fn build_partition(instance: &Instance, medians: &MedianSet) -> Result<PartitionPolicy, PolicyError> {
    let (num_points, k) = (instance.num_points(), instance.k());
    let variant = match instance.kind() {
        InstanceKind::Metric => PartitionVariant::Base,
        InstanceKind::ServerDependent => PartitionVariant::ServerDependent,
        kind @ InstanceKind::MultiRequest => return Err(PolicyError::UnsupportedInstance(kind)),
    };
    check_medians(medians, num_points, k)?;
    let mut owner = Vec::with_capacity(num_points);
    let mut cells = vec![Vec::new(); k];
    for s in 0..num_points {
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for (i, &m) in medians.medians.iter().enumerate() {
            let cost = instance.service_cost(i, m, s);
            if cost < best_cost {
                best = i;
                best_cost = cost;
            }
        }
        owner.push(best);
        cells[best].push(s);
    }
    Ok(PartitionPolicy {
        medians: medians.clone(),
        cells,
        variant,
        tie_break: TieBreak::LowestServerIndex,
        owner,
    })
}

impl PartitionPolicy {
    /// Server responsible for `request`. Takes no server positions: the
    /// decision depends on the request location alone.
    #[inline]
    pub fn dispatch(&self, request: usize) -> usize {
        self.owner[request]
    }

    pub fn num_points(&self) -> usize {
        self.owner.len()
    }

    pub fn k(&self) -> usize {
        self.cells.len()
    }
}

/// Matching dispatch for `n` simultaneous requests. The server at `x_i` is
/// permanently paired with median `m_i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiDispatchPolicy {
    pub medians: MedianSet,
    pub n: usize,
    #[serde(skip)]
    num_points: usize,
    /// `median_dist[i * num_points + s] = d(m_i, s)`.
    #[serde(skip)]
    median_dist: Vec<f64>,
}

impl MultiDispatchPolicy {
    pub fn new(instance: &MultiRequestInstance, medians: &MedianSet) -> Result<Self, PolicyError> {
        let (num_points, k) = (instance.num_points(), instance.base.k);
        check_medians(medians, num_points, k)?;
        if instance.n > k {
            return Err(PolicyError::TooManyRequests { n: instance.n, k });
        }
        let median_dist = medians
            .medians
            .iter()
            .flat_map(|&m| instance.base.dist.row(m).iter().copied())
            .collect();
        Ok(MultiDispatchPolicy {
            medians: medians.clone(),
            n: instance.n,
            num_points,
            median_dist,
        })
    }

    pub fn k(&self) -> usize {
        self.medians.medians.len()
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    /// Injective request→server assignment minimizing `Σ_j d(m_{u_j}, x̂_j)`,
    /// lexicographically smallest among optimal assignments.
    pub fn dispatch_multi(&self, requests: &[usize]) -> Result<Vec<usize>, PolicyError> {
        let k = self.k();
        if requests.len() > k {
            return Err(PolicyError::TooManyRequests {
                n: requests.len(),
                k,
            });
        }
        if let Some(&point) = requests.iter().find(|&&r| r >= self.num_points) {
            return Err(PolicyError::InvalidRequest {
                point,
                num_points: self.num_points,
            });
        }
        let mut cost = Vec::with_capacity(requests.len() * k);
        for &r in requests {
            cost.extend((0..k).map(|i| self.median_dist[i * self.num_points + r]));
        }
        Ok(min_cost_assignment(&CostMatrix::new(requests.len(), k, &cost)).cols)
    }
}

/// Either kind of decentralized policy.
#[derive(Clone, Debug, PartialEq)]
pub enum DecentralizedPolicy {
    Partition(PartitionPolicy),
    Matching(MultiDispatchPolicy),
}

impl DecentralizedPolicy {
    /// Builds the policy matching the instance variant.
    pub fn build(instance: &Instance, medians: &MedianSet) -> Result<Self, PolicyError> {
        match instance {
            Instance::MultiRequest(m) => Ok(DecentralizedPolicy::Matching(MultiDispatchPolicy::new(m, medians)?)),
            other => Ok(DecentralizedPolicy::Partition(build_partition(other, medians)?)),
        }
    }

    pub fn medians(&self) -> &MedianSet {
        match self {
            DecentralizedPolicy::Partition(p) => &p.medians,
            DecentralizedPolicy::Matching(m) => &m.medians,
        }
    }

    pub fn num_points(&self) -> usize {
        match self {
            DecentralizedPolicy::Partition(p) => p.num_points(),
            DecentralizedPolicy::Matching(m) => m.num_points(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            DecentralizedPolicy::Partition(p) => p.k(),
            DecentralizedPolicy::Matching(m) => m.k(),
        }
    }

    pub fn requests_per_period(&self) -> usize {
        match self {
            DecentralizedPolicy::Partition(_) => 1,
            DecentralizedPolicy::Matching(m) => m.n,
        }
    }

    /// Server per request for a batch of the policy's size.
    pub fn dispatch_batch(&self, requests: &[usize]) -> Result<Vec<usize>, PolicyError> {
        match self {
            DecentralizedPolicy::Partition(p) => {
                let num_points = p.num_points();
                match requests.iter().find(|&&r| r >= num_points) {
                    Some(&point) => Err(PolicyError::InvalidRequest { point, num_points }),
                    None => Ok(requests.iter().map(|&r| p.dispatch(r)).collect()),
                }
            }
            DecentralizedPolicy::Matching(m) => m.dispatch_multi(requests),
        }
    }
}
