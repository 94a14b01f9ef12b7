//! Problem instances: the base stochastic k-server instance and its
//! server-dependent and multi-request variants.
//!
//! An instance is plain data. [`validate`] checks the metric and probability
//! assumptions and reports every violation it finds; [`load_instance`] parses
//! a JSON document and refuses anything that does not validate.

mod generate;
mod io;
mod validate;

pub use generate::{
    random_euclidean_instance, random_multi_request_instance, random_server_dependent_instance,
    line_instance,
};
pub use io::{load_instance, parse_instance, save_instance};
pub use validate::{validate, ValidationReport, Violation, METRIC_TOLERANCE, PMF_TOLERANCE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{kind} instance document is missing field `{field}`")]
    MissingField { kind: String, field: &'static str },
    #[error("field `{field}` is not allowed in a {kind} instance document")]
    UnexpectedField { kind: String, field: &'static str },
    #[error("malformed field `{field}`: {message}")]
    Malformed { field: &'static str, message: String },
    #[error("unknown instance type `{0}`")]
    UnknownType(String),
    #[error("instance failed validation ({} violation(s)): {report}", report.violations.len())]
    Invalid { report: ValidationReport },
    #[error("invalid generator argument: {0}")]
    Generator(String),
}

/// Dense square distance matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DistMatrix {
    size: usize,
    data: Vec<f64>,
}

impl DistMatrix {
    pub fn zeros(size: usize) -> Self {
        DistMatrix {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        let size = rows.len();
        let mut data = Vec::with_capacity(size * size);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != size {
                return Err(format!(
                    "row {i} has {} entries, expected {size} (matrix must be square)",
                    row.len()
                ));
            }
            data.extend(row);
        }
        Ok(DistMatrix { size, data })
    }

    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(size);
        for i in 0..size {
            for j in 0..size {
                m.data[i * size + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.size + j] = value;
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set_symmetric(&mut self, i: usize, j: usize, value: f64) {
        self.set(i, j, value);
        self.set(j, i, value);
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DistMatrix {
            size: self.size,
            data: self.data.iter().map(|d| d * factor).collect(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|i| self.row(i).to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for DistMatrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        DistMatrix::from_rows(rows)
    }
}

impl From<DistMatrix> for Vec<Vec<f64>> {
    fn from(m: DistMatrix) -> Self {
        m.to_rows()
    }
}

/// Finite metric space with a request distribution and a server count.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricInstance {
    pub points: Vec<String>,
    pub dist: DistMatrix,
    pub pmf: Vec<f64>,
    pub k: usize,
}

impl MetricInstance {
    /// Builds an instance and rejects it unless it validates.
    pub fn new(
        points: Vec<String>,
        dist: DistMatrix,
        pmf: Vec<f64>,
        k: usize,
    ) -> Result<Self, InstanceError> {
        let inst = MetricInstance {
            points,
            dist,
            pmf,
            k,
        };
        Instance::Metric(inst).validated().map(|i| match i {
            Instance::Metric(m) => m,
            _ => unreachable!(),
        })
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }
}

/// Each server moves under its own metric and pays a processing cost at the
/// request location.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerDependentInstance {
    pub points: Vec<String>,
    pub dists: Vec<DistMatrix>,
    pub proc_costs: Vec<Vec<f64>>,
    pub pmf: Vec<f64>,
    pub k: usize,
}

impl ServerDependentInstance {
    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Travel plus processing cost for `server` moving from `from` to serve `to`.
    #[inline]
    pub fn service_cost(&self, server: usize, from: usize, to: usize) -> f64 {
        self.dists[server].get(from, to) + self.proc_costs[server][to]
    }

    /// Every server shares `base.dist` and pays nothing for processing.
    pub fn from_metric(base: &MetricInstance) -> Self {
        ServerDependentInstance {
            points: base.points.clone(),
            dists: vec![base.dist.clone(); base.k],
            proc_costs: vec![vec![0.0; base.num_points()]; base.k],
            pmf: base.pmf.clone(),
            k: base.k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TupleProb {
    pub tuple: Vec<usize>,
    pub p: f64,
}

/// Joint law of the `n` requests issued in one period.
#[derive(Clone, Debug, PartialEq)]
pub enum RequestDistribution {
    /// Each request drawn independently from the base pmf.
    IidProduct,
    /// Explicit probability per request tuple; absent tuples have probability 0.
    Table(Vec<TupleProb>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiRequestInstance {
    pub base: MetricInstance,
    pub n: usize,
    pub requests: RequestDistribution,
}

impl MultiRequestInstance {
    pub fn num_points(&self) -> usize {
        self.base.num_points()
    }

    /// Dense pmf over request tuples, indexed lexicographically
    /// (`tuple_index`), of length `|S|^n`.
    pub fn tuple_pmf(&self) -> Vec<f64> {
        let s = self.num_points();
        let count = s.pow(self.n as u32);
        match &self.requests {
            RequestDistribution::IidProduct => (0..count)
                .map(|t| {
                    decode_tuple(t, s, self.n)
                        .iter()
                        .map(|&x| self.base.pmf[x])
                        .product()
                })
                .collect(),
            RequestDistribution::Table(entries) => {
                let mut pmf = vec![0.0; count];
                for e in entries {
                    pmf[encode_tuple(&e.tuple, s)] += e.p;
                }
                pmf
            }
        }
    }
}

/// Lexicographic rank of a tuple of point indices in base `num_points`.
pub fn encode_tuple(tuple: &[usize], num_points: usize) -> usize {
    tuple.iter().fold(0, |acc, &x| acc * num_points + x)
}

pub fn decode_tuple(mut index: usize, num_points: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = index % num_points;
        index /= num_points;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceKind {
    Metric,
    ServerDependent,
    MultiRequest,
}

impl InstanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InstanceKind::Metric => "metric",
            InstanceKind::ServerDependent => "server-dependent",
            InstanceKind::MultiRequest => "multi-request",
        }
    }
}

impl std::fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Instance {
    Metric(MetricInstance),
    ServerDependent(ServerDependentInstance),
    MultiRequest(MultiRequestInstance),
}

impl Instance {
    pub fn kind(&self) -> InstanceKind {
        match self {
            Instance::Metric(_) => InstanceKind::Metric,
            Instance::ServerDependent(_) => InstanceKind::ServerDependent,
            Instance::MultiRequest(_) => InstanceKind::MultiRequest,
        }
    }

    pub fn points(&self) -> &[String] {
        match self {
            Instance::Metric(m) => &m.points,
            Instance::ServerDependent(s) => &s.points,
            Instance::MultiRequest(m) => &m.base.points,
        }
    }

    pub fn num_points(&self) -> usize {
        self.points().len()
    }

    pub fn k(&self) -> usize {
        match self {
            Instance::Metric(m) => m.k,
            Instance::ServerDependent(s) => s.k,
            Instance::MultiRequest(m) => m.base.k,
        }
    }

    /// Requests per period (1 unless multi-request).
    pub fn requests_per_period(&self) -> usize {
        match self {
            Instance::MultiRequest(m) => m.n,
            _ => 1,
        }
    }

    pub fn pmf(&self) -> &[f64] {
        match self {
            Instance::Metric(m) => &m.pmf,
            Instance::ServerDependent(s) => &s.pmf,
            Instance::MultiRequest(m) => &m.base.pmf,
        }
    }

    /// Cost charged when `server`, sitting at `from`, serves a request at `to`.
    #[inline]
    pub fn service_cost(&self, server: usize, from: usize, to: usize) -> f64 {
        match self {
            Instance::Metric(m) => m.dist.get(from, to),
            Instance::ServerDependent(s) => s.service_cost(server, from, to),
            Instance::MultiRequest(m) => m.base.dist.get(from, to),
        }
    }

    /// Travel distance for `server` between two points (no processing cost).
    #[inline]
    pub fn travel(&self, server: usize, from: usize, to: usize) -> f64 {
        match self {
            Instance::Metric(m) => m.dist.get(from, to),
            Instance::ServerDependent(s) => s.dists[server].get(from, to),
            Instance::MultiRequest(m) => m.base.dist.get(from, to),
        }
    }

    /// Dense pmf over request tuples of length `requests_per_period()`.
    pub fn request_tuple_pmf(&self) -> Vec<f64> {
        match self {
            Instance::MultiRequest(m) => m.tuple_pmf(),
            other => other.pmf().to_vec(),
        }
    }

    pub fn validated(self) -> Result<Self, InstanceError> {
        let report = validate(&self);
        if report.is_valid() {
            Ok(self)
        } else {
            Err(InstanceError::Invalid { report })
        }
    }
}

impl From<MetricInstance> for Instance {
    fn from(m: MetricInstance) -> Self {
        Instance::Metric(m)
    }
}

impl From<ServerDependentInstance> for Instance {
    fn from(s: ServerDependentInstance) -> Self {
        Instance::ServerDependent(s)
    }
}

impl From<MultiRequestInstance> for Instance {
    fn from(m: MultiRequestInstance) -> Self {
        Instance::MultiRequest(m)
    }
}
