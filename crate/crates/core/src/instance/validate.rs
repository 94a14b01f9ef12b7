use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::{DistMatrix, Instance, MultiRequestInstance, RequestDistribution};

/// Absolute slack allowed in the triangle inequality.
pub const METRIC_TOLERANCE: f64 = 1e-9;
/// Absolute slack allowed on the total probability mass.
pub const PMF_TOLERANCE: f64 = 1e-9;

/// One violated instance invariant. `server` is set when the offending
/// matrix or vector belongs to a specific server (server-dependent instances).
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    InvalidServerCount { k: usize },
    EmptyPointSet,
    ShapeMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    NonFinite {
        field: String,
        index: Vec<usize>,
    },
    NonzeroDiagonal {
        server: Option<usize>,
        i: usize,
        value: f64,
    },
    NegativeDistance {
        server: Option<usize>,
        i: usize,
        j: usize,
        value: f64,
    },
    Asymmetric {
        server: Option<usize>,
        i: usize,
        j: usize,
        forward: f64,
        backward: f64,
    },
    /// `d(i, j) > d(i, via) + d(via, j) + METRIC_TOLERANCE`.
    TriangleInequality {
        server: Option<usize>,
        i: usize,
        via: usize,
        j: usize,
        direct: f64,
        detour: f64,
    },
    NegativeProbability { index: usize, value: f64 },
    PmfSum { sum: f64 },
    NegativeProcessingCost {
        server: usize,
        point: usize,
        value: f64,
    },
    InvalidRequestCount { n: usize },
    RequestsExceedServers { n: usize, k: usize },
    TupleArity {
        entry: usize,
        expected: usize,
        found: usize,
    },
    TuplePointOutOfRange { entry: usize, point: usize },
    DuplicateTuple { entry: usize, first: usize },
    NegativeTupleProbability { entry: usize, value: f64 },
    TableSum { sum: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| format!("{v:?}")).collect();
        f.write_str(&parts.join("; "))
    }
}

pub fn validate(instance: &Instance) -> ValidationReport {
    let mut report = ValidationReport::default();
    match instance {
        Instance::Metric(m) => {
            check_common(&mut report, m.points.len(), m.k, &m.pmf);
            check_metric(&mut report, &m.dist, m.points.len(), None, "dist");
        }
        Instance::ServerDependent(s) => {
            let size = s.points.len();
            check_common(&mut report, size, s.k, &s.pmf);
            if s.dists.len() != s.k {
                report.push(Violation::ShapeMismatch {
                    field: "dists".into(),
                    expected: s.k,
                    found: s.dists.len(),
                });
            }
            for (u, d) in s.dists.iter().enumerate() {
                check_metric(&mut report, d, size, Some(u), &format!("dists[{u}]"));
            }
            if s.proc_costs.len() != s.k {
                report.push(Violation::ShapeMismatch {
                    field: "proc_costs".into(),
                    expected: s.k,
                    found: s.proc_costs.len(),
                });
            }
            for (u, costs) in s.proc_costs.iter().enumerate() {
                if costs.len() != size {
                    report.push(Violation::ShapeMismatch {
                        field: format!("proc_costs[{u}]"),
                        expected: size,
                        found: costs.len(),
                    });
                    continue;
                }
                for (p, &c) in costs.iter().enumerate() {
                    if !c.is_finite() {
                        report.push(Violation::NonFinite {
                            field: format!("proc_costs[{u}]"),
                            index: vec![p],
                        });
                    } else if c < 0.0 {
                        report.push(Violation::NegativeProcessingCost {
                            server: u,
                            point: p,
                            value: c,
                        });
                    }
                }
            }
        }
        Instance::MultiRequest(m) => {
            let base = &m.base;
            check_common(&mut report, base.points.len(), base.k, &base.pmf);
            check_metric(&mut report, &base.dist, base.points.len(), None, "dist");
            check_requests(&mut report, m);
        }
    }
    report
}

fn check_common(report: &mut ValidationReport, size: usize, k: usize, pmf: &[f64]) {
    if size == 0 {
        report.push(Violation::EmptyPointSet);
    }
    if k == 0 {
        report.push(Violation::InvalidServerCount { k });
    }
    if pmf.len() != size {
        report.push(Violation::ShapeMismatch {
            field: "pmf".into(),
            expected: size,
            found: pmf.len(),
        });
        return;
    }
    let mut all_finite = true;
    for (i, &p) in pmf.iter().enumerate() {
        if !p.is_finite() {
            all_finite = false;
            report.push(Violation::NonFinite {
                field: "pmf".into(),
                index: vec![i],
            });
        } else if p < 0.0 {
            report.push(Violation::NegativeProbability { index: i, value: p });
        }
    }
    if all_finite {
        let sum: f64 = pmf.iter().sum();
        if (sum - 1.0).abs() > PMF_TOLERANCE {
            report.push(Violation::PmfSum { sum });
        }
    }
}

fn check_metric(
    report: &mut ValidationReport,
    d: &DistMatrix,
    size: usize,
    server: Option<usize>,
    field: &str,
) {
    if d.size() != size {
        report.push(Violation::ShapeMismatch {
            field: field.to_string(),
            expected: size,
            found: d.size(),
        });
        return;
    }
    let mut finite = true;
    for i in 0..size {
        for j in 0..size {
            if !d.get(i, j).is_finite() {
                finite = false;
                report.push(Violation::NonFinite {
                    field: field.to_string(),
                    index: vec![i, j],
                });
            }
        }
    }
    if !finite {
        return;
    }
    for i in 0..size {
        let v = d.get(i, i);
        if v != 0.0 {
            report.push(Violation::NonzeroDiagonal { server, i, value: v });
        }
    }
    // Pairwise checks run over unordered pairs i < j so a mutated symmetric
    // pair produces one entry, not two.
    for i in 0..size {
        for j in (i + 1)..size {
            let (fwd, bwd) = (d.get(i, j), d.get(j, i));
            if fwd != bwd {
                report.push(Violation::Asymmetric {
                    server,
                    i,
                    j,
                    forward: fwd,
                    backward: bwd,
                });
            }
            if fwd < 0.0 || bwd < 0.0 {
                report.push(Violation::NegativeDistance {
                    server,
                    i,
                    j,
                    value: fwd.min(bwd),
                });
            }
        }
    }
    for i in 0..size {
        for j in (i + 1)..size {
            let direct = d.get(i, j);
            for via in 0..size {
                if via == i || via == j {
                    continue;
                }
                let detour = d.get(i, via) + d.get(via, j);
                if direct > detour + METRIC_TOLERANCE {
                    report.push(Violation::TriangleInequality {
                        server,
                        i,
                        via,
                        j,
                        direct,
                        detour,
                    });
                }
            }
        }
    }
}

fn check_requests(report: &mut ValidationReport, m: &MultiRequestInstance) {
    let k = m.base.k;
    let size = m.base.points.len();
    if m.n == 0 {
        report.push(Violation::InvalidRequestCount { n: m.n });
    }
    if m.n > k {
        report.push(Violation::RequestsExceedServers { n: m.n, k });
    }
    let RequestDistribution::Table(entries) = &m.requests else {
        return;
    };
    let mut seen: HashMap<&[usize], usize> = HashMap::new();
    let mut sum_ok = true;
    for (e, entry) in entries.iter().enumerate() {
        if entry.tuple.len() != m.n {
            report.push(Violation::TupleArity {
                entry: e,
                expected: m.n,
                found: entry.tuple.len(),
            });
        }
        for &point in &entry.tuple {
            if point >= size {
                report.push(Violation::TuplePointOutOfRange { entry: e, point });
            }
        }
        if let Some(&first) = seen.get(entry.tuple.as_slice()) {
            report.push(Violation::DuplicateTuple { entry: e, first });
        } else {
            seen.insert(&entry.tuple, e);
        }
        if !entry.p.is_finite() {
            sum_ok = false;
            report.push(Violation::NonFinite {
                field: "request_table".into(),
                index: vec![e],
            });
        } else if entry.p < 0.0 {
            report.push(Violation::NegativeTupleProbability {
                entry: e,
                value: entry.p,
            });
        }
    }
    if sum_ok {
        let sum: f64 = entries.iter().map(|e| e.p).sum();
        if (sum - 1.0).abs() > PMF_TOLERANCE {
            report.push(Violation::TableSum { sum });
        }
    }
}
