//! JSON instance documents.

use serde::{Deserialize, Serialize};

use super::{
    DistMatrix, Instance, InstanceError, InstanceKind, MetricInstance, MultiRequestInstance,
    RequestDistribution, ServerDependentInstance, TupleProb,
};

const IID_PRODUCT: &str = "iid-product";

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(rename = "type")]
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dist: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dists: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    proc_costs: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pmf: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    request_table: Option<Vec<TupleProb>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    request_mode: Option<String>,
}

fn require<T>(value: Option<T>, kind: InstanceKind, field: &'static str) -> Result<T, InstanceError> {
    value.ok_or_else(|| InstanceError::MissingField {
        kind: kind.to_string(),
        field,
    })
}

fn forbid<T>(value: &Option<T>, kind: InstanceKind, field: &'static str) -> Result<(), InstanceError> {
    match value {
        Some(_) => Err(InstanceError::UnexpectedField {
            kind: kind.to_string(),
            field,
        }),
        None => Ok(()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, field: &'static str) -> Result<DistMatrix, InstanceError> {
    DistMatrix::from_rows(rows).map_err(|message| InstanceError::Malformed { field, message })
}

/// Parses a document into an instance without validating it.
pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let doc: Document = serde_json::from_str(text).map_err(|e| InstanceError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let kind_str = doc.kind.clone().ok_or_else(|| InstanceError::MissingField {
        kind: "untyped".into(),
        field: "type",
    })?;
    let kind = match kind_str.as_str() {
        "metric" => InstanceKind::Metric,
        "server-dependent" => InstanceKind::ServerDependent,
        "multi-request" => InstanceKind::MultiRequest,
        _ => return Err(InstanceError::UnknownType(kind_str)),
    };
    let points = require(doc.points, kind, "points")?;
    let pmf = require(doc.pmf, kind, "pmf")?;
    let k = require(doc.k, kind, "k")?;
    match kind {
        InstanceKind::Metric | InstanceKind::MultiRequest => {
            forbid(&doc.dists, kind, "dists")?;
            forbid(&doc.proc_costs, kind, "proc_costs")?;
            let dist = matrix(require(doc.dist, kind, "dist")?, "dist")?;
            let base = MetricInstance {
                points,
                dist,
                pmf,
                k,
            };
            if kind == InstanceKind::Metric {
                forbid(&doc.n, kind, "n")?;
                forbid(&doc.request_table, kind, "request_table")?;
                forbid(&doc.request_mode, kind, "request_mode")?;
                return Ok(Instance::Metric(base));
            }
            let n = require(doc.n, kind, "n")?;
            let requests = match (doc.request_table, doc.request_mode) {
                (Some(table), None) => RequestDistribution::Table(table),
                (None, Some(mode)) if mode == IID_PRODUCT => RequestDistribution::IidProduct,
                (None, Some(mode)) => {
                    return Err(InstanceError::Malformed {
                        field: "request_mode",
                        message: format!("unknown mode `{mode}`, expected `{IID_PRODUCT}`"),
                    })
                }
                (Some(_), Some(_)) => {
                    return Err(InstanceError::Malformed {
                        field: "request_table",
                        message: "`request_table` and `request_mode` are mutually exclusive".into(),
                    })
                }
                (None, None) => {
                    return Err(InstanceError::MissingField {
                        kind: kind.to_string(),
                        field: "request_table",
                    })
                }
            };
            Ok(Instance::MultiRequest(MultiRequestInstance { base, n, requests }))
        }
        InstanceKind::ServerDependent => {
            forbid(&doc.dist, kind, "dist")?;
            forbid(&doc.n, kind, "n")?;
            forbid(&doc.request_table, kind, "request_table")?;
            forbid(&doc.request_mode, kind, "request_mode")?;
            let dists = require(doc.dists, kind, "dists")?
                .into_iter()
                .map(|m| matrix(m, "dists"))
                .collect::<Result<Vec<_>, _>>()?;
            let proc_costs = require(doc.proc_costs, kind, "proc_costs")?;
            Ok(Instance::ServerDependent(ServerDependentInstance {
                points,
                dists,
                proc_costs,
                pmf,
                k,
            }))
        }
    }
}

/// Parses and validates an instance document.
pub fn load_instance(text: &str) -> Result<Instance, InstanceError> {
    parse_instance(text)?.validated()
}

/// Serializes an instance as a single-line JSON document.
pub fn save_instance(instance: &Instance) -> String {
    let mut doc = Document {
        kind: Some(instance.kind().as_str().to_string()),
        points: Some(instance.points().to_vec()),
        pmf: Some(instance.pmf().to_vec()),
        k: Some(instance.k()),
        ..Document::default()
    };
    match instance {
        Instance::Metric(m) => doc.dist = Some(m.dist.to_rows()),
        Instance::ServerDependent(s) => {
            doc.dists = Some(s.dists.iter().map(DistMatrix::to_rows).collect());
            doc.proc_costs = Some(s.proc_costs.clone());
        }
        Instance::MultiRequest(m) => {
            doc.dist = Some(m.base.dist.to_rows());
            doc.n = Some(m.n);
            match &m.requests {
                RequestDistribution::IidProduct => doc.request_mode = Some(IID_PRODUCT.into()),
                RequestDistribution::Table(t) => doc.request_table = Some(t.clone()),
            }
        }
    }
    serde_json::to_string(&doc).expect("instance documents always serialize")
}
