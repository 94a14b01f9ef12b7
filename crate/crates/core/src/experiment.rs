//! Certification harness: random instances, every policy evaluated exactly,
//! and the factor-two sandwich checked state by state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{
    random_euclidean_instance, random_multi_request_instance, random_server_dependent_instance, Instance,
    InstanceError, InstanceKind,
};
use crate::kmedian::{
    generalized_kmedian_exact, kmedian_exact, kmedian_local_search, multi_kmedian_exact, KMedianError,
    LocalSearchParams, MedianSet,
};
use crate::mdp::{
    build_mdp, canonical_h_lower, canonical_h_upper, evaluate_exact, greedy_policy, lemma1_lower, lemma1_upper,
    policy_from_partition, solve_optimal, MdpError, MdpModel,
};
use crate::policy::{DecentralizedPolicy, PolicyError};
use crate::report::fmt12;

/// Slack allowed on every certified inequality.
pub const CERT_TOLERANCE: f64 = 1e-9;
/// Skews cycled through by trial index.
pub const TRIAL_SKEWS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

pub const CSV_HEADER: &str =
    "seed,variant,kmedian_opt,ls_obj,rho,J_opt,J_mud,J_mud_ls,J_greedy,lower_bound,upper_bound,factor,ok";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    KMedian(#[from] KMedianError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("invalid certification config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "server-dep")]
    ServerDep,
    #[serde(rename = "multi")]
    Multi,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::ServerDep => "server-dep",
            Variant::Multi => "multi",
        }
    }

    pub fn of(kind: InstanceKind) -> Self {
        match kind {
            InstanceKind::Metric => Variant::Base,
            InstanceKind::ServerDependent => Variant::ServerDep,
            InstanceKind::MultiRequest => Variant::Multi,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Variant::Base),
            "server-dep" => Ok(Variant::ServerDep),
            "multi" => Ok(Variant::Multi),
            other => Err(format!("unknown variant {other:?} (expected base, server-dep or multi)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertifyConfig {
    pub trials: usize,
    pub seed: u64,
    pub points: usize,
    pub k: usize,
    pub variant: Variant,
    pub n: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            trials: 50,
            seed: 0,
            points: 5,
            k: 2,
            variant: Variant::Base,
            n: 1,
        }
    }
}

/// One certified instance. Gains are maxima over initial states; the checks
/// behind `ok` are applied at every state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertifyRow {
    pub seed: u64,
    pub variant: Variant,
    pub skew: f64,
    pub medians: Vec<usize>,
    pub kmedian_opt: f64,
    pub ls_obj: Option<f64>,
    pub rho: Option<f64>,
    #[serde(rename = "J_opt")]
    pub j_opt: f64,
    #[serde(rename = "J_mud")]
    pub j_mud: f64,
    #[serde(rename = "J_mud_ls")]
    pub j_mud_ls: Option<f64>,
    #[serde(rename = "J_greedy")]
    pub j_greedy: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub factor: f64,
    pub ok: bool,
    /// Names of the inequalities that failed, empty when `ok`.
    pub violations: Vec<String>,
}

/// Generates the instance for `trial` of `config`.
pub fn trial_instance(config: &CertifyConfig, trial: usize) -> Result<(u64, f64, Instance), ExperimentError> {
    let seed = config.seed.wrapping_add(trial as u64);
    let skew = TRIAL_SKEWS[trial % TRIAL_SKEWS.len()];
    let (p, k) = (config.points, config.k);
    let instance = match config.variant {
        Variant::Base => random_euclidean_instance(seed, p, k, skew)?.into(),
        Variant::ServerDep => random_server_dependent_instance(seed, p, k, skew)?.into(),
        Variant::Multi => random_multi_request_instance(seed, p, k, config.n, skew)?.into(),
    };
    Ok((seed, skew, instance))
}

/// `max_x a(x) / b(x)` with `0 / 0 = 1`.
fn max_ratio(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            if y > 0.0 {
                x / y
            } else if x <= 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn gains(model: &MdpModel, instance: &Instance, medians: &MedianSet) -> Result<Vec<f64>, ExperimentError> {
    let policy = DecentralizedPolicy::build(instance, medians)?;
    let table = policy_from_partition(model, &policy)?;
    Ok(evaluate_exact(model, &table)?.gain)
}

/// Runs every solver on `instance` and checks
/// `k-median ≤ lower ≤ J* ≤ J_d ≤ upper ≤ 2·k-median` and `J_d ≤ 2 J*` per
/// state, plus `J̃_d ≤ 2ρ J*` when local search applies.
pub fn certify_instance(instance: &Instance, seed: u64, skew: f64) -> Result<CertifyRow, ExperimentError> {
    let instance = instance.clone().validated()?;
    let variant = Variant::of(instance.kind());
    let medians = match &instance {
        Instance::Metric(m) => kmedian_exact(m)?,
        Instance::ServerDependent(g) => generalized_kmedian_exact(g)?,
        Instance::MultiRequest(m) => multi_kmedian_exact(m)?,
    };
    let local = match &instance {
        Instance::Metric(m) => Some(kmedian_local_search(
            m,
            LocalSearchParams {
                swap_size: 1,
                improvement_threshold: 0.0,
                seed,
            },
        )?),
        _ => None,
    };

    let model = build_mdp(&instance)?;
    let optimal = solve_optimal(&model)?;
    let j_opt = &optimal.eval.gain;
    let j_mud = gains(&model, &instance, &medians)?;
    let policy = DecentralizedPolicy::build(&instance, &medians)?;
    let table = policy_from_partition(&model, &policy)?;
    let j_greedy = evaluate_exact(&model, &greedy_policy(&model))?.gain;
    let lower = lemma1_lower(&model, &canonical_h_lower(&model))?;
    let upper = lemma1_upper(&model, &table, &canonical_h_upper(&model, &medians)?)?;
    let opt = medians.objective;

    let mut violations = Vec::new();
    let mut check = |name: &str, holds: bool| {
        if !holds {
            violations.push(name.to_string());
        }
    };
    let tol = CERT_TOLERANCE;
    check("kmedian_opt <= lower_bound", opt <= lower + tol);
    check("lower_bound <= J_opt", j_opt.iter().all(|&j| lower <= j + tol));
    check("J_opt <= J_mud", j_opt.iter().zip(&j_mud).all(|(&o, &d)| o <= d + tol));
    check("J_mud <= upper_bound", j_mud.iter().all(|&d| d <= upper + tol));
    check("upper_bound <= 2 kmedian_opt", upper <= 2.0 * opt + tol);
    check("J_mud <= 2 J_opt", j_opt.iter().zip(&j_mud).all(|(&o, &d)| d <= 2.0 * o + tol));
    let factor = max_ratio(&j_mud, j_opt);
    check("factor <= 2", factor <= 2.0 + tol);

    let (ls_obj, rho, j_mud_ls) = match &local {
        Some((ls, report)) => {
            let rho = report.ratio.expect("certified sizes admit an exact comparison");
            let j_ls = gains(&model, &instance, ls)?;
            check("rho >= 1", rho >= 1.0 - tol);
            check(
                "J_mud_ls <= 2 rho J_opt",
                j_opt.iter().zip(&j_ls).all(|(&o, &d)| d <= 2.0 * rho * o + tol),
            );
            (Some(ls.objective), Some(rho), Some(max_of(&j_ls)))
        }
        None => (None, None, None),
    };

    Ok(CertifyRow {
        seed,
        variant,
        skew,
        medians: medians.medians.clone(),
        kmedian_opt: opt,
        ls_obj,
        rho,
        j_opt: max_of(j_opt),
        j_mud: max_of(&j_mud),
        j_mud_ls,
        j_greedy: max_of(&j_greedy),
        lower_bound: lower,
        upper_bound: upper,
        factor,
        ok: violations.is_empty(),
        violations,
    })
}

/// Certifies `config.trials` seeded instances in parallel; rows come back in
/// trial order.
pub fn run_certify(config: &CertifyConfig) -> Result<Vec<CertifyRow>, ExperimentError> {
    if config.trials == 0 {
        return Err(ExperimentError::Config("trials must be at least 1".into()));
    }
    if config.variant != Variant::Multi && config.n != 1 {
        return Err(ExperimentError::Config(format!(
            "n = {} requires the multi variant",
            config.n
        )));
    }
    (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let (seed, skew, instance) = trial_instance(config, trial)?;
            certify_instance(&instance, seed, skew)
        })
        .collect()
}

fn cell(x: Option<f64>) -> String {
    x.map(fmt12).unwrap_or_default()
}

/// Rows as CSV with a header; absent local-search columns are left empty.
pub fn certify_csv(rows: &[CertifyRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.seed.to_string(),
            r.variant.as_str().to_string(),
            fmt12(r.kmedian_opt),
            cell(r.ls_obj),
            cell(r.rho),
            fmt12(r.j_opt),
            fmt12(r.j_mud),
            cell(r.j_mud_ls),
            fmt12(r.j_greedy),
            fmt12(r.lower_bound),
            fmt12(r.upper_bound),
            fmt12(r.factor),
            r.ok.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::line_instance;

    #[test]
    fn pinned_line3_row() {
        let row = certify_instance(&line_instance(3, 2).into(), 0, 0.0).unwrap();
        let third = 1.0 / 3.0;
        for v in [row.kmedian_opt, row.j_opt, row.j_mud, row.lower_bound] {
            assert!((v - third).abs() < 1e-9, "{row:?}");
        }
        assert!((row.upper_bound - 2.0 * third).abs() < 1e-9);
        assert!((row.factor - 1.0).abs() < 1e-9);
        assert!(row.ok, "{:?}", row.violations);
    }

    #[test]
    fn rows_keep_trial_order() {
        let config = CertifyConfig {
            trials: 6,
            seed: 40,
            points: 4,
            ..CertifyConfig::default()
        };
        let rows = run_certify(&config).unwrap();
        let seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, (40..46).collect::<Vec<_>>());
        assert!(rows.iter().all(|r| r.ok));
        let csv = certify_csv(&rows);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn n_requires_multi() {
        let config = CertifyConfig {
            n: 2,
            ..CertifyConfig::default()
        };
        assert!(matches!(run_certify(&config), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn ratio_conventions() {
        assert_eq!(max_ratio(&[0.0, 1.0], &[0.0, 1.0]), 1.0);
        assert_eq!(max_ratio(&[1.0], &[0.0]), f64::INFINITY);
        assert_eq!(max_ratio(&[3.0, 1.0], &[2.0, 1.0]), 1.5);
    }
}
