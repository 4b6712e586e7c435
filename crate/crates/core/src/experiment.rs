//! Monte-Carlo experiment harness: replications, per-point threshold tuning
//! for the proposed policy, sweeps, and result files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ClassKind, SimConfig};
use crate::engine;
use crate::error::{Error, Result};
use crate::metrics::{aggregate_replications, summarize, RunSummary};
use crate::optimizer::{self, apply_thresholds, grid_search, Evaluation, GridResult};
use crate::scenario::{builtin_config_with, Scenario, DEFAULT_EXTREME_GAMMA, LAMBDA_ED1_RANGE};
use crate::schedulers::PolicyKind;
use crate::traffic::{generate_traces, Traces};

/// Traces for replications `0..cfg.replications`, shared by every policy
/// and threshold vector evaluated on this configuration.
pub fn replication_traces(cfg: &SimConfig) -> Vec<Traces> {
    (0..cfg.replications)
        .into_par_iter()
        .map(|r| generate_traces(cfg, r))
        .collect()
}

/// Runs one policy over every replication trace.
pub fn simulate_replications(cfg: &SimConfig, policy: PolicyKind, traces: &[Traces]) -> Result<Vec<RunSummary>> {
    let built = policy.build(cfg)?;
    traces
        .par_iter()
        .map(|t| engine::run(cfg, built.as_ref(), t).map(|stats| summarize(cfg, &stats)))
        .collect()
}

fn mean_ci(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (values[0], 0.0),
        _ => aggregate_replications(values).expect("two or more values"),
    }
}

/// Aggregate of one policy at one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyResult {
    pub policy: PolicyKind,
    pub v_mean: f64,
    pub v_ci: f64,
    /// Mean raw class utility per class (flat order), over replications
    /// where the class served something.
    pub class_utilities: Vec<f64>,
    pub pu_drop_rates: Vec<f64>,
    /// Thresholds in effect, flat class order (infinity for none).
    pub thresholds: Vec<f64>,
    pub replications: usize,
}

impl PolicyResult {
    fn from_runs(cfg: &SimConfig, policy: PolicyKind, runs: &[RunSummary]) -> Self {
        let vs: Vec<f64> = runs.iter().map(|r| r.system_utility).collect();
        let (v_mean, v_ci) = mean_ci(&vs);
        let classes = cfg.class_count();
        let class_utilities = (0..classes)
            .map(|k| {
                let xs: Vec<f64> = runs.iter().filter_map(|r| r.class_utilities[k]).collect();
                mean_ci(&xs).0
            })
            .collect();
        let pu_drop_rates = (0..cfg.pu_classes.len())
            .map(|k| mean_ci(&runs.iter().map(|r| r.pu_drop_rates[k]).collect::<Vec<_>>()).0)
            .collect();
        let thresholds = cfg
            .pu_classes
            .iter()
            .map(|p| p.threshold_ms)
            .chain(cfg.ed_classes.iter().map(|e| e.threshold()))
            .collect();
        Self {
            policy,
            v_mean,
            v_ci,
            class_utilities,
            pu_drop_rates,
            thresholds,
            replications: runs.len(),
        }
    }
}

/// Evaluates `policy` on `cfg` with the given traces.
pub fn evaluate(cfg: &SimConfig, policy: PolicyKind, traces: &[Traces]) -> Result<PolicyResult> {
    let runs = simulate_replications(cfg, policy, traces)?;
    Ok(PolicyResult::from_runs(cfg, policy, &runs))
}

/// How the proposed policy's thresholds are chosen at each point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tuning {
    /// Grid points per dimension; 0 keeps the configured thresholds.
    pub resolution: usize,
    /// Also search non-lowest-priority ED thresholds.
    pub include_ed: bool,
    /// Extra ED threshold values always added to the ED dimensions (the
    /// configured defaults), so the search can never do worse than them.
    pub keep_defaults: bool,
}

impl Tuning {
    pub fn fixed() -> Self {
        Self {
            resolution: 0,
            include_ed: false,
            keep_defaults: true,
        }
    }

    pub fn pu_only(resolution: usize) -> Self {
        Self {
            resolution,
            include_ed: false,
            keep_defaults: true,
        }
    }

    pub fn pu_and_ed(resolution: usize) -> Self {
        Self {
            resolution,
            include_ed: true,
            keep_defaults: true,
        }
    }
}

/// Searches the proposed policy's thresholds on common traces and returns
/// the grid plus the tuned configuration.
pub fn tune_proposed(cfg: &SimConfig, traces: &[Traces], tuning: &Tuning) -> Result<(SimConfig, GridResult)> {
    let mut dims = optimizer::threshold_dims(cfg, tuning.resolution.max(1), tuning.include_ed)?;
    if tuning.keep_defaults {
        dims = dims
            .into_iter()
            .map(|d| match d.target {
                optimizer::ThresholdTarget::Ed(i) => {
                    let def = cfg.ed_classes[i].threshold();
                    if def.is_finite() {
                        d.with_points(&[def])
                    } else {
                        d
                    }
                }
                optimizer::ThresholdTarget::Pu(_) => d,
            })
            .collect();
    }
    let grid = grid_search(&dims, |point| {
        let c = apply_thresholds(cfg, &dims, point);
        let runs = simulate_replications(&c, PolicyKind::Proposed, traces)?;
        let vs: Vec<f64> = runs.iter().map(|r| r.system_utility).collect();
        let (mean, ci) = mean_ci(&vs);
        Ok(Evaluation { mean, ci })
    })?;
    let tuned = apply_thresholds(cfg, &dims, &grid.best);
    Ok((tuned, grid))
}

/// All policies at one configuration. The proposed policy is tuned first
/// when `tuning.resolution > 0`.
pub fn run_point(cfg: &SimConfig, policies: &[PolicyKind], tuning: &Tuning) -> Result<Vec<PolicyResult>> {
    cfg.ensure_valid()?;
    let traces = replication_traces(cfg);
    policies
        .iter()
        .map(|&p| {
            if p == PolicyKind::Proposed && tuning.resolution > 0 {
                let (tuned, _) = tune_proposed(cfg, &traces, tuning)?;
                evaluate(&tuned, p, &traces)
            } else {
                evaluate(cfg, p, &traces)
            }
        })
        .collect()
}

/// `V(proposed) - max V(baseline)` at one point; `None` unless both sides
/// were evaluated.
pub fn utility_gap(results: &[PolicyResult]) -> Option<f64> {
    let proposed = results.iter().find(|r| r.policy == PolicyKind::Proposed)?;
    let best = results
        .iter()
        .filter(|r| r.policy != PolicyKind::Proposed)
        .map(|r| r.v_mean)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))?;
    Some(proposed.v_mean - best)
}

/// A named scenario swept over the ED1 arrival rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub base: SimConfig,
    pub sweep_values: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    pub tuning: Tuning,
    pub extreme_gamma: f64,
    pub output_dir: Option<PathBuf>,
}

/// `steps` evenly spaced values from `from` to `to` inclusive.
pub fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..steps)
            .map(|i| {
                let x = from + (to - from) * i as f64 / (steps - 1) as f64;
                // Trim float noise so CSV values read as typed.
                (x * 1e12).round() / 1e12
            })
            .collect(),
    }
}

/// The plan behind each built-in scenario: 4 points over the ED1 rate
/// range, all policies, and PU thresholds tuned per point.
pub fn builtin_scenario(scenario: Scenario) -> ExperimentPlan {
    let values = linspace(LAMBDA_ED1_RANGE.0, LAMBDA_ED1_RANGE.1, 4);
    ExperimentPlan {
        scenario,
        base: builtin_config_with(scenario, values[0], DEFAULT_EXTREME_GAMMA),
        sweep_values: values,
        policies: PolicyKind::ALL.to_vec(),
        tuning: Tuning {
            resolution: optimizer::DEFAULT_RESOLUTION,
            include_ed: scenario.optimizes_delta(),
            keep_defaults: true,
        },
        extreme_gamma: DEFAULT_EXTREME_GAMMA,
        output_dir: None,
    }
}

impl ExperimentPlan {
    pub fn config_at(&self, lambda_ed1: f64) -> SimConfig {
        let mut cfg = builtin_config_with(self.scenario, lambda_ed1, self.extreme_gamma);
        cfg.rng_seed = self.base.rng_seed;
        cfg.replications = self.base.replications;
        cfg.drop_failed_pu = self.base.drop_failed_pu;
        cfg.work_conserving = self.base.work_conserving;
        cfg.sim_horizon_ms = self.base.sim_horizon_ms;
        cfg.warmup_ms = self.base.warmup_ms;
        cfg.static_order = self.base.static_order.clone();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep_values.is_empty() {
            return Err(Error::invalid("sweep range is empty"));
        }
        if self.policies.is_empty() {
            return Err(Error::invalid("no policies selected"));
        }
        self.config_at(self.sweep_values[0]).ensure_valid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lambda_ed1: f64,
    pub results: Vec<PolicyResult>,
    pub delta_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub scenario: Scenario,
    pub rng_seed: u64,
    pub replications: u32,
    pub static_order: String,
    pub points: Vec<SweepPoint>,
    /// Largest per-point gap between the proposed policy and the best
    /// baseline.
    pub max_delta_v: Option<f64>,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// CSV header: the fixed columns first, then thresholds and the static
/// order in effect.
fn csv_header(cfg: &SimConfig) -> Vec<String> {
    let mut h = vec!["policy".to_string(), "lambda_ed1".into(), "V_mean".into(), "V_ci".into()];
    for c in cfg.class_refs() {
        let kind = match c.kind {
            ClassKind::Pu => "pu",
            ClassKind::Ed => "ed",
        };
        h.push(format!("U{kind}{}", c.id));
    }
    for p in &cfg.pu_classes {
        h.push(format!("drop_rate_pu{}", p.id));
    }
    for p in &cfg.pu_classes {
        h.push(format!("l_t_pu{}", p.id));
    }
    for e in &cfg.ed_classes {
        h.push(format!("delta_ed{}", e.id));
    }
    h.push("static_order".into());
    h
}

fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        x.to_string()
    }
}

fn static_order_label(cfg: &SimConfig) -> String {
    cfg.effective_static_order()
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(">")
}

fn csv_row(cfg: &SimConfig, lambda: f64, r: &PolicyResult) -> Vec<String> {
    let mut row = vec![
        r.policy.to_string(),
        fmt_f64(lambda),
        fmt_f64(r.v_mean),
        fmt_f64(r.v_ci),
    ];
    row.extend(r.class_utilities.iter().map(|&u| fmt_f64(u)));
    row.extend(r.pu_drop_rates.iter().map(|&d| fmt_f64(d)));
    row.extend(r.thresholds.iter().map(|&t| fmt_f64(t)));
    row.push(if r.policy == PolicyKind::FixedPriority {
        static_order_label(cfg)
    } else {
        String::new()
    });
    row
}

/// Runs every (sweep value, policy) pair. Rows are written and flushed as
/// each point completes when `plan.output_dir` is set.
pub fn run_sweep(plan: &ExperimentPlan) -> Result<SweepReport> {
    plan.validate()?;
    let first = plan.config_at(plan.sweep_values[0]);
    let load = first.offered_load();
    info!("scenario {}: offered load at first point {load:.3}", plan.scenario);

    let mut writer = match &plan.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(RESULTS_FILE);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = csv::Writer::from_writer(BufWriter::new(f));
            w.write_record(csv_header(&first))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };

    let mut points = Vec::with_capacity(plan.sweep_values.len());
    for &lambda in &plan.sweep_values {
        let cfg = plan.config_at(lambda);
        let rho = cfg.offered_load();
        if rho >= 1.0 {
            warn!("lambda_ed1={lambda}: offered load {rho:.3} >= 1");
        }
        let results = run_point(&cfg, &plan.policies, &plan.tuning)?;
        if let Some((w, path)) = &mut writer {
            for r in &results {
                w.write_record(csv_row(&cfg, lambda, r))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        let delta_v = utility_gap(&results);
        info!("lambda_ed1={lambda}: delta V = {delta_v:?}");
        points.push(SweepPoint {
            lambda_ed1: lambda,
            results,
            delta_v,
        });
    }

    let max_delta_v = points
        .iter()
        .filter_map(|p| p.delta_v)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    let report = SweepReport {
        scenario: plan.scenario,
        rng_seed: first.rng_seed,
        replications: first.replications,
        static_order: static_order_label(&first),
        points,
        max_delta_v,
    };
    if let Some(dir) = &plan.output_dir {
        write_json(&dir.join(SUMMARY_FILE), &report)?;
    }
    Ok(report)
}

/// Writes the results CSV for a single configuration (no sweep variable
/// beyond the ED1 rate of `cfg`).
pub fn write_point_csv<W: Write>(cfg: &SimConfig, results: &[PolicyResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_header(cfg))?;
    let lambda = cfg.ed_classes.first().map_or(f64::NAN, |e| e.arrival_rate_per_ms);
    for r in results {
        out.write_record(csv_row(cfg, lambda, r))?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    // Non-finite floats (e.g. an infinite threshold) serialize as null.
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
