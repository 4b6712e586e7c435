//! Threshold search: reduced per-class windows and an exhaustive grid over
//! them.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EdClassSpec, PuClassSpec, SimConfig, TimeMs};
use crate::error::{Error, Result};
use crate::utility::ed_inverse_utility;

pub const DEFAULT_RESOLUTION: usize = 9;

/// ~99th percentile of an exponential service time is `4.6 / μ`.
pub const T99_FACTOR: f64 = 4.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `n` evenly spaced points including both ends; a single point is the
    /// midpoint.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.midpoint()],
            _ => (0..n)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

/// `[max(0, l_d - 4.6/μ), l_d]`.
pub fn pu_search_window(spec: &PuClassSpec) -> Interval {
    let t99 = T99_FACTOR / spec.service_rate_per_ms;
    Interval {
        lo: (spec.deadline_ms - t99).max(0.0),
        hi: spec.deadline_ms,
    }
}

/// `[max(0, l_{0.99} - 1/μ), l_{0.01}]` where `l_x` is the latency at which
/// the class utility equals `x`.
pub fn ed_search_window(spec: &EdClassSpec) -> Result<Interval> {
    let l99 = ed_inverse_utility(0.99, spec.a, spec.b)?;
    let l01 = ed_inverse_utility(0.01, spec.a, spec.b)?;
    Interval::new((l99 - 1.0 / spec.service_rate_per_ms).max(0.0), l01)
}

/// Which threshold a grid dimension sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ThresholdTarget {
    /// Position in `pu_classes`.
    Pu(usize),
    /// Position in `ed_classes`.
    Ed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridDim {
    pub label: String,
    pub target: ThresholdTarget,
    pub values: Vec<f64>,
}

impl GridDim {
    /// Adds extra operating points (e.g. a published default) to the grid.
    pub fn with_points(mut self, extra: &[f64]) -> Self {
        self.values.extend_from_slice(extra);
        self.values.sort_by(f64::total_cmp);
        self.values.dedup();
        self
    }
}

/// Grid dimensions for every PU threshold, plus every non-lowest-priority
/// ED threshold when `include_ed`.
pub fn threshold_dims(cfg: &SimConfig, resolution: usize, include_ed: bool) -> Result<Vec<GridDim>> {
    let mut dims: Vec<GridDim> = cfg
        .pu_classes
        .iter()
        .enumerate()
        .map(|(i, pu)| GridDim {
            label: format!("l_t_pu{}", pu.id),
            target: ThresholdTarget::Pu(i),
            values: pu_search_window(pu).grid(resolution),
        })
        .collect();
    if include_ed {
        let order = cfg.ed_priority_order();
        for &i in &order[..order.len().saturating_sub(1)] {
            let ed = &cfg.ed_classes[i];
            dims.push(GridDim {
                label: format!("delta_ed{}", ed.id),
                target: ThresholdTarget::Ed(i),
                values: ed_search_window(ed)?.grid(resolution),
            });
        }
    }
    Ok(dims)
}

pub fn apply_thresholds(cfg: &SimConfig, dims: &[GridDim], point: &[f64]) -> SimConfig {
    let mut out = cfg.clone();
    for (d, &v) in dims.iter().zip(point) {
        match d.target {
            ThresholdTarget::Pu(i) => out.pu_classes[i].threshold_ms = v,
            ThresholdTarget::Ed(i) => out.ed_classes[i].threshold_ms = Some(v),
        }
    }
    out
}

/// Mean system utility (and CI half-width) at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub mean: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub point: Vec<TimeMs>,
    pub mean: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub labels: Vec<String>,
    pub best: Vec<TimeMs>,
    pub best_mean: f64,
    pub best_ci: f64,
    pub table: Vec<GridRow>,
}

impl GridResult {
    /// CSV with one column per dimension, then `V_mean,V_ci`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = self.labels.clone();
        header.push("V_mean".into());
        header.push("V_ci".into());
        out.write_record(&header)?;
        for row in &self.table {
            let mut rec: Vec<String> = row.point.iter().map(|v| v.to_string()).collect();
            rec.push(row.mean.to_string());
            rec.push(row.ci.to_string());
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Row-major (last dimension fastest) Cartesian product of index vectors.
fn grid_indices(dims: &[GridDim]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for d in dims {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..d.values.len()).map(move |i| {
                    let mut p = prefix.clone();
                    p.push(i);
                    p
                })
            })
            .collect();
    }
    out
}

/// Evaluates every grid point and returns the best. Ties go to the
/// lexicographically larger point, i.e. later intervention.
pub fn grid_search<F>(dims: &[GridDim], evaluator: F) -> Result<GridResult>
where
    F: Fn(&[f64]) -> Result<Evaluation> + Sync,
{
    if dims.iter().any(|d| d.values.is_empty()) {
        return Err(Error::invalid("grid dimension with no values"));
    }
    let points: Vec<Vec<f64>> = grid_indices(dims)
        .into_iter()
        .map(|idx| idx.iter().zip(dims).map(|(&i, d)| d.values[i]).collect())
        .collect();
    let evals: Vec<Evaluation> = points
        .par_iter()
        .map(|p| evaluator(p))
        .collect::<Result<_>>()?;

    let mut best = 0;
    for i in 1..evals.len() {
        // Points are enumerated in increasing lexicographic order, so `>=`
        // hands ties to the later (larger) point.
        if evals[i].mean >= evals[best].mean {
            best = i;
        }
    }
    let table = points
        .iter()
        .zip(&evals)
        .map(|(p, e)| GridRow {
            point: p.clone(),
            mean: e.mean,
            ci: e.ci,
        })
        .collect();
    Ok(GridResult {
        labels: dims.iter().map(|d| d.label.clone()).collect(),
        best: points[best].clone(),
        best_mean: evals[best].mean,
        best_ci: evals[best].ci,
        table,
    })
}
