//! Closed-form utility functions: the firm PU step utility, the run-length
//! penalty for consecutive PU failures, and the sigmoid ED utility with its
//! inverse.

use serde::{Deserialize, Serialize};

use crate::config::TimeMs;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure,
}

/// 1 when the packet beat its deadline, 0 otherwise. Latency equal to the
/// deadline is a failure.
pub fn pu_step_utility(latency: TimeMs, deadline: TimeMs) -> f64 {
    if latency < deadline {
        1.0
    } else {
        0.0
    }
}

/// Extra (non-positive) utility charged for a run of `run_length`
/// consecutive failures: `r - r^gamma`.
pub fn pu_run_penalty(run_length: u64, gamma: f64) -> Result<f64> {
    if run_length == 0 {
        return Err(Error::invalid("run length must be >= 1"));
    }
    if gamma == 1.0 || run_length == 1 {
        return Ok(0.0);
    }
    let r = run_length as f64;
    Ok(r - r.powf(gamma))
}

/// Lengths of the maximal failure runs, in order of occurrence. A run still
/// open at the end of the sequence counts.
pub fn extract_failure_runs(seq: &[Outcome]) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut current = 0u64;
    for o in seq {
        match o {
            Outcome::Failure => current += 1,
            Outcome::Success if current > 0 => {
                runs.push(current);
                current = 0;
            }
            Outcome::Success => {}
        }
    }
    if current > 0 {
        runs.push(current);
    }
    runs
}

/// Sigmoid ED utility, normalized so that `U(0) = 1` and `U(inf) = 0`.
///
/// Algebraically `1 - c(1/(1+e^{-a(l-b)}) - d)` with `c = 1 + e^{-ab}` and
/// `d = 1/(1+e^{ab})` reduces to `(1 + e^{-ab}) / (1 + e^{a(l-b)})`, which is
/// evaluated here without ever forming `e^{ab}`.
pub fn ed_sigmoid_utility(latency: TimeMs, a: f64, b: TimeMs) -> f64 {
    if latency <= 0.0 {
        return 1.0;
    }
    let scale = 1.0 + (-a * b).exp();
    let x = a * (latency - b);
    let u = if x > 0.0 {
        let e = (-x).exp();
        scale * e / (1.0 + e)
    } else {
        scale / (1.0 + x.exp())
    };
    u.clamp(0.0, 1.0)
}

/// Latency at which the ED utility equals `target_u`, clamped at 0.
pub fn ed_inverse_utility(target_u: f64, a: f64, b: TimeMs) -> Result<TimeMs> {
    if !(target_u > 0.0 && target_u < 1.0) {
        return Err(Error::invalid(format!(
            "target utility {target_u} outside (0, 1)"
        )));
    }
    // e^{a(l-b)} = (1 + e^{-ab} - u) / u
    let tail = (-a * b).exp();
    let l = b + ((tail + (1.0 - target_u)).ln() - target_u.ln()) / a;
    Ok(l.max(0.0))
}
