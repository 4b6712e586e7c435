//! Per-class statistics and their reduction to average class utilities and
//! the proportionally-fair system utility `V`.

use serde::Serialize;

use crate::config::{ClassRef, SimConfig};
use crate::error::{Error, Result};
use crate::utility::{ed_sigmoid_utility, extract_failure_runs, pu_run_penalty, Outcome};

/// Counters and samples for one class over one run.
///
/// `arrivals`, `completed`, `dropped` and `residual` cover every packet.
/// `latencies`, `outcomes` and `counted_drops` exclude packets that arrived
/// during warm-up.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClassRecord {
    pub class: Option<ClassRef>,
    pub arrivals: u64,
    pub completed: u64,
    pub dropped: u64,
    pub residual: u64,
    pub busy_ms: f64,
    pub latencies: Vec<f64>,
    /// PU classes only, in resolution order.
    pub outcomes: Vec<Outcome>,
    pub counted_drops: u64,
}

impl ClassRecord {
    /// Packets resolved within the horizon and counted toward utility.
    pub fn served(&self) -> usize {
        self.latencies.len()
    }

    pub fn successes(&self) -> usize {
        self.outcomes.iter().filter(|o| **o == Outcome::Success).count()
    }

    pub fn failure_runs(&self) -> Vec<u64> {
        extract_failure_runs(&self.outcomes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    /// Flat class order: PU classes then ED classes.
    pub classes: Vec<ClassRecord>,
    pub pu_count: usize,
    pub epochs: u64,
    pub preemptions: u64,
}

impl ClassStats {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            classes: cfg
                .class_refs()
                .into_iter()
                .map(|c| ClassRecord {
                    class: Some(c),
                    ..Default::default()
                })
                .collect(),
            pu_count: cfg.pu_classes.len(),
            epochs: 0,
            preemptions: 0,
        }
    }

    pub fn pu(&self) -> &[ClassRecord] {
        &self.classes[..self.pu_count]
    }

    pub fn ed(&self) -> &[ClassRecord] {
        &self.classes[self.pu_count..]
    }

    pub(crate) fn note_arrival(&mut self, class: usize) {
        self.classes[class].arrivals += 1;
    }

    pub(crate) fn note_residual(&mut self, class: usize, n: u64) {
        self.classes[class].residual += n;
    }

    pub(crate) fn add_busy(&mut self, class: usize, dt: f64) {
        self.classes[class].busy_ms += dt;
    }

    pub(crate) fn record_pu(&mut self, class: usize, latency: f64, outcome: Outcome, dropped: bool, counted: bool) {
        let r = &mut self.classes[class];
        if dropped {
            r.dropped += 1;
        } else {
            r.completed += 1;
        }
        if counted {
            r.latencies.push(latency);
            r.outcomes.push(outcome);
            r.counted_drops += u64::from(dropped);
        }
    }

    pub(crate) fn record_ed(&mut self, class: usize, latency: f64, counted: bool) {
        let r = &mut self.classes[class];
        r.completed += 1;
        if counted {
            r.latencies.push(latency);
        }
    }

    pub fn total_busy_ms(&self) -> f64 {
        self.classes.iter().map(|c| c.busy_ms).sum()
    }
}

/// Average PU utility: successes plus run penalties, over packets served.
/// `None` when nothing was served.
pub fn avg_pu_utility_from_outcomes(outcomes: &[Outcome], gamma: f64) -> Option<f64> {
    if outcomes.is_empty() {
        return None;
    }
    let successes = outcomes.iter().filter(|o| **o == Outcome::Success).count() as f64;
    let penalty: f64 = extract_failure_runs(outcomes)
        .into_iter()
        .map(|r| pu_run_penalty(r, gamma).expect("runs are non-empty"))
        .sum();
    Some((successes + penalty) / outcomes.len() as f64)
}

pub fn avg_pu_utility(record: &ClassRecord, gamma: f64) -> Option<f64> {
    avg_pu_utility_from_outcomes(&record.outcomes, gamma)
}

/// Mean sigmoid utility over served latencies; `None` when nothing was
/// served.
pub fn avg_ed_utility_from_latencies(latencies: &[f64], a: f64, b: f64) -> Option<f64> {
    if latencies.is_empty() {
        return None;
    }
    let sum: f64 = latencies.iter().map(|&l| ed_sigmoid_utility(l, a, b)).sum();
    Some(sum / latencies.len() as f64)
}

pub fn avg_ed_utility(record: &ClassRecord, a: f64, b: f64) -> Option<f64> {
    avg_ed_utility_from_latencies(&record.latencies, a, b)
}

/// `Π U_i^{β_i}` with every `U_i` clamped to `[0, 1]` first, so penalties
/// that push a class average negative zero the product.
pub fn system_utility(utilities: &[f64], betas: &[f64]) -> f64 {
    assert_eq!(utilities.len(), betas.len(), "one beta per class utility");
    utilities
        .iter()
        .zip(betas)
        .map(|(&u, &beta)| {
            let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
            u.powf(beta)
        })
        .product()
}

/// Sample mean and normal-approximation 95% half-width `1.96 s / sqrt(n)`.
pub fn aggregate_replications(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::invalid("at least two replications are required"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// Reduction of one run to the numbers the experiment reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    /// Raw (unclamped) class averages in flat class order; `None` when the
    /// class served nothing.
    pub class_utilities: Vec<Option<f64>>,
    pub system_utility: f64,
    /// Fraction of counted PU packets dropped at their deadline.
    pub pu_drop_rates: Vec<f64>,
    pub residual: u64,
}

/// Classes that served nothing are left out of the product.
pub fn summarize(cfg: &SimConfig, stats: &ClassStats) -> RunSummary {
    let mut utilities = Vec::with_capacity(cfg.class_count());
    let mut betas = Vec::new();
    let mut present = Vec::new();
    for (spec, rec) in cfg.pu_classes.iter().zip(stats.pu()) {
        let u = avg_pu_utility(rec, spec.gamma);
        if let Some(u) = u {
            present.push(u);
            betas.push(spec.beta);
        }
        utilities.push(u);
    }
    for (spec, rec) in cfg.ed_classes.iter().zip(stats.ed()) {
        let u = avg_ed_utility(rec, spec.a, spec.b);
        if let Some(u) = u {
            present.push(u);
            betas.push(spec.beta);
        }
        utilities.push(u);
    }
    let pu_drop_rates = stats
        .pu()
        .iter()
        .map(|r| {
            if r.served() == 0 {
                0.0
            } else {
                r.counted_drops as f64 / r.served() as f64
            }
        })
        .collect();
    RunSummary {
        class_utilities: utilities,
        system_utility: system_utility(&present, &betas),
        pu_drop_rates,
        residual: stats.classes.iter().map(|c| c.residual).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use Outcome::{Failure as F, Success as S};

    #[test]
    fn pu_average_with_penalty() {
        // (2 + (2 - 2^1.2)) / 4, 2^1.2 = 2.2973967099940700...
        let u = avg_pu_utility_from_outcomes(&[S, F, F, S], 1.2).unwrap();
        assert_relative_eq!(u, 0.425_650_822_501_482_5, max_relative = 1e-12);
        assert_eq!(avg_pu_utility_from_outcomes(&[S, S, S], 1.7).unwrap(), 1.0);
        assert_eq!(avg_pu_utility_from_outcomes(&[S, F, F, S], 1.0).unwrap(), 0.5);
        assert_eq!(avg_pu_utility_from_outcomes(&[], 1.0), None);
    }

    #[test]
    fn pu_average_can_go_negative() {
        let u = avg_pu_utility_from_outcomes(&[F; 50], 1.5).unwrap();
        assert!(u < 0.0);
    }

    #[test]
    fn ed_average_examples() {
        assert_eq!(avg_ed_utility_from_latencies(&[0.0], 1.0, 10.0).unwrap(), 1.0);
        assert_relative_eq!(
            avg_ed_utility_from_latencies(&[10.0, 10.0], 1.0, 10.0).unwrap(),
            0.500_022_699_964_881_2,
            max_relative = 1e-12
        );
        assert!((avg_ed_utility_from_latencies(&[0.0, 1e6], 1.0, 10.0).unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(avg_ed_utility_from_latencies(&[], 1.0, 10.0), None);
    }

    #[test]
    fn system_utility_examples() {
        assert_relative_eq!(
            system_utility(&[0.9, 0.8, 0.7, 0.6], &[1.0; 4]),
            0.3024,
            max_relative = 1e-12
        );
        assert_eq!(system_utility(&[0.9, 0.0, 0.7, 0.6], &[1.0; 4]), 0.0);
        assert_relative_eq!(system_utility(&[0.81], &[0.5]), 0.9, max_relative = 1e-12);
        assert_eq!(system_utility(&[-0.3, 0.9], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_replications(&[0.5, 0.5, 0.5]).unwrap(), (0.5, 0.0));
        assert_relative_eq!(aggregate_replications(&[0.4, 0.6]).unwrap().0, 0.5);
        assert!(aggregate_replications(&[0.5]).is_err());
        assert!(aggregate_replications(&[]).is_err());
    }

    #[test]
    fn aggregate_twenty_values_long_hand() {
        let xs: Vec<f64> = (0..20).map(|i| 0.3 + 0.01 * ((i * 7) % 11) as f64).collect();
        // Long-hand: mean, then sum of squared deviations / 19.
        let mut sum = 0.0;
        for x in &xs {
            sum += x;
        }
        let mean = sum / 20.0;
        let mut ss = 0.0;
        for x in &xs {
            ss += (x - mean) * (x - mean);
        }
        let half = 1.96 * (ss / 19.0).sqrt() / 20f64.sqrt();
        let (m, h) = aggregate_replications(&xs).unwrap();
        assert_relative_eq!(m, mean, max_relative = 1e-12);
        assert_relative_eq!(h, half, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn gamma_one_is_success_fraction(seq in proptest::collection::vec(any::<bool>(), 1..300)) {
            let seq: Vec<Outcome> = seq.into_iter().map(|f| if f { F } else { S }).collect();
            let succ = seq.iter().filter(|o| **o == S).count() as f64;
            prop_assert_eq!(avg_pu_utility_from_outcomes(&seq, 1.0).unwrap(), succ / seq.len() as f64);
        }

        #[test]
        fn penalty_decomposition(seq in proptest::collection::vec(any::<bool>(), 1..300), gamma in 1.0f64..2.0) {
            let seq: Vec<Outcome> = seq.into_iter().map(|f| if f { F } else { S }).collect();
            let succ = seq.iter().filter(|o| **o == S).count() as f64;
            let pen: f64 = extract_failure_runs(&seq).iter().map(|&r| r as f64 - (r as f64).powf(gamma)).sum();
            let u = avg_pu_utility_from_outcomes(&seq, gamma).unwrap();
            prop_assert!((u * seq.len() as f64 - (succ + pen)).abs() < 1e-9 * (1.0 + pen.abs()));
        }

        #[test]
        fn v_bounded_and_monotone(us in proptest::collection::vec(-1.0f64..1.5, 1..6), bump in 0.0f64..0.5, which in 0usize..6, beta in 0.1f64..3.0) {
            let betas = vec![beta; us.len()];
            let v = system_utility(&us, &betas);
            prop_assert!((0.0..=1.0).contains(&v));
            let mut up = us.clone();
            let i = which % us.len();
            up[i] += bump;
            prop_assert!(system_utility(&up, &betas) >= v);
        }
    }
}
