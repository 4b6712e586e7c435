//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! to stderr (bypassing the harness's output capture) and then asserts.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use common::oracle::{self, OracleClass, OracleOutcome, TICKS_PER_MS};
use common::{config, ed_spec, pu_spec, random_config, traces};
use m2m_sched::engine::{run, run_logged, run_observed, PacketRecord};
use m2m_sched::experiment::{run_point, utility_gap, PolicyResult, Tuning};
use m2m_sched::scenario::{builtin_config, LAMBDA_ED1_RANGE};
use m2m_sched::schedulers::{FcfsPolicy, ProposedPolicy};
use m2m_sched::utility::{ed_inverse_utility, ed_sigmoid_utility, pu_run_penalty};
use m2m_sched::{generate_traces, ClassKind, Disposition, PolicyDecision, PolicyKind, Scenario, SimConfig, SimState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Threshold grid points per dimension. Coarser than the CLI default to
/// keep the suite at a few minutes on one core.
const RESOLUTION: usize = 5;
const SWEEP: [f64; 4] = [0.10, 0.15, 0.20, 0.25];
const LAMBDA_MAX: f64 = LAMBDA_ED1_RANGE.1;

fn report(criterion: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] criterion {criterion:>2} {verdict}: {title} -- {detail}");
    assert!(pass, "criterion {criterion} failed: {title} -- {detail}");
}

fn by_policy(results: &[PolicyResult], p: PolicyKind) -> &PolicyResult {
    results.iter().find(|r| r.policy == p).expect("policy evaluated")
}

fn fmt_point(results: &[PolicyResult]) -> String {
    results
        .iter()
        .map(|r| format!("{}={:.3}±{:.3}", r.policy, r.v_mean, r.v_ci))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The heterogeneous sweep is shared by several criteria.
fn heterogeneous_sweep() -> &'static [(f64, Vec<PolicyResult>)] {
    static CELL: OnceLock<Vec<(f64, Vec<PolicyResult>)>> = OnceLock::new();
    CELL.get_or_init(|| {
        SWEEP
            .iter()
            .map(|&l| {
                let cfg = builtin_config(Scenario::Heterogeneous, l);
                (l, run_point(&cfg, &PolicyKind::ALL, &Tuning::pu_only(RESOLUTION)).unwrap())
            })
            .collect()
    })
}

fn heterogeneous_at_max() -> &'static [PolicyResult] {
    &heterogeneous_sweep().last().expect("non-empty sweep").1
}

#[test]
fn criterion_01_mm1_oracle() {
    let start = Instant::now();
    let cfg = config(vec![], vec![ed_spec(1, 0.5, 1.0, 10.0, None)], 1e6);
    let tr = generate_traces(&cfg, 0);
    let stats = run(&cfg, &FcfsPolicy, &tr).unwrap();
    let lat = &stats.ed()[0].latencies;
    let mean = lat.iter().sum::<f64>() / lat.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    let err = (mean - 2.0).abs() / 2.0;
    report(
        1,
        "M/M/1 mean sojourn",
        err < 0.05 && secs < 10.0,
        &format!("mean {mean:.4} ms over {} packets (rel err {:.2}%), {secs:.2} s", lat.len(), err * 100.0),
    );
}

#[test]
fn criterion_02_utility_math() {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    for &(a, b) in &[(1.0, 10.0), (0.7, 20.0), (0.65, 19.0), (7.0, 20.0)] {
        check(ed_sigmoid_utility(0.0, a, b) == 1.0, "U(0) = 1");
        let mut prev = 1.0;
        for i in 0..10_000 {
            let u = ed_sigmoid_utility(i as f64 * 0.01, a, b);
            check(u.is_finite() && u <= prev, "monotone and finite");
            prev = u;
        }
        for i in 1..200 {
            let l = i as f64 * 0.2;
            let u = ed_sigmoid_utility(l, a, b);
            if u > 1e-9 && u < 1.0 - 1e-9 {
                let back = ed_inverse_utility(u, a, b).unwrap();
                check((back - l).abs() < 1e-6, "inverse of forward");
            }
        }
    }
    for r in 1..50u64 {
        check(pu_run_penalty(r, 1.0).unwrap() == 0.0, "penalty(gamma=1) = 0");
    }
    for g in [1.0, 1.2, 1.5, 3.0] {
        check(pu_run_penalty(1, g).unwrap() == 0.0, "penalty(r=1) = 0");
    }
    // a*b = 140: e^{ab} is enormous; the evaluation must stay finite.
    let at_b = ed_sigmoid_utility(20.0, 7.0, 20.0);
    check((at_b - 0.5).abs() < 1e-12, "U(b) = 1/2 at a*b = 140");
    check(ed_sigmoid_utility(1e6, 7.0, 20.0) == 0.0, "U(inf) = 0 at a*b = 140");
    check(ed_sigmoid_utility(1.0, 7.0, 20.0) == 1.0, "U(small) = 1 at a*b = 140");
    failures.dedup();
    report(2, "utility math", failures.is_empty(), &format!("violations: {failures:?}"));
}

/// Priority of PU classes, derived independently of the library.
fn pu_rank(cfg: &SimConfig) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cfg.pu_classes.len()).collect();
    idx.sort_by(|&i, &j| {
        let (x, y) = (&cfg.pu_classes[i], &cfg.pu_classes[j]);
        y.gamma
            .partial_cmp(&x.gamma)
            .unwrap()
            .then(x.service_rate_per_ms.partial_cmp(&y.service_rate_per_ms).unwrap())
            .then(x.id.cmp(&y.id))
    });
    idx
}

fn ed_rank(cfg: &SimConfig) -> Vec<usize> {
    let offset = cfg.pu_classes.len();
    let mut idx: Vec<usize> = (0..cfg.ed_classes.len()).collect();
    idx.sort_by(|&i, &j| {
        let (x, y) = (&cfg.ed_classes[i], &cfg.ed_classes[j]);
        y.a.partial_cmp(&x.a)
            .unwrap()
            .then(x.b.partial_cmp(&y.b).unwrap())
            .then(x.id.cmp(&y.id))
    });
    idx.into_iter().map(|i| i + offset).collect()
}

/// Checks run-time invariants of one decision; returns a description of the
/// first violation.
fn epoch_violation(cfg: &SimConfig, pu_order: &[usize], proposed: bool, state: &SimState, d: PolicyDecision) -> Option<String> {
    let now = state.clock;
    let chosen = match d {
        PolicyDecision::ServeClass(k) => {
            if k >= state.classes.len() || !state.is_present(k) {
                return Some(format!("t={now}: serve empty class {k}"));
            }
            Some(k)
        }
        PolicyDecision::Continue => {
            if state.server.is_none() {
                return Some(format!("t={now}: continue with idle server"));
            }
            state.in_service_class()
        }
        PolicyDecision::Idle => {
            if state.server.is_some() {
                return Some(format!("t={now}: idle while busy"));
            }
            None
        }
    };
    if cfg.drop_failed_pu {
        for (k, c) in state.classes.iter().enumerate().take(state.pu_count) {
            if c.queue.iter().any(|p| p.absolute_deadline_ms <= now) {
                return Some(format!("t={now}: expired PU packet still queued in class {k}"));
            }
        }
        if let Some(k) = chosen.filter(|&k| state.is_pu(k)) {
            let p = state.lead(k).expect("present");
            if p.absolute_deadline_ms <= now {
                return Some(format!("t={now}: PU served at/after its deadline"));
            }
        }
    }
    if proposed {
        let over = |k: usize| state.lead(k).is_some_and(|p| now >= p.arrival_ms + state.classes[k].threshold_ms);
        if let Some(&top) = pu_order.iter().find(|&&k| over(k)) {
            if chosen != Some(top) {
                return Some(format!("t={now}: PU class {top} over threshold but {chosen:?} chosen"));
            }
        }
    }
    None
}

fn fcfs_within_class(log: &[PacketRecord]) -> Option<String> {
    let mut per_class: HashMap<(ClassKind, u32), Vec<&PacketRecord>> = HashMap::new();
    for r in log {
        per_class.entry((r.kind, r.class_id)).or_default().push(r);
    }
    for (class, mut recs) in per_class {
        recs.sort_by(|a, b| a.arrival_ms.partial_cmp(&b.arrival_ms).unwrap());
        let mut last_start = f64::NEG_INFINITY;
        let mut last_finish = f64::NEG_INFINITY;
        for r in recs {
            if let Some(s) = r.start_ms {
                if s < last_start {
                    return Some(format!("{class:?}: start order differs from arrival order"));
                }
                last_start = s;
            }
            if let Some(f) = r.finish_ms {
                if f < last_finish {
                    return Some(format!("{class:?}: completion order differs from arrival order"));
                }
                last_finish = f;
            }
        }
    }
    None
}

#[test]
fn criterion_03_scheduler_invariants() {
    const TARGET: u64 = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut epochs = 0u64;
    let mut runs = 0u32;
    let mut violation = None;
    'outer: while epochs < TARGET {
        let rho = rng.random_range(0.5..1.1);
        let cfg = random_config(&mut rng, rho, 20_000.0);
        let tr = generate_traces(&cfg, 0);
        let pu_order = pu_rank(&cfg);
        for kind in PolicyKind::ALL {
            let policy = kind.build(&cfg).unwrap();
            let proposed = kind == PolicyKind::Proposed;
            let mut first = None;
            let out = run_observed(&cfg, policy.as_ref(), &tr, true, &mut |e| {
                if first.is_none() {
                    first = epoch_violation(&cfg, &pu_order, proposed, e.state, e.decision);
                }
            });
            runs += 1;
            let out = match out {
                Ok(o) => o,
                Err(e) => {
                    violation = Some(format!("{kind}: engine fault {e}"));
                    break 'outer;
                }
            };
            epochs += out.stats.epochs;
            if let Some(v) = first.or_else(|| fcfs_within_class(&out.packet_log)) {
                violation = Some(format!("{kind}: {v}"));
                break 'outer;
            }
        }
    }
    report(
        3,
        "scheduler invariants under fuzzing",
        violation.is_none() && epochs >= TARGET,
        &format!("{epochs} epochs over {runs} runs; first violation: {violation:?}"),
    );
}

/// A random micro-trace on a 1/8 ms lattice (exact in binary floating
/// point), with at most 10 packets.
fn micro_case(rng: &mut ChaCha8Rng) -> (SimConfig, Vec<Vec<(f64, f64)>>) {
    let q = |rng: &mut ChaCha8Rng, lo: u32, hi: u32| rng.random_range(lo..=hi) as f64 / 8.0;
    let n_pu = rng.random_range(1..=2u32);
    let n_ed = rng.random_range(1..=2u32);
    let pu = (1..=n_pu)
        .map(|id| {
            let deadline = q(rng, 8, 64);
            let mut s = pu_spec(id, deadline, q(rng, 0, (deadline * 8.0) as u32));
            s.gamma = [1.0, 1.2][rng.random_range(0..2)];
            s.service_rate_per_ms = [0.5, 1.0][rng.random_range(0..2)];
            s
        })
        .collect();
    let ed = (1..=n_ed)
        .map(|id| ed_spec(id, 0.1, rng.random_range(0.3..3.0), q(rng, 8, 160), Some(q(rng, 0, 48))))
        .collect();
    let mut cfg = config(pu, ed, 1000.0);
    let lowest = *cfg.ed_priority_order().last().unwrap();
    cfg.ed_classes[lowest].threshold_ms = None;
    cfg.drop_failed_pu = rng.random_bool(0.7);
    cfg.work_conserving = rng.random_bool(0.7);
    let classes = cfg.class_count();
    let total = rng.random_range(1..=10usize);
    let mut jobs: Vec<Vec<(f64, f64)>> = vec![Vec::new(); classes];
    for _ in 0..total {
        let k = rng.random_range(0..classes);
        let arrival = q(rng, 0, 80);
        if jobs[k].iter().any(|&(a, _)| a == arrival) {
            continue;
        }
        jobs[k].push((arrival, q(rng, 1, 40)));
    }
    for j in &mut jobs {
        j.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }
    (cfg, jobs)
}

fn ticks(ms: f64) -> i64 {
    (ms * TICKS_PER_MS as f64).round() as i64
}

#[test]
fn criterion_04_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut mismatches = Vec::new();
    let mut packets = 0;
    for case in 0..50 {
        let (cfg, jobs) = micro_case(&mut rng);
        let tr = traces(&cfg, &jobs);
        let engine = run_logged(&cfg, &ProposedPolicy::new(&cfg), &tr).unwrap();

        let oracle_classes: Vec<OracleClass> = (0..cfg.class_count())
            .map(|k| {
                let (pu, deadline, threshold) = if k < cfg.pu_classes.len() {
                    let s = &cfg.pu_classes[k];
                    (true, Some(ticks(s.deadline_ms)), Some(ticks(s.threshold_ms)))
                } else {
                    let s = &cfg.ed_classes[k - cfg.pu_classes.len()];
                    (false, None, s.threshold_ms.map(ticks))
                };
                OracleClass {
                    pu,
                    deadline,
                    threshold,
                    jobs: jobs[k].iter().map(|&(a, d)| (ticks(a), ticks(d))).collect(),
                }
            })
            .collect();
        let expected = oracle::simulate(
            &oracle_classes,
            &pu_rank(&cfg),
            &ed_rank(&cfg),
            cfg.drop_failed_pu,
            cfg.work_conserving,
        );

        let refs = cfg.class_refs();
        let mut got: Vec<(OracleOutcome, f64)> = engine
            .packet_log
            .iter()
            .map(|r| {
                let class = refs.iter().position(|c| c.kind == r.kind && c.id == r.class_id).unwrap();
                let latency = r.latency_ms.unwrap();
                let o = OracleOutcome {
                    class,
                    arrival: ticks(r.arrival_ms),
                    dropped: r.disposition == Disposition::Dropped,
                    latency: ticks(latency),
                };
                (o, latency)
            })
            .collect();
        got.sort_by_key(|g| g.0);
        packets += expected.len();

        let same = got.len() == expected.len()
            && got.iter().zip(&expected).all(|((g, lat), e)| {
                g.class == e.class
                    && g.arrival == e.arrival
                    && g.dropped == e.dropped
                    && (lat - e.latency as f64 / TICKS_PER_MS as f64).abs() <= 1e-3
            });
        if !same {
            mismatches.push(format!(
                "case {case}: engine {:?} oracle {expected:?}",
                got.iter().map(|g| g.0).collect::<Vec<_>>()
            ));
        }
    }
    report(
        4,
        "engine + proposed policy vs brute-force step simulator",
        mismatches.is_empty(),
        &format!("50 traces, {packets} packets; mismatches: {mismatches:?}"),
    );
}

fn cli_sweep(out: &std::path::Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_m2msim"))
        .args(["sweep", "heterogeneous", "--steps", "2", "--resolution", "2"])
        .args(["--replications", "3", "--horizon-ms", "4000", "--out"])
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn criterion_05_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (ra, rb) = (cli_sweep(&a), cli_sweep(&b));
    let mut identical = ra.status.success() && rb.status.success() && ra.stdout == rb.stdout;
    for f in ["results.csv", "summary.json"] {
        let x = std::fs::read(a.join(f)).unwrap_or_default();
        let y = std::fs::read(b.join(f)).unwrap_or_default();
        identical &= !x.is_empty() && x == y;
    }
    let cfg = builtin_config(Scenario::Heterogeneous, 0.2);
    let dump = |rep| {
        let mut buf = Vec::new();
        generate_traces(&cfg, rep).write_csv(&mut buf).unwrap();
        buf
    };
    identical &= dump(1) == dump(1) && dump(1) != dump(2);
    report(
        5,
        "identical seeds give byte-identical outputs",
        identical,
        "two CLI sweeps (stdout, results.csv, summary.json) and trace dumps compared",
    );
}

#[test]
fn criterion_06_heterogeneous_dominance() {
    let sweep = heterogeneous_sweep();
    let mut ok = true;
    let mut lines = Vec::new();
    for (l, results) in sweep {
        let p = by_policy(results, PolicyKind::Proposed);
        for b in PolicyKind::BASELINES {
            ok &= p.v_mean >= by_policy(results, b).v_mean;
        }
        lines.push(format!("λ={l:.2}: {}", fmt_point(results)));
    }
    let at_max = heterogeneous_at_max();
    let p = by_policy(at_max, PolicyKind::Proposed);
    let best = PolicyKind::BASELINES
        .iter()
        .map(|&b| by_policy(at_max, b))
        .max_by(|x, y| x.v_mean.partial_cmp(&y.v_mean).unwrap())
        .unwrap();
    let strict = p.v_mean - best.v_mean > p.v_ci + best.v_ci;
    report(
        6,
        "heterogeneous: proposed ≥ every baseline, strict at λ=0.25",
        ok && strict,
        &lines.join("; "),
    );
}

#[test]
fn criterion_07_heterogeneity_amplifies_gap() {
    let het = utility_gap(heterogeneous_at_max()).unwrap();
    let cfg = builtin_config(Scenario::Homogeneous, LAMBDA_MAX);
    let homo_results = run_point(&cfg, &PolicyKind::ALL, &Tuning::pu_only(RESOLUTION)).unwrap();
    let homo = utility_gap(&homo_results).unwrap();
    report(
        7,
        "ΔV(heterogeneous) > ΔV(homogeneous) at λ=0.25",
        het > homo,
        &format!(
            "ΔV het {het:.3} (reference 0.33, within ±0.15: {}), homo {homo:.3} (reference 0.19, within ±0.15: {}); homogeneous {}",
            (het - 0.33).abs() <= 0.15,
            (homo - 0.19).abs() <= 0.15,
            fmt_point(&homo_results)
        ),
    );
}

#[test]
fn criterion_08_optimized_delta() {
    let fixed = utility_gap(heterogeneous_at_max()).unwrap();
    let cfg = builtin_config(Scenario::OptDelta, LAMBDA_MAX);
    let opt_results = run_point(&cfg, &[PolicyKind::Proposed], &Tuning::pu_and_ed(RESOLUTION)).unwrap();
    let best_baseline = PolicyKind::BASELINES
        .iter()
        .map(|&b| by_policy(heterogeneous_at_max(), b).v_mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let p = &opt_results[0];
    let opt = p.v_mean - best_baseline;
    report(
        8,
        "optimized δ1 gives ΔV ≥ fixed δ1 = 14 ms",
        opt >= fixed,
        &format!(
            "ΔV optimized {opt:.4} (thresholds {:?}) vs fixed {fixed:.4}; reference 0.60 vs 0.33",
            p.thresholds
        ),
    );
}

#[test]
fn criterion_09_penalty_robustness() {
    let cfg = builtin_config(Scenario::PenaltyModerate, LAMBDA_MAX);
    let results = run_point(&cfg, &PolicyKind::ALL, &Tuning::pu_only(RESOLUTION)).unwrap();
    let baselines_low = PolicyKind::BASELINES.iter().all(|&b| by_policy(&results, b).v_mean < 0.1);
    let with_penalty = by_policy(&results, PolicyKind::Proposed).v_mean;
    let without = by_policy(heterogeneous_at_max(), PolicyKind::Proposed).v_mean;
    let robust = without - with_penalty < 0.1;
    report(
        9,
        "γ=1.2: baselines V < 0.1, proposed loses < 0.1",
        baselines_low && robust,
        &format!(
            "baselines below 0.1: {baselines_low}; proposed {without:.3} -> {with_penalty:.3} (robust: {robust}); {}",
            fmt_point(&results)
        ),
    );
}

#[test]
fn criterion_10_drop_rule_helps() {
    let with_drop = by_policy(heterogeneous_at_max(), PolicyKind::Proposed);
    let mut cfg = builtin_config(Scenario::Heterogeneous, LAMBDA_MAX);
    cfg.drop_failed_pu = false;
    let results = run_point(&cfg, &[PolicyKind::Proposed], &Tuning::pu_only(RESOLUTION)).unwrap();
    let without = &results[0];
    report(
        10,
        "dropping failed PU packets does not lower V",
        with_drop.v_mean >= without.v_mean,
        &format!("drop {:.4}±{:.4} vs keep {:.4}±{:.4}", with_drop.v_mean, with_drop.v_ci, without.v_mean, without.v_ci),
    );
}
