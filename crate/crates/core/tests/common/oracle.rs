//! Brute-force reference simulator for the threshold policy.
//!
//! Time advances in integer ticks (1 tick = 1e-3 ms) and the policy is
//! re-evaluated on every tick, so no event bookkeeping is involved. It
//! shares no code with the event-driven engine: queues, priorities and the
//! decision rule are all re-derived here from their definitions.

use std::collections::VecDeque;

pub const TICKS_PER_MS: i64 = 1000;

#[derive(Debug, Clone)]
pub struct OracleClass {
    pub pu: bool,
    /// Relative deadline in ticks (PU only).
    pub deadline: Option<i64>,
    /// Waiting-time threshold in ticks; `None` is infinite.
    pub threshold: Option<i64>,
    /// `(arrival, demand)` in ticks, sorted by arrival.
    pub jobs: Vec<(i64, i64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleOutcome {
    pub class: usize,
    pub arrival: i64,
    pub dropped: bool,
    pub latency: i64,
}

#[derive(Debug, Clone, Copy)]
struct Pkt {
    class: usize,
    arrival: i64,
    remaining: i64,
}

/// Runs until every job has left. `pu_order` and `ed_order` list class
/// indices from highest to lowest priority.
pub fn simulate(
    classes: &[OracleClass],
    pu_order: &[usize],
    ed_order: &[usize],
    drop_failed: bool,
    work_conserving: bool,
) -> Vec<OracleOutcome> {
    let total: usize = classes.iter().map(|c| c.jobs.len()).sum();
    let mut next = vec![0usize; classes.len()];
    let mut queues: Vec<VecDeque<Pkt>> = vec![VecDeque::new(); classes.len()];
    let mut server: Option<Pkt> = None;
    let mut out = Vec::with_capacity(total);

    let mut t: i64 = 0;
    while out.len() < total {
        // 1. deadline expiries
        if drop_failed {
            for (k, c) in classes.iter().enumerate() {
                let Some(dl) = c.deadline else { continue };
                queues[k].retain(|p| {
                    let expired = t >= p.arrival + dl;
                    if expired {
                        out.push(OracleOutcome { class: k, arrival: p.arrival, dropped: true, latency: dl });
                    }
                    !expired
                });
                if let Some(p) = server.filter(|p| p.class == k && t >= p.arrival + dl) {
                    out.push(OracleOutcome { class: k, arrival: p.arrival, dropped: true, latency: dl });
                    server = None;
                }
            }
        }
        // 2. completion
        if let Some(p) = server.filter(|p| p.remaining == 0) {
            out.push(OracleOutcome { class: p.class, arrival: p.arrival, dropped: false, latency: t - p.arrival });
            server = None;
        }
        // 3. arrivals
        for (k, c) in classes.iter().enumerate() {
            while next[k] < c.jobs.len() && c.jobs[next[k]].0 == t {
                let (arrival, demand) = c.jobs[next[k]];
                queues[k].push_back(Pkt { class: k, arrival, remaining: demand });
                next[k] += 1;
            }
        }
        // 4. decision
        let lead = |k: usize| -> Option<Pkt> {
            match server {
                Some(p) if p.class == k => Some(p),
                _ => queues[k].front().copied(),
            }
        };
        let over = |k: usize| -> bool {
            match (lead(k), classes[k].threshold) {
                (Some(p), Some(thr)) => t >= p.arrival + thr,
                _ => false,
            }
        };
        let present_ed: Vec<usize> = ed_order.iter().copied().filter(|&k| lead(k).is_some()).collect();
        let target = if let Some(&k) = pu_order.iter().find(|&&k| over(k)) {
            Some(k)
        } else if present_ed.is_empty() {
            if work_conserving {
                pu_order.iter().copied().find(|&k| lead(k).is_some())
            } else {
                None
            }
        } else if present_ed.iter().any(|&k| over(k)) {
            Some(present_ed.iter().copied().find(|&k| !over(k)).unwrap_or(present_ed[0]))
        } else {
            Some(present_ed[0])
        };
        if let Some(k) = target {
            if server.map(|p| p.class) != Some(k) {
                if let Some(p) = server.take() {
                    queues[p.class].push_front(p);
                }
                server = queues[k].pop_front();
                assert!(server.is_some(), "oracle picked an empty class");
            }
        }
        // 5. one tick of service
        if let Some(p) = server.as_mut() {
            p.remaining -= 1;
        }
        t += 1;
        assert!(t < 100_000_000, "oracle did not terminate");
    }
    out.sort();
    out
}
