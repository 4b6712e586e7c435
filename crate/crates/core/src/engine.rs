//! Continuous-time discrete-event kernel for a single preemptive-resume
//! server with one FCFS queue per traffic class.
//!
//! Decision epochs are arrivals, service completions, PU deadline expiries
//! and head-of-line threshold crossings. All events sharing a timestamp are
//! applied in tie-break order (expiry, completion, arrival, crossing), then
//! the policy is consulted once and its verdict applied immediately.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use serde::Serialize;

use crate::config::{ClassKind, ClassRef, SimConfig, TimeMs};
use crate::error::{Error, Result};
use crate::metrics::ClassStats;
use crate::schedulers::{PolicyDecision, SchedulerPolicy};
use crate::traffic::Traces;
use crate::utility::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Queued,
    InService,
    Completed,
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    /// Global arrival sequence number, unique within one run.
    pub seq: u64,
    /// Position in the flat class list.
    pub class: usize,
    pub arrival_ms: TimeMs,
    pub service_demand_ms: f64,
    pub remaining_service_ms: f64,
    /// `arrival + l_d` for PU packets, infinity for ED packets.
    pub absolute_deadline_ms: TimeMs,
    pub first_start_ms: Option<TimeMs>,
    pub disposition: Disposition,
}

#[derive(Debug, Clone)]
pub struct ClassQueue {
    pub class: ClassRef,
    /// Head-of-line delay threshold (`l_t` for PU, `δ` for ED).
    pub threshold_ms: TimeMs,
    pub queue: VecDeque<Packet>,
}

#[derive(Debug, Clone)]
pub struct InService {
    pub packet: Packet,
    pub started_ms: TimeMs,
    /// Bumped on every service start so stale completions can be told apart.
    generation: u64,
}

impl InService {
    pub fn new(packet: Packet, started_ms: TimeMs) -> Self {
        Self {
            packet,
            started_ms,
            generation: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    DeadlineExpiry { seq: u64 },
    ServiceCompletion { seq: u64, generation: u64 },
    Arrival,
    ThresholdCrossing { seq: u64 },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::DeadlineExpiry { .. } => 0,
            EventKind::ServiceCompletion { .. } => 1,
            EventKind::Arrival => 2,
            EventKind::ThresholdCrossing { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: TimeMs,
    kind: EventKind,
    class_kind: ClassKind,
    class_id: u32,
    class: usize,
    insertion: u64,
}

impl Event {
    fn key(&self) -> (u8, ClassKind, u32, u64) {
        (self.kind.rank(), self.class_kind, self.class_id, self.insertion)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    /// Reversed so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.key().cmp(&self.key()))
    }
}

/// Everything a policy may look at when making a decision.
#[derive(Debug, Clone)]
pub struct SimState {
    pub clock: TimeMs,
    pub classes: Vec<ClassQueue>,
    pub server: Option<InService>,
    pub pu_count: usize,
}

impl SimState {
    pub fn new(cfg: &SimConfig) -> Self {
        let mut classes = Vec::with_capacity(cfg.class_count());
        for pu in &cfg.pu_classes {
            classes.push(ClassQueue {
                class: ClassRef::pu(pu.id),
                threshold_ms: pu.threshold_ms,
                queue: VecDeque::new(),
            });
        }
        for ed in &cfg.ed_classes {
            classes.push(ClassQueue {
                class: ClassRef::ed(ed.id),
                threshold_ms: ed.threshold(),
                queue: VecDeque::new(),
            });
        }
        Self {
            clock: 0.0,
            classes,
            server: None,
            pu_count: cfg.pu_classes.len(),
        }
    }

    pub fn is_pu(&self, class: usize) -> bool {
        class < self.pu_count
    }

    pub fn in_service_class(&self) -> Option<usize> {
        self.server.as_ref().map(|s| s.packet.class)
    }

    /// Oldest packet of the class still in the system: the one in service
    /// if it belongs to the class, otherwise the queue head.
    pub fn lead(&self, class: usize) -> Option<&Packet> {
        match &self.server {
            Some(s) if s.packet.class == class => Some(&s.packet),
            _ => self.classes[class].queue.front(),
        }
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.lead(class).is_some()
    }

    /// Whether the class's lead packet has waited at least its threshold.
    /// Uses the same `arrival + threshold` expression as the crossing event
    /// so both agree bit for bit.
    pub fn lead_exceeds_threshold(&self, class: usize) -> bool {
        let thr = self.classes[class].threshold_ms;
        self.lead(class)
            .is_some_and(|p| self.clock >= p.arrival_ms + thr)
    }

    pub fn queued_total(&self) -> usize {
        self.classes.iter().map(|c| c.queue.len()).sum()
    }
}

/// One line of the optional per-packet log.
#[derive(Debug, Clone, Serialize)]
pub struct PacketRecord {
    pub kind: ClassKind,
    pub class_id: u32,
    pub arrival_ms: f64,
    pub start_ms: Option<f64>,
    pub finish_ms: Option<f64>,
    pub disposition: Disposition,
    pub latency_ms: Option<f64>,
}

pub fn write_packet_log<W: Write>(records: &[PacketRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Read-only snapshot handed to an epoch observer before the decision is
/// applied.
pub struct Epoch<'a> {
    pub state: &'a SimState,
    pub decision: PolicyDecision,
}

pub struct RunOutput {
    pub stats: ClassStats,
    pub packet_log: Vec<PacketRecord>,
}

struct Simulation<'a> {
    cfg: &'a SimConfig,
    traces: &'a Traces,
    policy: &'a dyn SchedulerPolicy,
    state: SimState,
    events: BinaryHeap<Event>,
    cursor: Vec<usize>,
    next_seq: u64,
    insertion: u64,
    generation: u64,
    stats: ClassStats,
    log: Option<Vec<PacketRecord>>,
}

/// Simulates `[0, sim_horizon_ms)` and returns per-class statistics.
pub fn run(cfg: &SimConfig, policy: &dyn SchedulerPolicy, traces: &Traces) -> Result<ClassStats> {
    Ok(run_observed(cfg, policy, traces, false, &mut |_| {})?.stats)
}

/// Like [`run`], additionally keeping a per-packet log.
pub fn run_logged(cfg: &SimConfig, policy: &dyn SchedulerPolicy, traces: &Traces) -> Result<RunOutput> {
    run_observed(cfg, policy, traces, true, &mut |_| {})
}

/// Full-control entry point: `observer` sees every decision epoch.
pub fn run_observed(
    cfg: &SimConfig,
    policy: &dyn SchedulerPolicy,
    traces: &Traces,
    keep_log: bool,
    observer: &mut dyn FnMut(&Epoch<'_>),
) -> Result<RunOutput> {
    if traces.classes.len() != cfg.class_count() {
        return Err(Error::invalid(format!(
            "trace has {} classes, config has {}",
            traces.classes.len(),
            cfg.class_count()
        )));
    }
    for (t, c) in traces.classes.iter().zip(cfg.class_refs()) {
        if t.class != c {
            return Err(Error::invalid(format!("trace class {} does not match config class {c}", t.class)));
        }
    }
    let mut sim = Simulation {
        cfg,
        traces,
        policy,
        state: SimState::new(cfg),
        events: BinaryHeap::new(),
        cursor: vec![0; cfg.class_count()],
        next_seq: 0,
        insertion: 0,
        generation: 0,
        stats: ClassStats::new(cfg),
        log: keep_log.then(Vec::new),
    };
    sim.run(observer)?;
    Ok(RunOutput {
        stats: sim.stats,
        packet_log: sim.log.unwrap_or_default(),
    })
}

impl Simulation<'_> {
    fn push(&mut self, time: TimeMs, class: usize, kind: EventKind) {
        let cref = self.state.classes[class].class;
        self.insertion += 1;
        self.events.push(Event {
            time,
            kind,
            class_kind: cref.kind,
            class_id: cref.id,
            class,
            insertion: self.insertion,
        });
    }

    fn schedule_next_arrival(&mut self, class: usize) {
        if let Some(job) = self.traces.classes[class].jobs.get(self.cursor[class]) {
            if job.arrival_ms < self.cfg.sim_horizon_ms {
                self.push(job.arrival_ms, class, EventKind::Arrival);
            }
        }
    }

    /// Schedules a wake-up for the class's (new) lead packet. Crossings
    /// already in the past need no event; the current epoch sees them.
    fn schedule_crossing(&mut self, class: usize) {
        let thr = self.state.classes[class].threshold_ms;
        if !thr.is_finite() {
            return;
        }
        if let Some(p) = self.state.lead(class) {
            let at = p.arrival_ms + thr;
            let seq = p.seq;
            if at > self.state.clock {
                self.push(at, class, EventKind::ThresholdCrossing { seq });
            }
        }
    }

    fn run(&mut self, observer: &mut dyn FnMut(&Epoch<'_>)) -> Result<()> {
        for class in 0..self.cfg.class_count() {
            self.schedule_next_arrival(class);
        }
        let horizon = self.cfg.sim_horizon_ms;
        while let Some(ev) = self.events.peek().copied() {
            if ev.time >= horizon {
                break;
            }
            self.events.pop();
            if ev.time < self.state.clock {
                return Err(Error::Consistency {
                    clock_ms: self.state.clock,
                    detail: format!("event {:?} scheduled in the past at {}", ev.kind, ev.time),
                });
            }
            self.state.clock = ev.time;
            let mut epoch = self.handle(ev);
            // Everything happening at the same instant is applied before the
            // policy looks at the state, so it never sees a half-updated
            // system (e.g. a PU packet at the very instant it expires).
            while let Some(next) = self.events.peek().copied().filter(|e| e.time == ev.time) {
                self.events.pop();
                epoch |= self.handle(next);
            }
            if epoch {
                let decision = self.policy.select(&self.state);
                observer(&Epoch {
                    state: &self.state,
                    decision,
                });
                self.stats.epochs += 1;
                self.apply_decision(decision)?;
            }
        }
        self.finish(horizon);
        Ok(())
    }

    /// Applies one event; returns whether it changed anything the policy
    /// could react to.
    fn handle(&mut self, ev: Event) -> bool {
        match ev.kind {
            EventKind::Arrival => {
                self.on_arrival(ev.class);
                true
            }
            EventKind::ServiceCompletion { seq, generation } => self.on_completion(seq, generation),
            EventKind::DeadlineExpiry { seq } => self.on_deadline(ev.class, seq),
            EventKind::ThresholdCrossing { seq } => self.state.lead(ev.class).is_some_and(|p| p.seq == seq),
        }
    }

    fn lead_seq(&self, class: usize) -> Option<u64> {
        self.state.lead(class).map(|p| p.seq)
    }

    fn on_arrival(&mut self, class: usize) {
        let job = self.traces.classes[class].jobs[self.cursor[class]];
        self.cursor[class] += 1;
        let was_absent = !self.state.is_present(class);
        let deadline = if self.state.is_pu(class) {
            job.arrival_ms + self.cfg.pu_classes[class].deadline_ms
        } else {
            f64::INFINITY
        };
        let seq = self.next_seq;
        self.next_seq += 1;
        self.state.classes[class].queue.push_back(Packet {
            seq,
            class,
            arrival_ms: job.arrival_ms,
            service_demand_ms: job.service_demand_ms,
            remaining_service_ms: job.service_demand_ms,
            absolute_deadline_ms: deadline,
            first_start_ms: None,
            disposition: Disposition::Queued,
        });
        self.stats.note_arrival(class);
        if self.cfg.drop_failed_pu && deadline.is_finite() {
            self.push(deadline, class, EventKind::DeadlineExpiry { seq });
        }
        if was_absent {
            self.schedule_crossing(class);
        }
        self.schedule_next_arrival(class);
    }

    /// Returns whether this was a live epoch rather than a stale completion
    /// left behind by a preemption.
    fn on_completion(&mut self, seq: u64, generation: u64) -> bool {
        let live = self
            .state
            .server
            .as_ref()
            .is_some_and(|s| s.packet.seq == seq && s.generation == generation);
        if !live {
            return false;
        }
        let s = self.state.server.take().expect("checked above");
        let now = self.state.clock;
        let mut packet = s.packet;
        let class = packet.class;
        self.stats.add_busy(class, now - s.started_ms);
        packet.remaining_service_ms = 0.0;
        packet.disposition = Disposition::Completed;
        self.resolve(packet, now);
        self.schedule_crossing(class);
        true
    }

    /// Drops PU packet `seq` if it is still in the system, aborting it when
    /// it is in service.
    fn on_deadline(&mut self, class: usize, seq: u64) -> bool {
        let now = self.state.clock;
        let lead_before = self.lead_seq(class);
        let mut packet = if self.state.server.as_ref().is_some_and(|s| s.packet.seq == seq) {
            let s = self.state.server.take().expect("checked above");
            self.stats.add_busy(class, now - s.started_ms);
            let mut p = s.packet;
            p.remaining_service_ms = (p.remaining_service_ms - (now - s.started_ms)).max(0.0);
            p
        } else {
            let q = &mut self.state.classes[class].queue;
            match q.iter().position(|p| p.seq == seq) {
                Some(pos) => q.remove(pos).expect("position is valid"),
                None => return false,
            }
        };
        packet.disposition = Disposition::Dropped;
        self.resolve(packet, now);
        if self.lead_seq(class) != lead_before {
            self.schedule_crossing(class);
        }
        true
    }

    /// Records a packet that left the system at `now`.
    fn resolve(&mut self, packet: Packet, now: TimeMs) {
        let class = packet.class;
        let counted = packet.arrival_ms >= self.cfg.warmup_ms;
        let (latency, finish) = match packet.disposition {
            Disposition::Dropped => (packet.absolute_deadline_ms - packet.arrival_ms, None),
            _ => (now - packet.arrival_ms, Some(now)),
        };
        debug_assert!(latency >= 0.0);
        if self.state.is_pu(class) {
            let outcome = if packet.disposition == Disposition::Completed && now < packet.absolute_deadline_ms {
                Outcome::Success
            } else {
                Outcome::Failure
            };
            self.stats.record_pu(class, latency, outcome, packet.disposition == Disposition::Dropped, counted);
        } else {
            self.stats.record_ed(class, latency, counted);
        }
        if let Some(log) = &mut self.log {
            let c = self.state.classes[class].class;
            log.push(PacketRecord {
                kind: c.kind,
                class_id: c.id,
                arrival_ms: packet.arrival_ms,
                start_ms: packet.first_start_ms,
                finish_ms: finish,
                disposition: packet.disposition,
                latency_ms: Some(latency),
            });
        }
    }

    fn apply_decision(&mut self, decision: PolicyDecision) -> Result<()> {
        let now = self.state.clock;
        match decision {
            PolicyDecision::Continue => {
                if self.state.server.is_none() {
                    return Err(Error::Consistency {
                        clock_ms: now,
                        detail: "policy returned Continue with an idle server".into(),
                    });
                }
            }
            PolicyDecision::Idle => {
                if self.state.server.is_some() {
                    return Err(Error::Consistency {
                        clock_ms: now,
                        detail: "policy returned Idle while a packet is in service".into(),
                    });
                }
            }
            PolicyDecision::ServeClass(class) => {
                if class >= self.state.classes.len() {
                    return Err(Error::Consistency {
                        clock_ms: now,
                        detail: format!("policy chose unknown class index {class}"),
                    });
                }
                if self.state.in_service_class() == Some(class) {
                    return Ok(());
                }
                if self.state.classes[class].queue.is_empty() {
                    return Err(Error::Consistency {
                        clock_ms: now,
                        detail: format!("policy chose empty class {}", self.state.classes[class].class),
                    });
                }
                self.preempt();
                let mut packet = self.state.classes[class].queue.pop_front().expect("non-empty");
                packet.disposition = Disposition::InService;
                packet.first_start_ms.get_or_insert(now);
                self.generation += 1;
                let generation = self.generation;
                let done = now + packet.remaining_service_ms;
                let seq = packet.seq;
                self.state.server = Some(InService {
                    packet,
                    started_ms: now,
                    generation,
                });
                self.push(done, class, EventKind::ServiceCompletion { seq, generation });
            }
        }
        Ok(())
    }

    /// Returns the packet in service (if any) to the head of its queue,
    /// keeping its remaining demand.
    fn preempt(&mut self) {
        if let Some(s) = self.state.server.take() {
            let now = self.state.clock;
            let mut p = s.packet;
            let class = p.class;
            self.stats.add_busy(class, now - s.started_ms);
            p.remaining_service_ms = (p.remaining_service_ms - (now - s.started_ms)).max(0.0);
            p.disposition = Disposition::Queued;
            self.stats.preemptions += 1;
            self.state.classes[class].queue.push_front(p);
        }
    }

    fn finish(&mut self, horizon: TimeMs) {
        if let Some(s) = &self.state.server {
            self.stats.add_busy(s.packet.class, horizon - s.started_ms);
            self.stats.note_residual(s.packet.class, 1);
        }
        for (class, q) in self.state.classes.iter().enumerate() {
            self.stats.note_residual(class, q.queue.len() as u64);
        }
        self.state.clock = horizon;
    }
}
