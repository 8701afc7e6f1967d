//! The discrete-event core: event queue, robot and workstation dynamics, the
//! three decision events, metrics and the replayable event log.
//!
//! A [`Simulation`] advances until a robot needs a decision, exposes it as a
//! [`Decision`] (targets plus validity mask) and waits for [`Simulation::step`].
//! Events at equal timestamps are processed in a fixed priority order, then by
//! robot (or order) id, then by insertion sequence, so runs are reproducible
//! bit for bit.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{AllocError, SimError};
use crate::finalizer::{self, commit_plan};
use crate::model::{
    ItemVector, Job, LocationId, Order, OrderId, Pos, RobotId, RobotStatus, ShelfId, ShelfPlace,
    SimTime, WorkstationId,
};
use crate::policies::{self, AllocatorKind, Scheduler, SchedulerKind};
use crate::rl_math::{potential, Phase, ShapingConfig};
use crate::soft_alloc::{DEFAULT_EPSILON, DEFAULT_K};
use crate::world::Warehouse;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpConfig {
    /// Pool size that triggers a solve.
    pub threshold: usize,
    /// Seconds after the first pooled order at which the pool is solved anyway.
    pub time_limit: SimTime,
    /// Branch-and-bound node budget per batch.
    pub node_budget: u64,
    /// Largest `orders × shelves × workstations` product solved exactly.
    pub exact_limit: usize,
}

impl Default for CpConfig {
    fn default() -> Self {
        Self {
            threshold: 10,
            time_limit: 60,
            node_budget: 2_000_000,
            exact_limit: 96,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub allocator: AllocatorKind,
    pub k: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub cp: CpConfig,
    #[serde(default)]
    pub shaping: ShapingConfig,
    pub seed: u64,
    /// Abort after this many decisions.
    pub max_decisions: u64,
    /// Re-check conservation and placement after every event.
    #[serde(default)]
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            allocator: AllocatorKind::Soft,
            k: DEFAULT_K,
            epsilon: DEFAULT_EPSILON,
            cp: CpConfig::default(),
            shaping: ShapingConfig::default(),
            seed: 0,
            max_decisions: 2_000_000,
            check_invariants: false,
        }
    }
}

impl SimConfig {
    pub fn with_allocator(allocator: AllocatorKind, seed: u64) -> Self {
        Self {
            allocator,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Idle,
    Pickup,
    Delivery,
}

impl DecisionKind {
    pub fn index(self) -> usize {
        match self {
            DecisionKind::Idle => 0,
            DecisionKind::Pickup => 1,
            DecisionKind::Delivery => 2,
        }
    }
}

impl fmt::Display for DecisionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecisionKind::Idle => "idle",
            DecisionKind::Pickup => "pickup",
            DecisionKind::Delivery => "delivery",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Workstation(WorkstationId),
    Location(LocationId),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Workstation(w) => write!(f, "{w}"),
            Target::Location(l) => write!(f, "{l}"),
        }
    }
}

/// A pending robot decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub time: SimTime,
    pub kind: DecisionKind,
    pub robot: RobotId,
    pub phase: Phase,
    /// The full action space of the event, workstations before locations.
    pub targets: Vec<Target>,
    pub mask: Vec<bool>,
    /// Targets that advance pending work.
    pub relevant: Vec<bool>,
    /// Items picked by the job that just finished (delivery events only).
    pub picked: Option<u64>,
}

impl Decision {
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.targets.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Valid targets that advance pending work, or every valid target if
    /// none does.
    pub fn preferred(&self) -> Vec<usize> {
        let both: Vec<usize> = (0..self.targets.len())
            .filter(|&i| self.mask[i] && self.relevant[i])
            .collect();
        if both.is_empty() {
            self.valid_indices()
        } else {
            both
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EventKind {
    OrderArrival(OrderId),
    CpTimer(u64),
    ArriveAtWorkstation(RobotId, WorkstationId),
    ShelfReturned(RobotId),
    DeliveryCompletion(RobotId),
    PickupCompletion(RobotId),
    Idle(RobotId),
}

impl EventKind {
    fn priority(self) -> u8 {
        match self {
            EventKind::OrderArrival(_) => 0,
            EventKind::CpTimer(_) => 1,
            EventKind::ArriveAtWorkstation(..) => 2,
            EventKind::ShelfReturned(_) => 3,
            EventKind::DeliveryCompletion(_) => 4,
            EventKind::PickupCompletion(_) => 5,
            EventKind::Idle(_) => 6,
        }
    }

    fn subject(self) -> u32 {
        match self {
            EventKind::OrderArrival(o) => o.0,
            EventKind::CpTimer(_) => 0,
            EventKind::ArriveAtWorkstation(r, _)
            | EventKind::ShelfReturned(r)
            | EventKind::DeliveryCompletion(r)
            | EventKind::PickupCompletion(r)
            | EventKind::Idle(r) => r.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Event {
    time: SimTime,
    kind: EventKind,
    seq: u64,
}

impl Event {
    fn key(&self) -> (SimTime, u8, u32, u64) {
        (self.time, self.kind.priority(), self.kind.subject(), self.seq)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStatus {
    NotArrived,
    /// Waiting in the soft state or the CP pool.
    Open,
    /// Every unit is reserved on some shelf.
    Reserved,
    Completed,
    /// Demand exceeded the stock not yet promised to other orders.
    Rejected,
    /// Could not be covered at delivery time.
    Infeasible,
}

impl OrderStatus {
    pub fn is_resolved(self) -> bool {
        matches!(
            self,
            OrderStatus::Completed | OrderStatus::Rejected | OrderStatus::Infeasible
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogEvent {
    Idle,
    Pickup,
    Delivery,
    Return,
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: SimTime,
    pub event: LogEvent,
    pub robot: RobotId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shelf: Option<ShelfId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<usize>,
    pub target: String,
    pub eta: SimTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picked: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub makespan: SimTime,
    /// Mean of `completion − arrival` over completed orders.
    pub mean_completion_time: f64,
    /// Shelf deliveries per workstation per hour.
    pub throughput: f64,
    /// Picked items per shelf delivery.
    pub hit_rate: f64,
    pub mean_travel: f64,
    pub decisions: u64,
    pub orders: usize,
    pub completed: usize,
    pub rejected: usize,
    pub infeasible: usize,
    pub deliveries: u64,
    pub items_picked: u64,
    /// Largest robot active time; equals the makespan.
    pub max_active_time: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    /// Physical time between this decision and the next one (or the end).
    pub dt: SimTime,
    pub done: bool,
}

#[derive(Clone, Debug, Default)]
struct Counters {
    decisions: u64,
    deliveries: u64,
    items_picked: u64,
    completed_soft_orders: u64,
    completed_tasks: u64,
}

/// Remaining, completed-soft-order and completed-task counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueCounts {
    pub remaining_orders: u64,
    pub completed_soft_orders: u64,
    pub completed_tasks: u64,
}

pub struct Simulation {
    world: Warehouse,
    orders: Vec<Order>,
    status: Vec<OrderStatus>,
    unpicked: Vec<u64>,
    completion: Vec<Option<SimTime>>,
    /// Every unit picked so far came from a soft pick-list.
    via_soft: Vec<bool>,
    /// Demand of open orders that is not yet reserved.
    promised: ItemVector,
    in_promise: Vec<bool>,
    cfg: SimConfig,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: SimTime,
    last_event: SimTime,
    pending: Option<Decision>,
    log: Vec<LogRecord>,
    alloc_rng: ChaCha8Rng,
    cp_pool: Vec<OrderId>,
    cp_generation: u64,
    counters: Counters,
    watchdog: bool,
    done: bool,
    started: bool,
    diagnostics: Vec<String>,
}

impl Simulation {
    pub fn new(ds: &Dataset, cfg: SimConfig) -> Result<Self, SimError> {
        if cfg.k == 0 {
            return Err(AllocError::ZeroK.into());
        }
        let world = Warehouse::from_dataset(ds)?;
        let n = ds.orders.len();
        let mut alloc_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        alloc_rng.set_stream(1);
        let mut sim = Self {
            promised: ItemVector::zeros(world.num_items),
            in_promise: vec![false; ds.orders.len()],
            world,
            orders: ds.orders.clone(),
            status: vec![OrderStatus::NotArrived; n],
            unpicked: ds.orders.iter().map(|o| o.demand.total()).collect(),
            completion: vec![None; n],
            via_soft: vec![true; n],
            cfg,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            last_event: 0,
            pending: None,
            log: Vec::new(),
            alloc_rng,
            cp_pool: Vec::new(),
            cp_generation: 0,
            counters: Counters::default(),
            watchdog: false,
            done: false,
            started: false,
            diagnostics: Vec::new(),
        };
        for i in 0..n {
            let t = sim.orders[i].arrival;
            sim.push(t, EventKind::OrderArrival(OrderId::from_index(i)));
        }
        for r in 0..sim.world.robots.len() {
            sim.push(0, EventKind::Idle(RobotId::from_index(r)));
        }
        Ok(sim)
    }

    /// Advances to the first decision. Idempotent.
    pub fn start(&mut self) -> Result<Option<&Decision>, SimError> {
        if !self.started {
            self.started = true;
            self.advance()?;
        }
        Ok(self.pending.as_ref())
    }

    pub fn pending(&self) -> Option<&Decision> {
        self.pending.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn world(&self) -> &Warehouse {
        &self.world
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn orders(&self) -> &[Order] {
        &self.orders
    }

    pub fn order_status(&self, o: OrderId) -> OrderStatus {
        self.status[o.index()]
    }

    pub fn completion_time(&self, o: OrderId) -> Option<SimTime> {
        self.completion[o.index()]
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    pub fn active_times(&self) -> Vec<f64> {
        self.world.robots.iter().map(|r| r.active_time as f64).collect()
    }

    /// Potential of the current active-time vector under the configured `p`.
    pub fn potential(&self) -> f64 {
        potential(&self.active_times(), self.cfg.shaping.p).unwrap_or(0.0)
    }

    pub fn value_counts(&self) -> ValueCounts {
        let arrived = self.status.iter().filter(|s| **s != OrderStatus::NotArrived).count();
        let resolved = self.status.iter().filter(|s| s.is_resolved()).count();
        ValueCounts {
            remaining_orders: (arrived - resolved) as u64,
            completed_soft_orders: self.counters.completed_soft_orders,
            completed_tasks: self.counters.completed_tasks,
        }
    }

    fn push(&mut self, time: SimTime, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            kind,
            seq: self.seq,
        }));
    }

    fn unresolved(&self) -> usize {
        self.status.iter().filter(|s| !s.is_resolved()).count()
    }

    /// Applies `action` to the pending decision and advances to the next one.
    pub fn step(&mut self, action: usize) -> Result<StepInfo, SimError> {
        let d = self.pending.take().ok_or(SimError::NoPendingDecision)?;
        if action >= d.targets.len() || !d.mask[action] {
            let reason = if action >= d.targets.len() {
                format!("only {} targets", d.targets.len())
            } else {
                format!("target {} is masked", d.targets[action])
            };
            self.pending = Some(d);
            return Err(SimError::InvalidAction { index: action, reason });
        }
        self.counters.decisions += 1;
        if self.counters.decisions > self.cfg.max_decisions {
            return Err(SimError::Aborted {
                time: self.now,
                reason: format!("decision limit {} exceeded", self.cfg.max_decisions),
            });
        }
        self.watchdog = false;
        self.apply(&d, action)?;
        self.advance()?;
        let next = match &self.pending {
            Some(n) => n.time,
            None => self.last_event,
        };
        Ok(StepInfo {
            dt: next - d.time,
            done: self.done,
        })
    }

    fn apply(&mut self, d: &Decision, action: usize) -> Result<(), SimError> {
        let r = d.robot;
        let target = d.targets[action];
        let shelf = self.world.robots[r.index()].shelf;
        let (event, eta) = match (d.kind, target) {
            (DecisionKind::Idle, Target::Location(l)) => {
                let lpos = self.world.locations[l.index()].pos;
                self.world.locations[l.index()].reserved_by = Some(r);
                let eta = self.dispatch(r, lpos, RobotStatus::MovingToPick)?;
                self.push(eta, EventKind::PickupCompletion(r));
                (LogEvent::Idle, eta)
            }
            (DecisionKind::Pickup, Target::Workstation(w)) => {
                let s = shelf.ok_or_else(|| SimError::Invariant(format!("{r} has no shelf")))?;
                self.finalize_delivery(s, w)?;
                let eta = self.dispatch_to_ws(r, w)?;
                (LogEvent::Pickup, eta)
            }
            (DecisionKind::Delivery, Target::Workstation(w)) => {
                let eta = self.dispatch_to_ws(r, w)?;
                (LogEvent::Delivery, eta)
            }
            (DecisionKind::Delivery, Target::Location(l)) => {
                let lpos = self.world.locations[l.index()].pos;
                self.world.locations[l.index()].reserved_by = Some(r);
                let eta = self.dispatch(r, lpos, RobotStatus::MovingToReturn)?;
                self.push(eta, EventKind::ShelfReturned(r));
                (LogEvent::Delivery, eta)
            }
            (kind, target) => {
                return Err(SimError::Invariant(format!("{target} is not a {kind} target")));
            }
        };
        let shelf = match d.kind {
            DecisionKind::Idle => match target {
                Target::Location(l) => self.world.locations[l.index()].occupant,
                Target::Workstation(_) => None,
            },
            _ => shelf,
        };
        self.log.push(LogRecord {
            t: d.time,
            event,
            robot: r,
            shelf,
            action: Some(action),
            target: target.to_string(),
            eta,
            picked: d.picked,
        });
        Ok(())
    }

    fn dispatch(&mut self, r: RobotId, dest: Pos, status: RobotStatus) -> Result<SimTime, SimError> {
        let robot = &self.world.robots[r.index()];
        let dist = self.world.grid.dist(robot.pos, dest)?;
        let eta = self.now + dist as SimTime;
        let robot = &mut self.world.robots[r.index()];
        robot.status = status;
        robot.heading = Some(dest);
        robot.eta = eta;
        robot.travel += dist as u64;
        robot.active_time = robot.active_time.max(eta);
        Ok(eta)
    }

    fn dispatch_to_ws(&mut self, r: RobotId, w: WorkstationId) -> Result<SimTime, SimError> {
        let wpos = self.world.workstations[w.index()].pos;
        let eta = self.dispatch(r, wpos, RobotStatus::MovingToWs)?;
        self.push(eta, EventKind::ArriveAtWorkstation(r, w));
        Ok(eta)
    }

    fn finalize_delivery(&mut self, s: ShelfId, w: WorkstationId) -> Result<(), SimError> {
        let out = finalizer::finalize_delivery(&mut self.world, s, w, &self.orders, self.cfg.epsilon)?;
        for t in &out.bound {
            self.release_promise(t.order);
            self.status[t.order.index()] = OrderStatus::Reserved;
        }
        let mut covered: Vec<OrderId> = out.tasks.iter().map(|t| t.order).collect();
        covered.dedup();
        for o in covered {
            self.release_promise(o);
            self.status[o.index()] = OrderStatus::Reserved;
            self.via_soft[o.index()] = false;
        }
        for o in out.used_lifted_shelf {
            self.diagnostics
                .push(format!("t={}: {o} drew on the lifted shelf {s}", self.now));
        }
        for o in out.infeasible {
            self.release_promise(o);
            self.status[o.index()] = OrderStatus::Infeasible;
            self.diagnostics
                .push(format!("t={}: {o} could not be covered and was flagged", self.now));
        }
        Ok(())
    }

    fn release_promise(&mut self, o: OrderId) {
        if std::mem::take(&mut self.in_promise[o.index()]) {
            let d = &self.orders[o.index()].demand;
            self.promised.sub_assign(d).expect("promised covers every promised order");
        }
    }

    fn advance(&mut self) -> Result<(), SimError> {
        while self.pending.is_none() && !self.done {
            self.wake_sleepers();
            let Some(Reverse(ev)) = self.queue.pop() else {
                if self.unresolved() == 0 {
                    self.done = true;
                    break;
                }
                if self.watchdog {
                    return Err(self.abort("no progress while orders remain"));
                }
                self.watchdog = true;
                let sleeping: Vec<RobotId> = self
                    .world
                    .robots
                    .iter()
                    .filter(|r| r.sleeping)
                    .map(|r| r.id)
                    .collect();
                if sleeping.is_empty() {
                    return Err(self.abort("event queue empty with no robot to wake"));
                }
                for r in sleeping {
                    self.world.robots[r.index()].sleeping = false;
                    self.push(self.now, EventKind::Idle(r));
                }
                continue;
            };
            if let EventKind::CpTimer(generation) = ev.kind {
                if generation != self.cp_generation || self.cp_pool.is_empty() {
                    continue;
                }
            }
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            self.last_event = ev.time;
            self.process(ev.kind)?;
            if self.cfg.check_invariants {
                self.world.check_invariants()?;
            }
        }
        Ok(())
    }

    fn abort(&self, reason: &str) -> SimError {
        let open: Vec<String> = self
            .status
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_resolved())
            .take(5)
            .map(|(i, s)| format!("o{i}:{s:?}"))
            .collect();
        SimError::Aborted {
            time: self.now,
            reason: format!("{reason}; unresolved {} (e.g. {})", self.unresolved(), open.join(", ")),
        }
    }

    fn process(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::OrderArrival(o) => self.on_arrival(o),
            EventKind::CpTimer(_) => self.solve_cp_pool(),
            EventKind::ArriveAtWorkstation(r, w) => self.on_arrive_at_ws(r, w),
            EventKind::ShelfReturned(r) => self.on_shelf_returned(r),
            EventKind::DeliveryCompletion(r) => self.on_delivery_completion(r),
            EventKind::PickupCompletion(r) => self.on_pickup_completion(r),
            EventKind::Idle(r) => {
                self.on_idle(r);
                Ok(())
            }
        }
    }

    fn on_arrival(&mut self, o: OrderId) -> Result<(), SimError> {
        let demand = self.orders[o.index()].demand.clone();
        let mut needed = self.promised.clone();
        needed.add_assign(&demand)?;
        if !self.world.unreserved_total().can_fulfill(&needed)? {
            self.status[o.index()] = OrderStatus::Rejected;
            self.diagnostics.push(format!(
                "t={}: {o} rejected, demand exceeds uncommitted stock",
                self.now
            ));
            return Ok(());
        }
        self.status[o.index()] = OrderStatus::Open;
        let order = self.orders[o.index()].clone();
        match self.cfg.allocator {
            AllocatorKind::Soft => {
                self.promised = needed;
                self.in_promise[o.index()] = true;
                self.world.soft_arrival(&order, self.cfg.k, self.cfg.epsilon)?;
            }
            AllocatorKind::Sqf | AllocatorKind::Wlb | AllocatorKind::Random => {
                let w = match self.cfg.allocator {
                    AllocatorKind::Sqf => policies::sqf_choose(&self.world, self.now),
                    AllocatorKind::Wlb => policies::wlb_choose(&self.world),
                    _ => policies::random_choose(&self.world, &mut self.alloc_rng),
                };
                if self.cfg.allocator == AllocatorKind::Random {
                    let plan = policies::random_plan(&self.world, &demand, &mut self.alloc_rng)
                        .ok_or(AllocError::Infeasible { order: o })?;
                    commit_plan(&mut self.world, o, w, plan, false)?;
                } else {
                    finalizer::default_allocate(&mut self.world, &order, w, self.cfg.epsilon)?;
                }
                self.status[o.index()] = OrderStatus::Reserved;
                self.via_soft[o.index()] = false;
            }
            AllocatorKind::Cp => {
                self.promised = needed;
                self.in_promise[o.index()] = true;
                self.cp_pool.push(o);
                if self.cp_pool.len() >= self.cfg.cp.threshold {
                    self.solve_cp_pool()?;
                } else if self.cp_pool.len() == 1 {
                    let t = self.now + self.cfg.cp.time_limit;
                    self.push(t, EventKind::CpTimer(self.cp_generation));
                }
            }
        }
        Ok(())
    }

    fn solve_cp_pool(&mut self) -> Result<(), SimError> {
        let pool = std::mem::take(&mut self.cp_pool);
        self.cp_generation += 1;
        if pool.is_empty() {
            return Ok(());
        }
        let batch: Vec<&Order> = pool.iter().map(|o| &self.orders[o.index()]).collect();
        let solution = policies::cp::solve_batch(&self.world, &batch, &self.cfg.cp, self.cfg.epsilon);
        for o in &pool {
            self.release_promise(*o);
        }
        match solution {
            Some(sol) => {
                for a in sol.assignments {
                    commit_plan(&mut self.world, a.order, a.workstation, a.plan, false)?;
                    self.status[a.order.index()] = OrderStatus::Reserved;
                    self.via_soft[a.order.index()] = false;
                }
            }
            None => {
                self.diagnostics.push(format!(
                    "t={}: CP batch of {} orders infeasible, default allocation used",
                    self.now,
                    pool.len()
                ));
                for o in pool {
                    let w = policies::wlb_choose(&self.world);
                    let order = self.orders[o.index()].clone();
                    match finalizer::default_allocate(&mut self.world, &order, w, self.cfg.epsilon) {
                        Ok(_) => {
                            self.status[o.index()] = OrderStatus::Reserved;
                            self.via_soft[o.index()] = false;
                        }
                        Err(AllocError::Infeasible { .. }) => {
                            self.status[o.index()] = OrderStatus::Infeasible;
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
        Ok(())
    }

    fn on_arrive_at_ws(&mut self, r: RobotId, w: WorkstationId) -> Result<(), SimError> {
        let wpos = self.world.workstations[w.index()].pos;
        let s = self.world.robots[r.index()]
            .shelf
            .ok_or_else(|| SimError::Invariant(format!("{r} reached {w} without a shelf")))?;
        {
            let robot = &mut self.world.robots[r.index()];
            robot.pos = wpos;
            robot.heading = None;
            robot.status = RobotStatus::Queued;
        }
        let shelf = &mut self.world.shelves[s.index()];
        let (tasks, rest): (Vec<_>, Vec<_>) = shelf.tasks.drain(..).partition(|t| t.workstation == w);
        shelf.tasks = rest;
        let items: u64 = tasks.iter().map(|t| t.items.total()).sum();
        let duration = self.world.processing_time(items);
        let ws = &mut self.world.workstations[w.index()];
        let start = ws.busy_until.max(self.now);
        let finish = start + duration;
        ws.busy_until = finish;
        ws.queue.push_back(Job {
            robot: r,
            shelf: s,
            tasks,
            items,
            start,
            finish,
        });
        let robot = &mut self.world.robots[r.index()];
        robot.eta = finish;
        robot.active_time = robot.active_time.max(finish);
        self.push(finish, EventKind::DeliveryCompletion(r));
        Ok(())
    }

    fn on_delivery_completion(&mut self, r: RobotId) -> Result<(), SimError> {
        let pos = self.world.robots[r.index()].pos;
        let w = self
            .world
            .workstations
            .iter()
            .position(|w| w.pos == pos)
            .map(WorkstationId::from_index)
            .ok_or_else(|| SimError::Invariant(format!("{r} is not at a workstation")))?;
        let job = self.world.workstations[w.index()]
            .queue
            .pop_front()
            .filter(|j| j.robot == r)
            .ok_or_else(|| SimError::Invariant(format!("{w} queue head is not {r}")))?;
        self.counters.deliveries += 1;
        self.counters.items_picked += job.items;
        self.world.workstations[w.index()].workload -= job.items;
        for t in &job.tasks {
            self.world.picked.add_assign(&t.items)?;
            if !t.from_soft_set {
                self.counters.completed_tasks += 1;
            }
            let o = t.order.index();
            self.unpicked[o] -= t.items.total();
            if self.unpicked[o] == 0 && self.status[o] == OrderStatus::Reserved {
                self.status[o] = OrderStatus::Completed;
                self.completion[o] = Some(self.now);
                if self.via_soft[o] {
                    self.counters.completed_soft_orders += 1;
                }
            }
        }
        let s = job.shelf;
        let phase = if self.world.shelves[s.index()].tasks.is_empty() {
            Phase::Return
        } else {
            Phase::Delivery
        };
        let mut targets: Vec<Target> = Vec::new();
        let mut mask = Vec::new();
        let mut relevant = Vec::new();
        for ws in &self.world.workstations {
            targets.push(Target::Workstation(ws.id));
            mask.push(true);
            relevant.push(self.world.shelves[s.index()].tasks_for(ws.id).next().is_some());
        }
        for l in &self.world.locations {
            if l.occupant.is_none() {
                targets.push(Target::Location(l.id));
                mask.push(l.reserved_by.is_none());
                relevant.push(phase == Phase::Return);
            }
        }
        self.pending = Some(Decision {
            time: self.now,
            kind: DecisionKind::Delivery,
            robot: r,
            phase,
            targets,
            mask,
            relevant,
            picked: Some(job.items),
        });
        Ok(())
    }

    fn on_pickup_completion(&mut self, r: RobotId) -> Result<(), SimError> {
        let lpos = self.world.robots[r.index()]
            .heading
            .ok_or_else(|| SimError::Invariant(format!("{r} arrived nowhere")))?;
        let l = self
            .world
            .locations
            .iter()
            .position(|l| l.pos == lpos && l.reserved_by == Some(r))
            .ok_or_else(|| SimError::Invariant(format!("{r} holds no pick-up reservation")))?;
        let s = self.world.locations[l]
            .occupant
            .take()
            .ok_or_else(|| SimError::Invariant(format!("location l{l} is empty at pick-up")))?;
        self.world.locations[l].reserved_by = None;
        self.world.shelves[s.index()].place = ShelfPlace::Carried(r);
        {
            let robot = &mut self.world.robots[r.index()];
            robot.pos = lpos;
            robot.heading = None;
            robot.shelf = Some(s);
            robot.status = RobotStatus::MovingToWs;
        }
        finalizer::finalize_pickup(&mut self.world, s, &self.orders)?;
        let shelf = &self.world.shelves[s.index()];
        let has_list = shelf.picklist.is_some();
        let targets: Vec<Target> = self
            .world
            .workstations
            .iter()
            .map(|w| Target::Workstation(w.id))
            .collect();
        let relevant = self
            .world
            .workstations
            .iter()
            .map(|w| has_list || shelf.tasks_for(w.id).next().is_some())
            .collect();
        self.pending = Some(Decision {
            time: self.now,
            kind: DecisionKind::Pickup,
            robot: r,
            phase: Phase::Delivery,
            mask: vec![true; targets.len()],
            targets,
            relevant,
            picked: None,
        });
        Ok(())
    }

    fn on_shelf_returned(&mut self, r: RobotId) -> Result<(), SimError> {
        let robot = &self.world.robots[r.index()];
        let lpos = robot
            .heading
            .ok_or_else(|| SimError::Invariant(format!("{r} returned nowhere")))?;
        let s = robot
            .shelf
            .ok_or_else(|| SimError::Invariant(format!("{r} returned without a shelf")))?;
        let l = self
            .world
            .locations
            .iter()
            .position(|l| l.pos == lpos && l.reserved_by == Some(r))
            .ok_or_else(|| SimError::Invariant(format!("{r} holds no return reservation")))?;
        let loc = &mut self.world.locations[l];
        loc.reserved_by = None;
        loc.occupant = Some(s);
        self.world.shelves[s.index()].place = ShelfPlace::Stored(loc.id);
        let robot = &mut self.world.robots[r.index()];
        robot.pos = lpos;
        robot.heading = None;
        robot.shelf = None;
        robot.status = RobotStatus::Idle;
        self.log.push(LogRecord {
            t: self.now,
            event: LogEvent::Return,
            robot: r,
            shelf: Some(s),
            action: None,
            target: LocationId::from_index(l).to_string(),
            eta: self.now,
            picked: None,
        });
        self.push(self.now, EventKind::Idle(r));
        Ok(())
    }

    /// Location is a legal pick-up target.
    fn pickable(&self, l: usize) -> bool {
        let loc = &self.world.locations[l];
        loc.occupant.is_some() && loc.reserved_by.is_none()
    }

    /// Location holds a shelf with reserved or soft demand.
    fn has_work(&self, l: usize) -> bool {
        match self.world.locations[l].occupant {
            Some(s) => {
                !self.world.shelves[s.index()].tasks.is_empty()
                    || !self.world.soft.soft_set(s).is_empty()
            }
            None => false,
        }
    }

    fn idle_work_exists(&self) -> bool {
        (0..self.world.locations.len()).any(|l| self.pickable(l) && self.has_work(l))
    }

    fn on_idle(&mut self, r: RobotId) {
        if !self.idle_work_exists() {
            self.world.robots[r.index()].sleeping = true;
            return;
        }
        let n = self.world.locations.len();
        let targets = (0..n).map(|l| Target::Location(LocationId::from_index(l))).collect();
        let mask = (0..n).map(|l| self.pickable(l)).collect();
        let relevant = (0..n).map(|l| self.has_work(l)).collect();
        self.pending = Some(Decision {
            time: self.now,
            kind: DecisionKind::Idle,
            robot: r,
            phase: Phase::Pickup,
            targets,
            mask,
            relevant,
            picked: None,
        });
    }

    fn wake_sleepers(&mut self) {
        if !self.world.robots.iter().any(|r| r.sleeping) || !self.idle_work_exists() {
            return;
        }
        for i in 0..self.world.robots.len() {
            if self.world.robots[i].sleeping {
                self.world.robots[i].sleeping = false;
                self.push(self.now, EventKind::Idle(RobotId::from_index(i)));
            }
        }
    }

    pub fn metrics(&self) -> EpisodeMetrics {
        let completed: Vec<SimTime> = self
            .completion
            .iter()
            .zip(&self.orders)
            .filter_map(|(c, o)| c.map(|t| t - o.arrival))
            .collect();
        let count = |s: OrderStatus| self.status.iter().filter(|x| **x == s).count();
        let nw = self.world.workstations.len().max(1) as f64;
        let nr = self.world.robots.len().max(1) as f64;
        let makespan = self.last_event;
        EpisodeMetrics {
            makespan,
            mean_completion_time: if completed.is_empty() {
                0.0
            } else {
                completed.iter().sum::<u64>() as f64 / completed.len() as f64
            },
            throughput: if makespan == 0 {
                0.0
            } else {
                self.counters.deliveries as f64 / nw / (makespan as f64 / 3600.0)
            },
            hit_rate: if self.counters.deliveries == 0 {
                0.0
            } else {
                self.counters.items_picked as f64 / self.counters.deliveries as f64
            },
            mean_travel: self.world.robots.iter().map(|r| r.travel).sum::<u64>() as f64 / nr,
            decisions: self.counters.decisions,
            orders: self.orders.len(),
            completed: count(OrderStatus::Completed),
            rejected: count(OrderStatus::Rejected),
            infeasible: count(OrderStatus::Infeasible),
            deliveries: self.counters.deliveries,
            items_picked: self.counters.items_picked,
            max_active_time: self.world.robots.iter().map(|r| r.active_time).max().unwrap_or(0),
        }
    }
}

/// Result of one complete episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub metrics: EpisodeMetrics,
    pub log: Vec<LogRecord>,
    /// Sum of shaped rewards over all decisions.
    pub shaped_return: f64,
    /// Potential at the first decision and at the end.
    pub initial_potential: f64,
    pub final_potential: f64,
    pub diagnostics: Vec<String>,
}

/// Runs `sim` to completion, asking `choose` for every decision.
pub fn drive(
    sim: &mut Simulation,
    mut choose: impl FnMut(&Simulation, &Decision) -> Result<usize, SimError>,
) -> Result<EpisodeOutcome, SimError> {
    sim.start()?;
    let shaping = sim.cfg.shaping;
    let initial_potential = sim.potential();
    let mut phi = initial_potential;
    let mut shaped_return = 0.0;
    while let Some(d) = sim.pending() {
        let d = d.clone();
        let action = choose(sim, &d)?;
        let info = sim.step(action)?;
        let next = sim.potential();
        shaped_return += shaping.reward(phi, next, info.dt as f64);
        phi = next;
    }
    Ok(EpisodeOutcome {
        metrics: sim.metrics(),
        log: sim.log.clone(),
        shaped_return,
        initial_potential,
        final_potential: phi,
        diagnostics: sim.diagnostics.clone(),
    })
}

/// Runs one episode with a heuristic scheduler.
pub fn run_episode(
    ds: &Dataset,
    cfg: &SimConfig,
    scheduler: SchedulerKind,
) -> Result<EpisodeOutcome, SimError> {
    let mut sim = Simulation::new(ds, cfg.clone())?;
    let mut sched = Scheduler::new(scheduler, cfg.seed);
    drive(&mut sim, |s, d| Ok(sched.choose(s, d)))
}

pub const LOG_FORMAT: &str = "rmfs-events";
pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub dataset: String,
    pub scheduler: String,
    pub config: SimConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LogFooter {
    metrics: EpisodeMetrics,
}

/// Serialises a finished episode: header line, one line per record, metrics line.
pub fn log_to_text(header: &LogHeader, outcome: &EpisodeOutcome) -> String {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(header).expect("header serialises"));
    out.push('\n');
    for r in &outcome.log {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    let footer = LogFooter {
        metrics: outcome.metrics.clone(),
    };
    out.push_str(&serde_json::to_string(&footer).expect("metrics serialise"));
    out.push('\n');
    out
}

/// Re-executes a log's decisions against `ds` and checks every line.
///
/// The error names the first (1-based) line that differs.
pub fn replay(ds: &Dataset, text: &str) -> Result<EpisodeMetrics, SimError> {
    let lines: Vec<&str> = text.lines().collect();
    let bad = |line: usize, message: String| SimError::ReplayMismatch {
        line,
        expected: lines.get(line.wrapping_sub(1)).unwrap_or(&"").to_string(),
        actual: message,
    };
    let header: LogHeader = lines
        .first()
        .and_then(|l| serde_json::from_str(l).ok())
        .ok_or_else(|| bad(1, "unreadable log header".into()))?;
    if header.format != LOG_FORMAT || header.version != LOG_VERSION {
        return Err(bad(1, format!("unsupported log {} v{}", header.format, header.version)));
    }
    if header.dataset != ds.name {
        return Err(bad(1, format!("log was recorded on dataset `{}`", header.dataset)));
    }
    if lines.len() < 2 {
        return Err(bad(2, "missing metrics line".into()));
    }
    let body = &lines[1..lines.len() - 1];
    let mut records = Vec::with_capacity(body.len());
    for (i, l) in body.iter().enumerate() {
        let rec: LogRecord = serde_json::from_str(l).map_err(|e| bad(i + 2, e.to_string()))?;
        records.push(rec);
    }
    let mut sim = Simulation::new(ds, header.config.clone())?;
    sim.start()?;
    let check = |sim: &Simulation, from: usize| -> Result<(), SimError> {
        for i in from..sim.log.len() {
            let actual = serde_json::to_string(&sim.log[i]).expect("record serialises");
            if body.get(i) != Some(&actual.as_str()) {
                return Err(SimError::ReplayMismatch {
                    line: i + 2,
                    expected: body.get(i).unwrap_or(&"<end of log>").to_string(),
                    actual,
                });
            }
        }
        Ok(())
    };
    let decisions: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.event != LogEvent::Return)
        .map(|(i, _)| i)
        .collect();
    let mut next = 0;
    let mut checked = 0;
    while sim.pending().is_some() {
        check(&sim, checked)?;
        checked = sim.log.len();
        let idx = *decisions
            .get(next)
            .ok_or_else(|| bad(checked + 2, "log ends before the episode does".into()))?;
        let action = records[idx]
            .action
            .ok_or_else(|| bad(idx + 2, "decision record without an action".into()))?;
        sim.step(action).map_err(|e| match e {
            SimError::InvalidAction { .. } => bad(idx + 2, e.to_string()),
            other => other,
        })?;
        next += 1;
    }
    check(&sim, checked)?;
    if sim.log.len() != records.len() {
        return Err(bad(sim.log.len() + 2, "log continues after the episode ended".into()));
    }
    let footer_line = lines.len();
    let metrics = sim.metrics();
    let actual = serde_json::to_string(&LogFooter {
        metrics: metrics.clone(),
    })
    .expect("metrics serialise");
    if lines[footer_line - 1] != actual {
        return Err(SimError::ReplayMismatch {
            line: footer_line,
            expected: lines[footer_line - 1].to_string(),
            actual,
        });
    }
    Ok(metrics)
}
