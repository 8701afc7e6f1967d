//! Observation graphs for learned schedulers.
//!
//! An observation holds one node per robot, workstation and storage
//! location (after pruning), a single phase node, and distance-weighted
//! edges between every pair of entity types in both directions. Shelves are
//! not nodes: their heat, soft-set size and task count are folded into the
//! robot carrying them or the location holding them.
//!
//! Coordinates are divided by the grid width/height and distances by
//! `height + width`; edge attributes stay in whole cells.
//!
//! The candidate targets of a decision are the workstation nodes followed by
//! the location nodes, in graph order; `mask[i]` and `bias[i]` refer to that
//! ordering and `actions[i]` maps a candidate back to the simulator's index.

use serde::{Deserialize, Serialize};

use crate::model::{LocationId, Pos, RobotId, WorkstationId};
use crate::policies::target_bias;
use crate::sim::{Decision, DecisionKind, Simulation, Target, ValueCounts};
use crate::world::Warehouse;

/// Entity-count limits. `None` keeps everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Robots kept, nearest to the deciding robot first.
    pub k1: usize,
    /// Shelf-holding locations kept, hottest first.
    pub k2: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { k1: 50, k2: 50 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationStatus {
    Empty,
    Occupied,
    /// Targeted by a robot for pick-up or return.
    Reserved,
}

impl LocationStatus {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotNode {
    pub id: RobotId,
    pub x: f64,
    pub y: f64,
    pub tasks: u32,
    pub heat: f64,
    pub soft: u32,
    pub status: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationNode {
    pub id: LocationId,
    pub x: f64,
    pub y: f64,
    pub dist: f64,
    pub tasks: u32,
    pub heat: f64,
    pub soft: u32,
    pub status: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkstationNode {
    pub id: WorkstationId,
    pub x: f64,
    pub y: f64,
    pub dist: f64,
    pub tasks: u32,
    pub heat: f64,
    pub workload: u64,
    /// Seconds until the queue, including robots on their way, clears.
    pub cost: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Robot,
    Workstation,
    Location,
}

/// Typed edges of one relation, stored column-wise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub src_type: NodeType,
    pub dst_type: NodeType,
    pub src: Vec<u32>,
    pub dst: Vec<u32>,
    /// Manhattan distance in cells.
    pub dist: Vec<u32>,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Short relation name such as `rw` or `lr`.
    pub fn relation(&self) -> String {
        let c = |t: NodeType| match t {
            NodeType::Robot => 'r',
            NodeType::Workstation => 'w',
            NodeType::Location => 'l',
        };
        [c(self.src_type), c(self.dst_type)].iter().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: u64,
    pub kind: DecisionKind,
    /// Index of [`Observation::kind`] for the phase node embedding.
    pub phase_index: usize,
    /// Index of the bias phase (pickup, delivery, return).
    pub bias_phase: usize,
    /// Position of the deciding robot within `robots`.
    pub robot: usize,
    pub robots: Vec<RobotNode>,
    pub workstations: Vec<WorkstationNode>,
    pub locations: Vec<LocationNode>,
    /// Relations rw, wr, rl, lr, wl, lw in that order.
    pub edges: Vec<EdgeSet>,
    pub mask: Vec<bool>,
    /// Candidates that advance pending work.
    pub relevant: Vec<bool>,
    pub bias: Vec<f64>,
    /// Simulator action index of each candidate, if it is one.
    pub actions: Vec<Option<usize>>,
    pub value: ValueCounts,
}

impl Observation {
    pub fn num_entities(&self) -> usize {
        self.robots.len() + self.workstations.len() + self.locations.len()
    }

    /// Phase edges go from the phase node to every entity node.
    pub fn num_phase_edges(&self) -> usize {
        self.num_entities()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_entities() + 1
    }

    pub fn num_candidates(&self) -> usize {
        self.workstations.len() + self.locations.len()
    }
}

/// Robots, workstations and locations kept in an observation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntitySubset {
    pub robots: Vec<RobotId>,
    pub workstations: Vec<WorkstationId>,
    pub locations: Vec<LocationId>,
}

/// Keeps the `k1` robots closest to `robot` (itself always included), the
/// `k2` highest-ranked shelf locations and every empty location and
/// workstation. Shelf locations rank unreserved first, then by heat, task
/// count and id. Ids come back sorted.
pub fn prune_entities(world: &Warehouse, robot: RobotId, prune: Option<PruneConfig>) -> EntitySubset {
    let all = EntitySubset {
        robots: world.robots.iter().map(|r| r.id).collect(),
        workstations: world.workstations.iter().map(|w| w.id).collect(),
        locations: world.locations.iter().map(|l| l.id).collect(),
    };
    let Some(PruneConfig { k1, k2 }) = prune else {
        return all;
    };
    let from = world.robots[robot.index()].pos;
    let mut robots: Vec<RobotId> = all.robots.iter().copied().filter(|&r| r != robot).collect();
    robots.sort_by_key(|r| (world.robots[r.index()].pos.manhattan(from), *r));
    robots.truncate(k1.saturating_sub(1));
    robots.push(robot);
    robots.sort();

    let mut empties = Vec::new();
    let mut stocked = Vec::new();
    for l in &world.locations {
        match l.occupant {
            None => empties.push(l.id),
            Some(s) => stocked.push((l.id, s)),
        }
    }
    stocked.sort_by(|a, b| {
        let la = &world.locations[a.0.index()];
        let lb = &world.locations[b.0.index()];
        let key = |s: crate::model::ShelfId| {
            (world.soft.shelf_heat(s), world.shelves[s.index()].tasks.len())
        };
        let (ha, ta) = key(a.1);
        let (hb, tb) = key(b.1);
        la.reserved_by
            .is_some()
            .cmp(&lb.reserved_by.is_some())
            .then(hb.total_cmp(&ha))
            .then(tb.cmp(&ta))
            .then(a.0.cmp(&b.0))
    });
    stocked.truncate(k2);
    let mut locations: Vec<LocationId> = empties.into_iter().chain(stocked.into_iter().map(|x| x.0)).collect();
    locations.sort();
    EntitySubset {
        robots,
        workstations: all.workstations,
        locations,
    }
}

struct Scale {
    width: f64,
    height: f64,
    span: f64,
}

impl Scale {
    fn new(world: &Warehouse) -> Self {
        let (w, h) = (world.grid.width() as f64, world.grid.height() as f64);
        Self {
            width: w.max(1.0),
            height: h.max(1.0),
            span: (w + h).max(1.0),
        }
    }

    fn xy(&self, p: Pos) -> (f64, f64) {
        (p.x as f64 / self.width, p.y as f64 / self.height)
    }
}

pub fn robot_node(world: &Warehouse, r: RobotId) -> RobotNode {
    let scale = Scale::new(world);
    let robot = &world.robots[r.index()];
    let (x, y) = scale.xy(robot.pos);
    let (tasks, heat, soft) = match robot.shelf {
        Some(s) => (
            world.shelves[s.index()].tasks.len() as u32,
            world.soft.shelf_heat(s),
            world.soft.soft_set(s).len() as u32,
        ),
        None => (0, 0.0, 0),
    };
    RobotNode {
        id: r,
        x,
        y,
        tasks,
        heat,
        soft,
        status: robot.status.index(),
    }
}

pub fn location_node(world: &Warehouse, l: LocationId, from: Pos) -> LocationNode {
    let scale = Scale::new(world);
    let loc = &world.locations[l.index()];
    let (x, y) = scale.xy(loc.pos);
    let (tasks, heat, soft) = match loc.occupant {
        Some(s) => (
            world.shelves[s.index()].tasks.len() as u32,
            world.soft.shelf_heat(s),
            world.soft.soft_set(s).len() as u32,
        ),
        None => (0, 0.0, 0),
    };
    let status = if loc.reserved_by.is_some() {
        LocationStatus::Reserved
    } else if loc.occupant.is_some() {
        LocationStatus::Occupied
    } else {
        LocationStatus::Empty
    };
    LocationNode {
        id: l,
        x,
        y,
        dist: from.manhattan(loc.pos) as f64 / scale.span,
        tasks,
        heat,
        soft,
        status: status.index(),
    }
}

pub fn workstation_node(world: &Warehouse, w: WorkstationId, from: Pos, now: u64) -> WorkstationNode {
    let scale = Scale::new(world);
    let ws = &world.workstations[w.index()];
    let (x, y) = scale.xy(ws.pos);
    WorkstationNode {
        id: w,
        x,
        y,
        dist: from.manhattan(ws.pos) as f64 / scale.span,
        tasks: world.tasks_bound_to(w) as u32,
        heat: world.soft.ws_heat(w),
        workload: ws.workload,
        cost: world.queue_clear_time(w, now),
    }
}

fn cross_edges(a: (NodeType, &[Pos]), b: (NodeType, &[Pos])) -> [EdgeSet; 2] {
    let mut fwd = EdgeSet {
        src_type: a.0,
        dst_type: b.0,
        src: Vec::with_capacity(a.1.len() * b.1.len()),
        dst: Vec::with_capacity(a.1.len() * b.1.len()),
        dist: Vec::with_capacity(a.1.len() * b.1.len()),
    };
    for (i, pa) in a.1.iter().enumerate() {
        for (j, pb) in b.1.iter().enumerate() {
            fwd.src.push(i as u32);
            fwd.dst.push(j as u32);
            fwd.dist.push(pa.manhattan(*pb));
        }
    }
    let back = EdgeSet {
        src_type: b.0,
        dst_type: a.0,
        src: fwd.dst.clone(),
        dst: fwd.src.clone(),
        dist: fwd.dist.clone(),
    };
    [fwd, back]
}

/// Builds the observation of the pending decision.
pub fn observe(sim: &Simulation, decision: &Decision, prune: Option<PruneConfig>) -> Observation {
    let world = sim.world();
    let keep = prune_entities(world, decision.robot, prune);
    let from = world.robots[decision.robot.index()].pos;
    let robots: Vec<RobotNode> = keep.robots.iter().map(|&r| robot_node(world, r)).collect();
    let workstations: Vec<WorkstationNode> = keep
        .workstations
        .iter()
        .map(|&w| workstation_node(world, w, from, sim.now()))
        .collect();
    let locations: Vec<LocationNode> = keep
        .locations
        .iter()
        .map(|&l| location_node(world, l, from))
        .collect();

    let rpos: Vec<Pos> = keep.robots.iter().map(|r| world.robots[r.index()].pos).collect();
    let wpos: Vec<Pos> = keep.workstations.iter().map(|w| world.workstations[w.index()].pos).collect();
    let lpos: Vec<Pos> = keep.locations.iter().map(|l| world.locations[l.index()].pos).collect();
    let mut edges = Vec::with_capacity(6);
    edges.extend(cross_edges((NodeType::Robot, &rpos), (NodeType::Workstation, &wpos)));
    edges.extend(cross_edges((NodeType::Robot, &rpos), (NodeType::Location, &lpos)));
    edges.extend(cross_edges((NodeType::Workstation, &wpos), (NodeType::Location, &lpos)));

    let index_of = |t: Target| decision.targets.binary_search(&t).ok();
    let candidates = keep
        .workstations
        .iter()
        .map(|&w| Target::Workstation(w))
        .chain(keep.locations.iter().map(|&l| Target::Location(l)));
    let n = workstations.len() + locations.len();
    let (mut mask, mut relevant, mut bias, mut actions) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let eps = sim.config().epsilon;
    for t in candidates {
        match index_of(t) {
            Some(i) => {
                mask.push(decision.mask[i]);
                relevant.push(decision.relevant[i]);
                bias.push(target_bias(sim, decision, i, eps));
                actions.push(Some(i));
            }
            None => {
                mask.push(false);
                relevant.push(false);
                bias.push(0.0);
                actions.push(None);
            }
        }
    }
    Observation {
        time: decision.time,
        kind: decision.kind,
        phase_index: decision.kind.index(),
        bias_phase: decision.phase.index(),
        robot: keep.robots.binary_search(&decision.robot).expect("deciding robot kept"),
        robots,
        workstations,
        locations,
        edges,
        mask,
        relevant,
        bias,
        actions,
        value: sim.value_counts(),
    }
}
