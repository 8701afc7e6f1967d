//! Order allocators and robot schedulers.
//!
//! Allocators decide, at order arrival, which workstation serves an order and
//! which shelves supply it (or defer that choice to the soft mechanism).
//! Schedulers answer the simulator's decisions. Every scheduler returns a
//! masked-valid index; the heuristic ones restrict themselves to targets that
//! advance pending work whenever such targets exist.

pub mod cp;
pub mod tsp;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ItemVector, OrderId, Pos, RobotId, ShelfId, WorkstationId};
use crate::rl_math::{phase_bias, Phase};
use crate::sim::{Decision, DecisionKind, Simulation, Target};
use crate::world::Warehouse;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocatorKind {
    /// Shortest expected queue time, then greedy shelves.
    Sqf,
    /// Least workload, then greedy shelves.
    Wlb,
    /// Rolling-horizon batches minimising shelf travel.
    Cp,
    /// Soft allocation; the schedule decides.
    Soft,
    /// Uniform workstation, random supplying shelves.
    Random,
}

impl AllocatorKind {
    pub const ALL: [AllocatorKind; 5] = [
        AllocatorKind::Sqf,
        AllocatorKind::Wlb,
        AllocatorKind::Cp,
        AllocatorKind::Soft,
        AllocatorKind::Random,
    ];
}

impl fmt::Display for AllocatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocatorKind::Sqf => "sqf",
            AllocatorKind::Wlb => "wlb",
            AllocatorKind::Cp => "cp",
            AllocatorKind::Soft => "soft",
            AllocatorKind::Random => "random",
        })
    }
}

impl FromStr for AllocatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| format!("unknown allocator `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Nearest,
    Earliest,
    Tsp,
    /// Highest phase bias.
    Bias,
    Random,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] = [
        SchedulerKind::Nearest,
        SchedulerKind::Earliest,
        SchedulerKind::Tsp,
        SchedulerKind::Bias,
        SchedulerKind::Random,
    ];
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerKind::Nearest => "nearest",
            SchedulerKind::Earliest => "earliest",
            SchedulerKind::Tsp => "tsp",
            SchedulerKind::Bias => "bias",
            SchedulerKind::Random => "random",
        })
    }
}

impl FromStr for SchedulerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| format!("unknown scheduler `{s}`"))
    }
}

/// Index of the smallest value, ties to the lower index.
pub fn argmin(values: &[u64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Workstation with the shortest queue-clear time.
pub fn sqf_choose(world: &Warehouse, now: u64) -> WorkstationId {
    let clear: Vec<u64> = world
        .workstations
        .iter()
        .map(|w| world.queue_clear_time(w.id, now))
        .collect();
    WorkstationId::from_index(argmin(&clear))
}

/// Workstation with the smallest workload.
pub fn wlb_choose(world: &Warehouse) -> WorkstationId {
    let loads: Vec<u64> = world.workstations.iter().map(|w| w.workload).collect();
    WorkstationId::from_index(argmin(&loads))
}

pub fn random_choose(world: &Warehouse, rng: &mut impl Rng) -> WorkstationId {
    WorkstationId::from_index(rng.gen_range(0..world.workstations.len()))
}

/// Takes from shelves holding any demanded item, in random order, until the
/// demand is covered.
pub fn random_plan(
    world: &Warehouse,
    demand: &ItemVector,
    rng: &mut impl Rng,
) -> Option<Vec<(ShelfId, ItemVector)>> {
    let mut shelves: Vec<ShelfId> = world
        .shelves
        .iter()
        .filter(|s| s.inventory.overlap(demand).unwrap_or(0) > 0)
        .map(|s| s.id)
        .collect();
    shelves.shuffle(rng);
    let mut remaining = demand.clone();
    let mut plan = Vec::new();
    for s in shelves {
        if remaining.is_zero() {
            break;
        }
        let (taken, _, rest) = world.shelves[s.index()].inventory.partial_take(&remaining).ok()?;
        if !taken.is_zero() {
            plan.push((s, taken));
            remaining = rest;
        }
    }
    remaining.is_zero().then_some(plan)
}

pub fn target_pos(world: &Warehouse, target: Target) -> Pos {
    match target {
        Target::Workstation(w) => world.workstations[w.index()].pos,
        Target::Location(l) => world.locations[l.index()].pos,
    }
}

fn robot_pos(world: &Warehouse, r: RobotId) -> Pos {
    world.robots[r.index()].pos
}

/// Additive logit bias of target `i`: shelf heat for pick-up targets,
/// workload for workstations, distance for return locations.
pub fn target_bias(sim: &Simulation, d: &Decision, i: usize, epsilon: f64) -> f64 {
    let world = sim.world();
    match d.targets[i] {
        Target::Workstation(w) => phase_bias(Phase::Delivery, world.workload(w) as f64, epsilon),
        Target::Location(l) => match d.kind {
            DecisionKind::Idle => {
                let heat = world.locations[l.index()]
                    .occupant
                    .map(|s| world.soft.shelf_heat(s))
                    .unwrap_or(0.0);
                phase_bias(Phase::Pickup, heat.max(0.0), epsilon)
            }
            _ => {
                let dist = robot_pos(world, d.robot).manhattan(world.locations[l.index()].pos);
                phase_bias(Phase::Return, dist as f64, epsilon)
            }
        },
    }
}

/// Closest preferred target; ties to the lower index.
pub fn nearest(sim: &Simulation, d: &Decision) -> usize {
    let world = sim.world();
    let from = robot_pos(world, d.robot);
    d.preferred()
        .into_iter()
        .min_by_key(|&i| (from.manhattan(target_pos(world, d.targets[i])), i))
        .expect("decisions always have a valid target")
}

/// Earliest arrival among the orders a target would serve.
fn earliest_key(sim: &Simulation, d: &Decision, i: usize) -> u64 {
    let world = sim.world();
    let arrival = |o: OrderId| sim.orders()[o.index()].arrival;
    match d.targets[i] {
        Target::Location(l) => {
            let Some(s) = world.locations[l.index()].occupant else {
                return u64::MAX;
            };
            let shelf = &world.shelves[s.index()];
            shelf
                .tasks
                .iter()
                .map(|t| arrival(t.order))
                .chain(world.soft.soft_set(s).iter().map(|&o| arrival(o)))
                .min()
                .unwrap_or(u64::MAX)
        }
        Target::Workstation(w) => {
            let Some(s) = world.robots[d.robot.index()].shelf else {
                return u64::MAX;
            };
            let shelf = &world.shelves[s.index()];
            let bound = shelf.tasks_for(w).map(|t| arrival(t.order));
            let unbound = shelf.picklist.iter().flat_map(|p| p.orders()).map(arrival);
            bound.chain(unbound).min().unwrap_or(u64::MAX)
        }
    }
}

/// Serves the earliest-arrived order; puts shelves back at the nearest spot.
pub fn earliest(sim: &Simulation, d: &Decision) -> usize {
    if d.phase == Phase::Return {
        return nearest(sim, d);
    }
    let world = sim.world();
    let from = robot_pos(world, d.robot);
    d.preferred()
        .into_iter()
        .min_by_key(|&i| {
            (
                earliest_key(sim, d, i),
                from.manhattan(target_pos(world, d.targets[i])),
                i,
            )
        })
        .expect("decisions always have a valid target")
}

/// Highest phase bias among preferred targets; ties to the lower index.
pub fn bias_only(sim: &Simulation, d: &Decision) -> usize {
    let eps = sim.config().epsilon;
    let mut best: Option<(f64, usize)> = None;
    for i in d.preferred() {
        let b = target_bias(sim, d, i, eps);
        if best.is_none_or(|(bb, _)| b > bb) {
            best = Some((b, i));
        }
    }
    best.expect("decisions always have a valid target").1
}

/// Most pick-up candidates considered by one tour.
pub const TSP_MAX_STOPS: usize = 20;

/// First valid leg of a closed tour over the robot's pending stops.
pub fn tsp(sim: &Simulation, d: &Decision) -> usize {
    if d.phase == Phase::Return {
        return nearest(sim, d);
    }
    let world = sim.world();
    let from = robot_pos(world, d.robot);
    let preferred = d.preferred();
    // (position, action index if the stop is itself a valid first leg)
    let mut stops: Vec<(Pos, Option<usize>)> = Vec::new();
    match d.kind {
        DecisionKind::Idle => {
            let mut cands: Vec<usize> = preferred
                .iter()
                .copied()
                .filter(|&i| d.relevant[i])
                .collect();
            cands.sort_by_key(|&i| (from.manhattan(target_pos(world, d.targets[i])), i));
            cands.truncate(TSP_MAX_STOPS);
            let mut bound: Vec<WorkstationId> = Vec::new();
            for &i in &cands {
                stops.push((target_pos(world, d.targets[i]), Some(i)));
                if let Target::Location(l) = d.targets[i] {
                    if let Some(s) = world.locations[l.index()].occupant {
                        bound.extend(world.shelves[s.index()].tasks.iter().map(|t| t.workstation));
                    }
                }
            }
            bound.sort();
            bound.dedup();
            stops.extend(bound.into_iter().map(|w| (world.workstations[w.index()].pos, None)));
        }
        DecisionKind::Pickup | DecisionKind::Delivery => {
            if let Some(s) = world.robots[d.robot.index()].shelf {
                for &i in &preferred {
                    if let Target::Workstation(w) = d.targets[i] {
                        if world.shelves[s.index()].tasks_for(w).next().is_some() {
                            stops.push((world.workstations[w.index()].pos, Some(i)));
                        }
                    }
                }
            }
        }
    }
    if stops.is_empty() {
        return nearest(sim, d);
    }
    let positions: Vec<Pos> = stops.iter().map(|s| s.0).collect();
    let (_, order) = tsp::plan_tour(from, &positions);
    order
        .into_iter()
        .find_map(|k| stops[k].1)
        .unwrap_or_else(|| nearest(sim, d))
}

/// A scheduler with its own random stream.
#[derive(Clone, Debug)]
pub struct Scheduler {
    pub kind: SchedulerKind,
    rng: ChaCha8Rng,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Self { kind, rng }
    }

    pub fn choose(&mut self, sim: &Simulation, d: &Decision) -> usize {
        match self.kind {
            SchedulerKind::Nearest => nearest(sim, d),
            SchedulerKind::Earliest => earliest(sim, d),
            SchedulerKind::Tsp => tsp(sim, d),
            SchedulerKind::Bias => bias_only(sim, d),
            SchedulerKind::Random => random_index(&d.mask, &mut self.rng),
        }
    }
}

/// Uniform draw over the true entries of `mask`.
pub fn random_index(mask: &[bool], rng: &mut impl Rng) -> usize {
    let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    valid[rng.gen_range(0..valid.len())]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_examples() {
        assert_eq!(argmin(&[10, 4, 7]), 1);
        assert_eq!(argmin(&[3, 3, 3]), 0);
        assert_eq!(argmin(&[9]), 0);
        assert_eq!(argmin(&[5, 2, 9]), 1);
        assert_eq!(argmin(&[0, 0, 0]), 0);
    }

    #[test]
    fn names_round_trip() {
        for a in AllocatorKind::ALL {
            assert_eq!(a.to_string().parse::<AllocatorKind>().unwrap(), a);
        }
        for s in SchedulerKind::ALL {
            assert_eq!(s.to_string().parse::<SchedulerKind>().unwrap(), s);
        }
        assert!("fifo".parse::<SchedulerKind>().is_err());
    }

    #[test]
    fn random_index_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(random_index(&[false, true, false], &mut rng), 1);
        let a = random_index(&[true; 4], &mut ChaCha8Rng::seed_from_u64(3));
        let b = random_index(&[true; 4], &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn random_index_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0u32; 4];
        for _ in 0..n {
            counts[random_index(&[true; 4], &mut rng)] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9% quantile of chi-square with 3 degrees of freedom.
        assert!(chi2 < 16.27, "chi2={chi2}");
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma);
        }
    }
}
