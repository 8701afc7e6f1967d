mod common;

use common::dataset;
use rmfs_core::datagen::{gen_instance, ScenarioConfig};
use rmfs_core::env::{Env, EnvConfig};
use rmfs_core::model::{LocationId, Order, OrderId, RobotId, ShelfId, WorkstationId};
use rmfs_core::obs::{
    location_node, observe, prune_entities, robot_node, workstation_node, LocationStatus, NodeType,
    Observation, PruneConfig,
};
use rmfs_core::sim::{DecisionKind, Simulation};
use rmfs_core::world::Warehouse;
use rmfs_core::{AllocatorKind, Scheduler, SchedulerKind, SimConfig};

fn soft(seed: u64) -> SimConfig {
    SimConfig::with_allocator(AllocatorKind::Soft, seed)
}

#[test]
fn unloaded_robot_has_no_folded_shelf() {
    let ds = gen_instance(&ScenarioConfig::micro(0)).unwrap();
    let wh = Warehouse::from_dataset(&ds).unwrap();
    let n = robot_node(&wh, RobotId(0));
    assert_eq!((n.tasks, n.heat, n.soft, n.status), (0, 0.0, 0, 0));
}

#[test]
fn location_folds_its_shelf() {
    let ds = dataset(
        (10, 6),
        &[(0, 0)],
        &[(0, 1)],
        &[(3, 3), (6, 3)],
        &[&[2, 1], &[0, 1]],
        &[],
    );
    let mut wh = Warehouse::from_dataset(&ds).unwrap();
    for (i, d) in [[1u32, 0], [1, 1]].iter().enumerate() {
        let o = Order {
            id: OrderId::from_index(i),
            arrival: 0,
            demand: d.to_vec().into(),
        };
        wh.soft_arrival(&o, 10, 1e-6).unwrap();
    }
    let empty = Order {
        id: OrderId(9),
        arrival: 0,
        demand: vec![1u32, 0].into(),
    };
    rmfs_core::finalizer::default_allocate(&mut wh, &empty, WorkstationId(0), 1e-6).unwrap();
    let n = location_node(&wh, LocationId(0), wh.robots[0].pos);
    assert_eq!(n.tasks, 1);
    assert_eq!(n.soft, 2);
    assert_eq!(n.heat, wh.soft.shelf_heat(ShelfId(0)));
    assert!(n.heat > 0.0);
    assert_eq!(n.status, LocationStatus::Occupied.index());
    assert_eq!(n.dist, 5.0 / 16.0);
    assert_eq!((n.x, n.y), (0.3, 0.5));
    let w = workstation_node(&wh, WorkstationId(0), wh.robots[0].pos, 0);
    assert_eq!(w.workload, 1);
    assert_eq!(w.cost, 0);
    assert_eq!(w.tasks, 1);
}

#[test]
fn smallest_graph_has_six_relations_and_three_phase_edges() {
    let ds = dataset((6, 6), &[(0, 0)], &[(0, 1)], &[(3, 3)], &[&[2]], &[(0, &[1])]);
    let mut sim = Simulation::new(&ds, soft(0)).unwrap();
    let d = sim.start().unwrap().unwrap().clone();
    let obs = observe(&sim, &d, None);
    assert_eq!(obs.num_entities(), 3);
    assert_eq!(obs.num_phase_edges(), 3);
    let total: usize = obs.edges.iter().map(|e| e.len()).sum();
    assert_eq!(total, 6);
    let names: Vec<String> = obs.edges.iter().map(|e| e.relation()).collect();
    assert_eq!(names, ["rw", "wr", "rl", "lr", "wl", "lw"]);
    assert_eq!(obs.edges[0].dist, obs.edges[1].dist);
    assert_eq!(obs.kind, DecisionKind::Idle);
    // Workstation candidates are masked out for a pick-up choice.
    assert_eq!(obs.mask, vec![false, true]);
    assert_eq!(obs.actions, vec![None, Some(0)]);
}

#[test]
fn reverse_edges_mirror_forward_edges() {
    let ds = gen_instance(&ScenarioConfig::micro(2)).unwrap();
    let mut sim = Simulation::new(&ds, soft(2)).unwrap();
    let d = sim.start().unwrap().unwrap().clone();
    let obs = observe(&sim, &d, None);
    for pair in obs.edges.chunks(2) {
        let (f, b) = (&pair[0], &pair[1]);
        assert_eq!((f.src_type, f.dst_type), (b.dst_type, b.src_type));
        assert_eq!(f.src, b.dst);
        assert_eq!(f.dst, b.src);
        assert_eq!(f.dist, b.dist);
        assert_ne!(f.src_type, f.dst_type);
    }
    assert!(obs.edges.iter().any(|e| e.src_type == NodeType::Robot));
}

#[test]
fn pruning_keeps_the_hottest_shelf_and_all_empties() {
    let ds = dataset(
        (12, 6),
        &[(0, 0)],
        &[(0, 1), (11, 5), (10, 5)],
        &[(4, 3), (6, 3), (8, 3), (2, 3)],
        &[&[1], &[3], &[2]],
        &[],
    );
    let mut wh = Warehouse::from_dataset(&ds).unwrap();
    let o = Order {
        id: OrderId(0),
        arrival: 0,
        demand: vec![3u32].into(),
    };
    wh.soft_arrival(&o, 10, 1e-6).unwrap();
    let heats = wh.soft.shelf_heats();
    assert!(heats[1] > heats[2] && heats[2] > heats[0]);
    let keep = prune_entities(&wh, RobotId(2), Some(PruneConfig { k1: 1, k2: 1 }));
    assert_eq!(keep.locations, vec![LocationId(1), LocationId(3)]);
    // The deciding robot stays even though robot 0 sorts first.
    assert_eq!(keep.robots, vec![RobotId(2)]);
    let keep = prune_entities(&wh, RobotId(1), Some(PruneConfig { k1: 2, k2: 5 }));
    assert_eq!(keep.robots, vec![RobotId(1), RobotId(2)]);
    assert_eq!(keep.locations.len(), 4);
    let keep = prune_entities(&wh, RobotId(0), Some(PruneConfig { k1: 10, k2: 10 }));
    assert_eq!(keep.robots.len(), 3);
}

fn drive_observing(seed: u64, prune: Option<PruneConfig>, f: &mut impl FnMut(&Simulation, &Observation)) {
    let ds = gen_instance(&ScenarioConfig::scaled_small(seed)).unwrap();
    let mut sim = Simulation::new(&ds, soft(seed)).unwrap();
    let mut sched = Scheduler::new(SchedulerKind::Bias, seed);
    sim.start().unwrap();
    while let Some(d) = sim.pending() {
        let d = d.clone();
        let obs = observe(&sim, &d, prune);
        f(&sim, &obs);
        let a = sched.choose(&sim, &d);
        sim.step(a).unwrap();
    }
}

#[test]
fn pruned_graphs_respect_the_size_bound_and_keep_a_valid_action() {
    let prune = PruneConfig { k1: 2, k2: 3 };
    drive_observing(3, Some(prune), &mut |sim, obs| {
        let world = sim.world();
        let empties = world.locations.iter().filter(|l| l.occupant.is_none()).count();
        assert!(obs.num_nodes() <= prune.k1 + prune.k2 + empties + world.workstations.len() + 1);
        assert!(obs.robots.len() <= prune.k1);
        assert!(obs.mask.iter().any(|&m| m));
        assert_eq!(obs.robots[obs.robot].id, sim.pending().unwrap().robot);
        assert_eq!(obs.mask.len(), obs.num_candidates());
        // Pruning never hides all work that the full action space offers.
        let d = sim.pending().unwrap();
        if d.relevant.iter().zip(&d.mask).any(|(r, m)| *r && *m) {
            assert!(obs.relevant.iter().zip(&obs.mask).any(|(r, m)| *r && *m));
        }
    });
}

#[test]
fn candidates_align_with_graph_nodes() {
    drive_observing(4, None, &mut |sim, obs| {
        let d = sim.pending().unwrap();
        let nw = obs.workstations.len();
        for (i, a) in obs.actions.iter().enumerate() {
            let Some(a) = a else { continue };
            match d.targets[*a] {
                rmfs_core::sim::Target::Workstation(w) => assert_eq!(obs.workstations[i].id, w),
                rmfs_core::sim::Target::Location(l) => assert_eq!(obs.locations[i - nw].id, l),
            }
            assert_eq!(obs.mask[i], d.mask[*a]);
        }
        let valid = obs.mask.iter().filter(|&&m| m).count();
        assert_eq!(valid, d.mask.iter().filter(|&&m| m).count());
    });
}

#[test]
fn extraction_is_pure_and_round_trips() {
    drive_observing(5, Some(PruneConfig::default()), &mut |sim, obs| {
        let d = sim.pending().unwrap();
        assert_eq!(&observe(sim, d, Some(PruneConfig::default())), obs);
        let text = serde_json::to_string(obs).unwrap();
        let back: Observation = serde_json::from_str(&text).unwrap();
        assert_eq!(&back, obs);
    });
}

#[test]
fn value_features_track_the_episode() {
    let ds = dataset(
        (10, 6),
        &[(0, 0)],
        &[(0, 1)],
        &[(3, 3), (6, 3), (8, 3)],
        &[&[2, 0], &[0, 2]],
        &[(0, &[1, 0]), (0, &[1, 1])],
    );
    let mut sim = Simulation::new(&ds, soft(0)).unwrap();
    let mut sched = Scheduler::new(SchedulerKind::Nearest, 0);
    let d = sim.start().unwrap().unwrap().clone();
    let v = observe(&sim, &d, None).value;
    assert_eq!((v.remaining_orders, v.completed_soft_orders, v.completed_tasks), (2, 0, 0));
    let mut last = v;
    while let Some(d) = sim.pending() {
        let d = d.clone();
        let a = sched.choose(&sim, &d);
        sim.step(a).unwrap();
        let v = sim.value_counts();
        assert!(v.completed_soft_orders >= last.completed_soft_orders);
        assert!(v.completed_tasks >= last.completed_tasks);
        last = v;
    }
    // Order 0 fits on shelf 0. Order 1 is split into remainder tasks on
    // the residue of shelf 0 and on shelf 1.
    assert_eq!(last.remaining_orders, 0);
    assert_eq!(last.completed_soft_orders, 1);
    assert_eq!(last.completed_tasks, 2);
}

#[test]
fn env_rewards_telescope_without_discount() {
    let ds = gen_instance(&ScenarioConfig::micro(7)).unwrap();
    let mut cfg = soft(7);
    cfg.shaping.gamma = 1.0;
    cfg.shaping.literal_discount = true;
    let (mut env, first) = Env::reset(&ds, EnvConfig { sim: cfg, prune: None }).unwrap();
    let phi0 = env.simulation().potential();
    let mut total = first.reward;
    while let Some(obs) = env.observation() {
        let i = (0..obs.mask.len())
            .find(|&i| obs.mask[i] && obs.relevant[i])
            .or_else(|| obs.mask.iter().position(|&m| m))
            .unwrap();
        let t = env.step(i).unwrap();
        total += t.reward;
    }
    let phi_t = env.simulation().potential();
    assert!((total - (phi0 - phi_t)).abs() < 1e-6, "{total} vs {}", phi0 - phi_t);
}

#[test]
fn env_rejects_masked_and_unknown_candidates() {
    let ds = gen_instance(&ScenarioConfig::micro(1)).unwrap();
    let (mut env, _) = Env::reset(&ds, EnvConfig { sim: soft(1), prune: None }).unwrap();
    let obs = env.observation().unwrap().clone();
    let masked = obs.mask.iter().position(|m| !m).unwrap();
    assert!(env.step(masked).is_err());
    assert!(env.step(obs.mask.len()).is_err());
    assert_eq!(env.observation(), Some(&obs));
}

#[test]
fn empty_order_stream_is_done_immediately() {
    let ds = dataset((6, 6), &[(0, 0)], &[(0, 1)], &[(3, 3)], &[&[2]], &[]);
    let (env, first) = Env::reset(&ds, EnvConfig { sim: soft(0), prune: None }).unwrap();
    assert!(first.done);
    assert!(env.is_done());
    assert_eq!(env.metrics().orders, 0);
}

