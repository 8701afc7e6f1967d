//! Turning soft allocations into reservations at pick-up and delivery, and
//! the greedy default allocation used by the non-soft allocators.

use crate::error::AllocError;
use crate::model::{ItemVector, Order, OrderId, Pos, ShelfId, ShelfPlace, Task, WorkstationId};
use crate::soft_alloc::matching_degree;
use crate::world::Warehouse;

/// Orders reserved on a lifted shelf before its workstation is chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PickList {
    pub shelf: ShelfId,
    pub workstation: Option<WorkstationId>,
    /// Fully satisfiable orders and the items reserved for them.
    pub entries: Vec<(OrderId, ItemVector)>,
    /// Orders this shelf could not fully satisfy; allocated at delivery.
    pub remainder: Vec<OrderId>,
}

impl PickList {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.remainder.is_empty()
    }

    pub fn orders(&self) -> impl Iterator<Item = OrderId> + '_ {
        self.entries.iter().map(|e| e.0).chain(self.remainder.iter().copied())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PickupOutcome {
    pub feasible: Vec<OrderId>,
    pub remainder: Vec<OrderId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeliveryOutcome {
    /// Pick-list entries now bound to the chosen workstation.
    pub bound: Vec<Task>,
    /// Reservations made on other shelves for remainder orders.
    pub tasks: Vec<Task>,
    /// Remainder orders that could not be covered at all.
    pub infeasible: Vec<OrderId>,
    /// Remainder orders that needed stock left on the lifted shelf itself.
    pub used_lifted_shelf: Vec<OrderId>,
}

/// Resolves the soft orders set of a shelf that was just lifted.
///
/// Orders are visited in id order; each one the shelf can fully serve is
/// reserved on the pick-list, the rest go to the remainder. Every visited
/// order is retracted from the soft state.
pub fn finalize_pickup(
    wh: &mut Warehouse,
    shelf: ShelfId,
    orders: &[Order],
) -> Result<PickupOutcome, AllocError> {
    if !matches!(wh.shelves[shelf.index()].place, ShelfPlace::Carried(_)) {
        return Err(AllocError::ShelfNotCarried(shelf));
    }
    let soft_orders: Vec<OrderId> = wh.soft.soft_set(shelf).iter().copied().collect();
    let mut outcome = PickupOutcome::default();
    let mut entries = Vec::new();
    for o in soft_orders {
        let demand = &orders[o.index()].demand;
        let s = &mut wh.shelves[shelf.index()];
        if s.inventory.can_fulfill(demand)? {
            s.inventory.sub_assign(demand)?;
            entries.push((o, demand.clone()));
            outcome.feasible.push(o);
        } else {
            outcome.remainder.push(o);
        }
        wh.soft.retract_order(o)?;
    }
    let list = PickList {
        shelf,
        workstation: None,
        entries,
        remainder: outcome.remainder.clone(),
    };
    if !list.is_empty() {
        let s = &mut wh.shelves[shelf.index()];
        match &mut s.picklist {
            // A shelf lifted again before delivering keeps a single list.
            Some(existing) => {
                existing.entries.extend(list.entries);
                existing.remainder.extend(list.remainder);
            }
            None => s.picklist = Some(list),
        }
    }
    Ok(outcome)
}

/// Binds the pick-list of `shelf` to `w` and covers its remainder orders
/// from the other shelves, best live matching degree at `w` first.
///
/// A remainder order that the other shelves cannot cover also draws on the
/// lifted shelf's residual stock; only if that fails is it flagged.
pub fn finalize_delivery(
    wh: &mut Warehouse,
    shelf: ShelfId,
    w: WorkstationId,
    orders: &[Order],
    epsilon: f64,
) -> Result<DeliveryOutcome, AllocError> {
    let mut out = DeliveryOutcome::default();
    let Some(list) = wh.shelves[shelf.index()].picklist.take() else {
        return Ok(out);
    };
    for (order, items) in list.entries {
        let task = Task {
            shelf,
            workstation: w,
            order,
            items,
            from_soft_set: true,
        };
        wh.workstations[w.index()].workload += task.items.total();
        wh.shelves[shelf.index()].tasks.push(task.clone());
        out.bound.push(task);
    }
    let wpos = wh.workstations[w.index()].pos;
    let mut remainder = list.remainder;
    remainder.sort();
    for o in remainder {
        let demand = &orders[o.index()].demand;
        let plan = match plan_ranked(wh, demand, wpos, Some(shelf), epsilon) {
            Some(plan) => plan,
            None => match plan_ranked(wh, demand, wpos, None, epsilon) {
                Some(plan) => {
                    out.used_lifted_shelf.push(o);
                    plan
                }
                None => {
                    out.infeasible.push(o);
                    continue;
                }
            },
        };
        out.tasks.extend(commit_plan(wh, o, w, plan, false)?);
    }
    Ok(out)
}

/// Ranks shelves once by live matching degree at `wpos` and takes greedily.
/// Returns `None` when the candidates cannot cover `demand`.
pub fn plan_ranked(
    wh: &Warehouse,
    demand: &ItemVector,
    wpos: Pos,
    exclude: Option<ShelfId>,
    epsilon: f64,
) -> Option<Vec<(ShelfId, ItemVector)>> {
    let mut ranked: Vec<(f64, ShelfId)> = wh
        .shelves
        .iter()
        .filter(|s| Some(s.id) != exclude)
        .filter_map(|s| {
            let d = wh.shelf_pos(s.id).manhattan(wpos);
            let v = matching_degree(demand, &s.inventory, d, epsilon).ok()?;
            (v > 0.0).then_some((v, s.id))
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut remaining = demand.clone();
    let mut plan = Vec::new();
    for (_, s) in ranked {
        if remaining.is_zero() {
            break;
        }
        let (taken, _, rest) = wh.shelves[s.index()]
            .inventory
            .partial_take(&remaining)
            .ok()?;
        if !taken.is_zero() {
            plan.push((s, taken));
            remaining = rest;
        }
    }
    remaining.is_zero().then_some(plan)
}

/// Greedy allocation: repeatedly take from the shelf with the highest
/// matching degree at `wpos`, recomputed against the remaining demand.
///
/// `inventories` and `positions` describe the candidate shelves; the
/// inventories are updated in place.
pub fn plan_default(
    demand: &ItemVector,
    inventories: &mut [ItemVector],
    positions: &[Pos],
    wpos: Pos,
    epsilon: f64,
) -> Result<Vec<(ShelfId, ItemVector)>, AllocError> {
    let mut remaining = demand.clone();
    let mut plan = Vec::new();
    while !remaining.is_zero() {
        let mut best: Option<(f64, usize)> = None;
        for (s, inv) in inventories.iter().enumerate() {
            let v = matching_degree(&remaining, inv, positions[s].manhattan(wpos), epsilon)?;
            if v > 0.0 && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, s));
            }
        }
        let Some((_, s)) = best else {
            return Err(AllocError::Infeasible {
                order: OrderId(u32::MAX),
            });
        };
        let (taken, inv, rest) = inventories[s].partial_take(&remaining)?;
        inventories[s] = inv;
        remaining = rest;
        plan.push((ShelfId::from_index(s), taken));
    }
    Ok(plan)
}

/// Plans and commits the greedy default allocation of `order` to `w`.
pub fn default_allocate(
    wh: &mut Warehouse,
    order: &Order,
    w: WorkstationId,
    epsilon: f64,
) -> Result<Vec<Task>, AllocError> {
    let mut inventories: Vec<ItemVector> = wh.shelves.iter().map(|s| s.inventory.clone()).collect();
    let positions: Vec<Pos> = wh.shelves.iter().map(|s| wh.shelf_pos(s.id)).collect();
    let wpos = wh.workstations[w.index()].pos;
    let plan = plan_default(&order.demand, &mut inventories, &positions, wpos, epsilon)
        .map_err(|e| match e {
            AllocError::Infeasible { .. } => AllocError::Infeasible { order: order.id },
            other => other,
        })?;
    commit_plan(wh, order.id, w, plan, false)
}

/// Moves planned quantities from shelf stock into tasks bound to `w`.
pub fn commit_plan(
    wh: &mut Warehouse,
    order: OrderId,
    w: WorkstationId,
    plan: Vec<(ShelfId, ItemVector)>,
    from_soft_set: bool,
) -> Result<Vec<Task>, AllocError> {
    let mut tasks = Vec::with_capacity(plan.len());
    for (s, items) in plan {
        wh.shelves[s.index()].inventory.sub_assign(&items)?;
        wh.workstations[w.index()].workload += items.total();
        let task = Task {
            shelf: s,
            workstation: w,
            order,
            items,
            from_soft_set,
        };
        wh.shelves[s.index()].tasks.push(task.clone());
        tasks.push(task);
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Dataset, ShelfSpec};
    use crate::model::{LocationId, RobotId, RobotStatus};
    use crate::soft_alloc::DEFAULT_EPSILON;

    fn iv(v: &[u32]) -> ItemVector {
        ItemVector::from(v.to_vec())
    }

    /// One workstation at (0,0); shelves on row 1 at the given columns.
    fn warehouse(shelves: &[(i32, &[u32])]) -> Warehouse {
        let n = shelves[0].1.len();
        let ds = Dataset {
            name: "t".into(),
            height: 4,
            width: 12,
            num_items: n,
            c_item: 4,
            c_shelf: 10,
            locations: shelves.iter().map(|s| Pos::new(s.0, 1)).chain([Pos::new(11, 3)]).collect(),
            workstations: vec![Pos::new(0, 0)],
            shelves: shelves
                .iter()
                .enumerate()
                .map(|(i, s)| ShelfSpec {
                    location: LocationId::from_index(i),
                    inventory: iv(s.1),
                })
                .collect(),
            robots: vec![Pos::new(0, 2)],
            orders: vec![],
        };
        Warehouse::from_dataset(&ds).unwrap()
    }

    fn order(id: u32, d: &[u32]) -> Order {
        Order {
            id: OrderId(id),
            arrival: 0,
            demand: iv(d),
        }
    }

    fn lift(wh: &mut Warehouse, s: usize) {
        let l = match wh.shelves[s].place {
            ShelfPlace::Stored(l) => l,
            _ => unreachable!(),
        };
        wh.locations[l.index()].occupant = None;
        wh.shelves[s].place = ShelfPlace::Carried(RobotId(0));
        wh.robots[0].shelf = Some(ShelfId::from_index(s));
        wh.robots[0].status = RobotStatus::MovingToWs;
    }

    #[test]
    fn pickup_visits_orders_in_id_order() {
        let mut wh = warehouse(&[(1, &[3])]);
        let orders = vec![order(0, &[1]), order(1, &[3])];
        for o in &orders {
            wh.soft_arrival(o, 10, DEFAULT_EPSILON).unwrap();
        }
        lift(&mut wh, 0);
        let out = finalize_pickup(&mut wh, ShelfId(0), &orders).unwrap();
        assert_eq!(out.feasible, vec![OrderId(0)]);
        assert_eq!(out.remainder, vec![OrderId(1)]);
        assert_eq!(wh.shelves[0].inventory, iv(&[2]));
        assert_eq!(wh.soft.live_orders(), 0);
        assert_eq!(wh.soft.shelf_heat(ShelfId(0)), 0.0);
        assert_eq!(wh.soft.ws_heat(WorkstationId(0)), 0.0);
    }

    #[test]
    fn pickup_with_empty_soft_set_changes_nothing() {
        let mut wh = warehouse(&[(1, &[3])]);
        lift(&mut wh, 0);
        let out = finalize_pickup(&mut wh, ShelfId(0), &[]).unwrap();
        assert_eq!(out, PickupOutcome::default());
        assert_eq!(wh.shelves[0].inventory, iv(&[3]));
        assert!(wh.shelves[0].picklist.is_none());
    }

    #[test]
    fn pickup_requires_a_carried_shelf() {
        let mut wh = warehouse(&[(1, &[3])]);
        assert_eq!(
            finalize_pickup(&mut wh, ShelfId(0), &[]),
            Err(AllocError::ShelfNotCarried(ShelfId(0)))
        );
    }

    #[test]
    fn remainder_takes_best_shelves_first() {
        // s0 is the lifted shelf; s1 is closer to the workstation than s2.
        let mut wh = warehouse(&[(5, &[0]), (1, &[2]), (3, &[5])]);
        lift(&mut wh, 0);
        wh.shelves[0].picklist = Some(PickList {
            shelf: ShelfId(0),
            workstation: None,
            entries: vec![],
            remainder: vec![OrderId(0)],
        });
        let orders = vec![order(0, &[3])];
        let out = finalize_delivery(&mut wh, ShelfId(0), WorkstationId(0), &orders, DEFAULT_EPSILON).unwrap();
        let got: Vec<_> = out.tasks.iter().map(|t| (t.shelf, t.items.clone())).collect();
        assert_eq!(got, vec![(ShelfId(1), iv(&[2])), (ShelfId(2), iv(&[1]))]);
        assert_eq!(wh.workload(WorkstationId(0)), 3);
        assert!(out.infeasible.is_empty());
    }

    #[test]
    fn remainder_orders_compete_in_id_order() {
        let mut wh = warehouse(&[(5, &[0]), (1, &[1]), (3, &[1])]);
        lift(&mut wh, 0);
        wh.shelves[0].picklist = Some(PickList {
            shelf: ShelfId(0),
            workstation: None,
            entries: vec![],
            remainder: vec![OrderId(1), OrderId(0)],
        });
        let orders = vec![order(0, &[1]), order(1, &[1])];
        let out = finalize_delivery(&mut wh, ShelfId(0), WorkstationId(0), &orders, DEFAULT_EPSILON).unwrap();
        let got: Vec<_> = out.tasks.iter().map(|t| (t.order, t.shelf)).collect();
        assert_eq!(got, vec![(OrderId(0), ShelfId(1)), (OrderId(1), ShelfId(2))]);
    }

    #[test]
    fn delivery_without_picklist_binds_nothing() {
        let mut wh = warehouse(&[(1, &[3])]);
        lift(&mut wh, 0);
        let out = finalize_delivery(&mut wh, ShelfId(0), WorkstationId(0), &[], DEFAULT_EPSILON).unwrap();
        assert_eq!(out, DeliveryOutcome::default());
    }

    #[test]
    fn picklist_entries_bind_to_the_chosen_workstation() {
        let mut wh = warehouse(&[(1, &[3])]);
        lift(&mut wh, 0);
        wh.shelves[0].inventory = iv(&[1]);
        wh.shelves[0].picklist = Some(PickList {
            shelf: ShelfId(0),
            workstation: None,
            entries: vec![(OrderId(0), iv(&[2]))],
            remainder: vec![],
        });
        let out = finalize_delivery(&mut wh, ShelfId(0), WorkstationId(0), &[order(0, &[2])], DEFAULT_EPSILON).unwrap();
        assert_eq!(out.bound.len(), 1);
        assert_eq!(wh.shelves[0].tasks.len(), 1);
        assert_eq!(wh.workload(WorkstationId(0)), 2);
    }

    #[test]
    fn uncoverable_remainder_is_flagged() {
        let mut wh = warehouse(&[(5, &[1]), (1, &[1])]);
        lift(&mut wh, 0);
        wh.shelves[0].picklist = Some(PickList {
            shelf: ShelfId(0),
            workstation: None,
            entries: vec![],
            remainder: vec![OrderId(0), OrderId(1)],
        });
        let orders = vec![order(0, &[2]), order(1, &[1])];
        let out = finalize_delivery(&mut wh, ShelfId(0), WorkstationId(0), &orders, DEFAULT_EPSILON).unwrap();
        // o0 needs both units, so it draws on the lifted shelf; o1 is left with nothing.
        assert_eq!(out.used_lifted_shelf, vec![OrderId(0)]);
        assert_eq!(out.infeasible, vec![OrderId(1)]);
    }

    #[test]
    fn default_allocation_hand_trace() {
        // s0 at distance 1 holds 2, s1 at distance 2 holds 5.
        let inv = &mut [iv(&[2]), iv(&[5])];
        let pos = [Pos::new(1, 0), Pos::new(2, 0)];
        let plan = plan_default(&iv(&[3]), inv, &pos, Pos::new(0, 0), DEFAULT_EPSILON).unwrap();
        assert_eq!(plan, vec![(ShelfId(0), iv(&[2])), (ShelfId(1), iv(&[1]))]);
        assert_eq!(inv[0], iv(&[0]));
        assert_eq!(inv[1], iv(&[4]));
    }

    #[test]
    fn default_allocation_single_shelf() {
        let plan = plan_default(&iv(&[1]), &mut [iv(&[1])], &[Pos::new(0, 1)], Pos::new(0, 0), DEFAULT_EPSILON).unwrap();
        assert_eq!(plan, vec![(ShelfId(0), iv(&[1]))]);
    }

    #[test]
    fn default_allocation_reports_infeasible_orders() {
        let mut wh = warehouse(&[(1, &[1, 0])]);
        let err = default_allocate(&mut wh, &order(4, &[0, 1]), WorkstationId(0), DEFAULT_EPSILON);
        assert_eq!(err, Err(AllocError::Infeasible { order: OrderId(4) }));
    }

    #[test]
    fn default_allocation_sums_to_demand() {
        let mut wh = warehouse(&[(1, &[1, 2, 0]), (3, &[4, 0, 1]), (7, &[0, 3, 3])]);
        let o = order(0, &[3, 4, 2]);
        let tasks = default_allocate(&mut wh, &o, WorkstationId(0), DEFAULT_EPSILON).unwrap();
        let mut sum = ItemVector::zeros(3);
        for t in &tasks {
            sum.add_assign(&t.items).unwrap();
        }
        assert_eq!(sum, o.demand);
        assert_eq!(wh.workload(WorkstationId(0)), 9);
        assert_eq!(wh.accounted_total(), wh.initial_total);
    }
}
