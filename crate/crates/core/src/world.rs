//! Mutable warehouse state: entities plus the soft allocation context.

use std::collections::VecDeque;

use crate::datagen::Dataset;
use crate::error::{AllocError, ModelError, SimError};
use crate::model::{
    GridMap, ItemVector, LocationId, Order, Pos, Robot, RobotId, RobotStatus, Shelf, ShelfId, ShelfPlace,
    SimTime, StorageLocation, Workstation, WorkstationId,
};
use crate::soft_alloc::{OrderSoftRecord, ShelfView, SoftAllocState};

#[derive(Clone, Debug)]
pub struct Warehouse {
    pub grid: GridMap,
    pub num_items: usize,
    pub c_item: u64,
    pub c_shelf: u64,
    pub locations: Vec<StorageLocation>,
    pub workstations: Vec<Workstation>,
    pub shelves: Vec<Shelf>,
    pub robots: Vec<Robot>,
    pub soft: SoftAllocState,
    pub initial_total: ItemVector,
    /// Items already picked at workstations.
    pub picked: ItemVector,
}

impl Warehouse {
    pub fn from_dataset(ds: &Dataset) -> Result<Self, SimError> {
        let grid = ds.validate()?;
        let mut locations: Vec<StorageLocation> = ds
            .locations
            .iter()
            .enumerate()
            .map(|(i, &pos)| StorageLocation {
                id: LocationId::from_index(i),
                pos,
                occupant: None,
                reserved_by: None,
            })
            .collect();
        let shelves: Vec<Shelf> = ds
            .shelves
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let id = ShelfId::from_index(i);
                locations[spec.location.index()].occupant = Some(id);
                Shelf {
                    id,
                    place: ShelfPlace::Stored(spec.location),
                    inventory: spec.inventory.clone(),
                    tasks: Vec::new(),
                    picklist: None,
                }
            })
            .collect();
        let workstations = ds
            .workstations
            .iter()
            .enumerate()
            .map(|(i, &pos)| Workstation {
                id: WorkstationId::from_index(i),
                pos,
                queue: VecDeque::new(),
                busy_until: 0,
                workload: 0,
            })
            .collect();
        let robots = ds
            .robots
            .iter()
            .enumerate()
            .map(|(i, &pos)| Robot {
                id: RobotId::from_index(i),
                pos,
                shelf: None,
                status: RobotStatus::Idle,
                heading: None,
                eta: 0,
                active_time: 0,
                travel: 0,
                sleeping: false,
            })
            .collect();
        Ok(Self {
            grid,
            num_items: ds.num_items,
            c_item: ds.c_item,
            c_shelf: ds.c_shelf,
            soft: SoftAllocState::new(ds.shelves.len(), ds.workstations.len()),
            initial_total: ds.total_inventory(),
            picked: ItemVector::zeros(ds.num_items),
            locations,
            workstations,
            shelves,
            robots,
        })
    }

    /// Current position of a shelf: its storage location or its carrier.
    pub fn shelf_pos(&self, s: ShelfId) -> Pos {
        match self.shelves[s.index()].place {
            ShelfPlace::Stored(l) => self.locations[l.index()].pos,
            ShelfPlace::Carried(r) => self.robots[r.index()].pos,
        }
    }

    pub fn shelf_views(&self) -> Vec<ShelfView<'_>> {
        self.shelves
            .iter()
            .map(|s| ShelfView {
                inventory: &s.inventory,
                pos: self.shelf_pos(s.id),
            })
            .collect()
    }

    /// Runs the soft allocation arrival update against current stock.
    pub fn soft_arrival(
        &mut self,
        order: &Order,
        k: usize,
        epsilon: f64,
    ) -> Result<&OrderSoftRecord, AllocError> {
        let positions: Vec<Pos> = self.shelves.iter().map(|s| self.shelf_pos(s.id)).collect();
        let wpos = self.ws_positions();
        let views: Vec<ShelfView<'_>> = self
            .shelves
            .iter()
            .zip(&positions)
            .map(|(s, &pos)| ShelfView {
                inventory: &s.inventory,
                pos,
            })
            .collect();
        self.soft.apply_arrival(order, &views, &wpos, k, epsilon)
    }

    pub fn ws_positions(&self) -> Vec<Pos> {
        self.workstations.iter().map(|w| w.pos).collect()
    }

    /// Unreserved stock summed over all shelves.
    pub fn unreserved_total(&self) -> ItemVector {
        let mut total = ItemVector::zeros(self.num_items);
        for s in &self.shelves {
            total.add_assign(&s.inventory).expect("uniform lengths");
        }
        total
    }

    /// `num_items × C_item + C_shelf`.
    pub fn processing_time(&self, items: u64) -> SimTime {
        processing_time(items, self.c_item, self.c_shelf)
    }

    /// Unprocessed item quantity bound to `w`.
    pub fn workload(&self, w: WorkstationId) -> u64 {
        self.workstations[w.index()].workload
    }

    /// Number of unprocessed tasks bound to `w`, wherever their shelf is.
    pub fn tasks_bound_to(&self, w: WorkstationId) -> usize {
        let waiting: usize = self.shelves.iter().map(|s| s.tasks_for(w).count()).sum();
        let queued: usize = self.workstations[w.index()]
            .queue
            .iter()
            .map(|j| j.tasks.len())
            .sum();
        waiting + queued
    }

    /// Time until `w` finishes everything queued or heading to it.
    pub fn queue_clear_time(&self, w: WorkstationId, now: SimTime) -> SimTime {
        let ws = &self.workstations[w.index()];
        let mut t = ws.busy_until.saturating_sub(now);
        for r in &self.robots {
            if r.status != RobotStatus::MovingToWs || r.heading != Some(ws.pos) {
                continue;
            }
            if let Some(s) = r.shelf {
                let items: u64 = self.shelves[s.index()]
                    .tasks_for(w)
                    .map(|t| t.items.total())
                    .sum();
                t += self.processing_time(items);
            }
        }
        t
    }

    /// Sum of every place an item can be: unreserved stock, reservations,
    /// queued jobs and picked items.
    pub fn accounted_total(&self) -> ItemVector {
        let mut total = self.picked.clone();
        for s in &self.shelves {
            total.add_assign(&s.inventory).expect("uniform lengths");
            for t in &s.tasks {
                total.add_assign(&t.items).expect("uniform lengths");
            }
            if let Some(p) = &s.picklist {
                for (_, items) in &p.entries {
                    total.add_assign(items).expect("uniform lengths");
                }
            }
        }
        for w in &self.workstations {
            for job in &w.queue {
                for t in &job.tasks {
                    total.add_assign(&t.items).expect("uniform lengths");
                }
            }
        }
        total
    }

    /// Checks item conservation and the placement invariants.
    pub fn check_invariants(&self) -> Result<(), SimError> {
        if self.accounted_total() != self.initial_total {
            return Err(SimError::Invariant("item conservation violated".into()));
        }
        for s in &self.shelves {
            match s.place {
                ShelfPlace::Stored(l) => {
                    if self.locations[l.index()].occupant != Some(s.id) {
                        return Err(SimError::Invariant(format!("{} not at {l}", s.id)));
                    }
                }
                ShelfPlace::Carried(r) => {
                    if self.robots[r.index()].shelf != Some(s.id) {
                        return Err(SimError::Invariant(format!("{} not on {r}", s.id)));
                    }
                }
            }
        }
        for r in &self.robots {
            if r.shelf.is_some() != r.status.is_loaded() {
                return Err(SimError::Invariant(format!("{} status/load mismatch", r.id)));
            }
        }
        Ok(())
    }

    pub fn dist(&self, a: Pos, b: Pos) -> Result<u32, ModelError> {
        self.grid.dist(a, b)
    }
}

/// `num_items × C_item + C_shelf`.
pub fn processing_time(items: u64, c_item: u64, c_shelf: u64) -> SimTime {
    items * c_item + c_shelf
}
