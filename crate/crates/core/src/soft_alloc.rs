//! Soft order allocation: matching degrees, Top-K candidate filtering, heat
//! accumulation and exact retraction.
//!
//! Heats are accumulated in 64.64 fixed point so that any interleaving of
//! arrivals and retractions yields exactly the same bits as the equivalent
//! sequence of arrivals alone. Reads convert to `f64`.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{AllocError, ModelError};
use crate::model::{ItemVector, Order, OrderId, Pos, ShelfId, WorkstationId};

/// Division guard for matching degrees.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Default candidate set size per workstation.
pub const DEFAULT_K: usize = 10;

const FIXED_SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64

#[inline]
fn to_fixed(v: f64) -> i128 {
    (v * FIXED_SCALE).round() as i128
}

#[inline]
fn from_fixed(raw: i128) -> f64 {
    raw as f64 / FIXED_SCALE
}

/// `Σ_i min(d[i], q[i]) / (distance + ε)`.
pub fn matching_degree(
    demand: &ItemVector,
    inventory: &ItemVector,
    distance: u32,
    epsilon: f64,
) -> Result<f64, ModelError> {
    let overlap = inventory.overlap(demand)?;
    Ok(score(overlap, distance, epsilon))
}

#[inline]
fn score(overlap: u64, distance: u32, epsilon: f64) -> f64 {
    if overlap == 0 {
        0.0
    } else {
        overlap as f64 / (distance as f64 + epsilon)
    }
}

/// Read-only view of a shelf for matching purposes.
#[derive(Clone, Copy, Debug)]
pub struct ShelfView<'a> {
    pub inventory: &'a ItemVector,
    pub pos: Pos,
}

/// Dense `N_s × N_w` matrix of matching degrees, row-major by shelf.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchMatrix {
    num_workstations: usize,
    values: Vec<f64>,
}

impl MatchMatrix {
    pub fn get(&self, shelf: usize, workstation: usize) -> f64 {
        self.values[shelf * self.num_workstations + workstation]
    }

    pub fn num_shelves(&self) -> usize {
        if self.num_workstations == 0 {
            0
        } else {
            self.values.len() / self.num_workstations
        }
    }

    pub fn column(&self, workstation: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(workstation)
            .step_by(self.num_workstations.max(1))
            .copied()
            .collect()
    }
}

pub fn build_matching_matrix(
    demand: &ItemVector,
    shelves: &[ShelfView<'_>],
    workstations: &[Pos],
    epsilon: f64,
) -> Result<MatchMatrix, ModelError> {
    let nw = workstations.len();
    let mut values = vec![0.0; shelves.len() * nw];
    for (s, shelf) in shelves.iter().enumerate() {
        let overlap = shelf.inventory.overlap(demand)?;
        if overlap == 0 {
            continue;
        }
        for (w, wpos) in workstations.iter().enumerate() {
            values[s * nw + w] = score(overlap, shelf.pos.manhattan(*wpos), epsilon);
        }
    }
    Ok(MatchMatrix {
        num_workstations: nw,
        values,
    })
}

/// Indices of the `k` largest strictly positive scores, descending, ties to
/// the lower index.
pub fn topk_candidates(column: &[f64], k: usize) -> Vec<usize> {
    let mut positive: Vec<usize> = (0..column.len()).filter(|&i| column[i] > 0.0).collect();
    let cmp = |a: &usize, b: &usize| column[*b].total_cmp(&column[*a]).then(a.cmp(b));
    if positive.len() > k && k > 0 {
        positive.select_nth_unstable_by(k - 1, cmp);
        positive.truncate(k);
    }
    positive.sort_unstable_by(cmp);
    positive.truncate(k);
    positive
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub shelf: ShelfId,
    pub score: f64,
    fixed: i128,
}

/// Everything one order added to the soft state, kept so it can be removed
/// exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderSoftRecord {
    pub order: OrderId,
    /// Candidate shelves per workstation, best first.
    pub candidates: Vec<Vec<Candidate>>,
    /// Union of all candidate sets, ascending.
    pub union: Vec<ShelfId>,
}

impl OrderSoftRecord {
    pub fn is_empty(&self) -> bool {
        self.union.is_empty()
    }

    /// Matching score of `shelf` at `w`, if it made the top K there.
    pub fn degree(&self, shelf: ShelfId, w: WorkstationId) -> Option<f64> {
        self.candidates[w.index()]
            .iter()
            .find(|c| c.shelf == shelf)
            .map(|c| c.score)
    }
}

/// Heat vectors, soft orders sets and the per-order records behind them.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAllocState {
    shelf_heat: Vec<i128>,
    ws_heat: Vec<i128>,
    soft_sets: Vec<BTreeSet<OrderId>>,
    records: BTreeMap<OrderId, OrderSoftRecord>,
}

impl SoftAllocState {
    pub fn new(num_shelves: usize, num_workstations: usize) -> Self {
        Self {
            shelf_heat: vec![0; num_shelves],
            ws_heat: vec![0; num_workstations],
            soft_sets: vec![BTreeSet::new(); num_shelves],
            records: BTreeMap::new(),
        }
    }

    pub fn shelf_heat(&self, s: ShelfId) -> f64 {
        from_fixed(self.shelf_heat[s.index()])
    }

    pub fn ws_heat(&self, w: WorkstationId) -> f64 {
        from_fixed(self.ws_heat[w.index()])
    }

    pub fn shelf_heats(&self) -> Vec<f64> {
        self.shelf_heat.iter().map(|&h| from_fixed(h)).collect()
    }

    pub fn ws_heats(&self) -> Vec<f64> {
        self.ws_heat.iter().map(|&h| from_fixed(h)).collect()
    }

    pub fn soft_set(&self, s: ShelfId) -> &BTreeSet<OrderId> {
        &self.soft_sets[s.index()]
    }

    pub fn record(&self, o: OrderId) -> Option<&OrderSoftRecord> {
        self.records.get(&o)
    }

    pub fn records(&self) -> impl Iterator<Item = &OrderSoftRecord> {
        self.records.values()
    }

    pub fn live_orders(&self) -> usize {
        self.records.len()
    }

    /// Runs matching, Top-K filtering and the three accumulation updates for
    /// a newly arrived order.
    pub fn apply_arrival(
        &mut self,
        order: &Order,
        shelves: &[ShelfView<'_>],
        workstations: &[Pos],
        k: usize,
        epsilon: f64,
    ) -> Result<&OrderSoftRecord, AllocError> {
        if k == 0 {
            return Err(AllocError::ZeroK);
        }
        if self.records.contains_key(&order.id) {
            return Err(AllocError::DuplicateOrder(order.id));
        }
        let matrix = build_matching_matrix(&order.demand, shelves, workstations, epsilon)?;
        let mut candidates = Vec::with_capacity(workstations.len());
        let mut union = BTreeSet::new();
        for w in 0..workstations.len() {
            let column = matrix.column(w);
            let picked: Vec<Candidate> = topk_candidates(&column, k)
                .into_iter()
                .map(|s| Candidate {
                    shelf: ShelfId::from_index(s),
                    score: column[s],
                    fixed: to_fixed(column[s]),
                })
                .collect();
            union.extend(picked.iter().map(|c| c.shelf));
            candidates.push(picked);
        }
        let record = OrderSoftRecord {
            order: order.id,
            candidates,
            union: union.into_iter().collect(),
        };
        for &s in &record.union {
            self.soft_sets[s.index()].insert(order.id);
        }
        for (w, cands) in record.candidates.iter().enumerate() {
            for c in cands {
                self.shelf_heat[c.shelf.index()] += c.fixed;
                self.ws_heat[w] += c.fixed;
            }
        }
        Ok(self.records.entry(order.id).or_insert(record))
    }

    /// Removes every trace of `order` from the soft state.
    pub fn retract_order(&mut self, order: OrderId) -> Result<OrderSoftRecord, AllocError> {
        let record = self
            .records
            .remove(&order)
            .ok_or(AllocError::UnknownRecord(order))?;
        for &s in &record.union {
            self.soft_sets[s.index()].remove(&order);
        }
        for (w, cands) in record.candidates.iter().enumerate() {
            for c in cands {
                self.shelf_heat[c.shelf.index()] -= c.fixed;
                self.ws_heat[w] -= c.fixed;
            }
        }
        Ok(record)
    }
}
