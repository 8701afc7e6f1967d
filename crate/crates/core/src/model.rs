//! Warehouse domain entities, grid distances and integer inventory arithmetic.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Simulation time in whole seconds.
pub type SimTime = u64;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }

            #[inline]
            pub fn from_index(index: usize) -> Self {
                Self(index as u32)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Shelf identifier, dense from zero.
    ShelfId,
    "s"
);
id_type!(
    /// Storage location identifier, dense from zero.
    LocationId,
    "l"
);
id_type!(
    /// Workstation identifier, dense from zero.
    WorkstationId,
    "w"
);
id_type!(
    /// Robot identifier, dense from zero.
    RobotId,
    "r"
);
id_type!(
    /// Order identifier. Ids follow arrival order.
    OrderId,
    "o"
);

/// A grid cell coordinate. `x` is the column, `y` the row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    /// Manhattan distance without bounds checking.
    #[inline]
    pub fn manhattan(self, other: Pos) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Aisle,
    Storage,
    Workstation,
}

/// `height × width` grid with a classification per cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    height: u32,
    width: u32,
    cells: Vec<CellKind>,
}

impl GridMap {
    pub fn new(height: u32, width: u32) -> Result<Self, ModelError> {
        if height == 0 || width == 0 {
            return Err(ModelError::EmptyGrid { height, width });
        }
        Ok(Self {
            height,
            width,
            cells: vec![CellKind::Aisle; height as usize * width as usize],
        })
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn contains(&self, pos: Pos) -> bool {
        pos.x >= 0 && pos.y >= 0 && (pos.x as u32) < self.width && (pos.y as u32) < self.height
    }

    fn offset(&self, pos: Pos) -> Result<usize, ModelError> {
        if !self.contains(pos) {
            return Err(ModelError::OutOfBounds {
                pos,
                height: self.height,
                width: self.width,
            });
        }
        Ok(pos.y as usize * self.width as usize + pos.x as usize)
    }

    pub fn kind(&self, pos: Pos) -> Result<CellKind, ModelError> {
        Ok(self.cells[self.offset(pos)?])
    }

    /// Marks a fixed entity cell. Fails when the cell already holds one.
    pub fn place(&mut self, pos: Pos, kind: CellKind) -> Result<(), ModelError> {
        let at = self.offset(pos)?;
        if self.cells[at] != CellKind::Aisle {
            return Err(ModelError::CellOccupied { pos });
        }
        self.cells[at] = kind;
        Ok(())
    }

    /// Checked Manhattan distance in cells.
    pub fn dist(&self, a: Pos, b: Pos) -> Result<u32, ModelError> {
        self.offset(a)?;
        self.offset(b)?;
        Ok(a.manhattan(b))
    }
}

/// Non-negative quantity per item type.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ItemVector(Vec<u32>);

impl ItemVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn from_vec(quantities: Vec<u32>) -> Self {
        Self(quantities)
    }

    /// Builds a dense vector from `(item, quantity)` pairs. Repeated items accumulate.
    pub fn from_sparse(len: usize, entries: &[(u32, u32)]) -> Result<Self, ModelError> {
        let mut v = Self::zeros(len);
        for &(item, qty) in entries {
            let slot = v.0.get_mut(item as usize).ok_or(ModelError::UnknownItem {
                item,
                num_items: len,
            })?;
            *slot += qty;
        }
        Ok(v)
    }

    /// Non-zero entries in ascending item order.
    pub fn to_sparse(&self) -> Vec<(u32, u32)> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, q)| **q > 0)
            .map(|(i, q)| (i as u32, *q))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, item: usize) -> u32 {
        self.0[item]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&q| q as u64).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&q| q == 0)
    }

    fn check_len(&self, other: &ItemVector) -> Result<(), ModelError> {
        if self.len() != other.len() {
            return Err(ModelError::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }

    /// True iff every demanded quantity is available.
    pub fn can_fulfill(&self, demand: &ItemVector) -> Result<bool, ModelError> {
        self.check_len(demand)?;
        Ok(self.0.iter().zip(&demand.0).all(|(q, d)| q >= d))
    }

    /// `self − demand`; refuses to clamp.
    pub fn subtract_demand(&self, demand: &ItemVector) -> Result<ItemVector, ModelError> {
        self.check_len(demand)?;
        let mut out = Vec::with_capacity(self.len());
        for (item, (&q, &d)) in self.0.iter().zip(&demand.0).enumerate() {
            if d > q {
                return Err(ModelError::InsufficientInventory {
                    item,
                    available: q,
                    required: d,
                });
            }
            out.push(q - d);
        }
        Ok(ItemVector(out))
    }

    /// Componentwise `min(demand, self)` taken from both sides.
    ///
    /// Returns `(taken, inventory', demand')`.
    pub fn partial_take(
        &self,
        demand: &ItemVector,
    ) -> Result<(ItemVector, ItemVector, ItemVector), ModelError> {
        self.check_len(demand)?;
        let n = self.len();
        let mut taken = Vec::with_capacity(n);
        let mut inv = Vec::with_capacity(n);
        let mut dem = Vec::with_capacity(n);
        for (&q, &d) in self.0.iter().zip(&demand.0) {
            let a = q.min(d);
            taken.push(a);
            inv.push(q - a);
            dem.push(d - a);
        }
        Ok((ItemVector(taken), ItemVector(inv), ItemVector(dem)))
    }

    /// `Σ_i min(demand[i], self[i])`, the retrievable quantity.
    pub fn overlap(&self, demand: &ItemVector) -> Result<u64, ModelError> {
        self.check_len(demand)?;
        Ok(self
            .0
            .iter()
            .zip(&demand.0)
            .map(|(&q, &d)| q.min(d) as u64)
            .sum())
    }

    pub fn add_assign(&mut self, other: &ItemVector) -> Result<(), ModelError> {
        self.check_len(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &ItemVector) -> Result<(), ModelError> {
        *self = self.subtract_demand(other)?;
        Ok(())
    }
}

impl From<Vec<u32>> for ItemVector {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

/// An order as it arrives: time plus demand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Order {
    pub id: OrderId,
    pub arrival: SimTime,
    pub demand: ItemVector,
}

impl Order {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.demand.is_zero() {
            return Err(ModelError::EmptyDemand { order: self.id });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RobotStatus {
    Idle,
    MovingToPick,
    MovingToWs,
    Queued,
    MovingToReturn,
}

impl RobotStatus {
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        match self {
            RobotStatus::Idle => 0,
            RobotStatus::MovingToPick => 1,
            RobotStatus::MovingToWs => 2,
            RobotStatus::Queued => 3,
            RobotStatus::MovingToReturn => 4,
        }
    }

    /// Whether a robot in this status carries a shelf.
    pub fn is_loaded(self) -> bool {
        !matches!(self, RobotStatus::Idle | RobotStatus::MovingToPick)
    }
}

/// Where a shelf physically is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShelfPlace {
    Stored(LocationId),
    Carried(RobotId),
}

#[derive(Clone, Debug)]
pub struct StorageLocation {
    pub id: LocationId,
    pub pos: Pos,
    pub occupant: Option<ShelfId>,
    /// Robot that targets this location for a pick-up or a return.
    pub reserved_by: Option<RobotId>,
}

impl StorageLocation {
    pub fn is_free_target(&self) -> bool {
        self.reserved_by.is_none()
    }
}

/// A transport obligation: pick `items` of `order` from `shelf` at `workstation`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub shelf: ShelfId,
    pub workstation: WorkstationId,
    pub order: OrderId,
    pub items: ItemVector,
    /// True when the reservation came from the shelf's own soft orders set.
    pub from_soft_set: bool,
}

#[derive(Clone, Debug)]
pub struct Shelf {
    pub id: ShelfId,
    pub place: ShelfPlace,
    /// Unreserved stock. Reserved items live in `tasks` and `picklist`.
    pub inventory: ItemVector,
    pub tasks: Vec<Task>,
    /// Orders reserved on this shelf at pick-up, waiting for a workstation.
    pub picklist: Option<crate::finalizer::PickList>,
}

impl Shelf {
    pub fn has_pending_work(&self) -> bool {
        !self.tasks.is_empty() || self.picklist.is_some()
    }

    pub fn tasks_for(&self, w: WorkstationId) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(move |t| t.workstation == w)
    }
}

/// A picking job queued at a workstation.
#[derive(Clone, Debug)]
pub struct Job {
    pub robot: RobotId,
    pub shelf: ShelfId,
    pub tasks: Vec<Task>,
    pub items: u64,
    pub start: SimTime,
    pub finish: SimTime,
}

#[derive(Clone, Debug)]
pub struct Workstation {
    pub id: WorkstationId,
    pub pos: Pos,
    /// FIFO of jobs; the head is being processed when `start <= now`.
    pub queue: std::collections::VecDeque<Job>,
    pub busy_until: SimTime,
    /// Unprocessed item quantity bound to this workstation.
    pub workload: u64,
}

#[derive(Clone, Debug)]
pub struct Robot {
    pub id: RobotId,
    pub pos: Pos,
    pub shelf: Option<ShelfId>,
    pub status: RobotStatus,
    /// Where the robot is heading, when moving.
    pub heading: Option<Pos>,
    pub eta: SimTime,
    /// Completion time of the latest committed activity.
    pub active_time: SimTime,
    pub travel: u64,
    pub sleeping: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> GridMap {
        GridMap::new(10, 10).unwrap()
    }

    #[test]
    fn manhattan_examples() {
        let g = grid();
        assert_eq!(g.dist(Pos::new(0, 0), Pos::new(0, 0)).unwrap(), 0);
        assert_eq!(g.dist(Pos::new(0, 0), Pos::new(3, 4)).unwrap(), 7);
        assert_eq!(g.dist(Pos::new(2, 5), Pos::new(2, 1)).unwrap(), 4);
    }

    #[test]
    fn out_of_bounds_is_an_error() {
        let g = grid();
        assert!(matches!(
            g.dist(Pos::new(-1, 0), Pos::new(0, 0)),
            Err(ModelError::OutOfBounds { .. })
        ));
        assert!(g.dist(Pos::new(0, 0), Pos::new(10, 0)).is_err());
        assert!(GridMap::new(0, 3).is_err());
    }

    #[test]
    fn fixed_entities_cannot_share_a_cell() {
        let mut g = grid();
        g.place(Pos::new(1, 1), CellKind::Storage).unwrap();
        assert!(g.place(Pos::new(1, 1), CellKind::Workstation).is_err());
        assert_eq!(g.kind(Pos::new(1, 1)).unwrap(), CellKind::Storage);
    }

    #[test]
    fn can_fulfill_examples() {
        let v = ItemVector::from;
        assert!(v(vec![0, 0]).can_fulfill(&v(vec![0, 0])).unwrap());
        assert!(!v(vec![1, 3]).can_fulfill(&v(vec![2, 1])).unwrap());
        assert!(v(vec![2, 1]).can_fulfill(&v(vec![2, 1])).unwrap());
        assert!(v(vec![2]).can_fulfill(&v(vec![2, 1])).is_err());
    }

    #[test]
    fn subtract_demand_examples() {
        let v = ItemVector::from;
        assert_eq!(v(vec![5, 2]).subtract_demand(&v(vec![0, 0])).unwrap(), v(vec![5, 2]));
        assert_eq!(v(vec![5, 2]).subtract_demand(&v(vec![3, 2])).unwrap(), v(vec![2, 0]));
        assert!(matches!(
            v(vec![1, 1]).subtract_demand(&v(vec![2, 0])),
            Err(ModelError::InsufficientInventory { item: 0, .. })
        ));
    }

    #[test]
    fn partial_take_examples() {
        let v = ItemVector::from;
        let (t, i, d) = v(vec![2]).partial_take(&v(vec![3])).unwrap();
        assert_eq!((t, i, d), (v(vec![2]), v(vec![0]), v(vec![1])));
        let (t, i, d) = v(vec![0, 4]).partial_take(&v(vec![1, 0])).unwrap();
        assert_eq!((t, i, d), (v(vec![0, 0]), v(vec![0, 4]), v(vec![1, 0])));
        let (t, i, d) = v(vec![3, 3]).partial_take(&v(vec![3, 3])).unwrap();
        assert_eq!((t, i, d), (v(vec![3, 3]), v(vec![0, 0]), v(vec![0, 0])));
        assert!(v(vec![1]).partial_take(&v(vec![1, 1])).is_err());
    }

    #[test]
    fn sparse_round_trip() {
        let v = ItemVector::from_sparse(5, &[(1, 2), (4, 1), (1, 1)]).unwrap();
        assert_eq!(v.as_slice(), &[0, 3, 0, 0, 1]);
        assert_eq!(v.to_sparse(), vec![(1, 3), (4, 1)]);
        assert!(ItemVector::from_sparse(2, &[(2, 1)]).is_err());
    }

    proptest! {
        #[test]
        fn manhattan_is_a_metric(ax in 0..50i32, ay in 0..50i32, bx in 0..50i32, by in 0..50i32, cx in 0..50i32, cy in 0..50i32) {
            let g = GridMap::new(50, 50).unwrap();
            let (a, b, c) = (Pos::new(ax, ay), Pos::new(bx, by), Pos::new(cx, cy));
            prop_assert_eq!(g.dist(a, b).unwrap(), g.dist(b, a).unwrap());
            prop_assert!(g.dist(a, c).unwrap() <= g.dist(a, b).unwrap() + g.dist(b, c).unwrap());
        }

        #[test]
        fn partial_take_is_reversible(pairs in prop::collection::vec((0u32..20, 0u32..20), 1..12)) {
            let inv = ItemVector::from(pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let dem = ItemVector::from(pairs.iter().map(|p| p.1).collect::<Vec<_>>());
            let (taken, mut inv2, mut dem2) = inv.partial_take(&dem).unwrap();
            inv2.add_assign(&taken).unwrap();
            dem2.add_assign(&taken).unwrap();
            prop_assert_eq!(inv2, inv);
            prop_assert_eq!(dem2, dem);
        }
    }
}
