#![allow(dead_code)]

use rmfs_core::datagen::{Dataset, ShelfSpec};
use rmfs_core::model::{ItemVector, LocationId, Order, OrderId, Pos};

pub fn iv(v: &[u32]) -> ItemVector {
    ItemVector::from(v.to_vec())
}

/// A hand-built instance. `shelves[i]` sits on `locations[i]`; extra
/// locations start empty. Orders are `(arrival, demand)` in arrival order.
pub fn dataset(
    size: (u32, u32),
    workstations: &[(i32, i32)],
    robots: &[(i32, i32)],
    locations: &[(i32, i32)],
    shelves: &[&[u32]],
    orders: &[(u64, &[u32])],
) -> Dataset {
    let num_items = shelves.first().map_or(0, |s| s.len());
    Dataset {
        name: "hand".into(),
        height: size.1,
        width: size.0,
        num_items,
        c_item: 1,
        c_shelf: 2,
        locations: locations.iter().map(|&(x, y)| Pos::new(x, y)).collect(),
        workstations: workstations.iter().map(|&(x, y)| Pos::new(x, y)).collect(),
        shelves: shelves
            .iter()
            .enumerate()
            .map(|(i, s)| ShelfSpec {
                location: LocationId::from_index(i),
                inventory: iv(s),
            })
            .collect(),
        robots: robots.iter().map(|&(x, y)| Pos::new(x, y)).collect(),
        orders: orders
            .iter()
            .enumerate()
            .map(|(i, (t, d))| Order {
                id: OrderId::from_index(i),
                arrival: *t,
                demand: iv(d),
            })
            .collect(),
    }
}
