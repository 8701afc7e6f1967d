//! Synthetic scenario generation and the on-disk dataset format.
//!
//! A dataset file is line-delimited JSON. The first line is a header record,
//! followed by one record per location, workstation, shelf, robot and order,
//! in that order and with dense ids:
//!
//! ```text
//! {"header":{"format":"rmfs-dataset","version":1,"name":"synth-small-s7",...}}
//! {"location":{"id":0,"x":0,"y":2}}
//! {"workstation":{"id":0,"x":1,"y":0}}
//! {"shelf":{"id":0,"location":17,"items":[[3,5],[9,4]]}}
//! {"robot":{"id":0,"x":2,"y":1}}
//! {"order":{"id":0,"arrival":0,"items":[[3,1]]}}
//! ```
//!
//! Item lists are sparse `[item, quantity]` pairs in ascending item order.
//! Saving a loaded file reproduces it byte for byte.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DatasetError;
use crate::model::{CellKind, GridMap, ItemVector, LocationId, Order, OrderId, Pos, SimTime};

pub const FORMAT_NAME: &str = "rmfs-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Small,
    Medium,
    Large,
}

impl Scale {
    pub fn robots(self) -> usize {
        match self {
            Scale::Small => 15,
            Scale::Medium => 20,
            Scale::Large => 25,
        }
    }

    pub fn orders(self) -> usize {
        match self {
            Scale::Small => 200,
            Scale::Medium => 500,
            Scale::Large => 1000,
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(Scale::Small),
            "medium" => Ok(Scale::Medium),
            "large" => Ok(Scale::Large),
            other => Err(format!("unknown scale `{other}`")),
        }
    }
}

/// Everything needed to generate one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub height: u32,
    pub width: u32,
    pub num_shelves: usize,
    pub num_workstations: usize,
    pub num_robots: usize,
    pub num_orders: usize,
    pub num_items: usize,
    pub c_shelf: u64,
    pub c_item: u64,
    pub wave_size: usize,
    pub wave_interval: SimTime,
    pub alpha: f64,
    pub max_lines: u32,
    pub max_qty: u32,
    /// Distinct item types stocked per shelf.
    pub items_per_shelf: usize,
    /// Upper truncation for the per-item shelf stock draw.
    pub shelf_qty_max: u32,
    /// Spare storage locations, as a fraction of the shelf count.
    pub empty_ratio: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    fn base(name: &str, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            height: 100,
            width: 80,
            num_shelves: 1600,
            num_workstations: 23,
            num_robots: 15,
            num_orders: 200,
            num_items: 200,
            c_shelf: 10,
            c_item: 4,
            wave_size: 50,
            wave_interval: 60,
            alpha: 2.0,
            max_lines: 4,
            max_qty: 4,
            items_per_shelf: 8,
            shelf_qty_max: 12,
            empty_ratio: 0.1,
            seed,
        }
    }

    /// 100×80 grid, 1600 shelves, 23 workstations.
    pub fn synth(scale: Scale, seed: u64) -> Self {
        Self {
            num_robots: scale.robots(),
            num_orders: scale.orders(),
            ..Self::base(&format!("synth-{}", scale_name(scale)), seed)
        }
    }

    /// Real-shaped layout: 40×72 grid, 861 shelves, 16 workstations.
    pub fn real(scale: Scale, seed: u64) -> Self {
        Self {
            height: 40,
            width: 72,
            num_shelves: 861,
            num_workstations: 16,
            c_shelf: 5,
            c_item: 2,
            num_robots: scale.robots(),
            num_orders: scale.orders(),
            ..Self::base(&format!("real-{}", scale_name(scale)), seed)
        }
    }

    /// Reduced Synth-Small: 20×16 grid, 80 shelves, 4 workstations, 5 robots, 50 orders.
    pub fn scaled_small(seed: u64) -> Self {
        Self {
            height: 20,
            width: 16,
            num_shelves: 80,
            num_workstations: 4,
            num_robots: 5,
            num_orders: 50,
            num_items: 50,
            items_per_shelf: 6,
            ..Self::base("scaled-small", seed)
        }
    }

    /// 10×8 grid, 2 robots, 20 orders.
    pub fn micro(seed: u64) -> Self {
        Self {
            height: 10,
            width: 8,
            num_shelves: 20,
            num_workstations: 2,
            num_robots: 2,
            num_orders: 20,
            num_items: 12,
            items_per_shelf: 4,
            ..Self::base("micro", seed)
        }
    }

    pub fn preset(scenario: &str, scale: Scale, seed: u64) -> Option<Self> {
        match scenario {
            "synth" => Some(Self::synth(scale, seed)),
            "real" => Some(Self::real(scale, seed)),
            "scaled" => Some(Self::scaled_small(seed)),
            "micro" => Some(Self::micro(seed)),
            _ => None,
        }
    }
}

fn scale_name(scale: Scale) -> &'static str {
    match scale {
        Scale::Small => "small",
        Scale::Medium => "medium",
        Scale::Large => "large",
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShelfSpec {
    pub location: LocationId,
    pub inventory: ItemVector,
}

/// A complete problem instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub height: u32,
    pub width: u32,
    pub num_items: usize,
    pub c_item: u64,
    pub c_shelf: u64,
    pub locations: Vec<Pos>,
    pub workstations: Vec<Pos>,
    pub shelves: Vec<ShelfSpec>,
    pub robots: Vec<Pos>,
    pub orders: Vec<Order>,
}

impl Dataset {
    /// Checks the structural rules the simulator relies on.
    pub fn validate(&self) -> Result<GridMap, DatasetError> {
        let mut grid = GridMap::new(self.height, self.width)?;
        if self.workstations.is_empty() || self.robots.is_empty() {
            return Err(DatasetError::Invalid(
                "need at least one workstation and one robot".into(),
            ));
        }
        for &p in &self.locations {
            grid.place(p, CellKind::Storage)?;
        }
        for &p in &self.workstations {
            grid.place(p, CellKind::Workstation)?;
        }
        for &p in &self.robots {
            if !grid.contains(p) {
                return Err(DatasetError::Invalid(format!("robot at {p} is off the grid")));
            }
        }
        let mut used = vec![false; self.locations.len()];
        for (i, s) in self.shelves.iter().enumerate() {
            let slot = used.get_mut(s.location.index()).ok_or_else(|| {
                DatasetError::Invalid(format!("shelf {i} references unknown {}", s.location))
            })?;
            if std::mem::replace(slot, true) {
                return Err(DatasetError::Invalid(format!(
                    "two shelves share {}",
                    s.location
                )));
            }
            if s.inventory.len() != self.num_items {
                return Err(DatasetError::Invalid(format!("shelf {i} inventory length")));
            }
        }
        let mut last = 0;
        for (i, o) in self.orders.iter().enumerate() {
            if o.id.index() != i {
                return Err(DatasetError::Invalid(format!("order ids must be dense, got {}", o.id)));
            }
            if o.arrival < last {
                return Err(DatasetError::Invalid("orders must be sorted by arrival".into()));
            }
            last = o.arrival;
            if o.demand.len() != self.num_items {
                return Err(DatasetError::Invalid(format!("order {i} demand length")));
            }
            o.validate()?;
        }
        Ok(grid)
    }

    pub fn total_inventory(&self) -> ItemVector {
        let mut total = ItemVector::zeros(self.num_items);
        for s in &self.shelves {
            total.add_assign(&s.inventory).expect("validated lengths");
        }
        total
    }

    /// Per-item demand summed over all orders.
    pub fn total_demand(&self) -> ItemVector {
        let mut total = ItemVector::zeros(self.num_items);
        for o in &self.orders {
            total.add_assign(&o.demand).expect("validated lengths");
        }
        total
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<(), DatasetError> {
        let mut line = |rec: &Record| -> Result<(), DatasetError> {
            let text = serde_json::to_string(rec).map_err(|e| DatasetError::Invalid(e.to_string()))?;
            writeln!(out, "{text}")?;
            Ok(())
        };
        line(&Record::Header(Header {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            name: self.name.clone(),
            height: self.height,
            width: self.width,
            num_items: self.num_items,
            c_item: self.c_item,
            c_shelf: self.c_shelf,
        }))?;
        for (id, p) in self.locations.iter().enumerate() {
            line(&Record::Location { id: id as u32, x: p.x, y: p.y })?;
        }
        for (id, p) in self.workstations.iter().enumerate() {
            line(&Record::Workstation { id: id as u32, x: p.x, y: p.y })?;
        }
        for (id, s) in self.shelves.iter().enumerate() {
            line(&Record::Shelf {
                id: id as u32,
                location: s.location.0,
                items: s.inventory.to_sparse(),
            })?;
        }
        for (id, p) in self.robots.iter().enumerate() {
            line(&Record::Robot { id: id as u32, x: p.x, y: p.y })?;
        }
        for o in &self.orders {
            line(&Record::Order {
                id: o.id.0,
                arrival: o.arrival,
                items: o.demand.to_sparse(),
            })?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn from_text(text: &str) -> Result<Self, DatasetError> {
        Self::read_from(text.as_bytes())
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self, DatasetError> {
        let mut header: Option<Header> = None;
        let mut ds = Dataset {
            name: String::new(),
            height: 0,
            width: 0,
            num_items: 0,
            c_item: 0,
            c_shelf: 0,
            locations: vec![],
            workstations: vec![],
            shelves: vec![],
            robots: vec![],
            orders: vec![],
        };
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let parse_err = |message: String| DatasetError::Parse { line: lineno, message };
            let expect_id = |id: u32, len: usize, what: &str| {
                if id as usize != len {
                    Err(parse_err(format!("{what} id {id} out of sequence, expected {len}")))
                } else {
                    Ok(())
                }
            };
            match rec {
                Record::Header(h) => {
                    if header.is_some() {
                        return Err(parse_err("duplicate header".into()));
                    }
                    if h.format != FORMAT_NAME {
                        return Err(parse_err(format!("unknown format `{}`", h.format)));
                    }
                    if h.version != FORMAT_VERSION {
                        return Err(DatasetError::Version(h.version));
                    }
                    ds.name = h.name.clone();
                    ds.height = h.height;
                    ds.width = h.width;
                    ds.num_items = h.num_items;
                    ds.c_item = h.c_item;
                    ds.c_shelf = h.c_shelf;
                    header = Some(h);
                }
                _ if header.is_none() => return Err(parse_err("missing header".into())),
                Record::Location { id, x, y } => {
                    expect_id(id, ds.locations.len(), "location")?;
                    ds.locations.push(Pos::new(x, y));
                }
                Record::Workstation { id, x, y } => {
                    expect_id(id, ds.workstations.len(), "workstation")?;
                    ds.workstations.push(Pos::new(x, y));
                }
                Record::Shelf { id, location, items } => {
                    expect_id(id, ds.shelves.len(), "shelf")?;
                    ds.shelves.push(ShelfSpec {
                        location: LocationId(location),
                        inventory: ItemVector::from_sparse(ds.num_items, &items)?,
                    });
                }
                Record::Robot { id, x, y } => {
                    expect_id(id, ds.robots.len(), "robot")?;
                    ds.robots.push(Pos::new(x, y));
                }
                Record::Order { id, arrival, items } => {
                    expect_id(id, ds.orders.len(), "order")?;
                    ds.orders.push(Order {
                        id: OrderId(id),
                        arrival,
                        demand: ItemVector::from_sparse(ds.num_items, &items)?,
                    });
                }
            }
        }
        if header.is_none() {
            return Err(DatasetError::Invalid("empty dataset file".into()));
        }
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    name: String,
    height: u32,
    width: u32,
    num_items: usize,
    c_item: u64,
    c_shelf: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Record {
    Header(Header),
    Location { id: u32, x: i32, y: i32 },
    Workstation { id: u32, x: i32, y: i32 },
    Shelf { id: u32, location: u32, items: Vec<(u32, u32)> },
    Robot { id: u32, x: i32, y: i32 },
    Order { id: u32, arrival: SimTime, items: Vec<(u32, u32)> },
}

/// Arrival time for wave `k` with integer jitter `eps`, clamped at zero.
pub fn arrival_time(wave: u64, jitter: i64, wave_interval: SimTime) -> SimTime {
    (wave as i64 * wave_interval as i64 + jitter).max(0) as SimTime
}

/// Samples an arrival time from the perturbed wave distribution.
pub fn gen_arrival_time(
    num_orders: usize,
    wave_size: usize,
    wave_interval: SimTime,
    rng: &mut impl Rng,
) -> SimTime {
    let waves = num_orders.div_ceil(wave_size.max(1)).max(1) as u64;
    let k = rng.gen_range(0..waves);
    let jitter = rng.gen_range(-3i64..=3);
    arrival_time(k, jitter, wave_interval)
}

/// Inverse-CDF form of the truncated Pareto draw for a given uniform `u ∈ [0,1)`.
pub fn truncated_pareto_from_uniform(u: f64, alpha: f64, max: u32) -> u32 {
    let p = (1.0 - u).powf(-1.0 / alpha) - 1.0;
    let x = (p + 1.0).floor();
    if x >= max as f64 {
        max
    } else {
        (x as u32).max(1)
    }
}

/// `min(⌊Pareto(α) + 1⌋, max)` with the zero-based (Lomax) Pareto.
pub fn truncated_pareto(alpha: f64, max: u32, rng: &mut impl Rng) -> u32 {
    truncated_pareto_from_uniform(rng.gen::<f64>(), alpha, max)
}

/// Storage slots: two storage rows per three-row band starting at row 2,
/// and four storage columns per five-column block. Row 0 holds the
/// workstations and row 1 is an aisle.
fn storage_slots(height: u32, width: u32) -> Vec<Pos> {
    let mut slots = Vec::new();
    for y in 2..height as i32 {
        if (y - 2) % 3 == 2 {
            continue;
        }
        for x in 0..width as i32 {
            if x % 5 == 4 {
                continue;
            }
            slots.push(Pos::new(x, y));
        }
    }
    slots
}

fn spread(i: usize, n: usize, width: u32) -> i32 {
    ((2 * i + 1) * width as usize / (2 * n)) as i32
}

/// Generates a fully seed-determined instance.
pub fn gen_instance(cfg: &ScenarioConfig) -> Result<Dataset, DatasetError> {
    let gen_err = |m: String| DatasetError::Generation(m);
    if cfg.num_workstations == 0 || cfg.num_robots == 0 || cfg.num_items == 0 {
        return Err(gen_err("need workstations, robots and item types".into()));
    }
    if cfg.num_workstations > cfg.width as usize {
        return Err(gen_err("more workstations than border cells".into()));
    }
    if cfg.height < 3 {
        return Err(gen_err("grid too short for a storage area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let spare = ((cfg.num_shelves as f64 * cfg.empty_ratio).ceil() as usize).max(1);
    let num_locations = cfg.num_shelves + spare;
    let slots = storage_slots(cfg.height, cfg.width);
    if slots.len() < num_locations {
        return Err(gen_err(format!(
            "{}x{} grid fits {} storage locations, {} needed",
            cfg.height,
            cfg.width,
            slots.len(),
            num_locations
        )));
    }
    let locations: Vec<Pos> = slots[..num_locations].to_vec();
    let workstations: Vec<Pos> = (0..cfg.num_workstations)
        .map(|i| Pos::new(spread(i, cfg.num_workstations, cfg.width), 0))
        .collect();
    let robots: Vec<Pos> = (0..cfg.num_robots)
        .map(|i| Pos::new(spread(i, cfg.num_robots, cfg.width), 1))
        .collect();

    let mut order_of_locations: Vec<usize> = (0..num_locations).collect();
    order_of_locations.shuffle(&mut rng);

    let per_shelf = cfg.items_per_shelf.clamp(1, cfg.num_items);
    let mut shelves: Vec<ShelfSpec> = Vec::with_capacity(cfg.num_shelves);
    for &loc in order_of_locations.iter().take(cfg.num_shelves) {
        let mut inv = ItemVector::zeros(cfg.num_items);
        let mut dense = inv.as_slice().to_vec();
        for item in sample(&mut rng, cfg.num_items, per_shelf).into_iter() {
            dense[item] = cfg.max_qty.saturating_sub(1)
                + truncated_pareto(cfg.alpha, cfg.shelf_qty_max, &mut rng);
        }
        inv = ItemVector::from(dense);
        shelves.push(ShelfSpec {
            location: LocationId::from_index(loc),
            inventory: inv,
        });
    }
    // Top-up: every item type is stocked somewhere.
    if !shelves.is_empty() {
        let mut stocked = vec![false; cfg.num_items];
        for s in &shelves {
            for (i, &q) in s.inventory.as_slice().iter().enumerate() {
                stocked[i] |= q > 0;
            }
        }
        for (item, ok) in stocked.iter().enumerate() {
            if !ok {
                let s = rng.gen_range(0..shelves.len());
                let mut dense = shelves[s].inventory.as_slice().to_vec();
                dense[item] += cfg.max_qty.max(1);
                shelves[s].inventory = ItemVector::from(dense);
            }
        }
    }

    let mut remaining: Vec<u32> = vec![0; cfg.num_items];
    for s in &shelves {
        for (i, &q) in s.inventory.as_slice().iter().enumerate() {
            remaining[i] += q;
        }
    }
    let mut drafts: Vec<(SimTime, ItemVector)> = Vec::with_capacity(cfg.num_orders);
    for n in 0..cfg.num_orders {
        let arrival = gen_arrival_time(cfg.num_orders, cfg.wave_size, cfg.wave_interval, &mut rng);
        let in_stock: Vec<usize> = (0..cfg.num_items).filter(|&i| remaining[i] > 0).collect();
        if in_stock.is_empty() {
            return Err(gen_err(format!("inventory exhausted at order {n}")));
        }
        let lines = (truncated_pareto(cfg.alpha, cfg.max_lines, &mut rng) as usize).min(in_stock.len());
        let mut demand = vec![0u32; cfg.num_items];
        for pick in sample(&mut rng, in_stock.len(), lines).into_iter() {
            let item = in_stock[pick];
            let q = truncated_pareto(cfg.alpha, cfg.max_qty, &mut rng).min(remaining[item]);
            demand[item] = q;
            remaining[item] -= q;
        }
        drafts.push((arrival, ItemVector::from(demand)));
    }
    drafts.sort_by_key(|d| d.0);
    let orders = drafts
        .into_iter()
        .enumerate()
        .map(|(i, (arrival, demand))| Order {
            id: OrderId::from_index(i),
            arrival,
            demand,
        })
        .collect();

    let ds = Dataset {
        name: format!("{}-s{}", cfg.name, cfg.seed),
        height: cfg.height,
        width: cfg.width,
        num_items: cfg.num_items,
        c_item: cfg.c_item,
        c_shelf: cfg.c_shelf,
        locations,
        workstations,
        shelves,
        robots,
        orders,
    };
    ds.validate()?;
    Ok(ds)
}
