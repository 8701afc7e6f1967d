//! Batch allocation minimising the total shelf-to-workstation travel.
//!
//! A batch assigns each order to one workstation (`assign`), chooses which
//! shelves visit which workstations (`visits`) and splits each order's demand
//! over the shelves visiting its workstation (`supply`). The objective is the
//! summed distance of the visits. Small batches are solved exactly by
//! branch-and-bound, first over workstation assignments and then over visit
//! sets in distance order; supply feasibility of a visit set is a per-item
//! max-flow. Larger batches, or searches exceeding the node budget, keep the
//! greedy incumbent.

use std::collections::VecDeque;

use crate::model::{ItemVector, Order, OrderId, ShelfId, WorkstationId};
use crate::sim::CpConfig;
use crate::world::Warehouse;

/// A static batch over dense local indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CpInstance {
    pub demands: Vec<ItemVector>,
    pub stock: Vec<ItemVector>,
    /// `dist[s][w]`.
    pub dist: Vec<Vec<u64>>,
}

impl CpInstance {
    pub fn num_orders(&self) -> usize {
        self.demands.len()
    }

    pub fn num_shelves(&self) -> usize {
        self.stock.len()
    }

    pub fn num_workstations(&self) -> usize {
        self.dist.first().map_or(0, Vec::len)
    }

    fn num_items(&self) -> usize {
        self.demands.first().map_or(0, ItemVector::len)
    }

    /// Whether the pooled stock covers the pooled demand.
    pub fn aggregate_feasible(&self) -> bool {
        let mut need = ItemVector::zeros(self.num_items());
        for d in &self.demands {
            need.add_assign(d).expect("uniform lengths");
        }
        let mut have = ItemVector::zeros(self.num_items());
        for q in &self.stock {
            have.add_assign(q).expect("uniform lengths");
        }
        have.can_fulfill(&need).expect("uniform lengths")
    }

    fn overlaps(&self, o: usize, s: usize) -> bool {
        self.stock[s].overlap(&self.demands[o]).expect("uniform lengths") > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpPlan {
    /// Workstation of each order.
    pub assign: Vec<usize>,
    /// Visited `(shelf, workstation)` pairs, sorted.
    pub visits: Vec<(usize, usize)>,
    /// Per order, the quantities taken from each supplying shelf.
    pub supply: Vec<Vec<(usize, ItemVector)>>,
    pub objective: u64,
    /// Whether the search proved optimality.
    pub exact: bool,
}

/// Flow-based supply check. `visit[s][w]` marks allowed visits. Returns the
/// per-order supply split when every demand can be met.
pub fn supply_split(
    inst: &CpInstance,
    assign: &[usize],
    visit: &[Vec<bool>],
) -> Option<Vec<Vec<(usize, ItemVector)>>> {
    let (no, ns, ni) = (inst.num_orders(), inst.num_shelves(), inst.num_items());
    let mut split = vec![vec![vec![0u32; ni]; ns]; no];
    let n = no + ns + 2;
    let (src, sink) = (no + ns, no + ns + 1);
    let mut cap = vec![vec![0i64; n]; n];
    for item in 0..ni {
        let need: i64 = inst.demands.iter().map(|d| d.get(item) as i64).sum();
        if need == 0 {
            continue;
        }
        for row in cap.iter_mut() {
            row.fill(0);
        }
        for o in 0..no {
            cap[src][o] = inst.demands[o].get(item) as i64;
            for s in 0..ns {
                if visit[s][assign[o]] {
                    cap[o][no + s] = i64::MAX / 4;
                }
            }
        }
        for s in 0..ns {
            cap[no + s][sink] = inst.stock[s].get(item) as i64;
        }
        let original = cap.clone();
        if max_flow(&mut cap, src, sink) < need {
            return None;
        }
        for o in 0..no {
            for s in 0..ns {
                let f = original[o][no + s] - cap[o][no + s];
                if f > 0 {
                    split[o][s][item] = f as u32;
                }
            }
        }
    }
    Some(
        split
            .into_iter()
            .map(|per_shelf| {
                per_shelf
                    .into_iter()
                    .enumerate()
                    .map(|(s, q)| (s, ItemVector::from_vec(q)))
                    .filter(|(_, q)| !q.is_zero())
                    .collect()
            })
            .collect(),
    )
}

/// Edmonds–Karp on a dense residual matrix, updated in place.
fn max_flow(cap: &mut [Vec<i64>], src: usize, sink: usize) -> i64 {
    let n = cap.len();
    let mut total = 0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[src] = src;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            if u == sink {
                break;
            }
            for v in 0..n {
                if prev[v] == usize::MAX && cap[u][v] > 0 {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            return total;
        }
        let mut push = i64::MAX;
        let mut v = sink;
        while v != src {
            push = push.min(cap[prev[v]][v]);
            v = prev[v];
        }
        let mut v = sink;
        while v != src {
            let u = prev[v];
            cap[u][v] -= push;
            cap[v][u] += push;
            v = u;
        }
        total += push;
    }
}

fn objective(inst: &CpInstance, visits: &[(usize, usize)]) -> u64 {
    visits.iter().map(|&(s, w)| inst.dist[s][w]).sum()
}

/// Order by order, the workstation whose greedy supply adds the least new
/// travel. Shelves are taken by overlap over distance, with already visited
/// pairs counting as free. Returns `None` only if stock runs out.
pub fn solve_greedy(inst: &CpInstance, epsilon: f64) -> Option<CpPlan> {
    let (ns, nw) = (inst.num_shelves(), inst.num_workstations());
    if nw == 0 {
        return None;
    }
    let mut stock = inst.stock.clone();
    let mut visited = vec![vec![false; nw]; ns];
    let mut assign = Vec::with_capacity(inst.num_orders());
    let mut supply = Vec::with_capacity(inst.num_orders());
    for demand in &inst.demands {
        let mut best: Option<(u64, usize, Vec<(usize, ItemVector)>)> = None;
        for w in 0..nw {
            let Some((added, plan)) = greedy_take(inst, &stock, &visited, demand, w, epsilon) else {
                continue;
            };
            if best.as_ref().is_none_or(|b| added < b.0) {
                best = Some((added, w, plan));
            }
        }
        let (_, w, plan) = best?;
        for (s, q) in &plan {
            stock[*s].sub_assign(q).expect("taken from stock");
            visited[*s][w] = true;
        }
        assign.push(w);
        supply.push(plan);
    }
    let visits = visit_list(&visited);
    Some(CpPlan {
        objective: objective(inst, &visits),
        assign,
        visits,
        supply,
        exact: false,
    })
}

fn greedy_take(
    inst: &CpInstance,
    stock: &[ItemVector],
    visited: &[Vec<bool>],
    demand: &ItemVector,
    w: usize,
    epsilon: f64,
) -> Option<(u64, Vec<(usize, ItemVector)>)> {
    let mut stock = stock.to_vec();
    let mut remaining = demand.clone();
    let mut plan = Vec::new();
    let mut added = 0;
    while !remaining.is_zero() {
        let mut best: Option<(f64, usize)> = None;
        for (s, q) in stock.iter().enumerate() {
            let overlap = q.overlap(&remaining).expect("uniform lengths");
            if overlap == 0 {
                continue;
            }
            let d = if visited[s][w] { 0 } else { inst.dist[s][w] };
            let score = overlap as f64 / (d as f64 + epsilon);
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, s));
            }
        }
        let (_, s) = best?;
        let (taken, rest_stock, rest) = stock[s].partial_take(&remaining).expect("uniform lengths");
        if !visited[s][w] && !plan.iter().any(|(p, _)| *p == s) {
            added += inst.dist[s][w];
        }
        stock[s] = rest_stock;
        remaining = rest;
        plan.push((s, taken));
    }
    Some((added, plan))
}

fn visit_list(visit: &[Vec<bool>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (s, row) in visit.iter().enumerate() {
        for (w, &v) in row.iter().enumerate() {
            if v {
                out.push((s, w));
            }
        }
    }
    out
}

struct Search<'a> {
    inst: &'a CpInstance,
    /// `cheapest[o][w]`: closest shelf able to contribute to `o` at `w`.
    cheapest: Vec<Vec<u64>>,
    best: Option<CpPlan>,
    nodes: u64,
    budget: u64,
}

impl Search<'_> {
    fn bound(&self) -> u64 {
        self.best.as_ref().map_or(u64::MAX, |b| b.objective)
    }

    fn tick(&mut self) -> bool {
        self.nodes += 1;
        self.nodes <= self.budget
    }

    /// Every used workstation needs at least one visit per order it serves.
    fn assign_bound(&self, assign: &[usize]) -> u64 {
        let mut per_ws = vec![0u64; self.inst.num_workstations()];
        for (o, &w) in assign.iter().enumerate() {
            per_ws[w] = per_ws[w].max(self.cheapest[o][w]);
        }
        per_ws.iter().fold(0u64, |a, &b| a.saturating_add(b))
    }

    fn assign_orders(&mut self, assign: &mut Vec<usize>) -> bool {
        if !self.tick() {
            return false;
        }
        if self.assign_bound(assign) >= self.bound() {
            return true;
        }
        if assign.len() == self.inst.num_orders() {
            return self.choose_visits(assign);
        }
        let o = assign.len();
        for w in 0..self.inst.num_workstations() {
            if self.cheapest[o][w] == u64::MAX {
                continue;
            }
            assign.push(w);
            let ok = self.assign_orders(assign);
            assign.pop();
            if !ok {
                return false;
            }
        }
        true
    }

    fn choose_visits(&mut self, assign: &[usize]) -> bool {
        let inst = self.inst;
        let mut pairs: Vec<(u64, usize, usize)> = Vec::new();
        for s in 0..inst.num_shelves() {
            for w in 0..inst.num_workstations() {
                if (0..inst.num_orders()).any(|o| assign[o] == w && inst.overlaps(o, s)) {
                    pairs.push((inst.dist[s][w], s, w));
                }
            }
        }
        pairs.sort();
        let mut state = vec![Choice::Open; pairs.len()];
        self.visit_branch(assign, &pairs, &mut state, 0, 0)
    }

    fn visit_branch(
        &mut self,
        assign: &[usize],
        pairs: &[(u64, usize, usize)],
        state: &mut [Choice],
        next: usize,
        cost: u64,
    ) -> bool {
        if !self.tick() {
            return false;
        }
        if cost.saturating_add(self.visit_bound(assign, pairs, state)) >= self.bound() {
            return true;
        }
        let inst = self.inst;
        let grid = |state: &[Choice], open_too: bool| {
            let mut visit = vec![vec![false; inst.num_workstations()]; inst.num_shelves()];
            for (k, &(_, s, w)) in pairs.iter().enumerate() {
                if state[k] == Choice::In || (open_too && state[k] == Choice::Open) {
                    visit[s][w] = true;
                }
            }
            visit
        };
        let chosen = grid(state, false);
        if let Some(supply) = supply_split(inst, assign, &chosen) {
            let visits = visit_list(&chosen);
            self.best = Some(CpPlan {
                assign: assign.to_vec(),
                objective: cost,
                visits,
                supply,
                exact: false,
            });
            return true;
        }
        if next == pairs.len() || supply_split(inst, assign, &grid(state, true)).is_none() {
            return true;
        }
        state[next] = Choice::In;
        if !self.visit_branch(assign, pairs, state, next + 1, cost + pairs[next].0) {
            return false;
        }
        state[next] = Choice::Out;
        let ok = self.visit_branch(assign, pairs, state, next + 1, cost);
        state[next] = Choice::Open;
        ok
    }

    /// Orders without any chosen contributor still need their cheapest open
    /// pair; per workstation the largest such need is a lower bound.
    fn visit_bound(&self, assign: &[usize], pairs: &[(u64, usize, usize)], state: &[Choice]) -> u64 {
        let inst = self.inst;
        let mut per_ws = vec![0u64; inst.num_workstations()];
        for (o, &w) in assign.iter().enumerate() {
            if inst.demands[o].is_zero() {
                continue;
            }
            let served = pairs
                .iter()
                .zip(state)
                .any(|(&(_, s, pw), &c)| c == Choice::In && pw == w && inst.overlaps(o, s));
            if served {
                continue;
            }
            let need = pairs
                .iter()
                .zip(state)
                .filter(|(&(_, s, pw), &c)| c == Choice::Open && pw == w && inst.overlaps(o, s))
                .map(|(&(d, ..), _)| d)
                .min()
                .unwrap_or(u64::MAX);
            per_ws[w] = per_ws[w].max(need);
        }
        per_ws.iter().fold(0u64, |a, &b| a.saturating_add(b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Choice {
    Open,
    In,
    Out,
}

/// Branch-and-bound from the greedy incumbent. The returned plan has
/// `exact == true` when the search finished within `node_budget`.
pub fn solve_exact(inst: &CpInstance, node_budget: u64, epsilon: f64) -> Option<CpPlan> {
    if inst.num_orders() == 0 || !inst.aggregate_feasible() {
        return None;
    }
    let cheapest = (0..inst.num_orders())
        .map(|o| {
            (0..inst.num_workstations())
                .map(|w| {
                    if inst.demands[o].is_zero() {
                        return 0;
                    }
                    (0..inst.num_shelves())
                        .filter(|&s| inst.overlaps(o, s))
                        .map(|s| inst.dist[s][w])
                        .min()
                        .unwrap_or(u64::MAX)
                })
                .collect()
        })
        .collect();
    let mut search = Search {
        inst,
        cheapest,
        best: solve_greedy(inst, epsilon),
        nodes: 0,
        budget: node_budget,
    };
    let finished = search.assign_orders(&mut Vec::new());
    let mut plan = search.best?;
    plan.exact = finished;
    Some(plan)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpAssignment {
    pub order: OrderId,
    pub workstation: WorkstationId,
    pub plan: Vec<(ShelfId, ItemVector)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpSolution {
    pub assignments: Vec<CpAssignment>,
    pub objective: u64,
    pub exact: bool,
}

/// Builds the instance over shelves that can contribute to `batch` and
/// items the batch demands.
pub fn build_instance(world: &Warehouse, batch: &[&Order]) -> (CpInstance, Vec<ShelfId>, Vec<usize>) {
    let items: Vec<usize> = (0..world.num_items)
        .filter(|&i| batch.iter().any(|o| o.demand.get(i) > 0))
        .collect();
    let project = |v: &ItemVector| ItemVector::from_vec(items.iter().map(|&i| v.get(i)).collect());
    let shelves: Vec<ShelfId> = world
        .shelves
        .iter()
        .filter(|s| items.iter().any(|&i| s.inventory.get(i) > 0))
        .map(|s| s.id)
        .collect();
    let inst = CpInstance {
        demands: batch.iter().map(|o| project(&o.demand)).collect(),
        stock: shelves
            .iter()
            .map(|s| project(&world.shelves[s.index()].inventory))
            .collect(),
        dist: shelves
            .iter()
            .map(|&s| {
                let p = world.shelf_pos(s);
                world.workstations.iter().map(|w| p.manhattan(w.pos) as u64).collect()
            })
            .collect(),
    };
    (inst, shelves, items)
}

/// Allocates a pooled batch against current unreserved stock. `None` means
/// the pooled stock cannot cover the batch.
pub fn solve_batch(world: &Warehouse, batch: &[&Order], cfg: &CpConfig, epsilon: f64) -> Option<CpSolution> {
    if batch.is_empty() {
        return None;
    }
    let (inst, shelves, items) = build_instance(world, batch);
    if !inst.aggregate_feasible() {
        return None;
    }
    let size = inst.num_orders() * inst.num_shelves() * inst.num_workstations();
    let plan = if size <= cfg.exact_limit {
        solve_exact(&inst, cfg.node_budget, epsilon)?
    } else {
        solve_greedy(&inst, epsilon)?
    };
    let lift = |q: &ItemVector| {
        let mut full = vec![0u32; world.num_items];
        for (k, &i) in items.iter().enumerate() {
            full[i] = q.get(k);
        }
        ItemVector::from_vec(full)
    };
    let assignments = batch
        .iter()
        .enumerate()
        .map(|(o, order)| CpAssignment {
            order: order.id,
            workstation: WorkstationId::from_index(plan.assign[o]),
            plan: plan.supply[o].iter().map(|(s, q)| (shelves[*s], lift(q))).collect(),
        })
        .collect();
    Some(CpSolution {
        assignments,
        objective: plan.objective,
        exact: plan.exact,
    })
}
