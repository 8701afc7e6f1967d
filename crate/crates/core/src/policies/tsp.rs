//! Closed tours from a start cell over a set of stops.

use crate::model::Pos;

/// Stop count up to which tours are solved exactly.
pub const EXACT_LIMIT: usize = 10;

/// Length of the closed tour `start → stops[order…] → start`.
pub fn tour_cost(start: Pos, stops: &[Pos], order: &[usize]) -> u64 {
    let mut cost = 0u64;
    let mut at = start;
    for &k in order {
        cost += at.manhattan(stops[k]) as u64;
        at = stops[k];
    }
    cost + at.manhattan(start) as u64
}

/// Exact tour by dynamic programming over subsets. Among optimal tours the
/// lexicographically smallest stop sequence is returned.
pub fn held_karp(start: Pos, stops: &[Pos]) -> (u64, Vec<usize>) {
    let n = stops.len();
    if n == 0 {
        return (0, Vec::new());
    }
    assert!(n <= 16, "held_karp is exponential in the stop count");
    let full = (1usize << n) - 1;
    let d = |a: Pos, b: Pos| a.manhattan(b) as u64;
    // togo[mask][j]: cheapest completion standing at j having visited mask.
    let mut togo = vec![vec![u64::MAX; n]; 1 << n];
    for j in 0..n {
        togo[full][j] = d(stops[j], start);
    }
    for mask in (1..full).rev() {
        for j in 0..n {
            if mask & (1 << j) == 0 {
                continue;
            }
            let mut best = u64::MAX;
            for k in 0..n {
                if mask & (1 << k) == 0 {
                    let c = d(stops[j], stops[k]) + togo[mask | (1 << k)][k];
                    best = best.min(c);
                }
            }
            togo[mask][j] = best;
        }
    }
    let cost = (0..n)
        .map(|j| d(start, stops[j]) + togo[1 << j][j])
        .min()
        .expect("non-empty");
    let mut order = Vec::with_capacity(n);
    let mut mask = 0usize;
    let mut at = start;
    let mut remaining = cost;
    while mask != full {
        let j = (0..n)
            .find(|&j| mask & (1 << j) == 0 && d(at, stops[j]) + togo[mask | (1 << j)][j] == remaining)
            .expect("an optimal continuation exists");
        remaining -= d(at, stops[j]);
        mask |= 1 << j;
        at = stops[j];
        order.push(j);
    }
    (cost, order)
}

/// Nearest-neighbour construction (ties to the lower index).
pub fn nearest_neighbor(start: Pos, stops: &[Pos]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..stops.len()).collect();
    let mut order = Vec::with_capacity(stops.len());
    let mut at = start;
    while !left.is_empty() {
        let (pos, &k) = left
            .iter()
            .enumerate()
            .min_by_key(|(_, &k)| (at.manhattan(stops[k]), k))
            .expect("non-empty");
        left.remove(pos);
        order.push(k);
        at = stops[k];
    }
    order
}

/// First-improvement 2-opt on a closed tour with a fixed start.
pub fn two_opt(start: Pos, stops: &[Pos], order: &mut [usize]) {
    let n = order.len();
    if n < 3 {
        return;
    }
    let at = |order: &[usize], i: usize| -> Pos {
        if i == 0 || i == n + 1 {
            start
        } else {
            stops[order[i - 1]]
        }
    };
    let d = |a: Pos, b: Pos| a.manhattan(b) as i64;
    let mut improved = true;
    while improved {
        improved = false;
        // Tour positions 0..=n+1, with 0 and n+1 the start.
        for i in 1..n {
            for j in i + 1..=n {
                let (a, b) = (at(order, i - 1), at(order, i));
                let (c, e) = (at(order, j), at(order, j + 1));
                if d(a, c) + d(b, e) < d(a, b) + d(c, e) {
                    order[i - 1..j].reverse();
                    improved = true;
                }
            }
        }
    }
}

/// Exact below [`EXACT_LIMIT`] stops, otherwise nearest neighbour plus 2-opt.
pub fn plan_tour(start: Pos, stops: &[Pos]) -> (u64, Vec<usize>) {
    if stops.len() <= EXACT_LIMIT {
        return held_karp(start, stops);
    }
    let mut order = nearest_neighbor(start, stops);
    two_opt(start, stops, &mut order);
    (tour_cost(start, stops, &order), order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: i32, y: i32) -> Pos {
        Pos::new(x, y)
    }

    #[test]
    fn single_stop() {
        assert_eq!(held_karp(p(0, 0), &[p(3, 1)]), (8, vec![0]));
    }

    #[test]
    fn tie_prefers_lexicographically_smaller_sequence() {
        let (cost, order) = held_karp(p(0, 0), &[p(0, 2), p(0, -1), p(0, 3)]);
        assert_eq!(cost, 8);
        assert_eq!(order, vec![0, 2, 1]);
        let (cost, order) = held_karp(p(0, 0), &[p(0, 10), p(0, 11), p(0, -1)]);
        assert_eq!(cost, 24);
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn exact_never_loses_to_nearest_neighbor() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.gen_range(1..=EXACT_LIMIT);
            let stops: Vec<Pos> = (0..n).map(|_| p(rng.gen_range(0..30), rng.gen_range(0..30))).collect();
            let start = p(rng.gen_range(0..30), rng.gen_range(0..30));
            let (cost, _) = held_karp(start, &stops);
            assert!(cost <= tour_cost(start, &stops, &nearest_neighbor(start, &stops)));
        }
    }

    #[test]
    fn exact_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(1..=6);
            let stops: Vec<Pos> = (0..n).map(|_| p(rng.gen_range(0..15), rng.gen_range(0..15))).collect();
            let start = p(rng.gen_range(0..15), rng.gen_range(0..15));
            let mut perm: Vec<usize> = (0..n).collect();
            let mut best = u64::MAX;
            permute(&mut perm, 0, &mut |o| best = best.min(tour_cost(start, &stops, o)));
            let (cost, order) = held_karp(start, &stops);
            assert_eq!(cost, best);
            assert_eq!(tour_cost(start, &stops, &order), cost);
        }
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn two_opt_never_worsens() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let stops: Vec<Pos> = (0..25).map(|_| p(rng.gen_range(0..40), rng.gen_range(0..40))).collect();
            let start = p(0, 0);
            let mut order = nearest_neighbor(start, &stops);
            let before = tour_cost(start, &stops, &order);
            two_opt(start, &stops, &mut order);
            assert!(tour_cost(start, &stops, &order) <= before);
            let mut sorted = order.clone();
            sorted.sort();
            assert_eq!(sorted, (0..25).collect::<Vec<_>>());
        }
    }
}
