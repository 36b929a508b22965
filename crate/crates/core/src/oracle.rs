//! Exact solver for tiny instances, a sweep + nearest-neighbour heuristic,
//! 2-opt, and the gap metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{dist, minmax_objective, Instance, Point, ProblemKind, Route, RouteSet};

pub const MAX_CUSTOMERS: usize = 10;
pub const MAX_CUSTOMERS_PD: usize = 8;
pub const MAX_AGENTS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub objective: f64,
    pub solution: RouteSet,
    /// Subset splits examined by the partition search.
    pub nodes_explored: u64,
}

/// Optimal single route per customer subset.
struct SubsetRoutes {
    cost: Vec<f64>,
    route: Vec<Option<Route>>,
}

const NONE: usize = usize::MAX;

/// Held-Karp over subsets. `dp[S][j]` is the shortest path from the start
/// depot through exactly `S` ending at customer `j`.
fn subset_routes(inst: &Instance) -> SubsetRoutes {
    let n = inst.n();
    let full = 1usize << n;
    let c = |i: usize| inst.customer(i);
    let mut cost = vec![f64::INFINITY; full];
    let mut route: Vec<Option<Route>> = vec![None; full];
    let starts: Vec<usize> = match inst.kind {
        ProblemKind::Mdvrp => (0..inst.num_depots()).collect(),
        _ => vec![0],
    };
    for &depot in &starts {
        // FMDVRP: the first edge may come from any depot; for the others
        // the tour starts at `depot`.
        let entry = |j: usize| -> (f64, usize) {
            if inst.kind == ProblemKind::Fmdvrp {
                nearest(inst, c(j))
            } else {
                (dist(inst.depot(depot), c(j)), depot)
            }
        };
        let exit = |j: usize| -> (f64, usize) {
            if inst.kind == ProblemKind::Fmdvrp {
                nearest(inst, c(j))
            } else {
                (dist(c(j), inst.depot(depot)), depot)
            }
        };
        let mut dp = vec![f64::INFINITY; full * n];
        let mut parent = vec![NONE; full * n];
        for j in 0..n {
            if inst.is_delivery(j) {
                continue;
            }
            dp[(1 << j) * n + j] = entry(j).0;
        }
        for s in 1..full {
            for j in 0..n {
                let cur = dp[s * n + j];
                if s & (1 << j) == 0 || !cur.is_finite() {
                    continue;
                }
                for k in 0..n {
                    if s & (1 << k) != 0 {
                        continue;
                    }
                    if inst.is_delivery(k) && s & (1 << inst.partner(k)) == 0 {
                        continue;
                    }
                    let t = s | (1 << k);
                    let v = cur + dist(c(j), c(k));
                    if v < dp[t * n + k] {
                        dp[t * n + k] = v;
                        parent[t * n + k] = j;
                    }
                }
            }
        }
        for s in 1..full {
            if inst.kind == ProblemKind::Mpdp && !pair_closed(inst, s) {
                continue;
            }
            for j in 0..n {
                let v = dp[s * n + j];
                if !v.is_finite() {
                    continue;
                }
                let (out, end) = exit(j);
                if v + out < cost[s] {
                    cost[s] = v + out;
                    let mut order = Vec::new();
                    let (mut set, mut at) = (s, j);
                    while at != NONE {
                        order.push(at);
                        let p = parent[set * n + at];
                        set &= !(1 << at);
                        at = p;
                    }
                    order.reverse();
                    let start = entry(order[0]).1;
                    route[s] = Some(Route::new(start, end, order));
                }
            }
        }
    }
    SubsetRoutes { cost, route }
}

fn nearest(inst: &Instance, p: Point) -> (f64, usize) {
    inst.depots
        .iter()
        .enumerate()
        .map(|(k, &d)| (dist(d, p), k))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
}

fn pair_closed(inst: &Instance, s: usize) -> bool {
    (0..inst.pairs()).all(|p| (s >> p & 1) == (s >> inst.partner(p) & 1))
}

/// Exact min-max optimum by enumerating partitions into `M` non-empty
/// routes, each ordered optimally.
pub fn brute_force(inst: &Instance) -> Result<OracleResult> {
    let n = inst.n();
    let m = inst.agents;
    let cap = if inst.kind == ProblemKind::Mpdp { MAX_CUSTOMERS_PD } else { MAX_CUSTOMERS };
    if n > cap || m > MAX_AGENTS {
        return Err(Error::OracleLimit(format!(
            "{} with N={n}, M={m} exceeds N<={cap}, M<={MAX_AGENTS}",
            inst.kind
        )));
    }
    let sub = subset_routes(inst);
    let full = (1usize << n) - 1;
    // best[k][S]: optimal max over a partition of S into k routes.
    let mut best = vec![vec![f64::INFINITY; full + 1]; m + 1];
    let mut choice = vec![vec![0usize; full + 1]; m + 1];
    best[1].clone_from(&sub.cost);
    let mut nodes = 0u64;
    for k in 2..=m {
        for s in 1..=full {
            let low = s & s.wrapping_neg();
            let rest = s & !low;
            // T contains the lowest element of S, so each split is seen once
            let mut sub_rest = rest;
            loop {
                let t = sub_rest | low;
                if t != s {
                    nodes += 1;
                    let v = sub.cost[t].max(best[k - 1][s & !t]);
                    if v < best[k][s] {
                        best[k][s] = v;
                        choice[k][s] = t;
                    }
                }
                if sub_rest == 0 {
                    break;
                }
                sub_rest = (sub_rest - 1) & rest;
            }
        }
    }
    if !best[m][full].is_finite() {
        return Err(Error::Instance("no feasible partition".into()));
    }
    let mut routes = Vec::with_capacity(m);
    let mut s = full;
    for k in (1..=m).rev() {
        let t = if k == 1 { s } else { choice[k][s] };
        routes.push(sub.route[t].clone().expect("finite cost has a route"));
        s &= !t;
    }
    let solution = RouteSet::new(routes);
    let objective = minmax_objective(&solution, inst)?;
    Ok(OracleResult {
        objective,
        solution,
        nodes_explored: nodes,
    })
}

/// Splits `items` (already sorted by angle) into `m` contiguous non-empty arcs.
fn arcs(items: &[usize], m: usize) -> Vec<Vec<usize>> {
    let len = items.len();
    (0..m)
        .map(|k| items[k * len / m..(k + 1) * len / m].to_vec())
        .collect()
}

/// Angular sweep around the depot centroid into `M` arcs, then
/// nearest-neighbour order inside each arc. Pickup/delivery pairs are
/// assigned together by the pickup's angle.
pub fn nn_heuristic(inst: &Instance) -> RouteSet {
    let dn = inst.num_depots() as f64;
    let cx = inst.depots.iter().map(|p| p[0]).sum::<f64>() / dn;
    let cy = inst.depots.iter().map(|p| p[1]).sum::<f64>() / dn;
    let angle = |c: usize| {
        let p = inst.customer(c);
        (p[1] - cy).atan2(p[0] - cx)
    };
    let units: Vec<usize> = if inst.kind == ProblemKind::Mpdp {
        (0..inst.pairs()).collect()
    } else {
        (0..inst.n()).collect()
    };
    let mut sorted = units;
    sorted.sort_by(|&a, &b| angle(a).total_cmp(&angle(b)).then(a.cmp(&b)));
    let routes = arcs(&sorted, inst.agents)
        .into_iter()
        .map(|arc| {
            let mut members = arc.clone();
            if inst.kind == ProblemKind::Mpdp {
                members.extend(arc.iter().map(|&p| inst.partner(p)));
            }
            nn_route(inst, &members)
        })
        .collect();
    RouteSet::new(routes)
}

fn nn_route(inst: &Instance, members: &[usize]) -> Route {
    let k = members.len() as f64;
    let centroid = [
        members.iter().map(|&c| inst.customer(c)[0]).sum::<f64>() / k,
        members.iter().map(|&c| inst.customer(c)[1]).sum::<f64>() / k,
    ];
    let start = nearest(inst, centroid).1;
    let mut here = inst.depot(start);
    let mut left: Vec<usize> = members.to_vec();
    let mut order = Vec::with_capacity(left.len());
    while !left.is_empty() {
        let pick = left
            .iter()
            .enumerate()
            .filter(|&(_, &c)| !inst.is_delivery(c) || !left.contains(&inst.partner(c)))
            .min_by(|a, b| dist(here, inst.customer(*a.1)).total_cmp(&dist(here, inst.customer(*b.1))))
            .map(|(i, _)| i)
            .expect("some pickup or released delivery remains");
        let c = left.remove(pick);
        here = inst.customer(c);
        order.push(c);
    }
    let end = match inst.kind {
        ProblemKind::Fmdvrp => nearest(inst, here).1,
        _ => start,
    };
    Route::new(start, end, order)
}

/// First-improvement 2-opt on a closed tour until no move helps.
pub fn two_opt(route: &Route, inst: &Instance) -> Result<Route> {
    if !matches!(inst.kind, ProblemKind::Mtsp | ProblemKind::Mdvrp) {
        return Err(Error::Config(format!("2-opt needs a closed tour, not {}", inst.kind)));
    }
    if route.start != route.end {
        return Err(Error::Config("2-opt needs a route that returns to its depot".into()));
    }
    let depot = inst.depot(route.start);
    let mut tour = route.customers.clone();
    let pt = |tour: &[usize], i: usize| -> Point {
        // positions 0 and len+1 are the depot
        if i == 0 || i == tour.len() + 1 {
            depot
        } else {
            inst.customer(tour[i - 1])
        }
    };
    let mut improved = true;
    while improved {
        improved = false;
        let len = tour.len();
        'scan: for i in 0..len {
            for j in i + 2..=len {
                let (a, b) = (pt(&tour, i), pt(&tour, i + 1));
                let (c, d) = (pt(&tour, j), pt(&tour, j + 1));
                let delta = dist(a, c) + dist(b, d) - dist(a, b) - dist(c, d);
                if delta < -1e-12 {
                    tour[i..j].reverse();
                    improved = true;
                    break 'scan;
                }
            }
        }
    }
    Ok(Route::new(route.start, route.end, tour))
}

/// Percentage gap `(obj - ref) / ref * 100`.
pub fn gap(obj: f64, reference: f64) -> Result<f64> {
    if reference.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Config(format!("gap reference must be positive, got {reference}")));
    }
    Ok((obj - reference) / reference * 100.0)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::problems::{gen_uniform, route_length, validate};

    /// All orderings of `items` (Heap's algorithm).
    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        let mut a = items.to_vec();
        let mut out = vec![a.clone()];
        let mut c = vec![0; a.len()];
        let mut i = 0;
        while i < a.len() {
            if c[i] < i {
                if i % 2 == 0 {
                    a.swap(0, i);
                } else {
                    a.swap(c[i], i);
                }
                out.push(a.clone());
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        out
    }

    #[test]
    fn collinear_pair() {
        let i = Instance::new(ProblemKind::Mtsp, 2, vec![[0.0, 0.0]], vec![[0.3, 0.0], [0.7, 0.0]]).unwrap();
        let r = brute_force(&i).unwrap();
        assert!((r.objective - 1.4).abs() < 1e-12);
    }

    #[test]
    fn corners_pair_up_adjacently() {
        let i = Instance::new(
            ProblemKind::Mtsp,
            2,
            vec![[0.5, 0.5]],
            vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]],
        )
        .unwrap();
        let r = brute_force(&i).unwrap();
        assert!((r.objective - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!((r.objective - 2.41421).abs() < 1e-5);
        assert_eq!(validate(&r.solution, &i), Ok(()));
    }

    #[test]
    fn single_agent_matches_permutation_enumeration() {
        for seed in 0..6 {
            for kind in ProblemKind::ALL {
                let d = if kind.is_multi_depot() { 2 } else { 1 };
                let i = gen_uniform(kind, 6, d, 1, seed).unwrap();
                let mut best = f64::INFINITY;
                for order in permutations(&(0..6).collect::<Vec<_>>()) {
                    for s in 0..d {
                        for e in 0..d {
                            let r = Route::new(s, e, order.clone());
                            let sol = RouteSet::new(vec![r.clone()]);
                            if validate(&sol, &i).is_ok() {
                                best = best.min(route_length(&r, &i).unwrap());
                            }
                        }
                    }
                }
                let r = brute_force(&i).unwrap();
                assert!((r.objective - best).abs() < 1e-12, "{kind}: {} vs {best}", r.objective);
            }
        }
    }

    #[test]
    fn optimum_lower_bounds_random_feasible_solutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in ProblemKind::ALL {
            let d = if kind.is_multi_depot() { 2 } else { 1 };
            let i = gen_uniform(kind, 6, d, 2, 3).unwrap();
            let opt = brute_force(&i).unwrap();
            assert_eq!(validate(&opt.solution, &i), Ok(()));
            let mut checked = 0;
            while checked < 200 {
                let mut order: Vec<usize> = (0..6).collect();
                rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
                let cut = rng.gen_range(1..6);
                let (s0, s1) = (rng.gen_range(0..d), rng.gen_range(0..d));
                let sol = RouteSet::new(vec![
                    Route::new(s0, if kind == ProblemKind::Fmdvrp { s1 } else { s0 }, order[..cut].to_vec()),
                    Route::new(s1, s1, order[cut..].to_vec()),
                ]);
                if validate(&sol, &i).is_ok() {
                    checked += 1;
                    assert!(opt.objective <= minmax_objective(&sol, &i).unwrap() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn relabeling_customers_keeps_the_optimum() {
        let i = gen_uniform(ProblemKind::Mtsp, 8, 1, 3, 4).unwrap();
        let mut j = i.clone();
        j.customers.reverse();
        let (a, b) = (brute_force(&i).unwrap(), brute_force(&j).unwrap());
        assert!((a.objective - b.objective).abs() < 1e-12);
        assert!(a.nodes_explored > 0);
    }

    #[test]
    fn limits() {
        assert!(matches!(
            brute_force(&gen_uniform(ProblemKind::Mtsp, 11, 1, 2, 0).unwrap()),
            Err(Error::OracleLimit(_))
        ));
        assert!(brute_force(&gen_uniform(ProblemKind::Mpdp, 10, 1, 2, 0).unwrap()).is_err());
        assert!(brute_force(&gen_uniform(ProblemKind::Mtsp, 8, 1, 5, 0).unwrap()).is_err());
    }

    #[test]
    fn heuristic_is_feasible_and_bounded_by_the_optimum() {
        for kind in ProblemKind::ALL {
            for seed in 0..5 {
                let d = if kind.is_multi_depot() { 3 } else { 1 };
                let i = gen_uniform(kind, 8, d, 3, seed).unwrap();
                let h = nn_heuristic(&i);
                assert_eq!(validate(&h, &i), Ok(()), "{kind}");
                assert_eq!(h, nn_heuristic(&i));
                let opt = brute_force(&i).unwrap();
                assert!(opt.objective <= minmax_objective(&h, &i).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn two_opt_uncrosses() {
        let i = Instance::new(
            ProblemKind::Mtsp,
            1,
            vec![[0.0, 0.0]],
            vec![[0.1, 0.0], [0.3, 0.0], [0.2, 0.0], [0.4, 0.0]],
        )
        .unwrap();
        let r = Route::single_depot(vec![0, 1, 2, 3]);
        let better = two_opt(&r, &i).unwrap();
        assert!(route_length(&better, &i).unwrap() < route_length(&r, &i).unwrap() - 1e-9);
        assert!((route_length(&better, &i).unwrap() - 0.8).abs() < 1e-12);

        let sq = Instance::new(
            ProblemKind::Mtsp,
            1,
            vec![[0.0, 0.0]],
            vec![[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]],
        )
        .unwrap();
        let tour = Route::single_depot(vec![0, 1, 2]);
        assert_eq!(two_opt(&tour, &sq).unwrap(), tour);

        let pd = gen_uniform(ProblemKind::Mpdp, 4, 1, 1, 0).unwrap();
        assert!(two_opt(&Route::single_depot(vec![0, 1, 2, 3]), &pd).is_err());
    }

    #[test]
    fn gap_values() {
        assert!((gap(2.0337, 2.0154).unwrap() - 0.908).abs() < 5e-3);
        assert_eq!(gap(1.4, 1.4).unwrap(), 0.0);
        assert!(gap(1.0, 0.0).is_err());
    }
}
