#![allow(dead_code)]

use std::path::PathBuf;

use dpn::problems::gen_uniform_with;
use dpn::{Instance, ProblemKind, Route, RouteSet};
use rand::seq::{index::sample, SliceRandom};
use rand::Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Uniform instance with `N`, `M`, `D` drawn from the given inclusive ranges,
/// adjusted to what the kind admits (even `N` and `M <= N/2` for MPDP).
pub fn random_instance<R: Rng>(
    kind: ProblemKind,
    n: [usize; 2],
    m: [usize; 2],
    d: [usize; 2],
    rng: &mut R,
) -> Instance {
    let mut nn = rng.gen_range(n[0]..=n[1]);
    if kind == ProblemKind::Mpdp && !nn.is_multiple_of(2) {
        nn += 1;
    }
    let cap = if kind == ProblemKind::Mpdp { nn / 2 } else { nn };
    let mm = rng.gen_range(m[0]..=m[1]).min(cap);
    let dd = if kind.is_multi_depot() { rng.gen_range(d[0]..=d[1]) } else { 1 };
    gen_uniform_with(kind, nn, dd, mm, rng).unwrap()
}

/// Splits `items` into `m` non-empty contiguous groups at random cut points.
fn split<T: Clone, R: Rng>(items: &[T], m: usize, rng: &mut R) -> Vec<Vec<T>> {
    let mut cuts = sample(rng, items.len() - 1, m - 1).into_vec();
    cuts.iter_mut().for_each(|c| *c += 1);
    cuts.sort_unstable();
    cuts.push(items.len());
    let mut out = Vec::with_capacity(m);
    let mut lo = 0;
    for c in cuts {
        out.push(items[lo..c].to_vec());
        lo = c;
    }
    out
}

/// A uniformly shuffled feasible solution of `inst`.
pub fn random_solution<R: Rng>(inst: &Instance, rng: &mut R) -> RouteSet {
    let m = inst.agents;
    let groups: Vec<Vec<usize>> = if inst.kind == ProblemKind::Mpdp {
        let mut pairs: Vec<usize> = (0..inst.pairs()).collect();
        pairs.shuffle(rng);
        split(&pairs, m, rng)
            .into_iter()
            .map(|ps| {
                let mut seq: Vec<usize> = ps.iter().flat_map(|&p| [p, inst.partner(p)]).collect();
                seq.shuffle(rng);
                for &p in &ps {
                    let i = seq.iter().position(|&c| c == p).unwrap();
                    let j = seq.iter().position(|&c| c == inst.partner(p)).unwrap();
                    if j < i {
                        seq.swap(i, j);
                    }
                }
                seq
            })
            .collect()
    } else {
        let mut cs: Vec<usize> = (0..inst.n()).collect();
        cs.shuffle(rng);
        split(&cs, m, rng)
    };
    let nd = inst.num_depots();
    RouteSet::new(
        groups
            .into_iter()
            .map(|g| match inst.kind {
                ProblemKind::Mtsp | ProblemKind::Mpdp => Route::single_depot(g),
                ProblemKind::Mdvrp => {
                    let d = rng.gen_range(0..nd);
                    Route::new(d, d, g)
                }
                ProblemKind::Fmdvrp => Route::new(rng.gen_range(0..nd), rng.gen_range(0..nd), g),
            })
            .collect(),
    )
}
