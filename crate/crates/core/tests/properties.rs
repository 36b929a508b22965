mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dpn::diffcore::{grad_check, masked_softmax_rows, softmax_rows, Graph, ParamStore, Tensor};
use dpn::oracle::brute_force;
use dpn::problems::{augment8, minmax_objective, read_instances, validate, write_instances, Symmetry};
use dpn::rollout::DecodeState;
use dpn::{ProblemKind, RouteSet};

use common::{random_instance, random_solution};

fn kind_strategy() -> impl Strategy<Value = ProblemKind> {
    prop::sample::select(ProblemKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chained_ops_match_finite_differences(r in 1usize..5, k in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let a = store.insert("a", Tensor::uniform(r, k, 1.0, &mut rng));
        let b = store.insert("b", Tensor::uniform(k, c, 1.0, &mut rng));
        let w = Tensor::uniform(r, c, 1.0, &mut rng);
        let err = grad_check(&mut store, 1e-6, |g, s| {
            let av = g.param(s, a);
            let bv = g.param(s, b);
            let h = g.matmul(av, bv)?;
            let h = g.softmax_rows(h)?;
            let e = g.exp(h)?;
            let t = g.tanh(e)?;
            let wv = g.constant(w.clone());
            let m = g.mul(t, wv)?;
            Ok(g.sum_all(m))
        }).unwrap();
        prop_assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn softmax_rows_are_distributions(r in 1usize..6, c in 1usize..9, scale in 0.1f64..200.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(r, c, scale, &mut rng);
        let p = softmax_rows(&x);
        let shifted = softmax_rows(&x.map(|v| v + 3.0));
        for i in 0..r {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
            for (a, b) in p.row(i).iter().zip(shifted.row(i)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
        let mask: Vec<bool> = (0..r * c).map(|j| j % c == 0 || rng.gen_bool(0.5)).collect();
        let q = masked_softmax_rows(&x, &mask).unwrap();
        for (v, &m) in q.data().iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn sum_is_order_insensitive(vals in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let fwd = Tensor::new(1, vals.len(), vals.clone()).unwrap().sum_f64();
        let mut rev = vals.clone();
        rev.reverse();
        let back = Tensor::new(1, rev.len(), rev).unwrap().sum_f64();
        let scale = vals.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!((fwd - back).abs() <= 1e-12 * scale);
        let mut g = Graph::<f32>::new();
        let t = g.constant(Tensor::from_f64(1, vals.len(), &vals).unwrap());
        let s = g.sum_all(t);
        prop_assert!((f64::from(g.value(s).item()) - fwd).abs() <= 1e-6 * scale);
    }

    #[test]
    fn objective_ignores_route_order(kind in kind_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(kind, [4, 24], [1, 5], [1, 4], &mut rng);
        let sol = random_solution(&inst, &mut rng);
        prop_assert!(validate(&sol, &inst).is_ok());
        let mut routes = sol.routes.clone();
        routes.shuffle(&mut rng);
        let a = minmax_objective(&sol, &inst).unwrap();
        let b = minmax_objective(&RouteSet::new(routes), &inst).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn symmetries_preserve_objectives(kind in kind_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(kind, [4, 24], [1, 5], [1, 4], &mut rng);
        let sol = random_solution(&inst, &mut rng);
        let base = minmax_objective(&sol, &inst).unwrap();
        for (s, copy) in augment8(&inst) {
            prop_assert!(copy.in_unit_square());
            prop_assert!((minmax_objective(&sol, &copy).unwrap() - base).abs() < 1e-9);
            for (p, q) in inst.customers.iter().zip(&copy.customers) {
                let back = s.inverse().apply(*q);
                prop_assert!((back[0] - p[0]).abs() < 1e-15 && (back[1] - p[1]).abs() < 1e-15);
            }
        }
        prop_assert_eq!(Symmetry::ALL[0], Symmetry::Identity);
    }

    #[test]
    fn random_legal_decoding_is_feasible(kind in kind_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(kind, [2, 20], [1, 5], [1, 4], &mut rng);
        let mut perm: Vec<usize> = (0..inst.agents).collect();
        perm.shuffle(&mut rng);
        let first = rng.gen_range(0..inst.num_depots());
        let mut s = DecodeState::new(&inst, &perm, first).unwrap();
        let mut steps = 0;
        while !s.done {
            let legal: Vec<usize> = s.mask(&inst).iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
            prop_assert!(!legal.is_empty(), "dead end after {steps} steps");
            s.step(&inst, *legal.choose(&mut rng).unwrap()).unwrap();
            steps += 1;
        }
        prop_assert_eq!(steps, DecodeState::total_steps(&inst));
        let extra = if kind.is_multi_depot() { 2 * inst.agents } else { inst.agents };
        prop_assert_eq!(steps, inst.n() + extra);
        let sol = s.solution().unwrap();
        prop_assert!(validate(&sol, &inst).is_ok(), "{:?}", validate(&sol, &inst));
    }

    #[test]
    fn dataset_round_trip(kind in kind_strategy(), seed in any::<u64>(), count in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let insts: Vec<_> = (0..count).map(|_| random_instance(kind, [2, 12], [1, 4], [1, 3], &mut rng)).collect();
        let mut buf = Vec::new();
        write_instances(&mut buf, &insts).unwrap();
        prop_assert_eq!(read_instances(buf.as_slice()).unwrap(), insts);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oracle_lower_bounds_random_solutions(kind in kind_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(kind, [3, 7], [1, 3], [1, 3], &mut rng);
        let opt = brute_force(&inst).unwrap();
        prop_assert!(validate(&opt.solution, &inst).is_ok());
        prop_assert_eq!(minmax_objective(&opt.solution, &inst).unwrap(), opt.objective);
        for _ in 0..100 {
            let o = minmax_objective(&random_solution(&inst, &mut rng), &inst).unwrap();
            prop_assert!(o >= opt.objective - 1e-12);
        }
    }
}
