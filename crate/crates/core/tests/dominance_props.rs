use proptest::prelude::*;
use ssdalm::dominance::{
    fsd_dominates, separation_oracle, shortfall_dominates, ssd_dominates, DiscreteDistribution,
};

/// Half-integer atoms with probabilities in sixteenths, so the arithmetic is exact.
fn dyadic() -> impl Strategy<Value = DiscreteDistribution> {
    prop::collection::vec((-10i32..=10, 1u32..=4), 1..6).prop_map(|atoms| {
        let total: u32 = atoms.iter().map(|a| a.1).sum();
        let scale = 16.0 / total.next_power_of_two() as f64;
        let mut v: Vec<f64> = atoms.iter().map(|a| a.0 as f64 * 0.5).collect();
        let mut p: Vec<f64> = atoms.iter().map(|a| a.1 as f64 * scale / 16.0).collect();
        let rest = 1.0 - p.iter().sum::<f64>();
        if rest > 0.0 {
            v.push(0.0);
            p.push(rest);
        }
        DiscreteDistribution::new(&v, &p).unwrap()
    })
}

fn continuous() -> impl Strategy<Value = DiscreteDistribution> {
    prop::collection::vec((-10.0f64..10.0, 0.05f64..1.0), 1..8).prop_map(|atoms| {
        let s: f64 = atoms.iter().map(|a| a.1).sum();
        let v: Vec<f64> = atoms.iter().map(|a| a.0).collect();
        let p: Vec<f64> = atoms.iter().map(|a| a.1 / s).collect();
        DiscreteDistribution::new(&v, &p).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn lorenz_and_shortfall_agree_exactly(x in dyadic(), y in dyadic()) {
        prop_assert_eq!(ssd_dominates(&x, &y, 0.0).dominates, shortfall_dominates(&x, &y, 0.0).dominates);
    }

    #[test]
    fn dominance_is_reflexive(x in continuous()) {
        prop_assert!(ssd_dominates(&x, &x, 1e-12).dominates);
        prop_assert!(fsd_dominates(&x, &x, 0.0));
    }

    #[test]
    fn fsd_implies_ssd(x in continuous(), y in continuous()) {
        if fsd_dominates(&x, &y, 0.0) {
            prop_assert!(ssd_dominates(&x, &y, 1e-12).dominates);
        }
    }

    #[test]
    fn contraction_towards_the_mean_dominates(y in continuous(), lam in 0.0f64..=1.0, shift in 0.0f64..1.0) {
        let m = y.mean();
        let v: Vec<f64> = y.values().iter().map(|&a| lam * a + (1.0 - lam) * m + shift).collect();
        let x = DiscreteDistribution::new(&v, y.probs()).unwrap();
        prop_assert!(ssd_dominates(&x, &y, 1e-12).dominates);
        prop_assert!(x.mean() >= y.mean() - 1e-12);
    }

    #[test]
    fn ssd_implies_larger_mean(x in continuous(), y in continuous()) {
        if ssd_dominates(&x, &y, 0.0).dominates {
            prop_assert!(x.mean() >= y.mean() - 1e-12);
        }
    }

    #[test]
    fn integrated_cdf_is_convex_and_increasing(x in continuous(), a in -12.0f64..12.0, b in -12.0f64..12.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mid = 0.5 * (lo + hi);
        prop_assert!(x.integrated_cdf(lo) <= x.integrated_cdf(hi) + 1e-12);
        prop_assert!(x.integrated_cdf(mid) <= 0.5 * (x.integrated_cdf(lo) + x.integrated_cdf(hi)) + 1e-12);
    }

    #[test]
    fn separation_agrees_with_dominance(
        xs in prop::collection::vec(-8i32..=8, 1..6),
        bench in dyadic(),
    ) {
        let x: Vec<f64> = xs.iter().map(|&v| v as f64 * 0.5).collect();
        let n = x.len().next_power_of_two();
        let mut vals = x.clone();
        vals.resize(n, *x.last().unwrap());
        let probs = vec![1.0 / n as f64; n];
        let sep = separation_oracle(&vals, &probs, &bench);
        let xd = DiscreteDistribution::new(&vals, &probs).unwrap();
        prop_assert_eq!(sep.delta <= 0.0, ssd_dominates(&xd, &bench, 0.0).dominates);
        if sep.delta > 0.0 {
            let mass: f64 = sep.event.iter().map(|&k| probs[k]).sum();
            prop_assert!((mass - sep.event_prob).abs() < 1e-15);
        }
    }
}

mod sequential {
    use proptest::prelude::*;
    use ssdalm::dominance::{last_stage_sufficiency, SequentialProcess};
    use ssdalm::tree::TreeTopology;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        /// Terminal values of X built from Y's by contraction, shift and bonus
        /// satisfy the last-stage premise; the earlier stages must follow.
        #[test]
        fn last_stage_premise_propagates(
            branching in prop::collection::vec(1usize..4, 2..4),
            vals in prop::collection::vec(-5.0f64..5.0, 128),
            lam in 0.0f64..=1.0,
            bonus in prop::collection::vec(0.0f64..1.0, 64),
        ) {
            let stages: Vec<f64> = (0..=branching.len()).map(|s| s as f64).collect();
            let topo = TreeTopology::build(&stages, &branching).unwrap();
            let n = topo.num_nodes();
            let y: Vec<f64> = (0..n).map(|k| vals[k % 128]).collect();
            let mut x: Vec<f64> = (0..n).map(|k| vals[(k + 61) % 128]).collect();
            let last = topo.horizon() - 1;
            let mut cx = vec![0.0; n];
            let mut cy = vec![0.0; n];
            for id in 1..n {
                let a = topo.ancestor(id).unwrap();
                cx[id] = cx[a] + x[id];
                cy[id] = cy[a] + y[id];
            }
            for p in topo.stage_nodes(last) {
                let kids = topo.children(p);
                let ey: f64 = kids.iter().map(|&m| topo.conditional_prob(m) * y[m]).sum();
                for &m in kids {
                    x[m] = lam * y[m] + (1.0 - lam) * ey - (cx[p] - cy[p]) + bonus[m % 64];
                }
            }
            let xs = SequentialProcess::new(&topo, x);
            let ys = SequentialProcess::new(&topo, y);
            let rep = last_stage_sufficiency(&xs, &ys, 1e-10);
            prop_assert!(rep.premise);
            prop_assert!(rep.conclusion, "{:?}", rep.conclusion_checks);
        }
    }
}
