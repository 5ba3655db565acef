use etr_pcp::approx::{approx2, approx8, feasible_point, AffineEq, Approx8Mode};
use etr_pcp::constraint_core::{evaluate, evaluate_with, Constraint, Instance};
use etr_pcp::numerics::{rat, Rational};
use etr_pcp::reductions::{
    corrupt_block, corruption_report, extract_assignment, forward_witness, random_satisfiable_cq, reduce_cq_to_etrinv,
    satisfied_blocks,
};
use etr_pcp::seeds;
use proptest::prelude::*;
use rand::Rng;

fn atom(n: usize) -> impl Strategy<Value = Constraint> {
    prop_oneof![
        (0..n).prop_map(Constraint::Eq1),
        (0..n, 0..n).prop_map(|(x, y)| Constraint::Inv(x, y)),
        (0..n, 0..n, 0..n).prop_map(|(x, y, z)| Constraint::Add(x, y, z)),
    ]
}

fn etrinv() -> impl Strategy<Value = Instance> {
    (1usize..=4).prop_flat_map(|n| {
        prop::collection::vec(atom(n), 1..=7).prop_map(move |cs| Instance::etrinv(n, cs).unwrap())
    })
}

/// Every point of `grid^n`, as index tuples.
fn grid_points(n: usize, g: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..g.pow(n as u32)).map(move |mut k| {
        (0..n)
            .map(|_| {
                let d = k % g;
                k /= g;
                d
            })
            .collect()
    })
}

fn grid() -> Vec<Rational> {
    vec![rat(1, 2), rat(3, 4), rat(1, 1), rat(3, 2), rat(2, 1)]
}

fn is_add(c: &Constraint) -> bool {
    matches!(c, Constraint::Add(..))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn derandomized_approx8_meets_its_expectation(inst in etrinv()) {
        // expectation by enumerating {1,2}^n directly
        let mut total = 0usize;
        for p in grid_points(inst.n, 2) {
            let a: Vec<Rational> = p.iter().map(|&b| rat(b as i64 + 1, 1)).collect();
            total += evaluate(&inst, &a).unwrap().satisfied;
        }
        let expected = rat(total as i64, 1 << inst.n);
        let r = approx8(&inst, Approx8Mode::Derandomized).unwrap();
        prop_assert_eq!(r.expected, Some(etr_pcp::numerics::format_rational(&expected)));
        prop_assert!(rat(r.satisfied as i64, 1) >= expected);
        prop_assert_eq!(evaluate(&inst, &r.assignment).unwrap().satisfied, r.satisfied);
        let feasible = inst.constraints.iter().filter(|c| !matches!(c, Constraint::Add(x, y, z) if z == x || z == y)).count();
        prop_assert!(8 * r.satisfied >= feasible);
    }

    #[test]
    fn randomized_approx8_is_reproducible(inst in etrinv(), seed in any::<u64>()) {
        let a = approx8(&inst, Approx8Mode::Randomized { seed, trials: 5 }).unwrap();
        let b = approx8(&inst, Approx8Mode::Randomized { seed, trials: 5 }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn approx2_dominates_both_halves(inst in etrinv()) {
        let r = approx2(&inst, 1 << 20).unwrap();
        prop_assert!(!r.budget_exceeded);
        prop_assert!(r.assignment.iter().all(|v| *v >= rat(1, 2) && *v <= rat(2, 1)));
        prop_assert_eq!(evaluate(&inst, &r.assignment).unwrap().satisfied, r.satisfied);
        let non_add = inst.constraints.iter().filter(|c| !is_add(c)).count();
        let g = grid();
        let mut best_add = 0;
        for p in grid_points(inst.n, g.len()) {
            let a: Vec<Rational> = p.iter().map(|&i| g[i].clone()).collect();
            let rep = evaluate(&inst, &a).unwrap();
            let adds = inst.constraints.iter().zip(&rep.pass).filter(|(c, &ok)| ok && is_add(c)).count();
            best_add = best_add.max(adds);
        }
        prop_assert!(r.satisfied >= non_add.max(best_add));
    }

    #[test]
    fn feasible_point_agrees_with_grid(inst in etrinv()) {
        let eqs: Vec<AffineEq> = inst.constraints.iter().filter_map(|c| AffineEq::from_atom(c, inst.n)).collect();
        let sub = Instance::etrinv(inst.n, inst.constraints.iter().copied().filter(|c| !matches!(c, Constraint::Inv(..))).collect()).unwrap();
        let g = grid();
        let grid_ok = grid_points(inst.n, g.len()).any(|p| {
            let a: Vec<Rational> = p.iter().map(|&i| g[i].clone()).collect();
            evaluate(&sub, &a).unwrap().all_satisfied()
        });
        match feasible_point(inst.n, &eqs, &rat(1, 2), &rat(2, 1)) {
            Some(w) => {
                prop_assert!(w.iter().all(|v| *v >= rat(1, 2) && *v <= rat(2, 1)));
                prop_assert!(evaluate(&sub, &w).unwrap().all_satisfied());
            }
            None => prop_assert!(!grid_ok),
        }
    }

    #[test]
    fn evaluation_commutes_with_reordering(inst in etrinv(), vals in prop::collection::vec(0usize..5, 4), rot in 0usize..7) {
        let g = grid();
        let a: Vec<Rational> = vals[..inst.n].iter().map(|&i| g[i].clone()).collect();
        let rep = evaluate(&inst, &a).unwrap();
        let mut cs = inst.constraints.clone();
        let k = rot % cs.len();
        cs.rotate_left(k);
        let rep2 = evaluate(&Instance::etrinv(inst.n, cs).unwrap(), &a).unwrap();
        let mut pass = rep.pass.clone();
        pass.rotate_left(k);
        prop_assert_eq!(rep2.pass, pass);
        prop_assert_eq!(rep2.satisfied, rep.satisfied);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reduction_blocks_track_source_constraints(seed in any::<u64>(), m in 1usize..=4) {
        let q = rat(1, 64);
        let mut rng = seeds::stream(seed, 0);
        let (phi, _) = random_satisfiable_cq(&mut rng, &q, m);
        let (psi, trace) = reduce_cq_to_etrinv(&phi).unwrap();
        prop_assert_eq!(psi.constraints.len(), trace.block_size * phi.constraints.len());
        prop_assert!(trace.blocks.iter().all(|b| b.target_range.1 - b.target_range.0 == trace.block_size));

        // an arbitrary (mostly unsatisfying) grid assignment
        let x: Vec<Rational> = (0..phi.n).map(|_| rat(rng.gen_range(4..=16), 8)).collect();
        let src = evaluate(&phi, &x).unwrap();
        let w = forward_witness(&phi, &trace, &x).unwrap();
        let tgt = evaluate_with(&psi, &w).unwrap();
        let full = satisfied_blocks(&trace, &tgt.pass);
        for (i, ok) in src.pass.iter().enumerate() {
            if *ok {
                prop_assert!(full[i], "block {i} of a satisfied constraint is not satisfied");
            }
        }
        let back = extract_assignment(&w, &trace).unwrap();
        prop_assert!(back.iter().zip(&x).all(|(b, v)| b.as_rational().as_ref() == Some(v)));

        let mut bad = w.clone();
        for b in 0..trace.blocks.len() {
            if rng.gen_bool(0.5) {
                corrupt_block(&mut bad, &trace, b, &mut rng);
            }
        }
        let rep = corruption_report(&phi, &psi, &trace, &bad).unwrap();
        prop_assert!(rep.bound_holds);
        prop_assert!(rep.source_satisfied >= rep.blocks_fully_satisfied);
    }
}
