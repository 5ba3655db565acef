use etr_pcp::assignment_tester::{codeword, series_point};
use etr_pcp::linear_test::{estimate_linear, kernel_basis, kernel_basis_rref, linear_test_exact, IntegerMatrix, LinearTestSpec};
use etr_pcp::midpoint_code::{self as mc, AbelianGroup, CodeParams, ProofString};
use etr_pcp::numerics::{rat, Group, GroupElement, Rational};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use proptest::prelude::*;

fn group() -> impl Strategy<Value = Group> {
    prop_oneof![Just(Group::AddQ), Just(Group::MulQ), Just(Group::ModP(31))]
}

fn elem(g: Group, v: i64) -> GroupElement {
    g.element_from_int(v).unwrap()
}

fn matrix() -> impl Strategy<Value = Vec<Vec<i64>>> {
    (1usize..=6).prop_flat_map(|n| {
        let row = prop::collection::vec(prop::collection::vec(0..n, 1..=3), 1..=n).prop_map(move |rows| {
            rows.into_iter()
                .map(|pos| {
                    let mut r = vec![0i64; n];
                    for (k, p) in pos.into_iter().enumerate() {
                        r[p] += if k % 2 == 0 { 1 } else { -1 };
                    }
                    r
                })
                .collect::<Vec<_>>()
        });
        row
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn both_kernel_constructions_agree(rows in matrix(), coeffs in prop::collection::vec(-9i64..=9, 6)) {
        let m = IntegerMatrix::from_rows(&rows).unwrap();
        let (a, b) = (kernel_basis(&m), kernel_basis_rref(&m));
        prop_assert_eq!(a.dim(), b.dim());
        prop_assert!(a.denominator.is_positive() && b.denominator.is_positive());
        for k in [&a, &b] {
            for v in &k.basis {
                prop_assert!(m.apply(v).iter().all(|x| x.is_zero()));
            }
        }
        // a kernel point from one basis is reconstructed by the other
        let c: Vec<BigInt> = coeffs[..a.dim()].iter().map(|&x| BigInt::from(x)).collect();
        let p = a.combine(&c);
        prop_assert_eq!(b.reconstruct(&p), p.clone());
        prop_assert_eq!(a.reconstruct(&p), p);
    }

    #[test]
    fn honest_codewords_pass_and_decode(g in group(), k1 in 2i128..=12, k2f in 0.0f64..1.0, a0 in 1i64..9, g0 in 1i64..9) {
        let k2 = 1 + ((k1 - 2) as f64 * k2f) as i128;
        let params = CodeParams::new(1, k1, k2).unwrap();
        let alpha = elem(g, a0);
        let a = mc::encode(&[alpha.clone()], elem(g, g0), &params, &g).unwrap();
        let (ok, total) = mc::midpoint_exhaustive(&a).unwrap();
        prop_assert_eq!(ok, total);
        for d in -k1..=k1 {
            for x in 0.max(-d)..=k1.min(k1 - d) {
                prop_assert_eq!(mc::decode_at(&a, &[x], &[d]), g.times(d, &alpha));
            }
        }
    }

    #[test]
    fn grid_fraction_bound(k1 in 4i128..200, d in prop::collection::vec(-3i128..=3, 1..=3), seed in any::<u64>()) {
        let params = CodeParams::new(d.len(), k1, 1).unwrap();
        let trials = 4000;
        let est = mc::grid_fraction(&params, &d, trials, seed);
        let l1: i128 = d.iter().map(|x| x.abs()).sum();
        let bound = 1.0 - l1 as f64 / (k1 + 1) as f64;
        let sigma = (bound.max(0.0) * (1.0 - bound).max(0.0) / trials as f64).sqrt();
        prop_assert!(est.rate >= bound - 3.0 * sigma - 1e-9, "{} < {}", est.rate, bound);
    }

    #[test]
    fn linear_test_complete_in_every_group(g in group(), a0 in 1i64..6, a1 in 1i64..6, rows in prop::collection::vec((-1i64..=1, -1i64..=1), 1..4)) {
        let rows: Vec<Vec<i64>> = rows.into_iter().map(|(x, y)| vec![x, y]).filter(|r| r.iter().any(|&c| c != 0)).collect();
        prop_assume!(!rows.is_empty());
        let m = IntegerMatrix::from_rows(&rows).unwrap();
        let params = CodeParams::new(2, 6, 2).unwrap();
        let spec = LinearTestSpec::with_params(m, params.clone()).unwrap();
        let gv = [elem(g, a0), elem(g, a1)];
        let a = mc::encode(&gv, elem(g, 2), &params, &g).unwrap();
        let alpha: Vec<GroupElement> = rows
            .iter()
            .map(|r| r.iter().zip(&gv).fold(g.identity(), |acc, (&c, v)| g.op(&acc, &g.times(c as i128, v))))
            .collect();
        prop_assert_eq!(linear_test_exact(&spec, &alpha, &a).unwrap(), Rational::one());
        let est = estimate_linear(&spec, &alpha, &a, 500, 1);
        prop_assert_eq!(est.successes, est.trials);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mode_is_linear_under_sparse_corruption(g in group(), seed in any::<u64>(), a0 in 1i64..6, a1 in 1i64..6) {
        let params = CodeParams::new(2, 64, 4).unwrap();
        let alpha = [elem(g, a0), elem(g, a1)];
        let mut a: ProofString<Group> = mc::encode(&alpha, elem(g, 3), &params, &g).unwrap();
        let mut rng = etr_pcp::seeds::stream(seed, 0);
        for _ in 0..20 {
            let x = mc::sample_point(&mut rng, &params);
            a.corrupt(x, elem(g, 7)).unwrap();
        }
        for d in mc::l1_ball(2, 2) {
            if d.iter().all(|&c| c == 0) {
                continue;
            }
            let rep = mc::mode_statistic(&a, &d, 1 << 16, seed).unwrap();
            let want = d.iter().zip(&alpha).fold(g.identity(), |acc, (&c, v)| g.op(&acc, &g.times(c, v)));
            prop_assert_eq!(rep.value, want);
            prop_assert!(rep.frequency >= 0.97);
        }
    }

    /// Two distinct inputs of the multiplicative error-correcting function
    /// agree on at most half of the `2^n` coordinates.
    #[test]
    fn error_correcting_function_distance(
        x in prop::collection::vec(0usize..7, 1..=8),
        y in prop::collection::vec(0usize..7, 1..=8),
    ) {
        let grid = [rat(1, 2), rat(3, 4), rat(1, 1), rat(5, 4), rat(3, 2), rat(7, 4), rat(2, 1)];
        let n = x.len().min(y.len());
        let (xa, ya): (Vec<Rational>, Vec<Rational>) =
            ((0..n).map(|i| grid[x[i]].clone()).collect(), (0..n).map(|i| grid[y[i]].clone()).collect());
        prop_assume!(xa != ya);
        let (sx, sy) = (series_point(&xa), series_point(&ya));
        let agree = (0..1u128 << n).filter(|&s| codeword(&sx, s).certified_eq(&codeword(&sy, s))).count();
        prop_assert!(agree <= 1 << (n - 1), "{agree} of {}", 1 << n);
    }
}
