mod common;

use common::{mean_var, recount, ref_allocation, ref_period};
use mlmc_grad::estimators::{self, coupled_sample_cost, single_sample_cost};
use mlmc_grad::nsde::{layout, HedgeNet, PARAM_LEN};
use mlmc_grad::{DelayState, MarketParams, ParamVector, RateParams};
use proptest::prelude::*;

fn rates(b: f64, c: f64, d: f64, lmax: u32) -> RateParams {
    RateParams { b, c, d, lmax }
}

#[test]
fn pinned_allocation_oracle() {
    let oracle = ref_allocation(1000, 1.8, 1.0, 6);
    assert_eq!(oracle, vec![622, 236, 90, 34, 13, 5, 2]);
    let alloc = estimators::allocate(1000, &rates(1.8, 1.0, 1.0, 6)).unwrap();
    assert_eq!(alloc.counts, oracle);
}

#[test]
fn allocation_edge_cases() {
    assert_eq!(estimators::allocate(100, &rates(3.0, 0.5, 1.0, 0)).unwrap().counts, vec![100]);
    assert_eq!(estimators::allocate(1, &RateParams::default()).unwrap().counts, vec![1; 7]);
    assert!(estimators::allocate(0, &RateParams::default()).is_err());
    // b <= c only warns
    assert!(estimators::allocate(10, &rates(0.5, 1.0, 1.0, 3)).is_ok());
}

#[test]
fn period_examples() {
    assert_eq!(estimators::delay_period(0, 1.0), 1);
    assert_eq!(estimators::delay_period(3, 1.0), 8);
    assert_eq!(estimators::delay_period(4, 0.5), 4);
    assert_eq!(estimators::tau(5, 2, 1.0), 4);
    assert_eq!(estimators::tau(13, 3, 1.0), 8);
    for l in 0..7 {
        assert_eq!(estimators::tau(0, l, 0.7), 0);
    }
}

#[test]
fn periods_match_extended_precision() {
    for &d in &[0.1, 0.25, 0.5, 0.7, 1.0, 1.3, 1.5, 2.0] {
        for l in 0..=12 {
            assert_eq!(estimators::delay_period(l, d), ref_period(l, d), "l={l} d={d}");
        }
    }
}

#[test]
fn sample_costs() {
    assert_eq!(coupled_sample_cost(0), 1);
    assert_eq!(coupled_sample_cost(1), 3);
    assert_eq!(coupled_sample_cost(6), 96);
    assert_eq!(single_sample_cost(6), 64);
}

#[test]
fn naive_and_mlmc_meters() {
    let r = rates(1.8, 1.0, 1.0, 4);
    let x = HedgeNet::init(3);
    let mp = MarketParams::default();
    let naive = estimators::naive_gradient(&x, 3, &r, &mp, 0, 1).unwrap();
    assert_eq!((naive.work, naive.span), (3 * 16, 16));
    assert_eq!(naive.levels_refreshed, vec![4]);
    let alloc = estimators::allocate(20, &r).unwrap();
    let ml = estimators::mlmc_gradient(&x, &alloc, &r, &mp, 0, 1).unwrap();
    let recount: u64 = (0..=4).map(|l| alloc.counts[l as usize] * coupled_sample_cost(l)).sum();
    assert_eq!(ml.work, recount);
    assert_eq!(ml.span, 24);
}

#[test]
fn single_level_mlmc_is_naive() {
    let r = rates(1.8, 1.0, 1.0, 0);
    let x = HedgeNet::init(4);
    let mp = MarketParams::default();
    let alloc = estimators::allocate(7, &r).unwrap();
    let ml = estimators::mlmc_gradient(&x, &alloc, &r, &mp, 2, 9).unwrap();
    let nv = estimators::naive_gradient(&x, 7, &r, &mp, 2, 9).unwrap();
    assert_eq!(ml.gradient, nv.gradient);
}

#[test]
fn frozen_mlmc_is_level_zero_gradient() {
    let r = RateParams::default();
    let mp = MarketParams::default().frozen();
    let mut x = HedgeNet::init(5);
    x.as_mut_slice()[layout::P0] = 0.25;
    let alloc = estimators::allocate(16, &r).unwrap();
    let ml = estimators::mlmc_gradient(&x, &alloc, &r, &mp, 0, 2).unwrap();
    let nv = estimators::naive_gradient(&x, 3, &r, &mp, 0, 2).unwrap();
    // (0 - p0)^2 differentiates to 2 p0 in the price coordinate only
    for (i, (a, b)) in ml.gradient.iter().zip(&nv.gradient).enumerate() {
        let want = if i == layout::P0 { 0.5 } else { 0.0 };
        assert!((a - want).abs() < 1e-15 && (b - want).abs() < 1e-15, "coord {i}");
    }
}

#[test]
fn delayed_first_step_equals_mlmc_and_small_schedule() {
    let r = rates(1.8, 1.0, 1.0, 2);
    let x = HedgeNet::init(6);
    let mp = MarketParams::default();
    let alloc = estimators::allocate(8, &r).unwrap();
    let mut state = DelayState::new(&r, PARAM_LEN);
    let d0 = estimators::delayed_gradient(0, &x, &mut state, &alloc, &r, &mp, 3).unwrap();
    let ml = estimators::mlmc_gradient(&x, &alloc, &r, &mp, 0, 3).unwrap();
    assert_eq!(d0.gradient, ml.gradient);
    assert_eq!((0..=2).map(|l| state.tau(l)).collect::<Vec<_>>(), vec![0, 0, 0]);
    let d1 = estimators::delayed_gradient(1, &x, &mut state, &alloc, &r, &mp, 3).unwrap();
    assert_eq!(d1.levels_refreshed, vec![0]);
    assert_eq!(d1.span, 1);
    assert!(estimators::delayed_gradient(3, &x, &mut state, &alloc, &r, &mp, 3).is_err());
}

#[test]
fn delayed_schedule_matches_recount() {
    let r = rates(1.8, 1.0, 1.0, 4);
    let mp = MarketParams::default();
    let x = HedgeNet::init(8);
    let alloc = estimators::allocate(4, &r).unwrap();
    let mut state = DelayState::new(&r, PARAM_LEN);
    let t_total = 100;
    let (mut work, mut span) = (0, 0);
    let mut refreshes = vec![0u64; 5];
    for t in 0..t_total {
        let g = estimators::delayed_gradient(t, &x, &mut state, &alloc, &r, &mp, 5).unwrap();
        state.check_invariants().unwrap();
        assert!(g.work >= g.span && g.span > 0);
        for &l in &g.levels_refreshed {
            refreshes[l as usize] += 1;
            assert_eq!(state.tau(l), t);
        }
        work += g.work;
        span += g.span;
    }
    let (want_ref, want_work, want_span) = recount(t_total, 1.0, 4, &alloc.counts);
    assert_eq!(refreshes, want_ref);
    assert_eq!((work, span), (want_work, want_span));
}

#[test]
fn naive_and_mlmc_agree_in_mean() {
    let r = rates(1.8, 1.0, 1.0, 3);
    let mp = MarketParams::default();
    let mut x = HedgeNet::init(12);
    x.as_mut_slice()[layout::P0] = 0.2;
    let alloc = estimators::allocate(4, &r).unwrap();
    let reps = 2000u64;
    let coords = [layout::P0, layout::B3, layout::W3 + 5, layout::W1 + 1];
    let mut a = vec![Vec::new(); coords.len()];
    let mut b = vec![Vec::new(); coords.len()];
    for t in 0..reps {
        let nv = estimators::naive_gradient(&x, 1, &r, &mp, t, 100).unwrap();
        let ml = estimators::mlmc_gradient(&x, &alloc, &r, &mp, t, 200).unwrap();
        for (k, &i) in coords.iter().enumerate() {
            a[k].push(nv.gradient[i]);
            b[k].push(ml.gradient[i]);
        }
    }
    for k in 0..coords.len() {
        let (ma, va) = mean_var(&a[k]);
        let (mb, vb) = mean_var(&b[k]);
        let se = ((va + vb) / reps as f64).sqrt();
        assert!((ma - mb).abs() <= 3.0 * se, "coord {}: {ma} vs {mb} (se {se})", coords[k]);
    }
}

#[test]
fn mlmc_variance_below_naive_at_equal_work() {
    let r = RateParams::default();
    let mp = MarketParams::default();
    let x = HedgeNet::init(1);
    let alloc = estimators::allocate(8, &r).unwrap();
    // naive buys at least as many steps as MLMC spends
    let n_naive = alloc.work().div_ceil(single_sample_cost(r.lmax));
    let reps = 1000u64;
    let mut naive = vec![Vec::new(); PARAM_LEN];
    let mut ml = vec![Vec::new(); PARAM_LEN];
    for t in 0..reps {
        let g = estimators::naive_gradient(&x, n_naive, &r, &mp, t, 31).unwrap().gradient;
        let h = estimators::mlmc_gradient(&x, &alloc, &r, &mp, t, 32).unwrap().gradient;
        for i in 0..PARAM_LEN {
            naive[i].push(g[i]);
            ml[i].push(h[i]);
        }
    }
    let total = |v: &Vec<Vec<f64>>| v.iter().map(|c| mean_var(c).1).sum::<f64>();
    let (vn, vm) = (total(&naive), total(&ml));
    assert!(vm <= vn, "MLMC variance {vm} vs naive {vn} (naive n = {n_naive})");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn allocation_matches_oracle(n in 1u64..100_000, b in 0.2f64..4.0, c in 0.2f64..3.0, lmax in 0u32..12) {
        let got = estimators::allocate(n, &rates(b, c, 1.0, lmax)).unwrap();
        prop_assert_eq!(got.counts, ref_allocation(n, b, c, lmax));
    }

    #[test]
    fn allocation_monotone_and_covering(n in 1u64..1_000_000, b in 0.01f64..5.0, c in 0.01f64..5.0, lmax in 0u32..16) {
        let got = estimators::allocate(n, &rates(b, c, 1.0, lmax)).unwrap();
        prop_assert!(got.counts.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(got.counts.iter().all(|&k| k >= 1));
        prop_assert!(got.counts.iter().sum::<u64>() >= n);
    }

    #[test]
    fn tau_constraints(t in 0u64..1_000_000, level in 0u32..20, d in 0.05f64..2.0) {
        let p = estimators::delay_period(level, d);
        let tau = estimators::tau(t, level, d);
        prop_assert!(tau <= t && t - tau < p && tau.is_multiple_of(p));
    }
}

#[test]
fn param_vector_length_enforced() {
    assert!(ParamVector::from_vec(vec![0.0; PARAM_LEN - 1]).is_err());
}
