use cacheic::delayed_csit::{mat_slot_count, required_batch, simulate_delayed};
use cacheic::dof::{dof_delayed, dof_full, dof_mat_order, dof_mixed};
use cacheic::full_csit::simulate_full;
use cacheic::mixed::simulate_mixed;
use cacheic::model::{derived_dimensions, Demand, SystemConfig};
use cacheic::placement::{place_caches, verify_placement, CachePlacement};
use cacheic::ratio::{exact, frac, int, parse_exact, parse_rational};
use cacheic::rng::SeedTree;
use cacheic::trace::{simulate, verify_trace, write_trace, Regime};
use proptest::prelude::*;

/// (k_t, k_r, n, t_t, t_r) with t_t + t_r <= k_r, kept small.
fn small_config() -> impl Strategy<Value = (usize, usize, usize, usize, usize)> {
    (1usize..=3, 1usize..=4, 1usize..=3)
        .prop_flat_map(|(kt, kr, n)| (Just(kt), Just(kr), Just(n), 1..=kt.min(kr)))
        .prop_flat_map(|(kt, kr, n, tt)| (Just(kt), Just(kr), Just(n), Just(tt), 0..=kr - tt))
}

fn demand_for(cfg: &SystemConfig, picks: &[usize]) -> Demand {
    Demand::new((0..cfg.k_r).map(|k| picks[k] % cfg.n_files + 1).collect(), cfg).unwrap()
}

fn placed(cfg: &SystemConfig, b: usize) -> CachePlacement {
    place_caches(cfg, &derived_dimensions(cfg, b).unwrap(), &SeedTree::new(cfg.seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn slot_recursion_matches_order_dof(k in 1u64..=9, j_off in 0u64..9, n in 1i64..500) {
        let j = 1 + j_off % k;
        let t = mat_slot_count(k, j, &int(n));
        prop_assert_eq!(int(j as i64) * int(n) / t, dof_mat_order(k - j + 1, k, j).unwrap());
    }

    #[test]
    fn mixed_lies_between_the_pure_regimes(t_t in 1u64..30, t_r in 0u64..30, extra in 0u64..10, num in 0i64..=16) {
        let k_r = t_t + t_r + extra;
        let a = frac(num, 16);
        let d = dof_mixed(t_t, t_r, k_r, &a).unwrap();
        let lo = dof_delayed(t_t, t_r).unwrap();
        let hi = dof_full(t_t, t_r, k_r).unwrap();
        prop_assert!(lo <= d && d <= hi);
        prop_assert!(lo <= int((t_t + t_r) as i64));
    }

    #[test]
    fn exact_rationals_round_trip(n in -10_000i64..10_000, d in 1i64..10_000) {
        let r = frac(n, d);
        prop_assert_eq!(parse_exact(&exact(&r)).unwrap(), r.clone());
        prop_assert_eq!(parse_rational(&exact(&r)).unwrap(), r);
    }

    #[test]
    fn placement_budgets_hold(c in small_config(), seed in any::<u64>()) {
        let cfg = SystemConfig::from_t(c.0, c.1, c.2, c.3, c.4, seed).unwrap();
        prop_assert!(verify_placement(&placed(&cfg, 1), &cfg).is_empty());
    }

    #[test]
    fn full_csit_always_decodes(c in small_config(), seed in any::<u64>(), picks in prop::collection::vec(0usize..8, 4)) {
        let cfg = SystemConfig::from_t(c.0, c.1, c.2, c.3, c.4, seed).unwrap();
        let demand = demand_for(&cfg, &picks);
        let run = simulate_full(&cfg, &demand, &placed(&cfg, 1), 0..1).unwrap();
        prop_assert!(run.report.all_decoded());
        prop_assert_eq!(run.report.empirical_dof, Some(int((c.3 + c.4).min(c.1) as i64)));
    }

    #[test]
    fn delayed_csit_always_decodes(c in small_config(), seed in any::<u64>(), picks in prop::collection::vec(0usize..8, 4)) {
        let cfg = SystemConfig::from_t(c.0, c.1, c.2, c.3, c.4, seed).unwrap();
        let b = required_batch(c.3 + c.4, c.4 + 1);
        let demand = demand_for(&cfg, &picks);
        let run = simulate_delayed(&cfg, &demand, &placed(&cfg, b), 0..b).unwrap();
        prop_assert!(run.report.all_decoded());
        prop_assert_eq!(run.report.empirical_dof, Some(dof_delayed(c.3 as u64, c.4 as u64).unwrap()));
    }

    #[test]
    fn mixed_hits_the_time_sharing_line(seed in any::<u64>(), num in 0i64..=4) {
        let a = frac(num, 4);
        let cfg = SystemConfig::from_t(2, 3, 3, 2, 1, seed).unwrap().with_alpha(a.clone()).unwrap();
        let run = simulate_mixed(&cfg, &Demand::round_robin(&cfg), None).unwrap();
        prop_assert_eq!(run.report.empirical_dof, Some(dof_mixed(2, 1, 3, &a).unwrap()));
        let both = run.summary.slots_delayed + run.summary.slots_full;
        prop_assert_eq!(frac(run.summary.slots_delayed as i64, both as i64), a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Corrupting any line of a trace never panics the verifier; it
    /// either rejects the trace or reports a result.
    #[test]
    fn verifier_survives_corruption(line in 0usize..40, at in 0usize..400, byte in any::<u8>()) {
        let cfg = SystemConfig::from_t(2, 2, 2, 1, 1, 3).unwrap();
        let sim = simulate(Regime::Full, &cfg, &Demand::round_robin(&cfg), None).unwrap();
        let mut out = Vec::new();
        write_trace(&sim, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines: Vec<Vec<u8>> = text.lines().map(|l| l.as_bytes().to_vec()).collect();
        let n = lines.len();
        let l = &mut lines[line % n];
        let i = at % l.len();
        l[i] = byte;
        let joined = lines.join(&b'\n');
        let _ = verify_trace(&String::from_utf8_lossy(&joined));
    }
}
