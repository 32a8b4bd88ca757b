//! Randomized invariants that must hold for arbitrary well-formed inputs.

use proptest::prelude::*;

use gploo::hyper::{effective_sample_size, psis_smooth};
use gploo::inference::cavity_remove;
use gploo::loo::{compare, LooReport};
use gploo::math::log_sum_exp;

proptest! {
    /// Removing a site from a marginal and multiplying it back recovers the
    /// marginal exactly (up to rounding), for any site precision that leaves
    /// a proper cavity — including negative (improper-site) precisions.
    #[test]
    fn cavity_removal_round_trips(
        mean in -10.0f64..10.0,
        var in 1e-3f64..10.0,
        tau_frac in -5.0f64..0.99,
        nu in -10.0f64..10.0,
    ) {
        let tau = tau_frac / var;
        let cav = cavity_remove(mean, var, tau, nu).unwrap();
        let prec = 1.0 / cav.var + tau;
        let back_mean = (cav.mean / cav.var + nu) / prec;
        let back_var = 1.0 / prec;
        prop_assert!((back_var - var).abs() < 1e-9 * var);
        prop_assert!((back_mean - mean).abs() < 1e-8 * (1.0 + mean.abs()));
    }

    /// The effective sample size of normalized weights always lies in [1, S].
    #[test]
    fn effective_sample_size_is_bounded(
        raw in prop::collection::vec(-6.0f64..6.0, 1..120),
    ) {
        let total: f64 = raw.iter().map(|v| v.exp()).sum();
        let w: Vec<f64> = raw.iter().map(|v| v.exp() / total).collect();
        let s_eff = effective_sample_size(&w);
        prop_assert!(s_eff >= 1.0 - 1e-9, "S_eff = {s_eff}");
        prop_assert!(s_eff <= w.len() as f64 + 1e-9, "S_eff = {s_eff} > {}", w.len());
    }

    /// log-sum-exp commutes with constant shifts.
    #[test]
    fn log_sum_exp_shift_invariance(
        xs in prop::collection::vec(-50.0f64..50.0, 1..60),
        c in -100.0f64..100.0,
    ) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let lhs = log_sum_exp(&shifted);
        let rhs = log_sum_exp(&xs) + c;
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }

    /// Pareto smoothing is invariant to the (arbitrary) normalization of the
    /// log-weights and never pushes a weight above the raw maximum.
    #[test]
    fn psis_shift_invariance_and_max_cap(
        lw in prop::collection::vec(-4.0f64..4.0, 30..200),
        c in -50.0f64..50.0,
    ) {
        let r = psis_smooth(&lw).unwrap();
        let shifted: Vec<f64> = lw.iter().map(|v| v + c).collect();
        let rs = psis_smooth(&shifted).unwrap();
        match (r.khat, rs.khat) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-8, "khat {a} vs {b}"),
            (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
        }
        let max_raw = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let max_smooth = r.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(max_smooth <= max_raw + 1e-9);
    }

    /// Swapping reference and candidate negates the bias and keeps the spread.
    #[test]
    fn comparison_antisymmetry(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50),
    ) {
        let a = LooReport::new("a", pairs.iter().map(|p| Some(p.0)).collect());
        let b = LooReport::new("b", pairs.iter().map(|p| Some(p.1)).collect());
        let ab = compare(&a, &b).unwrap();
        let ba = compare(&b, &a).unwrap();
        prop_assert!((ab.bias + ba.bias).abs() < 1e-10);
        prop_assert!((ab.std - ba.std).abs() < 1e-10);
    }
}
