use proptest::prelude::*;
use reeftip::manifold::{
    alpha_plus, alpha_star, bifurcation_branches, bifurcation_curve_lambda, coexistence_equilibrium, coral_free_equilibria,
    fold_point, layer_stability, pi_maximum, reduced_flow_regime, selects_branch, threshold_set, ManifoldError,
    RegimeItem, Stability, ThresholdOrdering,
};
use reeftip::model::{ModelParams, State3};

fn p(beta: f64, lambda: f64) -> ModelParams {
    ModelParams::new(lambda, beta, 0.22, 0.01)
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let left_neg = f(a) < 0.0;
    assert_ne!(left_neg, f(b) < 0.0, "oracle bracket");
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (f(m) < 0.0) == left_neg {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if f(x1) < f(x2) {
            a = x1;
        } else {
            b = x2;
        }
    }
    0.5 * (a + b)
}

#[test]
fn fold_point_maximises_sheet_coral() {
    let q = p(0.2, 0.2);
    let h0 = fold_point(0.4, &q).unwrap();
    let arg = golden(|h| q.coral_on_sheet(h, 0.4), 0.0, 50.0);
    assert!((h0 - arg).abs() < 1e-6, "{h0} vs {arg}");
    let e = 1e-6;
    assert!(q.q(h0 - e, 0.4) < 0.0 && q.q(h0 + e, 0.4) > 0.0);
}

#[test]
fn fold_point_below_floor() {
    assert!(matches!(fold_point(0.001, &p(0.2, 0.2)), Err(ManifoldError::Precondition(_))));
}

#[test]
fn coexistence_against_bisection() {
    let q = p(0.2, 0.2);
    let oracle = bisect(|h| q.lambda * h * q.s(h) - q.beta, 0.0, 100.0);
    let e = coexistence_equilibrium(0.3, &q).unwrap();
    assert!((e.h - oracle).abs() < 1e-10);
    assert!((e.h - 1.2798).abs() < 1e-4);
    assert_eq!(e.h, coexistence_equilibrium(0.45, &q).unwrap().h);
    assert_eq!(coexistence_equilibrium(0.3, &p(0.0, 0.2)).unwrap().h, 0.0);
}

#[test]
fn threshold_examples() {
    let q = p(0.2, 0.2);
    let t = threshold_set(&q).unwrap();
    assert!((t.alpha_plus - 0.6251).abs() < 1e-4);
    let s = q.s(t.h_i);
    let direct = q.lambda * s * s * (t.h_i + s * (1.0 + t.h_i).powi(2));
    assert!((t.alpha_star - direct).abs() < 1e-14);
    assert!((t.alpha_star - 0.65217).abs() < 1e-5);
    let via_q = bisect(|a| q.q(t.h_i, a), 0.0, 10.0);
    assert!((via_q - t.alpha_star).abs() < 1e-12);
    assert_eq!(t.ordering, ThresholdOrdering::PlusHatStar);
    assert!((threshold_set(&p(0.4, 0.6)).unwrap().alpha_hat - 0.4676).abs() < 5e-4);
    let z = threshold_set(&p(0.0, 0.3)).unwrap();
    assert!((z.alpha_plus - 0.22).abs() < 1e-15);
    assert!((z.alpha_star - 0.3 * 0.22f64.powi(3)).abs() < 1e-15);
}

#[test]
fn coral_free_branches() {
    let q = p(0.2, 0.2);
    let (h_hat, a_hat) = pi_maximum(&q).unwrap();
    assert!(coral_free_equilibria(a_hat + 1e-3, &q).unwrap().is_empty());
    let tangent = coral_free_equilibria(a_hat, &q).unwrap();
    assert_eq!(tangent.len(), 1);
    assert!((tangent[0] - h_hat).abs() < 1e-8);
    let at_d = coral_free_equilibria(0.22, &q).unwrap();
    assert_eq!(at_d[0], 0.0);
    assert!(at_d[1] > 0.0 && (q.pi(at_d[1]) - 0.22).abs() < 1e-12);
    let two = coral_free_equilibria(0.4, &q).unwrap();
    let h0 = fold_point(0.4, &q).unwrap();
    assert!(two[0] < h0 && h0 < two[1]);
}

#[test]
fn layer_examples() {
    let q = p(0.2, 0.2);
    assert_eq!(layer_stability(State3::new(0.0, 0.0, 0.5), 0.4, &q).unwrap().stability, Stability::Repelling);
    let alpha = 0.4;
    let a_tc = alpha / q.d;
    let below = layer_stability(State3::new(0.0, 0.5 * a_tc.min(1.0), 1.0 - 0.5 * a_tc.min(1.0)), alpha, &q).unwrap();
    assert_eq!(below.stability, Stability::Attracting);
    let h0 = fold_point(alpha, &q).unwrap();
    let h = h0 + 1.0;
    let pt = State3::new(h, q.algae_on_sheet(h, alpha), q.coral_on_sheet(h, alpha));
    assert_eq!(layer_stability(pt, alpha, &q).unwrap().stability, Stability::Attracting);
    assert!(matches!(layer_stability(State3::new(1.0, 0.9, 0.9), alpha, &q), Err(ManifoldError::OffManifold(_))));
}

#[test]
fn transcritical_on_algae_branch() {
    let q = ModelParams::new(0.2, 0.2, 0.5, 0.01);
    let alpha = 0.2;
    let a = alpha / q.d;
    let st = layer_stability(State3::new(0.0, a, 1.0 - a), alpha, &q).unwrap();
    assert_eq!(st.stability, Stability::NonHyperbolic);
}

#[test]
fn regime_items() {
    let q = p(0.2, 0.2);
    let t = threshold_set(&q).unwrap();
    let low = reduced_flow_regime(0.3, &q).unwrap();
    assert_eq!(low.item, RegimeItem::BelowBoth);
    assert_eq!(low.h_nc_r.unwrap().stability, Stability::Attracting);
    assert_eq!(low.h_nc_a.unwrap().stability, Stability::Repelling);
    assert_eq!(low.h_i.stability, Stability::Attracting);
    assert_eq!(reduced_flow_regime(t.alpha_plus, &q).unwrap().item, RegimeItem::TranscriticalPlus);
    let r = p(0.1, 0.6);
    let tr = threshold_set(&r).unwrap();
    assert!(tr.alpha_star < tr.alpha_plus);
    let mid = reduced_flow_regime(0.5 * (tr.alpha_star + tr.alpha_plus), &r).unwrap();
    assert_eq!(mid.item, RegimeItem::StarToPlus);
    assert_eq!(mid.h_i.stability, Stability::Repelling);
}

#[test]
fn curve_without_real_branch() {
    assert!(matches!(bifurcation_curve_lambda(0.3, 0.22), Err(ManifoldError::NoRealCurve(_))));
}

#[test]
fn curve_against_bisection() {
    for beta in [0.05, 0.1, 0.15] {
        let lc = bifurcation_curve_lambda(beta, 0.22).unwrap().unwrap();
        let gap = |l: f64| alpha_star(&p(beta, l)) - alpha_plus(&p(beta, l));
        let oracle = bisect(gap, 1e-3, 0.999);
        assert!((lc - oracle).abs() < 1e-8, "beta {beta}: {lc} vs {oracle}");
        let t = threshold_set(&p(beta, lc)).unwrap();
        assert!((t.alpha_plus - t.alpha_star).abs() < 1e-8);
        assert!((t.alpha_hat - t.alpha_plus).abs() < 1e-8);
        let disc = 4.0 * beta * 0.22 * (2.0 * beta - 1.0) + (3.0 * beta - 1.0).powi(2);
        let other = bifurcation_branches(beta, 0.22, disc).into_iter().find(|l| (l - lc).abs() > 1e-9).unwrap();
        assert!(!selects_branch(beta, other, 0.22) || !(0.0..1.0).contains(&other));
    }
}

#[test]
fn curve_at_half_agrees_with_sign_scan() {
    for d in [0.05, 0.22] {
        assert_eq!(bifurcation_curve_lambda(0.5, d).unwrap(), None);
        for k in 1..1000 {
            let q = ModelParams::new(k as f64 / 1000.0, 0.5, d, 0.01);
            assert!(alpha_star(&q) > alpha_plus(&q));
        }
    }
}

#[test]
fn selected_branch_in_range() {
    let disc = |b: f64| 4.0 * b * 0.22 * (2.0 * b - 1.0) + (3.0 * b - 1.0).powi(2);
    let [_, minus] = bifurcation_branches(0.45, 0.22, disc(0.45));
    assert!(minus > 0.0 && minus < 1.0 && !selects_branch(0.45, minus, 0.22));
    assert_eq!(bifurcation_curve_lambda(0.45, 0.22).unwrap(), None);
}

fn params() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.02..0.9f64, 0.02..1.0f64, 0.05..0.5f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn below_selection_line_star_exceeds_plus(frac in 0.01..0.999f64, bfrac in 0.01..0.99f64, d in 0.05..0.5f64) {
        let beta = bfrac / (2.0 + 2.0 * d);
        let lambda = frac * beta * beta / (1.0 - 2.0 * beta - 2.0 * beta * d);
        let q = ModelParams::new(lambda, beta, d, 0.01);
        prop_assert!(alpha_star(&q) - alpha_plus(&q) > 0.0);
    }

    #[test]
    fn no_regime_reentry(lambda in 0.05..1.0f64, d in 0.05..0.5f64) {
        let mut seen_plus_first = false;
        for k in 1..200 {
            let beta = k as f64 / 200.0;
            let t = threshold_set(&ModelParams::new(lambda, beta, d, 0.01)).unwrap();
            match t.ordering {
                ThresholdOrdering::PlusHatStar => seen_plus_first = true,
                ThresholdOrdering::StarPlusHat => prop_assert!(!seen_plus_first, "re-entry at beta {}", beta),
                ThresholdOrdering::Coincident => {}
            }
        }
    }

    #[test]
    fn ordering_law((beta, lambda, d) in params()) {
        let t = threshold_set(&ModelParams::new(lambda, beta, d, 0.01)).unwrap();
        prop_assume!((t.h_i - t.h_hat).abs() > 1e-9);
        if t.h_i > t.h_hat {
            prop_assert!(t.alpha_plus < t.alpha_hat && t.alpha_hat < t.alpha_star);
        } else {
            prop_assert!(t.alpha_star < t.alpha_plus && t.alpha_plus < t.alpha_hat);
        }
    }

    #[test]
    fn layer_eigenvalues_match_differences((beta, lambda, d) in params(), alpha_off in 0.01..0.3f64, h in 0.05..10.0f64) {
        let q = ModelParams::new(lambda, beta, d, 0.01);
        let alpha = d + alpha_off;
        let pt = State3::new(h, q.algae_on_sheet(h, alpha), q.coral_on_sheet(h, alpha));
        let st = layer_stability(pt, alpha, &q).unwrap();
        let y = pt.to_array();
        let mut j = [[0.0; 2]; 2];
        for k in 0..2 {
            let e = 1e-6 * (1.0 + y[k].abs());
            let (mut yp, mut ym) = (y, y);
            yp[k] += e;
            ym[k] -= e;
            let fp = q.rhs_fast(State3::from_slice(&yp), alpha);
            let fm = q.rhs_fast(State3::from_slice(&ym), alpha);
            for i in 0..2 {
                j[i][k] = (fp[i] - fm[i]) / (2.0 * e);
            }
        }
        let tr = j[0][0] + j[1][1];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let st_tr = st.eigenvalues[0].0 + st.eigenvalues[1].0;
        let st_det = st.eigenvalues[0].0 * st.eigenvalues[1].0 + st.eigenvalues[1].1 * st.eigenvalues[1].1;
        let scale = tr.abs().max(det.abs().sqrt()).max(1e-3);
        prop_assert!((tr - st_tr).abs() < 1e-5 * scale, "tr {} vs {}", tr, st_tr);
        prop_assert!((det - st_det).abs() < 1e-5 * scale * scale, "det {} vs {}", det, st_det);
    }
}
