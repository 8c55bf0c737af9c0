use std::f64::consts::PI;

use frakra::constants::{eval_constants, stability_constants, unit_ball_volume, FracParams, Sigma1Branch};
use frakra::quadrature::GaussRule;

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn half_order() -> FracParams {
    FracParams::new(2, 0.5, 2.0).unwrap()
}

/// ∫_{R^2} P_1(w) |w|^s dw by composite Gauss in log r plus the analytic tail.
fn holder_tail_by_quadrature(s: f64, beta: f64) -> f64 {
    let rule = GaussRule::new(24);
    let f = |r: f64| r.powf(1.0 + s) * (1.0 + r * r).powf(-1.0 - s);
    let (lo, hi) = ((1e-12f64).ln(), (1e4f64).ln());
    let panels = 200;
    let mut acc = 0.0;
    for p in 0..panels {
        let a = lo + (hi - lo) * p as f64 / panels as f64;
        let b = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
        acc += rule.integrate(a, b, |lr| {
            let r = lr.exp();
            f(r) * r
        });
    }
    // r^{1+s} (1 + r^2)^{-1-s} = r^{-1-s} - (1 + s) r^{-3-s} + O(r^{-5-s})
    let big = 1e4f64;
    let tail = big.powf(-s) / s - (1.0 + s) * big.powf(-2.0 - s) / (2.0 + s);
    2.0 * PI * beta * (acc + tail)
}

#[test]
fn plane_half_order_is_direct_substitution() {
    let c = eval_constants(&half_order()).unwrap();
    assert!(rel(c.omega_n, PI) < 1e-15);
    assert_eq!(c.two_star_s, 4.0);
}

#[test]
fn half_order_gamma_ratios_cancel() {
    let c = eval_constants(&half_order()).unwrap();
    assert!(rel(c.beta, 1.0 / (2.0 * PI)) < 1e-10, "beta = {}", c.beta);
    assert!(rel(c.gamma, 4.0 * PI) < 1e-10, "gamma = {}", c.gamma);
    assert!(rel(c.c2, 1.0 / 18.0) < 1e-10, "c2 = {}", c.c2);
}

#[test]
fn isoperimetric_theta_printed_formula() {
    let c = eval_constants(&half_order()).unwrap();
    let expected = PI.sqrt() * (2.0 - 2f64.sqrt()).powi(3) / (181.0f64.powi(2) * 2f64.powi(13));
    assert!(rel(c.theta, expected) < 1e-13);
    assert!(rel(c.theta, 1.3275e-9) < 1e-3);
}

#[test]
fn all_fields_positive_over_parameter_grid() {
    for n in 2..=4 {
        for &s in &[0.05, 0.25, 0.5, 0.75, 0.99] {
            let p = FracParams::new(n, s, 1.0).unwrap();
            let crit = p.two_star_s();
            for &frac in &[0.0, 0.3, 0.9] {
                let c = eval_constants(&p.with_q(1.0 + frac * (crit - 1.0))).unwrap();
                for v in [c.omega_n, c.two_star_s, c.beta, c.d_s, c.c_ns, c.gamma, c.theta, c.c1, c.c2, c.holder_tail] {
                    assert!(v > 0.0 && v.is_finite());
                }
            }
        }
    }
}

#[test]
fn algebraic_identities_hold() {
    for n in 2..=5 {
        for &s in &[0.1, 0.33, 0.5, 0.8] {
            let p = FracParams::new(n, s, 1.2).unwrap();
            let c = eval_constants(&p).unwrap();
            let nf = n as f64;
            assert!(rel(c.gamma * c.c_ns, 2.0 * c.d_s) < 1e-12);
            assert!(rel(c.c1, 2.0 * nf * c.omega_n.powf(1.0 / nf) * c.theta * c.gamma) < 1e-13);
            assert!(rel(c.c2, (2.0 / 1.2 + 2.0 * s / nf - 1.0) / 9.0) < 1e-13);
        }
    }
}

#[test]
fn unit_ball_volumes() {
    assert!(rel(unit_ball_volume(2), PI) < 1e-14);
    assert!(rel(unit_ball_volume(3), 4.0 * PI / 3.0) < 1e-14);
    assert!(rel(unit_ball_volume(4), PI * PI / 2.0) < 1e-14);
}

#[test]
fn holder_tail_matches_quadrature() {
    for &s in &[0.2, 0.5, 0.8] {
        let c = eval_constants(&FracParams::new(2, s, 2.0).unwrap()).unwrap();
        let quad = holder_tail_by_quadrature(s, c.beta);
        assert!(rel(c.holder_tail, quad) < 1e-6, "s = {s}: {} vs {quad}", c.holder_tail);
    }
}

#[test]
fn c2_tends_to_local_value_as_order_grows() {
    let q = 2.5;
    let limit = (2.0 / q + 2.0 / 2.0 - 1.0) / 9.0;
    let gaps: Vec<f64> = [0.6, 0.8, 0.9, 0.99, 0.999]
        .iter()
        .map(|&s| (eval_constants(&FracParams::new(2, s, q).unwrap()).unwrap().c2 - limit).abs())
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]));
    assert!(*gaps.last().unwrap() < 1e-3);
}

#[test]
fn invalid_parameters_are_rejected() {
    for (n, s, q) in [(2, 1.2, 2.0), (2, 0.0, 2.0), (2, 1.0, 2.0), (1, 0.5, 2.0), (2, 0.5, 4.0), (2, 0.5, 0.9)] {
        assert!(FracParams::new(n, s, q).is_err(), "({n}, {s}, {q})");
    }
    let bad = FracParams { n: 2, s: 0.5, q: 5.0 };
    assert!(eval_constants(&bad).is_err());
}

#[test]
fn evaluation_is_bitwise_deterministic() {
    let p = FracParams::new(3, 0.37, 1.7).unwrap();
    let a = eval_constants(&p).unwrap();
    let b = eval_constants(&p).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    let sa = stability_constants(&a, &p, 20.0, 0.04).unwrap();
    let sb = stability_constants(&b, &p, 20.0, 0.04).unwrap();
    assert_eq!(sa, sb);
}

#[test]
fn sigma1_is_the_smaller_printed_branch() {
    let p = half_order();
    let c = eval_constants(&p).unwrap();
    let (lambda_ball, torsion_ball) = (23.1, 0.049);
    let st = stability_constants(&c, &p, lambda_ball, torsion_ball).unwrap();
    let (s, n) = (0.5, 2.0f64);
    let easy = c.c2 / (1.0 + c.c2) * (1.0 - s) * lambda_ball / 2f64.powf(3.0 / s);
    let main = 3.0 / 256.0
        * (c.c1 / 25.0)
        * (1.0f64 / 9.0).powf((n - 1.0) / n)
        * (c.c2 / (4.0 * (1.0 + c.c2))).powf(2.0 / s)
        * (1.0 / (2.0 * 576.0 * c.beta * lambda_ball)).powf((1.0 - s) / s);
    assert!(rel(st.sigma1_easy, easy) < 1e-14);
    assert!(rel(st.sigma1_main, main) < 1e-14);
    assert_eq!(st.sigma1, easy.min(main));
    let expected = if easy <= main { Sigma1Branch::Easy } else { Sigma1Branch::Main };
    assert_eq!(st.sigma1_branch, expected);
    assert!(st.sigma1 > 0.0 && st.sigma2 > 0.0);
}

#[test]
fn sigma2_uses_the_printed_minimum() {
    let p = FracParams::new(2, 0.4, 2.0).unwrap();
    let c = eval_constants(&p).unwrap();
    let torsion_ball = 0.06;
    let st = stability_constants(&c, &p, 25.0, torsion_ball).unwrap();
    let ratio = torsion_ball / 0.6;
    let expected = (ratio / 2f64.powf(3.4 / 0.4)).min(0.5 * st.sigma1_torsion * ratio * ratio);
    assert!(rel(st.sigma2, expected) < 1e-14);
}

#[test]
fn sigma1_vanishes_towards_critical_exponent() {
    let p = half_order();
    let crit = p.two_star_s();
    let values: Vec<f64> = [1.0, 2.0, 3.0, 3.5, 3.9, 3.99, 3.999]
        .iter()
        .map(|&q| {
            let pq = p.with_q(q);
            let c = eval_constants(&pq).unwrap();
            stability_constants(&c, &pq, 24.0, 0.05).unwrap().sigma1
        })
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
    assert!(values.last().unwrap() / values[0] < 1e-6);
    assert!(crit == 4.0);
}

#[test]
fn nonpositive_ball_values_are_rejected() {
    let p = half_order();
    let c = eval_constants(&p).unwrap();
    assert!(stability_constants(&c, &p, -1.0, 0.05).is_err());
    assert!(stability_constants(&c, &p, 24.0, 0.0).is_err());
    assert!(stability_constants(&c, &p, f64::NAN, 0.05).is_err());
}
