//! Iterated integrals of bar elements along super-curves.

use nqwilson::bar_complex::*;
use nqwilson::grassmann::{gm_sub, gm_norm, GrassmannValue};
use nqwilson::nq_manifold::tangent_q;
use nqwilson::scenarios::*;
use nqwilson::supercurve::*;
use nqwilson::wilson::wilson_line;
use nqwilson::{ChartRef, Error, GradedPoly};

fn word(chart: &ChartRef, v: Variant, slots: &[&str]) -> BarElement {
    let polys: Vec<GradedPoly> = slots.iter().map(|s| GradedPoly::parse(chart, s).unwrap()).collect();
    BarElement::word(chart, v, &polys).unwrap()
}

/// On-shell curve in `T[1]R` from `x0` with velocity `xdot(t)`.
fn line1(x0: f64, n: usize, xdot: impl Fn(f64) -> f64) -> SuperCurve {
    let q = tangent_q(1).unwrap();
    let chart = q.chart().clone();
    let start = initial_point(&chart, 2, &[("x1", x0)]).unwrap();
    let drive = Drive::sample(&chart, 2, n, |_, s| GrassmannValue::scalar(2, xdot(s)));
    solve_eom(&q, &start, &drive).unwrap()
}

#[test]
fn exact_form_gives_the_endpoint_difference() {
    let t = flat_so3(2).unwrap();
    let n = 1000;
    let c = tangent_line(&t, 2, n).unwrap();
    let chart = t.base();
    let e = word(chart, Variant::FixedEnd, &["2*x1*x2*v1 + x1*x1*v2"]);
    let phi = |k: usize| c.real("x1", k).unwrap().powi(2) * c.real("x2", k).unwrap();
    let got = iterated_integral(&e, &c).unwrap();
    assert!((got.body() - (phi(n) - phi(0))).abs() < 1e-10, "{}", got.body() - (phi(n) - phi(0)));
    assert!(got.sub(&GrassmannValue::scalar(2, got.body())).norm() < 1e-12);

    // endpoints are evaluated at t = 1 on the left and t = 0 on the right
    let f = word(chart, Variant::TwoSided, &["x2 + 1", "2*x1*x2*v1 + x1*x1*v2", "x1"]);
    let want = (c.real("x2", n).unwrap() + 1.0) * (phi(n) - phi(0)) * c.real("x1", 0).unwrap();
    assert!((iterated_integral(&f, &c).unwrap().body() - want).abs() < 1e-10);
}

#[test]
fn double_integral_matches_closed_form() {
    let c = line1(0.3, 1000, |s| 0.5 + s * s - (3.0 * s).cos());
    let (x0, x1) = (c.real("x1", 0).unwrap(), c.real("x1", 1000).unwrap());
    // int_{t1 > t2} xdot(t1) x(t2) xdot(t2) = int xdot (x^2 - x0^2) / 2
    let want = (x1.powi(3) - x0.powi(3)) / 6.0 - x0 * x0 * (x1 - x0) / 2.0;
    let e = word(c.chart(), Variant::FixedEnd, &["v1", "x1*v1"]);
    let got = iterated_integral(&e, &c).unwrap().body();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn degree_zero_slots_integrate_to_zero() {
    let c = line1(0.3, 200, |s| 1.0 + s);
    for slots in [&["x1", "v1"][..], &["v1", "x1*x1"], &["3"]] {
        let e = word(c.chart(), Variant::FixedEnd, slots);
        assert!(!e.is_normalized());
        assert!(iterated_integral(&e, &c).unwrap().is_zero());
    }
}

#[test]
fn picard_sum_reproduces_the_wilson_line() {
    let t = flat_so3(2).unwrap();
    let c = tangent_line(&t, 2, 2000).unwrap();
    let w = wilson_element(&t, 24).unwrap();
    let p = w.picard(&c).unwrap();
    assert!(p.ratio < 0.5, "ratio {}", p.ratio);
    assert!(p.tail < 1e-10, "tail {:e}", p.tail);
    let u = wilson_line(&t, &c).unwrap().u;
    let d = gm_norm(&gm_sub(&p.sum, &u));
    assert!(d < 1e-8, "{d:e}");
}

#[test]
fn word_level_and_matrix_level_integrals_agree() {
    let t = poisson_bundle().unwrap();
    let c = sphere_loop(&t, 2, 400, 0.7).unwrap();
    let w = wilson_element(&t, 2).unwrap();
    let p = w.picard(&c).unwrap();
    let mut sum = w.component_integral(0, &c).unwrap();
    for q in 1..=2 {
        let s = if q % 2 == 1 { -1.0 } else { 1.0 };
        nqwilson::grassmann::gm_axpy(&mut sum, &w.component_integral(q, &c).unwrap(), s);
    }
    assert!(gm_norm(&gm_sub(&sum, &p.sum)) < 1e-12);
    assert!(p.term_norms[2] > 1e-3);
}

#[test]
fn exact_form_survives_fixed_end_homotopies() {
    let t = flat_so3(2).unwrap();
    let n = 600;
    let c = tangent_line(&t, 2, n).unwrap();
    let hg = tangent_wiggle(t.base(), 2, n, 0.3).unwrap();
    let frames = homotopy_flow(t.q(), &c, &hg, 20, 0.01).unwrap();
    let e = word(t.base(), Variant::FixedEnd, &["2*x1*x2*v1 + x1*x1*v2"]);
    let r = chain_map_check(&e, t.q(), &frames).unwrap();
    assert!(r.drift < 1e-8, "{:e}", r.drift);
}

#[test]
fn closed_two_letter_word_survives_fixed_end_homotopies() {
    let q = tangent_q(1).unwrap();
    let n = 800;
    let c = line1(0.2, n, |s| 0.8 + 0.5 * (2.0 * s).sin());
    let hg = tangent_wiggle(q.chart(), 2, n, 0.4).unwrap();
    let frames = homotopy_flow(&q, &c, &hg, 20, 0.02).unwrap();
    let e = word(q.chart(), Variant::FixedEnd, &["v1", "x1*x1*v1 + v1"]);
    assert!(e.total_differential(q.derivation()).unwrap().is_zero());
    let r = chain_map_check(&e, &q, &frames).unwrap();
    assert!(r.drift < 1e-7, "{:e}", r.drift);
    let moved = (frames[20].real("x1", n / 3).unwrap() - c.real("x1", n / 3).unwrap()).abs();
    assert!(moved > 0.05);
}

#[test]
fn non_closed_word_is_refused_and_drifts() {
    let t = flat_so3(2).unwrap();
    let n = 600;
    let c = tangent_line(&t, 2, n).unwrap();
    let hg = tangent_wiggle(t.base(), 2, n, 0.3).unwrap();
    let frames = homotopy_flow(t.q(), &c, &hg, 20, 0.01).unwrap();
    let e = word(t.base(), Variant::FixedEnd, &["x1*v2"]);
    assert!(matches!(chain_map_check(&e, t.q(), &frames), Err(Error::Precondition(_))));
    let r = integral_drift(&e, &frames).unwrap();
    assert!(r.drift > 1e-3, "{:e}", r.drift);
}
