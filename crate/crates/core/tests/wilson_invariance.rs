//! Invariance properties of Wilson lines and loops at moderate grid sizes.

use nqwilson::graded_algebra::rat;
use nqwilson::grassmann::gm_norm;
use nqwilson::linalg::real_expm;
use nqwilson::representation::*;
use nqwilson::scenarios::*;
use nqwilson::supercurve::*;
use nqwilson::wilson::*;

fn so3_rotation(angle: f64) -> Vec<Vec<f64>> {
    let k = so3_generator(&rat(1, 1));
    real_expm(&k.iter().map(|r| r.iter().map(|v| angle * nqwilson::graded_algebra::scalar_to_f64(v)).collect()).collect())
}

#[test]
fn degree0_gauge_is_covariant() {
    let t = flat_so3(2).unwrap();
    let c = tangent_line(&t, 2, 1000).unwrap();
    let omega = degree0_rotation(&t).unwrap();
    let r = gauge_covariance_residual(&t, &omega, &c).unwrap();
    assert!(r < 1e-8, "{r:e}");
    let tt = gauge_transform(&t, &omega).unwrap();
    assert!(wilson_line(&tt, &c).unwrap().distance(&wilson_line(&t, &c).unwrap()) > 0.1);
}

#[test]
fn loops_ignore_positive_degree_gauges() {
    let t = poisson_bundle().unwrap();
    let c = sphere_loop(&t, 3, 1000, 0.7).unwrap();
    let omega = positive_gauge(&t).unwrap();
    let (w, wt) = loop_gauge_residual(&t, &omega, &c, &[]).unwrap();
    assert!(w.sub(&wt).norm() < 1e-8);
    assert!(w.norm() > 0.5);
    // the line itself does change
    let tt = gauge_transform(&t, &omega).unwrap();
    assert!(wilson_line(&tt, &c).unwrap().distance(&wilson_line(&t, &c).unwrap()) > 0.1);
}

#[test]
fn fixed_end_homotopy_keeps_the_line() {
    let t = flat_so3(2).unwrap();
    let n = 800;
    let c = tangent_line(&t, 2, n).unwrap();
    let hg = tangent_wiggle(t.base(), 2, n, 0.3).unwrap();
    assert!(hg.is_endpoint_fixed());
    let frames = homotopy_flow(t.q(), &c, &hg, 100, 0.01).unwrap();
    assert!(line_homotopy_drift(&t, &frames).unwrap() < 1e-7);
    let moved = (frames[100].real("x1", n / 3).unwrap() - c.real("x1", n / 3).unwrap()).abs();
    assert!(moved > 0.1);
}

#[test]
fn loop_homotopy_on_a_leaf() {
    let t = poisson_bundle().unwrap();
    let n = 800;
    let c = sphere_loop(&t, 3, n, 0.7).unwrap();
    let hg = sphere_wiggle(t.base(), 3, n, 0.02).unwrap();
    let frames = homotopy_flow(t.q(), &c, &hg, 20, 0.05).unwrap();
    assert!(loop_homotopy_drift(&t, &frames, &[]).unwrap() < 1e-7);
    let tt = gauge_transform(&t, &positive_gauge(&t).unwrap()).unwrap();
    assert!(loop_homotopy_drift(&tt, &frames, &[]).unwrap() < 1e-7);
    // the frames leave the original loop but stay on the sphere
    let r2 = |f: &SuperCurve, k| (1..=3).map(|i| f.real(&format!("x{i}"), k).unwrap().powi(2)).sum::<f64>();
    assert!((r2(&frames[20], n / 5) - 1.0).abs() < 1e-7);
    assert!((frames[20].real("x1", n / 5).unwrap() - c.real("x1", n / 5).unwrap()).abs() > 1e-3);
}

#[test]
fn reparameterization_keeps_the_line() {
    let t = poisson_bundle().unwrap();
    let tt = gauge_transform(&t, &positive_gauge(&t).unwrap()).unwrap();
    let c = sphere_loop(&t, 3, 1000, 0.7).unwrap().restrict(0, 650).unwrap();
    let r = reparameterize(&c, &Reparameterization::smoothstep(650)).unwrap();
    let d = wilson_line(&tt, &c).unwrap().distance(&wilson_line(&tt, &r).unwrap());
    assert!(d < 1e-8, "{d:e}");
}

#[test]
fn free_end_homotopy_obeys_the_endpoint_law() {
    let t = poisson_bundle().unwrap();
    let tt = gauge_transform(&t, &positive_gauge(&t).unwrap()).unwrap();
    let c = sphere_loop(&t, 3, 600, 0.7).unwrap().restrict(0, 400).unwrap();
    let hg = sphere_wiggle(t.base(), 3, 400, 0.3).unwrap();
    let (ds_u, iota) = homotopy_law(&tt, &c, &hg, 1e-3).unwrap();
    assert!(gm_norm(&ds_u) > 0.1);
    let r = gm_norm(&nqwilson::grassmann::gm_sub(&ds_u, &iota));
    assert!(r < 1e-7 * gm_norm(&ds_u), "{r:e}");
}

#[test]
fn so3_line_converges_at_fourth_order() {
    let t = flat_so3(1).unwrap();
    let want = so3_rotation(tangent_displacement());
    let err = |n| {
        let w = wilson_line(&t, &tangent_line(&t, 0, n).unwrap()).unwrap();
        (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| (w.u[i][j].body() - want[i][j]).abs()).fold(0.0, f64::max)
    };
    let (e1, e2) = (err(25), err(50));
    let slope = (e1 / e2).log2();
    assert!((3.5..=4.5).contains(&slope), "slope {slope} ({e1:e}, {e2:e})");
    assert!(err(2000) < 1e-8);
}
