//! Named representations, curves and gauge matrices shared by the
//! acceptance suite, the command line front end and the benches.

use std::f64::consts::PI;

use crate::error::Result;
use crate::graded_algebra::{int, rat, ChartRef, GradedPoly, Scalar};
use crate::grassmann::GrassmannValue;
use crate::nq_manifold::{lie_algebroid_q, so3_constants, so3_dual_poisson};
use crate::representation::{
    constant_connection, courant_rep, direct_sum, flat_bundle_rep, hamiltonian_lift, identity_matrix, mat_sub,
    zero_matrix, FiberSpec, GaugeMatrix, PolyMatrix, RepMatrix,
};
use crate::supercurve::{initial_point, solve_eom, Drive, HomotopyGenerator, SuperCurve};

/// `s * K_1` with `(K_1)_{bc} = eps_{1bc}`.
pub fn so3_generator(s: &Scalar) -> Vec<Vec<Scalar>> {
    let f = so3_constants();
    (0..3).map(|i| (0..3).map(|j| &f[0][i][j] * s).collect()).collect()
}

/// Flat so(3) bundle over `R^n` with commuting constant connection
/// `A_mu = K_1 / mu`.
pub fn flat_so3(n: usize) -> Result<RepMatrix> {
    let mats: Vec<_> = (1..=n).map(|mu| so3_generator(&rat(1, mu as i64))).collect();
    flat_bundle_rep(n, &constant_connection(n, &mats)?)
}

/// Rank-1 bundle over `R` with `A = c dx`.
pub fn abelian(c: i64) -> Result<RepMatrix> {
    flat_bundle_rep(1, &constant_connection(1, &[vec![vec![int(c)]]])?)
}

/// Hamiltonian lift of the linear Poisson structure on so(3)*.
pub fn adjoint() -> Result<RepMatrix> {
    hamiltonian_lift(&so3_dual_poisson()?)
}

/// The coadjoint action along the Poisson algebroid of so(3)*: fibres
/// `z1..z3` of level 0 and `T^a_b = -2 xi_mu f^mu_{ab}`. The factor 2
/// matches the `2 l A` normalization of `Q`.
pub fn coadjoint_bundle() -> Result<RepMatrix> {
    let d = so3_dual_poisson()?;
    let q = lie_algebroid_q(&d)?;
    let chart = q.chart().clone();
    let f = so3_constants();
    let fiber = FiberSpec::new((1..=3).map(|i| (format!("z{i}"), 0)).collect())?;
    let mut t = zero_matrix(&chart, 3, 3);
    for (mu, fm) in f.iter().enumerate() {
        let xi = chart.var(&format!("xi_x{}", mu + 1))?;
        for a in 0..3 {
            for b in 0..3 {
                t[a][b] = t[a][b].add(&xi.scale(&(&fm[a][b] * int(-2))));
            }
        }
    }
    RepMatrix::new(q, fiber, t)
}

/// [`coadjoint_bundle`] plus [`adjoint`]: fibre levels 0, 1 and 2.
pub fn poisson_bundle() -> Result<RepMatrix> {
    direct_sum(&coadjoint_bundle()?, &adjoint()?)
}

pub fn courant(n: usize) -> Result<RepMatrix> {
    courant_rep(n)
}

/// `1 + eps`, eps of degree 1 mixing adjacent fibre levels.
pub fn positive_gauge(t: &RepMatrix) -> Result<GaugeMatrix> {
    let (b, f) = (t.base(), t.fiber());
    let mut eps = zero_matrix(b, t.rank(), t.rank());
    let odd: Vec<String> = b.generators().iter().filter(|g| g.degree == 1).map(|g| g.name.clone()).collect();
    for r in 0..t.rank() {
        for a in 0..t.rank() {
            if f.level(a) - f.level(r) == 1 && (r + a) % 2 == 1 {
                let src = format!("x2*{} + {}", odd[r % odd.len()], odd[a % odd.len()]);
                eps[r][a] = GradedPoly::parse(b, &src)?;
            }
        }
    }
    GaugeMatrix::one_plus(b, f, &eps)
}

/// `C (1 + x1 E_13)` with `C` the rational rotation by the 3-4-5 angle.
pub fn degree0_rotation(t: &RepMatrix) -> Result<GaugeMatrix> {
    let b = t.base();
    let c: [[Scalar; 3]; 3] = [
        [rat(3, 5), rat(-4, 5), int(0)],
        [rat(4, 5), rat(3, 5), int(0)],
        [int(0), int(0), int(1)],
    ];
    let x1 = b.var("x1")?;
    let mut e = zero_matrix(b, 3, 3);
    for (i, row) in c.iter().enumerate() {
        for (j, cij) in row.iter().enumerate() {
            e[i][j] = GradedPoly::constant(b, cij.clone());
        }
        // (C E_13)_{i3} = C_{i1}
        e[i][2] = e[i][2].add(&x1.scale(&row[0]));
    }
    GaugeMatrix::one_plus(b, t.fiber(), &mat_sub(&e, &identity_matrix(b, 3)))
}

/// Frame change `x~2 = x2 + (x1)^3 / 5` for the Courant example.
pub fn courant_frame(chart: &ChartRef) -> Result<PolyMatrix> {
    Ok(vec![
        vec![GradedPoly::parse(chart, "1")?, GradedPoly::zero(chart)],
        vec![GradedPoly::parse(chart, "3/5*x1*x1")?, GradedPoly::parse(chart, "1")?],
    ])
}

/// On-shell tangent curve from `x1 = 0.2` with drive `v_theta^mu(t)`:
/// `v1 = 0.3 + 1.2 t - 0.9 t^2 + 0.2 sin(5 t)`, the others a sine bump.
pub fn tangent_line(t: &RepMatrix, m: u32, n: usize) -> Result<SuperCurve> {
    let chart = t.base().clone();
    let x0 = initial_point(&chart, m, &[("x1", 0.2)])?;
    let drive = Drive::sample(&chart, m, n, |g, s| {
        let v = match chart.generator(g).name.as_str() {
            "v1" => tangent_velocity(s),
            _ => 0.4 * (PI * s).sin(),
        };
        GrassmannValue::scalar(m, v)
    });
    solve_eom(t.q(), &x0, &drive)
}

pub fn tangent_velocity(s: f64) -> f64 {
    0.3 + 1.2 * s - 0.9 * s * s + 0.2 * (5.0 * s).sin()
}

/// `x1(1) - x1(0)` of [`tangent_line`].
pub fn tangent_displacement() -> f64 {
    0.3 + 0.6 - 0.3 + 0.2 * (1.0 - 5f64.cos()) / 5.0
}

/// Endpoint-fixed wiggle `vbar^mu(t) = a_mu sin(pi t) sin(2 pi t)` for tangent bases.
pub fn tangent_wiggle(chart: &ChartRef, m: u32, n: usize, amp: f64) -> Result<HomotopyGenerator> {
    HomotopyGenerator::from_fn(chart, m, n, |g, t| {
        let a = amp * (1.0 + g as f64 * 0.37);
        let f = (PI * t).sin() * (2.0 * PI * t).sin();
        let df = PI * (PI * t).cos() * (2.0 * PI * t).sin() + 2.0 * PI * (PI * t).sin() * (2.0 * PI * t).cos();
        (GrassmannValue::scalar(m, a * f), GrassmannValue::scalar(m, a * df))
    })
}

/// Closed on-shell loop on the sphere `|x| = 1` of so(3)* for the
/// representation `t` (any representation over that Poisson algebroid).
/// The drive `xi_theta = pi e3 + twist x(t)` turns `x` once around the e3
/// axis; the twist is parallel to `x` and so only changes holonomies. The
/// odd t-components start along `x` and carry the Grassmann content.
pub fn sphere_loop(t: &RepMatrix, m: u32, n: usize, twist: f64) -> Result<SuperCurve> {
    let chart = t.base().clone();
    let x = [0.6, 0.0, 0.8];
    let mut x0 = initial_point(&chart, m, &[("x1", x[0]), ("x2", x[1]), ("x3", x[2])])?;
    let mut odd = GrassmannValue::zero(m);
    for i in 0..m {
        odd.add_scaled(&GrassmannValue::generator(m, i), 0.5 + 0.25 * i as f64);
    }
    for (j, xj) in x.iter().enumerate() {
        x0[chart.try_index(&format!("xi_x{}", j + 1))?] = odd.scale(*xj);
    }
    let idx: Vec<usize> = (1..=3).map(|j| chart.try_index(&format!("xi_x{j}"))).collect::<Result<_>>()?;
    let drive = Drive::sample(&chart, m, n, |g, s| {
        // x(t) = (0.6 cos 2 pi t, -0.6 sin 2 pi t, 0.8)
        let w = 2.0 * PI * s;
        let xt = [0.6 * w.cos(), -0.6 * w.sin(), 0.8];
        let v = match idx.iter().position(|&i| i == g) {
            Some(j) => twist * xt[j] + if j == 2 { PI } else { 0.0 },
            None => 0.0,
        };
        GrassmannValue::scalar(m, v)
    });
    solve_eom(t.q(), &x0, &drive)
}

/// Periodic generator for loop homotopies on the sphere.
pub fn sphere_wiggle(chart: &ChartRef, m: u32, n: usize, amp: f64) -> Result<HomotopyGenerator> {
    HomotopyGenerator::from_fn(chart, m, n, |g, t| {
        let a = amp * (g as f64 - 2.0);
        let w = 2.0 * PI;
        (GrassmannValue::scalar(m, a * (0.5 + (w * t).sin())), GrassmannValue::scalar(m, a * w * (w * t).cos()))
    })
}
