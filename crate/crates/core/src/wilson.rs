//! Path-ordered exponentials along super-curves.
//!
//! `U(1,0) = P exp(-int dt dtheta T)` is computed from
//! `dU/dt = -T_theta(t) U`, `U(0) = 1`, where
//! `T_theta = sum_g g_theta d>_g T (x_t)` is the theta-derivative of the
//! pulled-back matrix. Later times sit on the left. Row index = upper
//! (level alpha), column = lower (level beta); `U^alpha_beta` has Grassmann
//! degree `beta - alpha`.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graded_algebra::{left_partial, Chart, ChartRef};
use crate::grassmann::{
    gm_add, gm_axpy, gm_identity, gm_mul, gm_norm, gm_scale, gm_sub, gm_zero, CompiledPoly, FlatMatrix,
    GrassmannMatrix, GrassmannValue, SignTable, SparseFactor,
};
use crate::representation::{PolyMatrix, RepMatrix};
use crate::supercurve::SuperCurve;

/// A polynomial matrix compiled for evaluation along curves.
#[derive(Clone, Debug)]
pub struct CompiledMatrix {
    chart: ChartRef,
    rows: usize,
    cols: usize,
    entries: Vec<Vec<CompiledPoly>>,
    partials: Vec<Vec<Vec<(usize, CompiledPoly)>>>,
}

impl CompiledMatrix {
    pub fn new(chart: &ChartRef, m: &PolyMatrix) -> Result<Self> {
        let rows = m.len();
        let cols = m.first().map(|r| r.len()).unwrap_or(0);
        let mut entries = Vec::with_capacity(rows);
        let mut partials = Vec::with_capacity(rows);
        for row in m {
            let mut er = Vec::with_capacity(cols);
            let mut pr = Vec::with_capacity(cols);
            for p in row {
                let p = p.embed(chart)?;
                er.push(CompiledPoly::new(&p));
                let ps = (0..chart.len())
                    .filter_map(|g| {
                        let d = left_partial(&p, g);
                        (!d.is_zero()).then(|| (g, CompiledPoly::new(&d)))
                    })
                    .collect();
                pr.push(ps);
            }
            entries.push(er);
            partials.push(pr);
        }
        Ok(CompiledMatrix { chart: chart.clone(), rows, cols, entries, partials })
    }

    pub fn from_rep(t: &RepMatrix) -> Result<Self> {
        CompiledMatrix::new(t.base(), t.entries())
    }

    pub fn chart(&self) -> &ChartRef {
        &self.chart
    }

    /// Matrix at the t-components `x` (theta set to zero).
    pub fn eval(&self, x: &[GrassmannValue]) -> GrassmannMatrix {
        self.entries.iter().map(|r| r.iter().map(|p| p.eval(x)).collect()).collect()
    }

    /// `sum_g v^g d>_g M (x)`.
    pub fn theta_derivative(&self, x: &[GrassmannValue], v: &[GrassmannValue]) -> GrassmannMatrix {
        let m = x.first().map(|a| a.rank()).unwrap_or(0);
        let mut out = gm_zero(m, self.rows, self.cols);
        for (i, row) in self.partials.iter().enumerate() {
            for (j, ps) in row.iter().enumerate() {
                for (g, p) in ps {
                    if !v[*g].is_zero() {
                        out[i][j].add_product(&v[*g], &p.eval(x), 1.0);
                    }
                }
            }
        }
        out
    }

    fn check_curve(&self, c: &SuperCurve) -> Result<()> {
        if !Chart::same(&self.chart, c.chart()) {
            return Err(Error::ChartMismatch(self.chart.name().into(), c.chart().name().into()));
        }
        Ok(())
    }
}

/// `T_theta(t_k)` for the curve `c`.
pub fn integrand(t: &RepMatrix, c: &SuperCurve, k: usize) -> Result<GrassmannMatrix> {
    let cm = CompiledMatrix::from_rep(t)?;
    cm.check_curve(c)?;
    Ok(cm.theta_derivative(&c.t_components_at(k), &c.theta_components_at(k)))
}

/// Integrand samples at grid points and midpoints.
struct Samples {
    at: Vec<GrassmannMatrix>,
    mid: Vec<GrassmannMatrix>,
}

fn sample(cm: &CompiledMatrix, c: &SuperCurve) -> Samples {
    let n = c.grid_n();
    let at = (0..=n).map(|k| cm.theta_derivative(&c.t_components_at(k), &c.theta_components_at(k))).collect();
    let mid = (0..n).map(|k| cm.theta_derivative(&c.t_components_mid(k), &c.theta_components_mid(k))).collect();
    Samples { at, mid }
}

/// `U(t_k, 0)` for every `k` (or just the last when `keep_all` is false).
fn transport(s: &Samples, m: u32, r: usize, h: f64, keep_all: bool) -> Result<Vec<GrassmannMatrix>> {
    let n = s.mid.len();
    let signs = SignTable::new(m);
    let at: Vec<SparseFactor> = s.at.iter().map(SparseFactor::new).collect();
    let mid: Vec<SparseFactor> = s.mid.iter().map(SparseFactor::new).collect();
    let mut u = FlatMatrix::identity(m, r);
    let mut ks: Vec<FlatMatrix> = (0..4).map(|_| FlatMatrix::zero(m, r)).collect();
    let mut tmp = FlatMatrix::zero(m, r);
    let mut out = Vec::with_capacity(if keep_all { n + 1 } else { 1 });
    if keep_all {
        out.push(u.to_matrix());
    }
    for k in 0..n {
        let (a0, am, a1) = (&at[k], &mid[k], &at[k + 1]);
        // k_i = -A (u + c k_{i-1})
        for (i, (a, c)) in [(a0, 0.0), (am, h / 2.0), (am, h / 2.0), (a1, h)].into_iter().enumerate() {
            if i == 0 {
                tmp.assign_axpy(&u, &u, 0.0);
            } else {
                tmp.assign_axpy(&u, &ks[i - 1], c);
            }
            ks[i].fill_zero();
            ks[i].add_product(a, &tmp, -1.0, &signs);
        }
        for (kk, w) in ks.iter().zip([h / 6.0, h / 3.0, h / 3.0, h / 6.0]) {
            u.axpy(kk, w);
        }
        if !u.is_finite() {
            return Err(Error::Divergence { step: k + 1 });
        }
        if keep_all {
            out.push(u.to_matrix());
        }
    }
    if !keep_all {
        out.push(u.to_matrix());
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct WilsonLine {
    pub u: GrassmannMatrix,
    pub levels: Vec<i64>,
    pub grid_n: usize,
    /// Bodies of the degree-0 t-components at `t = 0` and `t = 1`.
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub patch: Option<String>,
}

fn base_point(c: &SuperCurve, k: usize) -> Vec<f64> {
    (0..c.chart().len()).filter(|&g| c.chart().degree_of(g) == 0).map(|g| c.t_component(g)[k].body()).collect()
}

impl WilsonLine {
    pub fn rank(&self) -> usize {
        self.levels.len()
    }

    /// Largest coefficient violating `deg U^a_b = level(b) - level(a)`.
    pub fn degree_law_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for (a, row) in self.u.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                let d = self.levels[b] - self.levels[a];
                let bad = if d < 0 { v.norm() } else { v.off_degree_norm(d as u32) };
                worst = worst.max(bad);
            }
        }
        worst
    }

    pub fn distance(&self, other: &WilsonLine) -> f64 {
        gm_norm(&gm_sub(&self.u, &other.u))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "levels": self.levels,
            "grid_n": self.grid_n,
            "start": self.start,
            "end": self.end,
            "patch": self.patch,
            "u": self.u.iter().map(|r| r.iter().map(|v| v.to_json()).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }
}

fn levels_of(t: &RepMatrix) -> Vec<i64> {
    (0..t.rank()).map(|i| t.fiber().level(i)).collect()
}

/// Wilson line of `t` along `c`.
pub fn wilson_line(t: &RepMatrix, c: &SuperCurve) -> Result<WilsonLine> {
    let cm = CompiledMatrix::from_rep(t)?;
    wilson_line_compiled(&cm, levels_of(t), c)
}

pub fn wilson_line_compiled(cm: &CompiledMatrix, levels: Vec<i64>, c: &SuperCurve) -> Result<WilsonLine> {
    cm.check_curve(c)?;
    let s = sample(cm, c);
    let u = transport(&s, c.grassmann_rank(), cm.rows, c.h(), false)?.pop().expect("one matrix");
    Ok(WilsonLine {
        u,
        levels,
        grid_n: c.grid_n(),
        start: base_point(c, 0),
        end: base_point(c, c.grid_n()),
        patch: None,
    })
}

/// `U(t_k, 0)` for every grid point.
pub fn wilson_history(t: &RepMatrix, c: &SuperCurve) -> Result<Vec<GrassmannMatrix>> {
    let cm = CompiledMatrix::from_rep(t)?;
    cm.check_curve(c)?;
    transport(&sample(&cm, c), c.grassmann_rank(), cm.rows, c.h(), true)
}

/// A transition function evaluated where two pieces meet.
#[derive(Clone, Debug)]
pub struct TransitionInsertion {
    pub t_star: f64,
    pub omega: GrassmannMatrix,
    pub base_point: Vec<f64>,
}

impl TransitionInsertion {
    /// `Omega(x_t(t_k))`, theta set to zero.
    pub fn at(omega: &PolyMatrix, c: &SuperCurve, k: usize) -> Result<Self> {
        let cm = CompiledMatrix::new(c.chart(), omega)?;
        Ok(TransitionInsertion {
            t_star: k as f64 / c.grid_n() as f64,
            omega: cm.eval(&c.t_components_at(k)),
            base_point: base_point(c, k),
        })
    }

    pub fn identity(m: u32, r: usize, base_point: Vec<f64>) -> Self {
        TransitionInsertion { t_star: 0.0, omega: gm_identity(m, r), base_point }
    }
}

/// `U(1,t) Omega(t) U(t,0)`: `right` runs from the insertion to the end,
/// `left` from the start to the insertion.
pub fn splice(right: &WilsonLine, ins: &TransitionInsertion, left: &WilsonLine) -> Result<WilsonLine> {
    let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let g1 = gap(&right.start, &ins.base_point);
    let g2 = gap(&left.end, &ins.base_point);
    let tol = 1e-9;
    if g1 > tol || g2 > tol || right.start.len() != left.end.len() {
        return Err(Error::EndpointMismatch(g1.max(g2)));
    }
    let u = gm_mul(&gm_mul(&right.u, &ins.omega), &left.u);
    Ok(WilsonLine {
        u,
        levels: right.levels.clone(),
        grid_n: right.grid_n + left.grid_n,
        start: left.start.clone(),
        end: right.end.clone(),
        patch: right.patch.clone(),
    })
}

/// `sum_a (-1)^{level a} U^a_a`.
pub fn supertrace(u: &GrassmannMatrix, levels: &[i64]) -> GrassmannValue {
    let m = u[0][0].rank();
    let mut acc = GrassmannValue::zero(m);
    for (a, &l) in levels.iter().enumerate() {
        acc.add_scaled(&u[a][a], if l % 2 == 0 { 1.0 } else { -1.0 });
    }
    acc
}

/// Gap between the two ends of a loop in every component, allowing the
/// coordinate jump `period[g]` for periodic chart coordinates.
pub fn closure_gap(c: &SuperCurve, period: &[f64]) -> f64 {
    let n = c.grid_n();
    let m = c.grassmann_rank();
    let mut worst = 0.0f64;
    for g in 0..c.chart().len() {
        let p = period.get(g).copied().unwrap_or(0.0);
        let d = c.t_component(g)[n].sub(&c.t_component(g)[0]).sub(&GrassmannValue::scalar(m, p));
        worst = worst.max(d.norm());
    }
    worst
}

pub const CLOSURE_TOL: f64 = 1e-9;

/// Wilson loop of a closed curve; `period` as in [`closure_gap`].
pub fn wilson_loop(t: &RepMatrix, c: &SuperCurve, period: &[f64]) -> Result<GrassmannValue> {
    let gap = closure_gap(c, period);
    if gap > CLOSURE_TOL {
        return Err(Error::NotClosed(gap));
    }
    let w = wilson_line(t, c)?;
    Ok(supertrace(&w.u, &w.levels))
}

pub fn loop_from_line(w: &WilsonLine) -> GrassmannValue {
    supertrace(&w.u, &w.levels)
}

fn split_matrix(a: &GrassmannMatrix) -> (GrassmannMatrix, GrassmannMatrix) {
    let mut lo = Vec::with_capacity(a.len());
    let mut hi = Vec::with_capacity(a.len());
    for row in a {
        let (l, h): (Vec<_>, Vec<_>) = row.iter().map(|v| v.split_first()).unzip();
        lo.push(l);
        hi.push(h);
    }
    (lo, hi)
}

fn sign_rows(a: &GrassmannMatrix, levels: &[i64]) -> GrassmannMatrix {
    a.iter().zip(levels).map(|(r, &l)| if l % 2 == 0 { r.clone() } else { r.iter().map(|v| v.neg()).collect() }).collect()
}

fn sign_cols(a: &GrassmannMatrix, levels: &[i64]) -> GrassmannMatrix {
    a.iter()
        .map(|r| r.iter().zip(levels).map(|(v, &l)| if l % 2 == 0 { v.clone() } else { v.neg() }).collect())
        .collect()
}

/// `-T(1) U + (-1)^{a+c} U^a_c T^c_b(0)`.
pub fn endpoint_combination(
    t1: &GrassmannMatrix,
    u: &GrassmannMatrix,
    t0: &GrassmannMatrix,
    levels: &[i64],
) -> GrassmannMatrix {
    let right = sign_rows(&sign_cols(u, levels), levels);
    gm_sub(&gm_mul(&right, t0), &gm_mul(t1, u))
}

/// Both sides of the BRST law for a Wilson line.
#[derive(Clone, Debug)]
pub struct EndpointLaw {
    pub delta_u: GrassmannMatrix,
    pub predicted: GrassmannMatrix,
    pub residual: f64,
    pub scale: f64,
}

/// `delta_B U` is the `eta_0` coefficient of `U` along `c + eta_0 delta_B c`.
/// Off-shell curves make both sides nonzero.
pub fn check_brst_endpoint_law(t: &RepMatrix, c: &SuperCurve) -> Result<EndpointLaw> {
    let cm = CompiledMatrix::from_rep(t)?;
    cm.check_curve(c)?;
    let sys = crate::supercurve::EomSystem::new(t.q());
    let var = crate::supercurve::brst_variation(&sys, c);
    let shifted = c.odd_shift(&var)?;
    let levels = levels_of(t);
    let u1 = wilson_line_compiled(&cm, levels.clone(), &shifted)?.u;
    let (u, delta_u) = split_matrix(&u1);
    let n = c.grid_n();
    let t1 = cm.eval(&c.t_components_at(n));
    let t0 = cm.eval(&c.t_components_at(0));
    let predicted = endpoint_combination(&t1, &u, &t0, &levels);
    let residual = gm_norm(&gm_sub(&delta_u, &predicted));
    let scale = gm_norm(&delta_u).max(gm_norm(&predicted));
    Ok(EndpointLaw { delta_u, predicted, residual, scale })
}

/// `U(1,0)` and `V(1,0) = int_0^1 U(1,t) E(t) U(t,0) dt` from the joint
/// system `U' = -A U`, `V' = -A V + E U`.
fn transport_with_v(a: &Samples, e: &Samples, m: u32, r: usize, h: f64) -> Result<(GrassmannMatrix, GrassmannMatrix)> {
    let n = a.mid.len();
    let signs = SignTable::new(m);
    let sp = |s: &Samples| -> (Vec<SparseFactor>, Vec<SparseFactor>) {
        (s.at.iter().map(SparseFactor::new).collect(), s.mid.iter().map(SparseFactor::new).collect())
    };
    let (a_at, a_mid) = sp(a);
    let (e_at, e_mid) = sp(e);
    let mut u = FlatMatrix::identity(m, r);
    let mut v = FlatMatrix::zero(m, r);
    let mut ku: Vec<FlatMatrix> = (0..4).map(|_| FlatMatrix::zero(m, r)).collect();
    let mut kv = ku.clone();
    let (mut tu, mut tv) = (FlatMatrix::zero(m, r), FlatMatrix::zero(m, r));
    for k in 0..n {
        let stages = [
            (&a_at[k], &e_at[k], 0.0),
            (&a_mid[k], &e_mid[k], h / 2.0),
            (&a_mid[k], &e_mid[k], h / 2.0),
            (&a_at[k + 1], &e_at[k + 1], h),
        ];
        for (i, (ak, ek, c)) in stages.into_iter().enumerate() {
            if i == 0 {
                tu.assign_axpy(&u, &u, 0.0);
                tv.assign_axpy(&v, &v, 0.0);
            } else {
                tu.assign_axpy(&u, &ku[i - 1], c);
                tv.assign_axpy(&v, &kv[i - 1], c);
            }
            ku[i].fill_zero();
            ku[i].add_product(ak, &tu, -1.0, &signs);
            kv[i].fill_zero();
            kv[i].add_product(ak, &tv, -1.0, &signs);
            kv[i].add_product(ek, &tu, 1.0, &signs);
        }
        for i in 0..4 {
            let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0][i];
            u.axpy(&ku[i], w);
            v.axpy(&kv[i], w);
        }
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::Divergence { step: k + 1 });
        }
    }
    Ok((u.to_matrix(), v.to_matrix()))
}

fn combine(a: &Samples, b: &Samples, s: f64) -> Samples {
    let plus = |x: &GrassmannMatrix, y: &GrassmannMatrix| {
        let mut o = x.clone();
        gm_axpy(&mut o, y, s);
        o
    };
    Samples {
        at: a.at.iter().zip(&b.at).map(|(x, y)| plus(x, y)).collect(),
        mid: a.mid.iter().zip(&b.mid).map(|(x, y)| plus(x, y)).collect(),
    }
}

/// Terms of the infinitesimal change-of-trivialization law. The
/// prediction is `endpoint + brst_v + t_v + v_t`.
#[derive(Clone, Debug)]
pub struct TrivializationTerms {
    /// Central difference of `U(T + lambda delta_eps T)` in `lambda`.
    pub finite_difference: GrassmannMatrix,
    /// `-eps(1) U + U eps(0)`.
    pub endpoint: GrassmannMatrix,
    /// `(-1)^a delta_B V^a_b`.
    pub brst_v: GrassmannMatrix,
    /// `(-1)^a T^a_d(1) V^d_b`.
    pub t_v: GrassmannMatrix,
    /// `(-1)^d V^a_d T^d_b(0)`.
    pub v_t: GrassmannMatrix,
    pub v: GrassmannMatrix,
}

impl TrivializationTerms {
    pub fn predicted(&self) -> GrassmannMatrix {
        gm_add(&gm_add(&self.endpoint, &self.brst_v), &gm_add(&self.t_v, &self.v_t))
    }

    /// `|fd - predicted| / |fd|`.
    pub fn relative_residual(&self) -> f64 {
        let d = gm_norm(&gm_sub(&self.finite_difference, &self.predicted()));
        d / gm_norm(&self.finite_difference).max(f64::MIN_POSITIVE)
    }
}

pub fn infinitesimal_trivialization(
    t: &RepMatrix,
    eps: &PolyMatrix,
    c: &SuperCurve,
    lambda: f64,
) -> Result<TrivializationTerms> {
    let chart = t.base().clone();
    let levels = levels_of(t);
    let r = t.rank();
    let cm_t = CompiledMatrix::from_rep(t)?;
    cm_t.check_curve(c)?;
    let delta = crate::representation::infinitesimal_gauge(t, eps)?;
    let cm_d = CompiledMatrix::new(&chart, &delta)?;
    let cm_e = CompiledMatrix::new(&chart, eps)?;
    let (m, h, n) = (c.grassmann_rank(), c.h(), c.grid_n());

    let s_t = sample(&cm_t, c);
    let s_d = sample(&cm_d, c);
    let up = transport(&combine(&s_t, &s_d, lambda), m, r, h, false)?.pop().expect("one");
    let um = transport(&combine(&s_t, &s_d, -lambda), m, r, h, false)?.pop().expect("one");
    let finite_difference = gm_scale(&gm_sub(&up, &um), 0.5 / lambda);

    let v_of = |curve: &SuperCurve| -> Result<(GrassmannMatrix, GrassmannMatrix)> {
        let a = sample(&cm_t, curve);
        let e = sample(&cm_e, curve);
        let e = Samples {
            at: e.at.iter().map(|x| sign_rows(x, &levels)).collect(),
            mid: e.mid.iter().map(|x| sign_rows(x, &levels)).collect(),
        };
        transport_with_v(&a, &e, curve.grassmann_rank(), r, curve.h())
    };
    let (u, v) = v_of(c)?;

    let sys = crate::supercurve::EomSystem::new(t.q());
    let var = crate::supercurve::brst_variation(&sys, c);
    let (_, v1) = v_of(&c.odd_shift(&var)?)?;
    let (_, delta_v) = split_matrix(&v1);

    let x1 = c.t_components_at(n);
    let x0 = c.t_components_at(0);
    let endpoint = gm_sub(&gm_mul(&u, &cm_e.eval(&x0)), &gm_mul(&cm_e.eval(&x1), &u));
    let brst_v = sign_rows(&delta_v, &levels);
    let t_v = sign_rows(&gm_mul(&cm_t.eval(&x1), &v), &levels);
    let v_t = gm_mul(&sign_cols(&v, &levels), &cm_t.eval(&x0));
    Ok(TrivializationTerms { finite_difference, endpoint, brst_v, t_v, v_t, v })
}

/// `Omega^{-1}(x(1)) U Omega(x(0))` against the Wilson line of the
/// transformed matrix; returns the max-norm difference.
pub fn gauge_covariance_residual(
    t: &RepMatrix,
    omega: &crate::representation::GaugeMatrix,
    c: &SuperCurve,
) -> Result<f64> {
    let tt = crate::representation::gauge_transform(t, omega)?;
    let inv = omega.inverse()?;
    let n = c.grid_n();
    let o = CompiledMatrix::new(c.chart(), &omega.entries)?;
    let oi = CompiledMatrix::new(c.chart(), &inv)?;
    let u = wilson_line(t, c)?.u;
    let ut = wilson_line(&tt, c)?.u;
    let predicted = gm_mul(&gm_mul(&oi.eval(&c.t_components_at(n)), &u), &o.eval(&c.t_components_at(0)));
    Ok(gm_norm(&gm_sub(&ut, &predicted)))
}

/// `|U_O(T~) - U_O(T)|` for a closed curve and any invertible `Omega`.
pub fn loop_gauge_residual(
    t: &RepMatrix,
    omega: &crate::representation::GaugeMatrix,
    c: &SuperCurve,
    period: &[f64],
) -> Result<(GrassmannValue, GrassmannValue)> {
    let tt = crate::representation::gauge_transform(t, omega)?;
    Ok((wilson_loop(t, c, period)?, wilson_loop(&tt, c, period)?))
}

/// Largest `|U(s) - U(0)|` over the frames of a homotopy flow.
pub fn line_homotopy_drift(t: &RepMatrix, frames: &[SuperCurve]) -> Result<f64> {
    let cm = CompiledMatrix::from_rep(t)?;
    let levels = levels_of(t);
    let u0 = wilson_line_compiled(&cm, levels.clone(), &frames[0])?;
    let mut worst = 0.0f64;
    for f in &frames[1..] {
        worst = worst.max(wilson_line_compiled(&cm, levels.clone(), f)?.distance(&u0));
    }
    Ok(worst)
}

/// Largest `|U_O(s) - U_O(0)|` over the frames of a loop homotopy.
pub fn loop_homotopy_drift(t: &RepMatrix, frames: &[SuperCurve], period: &[f64]) -> Result<f64> {
    let cm = CompiledMatrix::from_rep(t)?;
    let levels = levels_of(t);
    let mut base: Option<GrassmannValue> = None;
    let mut worst = 0.0f64;
    for f in frames {
        let gap = closure_gap(f, period);
        if gap > CLOSURE_TOL {
            return Err(Error::NotClosed(gap));
        }
        let w = loop_from_line(&wilson_line_compiled(&cm, levels.clone(), f)?);
        match &base {
            None => base = Some(w),
            Some(b) => worst = worst.max(w.sub(b).norm()),
        }
    }
    Ok(worst)
}

/// Both sides of the general deformation law at `s = 0`:
/// `d_s U` (central differences over flows by `+-ds` and `+-ds/2`, Richardson
/// combined) and
/// `iota_xbar(-T(1) U + (-1)^{a+c} U T(0))`, the latter as the `eta_0`
/// coefficient along `c + eta_0 xbar`.
pub fn homotopy_law(
    t: &RepMatrix,
    c: &SuperCurve,
    hg: &crate::supercurve::HomotopyGenerator,
    ds: f64,
) -> Result<(GrassmannMatrix, GrassmannMatrix)> {
    let cm = CompiledMatrix::from_rep(t)?;
    let levels = levels_of(t);
    let central = |h: f64| -> Result<GrassmannMatrix> {
        let fwd = crate::supercurve::homotopy_flow(t.q(), c, hg, 1, h)?;
        let bwd = crate::supercurve::homotopy_flow(t.q(), c, hg, 1, -h)?;
        let up = wilson_line_compiled(&cm, levels.clone(), &fwd[1])?.u;
        let um = wilson_line_compiled(&cm, levels.clone(), &bwd[1])?.u;
        Ok(gm_scale(&gm_sub(&up, &um), 0.5 / h))
    };
    // Richardson pairing removes the O(ds^2) term
    let (d1, d2) = (central(ds)?, central(ds / 2.0)?);
    let ds_u = gm_sub(&gm_scale(&d2, 4.0 / 3.0), &gm_scale(&d1, 1.0 / 3.0));

    let n = c.grid_n();
    let m = c.grassmann_rank();
    let kg = c.chart().len();
    let dir = crate::supercurve::Variation {
        t: (0..kg).map(|g| (0..=n).map(|k| hg.value(g, k).clone()).collect()).collect(),
        theta: vec![vec![GrassmannValue::zero(m); n + 1]; kg],
    };
    let sh = c.odd_shift(&dir)?;
    let u = wilson_line_compiled(&cm, levels.clone(), &sh)?.u;
    let comb = endpoint_combination(&cm.eval(&sh.t_components_at(n)), &u, &cm.eval(&sh.t_components_at(0)), &levels);
    let (_, iota) = split_matrix(&comb);
    Ok((ds_u, iota))
}

/// Courant frame change induced by a base coordinate change with Jacobian
/// `a` (`a[i][j] = d x~^i / d x^j`, polynomial in the `x`):
/// `Omega^p_p~ = Omega^q_q~ = A^-1`, `Omega^q_p~ = -Q A^-1`.
pub fn courant_transition(t: &RepMatrix, a: &PolyMatrix) -> Result<crate::representation::GaugeMatrix> {
    use crate::representation::{FiberSpec, GaugeMatrix};
    let chart = t.base().clone();
    let n = a.len();
    let fiber = t.fiber().clone();
    if fiber.len() != 2 * n {
        return Err(Error::Invalid(format!("frame change must be {n}x{n} for this fibre")));
    }
    for (i, row) in a.iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            if p.degrees().iter().any(|&d| d != 0) {
                return Err(Error::Invalid(format!("A[{i}][{j}] must have degree 0")));
            }
        }
    }
    let scratch = FiberSpec::new((0..n).map(|i| (format!("w{i}"), 0)).collect())?;
    let a_inv = GaugeMatrix::new(&chart, scratch.clone(), scratch, a.clone())?.inverse()?;
    let q_of = |i: usize| fiber.index(&format!("q_x{}", i + 1)).ok_or_else(|| Error::Invalid("not a Courant fibre".into()));
    let p_of = |i: usize| fiber.index(&format!("p_x{}", i + 1)).ok_or_else(|| Error::Invalid("not a Courant fibre".into()));
    let mut e = crate::representation::zero_matrix(&chart, 2 * n, 2 * n);
    for rho in 0..n {
        for mu in 0..n {
            let ai = &a_inv[rho][mu];
            e[p_of(rho)?][p_of(mu)?] = ai.clone();
            e[q_of(rho)?][q_of(mu)?] = ai.clone();
            e[q_of(rho)?][p_of(mu)?] = t.q().apply(ai)?.neg();
        }
    }
    GaugeMatrix::new(&chart, fiber.clone(), fiber, e)
}

/// The three sides of the transition-function deformation law at one
/// grid point `k`.
#[derive(Clone, Debug)]
pub struct TransitionDeformation {
    /// Central difference of `Omega(x_t(t_k))` along the homotopy flow.
    pub ds_omega: GrassmannMatrix,
    /// `iota_xbar(-T Omega + (-1)^{a+c} Omega T)`.
    pub law: GrassmannMatrix,
    /// Chain rule along the flow: `sum_g (d_s x^g) d_g Omega`.
    pub direct: GrassmannMatrix,
}

impl TransitionDeformation {
    pub fn law_residual(&self) -> f64 {
        gm_norm(&gm_sub(&self.ds_omega, &self.law))
    }

    pub fn direct_residual(&self) -> f64 {
        gm_norm(&gm_sub(&self.ds_omega, &self.direct))
    }
}

pub fn check_transition_deformation(
    t: &RepMatrix,
    omega: &crate::representation::GaugeMatrix,
    c: &SuperCurve,
    hg: &crate::supercurve::HomotopyGenerator,
    k: usize,
    ds: f64,
) -> Result<TransitionDeformation> {
    let cm_t = CompiledMatrix::from_rep(t)?;
    let cm_o = CompiledMatrix::new(t.base(), &omega.entries)?;
    cm_t.check_curve(c)?;
    let levels = levels_of(t);
    let fwd = crate::supercurve::homotopy_flow(t.q(), c, hg, 1, ds)?;
    let bwd = crate::supercurve::homotopy_flow(t.q(), c, hg, 1, -ds)?;
    let op = cm_o.eval(&fwd[1].t_components_at(k));
    let om = cm_o.eval(&bwd[1].t_components_at(k));
    let ds_omega = gm_scale(&gm_sub(&op, &om), 0.5 / ds);

    // eta_0 shift of the point by xbar
    let m = c.grassmann_rank();
    let x: Vec<GrassmannValue> = c.t_components_at(k).iter().map(|v| v.lift(m + 1, 1)).collect();
    let xb: Vec<GrassmannValue> = (0..c.chart().len())
        .map(|g| GrassmannValue::generator(m + 1, 0).mul(&hg.value(g, k).lift(m + 1, 1)))
        .collect();
    let shifted: Vec<GrassmannValue> = x.iter().zip(&xb).map(|(a, b)| a.add(b)).collect();
    let tx = cm_t.eval(&shifted);
    let ox = cm_o.eval(&shifted);
    let (_, law) = split_matrix(&endpoint_combination(&tx, &ox, &tx, &levels));

    let xbar: Vec<GrassmannValue> = (0..c.chart().len()).map(|g| hg.value(g, k).clone()).collect();
    let sys = crate::supercurve::EomSystem::new(t.q());
    let x0 = c.t_components_at(k);
    let direct = cm_o.theta_derivative(&x0, &sys.contract(&x0, &xbar));
    Ok(TransitionDeformation { ds_omega, law, direct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graded_algebra::{int, rat, GradedPoly, Scalar};
    use crate::linalg::real_expm;
    use crate::nq_manifold::*;
    use crate::representation::*;
    use crate::supercurve::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn so3_k(scale: Scalar) -> Vec<Vec<Scalar>> {
        let f = so3_constants();
        (0..3).map(|i| (0..3).map(|j| &f[0][i][j] * &scale).collect()).collect()
    }

    fn real(k: &[Vec<Scalar>], s: f64) -> Vec<Vec<f64>> {
        k.iter().map(|r| r.iter().map(|v| s * scalar_f(v)).collect()).collect()
    }

    fn scalar_f(v: &Scalar) -> f64 {
        crate::graded_algebra::scalar_to_f64(v)
    }

    fn flat_so3(n: usize) -> RepMatrix {
        let mut mats = vec![so3_k(int(1))];
        for i in 1..n {
            mats.push(so3_k(rat(1, i as i64 + 1)));
        }
        flat_bundle_rep(n, &constant_connection(n, &mats).unwrap()).unwrap()
    }

    fn abelian(c: i64) -> RepMatrix {
        flat_bundle_rep(1, &constant_connection(1, &[vec![vec![int(c)]]]).unwrap()).unwrap()
    }

    fn adjoint() -> RepMatrix {
        hamiltonian_lift(&so3_dual_poisson().unwrap()).unwrap()
    }

    /// `1 + eps` with degree-1 entries mixing the two fibre levels.
    fn positive_gauge(t: &RepMatrix) -> GaugeMatrix {
        let (b, f) = (t.base(), t.fiber());
        let mut eps = zero_matrix(b, t.rank(), t.rank());
        let odd: Vec<String> = b.generators().iter().filter(|g| g.degree == 1).map(|g| g.name.clone()).collect();
        for r in 0..t.rank() {
            for a in 0..t.rank() {
                if f.level(a) - f.level(r) == 1 && (r + a) % 2 == 1 {
                    let src = format!("x2*{} + {}", odd[r % odd.len()], odd[a % odd.len()]);
                    eps[r][a] = GradedPoly::parse(b, &src).unwrap();
                }
            }
        }
        GaugeMatrix::one_plus(b, f, &eps).unwrap()
    }

    /// Tangent curve with `v_theta(t) = 0.3 + 1.2 t - 0.9 t^2`, so `dx = 0.6`.
    fn tangent_curve(t: &RepMatrix, m: u32, n: usize) -> SuperCurve {
        let chart = t.base();
        let x0 = initial_point(chart, m, &[("x1", 0.2)]).unwrap();
        let drive = Drive::polynomial(chart, m, n, &[("v1", vec![0.3, 1.2, -0.9])]).unwrap();
        solve_eom(t.q(), &x0, &drive).unwrap()
    }

    fn offshell(t: &RepMatrix, m: u32, n: usize, seed: u64) -> SuperCurve {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_offshell_curve(t.base(), m, n, &[0.3, -0.2, 0.5], 0.4, &mut rng).unwrap()
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let t = flat_bundle_rep(1, &constant_connection(1, &[vec![vec![int(0); 2]; 2]]).unwrap()).unwrap();
        let w = wilson_line(&t, &tangent_curve(&t, 2, 50)).unwrap();
        assert_eq!(w.u, gm_identity(2, 2));
    }

    #[test]
    fn abelian_integrand_is_the_velocity() {
        let t = abelian(3);
        let c = tangent_curve(&t, 0, 40);
        for k in [0, 13, 40] {
            let tk = k as f64 / 40.0;
            let xdot = 0.3 + 1.2 * tk - 0.9 * tk * tk;
            assert!((integrand(&t, &c, k).unwrap()[0][0].body() - 3.0 * xdot).abs() < 1e-12);
        }
    }

    #[test]
    fn degree_zero_entries_do_not_contribute() {
        let q = tangent_q(1).unwrap();
        let chart = q.chart().clone();
        let fiber = FiberSpec::new(vec![("z".into(), 0), ("w".into(), 1)]).unwrap();
        let mut m = zero_matrix(&chart, 2, 2);
        m[fiber.index("w").unwrap()][fiber.index("z").unwrap()] = GradedPoly::parse(&chart, "x1*x1 + 2").unwrap();
        let t = RepMatrix::new_unchecked(q, fiber, m).unwrap();
        let c = offshell(&t, 2, 20, 4);
        for k in 0..=20 {
            assert!(gm_norm(&integrand(&t, &c, k).unwrap()) == 0.0);
        }
    }

    #[test]
    fn abelian_line_is_an_exponential() {
        let t = abelian(2);
        let c = tangent_curve(&t, 0, 2000);
        let u = wilson_line(&t, &c).unwrap().u[0][0].body();
        assert!((u - (-2.0f64 * 0.6).exp()).abs() < 1e-10, "{u}");
    }

    #[test]
    fn so3_line_is_a_rotation() {
        let t = flat_so3(1);
        let c = tangent_curve(&t, 0, 2000);
        let w = wilson_line(&t, &c).unwrap();
        // T is the transpose of the connection, so U = exp(-K^T dx) = exp(K dx)
        let want = real_expm(&real(&so3_k(int(1)), 0.6));
        for i in 0..3 {
            for j in 0..3 {
                assert!((w.u[i][j].body() - want[i][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn courant_line_is_trivial() {
        let t = courant_rep(2).unwrap();
        let c = offshell(&t, 3, 50, 5);
        for k in [0, 25, 50] {
            assert!(gm_norm(&integrand(&t, &c, k).unwrap()) == 0.0);
        }
        let w = wilson_line(&t, &c).unwrap();
        assert_eq!(w.u, gm_identity(3, 4));
        assert_eq!(loop_from_line(&w), GrassmannValue::zero(3));
    }

    #[test]
    fn degree_law_holds() {
        let t = gauge_transform(&adjoint(), &positive_gauge(&adjoint())).unwrap();
        let w = wilson_line(&t, &offshell(&t, 4, 100, 6)).unwrap();
        assert_eq!(w.degree_law_violation(), 0.0);
        // and the line is not trivially block diagonal
        let off = (0..w.rank())
            .flat_map(|a| (0..w.rank()).map(move |b| (a, b)))
            .filter(|&(a, b)| w.levels[b] > w.levels[a])
            .map(|(a, b)| w.u[a][b].norm())
            .fold(0.0, f64::max);
        assert!(off > 1e-3, "{off} {:?}", w.levels);
    }

    #[test]
    fn splitting_and_splicing_is_exact() {
        let t = gauge_transform(&adjoint(), &positive_gauge(&adjoint())).unwrap();
        // the cut only changes the midpoint stencils, an O(h^4) effect
        let c = offshell(&t, 3, 1200, 8);
        let whole = wilson_line(&t, &c).unwrap();
        let piece = |a, b| wilson_line(&t, &c.restrict(a, b).unwrap()).unwrap();
        let id = |w: &WilsonLine| TransitionInsertion::identity(3, t.rank(), w.end.clone());
        let (l, r) = (piece(0, 500), piece(500, 1200));
        let joined = splice(&r, &id(&l), &l).unwrap();
        assert!(joined.distance(&whole) < 1e-10, "{}", joined.distance(&whole));
        assert_eq!(joined.grid_n, 1200);

        let (a, b, d) = (piece(0, 400), piece(400, 800), piece(800, 1200));
        let left_first = splice(&d, &id(&b), &splice(&b, &id(&a), &a).unwrap()).unwrap();
        let right_first = splice(&splice(&d, &id(&b), &b).unwrap(), &id(&a), &a).unwrap();
        assert!(left_first.distance(&right_first) < 1e-12);
    }

    #[test]
    fn splice_rejects_a_gap() {
        let t = abelian(1);
        let c = tangent_curve(&t, 0, 40);
        let l = wilson_line(&t, &c.restrict(0, 20).unwrap()).unwrap();
        let r = wilson_line(&t, &c.restrict(24, 40).unwrap()).unwrap();
        let ins = TransitionInsertion::identity(0, 1, l.end.clone());
        assert!(matches!(splice(&r, &ins, &l), Err(Error::EndpointMismatch(_))));
    }

    fn offshell_loop(t: &RepMatrix, m: u32, n: usize, seed: u64) -> SuperCurve {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_offshell_loop(t.base(), m, n, &[0.3, -0.2, 0.5], 0.4, &mut rng).unwrap()
    }

    #[test]
    fn loop_ignores_the_base_point() {
        let t = gauge_transform(&adjoint(), &positive_gauge(&adjoint())).unwrap();
        let c = offshell_loop(&t, 4, 1500, 9);
        let w0 = wilson_loop(&t, &c, &[]).unwrap();
        for k in [1, 370, 1100] {
            let w = wilson_loop(&t, &c.rotate(k, &[]).unwrap(), &[]).unwrap();
            assert!(w.sub(&w0).norm() < 1e-10, "{}", w.sub(&w0).norm());
        }
        assert!(w0.norm() > 1e-3);
    }

    #[test]
    fn open_curve_is_not_a_loop() {
        let t = abelian(1);
        let c = tangent_curve(&t, 0, 40);
        assert!(matches!(wilson_loop(&t, &c, &[]), Err(Error::NotClosed(_))));
    }

    #[test]
    fn exact_connection_has_trivial_loops() {
        let t = abelian(3);
        let chart = t.base().clone();
        let drive = Drive::sample(&chart, 0, 400, |_, t| GrassmannValue::scalar(0, (2.0 * std::f64::consts::PI * t).sin()));
        let c = solve_eom(t.q(), &initial_point(&chart, 0, &[("x1", 0.1)]).unwrap(), &drive).unwrap();
        let w = wilson_loop(&t, &c, &[]).unwrap();
        assert!((w.body() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn winding_loop_on_an_annulus() {
        // x1 is an angle with period 2 pi; K scaled so the holonomy is not trivial
        let s = rat(3, 10);
        let t = flat_bundle_rep(1, &constant_connection(1, &[so3_k(s)]).unwrap()).unwrap();
        let chart = t.base().clone();
        let two_pi = 2.0 * std::f64::consts::PI;
        let drive = Drive::sample(&chart, 0, 2000, |_, t| GrassmannValue::scalar(0, two_pi * (1.0 + 0.5 * (two_pi * t).sin())));
        let c = solve_eom(t.q(), &initial_point(&chart, 0, &[("x1", 0.0)]).unwrap(), &drive).unwrap();
        let w = wilson_loop(&t, &c, &[two_pi]).unwrap();
        let e = real_expm(&real(&so3_k(rat(-3, 10)), two_pi));
        let want = e[0][0] + e[1][1] + e[2][2];
        assert!((w.body() - want).abs() < 1e-8, "{} {want}", w.body());
        assert!((want - 3.0).abs() > 0.1);
    }

    #[test]
    fn brst_law_holds_off_shell() {
        let courant = courant_rep(2).unwrap();
        let law = check_brst_endpoint_law(&courant, &offshell(&courant, 3, 100, 1)).unwrap();
        assert_eq!(law.scale, 0.0);
        for t in [adjoint(), flat_so3(2), gauge_transform(&adjoint(), &positive_gauge(&adjoint())).unwrap()] {
            let law = check_brst_endpoint_law(&t, &offshell(&t, 3, 400, 1)).unwrap();
            assert!(law.scale > 0.1);
            assert!(law.residual < 1e-7 * law.scale, "{} {}", law.residual, law.scale);
        }
    }

    #[test]
    fn brst_law_is_fourth_order() {
        let t = adjoint();
        let r = |n| check_brst_endpoint_law(&t, &offshell(&t, 3, n, 1)).unwrap().residual;
        let ratio = r(100) / r(200);
        assert!((12.0..=24.0).contains(&ratio), "{ratio}");
    }

    fn mixed_eps(t: &RepMatrix) -> PolyMatrix {
        let (b, f) = (t.base(), t.fiber());
        let odd = b.generators().iter().find(|g| g.degree == 1).unwrap().name.clone();
        let mut eps = zero_matrix(b, t.rank(), t.rank());
        for r in 0..t.rank() {
            for a in 0..t.rank() {
                let d = f.level(a) - f.level(r);
                if d == 0 && (r + a) % 2 == 0 {
                    eps[r][a] = GradedPoly::parse(b, "x1 + 2").unwrap();
                }
                if d == 1 {
                    eps[r][a] = GradedPoly::parse(b, &format!("x2*{odd}")).unwrap();
                }
            }
        }
        eps
    }

    #[test]
    fn trivialization_law_with_v_term() {
        for t in [courant_rep(2).unwrap(), adjoint(), flat_so3(2)] {
            let eps = mixed_eps(&t);
            let terms = infinitesimal_trivialization(&t, &eps, &offshell(&t, 3, 200, 2), 1e-4).unwrap();
            assert!(gm_norm(&terms.finite_difference) > 0.1);
            assert!(terms.relative_residual() < 1e-5, "{}", terms.relative_residual());
        }
        // positive-degree eps feeds the V terms
        let t = courant_rep(2).unwrap();
        let terms = infinitesimal_trivialization(&t, &mixed_eps(&t), &offshell(&t, 3, 200, 2), 1e-4).unwrap();
        assert!(gm_norm(&terms.brst_v) > 0.1 && gm_norm(&terms.t_v) > 1e-3);
    }

    #[test]
    fn identity_gauge_changes_nothing() {
        let t = adjoint();
        let c = offshell(&t, 2, 60, 3);
        assert_eq!(gauge_covariance_residual(&t, &GaugeMatrix::identity(t.base(), t.fiber()), &c).unwrap(), 0.0);
    }

    fn courant_frame(chart: &ChartRef) -> PolyMatrix {
        // x~2 = x2 + (x1)^3 / 5
        vec![
            vec![GradedPoly::parse(chart, "1").unwrap(), GradedPoly::zero(chart)],
            vec![GradedPoly::parse(chart, "3/5*x1*x1").unwrap(), GradedPoly::parse(chart, "1").unwrap()],
        ]
    }

    #[test]
    fn courant_transition_is_q_closed() {
        let t = courant_rep(2).unwrap();
        let omega = courant_transition(&t, &courant_frame(t.base())).unwrap();
        let tt = gauge_transform(&t, &omega).unwrap();
        assert_eq!(tt.entries(), t.entries());
        assert!(mat_is_zero(&transition_residual(&t, &t, &omega).unwrap()));
        let constant = vec![vec![GradedPoly::parse(t.base(), "2").unwrap(), GradedPoly::zero(t.base())], vec![
            GradedPoly::parse(t.base(), "1").unwrap(),
            GradedPoly::parse(t.base(), "1").unwrap(),
        ]];
        let o2 = courant_transition(&t, &constant).unwrap();
        assert!(mat_is_zero(&transition_residual(&t, &t, &o2).unwrap()));
    }

    #[test]
    fn courant_two_patch_line_is_the_transition() {
        let t = courant_rep(2).unwrap();
        let omega = courant_transition(&t, &courant_frame(t.base())).unwrap();
        let c = offshell(&t, 3, 100, 4);
        let l = wilson_line(&t, &c.restrict(0, 30).unwrap()).unwrap();
        let r = wilson_line(&t, &c.restrict(30, 100).unwrap()).unwrap();
        let ins = TransitionInsertion::at(&omega.entries, &c, 30).unwrap();
        let u = splice(&r, &ins, &l).unwrap();
        assert_eq!(u.u, ins.omega);
        assert!(gm_norm(&gm_sub(&u.u, &gm_identity(3, 4))) > 1e-2);
    }

    #[test]
    fn courant_transition_deformation() {
        let t = courant_rep(2).unwrap();
        let chart = t.base().clone();
        let omega = courant_transition(&t, &courant_frame(&chart)).unwrap();
        let (m, n) = (2, 40);
        let hg = HomotopyGenerator::from_fn(&chart, m, n, |g, s| {
            let a = if chart.generator(g).name == "v1" { 0.7 } else { -0.4 };
            (GrassmannValue::scalar(m, a * (1.0 + s)), GrassmannValue::scalar(m, a))
        })
        .unwrap();
        // off shell: the direct chain rule holds, the law misses the eom term
        let off = offshell(&t, m, n, 5);
        let d = check_transition_deformation(&t, &omega, &off, &hg, 17, 1e-3).unwrap();
        assert!(d.direct_residual() < 1e-8, "{}", d.direct_residual());
        assert!(d.law_residual() > 1e-3);
        // on shell v_t = 0 and the law holds
        let x0 = initial_point(&chart, m, &[("x1", 0.4), ("x2", -0.1)]).unwrap();
        let drive = Drive::polynomial(&chart, m, n, &[("v1", vec![0.5, 1.0]), ("v2", vec![-0.2])]).unwrap();
        let on = solve_eom(t.q(), &x0, &drive).unwrap();
        let d = check_transition_deformation(&t, &omega, &on, &hg, 17, 1e-3).unwrap();
        assert!(d.law_residual() < 1e-8, "{}", d.law_residual());
        assert!(gm_norm(&d.ds_omega) > 0.1);
    }
}
