//! Discretized super-curves `T[1][0,1] x Lambda_m -> M`.
//!
//! A generator `g` of degree `d` pulls back to a superfield
//! `g(t, theta) = g_t(t) + theta g_theta(t)` whose t-component has Grassmann
//! degree `d` and whose theta-component has Grassmann degree `d - 1`. The
//! theta-components of degree-0 generators are auxiliary and stay zero.
//!
//! With zero differential on the test manifold, the map condition
//! `theta d_t g = Q^g(g)` splits into
//!
//! ```text
//! d_t g_t = sum_h h_theta  d>_h Q^g (x_t)        (flow)
//! 0       = Q^g(x_t)                              (constraint)
//! ```
//!
//! and the theta-components are free data (the drive). For a Lie algebroid
//! this is `x' = 2 A l_theta`, `l' = -2 f l_theta l`. Higher-degree
//! generators follow the same mechanical rule.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graded_algebra::{left_partial, ChartRef};
use crate::grassmann::{fd5, interpolation_weights, midpoint_weights, CompiledPoly, GrassmannValue};
use crate::nq_manifold::QStructure;

#[derive(Clone, Debug, PartialEq)]
pub struct SuperCurve {
    chart: ChartRef,
    m: u32,
    n: usize,
    t_comp: Vec<Vec<GrassmannValue>>,
    theta_comp: Vec<Vec<GrassmannValue>>,
    solved: bool,
}

fn theta_degree(d: u32) -> Option<u32> {
    d.checked_sub(1)
}

fn check_sector(v: &GrassmannValue, deg: Option<u32>, what: &str) -> Result<()> {
    let bad = match deg {
        Some(d) => v.off_degree_norm(d),
        None => v.norm(),
    };
    if bad != 0.0 {
        return Err(Error::Invalid(format!("{what} leaves its Grassmann sector (stray coefficient {bad:e})")));
    }
    Ok(())
}

impl SuperCurve {
    pub fn new(
        chart: &ChartRef,
        m: u32,
        t_comp: Vec<Vec<GrassmannValue>>,
        theta_comp: Vec<Vec<GrassmannValue>>,
    ) -> Result<Self> {
        let k = chart.len();
        if t_comp.len() != k || theta_comp.len() != k {
            return Err(Error::Invalid(format!("expected {k} generators")));
        }
        let n = t_comp.first().map(|v| v.len()).unwrap_or(1).saturating_sub(1);
        if n < 4 {
            return Err(Error::Invalid("a curve needs at least 4 grid intervals".into()));
        }
        let c = SuperCurve { chart: chart.clone(), m, n, t_comp, theta_comp, solved: false };
        c.validate()?;
        Ok(c)
    }

    /// The constant curve at `x0` with zero drive.
    pub fn constant(chart: &ChartRef, x0: &[GrassmannValue], n: usize) -> Result<Self> {
        let m = x0.first().map(|v| v.rank()).unwrap_or(0);
        let t_comp = x0.iter().map(|v| vec![v.clone(); n + 1]).collect();
        let theta_comp = vec![vec![GrassmannValue::zero(m); n + 1]; chart.len()];
        SuperCurve::new(chart, m, t_comp, theta_comp)
    }

    fn validate(&self) -> Result<()> {
        for (g, gen) in self.chart.generators().iter().enumerate() {
            let (tc, th) = (&self.t_comp[g], &self.theta_comp[g]);
            if tc.len() != self.n + 1 || th.len() != self.n + 1 {
                return Err(Error::Invalid(format!("component arrays of `{}` have the wrong length", gen.name)));
            }
            for k in 0..=self.n {
                if tc[k].rank() != self.m || th[k].rank() != self.m {
                    return Err(Error::Invalid(format!("`{}` sample {k} has the wrong Grassmann rank", gen.name)));
                }
                check_sector(&tc[k], Some(gen.degree), &format!("t-component of `{}` at {k}", gen.name))?;
                check_sector(&th[k], theta_degree(gen.degree), &format!("theta-component of `{}` at {k}", gen.name))?;
            }
        }
        Ok(())
    }

    pub fn chart(&self) -> &ChartRef {
        &self.chart
    }

    pub fn grassmann_rank(&self) -> u32 {
        self.m
    }

    pub fn grid_n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn is_solved(&self) -> bool {
        self.solved
    }

    pub fn t_component(&self, g: usize) -> &[GrassmannValue] {
        &self.t_comp[g]
    }

    pub fn theta_component(&self, g: usize) -> &[GrassmannValue] {
        &self.theta_comp[g]
    }

    pub fn t_components_at(&self, k: usize) -> Vec<GrassmannValue> {
        self.t_comp.iter().map(|c| c[k].clone()).collect()
    }

    pub fn theta_components_at(&self, k: usize) -> Vec<GrassmannValue> {
        self.theta_comp.iter().map(|c| c[k].clone()).collect()
    }

    /// Body of the t-component of the named generator at sample `k`.
    pub fn real(&self, name: &str, k: usize) -> Result<f64> {
        Ok(self.t_comp[self.chart.try_index(name)?][k].body())
    }

    /// t-components at the midpoint `t_k + h/2`, by cubic interpolation.
    pub fn t_components_mid(&self, k: usize) -> Vec<GrassmannValue> {
        mid(&self.t_comp, k, self.n, self.m)
    }

    pub fn theta_components_mid(&self, k: usize) -> Vec<GrassmannValue> {
        mid(&self.theta_comp, k, self.n, self.m)
    }

    /// Overwrite one sample; used to build corrupted or perturbed curves.
    pub fn set_sample(&mut self, g: usize, k: usize, t: GrassmannValue, theta: GrassmannValue) -> Result<()> {
        let gen = self.chart.generator(g);
        check_sector(&t, Some(gen.degree), "t-component")?;
        check_sector(&theta, theta_degree(gen.degree), "theta-component")?;
        self.t_comp[g][k] = t;
        self.theta_comp[g][k] = theta;
        self.solved = false;
        Ok(())
    }

    /// Componentwise `self + s * other`; the result is not flagged solved.
    pub fn axpy(&self, other: &SuperCurve, s: f64) -> Result<SuperCurve> {
        self.compatible(other)?;
        let mut c = self.clone();
        for g in 0..self.chart.len() {
            for k in 0..=self.n {
                c.t_comp[g][k].add_scaled(&other.t_comp[g][k], s);
                c.theta_comp[g][k].add_scaled(&other.theta_comp[g][k], s);
            }
        }
        c.solved = false;
        Ok(c)
    }

    fn compatible(&self, other: &SuperCurve) -> Result<()> {
        if !crate::graded_algebra::Chart::same(&self.chart, &other.chart) {
            return Err(Error::ChartMismatch(self.chart.name().into(), other.chart.name().into()));
        }
        if self.n != other.n || self.m != other.m {
            return Err(Error::Invalid("curves live on different grids".into()));
        }
        Ok(())
    }

    /// The same curve in `Lambda_{m_new}`, with Grassmann indices shifted up.
    pub fn lift(&self, m_new: u32, shift: u32) -> SuperCurve {
        let map = |v: &Vec<Vec<GrassmannValue>>| -> Vec<Vec<GrassmannValue>> {
            v.iter().map(|c| c.iter().map(|x| x.lift(m_new, shift)).collect()).collect()
        };
        SuperCurve { m: m_new, t_comp: map(&self.t_comp), theta_comp: map(&self.theta_comp), ..self.clone() }
    }

    /// `self + eta_0 * dir` in `Lambda_{m+1}`, with `eta_0` prepended. The
    /// first-order coefficient of any functional of the result is the
    /// derivative along `dir` with `dir` acting from the left.
    pub fn odd_shift(&self, dir: &Variation) -> Result<SuperCurve> {
        let k = self.chart.len();
        if dir.t.len() != k || dir.theta.len() != k || dir.t.iter().chain(&dir.theta).any(|c| c.len() != self.n + 1) {
            return Err(Error::Invalid("variation does not match the curve".into()));
        }
        let m1 = self.m + 1;
        let e0 = GrassmannValue::generator(m1, 0);
        let mix = |a: &Vec<Vec<GrassmannValue>>, b: &Vec<Vec<GrassmannValue>>| -> Vec<Vec<GrassmannValue>> {
            a.iter()
                .zip(b)
                .map(|(ca, cb)| {
                    ca.iter().zip(cb).map(|(x, y)| x.lift(m1, 1).add(&e0.mul(&y.lift(m1, 1)))).collect()
                })
                .collect()
        };
        Ok(SuperCurve {
            chart: self.chart.clone(),
            m: m1,
            n: self.n,
            t_comp: mix(&self.t_comp, &dir.t),
            theta_comp: mix(&self.theta_comp, &dir.theta),
            solved: false,
        })
    }

    /// The piece between samples `k0 <= k1`, reparameterized to `[0, 1]`.
    pub fn restrict(&self, k0: usize, k1: usize) -> Result<SuperCurve> {
        if k1 > self.n || k1 < k0 + 4 {
            return Err(Error::Invalid(format!("cannot restrict to samples {k0}..{k1}")));
        }
        let scale = (k1 - k0) as f64 / self.n as f64;
        let t_comp = self.t_comp.iter().map(|c| c[k0..=k1].to_vec()).collect();
        let theta_comp = self.theta_comp.iter().map(|c| c[k0..=k1].iter().map(|v| v.scale(scale)).collect()).collect();
        Ok(SuperCurve { chart: self.chart.clone(), m: self.m, n: k1 - k0, t_comp, theta_comp, solved: self.solved })
    }

    /// Start a closed curve at sample `k` instead of 0. Periodic
    /// coordinates are handled by `period`: generator `g` jumps by
    /// `period[g]` once around the loop.
    pub fn rotate(&self, k: usize, period: &[f64]) -> Result<SuperCurve> {
        let n = self.n;
        let mut c = self.clone();
        for g in 0..self.chart.len() {
            let p = period.get(g).copied().unwrap_or(0.0);
            for j in 0..=n {
                let src = (j + k) % n;
                let wrap = if j + k >= n { p } else { 0.0 };
                let mut v = self.t_comp[g][src].clone();
                if wrap != 0.0 {
                    v.add_assign(&GrassmannValue::scalar(self.m, wrap));
                }
                c.t_comp[g][j] = v;
                c.theta_comp[g][j] = self.theta_comp[g][src].clone();
            }
        }
        Ok(c)
    }
}

fn mid(comp: &[Vec<GrassmannValue>], k: usize, n: usize, m: u32) -> Vec<GrassmannValue> {
    let w = midpoint_weights(k, n);
    comp.iter()
        .map(|c| {
            let mut v = GrassmannValue::zero(m);
            for &(i, a) in &w {
                v.add_scaled(&c[i], a);
            }
            v
        })
        .collect()
}

/// Theta-component samples (the free data of a curve).
#[derive(Clone, Debug)]
pub struct Drive {
    pub n: usize,
    pub theta: Vec<Vec<GrassmannValue>>,
}

impl Drive {
    pub fn zero(chart: &ChartRef, m: u32, n: usize) -> Self {
        Drive { n, theta: vec![vec![GrassmannValue::zero(m); n + 1]; chart.len()] }
    }

    /// Sample `f(g, t)` for every generator of positive degree.
    pub fn sample(chart: &ChartRef, m: u32, n: usize, f: impl Fn(usize, f64) -> GrassmannValue) -> Self {
        let theta = (0..chart.len())
            .map(|g| {
                if chart.degree_of(g) == 0 {
                    vec![GrassmannValue::zero(m); n + 1]
                } else {
                    (0..=n).map(|k| f(g, k as f64 / n as f64)).collect()
                }
            })
            .collect();
        Drive { n, theta }
    }

    /// Real drive for degree-1 generators: `l_theta^name(t) = sum_j c_j t^j`.
    pub fn polynomial(chart: &ChartRef, m: u32, n: usize, coeffs: &[(&str, Vec<f64>)]) -> Result<Self> {
        let mut idx = Vec::new();
        for (name, c) in coeffs {
            let g = chart.try_index(name)?;
            if chart.degree_of(g) != 1 {
                return Err(Error::Invalid(format!("`{name}` is not a degree-1 generator")));
            }
            idx.push((g, c.clone()));
        }
        Ok(Drive::sample(chart, m, n, |g, t| {
            let v = idx
                .iter()
                .find(|(i, _)| *i == g)
                .map(|(_, c)| c.iter().rev().fold(0.0, |a, &cj| a * t + cj))
                .unwrap_or(0.0);
            GrassmannValue::scalar(m, v)
        }))
    }
}

/// Real initial point: named degree-0 coordinates, everything else zero.
pub fn initial_point(chart: &ChartRef, m: u32, values: &[(&str, f64)]) -> Result<Vec<GrassmannValue>> {
    let mut x = vec![GrassmannValue::zero(m); chart.len()];
    for (name, v) in values {
        let g = chart.try_index(name)?;
        if chart.degree_of(g) != 0 {
            return Err(Error::Invalid(format!("`{name}` is not a degree-0 generator")));
        }
        x[g] = GrassmannValue::scalar(m, *v);
    }
    Ok(x)
}

/// `Q` compiled for component evaluation: images and their first and
/// second left derivatives.
#[derive(Clone, Debug)]
pub struct EomSystem {
    chart: ChartRef,
    q: Vec<CompiledPoly>,
    dq: Vec<Vec<(usize, CompiledPoly)>>,
    ddq: Vec<Vec<(usize, usize, CompiledPoly)>>,
}

impl EomSystem {
    pub fn new(q: &QStructure) -> Self {
        let chart = q.chart().clone();
        let k = chart.len();
        let mut images = Vec::with_capacity(k);
        let mut dq = Vec::with_capacity(k);
        let mut ddq = Vec::with_capacity(k);
        for g in 0..k {
            let img = q.derivation().image(g);
            images.push(CompiledPoly::new(img));
            let mut first = Vec::new();
            let mut second = Vec::new();
            for c in 0..k {
                let d1 = left_partial(img, c);
                if d1.is_zero() {
                    continue;
                }
                for h in 0..k {
                    let d2 = left_partial(&d1, h);
                    if !d2.is_zero() {
                        second.push((c, h, CompiledPoly::new(&d2)));
                    }
                }
                first.push((c, CompiledPoly::new(&d1)));
            }
            dq.push(first);
            ddq.push(second);
        }
        EomSystem { chart, q: images, dq, ddq }
    }

    pub fn chart(&self) -> &ChartRef {
        &self.chart
    }

    /// `Q^g(x)` for every generator.
    pub fn constraint(&self, x: &[GrassmannValue]) -> Vec<GrassmannValue> {
        self.q.iter().map(|p| p.eval(x)).collect()
    }

    /// `sum_h v^h d>_h Q^g(x)` for every generator `g`.
    pub fn contract(&self, x: &[GrassmannValue], v: &[GrassmannValue]) -> Vec<GrassmannValue> {
        let m = x.first().map(|a| a.rank()).unwrap_or(0);
        self.dq
            .iter()
            .map(|terms| {
                let mut acc = GrassmannValue::zero(m);
                for (h, p) in terms {
                    if v[*h].is_zero() {
                        continue;
                    }
                    acc.add_product(&v[*h], &p.eval(x), 1.0);
                }
                acc
            })
            .collect()
    }

    /// `sum_c (-1)^{|c|-1} u^c sum_h v^h d>_h d>_c Q^g(x)`.
    pub fn contract2(&self, x: &[GrassmannValue], u: &[GrassmannValue], v: &[GrassmannValue]) -> Vec<GrassmannValue> {
        let m = x.first().map(|a| a.rank()).unwrap_or(0);
        self.ddq
            .iter()
            .map(|terms| {
                let mut acc = GrassmannValue::zero(m);
                for (c, h, p) in terms {
                    if u[*c].is_zero() || v[*h].is_zero() {
                        continue;
                    }
                    let sign = if self.chart.degree_of(*c) % 2 == 1 { 1.0 } else { -1.0 };
                    let inner = v[*h].mul(&p.eval(x));
                    acc.add_product(&u[*c], &inner, sign);
                }
                acc
            })
            .collect()
    }
}

fn axpy_vec(a: &[GrassmannValue], b: &[GrassmannValue], s: f64) -> Vec<GrassmannValue> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let mut z = x.clone();
            z.add_scaled(y, s);
            z
        })
        .collect()
}

fn all_finite(v: &[GrassmannValue]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrate the flow equation from `x0` with the given drive, classical
/// fourth-order Runge-Kutta, drive midpoints by cubic interpolation.
pub fn solve_eom(q: &QStructure, x0: &[GrassmannValue], drive: &Drive) -> Result<SuperCurve> {
    let sys = EomSystem::new(q);
    solve_with(&sys, x0, drive)
}

pub fn solve_with(sys: &EomSystem, x0: &[GrassmannValue], drive: &Drive) -> Result<SuperCurve> {
    let chart = sys.chart().clone();
    let n = drive.n;
    if x0.len() != chart.len() || drive.theta.len() != chart.len() {
        return Err(Error::Invalid(format!("expected data for {} generators", chart.len())));
    }
    let m = x0.first().map(|v| v.rank()).unwrap_or(0);
    let h = 1.0 / n as f64;
    let mut t_comp: Vec<Vec<GrassmannValue>> = x0.iter().map(|v| vec![v.clone()]).collect();
    let mut x = x0.to_vec();
    for k in 0..n {
        let th0: Vec<GrassmannValue> = drive.theta.iter().map(|c| c[k].clone()).collect();
        let th1: Vec<GrassmannValue> = drive.theta.iter().map(|c| c[k + 1].clone()).collect();
        let thm = mid(&drive.theta, k, n, m);
        let k1 = sys.contract(&x, &th0);
        let k2 = sys.contract(&axpy_vec(&x, &k1, h / 2.0), &thm);
        let k3 = sys.contract(&axpy_vec(&x, &k2, h / 2.0), &thm);
        let k4 = sys.contract(&axpy_vec(&x, &k3, h), &th1);
        for g in 0..x.len() {
            x[g].add_scaled(&k1[g], h / 6.0);
            x[g].add_scaled(&k2[g], h / 3.0);
            x[g].add_scaled(&k3[g], h / 3.0);
            x[g].add_scaled(&k4[g], h / 6.0);
        }
        if !all_finite(&x) {
            return Err(Error::Divergence { step: k + 1 });
        }
        for g in 0..x.len() {
            t_comp[g].push(x[g].clone());
        }
    }
    let mut c = SuperCurve::new(&chart, m, t_comp, drive.theta.clone())?;
    c.solved = true;
    Ok(c)
}

/// Componentwise tangent data along a curve, of either parity.
#[derive(Clone, Debug)]
pub struct Variation {
    pub t: Vec<Vec<GrassmannValue>>,
    pub theta: Vec<Vec<GrassmannValue>>,
}

impl Variation {
    pub fn norm(&self) -> f64 {
        self.t.iter().chain(&self.theta).flatten().fold(0.0, |a, v| a.max(v.norm()))
    }
}

fn fd_component(c: &[GrassmannValue], k: usize, h: f64, m: u32) -> GrassmannValue {
    fd5(c, k, h, |w| {
        let mut v = GrassmannValue::zero(m);
        for &(i, a) in w {
            v.add_scaled(&c[i], a);
        }
        v
    })
}

/// The BRST differential of every component:
/// `delta g_t = Q^g(x_t)` and `delta g_theta = g_t' - sum_h h_theta d>_h Q^g(x_t)`,
/// with `g_t'` by fourth-order differences. Zero exactly on-shell.
pub fn brst_variation(sys: &EomSystem, c: &SuperCurve) -> Variation {
    let (n, m, h) = (c.n, c.m, c.h());
    let k_gen = c.chart.len();
    let mut t = vec![Vec::with_capacity(n + 1); k_gen];
    let mut theta = vec![Vec::with_capacity(n + 1); k_gen];
    for k in 0..=n {
        let x = c.t_components_at(k);
        let v = c.theta_components_at(k);
        let q = sys.constraint(&x);
        let flow = sys.contract(&x, &v);
        for g in 0..k_gen {
            t[g].push(q[g].clone());
            theta[g].push(fd_component(&c.t_comp[g], k, h, m).sub(&flow[g]));
        }
    }
    Variation { t, theta }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EomResidual {
    /// `(name, flow residual, constraint residual)` per generator.
    pub per_generator: Vec<(String, f64, f64)>,
    pub max: f64,
    /// Sample index of the largest pointwise residual.
    pub worst_index: usize,
}

pub fn eom_residual(c: &SuperCurve, q: &QStructure) -> Result<EomResidual> {
    if !crate::graded_algebra::Chart::same(c.chart(), q.chart()) {
        return Err(Error::ChartMismatch(c.chart.name().into(), q.chart().name().into()));
    }
    Ok(eom_residual_with(&EomSystem::new(q), c))
}

pub fn eom_residual_with(sys: &EomSystem, c: &SuperCurve) -> EomResidual {
    let var = brst_variation(sys, c);
    let mut per = Vec::new();
    let mut pointwise = vec![0.0f64; c.n + 1];
    for (g, gen) in c.chart.generators().iter().enumerate() {
        let mut fl = 0.0f64;
        let mut co = 0.0f64;
        for k in 0..=c.n {
            let a = var.theta[g][k].norm();
            let b = var.t[g][k].norm();
            fl = fl.max(a);
            co = co.max(b);
            pointwise[k] = pointwise[k].max(a.max(b));
        }
        per.push((gen.name.clone(), fl, co));
    }
    let (worst_index, max) =
        pointwise.iter().enumerate().fold((0, 0.0), |(i, m), (k, &v)| if v > m { (k, v) } else { (i, m) });
    EomResidual { per_generator: per, max, worst_index }
}

/// Degree-shifted fields `xbar^g` of Grassmann degree `deg g - 1` along the
/// curve, with their t-derivatives.
#[derive(Clone, Debug)]
pub struct HomotopyGenerator {
    values: Vec<Vec<GrassmannValue>>,
    rates: Vec<Vec<GrassmannValue>>,
}

impl HomotopyGenerator {
    pub fn zero(chart: &ChartRef, m: u32, n: usize) -> Self {
        let z = vec![vec![GrassmannValue::zero(m); n + 1]; chart.len()];
        HomotopyGenerator { values: z.clone(), rates: z }
    }

    /// From `f(g, t) = (xbar^g(t), d_t xbar^g(t))`; degree-0 generators are skipped.
    pub fn from_fn(
        chart: &ChartRef,
        m: u32,
        n: usize,
        f: impl Fn(usize, f64) -> (GrassmannValue, GrassmannValue),
    ) -> Result<Self> {
        let mut hg = HomotopyGenerator::zero(chart, m, n);
        for g in 0..chart.len() {
            let Some(d) = theta_degree(chart.degree_of(g)) else { continue };
            for k in 0..=n {
                let (v, r) = f(g, k as f64 / n as f64);
                check_sector(&v, Some(d), "homotopy generator")?;
                check_sector(&r, Some(d), "homotopy generator rate")?;
                hg.values[g][k] = v;
                hg.rates[g][k] = r;
            }
        }
        Ok(hg)
    }

    /// From samples only; rates by fourth-order differences.
    pub fn from_samples(chart: &ChartRef, values: Vec<Vec<GrassmannValue>>) -> Result<Self> {
        let n = values.first().map(|v| v.len()).unwrap_or(1) - 1;
        let m = values.first().and_then(|v| v.first()).map(|v| v.rank()).unwrap_or(0);
        for (g, col) in values.iter().enumerate() {
            for v in col {
                check_sector(v, theta_degree(chart.degree_of(g)), "homotopy generator")?;
            }
        }
        let h = 1.0 / n as f64;
        let rates = values.iter().map(|c| (0..=n).map(|k| fd_component(c, k, h, m)).collect()).collect();
        Ok(HomotopyGenerator { values, rates })
    }

    /// True if every field vanishes at both ends (up to 1e-12).
    pub fn is_endpoint_fixed(&self) -> bool {
        self.values.iter().all(|c| c[0].norm() <= 1e-12 && c[c.len() - 1].norm() <= 1e-12)
    }

    pub fn values_at(&self, k: usize) -> Vec<GrassmannValue> {
        self.values.iter().map(|c| c[k].clone()).collect()
    }

    pub fn value(&self, g: usize, k: usize) -> &GrassmannValue {
        &self.values[g][k]
    }
}

/// One RK4 step of the homotopy flow at every grid point.
fn flow_step(sys: &EomSystem, c: &SuperCurve, hg: &HomotopyGenerator, ds: f64) -> Result<SuperCurve> {
    let mut out = c.clone();
    let kg = c.chart.len();
    let rhs = |x: &[GrassmannValue], th: &[GrassmannValue], k: usize| {
        let u = hg.values_at(k);
        let dx = sys.contract(x, &u);
        let mut dth = sys.contract2(x, &u, th);
        for g in 0..kg {
            dth[g].add_assign(&hg.rates[g][k]);
        }
        (dx, dth)
    };
    for k in 0..=c.n {
        let x = c.t_components_at(k);
        let th = c.theta_components_at(k);
        let (a1, b1) = rhs(&x, &th, k);
        let (a2, b2) = rhs(&axpy_vec(&x, &a1, ds / 2.0), &axpy_vec(&th, &b1, ds / 2.0), k);
        let (a3, b3) = rhs(&axpy_vec(&x, &a2, ds / 2.0), &axpy_vec(&th, &b2, ds / 2.0), k);
        let (a4, b4) = rhs(&axpy_vec(&x, &a3, ds), &axpy_vec(&th, &b3, ds), k);
        for g in 0..kg {
            for (dst, inc) in [(&mut out.t_comp[g][k], [&a1[g], &a2[g], &a3[g], &a4[g]]), (&mut out.theta_comp[g][k], [&b1[g], &b2[g], &b3[g], &b4[g]])] {
                dst.add_scaled(inc[0], ds / 6.0);
                dst.add_scaled(inc[1], ds / 3.0);
                dst.add_scaled(inc[2], ds / 3.0);
                dst.add_scaled(inc[3], ds / 6.0);
            }
        }
    }
    Ok(out)
}

/// Frames `c(s_j)`, `s_j = j ds`, `j = 0..=s_steps`, of the flow
/// `d_s g_t = sum_C xbar^C d>_C Q^g` and
/// `d_s g_theta = sum_C (-1)^{|C|-1} xbar^C sum_h h_theta d>_h d>_C Q^g + d_t xbar^g`.
pub fn homotopy_flow(
    q: &QStructure,
    c: &SuperCurve,
    hg: &HomotopyGenerator,
    s_steps: usize,
    ds: f64,
) -> Result<Vec<SuperCurve>> {
    let sys = EomSystem::new(q);
    if hg.values.len() != c.chart.len() || hg.values[0].len() != c.n + 1 {
        return Err(Error::Invalid("homotopy generator does not match the curve".into()));
    }
    let mut frames = vec![c.clone()];
    for j in 0..s_steps {
        let next = flow_step(&sys, frames.last().expect("nonempty"), hg, ds)?;
        let finite = next.t_comp.iter().chain(&next.theta_comp).flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Divergence { step: j + 1 });
        }
        next.validate()?;
        frames.push(next);
    }
    Ok(frames)
}

/// A monotone map of `[0, 1]` sampled on the grid, with its derivative.
#[derive(Clone, Debug)]
pub struct Reparameterization {
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl Reparameterization {
    pub fn from_fn(n: usize, phi: impl Fn(f64) -> f64, dphi: impl Fn(f64) -> f64) -> Result<Self> {
        let ts = (0..=n).map(|k| k as f64 / n as f64);
        let r = Reparameterization { values: ts.clone().map(&phi).collect(), derivs: ts.map(dphi).collect() };
        r.check()?;
        Ok(r)
    }

    pub fn from_samples(values: Vec<f64>) -> Result<Self> {
        let n = values.len().saturating_sub(1);
        if n < 4 {
            return Err(Error::InvalidReparameterization("need at least 5 samples".into()));
        }
        let derivs = (0..=n).map(|k| fd5(&values, k, 1.0 / n as f64, |w| w.iter().map(|&(i, a)| a * values[i]).sum())).collect();
        let r = Reparameterization { values, derivs };
        r.check()?;
        Ok(r)
    }

    pub fn identity(n: usize) -> Self {
        Reparameterization { values: (0..=n).map(|k| k as f64 / n as f64).collect(), derivs: vec![1.0; n + 1] }
    }

    /// `t^2 (3 - 2t)`.
    pub fn smoothstep(n: usize) -> Self {
        Reparameterization::from_fn(n, |t| t * t * (3.0 - 2.0 * t), |t| 6.0 * t * (1.0 - t)).expect("monotone")
    }

    fn check(&self) -> Result<()> {
        let v = &self.values;
        let n = v.len() - 1;
        if v[0].abs() > 1e-14 || (v[n] - 1.0).abs() > 1e-14 {
            return Err(Error::InvalidReparameterization(format!("endpoints map to {} and {}", v[0], v[n])));
        }
        if let Some(k) = (0..n).find(|&k| v[k + 1] <= v[k]) {
            return Err(Error::InvalidReparameterization(format!("not strictly increasing at sample {k}")));
        }
        Ok(())
    }
}

/// `x o phi` on the same grid; theta-components pick up the factor `phi'`.
pub fn reparameterize(c: &SuperCurve, phi: &Reparameterization) -> Result<SuperCurve> {
    if phi.values.len() != c.n + 1 {
        return Err(Error::InvalidReparameterization("grid sizes differ".into()));
    }
    let interp = |col: &[GrassmannValue], t: f64| {
        let mut v = GrassmannValue::zero(c.m);
        for (i, w) in interpolation_weights(t, c.n, 5) {
            v.add_scaled(&col[i], w);
        }
        v
    };
    let t_comp = c.t_comp.iter().map(|col| phi.values.iter().map(|&t| interp(col, t)).collect()).collect();
    let theta_comp = c
        .theta_comp
        .iter()
        .map(|col| phi.values.iter().zip(&phi.derivs).map(|(&t, &d)| interp(col, t).scale(d)).collect())
        .collect();
    let mut out = SuperCurve::new(&c.chart, c.m, t_comp, theta_comp)?;
    out.solved = c.solved;
    Ok(out)
}

impl SuperCurve {
    pub fn to_json(&self) -> Value {
        let gens: Vec<Value> = self
            .chart
            .generators()
            .iter()
            .enumerate()
            .map(|(g, gen)| {
                json!({
                    "name": gen.name,
                    "degree": gen.degree,
                    "t_component": self.t_comp[g].iter().map(|v| v.to_json()).collect::<Vec<_>>(),
                    "theta_component": self.theta_comp[g].iter().map(|v| v.to_json()).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({ "grid_n": self.n, "grassmann_m": self.m, "generators": gens })
    }

    /// Read a curve over `chart`; every chart generator must be present.
    pub fn from_json(chart: &ChartRef, v: &Value) -> Result<Self> {
        let bad = |msg: &str| Error::Invalid(format!("curve json: {msg}"));
        let n = v["grid_n"].as_u64().ok_or_else(|| bad("missing grid_n"))? as usize;
        let m = v["grassmann_m"].as_u64().unwrap_or(4) as u32;
        let gens = v["generators"].as_array().ok_or_else(|| bad("missing generators"))?;
        let mut t_comp = vec![Vec::new(); chart.len()];
        let mut theta_comp = vec![Vec::new(); chart.len()];
        for e in gens {
            let name = e["name"].as_str().ok_or_else(|| bad("generator without name"))?;
            let g = chart.try_index(name)?;
            if let Some(d) = e["degree"].as_u64() {
                if d as u32 != chart.degree_of(g) {
                    return Err(Error::DegreeMismatch { name: name.into(), expected: chart.degree_of(g) as i64, found: d as i64 });
                }
            }
            let read = |key: &str| -> Result<Vec<GrassmannValue>> {
                let arr = e[key].as_array().ok_or_else(|| bad(&format!("`{name}` lacks {key}")))?;
                if arr.len() != n + 1 {
                    return Err(bad(&format!("`{name}` {key} has {} samples, expected {}", arr.len(), n + 1)));
                }
                arr.iter().map(|x| GrassmannValue::from_json(m, x)).collect()
            };
            t_comp[g] = read("t_component")?;
            theta_comp[g] = read("theta_component")?;
        }
        if let Some(g) = t_comp.iter().position(|c| c.is_empty()) {
            return Err(bad(&format!("generator `{}` missing", chart.generator(g).name)));
        }
        SuperCurve::new(chart, m, t_comp, theta_comp)
    }
}

/// A smooth curve that ignores the equations of motion: every allowed
/// Grassmann coefficient is `amp * (a + b sin(2 pi w t + phase) + c t)` with
/// random parameters, so the two ends differ. Degree-0 bodies are offset by `x0`.
pub fn random_offshell_curve(
    chart: &ChartRef,
    m: u32,
    n: usize,
    x0: &[f64],
    amp: f64,
    rng: &mut impl rand::Rng,
) -> Result<SuperCurve> {
    random_curve(chart, m, n, x0, amp, 1.0, rng)
}

/// Same without the drift: a closed off-shell loop with integer frequencies.
pub fn random_offshell_loop(
    chart: &ChartRef,
    m: u32,
    n: usize,
    x0: &[f64],
    amp: f64,
    rng: &mut impl rand::Rng,
) -> Result<SuperCurve> {
    random_curve(chart, m, n, x0, amp, 0.0, rng)
}

fn random_curve(
    chart: &ChartRef,
    m: u32,
    n: usize,
    x0: &[f64],
    amp: f64,
    drift: f64,
    rng: &mut impl rand::Rng,
) -> Result<SuperCurve> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut wave = |count: usize| -> Vec<(usize, [f64; 5])> {
        (0..count)
            .map(|s| {
                let p = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(1..=2) as f64,
                    rng.random_range(0.0..two_pi),
                    drift * rng.random_range(-1.0..1.0),
                ];
                (s, p)
            })
            .collect()
    };
    let masks = |deg: Option<u32>| -> Vec<usize> {
        match deg {
            Some(d) => (0..1usize << m).filter(|s| s.count_ones() == d).collect(),
            None => Vec::new(),
        }
    };
    let mut t_comp = Vec::new();
    let mut theta_comp = Vec::new();
    for g in 0..chart.len() {
        let d = chart.degree_of(g);
        for (deg, out, offset) in [(Some(d), &mut t_comp, true), (theta_degree(d), &mut theta_comp, false)] {
            let ms = masks(deg);
            let params = wave(ms.len());
            let col: Vec<GrassmannValue> = (0..=n)
                .map(|k| {
                    let t = k as f64 / n as f64;
                    let mut v = GrassmannValue::zero(m);
                    for (i, p) in &params {
                        let val = amp * (p[0] + p[1] * (two_pi * p[2] * t + p[3]).sin() + p[4] * t);
                        v.set_coeff(ms[*i], val);
                    }
                    if offset && d == 0 {
                        v.set_coeff(0, v.coeff(0) + x0.get(g).copied().unwrap_or(0.0));
                    }
                    v
                })
                .collect();
            out.push(col);
        }
    }
    SuperCurve::new(chart, m, t_comp, theta_comp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nq_manifold::{lie_algebroid_q, so3_dual_poisson, tangent_q};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn so3_star() -> QStructure {
        lie_algebroid_q(&so3_dual_poisson().unwrap()).unwrap()
    }

    fn random_drive(q: &QStructure, m: u32, n: usize, seed: u64) -> Drive {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<(String, Vec<f64>)> = ["xi_x1", "xi_x2", "xi_x3"]
            .iter()
            .map(|s| (s.to_string(), (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let refs: Vec<(&str, Vec<f64>)> = coeffs.iter().map(|(a, b)| (a.as_str(), b.clone())).collect();
        Drive::polynomial(q.chart(), m, n, &refs).unwrap()
    }

    fn radius2(c: &SuperCurve, k: usize) -> f64 {
        ["x1", "x2", "x3"].iter().map(|s| c.real(s, k).unwrap().powi(2)).sum()
    }

    #[test]
    fn zero_drive_gives_constant_curve() {
        let q = tangent_q(2).unwrap();
        let x0 = initial_point(q.chart(), 4, &[("x1", 0.3), ("x2", -1.2)]).unwrap();
        let c = solve_eom(&q, &x0, &Drive::zero(q.chart(), 4, 50)).unwrap();
        assert_eq!(c, { let mut k = SuperCurve::constant(q.chart(), &x0, 50).unwrap(); k.solved = true; k });
        assert_eq!(eom_residual(&c, &q).unwrap().max, 0.0);
    }

    #[test]
    fn tangent_curve_integrates_the_drive() {
        let q = tangent_q(2).unwrap();
        let x0 = initial_point(q.chart(), 4, &[("x1", 0.5), ("x2", 0.0)]).unwrap();
        let drive = Drive::polynomial(q.chart(), 4, 64, &[("v1", vec![1.0, 2.0]), ("v2", vec![0.0, 0.0, 3.0])]).unwrap();
        let c = solve_eom(&q, &x0, &drive).unwrap();
        for k in 0..=64 {
            let t = k as f64 / 64.0;
            assert!((c.real("x1", k).unwrap() - (0.5 + t + t * t)).abs() < 1e-13);
            assert!((c.real("x2", k).unwrap() - t.powi(3)).abs() < 1e-13);
        }
    }

    #[test]
    fn poisson_curves_stay_on_spheres() {
        let q = so3_star();
        let x0 = initial_point(q.chart(), 4, &[("x1", 0.6), ("x2", -0.3), ("x3", 0.8)]).unwrap();
        let c = solve_eom(&q, &x0, &random_drive(&q, 4, 2000, 7)).unwrap();
        let r0 = radius2(&c, 0);
        let drift = (0..=2000).map(|k| (radius2(&c, k) - r0).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-8, "drift {drift:e}");
        // the curve actually moves
        assert!((c.real("x1", 2000).unwrap() - 0.6).abs() > 1e-2);
    }

    #[test]
    fn eom_residual_is_fourth_order() {
        let q = so3_star();
        let x0 = initial_point(q.chart(), 4, &[("x1", 0.6), ("x2", -0.3), ("x3", 0.8)]).unwrap();
        let res = |n| {
            let c = solve_eom(&q, &x0, &random_drive(&q, 4, n, 3)).unwrap();
            eom_residual(&c, &q).unwrap().max
        };
        let ratio = res(40) / res(80);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn corrupted_sample_is_localized() {
        let q = so3_star();
        let x0 = initial_point(q.chart(), 4, &[("x1", 0.6), ("x2", -0.3), ("x3", 0.8)]).unwrap();
        let mut c = solve_eom(&q, &x0, &random_drive(&q, 4, 200, 1)).unwrap();
        let base = eom_residual(&c, &q).unwrap().max;
        let g = q.chart().index("x2").unwrap();
        let v = c.t_component(g)[120].add(&GrassmannValue::scalar(4, 1e-3));
        let th = c.theta_component(g)[120].clone();
        c.set_sample(g, 120, v, th).unwrap();
        let r = eom_residual(&c, &q).unwrap();
        assert!(r.max > 1e3 * base);
        assert!(r.worst_index.abs_diff(120) <= 2);
    }

    #[test]
    fn sector_discipline_is_enforced() {
        let q = tangent_q(1).unwrap();
        let x0 = initial_point(q.chart(), 2, &[("x1", 1.0)]).unwrap();
        let mut c = SuperCurve::constant(q.chart(), &x0, 8).unwrap();
        let g = q.chart().index("x1").unwrap();
        let odd = GrassmannValue::generator(2, 0);
        assert!(c.set_sample(g, 3, odd, GrassmannValue::zero(2)).is_err());
        let v = q.chart().index("v1").unwrap();
        assert!(c.set_sample(v, 3, GrassmannValue::zero(2), GrassmannValue::generator(2, 1)).is_err());
    }

    #[test]
    fn zero_homotopy_is_stationary() {
        let q = so3_star();
        let x0 = initial_point(q.chart(), 4, &[("x1", 1.0)]).unwrap();
        let c = solve_eom(&q, &x0, &random_drive(&q, 4, 100, 2)).unwrap();
        let frames = homotopy_flow(&q, &c, &HomotopyGenerator::zero(q.chart(), 4, 100), 5, 0.1).unwrap();
        assert!(frames.iter().all(|f| f.t_comp == c.t_comp && f.theta_comp == c.theta_comp));
    }

    #[test]
    fn tangent_homotopy_is_a_path_homotopy() {
        let q = tangent_q(1).unwrap();
        let x0 = initial_point(q.chart(), 4, &[("x1", 0.0)]).unwrap();
        let n = 100;
        let c = solve_eom(&q, &x0, &Drive::polynomial(q.chart(), 4, n, &[("v1", vec![1.0])]).unwrap()).unwrap();
        let pi = std::f64::consts::PI;
        let hg = HomotopyGenerator::from_fn(q.chart(), 4, n, |_, t| {
            (GrassmannValue::scalar(4, (pi * t).sin()), GrassmannValue::scalar(4, pi * (pi * t).cos()))
        })
        .unwrap();
        assert!(hg.is_endpoint_fixed() || hg.value(1, n).norm() < 1e-15);
        let frames = homotopy_flow(&q, &c, &hg, 10, 0.05).unwrap();
        let last = frames.last().unwrap();
        for k in 0..=n {
            let t = k as f64 / n as f64;
            assert!((last.real("x1", k).unwrap() - (t + 0.5 * (pi * t).sin())).abs() < 1e-13);
        }
        assert!(eom_residual(last, &q).unwrap().max < 1e-6);
    }

    #[test]
    fn poisson_homotopy_stays_in_the_leaf() {
        let q = so3_star();
        let x0 = initial_point(q.chart(), 4, &[("x1", 0.6), ("x2", -0.3), ("x3", 0.8)]).unwrap();
        let n = 400;
        let c = solve_eom(&q, &x0, &random_drive(&q, 4, n, 11)).unwrap();
        let pi = std::f64::consts::PI;
        let hg = HomotopyGenerator::from_fn(q.chart(), 4, n, |g, t| {
            let a = 0.02 * (g as f64 - 1.0);
            (GrassmannValue::scalar(4, a * (pi * t).sin()), GrassmannValue::scalar(4, a * pi * (pi * t).cos()))
        })
        .unwrap();
        let frames = homotopy_flow(&q, &c, &hg, 100, 0.01).unwrap();
        let r0 = radius2(&c, 0);
        let e0 = eom_residual(&c, &q).unwrap().max;
        for f in &frames {
            let drift = (0..=n).map(|k| (radius2(f, k) - r0).abs()).fold(0.0, f64::max);
            assert!(drift < 1e-7, "drift {drift:e}");
            let e = eom_residual(f, &q).unwrap().max;
            assert!(e <= 5.0 * e0, "frame residual {e:e} vs initial {e0:e}");
        }
        let last = frames.last().unwrap();
        assert!((last.real("x1", n / 2).unwrap() - c.real("x1", n / 2).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn identity_reparameterization_is_exact() {
        let q = so3_star();
        let x0 = initial_point(q.chart(), 4, &[("x3", 1.0)]).unwrap();
        let c = solve_eom(&q, &x0, &random_drive(&q, 4, 60, 5)).unwrap();
        assert_eq!(reparameterize(&c, &Reparameterization::identity(60)).unwrap(), c);
    }

    #[test]
    fn reparameterized_curve_matches_resolve() {
        let q = so3_star();
        let x0 = initial_point(q.chart(), 4, &[("x1", 0.6), ("x2", -0.3), ("x3", 0.8)]).unwrap();
        let n = 1000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coef: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let poly = |c: &Vec<f64>, t: f64| c.iter().rev().fold(0.0, |a, &x| a * t + x);
        let idx: Vec<usize> = ["xi_x1", "xi_x2", "xi_x3"].iter().map(|s| q.chart().index(s).unwrap()).collect();
        let at = |g: usize, t: f64| idx.iter().position(|&i| i == g).map(|j| poly(&coef[j], t)).unwrap_or(0.0);
        let drive = Drive::sample(q.chart(), 4, n, |g, t| GrassmannValue::scalar(4, at(g, t)));
        let c = solve_eom(&q, &x0, &drive).unwrap();
        let phi = Reparameterization::smoothstep(n);
        let r = reparameterize(&c, &phi).unwrap();
        let ph = |t: f64| t * t * (3.0 - 2.0 * t);
        let drive2 = Drive::sample(q.chart(), 4, n, |g, t| GrassmannValue::scalar(4, at(g, ph(t)) * 6.0 * t * (1.0 - t)));
        let oracle = solve_eom(&q, &x0, &drive2).unwrap();
        for k in 0..=n {
            for s in ["x1", "x2", "x3"] {
                assert!((r.real(s, k).unwrap() - oracle.real(s, k).unwrap()).abs() < 1e-8);
            }
        }
        assert!(eom_residual(&r, &q).unwrap().max < 1e-6);
    }

    #[test]
    fn non_monotone_reparameterization_is_rejected() {
        let bad = Reparameterization::from_fn(10, |t| t + 0.3 * (6.0 * t).sin() * t * (1.0 - t) * 10.0, |_| 1.0);
        assert!(matches!(bad, Err(Error::InvalidReparameterization(_))));
        assert!(Reparameterization::from_fn(10, |t| t * 0.9, |_| 0.9).is_err());
    }

    #[test]
    fn json_round_trip() {
        let q = so3_star();
        let x0 = initial_point(q.chart(), 3, &[("x1", 0.25)]).unwrap();
        let c = solve_eom(&q, &x0, &random_drive(&q, 3, 8, 4)).unwrap();
        let back = SuperCurve::from_json(q.chart(), &c.to_json()).unwrap();
        assert_eq!(back.t_comp, c.t_comp);
        assert_eq!(back.theta_comp, c.theta_comp);
    }
}
