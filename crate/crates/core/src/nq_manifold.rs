//! Homological vector fields on single-chart graded manifolds.

use std::collections::BTreeMap;

use num::Zero;
use rand::Rng;

use crate::error::{Error, Residual, Result};
use crate::graded_algebra::{int, Chart, ChartRef, Derivation, Generator, GradedPoly, Scalar};
use crate::linalg::{rat_inverse, rat_mul, RatMatrix};

/// A degree +1 derivation, nilpotent unless built with `new_unchecked`.
#[derive(Clone, Debug, PartialEq)]
pub struct QStructure {
    d: Derivation,
    checked: bool,
}

impl QStructure {
    pub fn new(d: Derivation) -> Result<Self> {
        let q = QStructure::new_unchecked(d)?;
        let res = check_nilpotent(&q);
        if !res.is_empty() {
            return Err(Error::ConstraintViolation(to_residuals(&res, "Q^2")));
        }
        Ok(QStructure { checked: true, ..q })
    }

    pub fn new_unchecked(d: Derivation) -> Result<Self> {
        if d.shift() != 1 {
            return Err(Error::Invalid(format!("Q must have degree 1, got {}", d.shift())));
        }
        Ok(QStructure { d, checked: false })
    }

    pub fn from_images(chart: &ChartRef, images: &[(&str, GradedPoly)]) -> Result<Self> {
        let mut d = Derivation::new(chart, 1);
        for (n, p) in images {
            d.set(n, p.clone())?;
        }
        QStructure::new(d)
    }

    pub fn zero(chart: &ChartRef) -> Self {
        QStructure { d: Derivation::new(chart, 1), checked: true }
    }

    pub fn chart(&self) -> &ChartRef {
        self.d.chart()
    }

    pub fn derivation(&self) -> &Derivation {
        &self.d
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn apply(&self, p: &GradedPoly) -> Result<GradedPoly> {
        self.d.apply(p)
    }

    pub fn image(&self, name: &str) -> Result<&GradedPoly> {
        self.d.image_by_name(name)
    }
}

pub(crate) fn to_residuals(r: &[(String, GradedPoly)], what: &str) -> Vec<Residual> {
    r.iter()
        .map(|(n, p)| Residual { label: format!("{what}({n})"), value: p.to_string() })
        .collect()
}

/// Nonzero values of `Q(Q(g))`, one entry per offending generator.
pub fn check_nilpotent(q: &QStructure) -> Vec<(String, GradedPoly)> {
    let chart = q.chart();
    let mut out = Vec::new();
    for (i, g) in chart.generators().iter().enumerate() {
        let qq = q.d.apply(q.d.image(i)).expect("image lives on the chart");
        if !qq.is_zero() {
            out.push((g.name.clone(), qq));
        }
    }
    out
}

/// Anchor and structure functions of a Lie algebroid in a local frame.
///
/// `anchor[a][mu]` is `A^mu_a`, `structure[a][b][c]` is `f^a_{bc}`; all are
/// polynomials on `base`, whose generators have degree 0.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebroidData {
    pub base: ChartRef,
    pub fibre_names: Vec<String>,
    pub anchor: Vec<Vec<GradedPoly>>,
    pub structure: Vec<Vec<Vec<GradedPoly>>>,
}

impl AlgebroidData {
    pub fn new(
        base: ChartRef,
        fibre_names: Vec<String>,
        anchor: Vec<Vec<GradedPoly>>,
        structure: Vec<Vec<Vec<GradedPoly>>>,
    ) -> Result<Self> {
        if base.generators().iter().any(|g| g.degree != 0) {
            return Err(Error::Invalid("algebroid base must have degree-0 generators only".into()));
        }
        let (n, r) = (base.len(), fibre_names.len());
        if anchor.len() != r || anchor.iter().any(|row| row.len() != n) {
            return Err(Error::Invalid(format!("anchor must be {r}x{n}")));
        }
        if structure.len() != r
            || structure.iter().any(|m| m.len() != r || m.iter().any(|row| row.len() != r))
        {
            return Err(Error::Invalid(format!("structure functions must be {r}x{r}x{r}")));
        }
        let anchor = anchor
            .into_iter()
            .map(|row| row.into_iter().map(|p| p.embed(&base)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let structure = structure
            .into_iter()
            .map(|m| {
                m.into_iter()
                    .map(|row| row.into_iter().map(|p| p.embed(&base)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (a, m) in structure.iter().enumerate() {
            for b in 0..r {
                for c in 0..r {
                    if !m[b][c].add(&m[c][b]).is_zero() {
                        return Err(Error::Invalid(format!(
                            "structure functions not antisymmetric at ({a},{b},{c})"
                        )));
                    }
                }
            }
        }
        Ok(AlgebroidData { base, fibre_names, anchor, structure })
    }

    /// Constant structure functions over `base`, no anchor: a Lie algebra.
    pub fn lie_algebra(base: ChartRef, fibre_names: Vec<String>, f: &[Vec<Vec<Scalar>>]) -> Result<Self> {
        let n = base.len();
        let r = fibre_names.len();
        let anchor = vec![vec![GradedPoly::zero(&base); n]; r];
        let structure = f
            .iter()
            .map(|m| m.iter().map(|row| row.iter().map(|c| GradedPoly::constant(&base, c.clone())).collect()).collect())
            .collect();
        AlgebroidData::new(base, fibre_names, anchor, structure)
    }

    pub fn rank(&self) -> usize {
        self.fibre_names.len()
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn base_names(&self) -> Vec<String> {
        self.base.generators().iter().map(|g| g.name.clone()).collect()
    }

    /// Chart of L[1]: base coordinates plus degree-1 fibre coordinates.
    pub fn chart(&self) -> Result<ChartRef> {
        self.base.extend(
            format!("{}[L1]", self.base.name()),
            self.fibre_names.iter().map(|n| Generator::new(n.clone(), 1)).collect(),
        )
    }

    /// Base partial derivative of a degree-0 coefficient.
    pub fn d(&self, mu: usize, p: &GradedPoly) -> GradedPoly {
        Derivation::partial(&self.base, mu).apply(p).expect("coefficient on base chart")
    }
}

/// `Q(x^mu) = 2 l^a A^mu_a`, `Q(l^a) = -f^a_{bc} l^b l^c`.
pub fn lie_algebroid_q(d: &AlgebroidData) -> Result<QStructure> {
    QStructure::new(lie_algebroid_derivation(d)?)
}

pub fn lie_algebroid_q_unchecked(d: &AlgebroidData) -> Result<QStructure> {
    QStructure::new_unchecked(lie_algebroid_derivation(d)?)
}

fn lie_algebroid_derivation(d: &AlgebroidData) -> Result<Derivation> {
    let chart = d.chart()?;
    let mut der = Derivation::new(&chart, 1);
    let ell: Vec<GradedPoly> =
        d.fibre_names.iter().map(|n| chart.var(n)).collect::<Result<_>>()?;
    for (mu, name) in d.base_names().iter().enumerate() {
        let mut img = GradedPoly::zero(&chart);
        for (a, l) in ell.iter().enumerate() {
            img = img.add(&l.mul(&d.anchor[a][mu].embed(&chart)?));
        }
        der.set(name, img.scale_int(2))?;
    }
    for (a, name) in d.fibre_names.iter().enumerate() {
        let mut img = GradedPoly::zero(&chart);
        for b in 0..d.rank() {
            for c in 0..d.rank() {
                let f = &d.structure[a][b][c];
                if f.is_zero() {
                    continue;
                }
                img = img.sub(&f.embed(&chart)?.mul(&ell[b]).mul(&ell[c]));
            }
        }
        der.set(name, img)?;
    }
    Ok(der)
}

/// Algebroid data of `T*M` for a bivector `alpha[mu][nu]` on `base`:
/// anchor `dx^mu -> alpha^{mu nu} d_nu`, bracket `f^rho_{mu nu} = d_rho alpha^{mu nu}`.
pub fn poisson_algebroid(base: ChartRef, alpha: &[Vec<GradedPoly>]) -> Result<AlgebroidData> {
    let n = base.len();
    if alpha.len() != n || alpha.iter().any(|r| r.len() != n) {
        return Err(Error::Invalid(format!("bivector must be {n}x{n}")));
    }
    for mu in 0..n {
        for nu in 0..n {
            if !alpha[mu][nu].add(&alpha[nu][mu]).is_zero() {
                return Err(Error::Invalid(format!("bivector not antisymmetric at ({mu},{nu})")));
            }
        }
    }
    let fibre_names: Vec<String> =
        base.generators().iter().map(|g| format!("xi_{}", g.name)).collect();
    let anchor = alpha.to_vec();
    let mut structure = vec![vec![vec![GradedPoly::zero(&base); n]; n]; n];
    for (rho, s) in structure.iter_mut().enumerate() {
        let p = Derivation::partial(&base, rho);
        for mu in 0..n {
            for nu in 0..n {
                s[mu][nu] = p.apply(&alpha[mu][nu])?;
            }
        }
    }
    AlgebroidData::new(base, fibre_names, anchor, structure)
}

/// `Q = 2 alpha^{mu nu} xi_mu d/dx^nu - d_rho alpha^{mu nu} xi_mu xi_nu d/dxi_rho` on `T*[1]`.
///
/// The sign of the second term is the one that makes `Q^2 = 0` equivalent to
/// the Jacobi identity for `alpha`.
pub fn poisson_q(base: ChartRef, alpha: &[Vec<GradedPoly>]) -> Result<QStructure> {
    lie_algebroid_q(&poisson_algebroid(base, alpha)?)
}

pub fn tangent_chart(n: usize) -> Result<ChartRef> {
    let mut gens = Vec::new();
    for i in 1..=n {
        gens.push(Generator::new(format!("x{i}"), 0));
        gens.push(Generator::new(format!("v{i}"), 1));
    }
    Chart::new(format!("T[1]R{n}"), gens)
}

pub fn base_chart(n: usize) -> Result<ChartRef> {
    Chart::new(format!("R{n}"), (1..=n).map(|i| Generator::new(format!("x{i}"), 0)).collect())
}

/// de Rham differential `v^mu d/dx^mu` on `T[1]R^n`.
pub fn tangent_q(n: usize) -> Result<QStructure> {
    if n == 0 {
        return Err(Error::Invalid("dimension must be at least 1".into()));
    }
    let chart = tangent_chart(n)?;
    let mut d = Derivation::new(&chart, 1);
    for i in 1..=n {
        d.set(&format!("x{i}"), chart.var(&format!("v{i}"))?)?;
    }
    QStructure::new(d)
}

/// `T R^n` as an algebroid with anchor `c` times the identity.
pub fn tangent_algebroid(n: usize, c: Scalar) -> Result<AlgebroidData> {
    let base = base_chart(n)?;
    let names = (1..=n).map(|i| format!("v{i}")).collect();
    let anchor = (0..n)
        .map(|a| {
            (0..n)
                .map(|mu| if a == mu { GradedPoly::constant(&base, c.clone()) } else { GradedPoly::zero(&base) })
                .collect()
        })
        .collect();
    let structure = vec![vec![vec![GradedPoly::zero(&base); n]; n]; n];
    AlgebroidData::new(base, names, anchor, structure)
}

pub fn levi_civita(a: usize, b: usize, c: usize) -> i64 {
    match (a, b, c) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1,
        _ => 0,
    }
}

pub type StructureConstants = Vec<Vec<Vec<Scalar>>>;

pub fn so3_constants() -> StructureConstants {
    (0..3)
        .map(|a| (0..3).map(|b| (0..3).map(|c| int(levi_civita(a, b, c))).collect()).collect())
        .collect()
}

/// `[h,e] = 2e`, `[h,f] = -2f`, `[e,f] = h` in the basis (h, e, f).
pub fn sl2_constants() -> StructureConstants {
    let mut f = vec![vec![vec![Scalar::zero(); 3]; 3]; 3];
    let mut set = |a: usize, b: usize, c: usize, v: i64| {
        f[a][b][c] = int(v);
        f[a][c][b] = int(-v);
    };
    set(1, 0, 1, 2);
    set(2, 0, 2, -2);
    set(0, 1, 2, 1);
    f
}

/// `[s1, s2] = s3` in rank 3.
pub fn heisenberg_constants() -> StructureConstants {
    let mut f = vec![vec![vec![Scalar::zero(); 3]; 3]; 3];
    f[2][0][1] = int(1);
    f[2][1][0] = int(-1);
    f
}

/// `[s1, s2] = s2`.
pub fn affine2_constants() -> StructureConstants {
    let mut f = vec![vec![vec![Scalar::zero(); 2]; 2]; 2];
    f[1][0][1] = int(1);
    f[1][1][0] = int(-1);
    f
}

/// Structure constants in the new basis `s'_b = P^a_b s_a`.
pub fn change_basis(f: &StructureConstants, p: &RatMatrix) -> Result<StructureConstants> {
    let r = f.len();
    let pinv = rat_inverse(p).ok_or_else(|| Error::NotInvertible("basis change".into()))?;
    let mut out = vec![vec![vec![Scalar::zero(); r]; r]; r];
    for a in 0..r {
        for b in 0..r {
            for c in 0..r {
                let mut s = Scalar::zero();
                for d in 0..r {
                    if pinv[a][d].is_zero() {
                        continue;
                    }
                    for e in 0..r {
                        for g in 0..r {
                            s += &pinv[a][d] * &f[d][e][g] * &p[e][b] * &p[g][c];
                        }
                    }
                }
                out[a][b][c] = s;
            }
        }
    }
    Ok(out)
}

fn fibre_names(prefix: &str, r: usize) -> Vec<String> {
    (1..=r).map(|i| format!("{prefix}{i}")).collect()
}

/// Action algebroid of a Lie algebra acting on itself by the adjoint action:
/// `A^mu_a = -f^mu_{a nu} x^nu`.
pub fn action_algebroid(f: &StructureConstants) -> Result<AlgebroidData> {
    let r = f.len();
    let base = base_chart(r)?;
    let xs: Vec<GradedPoly> = (0..r).map(|i| GradedPoly::generator(&base, i)).collect();
    let mut anchor = vec![vec![GradedPoly::zero(&base); r]; r];
    for (a, row) in anchor.iter_mut().enumerate() {
        for (mu, entry) in row.iter_mut().enumerate() {
            for (nu, x) in xs.iter().enumerate() {
                *entry = entry.sub(&x.scale(&f[mu][a][nu]));
            }
        }
    }
    let structure = f
        .iter()
        .map(|m| m.iter().map(|row| row.iter().map(|c| GradedPoly::constant(&base, c.clone())).collect()).collect())
        .collect();
    AlgebroidData::new(base, fibre_names("l", r), anchor, structure)
}

/// Linear Poisson structure `alpha^{mu nu} = f^rho_{mu nu} x^rho` on the dual of a Lie algebra.
pub fn linear_poisson_bivector(base: &ChartRef, f: &StructureConstants) -> Vec<Vec<GradedPoly>> {
    let n = f.len();
    (0..n)
        .map(|mu| {
            (0..n)
                .map(|nu| {
                    let mut p = GradedPoly::zero(base);
                    for rho in 0..n {
                        p = p.add(&GradedPoly::generator(base, rho).scale(&f[rho][mu][nu]));
                    }
                    p
                })
                .collect()
        })
        .collect()
}

pub fn so3_dual_poisson() -> Result<AlgebroidData> {
    let base = base_chart(3)?;
    let alpha = linear_poisson_bivector(&base, &so3_constants());
    poisson_algebroid(base, &alpha)
}

fn random_unit_triangular(rng: &mut impl Rng, r: usize, upper: bool) -> RatMatrix {
    (0..r)
        .map(|i| {
            (0..r)
                .map(|j| {
                    if i == j {
                        int(1)
                    } else if (j > i) == upper {
                        int(rng.random_range(-2..=2))
                    } else {
                        Scalar::zero()
                    }
                })
                .collect()
        })
        .collect()
}

fn random_basis_change(rng: &mut impl Rng, r: usize) -> RatMatrix {
    let l = random_unit_triangular(rng, r, false);
    let u = random_unit_triangular(rng, r, true);
    rat_mul(&l, &u)
}

fn random_lie_constants(rng: &mut impl Rng) -> Result<StructureConstants> {
    let f = match rng.random_range(0..5) {
        0 => so3_constants(),
        1 => sl2_constants(),
        2 => heisenberg_constants(),
        3 => affine2_constants(),
        _ => vec![vec![vec![Scalar::zero(); 2]; 2]; 2],
    };
    let p = random_basis_change(rng, f.len());
    change_basis(&f, &p)
}

/// A random valid algebroid with base dimension and rank at most 3.
pub fn random_algebroid(rng: &mut impl Rng) -> Result<AlgebroidData> {
    match rng.random_range(0..4) {
        0 => {
            let n = rng.random_range(1..=2);
            let f = random_lie_constants(rng)?;
            AlgebroidData::lie_algebra(base_chart(n)?, fibre_names("l", f.len()), &f)
        }
        1 => action_algebroid(&random_lie_constants(rng)?),
        2 => {
            let f = random_lie_constants(rng)?;
            let base = base_chart(f.len())?;
            let alpha = linear_poisson_bivector(&base, &f);
            poisson_algebroid(base, &alpha)
        }
        _ => {
            let n = rng.random_range(1..=3);
            tangent_algebroid(n, int(rng.random_range(1..=3)))
        }
    }
}

/// Perturb one structure function or anchor entry; usually breaks the axioms.
pub fn perturb_algebroid(d: &AlgebroidData, rng: &mut impl Rng) -> AlgebroidData {
    let mut out = d.clone();
    let r = d.rank();
    let base = d.base.clone();
    if r >= 2 && rng.random_bool(0.5) {
        let a = rng.random_range(0..r);
        let b = rng.random_range(0..r);
        let mut c = rng.random_range(0..r);
        if c == b {
            c = (b + 1) % r;
        }
        let bump = GradedPoly::constant(&base, crate::graded_algebra::rat(1, 10));
        out.structure[a][b][c] = out.structure[a][b][c].add(&bump);
        out.structure[a][c][b] = out.structure[a][c][b].sub(&bump);
    } else {
        let a = rng.random_range(0..r);
        let mu = rng.random_range(0..d.dim());
        let nu = rng.random_range(0..d.dim());
        let x = GradedPoly::generator(&base, nu);
        out.anchor[a][mu] = out.anchor[a][mu].add(&x.mul(&x));
    }
    out
}

/// Coefficients of `Q^2` on all generators, grouped by generator name.
pub fn nilpotency_map(q: &QStructure) -> BTreeMap<String, GradedPoly> {
    check_nilpotent(q).into_iter().collect()
}
