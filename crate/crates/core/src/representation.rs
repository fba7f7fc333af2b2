//! Representations of a Q-structure: fibrewise-linear lifts and their
//! normalized matrices `T`.
//!
//! Index convention: `t[b][a]` stores `T^b_a`, the upper index is the row.
//! A fibre coordinate `z_a` of level `a` is lifted as
//! `Q^ z_a = R^b_a z_b = (-1)^b z_b T^b_a`, with `T^b_a = (-1)^{ab+b} R^b_a`.

use crate::error::{Error, Residual, Result};
use crate::graded_algebra::{
    int, left_partial, right_partial, ChartRef, Derivation, Generator, GradedPoly, Scalar,
};
use crate::linalg::rat_inverse;
use crate::nq_manifold::{lie_algebroid_q, tangent_q, AlgebroidData, QStructure};

pub type PolyMatrix = Vec<Vec<GradedPoly>>;

fn odd(k: i64) -> bool {
    k.rem_euclid(2) == 1
}

fn signed(p: GradedPoly, negative: bool) -> GradedPoly {
    if negative {
        p.neg()
    } else {
        p
    }
}

/// Fibre coordinates with their levels, kept in `(level, name)` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiberSpec {
    names: Vec<String>,
    levels: Vec<u32>,
}

impl FiberSpec {
    pub fn new(mut gens: Vec<(String, u32)>) -> Result<Self> {
        gens.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
        let mut names: Vec<&String> = gens.iter().map(|g| &g.0).collect();
        names.sort();
        for w in names.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateGenerator(w[0].clone()));
            }
        }
        Ok(FiberSpec {
            names: gens.iter().map(|g| g.0.clone()).collect(),
            levels: gens.iter().map(|g| g.1).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> i64 {
        self.levels[i] as i64
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Same levels, names with a suffix appended.
    pub fn renamed(&self, suffix: &str) -> FiberSpec {
        FiberSpec {
            names: self.names.iter().map(|n| format!("{n}{suffix}")).collect(),
            levels: self.levels.clone(),
        }
    }

    fn generators(&self) -> Vec<Generator> {
        self.names.iter().zip(&self.levels).map(|(n, &l)| Generator::new(n.clone(), l)).collect()
    }
}

/// Base chart together with the fibre coordinates.
pub fn total_chart(base: &ChartRef, fiber: &FiberSpec) -> Result<ChartRef> {
    for n in fiber.names() {
        if base.index(n).is_some() {
            return Err(Error::DuplicateGenerator(n.clone()));
        }
    }
    base.extend(format!("{}+E", base.name()), fiber.generators())
}

pub fn zero_matrix(chart: &ChartRef, rows: usize, cols: usize) -> PolyMatrix {
    vec![vec![GradedPoly::zero(chart); cols]; rows]
}

pub fn identity_matrix(chart: &ChartRef, n: usize) -> PolyMatrix {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { GradedPoly::one(chart) } else { GradedPoly::zero(chart) })
                .collect()
        })
        .collect()
}

/// Plain product `(AB)^a_c = A^a_b B^b_c`, factors kept in order.
pub fn mat_mul(a: &PolyMatrix, b: &PolyMatrix) -> PolyMatrix {
    let chart = a[0][0].chart().clone();
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zero_matrix(&chart, n, m);
    for i in 0..n {
        for l in 0..k {
            if a[i][l].is_zero() {
                continue;
            }
            for j in 0..m {
                if !b[l][j].is_zero() {
                    out[i][j] = out[i][j].add(&a[i][l].mul(&b[l][j]));
                }
            }
        }
    }
    out
}

pub fn mat_add(a: &PolyMatrix, b: &PolyMatrix) -> PolyMatrix {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x.add(y)).collect()).collect()
}

pub fn mat_sub(a: &PolyMatrix, b: &PolyMatrix) -> PolyMatrix {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x.sub(y)).collect()).collect()
}

pub fn mat_is_zero(a: &PolyMatrix) -> bool {
    a.iter().all(|r| r.iter().all(|p| p.is_zero()))
}

pub fn mat_embed(a: &PolyMatrix, chart: &ChartRef) -> Result<PolyMatrix> {
    a.iter().map(|r| r.iter().map(|p| p.embed(chart)).collect()).collect()
}

fn matrix_residuals(m: &PolyMatrix, fiber_rows: &FiberSpec, fiber_cols: &FiberSpec, what: &str) -> Vec<Residual> {
    let mut out = Vec::new();
    for (b, row) in m.iter().enumerate() {
        for (a, p) in row.iter().enumerate() {
            if !p.is_zero() {
                out.push(Residual {
                    label: format!("{what}[{}][{}]", fiber_rows.name(b), fiber_cols.name(a)),
                    value: p.to_string(),
                });
            }
        }
    }
    out
}

/// Normalized representation matrix over a Q-manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct RepMatrix {
    q: QStructure,
    fiber: FiberSpec,
    t: PolyMatrix,
}

impl RepMatrix {
    /// Validates the entry-degree law and flatness.
    pub fn new(q: QStructure, fiber: FiberSpec, t: PolyMatrix) -> Result<Self> {
        let rep = RepMatrix::new_unchecked(q, fiber, t)?;
        let res = rep.flatness_residual();
        if !mat_is_zero(&res) {
            return Err(Error::FlatnessViolation(matrix_residuals(&res, &rep.fiber, &rep.fiber, "F")));
        }
        Ok(rep)
    }

    /// Validates shapes and degrees only.
    pub fn new_unchecked(q: QStructure, fiber: FiberSpec, t: PolyMatrix) -> Result<Self> {
        let r = fiber.len();
        if t.len() != r || t.iter().any(|row| row.len() != r) {
            return Err(Error::Invalid(format!("representation matrix must be {r}x{r}")));
        }
        let chart = q.chart().clone();
        let t = mat_embed(&t, &chart)?;
        for b in 0..r {
            for a in 0..r {
                let want = fiber.level(a) - fiber.level(b) + 1;
                for d in t[b][a].degrees() {
                    if d as i64 != want {
                        return Err(Error::DegreeMismatch {
                            name: format!("T[{}][{}]", fiber.name(b), fiber.name(a)),
                            expected: want,
                            found: d as i64,
                        });
                    }
                }
            }
        }
        Ok(RepMatrix { q, fiber, t })
    }

    pub fn q(&self) -> &QStructure {
        &self.q
    }

    pub fn base(&self) -> &ChartRef {
        self.q.chart()
    }

    pub fn fiber(&self) -> &FiberSpec {
        &self.fiber
    }

    pub fn rank(&self) -> usize {
        self.fiber.len()
    }

    pub fn entries(&self) -> &PolyMatrix {
        &self.t
    }

    pub fn entry(&self, upper: usize, lower: usize) -> &GradedPoly {
        &self.t[upper][lower]
    }

    /// `(-1)^b Q T^b_a + (-1)^c T^b_c T^c_a` for every `(b, a)`.
    pub fn flatness_residual(&self) -> PolyMatrix {
        flatness_residual(&self.q, &self.fiber, &self.t)
    }

    /// Matrix `R^b_a` of the lift.
    pub fn to_r(&self) -> PolyMatrix {
        let r = self.rank();
        (0..r)
            .map(|b| {
                (0..r)
                    .map(|a| {
                        let (la, lb) = (self.fiber.level(a), self.fiber.level(b));
                        signed(self.t[b][a].clone(), odd(la * lb + lb))
                    })
                    .collect()
            })
            .collect()
    }

    /// `Q^ z_a` as polynomials on the total chart.
    pub fn fibre_images(&self, total: &ChartRef) -> Result<Vec<GradedPoly>> {
        let r = self.to_r();
        let mut out = Vec::with_capacity(self.rank());
        for a in 0..self.rank() {
            let mut img = GradedPoly::zero(total);
            for (b, row) in r.iter().enumerate() {
                if row[a].is_zero() {
                    continue;
                }
                img = img.add(&row[a].embed(total)?.mul(&total.var(self.fiber.name(b))?));
            }
            out.push(img);
        }
        Ok(out)
    }

    /// The lift `Q^` as a derivation on the total chart.
    pub fn lifted_derivation(&self) -> Result<(ChartRef, Derivation)> {
        let total = total_chart(self.base(), &self.fiber)?;
        let mut d = Derivation::new(&total, 1);
        for (i, g) in self.base().generators().iter().enumerate() {
            d.set(&g.name, self.q.derivation().image(i).clone())?;
        }
        for (a, img) in self.fibre_images(&total)?.into_iter().enumerate() {
            d.set(self.fiber.name(a), img)?;
        }
        Ok((total, d))
    }

    /// Same matrix over a larger base carrying the Q-structure `q`.
    pub fn with_base(&self, q: QStructure) -> Result<RepMatrix> {
        let t = mat_embed(&self.t, q.chart())?;
        RepMatrix::new_unchecked(q, self.fiber.clone(), t)
    }

    pub fn decompose(&self) -> RepDecomposition {
        decompose(self)
    }
}

pub fn flatness_residual(q: &QStructure, fiber: &FiberSpec, t: &PolyMatrix) -> PolyMatrix {
    let r = fiber.len();
    let chart = q.chart().clone();
    let mut out = zero_matrix(&chart, r, r);
    for b in 0..r {
        for a in 0..r {
            let mut acc = signed(q.apply(&t[b][a]).expect("entry on base chart"), odd(fiber.level(b)));
            for c in 0..r {
                if t[b][c].is_zero() || t[c][a].is_zero() {
                    continue;
                }
                acc = acc.add(&signed(t[b][c].mul(&t[c][a]), odd(fiber.level(c))));
            }
            out[b][a] = acc;
        }
    }
    out
}

/// Build `T` from the matrix `R` of `Q^ = Q + R^b_a z_b d/dz_a`.
pub fn lift_from_r(q: QStructure, fiber: FiberSpec, r: PolyMatrix) -> Result<RepMatrix> {
    let n = fiber.len();
    if r.len() != n || r.iter().any(|row| row.len() != n) {
        return Err(Error::Invalid(format!("R must be {n}x{n}")));
    }
    let t = (0..n)
        .map(|b| {
            (0..n)
                .map(|a| signed(r[b][a].clone(), odd(fiber.level(a) * fiber.level(b) + fiber.level(b))))
                .collect()
        })
        .collect();
    RepMatrix::new(q, fiber, t)
}

/// Read `R` off the images `Q^ z_a`, which must be linear in the fibre.
pub fn r_from_fibre_images(
    base: &ChartRef,
    fiber: &FiberSpec,
    total: &ChartRef,
    images: &[GradedPoly],
) -> Result<PolyMatrix> {
    let n = fiber.len();
    let fidx: Vec<usize> = fiber.names().iter().map(|f| total.try_index(f)).collect::<Result<_>>()?;
    let mut r = zero_matrix(base, n, n);
    for (a, img) in images.iter().enumerate() {
        let img = img.embed(total)?;
        let mut rebuilt = GradedPoly::zero(total);
        for (b, &fb) in fidx.iter().enumerate() {
            let coeff = right_partial(&img, fb);
            if coeff.support().iter().any(|i| fidx.contains(i)) {
                return Err(Error::Invalid(format!("image of {} is not linear in the fibre", fiber.name(a))));
            }
            rebuilt = rebuilt.add(&coeff.mul(&GradedPoly::generator(total, fb)));
            r[b][a] = coeff.embed(base)?;
        }
        if rebuilt != img {
            return Err(Error::Invalid(format!("image of {} is not linear in the fibre", fiber.name(a))));
        }
    }
    Ok(r)
}

/// Degree-homogeneous pieces `T_p` of a representation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RepDecomposition {
    pub fiber: FiberSpec,
    pub blocks: Vec<PolyMatrix>,
}

impl RepDecomposition {
    pub fn block(&self, p: usize) -> Option<&PolyMatrix> {
        self.blocks.get(p)
    }

    /// Indices `p` with a nonzero `T_p`.
    pub fn nonzero_degrees(&self) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&p| !mat_is_zero(&self.blocks[p])).collect()
    }

    pub fn sum(&self) -> PolyMatrix {
        let mut it = self.blocks.iter();
        let first = it.next().expect("at least one block").clone();
        it.fold(first, |acc, b| mat_add(&acc, b))
    }

    pub fn t0_squared(&self) -> PolyMatrix {
        mat_mul(&self.blocks[0], &self.blocks[0])
    }
}

/// Split by base degree. For a flat `t` the result has `T0^2 = 0`; see
/// [`RepDecomposition::t0_squared`].
pub fn decompose(t: &RepMatrix) -> RepDecomposition {
    let r = t.rank();
    let maxp = (0..r)
        .flat_map(|b| (0..r).map(move |a| (b, a)))
        .map(|(b, a)| t.fiber.level(a) - t.fiber.level(b) + 1)
        .max()
        .unwrap_or(0)
        .max(0) as usize;
    let blocks: Vec<PolyMatrix> = (0..=maxp)
        .map(|p| {
            t.t.iter().map(|row| row.iter().map(|e| e.grade_component(p as i64)).collect()).collect()
        })
        .collect();
    RepDecomposition { fiber: t.fiber.clone(), blocks }
}

/// A canonical pair `(P, X)` of the degree-2 symplectic form, `{P, X} = 1`.
#[derive(Clone, Copy, Debug)]
pub struct CanonicalPair {
    pub momentum: usize,
    pub coordinate: usize,
}

/// `{F, G} = sum F d</dP d>/dX G + s F d</dX d>/dP G` with
/// `s = -(-1)^{|X||P|}`: `s = -1` for `(p, x)` and `s = +1` for `(lb, l)`.
pub fn bracket(f: &GradedPoly, g: &GradedPoly, pairs: &[CanonicalPair]) -> GradedPoly {
    let chart = f.chart();
    let mut out = GradedPoly::zero(chart);
    for pr in pairs {
        let (dp, dx) = (chart.degree_of(pr.momentum) as i64, chart.degree_of(pr.coordinate) as i64);
        let s_negative = !odd(dp * dx);
        let t1 = right_partial(f, pr.momentum).mul(&left_partial(g, pr.coordinate));
        let t2 = right_partial(f, pr.coordinate).mul(&left_partial(g, pr.momentum));
        out = out.add(&t1).add(&signed(t2, s_negative));
    }
    out
}

/// Names of the fibre coordinates of `T*[2]L[1]` dual to `x` and `l`.
pub fn momentum_name(x: &str) -> String {
    format!("p_{x}")
}

pub fn dual_fibre_name(l: &str) -> String {
    format!("lb_{l}")
}

/// Total chart of `T*[2]L[1]`, the pairs of its symplectic form, its fibres
/// and `Theta = 2 p_mu A^mu_a l^a - f^a_{bc} lb_a l^b l^c`.
pub fn hamiltonian_theta(d: &AlgebroidData) -> Result<(ChartRef, Vec<CanonicalPair>, FiberSpec, GradedPoly)> {
    let base = d.chart()?;
    let mut fgens = Vec::new();
    for x in d.base_names() {
        fgens.push((momentum_name(&x), 2));
    }
    for l in &d.fibre_names {
        fgens.push((dual_fibre_name(l), 1));
    }
    let fiber = FiberSpec::new(fgens)?;
    let total = total_chart(&base, &fiber)?;
    let mut pairs = Vec::new();
    for x in d.base_names() {
        pairs.push(CanonicalPair { momentum: total.try_index(&momentum_name(&x))?, coordinate: total.try_index(&x)? });
    }
    for l in &d.fibre_names {
        pairs.push(CanonicalPair { momentum: total.try_index(&dual_fibre_name(l))?, coordinate: total.try_index(l)? });
    }
    let ell: Vec<GradedPoly> = d.fibre_names.iter().map(|l| total.var(l)).collect::<Result<_>>()?;
    let mut theta = GradedPoly::zero(&total);
    for (mu, x) in d.base_names().iter().enumerate() {
        let p = total.var(&momentum_name(x))?;
        for (a, l) in ell.iter().enumerate() {
            let coef = d.anchor[a][mu].embed(&total)?;
            if !coef.is_zero() {
                theta = theta.add(&p.mul(&coef).mul(l).scale_int(2));
            }
        }
    }
    for (a, la) in d.fibre_names.iter().enumerate() {
        let lb = total.var(&dual_fibre_name(la))?;
        for b in 0..d.rank() {
            for c in 0..d.rank() {
                let f = d.structure[a][b][c].embed(&total)?;
                if !f.is_zero() {
                    theta = theta.sub(&f.mul(&lb).mul(&ell[b]).mul(&ell[c]));
                }
            }
        }
    }
    Ok((total, pairs, fiber, theta))
}

/// Adjoint representation `Q^ = {Theta, .}` on `T*[2]L[1]`.
pub fn hamiltonian_lift(d: &AlgebroidData) -> Result<RepMatrix> {
    let (total, pairs, fiber, theta) = hamiltonian_theta(d)?;
    let tt = bracket(&theta, &theta, &pairs);
    if !tt.is_zero() {
        return Err(Error::LiftFailure(vec![Residual { label: "{Theta,Theta}".into(), value: tt.to_string() }]));
    }
    let q = lie_algebroid_q(d)?;
    let images: Vec<GradedPoly> = fiber
        .names()
        .iter()
        .map(|n| Ok(bracket(&theta, &total.var(n)?, &pairs)))
        .collect::<Result<_>>()?;
    let r = r_from_fibre_images(q.chart(), &fiber, &total, &images)?;
    lift_from_r(q, fiber, r)
}

/// `D^ = v d/dx + p d/dq` on `T*[2]T[1]R^n`; fibres `q_xi` (level 1), `p_xi` (level 2).
pub fn courant_rep(n: usize) -> Result<RepMatrix> {
    let q = tangent_q(n)?;
    let mut gens = Vec::new();
    for i in 1..=n {
        gens.push((format!("q_x{i}"), 1));
        gens.push((format!("p_x{i}"), 2));
    }
    let fiber = FiberSpec::new(gens)?;
    let chart = q.chart().clone();
    let mut r = zero_matrix(&chart, fiber.len(), fiber.len());
    for i in 1..=n {
        let a = fiber.index(&format!("q_x{i}")).unwrap();
        let b = fiber.index(&format!("p_x{i}")).unwrap();
        r[b][a] = GradedPoly::one(&chart);
    }
    lift_from_r(q, fiber, r)
}

/// Pull-back of a flat bundle on `R^n` with connection matrices
/// `conn[mu][i][j] = (A_mu)^i_j`, lifted as `v^mu (A_mu)^i_j z^j d/dz^i`.
/// Fibre coordinates `z1..zr` have level 0, and the resulting
/// `T^b_a = v^mu (A_mu)^a_b` is the transpose of the connection.
pub fn flat_bundle_rep(n: usize, conn: &[PolyMatrix]) -> Result<RepMatrix> {
    if conn.len() != n {
        return Err(Error::Invalid(format!("need {n} connection matrices")));
    }
    let rk = conn[0].len();
    let q = tangent_q(n)?;
    let chart = q.chart().clone();
    let fiber = FiberSpec::new((1..=rk).map(|i| (format!("z{i}"), 0)).collect())?;
    let mut r = zero_matrix(&chart, rk, rk);
    for (mu, a) in conn.iter().enumerate() {
        if a.len() != rk || a.iter().any(|row| row.len() != rk) {
            return Err(Error::Invalid("connection matrices must be square of equal size".into()));
        }
        let v = chart.var(&format!("v{}", mu + 1))?;
        for i in 0..rk {
            for j in 0..rk {
                if !a[i][j].is_zero() {
                    // Q^ z_i = v (A)^i_j z_j, so R^j_i = v (A)^i_j
                    r[j][i] = r[j][i].add(&v.mul(&a[i][j].embed(&chart)?));
                }
            }
        }
    }
    lift_from_r(q, fiber, r)
}

/// Constant connection matrices as polynomials on `R^n`.
pub fn constant_connection(n: usize, mats: &[Vec<Vec<Scalar>>]) -> Result<Vec<PolyMatrix>> {
    let base = crate::nq_manifold::base_chart(n)?;
    Ok(mats
        .iter()
        .map(|m| m.iter().map(|row| row.iter().map(|c| GradedPoly::constant(&base, c.clone())).collect()).collect())
        .collect())
}

/// Block sum of two representations of the same `Q`; fibre names must differ.
pub fn direct_sum(a: &RepMatrix, b: &RepMatrix) -> Result<RepMatrix> {
    if a.q != b.q {
        return Err(Error::Invalid("direct sum needs a common Q-structure".into()));
    }
    let gens = |r: &RepMatrix| -> Vec<(String, u32)> {
        r.fiber.names.iter().cloned().zip(r.fiber.levels.iter().copied()).collect()
    };
    let fiber = FiberSpec::new([gens(a), gens(b)].concat())?;
    let chart = a.base().clone();
    let mut t = zero_matrix(&chart, fiber.len(), fiber.len());
    for part in [a, b] {
        let idx: Vec<usize> = part.fiber.names.iter().map(|n| fiber.index(n).expect("merged fibre")).collect();
        for (i, &ii) in idx.iter().enumerate() {
            for (j, &jj) in idx.iter().enumerate() {
                t[ii][jj] = part.t[i][j].clone();
            }
        }
    }
    RepMatrix::new_unchecked(a.q.clone(), fiber, t)
}

/// Change of trivialization `z~_a~ = z_b Omega^b_a~`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeMatrix {
    pub from: FiberSpec,
    pub to: FiberSpec,
    pub entries: PolyMatrix,
}

impl GaugeMatrix {
    pub fn new(base: &ChartRef, from: FiberSpec, to: FiberSpec, entries: PolyMatrix) -> Result<Self> {
        if from.levels() != to.levels() {
            return Err(Error::Invalid("gauge matrix must preserve the level multiset".into()));
        }
        let n = from.len();
        if entries.len() != n || entries.iter().any(|r| r.len() != n) {
            return Err(Error::Invalid(format!("gauge matrix must be {n}x{n}")));
        }
        let entries = mat_embed(&entries, base)?;
        for b in 0..n {
            for a in 0..n {
                let want = to.level(a) - from.level(b);
                for d in entries[b][a].degrees() {
                    if d as i64 != want {
                        return Err(Error::DegreeMismatch {
                            name: format!("Omega[{}][{}]", from.name(b), to.name(a)),
                            expected: want,
                            found: d as i64,
                        });
                    }
                }
            }
        }
        Ok(GaugeMatrix { from, to, entries })
    }

    pub fn identity(base: &ChartRef, fiber: &FiberSpec) -> Self {
        GaugeMatrix { from: fiber.clone(), to: fiber.clone(), entries: identity_matrix(base, fiber.len()) }
    }

    /// `1 + eps` with target fibre names equal to the source names.
    pub fn one_plus(base: &ChartRef, fiber: &FiberSpec, eps: &PolyMatrix) -> Result<Self> {
        GaugeMatrix::new(base, fiber.clone(), fiber.clone(), mat_add(&identity_matrix(base, fiber.len()), eps))
    }

    pub fn chart(&self) -> &ChartRef {
        self.entries[0][0].chart()
    }

    /// Inverse via `Omega = C (1 + M)` with `C` the constant part and
    /// `M = C^{-1}(Omega - C)` nilpotent.
    pub fn inverse(&self) -> Result<PolyMatrix> {
        let n = self.entries.len();
        let chart = self.chart().clone();
        let c: Vec<Vec<Scalar>> =
            self.entries.iter().map(|r| r.iter().map(|p| p.constant_term()).collect()).collect();
        let cinv = rat_inverse(&c).ok_or_else(|| Error::NotInvertible("constant part is singular".into()))?;
        let cinv_p: PolyMatrix = cinv
            .iter()
            .map(|r| r.iter().map(|s| GradedPoly::constant(&chart, s.clone())).collect())
            .collect();
        let cmat: PolyMatrix =
            c.iter().map(|r| r.iter().map(|s| GradedPoly::constant(&chart, s.clone())).collect()).collect();
        let m = mat_mul(&cinv_p, &mat_sub(&self.entries, &cmat));
        let mut sum = identity_matrix(&chart, n);
        let mut power = identity_matrix(&chart, n);
        let limit = n * (chart.len() + 1) + 4;
        for k in 1..=limit {
            power = mat_mul(&power, &m);
            if mat_is_zero(&power) {
                return Ok(mat_mul(&sum, &cinv_p));
            }
            sum = if k % 2 == 1 { mat_sub(&sum, &power) } else { mat_add(&sum, &power) };
        }
        Err(Error::NotInvertible("non-constant part of the gauge matrix is not nilpotent".into()))
    }

    /// Plain matrix product: first change by `self`, then by `other`.
    pub fn compose(&self, other: &GaugeMatrix) -> Result<GaugeMatrix> {
        GaugeMatrix::new(self.chart(), self.from.clone(), other.to.clone(), mat_mul(&self.entries, &other.entries))
    }
}

/// `T~^b~_a~ = (-1)^{b~+b} (O^-1)^b~_b (Q O^b_a~ + T^b_a O^a_a~)`.
pub fn gauge_transform(t: &RepMatrix, omega: &GaugeMatrix) -> Result<RepMatrix> {
    let inv = omega.inverse()?;
    let out = gauge_transform_with_inverse(t, omega, &inv)?;
    let res = out.flatness_residual();
    let was_flat = mat_is_zero(&t.flatness_residual());
    if was_flat && !mat_is_zero(&res) {
        return Err(Error::FlatnessViolation(matrix_residuals(&res, &out.fiber, &out.fiber, "F~")));
    }
    Ok(out)
}

/// Same formula with a caller-supplied inverse, e.g. one truncated in a
/// formal parameter.
pub fn gauge_transform_with_inverse(t: &RepMatrix, omega: &GaugeMatrix, inv: &PolyMatrix) -> Result<RepMatrix> {
    let chart = t.base().clone();
    let o = mat_embed(&omega.entries, &chart)?;
    let inv = mat_embed(inv, &chart)?;
    if omega.from != t.fiber {
        return Err(Error::Invalid("gauge matrix source fibre does not match the representation".into()));
    }
    let n = t.rank();
    let (old, new) = (&omega.from, &omega.to);
    let qo: PolyMatrix = o.iter().map(|r| r.iter().map(|p| t.q().apply(p)).collect::<Result<_>>()).collect::<Result<_>>()?;
    let mut out = zero_matrix(&chart, n, n);
    for bt in 0..n {
        for at in 0..n {
            let mut acc = GradedPoly::zero(&chart);
            for b in 0..n {
                if inv[bt][b].is_zero() {
                    continue;
                }
                if !qo[b][at].is_zero() {
                    acc = acc.add(&signed(inv[bt][b].mul(&qo[b][at]), odd(new.level(bt) + old.level(b))));
                }
                for a in 0..n {
                    let tab = &t.t[b][a];
                    if tab.is_zero() || o[a][at].is_zero() {
                        continue;
                    }
                    // b is the row index of the product and a the column
                    let term = inv[bt][b].mul(tab).mul(&o[a][at]);
                    acc = acc.add(&signed(term, odd(new.level(bt) + old.level(b))));
                }
            }
            out[bt][at] = acc;
        }
    }
    RepMatrix::new_unchecked(t.q().clone(), new.clone(), out)
}

/// `(-1)^b~ O^d_b~ T~^b~_a~ - (-1)^d Q O^d_a~ - (-1)^d T^d_b O^b_a~`,
/// the coordinate form of `Q^ Omega = 0`.
pub fn transition_residual(t: &RepMatrix, tt: &RepMatrix, omega: &GaugeMatrix) -> Result<PolyMatrix> {
    let chart = t.base().clone();
    let o = mat_embed(&omega.entries, &chart)?;
    let n = t.rank();
    let mut out = zero_matrix(&chart, n, n);
    for d in 0..n {
        for at in 0..n {
            let mut acc = GradedPoly::zero(&chart);
            for bt in 0..n {
                acc = acc.add(&signed(o[d][bt].mul(&tt.t[bt][at]), odd(omega.to.level(bt))));
            }
            acc = acc.sub(&signed(t.q().apply(&o[d][at])?, odd(omega.from.level(d))));
            for b in 0..n {
                acc = acc.sub(&signed(t.t[d][b].mul(&o[b][at]), odd(omega.from.level(d))));
            }
            out[d][at] = acc;
        }
    }
    Ok(out)
}

/// First-order change of `T` under `Omega = 1 + eps`:
/// `Q eps^b_a + T^b_c eps^c_a - (-1)^{b+c} eps^b_c T^c_a`.
pub fn infinitesimal_gauge(t: &RepMatrix, eps: &PolyMatrix) -> Result<PolyMatrix> {
    let chart = t.base().clone();
    let e = mat_embed(eps, &chart)?;
    let n = t.rank();
    let mut out = zero_matrix(&chart, n, n);
    for b in 0..n {
        for a in 0..n {
            let mut acc = t.q().apply(&e[b][a])?;
            for c in 0..n {
                acc = acc.add(&t.t[b][c].mul(&e[c][a]));
                acc = acc.sub(&signed(e[b][c].mul(&t.t[c][a]), odd(t.fiber.level(b) + t.fiber.level(c))));
            }
            out[b][a] = acc;
        }
    }
    Ok(out)
}

/// Connection coefficients `gamma[a][mu][b] = Gamma^a_{mu b}` of `L`.
pub type Connection = Vec<Vec<Vec<GradedPoly>>>;

pub fn zero_connection(d: &AlgebroidData) -> Connection {
    vec![vec![vec![GradedPoly::zero(&d.base); d.rank()]; d.dim()]; d.rank()]
}

/// Sparse random connection with entries `c + c' x^nu` of small integers.
pub fn random_connection(d: &AlgebroidData, rng: &mut impl rand::Rng) -> Connection {
    let mut g = zero_connection(d);
    for row in g.iter_mut() {
        for col in row.iter_mut() {
            for e in col.iter_mut() {
                if rng.random_bool(0.3) {
                    let nu = rng.random_range(0..d.dim());
                    let x = GradedPoly::generator(&d.base, nu).scale_int(rng.random_range(-2..=2));
                    *e = x.add(&GradedPoly::constant(&d.base, int(rng.random_range(-2..=2))));
                }
            }
        }
    }
    g
}

/// Split frame of the adjoint representation.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointSplit {
    pub rep: RepMatrix,
    pub decomposition: RepDecomposition,
    pub gauge: GaugeMatrix,
    /// `f~^a_{bc} = f^a_{bc} + Gamma^a_{cb}` with `Gamma^a_{cb} = A^mu_c Gamma^a_{mu b}`.
    pub f_tilde: Vec<Vec<Vec<GradedPoly>>>,
}

/// The coordinate shift `p~_mu = p_mu + Gamma^a_{mu b} lb_a l^b` as a gauge
/// matrix on the fibre of `T*[2]L[1]`.
pub fn split_gauge(d: &AlgebroidData, gamma: &Connection, lift: &RepMatrix) -> Result<GaugeMatrix> {
    let chart = lift.base().clone();
    let from = lift.fiber().clone();
    let to = from.renamed("~");
    let mut o = identity_matrix(&chart, from.len());
    for (mu, x) in d.base_names().iter().enumerate() {
        let col = from.index(&momentum_name(x)).unwrap();
        for (a, la) in d.fibre_names.iter().enumerate() {
            let row = from.index(&dual_fibre_name(la)).unwrap();
            let mut e = GradedPoly::zero(&chart);
            for (b, lb) in d.fibre_names.iter().enumerate() {
                let g = gamma[a][mu][b].embed(&chart)?;
                if !g.is_zero() {
                    e = e.add(&g.mul(&chart.var(lb)?));
                }
            }
            o[row][col] = e;
        }
    }
    GaugeMatrix::new(&chart, from, to, o)
}

/// `f^a_{bc} + Gamma^a_{cb}` with `Gamma^a_{cb} = A^mu_c Gamma^a_{mu b}`, not
/// antisymmetric; this is the combination in the `lb -> lb` block.
pub fn f_tilde_ordered(d: &AlgebroidData, gamma: &Connection) -> Vec<Vec<Vec<GradedPoly>>> {
    let r = d.rank();
    let mut out = d.structure.clone();
    for a in 0..r {
        for b in 0..r {
            for c in 0..r {
                for mu in 0..d.dim() {
                    out[a][b][c] = out[a][b][c].add(&d.anchor[c][mu].mul(&gamma[a][mu][b]));
                }
            }
        }
    }
    out
}

/// Tensorial `f~^a_{bc} = f^a_{bc} + Gamma^a_{cb} - Gamma^a_{bc}`, the
/// coefficient in `Theta = 2 p~ A l - f~ lb l l`.
pub fn f_tilde(d: &AlgebroidData, gamma: &Connection) -> Vec<Vec<Vec<GradedPoly>>> {
    let r = d.rank();
    let o = f_tilde_ordered(d, gamma);
    let mut out = d.structure.clone();
    for a in 0..r {
        for b in 0..r {
            for c in 0..r {
                out[a][b][c] = o[a][b][c].sub(&o[a][c][b]).sub(&d.structure[a][b][c]);
            }
        }
    }
    out
}

/// Split-frame blocks from their closed forms:
/// `T^{p~nu}_{lb a} = 2 A^nu_a`, `T^{lb c}_{lb a} = 2 f~^c_{ba} l^b`,
/// `T^{p~nu}_{p~mu} = -2 (d_mu A^nu_a - Gamma^b_{mu a} A^nu_b) l^a`,
/// `T^{lb c}_{p~mu} = -(nabla_mu f~^c_{ab} + 2 F^c_{mu nu b} A^nu_a) l^a l^b`,
/// where `f~` is [`f_tilde`] and `F` the curvature of `Gamma`.
pub fn adjoint_split_closed_form(d: &AlgebroidData, gamma: &Connection, lift: &RepMatrix) -> Result<PolyMatrix> {
    let chart = lift.base().clone();
    let fiber = lift.fiber().renamed("~");
    let ft = f_tilde_ordered(d, gamma);
    let ell: Vec<GradedPoly> = d.fibre_names.iter().map(|l| chart.var(l)).collect::<Result<_>>()?;
    let pidx = |x: &str| fiber.index(&format!("{}~", momentum_name(x))).unwrap();
    let lidx = |l: &str| fiber.index(&format!("{}~", dual_fibre_name(l))).unwrap();
    let names = d.base_names();
    let mut t = zero_matrix(&chart, fiber.len(), fiber.len());
    for (a, la) in d.fibre_names.iter().enumerate() {
        for (nu, xn) in names.iter().enumerate() {
            t[pidx(xn)][lidx(la)] = d.anchor[a][nu].embed(&chart)?.scale_int(2);
        }
        for (c, lc) in d.fibre_names.iter().enumerate() {
            let mut e = GradedPoly::zero(&chart);
            for b in 0..d.rank() {
                e = e.add(&ft[c][b][a].embed(&chart)?.mul(&ell[b]));
            }
            t[lidx(lc)][lidx(la)] = e.scale_int(2);
        }
    }
    for (mu, xm) in names.iter().enumerate() {
        for (nu, xn) in names.iter().enumerate() {
            let mut e = GradedPoly::zero(&chart);
            for a in 0..d.rank() {
                let mut coef = d.d(mu, &d.anchor[a][nu]);
                for b in 0..d.rank() {
                    coef = coef.sub(&gamma[b][mu][a].mul(&d.anchor[b][nu]));
                }
                e = e.add(&coef.embed(&chart)?.mul(&ell[a]));
            }
            t[pidx(xn)][pidx(xm)] = e.scale_int(-2);
        }
        let nf = covariant_f_tilde(d, gamma, mu);
        let fa = curvature_anchor(d, gamma, mu);
        for (c, lc) in d.fibre_names.iter().enumerate() {
            let mut e = GradedPoly::zero(&chart);
            for a in 0..d.rank() {
                for b in 0..d.rank() {
                    let coef = nf[c][a][b].add(&fa[c][a][b].scale_int(2)).neg().embed(&chart)?;
                    if !coef.is_zero() {
                        e = e.add(&coef.mul(&ell[a]).mul(&ell[b]));
                    }
                }
            }
            t[lidx(lc)][pidx(xm)] = e;
        }
    }
    Ok(t)
}

/// The `lb l l` coefficients `Y^c_{ab}` of `Q^ p~_mu`, expanded directly:
/// `d_mu f^c_{ab} + 2 G^c_{nu a} d_mu A^nu_b - 2 A^nu_a d_nu G^c_{mu b}
///  - 2 G^d_{mu b} A^nu_d G^c_{nu a} - 2 G^d_{mu b} f^c_{ad} + G^c_{mu d} f^d_{ab}`.
/// The degree-2 block is `-Y^c_{ab} l^a l^b`.
pub fn split_curvature_direct(d: &AlgebroidData, gamma: &Connection, mu: usize) -> Vec<Vec<Vec<GradedPoly>>> {
    let r = d.rank();
    let n = d.dim();
    let f = &d.structure;
    let an = &d.anchor;
    let mut k = vec![vec![vec![GradedPoly::zero(&d.base); r]; r]; r];
    for c in 0..r {
        for a in 0..r {
            for b in 0..r {
                let mut y = d.d(mu, &f[c][a][b]);
                for nu in 0..n {
                    y = y.add(&gamma[c][nu][a].mul(&d.d(mu, &an[b][nu])).scale_int(2));
                    y = y.sub(&an[a][nu].mul(&d.d(nu, &gamma[c][mu][b])).scale_int(2));
                    for e in 0..r {
                        y = y.sub(&gamma[e][mu][b].mul(&an[e][nu]).mul(&gamma[c][nu][a]).scale_int(2));
                    }
                }
                for e in 0..r {
                    y = y.sub(&gamma[e][mu][b].mul(&f[c][a][e]).scale_int(2));
                    y = y.add(&gamma[c][mu][e].mul(&f[e][a][b]));
                }
                k[c][a][b] = y;
            }
        }
    }
    k
}

/// `nabla_mu f~^c_{ab}` with the connection acting on all three indices.
pub fn covariant_f_tilde(d: &AlgebroidData, gamma: &Connection, mu: usize) -> Vec<Vec<Vec<GradedPoly>>> {
    let r = d.rank();
    let ft = f_tilde(d, gamma);
    let mut k = vec![vec![vec![GradedPoly::zero(&d.base); r]; r]; r];
    for c in 0..r {
        for a in 0..r {
            for b in 0..r {
                let mut e = d.d(mu, &ft[c][a][b]);
                for g in 0..r {
                    e = e.add(&gamma[c][mu][g].mul(&ft[g][a][b]));
                    e = e.sub(&gamma[g][mu][a].mul(&ft[c][g][b]));
                    e = e.sub(&gamma[g][mu][b].mul(&ft[c][a][g]));
                }
                k[c][a][b] = e;
            }
        }
    }
    k
}

/// `F^c_{mu nu b}` for fixed `mu, nu`, indexed `[c][b]`:
/// `d_mu G_nu - d_nu G_mu + G_mu G_nu - G_nu G_mu`.
pub fn connection_curvature(d: &AlgebroidData, gamma: &Connection, mu: usize, nu: usize) -> Vec<Vec<GradedPoly>> {
    let r = d.rank();
    let mut out = vec![vec![GradedPoly::zero(&d.base); r]; r];
    for c in 0..r {
        for b in 0..r {
            let mut e = d.d(mu, &gamma[c][nu][b]).sub(&d.d(nu, &gamma[c][mu][b]));
            for g in 0..r {
                e = e.add(&gamma[c][mu][g].mul(&gamma[g][nu][b]));
                e = e.sub(&gamma[c][nu][g].mul(&gamma[g][mu][b]));
            }
            out[c][b] = e;
        }
    }
    out
}

/// `F^c_{mu nu b} A^nu_a`, indexed `[c][a][b]`.
pub fn curvature_anchor(d: &AlgebroidData, gamma: &Connection, mu: usize) -> Vec<Vec<Vec<GradedPoly>>> {
    let r = d.rank();
    let mut out = vec![vec![vec![GradedPoly::zero(&d.base); r]; r]; r];
    for nu in 0..d.dim() {
        let f = connection_curvature(d, gamma, mu, nu);
        for c in 0..r {
            for a in 0..r {
                for b in 0..r {
                    if !f[c][b].is_zero() {
                        out[c][a][b] = out[c][a][b].add(&f[c][b].mul(&d.anchor[a][nu]));
                    }
                }
            }
        }
    }
    out
}

/// Adjoint representation in the frame split by `gamma`; checked against
/// the gauge transform of [`hamiltonian_lift`] by the `p~` shift.
pub fn adjoint_split(d: &AlgebroidData, gamma: &Connection) -> Result<AdjointSplit> {
    let lift = hamiltonian_lift(d)?;
    let gauge = split_gauge(d, gamma, &lift)?;
    let rep = gauge_transform(&lift, &gauge)?;
    let closed = adjoint_split_closed_form(d, gamma, &lift)?;
    let diff = mat_sub(&closed, rep.entries());
    if !mat_is_zero(&diff) {
        return Err(Error::Invalid(format!(
            "split-frame closed form disagrees with the gauge transform: {}",
            matrix_residuals(&diff, rep.fiber(), rep.fiber(), "D")
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    Ok(AdjointSplit { decomposition: rep.decompose(), rep, gauge, f_tilde: f_tilde(d, gamma) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graded_algebra::{rat, substitute};
    use std::collections::BTreeMap;
    use crate::nq_manifold::*;

    fn poly(c: &ChartRef, s: &str) -> GradedPoly {
        GradedPoly::parse(c, s).unwrap()
    }

    fn strings(m: &PolyMatrix) -> Vec<Vec<String>> {
        m.iter().map(|r| r.iter().map(|p| p.to_string()).collect()).collect()
    }

    fn so3_gamma(d: &AlgebroidData) -> Connection {
        let mut g = zero_connection(d);
        let b = d.base.clone();
        g[0][0][1] = poly(&b, "1 + x2");
        g[2][1][0] = poly(&b, "3*x1 - x3^2");
        g[1][2][2] = poly(&b, "x1*x2");
        g
    }

    // Rebuild T~ by literally substituting z = z~ O^-1 into Q^(z O).
    fn substitution_oracle(t: &RepMatrix, omega: &GaugeMatrix) -> PolyMatrix {
        let (old_total, qhat) = t.lifted_derivation().unwrap();
        let new_total = total_chart(t.base(), &omega.to).unwrap();
        let o = mat_embed(&omega.entries, &old_total).unwrap();
        let inv = mat_embed(&omega.inverse().unwrap(), &new_total).unwrap();
        let mut map = BTreeMap::new();
        for b in 0..t.rank() {
            let mut zb = GradedPoly::zero(&new_total);
            for c in 0..t.rank() {
                zb = zb.add(&new_total.var(omega.to.name(c)).unwrap().mul(&inv[c][b]));
            }
            map.insert(t.fiber().name(b).to_string(), zb);
        }
        let images: Vec<GradedPoly> = (0..t.rank())
            .map(|at| {
                let mut zt = GradedPoly::zero(&old_total);
                for b in 0..t.rank() {
                    zt = zt.add(&old_total.var(t.fiber().name(b)).unwrap().mul(&o[b][at]));
                }
                substitute(&map, &qhat.apply(&zt).unwrap(), &new_total).unwrap()
            })
            .collect();
        let r = r_from_fibre_images(t.base(), &omega.to, &new_total, &images).unwrap();
        lift_from_r(t.q().clone(), omega.to.clone(), r).unwrap().entries().clone()
    }

    fn so3_gauge(t: &RepMatrix) -> GaugeMatrix {
        let base = t.base().clone();
        let f = t.fiber();
        let mut e = identity_matrix(&base, f.len());
        let i = |n: &str| f.index(n).unwrap();
        e[i("lb_l1")][i("lb_l2")] = poly(&base, "2");
        e[i("p_x1")][i("p_x3")] = poly(&base, "-1/2 + x2");
        e[i("lb_l2")][i("p_x1")] = poly(&base, "x1*l3 - l2");
        e[i("lb_l3")][i("p_x2")] = poly(&base, "l1");
        GaugeMatrix::new(&base, f.clone(), f.clone(), e).unwrap()
    }

    #[test]
    fn infinitesimal_gauge_is_first_order_of_finite() {
        let d = so3_dual_poisson().unwrap();
        let t = hamiltonian_lift(&d).unwrap();
        let base = t.base().clone();
        let ext = base.extend("ext", vec![Generator::new("lam", 0)]).unwrap();
        let mut qd = Derivation::new(&ext, 1);
        for (i, g) in base.generators().iter().enumerate() {
            qd.set(&g.name, t.q().derivation().image(i).embed(&ext).unwrap()).unwrap();
        }
        let te = t.with_base(QStructure::new(qd).unwrap()).unwrap();
        let f = t.fiber();
        let mut eps = zero_matrix(&base, f.len(), f.len());
        let lb = f.index(&dual_fibre_name("xi_x1")).unwrap();
        let lb2 = f.index(&dual_fibre_name("xi_x2")).unwrap();
        let px = f.index(&momentum_name("x3")).unwrap();
        eps[lb][px] = poly(&base, "x1*xi_x2 - 2*xi_x3");
        eps[lb][lb2] = poly(&base, "x3^2 + 1");
        eps[px][px] = poly(&base, "x2");
        let lam = ext.var("lam").unwrap();
        let le: PolyMatrix = mat_embed(&eps, &ext).unwrap().iter().map(|r| r.iter().map(|p| p.mul(&lam)).collect()).collect();
        let omega = GaugeMatrix::one_plus(&ext, f, &le).unwrap();
        let inv = mat_sub(&identity_matrix(&ext, f.len()), &le);
        let tt = gauge_transform_with_inverse(&te, &omega, &inv).unwrap();
        let li = ext.index("lam").unwrap() as u32;
        let mut to_one = BTreeMap::new();
        to_one.insert("lam".to_string(), GradedPoly::one(&ext));
        let delta = infinitesimal_gauge(&t, &eps).unwrap();
        for b in 0..f.len() {
            for a in 0..f.len() {
                let first = tt.entry(b, a).filter_terms(|m| m.exponent(li) == 1);
                let first = substitute(&to_one, &first, &ext).unwrap();
                assert_eq!(first, delta[b][a].embed(&ext).unwrap(), "entry ({b},{a})");
            }
        }
        assert!(!mat_is_zero(&delta));
    }

    #[test]
    fn courant_has_only_t0() {
        let t = courant_rep(2).unwrap();
        assert_eq!(t.decompose().nonzero_degrees(), vec![0]);
        assert!(mat_is_zero(&t.decompose().t0_squared()));
        let q = t.fiber().index("q_x1").unwrap();
        let p = t.fiber().index("p_x1").unwrap();
        assert_eq!(t.to_r()[p][q].to_string(), "1");
    }

    #[test]
    fn flat_bundle_has_only_t1_and_transposes() {
        let k = vec![vec![rat(0, 1), rat(-1, 1), rat(0, 1)], vec![rat(1, 1), rat(0, 1), rat(0, 1)], vec![rat(0, 1); 3]];
        let conn = constant_connection(1, &[k]).unwrap();
        let t = flat_bundle_rep(1, &conn).unwrap();
        assert_eq!(t.decompose().nonzero_degrees(), vec![1]);
        assert_eq!(t.entry(0, 1).to_string(), "v1");
        assert_eq!(t.entry(1, 0).to_string(), "-v1");
    }

    #[test]
    fn noncommuting_constant_connection_is_not_flat() {
        let z = rat(0, 1);
        let e12 = vec![vec![z.clone(), rat(1, 1)], vec![z.clone(), z.clone()]];
        let e21 = vec![vec![z.clone(), z.clone()], vec![rat(1, 1), z.clone()]];
        let conn = constant_connection(2, &[e12, e21]).unwrap();
        assert!(matches!(flat_bundle_rep(2, &conn), Err(Error::FlatnessViolation(_))));
    }

    #[test]
    fn degree_law_is_enforced() {
        let q = tangent_q(1).unwrap();
        let fiber = FiberSpec::new(vec![("a".into(), 0), ("b".into(), 1)]).unwrap();
        let c = q.chart().clone();
        // T^a_a must have degree 1, not 0
        let t = vec![vec![poly(&c, "1"), poly(&c, "0")], vec![poly(&c, "0"), poly(&c, "0")]];
        assert!(matches!(RepMatrix::new(q, fiber, t), Err(Error::DegreeMismatch { .. })));
    }

    #[test]
    fn lift_of_tangent_algebroid_is_courant() {
        let lift = hamiltonian_lift(&tangent_algebroid(1, rat(1, 2)).unwrap()).unwrap();
        let courant = courant_rep(1).unwrap();
        assert_eq!(lift.fiber().levels(), courant.fiber().levels());
        assert_eq!(strings(lift.entries()), strings(&mat_embed(courant.entries(), courant.base()).unwrap()));
    }

    #[test]
    fn zero_algebroid_lift_is_trivial() {
        let d = AlgebroidData::lie_algebra(base_chart(0).unwrap(), vec!["l1".into(), "l2".into()], &vec![
            vec![vec![rat(0, 1); 2]; 2];
            2
        ])
        .unwrap();
        assert!(mat_is_zero(hamiltonian_lift(&d).unwrap().entries()));
    }

    #[test]
    fn so3_lift_is_flat_with_constant_bracket() {
        let d = action_algebroid(&so3_constants()).unwrap();
        let t = hamiltonian_lift(&d).unwrap();
        assert!(mat_is_zero(&t.flatness_residual()));
        // constant f and linear anchor: no degree-2 block
        assert_eq!(t.decompose().nonzero_degrees(), vec![0, 1]);
    }

    #[test]
    fn failing_jacobi_blocks_the_lift() {
        let mut f = so3_constants();
        f[0][0][1] = rat(1, 10);
        f[0][1][0] = rat(-1, 10);
        let d = AlgebroidData::lie_algebra(base_chart(0).unwrap(), vec!["l1".into(), "l2".into(), "l3".into()], &f)
            .unwrap();
        assert!(matches!(hamiltonian_lift(&d), Err(Error::LiftFailure(_))));
    }

    #[test]
    fn identity_gauge_is_identity() {
        let t = hamiltonian_lift(&action_algebroid(&so3_constants()).unwrap()).unwrap();
        let id = GaugeMatrix::identity(t.base(), t.fiber());
        assert_eq!(gauge_transform(&t, &id).unwrap().entries(), t.entries());
    }

    #[test]
    fn gauge_transform_matches_substitution() {
        let t = hamiltonian_lift(&action_algebroid(&so3_constants()).unwrap()).unwrap();
        let omega = so3_gauge(&t);
        let tt = gauge_transform(&t, &omega).unwrap();
        assert_eq!(strings(tt.entries()), strings(&substitution_oracle(&t, &omega)));
        assert!(mat_is_zero(&transition_residual(&t, &tt, &omega).unwrap()));
    }

    #[test]
    fn gauge_inverse_and_compose() {
        let t = hamiltonian_lift(&action_algebroid(&so3_constants()).unwrap()).unwrap();
        let o1 = so3_gauge(&t);
        let inv = o1.inverse().unwrap();
        assert_eq!(mat_mul(&o1.entries, &inv), identity_matrix(t.base(), t.rank()));
        let mut e2 = identity_matrix(t.base(), t.rank());
        let f = t.fiber();
        e2[f.index("lb_l3").unwrap()][f.index("p_x3").unwrap()] = poly(t.base(), "x2*l1 + l3");
        e2[f.index("p_x2").unwrap()][f.index("p_x1").unwrap()] = poly(t.base(), "5");
        let o2 = GaugeMatrix::new(t.base(), f.clone(), f.clone(), e2).unwrap();
        let two_step = gauge_transform(&gauge_transform(&t, &o1).unwrap(), &o2).unwrap();
        let one_step = gauge_transform(&t, &o1.compose(&o2).unwrap()).unwrap();
        assert_eq!(two_step.entries(), one_step.entries());
    }

    #[test]
    fn non_nilpotent_gauge_is_rejected() {
        let q = tangent_q(1).unwrap();
        let c = q.chart().clone();
        let fiber = FiberSpec::new(vec![("z".into(), 0)]).unwrap();
        let g = GaugeMatrix::new(&c, fiber.clone(), fiber, vec![vec![poly(&c, "1 + x1")]]).unwrap();
        assert!(matches!(g.inverse(), Err(Error::NotInvertible(_))));
    }

    #[test]
    fn split_with_zero_connection_is_the_lift() {
        let d = action_algebroid(&so3_constants()).unwrap();
        let s = adjoint_split(&d, &zero_connection(&d)).unwrap();
        let lift = hamiltonian_lift(&d).unwrap();
        assert_eq!(strings(s.rep.entries()), strings(lift.entries()));
    }

    #[test]
    fn split_closed_form_matches_gauge_transform() {
        let d = action_algebroid(&so3_constants()).unwrap();
        let g = so3_gamma(&d);
        let s = adjoint_split(&d, &g).unwrap();
        let lift = hamiltonian_lift(&d).unwrap();
        let closed = adjoint_split_closed_form(&d, &g, &lift).unwrap();
        assert_eq!(strings(s.rep.entries()), strings(&closed));
        assert!(mat_is_zero(&s.rep.flatness_residual()));
    }

    #[test]
    fn curvature_form_equals_direct_expansion() {
        let d = action_algebroid(&so3_constants()).unwrap();
        let g = so3_gamma(&d);
        for mu in 0..3 {
            let direct = split_curvature_direct(&d, &g, mu);
            let nf = covariant_f_tilde(&d, &g, mu);
            let fa = curvature_anchor(&d, &g, mu);
            for c in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        // compare the parts antisymmetric in (a, b), which is all l l sees
                        let lhs = direct[c][a][b].sub(&direct[c][b][a]);
                        let rhs = nf[c][a][b].sub(&nf[c][b][a]).add(&fa[c][a][b].sub(&fa[c][b][a]).scale_int(2));
                        assert_eq!(lhs, rhs, "mu {mu} c {c} a {a} b {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn tangent_split_with_flat_connection_keeps_degree_two_zero() {
        let d = tangent_algebroid(2, rat(1, 2)).unwrap();
        let s = adjoint_split(&d, &zero_connection(&d)).unwrap();
        assert_eq!(s.decomposition.nonzero_degrees(), vec![0]);
    }

    #[test]
    fn f_tilde_is_antisymmetric() {
        let d = action_algebroid(&so3_constants()).unwrap();
        let ft = f_tilde(&d, &so3_gamma(&d));
        for c in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    assert_eq!(ft[c][a][b], ft[c][b][a].neg());
                }
            }
        }
    }
}
