//! Dense Grassmann algebra `R^{0|m}` over `f64` and numeric evaluation of
//! graded polynomials with Grassmann-valued arguments.
//!
//! A value stores one coefficient per subset `S` of `{0..m}`, indexed by the
//! bitmask of `S`; the basis element is `eta_S = prod_{i in S} eta_i` in
//! increasing index order.

use std::fmt;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::graded_algebra::{scalar_to_f64, GradedPoly};

/// Sign of `eta_a eta_b` relative to `eta_{a|b}`, for disjoint masks.
fn reorder_negative(a: usize, b: usize) -> bool {
    // count pairs (i in a, j in b) with i > j
    let mut count = 0u32;
    let mut bb = b;
    while bb != 0 {
        let j = bb.trailing_zeros();
        count += (a >> (j + 1)).count_ones();
        bb &= bb - 1;
    }
    count % 2 == 1
}

#[derive(Clone, PartialEq)]
pub struct GrassmannValue {
    m: u32,
    c: Vec<f64>,
}

impl fmt::Debug for GrassmannValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for GrassmannValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (s, &v) in self.c.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{v:e}")?;
            if s != 0 {
                write!(f, "*e{}", mask_key(s))?;
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Sorted 1-based index string of a mask, e.g. `0b101 -> "13"`.
pub fn mask_key(s: usize) -> String {
    (0..usize::BITS).filter(|i| s >> i & 1 == 1).map(|i| (i + 1).to_string()).collect::<Vec<_>>().join("")
}

fn parse_mask_key(key: &str, m: u32) -> Result<usize> {
    let mut s = 0usize;
    for ch in key.chars() {
        let d = ch.to_digit(10).ok_or_else(|| Error::Invalid(format!("bad Grassmann key {key:?}")))?;
        if d == 0 || d > m {
            return Err(Error::Invalid(format!("Grassmann index {d} out of range 1..={m}")));
        }
        s |= 1 << (d - 1);
    }
    Ok(s)
}

impl GrassmannValue {
    pub fn zero(m: u32) -> Self {
        GrassmannValue { m, c: vec![0.0; 1 << m] }
    }

    pub fn scalar(m: u32, v: f64) -> Self {
        let mut g = Self::zero(m);
        g.c[0] = v;
        g
    }

    /// `eta_i`, zero-based.
    pub fn generator(m: u32, i: u32) -> Self {
        assert!(i < m, "generator index out of range");
        let mut g = Self::zero(m);
        g.c[1 << i] = 1.0;
        g
    }

    pub fn basis(m: u32, mask: usize, v: f64) -> Self {
        let mut g = Self::zero(m);
        g.c[mask] = v;
        g
    }

    pub fn rank(&self) -> u32 {
        self.m
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    pub fn coeff(&self, mask: usize) -> f64 {
        self.c[mask]
    }

    pub fn set_coeff(&mut self, mask: usize, v: f64) {
        self.c[mask] = v;
    }

    pub fn body(&self) -> f64 {
        self.c[0]
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|&v| v == 0.0)
    }

    /// Max-norm over all coefficients.
    pub fn norm(&self) -> f64 {
        self.c.iter().fold(0.0, |a, &v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }

    /// Largest coefficient outside Grassmann degree `d`.
    pub fn off_degree_norm(&self, d: u32) -> f64 {
        self.c.iter().enumerate().filter(|(s, _)| s.count_ones() != d).fold(0.0, |a, (_, &v)| a.max(v.abs()))
    }

    pub fn degree_part(&self, d: u32) -> GrassmannValue {
        let mut g = self.clone();
        for (s, v) in g.c.iter_mut().enumerate() {
            if s.count_ones() != d {
                *v = 0.0;
            }
        }
        g
    }

    pub fn add(&self, o: &GrassmannValue) -> GrassmannValue {
        let mut g = self.clone();
        g.add_assign(o);
        g
    }

    pub fn add_assign(&mut self, o: &GrassmannValue) {
        debug_assert_eq!(self.m, o.m);
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, o: &GrassmannValue, s: f64) {
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += s * b;
        }
    }

    pub fn sub(&self, o: &GrassmannValue) -> GrassmannValue {
        let mut g = self.clone();
        g.add_scaled(o, -1.0);
        g
    }

    pub fn scale(&self, s: f64) -> GrassmannValue {
        GrassmannValue { m: self.m, c: self.c.iter().map(|v| v * s).collect() }
    }

    pub fn neg(&self) -> GrassmannValue {
        self.scale(-1.0)
    }

    pub fn mul(&self, o: &GrassmannValue) -> GrassmannValue {
        let mut out = GrassmannValue::zero(self.m);
        out.add_product(self, o, 1.0);
        out
    }

    /// `self += s * a * b`.
    pub fn add_product(&mut self, a: &GrassmannValue, b: &GrassmannValue, s: f64) {
        debug_assert_eq!(a.m, b.m);
        if a.c[1..].iter().all(|&v| v == 0.0) {
            let k = s * a.c[0];
            if k != 0.0 {
                self.add_scaled(b, k);
            }
            return;
        }
        if b.c[1..].iter().all(|&v| v == 0.0) {
            let k = s * b.c[0];
            if k != 0.0 {
                self.add_scaled(a, k);
            }
            return;
        }
        for (sa, &va) in a.c.iter().enumerate() {
            if va == 0.0 {
                continue;
            }
            for (sb, &vb) in b.c.iter().enumerate() {
                if vb == 0.0 || sa & sb != 0 {
                    continue;
                }
                let v = s * va * vb;
                if reorder_negative(sa, sb) {
                    self.c[sa | sb] -= v;
                } else {
                    self.c[sa | sb] += v;
                }
            }
        }
    }

    /// Copy into a larger algebra, shifting every index up by `shift`.
    pub fn lift(&self, m_new: u32, shift: u32) -> GrassmannValue {
        assert!(m_new >= self.m + shift);
        let mut g = GrassmannValue::zero(m_new);
        for (s, &v) in self.c.iter().enumerate() {
            g.c[s << shift] = v;
        }
        g
    }

    /// Coefficient of `eta_0` from the left: `self = A + eta_0 B`, returns `B`
    /// in the algebra of the remaining generators (indices shifted down).
    pub fn split_first(&self) -> (GrassmannValue, GrassmannValue) {
        let m = self.m - 1;
        let mut a = GrassmannValue::zero(m);
        let mut b = GrassmannValue::zero(m);
        for (s, &v) in self.c.iter().enumerate() {
            if s & 1 == 0 {
                a.c[s >> 1] = v;
            } else {
                b.c[s >> 1] = v;
            }
        }
        (a, b)
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (s, &v) in self.c.iter().enumerate() {
            if v != 0.0 {
                map.insert(mask_key(s), Value::from(v));
            }
        }
        Value::Object(map)
    }

    pub fn from_json(m: u32, v: &Value) -> Result<Self> {
        match v {
            Value::Number(n) => Ok(GrassmannValue::scalar(m, n.as_f64().unwrap_or(f64::NAN))),
            Value::Object(map) => {
                let mut g = GrassmannValue::zero(m);
                for (k, val) in map {
                    let x = val.as_f64().ok_or_else(|| Error::Invalid(format!("coefficient {k:?} is not a number")))?;
                    g.c[parse_mask_key(k, m)?] = x;
                }
                Ok(g)
            }
            _ => Err(Error::Invalid("Grassmann value must be a number or an object".into())),
        }
    }
}

pub type GrassmannMatrix = Vec<Vec<GrassmannValue>>;

pub fn gm_zero(m: u32, rows: usize, cols: usize) -> GrassmannMatrix {
    vec![vec![GrassmannValue::zero(m); cols]; rows]
}

pub fn gm_identity(m: u32, n: usize) -> GrassmannMatrix {
    let mut a = gm_zero(m, n, n);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = GrassmannValue::scalar(m, 1.0);
    }
    a
}

pub fn gm_mul(a: &GrassmannMatrix, b: &GrassmannMatrix) -> GrassmannMatrix {
    let m = a[0][0].rank();
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = gm_zero(m, n, p);
    for i in 0..n {
        for l in 0..k {
            if a[i][l].is_zero() {
                continue;
            }
            for j in 0..p {
                if !b[l][j].is_zero() {
                    out[i][j].add_product(&a[i][l], &b[l][j], 1.0);
                }
            }
        }
    }
    out
}

pub fn gm_add(a: &GrassmannMatrix, b: &GrassmannMatrix) -> GrassmannMatrix {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x.add(y)).collect()).collect()
}

pub fn gm_sub(a: &GrassmannMatrix, b: &GrassmannMatrix) -> GrassmannMatrix {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x.sub(y)).collect()).collect()
}

pub fn gm_scale(a: &GrassmannMatrix, s: f64) -> GrassmannMatrix {
    a.iter().map(|r| r.iter().map(|x| x.scale(s)).collect()).collect()
}

/// `a += s * b`.
pub fn gm_axpy(a: &mut GrassmannMatrix, b: &GrassmannMatrix, s: f64) {
    for (r, q) in a.iter_mut().zip(b) {
        for (x, y) in r.iter_mut().zip(q) {
            x.add_scaled(y, s);
        }
    }
}

pub fn gm_norm(a: &GrassmannMatrix) -> f64 {
    a.iter().flatten().fold(0.0, |m, x| m.max(x.norm()))
}

pub fn gm_is_finite(a: &GrassmannMatrix) -> bool {
    a.iter().flatten().all(|x| x.is_finite())
}

/// Square Grassmann matrix in one contiguous buffer, entry `(i, j)` at
/// `(i * r + j) * 2^m`. Used by the transport kernels, which would
/// otherwise spend their time allocating.
#[derive(Clone, Debug)]
pub struct FlatMatrix {
    m: u32,
    r: usize,
    data: Vec<f64>,
}

/// Nonzero coefficients of a matrix, entry by entry, for use as the left
/// factor of a product.
#[derive(Clone, Debug)]
pub struct SparseFactor {
    entries: Vec<(usize, usize, Vec<(usize, f64)>)>,
}

/// `sign[a * 2^m + b]`: `eta_a eta_b = sign eta_{a|b}` for disjoint masks.
#[derive(Clone, Debug)]
pub struct SignTable {
    m: u32,
    sign: Vec<f64>,
}

impl SignTable {
    pub fn new(m: u32) -> Self {
        let d = 1usize << m;
        let mut sign = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                if a & b == 0 {
                    sign[a * d + b] = if reorder_negative(a, b) { -1.0 } else { 1.0 };
                }
            }
        }
        SignTable { m, sign }
    }
}

impl FlatMatrix {
    pub fn zero(m: u32, r: usize) -> Self {
        FlatMatrix { m, r, data: vec![0.0; r * r << m] }
    }

    pub fn identity(m: u32, r: usize) -> Self {
        let mut a = FlatMatrix::zero(m, r);
        for i in 0..r {
            a.data[(i * r + i) << m] = 1.0;
        }
        a
    }

    pub fn from_matrix(a: &GrassmannMatrix) -> Self {
        let r = a.len();
        let m = a[0][0].rank();
        let mut out = FlatMatrix::zero(m, r);
        for (i, row) in a.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let at = (i * r + j) << m;
                out.data[at..at + (1 << m)].copy_from_slice(&v.c);
            }
        }
        out
    }

    pub fn to_matrix(&self) -> GrassmannMatrix {
        let d = 1usize << self.m;
        (0..self.r)
            .map(|i| {
                (0..self.r)
                    .map(|j| {
                        let at = (i * self.r + j) * d;
                        GrassmannValue { m: self.m, c: self.data[at..at + d].to_vec() }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `self = a + s * b`.
    pub fn assign_axpy(&mut self, a: &FlatMatrix, b: &FlatMatrix, s: f64) {
        for ((o, x), y) in self.data.iter_mut().zip(&a.data).zip(&b.data) {
            *o = x + s * y;
        }
    }

    /// `self += s * b`.
    pub fn axpy(&mut self, b: &FlatMatrix, s: f64) {
        for (o, y) in self.data.iter_mut().zip(&b.data) {
            *o += s * y;
        }
    }

    /// `self += s * a * b`.
    pub fn add_product(&mut self, a: &SparseFactor, b: &FlatMatrix, s: f64, signs: &SignTable) {
        let (m, r) = (self.m, self.r);
        debug_assert_eq!(signs.m, m);
        let d = 1usize << m;
        for (i, l, coeffs) in &a.entries {
            for j in 0..r {
                let src = (l * r + j) * d;
                let dst = (i * r + j) * d;
                for (sb, &vb) in b.data[src..src + d].iter().enumerate() {
                    if vb == 0.0 {
                        continue;
                    }
                    for &(sa, va) in coeffs {
                        if sa & sb == 0 {
                            self.data[dst + (sa | sb)] += s * va * vb * signs.sign[sa * d + sb];
                        }
                    }
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl SparseFactor {
    pub fn new(a: &GrassmannMatrix) -> Self {
        let mut entries = Vec::new();
        for (i, row) in a.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                let nz: Vec<(usize, f64)> = v.c.iter().copied().enumerate().filter(|&(_, x)| x != 0.0).collect();
                if !nz.is_empty() {
                    entries.push((i, l, nz));
                }
            }
        }
        SparseFactor { entries }
    }

    pub fn from_flat(a: &FlatMatrix) -> Self {
        SparseFactor::new(&a.to_matrix())
    }
}

/// A graded polynomial flattened for repeated numeric evaluation.
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    terms: Vec<(f64, Vec<(usize, u32)>)>,
}

impl CompiledPoly {
    pub fn new(p: &GradedPoly) -> Self {
        let terms = p
            .terms()
            .map(|(mono, c)| (scalar_to_f64(c), mono.0.iter().map(|&(i, e)| (i as usize, e)).collect()))
            .collect();
        CompiledPoly { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Evaluate with `vals[i]` substituted for generator `i`. The values must
    /// have the parity of their generators for the result to be meaningful.
    pub fn eval(&self, vals: &[GrassmannValue]) -> GrassmannValue {
        let m = vals.first().map(|v| v.rank()).unwrap_or(0);
        let mut out = GrassmannValue::zero(m);
        for (c, factors) in &self.terms {
            let mut acc = GrassmannValue::scalar(m, *c);
            for &(i, e) in factors {
                for _ in 0..e {
                    acc = acc.mul(&vals[i]);
                }
                if acc.is_zero() {
                    break;
                }
            }
            out.add_assign(&acc);
        }
        out
    }

    /// Evaluate at real arguments.
    pub fn eval_real(&self, vals: &[f64]) -> f64 {
        self.terms.iter().map(|(c, f)| f.iter().fold(*c, |a, &(i, e)| a * vals[i].powi(e as i32))).sum()
    }
}

/// Fourth-order derivative of grid samples with spacing `h` at index `k`.
pub fn fd5<T, F>(samples: &[T], k: usize, h: f64, combine: F) -> T
where
    F: Fn(&[(usize, f64)]) -> T,
{
    let n = samples.len() - 1;
    assert!(n >= 4, "need at least five samples");
    let w: Vec<(usize, f64)> = if k >= 2 && k + 2 <= n {
        vec![(k - 2, 1.0), (k - 1, -8.0), (k + 1, 8.0), (k + 2, -1.0)]
    } else if k == 0 {
        vec![(0, -25.0), (1, 48.0), (2, -36.0), (3, 16.0), (4, -3.0)]
    } else if k == 1 {
        vec![(0, -3.0), (1, -10.0), (2, 18.0), (3, -6.0), (4, 1.0)]
    } else if k == n {
        vec![(n, 25.0), (n - 1, -48.0), (n - 2, 36.0), (n - 3, -16.0), (n - 4, 3.0)]
    } else {
        vec![(n, 3.0), (n - 1, 10.0), (n - 2, -18.0), (n - 3, 6.0), (n - 4, -1.0)]
    };
    let scaled: Vec<(usize, f64)> = w.into_iter().map(|(i, c)| (i, c / (12.0 * h))).collect();
    combine(&scaled)
}

/// Indices and weights of the cubic Lagrange value at `t_k + h/2`.
pub fn midpoint_weights(k: usize, n: usize) -> [(usize, f64); 4] {
    assert!(n >= 3, "need at least four samples");
    if k == 0 {
        [(0, 0.3125), (1, 0.9375), (2, -0.3125), (3, 0.0625)]
    } else if k + 2 > n {
        [(n, 0.3125), (n - 1, 0.9375), (n - 2, -0.3125), (n - 3, 0.0625)]
    } else {
        [(k - 1, -0.0625), (k, 0.5625), (k + 1, 0.5625), (k + 2, -0.0625)]
    }
}

/// Lagrange interpolation weights at `t` for a uniform grid on `[0, 1]` with
/// `n` intervals, using `order + 1` nodes around `t`.
pub fn interpolation_weights(t: f64, n: usize, order: usize) -> Vec<(usize, f64)> {
    let h = 1.0 / n as f64;
    let p = order.min(n);
    let centre = (t / h).floor() as i64 - (p as i64 - 1) / 2;
    let start = centre.clamp(0, (n - p) as i64) as usize;
    let nodes: Vec<usize> = (start..=start + p).collect();
    nodes
        .iter()
        .map(|&i| {
            let ti = i as f64 / n as f64;
            let w = nodes.iter().filter(|&&j| j != i).fold(1.0, |a, &j| {
                let tj = j as f64 / n as f64;
                a * (t - tj) / (ti - tj)
            });
            (i, w)
        })
        .collect()
}

/// Cumulative integral `F(t_k) = int_0^{t_k} f` of grid samples, fourth
/// order: cubic interpolation on each interval.
pub fn cumulative_integral<T, F>(len: usize, h: f64, mut combine: F) -> Vec<T>
where
    T: Clone,
    F: FnMut(Option<&T>, &[(usize, f64)]) -> T,
{
    let n = len - 1;
    assert!(n >= 3, "need at least four samples");
    let mut out: Vec<T> = Vec::with_capacity(len);
    out.push(combine(None, &[]));
    for k in 0..n {
        let w: Vec<(usize, f64)> = if k == 0 {
            vec![(0, 9.0), (1, 19.0), (2, -5.0), (3, 1.0)]
        } else if k + 1 == n {
            vec![(n, 9.0), (n - 1, 19.0), (n - 2, -5.0), (n - 3, 1.0)]
        } else {
            vec![(k - 1, -1.0), (k, 13.0), (k + 1, 13.0), (k + 2, -1.0)]
        };
        let scaled: Vec<(usize, f64)> = w.into_iter().map(|(i, c)| (i, c * h / 24.0)).collect();
        let next = combine(out.last(), &scaled);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graded_algebra::{Chart, Generator};

    #[test]
    fn generators_anticommute_and_square_to_zero() {
        let a = GrassmannValue::generator(3, 0);
        let b = GrassmannValue::generator(3, 2);
        assert_eq!(a.mul(&b), b.mul(&a).neg());
        assert!(a.mul(&a).is_zero());
        assert_eq!(a.mul(&b).coeff(0b101), 1.0);
        assert_eq!(b.mul(&a).coeff(0b101), -1.0);
    }

    #[test]
    fn product_is_associative() {
        let m = 4;
        let x = GrassmannValue::from_json(m, &serde_json::json!({"": 1.5, "1": 2.0, "23": -1.0, "4": 0.5})).unwrap();
        let y = GrassmannValue::from_json(m, &serde_json::json!({"": -0.5, "2": 1.0, "13": 3.0})).unwrap();
        let z = GrassmannValue::from_json(m, &serde_json::json!({"3": 1.0, "124": 2.0, "": 0.25})).unwrap();
        let l = x.mul(&y).mul(&z);
        let r = x.mul(&y.mul(&z));
        assert!(l.sub(&r).norm() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let g = GrassmannValue::from_json(4, &serde_json::json!({"13": 2.0, "": 1.0})).unwrap();
        assert_eq!(g.coeff(0b101), 2.0);
        assert_eq!(GrassmannValue::from_json(4, &g.to_json()).unwrap(), g);
        assert!(GrassmannValue::from_json(2, &serde_json::json!({"3": 1.0})).is_err());
    }

    #[test]
    fn split_first_extracts_left_coefficient() {
        // eta0 * (eta1) in R^{0|2}: lift eta_0 of R^{0|1} by one
        let e0 = GrassmannValue::generator(2, 0);
        let inner = GrassmannValue::generator(1, 0).lift(2, 1);
        let v = GrassmannValue::scalar(2, 3.0).add(&e0.mul(&inner));
        let (a, b) = v.split_first();
        assert_eq!(a.body(), 3.0);
        assert_eq!(b.coeff(1), 1.0);
    }

    #[test]
    fn compiled_poly_respects_signs() {
        let c = Chart::new("t", vec![Generator::new("a", 1), Generator::new("b", 1), Generator::new("x", 0)]).unwrap();
        let p = GradedPoly::parse(&c, "2*x^2*a*b - b").unwrap();
        let cp = CompiledPoly::new(&p);
        let m = 2;
        let mut vals = vec![GrassmannValue::zero(m); 3];
        vals[c.index("a").unwrap()] = GrassmannValue::generator(m, 1);
        vals[c.index("b").unwrap()] = GrassmannValue::generator(m, 0);
        vals[c.index("x").unwrap()] = GrassmannValue::scalar(m, 3.0);
        let v = cp.eval(&vals);
        // a b = e2 e1 = -e1 e2
        assert_eq!(v.coeff(0b11), -18.0);
        assert_eq!(v.coeff(0b01), -1.0);
    }

    #[test]
    fn cumulative_integral_is_fourth_order() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let f: Vec<f64> = (0..=n).map(|k| (3.0 * k as f64 * h).cos()).collect();
            let out = cumulative_integral(n + 1, h, |prev: Option<&f64>, w| {
                prev.copied().unwrap_or(0.0) + w.iter().map(|&(i, c)| c * f[i]).sum::<f64>()
            });
            (out[n] - (3.0f64).sin() / 3.0).abs()
        };
        let ratio = err(40) / err(80);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn interpolation_reproduces_quintics() {
        let n = 10;
        let f = |t: f64| 1.0 + t - 2.0 * t.powi(3) + t.powi(5);
        for &t in &[0.0, 0.013, 0.5, 0.77, 0.999, 1.0] {
            let v: f64 = interpolation_weights(t, n, 5).iter().map(|&(i, w)| w * f(i as f64 / n as f64)).sum();
            assert!((v - f(t)).abs() < 1e-12);
        }
    }
}
