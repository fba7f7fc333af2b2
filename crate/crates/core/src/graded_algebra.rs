//! Graded-commutative polynomials over exact rationals.
//!
//! Generators carry non-negative integer degrees and parity equals degree
//! mod 2. Monomials are stored in the canonical `(degree, name)` order of the
//! chart; every product re-sorts its factors and picks up the Koszul sign.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Scalar = BigRational;

pub fn rat(n: i64, d: i64) -> Scalar {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Scalar {
    BigRational::from_integer(BigInt::from(n))
}

pub fn scalar_to_f64(s: &Scalar) -> f64 {
    s.to_f64().unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Generator {
    pub name: String,
    pub degree: u32,
}

impl Generator {
    pub fn new(name: impl Into<String>, degree: u32) -> Self {
        Generator { name: name.into(), degree }
    }

    pub fn parity(&self) -> u32 {
        self.degree % 2
    }

    pub fn is_odd(&self) -> bool {
        self.degree % 2 == 1
    }
}

/// An ordered set of generators. Names are unique.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chart {
    name: String,
    gens: Vec<Generator>,
}

pub type ChartRef = Arc<Chart>;

impl Chart {
    pub fn new(name: impl Into<String>, mut gens: Vec<Generator>) -> Result<ChartRef> {
        gens.sort_by(|a, b| (a.degree, &a.name).cmp(&(b.degree, &b.name)));
        for w in gens.windows(2) {
            if w[0].name == w[1].name {
                return Err(Error::DuplicateGenerator(w[0].name.clone()));
            }
        }
        let mut names: Vec<&str> = gens.iter().map(|g| g.name.as_str()).collect();
        names.sort();
        for w in names.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateGenerator(w[0].to_string()));
            }
        }
        Ok(Arc::new(Chart { name: name.into(), gens }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn generators(&self) -> &[Generator] {
        &self.gens
    }

    pub fn len(&self) -> usize {
        self.gens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gens.is_empty()
    }

    pub fn generator(&self, i: usize) -> &Generator {
        &self.gens[i]
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.gens.iter().position(|g| g.name == name)
    }

    pub fn try_index(&self, name: &str) -> Result<usize> {
        self.index(name).ok_or_else(|| Error::UnknownGenerator(name.to_string()))
    }

    pub fn degree_of(&self, i: usize) -> u32 {
        self.gens[i].degree
    }

    /// Union with extra generators, under a new name.
    pub fn extend(&self, name: impl Into<String>, extra: Vec<Generator>) -> Result<ChartRef> {
        let mut gens = self.gens.clone();
        gens.extend(extra);
        Chart::new(name, gens)
    }

    pub fn same(a: &ChartRef, b: &ChartRef) -> bool {
        Arc::ptr_eq(a, b) || a.gens == b.gens
    }

    pub fn var(self: &Arc<Self>, name: &str) -> Result<GradedPoly> {
        let i = self.try_index(name)?;
        Ok(GradedPoly::generator(self, i))
    }
}

/// Sorted list of `(generator index, exponent)`; odd generators have exponent 1.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial(pub Vec<(u32, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self, chart: &Chart) -> u32 {
        self.0.iter().map(|&(i, e)| chart.degree_of(i as usize) * e).sum()
    }

    pub fn exponent(&self, i: u32) -> u32 {
        self.0.iter().find(|p| p.0 == i).map(|p| p.1).unwrap_or(0)
    }

    /// Product with Koszul sign, or `None` if an odd generator repeats.
    pub fn mul(&self, other: &Monomial, chart: &Chart) -> Option<(Monomial, bool)> {
        let mut negative = false;
        // parity of odd generators of `self` with index greater than j
        for &(j, _) in other.0.iter() {
            if !chart.gens[j as usize].is_odd() {
                continue;
            }
            let crossings = self
                .0
                .iter()
                .filter(|&&(i, _)| i > j && chart.gens[i as usize].is_odd())
                .count();
            if crossings % 2 == 1 {
                negative = !negative;
            }
        }
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut a, mut b) = (0, 0);
        while a < self.0.len() || b < other.0.len() {
            if b == other.0.len() || (a < self.0.len() && self.0[a].0 < other.0[b].0) {
                out.push(self.0[a]);
                a += 1;
            } else if a == self.0.len() || other.0[b].0 < self.0[a].0 {
                out.push(other.0[b]);
                b += 1;
            } else {
                let i = self.0[a].0;
                if chart.gens[i as usize].is_odd() {
                    return None;
                }
                out.push((i, self.0[a].1 + other.0[b].1));
                a += 1;
                b += 1;
            }
        }
        Some((Monomial(out), negative))
    }

    fn split_at_generator(&self, i: u32) -> (Monomial, u32, Monomial) {
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut e = 0;
        for &(j, k) in &self.0 {
            if j < i {
                left.push((j, k));
            } else if j > i {
                right.push((j, k));
            } else {
                e = k;
            }
        }
        (Monomial(left), e, Monomial(right))
    }
}

/// Finite sum of monomials with nonzero rational coefficients.
#[derive(Clone, Debug)]
pub struct GradedPoly {
    chart: ChartRef,
    terms: BTreeMap<Monomial, Scalar>,
}

impl PartialEq for GradedPoly {
    fn eq(&self, other: &Self) -> bool {
        Chart::same(&self.chart, &other.chart) && self.terms == other.terms
    }
}

impl GradedPoly {
    pub fn zero(chart: &ChartRef) -> Self {
        GradedPoly { chart: chart.clone(), terms: BTreeMap::new() }
    }

    pub fn constant(chart: &ChartRef, c: Scalar) -> Self {
        let mut p = GradedPoly::zero(chart);
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn one(chart: &ChartRef) -> Self {
        GradedPoly::constant(chart, Scalar::one())
    }

    pub fn generator(chart: &ChartRef, i: usize) -> Self {
        GradedPoly::monomial(chart, Monomial(vec![(i as u32, 1)]), Scalar::one())
    }

    pub fn monomial(chart: &ChartRef, m: Monomial, c: Scalar) -> Self {
        let mut p = GradedPoly::zero(chart);
        p.add_term(m, c);
        p
    }

    pub fn chart(&self) -> &ChartRef {
        &self.chart
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Scalar)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, m: &Monomial) -> Scalar {
        self.terms.get(m).cloned().unwrap_or_else(Scalar::zero)
    }

    pub fn constant_term(&self) -> Scalar {
        self.coefficient(&Monomial::one())
    }

    pub fn add_term(&mut self, m: Monomial, c: Scalar) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    /// Rebuild from arbitrary (possibly unsorted, repeated) factor lists.
    pub fn from_factors(chart: &ChartRef, c: Scalar, factors: &[usize]) -> Self {
        let mut p = GradedPoly::constant(chart, c);
        for &i in factors {
            p = p.mul(&GradedPoly::generator(chart, i));
        }
        p
    }

    /// Degrees of the monomials present.
    pub fn degrees(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.terms.keys().map(|m| m.degree(&self.chart)).collect();
        d.sort();
        d.dedup();
        d
    }

    pub fn is_homogeneous(&self) -> bool {
        self.degrees().len() <= 1
    }

    /// Degree of a homogeneous nonzero polynomial.
    pub fn degree(&self) -> Option<u32> {
        let d = self.degrees();
        if d.len() == 1 {
            Some(d[0])
        } else {
            None
        }
    }

    pub fn max_degree(&self) -> Option<u32> {
        self.degrees().last().copied()
    }

    pub fn grade_component(&self, d: i64) -> GradedPoly {
        let mut out = GradedPoly::zero(&self.chart);
        for (m, c) in &self.terms {
            if m.degree(&self.chart) as i64 == d {
                out.terms.insert(m.clone(), c.clone());
            }
        }
        out
    }

    pub fn add(&self, other: &GradedPoly) -> GradedPoly {
        assert_same_chart(&self.chart, &other.chart);
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &GradedPoly) -> GradedPoly {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> GradedPoly {
        let terms = self.terms.iter().map(|(m, c)| (m.clone(), -c.clone())).collect();
        GradedPoly { chart: self.chart.clone(), terms }
    }

    pub fn scale(&self, s: &Scalar) -> GradedPoly {
        if s.is_zero() {
            return GradedPoly::zero(&self.chart);
        }
        let terms = self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect();
        GradedPoly { chart: self.chart.clone(), terms }
    }

    pub fn scale_int(&self, s: i64) -> GradedPoly {
        self.scale(&int(s))
    }

    /// Graded-commutative product; panics on chart mismatch (see [`multiply`]).
    pub fn mul(&self, other: &GradedPoly) -> GradedPoly {
        assert_same_chart(&self.chart, &other.chart);
        let mut out = GradedPoly::zero(&self.chart);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                if let Some((m, neg)) = ma.mul(mb, &self.chart) {
                    let c = ca * cb;
                    out.add_term(m, if neg { -c } else { c });
                }
            }
        }
        out
    }

    pub fn pow(&self, e: u32) -> GradedPoly {
        let mut out = GradedPoly::one(&self.chart);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Re-express over another chart that contains every generator used here.
    pub fn embed(&self, target: &ChartRef) -> Result<GradedPoly> {
        if Chart::same(&self.chart, target) {
            return Ok(GradedPoly { chart: target.clone(), terms: self.terms.clone() });
        }
        let mut map = vec![None; self.chart.len()];
        for (m, _) in &self.terms {
            for &(i, _) in &m.0 {
                let g = &self.chart.gens[i as usize];
                if map[i as usize].is_none() {
                    let j = target.try_index(&g.name)?;
                    let tg = target.generator(j);
                    if tg.degree != g.degree {
                        return Err(Error::DegreeMismatch {
                            name: g.name.clone(),
                            expected: tg.degree as i64,
                            found: g.degree as i64,
                        });
                    }
                    map[i as usize] = Some(j);
                }
            }
        }
        let mut out = GradedPoly::zero(target);
        for (m, c) in &self.terms {
            let mut p = GradedPoly::constant(target, c.clone());
            for &(i, e) in &m.0 {
                let g = GradedPoly::generator(target, map[i as usize].unwrap());
                p = p.mul(&g.pow(e));
            }
            out = out.add(&p);
        }
        Ok(out)
    }

    /// Generators (by index) that occur in some monomial.
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> =
            self.terms.keys().flat_map(|m| m.0.iter().map(|p| p.0 as usize)).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Keep only monomials for which `keep` holds.
    pub fn filter_terms(&self, keep: impl Fn(&Monomial) -> bool) -> GradedPoly {
        let terms = self
            .terms
            .iter()
            .filter(|(m, _)| keep(m))
            .map(|(m, c)| (m.clone(), c.clone()))
            .collect();
        GradedPoly { chart: self.chart.clone(), terms }
    }

    /// Renormalize by multiplying every monomial out from scratch.
    pub fn renormalize(&self) -> GradedPoly {
        let mut out = GradedPoly::zero(&self.chart);
        for (m, c) in &self.terms {
            let factors: Vec<usize> = m
                .0
                .iter()
                .flat_map(|&(i, e)| std::iter::repeat_n(i as usize, e as usize))
                .collect();
            out = out.add(&GradedPoly::from_factors(&self.chart, c.clone(), &factors));
        }
        out
    }

    pub fn parse(chart: &ChartRef, src: &str) -> Result<GradedPoly> {
        Parser { chart, src: src.as_bytes(), pos: 0 }.parse_all()
    }
}

fn assert_same_chart(a: &ChartRef, b: &ChartRef) {
    if !Chart::same(a, b) {
        panic!("chart mismatch: `{}` vs `{}`", a.name(), b.name());
    }
}

fn check_chart(a: &ChartRef, b: &ChartRef) -> Result<()> {
    if Chart::same(a, b) {
        Ok(())
    } else {
        Err(Error::ChartMismatch(a.name().to_string(), b.name().to_string()))
    }
}

pub fn multiply(p: &GradedPoly, q: &GradedPoly) -> Result<GradedPoly> {
    check_chart(&p.chart, &q.chart)?;
    Ok(p.mul(q))
}

pub fn grade_component(p: &GradedPoly, d: i64) -> GradedPoly {
    p.grade_component(d)
}

impl fmt::Display for GradedPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, c)) in self.terms.iter().enumerate() {
            let neg = c.is_negative();
            let a = c.abs();
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { '-' } else { '+' })?;
            }
            let mut parts: Vec<String> = Vec::new();
            if !a.is_one() || m.is_one() {
                parts.push(a.to_string());
            }
            for &(i, e) in &m.0 {
                let n = &self.chart.gens[i as usize].name;
                parts.push(if e == 1 { n.clone() } else { format!("{n}^{e}") });
            }
            write!(f, "{}", parts.join("*"))?;
        }
        Ok(())
    }
}

/// A derivation of fixed degree shift, given by its values on generators.
///
/// Derivations act from the left:
/// `d(pq) = d(p) q + (-1)^(shift |p|) p d(q)`.
#[derive(Clone, Debug)]
pub struct Derivation {
    chart: ChartRef,
    shift: i32,
    images: Vec<GradedPoly>,
}

impl PartialEq for Derivation {
    fn eq(&self, other: &Self) -> bool {
        Chart::same(&self.chart, &other.chart)
            && self.shift == other.shift
            && self.images.iter().zip(&other.images).all(|(a, b)| a.terms == b.terms)
    }
}

impl Derivation {
    pub fn new(chart: &ChartRef, shift: i32) -> Self {
        Derivation {
            chart: chart.clone(),
            shift,
            images: (0..chart.len()).map(|_| GradedPoly::zero(chart)).collect(),
        }
    }

    /// Left partial derivative with respect to a generator.
    pub fn partial(chart: &ChartRef, i: usize) -> Self {
        let mut d = Derivation::new(chart, -(chart.degree_of(i) as i32));
        d.images[i] = GradedPoly::one(chart);
        d
    }

    pub fn partial_by_name(chart: &ChartRef, name: &str) -> Result<Self> {
        Ok(Derivation::partial(chart, chart.try_index(name)?))
    }

    pub fn chart(&self) -> &ChartRef {
        &self.chart
    }

    pub fn shift(&self) -> i32 {
        self.shift
    }

    pub fn image(&self, i: usize) -> &GradedPoly {
        &self.images[i]
    }

    pub fn image_by_name(&self, name: &str) -> Result<&GradedPoly> {
        Ok(&self.images[self.chart.try_index(name)?])
    }

    pub fn set(&mut self, name: &str, image: GradedPoly) -> Result<()> {
        let i = self.chart.try_index(name)?;
        self.set_index(i, image)
    }

    pub fn set_index(&mut self, i: usize, image: GradedPoly) -> Result<()> {
        let image = image.embed(&self.chart)?;
        let expected = self.chart.degree_of(i) as i64 + self.shift as i64;
        for d in image.degrees() {
            if d as i64 != expected {
                return Err(Error::DegreeMismatch {
                    name: self.chart.generator(i).name.clone(),
                    expected,
                    found: d as i64,
                });
            }
        }
        self.images[i] = image;
        Ok(())
    }

    pub fn apply(&self, p: &GradedPoly) -> Result<GradedPoly> {
        let p = p.embed(&self.chart)?;
        Ok(self.apply_same_chart(&p))
    }

    fn apply_same_chart(&self, p: &GradedPoly) -> GradedPoly {
        let chart = &self.chart;
        let mut out = GradedPoly::zero(chart);
        for (m, c) in p.terms() {
            for &(i, e) in &m.0 {
                let img = &self.images[i as usize];
                if img.is_zero() {
                    continue;
                }
                let (left, _, right) = m.split_at_generator(i);
                let mut rest = right;
                if e > 1 {
                    rest = Monomial(vec![(i, e - 1)]).mul(&rest, chart).unwrap().0;
                }
                let sign_neg = (self.shift.rem_euclid(2) as u32 * left.degree(chart)) % 2 == 1;
                let coeff = if e > 1 { c * int(e as i64) } else { c.clone() };
                let term = GradedPoly::monomial(chart, left, coeff)
                    .mul(img)
                    .mul(&GradedPoly::monomial(chart, rest, Scalar::one()));
                out = if sign_neg { out.sub(&term) } else { out.add(&term) };
            }
        }
        out
    }

    pub fn add(&self, other: &Derivation) -> Result<Derivation> {
        check_chart(&self.chart, &other.chart)?;
        if self.shift != other.shift {
            return Err(Error::Invalid(format!(
                "adding derivations of shift {} and {}",
                self.shift, other.shift
            )));
        }
        let images = self.images.iter().zip(&other.images).map(|(a, b)| a.add(b)).collect();
        Ok(Derivation { chart: self.chart.clone(), shift: self.shift, images })
    }

    pub fn is_zero(&self) -> bool {
        self.images.iter().all(|p| p.is_zero())
    }
}

/// Left partial derivative `d>/dy p`.
pub fn left_partial(p: &GradedPoly, i: usize) -> GradedPoly {
    Derivation::partial(p.chart(), i).apply_same_chart(p)
}

/// Right partial derivative, `p d</dy = (-1)^{|y|(|p|-|y|)} d>/dy p` on each
/// homogeneous component.
pub fn right_partial(p: &GradedPoly, i: usize) -> GradedPoly {
    let y = p.chart().degree_of(i) as i64;
    let mut out = GradedPoly::zero(p.chart());
    for d in p.degrees() {
        let part = left_partial(&p.grade_component(d as i64), i);
        out = if (y * (d as i64 - y)).rem_euclid(2) == 1 { out.sub(&part) } else { out.add(&part) };
    }
    out
}

pub fn apply_derivation(d: &Derivation, p: &GradedPoly) -> Result<GradedPoly> {
    d.apply(p)
}

/// Algebra morphism sending each mapped generator to its image; unmapped
/// generators map to themselves in the target chart.
pub fn substitute(
    map: &BTreeMap<String, GradedPoly>,
    p: &GradedPoly,
    target: &ChartRef,
) -> Result<GradedPoly> {
    let src = p.chart();
    let mut images = Vec::with_capacity(src.len());
    for g in src.generators() {
        let img = match map.get(&g.name) {
            Some(q) => q.embed(target)?,
            None => match target.index(&g.name) {
                Some(j) => GradedPoly::generator(target, j),
                None => {
                    if p.support().contains(&src.try_index(&g.name)?) {
                        return Err(Error::UnknownGenerator(g.name.clone()));
                    }
                    GradedPoly::zero(target)
                }
            },
        };
        for d in img.degrees() {
            if d != g.degree {
                return Err(Error::DegreeMismatch {
                    name: g.name.clone(),
                    expected: g.degree as i64,
                    found: d as i64,
                });
            }
        }
        images.push(img);
    }
    let mut out = GradedPoly::zero(target);
    for (m, c) in p.terms() {
        let mut t = GradedPoly::constant(target, c.clone());
        for &(i, e) in &m.0 {
            t = t.mul(&images[i as usize].pow(e));
        }
        out = out.add(&t);
    }
    Ok(out)
}

struct Parser<'a> {
    chart: &'a ChartRef,
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { pos: self.pos, msg: msg.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn parse_all(mut self) -> Result<GradedPoly> {
        let p = self.expr()?;
        if self.peek().is_some() {
            return self.err("unexpected trailing input");
        }
        Ok(p)
    }

    fn expr(&mut self) -> Result<GradedPoly> {
        let mut neg = false;
        if self.peek() == Some(b'-') {
            self.pos += 1;
            neg = true;
        } else if self.peek() == Some(b'+') {
            self.pos += 1;
        }
        let mut acc = self.term()?;
        if neg {
            acc = acc.neg();
        }
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = acc.add(&self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = acc.sub(&self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<GradedPoly> {
        let mut acc = self.factor()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            acc = acc.mul(&self.factor()?);
        }
        Ok(acc)
    }

    fn integer(&mut self) -> Result<BigInt> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected integer");
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        Ok(s.parse::<BigInt>().unwrap())
    }

    fn factor(&mut self) -> Result<GradedPoly> {
        let base = match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                e
            }
            Some(b'-') => {
                self.pos += 1;
                return Ok(self.factor()?.neg());
            }
            Some(c) if c.is_ascii_digit() => {
                let n = self.integer()?;
                let mut d = BigInt::one();
                if self.peek() == Some(b'/') {
                    self.pos += 1;
                    d = self.integer()?;
                    if d.is_zero() {
                        return self.err("division by zero");
                    }
                }
                GradedPoly::constant(self.chart, BigRational::new(n, d))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                match self.chart.index(name) {
                    Some(i) => GradedPoly::generator(self.chart, i),
                    None => {
                        self.pos = start;
                        return Err(Error::UnknownGenerator(name.to_string()));
                    }
                }
            }
            _ => return self.err("expected number, generator or `(`"),
        };
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let e = self.integer()?;
            let e = e.to_u32().filter(|&e| e <= 64);
            match e {
                Some(e) => Ok(base.pow(e)),
                None => self.err("exponent out of range"),
            }
        } else {
            Ok(base)
        }
    }
}

impl std::ops::Add for &GradedPoly {
    type Output = GradedPoly;
    fn add(self, rhs: &GradedPoly) -> GradedPoly {
        GradedPoly::add(self, rhs)
    }
}

impl std::ops::Sub for &GradedPoly {
    type Output = GradedPoly;
    fn sub(self, rhs: &GradedPoly) -> GradedPoly {
        GradedPoly::sub(self, rhs)
    }
}

impl std::ops::Mul for &GradedPoly {
    type Output = GradedPoly;
    fn mul(self, rhs: &GradedPoly) -> GradedPoly {
        GradedPoly::mul(self, rhs)
    }
}

impl std::ops::Neg for &GradedPoly {
    type Output = GradedPoly;
    fn neg(self) -> GradedPoly {
        GradedPoly::neg(self)
    }
}
