//! Bar complexes over a polynomial chart: two-sided words `f0[f1|..|fq]m`,
//! fixed-end words `[f1|..|fq]` and cyclic words `f0[f1|..|fq]`.
//!
//! Words are stored expanded into monomials in every slot, so an element is
//! a finite map from monomial words to exact rationals. The module slot of a
//! two-sided word lives in the same algebra (`M = A`).

use std::collections::{BTreeMap, HashMap};

use num::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Residual, Result};
use crate::graded_algebra::{int, scalar_to_f64, Chart, ChartRef, Derivation, Generator, GradedPoly, Monomial, Scalar};
use crate::graded_algebra::left_partial;
use crate::grassmann::{
    cumulative_integral, gm_axpy, gm_identity, gm_mul, gm_norm, gm_zero, CompiledPoly, GrassmannMatrix, GrassmannValue,
};
use crate::nq_manifold::QStructure;
use crate::representation::{mat_is_zero, RepMatrix};
use crate::supercurve::SuperCurve;
use crate::wilson::CompiledMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    TwoSided,
    FixedEnd,
    Cyclic,
}

impl Variant {
    /// Number of endpoint slots on the left and right.
    pub fn ends(self) -> (usize, usize) {
        match self {
            Variant::TwoSided => (1, 1),
            Variant::FixedEnd => (0, 0),
            Variant::Cyclic => (1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::TwoSided => "two-sided",
            Variant::FixedEnd => "fixed-end",
            Variant::Cyclic => "cyclic",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "two-sided" => Ok(Variant::TwoSided),
            "fixed-end" => Ok(Variant::FixedEnd),
            "cyclic" => Ok(Variant::Cyclic),
            _ => Err(Error::Invalid(format!("unknown bar variant `{s}`"))),
        }
    }
}

pub type Word = Vec<Monomial>;

#[derive(Clone, Debug)]
pub struct BarElement {
    chart: ChartRef,
    variant: Variant,
    terms: BTreeMap<Word, Scalar>,
}

impl PartialEq for BarElement {
    fn eq(&self, other: &Self) -> bool {
        Chart::same(&self.chart, &other.chart) && self.variant == other.variant && self.terms == other.terms
    }
}

fn add_to(terms: &mut BTreeMap<Word, Scalar>, w: Word, c: Scalar) {
    if c.is_zero() {
        return;
    }
    match terms.entry(w) {
        std::collections::btree_map::Entry::Vacant(e) => {
            e.insert(c);
        }
        std::collections::btree_map::Entry::Occupied(mut e) => {
            *e.get_mut() += c;
            if e.get().is_zero() {
                e.remove();
            }
        }
    }
}

fn sign(odd: bool) -> Scalar {
    if odd {
        -Scalar::one()
    } else {
        Scalar::one()
    }
}

impl BarElement {
    pub fn zero(chart: &ChartRef, variant: Variant) -> Self {
        BarElement { chart: chart.clone(), variant, terms: BTreeMap::new() }
    }

    /// The word with the given slots (endpoints included), expanded
    /// multilinearly.
    pub fn word(chart: &ChartRef, variant: Variant, slots: &[GradedPoly]) -> Result<Self> {
        let (l, r) = variant.ends();
        if slots.len() < l + r {
            return Err(Error::Invalid(format!("a {} word needs at least {} slots", variant.name(), l + r)));
        }
        let slots: Vec<GradedPoly> = slots.iter().map(|p| p.embed(chart)).collect::<Result<_>>()?;
        let mut e = BarElement::zero(chart, variant);
        e.add_expanded(&slots, Scalar::one());
        Ok(e)
    }

    /// `sum c * (slot expansion)`, one monomial per slot.
    fn add_expanded(&mut self, slots: &[GradedPoly], c: Scalar) {
        let mut partial: Vec<(Word, Scalar)> = vec![(Vec::with_capacity(slots.len()), c)];
        for p in slots {
            let mut next = Vec::with_capacity(partial.len() * p.num_terms());
            for (w, a) in &partial {
                for (m, b) in p.terms() {
                    let mut w2 = w.clone();
                    w2.push(m.clone());
                    next.push((w2, a * b));
                }
            }
            partial = next;
            if partial.is_empty() {
                return;
            }
        }
        for (w, a) in partial {
            add_to(&mut self.terms, w, a);
        }
    }

    pub fn chart(&self) -> &ChartRef {
        &self.chart
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Scalar)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of bars `q` of a word.
    pub fn bar_length(&self, w: &Word) -> usize {
        let (l, r) = self.variant.ends();
        w.len() - l - r
    }

    pub fn max_bar_length(&self) -> Option<usize> {
        self.terms.keys().map(|w| self.bar_length(w)).max()
    }

    fn check(&self, other: &BarElement) -> Result<()> {
        if !Chart::same(&self.chart, &other.chart) {
            return Err(Error::ChartMismatch(self.chart.name().into(), other.chart.name().into()));
        }
        if self.variant != other.variant {
            return Err(Error::VariantMismatch(format!("{} vs {}", self.variant.name(), other.variant.name())));
        }
        Ok(())
    }

    pub fn add(&self, other: &BarElement) -> Result<BarElement> {
        self.check(other)?;
        let mut out = self.clone();
        for (w, c) in &other.terms {
            add_to(&mut out.terms, w.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &BarElement) -> Result<BarElement> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> BarElement {
        self.scale(&-Scalar::one())
    }

    pub fn scale(&self, s: &Scalar) -> BarElement {
        let mut out = BarElement::zero(&self.chart, self.variant);
        for (w, c) in &self.terms {
            add_to(&mut out.terms, w.clone(), c * s);
        }
        out
    }

    /// Part with exactly `q` bars.
    pub fn bar_component(&self, q: usize) -> BarElement {
        self.filter(|e, w| e.bar_length(w) == q)
    }

    /// The single term of `self` on the word `w`.
    pub fn word_part(&self, w: &Word) -> BarElement {
        self.filter(|_, x| x == w)
    }

    fn filter(&self, keep: impl Fn(&BarElement, &Word) -> bool) -> BarElement {
        let mut out = BarElement::zero(&self.chart, self.variant);
        out.terms = self.terms.iter().filter(|(w, _)| keep(self, w)).map(|(w, c)| (w.clone(), c.clone())).collect();
        out
    }

    fn interior_range(&self, w: &Word) -> std::ops::Range<usize> {
        let (l, r) = self.variant.ends();
        l..w.len() - r
    }

    /// True when every slot between the bars has positive degree.
    pub fn is_normalized(&self) -> bool {
        self.terms.keys().all(|w| self.word_is_normalized(w))
    }

    fn word_is_normalized(&self, w: &Word) -> bool {
        w[self.interior_range(w)].iter().all(|m| m.degree(&self.chart) > 0)
    }

    /// Representative in the normalized complex: words with a degree-0 slot
    /// between the bars are dropped.
    pub fn normalized(&self) -> BarElement {
        self.filter(|e, w| e.word_is_normalized(w))
    }

    /// `deg f0 + sum (deg f_i - 1) + deg m` of a word.
    pub fn word_grading(&self, w: &Word) -> i64 {
        let inner = self.interior_range(w);
        w.iter()
            .enumerate()
            .map(|(i, m)| m.degree(&self.chart) as i64 - if inner.contains(&i) { 1 } else { 0 })
            .sum()
    }

    /// The second grading, if the element is homogeneous in it.
    pub fn grading(&self) -> Option<i64> {
        let mut it = self.terms.keys().map(|w| self.word_grading(w));
        let first = it.next()?;
        it.all(|g| g == first).then_some(first)
    }
}

fn parity(chart: &Chart, m: &Monomial) -> bool {
    m.degree(chart) % 2 == 1
}

/// Sign rule for the wrap-around term of the cyclic `b1`, as a function of
/// the prefix parity before `f_q`, the parity of `f_q` and of `f0`.
type WrapRule<'a> = &'a dyn Fn(bool, bool, bool) -> bool;

/// `f_q` is carried past `f0[f1|..|f_{q-1}]`, each bar slot counting with
/// its shifted degree: `(-1)^{(f_q + 1) P}` on top of the two-sided sign.
fn koszul_wrap(prefix: bool, fq: bool, _f0: bool) -> bool {
    prefix & !fq
}

impl BarElement {
    /// Writes `c * w[..a] p w[b..]` into `out`, expanding the polynomial `p`.
    fn emit(out: &mut BTreeMap<Word, Scalar>, left: &[Monomial], p: &GradedPoly, right: &[Monomial], c: &Scalar) {
        for (m, k) in p.terms() {
            let mut w = Vec::with_capacity(left.len() + 1 + right.len());
            w.extend_from_slice(left);
            w.push(m.clone());
            w.extend_from_slice(right);
            add_to(out, w, c * k);
        }
    }

    fn poly(&self, m: &Monomial) -> GradedPoly {
        GradedPoly::monomial(&self.chart, m.clone(), Scalar::one())
    }

    fn product(&self, a: &Monomial, b: &Monomial) -> GradedPoly {
        self.poly(a).mul(&self.poly(b))
    }

    /// Parities `P_0..P_q` with `P_0 = |f0|` (zero without a left end) and
    /// `P_i = P_{i-1} + |f_i| + 1`.
    fn prefix_parities(&self, w: &Word) -> Vec<bool> {
        let (l, _) = self.variant.ends();
        let mut p = vec![l == 1 && parity(&self.chart, &w[0])];
        for m in &w[self.interior_range(w)] {
            let last = *p.last().expect("nonempty");
            p.push(!(last ^ parity(&self.chart, m)));
        }
        p
    }

    /// The collapsing differential.
    pub fn b1(&self) -> BarElement {
        self.b1_with(&koszul_wrap)
    }

    fn b1_with(&self, wrap: WrapRule<'_>) -> BarElement {
        let (l, _) = self.variant.ends();
        let mut out = BTreeMap::new();
        for (w, c) in &self.terms {
            let q = self.bar_length(w);
            if q == 0 {
                continue;
            }
            let p = self.prefix_parities(w);
            if l == 1 {
                // (-1)^{f0} f0 f1 [f2|..]
                let prod = self.product(&w[0], &w[1]);
                Self::emit(&mut out, &[], &prod, &w[2..], &(c * sign(p[0])));
            }
            for i in 1..q {
                // slots f_i, f_{i+1} sit at l + i - 1, l + i
                let a = l + i - 1;
                let prod = self.product(&w[a], &w[a + 1]);
                Self::emit(&mut out, &w[..a], &prod, &w[a + 2..], &(c * sign(p[i])));
            }
            let fq = l + q - 1;
            match self.variant {
                Variant::TwoSided => {
                    let prod = self.product(&w[fq], &w[fq + 1]);
                    Self::emit(&mut out, &w[..fq], &prod, &[], &(c * sign(!p[q - 1])));
                }
                Variant::Cyclic => {
                    let prod = self.product(&w[fq], &w[0]);
                    let odd = wrap(p[q - 1], parity(&self.chart, &w[fq]), parity(&self.chart, &w[0]));
                    Self::emit(&mut out, &[], &prod, &w[1..fq], &(c * sign(!odd)));
                }
                Variant::FixedEnd => {}
            }
        }
        BarElement { chart: self.chart.clone(), variant: self.variant, terms: out }
    }

    /// The internal differential induced by `q` on every slot.
    pub fn b0(&self, q: &Derivation) -> Result<BarElement> {
        if !Chart::same(&self.chart, q.chart()) {
            return Err(Error::ChartMismatch(self.chart.name().into(), q.chart().name().into()));
        }
        if q.shift() != 1 {
            return Err(Error::Invalid("b0 needs a degree-1 derivation".into()));
        }
        let (l, r) = self.variant.ends();
        let mut out = BTreeMap::new();
        for (w, c) in &self.terms {
            let q_len = self.bar_length(w);
            let p = self.prefix_parities(w);
            if l == 1 {
                let img = q.apply(&self.poly(&w[0]))?;
                Self::emit(&mut out, &[], &img, &w[1..], c);
            }
            for i in 1..=q_len {
                let a = l + i - 1;
                let img = q.apply(&self.poly(&w[a]))?;
                Self::emit(&mut out, &w[..a], &img, &w[a + 1..], &(c * sign(!p[i - 1])));
            }
            if r == 1 {
                let a = w.len() - 1;
                let img = q.apply(&self.poly(&w[a]))?;
                Self::emit(&mut out, &w[..a], &img, &[], &(c * sign(p[q_len])));
            }
        }
        Ok(BarElement { chart: self.chart.clone(), variant: self.variant, terms: out })
    }

    /// `(b0 + b1) e`.
    pub fn total_differential(&self, q: &Derivation) -> Result<BarElement> {
        self.b0(q)?.add(&self.b1())
    }

    /// `s(f0[f1|..]m) = 1[f0|f1|..]m`.
    pub fn contraction_s(&self) -> Result<BarElement> {
        if self.variant != Variant::TwoSided {
            return Err(Error::VariantMismatch(format!("contraction needs a two-sided element, got {}", self.variant.name())));
        }
        let mut out = BTreeMap::new();
        for (w, c) in &self.terms {
            let mut w2 = Vec::with_capacity(w.len() + 1);
            w2.push(Monomial::one());
            w2.extend_from_slice(w);
            add_to(&mut out, w2, c.clone());
        }
        Ok(BarElement { chart: self.chart.clone(), variant: self.variant, terms: out })
    }

    /// `eta(epsilon(e))`: `f0[ ]m -> 1[ ](f0 m)`, longer words go to zero.
    pub fn eta_epsilon(&self) -> Result<BarElement> {
        if self.variant != Variant::TwoSided {
            return Err(Error::VariantMismatch(format!("augmentation needs a two-sided element, got {}", self.variant.name())));
        }
        let mut out = BTreeMap::new();
        for (w, c) in self.terms.iter().filter(|(w, _)| w.len() == 2) {
            let prod = self.product(&w[0], &w[1]);
            Self::emit(&mut out, &[Monomial::one()], &prod, &[], c);
        }
        Ok(BarElement { chart: self.chart.clone(), variant: self.variant, terms: out })
    }
}

/// A random polynomial with 1 to 3 terms, each a product of up to `max_factors`
/// generators and a small integer coefficient.
pub fn random_poly(chart: &ChartRef, max_factors: usize, rng: &mut impl Rng) -> GradedPoly {
    let mut p = GradedPoly::zero(chart);
    for _ in 0..rng.random_range(1..=3) {
        let mut t = GradedPoly::constant(chart, int(rng.random_range(1..=3) * if rng.random_bool(0.5) { 1 } else { -1 }));
        for _ in 0..rng.random_range(0..=max_factors) {
            t = t.mul(&GradedPoly::generator(chart, rng.random_range(0..chart.len())));
        }
        p = p.add(&t);
    }
    p
}

/// A random element with 1 or 2 words of at most `q_max` bars.
pub fn random_element(chart: &ChartRef, variant: Variant, q_max: usize, rng: &mut impl Rng) -> Result<BarElement> {
    let (l, r) = variant.ends();
    let mut e = BarElement::zero(chart, variant);
    for _ in 0..rng.random_range(1..=2) {
        let q = rng.random_range(0..=q_max);
        let slots: Vec<GradedPoly> = (0..l + q + r).map(|_| random_poly(chart, 2, rng)).collect();
        e = e.add(&BarElement::word(chart, variant, &slots)?)?;
    }
    Ok(e)
}

impl BarElement {
    /// `{"variant", "chart", "terms": [{"coeff", "slots": [poly, ..]}]}` with
    /// slots written as polynomial literals.
    pub fn to_json(&self) -> Value {
        let terms: Vec<Value> = self
            .terms
            .iter()
            .map(|(w, c)| {
                let slots: Vec<String> = w.iter().map(|m| self.poly(m).to_string()).collect();
                json!({ "coeff": c.to_string(), "slots": slots })
            })
            .collect();
        json!({ "variant": self.variant.name(), "chart": self.chart.name(), "terms": terms })
    }

    pub fn from_json(chart: &ChartRef, v: &Value) -> Result<BarElement> {
        let variant = Variant::parse(v["variant"].as_str().ok_or_else(|| Error::Invalid("missing `variant`".into()))?)?;
        let terms = v["terms"].as_array().ok_or_else(|| Error::Invalid("missing `terms`".into()))?;
        let mut e = BarElement::zero(chart, variant);
        for t in terms {
            let coeff = match &t["coeff"] {
                Value::Null => Scalar::one(),
                Value::Number(n) => int(n.as_i64().ok_or_else(|| Error::Invalid(format!("bad coefficient {n}")))?),
                Value::String(s) => GradedPoly::parse(chart, s)?.constant_term(),
                other => return Err(Error::Invalid(format!("bad coefficient {other}"))),
            };
            let slots = t["slots"].as_array().ok_or_else(|| Error::Invalid("missing `slots`".into()))?;
            let polys: Vec<GradedPoly> = slots
                .iter()
                .map(|s| GradedPoly::parse(chart, s.as_str().ok_or_else(|| Error::Invalid("slot must be a string".into()))?))
                .collect::<Result<_>>()?;
            e = e.add(&BarElement::word(chart, variant, &polys)?.scale(&coeff))?;
        }
        Ok(e)
    }
}

impl std::fmt::Display for BarElement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let (l, r) = self.variant.ends();
        for (k, (w, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            let slot = |m: &Monomial| format!("({})", self.poly(m));
            let left: String = w[..l].iter().map(slot).collect();
            let inner: Vec<String> = w[l..w.len() - r].iter().map(slot).collect();
            let right: String = w[w.len() - r..].iter().map(slot).collect();
            write!(f, "{c}*{left}[{}]{right}", inner.join("|"))?;
        }
        Ok(())
    }
}


impl BarElement {
    /// Concatenation of fixed-end words `[a..][b..] = [a..|b..]`.
    pub fn concat(&self, other: &BarElement) -> Result<BarElement> {
        self.check(other)?;
        if self.variant != Variant::FixedEnd {
            return Err(Error::VariantMismatch("concatenation needs fixed-end elements".into()));
        }
        let mut out = BTreeMap::new();
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let mut w = a.clone();
                w.extend_from_slice(b);
                add_to(&mut out, w, ca * cb);
            }
        }
        Ok(BarElement { chart: self.chart.clone(), variant: self.variant, terms: out })
    }

    /// The same words with every slot moved into the larger chart `target`.
    pub fn embed(&self, target: &ChartRef) -> Result<BarElement> {
        let mut out = BarElement::zero(target, self.variant);
        for (w, c) in &self.terms {
            let slots: Vec<GradedPoly> = w.iter().map(|m| self.poly(m).embed(target)).collect::<Result<_>>()?;
            out.add_expanded(&slots, c.clone());
        }
        Ok(out)
    }
}

/// The family `(W_q)^a_b = [T^a_g1|T^g1_g2|..|T^g(q-1)_b]`, `q <= q_max`.
#[derive(Clone, Debug)]
pub struct WilsonBarElement {
    rep: RepMatrix,
    q_max: usize,
}

pub fn wilson_element(t: &RepMatrix, q_max: usize) -> Result<WilsonBarElement> {
    let res = t.flatness_residual();
    if !mat_is_zero(&res) {
        let mut bad = Vec::new();
        for (b, row) in res.iter().enumerate() {
            for (a, p) in row.iter().enumerate().filter(|(_, p)| !p.is_zero()) {
                bad.push(Residual { label: format!("F[{}][{}]", t.fiber().name(b), t.fiber().name(a)), value: p.to_string() });
            }
        }
        return Err(Error::FlatnessViolation(bad));
    }
    Ok(WilsonBarElement { rep: t.clone(), q_max })
}

impl WilsonBarElement {
    pub fn rep(&self) -> &RepMatrix {
        &self.rep
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    pub fn rank(&self) -> usize {
        self.rep.rank()
    }

    /// `W_q` as a matrix of fixed-end elements.
    pub fn component(&self, q: usize) -> Result<Vec<Vec<BarElement>>> {
        let chart = self.rep.base();
        let r = self.rank();
        let zero = BarElement::zero(chart, Variant::FixedEnd);
        let mut cur: Vec<Vec<BarElement>> = (0..r)
            .map(|a| {
                (0..r)
                    .map(|b| {
                        let mut e = zero.clone();
                        if a == b {
                            add_to(&mut e.terms, Vec::new(), Scalar::one());
                        }
                        e
                    })
                    .collect()
            })
            .collect();
        let single: Vec<Vec<BarElement>> = (0..r)
            .map(|a| (0..r).map(|b| BarElement::word(chart, Variant::FixedEnd, &[self.rep.entry(a, b).clone()])).collect())
            .collect::<Result<_>>()?;
        for _ in 0..q {
            let mut next = vec![vec![zero.clone(); r]; r];
            for (a, row) in next.iter_mut().enumerate() {
                for (b, slot) in row.iter_mut().enumerate() {
                    for g in 0..r {
                        if single[a][g].is_zero() || cur[g][b].is_zero() {
                            continue;
                        }
                        *slot = slot.add(&single[a][g].concat(&cur[g][b])?)?;
                    }
                }
            }
            cur = next;
        }
        Ok(cur)
    }

    /// True when every entry of `W_q` vanishes.
    pub fn component_is_zero(&self, q: usize) -> Result<bool> {
        Ok(self.component(q)?.iter().flatten().all(|e| e.is_zero()))
    }
}

/// The Wilson element with fibre coordinates attached at both ends.
#[derive(Clone, Debug)]
pub struct DressedWilson {
    /// Base chart plus `z_a` (degree = level) and the duals `z_a_dual`.
    pub chart: ChartRef,
    /// `Q^` on the extended chart.
    pub q_hat: Derivation,
    /// `sum_q (-1)^q z_a (W_q)^a_b z^b`, two-sided.
    pub element: BarElement,
}

pub fn dual_fibre(name: &str) -> String {
    format!("{name}_dual")
}

impl WilsonBarElement {
    /// The dual coordinate `z^a` would sit in degree `-level(a)`; charts are
    /// non-negatively graded, so it is shifted by the smallest even `c` with
    /// `c >= max level`. Only parities enter the bar signs.
    pub fn dressed(&self) -> Result<DressedWilson> {
        let base = self.rep.base();
        let fiber = self.rep.fiber();
        let r = self.rank();
        let top = (0..r).map(|a| fiber.level(a)).max().unwrap_or(0);
        let shift = top + top % 2;
        let mut extra = Vec::with_capacity(2 * r);
        for a in 0..r {
            extra.push(Generator::new(fiber.name(a), fiber.level(a) as u32));
            extra.push(Generator::new(dual_fibre(fiber.name(a)), (shift - fiber.level(a)) as u32));
        }
        let chart = base.extend(format!("{}+fibres", base.name()), extra)?;
        let t: Vec<Vec<GradedPoly>> = self
            .rep
            .entries()
            .iter()
            .map(|row| row.iter().map(|p| p.embed(&chart)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let z: Vec<GradedPoly> = (0..r).map(|a| chart.var(fiber.name(a))).collect::<Result<_>>()?;
        let zd: Vec<GradedPoly> = (0..r).map(|a| chart.var(&dual_fibre(fiber.name(a)))).collect::<Result<_>>()?;

        let mut q_hat = Derivation::new(&chart, 1);
        for (i, g) in base.generators().iter().enumerate() {
            q_hat.set(&g.name, self.rep.q().derivation().image(i).embed(&chart)?)?;
        }
        for a in 0..r {
            // Q^ z_a = (-1)^b z_b T^b_a,  Q^ z^a = -T^a_b z^b
            let mut img = GradedPoly::zero(&chart);
            let mut img_d = GradedPoly::zero(&chart);
            for b in 0..r {
                img = img.add(&z[b].mul(&t[b][a]).scale(&sign(fiber.level(b) % 2 == 1)));
                img_d = img_d.sub(&t[a][b].mul(&zd[b]));
            }
            q_hat.set(fiber.name(a), img)?;
            q_hat.set(&dual_fibre(fiber.name(a)), img_d)?;
        }

        let mut element = BarElement::zero(&chart, Variant::TwoSided);
        for q in 0..=self.q_max {
            let wq = self.component(q)?;
            let s = sign(q % 2 == 1);
            for a in 0..r {
                for b in 0..r {
                    for (w, c) in wq[a][b].embed(&chart)?.terms() {
                        let mut slots = Vec::with_capacity(w.len() + 2);
                        slots.push(z[a].clone());
                        slots.extend(w.iter().map(|m| GradedPoly::monomial(&chart, m.clone(), Scalar::one())));
                        slots.push(zd[b].clone());
                        element.add_expanded(&slots, c * &s);
                    }
                }
            }
        }
        Ok(DressedWilson { chart, q_hat, element })
    }

    /// `(b0 + b1)` of the dressed element, keeping the words with fewer than
    /// `q_max` bars (the rest needs `W_{q_max + 1}`). Zero for flat `T`.
    pub fn closure_defect(&self) -> Result<BarElement> {
        let d = self.dressed()?;
        let full = d.element.total_differential(&d.q_hat)?;
        Ok(full.filter(|e, w| e.bar_length(w) < self.q_max))
    }
}

/// Slot pullbacks and nested integrals along one curve, memoized by slot
/// and by suffix so that words sharing a tail share the work.
struct Evaluator<'a> {
    curve: &'a SuperCurve,
    t_at: Vec<Vec<GrassmannValue>>,
    th_at: Vec<Vec<GrassmannValue>>,
    pulled: HashMap<Monomial, Vec<GrassmannValue>>,
    suffix: HashMap<Word, Vec<GrassmannValue>>,
}

impl<'a> Evaluator<'a> {
    fn new(curve: &'a SuperCurve) -> Self {
        let n = curve.grid_n();
        Evaluator {
            curve,
            t_at: (0..=n).map(|k| curve.t_components_at(k)).collect(),
            th_at: (0..=n).map(|k| curve.theta_components_at(k)).collect(),
            pulled: HashMap::new(),
            suffix: HashMap::new(),
        }
    }

    fn point(&self, m: &Monomial, k: usize) -> GrassmannValue {
        let p = GradedPoly::monomial(self.curve.chart(), m.clone(), Scalar::one());
        CompiledPoly::new(&p).eval(&self.t_at[k])
    }

    /// `[d_theta f](t_k) = sum_g x_theta^g d>_g f (x_t)` on the grid.
    fn pullback(&mut self, m: &Monomial) -> &Vec<GrassmannValue> {
        if !self.pulled.contains_key(m) {
            let chart = self.curve.chart();
            let p = GradedPoly::monomial(chart, m.clone(), Scalar::one());
            let partials: Vec<(usize, CompiledPoly)> = (0..chart.len())
                .filter_map(|g| {
                    let d = left_partial(&p, g);
                    (!d.is_zero()).then(|| (g, CompiledPoly::new(&d)))
                })
                .collect();
            let mr = self.curve.grassmann_rank();
            let vals = (0..self.t_at.len())
                .map(|k| {
                    let mut out = GrassmannValue::zero(mr);
                    for (g, d) in &partials {
                        if !self.th_at[k][*g].is_zero() {
                            out.add_product(&self.th_at[k][*g], &d.eval(&self.t_at[k]), 1.0);
                        }
                    }
                    out
                })
                .collect();
            self.pulled.insert(m.clone(), vals);
        }
        &self.pulled[m]
    }

    /// `F_w(t) = int_0^t [d f_1](s) F_{w[1..]}(s) ds`, `F_[] = 1`.
    fn nested(&mut self, w: &[Monomial]) -> Vec<GrassmannValue> {
        let mr = self.curve.grassmann_rank();
        let len = self.t_at.len();
        if w.is_empty() {
            return vec![GrassmannValue::scalar(mr, 1.0); len];
        }
        if let Some(v) = self.suffix.get(w) {
            return v.clone();
        }
        let inner = self.nested(&w[1..]);
        let g = self.pullback(&w[0]).clone();
        let h = self.curve.h();
        let out = cumulative_integral(len, h, |prev: Option<&GrassmannValue>, wts| {
            let mut acc = prev.cloned().unwrap_or_else(|| GrassmannValue::zero(mr));
            for &(i, c) in wts {
                acc.add_product(&g[i], &inner[i], c);
            }
            acc
        });
        self.suffix.insert(w.to_vec(), out.clone());
        out
    }
}

/// Image of `e` under the iterated integral along `c`: endpoint slots are
/// evaluated at `t = 1` (left) and `t = 0` (right), slots between the bars
/// are pulled back by `d_theta` and integrated over `1 >= t_1 >= .. >= 0`.
/// Words with a degree-0 slot between the bars contribute exactly zero.
pub fn iterated_integral(e: &BarElement, c: &SuperCurve) -> Result<GrassmannValue> {
    if !Chart::same(e.chart(), c.chart()) {
        return Err(Error::ChartMismatch(e.chart().name().into(), c.chart().name().into()));
    }
    let mut ev = Evaluator::new(c);
    Ok(integrate_with(e, &mut ev))
}

fn integrate_with(e: &BarElement, ev: &mut Evaluator<'_>) -> GrassmannValue {
    let (l, r) = e.variant().ends();
    let n = ev.curve.grid_n();
    let mut total = GrassmannValue::zero(ev.curve.grassmann_rank());
    for (w, c) in e.terms() {
        if !e.word_is_normalized(w) {
            continue;
        }
        let inner = ev.nested(&w[l..w.len() - r])[n].clone();
        let mut v = if l == 1 { ev.point(&w[0], n).mul(&inner) } else { inner };
        if r == 1 {
            v = v.mul(&ev.point(&w[w.len() - 1], 0));
        }
        total.add_scaled(&v, scalar_to_f64(c));
    }
    total
}

/// Partial sums of `sum_q (-1)^q int W_q`, the path-ordered exponential of
/// `-T_theta` expanded term by term.
#[derive(Clone, Debug)]
pub struct PicardSum {
    pub sum: GrassmannMatrix,
    /// `|int W_q|` for `q = 0..=q_max`.
    pub term_norms: Vec<f64>,
    /// Largest ratio of consecutive norms over the last three terms.
    pub ratio: f64,
    /// Geometric tail estimate `|W_{q_max}| r / (1 - r)` (infinite if `r >= 1`).
    pub tail: f64,
}

impl WilsonBarElement {
    /// Entry-wise iterated integrals of `W_q` along `c`, one word at a time.
    pub fn component_integral(&self, q: usize, c: &SuperCurve) -> Result<GrassmannMatrix> {
        let comp = self.component(q)?;
        if !Chart::same(self.rep.base(), c.chart()) {
            return Err(Error::ChartMismatch(self.rep.base().name().into(), c.chart().name().into()));
        }
        let mut ev = Evaluator::new(c);
        Ok(comp.iter().map(|row| row.iter().map(|e| integrate_with(e, &mut ev)).collect()).collect())
    }

    /// All `int W_q`, `q <= q_max`. Entries of `W_q` are linear in each slot,
    /// so the sum over intermediate indices is taken inside the nested
    /// integrals: `G_q(t) = int_0^t T_theta(s) G_{q-1}(s) ds`, `G_0 = 1`.
    pub fn picard(&self, c: &SuperCurve) -> Result<PicardSum> {
        let cm = CompiledMatrix::from_rep(&self.rep)?;
        if !Chart::same(cm.chart(), c.chart()) {
            return Err(Error::ChartMismatch(cm.chart().name().into(), c.chart().name().into()));
        }
        let (n, m, r) = (c.grid_n(), c.grassmann_rank(), self.rank());
        let a: Vec<GrassmannMatrix> =
            (0..=n).map(|k| cm.theta_derivative(&c.t_components_at(k), &c.theta_components_at(k))).collect();
        let mut g = vec![gm_identity(m, r); n + 1];
        let mut sum = gm_identity(m, r);
        let mut term_norms = vec![gm_norm(&g[n])];
        for q in 1..=self.q_max {
            g = cumulative_integral(n + 1, c.h(), |prev: Option<&GrassmannMatrix>, wts| {
                let mut acc = prev.cloned().unwrap_or_else(|| gm_zero(m, r, r));
                for &(i, w) in wts {
                    gm_axpy(&mut acc, &gm_mul(&a[i], &g[i]), w);
                }
                acc
            });
            gm_axpy(&mut sum, &g[n], if q % 2 == 1 { -1.0 } else { 1.0 });
            term_norms.push(gm_norm(&g[n]));
        }
        let k = term_norms.len();
        let ratio = (k.saturating_sub(3).max(1)..k)
            .map(|i| if term_norms[i - 1] > 0.0 { term_norms[i] / term_norms[i - 1] } else { 0.0 })
            .fold(0.0, f64::max);
        let last = *term_norms.last().expect("nonempty");
        let tail = if ratio < 1.0 { last * ratio / (1.0 - ratio) } else { f64::INFINITY };
        Ok(PicardSum { sum, term_norms, ratio, tail })
    }
}

/// Iterated integrals of one element over the frames of a homotopy.
#[derive(Clone, Debug)]
pub struct ChainMapCheck {
    pub values: Vec<GrassmannValue>,
    /// Largest `|I(frame_j) - I(frame_0)|`.
    pub drift: f64,
}

/// Drift of the iterated integral of `e` across `frames`, closed or not.
pub fn integral_drift(e: &BarElement, frames: &[SuperCurve]) -> Result<ChainMapCheck> {
    let values: Vec<GrassmannValue> = frames.iter().map(|f| iterated_integral(e, f)).collect::<Result<_>>()?;
    let drift = values.iter().map(|v| v.sub(&values[0]).norm()).fold(0.0, f64::max);
    Ok(ChainMapCheck { values, drift })
}

/// For a `(b0 + b1)`-closed element the iterated integral is a closed
/// function of the curve, hence constant along endpoint-fixed homotopies.
/// Refuses elements that are not closed.
pub fn chain_map_check(e: &BarElement, q: &QStructure, frames: &[SuperCurve]) -> Result<ChainMapCheck> {
    let d = e.total_differential(q.derivation())?;
    if !d.is_zero() {
        return Err(Error::Precondition(format!("element is not b-closed: (b0 + b1) e = {d}")));
    }
    if frames.is_empty() {
        return Err(Error::Invalid("no frames".into()));
    }
    integral_drift(e, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nq_manifold::{lie_algebroid_q, so3_dual_poisson, tangent_chart, tangent_q};
    use crate::representation::courant_rep;
    use rand::SeedableRng;

    fn p(chart: &ChartRef, s: &str) -> GradedPoly {
        GradedPoly::parse(chart, s).unwrap()
    }

    fn two(chart: &ChartRef, slots: &[&str]) -> BarElement {
        let polys: Vec<GradedPoly> = slots.iter().map(|s| p(chart, s)).collect();
        BarElement::word(chart, Variant::TwoSided, &polys).unwrap()
    }

    #[test]
    fn b1_without_bars_is_zero() {
        let c = tangent_chart(2).unwrap();
        assert!(two(&c, &["x1*v1", "x2"]).b1().is_zero());
    }

    #[test]
    fn b1_of_a_two_bar_word() {
        let c = tangent_chart(2).unwrap();
        // f0 = v1, f1 = x1 v2, f2 = v1, m = x2: P_0 = 1, P_1 = 1
        let e = two(&c, &["v1", "x1*v2", "v1", "x2"]);
        let want = two(&c, &["v1*x1*v2", "v1", "x2"])
            .neg()
            .sub(&two(&c, &["v1", "x1*v2*v1", "x2"]))
            .unwrap()
            .add(&two(&c, &["v1", "x1*v2", "v1*x2"]))
            .unwrap();
        assert_eq!(e.b1(), want);
    }

    #[test]
    fn b0_vanishes_for_zero_q() {
        let c = tangent_chart(1).unwrap();
        let q = Derivation::new(&c, 1);
        assert!(two(&c, &["x1", "v1", "x1*x1"]).b0(&q).unwrap().is_zero());
    }

    #[test]
    fn b0_of_a_one_form() {
        let q = tangent_q(1).unwrap();
        let c = q.chart().clone();
        let e = BarElement::word(&c, Variant::FixedEnd, &[p(&c, "v1")]).unwrap();
        assert!(e.b0(q.derivation()).unwrap().is_zero());
        // [x1] is not closed: -[v1]
        let e = BarElement::word(&c, Variant::FixedEnd, &[p(&c, "x1")]).unwrap();
        let want = BarElement::word(&c, Variant::FixedEnd, &[p(&c, "-v1")]).unwrap();
        assert_eq!(e.b0(q.derivation()).unwrap(), want);
    }

    #[test]
    fn contraction_on_empty_words() {
        let c = tangent_chart(2).unwrap();
        let e = two(&c, &["x1*v2", "x2"]);
        let lhs = e.contraction_s().unwrap().b1().add(&e.b1().contraction_s().unwrap()).unwrap();
        let want = e.sub(&two(&c, &["1", "x1*v2*x2"])).unwrap();
        assert_eq!(lhs, want);
        assert_eq!(e.sub(&e.eta_epsilon().unwrap()).unwrap(), want);
    }

    #[test]
    fn contraction_squares_to_zero_after_normalization() {
        let c = tangent_chart(2).unwrap();
        let e = two(&c, &["x1*v2", "v1", "x2"]);
        let ss = e.contraction_s().unwrap().contraction_s().unwrap();
        assert!(!ss.is_zero());
        assert!(ss.normalized().is_zero());
        assert!(BarElement::word(&c, Variant::FixedEnd, &[p(&c, "v1")]).unwrap().contraction_s().is_err());
    }

    #[test]
    fn second_grading() {
        let c = tangent_chart(2).unwrap();
        let e = two(&c, &["v1", "x1*v2", "v1*v2", "x2"]);
        assert_eq!(e.grading(), Some(1 + 0 + 1));
        assert_eq!(e.b1().grading(), Some(3));
    }

    #[test]
    fn printed_wrap_sign_is_not_a_differential() {
        let q = lie_algebroid_q(&so3_dual_poisson().unwrap()).unwrap();
        let chart = q.chart().clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let plain = |_: bool, _: bool, _: bool| false;
        let mut broken = false;
        for _ in 0..40 {
            let e = random_element(&chart, Variant::Cyclic, 3, &mut rng).unwrap();
            assert!(e.b1().b1().is_zero());
            broken |= !e.b1_with(&plain).b1_with(&plain).is_zero();
        }
        assert!(broken);
    }

    #[test]
    fn json_round_trip() {
        let c = tangent_chart(2).unwrap();
        let e = two(&c, &["v1 + 2*x1", "x1*v2", "1/3*x2"]);
        let back = BarElement::from_json(&c, &e.to_json()).unwrap();
        assert_eq!(back, e);
        let v: Value = serde_json::from_str(r#"{"variant":"fixed-end","terms":[{"coeff":"-2","slots":["v1","x1*v2"]}]}"#).unwrap();
        let f = BarElement::from_json(&c, &v).unwrap();
        assert_eq!(f.num_terms(), 1);
        assert_eq!(f.to_string(), "-2*[(v1)|(x1*v2)]");
    }

    #[test]
    fn wilson_element_without_bars_is_the_identity() {
        let t = courant_rep(1).unwrap();
        let w = wilson_element(&t, 0).unwrap();
        let w0 = w.component(0).unwrap();
        for (a, row) in w0.iter().enumerate() {
            for (b, e) in row.iter().enumerate() {
                assert_eq!(e.num_terms(), usize::from(a == b));
            }
        }
    }

    #[test]
    fn courant_wilson_element_collapses() {
        let t = courant_rep(2).unwrap();
        let w = wilson_element(&t, 3).unwrap();
        assert!(!w.component_is_zero(1).unwrap());
        for q in 2..=3 {
            assert!(w.component_is_zero(q).unwrap());
        }
        // the surviving slots are constants, removed by normalization
        assert!(w.component(1).unwrap().iter().flatten().all(|e| e.normalized().is_zero()));
        assert!(w.closure_defect().unwrap().is_zero());
    }

    #[test]
    fn dressed_adjoint_wilson_element_is_closed() {
        let t = crate::scenarios::adjoint().unwrap();
        let w = wilson_element(&t, 4).unwrap();
        let d = w.dressed().unwrap();
        assert!(d.element.max_bar_length() == Some(4));
        assert!(w.closure_defect().unwrap().is_zero());
        // with the unsigned sum the defect survives
        let full = d.element.total_differential(&d.q_hat).unwrap();
        let flipped = {
            let mut e = BarElement::zero(&d.chart, Variant::TwoSided);
            for (wd, c) in d.element.terms() {
                let s = sign(d.element.bar_length(wd) % 2 == 1);
                add_to(&mut e.terms, wd.clone(), c * s);
            }
            e
        };
        let bad = flipped.total_differential(&d.q_hat).unwrap().filter(|e, w| e.bar_length(w) < 4);
        assert!(full.filter(|e, w| e.bar_length(w) < 4).is_zero());
        assert!(!bad.is_zero());
    }

    #[test]
    fn non_flat_matrices_are_refused() {
        let q = tangent_q(2).unwrap();
        let c = q.chart().clone();
        let fiber = crate::representation::FiberSpec::new(vec![("z".into(), 0)]).unwrap();
        let t = RepMatrix::new_unchecked(q, fiber, vec![vec![p(&c, "x1*v2")]]).unwrap();
        assert!(matches!(wilson_element(&t, 2), Err(Error::FlatnessViolation(_))));
    }
}
