//! The three check verbs. Each returns a report; configuration problems
//! come back as `BuildError::Config`, numerical or algebraic failures as
//! failing records.

use std::time::Instant;

use nqwilson::bar_complex::{
    chain_map_check, integral_drift, random_element, wilson_element, BarElement, Variant,
};
use nqwilson::grassmann::{gm_norm, gm_sub};
use nqwilson::nq_manifold::check_nilpotent;
use nqwilson::report::{CheckRecord, RunReport};
use nqwilson::representation::{
    adjoint_split_closed_form, gauge_transform, mat_sub, random_connection, split_gauge,
    transition_residual, zero_connection, PolyMatrix, RepMatrix,
};
use nqwilson::supercurve::{homotopy_flow, SuperCurve};
use nqwilson::wilson::{
    closure_gap, gauge_covariance_residual, line_homotopy_drift, loop_gauge_residual, loop_homotopy_drift,
    supertrace, wilson_line, WilsonLine,
};
use nqwilson::{Error, GradedPoly};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::config::{at, BuildError, Problem, RepSpec};

type Built<T> = std::result::Result<T, BuildError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Sweep {
    Homotopy,
    Gauge,
    Grid,
}

/// Runs `f`; a check-class failure becomes one failing record named `check`.
fn guarded(report: &mut RunReport, check: &str, f: impl FnOnce() -> Built<Vec<CheckRecord>>) -> Built<()> {
    let start = Instant::now();
    match f() {
        Ok(rs) => report.extend(rs),
        Err(BuildError::Check(field, e)) => report.push(failure(check, &field, &e).timed(start)),
        Err(c) => return Err(c),
    }
    Ok(())
}

pub fn failure(check: &str, field: &str, e: &Error) -> CheckRecord {
    CheckRecord::numeric(check, &json!({ "field": field }), f64::INFINITY, 0.0)
        .with_detail(json!({ "field": field, "error": e.to_string() }))
}

fn nonzero_entries(m: &PolyMatrix, label: &str) -> (usize, Value) {
    let mut out = Map::new();
    for (b, row) in m.iter().enumerate() {
        for (a, p) in row.iter().enumerate() {
            if !p.is_zero() {
                out.insert(format!("{label}[{b}][{a}]"), json!(p.to_string()));
            }
        }
    }
    (out.len(), Value::Object(out))
}

fn exact_matrix(check: &str, inputs: &Value, m: &PolyMatrix, label: &str, start: Instant) -> CheckRecord {
    let (n, detail) = nonzero_entries(m, label);
    let r = CheckRecord::exact(check, inputs, n).timed(start);
    if n > 0 {
        r.with_detail(json!({ "residuals": detail }))
    } else {
        r
    }
}

pub fn cmd_check(p: &Problem, report: &mut RunReport) -> Built<()> {
    let cfg = &p.cfg;
    let start = Instant::now();
    let res = check_nilpotent(&p.q);
    let residuals: Map<String, Value> = res.iter().map(|(g, poly)| (format!("Q^2({g})"), json!(poly.to_string()))).collect();
    let mut rec = CheckRecord::exact("q.nilpotency", &json!({ "q": cfg.q, "representation": cfg.representation }), res.len()).timed(start);
    if !res.is_empty() {
        rec = rec.with_detail(json!({ "residuals": residuals }));
    }
    report.push(rec);

    let Some(t) = &p.rep else { return Ok(()) };
    let inputs = json!({ "representation": cfg.representation });
    let start = Instant::now();
    report.push(exact_matrix("representation.flatness", &inputs, &t.flatness_residual(), "F", start));
    let start = Instant::now();
    let dec = t.decompose();
    let rec = exact_matrix("representation.t0_squared", &inputs, &dec.t0_squared(), "T0^2", start);
    let levels: Vec<i64> = (0..t.rank()).map(|a| t.fiber().level(a)).collect();
    let mut detail = rec.detail.clone();
    if detail.is_null() {
        detail = json!({});
    }
    detail["degrees"] = json!(dec.nonzero_degrees());
    detail["levels"] = json!(levels);
    report.push(rec.with_detail(detail));

    guarded(report, "gauge.consistency", || {
        let Some(g) = p.gauge()? else { return Ok(vec![]) };
        let inputs = json!({ "representation": cfg.representation, "gauge": cfg.gauge });
        let start = Instant::now();
        let tt = at("gauge", gauge_transform(t, &g))?;
        let flat = exact_matrix("gauge.transformed_flatness", &inputs, &tt.flatness_residual(), "F~", start);
        let start = Instant::now();
        let tr = at("gauge", transition_residual(t, &tt, &g))?;
        Ok(vec![flat, exact_matrix("gauge.transition", &inputs, &tr, "Omega", start)])
    })?;

    if let (Some(RepSpec::HamiltonianLift), Some(d)) = (&cfg.representation, &p.algebroid) {
        guarded(report, "lift.split_frame", || {
            let start = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut connections = vec![zero_connection(d)];
            for _ in 0..3 {
                connections.push(random_connection(d, &mut rng));
            }
            let mut mismatched = 0;
            for gamma in &connections {
                let gauged = at("lift", gauge_transform(t, &at("lift", split_gauge(d, gamma, t))?))?;
                let closed = at("lift", adjoint_split_closed_form(d, gamma, t))?;
                mismatched += mat_sub(&closed, gauged.entries()).iter().flatten().filter(|p| !p.is_zero()).count();
            }
            let rec = CheckRecord::exact("lift.split_frame", &json!({ "q": cfg.q, "seed": cfg.seed }), mismatched)
                .with_detail(json!({ "connections": connections.len() }))
                .timed(start);
            Ok(vec![rec])
        })?;
    }
    Ok(())
}

/// `U`, together with `U_O` when the curve is treated as a loop.
fn holonomy(t: &RepMatrix, c: &SuperCurve, as_loop: bool) -> Built<(WilsonLine, Option<nqwilson::grassmann::GrassmannValue>)> {
    let w = at("curve", wilson_line(t, c))?;
    if !as_loop {
        return Ok((w, None));
    }
    let gap = closure_gap(c, &[]);
    if gap > nqwilson::wilson::CLOSURE_TOL {
        return Err(BuildError::Check("curve".into(), Error::NotClosed(gap)));
    }
    let u_o = supertrace(&w.u, &w.levels);
    Ok((w, Some(u_o)))
}

pub fn cmd_wilson(p: &Problem, as_loop: Option<bool>, sweeps: &[Sweep], report: &mut RunReport) -> Built<()> {
    let cfg = &p.cfg;
    let t = p.rep("wilson")?;
    p.curve_spec()?;
    let as_loop = as_loop.unwrap_or(p.is_loop());
    let (m, n) = (cfg.grassmann, cfg.grid);
    let inputs = json!({ "representation": cfg.representation, "curve": cfg.curve, "grid": n, "grassmann": m, "seed": cfg.seed });
    let tol = &cfg.tolerances;

    let mut base = None;
    guarded(report, if as_loop { "wilson.loop" } else { "wilson.line" }, || {
        let start = Instant::now();
        let c = p.curve(m, n)?;
        let h = holonomy(t, &c, as_loop)?;
        let detail = match &h.1 {
            Some(u_o) => {
                let count: i64 = h.0.levels.iter().map(|l| if l % 2 == 0 { 1 } else { -1 }).sum();
                json!({ "loop": u_o.to_json(), "norm": u_o.norm(), "level_count": count })
            }
            None => json!({ "line": h.0.to_json(), "norm": gm_norm(&h.0.u) }),
        };
        let rec = CheckRecord::numeric(
            if as_loop { "wilson.loop" } else { "wilson.line" },
            &inputs,
            h.0.degree_law_violation(),
            tol.invariance,
        )
        .grid(n, m)
        .with_detail(detail)
        .timed(start);
        base = Some((c, h));
        Ok(vec![rec])
    })?;
    let Some((c, h0)) = base else { return Ok(()) };

    for sweep in sweeps {
        match sweep {
            Sweep::Homotopy => guarded(report, "wilson.homotopy", || {
                let start = Instant::now();
                let hs = &cfg.homotopy;
                let hg = p.homotopy(m, n)?;
                let frames = at("homotopy", homotopy_flow(&p.q, &c, &hg, hs.frames, hs.step))?;
                let drift = if as_loop {
                    at("homotopy", loop_homotopy_drift(t, &frames, &[]))?
                } else {
                    at("homotopy", line_homotopy_drift(t, &frames))?
                };
                let moved = curve_distance(&frames[0], &frames[frames.len() - 1]);
                let inputs = json!({ "base": inputs, "homotopy": hs });
                Ok(vec![CheckRecord::numeric("wilson.homotopy", &inputs, drift, tol.homotopy)
                    .grid(n, m)
                    .with_detail(json!({ "frames": hs.frames, "curve_displacement": moved }))
                    .timed(start)])
            })?,
            Sweep::Gauge => {
                let Some(g) = p.gauge()? else {
                    return Err(BuildError::Config("gauge: required by --sweep gauge".into()));
                };
                guarded(report, "wilson.gauge", || {
                    let start = Instant::now();
                    let inputs = json!({ "base": inputs, "gauge": cfg.gauge });
                    let (r, detail) = if as_loop {
                        let (w, wt) = at("gauge", loop_gauge_residual(t, &g, &c, &[]))?;
                        (w.sub(&wt).norm(), json!({ "mode": "loop invariance", "loop": w.to_json() }))
                    } else {
                        (at("gauge", gauge_covariance_residual(t, &g, &c))?, json!({ "mode": "line covariance" }))
                    };
                    Ok(vec![CheckRecord::numeric("wilson.gauge", &inputs, r, tol.invariance)
                        .grid(n, m)
                        .with_detail(detail)
                        .timed(start)])
                })?
            }
            Sweep::Grid => guarded(report, "wilson.grid", || {
                // compares the full U, which also covers U_O; coarse loops need not close to 1e-9
                let start = Instant::now();
                let reference = n.max(1600);
                let u = |k: usize| -> Built<WilsonLine> { at("curve", wilson_line(t, &p.curve(m, k)?)) };
                let uref = if reference == n { h0.0.clone() } else { u(reference)? };
                let mut rows = Vec::new();
                let mut pts = Vec::new();
                for k in 0..4 {
                    let nk = 25 << k;
                    let e = u(nk)?.distance(&uref);
                    if e > 1e-12 {
                        pts.push(((nk as f64).log2(), e.log2()));
                    }
                    rows.push(json!({ "n": nk, "error": e }));
                }
                for k in 1..rows.len() {
                    let (a, b) = (rows[k - 1]["error"].as_f64().unwrap(), rows[k]["error"].as_f64().unwrap());
                    if b > 0.0 {
                        rows[k]["slope"] = json!((a / b).log2());
                    }
                }
                let order = fitted_order(&pts);
                let (residual, note) = match order {
                    Some(s) => ((s - 4.0).abs(), "fitted order"),
                    None if pts.is_empty() => (0.0, "grid independent to roundoff"),
                    None => (f64::INFINITY, "too few resolved points"),
                };
                Ok(vec![CheckRecord::numeric("wilson.grid", &json!({ "base": inputs, "reference": reference }), residual, 0.5)
                    .grid(reference, m)
                    .with_detail(json!({ "order": order, "expected_order": 4, "note": note, "table": rows }))
                    .timed(start)])
            })?,
        }
    }
    Ok(())
}

/// Least-squares slope of `-log e` against `log n`.
fn fitted_order(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(-sxy / sxx)
}

/// Largest body difference of the degree-0 components.
fn curve_distance(a: &SuperCurve, b: &SuperCurve) -> f64 {
    let chart = a.chart();
    let mut worst = 0.0f64;
    for g in (0..chart.len()).filter(|&g| chart.degree_of(g) == 0) {
        for (x, y) in a.t_component(g).iter().zip(b.t_component(g)) {
            worst = worst.max((x.body() - y.body()).abs());
        }
    }
    worst
}

pub fn cmd_bar(p: &Problem, report: &mut RunReport) -> Built<()> {
    let cfg = &p.cfg;
    let bar = &cfg.bar;
    let tol = &cfg.tolerances;
    let chart = p.q.chart();
    let d = p.q.derivation();
    let inputs = json!({ "q": cfg.q, "representation": cfg.representation, "bar": bar, "seed": cfg.seed });

    guarded(report, "bar.identities", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut left = [0usize; 5];
        for i in 0..bar.samples {
            let v = [Variant::TwoSided, Variant::FixedEnd][i % 2];
            let e = at("bar", random_element(chart, v, bar.q_max, &mut rng))?;
            let b0e = at("bar", e.b0(d))?;
            left[0] += e.b1().b1().num_terms();
            left[1] += at("bar", b0e.b0(d))?.num_terms();
            left[2] += at("bar", b0e.b1().add(&at("bar", e.b1().b0(d))?))?.num_terms();
            let z = at("bar", random_element(chart, Variant::Cyclic, bar.q_max, &mut rng))?;
            left[3] += at("bar", at("bar", z.total_differential(d))?.total_differential(d))?.num_terms();
            let s = at("bar", random_element(chart, Variant::TwoSided, bar.q_max, &mut rng))?;
            let lhs = at("bar", at("bar", s.contraction_s())?.b1().add(&at("bar", s.b1().contraction_s())?))?;
            let rhs = at("bar", s.sub(&at("bar", s.eta_epsilon())?))?;
            left[4] += at("bar", lhs.sub(&rhs))?.num_terms();
        }
        let names = ["bar.b1_squared", "bar.b0_squared", "bar.anticommutator", "bar.cyclic_squared", "bar.contraction"];
        let secs = start.elapsed().as_secs_f64() / names.len() as f64;
        Ok(names
            .iter()
            .zip(left)
            .map(|(name, k)| {
                let mut r = CheckRecord::exact(*name, &inputs, k)
                    .with_detail(json!({ "samples": bar.samples, "q_max": bar.q_max }));
                r.seconds = secs;
                r
            })
            .collect())
    })?;

    let (m, n) = (cfg.grassmann, cfg.grid);
    if let (Some(t), Some(curve)) = (&p.rep, &cfg.curve) {
        if !curve.is_loop() {
            guarded(report, "bar.wilson_element", || {
                let start = Instant::now();
                let w = at("representation", wilson_element(t, bar.q_max))?;
                let defect = at("bar", w.closure_defect())?.num_terms();
                let closure = CheckRecord::exact("bar.wilson_closure", &inputs, defect)
                    .with_detail(json!({ "q_max": bar.q_max }))
                    .timed(start);

                let start = Instant::now();
                let c = p.curve(m, n)?;
                let ps = at("bar", wilson_element(t, bar.picard_q_max))?;
                let ps = at("bar", ps.picard(&c))?;
                let ode = at("curve", wilson_line(t, &c))?;
                let diff = gm_norm(&gm_sub(&ps.sum, &ode.u));
                let detail = json!({ "q_max": bar.picard_q_max, "ratio": ps.ratio, "tail": ps.tail, "term_norms": ps.term_norms });
                let picard = CheckRecord::numeric("bar.picard_vs_ode", &inputs, diff, tol.invariance)
                    .grid(n, m)
                    .with_detail(detail.clone())
                    .timed(start);
                let tail = CheckRecord::numeric("bar.picard_tail", &inputs, ps.tail, tol.picard_tail).with_detail(detail);
                Ok(vec![closure, picard, tail])
            })?;
        }
    }

    if let Some(slots) = &bar.negative_control {
        p.curve_spec()?;
        guarded(report, "bar.negative_control", || {
            let start = Instant::now();
            let polys = slots
                .iter()
                .map(|s| at("bar.negative_control", GradedPoly::parse(chart, s)))
                .collect::<Built<Vec<_>>>()?;
            let e = at("bar.negative_control", BarElement::word(chart, Variant::FixedEnd, &polys))?;
            let c = p.curve(m, n)?;
            let hs = &cfg.homotopy;
            let frames = at("homotopy", homotopy_flow(&p.q, &c, &p.homotopy(m, n)?, hs.frames, hs.step))?;
            let refused = matches!(chain_map_check(&e, &p.q, &frames), Err(Error::Precondition(_)));
            let drift = at("bar", integral_drift(&e, &frames))?.drift;
            let mut r = CheckRecord::detects("bar.negative_control", &json!({ "base": inputs, "slots": slots }), drift, tol.detection)
                .grid(n, m)
                .timed(start);
            r.detail["element"] = json!(e.to_string());
            r.detail["refused_as_not_closed"] = json!(refused);
            r.pass &= refused;
            Ok(vec![r])
        })?;
    }
    Ok(())
}
