//! Problem configuration: JSON schema types and their resolution into core
//! objects. Resolution errors carry the offending field path.

use std::collections::BTreeMap;

use nqwilson::graded_algebra::Chart;
use nqwilson::nq_manifold::{
    base_chart, lie_algebroid_q_unchecked, linear_poisson_bivector, poisson_algebroid, tangent_q, AlgebroidData,
};
use nqwilson::representation::{
    constant_connection, courant_rep, flat_bundle_rep, hamiltonian_lift, FiberSpec, GaugeMatrix, PolyMatrix, RepMatrix,
};
use nqwilson::scenarios;
use nqwilson::supercurve::{
    initial_point, random_offshell_curve, random_offshell_loop, solve_eom, Drive, HomotopyGenerator, SuperCurve,
};
use nqwilson::{ChartRef, Derivation, Error, Generator, GradedPoly, QStructure, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub q: Option<QSpec>,
    #[serde(default)]
    pub representation: Option<RepSpec>,
    #[serde(default)]
    pub gauge: Option<GaugeSpec>,
    #[serde(default)]
    pub curve: Option<CurveSpec>,
    #[serde(default)]
    pub homotopy: HomotopySpec,
    #[serde(default)]
    pub bar: BarSpec,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_grassmann")]
    pub grassmann: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_grid() -> usize {
    2000
}

fn default_grassmann() -> u32 {
    4
}

/// A rational written as a JSON integer or as a string like `"-3/2"`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Int(i64),
    Str(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub name: String,
    pub degree: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QSpec {
    /// de Rham differential on `T[1]R^dim`.
    Tangent { dim: usize },
    /// Chevalley-Eilenberg differential; `structure_constants[a][b][c] = f^a_{bc}`.
    LieAlgebra { fibre: Vec<String>, structure_constants: Vec<Vec<Vec<Num>>> },
    /// Lie-Poisson structure on the dual of a Lie algebra, coordinates `x1..xn`.
    LinearPoisson { structure_constants: Vec<Vec<Vec<Num>>> },
    LieAlgebroid {
        base: Vec<String>,
        fibre: Vec<String>,
        anchor: Vec<Vec<String>>,
        structure: Vec<Vec<Vec<String>>>,
    },
    /// Any chart with the images of its generators.
    Explicit { generators: Vec<GeneratorSpec>, images: BTreeMap<String, String> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FibreGenerator {
    pub name: String,
    pub level: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RepSpec {
    /// Constant connection matrices over a `tangent` Q, one per direction.
    FlatConnection { connection: Vec<Vec<Vec<Num>>> },
    /// The Courant example over a `tangent` Q.
    Courant,
    /// Hamiltonian lift of an algebroid Q.
    HamiltonianLift,
    /// Built-in so(3)* bundles; these fix their own Q, so `q` must be absent.
    Named { name: String },
    /// Explicit `T[upper][lower]` over the configured Q.
    Matrix { fibre: Vec<FibreGenerator>, t: Vec<Vec<String>> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaugeSpec {
    /// `1 + eps` with eps of degree 1.
    Positive,
    /// A degree-0 frame rotation.
    Degree0Rotation,
    /// The Courant coordinate change `x2 -> x2 + x1^3/5`.
    CourantFrame,
    Matrix { entries: Vec<Vec<String>> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveSpec {
    /// On-shell curve from a real initial point with polynomial drives.
    Polynomial { x0: BTreeMap<String, f64>, drive: BTreeMap<String, Vec<f64>> },
    /// Built-in on-shell curve for tangent charts.
    TangentLine,
    /// Closed on-shell loop on the unit sphere of so(3)*.
    SphereLoop { twist: f64 },
    /// Seeded curve ignoring the equations of motion.
    Offshell {
        x0: Vec<f64>,
        amplitude: f64,
        #[serde(default)]
        closed: bool,
    },
}

impl CurveSpec {
    pub fn is_loop(&self) -> bool {
        matches!(self, CurveSpec::SphereLoop { .. } | CurveSpec::Offshell { closed: true, .. })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomotopySpec {
    pub amplitude: f64,
    pub frames: usize,
    pub step: f64,
}

impl Default for HomotopySpec {
    fn default() -> Self {
        HomotopySpec { amplitude: 0.3, frames: 20, step: 0.01 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarSpec {
    pub samples: usize,
    pub q_max: usize,
    pub picard_q_max: usize,
    /// Slots of a fixed-end word expected to fail the chain-map check.
    pub negative_control: Option<Vec<String>>,
}

impl Default for BarSpec {
    fn default() -> Self {
        BarSpec { samples: 200, q_max: 4, picard_q_max: 24, negative_control: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub invariance: f64,
    pub homotopy: f64,
    pub picard_tail: f64,
    pub detection: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { invariance: 1e-8, homotopy: 1e-7, picard_tail: 1e-10, detection: 1e-3 }
    }
}

/// Configuration problems (exit code 2) versus failures found while
/// building objects that the config describes correctly (exit code 1).
#[derive(Debug)]
pub enum BuildError {
    Config(String),
    Check(String, Error),
}

type Built<T> = std::result::Result<T, BuildError>;

pub fn at<T>(field: &str, r: nqwilson::Result<T>) -> Built<T> {
    r.map_err(|e| match e {
        Error::ConstraintViolation(_)
        | Error::FlatnessViolation(_)
        | Error::LiftFailure(_)
        | Error::Divergence { .. }
        | Error::NotClosed(_)
        | Error::Precondition(_) => {
            BuildError::Check(field.to_string(), e)
        }
        other => BuildError::Config(format!("{field}: {other}")),
    })
}

fn config<T>(msg: impl Into<String>) -> Built<T> {
    Err(BuildError::Config(msg.into()))
}

fn scalar(field: &str, n: &Num) -> Built<Scalar> {
    match n {
        Num::Int(i) => Ok(Scalar::from_integer((*i).into())),
        Num::Str(s) => s.trim().parse::<Scalar>().or_else(|_| config(format!("{field}: `{s}` is not a rational"))),
    }
}

fn constants(field: &str, f: &[Vec<Vec<Num>>]) -> Built<Vec<Vec<Vec<Scalar>>>> {
    f.iter()
        .map(|m| m.iter().map(|row| row.iter().map(|n| scalar(field, n)).collect()).collect())
        .collect()
}

fn poly(field: &str, chart: &ChartRef, src: &str) -> Built<GradedPoly> {
    at(field, GradedPoly::parse(chart, src))
}

fn poly_matrix(field: &str, chart: &ChartRef, rows: &[Vec<String>]) -> Built<PolyMatrix> {
    rows.iter().map(|r| r.iter().map(|s| poly(field, chart, s)).collect()).collect()
}

fn nonempty<T>(field: &str, v: &[T]) -> Built<()> {
    if v.is_empty() {
        return config(format!("{field}: empty chart"));
    }
    Ok(())
}

/// The resolved problem. `q` is not required to square to zero; the
/// commands report that as a check failure.
pub struct Problem {
    pub cfg: ProblemConfig,
    pub q: QStructure,
    pub algebroid: Option<AlgebroidData>,
    pub rep: Option<RepMatrix>,
}

impl ProblemConfig {
    pub fn parse(src: &str) -> Built<Self> {
        let cfg: ProblemConfig =
            serde_json::from_str(src).map_err(|e| BuildError::Config(format!("schema: {e}")))?;
        if cfg.schema_version != nqwilson::report::SCHEMA_VERSION {
            return config(format!(
                "schema_version: expected \"{}\", found \"{}\"",
                nqwilson::report::SCHEMA_VERSION,
                cfg.schema_version
            ));
        }
        if cfg.grid < 8 {
            return config("grid: need at least 8 steps");
        }
        if cfg.grassmann > 10 {
            return config("grassmann: at most 10 odd generators");
        }
        Ok(cfg)
    }

    pub fn resolve(&self) -> Built<Problem> {
        let (q, algebroid) = match &self.q {
            Some(spec) => {
                let (q, d) = self.resolve_q(spec)?;
                (Some(q), d)
            }
            None => (None, None),
        };
        let rep = match &self.representation {
            Some(spec) => Some(self.resolve_rep(spec, q.as_ref(), algebroid.as_ref())?),
            None => None,
        };
        let q = match (&rep, q) {
            (Some(t), _) => t.q().clone(),
            (None, Some(q)) => q,
            (None, None) => return config("q: either `q` or `representation` is required"),
        };
        Ok(Problem { cfg: self.clone(), q, algebroid, rep })
    }

    fn resolve_q(&self, spec: &QSpec) -> Built<(QStructure, Option<AlgebroidData>)> {
        let algebroid = |d: AlgebroidData| -> Built<(QStructure, Option<AlgebroidData>)> {
            Ok((at("q", lie_algebroid_q_unchecked(&d))?, Some(d)))
        };
        match spec {
            QSpec::Tangent { dim } => {
                if *dim == 0 {
                    return config("q.dim: empty chart");
                }
                Ok((at("q", tangent_q(*dim))?, None))
            }
            QSpec::LieAlgebra { fibre, structure_constants } => {
                nonempty("q.fibre", fibre)?;
                let f = constants("q.structure_constants", structure_constants)?;
                let base = at("q", base_chart(0))?;
                algebroid(at("q.structure_constants", AlgebroidData::lie_algebra(base, fibre.clone(), &f))?)
            }
            QSpec::LinearPoisson { structure_constants } => {
                nonempty("q.structure_constants", structure_constants)?;
                let f = constants("q.structure_constants", structure_constants)?;
                let n = f.len();
                if f.iter().any(|m| m.len() != n || m.iter().any(|r| r.len() != n)) {
                    return config(format!("q.structure_constants: must be {n}x{n}x{n}"));
                }
                let base = at("q", base_chart(n))?;
                let alpha = linear_poisson_bivector(&base, &f);
                algebroid(at("q.structure_constants", poisson_algebroid(base, &alpha))?)
            }
            QSpec::LieAlgebroid { base, fibre, anchor, structure } => {
                nonempty("q.base", base)?;
                let chart = at("q.base", Chart::new("base", base.iter().map(|n| Generator::new(n.clone(), 0)).collect()))?;
                let anchor = poly_matrix("q.anchor", &chart, anchor)?;
                let structure = structure
                    .iter()
                    .map(|m| poly_matrix("q.structure", &chart, m))
                    .collect::<Built<Vec<_>>>()?;
                algebroid(at("q", AlgebroidData::new(chart, fibre.clone(), anchor, structure))?)
            }
            QSpec::Explicit { generators, images } => {
                nonempty("q.generators", generators)?;
                let gens = generators.iter().map(|g| Generator::new(g.name.clone(), g.degree)).collect();
                let chart = at("q.generators", Chart::new("M", gens))?;
                let mut d = Derivation::new(&chart, 1);
                for (name, src) in images {
                    let field = format!("q.images.{name}");
                    at(&field, d.set(name, poly(&field, &chart, src)?))?;
                }
                Ok((at("q", QStructure::new_unchecked(d))?, None))
            }
        }
    }

    fn tangent_dim(&self, what: &str) -> Built<usize> {
        match &self.q {
            Some(QSpec::Tangent { dim }) => Ok(*dim),
            _ => config(format!("representation: `{what}` needs a `tangent` q")),
        }
    }

    fn resolve_rep(&self, spec: &RepSpec, q: Option<&QStructure>, d: Option<&AlgebroidData>) -> Built<RepMatrix> {
        match spec {
            RepSpec::FlatConnection { connection } => {
                let n = self.tangent_dim("flat_connection")?;
                if connection.len() != n {
                    return config(format!("representation.connection: need {n} matrices, found {}", connection.len()));
                }
                let mats = constants("representation.connection", connection)?;
                let conn = at("representation.connection", constant_connection(n, &mats))?;
                at("representation", flat_bundle_rep(n, &conn))
            }
            RepSpec::Courant => at("representation", courant_rep(self.tangent_dim("courant")?)),
            RepSpec::HamiltonianLift => match d {
                Some(d) => at("representation", hamiltonian_lift(d)),
                None => config("representation: `hamiltonian_lift` needs an algebroid q"),
            },
            RepSpec::Named { name } => {
                if self.q.is_some() {
                    return config(format!("q: representation `{name}` fixes its own Q; drop the `q` field"));
                }
                let field = "representation.name";
                match name.as_str() {
                    "adjoint" => at(field, scenarios::adjoint()),
                    "coadjoint_bundle" => at(field, scenarios::coadjoint_bundle()),
                    "poisson_bundle" => at(field, scenarios::poisson_bundle()),
                    other => config(format!(
                        "{field}: unknown `{other}` (expected adjoint, coadjoint_bundle or poisson_bundle)"
                    )),
                }
            }
            RepSpec::Matrix { fibre, t } => {
                let Some(q) = q else { return config("representation: `matrix` needs a q") };
                nonempty("representation.fibre", fibre)?;
                let fiber = at(
                    "representation.fibre",
                    FiberSpec::new(fibre.iter().map(|g| (g.name.clone(), g.level)).collect()),
                )?;
                let t = poly_matrix("representation.t", q.chart(), t)?;
                if t.len() != fiber.len() || t.iter().any(|r| r.len() != fiber.len()) {
                    return config(format!("representation.t: must be {0}x{0}", fiber.len()));
                }
                at("representation", RepMatrix::new_unchecked(q.clone(), fiber, t))
            }
        }
    }
}

impl Problem {
    pub fn rep(&self, need: &str) -> Built<&RepMatrix> {
        self.rep.as_ref().ok_or_else(|| BuildError::Config(format!("representation: required by {need}")))
    }

    pub fn gauge(&self) -> Built<Option<GaugeMatrix>> {
        let Some(spec) = &self.cfg.gauge else { return Ok(None) };
        let t = self.rep("gauge")?;
        let g = match spec {
            GaugeSpec::Positive => at("gauge", scenarios::positive_gauge(t))?,
            GaugeSpec::Degree0Rotation => at("gauge", scenarios::degree0_rotation(t))?,
            GaugeSpec::CourantFrame => {
                let a = at("gauge", scenarios::courant_frame(t.base()))?;
                at("gauge", nqwilson::wilson::courant_transition(t, &a))?
            }
            GaugeSpec::Matrix { entries } => {
                let e = poly_matrix("gauge.entries", t.base(), entries)?;
                at("gauge.entries", GaugeMatrix::new(t.base(), t.fiber().clone(), t.fiber().clone(), e))?
            }
        };
        Ok(Some(g))
    }

    pub fn curve_spec(&self) -> Built<&CurveSpec> {
        self.cfg.curve.as_ref().ok_or_else(|| BuildError::Config("curve: required by this command".into()))
    }

    pub fn is_loop(&self) -> bool {
        self.cfg.curve.as_ref().is_some_and(|c| c.is_loop())
    }

    /// The configured curve on `n` steps with Grassmann rank `m`.
    pub fn curve(&self, m: u32, n: usize) -> Built<SuperCurve> {
        let chart = self.q.chart();
        match self.curve_spec()? {
            CurveSpec::Polynomial { x0, drive } => {
                let x0: Vec<(&str, f64)> = x0.iter().map(|(k, v)| (k.as_str(), *v)).collect();
                let drive: Vec<(&str, Vec<f64>)> = drive.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
                let start = at("curve.x0", initial_point(chart, m, &x0))?;
                let d = at("curve.drive", Drive::polynomial(chart, m, n, &drive))?;
                at("curve", solve_eom(&self.q, &start, &d))
            }
            CurveSpec::TangentLine => at("curve", scenarios::tangent_line(self.rep("curve.tangent_line")?, m, n)),
            CurveSpec::SphereLoop { twist } => {
                at("curve", scenarios::sphere_loop(self.rep("curve.sphere_loop")?, m, n, *twist))
            }
            CurveSpec::Offshell { x0, amplitude, closed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
                let c = if *closed {
                    random_offshell_loop(chart, m, n, x0, *amplitude, &mut rng)
                } else {
                    random_offshell_curve(chart, m, n, x0, *amplitude, &mut rng)
                };
                at("curve", c)
            }
        }
    }

    /// Endpoint-fixed wiggle for lines, a periodic one for loops.
    pub fn homotopy(&self, m: u32, n: usize) -> Built<HomotopyGenerator> {
        let amp = self.cfg.homotopy.amplitude;
        let chart = self.q.chart();
        if self.is_loop() {
            at("homotopy", scenarios::sphere_wiggle(chart, m, n, amp))
        } else {
            at("homotopy", scenarios::tangent_wiggle(chart, m, n, amp))
        }
    }
}
