//! Fixtures shared by the kernel benches.

use nqwilson::bar_complex::{random_element, BarElement, Variant};
use nqwilson::nq_manifold::{lie_algebroid_q, so3_dual_poisson};
use nqwilson::representation::RepMatrix;
use nqwilson::scenarios::{flat_so3, poisson_bundle, sphere_loop, tangent_line};
use nqwilson::supercurve::SuperCurve;
use nqwilson::QStructure;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn so3_line(m: u32, n: usize) -> (RepMatrix, SuperCurve) {
    let t = flat_so3(2).expect("flat so(3)");
    let c = tangent_line(&t, m, n).expect("line");
    (t, c)
}

pub fn poisson_loop(m: u32, n: usize) -> (RepMatrix, SuperCurve) {
    let t = poisson_bundle().expect("poisson bundle");
    let c = sphere_loop(&t, m, n, 0.7).expect("loop");
    (t, c)
}

pub fn poisson_q() -> QStructure {
    lie_algebroid_q(&so3_dual_poisson().expect("so(3)*")).expect("Q")
}

/// `count` seeded two-sided elements of bar length at most `q_max`.
pub fn bar_elements(q: &QStructure, count: usize, q_max: usize) -> Vec<BarElement> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..count).map(|_| random_element(q.chart(), Variant::TwoSided, q_max, &mut rng).expect("element")).collect()
}
