//! Small dense helpers for rational and real matrices.

use num::{One, Zero};

use crate::graded_algebra::Scalar;

pub type RatMatrix = Vec<Vec<Scalar>>;

pub fn rat_identity(n: usize) -> RatMatrix {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { Scalar::one() } else { Scalar::zero() }).collect())
        .collect()
}

pub fn rat_mul(a: &RatMatrix, b: &RatMatrix) -> RatMatrix {
    let n = a.len();
    let k = b.len();
    let m = if k == 0 { 0 } else { b[0].len() };
    let mut out = vec![vec![Scalar::zero(); m]; n];
    for i in 0..n {
        for l in 0..k {
            if a[i][l].is_zero() {
                continue;
            }
            for j in 0..m {
                out[i][j] += &a[i][l] * &b[l][j];
            }
        }
    }
    out
}

/// Gauss-Jordan inverse; `None` if singular.
pub fn rat_inverse(a: &RatMatrix) -> Option<RatMatrix> {
    let n = a.len();
    let mut m: Vec<Vec<Scalar>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Scalar::one() } else { Scalar::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, piv);
        let p = m[col][col].clone();
        for v in m[col].iter_mut() {
            *v = &*v / &p;
        }
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                for c in 0..2 * n {
                    let t = &f * &m[col][c];
                    m[r][c] -= t;
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub type RealMatrix = Vec<Vec<f64>>;

pub fn real_identity(n: usize) -> RealMatrix {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn real_mul(a: &RealMatrix, b: &RealMatrix) -> RealMatrix {
    let n = a.len();
    let k = b.len();
    let m = if k == 0 { 0 } else { b[0].len() };
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            for j in 0..m {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn real_expm(a: &RealMatrix) -> RealMatrix {
    let n = a.len();
    let norm: f64 = a.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let scale = 2f64.powi(s);
    let b: RealMatrix = a.iter().map(|r| r.iter().map(|v| v / scale).collect()).collect();
    let mut out = real_identity(n);
    let mut term = real_identity(n);
    for k in 1..30 {
        term = real_mul(&term, &b);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                out[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        out = real_mul(&out, &out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graded_algebra::int;

    #[test]
    fn rational_inverse_round_trip() {
        let a = vec![vec![int(2), int(1)], vec![int(1), int(1)]];
        let inv = rat_inverse(&a).unwrap();
        assert_eq!(rat_mul(&a, &inv), rat_identity(2));
        assert!(rat_inverse(&vec![vec![int(1), int(2)], vec![int(2), int(4)]]).is_none());
    }

    #[test]
    fn rotation_exponential() {
        let t = 0.7f64;
        let e = real_expm(&vec![vec![0.0, -t], vec![t, 0.0]]);
        assert!((e[0][0] - t.cos()).abs() < 1e-14);
        assert!((e[1][0] - t.sin()).abs() < 1e-14);
    }
}
