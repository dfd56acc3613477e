//! Truncated continued matrix inversions for the Fourier recursion
//! `R_2n C_2n - Q2 (C_2n-2 + C_2n+2) - Q4 (C_2n-4 + C_2n+4) = 0`,
//! `R_2n = A - (2n + beta)^2`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::cond1;
use crate::linearization::HillSystem;

/// Intermediate inversions with a larger 1-norm condition number are rejected.
pub const MAX_CONDITION: f64 = 1e14;

/// The condition estimate floors `||M||_1` at one, so a level whose entries
/// are all tiny is still flagged.
fn invert(m: &DMatrix<f64>, level: i64) -> Result<DMatrix<f64>> {
    let inv = m.clone().try_inverse().ok_or(Error::ExpansionBreakdown {
        level,
        condition: f64::INFINITY,
    })?;
    let condition = cond1(m, &inv);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::ExpansionBreakdown { level, condition });
    }
    Ok(inv)
}

fn r_block(hill: &HillSystem, beta: f64, harmonic: i64) -> DMatrix<f64> {
    let s = harmonic as f64 + beta;
    let mut r = hill.a().clone();
    for k in 0..r.nrows() {
        r[(k, k)] -= s * s;
    }
    r
}

#[derive(Debug, Clone)]
enum Chains {
    /// `up[k-1] = T_2k`, `down[k-1] = T_-2k`.
    Tridiagonal {
        up: Vec<DMatrix<f64>>,
        down: Vec<DMatrix<f64>>,
    },
    /// Pair blocks `X_k = (C_4k-2, C_4k)`: `up[k-1] = S_k`, `down[k-1] = S_-k`,
    /// and `C_-2 = lower * C_0`.
    Paired {
        up: Vec<DMatrix<f64>>,
        down: Vec<DMatrix<f64>>,
        l: DMatrix<f64>,
        lower: DMatrix<f64>,
    },
}

/// The reduced matrix `Y_beta` and the chains needed to rebuild mode ladders.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub beta: f64,
    pub y: DMatrix<f64>,
    q2: DMatrix<f64>,
    chains: Chains,
}

impl Expansion {
    /// Builds the expansion; the paired form is used whenever `Q4 != 0`.
    pub fn new(hill: &HillSystem, beta: f64, depth: usize) -> Result<Self> {
        Self::build(hill, beta, depth, hill.has_q4())
    }

    /// Always uses the paired (pentadiagonal-capable) recursion.
    pub fn paired(hill: &HillSystem, beta: f64, depth: usize) -> Result<Self> {
        Self::build(hill, beta, depth, true)
    }

    fn build(hill: &HillSystem, beta: f64, depth: usize, paired: bool) -> Result<Self> {
        if depth < 1 {
            return Err(Error::InvalidConfig(
                "expansion depth must be positive".into(),
            ));
        }
        if paired {
            Self::build_paired(hill, beta, depth)
        } else {
            Self::build_tridiagonal(hill, beta, depth)
        }
    }

    fn build_tridiagonal(hill: &HillSystem, beta: f64, depth: usize) -> Result<Self> {
        let q = hill.q2();
        let chain = |sign: i64| -> Result<Vec<DMatrix<f64>>> {
            let mut out = vec![DMatrix::zeros(0, 0); depth];
            let top = sign * 2 * depth as i64;
            out[depth - 1] = invert(&r_block(hill, beta, top), top)?;
            for k in (1..depth).rev() {
                let h = sign * 2 * k as i64;
                let m = r_block(hill, beta, h) - q * &out[k] * q;
                out[k - 1] = invert(&m, h)?;
            }
            Ok(out)
        };
        let up = chain(1)?;
        let down = chain(-1)?;
        let y = r_block(hill, beta, 0) - q * &down[0] * q - q * &up[0] * q;
        Ok(Self {
            beta,
            y: symmetrize(y),
            q2: q.clone(),
            chains: Chains::Tridiagonal { up, down },
        })
    }

    fn build_paired(hill: &HillSystem, beta: f64, depth: usize) -> Result<Self> {
        let f = hill.dim();
        let (q2, q4) = (hill.q2(), hill.q4());
        let levels = depth / 2 + 1;
        let m_block = |k: i64| -> DMatrix<f64> {
            let mut m = DMatrix::zeros(2 * f, 2 * f);
            m.view_mut((0, 0), (f, f))
                .copy_from(&r_block(hill, beta, 4 * k - 2));
            m.view_mut((f, f), (f, f))
                .copy_from(&r_block(hill, beta, 4 * k));
            m.view_mut((0, f), (f, f)).copy_from(&(-q2));
            m.view_mut((f, 0), (f, f)).copy_from(&(-q2));
            m
        };
        let mut l = DMatrix::zeros(2 * f, 2 * f);
        l.view_mut((0, 0), (f, f)).copy_from(q4);
        l.view_mut((f, f), (f, f)).copy_from(q4);
        l.view_mut((0, f), (f, f)).copy_from(q2);
        let lt = l.transpose();

        let mut up = vec![DMatrix::zeros(0, 0); levels];
        let top = levels as i64;
        up[levels - 1] = invert(&m_block(top), 4 * top)?;
        for k in (1..levels).rev() {
            let m = m_block(k as i64) - &lt * &up[k] * &l;
            up[k - 1] = invert(&m, 4 * k as i64)?;
        }
        let mut down = vec![DMatrix::zeros(0, 0); levels];
        down[levels - 1] = invert(&m_block(-top), -4 * top)?;
        for k in (1..levels).rev() {
            let m = m_block(-(k as i64)) - &l * &down[k] * &lt;
            down[k - 1] = invert(&m, -4 * k as i64)?;
        }
        let z = m_block(0) - &l * &down[0] * &lt - &lt * &up[0] * &l;
        let z11 = z.view((0, 0), (f, f)).into_owned();
        let z12 = z.view((0, f), (f, f)).into_owned();
        let z21 = z.view((f, 0), (f, f)).into_owned();
        let z22 = z.view((f, f), (f, f)).into_owned();
        let z11_inv = invert(&z11, -2)?;
        let lower = -(&z11_inv * &z12);
        let y = z22 + &z21 * &lower;
        Ok(Self {
            beta,
            y: symmetrize(y),
            q2: q2.clone(),
            chains: Chains::Paired { up, down, l, lower },
        })
    }

    pub fn determinant(&self) -> f64 {
        self.y.determinant()
    }

    /// Ladder `C_2n` for `|n| <= n_max` generated from `C_0 = c0`.
    pub fn ladder(&self, c0: &DVector<f64>, n_max: usize) -> BTreeMap<i64, DVector<f64>> {
        let f = c0.len();
        let mut out = BTreeMap::new();
        out.insert(0, c0.clone());
        match &self.chains {
            Chains::Tridiagonal { up, down } => {
                for (chain, sign) in [(up, 1i64), (down, -1i64)] {
                    let mut prev = c0.clone();
                    for n in 1..=n_max {
                        let c = match chain.get(n - 1) {
                            Some(t) => t * (&self.q2 * &prev),
                            None => DVector::zeros(f),
                        };
                        out.insert(sign * 2 * n as i64, c.clone());
                        prev = c;
                    }
                }
            }
            Chains::Paired { up, down, l, lower } => {
                let mut x0 = DVector::zeros(2 * f);
                x0.rows_mut(0, f).copy_from(&(lower * c0));
                x0.rows_mut(f, f).copy_from(c0);
                out.insert(-2, x0.rows(0, f).into_owned());
                let lt = l.transpose();
                let mut x = x0.clone();
                for (k, s) in up.iter().enumerate() {
                    x = s * (l * &x);
                    let k = k as i64 + 1;
                    out.insert(4 * k - 2, x.rows(0, f).into_owned());
                    out.insert(4 * k, x.rows(f, f).into_owned());
                }
                let mut x = x0;
                for (k, s) in down.iter().enumerate() {
                    x = s * (&lt * &x);
                    let k = -(k as i64 + 1);
                    out.insert(4 * k - 2, x.rows(0, f).into_owned());
                    out.insert(4 * k, x.rows(f, f).into_owned());
                }
            }
        }
        let lim = 2 * n_max as i64;
        let mut out: BTreeMap<i64, DVector<f64>> =
            out.into_iter().filter(|(k, _)| k.abs() <= lim).collect();
        for n in -(n_max as i64)..=n_max as i64 {
            out.entry(2 * n).or_insert_with(|| DVector::zeros(f));
        }
        out
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `(det Y_beta, Y_beta)` at the given truncation depth.
pub fn y_determinant(hill: &HillSystem, beta: f64, depth: usize) -> Result<(f64, DMatrix<f64>)> {
    if depth < 5 {
        return Err(Error::InvalidConfig(format!(
            "expansion depth {depth} below 5"
        )));
    }
    let e = Expansion::new(hill, beta, depth)?;
    Ok((e.determinant(), e.y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoupled_harmonic_limit() {
        let h = HillSystem::diagonal(&[0.09, 0.25], &[0.0, 0.0]).unwrap();
        let (det, y) = y_determinant(&h, 0.2, 10).unwrap();
        assert!((det - (0.09 - 0.04) * (0.25 - 0.04)).abs() < 1e-15);
        assert!((y[(0, 1)]).abs() < 1e-15);
        let (det, _) = y_determinant(&h, 0.3, 10).unwrap();
        assert!(det.abs() < 1e-15);
    }

    #[test]
    fn y_is_symmetric() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, 0.02, 0.0, 0.02, 0.2, 0.01, 0.0, 0.01, 0.05]);
        let q = DMatrix::from_row_slice(3, 3, &[0.3, 0.05, 0.01, 0.05, -0.2, 0.0, 0.01, 0.0, 0.1]);
        let q4 =
            DMatrix::from_row_slice(3, 3, &[0.01, 0.0, 0.002, 0.0, 0.0, 0.0, 0.002, 0.0, -0.01]);
        let labels: Vec<String> = (0..3).map(|k| k.to_string()).collect();
        let h = HillSystem::new(a, q, q4, labels).unwrap();
        for beta in [0.11, 0.37, 0.73] {
            let e = Expansion::new(&h, beta, 20).unwrap();
            assert!((&e.y - e.y.transpose()).amax() < 1e-10);
        }
    }

    #[test]
    fn paired_recursion_reduces_to_tridiagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.02, 0.02, 0.2]);
        let q = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, -0.2]);
        let h = HillSystem::new(a, q, DMatrix::zeros(2, 2), vec!["u".into(), "v".into()]).unwrap();
        for beta in [0.13, 0.42, 0.88] {
            let t = Expansion::new(&h, beta, 20).unwrap();
            let p = Expansion::paired(&h, beta, 20).unwrap();
            assert!((&t.y - &p.y).amax() < 1e-13, "beta {beta}");
            let c0 = DVector::from_vec(vec![0.6, 0.8]);
            let lt = t.ladder(&c0, 6);
            let lp = p.ladder(&c0, 6);
            for (k, v) in &lt {
                assert!((v - &lp[k]).amax() < 1e-13, "harmonic {k}");
            }
        }
    }

    #[test]
    fn singular_level_is_reported() {
        // R_2 = 0.09 - (2 + beta)^2 vanishes at beta = -1.7; R_-2 at beta = 1.7.
        let h = HillSystem::diagonal(&[0.09], &[0.0]).unwrap();
        let err = Expansion::new(&h, 1.7, 5).unwrap_err();
        assert!(
            matches!(err, Error::ExpansionBreakdown { level: -2, .. }),
            "{err:?}"
        );
    }
}
