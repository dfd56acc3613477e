//! Coulomb Hessian along a periodic orbit and the coupled Hill system
//! `u'' + [A - 2 Q2 cos 2t - 2 Q4 cos 4t] u = 0`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::orbit::PeriodicOrbit;
use crate::trap::{TrapConfig, AXES, COINCIDENCE_THRESHOLD};

/// Samples per period used to project the Hessian onto its harmonics.
pub const HESSIAN_SAMPLES: usize = 512;

const SYMMETRY_TOL: f64 = 1e-12;

/// Second derivatives of `sum_{i<j} 1/|R_i - R_j|`, index `3 i + alpha`.
pub fn coulomb_hessian(positions: &[Vector3<f64>]) -> Result<DMatrix<f64>> {
    let n = positions.len();
    let mut k = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for j in i + 1..n {
            let d = positions[i] - positions[j];
            let r = d.norm();
            if !(r >= COINCIDENCE_THRESHOLD) {
                return Err(Error::SingularConfiguration { i, j, distance: r });
            }
            let r3 = 1.0 / (r * r * r);
            let r5 = 3.0 * r3 / (r * r);
            for s in 0..3 {
                for t in 0..3 {
                    let p = r5 * (d[s] * d[t]) - if s == t { r3 } else { 0.0 };
                    k[(3 * i + s, 3 * i + t)] += p;
                    k[(3 * j + s, 3 * j + t)] += p;
                    k[(3 * i + s, 3 * j + t)] = -p;
                    k[(3 * j + s, 3 * i + t)] = -p;
                }
            }
        }
    }
    Ok(k)
}

/// Harmonics `K_{2n}` of the Hessian along the orbit, with
/// `K(t) = K_0 - 2 K_2 cos 2t - 2 K_4 cos 4t - ...`.
pub fn hessian_harmonics(
    orbit: &PeriodicOrbit,
    harmonics: &[u32],
) -> Result<BTreeMap<u32, DMatrix<f64>>> {
    for &h in harmonics {
        if h % 2 != 0 {
            return Err(Error::InvalidConfig(format!("harmonic {h} is not even")));
        }
    }
    let m = HESSIAN_SAMPLES;
    let dim = 3 * orbit.n_ions();
    let partial: Vec<Vec<DMatrix<f64>>> = (0..m)
        .into_par_iter()
        .map(|s| {
            let t = PI * s as f64 / m as f64;
            let k = coulomb_hessian(&orbit.position(t))?;
            Ok(harmonics
                .iter()
                .map(|&h| {
                    let w = if h == 0 { 1.0 } else { -(h as f64 * t).cos() };
                    &k * w
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for (idx, &h) in harmonics.iter().enumerate() {
        let mut acc = DMatrix::zeros(dim, dim);
        for p in &partial {
            acc += &p[idx];
        }
        acc /= m as f64;
        out.insert(h, symmetrize(acc));
    }
    Ok(out)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Symmetric coefficient matrices of a coupled Hill equation.
#[derive(Debug, Clone, PartialEq)]
pub struct HillSystem {
    a: DMatrix<f64>,
    q2: DMatrix<f64>,
    q4: DMatrix<f64>,
    labels: Vec<String>,
}

impl HillSystem {
    pub fn new(
        a: DMatrix<f64>,
        q2: DMatrix<f64>,
        q4: DMatrix<f64>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let f = a.nrows();
        for m in [&a, &q2, &q4] {
            if m.nrows() != f || m.ncols() != f {
                return Err(Error::DimensionMismatch {
                    expected: f,
                    got: m.ncols(),
                });
            }
            let asym = (m - m.transpose()).amax();
            if !(asym <= SYMMETRY_TOL * m.amax().max(1.0)) {
                return Err(Error::InvalidConfig(format!(
                    "Hill matrix not symmetric (defect {asym:e})"
                )));
            }
        }
        if labels.len() != f {
            return Err(Error::DimensionMismatch {
                expected: f,
                got: labels.len(),
            });
        }
        Ok(Self {
            a: symmetrize(a),
            q2: symmetrize(q2),
            q4: symmetrize(q4),
            labels,
        })
    }

    pub fn diagonal(a: &[f64], q: &[f64]) -> Result<Self> {
        if a.len() != q.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: q.len(),
            });
        }
        let f = a.len();
        Self::new(
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(a)),
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(q)),
            DMatrix::zeros(f, f),
            (0..f).map(|k| format!("u{k}")).collect(),
        )
    }

    /// Scalar Mathieu equation `u'' + (a - 2q cos 2t) u = 0`.
    pub fn scalar(a: f64, q: f64) -> Self {
        Self::diagonal(&[a], &[q]).expect("scalar system")
    }

    pub fn with_q4(mut self, q4: DMatrix<f64>) -> Result<Self> {
        self = Self::new(self.a, self.q2, q4, self.labels)?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q2(&self) -> &DMatrix<f64> {
        &self.q2
    }

    pub fn q4(&self) -> &DMatrix<f64> {
        &self.q4
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn has_q4(&self) -> bool {
        self.q4.amax() > 0.0
    }

    /// `A - 2 Q2 cos 2t - 2 Q4 cos 4t`.
    pub fn stiffness(&self, t: f64) -> DMatrix<f64> {
        &self.a - &self.q2 * (2.0 * (2.0 * t).cos()) - &self.q4 * (2.0 * (4.0 * t).cos())
    }

    pub fn to_json_value(&self) -> Value {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|r| m.row(r).iter().copied().collect())
                .collect()
        };
        json!({
            "dim": self.dim(),
            "A": rows(&self.a),
            "Q2": rows(&self.q2),
            "Q4": rows(&self.q4),
            "labels": self.labels,
        })
    }

    pub fn from_json_value(v: &Value) -> Result<Self> {
        let dim = v["dim"]
            .as_u64()
            .ok_or_else(|| Error::InvalidConfig("missing dim".into()))? as usize;
        let mat = |key: &str| -> Result<DMatrix<f64>> {
            let rows: Vec<Vec<f64>> = serde_json::from_value(v[key].clone())?;
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: rows.len(),
                });
            }
            Ok(DMatrix::from_fn(dim, dim, |r, c| rows[r][c]))
        };
        let labels: Vec<String> = serde_json::from_value(v["labels"].clone())?;
        Self::new(mat("A")?, mat("Q2")?, mat("Q4")?, labels)
    }
}

/// Coordinate labels `ion:axis` for an `n`-ion crystal.
pub fn coordinate_labels(n: usize) -> Vec<String> {
    (0..3 * n)
        .map(|k| format!("{}:{}", k / 3, AXES[k % 3]))
        .collect()
}

/// `A = diag(a) + eps K_0`, `Q2 = diag(q) + eps K_2`, `Q4 = eps K_4`.
pub fn assemble_hill(
    config: &TrapConfig,
    harmonics: &BTreeMap<u32, DMatrix<f64>>,
) -> Result<HillSystem> {
    let k0 = harmonics
        .get(&0)
        .ok_or_else(|| Error::InvalidConfig("Hessian harmonic 0 missing".into()))?;
    let k2 = harmonics
        .get(&2)
        .ok_or_else(|| Error::InvalidConfig("Hessian harmonic 2 missing".into()))?;
    let dim = k0.nrows();
    if dim != 3 * config.n_ions() {
        return Err(Error::DimensionMismatch {
            expected: 3 * config.n_ions(),
            got: dim,
        });
    }
    let eps = config.epsilon();
    let (a, q) = (config.a(), config.q());
    let diag = |v: [f64; 3]| DMatrix::from_fn(dim, dim, |r, c| if r == c { v[r % 3] } else { 0.0 });
    let q4 = harmonics
        .get(&4)
        .map(|k| k * eps)
        .unwrap_or_else(|| DMatrix::zeros(dim, dim));
    HillSystem::new(
        diag(a) + k0 * eps,
        diag(q) + k2 * eps,
        q4,
        coordinate_labels(config.n_ions()),
    )
}

/// Hill system about an orbit with Hessian harmonics `K_0`, `K_2`, `K_4`.
pub fn linearize(config: &TrapConfig, orbit: &PeriodicOrbit) -> Result<HillSystem> {
    assemble_hill(config, &hessian_harmonics(orbit, &[0, 2, 4])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trap::coulomb_field;
    use proptest::prelude::*;

    #[test]
    fn axial_pair_blocks() {
        let d = 1.3;
        let k = coulomb_hessian(&[Vector3::new(0.0, 0.0, 0.0), Vector3::new(d, 0.0, 0.0)]).unwrap();
        let d3 = d * d * d;
        assert!((k[(0, 0)] - 2.0 / d3).abs() < 1e-14);
        assert!((k[(0, 3)] + 2.0 / d3).abs() < 1e-14);
        assert!((k[(1, 1)] + 1.0 / d3).abs() < 1e-14);
        assert!((k[(1, 4)] - 1.0 / d3).abs() < 1e-14);
        let tr: f64 = (0..3).map(|s| k[(s, 3 + s)]).sum();
        assert!(tr.abs() < 1e-14);
    }

    fn config_strategy() -> impl Strategy<Value = Vec<Vector3<f64>>> {
        prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 2..6)
            .prop_map(|v| v.into_iter().map(Vector3::from).collect::<Vec<_>>())
            .prop_filter("distinct", |p| {
                (0..p.len()).all(|i| (i + 1..p.len()).all(|j| (p[i] - p[j]).norm() > 0.2))
            })
    }

    proptest! {
        #[test]
        fn hessian_row_sums_and_pair_traces(p in config_strategy()) {
            let n = p.len();
            let k = coulomb_hessian(&p).unwrap();
            let scale = k.amax().max(1.0);
            for i in 0..n {
                for s in 0..3 {
                    for t in 0..3 {
                        let sum: f64 = (0..n).map(|j| k[(3 * i + s, 3 * j + t)]).sum();
                        prop_assert!(sum.abs() < 1e-12 * scale);
                    }
                }
                for j in 0..n {
                    if i != j {
                        let tr: f64 = (0..3).map(|s| k[(3 * i + s, 3 * j + s)]).sum();
                        prop_assert!(tr.abs() < 1e-12 * scale);
                    }
                }
            }
            prop_assert!((&k - k.transpose()).amax() == 0.0);
        }

        #[test]
        fn hessian_is_the_negative_force_jacobian(p in config_strategy()) {
            let k = coulomb_hessian(&p).unwrap();
            let h = 1e-5;
            for c in 0..3 * p.len() {
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus[c / 3][c % 3] += h;
                minus[c / 3][c % 3] -= h;
                let fp = coulomb_field(&plus).unwrap();
                let fm = coulomb_field(&minus).unwrap();
                for r in 0..3 * p.len() {
                    let fd = -(fp[r / 3][r % 3] - fm[r / 3][r % 3]) / (2.0 * h);
                    prop_assert!((fd - k[(r, c)]).abs() <= 1e-6 * k.amax().max(1.0));
                }
            }
        }
    }

    #[test]
    fn single_ion_hill_is_the_trap() {
        let c = TrapConfig::linear(1, -0.01, 0.3, 5.0).unwrap();
        let zero = DMatrix::zeros(3, 3);
        let h: BTreeMap<u32, DMatrix<f64>> =
            [(0, zero.clone()), (2, zero.clone()), (4, zero)].into();
        let hill = assemble_hill(&c, &h).unwrap();
        assert_eq!(hill.a()[(0, 0)], 0.02);
        assert_eq!(hill.q2()[(1, 1)], 0.3);
        assert_eq!(hill.q2()[(2, 2)], -0.3);
        assert!(!hill.has_q4());
    }

    #[test]
    fn hill_json_round_trip() {
        let q4 = DMatrix::from_row_slice(2, 2, &[0.0, 0.01, 0.01, 0.0]);
        let h = HillSystem::diagonal(&[0.1, 0.2], &[0.3, -0.1])
            .unwrap()
            .with_q4(q4)
            .unwrap();
        let back = HillSystem::from_json_value(&h.to_json_value()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn rejects_asymmetric_matrices() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let z = DMatrix::zeros(2, 2);
        assert!(HillSystem::new(a, z.clone(), z, vec!["a".into(), "b".into()]).is_err());
    }
}
