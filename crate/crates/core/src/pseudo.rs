//! Static pseudopotential equilibrium, its normal modes and the rf coupling
//! of the pseudopotential-mode expansion.
//!
//! Pseudopotential units scale the trap so that `gamma_x = 1`. A basis built
//! from a [`TrapConfig`] remembers the length scale that maps back to trap units.

use nalgebra::{DMatrix, DVector, Vector3};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{canonical_basis, clusters, fix_sign, sym_eigen_sorted};
use crate::linearization::coulomb_hessian;
use crate::trap::{coulomb_energy, coulomb_field, TrapConfig};

const GRADIENT_TOL: f64 = 1e-10;
const SADDLE_TOL: f64 = -1e-8;
const DEGENERACY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoConfig {
    gamma: [f64; 3],
    n_ions: usize,
}

impl PseudoConfig {
    pub fn new(gamma_y: f64, gamma_z: f64, n_ions: usize) -> Result<Self> {
        if !(gamma_y > 0.0 && gamma_z > 0.0 && gamma_y.is_finite() && gamma_z.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive, got ({gamma_y}, {gamma_z})"
            )));
        }
        if n_ions == 0 {
            return Err(Error::InvalidConfig("n_ions must be positive".into()));
        }
        Ok(Self {
            gamma: [1.0, gamma_y, gamma_z],
            n_ions,
        })
    }

    /// Pseudopotential of a trap, `gamma_alpha ~ (a_alpha + q_alpha^2 / 2) / eps`,
    /// normalized to `gamma_x = 1`. Returns the config and the length scale
    /// `s` such that trap-unit positions are `s` times pseudopotential-unit positions.
    pub fn from_trap(config: &TrapConfig) -> Result<(Self, f64)> {
        let (a, q, eps) = (config.a(), config.q(), config.epsilon());
        let raw = [0, 1, 2].map(|k| (a[k] + 0.5 * q[k] * q[k]) / eps);
        if raw.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "pseudopotential is not confining: gamma = {raw:?}"
            )));
        }
        let s = raw[0].powf(-1.0 / 3.0);
        Ok((
            Self::new(raw[1] / raw[0], raw[2] / raw[0], config.n_ions())?,
            s,
        ))
    }

    pub fn gamma(&self) -> [f64; 3] {
        self.gamma
    }

    pub fn n_ions(&self) -> usize {
        self.n_ions
    }

    pub fn energy(&self, positions: &[Vector3<f64>]) -> Result<f64> {
        let trap: f64 = positions
            .iter()
            .map(|r| 0.5 * (0..3).map(|k| self.gamma[k] * r[k] * r[k]).sum::<f64>())
            .sum();
        Ok(trap + coulomb_energy(positions)?)
    }

    pub fn gradient(&self, positions: &[Vector3<f64>]) -> Result<DVector<f64>> {
        let f = coulomb_field(positions)?;
        Ok(DVector::from_fn(3 * positions.len(), |c, _| {
            let (i, k) = (c / 3, c % 3);
            self.gamma[k] * positions[i][k] - f[i][k]
        }))
    }

    pub fn hessian(&self, positions: &[Vector3<f64>]) -> Result<DMatrix<f64>> {
        let mut h = coulomb_hessian(positions)?;
        for c in 0..h.nrows() {
            h[(c, c)] += self.gamma[c % 3];
        }
        Ok(h)
    }
}

/// Seed positions on a Fibonacci sphere with polar axis `x`.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    if n == 1 {
        return vec![Vector3::zeros()];
    }
    let radius = 0.7 * (n as f64).cbrt();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let x = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let rho = (1.0 - x * x).sqrt();
            let phi = golden * k as f64;
            radius * Vector3::new(x, rho * phi.cos(), rho * phi.sin())
        })
        .collect()
}

fn offset(p: &[Vector3<f64>], d: &DVector<f64>, alpha: f64) -> Vec<Vector3<f64>> {
    p.iter()
        .enumerate()
        .map(|(i, r)| r + alpha * Vector3::new(d[3 * i], d[3 * i + 1], d[3 * i + 2]))
        .collect()
}

/// Local minimum of the pseudopotential energy, by backtracking descent
/// followed by a Newton iteration with line search.
pub fn find_equilibrium(pseudo: &PseudoConfig, seed: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    if seed.len() != pseudo.n_ions() {
        return Err(Error::DimensionMismatch {
            expected: pseudo.n_ions(),
            got: seed.len(),
        });
    }
    crate::trap::check_distinct(seed)?;
    let energy = |p: &[Vector3<f64>]| pseudo.energy(p).unwrap_or(f64::INFINITY);
    let mut p = seed.to_vec();
    let mut g = pseudo.gradient(&p)?;
    let mut e = energy(&p);

    let mut alpha = 0.1;
    let mut iterations = 0;
    while g.norm() > 1e-3 && iterations < 20_000 {
        iterations += 1;
        let gg = g.norm_squared();
        loop {
            let trial = offset(&p, &g, -alpha);
            let et = energy(&trial);
            if et <= e - 1e-4 * alpha * gg {
                p = trial;
                e = et;
                alpha = (alpha * 2.0).min(1.0);
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                return Err(Error::ConvergenceFailure {
                    iterations,
                    gradient_norm: g.norm(),
                });
            }
        }
        g = pseudo.gradient(&p)?;
    }

    for _ in 0..200 {
        iterations += 1;
        if g.norm() < GRADIENT_TOL {
            break;
        }
        let h = pseudo.hessian(&p)?;
        let (vals, vecs) = sym_eigen_sorted(&h);
        let mut step = DVector::zeros(g.len());
        for k in 0..vals.len() {
            let lam = vals[k].abs();
            if lam > 1e-10 {
                let v = vecs.column(k);
                step -= v * (v.dot(&g) / lam);
            }
        }
        let slope = g.dot(&step);
        let mut a = 1.0;
        let mut accepted = false;
        while a > 1e-10 {
            let trial = offset(&p, &step, a);
            let et = energy(&trial);
            if et.is_finite() {
                let gt = pseudo.gradient(&trial)?;
                if et <= e + 1e-4 * a * slope || gt.norm() < g.norm() {
                    p = trial;
                    e = et;
                    g = gt;
                    accepted = true;
                    break;
                }
            }
            a *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if g.norm() >= GRADIENT_TOL {
        return Err(Error::ConvergenceFailure {
            iterations,
            gradient_norm: g.norm(),
        });
    }
    let (vals, _) = sym_eigen_sorted(&pseudo.hessian(&p)?);
    if vals[0] < SADDLE_TOL {
        return Err(Error::SaddlePoint {
            eigenvalue: vals[0],
        });
    }
    Ok(p)
}

/// Normal modes about a pseudopotential equilibrium.
#[derive(Debug, Clone)]
pub struct NormalModeBasis {
    /// Equilibrium positions in pseudopotential units.
    pub equilibrium: Vec<Vector3<f64>>,
    /// Orthogonal; column `j` is the mode vector `D^j`, index `3 i + alpha`.
    pub mode_matrix: DMatrix<f64>,
    /// Ascending, pseudopotential units.
    pub frequencies: DVector<f64>,
    /// `None` for a crystal sitting at the origin.
    pub breathing_index: Option<usize>,
    pub xi_b: f64,
    pub gamma: [f64; 3],
    pub length_scale: f64,
}

impl NormalModeBasis {
    pub fn n_ions(&self) -> usize {
        self.equilibrium.len()
    }

    pub fn equilibrium_flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.n_ions(),
            self.equilibrium.iter().flat_map(|r| [r[0], r[1], r[2]]),
        )
    }

    /// Equilibrium positions in trap units.
    pub fn equilibrium_trap_units(&self) -> Vec<Vector3<f64>> {
        self.equilibrium
            .iter()
            .map(|r| r * self.length_scale)
            .collect()
    }

    /// `||D^b - R0 / xi_b||`, zero when the breathing mode is exactly radial.
    pub fn breathing_deviation(&self) -> Option<f64> {
        let b = self.breathing_index?;
        let r0 = self.equilibrium_flat() / self.xi_b;
        Some((self.mode_matrix.column(b) - r0).norm())
    }

    /// `||D^T D - I||_max`.
    pub fn completeness_defect(&self) -> f64 {
        let n = self.mode_matrix.ncols();
        (self.mode_matrix.transpose() * &self.mode_matrix - DMatrix::identity(n, n)).amax()
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "equilibrium": self.equilibrium.iter().map(|r| [r[0], r[1], r[2]]).collect::<Vec<_>>(),
            "frequencies": self.frequencies.as_slice(),
            "modes": self.mode_matrix.column_iter().map(|c| c.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "gamma": self.gamma,
            "breathing_index": self.breathing_index,
            "length_scale": self.length_scale,
        })
    }
}

/// Diagonalizes the pseudopotential Hessian at `equilibrium`.
pub fn normal_modes(
    pseudo: &PseudoConfig,
    equilibrium: &[Vector3<f64>],
) -> Result<NormalModeBasis> {
    normal_modes_scaled(pseudo, equilibrium, 1.0)
}

pub fn normal_modes_scaled(
    pseudo: &PseudoConfig,
    equilibrium: &[Vector3<f64>],
    length_scale: f64,
) -> Result<NormalModeBasis> {
    let h = pseudo.hessian(equilibrium)?;
    let (vals, mut vecs) = sym_eigen_sorted(&h);
    if vals[0] < SADDLE_TOL {
        return Err(Error::SaddlePoint {
            eigenvalue: vals[0],
        });
    }
    let freqs: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    for range in clusters(&freqs, DEGENERACY_TOL) {
        if range.len() == 1 {
            let mut v = vecs.column(range.start).into_owned();
            fix_sign(&mut v);
            vecs.set_column(range.start, &v);
        } else {
            let sub = vecs.columns(range.start, range.len()).into_owned();
            vecs.columns_mut(range.start, range.len())
                .copy_from(&canonical_basis(&sub));
        }
    }
    let r0 = DVector::from_iterator(
        3 * equilibrium.len(),
        equilibrium.iter().flat_map(|r| [r[0], r[1], r[2]]),
    );
    let xi_b = r0.norm();
    let breathing_index = if xi_b > 1e-12 {
        let b = (0..vecs.ncols())
            .max_by(|&i, &j| {
                vecs.column(i)
                    .dot(&r0)
                    .abs()
                    .total_cmp(&vecs.column(j).dot(&r0).abs())
            })
            .expect("non-empty basis");
        if vecs.column(b).dot(&r0) < 0.0 {
            vecs.column_mut(b).neg_mut();
        }
        Some(b)
    } else {
        None
    };
    Ok(NormalModeBasis {
        equilibrium: equilibrium.to_vec(),
        mode_matrix: vecs,
        frequencies: DVector::from_vec(freqs),
        breathing_index,
        xi_b,
        gamma: pseudo.gamma(),
        length_scale,
    })
}

/// Equilibrium and modes of a trap's pseudopotential, from the default seed.
pub fn trap_normal_modes(config: &TrapConfig) -> Result<NormalModeBasis> {
    let (pseudo, s) = PseudoConfig::from_trap(config)?;
    let eq = find_equilibrium(&pseudo, &fibonacci_sphere(config.n_ions()))?;
    normal_modes_scaled(&pseudo, &eq, s)
}

/// rf coupling of the pseudopotential modes,
/// `Theta'' + [A - 2 Q cos 2t] Theta = G + 2 F cos 2t`.
#[derive(Debug, Clone)]
pub struct ModeCouplingSet {
    pub a_modes: DMatrix<f64>,
    pub q_modes: DMatrix<f64>,
    pub g_vec: DVector<f64>,
    pub f_vec: DVector<f64>,
}

pub fn mode_coupling(config: &TrapConfig, basis: &NormalModeBasis) -> Result<ModeCouplingSet> {
    let f = 3 * config.n_ions();
    if basis.mode_matrix.nrows() != f {
        return Err(Error::DimensionMismatch {
            expected: f,
            got: basis.mode_matrix.nrows(),
        });
    }
    let eps = config.epsilon();
    let (a, q) = (config.a(), config.q());
    let s = basis.length_scale;
    let g_raw = basis.gamma.map(|g| g / (s * s * s));
    let detune = DVector::from_fn(f, |c, _| a[c % 3] - eps * g_raw[c % 3]);
    let qd = DVector::from_fn(f, |c, _| q[c % 3]);
    let d = &basis.mode_matrix;
    let r0 = basis.equilibrium_flat() * s;
    let omega2 = basis.frequencies.map(|w| w * w / (s * s * s));
    let a_modes = DMatrix::from_diagonal(&(omega2 * eps))
        + d.transpose() * DMatrix::from_diagonal(&detune) * d;
    let q_modes = d.transpose() * DMatrix::from_diagonal(&qd) * d;
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    Ok(ModeCouplingSet {
        a_modes: sym(a_modes),
        q_modes: sym(q_modes),
        g_vec: -(d.transpose() * detune.component_mul(&r0)),
        f_vec: d.transpose() * qd.component_mul(&r0),
    })
}

/// Decoupled Mathieu equation of one mode,
/// `Theta'' + (a_eff - 2 q_eff cos 2t) Theta = drive_static + 2 drive_rf cos 2t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeMathieu {
    pub a_eff: f64,
    pub q_eff: f64,
    pub drive_static: f64,
    pub drive_rf: f64,
}

pub fn symmetric_mode_mathieu(
    config: &TrapConfig,
    basis: &NormalModeBasis,
    mode: usize,
) -> Result<ModeMathieu> {
    let c = mode_coupling(config, basis)?;
    let f = c.a_modes.nrows();
    if mode >= f {
        return Err(Error::DimensionMismatch {
            expected: f,
            got: mode,
        });
    }
    let coupling = (0..f)
        .filter(|&k| k != mode)
        .map(|k| c.q_modes[(mode, k)].abs().max(c.a_modes[(mode, k)].abs()))
        .fold(0.0, f64::max);
    if coupling > 1e-8 {
        return Err(Error::NotDecoupled { mode, coupling });
    }
    Ok(ModeMathieu {
        a_eff: c.a_modes[(mode, mode)],
        q_eff: c.q_modes[(mode, mode)],
        drive_static: c.g_vec[mode],
        drive_rf: c.f_vec[mode],
    })
}

/// Periodic particular solution `Theta(t) = Theta_0 + 2 sum_n Theta_2n cos 2nt`.
#[derive(Debug, Clone)]
pub struct DrivenResponse {
    /// `coefficients[n]` is `Theta_{2n}`.
    pub coefficients: Vec<DVector<f64>>,
}

impl DrivenResponse {
    pub fn theta(&self, t: f64) -> DVector<f64> {
        let mut out = self.coefficients[0].clone();
        for (n, c) in self.coefficients.iter().enumerate().skip(1) {
            out += c * (2.0 * (2.0 * n as f64 * t).cos());
        }
        out
    }

    pub fn theta_dot(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.coefficients[0].len());
        for (n, c) in self.coefficients.iter().enumerate().skip(1) {
            let w = 2.0 * n as f64;
            out -= c * (2.0 * w * (w * t).sin());
        }
        out
    }
}

/// Harmonic balance of the driven mode equations keeping harmonics
/// `0, 2, ..., max_harmonic`.
pub fn driven_response(coupling: &ModeCouplingSet, max_harmonic: u32) -> Result<DrivenResponse> {
    let f = coupling.a_modes.nrows();
    let nh = (max_harmonic / 2) as usize + 1;
    let dim = nh * f;
    let mut m = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let a = &coupling.a_modes;
    let q = &coupling.q_modes;
    for n in 0..nh {
        let shift = 4.0 * (n * n) as f64;
        let mut diag = a.clone();
        for k in 0..f {
            diag[(k, k)] -= shift;
        }
        m.view_mut((n * f, n * f), (f, f)).copy_from(&diag);
        if n + 1 < nh {
            let w = if n == 0 { 2.0 } else { 1.0 };
            m.view_mut((n * f, (n + 1) * f), (f, f))
                .copy_from(&(-q * w));
        }
        if n >= 1 {
            m.view_mut((n * f, (n - 1) * f), (f, f)).copy_from(&(-q));
        }
    }
    rhs.rows_mut(0, f).copy_from(&coupling.g_vec);
    if nh > 1 {
        rhs.rows_mut(f, f).copy_from(&coupling.f_vec);
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    let rcond = if smax > 0.0 { sv.min() / smax } else { 0.0 };
    if !(rcond > 1e-13) {
        return Err(Error::ResonantDrive { rcond });
    }
    let x = m.lu().solve(&rhs).ok_or(Error::ResonantDrive { rcond })?;
    Ok(DrivenResponse {
        coefficients: (0..nh).map(|n| x.rows(n * f, f).into_owned()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axial_pair() -> (PseudoConfig, Vec<Vector3<f64>>) {
        let p = PseudoConfig::new(25.0, 25.0, 2).unwrap();
        let seed = vec![Vector3::new(0.5, 0.0, 0.0), Vector3::new(-0.7, 0.0, 0.0)];
        (p, seed)
    }

    #[test]
    fn two_ion_equilibrium() {
        let (p, seed) = axial_pair();
        let eq = find_equilibrium(&p, &seed).unwrap();
        let u = 0.25f64.cbrt();
        assert!((eq[0][0] - u).abs() < 1e-10);
        assert!((eq[1][0] + u).abs() < 1e-10);
        assert!(p.gradient(&eq).unwrap().norm() < 1e-10);
    }

    #[test]
    fn single_ion_sits_at_origin() {
        let p = PseudoConfig::new(3.0, 5.0, 1).unwrap();
        let eq = find_equilibrium(&p, &[Vector3::new(0.3, -0.2, 0.1)]).unwrap();
        assert!(eq[0].norm() < 1e-12);
        let b = normal_modes(&p, &eq).unwrap();
        assert!((b.frequencies[0] - 1.0).abs() < 1e-14);
        assert!((b.frequencies[1] - 3f64.sqrt()).abs() < 1e-14);
        assert!((b.frequencies[2] - 5f64.sqrt()).abs() < 1e-14);
        assert!((b.mode_matrix.clone() - DMatrix::identity(3, 3)).amax() < 1e-14);
        assert_eq!(b.breathing_index, None);
    }

    #[test]
    fn two_ion_frequencies_and_breathing() {
        let (p, seed) = axial_pair();
        let eq = find_equilibrium(&p, &seed).unwrap();
        let b = normal_modes(&p, &eq).unwrap();
        let mut w: Vec<f64> = b.frequencies.iter().copied().collect();
        w.sort_by(f64::total_cmp);
        let expect = [1.0, 3f64.sqrt(), 24f64.sqrt(), 24f64.sqrt(), 5.0, 5.0];
        for (x, e) in w.iter().zip(expect) {
            assert!((x - e).abs() < 1e-10, "{x} vs {e}");
        }
        assert!(b.breathing_deviation().unwrap() < 1e-8);
        assert!(b.completeness_defect() < 1e-10);
    }

    #[test]
    fn saddle_is_detected() {
        // Two ions placed transversely in a trap that is much softer axially.
        let p = PseudoConfig::new(25.0, 25.0, 2).unwrap();
        let u = 0.01f64.cbrt();
        let eq = [Vector3::new(0.0, u, 0.0), Vector3::new(0.0, -u, 0.0)];
        assert!(p.gradient(&eq).unwrap().norm() < 1e-12);
        assert!(matches!(
            normal_modes(&p, &eq),
            Err(Error::SaddlePoint { .. })
        ));
    }

    #[test]
    fn single_ion_coupling_is_the_trap() {
        let c = TrapConfig::linear(1, -0.01, 0.3, 6.0).unwrap();
        let b = trap_normal_modes(&c).unwrap();
        let m = mode_coupling(&c, &b).unwrap();
        assert!(m.g_vec.amax() == 0.0 && m.f_vec.amax() == 0.0);
        for k in 0..3 {
            let eps = c.epsilon();
            let s = b.length_scale;
            let expect = eps * b.frequencies[k].powi(2) / s.powi(3) + c.a()[k]
                - eps * b.gamma[k] / s.powi(3);
            assert!((m.a_modes[(k, k)] - expect).abs() < 1e-14);
            assert!((m.a_modes[(k, k)] - c.a()[k]).abs() < 1e-14);
            assert!((m.q_modes[(k, k)] - c.q()[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn static_drive_balance() {
        let c = ModeCouplingSet {
            a_modes: DMatrix::from_element(1, 1, 0.1),
            q_modes: DMatrix::zeros(1, 1),
            g_vec: DVector::from_element(1, 0.1),
            f_vec: DVector::zeros(1),
        };
        let r = driven_response(&c, 4).unwrap();
        assert!((r.coefficients[0][0] - 1.0).abs() < 1e-14);
        assert!(r.coefficients[1][0].abs() < 1e-14);
    }

    #[test]
    fn resonant_drive_is_rejected() {
        let c = ModeCouplingSet {
            a_modes: DMatrix::from_element(1, 1, 4.0),
            q_modes: DMatrix::zeros(1, 1),
            g_vec: DVector::zeros(1),
            f_vec: DVector::from_element(1, 1.0),
        };
        assert!(matches!(
            driven_response(&c, 2),
            Err(Error::ResonantDrive { .. })
        ));
    }
}
