//! Floquet-Lyapunov transformation `Gamma(t) = [[U, U*], [V, V*]]` of a
//! stable Hill system and its closed-form inverse.
//!
//! Mode `j` evolves as `u_j(t) = e^{i beta_j t} U_j(t)` with `U_j` pi-periodic,
//! and `V_j` is the matching velocity factor, so that a phase-space solution
//! `(u, u')` reads `Gamma(t) e^{Bt} chi(0)` with `B = diag(i beta, -i beta)`.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Value};

use super::spectrum::FloquetMode;
use crate::error::{Error, Result};
use crate::linalg::{clusters, sym_eigen_sorted};

/// Exponents closer than this share a normalization block.
pub const CLUSTER_TOL: f64 = 1e-9;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone)]
pub struct FLTransform {
    betas: Vec<f64>,
    u_fourier: BTreeMap<i64, DMatrix<Complex64>>,
    v_fourier: BTreeMap<i64, DMatrix<Complex64>>,
    normalization_applied: bool,
}

fn series(coeffs: &BTreeMap<i64, DMatrix<Complex64>>, t: f64) -> DMatrix<Complex64> {
    let (r, c) = coeffs.values().next().map_or((0, 0), |m| m.shape());
    let mut out = DMatrix::zeros(r, c);
    for (&h, m) in coeffs {
        out += m * Complex64::from_polar(1.0, h as f64 * t);
    }
    out
}

fn velocity_coefficients(
    u: &BTreeMap<i64, DMatrix<Complex64>>,
    betas: &[f64],
) -> BTreeMap<i64, DMatrix<Complex64>> {
    u.iter()
        .map(|(&h, m)| {
            let mut v = m.clone();
            for (j, mut col) in v.column_iter_mut().enumerate() {
                col *= I * (h as f64 + betas[j]);
            }
            (h, v)
        })
        .collect()
}

/// Builds the transform from exactly `f` stable modes with ladders.
pub fn build_fl_transform(modes: &[FloquetMode]) -> Result<FLTransform> {
    let f = modes.len();
    let dim = modes
        .first()
        .and_then(|m| m.ladder.get(&0))
        .map(|c| c.len())
        .ok_or_else(|| Error::InvalidConfig("modes carry no ladders".into()))?;
    if dim != f {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: f,
        });
    }
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&i, &j| modes[i].beta.total_cmp(&modes[j].beta));
    let betas: Vec<f64> = order.iter().map(|&i| modes[i].beta).collect();
    if let Some(&b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
        return Err(Error::InvalidConfig(format!(
            "exponent {b} is not a stable exponent in (0, 1)"
        )));
    }
    let harmonics: Vec<i64> = modes[0].ladder.keys().copied().collect();
    let mut u: BTreeMap<i64, DMatrix<Complex64>> = BTreeMap::new();
    for &h in &harmonics {
        let mut m = DMatrix::zeros(f, f);
        for (col, &i) in order.iter().enumerate() {
            let c = modes[i]
                .ladder
                .get(&h)
                .ok_or_else(|| Error::InvalidConfig(format!("mode {i} lacks harmonic {h}")))?;
            if c.len() != f {
                return Err(Error::DimensionMismatch {
                    expected: f,
                    got: c.len(),
                });
            }
            m.set_column(col, c);
        }
        u.insert(h, m);
    }

    // N = -2i V(0)^T U(0); real symmetric for real ladders.
    let v = velocity_coefficients(&u, &betas);
    let n_complex = (series(&v, 0.0).transpose() * series(&u, 0.0)) * (-2.0 * I);
    let n = n_complex.map(|z| z.re);
    let n = (&n + n.transpose()) * 0.5;

    let mut scale = DMatrix::<f64>::zeros(f, f);
    for range in clusters(&betas, CLUSTER_TOL) {
        let k = range.len();
        let block = n.view((range.start, range.start), (k, k)).into_owned();
        let (vals, vecs) = sym_eigen_sorted(&block);
        if !(vals[0] > 0.0) {
            return Err(Error::DegenerateModePairing {
                beta: betas[range.start],
            });
        }
        let inv_sqrt =
            &vecs * DMatrix::from_diagonal(&vals.map(|l| l.powf(-0.5))) * vecs.transpose();
        scale
            .view_mut((range.start, range.start), (k, k))
            .copy_from(&inv_sqrt);
    }
    let scale = scale.map(|x| Complex64::new(x, 0.0));
    for m in u.values_mut() {
        *m = &*m * &scale;
    }

    // Phase: the largest entry of each C_0 is real and positive.
    if let Some(c0) = u.get(&0).cloned() {
        for j in 0..f {
            let col = c0.column(j);
            let idx = (0..f)
                .max_by(|&a, &b| col[a].norm().total_cmp(&col[b].norm()))
                .unwrap_or(0);
            let z = col[idx];
            if z.norm() > 0.0 {
                let phase = z.conj() / z.norm();
                for m in u.values_mut() {
                    let mut c = m.column_mut(j);
                    c *= phase;
                }
            }
        }
    }
    let v = velocity_coefficients(&u, &betas);
    Ok(FLTransform {
        betas,
        u_fourier: u,
        v_fourier: v,
        normalization_applied: true,
    })
}

impl FLTransform {
    pub fn dim(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn u_fourier(&self) -> &BTreeMap<i64, DMatrix<Complex64>> {
        &self.u_fourier
    }

    pub fn v_fourier(&self) -> &BTreeMap<i64, DMatrix<Complex64>> {
        &self.v_fourier
    }

    pub fn normalization_applied(&self) -> bool {
        self.normalization_applied
    }

    pub fn u(&self, t: f64) -> DMatrix<Complex64> {
        series(&self.u_fourier, t)
    }

    pub fn v(&self, t: f64) -> DMatrix<Complex64> {
        series(&self.v_fourier, t)
    }

    /// `max |V(0)^T U(0) - (i/2) I|`.
    pub fn normalization_defect(&self) -> f64 {
        let m = self.v(0.0).transpose() * self.u(0.0);
        let target = DMatrix::<Complex64>::identity(self.dim(), self.dim()) * (0.5 * I);
        (m - target).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn gamma(&self, t: f64) -> DMatrix<Complex64> {
        let f = self.dim();
        let (u, v) = (self.u(t), self.v(t));
        let mut g = DMatrix::zeros(2 * f, 2 * f);
        g.view_mut((0, 0), (f, f)).copy_from(&u);
        g.view_mut((0, f), (f, f)).copy_from(&u.map(|z| z.conj()));
        g.view_mut((f, 0), (f, f)).copy_from(&v);
        g.view_mut((f, f), (f, f)).copy_from(&v.map(|z| z.conj()));
        g
    }

    /// `[[i V^H, -i U^H], [-i V^T, i U^T]]`.
    pub fn gamma_inv(&self, t: f64) -> DMatrix<Complex64> {
        let f = self.dim();
        let (u, v) = (self.u(t), self.v(t));
        let mut g = DMatrix::zeros(2 * f, 2 * f);
        g.view_mut((0, 0), (f, f)).copy_from(&(v.adjoint() * I));
        g.view_mut((0, f), (f, f)).copy_from(&(u.adjoint() * -I));
        g.view_mut((f, 0), (f, f)).copy_from(&(v.transpose() * -I));
        g.view_mut((f, f), (f, f)).copy_from(&(u.transpose() * I));
        g
    }

    /// Diagonal of `e^{Bt}`.
    pub fn exp_b(&self, t: f64) -> DVector<Complex64> {
        let f = self.dim();
        DVector::from_fn(2 * f, |k, _| {
            let b = self.betas[k % f];
            Complex64::from_polar(1.0, if k < f { b * t } else { -b * t })
        })
    }

    /// Matrizant `Phi(t) = Gamma(t) e^{Bt} Gamma^-1(0)`.
    pub fn propagator(&self, t: f64) -> DMatrix<f64> {
        let mut g = self.gamma(t);
        for (k, e) in self.exp_b(t).iter().enumerate() {
            let mut col = g.column_mut(k);
            col *= *e;
        }
        (g * self.gamma_inv(0.0)).map(|z| z.re)
    }
}

/// Mode amplitudes and the reconstructed phase-space point at time `t`.
#[derive(Debug, Clone)]
pub struct ModeEvolution {
    pub chi: DVector<Complex64>,
    pub phase_space: DVector<f64>,
    /// Largest imaginary part discarded from the reconstruction.
    pub max_imag: f64,
}

pub fn evolve_modes(
    transform: &FLTransform,
    initial: &DVector<f64>,
    t: f64,
) -> Result<ModeEvolution> {
    let f = transform.dim();
    if initial.len() != 2 * f {
        return Err(Error::DimensionMismatch {
            expected: 2 * f,
            got: initial.len(),
        });
    }
    let chi0 = transform.gamma_inv(0.0) * initial.map(|x| Complex64::new(x, 0.0));
    let chi = chi0.component_mul(&transform.exp_b(t));
    let z = transform.gamma(t) * &chi;
    let max_imag = z.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    Ok(ModeEvolution {
        chi,
        phase_space: z.map(|c| c.re),
        max_imag,
    })
}

fn complex_pairs(v: &DVector<Complex64>) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

/// `{"betas", "kernel_dims", "ladders": {index: {harmonic: [[re, im], ...]}}}`.
pub fn mode_report(modes: &[FloquetMode]) -> Value {
    let ladders: serde_json::Map<String, Value> = modes
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let l: serde_json::Map<String, Value> = m
                .ladder
                .iter()
                .map(|(h, c)| (h.to_string(), json!(complex_pairs(c))))
                .collect();
            (j.to_string(), Value::Object(l))
        })
        .collect();
    json!({
        "betas": modes.iter().map(|m| m.beta).collect::<Vec<_>>(),
        "kernel_dims": modes.iter().map(|m| m.kernel_dim).collect::<Vec<_>>(),
        "ladders": ladders,
    })
}

/// Rebuilds modes from a [`mode_report`] document.
pub fn modes_from_report(v: &Value) -> Result<Vec<FloquetMode>> {
    let betas: Vec<f64> = serde_json::from_value(v["betas"].clone())?;
    let dims: Vec<usize> = serde_json::from_value(v["kernel_dims"].clone())?;
    if dims.len() != betas.len() {
        return Err(Error::DimensionMismatch {
            expected: betas.len(),
            got: dims.len(),
        });
    }
    betas
        .iter()
        .zip(&dims)
        .enumerate()
        .map(|(j, (&beta, &kernel_dim))| {
            let mut ladder = BTreeMap::new();
            if let Some(obj) = v["ladders"][j.to_string()].as_object() {
                for (h, c) in obj {
                    let h: i64 = h
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad harmonic key {h}")))?;
                    let pairs: Vec<[f64; 2]> = serde_json::from_value(c.clone())?;
                    ladder.insert(
                        h,
                        DVector::from_iterator(
                            pairs.len(),
                            pairs.iter().map(|p| Complex64::new(p[0], p[1])),
                        ),
                    );
                }
            }
            Ok(FloquetMode {
                beta,
                kernel_dim,
                ladder,
            })
        })
        .collect()
}

/// Samples of `Gamma(t)` as `t,row,col,re,im`.
pub fn write_gamma_csv<W: Write>(mut w: W, transform: &FLTransform, times: &[f64]) -> Result<()> {
    writeln!(w, "t,row,col,re,im")?;
    for &t in times {
        let g = transform.gamma(t);
        for r in 0..g.nrows() {
            for c in 0..g.ncols() {
                let z = g[(r, c)];
                writeln!(w, "{t:.16e},{r},{c},{:.16e},{:.16e}", z.re, z.im)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::spectrum::{solve_modes, FloquetOptions};
    use crate::integrator::{hill_fundamental_matrix, IntegratorSettings};
    use crate::linearization::HillSystem;
    use std::f64::consts::PI;

    fn oscillator(b0: f64) -> FLTransform {
        let h = HillSystem::scalar(b0 * b0, 0.0);
        let s = solve_modes(&h, &FloquetOptions::default()).unwrap();
        build_fl_transform(&s.modes).unwrap()
    }

    #[test]
    fn harmonic_oscillator_closed_form() {
        let b0 = 0.3;
        let t = oscillator(b0);
        let u0 = t.u(0.0)[(0, 0)];
        assert!((u0 - Complex64::new(1.0 / (2.0 * b0).sqrt(), 0.0)).norm() < 1e-12);
        assert!((t.v(0.0)[(0, 0)] - I * b0 * u0).norm() < 1e-12);
        assert!(t.normalization_defect() < 1e-12);
        for time in [0.0, 0.7, 5.0] {
            let e = evolve_modes(&t, &DVector::from_vec(vec![1.0, 0.0]), time).unwrap();
            assert!((e.phase_space[0] - (b0 * time).cos()).abs() < 1e-10);
            assert!(e.max_imag < 1e-12);
        }
    }

    #[test]
    fn zero_initial_condition_stays_zero() {
        let t = oscillator(0.4);
        let e = evolve_modes(&t, &DVector::zeros(2), 12.0).unwrap();
        assert_eq!(e.phase_space.amax(), 0.0);
    }

    #[test]
    fn coupled_identities() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.02, 0.02, 0.2]);
        let q = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, -0.2]);
        let h = HillSystem::new(a, q, DMatrix::zeros(2, 2), vec!["u".into(), "v".into()]).unwrap();
        let s = solve_modes(&h, &FloquetOptions::default()).unwrap();
        let t = build_fl_transform(&s.modes).unwrap();
        assert!(t.normalization_defect() < 1e-9);
        let id = DMatrix::<Complex64>::identity(4, 4);
        for time in [0.1, 1.3, 2.9] {
            let g = t.gamma(time);
            let err = (&g * t.gamma_inv(time) - &id)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "t {time}: {err:e}");
            let numeric = g.try_inverse().unwrap();
            let diff = (numeric - t.gamma_inv(time))
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(diff < 1e-9);
        }
        let settings = IntegratorSettings::oracle();
        for time in [PI / 3.0, PI] {
            let phi = hill_fundamental_matrix(&h, time, &settings).unwrap();
            assert!((t.propagator(time) - phi).amax() < 1e-7);
        }
        assert!(
            (t.gamma(0.4) - t.gamma(0.4 + PI))
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max)
                < 1e-12
        );
    }

    #[test]
    fn report_round_trip() {
        let h = HillSystem::diagonal(&[0.0, 0.05], &[0.3, 0.0]).unwrap();
        let s = solve_modes(&h, &FloquetOptions::default()).unwrap();
        let back = modes_from_report(&mode_report(&s.modes)).unwrap();
        for (a, b) in s.modes.iter().zip(&back) {
            assert_eq!(a.beta, b.beta);
            assert_eq!(a.ladder, b.ladder);
        }
    }
}
