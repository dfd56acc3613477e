//! Adaptive Dormand-Prince 5(4) integration of the ion equations of motion,
//! and the matrizant / monodromy oracle for linear periodic systems.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linearization::HillSystem;
use crate::trap::{coulomb_field_flat, IonState, TrapConfig};

/// Eigenvalue moduli above `1 + STABILITY_TOL` are reported as unstable.
pub const STABILITY_TOL: f64 = 1e-6;

/// Pairs with both eigenvalues this close to 1 are neutral (zero modes of a
/// continuous symmetry, or free motion) and never count as unstable: the
/// Jordan block of such a mode splits by the square root of the integration
/// error.
pub const NEUTRAL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Order of the propagated solution. Only 5 is provided.
    pub method_order: usize,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.25,
            method_order: 5,
            max_steps: 50_000_000,
        }
    }
}

impl IntegratorSettings {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Result<Self> {
        let s = Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol >= 1e-14 && self.abs_tol > 0.0 && self.max_step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "integrator tolerances must be positive with rel_tol >= 1e-14 (got {:e}, {:e})",
                self.rel_tol, self.abs_tol
            )));
        }
        if self.method_order < 4 || self.method_order > 5 {
            return Err(Error::InvalidConfig(format!(
                "unsupported method order {}",
                self.method_order
            )));
        }
        Ok(())
    }

    /// Tighter settings for oracle computations.
    pub fn oracle() -> Self {
        Self {
            rel_tol: 1e-13,
            abs_tol: 1e-15,
            ..Self::default()
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrates `y' = f(t, y)` from `t0` to `t_end` (`t_end >= t0`), reporting
/// the dense-output solution at each of the sorted `samples` inside the span.
///
/// Returns the final state and the sampled states.
pub fn dopri5<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    samples: &[f64],
    settings: &IntegratorSettings,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    settings.validate()?;
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut out = Vec::with_capacity(samples.len());
    let mut next_sample = 0;
    while next_sample < samples.len() && samples[next_sample] < t0 {
        next_sample += 1;
    }
    let span = t_end - t0;
    if span <= 0.0 || n == 0 {
        while next_sample < samples.len() && samples[next_sample] <= t_end {
            out.push(y.clone());
            next_sample += 1;
        }
        return Ok((y, out));
    }

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut t = t0;
    f(t, &y, &mut k[0])?;

    let err_norm = |y: &[f64], yn: &[f64], e: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            let sc = settings.abs_tol + settings.rel_tol * y[i].abs().max(yn[i].abs());
            let r = e[i] / sc;
            acc += r * r;
        }
        (acc / n as f64).sqrt()
    };

    // Initial step from the usual derivative-based estimate.
    let mut h = {
        let zeros = vec![0.0; n];
        let d0 = err_norm(&y, &y, &y);
        let d1 = err_norm(&y, &y, &k[0]);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span).min(settings.max_step);
        for i in 0..n {
            ytmp[i] = y[i] + h0 * k[0][i];
        }
        f(t + h0, &ytmp, &mut k[1])?;
        for i in 0..n {
            ynew[i] = k[1][i] - k[0][i];
        }
        let d2 = err_norm(&y, &zeros, &ynew) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span).min(settings.max_step)
    };

    let mut steps = 0usize;
    let mut err = vec![0.0; n];
    let mut rejected_last = false;
    while t < t_end {
        steps += 1;
        if steps > settings.max_steps {
            return Err(Error::TooManySteps(settings.max_steps));
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let (k1, rest) = k.split_at_mut(1);
        let k1 = &k1[0];
        {
            let [k2, k3, k4, k5, k6, k7] = rest else {
                unreachable!()
            };
            for i in 0..n {
                ytmp[i] = y[i] + h * A21 * k1[i];
            }
            f(t + C2 * h, &ytmp, k2)?;
            for i in 0..n {
                ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * h, &ytmp, k3)?;
            for i in 0..n {
                ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * h, &ytmp, k4)?;
            for i in 0..n {
                ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * h, &ytmp, k5)?;
            for i in 0..n {
                ytmp[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_new = if last { t_end } else { t + h };
            f(t_new, &ytmp, k6)?;
            for i in 0..n {
                ynew[i] =
                    y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            f(t_new, &ynew, k7)?;
            for i in 0..n {
                err[i] = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
        }
        let e = err_norm(&y, &ynew, &err);
        if !e.is_finite() {
            h *= 0.1;
            rejected_last = true;
            continue;
        }
        if e <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            while next_sample < samples.len() && samples[next_sample] <= t_new {
                let theta = (samples[next_sample] - t) / h;
                out.push(dense(&y, &ynew, &k, h, theta));
                next_sample += 1;
            }
            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            let mut fac = 0.9 * e.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 10.0);
            if rejected_last {
                fac = fac.min(1.0);
            }
            h = (h * fac).min(settings.max_step);
            rejected_last = false;
        } else {
            let fac = (0.9 * e.powf(-0.2)).max(0.2);
            h *= fac;
            rejected_last = true;
        }
    }
    Ok((y, out))
}

fn dense(y: &[f64], ynew: &[f64], k: &[Vec<f64>], h: f64, theta: f64) -> Vec<f64> {
    let th1 = 1.0 - theta;
    (0..y.len())
        .map(|i| {
            let r1 = y[i];
            let ydiff = ynew[i] - y[i];
            let r2 = ydiff;
            let bspl = h * k[0][i] - ydiff;
            let r3 = bspl;
            let r4 = ydiff - h * k[6][i] - bspl;
            let r5 = h
                * (D1 * k[0][i]
                    + D3 * k[2][i]
                    + D4 * k[3][i]
                    + D5 * k[4][i]
                    + D6 * k[5][i]
                    + D7 * k[6][i]);
            r1 + theta * (r2 + th1 * (r3 + theta * (r4 + th1 * r5)))
        })
        .collect()
}

/// Sampled nonlinear trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<IonState>,
    pub final_state: IonState,
}

/// Integrates the rescaled equations of motion with an extra friction term
/// `-damping(t) * velocity`, sampling at the sorted `sample_times`.
pub fn integrate_nonlinear<D>(
    config: &TrapConfig,
    state: &IonState,
    t_final: f64,
    damping: D,
    settings: &IntegratorSettings,
    sample_times: &[f64],
) -> Result<Trajectory>
where
    D: Fn(f64) -> f64,
{
    if state.n_ions() != config.n_ions() {
        return Err(Error::DimensionMismatch {
            expected: config.n_ions(),
            got: state.n_ions(),
        });
    }
    let n3 = 3 * state.n_ions();
    let eps = config.epsilon();
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let (pos, vel) = y.split_at(n3);
        let (dpos, dvel) = dy.split_at_mut(n3);
        dpos.copy_from_slice(vel);
        coulomb_field_flat(pos, dvel)?;
        let k = config.stiffness(t);
        let g = damping(t);
        for i in 0..n3 {
            dvel[i] = eps * dvel[i] - k[i % 3] * pos[i] - g * vel[i];
        }
        Ok(())
    };
    let (y, samples) = dopri5(
        rhs,
        state.time,
        &state.to_flat(),
        t_final,
        sample_times,
        settings,
    )?;
    let t0 = state.time;
    let times = sample_times
        .iter()
        .copied()
        .filter(|&t| t >= t0 && t <= t_final);
    Ok(Trajectory {
        samples: samples
            .iter()
            .zip(times)
            .map(|(y, t)| IonState::from_flat(y, t))
            .collect(),
        final_state: IonState::from_flat(&y, t_final.max(t0)),
    })
}

/// Writes states as CSV with columns `t,ion,x,y,z,vx,vy,vz`.
pub fn write_trajectory_csv<W: Write>(mut w: W, states: &[IonState]) -> Result<()> {
    writeln!(w, "t,ion,x,y,z,vx,vy,vz")?;
    for s in states {
        for (i, (p, v)) in s.positions.iter().zip(&s.velocities).enumerate() {
            writeln!(
                w,
                "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.time, i, p[0], p[1], p[2], v[0], v[1], v[2]
            )?;
        }
    }
    Ok(())
}

/// Fundamental matrix `Phi(t_end)` of `u'' + S(t) u = 0` in phase-space form,
/// starting from the identity at `t = 0`. Columns are integrated in parallel.
pub fn fundamental_matrix<S>(
    dim: usize,
    stiffness: S,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<DMatrix<f64>>
where
    S: Fn(f64) -> Result<DMatrix<f64>> + Sync,
{
    let cols: Vec<Vec<f64>> = (0..2 * dim)
        .into_par_iter()
        .map(|c| {
            let mut y0 = vec![0.0; 2 * dim];
            y0[c] = 1.0;
            linear_flow(dim, &stiffness, &y0, t_end, &[], settings).map(|(y, _)| y)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(2 * dim, 2 * dim, |r, c| cols[c][r]))
}

/// Integrates `u'' + S(t) u = 0` from `t = 0` with phase-space initial state `y0`.
pub fn linear_flow<S>(
    dim: usize,
    stiffness: &S,
    y0: &[f64],
    t_end: f64,
    samples: &[f64],
    settings: &IntegratorSettings,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    S: Fn(f64) -> Result<DMatrix<f64>>,
{
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let s = stiffness(t)?;
        let (u, v) = y.split_at(dim);
        let (du, dv) = dy.split_at_mut(dim);
        du.copy_from_slice(v);
        for r in 0..dim {
            let mut acc = 0.0;
            for c in 0..dim {
                acc += s[(r, c)] * u[c];
            }
            dv[r] = -acc;
        }
        Ok(())
    };
    dopri5(rhs, 0.0, y0, t_end, samples, settings)
}

/// Matrizant of a Hill system at time `t`.
pub fn hill_fundamental_matrix(
    hill: &HillSystem,
    t: f64,
    settings: &IntegratorSettings,
) -> Result<DMatrix<f64>> {
    fundamental_matrix(hill.dim(), |s| Ok(hill.stiffness(s)), t, settings)
}

/// Monodromy matrix `Phi(pi)` of a Hill system with its spectrum.
pub fn matrizant(hill: &HillSystem, settings: &IntegratorSettings) -> Result<Monodromy> {
    Monodromy::from_matrix(hill_fundamental_matrix(hill, PI, settings)?)
}

/// Characteristic exponent of the scalar Mathieu equation
/// `u'' + (a - 2q cos 2t) u = 0`, or `None` outside the stability zones.
pub fn mathieu_exponent(a: f64, q: f64, settings: &IntegratorSettings) -> Result<Option<f64>> {
    let m = matrizant(&HillSystem::scalar(a, q), settings)?;
    Ok(m.is_stable().then(|| m.exponents[0]))
}

/// One period map of a linear periodic system.
#[derive(Debug, Clone)]
pub struct Monodromy {
    pub matrix: DMatrix<f64>,
    /// Paired as `(lambda, partner)`, the member with non-negative imaginary part first.
    pub eigenvalues: Vec<Complex64>,
    /// One exponent per pair, ascending. `|arg lambda| / pi` folded into `[0, 1]`.
    pub exponents: Vec<f64>,
    pub moduli: Vec<f64>,
    pub determinant: f64,
}

impl Monodromy {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || !matrix.nrows().is_multiple_of(2) {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows() + matrix.nrows() % 2,
                got: matrix.ncols(),
            });
        }
        let determinant = matrix.determinant();
        let mut remaining: Vec<Complex64> = matrix.complex_eigenvalues().iter().copied().collect();
        remaining.sort_by(|x, y| {
            x.arg()
                .abs()
                .total_cmp(&y.arg().abs())
                .then(y.im.total_cmp(&x.im))
        });
        let mut pairs: Vec<(Complex64, Complex64)> = Vec::new();
        while let Some(first) = remaining.first().copied() {
            remaining.remove(0);
            let (idx, _) = remaining
                .iter()
                .enumerate()
                .map(|(k, &mu)| (k, (first * mu - 1.0).norm()))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("eigenvalues come in pairs");
            let partner = remaining.remove(idx);
            let (p, r) = if first.im >= partner.im {
                (first, partner)
            } else {
                (partner, first)
            };
            pairs.push((p, r));
        }
        pairs.sort_by(|x, y| x.0.arg().abs().total_cmp(&y.0.arg().abs()));
        let exponents = pairs.iter().map(|(l, _)| l.arg().abs() / PI).collect();
        let eigenvalues: Vec<Complex64> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        let moduli = eigenvalues.iter().map(|l| l.norm()).collect();
        Ok(Self {
            matrix,
            eigenvalues,
            exponents,
            moduli,
            determinant,
        })
    }

    pub fn max_modulus(&self) -> f64 {
        self.moduli.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.growing_modulus() <= 1.0 + STABILITY_TOL
    }

    /// Largest modulus outside the neutral pairs.
    pub fn growing_modulus(&self) -> f64 {
        self.eigenvalues
            .chunks(2)
            .filter(|p| p.iter().any(|l| (l - 1.0).norm() >= NEUTRAL_TOL))
            .flat_map(|p| p.iter().map(|l| l.norm()))
            .fold(0.0, f64::max)
    }

    /// Number of neutral pairs.
    pub fn neutral_pairs(&self) -> usize {
        self.eigenvalues
            .chunks(2)
            .filter(|p| p.iter().all(|l| (l - 1.0).norm() < NEUTRAL_TOL))
            .count()
    }

    /// Largest `|lambda mu - 1|` over the eigenvalue pairs.
    pub fn pairing_defect(&self) -> f64 {
        self.eigenvalues
            .chunks(2)
            .map(|p| (p[0] * p[1] - 1.0).norm())
            .fold(0.0, f64::max)
    }

    pub fn instability(&self) -> Option<Error> {
        (!self.is_stable()).then(|| Error::Unstable {
            max_modulus: self.max_modulus(),
            moduli: self.moduli.clone(),
        })
    }

    /// Direction of fastest growth under repeated application of the period map.
    pub fn dominant_direction(&self) -> DVector<f64> {
        let n = self.matrix.nrows();
        let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sin());
        v /= v.norm();
        for _ in 0..200 {
            let w = &self.matrix * &v;
            let nw = w.norm();
            if nw == 0.0 {
                break;
            }
            v = w / nw;
        }
        v
    }
}
