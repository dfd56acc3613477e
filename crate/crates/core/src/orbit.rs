//! pi-periodic crystal solutions `R(t) = B_0 + 2 sum_n B_2n cos 2nt`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::integrator::{fundamental_matrix, integrate_nonlinear, IntegratorSettings, Monodromy};
use crate::linearization::coulomb_hessian;
use crate::pseudo::{fibonacci_sphere, trap_normal_modes};
use crate::trap::{coulomb_field, dynamic_matrix, IonState, TrapConfig};

/// Entries with `|B_0| <= MASK_THRESHOLD` are masked in micromotion ratios.
pub const MASK_THRESHOLD: f64 = 1e-3;

const DEFECT_SAMPLES: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    /// `coefficients[n]` holds `B_{2n}` (equal to `B_{-2n}`).
    coefficients: Vec<Vec<Vector3<f64>>>,
    residual: f64,
    config: Option<TrapConfig>,
}

impl PeriodicOrbit {
    pub fn new(coefficients: Vec<Vec<Vector3<f64>>>, config: Option<TrapConfig>) -> Result<Self> {
        let n = coefficients.first().map(Vec::len).unwrap_or(0);
        if n == 0 || coefficients.iter().any(|b| b.len() != n) {
            return Err(Error::InvalidConfig(
                "orbit coefficients must share a non-zero ion count".into(),
            ));
        }
        if let Some(c) = &config {
            if c.n_ions() != n {
                return Err(Error::DimensionMismatch {
                    expected: c.n_ions(),
                    got: n,
                });
            }
        }
        Ok(Self {
            coefficients,
            residual: f64::NAN,
            config,
        })
    }

    /// All coefficients zero: the orbit of a single ion.
    pub fn trivial(n_ions: usize, n_max: usize) -> Self {
        Self {
            coefficients: vec![vec![Vector3::zeros(); n_ions]; n_max + 1],
            residual: 0.0,
            config: None,
        }
    }

    pub fn with_residual(mut self, residual: f64) -> Self {
        self.residual = residual;
        self
    }

    pub fn n_ions(&self) -> usize {
        self.coefficients[0].len()
    }

    pub fn n_max(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn config(&self) -> Option<&TrapConfig> {
        self.config.as_ref()
    }

    /// `B_{harmonic}` for an even harmonic index, using `B_{-2n} = B_{2n}`.
    pub fn coefficient(&self, harmonic: i64) -> Option<&[Vector3<f64>]> {
        if harmonic % 2 != 0 {
            return None;
        }
        self.coefficients
            .get((harmonic.unsigned_abs() / 2) as usize)
            .map(Vec::as_slice)
    }

    /// Average positions `B_0`.
    pub fn mean_positions(&self) -> &[Vector3<f64>] {
        &self.coefficients[0]
    }

    fn series(&self, t: f64, kernel: impl Fn(usize, f64) -> f64) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); self.n_ions()];
        for (n, b) in self.coefficients.iter().enumerate() {
            let w = kernel(n, t);
            if w != 0.0 {
                for (o, bi) in out.iter_mut().zip(b) {
                    *o += bi * w;
                }
            }
        }
        out
    }

    pub fn position(&self, t: f64) -> Vec<Vector3<f64>> {
        self.series(t, |n, t| {
            if n == 0 {
                1.0
            } else {
                2.0 * (2.0 * n as f64 * t).cos()
            }
        })
    }

    pub fn velocity(&self, t: f64) -> Vec<Vector3<f64>> {
        self.series(t, |n, t| -4.0 * n as f64 * (2.0 * n as f64 * t).sin())
    }

    pub fn acceleration(&self, t: f64) -> Vec<Vector3<f64>> {
        self.series(t, |n, t| {
            let w = 2.0 * n as f64;
            -2.0 * w * w * (w * t).cos()
        })
    }

    pub fn state(&self, t: f64) -> IonState {
        IonState {
            positions: self.position(t),
            velocities: self.velocity(t),
            time: t,
        }
    }

    /// `m` evenly spaced states over `[0, pi)`.
    pub fn sample_period(&self, m: usize) -> Vec<IonState> {
        (0..m)
            .map(|k| self.state(PI * k as f64 / m as f64))
            .collect()
    }

    /// The same orbit keeping harmonics up to `2 n_max`.
    pub fn truncated(&self, n_max: usize) -> Self {
        let mut c = self.coefficients.clone();
        c.truncate(n_max + 1);
        Self {
            coefficients: c,
            residual: f64::NAN,
            config: self.config.clone(),
        }
    }

    /// Image under `(x, y, z) -> (x, -z, -y)`, `t -> t + pi/2`, a symmetry of
    /// the linear-trap equations of motion when the radial DC is symmetric.
    pub fn mirrored_linear(&self) -> Self {
        let coefficients = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(n, b)| {
                let s = if n % 2 == 0 { 1.0 } else { -1.0 };
                b.iter()
                    .map(|r| s * Vector3::new(r[0], -r[2], -r[1]))
                    .collect()
            })
            .collect();
        Self {
            coefficients,
            residual: f64::NAN,
            config: self.config.clone(),
        }
    }

    fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.n_ions() * self.coefficients.len(),
            self.coefficients
                .iter()
                .flatten()
                .flat_map(|r| [r[0], r[1], r[2]]),
        )
    }

    fn from_flat(x: &DVector<f64>, n_ions: usize, config: Option<TrapConfig>) -> Self {
        let nh = x.len() / (3 * n_ions);
        let coefficients = (0..nh)
            .map(|n| {
                (0..n_ions)
                    .map(|i| {
                        let o = 3 * (n * n_ions + i);
                        Vector3::new(x[o], x[o + 1], x[o + 2])
                    })
                    .collect()
            })
            .collect();
        Self {
            coefficients,
            residual: f64::NAN,
            config,
        }
    }

    pub fn to_json_value(&self) -> Value {
        let coefficients: serde_json::Map<String, Value> = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(n, b)| {
                let rows: Vec<[f64; 3]> = b.iter().map(|r| [r[0], r[1], r[2]]).collect();
                ((2 * n).to_string(), json!(rows))
            })
            .collect();
        json!({
            "n_max": self.n_max(),
            "coefficients": coefficients,
            "residual": self.residual,
            "config": self.config.as_ref().map(TrapConfig::to_json_value),
        })
    }

    pub fn from_json_value(v: &Value) -> Result<Self> {
        let n_max = v["n_max"]
            .as_u64()
            .ok_or_else(|| Error::InvalidConfig("orbit file lacks n_max".into()))?
            as usize;
        let mut coefficients = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            let rows: Vec<[f64; 3]> =
                serde_json::from_value(v["coefficients"][(2 * n).to_string()].clone())?;
            coefficients.push(rows.into_iter().map(Vector3::from).collect());
        }
        let config = match &v["config"] {
            Value::Null => None,
            c => Some(TrapConfig::from_json(&c.to_string())?),
        };
        let residual = v["residual"].as_f64().unwrap_or(f64::NAN);
        Ok(Self::new(coefficients, config)?.with_residual(residual))
    }
}

/// Complex harmonics `B_k = <R(t) e^{-i k t}>` for `k = -2 n_max ..= 2 n_max`
/// (even), from states sampled uniformly over one period starting at a multiple of pi.
pub fn complex_harmonics(
    samples: &[IonState],
    n_max: usize,
) -> BTreeMap<i64, Vec<Vector3<Complex64>>> {
    let m = samples.len() as f64;
    let n_ions = samples.first().map(IonState::n_ions).unwrap_or(0);
    let mut out = BTreeMap::new();
    for n in -(n_max as i64)..=n_max as i64 {
        let k = 2 * n;
        let mut acc = vec![Vector3::<Complex64>::zeros(); n_ions];
        for s in samples {
            let ph = Complex64::from_polar(1.0 / m, -(k as f64) * s.time);
            for (a, r) in acc.iter_mut().zip(&s.positions) {
                *a += r.map(|x| ph * x);
            }
        }
        out.insert(k, acc);
    }
    out
}

/// Max-norm of the equation-of-motion defect of the reconstructed orbit over a fine grid.
pub fn fourier_defect(config: &TrapConfig, orbit: &PeriodicOrbit) -> Result<f64> {
    if config.n_ions() != orbit.n_ions() {
        return Err(Error::DimensionMismatch {
            expected: config.n_ions(),
            got: orbit.n_ions(),
        });
    }
    let eps = config.epsilon();
    let mut worst: f64 = 0.0;
    for m in 0..DEFECT_SAMPLES {
        let t = PI * m as f64 / DEFECT_SAMPLES as f64;
        let r = orbit.position(t);
        let acc = orbit.acceleration(t);
        let f = coulomb_field(&r)?;
        let k = config.stiffness(t);
        for i in 0..r.len() {
            for a in 0..3 {
                worst = worst.max((acc[i][a] + k[a] * r[i][a] - eps * f[i][a]).abs());
            }
        }
    }
    Ok(worst)
}

/// Piecewise damping rate: constant, then exponential decay, then zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingSchedule {
    pub initial: f64,
    pub hold: f64,
    pub tau: f64,
    pub decay: f64,
    pub settle: f64,
}

impl Default for DampingSchedule {
    fn default() -> Self {
        Self {
            initial: 0.5,
            hold: 100.0 * PI,
            tau: 50.0 * PI,
            decay: 500.0 * PI,
            settle: 50.0 * PI,
        }
    }
}

impl DampingSchedule {
    /// Weak damping used after a kick away from an unstable orbit.
    pub fn gentle() -> Self {
        Self {
            initial: 0.005,
            hold: 600.0 * PI,
            tau: 50.0 * PI,
            decay: 400.0 * PI,
            settle: 50.0 * PI,
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        if t < self.hold {
            self.initial
        } else if t < self.hold + self.decay {
            self.initial * (-(t - self.hold) / self.tau).exp()
        } else {
            0.0
        }
    }

    pub fn total(&self) -> f64 {
        self.hold + self.decay + self.settle
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.initial >= 0.0
            && self.tau > 0.0
            && [self.hold, self.decay, self.settle]
                .iter()
                .all(|x| *x >= 0.0 && x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid damping schedule {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxSettings {
    pub schedule: DampingSchedule,
    pub n_max: usize,
    /// Quadrature points per period for projection and harmonic balance.
    pub samples: usize,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Raw period-map deviation above which relaxation is declared failed.
    pub precheck_tol: f64,
    pub periodicity_tol: f64,
    pub periodicity_periods: usize,
    pub integrator: IntegratorSettings,
}

impl Default for RelaxSettings {
    fn default() -> Self {
        Self {
            schedule: DampingSchedule::default(),
            n_max: 6,
            samples: 256,
            newton_tol: 1e-10,
            max_newton: 50,
            precheck_tol: 0.1,
            periodicity_tol: 1e-7,
            periodicity_periods: 5,
            integrator: IntegratorSettings::default(),
        }
    }
}

/// Integrates with the damping schedule, projects the last period onto
/// cosine harmonics, refines by harmonic balance and verifies periodicity.
pub fn relax_to_crystal(
    config: &TrapConfig,
    seed: &IonState,
    settings: &RelaxSettings,
) -> Result<PeriodicOrbit> {
    settings.schedule.validate()?;
    if seed.n_ions() != config.n_ions() {
        return Err(Error::DimensionMismatch {
            expected: config.n_ions(),
            got: seed.n_ions(),
        });
    }
    let t0 = seed.time;
    let t_end = ((t0 + settings.schedule.total()) / PI).ceil().max(1.0) * PI;
    let m = settings.samples;
    let start = t_end - PI;
    let times: Vec<f64> = (0..m).map(|k| start + PI * k as f64 / m as f64).collect();
    let sched = settings.schedule;
    let traj = integrate_nonlinear(
        config,
        seed,
        t_end,
        |t| sched.rate(t - t0),
        &settings.integrator,
        &times,
    )?;
    if traj.samples.len() != m {
        return Err(Error::InvalidConfig(
            "seed time lies inside the sampling window".into(),
        ));
    }
    let first = &traj.samples[0];
    let fin = &traj.final_state;
    let deviation = max_state_deviation(first, fin);
    log::debug!("raw period-map deviation {deviation:e}");
    if !(deviation <= settings.precheck_tol) {
        return Err(Error::NonCrystal { deviation });
    }

    let n_ions = config.n_ions();
    let coefficients = (0..=settings.n_max)
        .map(|n| {
            let mut acc = vec![Vector3::zeros(); n_ions];
            for s in &traj.samples {
                let w = (2.0 * n as f64 * s.time).cos() / m as f64;
                for (a, r) in acc.iter_mut().zip(&s.positions) {
                    *a += r * w;
                }
            }
            acc
        })
        .collect();
    let raw = PeriodicOrbit::new(coefficients, Some(config.clone()))?;
    let raw_defect = fourier_defect(config, &raw).unwrap_or(f64::INFINITY);
    let raw = raw.with_residual(raw_defect);

    let refined = match harmonic_balance(config, &raw, settings) {
        Ok(o) => o,
        Err(residual) => {
            return Err(Error::RefinementFailure {
                residual,
                raw: Box::new(raw),
            })
        }
    };
    let deviation = periodicity_deviation(
        config,
        &refined,
        settings.periodicity_periods,
        &settings.integrator,
    )?;
    log::debug!("refined period-map deviation {deviation:e}");
    if !(deviation < settings.periodicity_tol) {
        return Err(Error::NonCrystal { deviation });
    }
    let residual = fourier_defect(config, &refined)?;
    Ok(refined.with_residual(residual))
}

fn max_state_deviation(a: &IonState, b: &IonState) -> f64 {
    a.positions
        .iter()
        .zip(&b.positions)
        .chain(a.velocities.iter().zip(&b.velocities))
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max)
}

/// Largest deviation of the integrated state at `k pi` (`k = 1..=periods`)
/// from the orbit's own state at `t = 0`.
pub fn periodicity_deviation(
    config: &TrapConfig,
    orbit: &PeriodicOrbit,
    periods: usize,
    settings: &IntegratorSettings,
) -> Result<f64> {
    let s0 = orbit.state(0.0);
    let times: Vec<f64> = (1..=periods).map(|k| k as f64 * PI).collect();
    let traj = integrate_nonlinear(config, &s0, periods as f64 * PI, |_| 0.0, settings, &times)?;
    Ok(traj
        .samples
        .iter()
        .map(|s| max_state_deviation(&s0, s))
        .fold(0.0, f64::max))
}

/// Newton iteration on the cosine-projected equations of motion.
/// On failure returns the smallest projected residual reached.
pub fn harmonic_balance(
    config: &TrapConfig,
    guess: &PeriodicOrbit,
    settings: &RelaxSettings,
) -> std::result::Result<PeriodicOrbit, f64> {
    let hb = HarmonicBalance::new(config, guess.n_ions(), guess.n_max(), settings.samples);
    let mut x = guess.to_flat();
    let mut r = match hb.residual(&x) {
        Ok(r) => r,
        Err(_) => return Err(f64::INFINITY),
    };
    for _ in 0..settings.max_newton {
        if r.amax() < settings.newton_tol {
            break;
        }
        let jac = hb.jacobian(&x).map_err(|_| r.amax())?;
        let svd = jac.svd(true, true);
        let cutoff = 1e-13 * svd.singular_values.max();
        let step = svd.solve(&(-&r), cutoff).map_err(|_| r.amax())?;
        let mut alpha = 1.0;
        let mut improved = false;
        while alpha > 1e-6 {
            let trial = &x + &step * alpha;
            if let Ok(rt) = hb.residual(&trial) {
                if rt.amax() < r.amax() {
                    x = trial;
                    r = rt;
                    improved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if r.amax() < settings.newton_tol {
        Ok(PeriodicOrbit::from_flat(
            &x,
            guess.n_ions(),
            Some(config.clone()),
        ))
    } else {
        Err(r.amax())
    }
}

struct HarmonicBalance<'a> {
    config: &'a TrapConfig,
    n_ions: usize,
    nh: usize,
    times: Vec<f64>,
    /// `cos(2 n t_m)`, indexed `[n][m]`.
    cos: Vec<Vec<f64>>,
}

impl<'a> HarmonicBalance<'a> {
    fn new(config: &'a TrapConfig, n_ions: usize, n_max: usize, samples: usize) -> Self {
        let times: Vec<f64> = (0..samples)
            .map(|m| PI * m as f64 / samples as f64)
            .collect();
        let cos = (0..=n_max)
            .map(|n| times.iter().map(|t| (2.0 * n as f64 * t).cos()).collect())
            .collect();
        Self {
            config,
            n_ions,
            nh: n_max + 1,
            times,
            cos,
        }
    }

    fn weight(n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            2.0
        }
    }

    fn positions(&self, x: &DVector<f64>, m: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let mut r = vec![Vector3::zeros(); self.n_ions];
        let mut acc = vec![Vector3::zeros(); self.n_ions];
        for n in 0..self.nh {
            let w = Self::weight(n) * self.cos[n][m];
            let w2 = -4.0 * (n * n) as f64 * w;
            for i in 0..self.n_ions {
                let o = 3 * (n * self.n_ions + i);
                let b = Vector3::new(x[o], x[o + 1], x[o + 2]);
                r[i] += b * w;
                acc[i] += b * w2;
            }
        }
        (r, acc)
    }

    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let f = 3 * self.n_ions;
        let eps = self.config.epsilon();
        let m_count = self.times.len();
        let mut out = DVector::zeros(f * self.nh);
        for (m, &t) in self.times.iter().enumerate() {
            let (r, acc) = self.positions(x, m);
            let field = coulomb_field(&r)?;
            let k = self.config.stiffness(t);
            for i in 0..self.n_ions {
                for a in 0..3 {
                    let e = acc[i][a] + k[a] * r[i][a] - eps * field[i][a];
                    for n in 0..self.nh {
                        out[n * f + 3 * i + a] += self.cos[n][m] * e / m_count as f64;
                    }
                }
            }
        }
        Ok(out)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let f = 3 * self.n_ions;
        let eps = self.config.epsilon();
        let m_count = self.times.len() as f64;
        let mut jac = DMatrix::zeros(f * self.nh, f * self.nh);
        for (m, &t) in self.times.iter().enumerate() {
            let (r, _) = self.positions(x, m);
            let mut s = coulomb_hessian(&r)? * eps;
            let k = self.config.stiffness(t);
            for c in 0..f {
                s[(c, c)] += k[c % 3];
            }
            for n in 0..self.nh {
                for kk in 0..self.nh {
                    let w = self.cos[n][m] * Self::weight(kk) * self.cos[kk][m] / m_count;
                    let shift = -4.0 * (kk * kk) as f64;
                    let mut block = jac.view_mut((n * f, kk * f), (f, f));
                    block += &s * w;
                    for c in 0..f {
                        block[(c, c)] += w * shift;
                    }
                }
            }
        }
        Ok(jac)
    }
}

/// Linear stability of the full linearization about an orbit.
pub fn orbit_monodromy(
    config: &TrapConfig,
    orbit: &PeriodicOrbit,
    settings: &IntegratorSettings,
) -> Result<Monodromy> {
    let f = 3 * orbit.n_ions();
    let eps = config.epsilon();
    let m = fundamental_matrix(
        f,
        |t| {
            let mut s = coulomb_hessian(&orbit.position(t))? * eps;
            let k = config.stiffness(t);
            for c in 0..f {
                s[(c, c)] += k[c % 3];
            }
            Ok(s)
        },
        PI,
        settings,
    )?;
    Monodromy::from_matrix(m)
}

/// Controls the search for a linearly stable crystal.
#[derive(Debug, Clone, PartialEq)]
pub struct EscapeSettings {
    pub max_attempts: usize,
    /// Max-norm of the phase-space kick along the unstable direction.
    pub kick: f64,
    pub schedule: DampingSchedule,
}

impl Default for EscapeSettings {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            kick: 0.05,
            schedule: DampingSchedule::gentle(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrystalSearch {
    pub orbit: PeriodicOrbit,
    pub monodromy: Monodromy,
    /// Number of kicks applied.
    pub attempts: usize,
}

impl CrystalSearch {
    pub fn is_stable(&self) -> bool {
        self.monodromy.is_stable()
    }
}

/// Relaxes, then while the orbit is linearly unstable kicks the crystal along
/// the fastest-growing direction and relaxes again with gentle damping.
pub fn find_stable_crystal(
    config: &TrapConfig,
    seed: &IonState,
    settings: &RelaxSettings,
    escape: &EscapeSettings,
) -> Result<CrystalSearch> {
    let mut orbit = relax_to_crystal(config, seed, settings)?;
    let mut monodromy = orbit_monodromy(config, &orbit, &settings.integrator)?;
    let mut attempts = 0;
    let gentle = RelaxSettings {
        schedule: escape.schedule,
        ..settings.clone()
    };
    // A single ion has no other crystal to escape to.
    let max_attempts = if orbit.n_ions() == 1 {
        0
    } else {
        escape.max_attempts
    };
    while !monodromy.is_stable() && attempts < max_attempts {
        attempts += 1;
        log::info!(
            "orbit unstable (max |lambda| = {:.6}), kick {attempts}",
            monodromy.max_modulus()
        );
        let v = monodromy.dominant_direction();
        let sign = if attempts % 2 == 1 { 1.0 } else { -1.0 };
        let scale = sign * escape.kick / v.amax();
        let v = v * scale;
        let base = orbit.state(0.0);
        let n = orbit.n_ions();
        let positions = (0..n)
            .map(|i| base.positions[i] + Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]))
            .collect();
        let o = 3 * n;
        let velocities = (0..n)
            .map(|i| {
                base.velocities[i] + Vector3::new(v[o + 3 * i], v[o + 3 * i + 1], v[o + 3 * i + 2])
            })
            .collect();
        let kicked = IonState::new(positions, velocities, 0.0)?;
        match relax_to_crystal(config, &kicked, &gentle) {
            Ok(o) => {
                let mono = orbit_monodromy(config, &o, &settings.integrator)?;
                orbit = o;
                monodromy = mono;
            }
            Err(
                e @ (Error::NonCrystal { .. }
                | Error::RefinementFailure { .. }
                | Error::StepSizeUnderflow { .. }
                | Error::TooManySteps(_)),
            ) => {
                log::warn!("relaxation after kick {attempts} failed: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(CrystalSearch {
        orbit,
        monodromy,
        attempts,
    })
}

/// How the initial state for a relaxation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStrategy {
    /// Pseudopotential equilibrium plus a fixed 1e-3 perturbation.
    Fixed,
    /// Pseudopotential equilibrium plus a reproducible pseudorandom perturbation.
    Random(u64),
}

pub const RANDOM_SEED_AMPLITUDE: f64 = 0.05;

/// Initial state at rest near the pseudopotential equilibrium (trap units).
/// A single ion starts exactly at the origin.
pub fn default_seed(config: &TrapConfig, strategy: SeedStrategy) -> Result<IonState> {
    let n = config.n_ions();
    if n == 1 {
        return IonState::at_rest(vec![Vector3::zeros()], 0.0);
    }
    let base = match trap_normal_modes(config) {
        Ok(b) => b.equilibrium_trap_units(),
        Err(e) => {
            log::warn!("no pseudopotential equilibrium ({e}); seeding on a sphere");
            fibonacci_sphere(n)
        }
    };
    let positions = match strategy {
        SeedStrategy::Fixed => base
            .iter()
            .enumerate()
            .map(|(i, r)| r + 1e-3 * Vector3::from_fn(|a, _| ((3 * i + a + 1) as f64).sin()))
            .collect(),
        SeedStrategy::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            base.iter()
                .map(|r| {
                    r + Vector3::from_fn(|_, _| RANDOM_SEED_AMPLITUDE * rng.gen_range(-1.0..1.0))
                })
                .collect()
        }
    };
    IonState::at_rest(positions, 0.0)
}

/// `B_2 / B_0` per ion and axis, `None` where `|B_0| <= threshold`.
pub fn micromotion_ratio(orbit: &PeriodicOrbit, threshold: f64) -> Vec<[Option<f64>; 3]> {
    let b0 = &orbit.coefficients[0];
    let b2 = orbit.coefficients.get(1);
    b0.iter()
        .enumerate()
        .map(|(i, r)| {
            [0, 1, 2].map(|a| {
                (r[a].abs() > threshold).then(|| b2.map(|b| b[i][a]).unwrap_or(0.0) / r[a])
            })
        })
        .collect()
}

/// Micromotion estimated from the average positions alone.
#[derive(Debug, Clone)]
pub struct MicromotionPrediction {
    pub b2: Vec<Vector3<f64>>,
    /// Predicted `B_2 / B_0`, masked like [`micromotion_ratio`].
    pub ratio: Vec<[Option<f64>; 3]>,
    /// Relative residual of `(a + q^2/2 - eps G_0) B_0` per axis.
    pub kernel_residual: [f64; 3],
    pub warnings: Vec<String>,
    /// `(q/4)^3 / 2` for mirror-symmetric crystals.
    pub axial_bound_symmetric: f64,
    /// `(eps/4)(q/4)` otherwise.
    pub axial_bound_general: f64,
}

/// Relative kernel residual above which the average positions are flagged.
pub const KERNEL_WARNING: f64 = 0.05;

pub fn predict_micromotion(
    config: &TrapConfig,
    b0: &[Vector3<f64>],
) -> Result<MicromotionPrediction> {
    let n = b0.len();
    if n != config.n_ions() {
        return Err(Error::DimensionMismatch {
            expected: config.n_ions(),
            got: n,
        });
    }
    let g0 = dynamic_matrix(b0)?;
    let (a, q, eps) = (config.a(), config.q(), config.epsilon());
    let mut g2 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = b0[i] - b0[j];
                let r = d.norm();
                let s: f64 = (0..3).map(|k| q[k] * d[k] * d[k]).sum();
                g2[(i, j)] = -0.75 * s / r.powi(5);
            }
        }
    }
    for i in 0..n {
        g2[(i, i)] = -(0..n).filter(|&j| j != i).map(|j| g2[(i, j)]).sum::<f64>();
    }
    let mut b2 = vec![Vector3::zeros(); n];
    let mut kernel_residual = [0.0; 3];
    let mut warnings = Vec::new();
    for k in 0..3 {
        let col = DVector::from_fn(n, |i, _| b0[i][k]);
        let lam = a[k] + 0.5 * q[k] * q[k];
        let res = (&col * lam - &g0 * &col * eps).norm();
        let scale = (lam.abs() * col.norm()).max(f64::MIN_POSITIVE);
        kernel_residual[k] = if col.norm() > MASK_THRESHOLD {
            res / scale
        } else {
            0.0
        };
        if kernel_residual[k] > KERNEL_WARNING {
            warnings.push(format!(
                "average positions along {} are inconsistent with the micromotion kernel (relative residual {:.3e})",
                crate::trap::AXES[k],
                kernel_residual[k]
            ));
        }
        let pred = if q[k] != 0.0 {
            col * (-q[k] / 4.0)
        } else {
            &g2 * &col * (-eps / 4.0)
        };
        for i in 0..n {
            b2[i][k] = pred[i];
        }
    }
    let ratio = b0
        .iter()
        .zip(&b2)
        .map(|(r, p)| [0, 1, 2].map(|k| (r[k].abs() > MASK_THRESHOLD).then(|| p[k] / r[k])))
        .collect();
    let qr = q.iter().fold(0.0f64, |m, x| m.max(x.abs())) / 4.0;
    Ok(MicromotionPrediction {
        b2,
        ratio,
        kernel_residual,
        warnings,
        axial_bound_symmetric: 0.5 * qr.powi(3),
        axial_bound_general: eps / 4.0 * qr,
    })
}
