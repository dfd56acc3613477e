//! Nondimensional quadrupole trap with Coulomb interaction.
//!
//! Lengths are in units of `d = (e^2 / m w^2)^(1/3)`. Unless stated otherwise
//! time is the rescaled time `t -> Omega t / 2`, in which the rf period is `pi`
//! and the drive is `cos 2t`.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pairwise distances below this are treated as a collision.
pub const COINCIDENCE_THRESHOLD: f64 = 1e-9;

const LAPLACE_TOL: f64 = 1e-12;

pub const AXES: [char; 3] = ['x', 'y', 'z'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Linear,
    Hyperbolic,
    General,
}

/// Per-axis Mathieu parameters and drive frequency of a single-species trap.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapConfig {
    n_ions: usize,
    geometry: Geometry,
    a: [f64; 3],
    q: [f64; 3],
    omega_rf: f64,
    epsilon: f64,
    dc_asymmetry: f64,
}

impl TrapConfig {
    /// Linear Paul trap with the axial direction along `x`:
    /// `a = (-2a, a, a)`, `q = (0, q, -q)`.
    pub fn linear(n_ions: usize, a: f64, q: f64, omega_rf: f64) -> Result<Self> {
        Self::build(
            n_ions,
            Geometry::Linear,
            [-2.0 * a, a, a],
            [0.0, q, -q],
            omega_rf,
        )
    }

    /// Hyperbolic trap: `a = (-2a, a, a)`, `q = (-2q, q, q)`.
    pub fn hyperbolic(n_ions: usize, a: f64, q: f64, omega_rf: f64) -> Result<Self> {
        Self::build(
            n_ions,
            Geometry::Hyperbolic,
            [-2.0 * a, a, a],
            [-2.0 * q, q, q],
            omega_rf,
        )
    }

    pub fn general(n_ions: usize, a: [f64; 3], q: [f64; 3], omega_rf: f64) -> Result<Self> {
        Self::build(n_ions, Geometry::General, a, q, omega_rf)
    }

    fn build(
        n_ions: usize,
        geometry: Geometry,
        a: [f64; 3],
        q: [f64; 3],
        omega_rf: f64,
    ) -> Result<Self> {
        if n_ions == 0 {
            return Err(Error::InvalidConfig("n_ions must be positive".into()));
        }
        if !(omega_rf.is_finite() && omega_rf > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "omega_rf must be positive, got {omega_rf}"
            )));
        }
        if a.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite Mathieu parameter".into()));
        }
        let sa: f64 = a.iter().sum();
        let sq: f64 = q.iter().sum();
        if sa.abs() > LAPLACE_TOL || sq.abs() > LAPLACE_TOL {
            return Err(Error::InvalidConfig(format!(
                "Laplace constraint violated: sum(a) = {sa:e}, sum(q) = {sq:e}"
            )));
        }
        Ok(Self {
            n_ions,
            geometry,
            a,
            q,
            omega_rf,
            epsilon: 4.0 / (omega_rf * omega_rf),
            dc_asymmetry: 0.0,
        })
    }

    /// Radial DC asymmetry: `a_y -> a_y (1 + delta)`, `a_z -> a_z (1 - delta)`.
    /// Applied after the Laplace check, so the result is no longer traceless.
    pub fn with_dc_asymmetry(mut self, delta: f64) -> Self {
        self.dc_asymmetry = delta;
        self
    }

    pub fn with_n_ions(mut self, n_ions: usize) -> Self {
        self.n_ions = n_ions;
        self
    }

    pub fn n_ions(&self) -> usize {
        self.n_ions
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Effective DC parameters, including the asymmetry.
    pub fn a(&self) -> [f64; 3] {
        let d = self.dc_asymmetry;
        [self.a[0], self.a[1] * (1.0 + d), self.a[2] * (1.0 - d)]
    }

    /// DC parameters before the asymmetry is applied (traceless).
    pub fn a_nominal(&self) -> [f64; 3] {
        self.a
    }

    pub fn q(&self) -> [f64; 3] {
        self.q
    }

    pub fn omega_rf(&self) -> f64 {
        self.omega_rf
    }

    /// `4 / omega_rf^2`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dc_asymmetry(&self) -> f64 {
        self.dc_asymmetry
    }

    /// Trap curvatures `Lambda_alpha` at unscaled time `t_unscaled`.
    pub fn lambda(&self, t_unscaled: f64) -> [f64; 3] {
        let c = (self.omega_rf * t_unscaled).cos();
        let s = self.omega_rf * self.omega_rf / 4.0;
        let a = self.a();
        [0, 1, 2].map(|k| s * (a[k] - 2.0 * self.q[k] * c))
    }

    /// `a_alpha - 2 q_alpha cos 2t` at rescaled time `t`.
    pub fn stiffness(&self, t: f64) -> [f64; 3] {
        let c = (2.0 * t).cos();
        let a = self.a();
        [0, 1, 2].map(|k| a[k] - 2.0 * self.q[k] * c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawTrapConfig = serde_json::from_str(text)?;
        raw.try_into()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(RawTrapConfig::from(self)).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ScalarOrAxes {
    Scalar(f64),
    Axes([f64; 3]),
}

/// On-disk form: presets carry scalar `a`/`q`, `general` carries 3-arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RawTrapConfig {
    n_ions: usize,
    geometry: Geometry,
    a: ScalarOrAxes,
    q: ScalarOrAxes,
    omega_rf: f64,
    #[serde(default)]
    dc_asymmetry: f64,
}

impl TryFrom<RawTrapConfig> for TrapConfig {
    type Error = Error;

    fn try_from(raw: RawTrapConfig) -> Result<Self> {
        use ScalarOrAxes::*;
        let cfg = match (raw.geometry, raw.a, raw.q) {
            (Geometry::Linear, Scalar(a), Scalar(q)) => {
                Self::linear(raw.n_ions, a, q, raw.omega_rf)?
            }
            (Geometry::Hyperbolic, Scalar(a), Scalar(q)) => {
                Self::hyperbolic(raw.n_ions, a, q, raw.omega_rf)?
            }
            (Geometry::General, Axes(a), Axes(q)) => Self::general(raw.n_ions, a, q, raw.omega_rf)?,
            (g, _, _) => {
                return Err(Error::InvalidConfig(format!(
                    "geometry {g:?} expects {} a/q",
                    if g == Geometry::General {
                        "3-array"
                    } else {
                        "scalar"
                    }
                )))
            }
        };
        Ok(cfg.with_dc_asymmetry(raw.dc_asymmetry))
    }
}

impl From<&TrapConfig> for RawTrapConfig {
    fn from(c: &TrapConfig) -> Self {
        let (a, q) = match c.geometry {
            Geometry::General => (ScalarOrAxes::Axes(c.a), ScalarOrAxes::Axes(c.q)),
            _ => (ScalarOrAxes::Scalar(c.a[1]), ScalarOrAxes::Scalar(c.q[1])),
        };
        Self {
            n_ions: c.n_ions,
            geometry: c.geometry,
            a,
            q,
            omega_rf: c.omega_rf,
            dc_asymmetry: c.dc_asymmetry,
        }
    }
}

/// Positions and velocities of all ions at one (rescaled) time.
#[derive(Debug, Clone, PartialEq)]
pub struct IonState {
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub time: f64,
}

impl IonState {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        velocities: Vec<Vector3<f64>>,
        time: f64,
    ) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                got: velocities.len(),
            });
        }
        let finite = positions
            .iter()
            .chain(velocities.iter())
            .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::InvalidConfig("non-finite ion state".into()));
        }
        check_distinct(&positions)?;
        Ok(Self {
            positions,
            velocities,
            time,
        })
    }

    pub fn at_rest(positions: Vec<Vector3<f64>>, time: f64) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![Vector3::zeros(); n], time)
    }

    pub fn n_ions(&self) -> usize {
        self.positions.len()
    }

    /// Flat phase-space vector `(x_1, y_1, z_1, ..., vx_1, ...)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(6 * self.n_ions());
        for p in self.positions.iter().chain(self.velocities.iter()) {
            y.extend_from_slice(p.as_slice());
        }
        y
    }

    pub fn from_flat(y: &[f64], time: f64) -> Self {
        let n = y.len() / 6;
        let vec3 = |k: usize| Vector3::new(y[3 * k], y[3 * k + 1], y[3 * k + 2]);
        Self {
            positions: (0..n).map(vec3).collect(),
            velocities: (n..2 * n).map(vec3).collect(),
            time,
        }
    }
}

pub fn check_distinct(positions: &[Vector3<f64>]) -> Result<()> {
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let distance = (positions[i] - positions[j]).norm();
            if !(distance >= COINCIDENCE_THRESHOLD) {
                return Err(Error::SingularConfiguration { i, j, distance });
            }
        }
    }
    Ok(())
}

/// `sum_{i<j} 1 / |R_i - R_j|`.
pub fn coulomb_energy(positions: &[Vector3<f64>]) -> Result<f64> {
    let mut e = 0.0;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let r = (positions[i] - positions[j]).norm();
            if !(r >= COINCIDENCE_THRESHOLD) {
                return Err(Error::SingularConfiguration { i, j, distance: r });
            }
            e += 1.0 / r;
        }
    }
    Ok(e)
}

/// Coulomb repulsion on each ion, `sum_j (R_i - R_j) / |R_i - R_j|^3`
/// (the negative gradient of [`coulomb_energy`]).
pub fn coulomb_field(positions: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let mut out = vec![Vector3::zeros(); positions.len()];
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = positions[i] - positions[j];
            let r = d.norm();
            if !(r >= COINCIDENCE_THRESHOLD) {
                return Err(Error::SingularConfiguration { i, j, distance: r });
            }
            let f = d / (r * r * r);
            out[i] += f;
            out[j] -= f;
        }
    }
    Ok(out)
}

/// Flat-slice version of [`coulomb_field`] used in the integrator hot loop.
pub(crate) fn coulomb_field_flat(pos: &[f64], out: &mut [f64]) -> Result<()> {
    let n = pos.len() / 3;
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let dx = pos[3 * i] - pos[3 * j];
            let dy = pos[3 * i + 1] - pos[3 * j + 1];
            let dz = pos[3 * i + 2] - pos[3 * j + 2];
            let r2 = dx * dx + dy * dy + dz * dz;
            let r = r2.sqrt();
            if !(r >= COINCIDENCE_THRESHOLD) {
                return Err(Error::SingularConfiguration { i, j, distance: r });
            }
            let s = 1.0 / (r2 * r);
            out[3 * i] += s * dx;
            out[3 * i + 1] += s * dy;
            out[3 * i + 2] += s * dz;
            out[3 * j] -= s * dx;
            out[3 * j + 1] -= s * dy;
            out[3 * j + 2] -= s * dz;
        }
    }
    Ok(())
}

/// Total nondimensional potential energy at the state's time.
///
/// The trap curvatures are evaluated in unscaled time, `t = 2 t' / Omega`,
/// so that `cos(Omega t) = cos(2 t')`.
pub fn potential_energy(config: &TrapConfig, state: &IonState) -> Result<f64> {
    check_size(config, state.n_ions())?;
    let lambda = config.lambda(2.0 * state.time / config.omega_rf());
    let trap: f64 = state
        .positions
        .iter()
        .map(|r| 0.5 * (0..3).map(|k| lambda[k] * r[k] * r[k]).sum::<f64>())
        .sum();
    Ok(trap + coulomb_energy(&state.positions)?)
}

/// Accelerations of the undamped rescaled equations of motion.
pub fn eom_rhs(config: &TrapConfig, state: &IonState) -> Result<Vec<Vector3<f64>>> {
    check_size(config, state.n_ions())?;
    let k = config.stiffness(state.time);
    let eps = config.epsilon();
    let field = coulomb_field(&state.positions)?;
    Ok(state
        .positions
        .iter()
        .zip(field)
        .map(|(r, f)| Vector3::new(-k[0] * r[0], -k[1] * r[1], -k[2] * r[2]) + eps * f)
        .collect())
}

fn check_size(config: &TrapConfig, n: usize) -> Result<()> {
    if config.n_ions() != n {
        return Err(Error::DimensionMismatch {
            expected: config.n_ions(),
            got: n,
        });
    }
    Ok(())
}

/// `G_ij = delta_ij sum_{m != i} r_im^-3 - (1 - delta_ij) r_ij^-3`.
pub fn dynamic_matrix(positions: &[Vector3<f64>]) -> Result<DMatrix<f64>> {
    let n = positions.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let r = (positions[i] - positions[j]).norm();
            if !(r >= COINCIDENCE_THRESHOLD) {
                return Err(Error::SingularConfiguration { i, j, distance: r });
            }
            let w = 1.0 / (r * r * r);
            g[(i, j)] = -w;
            g[(j, i)] = -w;
            g[(i, i)] += w;
            g[(j, j)] += w;
        }
    }
    Ok(g)
}
