//! Crystal stability over a grid of preset `(a, q)` values.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::orbit::{
    default_seed, find_stable_crystal, EscapeSettings, RelaxSettings, SeedStrategy,
};
use crate::trap::{Geometry, TrapConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    /// A periodic crystal exists and all its modes are stable.
    Stable,
    /// A periodic crystal exists but has a growing mode.
    UnstableMode,
    /// Relaxation did not settle on a periodic orbit.
    NoCrystal,
    /// Any other failure, for example an invalid parameter pair.
    Failed,
}

impl PointStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stable => "stable",
            Self::UnstableMode => "unstable_mode",
            Self::NoCrystal => "no_crystal",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub a: f64,
    pub q: f64,
    pub status: PointStatus,
    /// Smallest monodromy exponent, for a crystal.
    pub min_beta: Option<f64>,
    pub max_abs_lambda: Option<f64>,
}

/// Inclusive uniform grid; a single point when `count == 1`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// The template with its preset `a`, `q` replaced.
pub fn preset_at(template: &TrapConfig, a: f64, q: f64) -> Result<TrapConfig> {
    let (n, w) = (template.n_ions(), template.omega_rf());
    let cfg = match template.geometry() {
        Geometry::Linear => TrapConfig::linear(n, a, q, w)?,
        Geometry::Hyperbolic => TrapConfig::hyperbolic(n, a, q, w)?,
        Geometry::General => {
            return Err(Error::InvalidConfig(
                "sweeps need a linear or hyperbolic preset".into(),
            ))
        }
    };
    Ok(cfg.with_dc_asymmetry(template.dc_asymmetry()))
}

#[derive(Debug, Clone, Default)]
pub struct SweepSettings {
    pub relax: RelaxSettings,
    pub escape: EscapeSettings,
}

/// Relaxes and classifies a single grid point. Failures become statuses.
pub fn classify_point(
    template: &TrapConfig,
    a: f64,
    q: f64,
    seed: SeedStrategy,
    settings: &SweepSettings,
) -> SweepPoint {
    let mut point = SweepPoint {
        a,
        q,
        status: PointStatus::Failed,
        min_beta: None,
        max_abs_lambda: None,
    };
    let outcome = preset_at(template, a, q).and_then(|cfg| {
        let s = default_seed(&cfg, seed)?;
        find_stable_crystal(&cfg, &s, &settings.relax, &settings.escape)
    });
    match outcome {
        Ok(found) => {
            point.status = if found.is_stable() {
                PointStatus::Stable
            } else {
                PointStatus::UnstableMode
            };
            point.min_beta = found.monodromy.exponents.first().copied();
            point.max_abs_lambda = Some(found.monodromy.max_modulus());
        }
        Err(
            Error::NonCrystal { .. }
            | Error::RefinementFailure { .. }
            | Error::StepSizeUnderflow { .. }
            | Error::TooManySteps(_),
        ) => point.status = PointStatus::NoCrystal,
        Err(e) => log::warn!("a = {a}, q = {q}: {e}"),
    }
    point
}

/// Classifies every `(a, q)` pair, `a` varying slowest, in parallel on the
/// current rayon pool.
pub fn run_sweep(
    template: &TrapConfig,
    a_values: &[f64],
    q_values: &[f64],
    seed: SeedStrategy,
    settings: &SweepSettings,
) -> Vec<SweepPoint> {
    let grid: Vec<(f64, f64)> = a_values
        .iter()
        .flat_map(|&a| q_values.iter().map(move |&q| (a, q)))
        .collect();
    grid.par_iter()
        .map(|&(a, q)| classify_point(template, a, q, seed, settings))
        .collect()
}

/// Bisects in `q` at fixed `a` for the boundary between a stable crystal at
/// `q_lo` and none at `q_hi`.
pub fn stability_edge(
    template: &TrapConfig,
    a: f64,
    mut q_lo: f64,
    mut q_hi: f64,
    tol: f64,
    seed: SeedStrategy,
    settings: &SweepSettings,
) -> Result<f64> {
    let stable =
        |q: f64| classify_point(template, a, q, seed, settings).status == PointStatus::Stable;
    if !stable(q_lo) || stable(q_hi) {
        return Err(Error::InvalidConfig(format!(
            "q range [{q_lo}, {q_hi}] does not bracket a stability edge at a = {a}"
        )));
    }
    while q_hi - q_lo > tol {
        let mid = 0.5 * (q_lo + q_hi);
        if stable(mid) {
            q_lo = mid;
        } else {
            q_hi = mid;
        }
    }
    Ok(0.5 * (q_lo + q_hi))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(mut w: W, points: &[SweepPoint]) -> Result<()> {
    writeln!(w, "a,q,status,min_beta,max_abs_lambda")?;
    for p in points {
        writeln!(
            w,
            "{:.16e},{:.16e},{},{},{}",
            p.a,
            p.q,
            p.status.as_str(),
            opt(p.min_beta),
            opt(p.max_abs_lambda)
        )?;
    }
    Ok(())
}
