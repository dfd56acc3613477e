//! Characteristic exponents as the zeros of `Y_beta` on `(0, 1)`, and the
//! vector ladders `C_2n` belonging to them.
//!
//! Roots are located through the inertia of the symmetric matrix `Y_beta`:
//! the number of negative eigenvalues changes by the kernel dimension when
//! `beta` crosses a root. It also changes where an intermediate block of the
//! continued inversion is singular, so every change is isolated by bisection
//! and kept only if `Y` is nearly singular on both sides.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::continued::Expansion;
use crate::error::{Error, Result};
use crate::integrator::{matrizant, IntegratorSettings, Monodromy};
use crate::linalg::{canonical_basis, fix_sign, sym_eigen_sorted};
use crate::linearization::HillSystem;

#[derive(Debug, Clone)]
pub struct FloquetOptions {
    pub depth: usize,
    pub scan_points_per_mode: usize,
    pub n_max: usize,
    /// Target agreement between depth `d` and `d + 5`.
    pub beta_tol: f64,
    pub max_depth: usize,
    /// The scan grid covers `(edge, 1 - edge)`.
    pub edge: f64,
    /// Roots closer than this to 0 or 1 are rejected.
    pub integral_tol: f64,
    pub oracle: IntegratorSettings,
}

impl Default for FloquetOptions {
    fn default() -> Self {
        Self {
            depth: 20,
            scan_points_per_mode: 64,
            n_max: 6,
            beta_tol: 1e-10,
            max_depth: 60,
            edge: 1e-4,
            integral_tol: 1e-6,
            oracle: IntegratorSettings::oracle(),
        }
    }
}

impl FloquetOptions {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 5 || self.max_depth < self.depth {
            return Err(Error::InvalidConfig(format!(
                "expansion depth {} must be at least 5 and at most max_depth {}",
                self.depth, self.max_depth
            )));
        }
        if self.scan_points_per_mode < 10 {
            return Err(Error::InvalidConfig(
                "need at least 10 scan points per mode".into(),
            ));
        }
        if !(self.edge > 0.0 && self.edge < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "scan edge {} outside (0, 0.5)",
                self.edge
            )));
        }
        self.oracle.validate()
    }
}

/// One characteristic exponent with one vector ladder `C_2n`, `|n| <= n_max`.
///
/// A root of multiplicity `k` yields `k` modes sharing `beta`, each carrying
/// `kernel_dim = k`. `ladder` is empty when only the exponent was requested.
#[derive(Debug, Clone)]
pub struct FloquetMode {
    pub beta: f64,
    pub kernel_dim: usize,
    pub ladder: BTreeMap<i64, DVector<Complex64>>,
}

impl FloquetMode {
    pub fn c(&self, harmonic: i64) -> Option<&DVector<Complex64>> {
        self.ladder.get(&harmonic)
    }

    /// `u(t) = sum_n C_2n e^{i(2n + beta)t}`.
    pub fn displacement(&self, t: f64) -> DVector<Complex64> {
        let f = self.ladder.values().next().map_or(0, |c| c.len());
        let mut u = DVector::zeros(f);
        for (&h, c) in &self.ladder {
            u += c * Complex64::from_polar(1.0, (h as f64 + self.beta) * t);
        }
        u
    }
}

/// Result of the exponent search. When `stable` is false the modes are the
/// stable subset and `oracle` carries the monodromy with the unstable moduli.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub modes: Vec<FloquetMode>,
    pub stable: bool,
    pub oracle: Option<Monodromy>,
}

impl Spectrum {
    pub fn betas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.beta).collect()
    }

    pub fn instability(&self) -> Option<Error> {
        self.oracle
            .as_ref()
            .filter(|_| !self.stable)
            .and_then(Monodromy::instability)
    }
}

struct Probe {
    negative: usize,
    eigenvalues: DVector<f64>,
}

fn probe(hill: &HillSystem, beta: f64, depth: usize) -> Result<Probe> {
    let e = Expansion::new(hill, beta, depth)?;
    let (eigenvalues, _) = sym_eigen_sorted(&e.y);
    let negative = eigenvalues.iter().filter(|&&m| m < 0.0).count();
    Ok(Probe {
        negative,
        eigenvalues,
    })
}

/// Probes near `beta`, stepping aside when it lands on a singular level.
fn probe_near(hill: &HillSystem, beta: f64, depth: usize, step: f64) -> Result<(f64, Probe)> {
    let mut last = None;
    for k in [0.0, 1.0, -1.0, 2.0, -2.0] {
        let b = beta + k * step;
        match probe(hill, b, depth) {
            Ok(p) => return Ok((b, p)),
            Err(e @ Error::ExpansionBreakdown { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

const BRACKET_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
struct Bracket {
    lo: f64,
    hi: f64,
    n_lo: usize,
    n_hi: usize,
}

fn isolate(hill: &HillSystem, depth: usize, b: Bracket, out: &mut Vec<Bracket>) -> Result<()> {
    if b.hi - b.lo <= BRACKET_WIDTH {
        out.push(b);
        return Ok(());
    }
    let mid = 0.5 * (b.lo + b.hi);
    let (mid, p) = probe_near(hill, mid, depth, 1e-3 * (b.hi - b.lo))?;
    if p.negative != b.n_lo {
        isolate(
            hill,
            depth,
            Bracket {
                hi: mid,
                n_hi: p.negative,
                ..b
            },
            out,
        )?;
    }
    if p.negative != b.n_hi {
        isolate(
            hill,
            depth,
            Bracket {
                lo: mid,
                n_lo: p.negative,
                ..b
            },
            out,
        )?;
    }
    Ok(())
}

fn scale(hill: &HillSystem) -> f64 {
    hill.a().amax().max(hill.q2().amax()).max(1.0)
}

/// Number of eigenvalues with `|mu| < tol` at `beta`.
fn near_kernel(hill: &HillSystem, beta: f64, depth: usize, tol: f64) -> Result<usize> {
    let p = probe(hill, beta, depth)?;
    Ok(p.eigenvalues.iter().filter(|m| m.abs() < tol).count())
}

/// Illinois iteration on the eigenvalue of `Y` with sorted index `idx`,
/// which changes sign inside `[lo, hi]`.
fn refine(hill: &HillSystem, depth: usize, idx: usize, mut lo: f64, mut hi: f64) -> Result<f64> {
    let g = |b: f64| -> Result<f64> { Ok(probe(hill, b, depth)?.eigenvalues[idx]) };
    let (mut glo, mut ghi) = (g(lo)?, g(hi)?);
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 || glo.signum() == ghi.signum() {
        return Ok(0.5 * (lo + hi));
    }
    let mut side = 0i8;
    for _ in 0..100 {
        if hi - lo < 1e-14 {
            break;
        }
        let mut x = (lo * ghi - hi * glo) / (ghi - glo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let gx = g(x)?;
        if gx == 0.0 {
            return Ok(x);
        }
        if gx.signum() == glo.signum() {
            lo = x;
            glo = gx;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            ghi = gx;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Refines a root at increasing depth until depth `d` and `d + 5` agree.
fn converge_root(hill: &HillSystem, opts: &FloquetOptions, idx: usize, b: Bracket) -> Result<f64> {
    let mut beta = refine(hill, opts.depth, idx, b.lo, b.hi)?;
    let mut depth = opts.depth;
    while depth + 5 <= opts.max_depth {
        let deeper = depth + 5;
        let w = 1e-8;
        let (lo, hi) = (beta - w, beta + w);
        let n_lo = probe(hill, lo, deeper)?.negative;
        let n_hi = probe(hill, hi, deeper)?.negative;
        let next = if n_lo != n_hi {
            refine(hill, deeper, n_lo.min(n_hi), lo, hi)?
        } else {
            // Root moved by more than the bracket; search a wider window.
            let mut found = Vec::new();
            let (lo, hi) = (beta - 1e-4, beta + 1e-4);
            let n_lo = probe(hill, lo, deeper)?.negative;
            let n_hi = probe(hill, hi, deeper)?.negative;
            isolate(hill, deeper, Bracket { lo, hi, n_lo, n_hi }, &mut found)?;
            match found.first() {
                Some(f) => refine(hill, deeper, f.n_lo.min(f.n_hi), f.lo, f.hi)?,
                None => return Ok(beta),
            }
        };
        let delta = (next - beta).abs();
        beta = next;
        depth = deeper;
        if delta < opts.beta_tol {
            return Ok(beta);
        }
    }
    log::warn!(
        "exponent {beta} not converged in depth up to {}",
        opts.max_depth
    );
    Ok(beta)
}

/// Exponents only, with default options apart from the grid size and depth.
pub fn find_exponents(hill: &HillSystem, scan_points: usize, depth: usize) -> Result<Spectrum> {
    let f = hill.dim();
    if scan_points < 10 * f {
        return Err(Error::InvalidConfig(format!(
            "{scan_points} scan points is fewer than 10 per mode ({f} modes)"
        )));
    }
    let opts = FloquetOptions {
        depth,
        max_depth: FloquetOptions::default().max_depth.max(depth),
        scan_points_per_mode: scan_points.div_ceil(f),
        ..FloquetOptions::default()
    };
    find_exponents_with(hill, &opts)
}

pub fn find_exponents_with(hill: &HillSystem, opts: &FloquetOptions) -> Result<Spectrum> {
    opts.validate()?;
    let f = hill.dim();
    let points = opts.scan_points_per_mode * f;
    let width = 1.0 - 2.0 * opts.edge;
    let step = width / (points - 1) as f64;
    let grid: Vec<(f64, usize)> = (0..points)
        .into_par_iter()
        .map(|k| {
            let beta = opts.edge + k as f64 * step;
            probe_near(hill, beta, opts.depth, 1e-3 * step).map(|(b, p)| (b, p.negative))
        })
        .collect::<Result<_>>()?;

    let mut brackets = Vec::new();
    for w in grid.windows(2) {
        let ((lo, n_lo), (hi, n_hi)) = (w[0], w[1]);
        if n_lo != n_hi {
            isolate(
                hill,
                opts.depth,
                Bracket { lo, hi, n_lo, n_hi },
                &mut brackets,
            )?;
        }
    }

    let tol = 1e-6 * scale(hill);
    let roots: Vec<(f64, usize)> = brackets
        .par_iter()
        .map(|b| -> Result<Option<(f64, usize)>> {
            let k = b.n_lo.abs_diff(b.n_hi);
            let small = near_kernel(hill, b.lo, opts.depth, tol)?
                .min(near_kernel(hill, b.hi, opts.depth, tol)?);
            if small < k {
                return Ok(None);
            }
            let beta = converge_root(hill, opts, b.n_lo.min(b.n_hi), *b)?;
            if beta < opts.integral_tol || beta > 1.0 - opts.integral_tol {
                log::warn!("rejecting near-integral exponent {beta}");
                return Ok(None);
            }
            Ok(Some((beta, k)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let modes: Vec<FloquetMode> = roots
        .iter()
        .flat_map(|&(beta, k)| {
            (0..k).map(move |_| FloquetMode {
                beta,
                kernel_dim: k,
                ladder: BTreeMap::new(),
            })
        })
        .collect();

    if modes.len() == f {
        return Ok(Spectrum {
            modes,
            stable: true,
            oracle: None,
        });
    }
    log::warn!(
        "found {} of {f} exponents, consulting the matrizant",
        modes.len()
    );
    let oracle = matrizant(hill, &opts.oracle)?;
    if oracle.is_stable() {
        return Err(Error::IncompleteSpectrum {
            found: modes.len(),
            expected: f,
            oracle: oracle.exponents.clone(),
        });
    }
    Ok(Spectrum {
        modes,
        stable: false,
        oracle: Some(oracle),
    })
}

/// Orthonormal kernel vectors of `Y_beta`: the `count` eigenvectors with the
/// smallest `|mu|`, or all with `|mu| <= 1e-8 max(||Y||, 1)` when `count` is
/// `None`.
fn kernel(e: &Expansion, count: Option<usize>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen_sorted(&e.y);
    let norm = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| vals[i].abs().total_cmp(&vals[j].abs()));
    let sigma_min = vals[order[0]].abs();
    if sigma_min > 1e-6 * norm {
        return Err(Error::StaleRoot {
            beta: e.beta,
            sigma_min,
        });
    }
    let k = count.unwrap_or_else(|| {
        order
            .iter()
            .filter(|&&i| vals[i].abs() <= 1e-8 * norm)
            .count()
            .max(1)
    });
    let cols: Vec<DVector<f64>> = order[..k.min(order.len())]
        .iter()
        .map(|&i| vecs.column(i).into_owned())
        .collect();
    let basis = DMatrix::from_columns(&cols);
    if k == 1 {
        let mut v = basis.column(0).into_owned();
        fix_sign(&mut v);
        Ok(DMatrix::from_columns(&[v]))
    } else {
        Ok(canonical_basis(&basis))
    }
}

fn ladders(e: &Expansion, basis: &DMatrix<f64>, n_max: usize) -> Vec<FloquetMode> {
    let k = basis.ncols();
    basis
        .column_iter()
        .map(|c0| {
            let ladder = e
                .ladder(&c0.into_owned(), n_max)
                .into_iter()
                .map(|(h, c)| (h, c.map(|x| Complex64::new(x, 0.0))))
                .collect();
            FloquetMode {
                beta: e.beta,
                kernel_dim: k,
                ladder,
            }
        })
        .collect()
}

/// Ladders at a validated root, one per kernel vector of `Y_beta`.
pub fn mode_ladder(
    hill: &HillSystem,
    beta: f64,
    depth: usize,
    n_max: usize,
) -> Result<Vec<FloquetMode>> {
    let e = Expansion::new(hill, beta, depth)?;
    let basis = kernel(&e, None)?;
    Ok(ladders(&e, &basis, n_max))
}

/// Ladders for a root whose multiplicity is already known.
pub fn mode_ladder_with_multiplicity(
    hill: &HillSystem,
    beta: f64,
    depth: usize,
    n_max: usize,
    multiplicity: usize,
) -> Result<Vec<FloquetMode>> {
    let e = Expansion::new(hill, beta, depth)?;
    let basis = kernel(&e, Some(multiplicity))?;
    Ok(ladders(&e, &basis, n_max))
}

/// Exponents and ladders. Degenerate roots contribute one mode per kernel vector.
pub fn solve_modes(hill: &HillSystem, opts: &FloquetOptions) -> Result<Spectrum> {
    let spectrum = find_exponents_with(hill, opts)?;
    let mut roots: Vec<(f64, usize)> = Vec::new();
    for m in &spectrum.modes {
        if roots.last().is_none_or(|r| r.0 != m.beta) {
            roots.push((m.beta, m.kernel_dim));
        }
    }
    let depth = opts.depth.max(opts.n_max + 2);
    let modes = roots
        .par_iter()
        .map(|&(beta, k)| mode_ladder_with_multiplicity(hill, beta, depth, opts.n_max, k))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(Spectrum { modes, ..spectrum })
}

/// Largest `|u'' + (A - 2Q2 cos 2t - 2Q4 cos 4t) u|` over `samples` points of
/// one period, relative to the largest `|u|`, for the mode solution built
/// from the ladder.
pub fn ladder_residual(hill: &HillSystem, mode: &FloquetMode, samples: usize) -> f64 {
    let f = hill.dim();
    let zero = DVector::<Complex64>::zeros(f);
    let c = |h: i64| mode.ladder.get(&h).unwrap_or(&zero);
    let cplx = |m: &DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
    let (a, q2, q4) = (cplx(hill.a()), cplx(hill.q2()), cplx(hill.q4()));
    let top = mode.ladder.keys().map(|h| h.abs()).max().unwrap_or(0) + 4;
    let mut res: BTreeMap<i64, DVector<Complex64>> = BTreeMap::new();
    for h in (-top..=top).step_by(2) {
        let s = h as f64 + mode.beta;
        let r = &a * c(h)
            - c(h) * Complex64::new(s * s, 0.0)
            - &q2 * (c(h - 2) + c(h + 2))
            - &q4 * (c(h - 4) + c(h + 4));
        res.insert(h, r);
    }
    let mut worst = 0.0f64;
    let mut size = 0.0f64;
    for k in 0..samples {
        let t = std::f64::consts::PI * k as f64 / samples as f64;
        let mut r = DVector::<Complex64>::zeros(f);
        for (&h, v) in &res {
            r += v * Complex64::from_polar(1.0, (h as f64 + mode.beta) * t);
        }
        worst = worst.max(r.iter().map(|z| z.norm()).fold(0.0, f64::max));
        size = size.max(
            mode.displacement(t)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max),
        );
    }
    worst / size.max(f64::MIN_POSITIVE)
}
