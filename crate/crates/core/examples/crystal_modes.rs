//! Floquet modes of the six-ion crystal: exponents from continued inversion
//! against the monodromy, the Floquet-Lyapunov identities and a long
//! reconstruction against direct integration.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use trapmodes::floquet::{
    build_fl_transform, evolve_modes, ladder_residual, solve_modes, FloquetOptions,
};
use trapmodes::integrator::{hill_fundamental_matrix, linear_flow, matrizant};
use trapmodes::linearization::{assemble_hill, hessian_harmonics};
use trapmodes::orbit::{default_seed, find_stable_crystal, EscapeSettings, SeedStrategy};
use trapmodes::{IntegratorSettings, RelaxSettings, TrapConfig};

fn main() -> trapmodes::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/peculiar.json");
    let config = TrapConfig::load(std::path::Path::new(path))?;
    let clock = Instant::now();
    let seed = default_seed(&config, SeedStrategy::Fixed)?;
    let crystal = find_stable_crystal(
        &config,
        &seed,
        &RelaxSettings::default(),
        &EscapeSettings::default(),
    )?;
    println!("crystal after {:?}", clock.elapsed());

    let clock = Instant::now();
    let hill = assemble_hill(&config, &hessian_harmonics(&crystal.orbit, &[0, 2, 4])?)?;
    let spectrum = solve_modes(&hill, &FloquetOptions::default())?;
    println!(
        "{} exponents after {:?}",
        spectrum.modes.len(),
        clock.elapsed()
    );
    let oracle = matrizant(&hill, &IntegratorSettings::oracle())?;
    println!("oracle after {:?}", clock.elapsed());
    let mut worst = 0.0f64;
    for (m, b) in spectrum.modes.iter().zip(&oracle.exponents) {
        worst = worst.max((m.beta - b).abs());
        println!(
            "beta {:.12}  oracle {:.12}  residual {:.1e}",
            m.beta,
            b,
            ladder_residual(&hill, m, 64)
        );
    }
    println!("max |beta - oracle| = {worst:.2e}");

    let fl = build_fl_transform(&spectrum.modes)?;
    println!("normalization defect {:.2e}", fl.normalization_defect());
    let f = fl.dim();
    let id = nalgebra::DMatrix::<Complex64>::identity(2 * f, 2 * f);
    let mut inv_err = 0.0f64;
    for k in 0..16 {
        let t = 0.37 * k as f64 + 0.1;
        let e = &fl.gamma(t) * fl.gamma_inv(t) - &id;
        inv_err = inv_err.max(e.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    println!("max |Gamma Gamma^-1 - I| = {inv_err:.2e}");
    for t in [PI / 3.0, PI, 3.0 * PI] {
        let phi = hill_fundamental_matrix(&hill, t, &IntegratorSettings::oracle())?;
        println!(
            "t = {t:.4}: |Phi - Gamma e^Bt Gamma^-1(0)| = {:.2e}",
            (fl.propagator(t) - phi).amax()
        );
    }

    let x0 = DVector::from_fn(2 * f, |k, _| 1e-3 * ((k as f64) * 1.7 + 0.3).sin());
    let horizon = 100.0 * PI;
    let times: Vec<f64> = (1..=400).map(|k| horizon * k as f64 / 400.0).collect();
    let (_, direct) = linear_flow(
        f,
        &|t| Ok(hill.stiffness(t)),
        x0.as_slice(),
        horizon,
        &times,
        &IntegratorSettings::oracle(),
    )?;
    let scale = direct
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let mut err = 0.0f64;
    let mut imag = 0.0f64;
    for (t, d) in times.iter().zip(&direct) {
        let e = evolve_modes(&fl, &x0, *t)?;
        imag = imag.max(e.max_imag);
        for (a, b) in e.phase_space.iter().zip(d) {
            err = err.max((a - b).abs());
        }
    }
    println!(
        "100 periods: max error / amplitude = {:.2e}, max imaginary part {imag:.1e}",
        err / scale
    );
    Ok(())
}
