//! Evolves a small excitation of a two-ion crystal through its Floquet modes
//! and prints the reconstruction next to direct integration, followed by
//! samples of the transformation matrix as CSV.

use std::f64::consts::PI;

use nalgebra::DVector;
use trapmodes::floquet::transform::write_gamma_csv;
use trapmodes::floquet::{build_fl_transform, evolve_modes, solve_modes, FloquetOptions};
use trapmodes::integrator::linear_flow;
use trapmodes::linearization::linearize;
use trapmodes::orbit::{default_seed, relax_to_crystal, SeedStrategy};
use trapmodes::{IntegratorSettings, RelaxSettings, TrapConfig};

fn main() -> trapmodes::Result<()> {
    let config = TrapConfig::linear(2, -0.01, 0.3, 10.0)?;
    let orbit = relax_to_crystal(
        &config,
        &default_seed(&config, SeedStrategy::Fixed)?,
        &RelaxSettings::default(),
    )?;
    let hill = linearize(&config, &orbit)?;
    let spectrum = solve_modes(&hill, &FloquetOptions::default())?;
    let fl = build_fl_transform(&spectrum.modes)?;
    println!("betas {:.6?}", fl.betas());

    let f = fl.dim();
    let x0 = DVector::from_fn(2 * f, |k, _| if k == 0 { 1e-3 } else { 0.0 });
    let times: Vec<f64> = (1..=20).map(|k| 5.0 * PI * k as f64).collect();
    let (_, direct) = linear_flow(
        f,
        &|t| Ok(hill.stiffness(t)),
        x0.as_slice(),
        100.0 * PI,
        &times,
        &IntegratorSettings::oracle(),
    )?;
    println!("{:>10} {:>14} {:>14}", "t", "modes", "direct");
    for (t, d) in times.iter().zip(&direct) {
        let e = evolve_modes(&fl, &x0, *t)?;
        println!("{t:>10.3} {:>14.6e} {:>14.6e}", e.phase_space[0], d[0]);
    }
    let stdout = std::io::stdout();
    write_gamma_csv(stdout.lock(), &fl, &[0.0, PI / 4.0])?;
    Ok(())
}
