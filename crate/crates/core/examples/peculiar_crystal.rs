//! Six ions in a nearly symmetric linear trap relax to a crystal that is
//! rotated away from the trap axes. Prints the average positions and the
//! measured `B_2 / B_0` next to `-q/4` and the axial estimate.

use std::time::Instant;

use trapmodes::orbit::{
    default_seed, find_stable_crystal, micromotion_ratio, predict_micromotion, EscapeSettings,
    SeedStrategy, MASK_THRESHOLD,
};
use trapmodes::{RelaxSettings, TrapConfig};

fn main() -> trapmodes::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/peculiar.json");
    let config = TrapConfig::load(std::path::Path::new(path))?;
    let clock = Instant::now();
    let seed = default_seed(&config, SeedStrategy::Fixed)?;
    let found = find_stable_crystal(
        &config,
        &seed,
        &RelaxSettings::default(),
        &EscapeSettings::default(),
    )?;
    println!(
        "relaxed in {:?} with {} kick(s); max |lambda| = {:.12}, harmonic-balance residual {:.1e}",
        clock.elapsed(),
        found.attempts,
        found.monodromy.max_modulus(),
        found.orbit.residual()
    );

    let b0 = found.orbit.mean_positions();
    let measured = micromotion_ratio(&found.orbit, MASK_THRESHOLD);
    let predicted = predict_micromotion(&config, b0)?;
    let q = config.q();
    println!("-q/4 on y: {:.5}, on z: {:.5}", -q[1] / 4.0, -q[2] / 4.0);
    println!(
        "{:>3} {:>10} {:>10} {:>10}   {:>11} {:>11} {:>11}",
        "ion", "x", "y", "z", "B2/B0 x", "B2/B0 y", "B2/B0 z"
    );
    let show = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.4e}"));
    for (i, (b, m)) in b0.iter().zip(&measured).enumerate() {
        println!(
            "{i:>3} {:>10.6} {:>10.6} {:>10.6}   {:>11} {:>11} {:>11}",
            b[0],
            b[1],
            b[2],
            show(m[0]),
            show(m[1]),
            show(m[2])
        );
    }
    println!(
        "axial estimate from B0: {:?}",
        predicted
            .ratio
            .iter()
            .map(|r| r[0].map(|v| format!("{v:.3e}")))
            .collect::<Vec<_>>()
    );
    println!(
        "axial bound (q/4)^3/2 = {:.2e}",
        predicted.axial_bound_symmetric
    );
    Ok(())
}
