//! Two ions in a hyperbolic trap: grid points where a single ion is stable
//! but no stable two-ion crystal is found.
//!
//! Usage: `stability_sweep [A_LO A_HI A_COUNT Q_LO Q_HI Q_COUNT]`.

use trapmodes::integrator::mathieu_exponent;
use trapmodes::orbit::SeedStrategy;
use trapmodes::sweep::{linspace, run_sweep, PointStatus, SweepSettings};
use trapmodes::{IntegratorSettings, TrapConfig};

fn main() -> trapmodes::Result<()> {
    let template = TrapConfig::hyperbolic(2, 0.0, 0.3, 10.0)?;
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .filter_map(|s| s.parse().ok())
        .collect();
    let g = |k: usize, d: f64| args.get(k).copied().unwrap_or(d);
    let a_values = linspace(g(0, 0.11), g(1, 0.17), g(2, 13.0) as usize);
    let q_values = linspace(g(3, 0.36), g(4, 0.42), g(5, 13.0) as usize);
    let points = run_sweep(
        &template,
        &a_values,
        &q_values,
        SeedStrategy::Fixed,
        &SweepSettings::default(),
    );
    let oracle = IntegratorSettings::oracle();
    let mut found = 0;
    for p in &points {
        let single = [(p.a, p.q), (-2.0 * p.a, -2.0 * p.q)]
            .iter()
            .map(|&(a, q)| mathieu_exponent(a, q, &oracle).map(|b| b.is_some()))
            .collect::<trapmodes::Result<Vec<bool>>>()?
            .iter()
            .all(|&s| s);
        if single && p.status != PointStatus::Stable {
            found += 1;
            println!(
                "a = {:+.3}, q = {:.3}: single ion stable, crystal {}",
                p.a,
                p.q,
                p.status.as_str()
            );
        }
    }
    println!(
        "{found} of {} points lose the crystal inside the single-ion zone",
        points.len()
    );
    Ok(())
}
