//! Pseudopotential equilibrium and normal modes of a short chain in a linear
//! trap, with the decoupled Mathieu parameters of the axial modes.

use trapmodes::pseudo::{mode_coupling, symmetric_mode_mathieu, trap_normal_modes};
use trapmodes::TrapConfig;

fn main() -> trapmodes::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let config = TrapConfig::linear(n, -0.01, 0.4, 10.0)?;
    let basis = trap_normal_modes(&config)?;
    println!("gamma = {:?}", basis.gamma);
    println!("equilibrium (trap units):");
    for r in basis.equilibrium_trap_units() {
        println!("  {:10.6} {:10.6} {:10.6}", r[0], r[1], r[2]);
    }
    println!(
        "frequencies (axial COM = 1): {:.6?}",
        basis.frequencies.as_slice()
    );
    if let Some(dev) = basis.breathing_deviation() {
        println!(
            "breathing mode {} deviates from R0 by {dev:.1e}",
            basis.breathing_index.unwrap_or(0)
        );
    }
    let coupling = mode_coupling(&config, &basis)?;
    println!("rf drive F = {:.3e}", coupling.f_vec.transpose());
    for j in 0..3 * n {
        if let Ok(m) = symmetric_mode_mathieu(&config, &basis, j) {
            println!(
                "mode {j:2}: a_eff {:.6}  q_eff {:.6}  drive {:.3e}",
                m.a_eff, m.q_eff, m.drive_rf
            );
        }
    }
    Ok(())
}
