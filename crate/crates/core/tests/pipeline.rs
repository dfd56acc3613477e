use std::path::Path;

use trapmodes::floquet::{solve_modes, FloquetOptions};
use trapmodes::integrator::mathieu_exponent;
use trapmodes::linearization::{hessian_harmonics, linearize};
use trapmodes::orbit::{
    default_seed, find_stable_crystal, fourier_defect, relax_to_crystal, EscapeSettings,
    SeedStrategy,
};
use trapmodes::pseudo::{symmetric_mode_mathieu, trap_normal_modes};
use trapmodes::{HillSystem, IntegratorSettings, PeriodicOrbit, RelaxSettings, TrapConfig};

fn load(name: &str) -> TrapConfig {
    TrapConfig::load(
        &Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("configs")
            .join(name),
    )
    .unwrap()
}

fn two_ion_orbit() -> (TrapConfig, PeriodicOrbit) {
    let config = load("two_ion.json");
    let seed = default_seed(&config, SeedStrategy::Fixed).unwrap();
    let orbit = relax_to_crystal(&config, &seed, &RelaxSettings::default()).unwrap();
    (config, orbit)
}

#[test]
fn axial_pair_has_no_micromotion_coupling() {
    let (_, orbit) = two_ion_orbit();
    let k = hessian_harmonics(&orbit, &[0, 2]).unwrap();
    assert!(k[&2].amax() < 1e-12 * k[&0].amax());
}

#[test]
fn axial_pair_exponents_match_decoupled_mathieu() {
    let (config, orbit) = two_ion_orbit();
    let hill = linearize(&config, &orbit).unwrap();
    let betas = solve_modes(&hill, &FloquetOptions::default())
        .unwrap()
        .betas();
    let basis = trap_normal_modes(&config).unwrap();
    let mut checked = 0;
    for j in 0..basis.mode_matrix.ncols() {
        let col = basis.mode_matrix.column(j);
        let axial: f64 = (0..2).map(|i| col[3 * i] * col[3 * i]).sum();
        if axial < 0.99 {
            continue;
        }
        let m = symmetric_mode_mathieu(&config, &basis, j).unwrap();
        let expect = mathieu_exponent(m.a_eff, m.q_eff, &IntegratorSettings::oracle())
            .unwrap()
            .unwrap();
        let nearest = betas
            .iter()
            .map(|b| (b - expect).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < 1e-6, "mode {j}: {expect} not among {betas:?}");
        checked += 1;
    }
    assert_eq!(checked, 2);
}

#[test]
fn truncated_orbits_leave_larger_defects() {
    let config = load("peculiar.json");
    let seed = default_seed(&config, SeedStrategy::Fixed).unwrap();
    let found = find_stable_crystal(
        &config,
        &seed,
        &RelaxSettings::default(),
        &EscapeSettings::default(),
    )
    .unwrap();
    let defects: Vec<f64> = [1, 2, 4, 6]
        .iter()
        .map(|&n| fourier_defect(&config, &found.orbit.truncated(n)).unwrap())
        .collect();
    assert!(defects.windows(2).all(|w| w[1] < w[0]), "{defects:?}");
    assert!(defects[3] < 1e-6);
}

#[test]
fn saved_orbit_gives_the_same_hill_system() {
    let (config, orbit) = two_ion_orbit();
    let text = serde_json::to_string(&orbit.to_json_value()).unwrap();
    let back = PeriodicOrbit::from_json_value(&serde_json::from_str(&text).unwrap()).unwrap();
    let h1 = linearize(&config, &orbit).unwrap();
    let h2 = linearize(&config, &back).unwrap();
    assert_eq!(h1.to_json_value(), h2.to_json_value());
    let again = HillSystem::from_json_value(&h1.to_json_value()).unwrap();
    assert_eq!(again.a(), h1.a());
}
