//! Floquet exponents and mode ladders of coupled Hill systems by continued
//! matrix inversion, and the Floquet-Lyapunov transformation built from them.

pub mod continued;
pub mod spectrum;
pub mod transform;

pub use continued::{y_determinant, Expansion};
pub use spectrum::{
    find_exponents, find_exponents_with, ladder_residual, mode_ladder, solve_modes, FloquetMode,
    FloquetOptions, Spectrum,
};
pub use transform::{build_fl_transform, evolve_modes, mode_report, FLTransform, ModeEvolution};
