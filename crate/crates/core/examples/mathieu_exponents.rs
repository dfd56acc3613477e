//! Characteristic exponents of the scalar Mathieu equation from continued
//! inversion, the direct monodromy and the lowest-order estimate.

use trapmodes::floquet::find_exponents;
use trapmodes::integrator::mathieu_exponent;
use trapmodes::{HillSystem, IntegratorSettings};

fn main() -> trapmodes::Result<()> {
    let oracle = IntegratorSettings::oracle();
    println!(
        "{:>9} {:>6} {:>16} {:>16} {:>10} {:>10}",
        "a", "q", "continued", "monodromy", "diff", "sqrt(a+q^2/2)"
    );
    for (a, q) in [
        (0.0, 0.2),
        (0.0, 0.41),
        (0.05766, 0.0),
        (-0.01, 0.3),
        (0.1, 0.6),
    ] {
        let beta = find_exponents(&HillSystem::scalar(a, q), 64, 20)?.modes[0].beta;
        let direct = mathieu_exponent(a, q, &oracle)?.expect("inside the first zone");
        let estimate = (a + q * q / 2.0).sqrt();
        println!(
            "{a:>9} {q:>6} {beta:>16.12} {direct:>16.12} {:>10.1e} {estimate:>10.6}",
            (beta - direct).abs()
        );
    }
    Ok(())
}
