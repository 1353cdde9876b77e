//! Two-arm interferometer with mode projectors: click fringes, the
//! spurious fringe caused by leakage, and Monte Carlo counts.

use std::f64::consts::TAU;

use oamtomo::apparatus::{click_probability, fringe_visibility, simulate_counts, DetectionConfig, InterferometerConfig, Port};
use oamtomo::qubit::NamedState;
use oamtomo::seed::derive_seed;

fn main() -> oamtomo::Result<()> {
    let det = DetectionConfig::experimental();
    let device = InterferometerConfig::nominal(1e-3, 1.0);

    println!("H input, nominal device, port X");
    println!("phase (deg)  P(click)");
    for k in 0..8 {
        let phi = TAU * k as f64 / 8.0;
        let p = click_probability(&NamedState::H.qubit(), &device.with_phase(phi), &det, Port::X);
        println!("{:>11.0}  {p:.5}", phi.to_degrees());
    }

    println!("\nspurious fringe of |R>: visibility vs 2 sqrt(eps)");
    let ideal_det = DetectionConfig::ideal(1e-3, 1);
    for eps in [1e-3, 1e-2] {
        let dev = InterferometerConfig::nominal(eps, 1.0);
        let v = fringe_visibility(&NamedState::R.qubit(), &dev, &ideal_det, Port::X, 720);
        println!("eps = {eps:.0e}: V = {v:.4}, 2 sqrt(eps) = {:.4}", 2.0 * eps.sqrt());
    }

    println!("\nMonte Carlo, 10^6 trials at phi = 0");
    for (i, s) in NamedState::ALL.into_iter().enumerate() {
        let rec = simulate_counts(&s.to_string(), &s.qubit(), &device, &det, Port::X, 1_000_000, derive_seed(42, i as u64))?;
        let p = click_probability(&s.qubit(), &device, &det, Port::X);
        println!("{s}: {} clicks (expected {:.0})", rec.clicks, p * 1e6);
    }
    Ok(())
}
