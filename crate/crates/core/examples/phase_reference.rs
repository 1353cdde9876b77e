//! Phase-reference camera: render frames of the back-propagated beam, fit
//! the ring on the stack average and read the phase off the dark axis.

use std::f64::consts::TAU;

use oamtomo::phasecam::{angle_diff, average_frames, extract_phase, fit_ring, synthesize_frame, Defects, FrameGeometry, FrameNoise, DEFAULT_BINS};
use oamtomo::seed::{derive_seed, rng};

fn main() -> oamtomo::Result<()> {
    let geometry = FrameGeometry::default();
    let defects = Defects { offset: 0.1, tilt: 0.1, ..Defects::default() };
    let noise = FrameNoise { photons_at_peak: Some(2000.0), background: 0.05 };

    let phis: Vec<f64> = (0..36).map(|k| TAU * k as f64 / 36.0).collect();
    let frames = phis
        .iter()
        .enumerate()
        .map(|(k, &phi)| synthesize_frame(phi, &defects, &noise, &geometry, &mut rng(derive_seed(5, k as u64))))
        .collect::<oamtomo::Result<Vec<_>>>()?;

    let ring = fit_ring(&average_frames(&frames)?)?;
    println!(
        "ring: center ({:.2}, {:.2}) px, width {:.2} px, radius of interest {:.1} px",
        ring.center.0, ring.center.1, ring.width, ring.radius_of_interest
    );

    println!("\ntrue phi  alpha_d  phi      error (deg)");
    let mut worst = 0.0f64;
    for (frame, phi) in frames.iter().zip(&phis) {
        let est = extract_phase(&frame.intensity(), &ring, DEFAULT_BINS)?;
        let err = angle_diff(est.phi, *phi).to_degrees();
        worst = worst.max(err.abs());
        println!("{:>8.0}  {:>7.1}  {:>6.1}  {err:>6.2}", phi.to_degrees(), est.alpha_d.to_degrees(), est.phi.to_degrees());
    }
    println!("\nworst error {worst:.2} deg (one bin = {:.1} deg)", 360.0 / DEFAULT_BINS as f64);
    Ok(())
}
