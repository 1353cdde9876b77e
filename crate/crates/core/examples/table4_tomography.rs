//! Tomography of the six basis states at the experiment's scale: 0.6
//! photons per pulse, 1e-3 background, 99% visibility, -25 dB leakage and
//! 10^6 trials per setting.

use oamtomo::apparatus::{DetectionConfig, InterferometerConfig};
use oamtomo::qubit::{pure_to_stokes, NamedState};
use oamtomo::seed::derive_seed;
use oamtomo::tomo::{fidelity_bounds, run_tomography, tune_optical_visibility, ErrorBudget, MeasurementSchedule, TomographyOptions};

fn main() -> oamtomo::Result<()> {
    let det = DetectionConfig::experimental();
    let device = tune_optical_visibility(&InterferometerConfig::nominal(10f64.powf(-2.5), 1.0), 0.99)?;
    let schedule = MeasurementSchedule::standard(1_000_000, 1_000_000);
    let bounds = fidelity_bounds(&ErrorBudget::of_device(&device, &det))?;

    println!("state  S1      S2      S3      F        sigma    bound");
    for (i, s) in NamedState::ALL.into_iter().enumerate() {
        let q = s.qubit();
        let r = run_tomography(&q, &schedule, &device, &det, &TomographyOptions::default(), derive_seed(4, i as u64))?;
        let st = r.density.stokes()?;
        println!(
            "{s:<5} {:>6.3}  {:>6.3}  {:>6.3}  {:.4}  {:.4}  {:.4}",
            st.s1,
            st.s2,
            st.s3,
            r.fidelity,
            r.fidelity_sigma,
            bounds.for_state(&pure_to_stokes(&q)?)
        );
    }
    Ok(())
}
