//! Fringe calibration: scan the camera phase for H, D, V and A on a
//! device with 93% visibility and compare the fitted fringe positions
//! with theory.

use oamtomo::apparatus::{DetectionConfig, InterferometerConfig};
use oamtomo::tomo::{calibrate, tune_visibility, ScanSpec};

fn main() -> oamtomo::Result<()> {
    let det = DetectionConfig::experimental();
    let device = tune_visibility(&InterferometerConfig::nominal(0.0, 1.0), &det, 0.93)?;
    let (report, records) = calibrate(&device, &det, &ScanSpec::default(), 2014)?;

    println!("mode  theta (deg)  theory  deviation  visibility");
    for m in &report.modes {
        println!(
            "{:<4}  {:>11.2}  {:>6.0}  {:>9.2}  {:>10.3}",
            m.mode.to_string(),
            m.theta_deg,
            m.theory_deg,
            m.deviation_deg,
            m.fit.visibility
        );
    }
    println!("mean deviation {:.2} +/- {:.2} deg", report.mean_deviation_deg, report.deviation_spread_deg);
    println!("cross angles {:?}", report.cross_deg.iter().map(|d| format!("{d:.1}")).collect::<Vec<_>>());
    println!("misaligned: {}", report.misaligned);
    let clicks: u64 = records.iter().map(|r| r.clicks).sum();
    let trials: u64 = records.iter().map(|r| r.trials).sum();
    println!("{} configurations, mean click rate {:.4}", records.len(), clicks as f64 / trials as f64);
    Ok(())
}
