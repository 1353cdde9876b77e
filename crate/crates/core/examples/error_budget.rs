//! Closed-form budgets: fidelity limits from visibility, leakage and
//! calibration offset; detection efficiency; wavelength sensitivity of the
//! interferometer phase; loss budgets of higher-dimensional designs.

use oamtomo::apparatus::{db_to_ratio, phase_sensitivity_dispersion, phase_sensitivity_geometric};
use oamtomo::qudit::{extension_budget, ExtensionPreset};
use oamtomo::tomo::{detection_chain, efficiency_budget, fidelity_bounds, ratio_to_db, ErrorBudget};

fn main() -> oamtomo::Result<()> {
    for (v, db, offset_deg) in [(0.99, 25.0, 0.0), (0.99, 25.0, 3.0), (0.93, 17.0, 0.0)] {
        let b = ErrorBudget {
            visibility: v,
            leakage: db_to_ratio(db),
            calibration_offset: f64::to_radians(offset_deg),
            coupling_imbalance: 0.0,
        };
        let f = fidelity_bounds(&b)?;
        println!(
            "V = {v}, {db} dB, offset {offset_deg} deg: F_equator <= {:.4}, F_poles <= {:.4}",
            f.f_max_equatorial, f.f_max_poles
        );
    }

    let chain = detection_chain();
    let eff = efficiency_budget(&chain)?;
    println!();
    for s in &chain {
        println!("{:<34} {:.2}", s.name, s.efficiency);
    }
    println!("{:<34} {:.2} ({:.2} dB)", "total", eff, ratio_to_db(eff));

    println!("\n1 cm path difference, 1 GHz detuning:");
    println!("  geometric  {:+.2} deg", phase_sensitivity_geometric(1.0, 1.0));
    println!("  dispersion {:+.2} deg", phase_sensitivity_dispersion(1.0, 1.0));

    println!();
    for p in ExtensionPreset::ALL {
        let e = extension_budget(p);
        println!("{:<11} d = {:>2}  loss {:>3.0}%  crosstalk > {} dB", p.to_string(), e.dimension, 100.0 * e.loss, e.crosstalk_suppression_db);
    }
    Ok(())
}
