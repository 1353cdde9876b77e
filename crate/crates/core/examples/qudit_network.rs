//! Four-path extension over l = -3, -1, +1, +3: combiner-tree port
//! probabilities, the 16-setting measurement set and reconstruction from
//! simulated counts.

use oamtomo::apparatus::DetectionConfig;
use oamtomo::qubit::DensityMatrix;
use oamtomo::qudit::{counts_to_powers, network_probabilities, reconstruct_qudit, simulate_qudit_counts, NetworkConfig, ProjectorSet, QuditState};
use oamtomo::seed::{derive_seed, rng};

fn main() -> oamtomo::Result<()> {
    let state = QuditState::example();
    let lossless = NetworkConfig::lossless();
    let p = network_probabilities(&state, &lossless)?;
    println!("example state, lossless network, all phases 0");
    println!("port probabilities {p:.4?} (sum {:.12})", p.iter().sum::<f64>());

    let device = NetworkConfig::cascade(27.0);
    let set = ProjectorSet::standard();
    let (rank, cond) = set.conditioning(&device)?;
    println!("\n{} settings, rank {rank}, condition number {cond:.2}", set.settings.len());

    let det = DetectionConfig::ideal(1.0, 100_000);
    println!("\nreconstruction, 10^5 trials per setting, -27 dB crosstalk");
    for k in 0..5u64 {
        let psi = if k == 0 { state.clone() } else { QuditState::random(&mut rng(derive_seed(8, k))) };
        let rho = DensityMatrix::from_pure(&psi.to_vector())?;
        let counts = simulate_qudit_counts(&rho, &set, &device, &det, det.trials, derive_seed(9, k))?;
        let rec = reconstruct_qudit(&counts_to_powers(&counts, &det)?, &set, &device)?;
        println!("state {k}: F = {:.4}", rec.density.fidelity(&psi.to_vector())?);
    }
    Ok(())
}
