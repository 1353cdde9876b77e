//! Qubit tomography from basis probabilities: Stokes vector, density
//! matrix, fidelity, and the projection of an unphysical estimate.

use oamtomo::qubit::{stokes_from_probabilities, BasisProbabilities, DensityMatrix, NamedState, StokesVector, PAIR_SUM_TOLERANCE};

fn main() -> oamtomo::Result<()> {
    println!("state   S1      S2      S3      F");
    for s in NamedState::ALL {
        let target = s.qubit();
        let rho = DensityMatrix::from_pure(&target.to_vector())?;
        let p = BasisProbabilities::of(&rho)?;
        let st = stokes_from_probabilities(&p, PAIR_SUM_TOLERANCE)?;
        let f = DensityMatrix::from_stokes(&st).fidelity(&target.to_vector())?;
        println!("{s:<5} {:>6.3}  {:>6.3}  {:>6.3}  {f:.4}", st.s1, st.s2, st.s3);
    }

    // Noisy estimates can leave the Bloch ball.
    let outside = StokesVector { s1: 1.02, s2: 0.0, s3: 0.1 };
    let raw = DensityMatrix::from_stokes(&outside);
    let fixed = raw.project_physical();
    println!("\nraw eigenvalues      {:?}", raw.eigenvalues());
    println!("projected eigenvalues {:?}", fixed.eigenvalues());
    println!("projected |S| = {:.6}", fixed.stokes()?.norm());
    Ok(())
}
