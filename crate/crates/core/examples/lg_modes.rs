//! LG mode synthesis: orthonormality on the reference grid and the dark
//! line of equal-weight `l = +-1` superpositions.
//!
//! `cargo run --example lg_modes [-- pattern.pgm]`

use std::f64::consts::PI;

use oamtomo::modes::{dark_axis_angle, hg_superposition, lg_field, BeamGeometry, EquatorialSuperposition, GridSpec, ModeIndex};

fn main() -> oamtomo::Result<()> {
    let geom = BeamGeometry::at_waist(1e-3, 795e-9)?;
    let grid = GridSpec::reference(&geom);
    let modes: Vec<ModeIndex> = (0..=1).flat_map(|p| (-3..=3).map(move |l| ModeIndex::new(l, p))).collect();
    let fields = modes.iter().map(|m| lg_field(*m, &geom, &grid)).collect::<oamtomo::Result<Vec<_>>>()?;

    let (mut off, mut diag) = (0.0f64, 0.0f64);
    for (i, a) in fields.iter().enumerate() {
        for (j, b) in fields.iter().enumerate() {
            let g = a.overlap(b)?;
            if i == j {
                diag = diag.max((g.re - 1.0).abs());
            } else {
                off = off.max(g.norm());
            }
        }
    }
    println!("{} modes on a {}x{} grid over +/-4w", modes.len(), grid.n, grid.n);
    println!("max |<i|j>|, i != j : {off:.2e}");
    println!("max |<i|i> - 1|     : {diag:.2e}");

    println!("\nphi (deg)  dark axis (deg)");
    for k in 0..8 {
        let phi = k as f64 * PI / 4.0;
        println!("{:>9.0}  {:>15.1}", phi.to_degrees(), dark_axis_angle(phi).to_degrees());
    }

    if let Some(path) = std::env::args().nth(1) {
        let field = hg_superposition(&EquatorialSuperposition::equal_weight(PI / 2.0), &geom, &grid)?;
        field.intensity_bitmap().write_pgm(std::fs::File::create(&path)?, Some("equal-weight superposition, phi = 90 deg"))?;
        println!("\nwrote {path}");
    }
    Ok(())
}
