//! Euclidean projection onto the capped simplex and the top-mass rule.

use dil::exploit::{cap_for, project_capped_simplex, top_mass_weights};

fn main() -> dil::Result<()> {
    let scores = [0.9, -0.2, 0.4, 1.7, 0.0, 0.3];
    let alpha0 = 0.4;
    let cap = cap_for(alpha0, scores.len())?;
    println!("alpha0 = {alpha0}, cap = {cap:.4}");

    let p = project_capped_simplex(&scores, cap)?;
    println!("projection: {:?}", p.as_slice().iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>());

    let t = top_mass_weights(&scores, alpha0)?;
    println!("top mass:   {:?}", t.as_slice().iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>());
    println!("support sizes: {} and {}", p.support_size(), t.support_size());
    Ok(())
}
