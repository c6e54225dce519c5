//! The weight search finds a planted minority whose relation is flipped.

use dil::exploit::{exploit_mmd, ExploitConfig};
use dil::kernels::{KernelSpec, DEFAULT_BETA};
use dil::synthdata::gen_planted_flip;

fn main() -> dil::Result<()> {
    let pf = gen_planted_flip(200, 0.2, 1)?;
    let s = &pf.samples;
    let spec = KernelSpec::rbf_median(&s.x, DEFAULT_BETA)?;
    let res = exploit_mmd(&s.x, &s.y, 0.2, &spec, &ExploitConfig::default(), s.task)?;
    println!("objective {:.4} after {} accepted steps", res.objective, res.trace.len());
    println!("mass on the flipped points: {:.3}", res.weights.mass_on(pf.flipped_indices()));
    println!("support size {} of {}", res.weights.support_size(), s.len());
    Ok(())
}
