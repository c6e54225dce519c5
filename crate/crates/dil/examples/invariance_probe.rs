//! Probe which feature block carries a relation that varies across
//! sub-populations: the stable block `S` or the spurious block `V`.

use dil::config::{Preset, RunConfig};
use dil::eval::probe_invariance;
use dil::synthdata::classification_suite;

fn main() -> dil::Result<()> {
    let (d, seed) = (5, 0);
    let suite = classification_suite(d, 0.75, seed)?;
    let s = &suite.train.samples;
    let cfg = RunConfig::preset(Preset::Classification, seed);
    for (name, cols) in [("S", (0..d).collect::<Vec<_>>()), ("V", (d..2 * d).collect())] {
        let block = s.select_columns(&cols);
        let (phi, spec) = cfg.probe.kernel.prepare(&block.x)?;
        let probe = probe_invariance(&phi, &block.y, cfg.probe.alpha0, &spec, &cfg.probe.exploit, block.task)?;
        println!("{name}: delta_hat = {:.4} (support {})", probe.delta_hat, probe.weights.support_size());
    }
    Ok(())
}
