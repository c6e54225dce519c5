//! Test accuracy of DIL and DRO over a coarse grid of alpha0.

use dil::config::{Preset, RunConfig};
use dil::eval::{accuracy_range, alpha_sweep, write_sweep_csv, SweepMethod};
use dil::synthdata::classification_suite;

fn main() -> dil::Result<()> {
    let seed = 0;
    let suite = classification_suite(5, 0.75, seed)?;
    let cfg = RunConfig::preset(Preset::Classification, seed);
    let methods = [SweepMethod::DilMmd, SweepMethod::Dro];
    let rows = alpha_sweep(
        &suite.train.samples,
        &suite.tests[0].data.samples,
        &[0.1, 0.2, 0.3],
        &methods,
        &cfg.sweep_dil(),
        &cfg.sweep_dro(),
    )?;
    write_sweep_csv(&rows, std::io::stdout())?;
    for m in methods {
        println!("{} accuracy range {:.3}", m.name(), accuracy_range(&rows, m).unwrap_or(f64::NAN));
    }
    Ok(())
}
