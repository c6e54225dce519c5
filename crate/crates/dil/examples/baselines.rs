//! ERM and CVaR-style DRO on the selection-bias regression suite.

use dil::baselines::{dro_objective, train_baseline};
use dil::config::{Preset, RunConfig};
use dil::eval::evaluate;
use dil::synthdata::regression_suite_sized;

fn main() -> dil::Result<()> {
    let seed = 0;
    let suite = regression_suite_sized(1.5, seed, 1000, 100, 500)?;
    let cfg = RunConfig::preset(Preset::Regression, seed);
    let train = &suite.train.samples;
    for (name, bc) in [("ERM", cfg.baseline.erm(seed)), ("DRO", cfg.baseline.dro(seed))] {
        let model = train_baseline(train, &bc)?;
        let m = evaluate(&model, &suite.tests)?;
        println!(
            "{name}: worst-{:.0}% training risk {:.3}, test Mean_Error {:.3}, Worst_Error {:.3}",
            100.0 * cfg.baseline.dro_alpha0,
            dro_objective(&model, train, cfg.baseline.dro_alpha0)?,
            m.mean_error,
            m.worst_error
        );
    }
    Ok(())
}
