//! DIL on the selection-bias regression suite, against ERM.

use dil::baselines::train_baseline;
use dil::config::{Preset, RunConfig};
use dil::eval::evaluate;
use dil::synthdata::regression_suite;
use dil::trainer::run_dil;

fn main() -> dil::Result<()> {
    let seed = 0;
    let suite = regression_suite(1.5, seed)?;
    let cfg = RunConfig::preset(Preset::Regression, seed);
    let train = &suite.train.samples;

    let (model, trace) = run_dil(train, &cfg.dil)?;
    trace.write_csv(std::io::stdout())?;
    let erm = train_baseline(train, &cfg.baseline.erm(seed))?;

    for (name, m) in [("DIL", &model), ("ERM", &erm)] {
        let metrics = evaluate(m, &suite.tests)?;
        let per_env: Vec<String> = metrics.per_env.iter().map(|e| format!("{}={:.3}", e.name, e.loss)).collect();
        println!("{name}: Mean_Error {:.3} Std_Error {:.3}  {}", metrics.mean_error, metrics.std_error.unwrap_or(0.0), per_env.join(" "));
    }
    Ok(())
}
