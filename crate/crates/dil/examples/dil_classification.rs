//! DIL on the spurious-attribute classification suite, against ERM. The test
//! environment reverses the attribute, so relying on it costs accuracy.

use dil::baselines::train_baseline;
use dil::config::{Preset, RunConfig};
use dil::models::accuracy;
use dil::synthdata::classification_suite;
use dil::trainer::run_dil;

fn main() -> dil::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let suite = classification_suite(5, 0.75, seed)?;
    let cfg = RunConfig::preset(Preset::Classification, seed);
    let train = &suite.train.samples;
    let test = &suite.tests[0].data.samples;

    let (dil_model, _) = run_dil(train, &cfg.dil)?;
    let erm = train_baseline(train, &cfg.baseline.erm(seed))?;
    for (name, m) in [("DIL", &dil_model), ("ERM", &erm)] {
        println!(
            "{name}: train accuracy {:.3}, test accuracy {:.3}",
            accuracy(m, &train.x, &train.y)?,
            accuracy(m, &test.x, &test.y)?
        );
    }
    Ok(())
}
