//! Save a model, load it back and score it on every test environment.

use dil::baselines::{train_baseline, BaselineConfig, BaselineMethod};
use dil::eval::evaluate;
use dil::models;
use dil::synthdata::regression_suite_sized;
use dil::trainer::{ArchKind, ModelConfig};

fn main() -> dil::Result<()> {
    let suite = regression_suite_sized(1.5, 3, 500, 50, 200)?;
    let cfg = BaselineConfig {
        method: BaselineMethod::Erm,
        epochs: 300,
        learning_rate: 0.05,
        seed: 3,
        model: ModelConfig { architecture: ArchKind::Linear, hidden: 16 },
    };
    let model = train_baseline(&suite.train.samples, &cfg)?;

    let dir = std::env::temp_dir().join("dil-example-checkpoint");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.json");
    models::save(&model, &path)?;
    let restored = models::load(&path)?;
    assert_eq!(restored, model);

    println!("{}", evaluate(&restored, &suite.tests)?.to_json()?);
    Ok(())
}
