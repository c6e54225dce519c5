//! Parse a run configuration over its preset and print the effective result.

use dil::config::{Preset, RunConfig};

fn main() -> dil::Result<()> {
    let text = r#"
seed = 7

[dil]
lambda = 0.5
outer_iters = 3

[dil.kernel]
family = "polynomial"
degree = 3
"#;
    let cfg = RunConfig::from_toml_str(text, Preset::Regression)?;
    print!("{}", cfg.to_toml()?);

    match RunConfig::from_toml_str("[dil]\nlambda = 1.0\n", Preset::Regression) {
        Ok(_) => println!("unexpectedly accepted a config without a seed"),
        Err(e) => println!("# rejected: {e}"),
    }
    Ok(())
}
