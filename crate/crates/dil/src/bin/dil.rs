use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = dil::cli::run(dil::cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
