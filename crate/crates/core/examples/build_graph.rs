//! Builds a graph offline from the bundled mini corpus and prints the
//! build report and the stored graph's counts.
//!
//! Run with `cargo run --example build_graph`.

use std::error::Error;
use std::path::Path;

use xkg::config::Config;
use xkg::pipeline::{cmd_build, cmd_stats, Services, TargetSpec};

fn main() -> Result<(), Box<dyn Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini");
    let mut cfg = Config::load(&fixtures.join("config.toml"))?;
    let kg = tempfile::tempdir()?;
    cfg.global.kg_path = kg.path().to_owned();

    let services = Services::from_config(&cfg)?;
    let report = cmd_build(&cfg, &TargetSpec::parse("2501.00001"), &services)?;
    println!("== build report ==\n{report}");
    println!("== stored graph ==\n{}", cmd_stats(kg.path())?);
    Ok(())
}
