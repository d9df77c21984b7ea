//! Presets, TOML overrides and sweep expansion.

use arbsr::config::{parse_sweep, RunConfig};
use arbsr::generator::count_params;

fn main() -> arbsr::Result<()> {
    let tiny = RunConfig::preset("tiny")?;
    println!("# tiny preset\n{}", tiny.to_toml());

    let custom = RunConfig::from_toml_str("preset = \"tiny\"\n[model]\nwidth = 24\n[loss]\nvariant = \"ragan\"\n")?;
    println!("override: width {} variant {}", custom.model.width, custom.loss.variant);

    match RunConfig::from_toml_str("[model]\ndepht = 3\n") {
        Err(e) => println!("typo rejected: {e}"),
        Ok(_) => println!("typo accepted"),
    }

    let sweep = "preset = \"tiny\"\n[sweep]\n\"model.depth\" = [2, 4]\n\"model.width\" = [8, 16]\n";
    for (label, cfg) in parse_sweep(sweep)? {
        println!("{label:<28} {} params", count_params(&cfg.model));
    }
    Ok(())
}
