//! Trains the tiny preset end to end in a run directory, then evaluates it
//! against bicubic. The default 200 steps is a smoke run; the model needs
//! thousands of steps before it overtakes bicubic.
//!
//! `cargo run --release --example train_tiny [run_dir] [steps]`

use std::path::PathBuf;

use arbsr::config::RunConfig;
use arbsr::run::{self, RunDir};

fn main() -> arbsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("arbsr-train-tiny"));
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut cfg = RunConfig::preset("tiny")?;
    run::split_steps(&mut cfg, steps);
    let rd = RunDir::open(&dir)?;
    let state = run::train(&cfg, &rd)?;
    let last = state.log.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!("trained to step {} in {}, final loss {last:.5}", state.step, dir.display());

    let model = run::evaluate(&cfg, &rd, Some(&rd.latest_checkpoint()), "model")?;
    let bicubic = run::evaluate(&cfg, &rd, None, "bicubic")?;
    println!("scale  model psnr  bicubic psnr");
    for (m, b) in model.rows.iter().zip(&bicubic.rows) {
        println!("{:<5}  {:<10.2}  {:.2}", m.scale, m.psnr, b.psnr);
    }
    Ok(())
}
