use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use arbsr::config::{parse_sweep, RunConfig};
use arbsr::eval::render_comparison;
use arbsr::generator::count_params;
use arbsr::metrics::MetricReport;
use arbsr::run::{self, RunDir};
use arbsr::train::load_generator;
use arbsr::{Error, Result};

/// Arbitrary-scale super-resolution for medical image slices.
///
/// Set ARBSR_DETERMINISTIC=1 to run on a single worker thread.
#[derive(Parser)]
#[command(name = "arbsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured corpus (phantoms or real volumes) as raw volumes.
    PrepareData {
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// L1 warm-up then adversarial training; resumes from the run's latest checkpoint.
    Train {
        /// Preset name or TOML file.
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long, default_value = "runs/default")]
        run: PathBuf,
        /// Total steps, split over both phases in proportion to the config.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Transfer a checkpoint to the configured data and fine-tune it.
    Finetune {
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        run: PathBuf,
        /// Pretrained checkpoint.
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Scale-sweep evaluation on the test split; writes reports/<name>.*
    Evaluate {
        /// Defaults to the run's recorded configuration.
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the run's latest checkpoint.
        #[arg(long, conflicts_with = "bicubic")]
        ckpt: Option<PathBuf>,
        /// Evaluate the bicubic baseline instead of a checkpoint.
        #[arg(long)]
        bicubic: bool,
        #[arg(long)]
        name: Option<String>,
    },
    /// Super-resolve a PNG slice or a raw volume.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scale: f64,
    },
    /// Join report CSVs into one comparison table and plot-data file.
    Report {
        /// `label=path.csv` or `path.csv` (label = file stem).
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "comparison")]
        name: String,
    },
    /// Print the trainable parameter count of a config (one line per sweep cell).
    CountParams {
        #[arg(long, default_value = "default")]
        config: String,
    },
}

fn load_config(source: &str) -> Result<RunConfig> {
    RunConfig::load(source)
}

fn run_config(source: Option<&str>, run: &RunDir) -> Result<RunConfig> {
    match source {
        Some(s) => load_config(s),
        None => {
            let path = run.path().join("config.toml");
            if !path.exists() {
                return Err(Error::config("--config", format!("{} has no recorded config", run.path().display())));
            }
            load_config(&path.to_string_lossy())
        }
    }
}

fn read_report(spec: &str) -> Result<(String, MetricReport)> {
    let (label, path) = match spec.split_once('=') {
        Some((l, p)) => (l.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(spec);
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            (stem, p)
        }
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok((label, MetricReport::from_csv(&text)?))
}

fn count_lines(source: &str) -> Result<Vec<(String, usize)>> {
    let path = Path::new(source);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if text.contains("[sweep]") {
            return Ok(parse_sweep(&text)?
                .into_iter()
                .map(|(label, c)| (label, count_params(&c.model)))
                .collect());
        }
    }
    let c = load_config(source)?;
    Ok(vec![(source.to_string(), count_params(&c.model))])
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareData { config, out } => {
            let cfg = load_config(&config)?;
            let files = run::prepare_data(&cfg, &out)?;
            println!("wrote {} volumes to {}", files.len(), out.display());
        }
        Command::Train { config, run, steps } => {
            let mut cfg = load_config(&config)?;
            if let Some(n) = steps {
                run::split_steps(&mut cfg, n);
            }
            let dir = RunDir::open(&run)?;
            let state = run::train(&cfg, &dir)?;
            println!(
                "trained to step {} ({} guard skips, {} non-finite skips); checkpoint {}",
                state.step,
                state.skipped_guard,
                state.skipped_nonfinite,
                dir.latest_checkpoint().display()
            );
        }
        Command::Finetune { config, run, from, steps } => {
            let mut cfg = load_config(&config)?;
            if let Some(n) = steps {
                cfg.schedule.finetune_steps = n;
            }
            let dir = RunDir::open(&run)?;
            let state = run::finetune(&cfg, &dir, &from)?;
            println!("fine-tuned to step {}; checkpoint {}", state.step, dir.latest_checkpoint().display());
        }
        Command::Evaluate {
            config,
            run,
            ckpt,
            bicubic,
            name,
        } => {
            let dir = RunDir::open(&run)?;
            let cfg = run_config(config.as_deref(), &dir)?;
            let ckpt = match (bicubic, ckpt) {
                (true, _) => None,
                (false, Some(p)) => Some(p),
                (false, None) => Some(dir.latest_checkpoint()),
            };
            let stem = name.unwrap_or_else(|| if ckpt.is_some() { "model" } else { "bicubic" }.to_string());
            let report = run::evaluate(&cfg, &dir, ckpt.as_deref(), &stem)?;
            print!("{}", report.to_csv());
        }
        Command::Infer {
            ckpt,
            input,
            out,
            scale,
        } => {
            let g = load_generator(&ckpt)?;
            let shape = run::infer(&g, &input, scale, &out)?;
            println!("wrote {} ({}x{})", out.display(), shape[1], shape[2]);
        }
        Command::Report { inputs, out, name } => {
            let reports = inputs.iter().map(|s| read_report(s)).collect::<Result<Vec<_>>>()?;
            let (table, plot) = render_comparison(&reports, &out, &name)?;
            println!("wrote {} and {}", table.display(), plot.display());
        }
        Command::CountParams { config } => {
            for (label, n) in count_lines(&config)? {
                println!("{label}\t{n}\t{:.3}M", n as f64 / 1e6);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if std::env::var_os("ARBSR_DETERMINISTIC").is_some_and(|v| v != "0") {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            log::warn!("could not pin the thread pool: {e}");
        }
    }
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
