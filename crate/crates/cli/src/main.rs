mod commands;
mod error;
mod manifest;
mod settings;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use panda_core::{log_grid, table3, table4, table5, Benchmark, Criterion, GlmFamily, PresetScheme, Strength, TuneGrid};

use crate::error::CliError;
use crate::manifest::{read_manifest, Invocation};
use crate::settings::{load_config, resolve, ModelFlags};
use crate::table::read_header;

#[derive(Parser)]
#[command(name = "panda", version, about = "Penalized GLM fitting by adaptive noise augmentation")]
struct Cli {
    /// TOML file with model settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long, short = 'i')]
    input: PathBuf,
    /// Output directory.
    #[arg(long, short = 'o')]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Cv,
    #[value(name = "cv-1se")]
    CvOneSe,
    Aic,
    Bic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Table3,
    Table4,
    Table5,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write coefficients, the loss trace and the fit.
    Fit(DataArgs),
    /// Fit and write only the per-iteration trace.
    Trace(DataArgs),
    /// Fit (or load a fit) and write standard errors and intervals.
    Infer {
        #[command(flatten)]
        data: DataArgs,
        /// Reuse a fit.json from an earlier `fit` run.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Choose the penalty strength and n_e over a grid.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated λ·n_e values.
        #[arg(long, value_delimiter = ',', conflicts_with = "fixed_lambda")]
        lambda_ne_grid: Option<Vec<f64>>,
        /// Hold λ fixed and search over n_e only.
        #[arg(long)]
        fixed_lambda: Option<f64>,
        /// Comma-separated n_e values.
        #[arg(long, value_delimiter = ',')]
        n_e_grid: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value = "cv")]
        criterion: CriterionArg,
    },
    /// Run a simulation benchmark, or emit one replicate's data.
    Simulate {
        #[arg(long, value_enum, required_unless_present = "design")]
        preset: Option<Preset>,
        /// Benchmark JSON (as written to benchmark.json) instead of a preset.
        #[arg(long, conflicts_with = "preset")]
        design: Option<PathBuf>,
        /// Family for table3.
        #[arg(long, default_value = "gaussian")]
        family: String,
        /// Sample size for table3 and table4.
        #[arg(long)]
        n: Option<usize>,
        /// Noise standard deviation for table4.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Scheme for table4 and table5.
        #[arg(long, default_value = "scad")]
        preset_scheme: String,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write replicate `--replicate` as CSV under this name instead of running.
        #[arg(long)]
        emit_data: Option<PathBuf>,
        #[arg(long, default_value_t = 0, requires = "emit_data")]
        replicate: usize,
        #[arg(long, short = 'o')]
        out: PathBuf,
    },
    /// Re-run a recorded invocation and compare output hashes.
    Replay {
        manifest: PathBuf,
        #[arg(long, short = 'o')]
        out: PathBuf,
    },
}

fn layered(model: ModelFlags, config: Option<&Path>) -> Result<ModelFlags, CliError> {
    Ok(match config {
        Some(p) => model.over(load_config(p)?),
        None => model,
    })
}

fn data_invocation(
    data: DataArgs,
    config: Option<&Path>,
    build: impl FnOnce(PathBuf, settings::Resolved) -> Result<Invocation, CliError>,
) -> Result<(Invocation, bool, PathBuf), CliError> {
    let flags = layered(data.model, config)?;
    let columns = read_header(&data.input)?;
    let (resolved, drawn) = resolve(&flags, &columns)?;
    Ok((build(data.input, resolved)?, drawn, data.out))
}

fn benchmark(
    preset: Preset,
    family: &str,
    n: Option<usize>,
    sigma: f64,
    scheme: &str,
    replicates: usize,
    seed: u64,
) -> Result<Benchmark, CliError> {
    let kind = || scheme.parse::<PresetScheme>().map_err(CliError::usage);
    Ok(match preset {
        Preset::Table3 => table3(family.parse::<GlmFamily>().map_err(CliError::usage)?, n.unwrap_or(100), replicates, seed),
        Preset::Table4 => table4(kind()?, n.unwrap_or(60), sigma, replicates, seed),
        Preset::Table5 => table5(kind()?, replicates, seed),
    })
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let config = cli.config.as_deref();
    let (inv, drawn, out) = match cli.command {
        Command::Fit(d) => data_invocation(d, config, |input, settings| Ok(Invocation::Fit { input, settings }))?,
        Command::Trace(d) => data_invocation(d, config, |input, settings| Ok(Invocation::Trace { input, settings }))?,
        Command::Infer { data, fit } => data_invocation(data, config, |input, settings| Ok(Invocation::Infer { input, settings, fit }))?,
        Command::Tune { data, lambda_ne_grid, fixed_lambda, n_e_grid, criterion } => {
            data_invocation(data, config, |input, settings| {
                let strength = match fixed_lambda {
                    Some(l) => Strength::FixedLambda(l),
                    None => Strength::LambdaNe(lambda_ne_grid.unwrap_or_else(|| log_grid(0.1, 100.0, 31))),
                };
                let k = settings.folds;
                let criterion = match criterion {
                    CriterionArg::Cv => Criterion::Cv { k },
                    CriterionArg::CvOneSe => Criterion::CvOneSe { k },
                    CriterionArg::Aic => Criterion::Aic,
                    CriterionArg::Bic => Criterion::Bic,
                };
                let grid = TuneGrid {
                    scheme_template: settings.scheme.clone(),
                    strength,
                    n_e_values: n_e_grid.unwrap_or_else(|| vec![settings.config.n_e]),
                    criterion,
                };
                Ok(Invocation::Tune { input, settings, grid })
            })?
        }
        Command::Simulate { preset, design, family, n, sigma, preset_scheme, replicates, seed, emit_data, replicate, out } => {
            let drawn = seed.is_none() && design.is_none();
            let mut bench = match (preset, design) {
                (_, Some(path)) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
                    serde_json::from_str::<Benchmark>(&text).map_err(|e| CliError::usage(format!("invalid benchmark {}: {e}", path.display())))?
                }
                (Some(p), None) => benchmark(p, &family, n, sigma, &preset_scheme, replicates.unwrap_or(100), seed.unwrap_or_else(rand::random))?,
                (None, None) => return Err(CliError::usage("give --preset or --design")),
            };
            if let Some(r) = replicates {
                bench.design.replicates = r;
            }
            if let Some(s) = seed {
                bench.design.seed = s;
            }
            let inv = match emit_data {
                Some(path) => Invocation::EmitData { design: bench.design, replicate, path },
                None => Invocation::Simulate { benchmark: bench },
            };
            (inv, drawn, out)
        }
        Command::Replay { manifest, out } => {
            let m = read_manifest(&manifest)?;
            let diffs = commands::replay(&m, &out)?;
            if diffs.is_empty() {
                eprintln!("replay matches: {} outputs identical", m.outputs.len());
                return Ok(ExitCode::SUCCESS);
            }
            eprintln!("replay differs in: {}", diffs.join(", "));
            return Ok(ExitCode::from(1));
        }
    };
    commands::run_recorded(inv, drawn, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
