use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use burnside::sampler::Chain;
use burnside_cli::{
    cmd_build, cmd_mix, cmd_sample, cmd_verify, closedform_json, parse_epsilons, parse_spec, pretty, spectrum_csv,
    spectrum_json, CliError, LumpExpectation, SampleOptions, VerifyOptions, EXIT_FAIL, EXIT_USAGE,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "burnside", version, about = "Exact Burnside-process kernels, checks and simulation for S_k and S_n actions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// value: S_k permutes the letters; coord: S_n permutes the positions.
    #[arg(long, value_parser = ["value", "coord"])]
    model: String,
    /// Alphabet size.
    #[arg(long)]
    k: usize,
    /// Word length.
    #[arg(long)]
    n: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChainArg {
    Primal,
    Dual,
}

#[derive(Subcommand)]
enum Command {
    /// Write A, B, Q, K, M and both stationary laws.
    Build {
        #[command(flatten)]
        model: ModelArgs,
        /// Output directory; without it the JSON document goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Run every exact check; exit 0 when all pass and 1 otherwise.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 60)]
        tmax: usize,
        /// Comma-separated list, e.g. 1/4,1/10.
        #[arg(long, default_value = "1/4,1/10,1/100")]
        eps: String,
        /// Also require this partition of G* to fail strong lumpability.
        #[arg(long, value_parser = ["cycle-count"])]
        expect_lump_failure: Option<String>,
        /// Directory of CSV files to compare against the build.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Report format; plain text when omitted.
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// TV profiles, bound curves and mixing times.
    Mix {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 60)]
        tmax: usize,
        #[arg(long, default_value = "1/4,1/10,1/100")]
        eps: String,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one chain without building matrices.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "dual")]
        chain: ChainArg,
        /// Start state: a word such as 112 or a permutation such as (1 2); defaults to e or the all-equal word.
        #[arg(long)]
        start: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        stream: u64,
        /// Keep every N-th state in the trajectory dump.
        #[arg(long, default_value_t = 1)]
        thin: usize,
        /// Trajectory dump, one state per line; gzip when the name ends in .gz.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Also estimate the orbit count from this many uniform group elements.
        #[arg(long)]
        orbit_samples: Option<usize>,
        /// Summary JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form dual kernel, stationary law and derived tables.
    Closedform {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact characteristic polynomials, eigenvalues and gaps of Q and K.
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Build { model, out, format } => {
            let spec = parse_spec(&model.model, model.k, model.n)?;
            match out {
                Some(dir) => {
                    for path in cmd_build(&spec, &dir, matches!(format, Format::Json))? {
                        println!("{}", path.display());
                    }
                }
                None => {
                    let bundle = burnside::kernels::build_bundle(&spec).map_err(|e| CliError(e.to_string()))?;
                    print!("{}", pretty(&burnside_cli::build_json(&spec, &bundle)));
                }
            }
            Ok(0)
        }
        Command::Verify { model, tmax, eps, expect_lump_failure, fixture, format, out } => {
            let spec = parse_spec(&model.model, model.k, model.n)?;
            let opts = VerifyOptions {
                t_max: tmax,
                epsilons: parse_epsilons(&eps)?,
                expect_lump_failure: expect_lump_failure.map(|s| s.parse::<LumpExpectation>()).transpose().map_err(CliError)?,
                fixture,
            };
            let report = cmd_verify(&spec, &opts)?;
            let text = match format {
                Some(Format::Json) => pretty(&report.to_json()),
                Some(Format::Csv) => report.to_csv(),
                None => report.to_text(),
            };
            emit(out.as_ref(), &text)?;
            match report.first_failure() {
                Some(c) => {
                    eprintln!("verify failed: {}: {}", c.name, c.detail);
                    Ok(EXIT_FAIL)
                }
                None => Ok(0),
            }
        }
        Command::Mix { model, tmax, eps, format, out } => {
            let spec = parse_spec(&model.model, model.k, model.n)?;
            let text = cmd_mix(&spec, tmax, &parse_epsilons(&eps)?, matches!(format, Format::Csv))?;
            emit(out.as_ref(), &text)?;
            Ok(0)
        }
        Command::Sample { model, chain, start, steps, seed, stream, thin, trajectory, orbit_samples, out } => {
            let spec = parse_spec(&model.model, model.k, model.n)?;
            let opts = SampleOptions {
                chain: match chain {
                    ChainArg::Primal => Chain::Primal,
                    ChainArg::Dual => Chain::Dual,
                },
                start,
                steps,
                seed,
                stream,
                thinning: thin,
                trajectory,
                orbit_samples,
            };
            emit(out.as_ref(), &pretty(&cmd_sample(&spec, &opts)?))?;
            Ok(0)
        }
        Command::Closedform { model, out } => {
            let spec = parse_spec(&model.model, model.k, model.n)?;
            emit(out.as_ref(), &pretty(&closedform_json(&spec)?))?;
            Ok(0)
        }
        Command::Spectrum { model, format, out } => {
            let spec = parse_spec(&model.model, model.k, model.n)?;
            let text = match format {
                Format::Json => pretty(&spectrum_json(&spec)?),
                Format::Csv => spectrum_csv(&spec)?,
            };
            emit(out.as_ref(), &text)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
