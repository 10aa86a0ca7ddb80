use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use naepro::evalgen::bench::DEFAULT_SIZES;
use naepro::evalgen::{bench_graphs, certify_equivariance, evaluate};
use naepro::fragments::{mine_fragments, FragmentMask};
use naepro::geometry::Point;
use naepro::io::checkpoint::{load_checkpoint, save_checkpoint};
use naepro::io::config::RunConfig;
use naepro::io::fasta::parse_aligned_fasta;
use naepro::io::records::{parse_records, write_atomic, ProteinRecord};
use naepro::io::split::split_dataset;
use naepro::model::Model;
use naepro::training::{fit, prepare};
use naepro::Error;

#[derive(Parser)]
#[command(name = "naepro", version, about = "Fragment-conditioned protein sequence and structure design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Train on JSON-lines records; writes checkpoint.json, log.jsonl and
    /// split.json into the output directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat TOML configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a freshly initialized checkpoint.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Design sequences and coordinates for each record from its fragments.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for the starting layouts.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mine conserved fragments from an aligned FASTA file.
    MineFragments {
        #[arg(long)]
        msa: PathBuf,
        /// Identity threshold in percent; columns must exceed it.
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify rotation/reflection/translation behavior; exits 0 iff it passes.
    CheckEquivariance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-7)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score designs against the reference records.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the neighborhood sub-layer on kNN and complete graphs.
    Bench {
        /// Comma-separated `N:k` pairs, e.g. `50:30,500:30`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "json")]
        format: Format,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 16)]
        d_model: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Runtime failure: a category for the error prefix plus a message.
struct Failure {
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn to_json_lines<T: Serialize>(items: &[T]) -> Result<String, Error> {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item)?);
        s.push('\n');
    }
    Ok(s)
}

fn by_id(records: &[ProteinRecord], ids: &[String]) -> Vec<ProteinRecord> {
    ids.iter()
        .map(|id| {
            records
                .iter()
                .find(|r| &r.id == id)
                .expect("split ids come from the records")
                .clone()
        })
        .collect()
}

fn train(data: &Path, config: Option<&Path>, out: &Path) -> CliResult {
    let config = load_config(config)?;
    let records = parse_records(data)?;
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = records.iter().find(|r| !seen.insert(r.id.as_str())) {
        return Err(Error::invalid("train", format!("duplicate record id {}", dup.id)).into());
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let split = split_dataset(&records, config.train.split, config.train.seed)?;
    write_atomic(out.join("split.json"), serde_json::to_string_pretty(&split).map_err(Error::from)?.as_bytes())?;

    let log_path = out.join("log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut write_error = None;
    let outcome = fit(
        Model::new(config.model.clone())?,
        &by_id(&records, &split.train),
        &by_id(&records, &split.validation),
        &config.train,
        |entry| {
            let line = serde_json::to_string(entry).expect("log entries serialize");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                write_error.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = write_error {
        return Err(Error::io(&log_path, e).into());
    }
    save_checkpoint(&outcome.best, out.join("checkpoint.json"))?;
    log::info!("best epoch {} of {}", outcome.best_epoch, outcome.log.len());
    Ok(())
}

#[derive(Serialize)]
struct Design<'a> {
    id: &'a str,
    sequence: String,
    coords: Vec<Point>,
}

fn generate(checkpoint: &Path, input: &Path, out: &Path, seed: u64) -> CliResult {
    let model = load_checkpoint(checkpoint)?;
    let records = parse_records(input)?;
    let designs = records
        .iter()
        .map(|r| {
            let ex = prepare(&model, r, 0.0, seed, 0, 0)?;
            let pred = model.predict_from(r, &ex.fragments, &ex.x0)?;
            Ok(Design {
                id: &r.id,
                sequence: pred.sequence,
                coords: pred.coords,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    write_atomic(out, to_json_lines(&designs)?.as_bytes())?;
    Ok(())
}

fn mine(msa: &Path, tau: f64, out: &Path) -> CliResult {
    let mask: FragmentMask = mine_fragments(&parse_aligned_fasta(msa)?, tau)?;
    mask.save(out)?;
    Ok(())
}

fn check(checkpoint: &Path, trials: usize, tolerance: f64, seed: u64) -> CliResult {
    let model = load_checkpoint(checkpoint)?;
    let cert = certify_equivariance(&model, trials, tolerance, seed)?;
    println!("{}", serde_json::to_string(&cert).map_err(Error::from)?);
    if cert.passed {
        Ok(())
    } else {
        Err(Failure {
            kind: "equivariance",
            message: format!(
                "deviation above tolerance {tolerance:e} (coordinates {:e}, probabilities {:e})",
                cert.max_coord_deviation, cert.max_prob_deviation
            ),
        })
    }
}

fn eval(checkpoint: &Path, data: &Path, out: &Path, format: Format, seed: u64) -> CliResult {
    let model = load_checkpoint(checkpoint)?;
    let report = evaluate(&model, &parse_records(data)?, seed)?;
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
        Format::Text => report.to_text(),
        Format::Csv => report.to_csv(),
    };
    write_atomic(out, text.as_bytes())?;
    Ok(())
}

fn parse_grid(grid: &str) -> Result<Vec<(usize, usize)>, Error> {
    grid.split(',')
        .map(|pair| {
            let bad = || Error::Config(format!("grid entry '{pair}' is not N:k"));
            let (n, k) = pair.trim().split_once(':').ok_or_else(bad)?;
            let n: usize = n.trim().parse().map_err(|_| bad())?;
            let k: usize = k.trim().parse().map_err(|_| bad())?;
            if n < 2 || k == 0 {
                return Err(Error::Config(format!("grid entry '{pair}' needs N >= 2 and k >= 1")));
            }
            Ok((n, k))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn bench(
    grid: Option<&str>,
    out: &Path,
    format: Format,
    repetitions: usize,
    d_model: usize,
    seed: u64,
) -> CliResult {
    let grid = match grid {
        Some(g) => parse_grid(g)?,
        None => DEFAULT_SIZES.iter().map(|&n| (n, 30)).collect(),
    };
    let report = bench_graphs(&grid, d_model, repetitions, seed)?;
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
        Format::Text => report.to_text(),
        Format::Csv => report.to_csv(),
    };
    write_atomic(out, text.as_bytes())?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Train { data, config, out } => train(&data, config.as_deref(), &out),
        Command::Init { config, out } => {
            let config = load_config(config.as_deref())?;
            save_checkpoint(&Model::new(config.model)?, out)?;
            Ok(())
        }
        Command::Generate {
            checkpoint,
            input,
            out,
            seed,
        } => generate(&checkpoint, &input, &out, seed),
        Command::MineFragments { msa, tau, out } => mine(&msa, tau, &out),
        Command::CheckEquivariance {
            checkpoint,
            trials,
            tolerance,
            seed,
        } => check(&checkpoint, trials, tolerance, seed),
        Command::Eval {
            checkpoint,
            data,
            out,
            format,
            seed,
        } => eval(&checkpoint, &data, &out, format, seed),
        Command::Bench {
            grid,
            out,
            format,
            repetitions,
            d_model,
            seed,
        } => bench(grid.as_deref(), &out, format, repetitions, d_model, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = f.message.split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error[{}]: {message}", f.kind);
            ExitCode::from(1)
        }
    }
}
