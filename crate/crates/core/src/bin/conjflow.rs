use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use conjflow::exec::Execution;
use conjflow::harness::{self, verify, ExperimentId, ExperimentSpec};
use conjflow::training::ModelKind;
use conjflow::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NO_RESULT: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "conjflow",
    version,
    about = "Neural conjugate flow experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on one experiment for every seed.
    Run {
        #[arg(long)]
        experiment: ExperimentId,
        #[arg(long)]
        model: ModelKind,
        /// `a..b` (inclusive) or a comma list.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<SeedList>,
        /// Partial spec in JSON merged over the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Run seeds one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Tabulate every summary found below a directory.
    Table {
        #[arg(long = "in")]
        input: PathBuf,
        /// Also write the table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write model-vs-reference trajectories over [0, 2T] for one seed directory.
    Plotdata {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run the invariant suites.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let bad = |_| format!("invalid seed list {s:?}");
    let seeds: Vec<u64> = match s.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (
                a.trim().parse().map_err(bad)?,
                b.trim().parse().map_err(bad)?,
            );
            (a..=b).collect()
        }
        None => s
            .split(',')
            .map(|x| x.trim().parse().map_err(bad))
            .collect::<Result<_, _>>()?,
    };
    if seeds.is_empty() {
        return Err(format!("empty seed list {s:?}"));
    }
    Ok(SeedList(seeds))
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Json(e) if e.is_io() => EXIT_IO,
        Error::Config(_) | Error::Json(_) => EXIT_USAGE,
        _ => EXIT_NO_RESULT,
    }
}

fn run_command(command: Command) -> Result<u8, Error> {
    match command {
        Command::Run {
            experiment,
            model,
            seeds,
            config,
            out,
            epochs,
            sequential,
        } => {
            let mut overrides = match &config {
                Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
                None => json!({}),
            };
            let mut flags = json!({});
            if let Some(SeedList(seeds)) = seeds {
                flags["seeds"] = json!(seeds);
            }
            if let Some(out) = out {
                flags["out_dir"] = json!(out);
            }
            if let Some(epochs) = epochs {
                flags["train"] = json!({ "epochs": epochs });
            }
            if sequential {
                flags["execution"] = json!(Execution::Sequential);
            }
            if !overrides.is_object() {
                return Err(Error::Config("config file must hold a JSON object".into()));
            }
            harness::merge(&mut overrides, &flags);
            let spec = ExperimentSpec::with_overrides(experiment, model, &overrides)?;
            eprintln!(
                "{experiment} / {}: {} seed(s) -> {}",
                model.label(),
                spec.seeds.len(),
                spec.run_dir().display()
            );
            let report = harness::run_experiment(&spec)?;
            for r in &report.runs {
                let status = match r.diverged {
                    Some(epoch) => format!("diverged at epoch {epoch}"),
                    None => format!("L_acc {:.3e}  L_extrap {:.3e}", r.l_acc, r.l_extrap),
                };
                println!("seed {:>3}: {status}  ({:.1}s)", r.seed, r.wall_seconds);
            }
            match report.aggregate {
                Some(a) => {
                    println!(
                        "mean: L_acc {:.3e} ± {:.1e}  L_extrap {:.3e} ± {:.1e}  time {:.1} ± {:.1}s  params {}",
                        a.l_acc.mean,
                        a.l_acc.std,
                        a.l_extrap.mean,
                        a.l_extrap.std,
                        a.wall_seconds.mean,
                        a.wall_seconds.std,
                        report.param_count
                    );
                    if a.diverged > 0 {
                        eprintln!("warning: {} diverged run(s) excluded", a.diverged);
                    }
                    Ok(0)
                }
                None => {
                    eprintln!("every run diverged");
                    Ok(EXIT_NO_RESULT)
                }
            }
        }
        Command::Table { input, csv } => {
            let reports = harness::collect_reports(&input)?;
            if reports.is_empty() {
                eprintln!("no summaries found below {}", input.display());
                return Ok(EXIT_NO_RESULT);
            }
            let table = harness::emit_table(&reports)?;
            print!("{}", table.render());
            if let Some(path) = csv {
                fs::write(path, table.to_csv())?;
            }
            if table.has_gaps() {
                eprintln!("table has missing cells (marked {})", harness::GAP);
                return Ok(EXIT_NO_RESULT);
            }
            Ok(0)
        }
        Command::Plotdata { run } => {
            let path = harness::emit_plotdata(&run)?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Verify { seed } => {
            let mut ok = true;
            for suite in verify::run_all(seed)? {
                println!(
                    "[{}] {}",
                    if suite.passed() { "PASS" } else { "FAIL" },
                    suite.summary()
                );
                ok &= suite.passed();
            }
            Ok(if ok { 0 } else { EXIT_VERIFY })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run_command(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
