use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use edgeplane_core::check::{read_dumps, write_dumps};
use edgeplane_core::scenario::{builtin, builtin_names, builtin_text, ExecOptions, Scenario};
use edgeplane_core::sim::trace;
use edgeplane_core::SimTime;

#[derive(Parser)]
#[command(name = "edgeplane", version, about = "Run and check edge/cloud pipeline fault scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file (or built-in name) and evaluate its checks.
    Run {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop at this virtual time (ms) instead of the scenario's run_until.
        #[arg(long)]
        until: Option<u64>,
        /// Write the trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write one <topic>.<node>.seg file per surviving replica here.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Evaluate a scenario's checks over an existing trace and dump directory.
    Check {
        trace: PathBuf,
        dump_dir: PathBuf,
        #[arg(long)]
        scenario: String,
    },
    /// List built-in scenarios.
    List,
    /// Print a built-in scenario file.
    Show { name: String },
}

fn load(arg: &str) -> Result<(Scenario, Option<PathBuf>)> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        let sc = Scenario::parse(&text).map_err(|e| anyhow::anyhow!("{arg}:\n{e}"))?;
        return Ok((sc, path.parent().map(Path::to_path_buf)));
    }
    match builtin(arg) {
        Some(sc) => Ok((sc, None)),
        None => bail!("no scenario file or built-in named `{arg}`"),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            until,
            trace,
            dump_dir,
        } => {
            let (sc, base_dir) = load(&scenario)?;
            let out = sc.execute(&ExecOptions {
                seed,
                until: until.map(SimTime),
                base_dir,
            })?;
            if let Some(p) = trace {
                fs::write(&p, out.trace_text()).with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(d) = dump_dir {
                write_dumps(&d, &out.dumps)?;
            }
            print!("{}", out.report());
            let failed = out.results.iter().filter(|r| !r.passed).count();
            println!(
                "scenario={} seed={} until={} events={} checks={} failed={failed}",
                sc.name,
                out.seed,
                out.until,
                out.trace.len(),
                out.results.len()
            );
            Ok(failed == 0)
        }
        Command::Check {
            trace: trace_path,
            dump_dir,
            scenario,
        } => {
            let (sc, base_dir) = load(&scenario)?;
            let text = fs::read_to_string(&trace_path)
                .with_context(|| format!("reading {}", trace_path.display()))?;
            let events = trace::parse(&text)?;
            let dumps = read_dumps(&dump_dir)?;
            let results = sc.evaluate(&events, &dumps, base_dir.as_deref())?;
            for r in &results {
                println!("{r}");
            }
            Ok(results.iter().all(|r| r.passed))
        }
        Command::List => {
            for name in builtin_names() {
                let sc = builtin(name).unwrap();
                println!(
                    "{name:<18} nodes={} faults={} checks={}",
                    sc.nodes.len(),
                    sc.faults.len(),
                    sc.checks.len()
                );
            }
            Ok(true)
        }
        Command::Show { name } => match builtin_text(&name) {
            Some(t) => {
                print!("{t}");
                Ok(true)
            }
            None => bail!("no built-in scenario `{name}`"),
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
