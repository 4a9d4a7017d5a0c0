//! Runs scenario files under the simulated clock and writes CSV reports.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rgma_core::harness::{summarize, write_records_csv, write_summary_csv, Scenario};
use rgma_core::model::Tuple;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "rgma-harness", about = "Run monitoring scenarios under a simulated clock")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write records.csv, summary.csv and final.json.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "harness-out")]
        out: PathBuf,
        /// Summary window length.
        #[arg(long, default_value_t = 10_000)]
        window_ms: i64,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// Print the typical-sites template as TOML.
    Typical {
        #[arg(long, default_value_t = 1)]
        sites: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct FinalState<'a> {
    digest: &'a str,
    stores: &'a BTreeMap<String, Vec<Tuple>>,
    published: BTreeMap<&'a str, usize>,
    delivered: BTreeMap<&'a str, usize>,
    expired: Vec<(i64, &'a str, &'a str)>,
}

fn load(path: &PathBuf) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Scenario::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(args: Args) -> Result<(), String> {
    match args.command {
        Cmd::Validate { scenario } => {
            load(&scenario)?;
            println!("ok");
        }
        Cmd::Typical { sites, seed } => print!("{}", Scenario::typical_sites(sites, seed).to_toml()),
        Cmd::Run { scenario, out, window_ms } => {
            let sc = load(&scenario)?;
            let report = rgma_core::harness::run_scenario(&sc).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            let create = |name: &str| {
                let p = out.join(name);
                std::fs::File::create(&p).map_err(|e| format!("{}: {e}", p.display()))
            };
            write_records_csv(&report.monitoring, create("records.csv")?).map_err(|e| e.to_string())?;
            let windows = summarize(&report.monitoring, window_ms, Some(sc.duration_ms));
            write_summary_csv(&windows, create("summary.csv")?).map_err(|e| e.to_string())?;
            let state = FinalState {
                digest: &report.digest,
                stores: &report.stores,
                published: report.published.iter().map(|(k, v)| (k.as_str(), v.len())).collect(),
                delivered: report.delivered.iter().map(|(k, v)| (k.as_str(), v.len())).collect(),
                expired: report.expired.iter().map(|(t, r, c)| (*t, r.as_str(), c.as_str())).collect(),
            };
            serde_json::to_writer_pretty(create("final.json")?, &state).map_err(|e| e.to_string())?;
            println!("digest {}", report.digest);
            for (id, rows) in &report.published {
                println!("published\t{id}\t{}", rows.len());
            }
            for (id, rows) in &report.delivered {
                println!("delivered\t{id}\t{}", rows.len());
            }
            for (id, rows) in &report.stores {
                println!("stored\t{id}\t{}", rows.len());
            }
            println!("monitoring records {}, summary windows {}", report.monitoring.len(), windows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rgma-harness: {e}");
            ExitCode::FAILURE
        }
    }
}
