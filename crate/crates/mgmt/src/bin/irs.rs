use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Parser, Subcommand};
use irs_core::{RegionClass, SimTime};
use irs_mgmt::report::Report;
use irs_mgmt::scenario::{bootstrap_fragment, Scenario};
use irs_mgmt::sim::Simulation;

#[derive(Parser)]
#[command(name = "irs", version, about = "Roadside station fleet management simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario to completion and print its report.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Emit a fleet fragment with a region mix, e.g. URBAN=0.3,RURAL=0.7.
    Bootstrap {
        #[arg(long)]
        count: u32,
        #[arg(long, value_parser = parse_mix)]
        mix: BTreeMap<RegionClass, f64>,
    },
    /// Run a scenario in real time and serve the management API.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Virtual seconds per wall second.
        #[arg(long, default_value_t = 1.0)]
        timescale: f64,
    },
    /// Summarize a trace written by `run --trace`.
    Report {
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn parse_mix(s: &str) -> Result<BTreeMap<RegionClass, f64>, String> {
    let mut mix = BTreeMap::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("expected CLASS=share, got `{part}`"))?;
        let class = RegionClass::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(k.trim()))
            .ok_or_else(|| format!("unknown region class `{k}`"))?;
        let share: f64 = v.trim().parse().map_err(|_| format!("bad share `{v}`"))?;
        mix.insert(class, share);
    }
    Ok(mix)
}

fn load(path: &PathBuf) -> Result<Scenario, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("irs: cannot read {}: {e}", path.display());
        ExitCode::from(2)
    })?;
    Scenario::from_yaml(&text).map_err(|e| {
        eprintln!("irs: {}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn print_report(r: &Report, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(r).expect("report serializes"));
    } else {
        print!("{}", r.render());
    }
}

fn run(path: PathBuf, seed: Option<u64>, trace: Option<PathBuf>, json: bool) -> ExitCode {
    let mut scenario = match load(&path) {
        Ok(s) => s,
        Err(c) => return c,
    };
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let mut sim = match Simulation::new(&scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("irs: {e}");
            return ExitCode::from(2);
        }
    };
    let result = sim.run();
    let text = sim.trace.render();
    if let Some(out) = trace {
        if let Err(e) = std::fs::write(&out, &text) {
            eprintln!("irs: cannot write {}: {e}", out.display());
            return ExitCode::from(2);
        }
    }
    let report = Report::from_trace(&text).expect("own trace parses");
    print_report(&report, json);
    if result.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn serve(path: PathBuf, port: u16, timescale: f64) -> ExitCode {
    let scenario = match load(&path) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let sim = match Simulation::new(&scenario) {
        Ok(s) => Arc::new(Mutex::new(s)),
        Err(e) => {
            eprintln!("irs: {e}");
            return ExitCode::from(2);
        }
    };
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    rt.block_on(async move {
        let ticker = sim.clone();
        tokio::spawn(async move {
            let tick = Duration::from_millis(100);
            let mut iv = tokio::time::interval(tick);
            loop {
                iv.tick().await;
                let mut s = ticker.lock().unwrap_or_else(|p| p.into_inner());
                let next = SimTime::from_secs_f64(s.now().as_secs_f64() + tick.as_secs_f64() * timescale);
                s.advance_to(next);
            }
        });
        let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
        let listener = match tokio::net::TcpListener::bind(addr).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("irs: cannot bind {addr}: {e}");
                return ExitCode::from(2);
            }
        };
        eprintln!("irs: serving on http://{addr}");
        match axum::serve(listener, irs_mgmt::api::router(sim)).await {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("irs: {e}");
                ExitCode::from(1)
            }
        }
    })
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            seed,
            trace,
            json,
        } => run(scenario, seed, trace, json),
        Cmd::Bootstrap { count, mix } => match bootstrap_fragment(count, &mix) {
            Ok(y) => {
                print!("{y}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("irs: {e}");
                ExitCode::from(2)
            }
        },
        Cmd::Serve {
            scenario,
            port,
            timescale,
        } => serve(scenario, port, timescale),
        Cmd::Report { trace, json } => {
            let text = match std::fs::read_to_string(&trace) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("irs: cannot read {}: {e}", trace.display());
                    return ExitCode::from(2);
                }
            };
            match Report::from_trace(&text) {
                Ok(r) => {
                    print_report(&r, json);
                    if r.digest_ok {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("irs: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
