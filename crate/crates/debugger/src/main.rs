use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use tardisp::bench::{self, BenchCase, BenchError};
use tardisp::core::engine::{Binding, Environment};
use tardisp::core::frontend::{parse_procedure, VarType};
use tardisp::core::runtime::{run, ExecutionConfig};
use tardisp::core::storage::load_fixture;
use tardisp::core::tracer::{emit_reconstruction_views, run_traced};
use tardisp::session::{args_from_json, Debugger};

#[derive(Parser)]
#[command(name = "tardisp", version, about = "Back-in-time debugger for stored procedures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a procedure against a fixture and print the final variables.
    Run {
        proc_file: PathBuf,
        #[arg(long)]
        fixture: PathBuf,
        /// Record a trace while running.
        #[arg(long)]
        trace: bool,
        /// Procedure argument as name=value (JSON values; bare words are text).
        #[arg(long = "arg", value_name = "NAME=VALUE")]
        args: Vec<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Fixture used when a session request names none.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    /// Send a console query to a session of a running server.
    Query {
        #[arg(long)]
        session: String,
        sql: String,
        #[arg(long, default_value = "http://127.0.0.1:7878")]
        server: String,
    },
    /// Time plain, traced and reproduced runs and single vs time-diff queries.
    Bench {
        /// Fixture directory. Without it the generated settlement workload is
        /// used.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long = "proc", value_name = "FILE")]
        procs: Vec<PathBuf>,
        #[arg(long = "arg", value_name = "NAME=VALUE")]
        args: Vec<String>,
        /// Time-diff query; {first}, {mid} and {last} are replaced by steps of
        /// the traced run.
        #[arg(long = "query", value_name = "SQL")]
        queries: Vec<String>,
        /// Order counts for the generated workload.
        #[arg(long, value_delimiter = ',', default_value = "100000")]
        scales: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the reconstruction views generated for a procedure.
    Views { proc_file: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn read(path: &Path) -> Result<String, Box<dyn std::error::Error>> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn parse_args(source: &str, raw: &[String]) -> Result<Environment, Box<dyn std::error::Error>> {
    let proc_ = parse_procedure(source)?;
    let mut map = serde_json::Map::new();
    for a in raw {
        let (k, v) = a.split_once('=').ok_or_else(|| format!("argument {a:?} is not NAME=VALUE"))?;
        let json = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
        map.insert(k.to_string(), json);
    }
    Ok(args_from_json(&proc_, &map)?)
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Run {
            proc_file,
            fixture,
            trace,
            args,
        } => {
            let source = read(&proc_file)?;
            let proc_ = parse_procedure(&source)?;
            let env = parse_args(&source, &args)?;
            let db = load_fixture(&fixture)?;
            let cfg = ExecutionConfig::default();
            let result = if trace {
                let t = run_traced(&proc_, &source, env, &db, cfg)?;
                println!("trace {}", t.trace_id);
                t.result?
            } else {
                run(&proc_, env, &db, cfg)?
            };
            println!("steps {} ({}..={})", result.steps, result.start.get() + 1, result.end);
            for (name, ty) in proc_.variables() {
                match (result.env.get(&name), ty) {
                    (Some(Binding::Table(r)), _) => println!("{name} = <{} rows>", r.len()),
                    (Some(Binding::Scalar(v)), _) => println!("{name} = {v}"),
                    (None, VarType::Table | VarType::Scalar(_)) => println!("{name} unbound"),
                }
            }
            Ok(())
        }
        Command::Serve { port, fixture } => {
            let debugger = Arc::new(Debugger::new(fixture));
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
            eprintln!("listening on http://127.0.0.1:{port}");
            rt.block_on(tardisp::api::serve(debugger, port))?;
            Ok(())
        }
        Command::Query { session, sql, server } => {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .http_status_as_error(false)
                .build()
                .into();
            let url = format!("{}/sessions/{session}/query", server.trim_end_matches('/'));
            let mut resp = agent.post(&url).send_json(serde_json::json!({ "sql": sql }))?;
            let ok = resp.status().is_success();
            let body: serde_json::Value = resp.body_mut().read_json()?;
            println!("{}", serde_json::to_string_pretty(&body)?);
            if ok {
                Ok(())
            } else {
                Err("query failed".into())
            }
        }
        Command::Bench {
            fixture,
            procs,
            args,
            queries,
            scales,
            reps,
            out,
        } => {
            let cases = match fixture {
                None => scales.iter().flat_map(|&n| bench::workload_cases(n)).collect(),
                Some(dir) => {
                    if procs.is_empty() {
                        return Err("--proc is required with --fixture".into());
                    }
                    let mut cases = Vec::new();
                    for p in &procs {
                        let source = read(p)?;
                        let env = parse_args(&source, &args)?;
                        let dir = dir.clone();
                        cases.push(BenchCase {
                            name: p.display().to_string(),
                            source,
                            args: env,
                            build: Box::new(move || {
                                load_fixture(&dir).map_err(|e| BenchError::Setup(e.to_string()))
                            }),
                            queries: queries.clone(),
                        });
                    }
                    cases
                }
            };
            let report = bench::run_bench(&cases, reps)?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            for c in &report.cases {
                println!(
                    "{}: plain {:.1} ms, traced {:.1} ms ({:.2}x), reproduce {:.1} ms, matches {}",
                    c.case, c.plain_ms, c.traced_ms, c.traced_over_plain, c.reproduce_ms, c.reproduce_matches
                );
                for q in &c.queries {
                    println!(
                        "  single {:.1} ms, diff(k={}) {:.1} ms ({:.2}x)",
                        q.single_ms, q.steps, q.diff_ms, q.diff_over_single
                    );
                }
            }
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Views { proc_file } => {
            let proc_ = parse_procedure(&read(&proc_file)?)?;
            print!("{}", emit_reconstruction_views(&proc_));
            Ok(())
        }
    }
}
