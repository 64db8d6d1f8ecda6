use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use uqlb::backends::{
    run_sim, AllocationMode, AllocationSpec, Backend, BackendConfig, EmulatedBackend,
    EmulatedConfig, JobSpec, ProcessBackend, SimSetup, Submission,
};
use uqlb::balancer::{serve_balancer, Balancer, BalancerConfig};
use uqlb::bench::{compare, run_suite, BenchError, Launcher, RunOptions, Suite};
use uqlb::clients::{
    qoi_integral, run_experiment, ExperimentPlan, ParameterBox, ParameterSource, QoIConfig,
};
use uqlb::metrics::{summarize, write_records_csv};
use uqlb::models::{serve_benchmark, BenchmarkModel, DEFAULT_MODEL_NAME};
use uqlb::protocol::{default_port, serve_models, ServeOptions};
use uqlb::Nanos;

#[derive(Parser)]
#[command(
    name = "bench",
    version,
    about = "Load-balanced model evaluation benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Perjob,
    Bulk,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<AllocationMode> {
        match self {
            ModeArg::Perjob => vec![AllocationMode::PerJob],
            ModeArg::Bulk => vec![AllocationMode::Bulk],
            ModeArg::Both => vec![AllocationMode::PerJob, AllocationMode::Bulk],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Process,
    Emulated,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// eigen, gp, synthetic or identity.
    #[arg(long, default_value = "eigen")]
    model: String,
    /// Matrix size (eigen) or vector size (identity).
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV of GP training rows: inputs then outputs.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Full model description as JSON; overrides the flags above.
    #[arg(long)]
    spec: Option<String>,
}

impl ModelArgs {
    fn model(&self) -> Result<BenchmarkModel, String> {
        if let Some(spec) = &self.spec {
            return serde_json::from_str(spec).map_err(|e| format!("--spec: {e}"));
        }
        Ok(match self.model.as_str() {
            "eigen" => BenchmarkModel::Eigen {
                n: self.n,
                seed: self.seed,
            },
            "gp" => match BenchmarkModel::gp_default(self.seed) {
                BenchmarkModel::Gp {
                    input_dim,
                    train_points,
                    seed,
                    signal_variance,
                    lengthscale,
                    noise_sd,
                    ..
                } => BenchmarkModel::Gp {
                    train_data: self.train_data.clone(),
                    input_dim,
                    train_points,
                    seed,
                    signal_variance,
                    lengthscale,
                    noise_sd,
                },
                other => other,
            },
            "synthetic" => BenchmarkModel::Synthetic {
                duration: uqlb::dist::Distribution::uniform(0.01, 0.05),
                seed: self.seed,
                input_dim: 7,
            },
            "identity" => BenchmarkModel::Identity { size: self.n },
            other => return Err(format!("unknown model `{other}`")),
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run benchmark suites and write results.
    Run {
        /// Built-in suite names or suite files; the default set if empty.
        suites: Vec<String>,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        /// Queue depths; the suite's own if omitted.
        #[arg(long)]
        depth: Vec<usize>,
        /// Seeds; the suite's own if omitted.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Evaluations per run; the suite's own if omitted.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Use the scheduler emulator instead of live servers.
        #[arg(long)]
        sim: bool,
        /// Run live servers inside this process instead of as child processes.
        #[arg(long, conflicts_with = "sim")]
        emulated: bool,
    },
    /// Compare two results trees.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Emulate one backend config on a synthetic workload.
    Sim {
        /// Backend config with [job_spec], [allocation] and [sim] tables.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        tasks: usize,
        /// Task duration in seconds.
        #[arg(long, default_value_t = 0.01)]
        duration: f64,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Jobs kept outstanding; all at once if omitted.
        #[arg(long)]
        depth: Option<usize>,
        /// Number of seeds, counting up from the config's seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Write the outcomes of the first seed here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a benchmark model.
    Serve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = DEFAULT_MODEL_NAME)]
        name: String,
        /// Listen on a free port and write `host:port` to this file.
        #[arg(long)]
        reg_file: Option<PathBuf>,
        /// Listen port; `PORT` or 4242 if omitted.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "0.0.0.0")]
        host: IpAddr,
    },
    /// Run a load balancer in front of spawned model servers.
    Balance {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 4242)]
        port: u16,
        #[arg(long, default_value_t = 2)]
        max_servers: usize,
        #[arg(long, default_value = "bulk")]
        mode: AllocationMode,
        #[arg(long, value_enum, default_value = "process")]
        backend: BackendArg,
        /// Backend config for the job spec and allocation limits.
        #[arg(long, alias = "job-spec")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "servers")]
        reg_dir: PathBuf,
        #[arg(long)]
        event_log: Option<PathBuf>,
        /// Seconds between health checks.
        #[arg(long, default_value_t = 5.0)]
        health_period: f64,
    },
    /// Run a fixed-depth experiment against a model or balancer.
    Experiment {
        #[arg(long)]
        url: String,
        #[arg(long, default_value = DEFAULT_MODEL_NAME)]
        name: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Parameter box file (TOML), or `gs2`; `[0,1]` if omitted.
        #[arg(long = "box")]
        bx: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the flux quantity of interest through a model.
    Qoi {
        #[arg(long)]
        url: String,
        #[arg(long, default_value = DEFAULT_MODEL_NAME)]
        name: String,
        /// QoI config file (TOML); defaults if omitted.
        #[arg(long)]
        qoi: Option<PathBuf>,
    },
}

/// Exit status: 0 success, 1 experiment failure, 2 usage error.
enum Fail {
    Experiment(String),
    Usage(String),
}

impl From<BenchError> for Fail {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::UnknownSuite(_) | BenchError::Config(_) => Fail::Usage(e.to_string()),
            other => Fail::Experiment(other.to_string()),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Fail {
    Fail::Usage(e.to_string())
}

fn failed(e: impl std::fmt::Display) -> Fail {
    Fail::Experiment(e.to_string())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| EnvFilter::new("warn,uqlb::metrics=error")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.cmd).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Experiment(m)) => {
            eprintln!("bench: {m}");
            ExitCode::from(1)
        }
        Err(Fail::Usage(m)) => {
            eprintln!("bench: {m}");
            ExitCode::from(2)
        }
    }
}

async fn dispatch(cmd: Cmd) -> Result<(), Fail> {
    match cmd {
        Cmd::Run {
            suites,
            mode,
            depth,
            seeds,
            n,
            out,
            sim,
            emulated,
        } => {
            let suites = if suites.is_empty() {
                Suite::default_set()
            } else {
                suites
                    .iter()
                    .map(|s| Suite::resolve(s))
                    .collect::<Result<_, _>>()?
            };
            let launcher = if sim {
                Launcher::Sim
            } else if emulated {
                Launcher::Emulated
            } else {
                Launcher::Process {
                    exe: std::env::current_exe().map_err(usage)?,
                }
            };
            let mut opts = RunOptions::new(out, launcher);
            opts.modes = mode.modes();
            opts.depths = (!depth.is_empty()).then_some(depth);
            opts.seeds = (!seeds.is_empty()).then_some(seeds);
            opts.n_evaluations = n;
            let mut all_ok = true;
            for suite in &suites {
                let report = run_suite(suite, &opts).await?;
                for (dir, s) in &report.cells {
                    println!(
                        "{:<14} {:<6} depth {:<3} makespan {:>10.4} s  task overhead {:>10.4} s  task slr {:>9}  {}  -> {}",
                        s.suite,
                        s.mode,
                        s.depth,
                        s.makespan,
                        s.mean_task_overhead,
                        s.mean_task_slr.map_or("-".to_owned(), |v| format!("{v:.3}")),
                        if s.complete { "complete" } else { "INCOMPLETE" },
                        dir.display()
                    );
                }
                all_ok &= report.all_complete();
            }
            if all_ok {
                Ok(())
            } else {
                Err(failed("some experiments did not complete"))
            }
        }
        Cmd::Compare { a, b, json } => {
            let rows = compare(&a, &b)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rows).map_err(failed)?);
            } else {
                println!(
                    "{:<28} {:>11} {:>11} {:>8} {:>11} {:>11} {:>9} {:>8} {:>8}  flags",
                    "key",
                    "makespan_a",
                    "makespan_b",
                    "ratio",
                    "overhead_a",
                    "overhead_b",
                    "oh_ratio",
                    "slr_a",
                    "slr_b"
                );
                let slr = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.3}"));
                for r in rows {
                    let mut flags = Vec::new();
                    if r.overhead_flag {
                        flags.push("overhead>=1000x");
                    }
                    if r.makespan_flag {
                        flags.push("makespan-38%");
                    }
                    println!(
                        "{:<28} {:>11.4} {:>11.4} {:>8.3} {:>11.4} {:>11.4} {:>9.2} {:>8} {:>8}  {}",
                        r.key,
                        r.makespan_a,
                        r.makespan_b,
                        r.makespan_ratio,
                        r.overhead_a,
                        r.overhead_b,
                        r.overhead_ratio,
                        slr(r.slr_a),
                        slr(r.slr_b),
                        flags.join(",")
                    );
                }
            }
            Ok(())
        }
        Cmd::Sim {
            config,
            tasks,
            duration,
            mode,
            depth,
            seeds,
            out,
        } => {
            let cfg = BackendConfig::load(&config).map_err(usage)?;
            let sim = cfg
                .sim
                .clone()
                .ok_or_else(|| usage("config has no [sim] table"))?;
            let allocation = cfg
                .allocation
                .clone()
                .unwrap_or_else(|| AllocationSpec::single_worker(cfg.job_spec.time_limit));
            let modes = mode.map_or_else(|| vec![cfg.job_spec.mode], ModeArg::modes);
            if !(duration.is_finite() && duration >= 0.0) {
                return Err(usage("--duration must be >= 0"));
            }
            let workload = vec![Nanos::from_secs_f64(duration); tasks];
            let mut all_ok = true;
            for m in modes {
                for k in 0..seeds.max(1) {
                    let mut setup = SimSetup {
                        sim: sim.clone(),
                        job: JobSpec {
                            mode: m,
                            ..cfg.job_spec.clone()
                        },
                        allocation: allocation.clone(),
                        submission: depth.map_or(Submission::AllAtOnce, Submission::Depth),
                    };
                    setup.sim.rng_seed = sim.rng_seed + k;
                    let outcomes = run_sim(&workload, &setup).map_err(failed)?;
                    if k == 0 {
                        if let Some(path) = &out {
                            let f = std::fs::File::create(path).map_err(failed)?;
                            uqlb::backends::write_outcomes_csv(f, &outcomes).map_err(failed)?;
                        }
                    }
                    all_ok &= outcomes.len() == tasks;
                    let records: Vec<_> = outcomes.iter().map(|o| o.to_task_record()).collect();
                    let s = summarize(&records, None).map_err(failed)?;
                    println!(
                        "{}",
                        serde_json::json!({
                            "mode": m, "seed": setup.sim.rng_seed, "tasks": records.len(),
                            "makespan": s.makespan, "overhead": s.overhead, "slr": s.slr,
                            "mean_task_overhead": s.mean_task_overhead,
                        })
                    );
                }
            }
            if all_ok {
                Ok(())
            } else {
                Err(failed("some tasks were not run"))
            }
        }
        Cmd::Serve {
            model,
            name,
            reg_file,
            port,
            host,
        } => {
            let spec = model.model().map_err(usage)?;
            let handle = match reg_file {
                Some(path) => serve_benchmark(&spec, &name, host, &path)
                    .await
                    .map_err(failed)?,
                None => {
                    let built = spec.build(&name).map_err(failed)?;
                    let addr = SocketAddr::new(host, port.unwrap_or_else(default_port));
                    let opts = ServeOptions {
                        host,
                        ..ServeOptions::default()
                    };
                    serve_models(vec![built], addr, opts)
                        .await
                        .map_err(failed)?
                }
            };
            eprintln!("serving `{name}` on {}", handle.url());
            tokio::signal::ctrl_c().await.map_err(failed)?;
            handle.shutdown().await;
            Ok(())
        }
        Cmd::Balance {
            model,
            port,
            max_servers,
            mode,
            backend,
            config,
            reg_dir,
            event_log,
            health_period,
        } => {
            let spec = model.model().map_err(usage)?;
            let file = config
                .as_deref()
                .map(BackendConfig::load)
                .transpose()
                .map_err(usage)?;
            let mut job = file
                .as_ref()
                .map(|c| c.job_spec.clone())
                .unwrap_or_else(|| {
                    JobSpec::new(
                        mode,
                        Nanos::from_secs_f64(60.0),
                        Nanos::from_secs_f64(300.0),
                    )
                });
            job.mode = mode;
            let alloc_limit = file
                .as_ref()
                .and_then(|c| c.allocation.as_ref())
                .map(|a| a.allocation_time_limit);
            let backend: Arc<dyn Backend> = match backend {
                BackendArg::Process => {
                    if job.command.is_empty() {
                        let exe = std::env::current_exe().map_err(usage)?;
                        job.command = vec![
                            exe.display().to_string(),
                            "serve".into(),
                            "--spec".into(),
                            serde_json::to_string(&spec).map_err(usage)?,
                            "--name".into(),
                            DEFAULT_MODEL_NAME.into(),
                        ];
                    }
                    Arc::new(ProcessBackend::new(job.clone(), alloc_limit).map_err(usage)?)
                }
                BackendArg::Emulated => {
                    Arc::new(EmulatedBackend::new(EmulatedConfig::new(spec, mode)))
                }
            };
            let mut cfg = BalancerConfig::new(&reg_dir);
            cfg.max_servers = max_servers;
            cfg.event_log = event_log;
            cfg.eval_timeout = job.time_limit.into();
            cfg.health_period = Duration::try_from_secs_f64(health_period).map_err(usage)?;
            let balancer = Balancer::new(cfg, backend).map_err(usage)?;
            let front = serve_balancer(
                balancer.clone(),
                SocketAddr::new(Ipv4Addr::UNSPECIFIED.into(), port),
            )
            .await
            .map_err(failed)?;
            eprintln!(
                "balancer on {} ({mode}, up to {max_servers} servers)",
                front.url()
            );
            tokio::signal::ctrl_c().await.map_err(failed)?;
            front.shutdown().await;
            balancer.shutdown().await;
            Ok(())
        }
        Cmd::Experiment {
            url,
            name,
            n,
            depth,
            seed,
            bx,
            out,
        } => {
            let bx = load_box(bx.as_deref())?;
            let mut plan = ExperimentPlan::new(url, ParameterSource::Lhs { bx, jitter: false });
            plan.model_name = name;
            plan.n_evaluations = n;
            plan.queue_depth = depth;
            plan.seed = seed;
            let outcome = run_experiment(&plan).await.map_err(usage)?;
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir).map_err(failed)?;
                let f = std::fs::File::create(dir.join("records.csv")).map_err(failed)?;
                write_records_csv(f, &outcome.records).map_err(failed)?;
            }
            if !outcome.records.is_empty() {
                let s = summarize(&outcome.records, Some(outcome.wall_span)).map_err(failed)?;
                let text = serde_json::to_string_pretty(&s).map_err(failed)?;
                if let Some(dir) = &out {
                    std::fs::write(dir.join("summary.json"), &text).map_err(failed)?;
                }
                println!("{text}");
            }
            println!(
                "completed {}/{n}, max in flight {}, failures {}",
                outcome.completed(),
                outcome.max_in_flight,
                outcome.failures.len()
            );
            if outcome.incomplete {
                Err(failed("experiment incomplete"))
            } else {
                Ok(())
            }
        }
        Cmd::Qoi { url, name, qoi } => {
            let cfg: QoIConfig = match qoi {
                Some(path) => toml::from_str(&read(&path)?).map_err(usage)?,
                None => QoIConfig::default(),
            };
            let value = qoi_integral(&url, &name, &cfg).await.map_err(failed)?;
            println!("{value}");
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String, Fail> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_box(arg: Option<&str>) -> Result<ParameterBox, Fail> {
    match arg {
        None => Ok(ParameterBox::unit(1)),
        Some("gs2") => Ok(ParameterBox::gs2()),
        Some(path) => {
            let bx: ParameterBox = toml::from_str(&read(Path::new(path))?).map_err(usage)?;
            bx.validate().map_err(usage)?;
            Ok(bx)
        }
    }
}
