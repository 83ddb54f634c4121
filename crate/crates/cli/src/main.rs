//! `atp`: solve single instances, inspect the vertex oracle, run batch
//! experiments, and serve the session API.
//!
//! Exit codes: 0 ok, 2 bad input, 3 solver failure, 4 problem too large for
//! the oracle, 5 environment (bind, filesystem).

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atp_core::model::InstanceFile;
use atp_core::session::{
    run_batch, write_batch_csv, SessionConfig, ANGLE_TARGET_DEG, COINCIDENCE_TARGET,
};
use atp_core::solver::{
    argmax_vertex, enumerate_vertices, solve_direct, SolveError, SolveMethod, SolverOptions,
    DEFAULT_DIM_CAP,
};
use atp_core::{reconstruct, reduce, TransportInstance};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "atp",
    version,
    about = "Adaptive transportation planning tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and print the plan.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = "exact")]
        method: SolveMethod,
        /// Also run the exact solver and print the objective gap.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 200_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Run simulated sessions for seeds 1..=n and write per-round aggregates.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// First seed; runs use `first_seed .. first_seed + seeds`.
        #[arg(long, default_value_t = 1)]
        first_seed: u64,
    },
    /// List every vertex of the reduced polytope and mark the optimum.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
}

const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_SIZE: u8 = 4;
const EXIT_ENV: u8 = 5;

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn solve_failure(e: SolveError) -> Failure {
    match e {
        SolveError::DimensionTooLarge { .. } => fail(EXIT_SIZE, e),
        SolveError::Model(_) => fail(EXIT_INPUT, e),
        other => fail(EXIT_SOLVER, other),
    }
}

fn read_instance(path: &Path) -> Result<TransportInstance, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    InstanceFile::parse(&text).map_err(|e| fail(EXIT_INPUT, e))
}

fn solve(
    instance: &Path,
    method: SolveMethod,
    verify: bool,
    max_iters: usize,
    tol: f64,
) -> Result<(), Failure> {
    let inst = read_instance(instance)?;
    let opts = SolverOptions {
        method,
        verify,
        max_iters,
        tol,
        ..SolverOptions::default()
    };
    let r = solve_direct(&inst, &opts).map_err(solve_failure)?;
    println!("plan: {}", r.plan.x);
    println!("objective: {}", r.objective);
    println!("method: {}", method_name(r.method));
    if let (Some(it), Some(b)) = (r.iterations, r.bracket) {
        println!("iterations: {it}");
        println!("bracket: {b:.3e}");
    }
    if let Some(gap) = r.gap {
        println!("gap: {gap}");
    }
    Ok(())
}

fn method_name(m: SolveMethod) -> &'static str {
    match m {
        SolveMethod::Exact => "exact",
        SolveMethod::FictitiousPlay => "fp",
    }
}

fn oracle(instance: &Path) -> Result<(), Failure> {
    let inst = read_instance(instance)?;
    let lp = reduce(&inst);
    let vertices = enumerate_vertices(&lp, DEFAULT_DIM_CAP).map_err(solve_failure)?;
    let best = argmax_vertex(&vertices).ok_or_else(|| fail(EXIT_SOLVER, "no feasible vertex"))?;
    println!("{} vertices", vertices.len());
    for (k, v) in vertices.iter().enumerate() {
        let plan = reconstruct(&v.point, &inst).map_err(|e| fail(EXIT_SOLVER, e))?;
        let point: Vec<String> = v.point.as_slice().iter().map(|x| fmt_num(*x)).collect();
        println!(
            "{} ({}) plan {} objective {}",
            if k == best { "*" } else { " " },
            point.join(","),
            plan.x,
            fmt_num(plan.effect)
        );
    }
    Ok(())
}

fn fmt_num(x: f64) -> String {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        format!("{}", r + 0.0)
    } else {
        format!("{x}")
    }
}

fn run(config: &Path, seeds: u64, out: &Path, first_seed: u64) -> Result<(), Failure> {
    if seeds == 0 {
        return Err(fail(EXIT_INPUT, "--seeds must be >= 1"));
    }
    let text = std::fs::read_to_string(config)
        .map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", config.display())))?;
    let cfg: SessionConfig =
        serde_json::from_str(&text).map_err(|e| fail(EXIT_INPUT, format!("config: {e}")))?;
    if !cfg.is_simulated() {
        return Err(fail(EXIT_INPUT, "config: run needs mode SIMULATED_DM"));
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        let lines: Vec<String> = problems.iter().map(|p| format!("  {p}")).collect();
        return Err(fail(
            EXIT_INPUT,
            format!("invalid config:\n{}", lines.join("\n")),
        ));
    }
    let seed_list: Vec<u64> = (first_seed..first_seed + seeds).collect();
    let report = run_batch(&cfg, &seed_list).map_err(|e| fail(EXIT_SOLVER, e))?;
    let file = File::create(out).map_err(|e| fail(EXIT_ENV, format!("{}: {e}", out.display())))?;
    write_batch_csv(&report.rows, BufWriter::new(file)).map_err(|e| fail(EXIT_ENV, e))?;

    let threshold = |v: f64| {
        if v > report.rounds as f64 {
            "not reached".to_string()
        } else {
            format!("{v}")
        }
    };
    let last = report.rows.last().expect("rounds >= 1");
    println!("seeds: {seeds}, rounds: {}", report.rounds);
    println!(
        "median rounds to coincidence >= {COINCIDENCE_TARGET}: {}",
        threshold(report.median_rounds_to_coincidence)
    );
    println!(
        "median rounds to angle <= {ANGLE_TARGET_DEG} deg: {}",
        threshold(report.median_rounds_to_angle)
    );
    println!(
        "final: coincidence median {:.3}, angle median {:.2} deg, cumulative regret median {:.3}",
        last.coincidence_median, last.angle_median, last.regret_median
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn serve(listen: &str, data: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(data)
        .map_err(|e| fail(EXIT_ENV, format!("data dir {}: {e}", data.display())))?;
    let probe = data.join(".write-test");
    File::create(&probe)
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| {
            fail(
                EXIT_ENV,
                format!("data dir {} is not writable: {e}", data.display()),
            )
        })?;
    let state = atp_service::AppState::open(data).map_err(|e| fail(EXIT_ENV, e))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| fail(EXIT_ENV, e))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| fail(EXIT_ENV, format!("cannot bind {listen}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| fail(EXIT_ENV, e))?;
        tracing::info!(%addr, data = %data.display(), "listening");
        println!("listening on http://{addr}");
        atp_service::serve(listener, state)
            .await
            .map_err(|e| fail(EXIT_ENV, e))
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve {
            instance,
            method,
            verify,
            max_iters,
            tol,
        } => solve(&instance, method, verify, max_iters, tol),
        Command::Run {
            config,
            seeds,
            out,
            first_seed,
        } => run(&config, seeds, &out, first_seed),
        Command::Oracle { instance } => oracle(&instance),
        Command::Serve { listen, data } => serve(&listen, &data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
