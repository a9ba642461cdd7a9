//! Command-line entry point: `run`, `gradcheck` and `report`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use gmnm::experiment::report::{collect, csv_table, text_table};
use gmnm::experiment::run::default_data_dir;
use gmnm::experiment::{exit, exit_code, run_file};
use gmnm::gradcheck::{gradcheck, ModelKind, ABS_TOL};
use gmnm::snapshot::write_json;
use gmnm::Error;

/// Relative error above which `gradcheck` exits nonzero.
const GRADCHECK_EXIT_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "gmnm", version, about = "Train and check Gaussian mixture-inspired nonlinear modules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiment configs.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Configs to run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Dataset root; defaults to $GMNM_DATA_DIR.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Compare tape gradients of a model kind with finite differences.
    Gradcheck {
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the JSON report.
        #[arg(long, default_value = "runs/gradcheck")]
        out: PathBuf,
    },
    /// Tabulate finished runs, best minimum test loss first.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the CSV table here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn fail(err: &Error) -> i32 {
    eprintln!("error: {err}");
    exit_code(err)
}

fn run_all(configs: &[PathBuf], jobs: usize, data_dir: Option<&Path>) -> i32 {
    let next = AtomicUsize::new(0);
    let worst = Mutex::new(exit::OK);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = configs.get(i) else { break };
                let code = match run_file(path, data_dir) {
                    Ok(sum) => {
                        println!(
                            "{}: {} params, min train {:.6e}, min test {:.6e}, {:.1}s",
                            sum.name, sum.param_count, sum.min_train_loss, sum.min_test_loss, sum.wall_time_secs
                        );
                        exit::OK
                    }
                    Err(e) => {
                        eprint!("{}: ", path.display());
                        fail(&e)
                    }
                };
                let mut w = worst.lock().expect("no worker panics while holding the lock");
                *w = (*w).max(code);
            });
        }
    });
    worst.into_inner().expect("workers joined")
}

fn check(kind: &str, seed: u64, out: &Path) -> i32 {
    let kind: ModelKind = match kind.parse() {
        Ok(k) => k,
        Err(e) => return fail(&e),
    };
    let blocks = match gradcheck(kind, seed) {
        Ok(b) => b,
        Err(e) => return fail(&e),
    };
    println!("gradcheck {kind} seed {seed}");
    for b in &blocks {
        println!("  {b}");
    }
    let ok = blocks.iter().all(|b| b.passes(GRADCHECK_EXIT_TOL, ABS_TOL));
    let json = serde_json::json!({
        "kind": kind.name(),
        "seed": seed,
        "passed": ok,
        "blocks": blocks.iter().map(|b| match &b.diff {
            None => serde_json::json!({ "name": b.name, "frozen": true }),
            Some(d) => serde_json::json!({ "name": b.name, "frozen": false, "max_rel": d.rel, "max_abs_small": d.abs_small }),
        }).collect::<Vec<_>>(),
    });
    let persisted = std::fs::create_dir_all(out)
        .map_err(Error::from)
        .and_then(|()| write_json(&out.join(format!("{}-seed{seed}.json", kind.name())), &json));
    if let Err(e) = persisted {
        return fail(&e);
    }
    if ok {
        exit::OK
    } else {
        eprintln!("gradcheck failed: a block exceeds relative error {GRADCHECK_EXIT_TOL:e}");
        exit::CHECK_FAILED
    }
}

fn report(dirs: &[PathBuf], csv: Option<&Path>) -> i32 {
    let rows = match collect(dirs) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let table = csv_table(&rows);
    print!("{}\n{table}", text_table(&rows));
    if let Some(path) = csv {
        if let Err(e) = std::fs::write(path, table) {
            return fail(&e.into());
        }
    }
    exit::OK
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { exit::PARSE } else { exit::OK };
            return ExitCode::from(code as u8);
        }
    };
    let code = match cli.command {
        Command::Run { configs, jobs, data_dir } => run_all(&configs, jobs, data_dir.or_else(default_data_dir).as_deref()),
        Command::Gradcheck { kind, seed, out } => check(&kind, seed, &out),
        Command::Report { dirs, csv } => report(&dirs, csv.as_deref()),
    };
    ExitCode::from(code as u8)
}
