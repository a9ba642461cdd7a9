//! Criteria that train models end to end through the same run pipeline as
//! the command line, starting from the checked-in configs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gmnm::experiment::{default_data_dir, run_experiment, ExperimentConfig, RunSummary};
use gmnm::tasks::fit::FitLevel;

use crate::Verdict;

fn config(file: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(file);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ExperimentConfig::parse(&text).unwrap()
}

fn output_root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// Runs `cfg` under `name` with `seed`; the echoed config is the edited one.
fn run(mut cfg: ExperimentConfig, name: String, seed: u64, data_dir: Option<&Path>) -> gmnm::Result<RunSummary> {
    cfg.name = name;
    cfg.seed = seed;
    cfg.output_dir = output_root();
    let text = toml::to_string(&cfg).expect("config serializes");
    run_experiment(&cfg, &text, data_dir)
}

pub fn poisson() -> Verdict {
    let start = Instant::now();
    let gmnm = run(config("pde-gmnm.toml"), "pde-gmnm".into(), 0, None);
    let pinn = run(config("pde-pinn.toml"), "pde-pinn".into(), 0, None);
    let (g, p) = match (gmnm, pinn) {
        (Ok(g), Ok(p)) => (g, p),
        (g, p) => return Verdict::new(false, format!("run failed: {:?} {:?}", g.err(), p.err())),
    };
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let counts = g.param_count == 4500 && p.param_count == 5301;
    let reached = g.min_test_loss <= 1e-5;
    let ordered = g.min_test_loss < p.min_test_loss;
    Verdict::new(
        counts && reached && ordered && minutes < 30.0,
        format!(
            "params {}/{}, best L2 gmnm {:.3e} (target 1e-5: {reached}), pinn {:.3e} (gmnm ahead: {ordered}), {minutes:.1} min",
            g.param_count, p.param_count, g.min_test_loss, p.min_test_loss
        ),
    )
}

pub fn fitting() -> Verdict {
    let mut pass = true;
    let mut notes = Vec::new();
    for level in FitLevel::STANDARD {
        let mut wins = 0;
        for seed in 0..5 {
            let tag = format!("{}-{}-{}-s{seed}", level.a, level.b, level.c);
            let with_level = |file: &str| {
                let mut c = config(file);
                (c.fit.a, c.fit.b, c.fit.c) = (level.a, level.b, level.c);
                c
            };
            let g = run(with_level("fit2d-gmnm.toml"), format!("fit-gmnm-{tag}"), seed, None);
            let m = run(with_level("fit2d-mlp.toml"), format!("fit-mlp-{tag}"), seed, None);
            match (g, m) {
                (Ok(g), Ok(m)) => {
                    pass &= m.param_count >= g.param_count;
                    wins += usize::from(g.final_test_loss < m.final_test_loss);
                    if seed == 0 {
                        notes.push(format!(
                            "({},{},{}) seed0 gmnm {:.2e} vs mlp {:.2e} [{} vs {} params]",
                            level.a, level.b, level.c, g.final_test_loss, m.final_test_loss, g.param_count, m.param_count
                        ));
                    }
                }
                (g, m) => return Verdict::new(false, format!("run failed: {:?} {:?}", g.err(), m.err())),
            }
        }
        notes.push(format!("wins {wins}/5"));
        pass &= wins >= 4;
    }
    Verdict::new(pass, notes.join("; "))
}

pub fn time_series() -> Verdict {
    let start = Instant::now();
    let mut good = 0;
    let mut notes = Vec::new();
    for seed in 0..5 {
        let runs: gmnm::Result<Vec<RunSummary>> = ["ts-lstm3-gmnm.toml", "ts-lstm3.toml", "ts-lstm32.toml"]
            .iter()
            .map(|f| run(config(f), format!("{}-s{seed}", f.trim_end_matches(".toml")), seed, None))
            .collect();
        let runs = match runs {
            Ok(r) => r,
            Err(e) => return Verdict::new(false, format!("run failed: {e}")),
        };
        let (g, small, large) = (runs[0].final_test_loss, runs[1].final_test_loss, runs[2].final_test_loss);
        good += usize::from(g <= 1e-3 && small >= 10.0 * g && large >= 10.0 * g);
        notes.push(format!("s{seed} {g:.1e}/{small:.1e}/{large:.1e}"));
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    Verdict::new(
        good >= 4 && minutes < 15.0,
        format!(
            "lstm3+gmnm/lstm3/lstm32 test mse: {}; seeds meeting both bars {good}/5, {minutes:.1} min",
            notes.join(" ")
        ),
    )
}

pub fn mnist() -> Verdict {
    let Some(data_dir) = default_data_dir() else {
        return Verdict::new(false, "no data: set GMNM_DATA_DIR to a directory holding mnist/");
    };
    let start = Instant::now();
    let mut means = [0.0; 2];
    let mut params = [0; 2];
    for (k, file) in ["mnist-cnn-gmnm.toml", "mnist-cnn-dense.toml"].iter().enumerate() {
        for seed in 0..3 {
            match run(
                config(file),
                format!("{}-s{seed}", file.trim_end_matches(".toml")),
                seed,
                Some(&data_dir),
            ) {
                Ok(s) => {
                    means[k] += s.min_test_loss / 3.0;
                    params[k] = s.param_count;
                }
                Err(e) => return Verdict::new(false, format!("run failed: {e}")),
            }
        }
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let ratio = params[0] as f64 / params[1] as f64;
    let matched = (ratio - 1.0).abs() <= 0.05;
    Verdict::new(
        matched && means[0] < means[1] && minutes < 45.0,
        format!(
            "mean min test loss gmnm head {:.4e} vs dense {:.4e}, params {} vs {} ({:+.1}%), {minutes:.1} min",
            means[0],
            means[1],
            params[0],
            params[1],
            (ratio - 1.0) * 100.0
        ),
    )
}
