//! Executes a configured experiment and persists its artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, HeadKind, ModelSpec, OptimKind, Task};
use crate::engine::Rng;
use crate::error::{invalid, Error, Result};
use crate::gmnm::{GmnmConfig, GmnmParams, Mode, MuInit};
use crate::module::Module;
use crate::nets::{ConvShape, ConvStackParams, LossKind, LstmParams, MlpParams, RbfParams};
use crate::optim::{train, Adam, MetricRow, Objective, Optimizer, RunRecord, Sgd, TrainBudget};
use crate::snapshot::{write_json, ModuleSnapshot};
use crate::tasks::fit::{sample_fit_dataset, FIT_DOMAIN};
use crate::tasks::mnist::{mnist_load, mnist_paths};
use crate::tasks::pde::{PoissonModel, PoissonObjective};
use crate::tasks::ts::ts_generate;
use crate::tasks::{Dataset, Predictor, SupervisedObjective};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PARAMS_FILE: &str = "params.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const ABORT_FILE: &str = "abort.json";

/// Environment variable naming the default dataset root.
pub const DATA_DIR_ENV: &str = "GMNM_DATA_DIR";

/// Run totals, derivable from `metrics.csv` plus the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub task: String,
    pub model: String,
    pub param_count: usize,
    pub seed: u64,
    pub lr: f64,
    /// Last recorded optimizer step.
    pub steps: usize,
    pub min_train_loss: f64,
    pub min_test_loss: f64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub extras_min: BTreeMap<String, f64>,
    pub extras_final: BTreeMap<String, f64>,
    pub wall_time_secs: f64,
    /// The config file, verbatim.
    pub config: String,
}

impl RunSummary {
    pub fn from_rows(cfg: &ExperimentConfig, config_text: &str, rows: &[MetricRow], param_count: usize, wall: f64) -> Result<Self> {
        let last = rows.last().ok_or_else(|| invalid("run recorded no evaluations"))?;
        let record = RunRecord {
            rows: rows.to_vec(),
            param_count,
            wall_time_secs: wall,
        };
        let extras_min = record
            .extra_names()
            .into_iter()
            .filter_map(|n| record.min_extra(&n).map(|v| (n, v)))
            .collect();
        Ok(RunSummary {
            name: cfg.name.clone(),
            task: cfg.task.name().to_string(),
            model: cfg.model.name().to_string(),
            param_count,
            seed: cfg.seed,
            lr: cfg.lr(),
            steps: last.step,
            min_train_loss: record.min_train_loss(),
            min_test_loss: record.min_test_loss(),
            final_train_loss: last.train_loss,
            final_test_loss: last.test_loss,
            extras_min,
            extras_final: last.extras.iter().cloned().collect(),
            wall_time_secs: wall,
            config: config_text.to_string(),
        })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Writes `rows` with 17 significant digits so every value round-trips.
pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["step".to_string(), "train_loss".into(), "test_loss".into()];
    if let Some(first) = rows.first() {
        header.extend(first.extras.iter().map(|(n, _)| n.clone()));
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.step.to_string(),
            format!("{:.16e}", r.train_loss),
            format!("{:.16e}", r.test_loss),
        ];
        rec.extend(r.extras.iter().map(|(_, v)| format!("{v:.16e}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[..3] != ["step", "train_loss", "test_loss"] {
        return Err(Error::Config(format!("{}: unexpected header {header:?}", path.display())));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| Error::Config(format!("{}: {s:?}: {e}", path.display())))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let step = rec[0]
            .parse()
            .map_err(|e| Error::Config(format!("{}: step: {e}", path.display())))?;
        let extras = header[3..]
            .iter()
            .zip(rec.iter().skip(3))
            .map(|(n, v)| Ok((n.clone(), num(v)?)))
            .collect::<Result<_>>()?;
        rows.push(MetricRow {
            step,
            train_loss: num(&rec[1])?,
            test_loss: num(&rec[2])?,
            extras,
        });
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

/// Resolves the dataset root: `$GMNM_DATA_DIR` unless overridden.
pub fn default_data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn budget(cfg: &ExperimentConfig, n_train: usize) -> TrainBudget {
    let b = &cfg.budget;
    let batch = cfg.batch_size().filter(|&bs| bs < n_train);
    match (b.steps, b.epochs) {
        (_, Some(epochs)) => {
            let bs = batch.unwrap_or(n_train);
            let mut t = TrainBudget::epochs(epochs, n_train, bs, cfg.seed);
            t.batch_size = batch;
            if let Some(e) = b.eval_every {
                t.eval_every = e;
            }
            t
        }
        (steps, None) => TrainBudget {
            steps: steps.unwrap_or(0),
            batch_size: batch,
            eval_every: b.eval_every.unwrap_or(100),
            seed: cfg.seed,
        },
    }
}

fn gmnm_config(d: usize, m: usize, out: usize, n: Option<usize>, mode: Mode, minimal: bool, trainable_mu: bool) -> GmnmConfig {
    let mut c = GmnmConfig::new(d, m, out).with_mode(mode).with_trainable_mu(trainable_mu);
    if minimal {
        c.minimal_ridge = true;
        c.n = 1;
    }
    if let Some(n) = n {
        c.n = n;
    }
    c
}

fn optimizer(cfg: &ExperimentConfig) -> Box<dyn Optimizer> {
    match cfg.optim.kind {
        OptimKind::Adam => Box::new(Adam::new(cfg.lr())),
        OptimKind::Sgd => Box::new(Sgd { lr: cfg.lr() }),
    }
}

/// Everything a finished training run leaves behind.
struct Trained {
    record: RunRecord,
    snapshot: ModuleSnapshot,
}

fn fit_model<M: Module, O: Objective<M>>(cfg: &ExperimentConfig, mut model: M, objective: &mut O) -> Result<Trained> {
    let mut opt = optimizer(cfg);
    let n = objective.train_len();
    let record = train(&mut model, objective, &mut opt, &budget(cfg, n))?;
    Ok(Trained {
        record,
        snapshot: ModuleSnapshot::capture(cfg.model.name(), &model),
    })
}

fn supervised<M: Predictor>(cfg: &ExperimentConfig, model: M, kind: LossKind, data: &Dataset) -> Result<Trained> {
    fit_model(cfg, model, &mut SupervisedObjective::from_dataset(kind, data)?)
}

fn pde<M: PoissonModel>(cfg: &ExperimentConfig, model: M) -> Result<Trained> {
    fit_model(cfg, model, &mut PoissonObjective::new(cfg.pde.clone(), cfg.seed)?)
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingData(path.display().to_string()))
    }
}

fn mnist_dir(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<PathBuf> {
    if let Some(d) = &cfg.mnist.dir {
        return existing(d.clone());
    }
    let root = data_dir.ok_or_else(|| Error::MissingData(format!("no mnist.dir and {DATA_DIR_ENV} is unset")))?;
    let nested = root.join("mnist");
    let has_files = |d: &Path| mnist_paths(d, true).0.exists();
    if has_files(&nested) {
        Ok(nested)
    } else {
        Ok(root.to_path_buf())
    }
}

fn fit_dataset(cfg: &ExperimentConfig, data_rng: &mut Rng) -> Result<Dataset> {
    match &cfg.fit.csv {
        Some(path) => Dataset::read_csv(&existing(path.clone())?, &[0, 2], &[0, 1], cfg.fit.n_train, cfg.seed),
        None => sample_fit_dataset(cfg.fit.level(), cfg.fit.n_train, cfg.fit.n_test, data_rng, cfg.seed),
    }
}

fn execute(cfg: &ExperimentConfig, data_dir: Option<&Path>, run_dir: &Path) -> Result<Trained> {
    let mut data_rng = Rng::fork(cfg.seed, 0x6461_7461);
    let mut rng = Rng::fork(cfg.seed, 0x6d6f_6465_6c);
    let cache = |ds: &Dataset| -> Result<()> {
        if cfg.data.cache_csv {
            ds.write_csv(&run_dir.join(DATASET_FILE))?;
        }
        Ok(())
    };
    match (cfg.task, &cfg.model) {
        (
            Task::Fit2d | Task::Pde,
            ModelSpec::Gmnm {
                m,
                n,
                mode,
                minimal_ridge,
                trainable_mu,
            },
        ) => {
            let mut c = gmnm_config(2, *m, 1, *n, *mode, *minimal_ridge, *trainable_mu);
            if cfg.task == Task::Fit2d {
                c = c.with_domain(FIT_DOMAIN.0, FIT_DOMAIN.1);
                let data = fit_dataset(cfg, &mut data_rng)?;
                cache(&data)?;
                supervised(cfg, GmnmParams::init(c, &mut rng, None)?, LossKind::Mse, &data)
            } else {
                pde(cfg, GmnmParams::init(c, &mut rng, None)?)
            }
        }
        (Task::Fit2d | Task::Pde, ModelSpec::Mlp { hidden, activation }) => {
            let mut widths = vec![2];
            widths.extend_from_slice(hidden);
            widths.push(1);
            let model = MlpParams::init(&widths, *activation, &mut rng)?;
            if cfg.task == Task::Fit2d {
                let data = fit_dataset(cfg, &mut data_rng)?;
                cache(&data)?;
                supervised(cfg, model, LossKind::Mse, &data)
            } else {
                pde(cfg, model)
            }
        }
        (Task::Fit2d, ModelSpec::Rbf { m }) => {
            let data = fit_dataset(cfg, &mut data_rng)?;
            cache(&data)?;
            supervised(cfg, RbfParams::init(2, *m, 1, FIT_DOMAIN, &mut rng)?, LossKind::Mse, &data)
        }
        (
            Task::Timeseries,
            ModelSpec::Lstm {
                units,
                post_m,
                post_out,
                post_trainable_mu,
            },
        ) => {
            let data = ts_generate(&cfg.ts, cfg.seed)?;
            cache(&data)?;
            let post = post_m.map(|m| GmnmConfig::new(*units, m, *post_out).with_trainable_mu(*post_trainable_mu));
            supervised(cfg, LstmParams::init(4, *units, post, &mut rng)?, LossKind::Mse, &data)
        }
        (
            Task::Mnist,
            ModelSpec::Cnn {
                channels,
                head,
                hidden,
                head_m,
                head_n,
                head_minimal_ridge,
                head_trainable_mu,
            },
        ) => {
            let dir = mnist_dir(cfg, data_dir)?;
            let (ti, tl) = mnist_paths(&dir, true);
            let (vi, vl) = mnist_paths(&dir, false);
            let train_set = mnist_load(&ti, &tl, Some(cfg.mnist.train_limit))?;
            let test_set = mnist_load(&vi, &vl, cfg.mnist.test_limit)?;
            let shape = ConvShape {
                height: 28,
                width: 28,
                in_channels: 1,
                channels: *channels,
                classes: 10,
            };
            let model = match head {
                HeadKind::Dense => ConvStackParams::init_dense(shape, hidden, &mut rng)?,
                HeadKind::Gmnm => {
                    let n = if *head_minimal_ridge { None } else { Some(*head_n) };
                    let c = gmnm_config(
                        shape.feature_dim()?,
                        *head_m,
                        10,
                        n,
                        Mode::Ridge,
                        *head_minimal_ridge,
                        *head_trainable_mu,
                    )
                    .with_mu_init(MuInit::DataSample);
                    ConvStackParams::init_gmnm(shape, c, Some(&train_set.inputs), &mut rng)?
                }
            };
            let mut objective = SupervisedObjective::new(
                LossKind::MseOnehot,
                (train_set.inputs, train_set.targets),
                (test_set.inputs, test_set.targets),
            )?;
            fit_model(cfg, model, &mut objective)
        }
        (task, model) => Err(Error::Config(format!(
            "model {} is not supported for task {}",
            model.name(),
            task.name()
        ))),
    }
}

/// Runs `cfg` and writes `config.toml`, `metrics.csv`, `summary.json` and
/// `params.json` to its run directory. A non-finite loss leaves
/// `abort.json` recording the step.
pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str, data_dir: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    for stale in [METRICS_FILE, SUMMARY_FILE, PARAMS_FILE, ABORT_FILE] {
        let p = dir.join(stale);
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    std::fs::write(dir.join(CONFIG_FILE), config_text)?;
    let trained = match execute(cfg, data_dir, &dir) {
        Ok(t) => t,
        Err(Error::NanAbort { step }) => {
            write_json(
                &dir.join(ABORT_FILE),
                &serde_json::json!({ "error": "non-finite loss", "step": step }),
            )?;
            return Err(Error::NanAbort { step });
        }
        Err(e) => return Err(e),
    };
    let rec = &trained.record;
    write_metrics(&dir.join(METRICS_FILE), &rec.rows)?;
    write_json(&dir.join(PARAMS_FILE), &trained.snapshot)?;
    let summary = RunSummary::from_rows(cfg, config_text, &rec.rows, rec.param_count, rec.wall_time_secs)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Parses and runs a config file.
pub fn run_file(path: &Path, data_dir: Option<&Path>) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("config {} not found", path.display())),
        _ => Error::Io(e),
    })?;
    let cfg = ExperimentConfig::parse(&text)?;
    run_experiment(&cfg, &text, data_dir)
}

/// Trainable parameters the configured model would have, without training.
pub fn planned_param_count(cfg: &ExperimentConfig) -> Result<usize> {
    let mut rng = Rng::seed(0);
    Ok(match &cfg.model {
        ModelSpec::Gmnm {
            m,
            n,
            mode,
            minimal_ridge,
            trainable_mu,
        } => GmnmParams::init(gmnm_config(2, *m, 1, *n, *mode, *minimal_ridge, *trainable_mu), &mut rng, None)?.param_count(),
        ModelSpec::Mlp { hidden, activation } => {
            let mut widths = vec![2];
            widths.extend_from_slice(hidden);
            widths.push(1);
            MlpParams::init(&widths, *activation, &mut rng)?.param_count()
        }
        ModelSpec::Rbf { m } => RbfParams::init(2, *m, 1, FIT_DOMAIN, &mut rng)?.param_count(),
        ModelSpec::Lstm {
            units,
            post_m,
            post_out,
            post_trainable_mu,
        } => {
            let post = post_m.map(|m| GmnmConfig::new(*units, m, *post_out).with_trainable_mu(*post_trainable_mu));
            LstmParams::init(4, *units, post, &mut rng)?.param_count()
        }
        ModelSpec::Cnn {
            channels,
            head,
            hidden,
            head_m,
            head_n,
            head_minimal_ridge,
            head_trainable_mu,
        } => {
            let shape = ConvShape {
                height: 28,
                width: 28,
                in_channels: 1,
                channels: *channels,
                classes: 10,
            };
            match head {
                HeadKind::Dense => ConvStackParams::init_dense(shape, hidden, &mut rng)?.param_count(),
                HeadKind::Gmnm => {
                    let n = if *head_minimal_ridge { None } else { Some(*head_n) };
                    let c = gmnm_config(
                        shape.feature_dim()?,
                        *head_m,
                        10,
                        n,
                        Mode::Ridge,
                        *head_minimal_ridge,
                        *head_trainable_mu,
                    );
                    ConvStackParams::init_gmnm(shape, c, None, &mut rng)?.param_count()
                }
            }
        }
    })
}
