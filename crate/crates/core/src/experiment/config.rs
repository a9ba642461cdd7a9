//! Experiment configuration: one TOML file fully describes a run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmnm::Mode;
use crate::nets::Activation;
use crate::tasks::fit::FitLevel;
use crate::tasks::pde::PdeConfig;
use crate::tasks::ts::TsConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Fit2d,
    Pde,
    Timeseries,
    Mnist,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Fit2d => "fit2d",
            Task::Pde => "pde",
            Task::Timeseries => "timeseries",
            Task::Mnist => "mnist",
        }
    }
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn default_channels() -> (usize, usize) {
    (4, 8)
}

fn default_head_m() -> usize {
    10
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn ridge() -> Mode {
    Mode::Ridge
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Dense,
    Gmnm,
}

/// The `[model]` table, tagged by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Gmnm {
        m: usize,
        #[serde(default)]
        n: Option<usize>,
        #[serde(default = "ridge")]
        mode: Mode,
        #[serde(default)]
        minimal_ridge: bool,
        #[serde(default = "yes")]
        trainable_mu: bool,
    },
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "default_activation")]
        activation: Activation,
    },
    Rbf {
        m: usize,
    },
    /// LSTM over the input window, optionally followed by a GMNM block on
    /// the last hidden state, then an affine readout.
    Lstm {
        units: usize,
        #[serde(default)]
        post_m: Option<usize>,
        /// Output width of the GMNM block.
        #[serde(default = "one")]
        post_out: usize,
        #[serde(default = "yes")]
        post_trainable_mu: bool,
    },
    /// Two 3×3 conv layers with pooling, then a dense or GMNM head.
    Cnn {
        #[serde(default = "default_channels")]
        channels: (usize, usize),
        head: HeadKind,
        /// Hidden widths of a dense head.
        #[serde(default)]
        hidden: Vec<usize>,
        /// AGPs in a GMNM head.
        #[serde(default = "default_head_m")]
        head_m: usize,
        /// Projections per AGP in a GMNM head.
        #[serde(default = "one")]
        head_n: usize,
        #[serde(default)]
        head_minimal_ridge: bool,
        #[serde(default)]
        head_trainable_mu: bool,
    },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Gmnm { .. } => "gmnm",
            ModelSpec::Mlp { .. } => "mlp",
            ModelSpec::Rbf { .. } => "rbf",
            ModelSpec::Lstm { post_m: Some(_), .. } => "lstm+gmnm",
            ModelSpec::Lstm { .. } => "lstm",
            ModelSpec::Cnn { head: HeadKind::Dense, .. } => "cnn+dense",
            ModelSpec::Cnn { head: HeadKind::Gmnm, .. } => "cnn+gmnm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OptimSpec {
    #[serde(default)]
    pub kind: OptimKind,
    /// Defaults to 1e-2 for fit2d/pde and 1e-3 otherwise.
    #[serde(default)]
    pub lr: Option<f64>,
}

/// Either `steps` (full-batch unless `batch_size` is set) or `epochs`
/// (mini-batch) must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Defaults to once per epoch, or every 100 steps.
    #[serde(default)]
    pub eval_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Read the dataset from this CSV cache instead of sampling it.
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            n_train: 2000,
            n_test: 500,
            csv: None,
        }
    }
}

impl FitSpec {
    pub fn level(&self) -> FitLevel {
        FitLevel::new(self.a, self.b, self.c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistSpec {
    /// Directory with the four IDX files; defaults to `$GMNM_DATA_DIR/mnist`
    /// and then `$GMNM_DATA_DIR`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    pub train_limit: usize,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

impl Default for MnistSpec {
    fn default() -> Self {
        MnistSpec {
            dir: None,
            train_limit: 10_000,
            test_limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Write generated datasets to `dataset.csv` in the run directory.
    #[serde(default)]
    pub cache_csv: bool,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run directory name under `output_dir`.
    pub name: String,
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    #[serde(default)]
    pub optim: OptimSpec,
    #[serde(default)]
    pub budget: BudgetSpec,
    #[serde(default)]
    pub fit: FitSpec,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub ts: TsConfig,
    #[serde(default)]
    pub mnist: MnistSpec,
    #[serde(default)]
    pub data: DataSpec,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad(format!("name {:?} is not a plain directory name", self.name));
        }
        match (self.budget.steps, self.budget.epochs) {
            (Some(_), Some(_)) => return bad("budget: give steps or epochs, not both".into()),
            (None, None) => return bad("budget: steps or epochs is required".into()),
            _ => {}
        }
        if self.budget.eval_every == Some(0) || self.budget.batch_size == Some(0) {
            return bad("budget: eval_every and batch_size must be positive".into());
        }
        if let Some(lr) = self.optim.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("optim.lr must be positive, got {lr}"));
            }
        }
        let fits = matches!(
            (self.task, &self.model),
            (Task::Fit2d | Task::Pde, ModelSpec::Gmnm { .. } | ModelSpec::Mlp { .. })
                | (Task::Fit2d, ModelSpec::Rbf { .. })
                | (Task::Timeseries, ModelSpec::Lstm { .. })
                | (Task::Mnist, ModelSpec::Cnn { .. })
        );
        if !fits {
            return bad(format!(
                "model {} is not supported for task {}",
                self.model.name(),
                self.task.name()
            ));
        }
        if self.task == Task::Pde {
            self.pde.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.task == Task::Timeseries {
            self.ts.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Learning rate, with the per-task default.
    pub fn lr(&self) -> f64 {
        self.optim.lr.unwrap_or(match self.task {
            Task::Fit2d | Task::Pde => 1e-2,
            Task::Timeseries | Task::Mnist => 1e-3,
        })
    }

    /// Mini-batch size, with the per-task default for epoch budgets.
    pub fn batch_size(&self) -> Option<usize> {
        match (self.budget.batch_size, self.budget.epochs) {
            (Some(b), _) => Some(b),
            (None, Some(_)) => Some(match self.task {
                Task::Timeseries => 128,
                Task::Mnist => 64,
                Task::Fit2d | Task::Pde => usize::MAX,
            }),
            (None, None) => None,
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }
}
