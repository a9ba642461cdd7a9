//! Synthetic multi-signal forecasting data.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::engine::Tensor;
use crate::error::{invalid, Result};

/// Lags appearing in the target, in time units.
pub const DELAYS: [f64; 3] = [0.1, 0.2, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsConfig {
    pub a: [f64; 4],
    pub b: [f64; 4],
    pub n_samples: usize,
    pub split: f64,
    pub t_range: (f64, f64),
    /// Lagged steps per input window.
    pub window: usize,
    /// Spacing between window steps.
    pub dt: f64,
}

impl Default for TsConfig {
    fn default() -> Self {
        TsConfig {
            a: [1.0, 0.8, 1.2, 0.6],
            b: [0.5, -0.3, 0.2, 0.9],
            n_samples: 10_000,
            split: 0.8,
            t_range: (0.5, 100.0),
            window: 10,
            dt: 0.1,
        }
    }
}

impl TsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 || self.window == 0 || !(self.split > 0.0 && self.split < 1.0) {
            return Err(invalid("time series needs ≥ 2 samples, a window ≥ 1 and 0 < split < 1"));
        }
        if !(self.dt > 0.0) || !(self.t_range.0 < self.t_range.1) {
            return Err(invalid("time series needs dt > 0 and an increasing t range"));
        }
        for delay in DELAYS {
            let steps = delay / self.dt;
            if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
                return Err(invalid(format!("delay {delay} is not a multiple of dt = {}", self.dt)));
            }
        }
        Ok(())
    }

    pub fn signal(&self, i: usize, t: f64) -> f64 {
        self.a[i] * t.sin() + self.b[i]
    }

    /// `y(t)` evaluated directly from the signals.
    pub fn target(&self, t: f64) -> f64 {
        let x = |i: usize, s: f64| self.signal(i - 1, s);
        x(3, t) * x(4, t - 0.1) - x(3, t - 0.5) * x(1, t - 0.1) + x(4, t) * x(3, t) - x(2, t - 0.5) * x(1, t - 0.2)
    }

    /// Sample times, evenly spaced over the range.
    pub fn times(&self) -> Vec<f64> {
        let (lo, hi) = self.t_range;
        let n = self.n_samples;
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    pub fn n_train(&self) -> usize {
        (self.split * self.n_samples as f64).round() as usize
    }
}

/// Windows `[N × window × 4]` of the signals at `t − (window−1)·dt, …, t`
/// (oldest first) with targets `[N × 1]`; the first 80 % of times train.
pub fn ts_generate(cfg: &TsConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let times = cfg.times();
    let w = cfg.window;
    let mut inputs = Vec::with_capacity(times.len() * w * 4);
    let mut targets = Vec::with_capacity(times.len());
    for &t in &times {
        for lag in (0..w).rev() {
            let s = t - lag as f64 * cfg.dt;
            for i in 0..4 {
                inputs.push(cfg.signal(i, s));
            }
        }
        targets.push(cfg.target(t));
    }
    let n = times.len();
    Dataset::split_at(Tensor::new([n, w, 4], inputs)?, Tensor::matrix(n, 1, targets)?, cfg.n_train(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_unit_signals_cancel() {
        let cfg = TsConfig {
            a: [0.0; 4],
            b: [1.0; 4],
            n_samples: 50,
            ..TsConfig::default()
        };
        let ds = ts_generate(&cfg, 0).unwrap();
        assert!(ds.targets.data().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn constant_signals_give_closed_form() {
        let b = [0.3, -1.1, 0.7, 2.0];
        let cfg = TsConfig {
            a: [0.0; 4],
            b,
            n_samples: 20,
            ..TsConfig::default()
        };
        let expected = 2.0 * b[2] * b[3] - b[2] * b[0] - b[1] * b[0];
        for &y in ts_generate(&cfg, 0).unwrap().targets.data() {
            assert!((y - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn first_targets_match_slow_evaluation() {
        let cfg = TsConfig::default();
        let ds = ts_generate(&cfg, 0).unwrap();
        let sig = |i: usize, t: f64| cfg.a[i - 1] * t.sin() + cfg.b[i - 1];
        for k in 0..5 {
            let t = 0.5 + 99.5 * k as f64 / 9999.0;
            let y =
                sig(3, t) * sig(4, t - 0.1) - sig(3, t - 0.5) * sig(1, t - 0.1) + sig(4, t) * sig(3, t) - sig(2, t - 0.5) * sig(1, t - 0.2);
            assert!((ds.targets.data()[k] - y).abs() < 1e-14);
        }
    }

    #[test]
    fn window_layout_and_split() {
        let cfg = TsConfig::default();
        let ds = ts_generate(&cfg, 0).unwrap();
        assert_eq!(ds.inputs.shape(), &[10_000, 10, 4]);
        assert_eq!((ds.train.len(), ds.test.len()), (8000, 2000));
        assert!(ds.train.iter().all(|&i| i < 8000));
        // last window step is the sample time itself
        let t = 0.5;
        assert_eq!(ds.inputs.get(&[0, 9, 2]), cfg.signal(2, t));
        assert_eq!(ds.inputs.get(&[0, 0, 0]), cfg.signal(0, t - 0.9));
        assert_eq!(ts_generate(&cfg, 0).unwrap(), ds);
    }

    #[test]
    fn zero_a3_removes_x3_dependence() {
        let mut cfg = TsConfig::default();
        cfg.a[2] = 0.0;
        let b3 = cfg.b[2];
        for &t in &[1.0, 7.3, 42.0] {
            let x = |i: usize, s: f64| cfg.signal(i - 1, s);
            let expected = b3 * x(4, t - 0.1) - b3 * x(1, t - 0.1) + x(4, t) * b3 - x(2, t - 0.5) * x(1, t - 0.2);
            assert!((cfg.target(t) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn off_grid_delay_rejected() {
        let cfg = TsConfig {
            dt: 0.15,
            ..TsConfig::default()
        };
        assert!(ts_generate(&cfg, 0).is_err());
        let cfg = TsConfig {
            dt: 0.05,
            ..TsConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }
}
