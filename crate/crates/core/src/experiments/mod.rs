//! End-to-end experiments and the reports they produce.
//!
//! Every experiment is a named [`Experiment`] in the [`experiments`]
//! registry. It declares its configuration keys with defaults, runs from a
//! resolved [`Params`], and returns text artifacts for the caller to write.

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Params;
use crate::error::{Error, Result};
use crate::registry::Registry;

mod checks;
pub mod mnist;
pub mod pima;
pub mod sine;
pub mod timing;

pub use checks::{overshoot_rows, run_gradcheck, GradCheckRow, GradCheckSummary, OvershootRow, REFERENCE_OVERSHOOT};
pub use mnist::{
    classify, load_mnist_dir, reconstruction_error, run_mnist, seeded_subset, train_ensemble, AutoencoderArch,
    AutoencoderEnsemble, CheckpointRow, EnsembleRun, MnistConfig, TrainedEnsemble, PIXEL_SCALE,
};
pub use pima::{argmax, evaluate_argmax, run_pima, PimaConfig};
pub use sine::{run_sine, SineConfig, SineReport};
pub use timing::{run_timing, TimingConfig, TimingReport, TimingRow, REFERENCE_RATIOS};

/// Independent seed for task `index` of a run seeded with `seed`.
pub fn task_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 2);
    rng.next_u64()
}

/// Class counts, rows indexed by true class and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    n_classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(n_classes: usize) -> Self {
        Confusion {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n_classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes).map(|c| self.get(c, c)).sum()
    }

    /// Percentage misclassified; 0 for an empty matrix.
    pub fn error_pct(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        100.0 * (total - self.correct()) as f64 / total as f64
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth");
        for p in 0..self.n_classes {
            let _ = write!(s, ",pred_{p}");
        }
        s.push('\n');
        for t in 0..self.n_classes {
            let _ = write!(s, "{t}");
            for p in 0..self.n_classes {
                let _ = write!(s, ",{}", self.get(t, p));
            }
            s.push('\n');
        }
        s
    }
}

/// Errors of one train/test run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub test: Confusion,
    pub training: Confusion,
}

impl RunResult {
    pub fn test_error_pct(&self) -> f64 {
        self.test.error_pct()
    }

    pub fn training_error_pct(&self) -> f64 {
        self.training.error_pct()
    }
}

/// Per-run errors and their means; `confusion` sums the test matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub runs: Vec<RunResult>,
    pub test_error_pct: f64,
    pub training_error_pct: f64,
    pub confusion: Confusion,
}

impl ClassificationReport {
    pub fn from_runs(runs: Vec<RunResult>) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::config("a report needs at least one run"))?;
        let mut confusion = Confusion::new(first.test.n_classes());
        for r in &runs {
            confusion.merge(&r.test);
        }
        let n = runs.len() as f64;
        Ok(ClassificationReport {
            test_error_pct: runs.iter().map(RunResult::test_error_pct).sum::<f64>() / n,
            training_error_pct: runs.iter().map(RunResult::training_error_pct).sum::<f64>() / n,
            runs,
            confusion,
        })
    }

    /// One row per run followed by a `mean` row.
    pub fn runs_csv(&self) -> String {
        let mut s = String::from("run,test_error_pct,training_error_pct,test_samples,training_samples\n");
        for (i, r) in self.runs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{:.3},{:.3},{},{}",
                r.test_error_pct(),
                r.training_error_pct(),
                r.test.total(),
                r.training.total()
            );
        }
        let _ = writeln!(s, "mean,{:.3},{:.3},,", self.test_error_pct, self.training_error_pct);
        s
    }
}

/// A named output of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        Artifact {
            name: name.into(),
            contents: contents.into(),
        }
    }
}

/// Result of running an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Human-readable lines for the terminal.
    pub summary: String,
    pub artifacts: Vec<Artifact>,
    /// Whether the experiment's own pass criterion held.
    pub passed: bool,
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    /// Every key the experiment reads, with its default value.
    fn defaults(&self) -> Params;
    /// Runs with `params`, which must already contain the defaults.
    fn run(&self, params: &Params) -> Result<Outcome>;

    /// Defaults overlaid with `overrides`, rejecting unknown keys.
    fn resolve(&self, overrides: &Params) -> Result<Params> {
        let mut p = self.defaults();
        let allowed: Vec<String> = p.keys().map(str::to_owned).collect();
        let allowed: Vec<&str> = allowed.iter().map(String::as_str).collect();
        overrides.check_keys(&allowed)?;
        p.merge(overrides);
        Ok(p)
    }
}

pub fn experiments() -> Registry<dyn Experiment> {
    let mut r: Registry<dyn Experiment> = Registry::new("experiment");
    r.register("overshoot", |_| Ok(Box::new(checks::Overshoot)))
        .register("gradcheck", |_| Ok(Box::new(checks::GradCheck)))
        .register("sine", |_| Ok(Box::new(sine::Sine)))
        .register("pima", |_| Ok(Box::new(pima::Pima)))
        .register("mnist", |_| Ok(Box::new(mnist::Mnist)))
        .register("timing", |_| Ok(Box::new(timing::Timing)));
    r
}

/// Training keys shared by the experiments that train networks.
pub(crate) fn train_defaults(dropout: bool) -> Params {
    Params::new()
        .with("backprop", "accelerated")
        .with("optimizer", "adaptive")
        .with("curvature", "gauss-newton")
        .with("lr_cap", 0.9)
        .with("lr_floor", 1e-8)
        .with("warmup", 10)
        .with("secant_eps", 1e-8)
        .with("lr", 0.1)
        .with("momentum", 0.0)
        .with("dropout", if dropout { "on" } else { "off" })
        .with("dropout_rate", 0.5)
        .with("dropout_refresh", 10)
        .with("log_interval", 1000)
        .with("init", "symmetric")
        .with("seed", 0)
}

/// Training protocol from `p` with `steps` presentations. Zero steps yields
/// `None`: the caller skips training.
pub(crate) fn train_config(p: &Params, steps: usize) -> Result<Option<crate::train::TrainConfig>> {
    if steps == 0 {
        return Ok(None);
    }
    crate::train::TrainConfig::from_params(&p.clone().with("steps", steps)).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_counts() {
        let mut c = Confusion::new(3);
        for (t, p) in [(0, 0), (0, 1), (1, 1), (2, 2), (2, 0)] {
            c.add(t, p);
        }
        assert_eq!(c.total(), 5);
        assert_eq!(c.correct(), 3);
        assert_eq!((c.row_total(0), c.row_total(1), c.row_total(2)), (2, 1, 2));
        assert!((c.error_pct() - 40.0).abs() < 1e-12);
        assert_eq!(Confusion::new(2).error_pct(), 0.0);
        assert!(c.to_csv().starts_with("truth,pred_0,pred_1,pred_2\n0,1,1,0\n"));
    }

    #[test]
    fn report_means() {
        let run = |wrong: usize| {
            let mut test = Confusion::new(2);
            for i in 0..10 {
                test.add(0, usize::from(i < wrong));
            }
            RunResult {
                test,
                training: Confusion::new(2),
            }
        };
        let r = ClassificationReport::from_runs(vec![run(1), run(3)]).unwrap();
        assert!((r.test_error_pct - 20.0).abs() < 1e-12);
        assert_eq!(r.confusion.total(), 20);
        assert_eq!(r.confusion.get(0, 1), 4);
        assert!(r.runs_csv().ends_with("mean,20.000,0.000,,\n"));
        assert!(ClassificationReport::from_runs(Vec::new()).is_err());
    }

    #[test]
    fn task_seeds_are_stable_and_distinct() {
        assert_eq!(task_seed(7, 3), task_seed(7, 3));
        let seeds: std::collections::BTreeSet<u64> = (0..10).map(|i| task_seed(7, i)).collect();
        assert_eq!(seeds.len(), 10);
        assert_ne!(task_seed(7, 0), task_seed(8, 0));
    }

    #[test]
    fn registry_lists_every_experiment() {
        let names: Vec<_> = experiments().names().collect();
        assert_eq!(names, ["overshoot", "gradcheck", "sine", "pima", "mnist", "timing"]);
    }

    #[test]
    fn resolve_rejects_unknown_keys() {
        let e = experiments().create("sine", &Params::new()).unwrap();
        let p = e.resolve(&Params::new().with("steps", 5)).unwrap();
        assert_eq!(p.get("steps"), Some("5"));
        assert!(p.contains("n_points"));
        let err = e.resolve(&Params::new().with("stpes", 5)).unwrap_err().to_string();
        assert!(err.contains("stpes") && err.contains("steps"), "{err}");
    }
}
