//! Two-class diabetes prediction on a fully connected `8 x hidden x 2` net,
//! averaged over fixed random train/test splits.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{task_seed, train_config, train_defaults, Artifact, ClassificationReport, Confusion, Experiment, Outcome, RunResult};
use crate::config::Params;
use crate::data::{load_pima_csv, split, SampleSet};
use crate::error::{Error, Result};
use crate::link::line_inits;
use crate::network::{build_fully_connected, LinkConfig, Network};
use crate::train::Trainer;

#[derive(Debug, Clone, PartialEq)]
pub struct PimaConfig {
    pub n_points: usize,
    pub n_sublinks: usize,
    pub hidden: usize,
    pub steps: usize,
    pub runs: usize,
    pub test_fraction: f64,
    /// Output-link range shared by both outputs; the one-hot targets 0 and
    /// 1 sit inside it.
    pub output_range: (f64, f64),
    /// Seeds the splits; run `i` uses `split_seed + i`, so every
    /// configuration sees the same splits.
    pub split_seed: u64,
    /// Seeds initialization, sampling and dropout.
    pub seed: u64,
    /// Training keys passed through to the trainer.
    pub params: Params,
}

impl PimaConfig {
    pub fn new(n_points: usize, n_sublinks: usize, dropout: bool) -> Self {
        PimaConfig {
            n_points,
            n_sublinks,
            hidden: 16,
            steps: 200_000,
            runs: 10,
            test_fraction: 0.2,
            output_range: (-1.0, 2.0),
            split_seed: 0,
            seed: 0,
            params: train_defaults(dropout),
        }
    }

    pub fn from_params(p: &Params) -> Result<Self> {
        Ok(PimaConfig {
            n_points: p.get_or("n_points", 4)?,
            n_sublinks: p.get_or("sublinks", 1)?,
            hidden: p.get_or("hidden", 16)?,
            steps: p.get_or("steps", 200_000)?,
            runs: p.get_or("runs", 10)?,
            test_fraction: p.get_or("test_fraction", 0.2)?,
            output_range: match p.list_or("output_range", &[-1.0, 2.0])?[..] {
                [lo, hi] if lo < hi => (lo, hi),
                _ => return Err(Error::config("output_range needs two increasing values `lo,hi`")),
            },
            split_seed: p.get_or("split_seed", 0)?,
            seed: p.get_or("seed", 0)?,
            params: p.clone(),
        })
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Confusion of argmax predictions against the labels of `set`.
pub fn evaluate_argmax(net: &Network, set: &SampleSet) -> Result<Confusion> {
    let labels = set
        .labels()
        .ok_or_else(|| Error::config("classification needs labelled samples"))?;
    let mut c = Confusion::new(set.n_outputs());
    for (i, &l) in labels.iter().enumerate() {
        c.add(l as usize, argmax(&net.predict(set.input(i))?));
    }
    Ok(c)
}

fn one_run(data: &SampleSet, cfg: &PimaConfig, run: usize) -> Result<RunResult> {
    let (train, test) = split(data, cfg.test_fraction, cfg.split_seed + run as u64)?;
    let link = LinkConfig::new(cfg.n_points, cfg.n_sublinks);
    let mut net = build_fully_connected(&[data.n_features(), cfg.hidden, data.n_outputs()], &link)?;
    net.attach_io_links(data.feature_ranges(), &vec![cfg.output_range; data.n_outputs()])?;
    let seed = task_seed(cfg.seed, run as u64);
    let init = line_inits().create(&cfg.params.string_or("init", "symmetric"), &cfg.params)?;
    net.init_lines(init.as_ref(), &mut ChaCha8Rng::seed_from_u64(seed));
    if let Some(mut tc) = train_config(&cfg.params, cfg.steps)? {
        tc.seed = seed;
        let mut trainer = Trainer::new(tc)?;
        trainer.run(&mut net, &train, cfg.steps)?;
    }
    Ok(RunResult {
        test: evaluate_argmax(&net, &test)?,
        training: evaluate_argmax(&net, &train)?,
    })
}

/// Trains one network per split; runs execute in parallel and are
/// reported in run order.
pub fn run_pima(data: &SampleSet, cfg: &PimaConfig) -> Result<ClassificationReport> {
    if cfg.runs == 0 {
        return Err(Error::config("runs must be at least 1"));
    }
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|run| one_run(data, cfg, run))
        .collect::<Result<Vec<_>>>()?;
    ClassificationReport::from_runs(runs)
}

pub(super) struct Pima;

impl Experiment for Pima {
    fn name(&self) -> &'static str {
        "pima"
    }

    fn about(&self) -> &'static str {
        "diabetes classification averaged over fixed train/test splits"
    }

    fn defaults(&self) -> Params {
        let mut p = train_defaults(true);
        p.set("n_points", 4)
            .set("sublinks", 1)
            .set("hidden", 16)
            .set("steps", 200_000)
            .set("runs", 10)
            .set("test_fraction", 0.2)
            .set("output_range", "-1,2")
            .set("split_seed", 0)
            .set("data", "data/pima-indians-diabetes.csv");
        p
    }

    fn run(&self, p: &Params) -> Result<Outcome> {
        let cfg = PimaConfig::from_params(p)?;
        let data = load_pima_csv(PathBuf::from(p.string_or("data", "data/pima-indians-diabetes.csv")))?;
        let r = run_pima(&data, &cfg)?;
        let dropout = if cfg.params.flag_or("dropout", false)? { "on" } else { "off" };
        let table = format!(
            "n_points,sublinks,dropout,test_error_pct,training_error_pct,steps\n{},{},{},{:.2},{:.2},{}\n",
            cfg.n_points, cfg.n_sublinks, dropout, r.test_error_pct, r.training_error_pct, cfg.steps
        );
        let mut summary = format!(
            "n_points {} sublinks {} dropout {dropout}, {} runs of {} steps\n",
            cfg.n_points, cfg.n_sublinks, cfg.runs, cfg.steps
        );
        let _ = writeln!(
            summary,
            "test error {:.2}%  training error {:.2}%",
            r.test_error_pct, r.training_error_pct
        );
        Ok(Outcome {
            summary,
            artifacts: vec![
                Artifact::new("pima_summary.csv", table),
                Artifact::new("pima_runs.csv", r.runs_csv()),
                Artifact::new("pima_confusion.csv", r.confusion.to_csv()),
            ],
            passed: true,
        })
    }
}
