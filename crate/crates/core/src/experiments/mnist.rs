//! Digit classification with one stencil autoencoder per digit: an image is
//! assigned to the autoencoder that reconstructs it best.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{task_seed, train_config, train_defaults, Artifact, ClassificationReport, Confusion, Experiment, Outcome, RunResult};
use crate::config::Params;
use crate::data::{filter_by_label, load_mnist_idx, SampleSet};
use crate::error::{Error, Result};
use crate::link::line_inits;
use crate::network::{build_stencil, load_checkpoint, save_checkpoint, LinkConfig, Network, Trace};
use crate::train::{loss, History, Trainer};

/// Reconstruction targets are pixels scaled onto `[0, 1]`.
pub const PIXEL_SCALE: f64 = 1.0 / 255.0;

const N_DIGITS: usize = 10;
const SIDE: usize = 28;

/// Shared topology of the ten autoencoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AutoencoderArch {
    pub n_points: usize,
    pub n_sublinks: usize,
    /// Stencil radius.
    pub width: usize,
    /// Grid layers including the input and output layers.
    pub layers: usize,
}

impl AutoencoderArch {
    pub fn n_hidden(&self) -> usize {
        self.layers.saturating_sub(2)
    }

    /// A fresh untrained autoencoder: raw pixels in, `[0, 1]` out.
    pub fn build(&self) -> Result<Network> {
        if self.layers < 2 {
            return Err(Error::config("an autoencoder needs at least 2 layers"));
        }
        let link = LinkConfig::new(self.n_points, self.n_sublinks);
        let mut net = build_stencil(SIDE, SIDE, self.n_hidden(), self.width, &link)?;
        let n = SIDE * SIDE;
        net.attach_io_links(&vec![(0.0, 255.0); n], &vec![(0.0, 1.0); n])?;
        Ok(net)
    }
}

/// Loss between the network output and the image on the output scale.
pub fn reconstruction_error(net: &Network, image: &[f64]) -> Result<f64> {
    let mut trace = Trace::default();
    error_with(net, image, &mut trace, &mut Vec::new())
}

fn error_with(net: &Network, image: &[f64], trace: &mut Trace, target: &mut Vec<f64>) -> Result<f64> {
    if image.len() != net.n_inputs() || image.len() != net.n_outputs() {
        return Err(Error::Shape {
            expected: net.n_inputs(),
            got: image.len(),
        });
    }
    net.forward_into(image, None, trace)?;
    target.clear();
    target.extend(image.iter().map(|p| p * PIXEL_SCALE));
    loss(trace.outputs(), target)
}

/// Reconstruction error of `net` on every sample of `set`.
fn errors_on(net: &Network, set: &SampleSet) -> Result<Vec<f64>> {
    let mut trace = Trace::default();
    let mut target = Vec::new();
    (0..set.len())
        .map(|i| error_with(net, set.input(i), &mut trace, &mut target))
        .collect()
}

/// Index of the smallest error; the lowest digit wins ties.
pub fn classify(errors: &[f64]) -> usize {
    let mut best = 0;
    for (d, &e) in errors.iter().enumerate() {
        if e < errors[best] {
            best = d;
        }
    }
    best
}

/// Confusion from a `[digit][sample]` error matrix.
fn confusion_from(errors: &[Vec<f64>], labels: &[u8]) -> Confusion {
    let mut c = Confusion::new(N_DIGITS);
    let mut column = vec![0.0; errors.len()];
    for (i, &l) in labels.iter().enumerate() {
        for (d, e) in errors.iter().enumerate() {
            column[d] = e[i];
        }
        c.add(l as usize, classify(&column));
    }
    c
}

/// Ten autoencoders, autoencoder `d` trained on digit `d` only.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderEnsemble {
    pub arch: AutoencoderArch,
    pub nets: Vec<Network>,
}

impl AutoencoderEnsemble {
    pub fn untrained(arch: AutoencoderArch, init: &str, seed: u64) -> Result<Self> {
        let rule = line_inits().create(init, &Params::new())?;
        let nets = (0..N_DIGITS)
            .map(|d| {
                let mut net = arch.build()?;
                net.init_lines(rule.as_ref(), &mut ChaCha8Rng::seed_from_u64(task_seed(seed, d as u64)));
                Ok(net)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AutoencoderEnsemble { arch, nets })
    }

    /// Reconstruction error of each autoencoder on `image`.
    pub fn errors(&self, image: &[f64]) -> Result<Vec<f64>> {
        self.nets.iter().map(|n| reconstruction_error(n, image)).collect()
    }

    pub fn classify(&self, image: &[f64]) -> Result<usize> {
        Ok(classify(&self.errors(image)?))
    }

    /// `[digit][sample]` reconstruction errors over `set`.
    pub fn error_matrix(&self, set: &SampleSet) -> Result<Vec<Vec<f64>>> {
        self.nets.par_iter().map(|n| errors_on(n, set)).collect()
    }

    pub fn evaluate(&self, set: &SampleSet) -> Result<Confusion> {
        let labels = labels_of(set)?;
        Ok(confusion_from(&self.error_matrix(set)?, labels))
    }

    /// Writes `digit_<d>.ckpt` for every autoencoder into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (d, net) in self.nets.iter().enumerate() {
            save_checkpoint(net, dir.join(format!("digit_{d}.ckpt")))?;
        }
        Ok(())
    }

    pub fn load(arch: AutoencoderArch, dir: &Path) -> Result<Self> {
        let nets = (0..N_DIGITS)
            .map(|d| load_checkpoint(dir.join(format!("digit_{d}.ckpt"))))
            .collect::<Result<Vec<_>>>()?;
        let expected = arch.build()?;
        for net in &nets {
            if net.layer_sizes() != expected.layer_sizes() || net.n_weights() != expected.n_weights() {
                return Err(Error::Checkpoint(format!(
                    "{} holds a network that does not match the configured architecture",
                    dir.display()
                )));
            }
        }
        Ok(AutoencoderEnsemble { arch, nets })
    }
}

fn labels_of(set: &SampleSet) -> Result<&[u8]> {
    set.labels()
        .ok_or_else(|| Error::config("classification needs labelled samples"))
}

/// `n` samples of `set` drawn without replacement by a seeded shuffle, or
/// the whole set when `n` is 0 or at least its size.
pub fn seeded_subset(set: &SampleSet, n: usize, seed: u64) -> SampleSet {
    if n == 0 || n >= set.len() {
        return set.clone();
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    set.subset(&idx)
}

/// Reads the four standard IDX files from `dir`; returns `(train, test)`.
pub fn load_mnist_dir(dir: &Path) -> Result<(SampleSet, SampleSet)> {
    let train = load_mnist_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let test = load_mnist_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistConfig {
    pub arch: AutoencoderArch,
    /// Presentations per autoencoder.
    pub steps: usize,
    pub seed: u64,
    /// Size of the seeded training subset used for the final training
    /// error; 0 evaluates the whole training set.
    pub train_eval: usize,
    /// Size of the seeded training subset scored at each checkpoint.
    pub probe: usize,
    /// Training keys passed through to the trainer.
    pub params: Params,
}

impl MnistConfig {
    pub fn new(n_points: usize, n_sublinks: usize, width: usize, steps: usize) -> Self {
        MnistConfig {
            arch: AutoencoderArch {
                n_points,
                n_sublinks,
                width,
                layers: 5,
            },
            steps,
            seed: 0,
            train_eval: 10_000,
            probe: 2000,
            params: train_defaults(true),
        }
    }

    pub fn from_params(p: &Params) -> Result<Self> {
        Ok(MnistConfig {
            arch: AutoencoderArch {
                n_points: p.get_or("n_points", 3)?,
                n_sublinks: p.get_or("sublinks", 2)?,
                width: p.get_or("width", 4)?,
                layers: p.get_or("layers", 5)?,
            },
            steps: p.get_or("steps", 20_000)?,
            seed: p.get_or("seed", 0)?,
            train_eval: p.get_or("train_eval", 10_000)?,
            probe: p.get_or("probe", 2000)?,
            params: p.clone(),
        })
    }

    /// Presentation counts at which the probe subset is scored.
    pub fn checkpoints(&self) -> Vec<usize> {
        let s = self.steps;
        let mut c = vec![0, s / 8, s / 4, s / 2, s];
        c.dedup();
        c
    }
}

/// Training error on the probe subset after `step` presentations per
/// autoencoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointRow {
    pub step: usize,
    pub training_error_pct: f64,
}

/// A trained ensemble with its learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEnsemble {
    pub ensemble: AutoencoderEnsemble,
    pub checkpoints: Vec<CheckpointRow>,
    /// Training history of each autoencoder.
    pub histories: Vec<History>,
}

/// Trains the ten autoencoders concurrently, each on its own digit, and
/// scores `probe` at every checkpoint.
pub fn train_ensemble(train: &SampleSet, cfg: &MnistConfig, probe: &SampleSet) -> Result<TrainedEnsemble> {
    let init = cfg.params.string_or("init", "symmetric");
    let start = AutoencoderEnsemble::untrained(cfg.arch, &init, cfg.seed)?;
    let probe_labels = labels_of(probe)?;
    let marks = cfg.checkpoints();

    let per_digit = start
        .nets
        .into_par_iter()
        .enumerate()
        .map(|(d, mut net)| {
            let own = filter_by_label(train, d)?.into_autoencoder(PIXEL_SCALE);
            let mut scores = vec![errors_on(&net, probe)?];
            let mut history = History::default();
            if let Some(mut tc) = train_config(&cfg.params, cfg.steps)? {
                tc.seed = task_seed(cfg.seed, (N_DIGITS + d) as u64);
                let mut trainer = Trainer::new(tc)?;
                for w in marks.windows(2) {
                    trainer.run(&mut net, &own, w[1] - w[0])?;
                    scores.push(errors_on(&net, probe)?);
                }
                trainer.finish();
                history = trainer.into_history();
            }
            Ok((net, scores, history))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut nets = Vec::with_capacity(N_DIGITS);
    let mut scores = Vec::with_capacity(N_DIGITS);
    let mut histories = Vec::with_capacity(N_DIGITS);
    for (net, s, h) in per_digit {
        nets.push(net);
        scores.push(s);
        histories.push(h);
    }
    let n_marks = scores[0].len();
    let checkpoints = (0..n_marks)
        .map(|k| {
            let matrix: Vec<Vec<f64>> = scores.iter().map(|s| s[k].clone()).collect();
            CheckpointRow {
                step: marks[k],
                training_error_pct: confusion_from(&matrix, probe_labels).error_pct(),
            }
        })
        .collect();
    Ok(TrainedEnsemble {
        ensemble: AutoencoderEnsemble { arch: cfg.arch, nets },
        checkpoints,
        histories,
    })
}

/// Everything one MNIST run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub config: MnistConfig,
    pub report: ClassificationReport,
    pub checkpoints: Vec<CheckpointRow>,
    pub histories: Vec<History>,
    pub ensemble: AutoencoderEnsemble,
}

impl EnsembleRun {
    /// Columns of the published result tables.
    pub fn summary_csv(&self) -> String {
        let a = &self.config.arch;
        format!(
            "n_points,layers,sublinks,width,test_error_pct,training_error_pct,steps\n{},{},{},{},{:.2},{:.2},{}\n",
            a.n_points,
            a.layers,
            a.n_sublinks,
            a.width,
            self.report.test_error_pct,
            self.report.training_error_pct,
            self.config.steps
        )
    }

    pub fn checkpoints_csv(&self) -> String {
        let mut s = String::from("step,training_error_pct\n");
        for c in &self.checkpoints {
            let _ = writeln!(s, "{},{:.3}", c.step, c.training_error_pct);
        }
        s
    }

    pub fn histories_csv(&self) -> String {
        let mut s = String::from("digit,step,loss,out_of_range,mean_lr\n");
        for (d, h) in self.histories.iter().enumerate() {
            for line in h.to_csv().lines().skip(1) {
                let _ = writeln!(s, "{d},{line}");
            }
        }
        s
    }

    /// Whether the probe error never rose between checkpoints.
    pub fn training_error_monotone(&self) -> bool {
        self.checkpoints
            .windows(2)
            .all(|w| w[1].training_error_pct <= w[0].training_error_pct)
    }
}

/// Trains (or loads) the ensemble and scores it on `test` and on a seeded
/// subset of `train`.
pub fn run_mnist(
    train: &SampleSet,
    test: &SampleSet,
    cfg: &MnistConfig,
    load_from: Option<&Path>,
) -> Result<EnsembleRun> {
    let probe = seeded_subset(train, cfg.probe, task_seed(cfg.seed, 2 * N_DIGITS as u64));
    let trained = match load_from {
        Some(dir) => TrainedEnsemble {
            ensemble: AutoencoderEnsemble::load(cfg.arch, dir)?,
            checkpoints: Vec::new(),
            histories: Vec::new(),
        },
        None => train_ensemble(train, cfg, &probe)?,
    };
    let eval = seeded_subset(train, cfg.train_eval, task_seed(cfg.seed, 2 * N_DIGITS as u64 + 1));
    let run = RunResult {
        test: trained.ensemble.evaluate(test)?,
        training: trained.ensemble.evaluate(&eval)?,
    };
    Ok(EnsembleRun {
        config: cfg.clone(),
        report: ClassificationReport::from_runs(vec![run])?,
        checkpoints: trained.checkpoints,
        histories: trained.histories,
        ensemble: trained.ensemble,
    })
}

pub(super) struct Mnist;

impl Experiment for Mnist {
    fn name(&self) -> &'static str {
        "mnist"
    }

    fn about(&self) -> &'static str {
        "digit classification by an ensemble of ten stencil autoencoders"
    }

    fn defaults(&self) -> Params {
        let mut p = train_defaults(true);
        p.set("n_points", 3)
            .set("sublinks", 2)
            .set("width", 4)
            .set("layers", 5)
            .set("steps", 20_000)
            .set("train_eval", 10_000)
            .set("probe", 2000)
            .set("mnist_dir", "data/mnist")
            .set("save_checkpoints", "")
            .set("load_checkpoints", "");
        p
    }

    fn run(&self, p: &Params) -> Result<Outcome> {
        let cfg = MnistConfig::from_params(p)?;
        let (train, test) = load_mnist_dir(&PathBuf::from(p.string_or("mnist_dir", "data/mnist")))?;
        let load = p.string_or("load_checkpoints", "");
        let run = run_mnist(&train, &test, &cfg, (!load.is_empty()).then(|| Path::new(&load)))?;
        let save = p.string_or("save_checkpoints", "");
        if !save.is_empty() {
            run.ensemble.save(Path::new(&save))?;
        }
        let a = cfg.arch;
        let mut summary = format!(
            "n_points {} sublinks {} width {} layers {}, {} presentations per autoencoder\n",
            a.n_points, a.n_sublinks, a.width, a.layers, cfg.steps
        );
        for c in &run.checkpoints {
            let _ = writeln!(summary, "step {:>8}: probe training error {:.2}%", c.step, c.training_error_pct);
        }
        let _ = writeln!(
            summary,
            "test error {:.2}%  training error {:.2}%",
            run.report.test_error_pct, run.report.training_error_pct
        );
        let mut artifacts = vec![
            Artifact::new("mnist_summary.csv", run.summary_csv()),
            Artifact::new("mnist_confusion.csv", run.report.confusion.to_csv()),
        ];
        if !run.checkpoints.is_empty() {
            artifacts.push(Artifact::new("mnist_checkpoints.csv", run.checkpoints_csv()));
            artifacts.push(Artifact::new("mnist_history.csv", run.histories_csv()));
        }
        Ok(Outcome {
            summary,
            artifacts,
            passed: true,
        })
    }
}
