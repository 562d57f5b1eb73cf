//! Wall-clock cost of training presentations as the interpolation order
//! grows.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mnist::{load_mnist_dir, AutoencoderArch, PIXEL_SCALE};
use super::{task_seed, train_config, train_defaults, Artifact, Experiment, Outcome};
use crate::config::Params;
use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::link::line_inits;
use crate::train::Trainer;

/// Published slowdown relative to two points, for 2..=6 points at two
/// sub-links.
pub const REFERENCE_RATIOS: [f64; 5] = [1.0, 1.2, 1.5, 1.8, 2.2];

#[derive(Debug, Clone, PartialEq)]
pub struct TimingConfig {
    pub points: Vec<usize>,
    pub n_sublinks: usize,
    pub width: usize,
    pub layers: usize,
    /// Presentations per timed run.
    pub presentations: usize,
    /// Timed runs averaged per configuration.
    pub repeats: usize,
    pub seed: u64,
    /// Training keys passed through to the trainer.
    pub params: Params,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            points: vec![2, 3, 4, 5, 6],
            n_sublinks: 2,
            width: 6,
            layers: 5,
            presentations: 1000,
            repeats: 10,
            seed: 0,
            params: train_defaults(true),
        }
    }
}

impl TimingConfig {
    pub fn from_params(p: &Params) -> Result<Self> {
        let d = TimingConfig::default();
        Ok(TimingConfig {
            points: p.list_or("points", &d.points)?,
            n_sublinks: p.get_or("sublinks", d.n_sublinks)?,
            width: p.get_or("width", d.width)?,
            layers: p.get_or("layers", d.layers)?,
            presentations: p.get_or("presentations", d.presentations)?,
            repeats: p.get_or("repeats", d.repeats)?,
            seed: p.get_or("seed", d.seed)?,
            params: p.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    pub n_points: usize,
    pub n_sublinks: usize,
    /// Mean seconds per `presentations` presentations.
    pub seconds: f64,
    /// `seconds` over the first row's.
    pub ratio: f64,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub presentations: usize,
    pub repeats: usize,
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    pub fn is_nondecreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].seconds >= w[0].seconds)
    }

    /// Ratio of the last row to the first.
    pub fn span_ratio(&self) -> Option<f64> {
        self.rows.last().map(|r| r.ratio)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_points,sublinks,seconds,ratio,reference_ratio\n");
        for r in &self.rows {
            let reference = r.reference.map(|v| format!("{v:.1}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.3},{}",
                r.n_points, r.n_sublinks, r.seconds, r.ratio, reference
            );
        }
        s
    }
}

fn reference_ratio(n_points: usize, n_sublinks: usize) -> Option<f64> {
    if n_sublinks != 2 {
        return None;
    }
    n_points.checked_sub(2).and_then(|i| REFERENCE_RATIOS.get(i)).copied()
}

/// Times the full training loop on `images` (autoencoder targets) for each
/// order in `cfg.points`.
pub fn run_timing(images: &SampleSet, cfg: &TimingConfig) -> Result<TimingReport> {
    if cfg.points.is_empty() || cfg.repeats == 0 || cfg.presentations == 0 {
        return Err(Error::config("timing needs points, repeats and presentations"));
    }
    let data = images.clone().into_autoencoder(PIXEL_SCALE);
    let init = line_inits().create(&cfg.params.string_or("init", "symmetric"), &cfg.params)?;
    let mut seconds = Vec::with_capacity(cfg.points.len());
    for (k, &np) in cfg.points.iter().enumerate() {
        let arch = AutoencoderArch {
            n_points: np,
            n_sublinks: cfg.n_sublinks,
            width: cfg.width,
            layers: cfg.layers,
        };
        let mut net = arch.build()?;
        let seed = task_seed(cfg.seed, k as u64);
        net.init_lines(init.as_ref(), &mut ChaCha8Rng::seed_from_u64(seed));
        let mut tc = train_config(&cfg.params, cfg.presentations * cfg.repeats)?
            .ok_or_else(|| Error::config("timing needs presentations"))?;
        tc.seed = seed;
        let mut trainer = Trainer::new(tc)?;
        let mut total = 0.0;
        for _ in 0..cfg.repeats {
            let start = Instant::now();
            trainer.run(&mut net, &data, cfg.presentations)?;
            total += start.elapsed().as_secs_f64();
        }
        seconds.push(total / cfg.repeats as f64);
    }
    let base = seconds[0];
    let rows = cfg
        .points
        .iter()
        .zip(&seconds)
        .map(|(&np, &s)| TimingRow {
            n_points: np,
            n_sublinks: cfg.n_sublinks,
            seconds: s,
            ratio: s / base,
            reference: reference_ratio(np, cfg.n_sublinks),
        })
        .collect();
    Ok(TimingReport {
        presentations: cfg.presentations,
        repeats: cfg.repeats,
        rows,
    })
}

pub(super) struct Timing;

impl Experiment for Timing {
    fn name(&self) -> &'static str {
        "timing"
    }

    fn about(&self) -> &'static str {
        "training-loop time per order, relative to two points"
    }

    fn defaults(&self) -> Params {
        let mut p = train_defaults(true);
        p.set("points", "2,3,4,5,6")
            .set("sublinks", 2)
            .set("width", 6)
            .set("layers", 5)
            .set("presentations", 1000)
            .set("repeats", 10)
            .set("mnist_dir", "data/mnist");
        p
    }

    fn run(&self, p: &Params) -> Result<Outcome> {
        let cfg = TimingConfig::from_params(p)?;
        let (train, _) = load_mnist_dir(&PathBuf::from(p.string_or("mnist_dir", "data/mnist")))?;
        let r = run_timing(&train, &cfg)?;
        let mut summary = format!(
            "{} presentations, mean of {} runs\nn_points  seconds  ratio  reference\n",
            r.presentations, r.repeats
        );
        for row in &r.rows {
            let reference = row.reference.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                summary,
                "{:>8}  {:>7.3}  {:>5.2}  {:>9}",
                row.n_points, row.seconds, row.ratio, reference
            );
        }
        if !r.is_nondecreasing() {
            summary.push_str("time is not nondecreasing in the number of points\n");
        }
        Ok(Outcome {
            summary,
            artifacts: vec![Artifact::new("timing.csv", r.to_csv())],
            passed: r.is_nondecreasing(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank_images(n: usize) -> SampleSet {
        let px = 28 * 28;
        let inputs: Vec<f64> = (0..n * px).map(|i| (i % 251) as f64).collect();
        SampleSet::new(px, inputs.clone(), px, inputs, None, vec![(0.0, 255.0); px]).unwrap()
    }

    #[test]
    fn baseline_ratio_is_one_and_references_line_up() {
        let cfg = TimingConfig {
            points: vec![2, 4],
            width: 1,
            layers: 3,
            presentations: 5,
            repeats: 2,
            ..TimingConfig::default()
        };
        let r = run_timing(&blank_images(4), &cfg).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0].ratio, 1.0);
        assert!(r.rows.iter().all(|row| row.seconds > 0.0));
        assert_eq!(r.rows[1].reference, Some(1.5));
        assert!(r.to_csv().starts_with("n_points,sublinks,seconds,ratio,reference_ratio\n2,2,"));
    }

    #[test]
    fn references_exist_only_for_two_sublinks() {
        assert_eq!(reference_ratio(6, 2), Some(2.2));
        assert_eq!(reference_ratio(7, 2), None);
        assert_eq!(reference_ratio(3, 1), None);
    }
}
