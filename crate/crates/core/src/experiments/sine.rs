//! One trainable link fitted to `sin x` on `[-pi, pi]`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{task_seed, train_config, train_defaults, Artifact, Experiment, Outcome};
use crate::config::Params;
use crate::data::gen_sine;
use crate::error::{Error, Result};
use crate::link::line_inits;
use crate::network::{build_fully_connected, LinkConfig, Network};
use crate::train::{History, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct SineConfig {
    pub n_points: usize,
    pub n_sublinks: usize,
    pub steps: usize,
    /// Size of the sampled training set.
    pub samples: usize,
    /// Evenly spaced evaluation points on `[-pi, pi]`, ends included.
    pub grid: usize,
    pub seed: u64,
    /// Training keys passed through to the trainer.
    pub params: Params,
}

impl SineConfig {
    pub fn new(n_points: usize, n_sublinks: usize, steps: usize) -> Self {
        SineConfig {
            n_points,
            n_sublinks,
            steps,
            samples: 10_000,
            grid: 1001,
            seed: 0,
            params: train_defaults(false),
        }
    }

    pub fn from_params(p: &Params) -> Result<Self> {
        Ok(SineConfig {
            n_points: p.get_or("n_points", 3)?,
            n_sublinks: p.get_or("sublinks", 3)?,
            steps: p.get_or("steps", 50_000)?,
            samples: p.get_or("samples", 10_000)?,
            grid: p.get_or("grid", 1001)?,
            seed: p.get_or("seed", 0)?,
            params: p.clone(),
        })
    }
}

/// Evenly spaced points on `[-pi, pi]`, ends included.
pub fn sine_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| -PI + 2.0 * PI * i as f64 / (n - 1) as f64).collect()
}

/// A single trainable link between an input link mapping `[-pi, pi]` onto
/// `[-1, 1]` and an identity output link. The trainable link's range is
/// `[-1, 1]` so its breakpoints split `[-pi, pi]` evenly.
pub fn sine_network(n_points: usize, n_sublinks: usize) -> Result<Network> {
    let link = LinkConfig {
        range: Some(1.0),
        ..LinkConfig::new(n_points, n_sublinks)
    };
    let mut net = build_fully_connected(&[1, 1], &link)?;
    net.attach_io_links(&[(-PI, PI)], &[(-1.0, 1.0)])?;
    Ok(net)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SineReport {
    pub n_points: usize,
    pub n_sublinks: usize,
    pub steps: usize,
    /// Mean squared error against `sin x` over the grid.
    pub mse: f64,
    /// `(x, predicted, sin x)` on the grid.
    pub curve: Vec<(f64, f64, f64)>,
    /// Size of the step in the fitted curve at each interior breakpoint.
    pub jumps: Vec<(f64, f64)>,
    pub history: History,
}

impl SineReport {
    pub fn dof(&self) -> usize {
        self.n_points * self.n_sublinks
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("x,predicted,target\n");
        for (x, y, t) in &self.curve {
            let _ = writeln!(s, "{x:.6},{y:.9},{t:.9}");
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "n_points,sublinks,dof,steps,mse\n{},{},{},{},{:.6e}\n",
            self.n_points,
            self.n_sublinks,
            self.dof(),
            self.steps,
            self.mse
        )
    }
}

pub fn run_sine(cfg: &SineConfig) -> Result<SineReport> {
    if cfg.grid < 2 {
        return Err(Error::config("sine grid needs at least 2 points"));
    }
    let mut net = sine_network(cfg.n_points, cfg.n_sublinks)?;
    let init = line_inits().create(&cfg.params.string_or("init", "symmetric"), &cfg.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(cfg.seed, 0));
    net.init_lines(init.as_ref(), &mut rng);
    let data = gen_sine(cfg.samples, &mut ChaCha8Rng::seed_from_u64(task_seed(cfg.seed, 1)))?;

    let mut history = History::default();
    if let Some(tc) = train_config(&cfg.params, cfg.steps)? {
        let mut trainer = Trainer::new(tc)?;
        trainer.run(&mut net, &data, cfg.steps)?;
        trainer.finish();
        history = trainer.into_history();
    }

    let curve = sine_grid(cfg.grid)
        .into_iter()
        .map(|x| Ok((x, net.predict(&[x])?[0], x.sin())))
        .collect::<Result<Vec<_>>>()?;
    let mse = curve.iter().map(|(_, y, t)| (y - t).powi(2)).sum::<f64>() / curve.len() as f64;

    let eps = 1e-9;
    let jumps = (1..cfg.n_sublinks)
        .map(|k| {
            let b = -PI + 2.0 * PI * k as f64 / cfg.n_sublinks as f64;
            let left = net.predict(&[b - eps])?[0];
            let right = net.predict(&[b + eps])?[0];
            Ok((b, (right - left).abs()))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SineReport {
        n_points: cfg.n_points,
        n_sublinks: cfg.n_sublinks,
        steps: cfg.steps,
        mse,
        curve,
        jumps,
        history,
    })
}

pub(super) struct Sine;

impl Experiment for Sine {
    fn name(&self) -> &'static str {
        "sine"
    }

    fn about(&self) -> &'static str {
        "fit sin(x) with a single piecewise link"
    }

    fn defaults(&self) -> Params {
        let mut p = train_defaults(false);
        p.set("n_points", 3)
            .set("sublinks", 3)
            .set("steps", 50_000)
            .set("samples", 10_000)
            .set("grid", 1001);
        p
    }

    fn run(&self, p: &Params) -> Result<Outcome> {
        let r = run_sine(&SineConfig::from_params(p)?)?;
        let mut summary = format!(
            "n_points {} sublinks {} ({} dof), {} steps: mse {:.4e}\n",
            r.n_points,
            r.n_sublinks,
            r.dof(),
            r.steps,
            r.mse
        );
        for (b, j) in &r.jumps {
            let _ = writeln!(summary, "jump at x = {b:+.4}: {j:.4e}");
        }
        Ok(Outcome {
            summary,
            artifacts: vec![
                Artifact::new("sine_summary.csv", r.summary_csv()),
                Artifact::new("sine_curve.csv", r.curve_csv()),
                Artifact::new("sine_history.csv", r.history.to_csv()),
            ],
            passed: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_keeps_the_initial_line() {
        let cfg = SineConfig {
            grid: 201,
            ..SineConfig::new(2, 3, 0)
        };
        let r = run_sine(&cfg).unwrap();
        assert!(r.history.rows.is_empty());
        // The initial fit is one straight line through the origin.
        let slope = r.curve[200].1 / PI;
        for (x, y, _) in &r.curve {
            assert!((y - slope * x).abs() < 1e-12, "{x} {y}");
        }
        assert!(r.jumps.iter().all(|&(_, j)| j < 1e-6));
        let expected = r.curve.iter().map(|(x, _, t)| (slope * x - t).powi(2)).sum::<f64>() / 201.0;
        assert!((r.mse - expected).abs() < 1e-12);
    }

    #[test]
    fn short_training_beats_the_initial_line() {
        let before = run_sine(&SineConfig::new(3, 3, 0)).unwrap().mse;
        let after = run_sine(&SineConfig::new(3, 3, 3000)).unwrap().mse;
        assert!(after < 0.2 * before, "{before} -> {after}");
    }

    #[test]
    fn linear_pieces_leave_visible_jumps() {
        let r = run_sine(&SineConfig::new(2, 3, 20_000)).unwrap();
        let spacing = 2.0 * PI / 1000.0;
        assert_eq!(r.jumps.len(), 2);
        for &(b, j) in &r.jumps {
            // Far larger than the change of sin over one grid spacing there.
            assert!(j > 10.0 * b.cos().abs() * spacing, "{:?}", r.jumps);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run_sine(&SineConfig::new(3, 2, 500)).unwrap();
        let b = run_sine(&SineConfig::new(3, 2, 500)).unwrap();
        assert_eq!(a, b);
    }
}
