//! Verification runs: the overshoot table and randomized gradient checks.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{task_seed, Artifact, Experiment, Outcome};
use crate::config::Params;
use crate::error::Result;
use crate::link::overshoot_table;
use crate::train::{backprop_modes, gradient_check, random_case, GradCheckReport};

/// Published maximum overshoot for 2..=10 points, rounded to 3 decimals.
pub const REFERENCE_OVERSHOOT: [f64; 9] = [1.0, 1.25, 1.667, 1.799, 1.989, 2.083, 2.203, 2.275, 2.362];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvershootRow {
    pub n_points: usize,
    pub computed: f64,
    pub reference: f64,
}

impl OvershootRow {
    pub fn deviation(&self) -> f64 {
        (self.computed - self.reference).abs()
    }
}

pub fn overshoot_rows() -> Vec<OvershootRow> {
    overshoot_table()
        .iter()
        .zip(REFERENCE_OVERSHOOT)
        .enumerate()
        .map(|(i, (&computed, reference))| OvershootRow {
            n_points: i + 2,
            computed,
            reference,
        })
        .collect()
}

pub(super) struct Overshoot;

impl Experiment for Overshoot {
    fn name(&self) -> &'static str {
        "overshoot"
    }

    fn about(&self) -> &'static str {
        "maximum overshoot of a sub-link with weights in [-1, 1], per number of points"
    }

    fn defaults(&self) -> Params {
        Params::new().with("tolerance", 5e-4)
    }

    fn run(&self, p: &Params) -> Result<Outcome> {
        let tol: f64 = p.get_or("tolerance", 5e-4)?;
        let rows = overshoot_rows();
        let mut csv = String::from("n_points,computed,reference,deviation\n");
        let mut summary = String::from("n_points  computed  reference  deviation\n");
        for r in &rows {
            let _ = writeln!(csv, "{},{:.6},{:.3},{:.2e}", r.n_points, r.computed, r.reference, r.deviation());
            let _ = writeln!(
                summary,
                "{:>8}  {:>8.4}  {:>9.3}  {:>9.2e}{}",
                r.n_points,
                r.computed,
                r.reference,
                r.deviation(),
                if r.deviation() < tol { "" } else { "  over tolerance" }
            );
        }
        Ok(Outcome {
            summary,
            artifacts: vec![Artifact::new("overshoot.csv", csv)],
            passed: rows.iter().all(|r| r.deviation() < tol),
        })
    }
}

/// Aggregate over the random cases of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub n_points: usize,
    pub n_sublinks: usize,
    pub mode: &'static str,
    pub cases: usize,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSummary {
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckSummary {
    pub fn worst_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max)
    }

    /// Largest loss change from perturbing sub-links that did not fire.
    pub fn worst_inactive_change(&self) -> f64 {
        self.rows.iter().map(|r| r.report.inactive_max_change).fold(0.0, f64::max)
    }

    pub fn inactive_entries(&self) -> usize {
        self.rows.iter().map(|r| r.report.inactive_entries).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "n_points,sublinks,mode,cases,compared,skipped,max_rel_error,inactive_checked,inactive_max_change,inactive_entries\n",
        );
        for r in &self.rows {
            let g = &r.report;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.3e},{},{:.3e},{}",
                r.n_points,
                r.n_sublinks,
                r.mode,
                r.cases,
                g.compared,
                g.skipped,
                g.max_rel_error,
                g.inactive_checked,
                g.inactive_max_change,
                g.inactive_entries
            );
        }
        s
    }
}

/// Checks `cases` random networks for every order in `points`, every
/// sub-link count in `sublinks` and every backprop mode.
pub fn run_gradcheck(
    points: &[usize],
    sublinks: &[usize],
    cases: usize,
    h: f64,
    margin: f64,
    seed: u64,
) -> Result<GradCheckSummary> {
    let modes = backprop_modes();
    let mut rows = Vec::new();
    let mut task = 0;
    for &np in points {
        for &ns in sublinks {
            for name in modes.names() {
                let mode = modes.create(name, &Params::new())?;
                let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, task));
                task += 1;
                let mut report = GradCheckReport::default();
                for _ in 0..cases {
                    let (net, x, t) = random_case(&mut rng, np, ns, margin)?;
                    report.merge(&gradient_check(&net, &x, &t, h, mode.as_ref())?);
                }
                rows.push(GradCheckRow {
                    n_points: np,
                    n_sublinks: ns,
                    mode: name,
                    cases,
                    report,
                });
            }
        }
    }
    Ok(GradCheckSummary { rows })
}

pub(super) struct GradCheck;

impl Experiment for GradCheck {
    fn name(&self) -> &'static str {
        "gradcheck"
    }

    fn about(&self) -> &'static str {
        "complex-step derivative check of backpropagation on random small networks"
    }

    fn defaults(&self) -> Params {
        Params::new()
            .with("points", "2,3,4,5,6")
            .with("sublinks", "1,2,3,4")
            .with("cases", 20)
            .with("h", 1e-6)
            .with("margin", 1e-3)
            .with("threshold", 1e-5)
            .with("seed", 0)
    }

    fn run(&self, p: &Params) -> Result<Outcome> {
        let summary = run_gradcheck(
            &p.list_or("points", &[2, 3, 4, 5, 6])?,
            &p.list_or("sublinks", &[1, 2, 3, 4])?,
            p.get_or("cases", 20)?,
            p.get_or("h", 1e-6)?,
            p.get_or("margin", 1e-3)?,
            p.get_or("seed", 0)?,
        )?;
        let threshold: f64 = p.get_or("threshold", 1e-5)?;
        let worst = summary.worst_rel_error();
        let inactive = summary.worst_inactive_change();
        let compared: usize = summary.rows.iter().map(|r| r.report.compared).sum();
        let skipped: usize = summary.rows.iter().map(|r| r.report.skipped).sum();
        let text = format!(
            "worst relative error {worst:.3e} over {compared} gradients ({skipped} skipped at path changes)\n\
             inactive sub-link perturbations: max loss change {inactive:.1e}, {} stray gradient entries\n",
            summary.inactive_entries()
        );
        Ok(Outcome {
            summary: text,
            passed: worst <= threshold && inactive == 0.0 && summary.inactive_entries() == 0,
            artifacts: vec![Artifact::new("gradcheck.csv", summary.to_csv())],
        })
    }
}
