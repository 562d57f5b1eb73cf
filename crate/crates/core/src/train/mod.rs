//! Online training: loss, backpropagation through the active sub-network,
//! update rules and the training loop.
//!
//! Only sub-links that fired in the forward pass receive gradients. The
//! error reaching a unit is split over its incoming links by a factor chosen
//! by the [`BackpropMode`]: `1/N_in` for the exact gradient, `1/N_out` for the
//! accelerated variant.

mod gradcheck;
mod optim;

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Params;
use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::network::{fresh_mask, DropoutMask, Network, Trace};
use crate::polybasis::dot;
use crate::registry::Registry;

pub use gradcheck::{gradient_check, random_case, GradCheckReport, REL_FLOOR};
pub use optim::{update_rules, Adaptive, Curvature, Momentum, StepStats, UpdateRule};

/// `sum 0.5 (y - t)^2`.
pub fn loss(measured: &[f64], desired: &[f64]) -> Result<f64> {
    check_lengths(measured, desired)?;
    Ok(measured
        .iter()
        .zip(desired)
        .map(|(y, t)| 0.5 * (y - t) * (y - t))
        .sum())
}

/// `dE/dy = y - t`.
pub fn loss_gradient(measured: &[f64], desired: &[f64]) -> Result<Vec<f64>> {
    check_lengths(measured, desired)?;
    Ok(measured.iter().zip(desired).map(|(y, t)| y - t).collect())
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// How the error at a unit is shared among its incoming links.
pub trait BackpropMode: Send + Sync {
    fn name(&self) -> &'static str;
    /// Factor applied to the unit error before it enters each incoming link.
    fn factor(&self, n_in: u32, n_out: u32) -> f64;
}

/// Exact gradient: `1/N_in`.
#[derive(Debug, Default, Clone, Copy)]
pub struct Standard;

impl BackpropMode for Standard {
    fn name(&self) -> &'static str {
        "standard"
    }

    fn factor(&self, n_in: u32, _n_out: u32) -> f64 {
        if n_in == 0 {
            0.0
        } else {
            1.0 / n_in as f64
        }
    }
}

/// `1/N_out`: spreads the error evenly through deep, wide layers.
#[derive(Debug, Default, Clone, Copy)]
pub struct Accelerated;

impl BackpropMode for Accelerated {
    fn name(&self) -> &'static str {
        "accelerated"
    }

    fn factor(&self, _n_in: u32, n_out: u32) -> f64 {
        if n_out == 0 {
            0.0
        } else {
            1.0 / n_out as f64
        }
    }
}

pub fn backprop_modes() -> Registry<dyn BackpropMode> {
    let mut r: Registry<dyn BackpropMode> = Registry::new("backprop mode");
    r.register("standard", |_| Ok(Box::new(Standard)))
        .register("accelerated", |_| Ok(Box::new(Accelerated)));
    r
}

/// Gradients of one block. Each row is one fired sub-link; the gradient of
/// its node weight `a` is `err * basis[a]` and the curvature estimate is
/// `curv * basis[a]^2`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockGradient {
    n_points: usize,
    edges: Vec<u32>,
    subs: Vec<u32>,
    srcs: Vec<u32>,
    /// Offset of the row's first weight in the block weight array.
    offsets: Vec<usize>,
    err: Vec<f64>,
    curv: Vec<f64>,
    /// Per-source basis values, copied from the trace.
    basis: Vec<f64>,
}

impl BlockGradient {
    fn clear(&mut self) {
        self.edges.clear();
        self.subs.clear();
        self.srcs.clear();
        self.offsets.clear();
        self.err.clear();
        self.curv.clear();
    }

    pub fn n_rows(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub(crate) fn row_basis(&self, row: usize) -> &[f64] {
        let s = self.srcs[row] as usize;
        &self.basis[s * self.n_points..(s + 1) * self.n_points]
    }
}

/// Sparse gradient of one presentation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientSet {
    blocks: Vec<BlockGradient>,
    /// `dE/dg` per unit, by layer.
    deltas: Vec<Vec<f64>>,
    /// Gauss-Newton curvature `d2E/dg2` per unit, by layer.
    curvatures: Vec<Vec<f64>>,
}

/// One gradient component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradEntry {
    pub block: usize,
    pub edge: usize,
    pub sub: usize,
    pub node: usize,
    /// Index into the block weight array.
    pub index: usize,
    pub grad: f64,
    pub curvature: f64,
}

impl GradientSet {
    pub fn blocks(&self) -> &[BlockGradient] {
        &self.blocks
    }

    /// Number of weight gradients held.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.n_rows() * b.n_points).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn delta(&self, layer: usize, unit: usize) -> f64 {
        self.deltas[layer][unit]
    }

    pub fn entries(&self) -> impl Iterator<Item = GradEntry> + '_ {
        self.blocks.iter().enumerate().flat_map(|(b, g)| {
            (0..g.n_rows()).flat_map(move |r| {
                let basis = g.row_basis(r);
                (0..g.n_points).map(move |a| GradEntry {
                    block: b,
                    edge: g.edges[r] as usize,
                    sub: g.subs[r] as usize,
                    node: a,
                    index: g.offsets[r] + a,
                    grad: g.err[r] * basis[a],
                    curvature: g.curv[r] * basis[a] * basis[a],
                })
            })
        })
    }

    pub fn get(&self, block: usize, edge: usize, sub: usize, node: usize) -> Option<f64> {
        let g = self.blocks.get(block)?;
        let r = (0..g.n_rows()).find(|&r| g.edges[r] as usize == edge && g.subs[r] as usize == sub)?;
        g.row_basis(r).get(node).map(|b| g.err[r] * b)
    }
}

pub fn backward(net: &Network, trace: &Trace, out_grad: &[f64], mode: &dyn BackpropMode) -> Result<GradientSet> {
    let mut g = GradientSet::default();
    backward_into(net, trace, out_grad, mode, &mut g)?;
    Ok(g)
}

/// Backpropagates `out_grad = dE/dy` through the sub-links recorded in
/// `trace`, together with a Gauss-Newton curvature estimate per row.
pub fn backward_into(
    net: &Network,
    trace: &Trace,
    out_grad: &[f64],
    mode: &dyn BackpropMode,
    g: &mut GradientSet,
) -> Result<()> {
    let sizes = net.layer_sizes();
    let matches = trace.values.len() == sizes.len()
        && trace.values.iter().zip(&sizes).all(|(v, &n)| v.len() == n)
        && trace
            .basis
            .iter()
            .zip(net.blocks())
            .all(|(v, b)| v.len() == b.n_sources() * b.shape().n_points());
    if !matches {
        return Err(Error::Consistency("trace does not belong to this network".into()));
    }
    if out_grad.len() != net.n_outputs() {
        return Err(Error::Shape {
            expected: net.n_outputs(),
            got: out_grad.len(),
        });
    }
    if g.deltas.len() != sizes.len() || g.deltas.iter().zip(&sizes).any(|(d, &n)| d.len() != n) {
        g.deltas = sizes.iter().map(|&n| vec![0.0; n]).collect();
        g.curvatures = g.deltas.clone();
    }
    g.blocks.resize_with(net.blocks().len(), BlockGradient::default);

    let last = sizes.len() - 1;
    for o in 0..sizes[last] {
        let s = trace.output_slopes[o];
        g.deltas[last][o] = out_grad[o] * s;
        g.curvatures[last][o] = s * s;
    }

    for (b, block) in net.blocks().iter().enumerate().rev() {
        let np = block.shape().n_points();
        let wpl = block.shape().weights_per_link();
        let weights = block.weights();
        let (lo_d, hi_d) = g.deltas.split_at_mut(b + 1);
        let (lo_c, hi_c) = g.curvatures.split_at_mut(b + 1);
        let (src_delta, dst_delta) = (&mut lo_d[b], &hi_d[0]);
        let (src_curv, dst_curv) = (&mut lo_c[b], &hi_c[0]);
        src_delta.fill(0.0);
        src_curv.fill(0.0);
        let propagate = b > 0;

        let bg = &mut g.blocks[b];
        bg.clear();
        bg.n_points = np;
        bg.basis.clear();
        bg.basis.extend_from_slice(&trace.basis[b]);

        let src_active = &trace.active[b];
        let dst_active = &trace.active[b + 1];
        let sub = &trace.sub[b];
        let dbasis = &trace.dbasis[b];
        for d in 0..block.n_destinations() {
            if !dst_active[d] {
                continue;
            }
            let f = mode.factor(trace.n_in[b + 1][d], trace.n_out[b + 1][d]);
            let err = f * dst_delta[d];
            let curv = f * f * dst_curv[d];
            for e in block.incoming(d) {
                let s = block.source(e);
                if !src_active[s] {
                    continue;
                }
                let k = sub[s] as usize;
                let off = e * wpl + k * np;
                bg.edges.push(e as u32);
                bg.subs.push(k as u32);
                bg.srcs.push(s as u32);
                bg.offsets.push(off);
                bg.err.push(err);
                bg.curv.push(curv);
                if propagate {
                    let slope = dot(&weights[off..off + np], &dbasis[s * np..(s + 1) * np]);
                    src_delta[s] += err * slope;
                    src_curv[s] += curv * slope * slope;
                }
            }
        }
    }
    Ok(())
}

/// Training protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub backprop: String,
    pub optimizer: String,
    /// Passed to the update-rule factory.
    pub optimizer_params: Params,
    pub dropout_rate: f64,
    /// Presentations between fresh dropout masks.
    pub dropout_refresh: usize,
    pub seed: u64,
    /// Presentations per history row.
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            backprop: "accelerated".into(),
            optimizer: "adaptive".into(),
            optimizer_params: Params::new(),
            dropout_rate: 0.0,
            dropout_refresh: 10,
            seed: 0,
            log_interval: 1000,
        }
    }
}

/// Keys read by [`TrainConfig::from_params`].
pub const TRAIN_KEYS: &[&str] = &[
    "steps",
    "backprop",
    "optimizer",
    "dropout",
    "dropout_rate",
    "dropout_refresh",
    "seed",
    "log_interval",
    "lr",
    "momentum",
    "lr_cap",
    "lr_floor",
    "warmup",
    "curvature",
    "secant_eps",
];

impl TrainConfig {
    pub fn from_params(p: &Params) -> Result<Self> {
        let d = TrainConfig::default();
        let dropout_on = p.flag_or("dropout", false)?;
        let cfg = TrainConfig {
            steps: p.get_or("steps", d.steps)?,
            backprop: p.string_or("backprop", &d.backprop),
            optimizer: p.string_or("optimizer", &d.optimizer),
            optimizer_params: p.clone(),
            dropout_rate: if dropout_on { p.get_or("dropout_rate", 0.5)? } else { 0.0 },
            dropout_refresh: p.get_or("dropout_refresh", d.dropout_refresh)?,
            seed: p.get_or("seed", d.seed)?,
            log_interval: p.get_or("log_interval", d.log_interval)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.dropout_refresh == 0 || self.log_interval == 0 {
            return Err(Error::config("dropout_refresh and log_interval must be at least 1"));
        }
        Ok(())
    }
}

/// One logged interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    /// Mean training loss over the interval.
    pub loss: f64,
    pub out_of_range: u64,
    /// Mean applied learning rate, when the rule reports one.
    pub mean_lr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,out_of_range,mean_lr\n");
        for r in &self.rows {
            let lr = r.mean_lr.map(|v| format!("{v:.6e}")).unwrap_or_default();
            s.push_str(&format!("{},{:.9e},{},{}\n", r.step, r.loss, r.out_of_range, lr));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

#[derive(Debug, Clone, Default)]
struct Interval {
    loss: f64,
    count: usize,
    out_of_range: u64,
    rate_sum: f64,
    rate_count: usize,
}

/// Resumable online trainer owning the optimizer state for one network.
pub struct Trainer {
    config: TrainConfig,
    mode: Box<dyn BackpropMode>,
    rule: Box<dyn UpdateRule>,
    sample_rng: ChaCha8Rng,
    mask_rng: ChaCha8Rng,
    mask: Option<DropoutMask>,
    step: usize,
    trace: Trace,
    grads: GradientSet,
    target: Vec<f64>,
    out_grad: Vec<f64>,
    interval: Interval,
    history: History,
}

impl Trainer {
    /// Resolves the backprop mode and update rule by name.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mode = backprop_modes().create(&config.backprop, &config.optimizer_params)?;
        let rule = update_rules().create(&config.optimizer, &config.optimizer_params)?;
        Ok(Self::with_parts(config, mode, rule))
    }

    /// Uses caller-supplied strategies.
    pub fn with_parts(config: TrainConfig, mode: Box<dyn BackpropMode>, rule: Box<dyn UpdateRule>) -> Self {
        let mut sample_rng = ChaCha8Rng::seed_from_u64(config.seed);
        sample_rng.set_stream(0);
        let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed);
        mask_rng.set_stream(1);
        Trainer {
            config,
            mode,
            rule,
            sample_rng,
            mask_rng,
            mask: None,
            step: 0,
            trace: Trace::default(),
            grads: GradientSet::default(),
            target: Vec::new(),
            out_grad: Vec::new(),
            interval: Interval::default(),
            history: History::default(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn into_history(self) -> History {
        self.history
    }

    pub fn rule_name(&self) -> &'static str {
        self.rule.name()
    }

    /// One presentation: sample, forward, backward, update. Returns the loss.
    pub fn step(&mut self, net: &mut Network, data: &SampleSet) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::config("cannot train on an empty sample set"));
        }
        if self.config.dropout_rate > 0.0 && self.step % self.config.dropout_refresh == 0 {
            self.mask = Some(fresh_mask(net, self.config.dropout_rate, &mut self.mask_rng)?);
        }
        let i = self.sample_rng.gen_range(0..data.len());
        net.forward_into(data.input(i), self.mask.as_ref(), &mut self.trace)?;
        data.target_into(i, &mut self.target);
        let y = self.trace.outputs();
        let e = loss(y, &self.target)?;
        self.out_grad.clear();
        self.out_grad.extend(y.iter().zip(&self.target).map(|(y, t)| y - t));
        backward_into(net, &self.trace, &self.out_grad, self.mode.as_ref(), &mut self.grads)?;
        let stats = self.rule.step(net, &self.grads)?;

        self.step += 1;
        let iv = &mut self.interval;
        iv.loss += e;
        iv.count += 1;
        iv.out_of_range += self.trace.out_of_range();
        iv.rate_sum += stats.rate_sum;
        iv.rate_count += stats.rate_count;
        if self.step % self.config.log_interval == 0 {
            self.flush();
        }
        Ok(e)
    }

    fn flush(&mut self) {
        let iv = std::mem::take(&mut self.interval);
        if iv.count == 0 {
            return;
        }
        self.history.rows.push(HistoryRow {
            step: self.step,
            loss: iv.loss / iv.count as f64,
            out_of_range: iv.out_of_range,
            mean_lr: (iv.rate_count > 0).then(|| iv.rate_sum / iv.rate_count as f64),
        });
    }

    /// Runs `steps` more presentations.
    pub fn run(&mut self, net: &mut Network, data: &SampleSet, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(net, data)?;
        }
        Ok(())
    }

    /// Logs any partial interval.
    pub fn finish(&mut self) {
        self.flush();
    }
}

/// Trains `net` for `config.steps` presentations.
pub fn train_online(net: &mut Network, data: &SampleSet, config: &TrainConfig) -> Result<History> {
    let mut t = Trainer::new(config.clone())?;
    t.run(net, data, config.steps)?;
    t.finish();
    Ok(t.into_history())
}
