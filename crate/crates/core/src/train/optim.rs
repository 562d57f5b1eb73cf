//! Weight update rules.

use super::GradientSet;
use crate::config::Params;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::registry::Registry;

/// Summary of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub updated: usize,
    /// Sum and count of the per-weight rates applied, for rules that adapt.
    pub rate_sum: f64,
    pub rate_count: usize,
}

/// Applies a sparse gradient to the network. Weights without a gradient
/// entry must be left untouched; updated weights are clamped.
pub trait UpdateRule: Send {
    fn name(&self) -> &'static str;
    fn step(&mut self, net: &mut Network, grads: &GradientSet) -> Result<StepStats>;
}

pub fn update_rules() -> Registry<dyn UpdateRule> {
    let mut r: Registry<dyn UpdateRule> = Registry::new("update rule");
    r.register("momentum", |p| Ok(Box::new(Momentum::from_params(p)?)))
        .register("adaptive", |p| Ok(Box::new(Adaptive::from_params(p)?)));
    r
}

fn check_shape(net: &Network, grads: &GradientSet) -> Result<()> {
    if grads.blocks().len() != net.blocks().len() {
        return Err(Error::Consistency("gradient does not match the network".into()));
    }
    Ok(())
}

fn state_fits(state: &[Vec<f64>], net: &Network) -> bool {
    state.len() == net.blocks().len()
        && state
            .iter()
            .zip(net.blocks())
            .all(|(s, b)| s.len() == b.weights().len())
}

/// `w <- w - lr * g + momentum * (w - w_prev)`, where `w_prev` is the value
/// before the weight's previous update (initially the weight itself).
#[derive(Debug, Clone)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    prev: Vec<Vec<f64>>,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Momentum {
            lr,
            momentum,
            prev: Vec::new(),
        }
    }

    pub fn from_params(p: &Params) -> Result<Self> {
        let lr: f64 = p.get_or("lr", 0.1)?;
        let momentum: f64 = p.get_or("momentum", 0.0)?;
        if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!(
                "momentum rule needs lr > 0 and 0 <= momentum < 1, got {lr}, {momentum}"
            )));
        }
        Ok(Self::new(lr, momentum))
    }
}

impl UpdateRule for Momentum {
    fn name(&self) -> &'static str {
        "momentum"
    }

    fn step(&mut self, net: &mut Network, grads: &GradientSet) -> Result<StepStats> {
        check_shape(net, grads)?;
        if !state_fits(&self.prev, net) {
            self.prev = net.blocks().iter().map(|b| b.weights().to_vec()).collect();
        }
        let mut stats = StepStats::default();
        for ((block, g), prev) in net.blocks_mut().iter_mut().zip(grads.blocks()).zip(&mut self.prev) {
            let (lo, hi) = block.shape().weight_bounds();
            let weights = block.weights_mut();
            for r in 0..g.n_rows() {
                let basis = g.row_basis(r);
                let off = g.offsets[r];
                for (a, &b) in basis.iter().enumerate() {
                    let i = off + a;
                    let w = weights[i];
                    let next = w - self.lr * g.err[r] * b + self.momentum * (w - prev[i]);
                    prev[i] = w;
                    weights[i] = next.clamp(lo, hi);
                    stats.updated += 1;
                }
            }
        }
        Ok(stats)
    }
}

/// Per-weight curvature estimate for the adaptive rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    /// `|g - g_prev| / max(|w - w_prev|, eps)` between successive activations.
    Secant,
    /// Diagonal Gauss-Newton term propagated with the gradient.
    GaussNewton,
}

impl Curvature {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "secant" => Ok(Curvature::Secant),
            "gauss-newton" | "gn" => Ok(Curvature::GaussNewton),
            _ => Err(Error::config(format!(
                "unknown curvature estimator `{s}`; available: gauss-newton, secant"
            ))),
        }
    }
}

/// Per-weight parameter-free rate: `lr = g_avg^2 / (v_avg * h_avg)`, clipped
/// to `[lr_floor, lr_cap]`, with running averages over an adaptive memory
/// `tau` and a slow start that only gathers statistics for the first
/// `warmup` activations of each weight.
#[derive(Debug, Clone)]
pub struct Adaptive {
    pub lr_cap: f64,
    pub lr_floor: f64,
    pub warmup: u32,
    pub curvature: Curvature,
    pub secant_eps: f64,
    state: Vec<AdaptiveState>,
}

/// Running statistics of one weight. While `tau <= 0` the weight is still
/// warming up and `-tau` counts the samples seen; afterwards `tau >= 1` and
/// `tau_inv` caches its reciprocal.
#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    g: f64,
    v: f64,
    h: f64,
    tau: f64,
    tau_inv: f64,
}

/// Statistics for one block, one entry per weight.
#[derive(Debug, Clone, Default)]
struct AdaptiveState {
    stats: Vec<Stats>,
    /// Previous gradient and weight, kept only for the secant estimate.
    g_prev: Vec<f64>,
    w_prev: Vec<f64>,
}

impl AdaptiveState {
    fn new(n: usize, secant: bool) -> Self {
        let extra = if secant { n } else { 0 };
        AdaptiveState {
            stats: vec![Stats::default(); n],
            g_prev: vec![0.0; extra],
            w_prev: vec![0.0; extra],
        }
    }
}

/// Skip threshold for `v_avg * h_avg`.
const DENOM_GUARD: f64 = 1e-20;

impl Adaptive {
    pub fn new(curvature: Curvature) -> Self {
        Adaptive {
            lr_cap: 0.9,
            lr_floor: 1e-8,
            warmup: 10,
            curvature,
            secant_eps: 1e-8,
            state: Vec::new(),
        }
    }

    pub fn from_params(p: &Params) -> Result<Self> {
        let mut a = Self::new(Curvature::parse(&p.string_or("curvature", "gauss-newton"))?);
        a.lr_cap = p.get_or("lr_cap", a.lr_cap)?;
        a.lr_floor = p.get_or("lr_floor", a.lr_floor)?;
        a.warmup = p.get_or("warmup", a.warmup)?;
        a.secant_eps = p.get_or("secant_eps", a.secant_eps)?;
        if !(a.lr_floor > 0.0 && a.lr_floor <= a.lr_cap) || a.warmup == 0 || !(a.secant_eps > 0.0) {
            return Err(Error::config(
                "adaptive rule needs 0 < lr_floor <= lr_cap, warmup >= 1 and secant_eps > 0",
            ));
        }
        Ok(a)
    }

    /// Shared scalar update; returns the applied rate when the weight moved.
    /// `h` is `None` when no curvature sample is available yet.
    #[inline(always)]
    fn update_one(&self, st: &mut Stats, w: &mut f64, g: f64, h: Option<f64>, h_count_lag: f64, bounds: (f64, f64)) -> Option<f64> {
        if st.tau <= 0.0 {
            let n = 1.0 - st.tau;
            let inv = 1.0 / n;
            st.g += (g - st.g) * inv;
            st.v += (g * g - st.v) * inv;
            if let Some(h) = h {
                st.h += (h - st.h) / (n - h_count_lag);
            }
            if n >= self.warmup as f64 {
                st.tau = self.warmup as f64;
                st.tau_inv = 1.0 / st.tau;
            } else {
                st.tau = -n;
            }
            return None;
        }
        let inv = st.tau_inv;
        st.g += inv * (g - st.g);
        st.v += inv * (g * g - st.v);
        if let Some(h) = h {
            st.h += inv * (h - st.h);
        }
        let gg = st.g * st.g;
        let vh = st.v * st.h;
        if vh < DENOM_GUARD {
            let ratio = if st.v > 0.0 { (gg / st.v).min(1.0) } else { 0.0 };
            st.tau = (1.0 - ratio) * st.tau + 1.0;
            st.tau_inv = 1.0 / st.tau;
            return None;
        }
        // One reciprocal serves both the memory ratio g^2 / v and the rate.
        let raw = gg / vh;
        let ratio = (raw * st.h).min(1.0);
        st.tau = (1.0 - ratio) * st.tau + 1.0;
        st.tau_inv = 1.0 / st.tau;
        let rate = raw.clamp(self.lr_floor, self.lr_cap);
        *w = (*w - rate * g).clamp(bounds.0, bounds.1);
        Some(rate)
    }
}

impl UpdateRule for Adaptive {
    fn name(&self) -> &'static str {
        "adaptive"
    }

    fn step(&mut self, net: &mut Network, grads: &GradientSet) -> Result<StepStats> {
        check_shape(net, grads)?;
        let fits = self.state.len() == net.blocks().len()
            && self
                .state
                .iter()
                .zip(net.blocks())
                .all(|(s, b)| s.stats.len() == b.weights().len());
        if !fits {
            let secant = self.curvature == Curvature::Secant;
            self.state = net
                .blocks()
                .iter()
                .map(|b| AdaptiveState::new(b.weights().len(), secant))
                .collect();
        }
        let mut state = std::mem::take(&mut self.state);
        let mut stats = StepStats::default();
        let mut record = |rate: Option<f64>| {
            if let Some(rate) = rate {
                stats.updated += 1;
                stats.rate_sum += rate;
                stats.rate_count += 1;
            }
        };
        for ((block, g), st) in net.blocks_mut().iter_mut().zip(grads.blocks()).zip(&mut state) {
            let bounds = block.shape().weight_bounds();
            let weights = block.weights_mut();
            for r in 0..g.n_rows() {
                let basis = g.row_basis(r);
                let off = g.offsets[r];
                let (err, curv) = (g.err[r], g.curv[r]);
                for (a, &b) in basis.iter().enumerate() {
                    let i = off + a;
                    let grad = err * b;
                    let w = &mut weights[i];
                    let rate = match self.curvature {
                        Curvature::GaussNewton => {
                            self.update_one(&mut st.stats[i], w, grad, Some(curv * b * b), 0.0, bounds)
                        }
                        Curvature::Secant => {
                            let seen = st.stats[i].tau != 0.0;
                            let h = seen.then(|| {
                                (grad - st.g_prev[i]).abs() / (*w - st.w_prev[i]).abs().max(self.secant_eps)
                            });
                            st.g_prev[i] = grad;
                            st.w_prev[i] = *w;
                            // The first secant sample arrives one activation late.
                            self.update_one(&mut st.stats[i], w, grad, h, 1.0, bounds)
                        }
                    };
                    record(rate);
                }
            }
        }
        self.state = state;
        Ok(stats)
    }
}
