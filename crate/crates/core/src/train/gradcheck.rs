//! Finite-difference verification of backpropagated gradients.
//!
//! Two references are used. When the mode splits errors by `1/N_in` the
//! backward pass is the true gradient and is compared with complex-step
//! derivatives of the loss, computed by a separate complex forward pass
//! that evaluates Lagrange products directly. For every mode it is also
//! compared with a forward tangent pass that uses the mode's split factors
//! and finite differences of each link, which is what the accelerated
//! variant computes.

use num_complex::Complex64;
use rand::Rng;

use super::{backward, loss, BackpropMode, GradientSet};
use crate::error::Result;
use crate::network::{build_fully_connected, LinkConfig, Network, Trace};

/// Denominator floor for relative errors; smaller gradients are compared
/// in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub compared: usize,
    /// Comparisons dropped because a perturbation changed the active path.
    pub skipped: usize,
    /// Whether the loss-difference reference applied (true gradient mode).
    pub loss_reference: bool,
    pub inactive_checked: usize,
    /// Largest loss change caused by perturbing a sub-link that did not fire.
    pub inactive_max_change: f64,
    /// Gradient entries found for sub-links that did not fire.
    pub inactive_entries: usize,
}

impl GradCheckReport {
    pub fn merge(&mut self, o: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(o.max_rel_error);
        self.compared += o.compared;
        self.skipped += o.skipped;
        self.inactive_checked += o.inactive_checked;
        self.inactive_max_change = self.inactive_max_change.max(o.inactive_max_change);
        self.inactive_entries += o.inactive_entries;
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn loss_of(net: &Network, input: &[f64], target: &[f64], trace: &mut Trace) -> Result<f64> {
    net.forward_into(input, None, trace)?;
    loss(trace.outputs(), target)
}

/// Checks every gradient entry of one presentation (no dropout) with step `h`.
pub fn gradient_check(
    net: &Network,
    input: &[f64],
    target: &[f64],
    h: f64,
    mode: &dyn BackpropMode,
) -> Result<GradCheckReport> {
    let (y, base) = net.forward(input, None)?;
    let e0 = loss(&y, target)?;
    let out_grad: Vec<f64> = y.iter().zip(target).map(|(y, t)| y - t).collect();
    let grads = backward(net, &base, &out_grad, mode)?;

    let true_gradient = (1..net.n_layers()).all(|l| {
        (0..net.layer_sizes()[l]).all(|u| {
            let (n_in, n_out) = (base.n_in(l, u), base.n_out(l, u));
            mode.factor(n_in, n_out) == 1.0 / n_in as f64
        })
    });
    let mut report = GradCheckReport {
        loss_reference: true_gradient,
        ..Default::default()
    };

    let slopes = edge_slopes(net, &base, h);
    for entry in grads.entries() {
        let tangent = tangent_derivative(net, &base, &slopes, mode, &y, target, entry.block, entry.edge, entry.node, h);
        let skip = tangent.is_none();
        let mut worst = tangent.map_or(0.0, |t| rel_error(entry.grad, t));

        if true_gradient && !skip {
            worst = worst.max(rel_error(entry.grad, complex_step(net, input, target, entry.block, entry.index)?));
        }
        if skip {
            report.skipped += 1;
        } else {
            report.compared += 1;
            report.max_rel_error = report.max_rel_error.max(worst);
        }
    }

    check_inactive(net, &base, &grads, input, target, e0, &mut report)?;
    Ok(report)
}

/// Imaginary step for [`complex_step`]; far below any rounding scale.
const COMPLEX_STEP: f64 = 1e-30;

/// Value of `link` at complex `x`: the real part selects the sub-link, the
/// Lagrange basis is evaluated as a product. `perturbed` adds the imaginary
/// step to one weight. A clamped input is held constant.
fn complex_link(link: &crate::link::PiecewiseLink, x: Complex64, perturbed: Option<usize>) -> Result<Complex64> {
    let shape = link.shape();
    let (r_min, r_max) = shape.range();
    let x = if x.re < r_min || x.re > r_max {
        Complex64::new(x.re.clamp(r_min, r_max), 0.0)
    } else {
        x
    };
    let k = shape.select_sublink(x.re);
    let (lo, hi) = shape.sublink_bounds(k)?;
    let t = (2.0 * x - (lo + hi)) / (hi - lo);
    let nodes = shape.node_set().nodes();
    let np = nodes.len();
    let mut value = Complex64::new(0.0, 0.0);
    for (j, &xj) in nodes.iter().enumerate() {
        let mut basis = Complex64::new(1.0, 0.0);
        for (m, &xm) in nodes.iter().enumerate() {
            if m != j {
                basis *= (t - xm) / (xj - xm);
            }
        }
        let i = k * np + j;
        let mut w = Complex64::new(link.weights()[i], 0.0);
        if perturbed == Some(i) {
            w.im = COMPLEX_STEP;
        }
        value += w * basis;
    }
    Ok(value)
}

/// `dE/dw` for weight `index` of block `block` by the complex step
/// `Im E(w + i s) / s`. No dropout.
fn complex_step(net: &Network, input: &[f64], target: &[f64], block: usize, index: usize) -> Result<f64> {
    let mut values = input
        .iter()
        .zip(net.input_links())
        .map(|(&x, l)| complex_link(l, Complex64::new(x, 0.0), None))
        .collect::<Result<Vec<_>>>()?;
    for (b, blk) in net.blocks().iter().enumerate() {
        let wpl = blk.shape().weights_per_link();
        values = (0..blk.n_destinations())
            .map(|d| {
                let edges = blk.incoming(d);
                let n = edges.len() as f64;
                let mut sum = Complex64::new(0.0, 0.0);
                for e in edges {
                    let local = (b == block && index / wpl == e).then_some(index % wpl);
                    sum += complex_link(&blk.link(e), values[blk.source(e)], local)?;
                }
                Ok(sum / n)
            })
            .collect::<Result<Vec<_>>>()?;
    }
    let mut e = Complex64::new(0.0, 0.0);
    for ((v, link), t) in values.into_iter().zip(net.output_links()).zip(target) {
        let r = complex_link(link, v, None)? - t;
        e += 0.5 * r * r;
    }
    Ok(e.im / COMPLEX_STEP)
}

/// Finite-difference slope of every active link at its recorded input, or
/// `None` where the stencil would cross a breakpoint or a range end.
fn edge_slopes(net: &Network, trace: &Trace, h: f64) -> Vec<Vec<Option<f64>>> {
    net.blocks()
        .iter()
        .enumerate()
        .map(|(b, block)| {
            (0..block.n_edges())
                .map(|e| {
                    let sub = trace.active_sublink(net, b, e)?;
                    let x = trace.unit_values(b)[block.source(e)];
                    let link = block.link(e);
                    let (lo, hi) = block.shape().range();
                    if x - h < lo || x + h > hi {
                        return None;
                    }
                    if link.select_sublink(x - h) != sub || link.select_sublink(x + h) != sub {
                        return None;
                    }
                    let yp = link.eval(x + h).ok()?.value;
                    let ym = link.eval(x - h).ok()?.value;
                    Some((yp - ym) / (2.0 * h))
                })
                .collect()
        })
        .collect()
}

/// Directional derivative of the loss along one weight, propagated forward
/// with the mode's split factors in place of the forward `1/N_in`.
#[allow(clippy::too_many_arguments)]
fn tangent_derivative(
    net: &Network,
    trace: &Trace,
    slopes: &[Vec<Option<f64>>],
    mode: &dyn BackpropMode,
    y: &[f64],
    target: &[f64],
    block: usize,
    edge: usize,
    node: usize,
    h: f64,
) -> Option<f64> {
    let b0 = &net.blocks()[block];
    let sub = trace.active_sublink(net, block, edge)?;
    let x = trace.unit_values(block)[b0.source(edge)];
    let mut link = b0.link(edge);
    let i = sub * b0.shape().n_points() + node;
    let w0 = link.weights()[i];
    link.weights_mut()[i] = w0 + h;
    let yp = link.eval(x).ok()?.value;
    link.weights_mut()[i] = w0 - h;
    let ym = link.eval(x).ok()?.value;
    let dy = (yp - ym) / (2.0 * h);

    let factor = |l: usize, u: usize| mode.factor(trace.n_in(l, u), trace.n_out(l, u));
    let sizes = net.layer_sizes();
    let mut tangent = vec![0.0; sizes[block + 1]];
    let d0 = b0.destination(edge);
    tangent[d0] = factor(block + 1, d0) * dy;

    for (b, blk) in net.blocks().iter().enumerate().skip(block + 1) {
        let mut next = vec![0.0; sizes[b + 1]];
        for (d, out) in next.iter_mut().enumerate() {
            if !trace.is_active(b + 1, d) {
                continue;
            }
            let mut sum = 0.0;
            for e in blk.incoming(d) {
                let s = blk.source(e);
                if tangent[s] == 0.0 || !trace.is_active(b, s) {
                    continue;
                }
                sum += slopes[b][e]? * tangent[s];
            }
            *out = factor(b + 1, d) * sum;
        }
        tangent = next;
    }

    let last = sizes.len() - 1;
    let mut de = 0.0;
    for (o, link) in net.output_links().iter().enumerate() {
        if tangent[o] == 0.0 {
            continue;
        }
        let v = trace.unit_values(last)[o];
        let slope = (link.eval(v + h).ok()?.value - link.eval(v - h).ok()?.value) / (2.0 * h);
        de += (y[o] - target[o]) * slope * tangent[o];
    }
    Some(de)
}

fn check_inactive(
    net: &Network,
    base: &Trace,
    grads: &GradientSet,
    input: &[f64],
    target: &[f64],
    e0: f64,
    report: &mut GradCheckReport,
) -> Result<()> {
    let mut work = net.clone();
    let mut trace = Trace::default();
    for (b, block) in net.blocks().iter().enumerate() {
        let np = block.shape().n_points();
        let n_sub = block.shape().n_sublinks();
        for e in 0..block.n_edges() {
            let active = base.active_sublink(net, b, e);
            for k in (0..n_sub).filter(|&k| Some(k) != active) {
                for a in 0..np {
                    if grads.get(b, e, k, a).is_some() {
                        report.inactive_entries += 1;
                    }
                    let i = block.weight_offset(e, k) + a;
                    let w0 = block.weights()[i];
                    work.blocks_mut()[b].weights_mut()[i] = if w0 > 0.0 { w0 - 0.5 } else { w0 + 0.5 };
                    let e1 = loss_of(&work, input, target, &mut trace)?;
                    work.blocks_mut()[b].weights_mut()[i] = w0;
                    report.inactive_checked += 1;
                    report.inactive_max_change = report.inactive_max_change.max((e1 - e0).abs());
                }
            }
        }
    }
    Ok(())
}

/// A small random network with random weights, plus an input that keeps
/// every link input at least `margin` from breakpoints and range ends.
pub fn random_case<R: Rng + ?Sized>(
    rng: &mut R,
    n_points: usize,
    n_sublinks: usize,
    margin: f64,
) -> Result<(Network, Vec<f64>, Vec<f64>)> {
    let n_layers = rng.gen_range(2..=4);
    let sizes: Vec<usize> = (0..n_layers).map(|_| rng.gen_range(1..=4)).collect();
    let mut net = build_fully_connected(&sizes, &LinkConfig::new(n_points, n_sublinks))?;
    let target: Vec<f64> = (0..net.n_outputs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    loop {
        net.randomize(rng);
        for _ in 0..50 {
            let input: Vec<f64> = (0..net.n_inputs()).map(|_| rng.gen_range(-0.95..0.95)).collect();
            let (_, trace) = net.forward(&input, None)?;
            if clear_of_breakpoints(&net, &trace, margin) {
                return Ok((net, input, target));
            }
        }
    }
}

fn clear_of_breakpoints(net: &Network, trace: &Trace, margin: f64) -> bool {
    net.blocks().iter().enumerate().all(|(b, block)| {
        let (lo, hi) = block.shape().range();
        trace.unit_values(b).iter().all(|&x| {
            x - lo >= margin
                && hi - x >= margin
                && block.shape().breakpoints().iter().all(|&a| (x - a).abs() >= margin)
        })
    })
}
