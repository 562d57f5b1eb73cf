//! Discontinuous piecewise links.
//!
//! A link's input range `[r_min, r_max]` is cut at ordered breakpoints into
//! sub-links. Each sub-link is a Lagrange polynomial on the Chebyshev-Lobatto
//! nodes of its own sub-interval, so exactly one sub-link fires for any input
//! and the link is discontinuous at the breakpoints.
//!
//! Interior breakpoints belong to the sub-link on their right; the last
//! interval is closed at `r_max`. Inputs outside the range are clamped and
//! reported through [`LinkOutput::clamped`].

use std::sync::{Arc, OnceLock};

use crate::config::Params;
use crate::error::{Error, Result};
use crate::polybasis::{NodeSet, MAX_POINTS};
use crate::registry::Registry;

/// Geometry shared by every link of one connection block: node set, range,
/// breakpoints and weight bounds. Weights live elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkShape {
    nodes: Arc<NodeSet>,
    breakpoints: Vec<f64>,
    r_min: f64,
    r_max: f64,
    w_min: f64,
    w_max: f64,
    /// Set when the breakpoints are equally spaced; enables O(1) selection.
    uniform_width: Option<f64>,
}

/// Where an input lands on a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Located {
    pub sub: usize,
    /// Coordinate on the reference interval `[-1, 1]`.
    pub local: f64,
    /// `d local / d x` for the affine map of the active sub-interval.
    pub chain: f64,
    pub clamped: bool,
}

impl LinkShape {
    /// Equally spaced sub-links.
    pub fn uniform(
        n_points: usize,
        n_sublinks: usize,
        r_min: f64,
        r_max: f64,
        w_min: f64,
        w_max: f64,
    ) -> Result<Self> {
        if n_sublinks == 0 {
            return Err(Error::config("a link needs at least one sub-link"));
        }
        check_ranges(r_min, r_max, w_min, w_max)?;
        let width = (r_max - r_min) / n_sublinks as f64;
        let breakpoints = (1..n_sublinks).map(|k| r_min + k as f64 * width).collect();
        let mut shape = Self::with_breakpoints(
            Arc::new(NodeSet::new(n_points)?),
            breakpoints,
            r_min,
            r_max,
            w_min,
            w_max,
        )?;
        shape.uniform_width = Some(width);
        Ok(shape)
    }

    /// Arbitrary strictly increasing breakpoints inside `(r_min, r_max)`.
    pub fn with_breakpoints(
        nodes: Arc<NodeSet>,
        breakpoints: Vec<f64>,
        r_min: f64,
        r_max: f64,
        w_min: f64,
        w_max: f64,
    ) -> Result<Self> {
        check_ranges(r_min, r_max, w_min, w_max)?;
        let mut prev = r_min;
        for &a in &breakpoints {
            if !(a > prev && a < r_max) {
                return Err(Error::config(format!(
                    "breakpoints must be strictly increasing inside ({r_min}, {r_max}), got {breakpoints:?}"
                )));
            }
            prev = a;
        }
        Ok(LinkShape {
            nodes,
            breakpoints,
            r_min,
            r_max,
            w_min,
            w_max,
            uniform_width: None,
        })
    }

    pub fn node_set(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn node_set_arc(&self) -> &Arc<NodeSet> {
        &self.nodes
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.nodes.n_points()
    }

    #[inline]
    pub fn n_sublinks(&self) -> usize {
        self.breakpoints.len() + 1
    }

    /// Weights per link (`n_sublinks * n_points`).
    #[inline]
    pub fn weights_per_link(&self) -> usize {
        self.n_sublinks() * self.n_points()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn range(&self) -> (f64, f64) {
        (self.r_min, self.r_max)
    }

    pub fn weight_bounds(&self) -> (f64, f64) {
        (self.w_min, self.w_max)
    }

    /// `[lo, hi]` of sub-link `k`.
    pub fn sublink_bounds(&self, k: usize) -> Result<(f64, f64)> {
        if k >= self.n_sublinks() {
            return Err(Error::Index {
                index: k,
                len: self.n_sublinks(),
            });
        }
        Ok(self.bounds_unchecked(k))
    }

    #[inline]
    fn bounds_unchecked(&self, k: usize) -> (f64, f64) {
        let lo = if k == 0 {
            self.r_min
        } else {
            self.breakpoints[k - 1]
        };
        let hi = if k + 1 == self.n_sublinks() {
            self.r_max
        } else {
            self.breakpoints[k]
        };
        (lo, hi)
    }

    /// Index of the sub-link that fires for `x` (after clamping to the range).
    #[inline]
    pub fn select_sublink(&self, x: f64) -> usize {
        let x = x.clamp(self.r_min, self.r_max);
        let n_bp = self.breakpoints.len();
        if n_bp == 0 {
            return 0;
        }
        if let Some(w) = self.uniform_width {
            // Guess from the spacing, then correct against the stored
            // breakpoints so ties follow the half-open convention exactly.
            let mut k = (((x - self.r_min) / w) as usize).min(n_bp);
            while k > 0 && x < self.breakpoints[k - 1] {
                k -= 1;
            }
            while k < n_bp && x >= self.breakpoints[k] {
                k += 1;
            }
            return k;
        }
        self.breakpoints.partition_point(|&a| a <= x)
    }

    /// Maps `x` in sub-interval `k` onto `[-1, 1]`.
    pub fn to_local(&self, k: usize, x: f64) -> Result<f64> {
        let (lo, hi) = self.sublink_bounds(k)?;
        Ok(local_coordinate(x.clamp(lo, hi), lo, hi))
    }

    #[inline]
    pub fn locate(&self, x: f64) -> Located {
        let clamped = x < self.r_min || x > self.r_max;
        let xc = x.clamp(self.r_min, self.r_max);
        let sub = self.select_sublink(xc);
        let (lo, hi) = self.bounds_unchecked(sub);
        Located {
            sub,
            local: local_coordinate(xc, lo, hi),
            chain: 2.0 / (hi - lo),
            clamped,
        }
    }

    /// Global position of node `j` of sub-link `k`.
    pub fn node_position(&self, k: usize, j: usize) -> f64 {
        let (lo, hi) = self.bounds_unchecked(k);
        let t = self.nodes.nodes()[j];
        if t == -1.0 {
            lo
        } else if t == 1.0 {
            hi
        } else {
            lo + 0.5 * (t + 1.0) * (hi - lo)
        }
    }

    #[inline]
    pub fn clamp_weight(&self, w: f64) -> f64 {
        w.clamp(self.w_min, self.w_max)
    }
}

#[inline]
fn local_coordinate(x: f64, lo: f64, hi: f64) -> f64 {
    if x == hi {
        1.0
    } else if x == lo {
        -1.0
    } else {
        2.0 * (x - lo) / (hi - lo) - 1.0
    }
}

fn check_ranges(r_min: f64, r_max: f64, w_min: f64, w_max: f64) -> Result<()> {
    if !(r_min.is_finite() && r_max.is_finite() && r_min < r_max) {
        return Err(Error::config(format!(
            "link input range must satisfy r_min < r_max, got [{r_min}, {r_max}]"
        )));
    }
    if !(w_min.is_finite() && w_max.is_finite() && w_min < w_max) {
        return Err(Error::config(format!(
            "weight bounds must satisfy w_min < w_max, got [{w_min}, {w_max}]"
        )));
    }
    Ok(())
}

/// Result of evaluating a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkOutput {
    pub value: f64,
    pub active: usize,
    /// The input was outside `[r_min, r_max]` and was clamped.
    pub clamped: bool,
}

/// One link: a shape plus its `n_sublinks x n_points` weight matrix
/// (row-major, one row per sub-link).
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLink {
    shape: Arc<LinkShape>,
    weights: Vec<f64>,
    trainable: bool,
}

/// Equally spaced link with zeroed weights.
pub fn build_link(
    n_points: usize,
    n_sublinks: usize,
    r_min: f64,
    r_max: f64,
    w_min: f64,
    w_max: f64,
) -> Result<PiecewiseLink> {
    let shape = LinkShape::uniform(n_points, n_sublinks, r_min, r_max, w_min, w_max)?;
    Ok(PiecewiseLink::new(Arc::new(shape)))
}

impl PiecewiseLink {
    pub fn new(shape: Arc<LinkShape>) -> Self {
        let n = shape.weights_per_link();
        PiecewiseLink {
            shape,
            weights: vec![0.0; n],
            trainable: true,
        }
    }

    pub fn with_weights(shape: Arc<LinkShape>, weights: Vec<f64>, trainable: bool) -> Result<Self> {
        if weights.len() != shape.weights_per_link() {
            return Err(Error::Shape {
                expected: shape.weights_per_link(),
                got: weights.len(),
            });
        }
        Ok(PiecewiseLink {
            shape,
            weights,
            trainable,
        })
    }

    /// A fixed linear map taking `[r_min, r_max]` onto `[y_lo, y_hi]`.
    pub fn fixed_linear(r_min: f64, r_max: f64, y_lo: f64, y_hi: f64) -> Result<Self> {
        let (w_min, w_max) = if y_lo < y_hi { (y_lo, y_hi) } else { (y_hi, y_lo) };
        let (w_min, w_max) = if w_min == w_max {
            (w_min - 1.0, w_max + 1.0)
        } else {
            (w_min, w_max)
        };
        let shape = LinkShape::uniform(2, 1, r_min, r_max, w_min, w_max)?;
        Self::with_weights(Arc::new(shape), vec![y_lo, y_hi], false)
    }

    pub fn shape(&self) -> &LinkShape {
        &self.shape
    }

    pub fn shape_arc(&self) -> &Arc<LinkShape> {
        &self.shape
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn sublink_weights(&self, k: usize) -> &[f64] {
        let np = self.shape.n_points();
        &self.weights[k * np..(k + 1) * np]
    }

    pub fn select_sublink(&self, x: f64) -> usize {
        self.shape.select_sublink(x)
    }

    pub fn to_local(&self, k: usize, x: f64) -> Result<f64> {
        self.shape.to_local(k, x)
    }

    pub fn eval(&self, x: f64) -> Result<LinkOutput> {
        if !x.is_finite() {
            return Err(Error::NumericInput(x));
        }
        let loc = self.shape.locate(x);
        let value = self
            .shape
            .node_set()
            .interpolate(self.sublink_weights(loc.sub), loc.local)?;
        Ok(LinkOutput {
            value,
            active: loc.sub,
            clamped: loc.clamped,
        })
    }

    fn check_active(&self, x: f64, active: usize) -> Result<crate::link::Located> {
        if !x.is_finite() {
            return Err(Error::NumericInput(x));
        }
        let loc = self.shape.locate(x);
        if loc.sub != active {
            return Err(Error::Consistency(format!(
                "sub-link {active} is not the active sub-link for input {x} (expected {})",
                loc.sub
            )));
        }
        Ok(loc)
    }

    /// `dF/dx` inside the active sub-link. For clamped inputs this is the
    /// one-sided slope of the polynomial at the range end.
    pub fn grad_input(&self, x: f64, active: usize) -> Result<f64> {
        let loc = self.check_active(x, active)?;
        let d = self
            .shape
            .node_set()
            .interpolate_derivative(self.sublink_weights(active), loc.local)?;
        Ok(d * loc.chain)
    }

    /// `dF/dw` for the weights of the active sub-link: the basis values at
    /// the local coordinate. All other sub-links have zero gradient.
    pub fn grad_weights(&self, x: f64, active: usize) -> Result<Vec<f64>> {
        let loc = self.check_active(x, active)?;
        let mut b = vec![0.0; self.shape.n_points()];
        self.shape.node_set().eval_basis(loc.local, &mut b);
        Ok(b)
    }

    /// Sets every weight to the value of the initial line at its node, then
    /// clamps.
    pub fn init_line(&mut self, rule: &dyn LineInit, slope: f64) {
        init_weights(&self.shape, &mut self.weights, rule, slope);
    }

    pub fn clamp_weights(&mut self) {
        for w in &mut self.weights {
            *w = self.shape.clamp_weight(*w);
        }
    }
}

pub(crate) fn init_weights(shape: &LinkShape, weights: &mut [f64], rule: &dyn LineInit, slope: f64) {
    let np = shape.n_points();
    let (r_min, r_max) = shape.range();
    for k in 0..shape.n_sublinks() {
        for j in 0..np {
            let x = shape.node_position(k, j);
            weights[k * np + j] = shape.clamp_weight(rule.node_value(slope, x, r_min, r_max));
        }
    }
}

/// Initial line drawn across a link; `slope` is the per-link random draw.
pub trait LineInit: Send + Sync {
    fn name(&self) -> &'static str;
    /// Weight for a node at global position `x`.
    fn node_value(&self, slope: f64, x: f64, r_min: f64, r_max: f64) -> f64;
}

/// Line from `-slope` at `r_min` to `+slope` at `r_max`.
#[derive(Debug, Default, Clone, Copy)]
pub struct SymmetricLine;

impl LineInit for SymmetricLine {
    fn name(&self) -> &'static str {
        "symmetric"
    }

    fn node_value(&self, slope: f64, x: f64, r_min: f64, r_max: f64) -> f64 {
        slope * (2.0 * (x - r_min) / (r_max - r_min) - 1.0)
    }
}

/// `slope * (x - r_min) / (r_max - r_min) + slope`: a line from `slope` to
/// `2 * slope`. Kept for comparison runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct OffsetLine;

impl LineInit for OffsetLine {
    fn name(&self) -> &'static str {
        "offset"
    }

    fn node_value(&self, slope: f64, x: f64, r_min: f64, r_max: f64) -> f64 {
        (x - r_min) / (r_max - r_min) * slope + slope
    }
}

pub fn line_inits() -> Registry<dyn LineInit> {
    let mut r: Registry<dyn LineInit> = Registry::new("line init");
    r.register("symmetric", |_: &Params| Ok(Box::new(SymmetricLine)))
        .register("offset", |_: &Params| Ok(Box::new(OffsetLine)));
    r
}

static OVERSHOOT: OnceLock<Vec<f64>> = OnceLock::new();

/// Computed maximum overshoot `p_max` for 2..=10 points (index 0 is 2 points).
pub fn overshoot_table() -> &'static [f64] {
    OVERSHOOT.get_or_init(|| {
        (2..=MAX_POINTS)
            .map(|n| {
                NodeSet::new(n)
                    .expect("tabulated orders are valid")
                    .overshoot_max(1e-12)
            })
            .collect()
    })
}

/// Input half-range `p_max * w_max` so that a link can accept anything the
/// previous link can emit with weights inside `[-w_max, w_max]`.
pub fn recommended_range(n_points: usize, w_max: f64) -> Result<f64> {
    if !(2..=MAX_POINTS).contains(&n_points) {
        return Err(Error::config(format!(
            "no overshoot value for {n_points} points (supported: 2..={MAX_POINTS})"
        )));
    }
    Ok(overshoot_table()[n_points - 2] * w_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_piece() -> PiecewiseLink {
        build_link(2, 2, -1.0, 1.0, -1.0, 1.0).unwrap()
    }

    #[test]
    fn build_examples() {
        let l = two_piece();
        assert_eq!(l.shape().breakpoints(), &[0.0]);
        assert_eq!(l.shape().sublink_bounds(0).unwrap(), (-1.0, 0.0));
        assert_eq!(l.shape().sublink_bounds(1).unwrap(), (0.0, 1.0));

        let l = build_link(3, 3, -1.25, 1.25, -1.0, 1.0).unwrap();
        let bp = l.shape().breakpoints();
        assert_abs_diff_eq!(bp[0], -1.25 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bp[1], 1.25 / 3.0, epsilon = 1e-15);

        let l = build_link(2, 1, 0.0, 255.0, -1.0, 1.0).unwrap();
        assert_eq!(l.shape().n_sublinks(), 1);
        assert_eq!(l.shape().sublink_bounds(0).unwrap(), (0.0, 255.0));
        assert!(l.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn build_rejects_bad_config() {
        assert!(matches!(build_link(2, 2, 1.0, -1.0, -1.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(build_link(2, 2, -1.0, 1.0, 1.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(build_link(2, 0, -1.0, 1.0, -1.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(build_link(1, 1, -1.0, 1.0, -1.0, 1.0), Err(Error::InvalidOrder(1))));
    }

    #[test]
    fn selection_convention() {
        let l = two_piece();
        assert_eq!(l.select_sublink(-0.5), 0);
        assert_eq!(l.select_sublink(0.0), 1);
        assert_eq!(l.select_sublink(1.0), 1);
        assert_eq!(l.select_sublink(-7.0), 0);
        assert_eq!(l.select_sublink(7.0), 1);
        assert_eq!(l.select_sublink(-1.0), 0);
    }

    #[test]
    fn uniform_and_general_selection_agree() {
        let u = LinkShape::uniform(3, 7, -1.3, 2.1, -1.0, 1.0).unwrap();
        let g = LinkShape::with_breakpoints(
            u.node_set_arc().clone(),
            u.breakpoints().to_vec(),
            -1.3,
            2.1,
            -1.0,
            1.0,
        )
        .unwrap();
        let mut xs: Vec<f64> = (0..=2000).map(|i| -1.5 + 3.8 * i as f64 / 2000.0).collect();
        xs.extend_from_slice(u.breakpoints());
        for x in xs {
            assert_eq!(u.select_sublink(x), g.select_sublink(x), "x={x}");
        }
    }

    #[test]
    fn to_local_examples() {
        let l = two_piece();
        assert_abs_diff_eq!(l.to_local(0, -0.5).unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(l.to_local(1, 1.0).unwrap(), 1.0);
        let input = build_link(2, 1, 0.0, 255.0, -1.0, 1.0).unwrap();
        assert_eq!(input.to_local(0, 0.0).unwrap(), -1.0);
        assert!(matches!(l.to_local(2, 0.0), Err(Error::Index { .. })));
    }

    #[test]
    fn eval_examples() {
        let mut l = build_link(3, 1, -1.0, 1.0, -1.0, 1.0).unwrap();
        l.init_line(&SymmetricLine, 1.0);
        let out = l.eval(0.3).unwrap();
        assert_abs_diff_eq!(out.value, 0.3, epsilon = 1e-15);
        assert_eq!(out.active, 0);

        let mut l = two_piece();
        l.weights_mut().copy_from_slice(&[-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(l.eval(-0.2).unwrap().value, -1.0);
        assert_eq!(l.eval(0.2).unwrap().value, 1.0);

        let input = PiecewiseLink::fixed_linear(0.0, 255.0, -1.0, 1.0).unwrap();
        assert_abs_diff_eq!(input.eval(127.5).unwrap().value, 0.0, epsilon = 1e-15);
        assert!(!input.is_trainable());

        assert!(matches!(l.eval(f64::NAN), Err(Error::NumericInput(_))));
        let out = l.eval(3.0).unwrap();
        assert!(out.clamped);
        assert_eq!(out.active, 1);
    }

    #[test]
    fn grad_input_examples() {
        let mut l = build_link(2, 1, -1.0, 1.0, -1.0, 1.0).unwrap();
        l.init_line(&SymmetricLine, 1.0);
        for x in [-0.9, 0.0, 0.4] {
            assert_abs_diff_eq!(l.grad_input(x, 0).unwrap(), 1.0, epsilon = 1e-14);
        }
        let mut c = two_piece();
        c.weights_mut().copy_from_slice(&[0.5, 0.5, -0.2, 0.7]);
        assert_eq!(c.grad_input(-0.4, 0).unwrap(), 0.0);
        // At the breakpoint the right-hand piece is active: slope (0.7+0.2)/1.
        assert_abs_diff_eq!(c.grad_input(0.0, 1).unwrap(), 0.9, epsilon = 1e-15);
        assert!(matches!(c.grad_input(0.0, 0), Err(Error::Consistency(_))));
    }

    #[test]
    fn grad_weights_examples() {
        let l = build_link(3, 1, -1.0, 1.0, -1.0, 1.0).unwrap();
        let g = l.grad_weights(0.5, 0).unwrap();
        for (a, b) in g.iter().zip([-0.125, 0.75, 0.375]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(l.grad_weights(0.0, 0).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn init_line_examples() {
        let mut l = build_link(3, 1, -2.0, 2.0, -1.0, 1.0).unwrap();
        l.init_line(&SymmetricLine, 0.5);
        assert_eq!(l.weights(), &[-0.5, 0.0, 0.5]);
        l.init_line(&SymmetricLine, 0.0);
        assert!(l.weights().iter().all(|&w| w == 0.0));

        let mut l = build_link(3, 3, -1.25, 1.25, -1.0, 1.0).unwrap();
        l.init_line(&SymmetricLine, 1.0);
        for i in 0..=100 {
            let x = -1.25 + 2.5 * i as f64 / 100.0;
            assert_abs_diff_eq!(l.eval(x).unwrap().value, x / 1.25, epsilon = 1e-14);
        }

        let mut l = build_link(2, 1, -1.0, 1.0, -1.0, 3.0).unwrap();
        l.init_line(&OffsetLine, 1.0);
        assert_eq!(l.weights(), &[1.0, 2.0]);
    }

    #[test]
    fn clamp_examples() {
        let mut l = two_piece();
        l.weights_mut().copy_from_slice(&[1.7, -3.0, 0.25, -0.5]);
        l.clamp_weights();
        assert_eq!(l.weights(), &[1.0, -1.0, 0.25, -0.5]);
        let before: Vec<u64> = l.weights().iter().map(|w| w.to_bits()).collect();
        l.clamp_weights();
        let after: Vec<u64> = l.weights().iter().map(|w| w.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn recommended_range_examples() {
        assert_abs_diff_eq!(recommended_range(3, 1.0).unwrap(), 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(recommended_range(2, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(recommended_range(6, 1.0).unwrap(), 1.989, epsilon = 5e-4);
        assert_abs_diff_eq!(recommended_range(3, 2.0).unwrap(), 2.5, epsilon = 1e-12);
        assert!(matches!(recommended_range(11, 1.0), Err(Error::Config(_))));
        assert!(matches!(recommended_range(1, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn overshoot_table_matches_published_ceilings() {
        // The published table lists each maximum rounded up to three decimals.
        let published = [1.0, 1.25, 1.667, 1.799, 1.989, 2.083, 2.203, 2.275, 2.362];
        for (i, (&p, &t)) in overshoot_table().iter().zip(&published).enumerate() {
            let ceil = (p * 1000.0 - 1e-9).ceil() / 1000.0;
            assert_abs_diff_eq!(ceil, t, epsilon = 1e-12);
            assert!(p <= t + 1e-12 && t - p < 1e-3, "n={} p={p}", i + 2);
        }
    }

    #[test]
    fn input_decay_chain() {
        // Six line-initialized quadratic links in series shrink x by 1/1.25 each.
        let r = recommended_range(3, 1.0).unwrap();
        let mut l = build_link(3, 2, -r, r, -1.0, 1.0).unwrap();
        l.init_line(&SymmetricLine, 1.0);
        let x_in = 0.9;
        let mut x = x_in;
        for _ in 0..6 {
            x = l.eval(x).unwrap().value;
        }
        assert_abs_diff_eq!(x, (1.0f64 / 1.25).powi(6) * x_in, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn exactly_one_active(x in -5.0f64..5.0, n_sub in 1usize..8) {
            let s = LinkShape::uniform(4, n_sub, -1.5, 1.5, -1.0, 1.0).unwrap();
            let k = s.select_sublink(x);
            prop_assert!(k < n_sub);
            let xc = x.clamp(-1.5, 1.5);
            let (lo, hi) = s.sublink_bounds(k).unwrap();
            let last = k + 1 == n_sub;
            prop_assert!(xc >= lo && (xc < hi || (last && xc <= hi)));
        }

        #[test]
        fn bounded_output(
            n in 2usize..=10, n_sub in 1usize..5, x in -1.0f64..=1.0,
            w in proptest::collection::vec(-1.0f64..=1.0, 40)
        ) {
            let mut l = build_link(n, n_sub, -1.0, 1.0, -1.0, 1.0).unwrap();
            let len = l.weights().len();
            l.weights_mut().copy_from_slice(&w[..len]);
            let p = recommended_range(n, 1.0).unwrap();
            prop_assert!(l.eval(x).unwrap().value.abs() <= p + 1e-12);
        }

        #[test]
        fn grad_input_matches_finite_difference(
            n in 2usize..=6, n_sub in 1usize..5, x in -1.2f64..1.2,
            w in proptest::collection::vec(-1.0f64..=1.0, 24)
        ) {
            let mut l = build_link(n, n_sub, -1.25, 1.25, -1.0, 1.0).unwrap();
            let len = l.weights().len();
            l.weights_mut().copy_from_slice(&w[..len]);
            let near = l.shape().breakpoints().iter().any(|&a| (a - x).abs() < 1e-4);
            prop_assume!(!near);
            let k = l.select_sublink(x);
            let h = 1e-6;
            let fd = (l.eval(x + h).unwrap().value - l.eval(x - h).unwrap().value) / (2.0 * h);
            let an = l.grad_input(x, k).unwrap();
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "fd={} an={}", fd, an);
        }

        #[test]
        fn grad_weights_matches_perturbation(
            n in 2usize..=6, n_sub in 1usize..5, x in -1.0f64..1.0,
            w in proptest::collection::vec(-1.0f64..=1.0, 24)
        ) {
            let mut l = build_link(n, n_sub, -1.0, 1.0, -1.0, 1.0).unwrap();
            let len = l.weights().len();
            l.weights_mut().copy_from_slice(&w[..len]);
            let k = l.select_sublink(x);
            let g = l.grad_weights(x, k).unwrap();
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let base = l.eval(x).unwrap().value;
            for idx in 0..len {
                let mut p = l.clone();
                p.weights_mut()[idx] += 1e-3;
                let dy = (p.eval(x).unwrap().value - base) / 1e-3;
                if idx / n == k {
                    prop_assert!((dy - g[idx % n]).abs() < 1e-8);
                } else {
                    prop_assert_eq!(p.eval(x).unwrap().value, base);
                }
            }
        }
    }
}
