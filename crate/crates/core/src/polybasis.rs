//! Lagrange interpolation on Chebyshev-Lobatto nodes over the reference
//! interval `[-1, 1]`.
//!
//! A sub-link stores one weight per node, and the weight *is* the value of
//! the polynomial at that node. Evaluation uses the direct product form with
//! precomputed denominators `prod_{m != j} (x_j - x_m)`; orders stay small
//! (at most 10 points) so the product form is well conditioned.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Largest order with a tabulated overshoot value.
pub const MAX_POINTS: usize = 10;

/// Chebyshev-Lobatto nodes and the Lagrange basis built on them.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    nodes: Vec<f64>,
    /// `prod_{m != j} (x_j - x_m)` for each node `j`.
    denominators: Vec<f64>,
}

/// Builds the node set for `n_points` interpolation points.
pub fn make_nodes(n_points: usize) -> Result<NodeSet> {
    NodeSet::new(n_points)
}

impl NodeSet {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidOrder(n_points));
        }
        let last = n_points - 1;
        let mut nodes = vec![0.0; n_points];
        // Fill the lower half and mirror it so the set is exactly antisymmetric;
        // a center node (odd counts) is then exactly zero.
        for k in 0..n_points.div_ceil(2) {
            let x = -(k as f64 * PI / last as f64).cos();
            nodes[k] = x;
            nodes[last - k] = -x;
        }
        if n_points % 2 == 1 {
            nodes[last / 2] = 0.0;
        }
        nodes[0] = -1.0;
        nodes[last] = 1.0;

        let denominators = (0..n_points)
            .map(|j| {
                (0..n_points)
                    .filter(|&m| m != j)
                    .map(|m| nodes[j] - nodes[m])
                    .product()
            })
            .collect();
        Ok(NodeSet {
            nodes,
            denominators,
        })
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn denominators(&self) -> &[f64] {
        &self.denominators
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.n_points() {
            return Err(Error::Index {
                index: j,
                len: self.n_points(),
            });
        }
        Ok(())
    }

    fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.n_points() {
            return Err(Error::Shape {
                expected: self.n_points(),
                got: weights.len(),
            });
        }
        Ok(())
    }

    /// `B_j(x)`.
    pub fn basis_value(&self, j: usize, x: f64) -> Result<f64> {
        self.check_index(j)?;
        if x == self.nodes[j] {
            return Ok(1.0);
        }
        let num: f64 = self
            .nodes
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != j)
            .map(|(_, &xm)| x - xm)
            .product();
        Ok(num / self.denominators[j])
    }

    /// `dB_j/dx` from the product rule:
    /// `sum_{m != j} prod_{l != j, m} (x - x_l) / prod_{m != j} (x_j - x_m)`.
    pub fn basis_derivative(&self, j: usize, x: f64) -> Result<f64> {
        self.check_index(j)?;
        let n = self.n_points();
        let mut sum = 0.0;
        for m in (0..n).filter(|&m| m != j) {
            let term: f64 = (0..n)
                .filter(|&l| l != j && l != m)
                .map(|l| x - self.nodes[l])
                .product();
            sum += term;
        }
        Ok(sum / self.denominators[j])
    }

    /// `sum_i w_i B_i(x)`. Returns the weight itself when `x` is a node.
    pub fn interpolate(&self, weights: &[f64], x: f64) -> Result<f64> {
        self.check_weights(weights)?;
        if let Some(j) = self.nodes.iter().position(|&xn| xn == x) {
            return Ok(weights[j]);
        }
        let mut basis = vec![0.0; self.n_points()];
        self.eval_basis(x, &mut basis);
        Ok(dot(weights, &basis))
    }

    pub fn interpolate_derivative(&self, weights: &[f64], x: f64) -> Result<f64> {
        self.check_weights(weights)?;
        let mut d = vec![0.0; self.n_points()];
        self.eval_basis_derivative(x, &mut d);
        Ok(dot(weights, &d))
    }

    /// Writes all basis values at `x` into `out` (length `n_points`).
    ///
    /// Exact one-hot output when `x` coincides with a node.
    pub fn eval_basis(&self, x: f64, out: &mut [f64]) {
        let n = self.n_points();
        debug_assert_eq!(out.len(), n);
        if let Some(j) = self.nodes.iter().position(|&xn| xn == x) {
            out.fill(0.0);
            out[j] = 1.0;
            return;
        }
        // prefix[j] = prod_{m<j} (x - x_m); the suffix product is folded in on
        // the way back.
        let mut prefix = 1.0;
        for j in 0..n {
            out[j] = prefix;
            prefix *= x - self.nodes[j];
        }
        let mut suffix = 1.0;
        for j in (0..n).rev() {
            out[j] *= suffix / self.denominators[j];
            suffix *= x - self.nodes[j];
        }
    }

    /// Writes all basis derivatives at `x` into `out`.
    pub fn eval_basis_derivative(&self, x: f64, out: &mut [f64]) {
        let n = self.n_points();
        debug_assert_eq!(out.len(), n);
        let mut diffs = [0.0; MAX_POINTS];
        let diffs = if n <= MAX_POINTS {
            &mut diffs[..n]
        } else {
            // Orders above the table are allowed for evaluation, just slower.
            return self.eval_basis_derivative_slow(x, out);
        };
        for (d, &xm) in diffs.iter_mut().zip(&self.nodes) {
            *d = x - xm;
        }
        for j in 0..n {
            let mut sum = 0.0;
            for m in 0..n {
                if m == j {
                    continue;
                }
                let mut term = 1.0;
                for (l, &d) in diffs.iter().enumerate() {
                    if l != j && l != m {
                        term *= d;
                    }
                }
                sum += term;
            }
            out[j] = sum / self.denominators[j];
        }
    }

    fn eval_basis_derivative_slow(&self, x: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.basis_derivative(j, x).expect("index in range");
        }
    }

    /// The Lebesgue function `sum_j |B_j(x)|`: the largest `|f(x)|` reachable
    /// with every weight in `[-1, 1]`.
    pub fn lebesgue(&self, x: f64) -> f64 {
        let mut b = vec![0.0; self.n_points()];
        self.eval_basis(x, &mut b);
        b.iter().map(|v| v.abs()).sum()
    }

    /// Maximum of the Lebesgue function over `[-1, 1]`.
    ///
    /// Dense sampling locates the best sample, then golden-section search
    /// refines inside the two neighbouring sample intervals until the bracket
    /// is narrower than `tolerance`.
    pub fn overshoot_max(&self, tolerance: f64) -> f64 {
        const SAMPLES: usize = 20_000;
        let tolerance = if tolerance > 0.0 { tolerance } else { 1e-12 };
        let step = 2.0 / SAMPLES as f64;
        let mut best_x = -1.0;
        let mut best = f64::NEG_INFINITY;
        let mut basis = vec![0.0; self.n_points()];
        for i in 0..=SAMPLES {
            let x = -1.0 + i as f64 * step;
            self.eval_basis(x, &mut basis);
            let v: f64 = basis.iter().map(|b| b.abs()).sum();
            if v > best {
                best = v;
                best_x = x;
            }
        }

        let (mut a, mut b) = ((best_x - step).max(-1.0), (best_x + step).min(1.0));
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = self.lebesgue(c);
        let mut fd = self.lebesgue(d);
        while b - a > tolerance {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = self.lebesgue(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = self.lebesgue(d);
            }
        }
        best.max(self.lebesgue(0.5 * (a + b)))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn node_examples() {
        assert_eq!(make_nodes(2).unwrap().nodes(), &[-1.0, 1.0]);
        assert_eq!(make_nodes(3).unwrap().nodes(), &[-1.0, 0.0, 1.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let n5 = make_nodes(5).unwrap();
        for (got, want) in n5.nodes().iter().zip([-1.0, -h, 0.0, h, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_low_order() {
        assert!(matches!(make_nodes(1), Err(Error::InvalidOrder(1))));
        assert!(matches!(make_nodes(0), Err(Error::InvalidOrder(0))));
    }

    #[test]
    fn node_invariants() {
        for n in 2..=MAX_POINTS {
            let ns = make_nodes(n).unwrap();
            let x = ns.nodes();
            assert_eq!(x[0], -1.0);
            assert_eq!(x[n - 1], 1.0);
            for k in 0..n {
                let want = -(k as f64 * PI / (n - 1) as f64).cos();
                assert!((x[k] - want).abs() <= 1e-15, "n={n} k={k}");
                if k > 0 {
                    assert!(x[k] > x[k - 1]);
                }
            }
            assert!(ns.denominators().iter().all(|&d| d != 0.0));
        }
    }

    #[test]
    fn quadratic_basis_values() {
        let ns = make_nodes(3).unwrap();
        assert_abs_diff_eq!(ns.basis_value(1, 0.5).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(ns.basis_value(0, 0.5).unwrap(), -0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(ns.basis_value(2, 0.5).unwrap(), 0.375, epsilon = 1e-15);
        assert!(matches!(ns.basis_value(3, 0.0), Err(Error::Index { .. })));
    }

    #[test]
    fn basis_derivative_examples() {
        let lin = make_nodes(2).unwrap();
        for x in [-1.0, -0.3, 0.0, 0.9] {
            assert_abs_diff_eq!(lin.basis_derivative(0, x).unwrap(), -0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(lin.basis_derivative(1, x).unwrap(), 0.5, epsilon = 1e-15);
        }
        let quad = make_nodes(3).unwrap();
        assert_abs_diff_eq!(quad.basis_derivative(1, 0.5).unwrap(), -1.0, epsilon = 1e-15);
        for n in 2..=MAX_POINTS {
            let ns = make_nodes(n).unwrap();
            for x in [-0.77, 0.1, 0.5] {
                let s: f64 = (0..n).map(|j| ns.basis_derivative(j, x).unwrap()).sum();
                assert_abs_diff_eq!(s, 0.0, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn interpolate_examples() {
        for n in 2..=MAX_POINTS {
            let ns = make_nodes(n).unwrap();
            let identity = ns.nodes().to_vec();
            assert_abs_diff_eq!(ns.interpolate(&identity, 0.3).unwrap(), 0.3, epsilon = 1e-13);
            assert_abs_diff_eq!(
                ns.interpolate_derivative(&identity, -0.42).unwrap(),
                1.0,
                epsilon = 1e-11
            );
            let c = vec![0.37; n];
            assert_abs_diff_eq!(ns.interpolate(&c, -0.8).unwrap(), 0.37, epsilon = 1e-13);
            assert_abs_diff_eq!(ns.interpolate_derivative(&c, 0.2).unwrap(), 0.0, epsilon = 1e-11);
        }
        let q = make_nodes(3).unwrap();
        assert_abs_diff_eq!(q.interpolate(&[0.0, 1.0, 0.0], 0.5).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(
            q.interpolate_derivative(&[0.0, 1.0, 0.0], 0.5).unwrap(),
            -1.0,
            epsilon = 1e-15
        );
        assert!(matches!(q.interpolate(&[1.0, 2.0], 0.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn exact_at_nodes() {
        let ns = make_nodes(7).unwrap();
        let w = [0.1, -0.4, 0.9, 0.3, -1.0, 0.25, 0.6];
        for (j, &x) in ns.nodes().iter().enumerate() {
            assert_eq!(ns.interpolate(&w, x).unwrap(), w[j]);
        }
    }

    #[test]
    fn small_overshoot_values() {
        assert_abs_diff_eq!(make_nodes(2).unwrap().overshoot_max(1e-12), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(make_nodes(3).unwrap().overshoot_max(1e-12), 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(make_nodes(5).unwrap().overshoot_max(1e-12), 1.799, epsilon = 5e-4);
    }

    proptest! {
        #[test]
        fn partition_of_unity(n in 2usize..=MAX_POINTS, x in -1.0f64..=1.0) {
            let ns = make_nodes(n).unwrap();
            let mut b = vec![0.0; n];
            ns.eval_basis(x, &mut b);
            let s: f64 = b.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn derivative_matches_central_difference(
            n in 2usize..=MAX_POINTS, x in -0.999f64..0.999, j in 0usize..MAX_POINTS
        ) {
            let j = j % n;
            let ns = make_nodes(n).unwrap();
            let h = 1e-6;
            let fd = (ns.basis_value(j, x + h).unwrap() - ns.basis_value(j, x - h).unwrap()) / (2.0 * h);
            let an = ns.basis_derivative(j, x).unwrap();
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "fd={} an={}", fd, an);
        }

        #[test]
        fn vector_and_scalar_paths_agree(n in 2usize..=MAX_POINTS, x in -1.0f64..=1.0) {
            let ns = make_nodes(n).unwrap();
            let mut b = vec![0.0; n];
            let mut db = vec![0.0; n];
            ns.eval_basis(x, &mut b);
            ns.eval_basis_derivative(x, &mut db);
            for j in 0..n {
                prop_assert!((b[j] - ns.basis_value(j, x).unwrap()).abs() < 1e-13);
                prop_assert!((db[j] - ns.basis_derivative(j, x).unwrap()).abs() < 1e-11);
            }
        }

        #[test]
        fn bounded_by_overshoot(
            n in 2usize..=MAX_POINTS,
            x in -1.0f64..=1.0,
            w in proptest::collection::vec(-1.0f64..=1.0, MAX_POINTS)
        ) {
            let ns = make_nodes(n).unwrap();
            let p = ns.overshoot_max(1e-10);
            let y = ns.interpolate(&w[..n], x).unwrap();
            prop_assert!(y.abs() <= p + 1e-12);
        }
    }
}
