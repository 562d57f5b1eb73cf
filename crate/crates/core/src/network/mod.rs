//! Layered networks of averaging units joined by piecewise links.
//!
//! Connections between two consecutive layers form a [`Block`]. All links in
//! a block share one [`LinkShape`], so the per-source work (sub-link choice,
//! basis values) is done once per unit rather than once per link. Edges are
//! stored grouped by destination unit.

mod checkpoint;

use std::fmt::Write as _;
use std::ops::Range;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::link::{init_weights, recommended_range, LineInit, LinkShape, PiecewiseLink};
use crate::polybasis::dot;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

/// Unit layout of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Flat(usize),
    Grid { rows: usize, cols: usize },
}

impl LayerShape {
    pub fn len(&self) -> usize {
        match *self {
            LayerShape::Flat(n) => n,
            LayerShape::Grid { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Settings for the trainable links of a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConfig {
    pub n_points: usize,
    pub n_sublinks: usize,
    pub w_min: f64,
    pub w_max: f64,
    /// Half-width of the link input range. `None` uses the overshoot bound
    /// `p_max * max(|w_min|, |w_max|)`.
    pub range: Option<f64>,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            n_points: 3,
            n_sublinks: 2,
            w_min: -1.0,
            w_max: 1.0,
            range: None,
        }
    }
}

impl LinkConfig {
    pub fn new(n_points: usize, n_sublinks: usize) -> Self {
        LinkConfig {
            n_points,
            n_sublinks,
            ..Self::default()
        }
    }

    fn weight_magnitude(&self) -> f64 {
        self.w_min.abs().max(self.w_max.abs())
    }

    pub fn input_half_range(&self) -> Result<f64> {
        match self.range {
            Some(r) if r > 0.0 && r.is_finite() => Ok(r),
            Some(r) => Err(Error::config(format!("link range must be positive, got {r}"))),
            None => recommended_range(self.n_points, self.weight_magnitude()),
        }
    }

    /// Largest magnitude a link with these settings can emit.
    pub fn output_bound(&self) -> Result<f64> {
        recommended_range(self.n_points, self.weight_magnitude())
    }

    pub fn shape(&self) -> Result<LinkShape> {
        let r = self.input_half_range()?;
        LinkShape::uniform(self.n_points, self.n_sublinks, -r, r, self.w_min, self.w_max)
    }
}

/// Links from one layer to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    shape: Arc<LinkShape>,
    n_src: usize,
    n_dst: usize,
    /// `offsets[d]..offsets[d + 1]` indexes the incoming edges of unit `d`.
    offsets: Vec<usize>,
    sources: Vec<u32>,
    /// `[edge][sub-link][node]`.
    weights: Vec<f64>,
}

impl Block {
    fn from_incoming(shape: Arc<LinkShape>, n_src: usize, incoming: Vec<Vec<u32>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(incoming.len() + 1);
        let mut sources = Vec::new();
        offsets.push(0);
        for srcs in &incoming {
            if srcs.is_empty() {
                return Err(Error::config("every unit needs at least one incoming link"));
            }
            sources.extend_from_slice(srcs);
            offsets.push(sources.len());
        }
        let n_weights = sources.len() * shape.weights_per_link();
        Ok(Block {
            shape,
            n_src,
            n_dst: incoming.len(),
            offsets,
            sources,
            weights: vec![0.0; n_weights],
        })
    }

    pub fn shape(&self) -> &LinkShape {
        &self.shape
    }

    pub fn n_sources(&self) -> usize {
        self.n_src
    }

    pub fn n_destinations(&self) -> usize {
        self.n_dst
    }

    pub fn n_edges(&self) -> usize {
        self.sources.len()
    }

    /// Edge indices entering `dst`.
    pub fn incoming(&self, dst: usize) -> Range<usize> {
        self.offsets[dst]..self.offsets[dst + 1]
    }

    pub fn source(&self, edge: usize) -> usize {
        self.sources[edge] as usize
    }

    pub fn sources(&self) -> &[u32] {
        &self.sources
    }

    pub fn destination(&self, edge: usize) -> usize {
        self.offsets.partition_point(|&o| o <= edge) - 1
    }

    /// `(edge, source, destination)` for every edge.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n_dst).flat_map(move |d| self.incoming(d).map(move |e| (e, self.source(e), d)))
    }

    pub fn find_edge(&self, src: usize, dst: usize) -> Option<usize> {
        self.incoming(dst).find(|&e| self.source(e) == src)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn edge_weights(&self, edge: usize) -> &[f64] {
        let n = self.shape.weights_per_link();
        &self.weights[edge * n..(edge + 1) * n]
    }

    pub fn edge_weights_mut(&mut self, edge: usize) -> &mut [f64] {
        let n = self.shape.weights_per_link();
        &mut self.weights[edge * n..(edge + 1) * n]
    }

    /// Offset of the first weight of `sub` on `edge` in [`Block::weights`].
    #[inline]
    pub fn weight_offset(&self, edge: usize, sub: usize) -> usize {
        let np = self.shape.n_points();
        edge * self.shape.weights_per_link() + sub * np
    }

    /// A standalone copy of one link.
    pub fn link(&self, edge: usize) -> PiecewiseLink {
        PiecewiseLink::with_weights(self.shape.clone(), self.edge_weights(edge).to_vec(), true)
            .expect("edge weights match the block shape")
    }

    /// Clamps an individual weight to the block bounds.
    #[inline]
    pub fn clamp(&self, w: f64) -> f64 {
        self.shape.clamp_weight(w)
    }
}

/// A feed-forward network. Layer 0 holds the input units (one per feature,
/// fed through fixed input links); the last layer holds the output units
/// (read through fixed output links).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerShape>,
    blocks: Vec<Block>,
    input_links: Vec<PiecewiseLink>,
    output_links: Vec<PiecewiseLink>,
    seed: u64,
}

/// Every unit of layer `l` feeds every unit of layer `l + 1`.
pub fn build_fully_connected(layer_sizes: &[usize], link: &LinkConfig) -> Result<Network> {
    if layer_sizes.len() < 2 {
        return Err(Error::config("a network needs at least two layers"));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::config("layer sizes must be at least 1"));
    }
    let shape = Arc::new(link.shape()?);
    let blocks = layer_sizes
        .windows(2)
        .map(|w| {
            let all: Vec<u32> = (0..w[0] as u32).collect();
            Block::from_incoming(shape.clone(), w[0], vec![all; w[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    let layers = layer_sizes.iter().map(|&n| LayerShape::Flat(n)).collect();
    Network::assemble(layers, blocks, link)
}

/// Grid layers where unit `(i, j)` listens to every unit of the previous
/// layer within Chebyshev distance `width`.
pub fn build_stencil(
    rows: usize,
    cols: usize,
    n_hidden: usize,
    width: usize,
    link: &LinkConfig,
) -> Result<Network> {
    if rows == 0 || cols == 0 {
        return Err(Error::config("grid must be non-empty"));
    }
    if width == 0 || width >= rows.max(cols) {
        return Err(Error::config(format!(
            "stencil width {width} does not fit a {rows}x{cols} grid"
        )));
    }
    let shape = Arc::new(link.shape()?);
    let mut incoming = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut srcs = Vec::new();
            for si in i.saturating_sub(width)..=(i + width).min(rows - 1) {
                for sj in j.saturating_sub(width)..=(j + width).min(cols - 1) {
                    srcs.push((si * cols + sj) as u32);
                }
            }
            incoming.push(srcs);
        }
    }
    let grid = LayerShape::Grid { rows, cols };
    let blocks = (0..=n_hidden)
        .map(|_| Block::from_incoming(shape.clone(), rows * cols, incoming.clone()))
        .collect::<Result<Vec<_>>>()?;
    Network::assemble(vec![grid; n_hidden + 2], blocks, link)
}

/// Mean of the incoming link outputs.
pub fn unit_activation(incoming: &[f64]) -> Result<f64> {
    if incoming.is_empty() {
        return Err(Error::Consistency("unit has no active incoming link".into()));
    }
    Ok(incoming.iter().sum::<f64>() / incoming.len() as f64)
}

impl Network {
    fn assemble(layers: Vec<LayerShape>, blocks: Vec<Block>, link: &LinkConfig) -> Result<Self> {
        let n_in = layers[0].len();
        let n_out = layers[layers.len() - 1].len();
        let input_links = (0..n_in)
            .map(|_| PiecewiseLink::fixed_linear(-1.0, 1.0, -1.0, 1.0))
            .collect::<Result<Vec<_>>>()?;
        let p = link.output_bound()?;
        let output_links = (0..n_out)
            .map(|_| PiecewiseLink::fixed_linear(-p, p, -p, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Network {
            layers,
            blocks,
            input_links,
            output_links,
            seed: 0,
        })
    }

    /// Replaces the fixed input and output links. Input feature `i` maps
    /// `input_ranges[i]` onto `[-1, 1]`; output `o` maps internal `[-1, 1]`
    /// onto `output_ranges[o]`. Output links accept the whole reachable
    /// internal range and extend the same line beyond `[-1, 1]`.
    pub fn attach_io_links(&mut self, input_ranges: &[(f64, f64)], output_ranges: &[(f64, f64)]) -> Result<()> {
        if input_ranges.len() != self.n_inputs() {
            return Err(Error::config(format!(
                "{} input ranges for {} inputs",
                input_ranges.len(),
                self.n_inputs()
            )));
        }
        if output_ranges.len() != self.n_outputs() {
            return Err(Error::config(format!(
                "{} output ranges for {} outputs",
                output_ranges.len(),
                self.n_outputs()
            )));
        }
        self.input_links = input_ranges
            .iter()
            .map(|&(lo, hi)| PiecewiseLink::fixed_linear(lo, hi, -1.0, 1.0))
            .collect::<Result<Vec<_>>>()?;
        let p = self.output_bound();
        self.output_links = output_ranges
            .iter()
            .map(|&(lo, hi)| {
                let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                PiecewiseLink::fixed_linear(-p, p, mid - half * p, mid + half * p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    fn output_bound(&self) -> f64 {
        let last = self.blocks[self.blocks.len() - 1].shape();
        let (lo, hi) = last.weight_bounds();
        recommended_range(last.n_points(), lo.abs().max(hi.abs()))
            .expect("block shapes use supported orders")
    }

    /// Line-initializes every trainable link with a slope drawn from
    /// `U[-1, 1]` per link.
    pub fn init_lines<R: Rng + ?Sized>(&mut self, rule: &dyn LineInit, rng: &mut R) {
        for block in &mut self.blocks {
            let per = block.shape.weights_per_link();
            let shape = block.shape.clone();
            for chunk in block.weights.chunks_mut(per) {
                let slope = rng.gen_range(-1.0..=1.0);
                init_weights(&shape, chunk, rule, slope);
            }
        }
    }

    /// Uniform random weights inside the bounds; used by tests and checks.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for block in &mut self.blocks {
            let (lo, hi) = block.shape.weight_bounds();
            for w in &mut block.weights {
                *w = rng.gen_range(lo..=hi);
            }
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(LayerShape::len).collect()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].len()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn block(&self, index: usize) -> &Block {
        &self.blocks[index]
    }

    pub fn n_edges(&self) -> usize {
        self.blocks.iter().map(Block::n_edges).sum()
    }

    pub fn n_weights(&self) -> usize {
        self.blocks.iter().map(|b| b.weights.len()).sum()
    }

    pub fn input_links(&self) -> &[PiecewiseLink] {
        &self.input_links
    }

    pub fn output_links(&self) -> &[PiecewiseLink] {
        &self.output_links
    }

    pub fn forward(&self, input: &[f64], mask: Option<&DropoutMask>) -> Result<(Vec<f64>, Trace)> {
        let mut trace = Trace::default();
        self.forward_into(input, mask, &mut trace)?;
        Ok((trace.outputs.clone(), trace))
    }

    /// Forward pass into a reusable trace.
    pub fn forward_into(&self, input: &[f64], mask: Option<&DropoutMask>, t: &mut Trace) -> Result<()> {
        if input.len() != self.n_inputs() {
            return Err(Error::Shape {
                expected: self.n_inputs(),
                got: input.len(),
            });
        }
        if let Some(m) = mask {
            if m.active.len() != self.layers.len()
                || m.active.iter().zip(&self.layers).any(|(a, l)| a.len() != l.len())
            {
                return Err(Error::config("dropout mask does not match the network"));
            }
        }
        t.prepare(self);
        t.out_of_range = 0;

        for (i, (&x, link)) in input.iter().zip(&self.input_links).enumerate() {
            let out = link.eval(x)?;
            t.values[0][i] = out.value;
            t.out_of_range += out.clamped as u64;
        }
        for (l, act) in t.active.iter_mut().enumerate() {
            match mask {
                Some(m) => act.copy_from_slice(&m.active[l]),
                None => act.fill(true),
            }
        }

        for (b, block) in self.blocks.iter().enumerate() {
            let shape = &block.shape;
            let np = shape.n_points();
            let wpl = shape.weights_per_link();
            let nodes = shape.node_set();
            let (lower, upper) = t.values.split_at_mut(b + 1);
            let src_vals = &lower[b];
            let dst_vals = &mut upper[0];
            let src_active = &t.active[b];
            let dst_active = &t.active[b + 1];
            let sub = &mut t.sub[b];
            let basis = &mut t.basis[b];
            let dbasis = &mut t.dbasis[b];
            let clamped = &mut t.clamped[b];

            for s in 0..block.n_src {
                if !src_active[s] {
                    continue;
                }
                let loc = shape.locate(src_vals[s]);
                sub[s] = loc.sub as u32;
                clamped[s] = loc.clamped;
                nodes.eval_basis(loc.local, &mut basis[s * np..(s + 1) * np]);
                let db = &mut dbasis[s * np..(s + 1) * np];
                nodes.eval_basis_derivative(loc.local, db);
                for v in db.iter_mut() {
                    *v *= loc.chain;
                }
            }

            let n_out = &mut t.n_out[b];
            n_out.fill(0);
            let n_in = &mut t.n_in[b + 1];
            for d in 0..block.n_dst {
                if !dst_active[d] {
                    dst_vals[d] = 0.0;
                    n_in[d] = 0;
                    continue;
                }
                let mut sum = 0.0;
                let mut count = 0u32;
                for e in block.incoming(d) {
                    let s = block.sources[e] as usize;
                    if !src_active[s] {
                        continue;
                    }
                    let off = e * wpl + sub[s] as usize * np;
                    sum += dot(&block.weights[off..off + np], &basis[s * np..(s + 1) * np]);
                    count += 1;
                    n_out[s] += 1;
                }
                if count == 0 {
                    return Err(Error::Consistency(format!(
                        "unit {d} of layer {} has no active incoming link",
                        b + 1
                    )));
                }
                dst_vals[d] = sum / count as f64;
                n_in[d] = count;
            }
            t.out_of_range += (0..block.n_src)
                .filter(|&s| src_active[s] && clamped[s])
                .map(|s| n_out[s] as u64)
                .sum::<u64>();
        }

        let last = t.values.len() - 1;
        for (o, link) in self.output_links.iter().enumerate() {
            let v = t.values[last][o];
            let out = link.eval(v)?;
            t.outputs[o] = out.value;
            t.output_slopes[o] = link.grad_input(v, out.active)?;
            t.out_of_range += out.clamped as u64;
        }
        Ok(())
    }

    /// Outputs only, no dropout.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input, None)?.0)
    }

    /// Structured text description of the topology.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "network seed={}", self.seed);
        for (l, layer) in self.layers.iter().enumerate() {
            let _ = match layer {
                LayerShape::Flat(n) => writeln!(s, "layer {l}: {n} units"),
                LayerShape::Grid { rows, cols } => writeln!(s, "layer {l}: {rows}x{cols} grid"),
            };
        }
        for (b, block) in self.blocks.iter().enumerate() {
            let (r0, r1) = block.shape.range();
            let (w0, w1) = block.shape.weight_bounds();
            let _ = writeln!(
                s,
                "block {b}: {} -> {} units, {} links, {} points x {} sub-links, range [{r0}, {r1}], weights [{w0}, {w1}]",
                block.n_src,
                block.n_dst,
                block.n_edges(),
                block.shape.n_points(),
                block.shape.n_sublinks(),
            );
        }
        let _ = writeln!(s, "input links: {}", self.input_links.len());
        let _ = writeln!(s, "output links: {}", self.output_links.len());
        let _ = writeln!(s, "trainable weights: {}", self.n_weights());
        s
    }

    pub(crate) fn from_parts(
        layers: Vec<LayerShape>,
        blocks: Vec<Block>,
        input_links: Vec<PiecewiseLink>,
        output_links: Vec<PiecewiseLink>,
        seed: u64,
    ) -> Result<Self> {
        if layers.len() < 2 || blocks.len() + 1 != layers.len() {
            return Err(Error::Checkpoint("layer and block counts disagree".into()));
        }
        for (b, block) in blocks.iter().enumerate() {
            if block.n_src != layers[b].len() || block.n_dst != layers[b + 1].len() {
                return Err(Error::Checkpoint(format!("block {b} does not match its layers")));
            }
        }
        if input_links.len() != layers[0].len() || output_links.len() != layers[layers.len() - 1].len() {
            return Err(Error::Checkpoint("input/output link counts disagree".into()));
        }
        Ok(Network {
            layers,
            blocks,
            input_links,
            output_links,
            seed,
        })
    }
}

/// Per-presentation record of the forward pass.
///
/// Per-edge quantities (active sub-link, link input and output) are derived
/// from per-unit data because every link leaving a unit sees the same input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub(crate) values: Vec<Vec<f64>>,
    pub(crate) active: Vec<Vec<bool>>,
    pub(crate) n_in: Vec<Vec<u32>>,
    pub(crate) n_out: Vec<Vec<u32>>,
    /// Per source layer: active sub-link, clamping, basis and chained basis
    /// derivative of each unit's outgoing links.
    pub(crate) sub: Vec<Vec<u32>>,
    pub(crate) clamped: Vec<Vec<bool>>,
    pub(crate) basis: Vec<Vec<f64>>,
    pub(crate) dbasis: Vec<Vec<f64>>,
    pub(crate) outputs: Vec<f64>,
    pub(crate) output_slopes: Vec<f64>,
    pub(crate) out_of_range: u64,
}

impl Trace {
    fn prepare(&mut self, net: &Network) {
        let sizes: Vec<usize> = net.layers.iter().map(LayerShape::len).collect();
        let fits = self.values.len() == sizes.len()
            && self.values.iter().zip(&sizes).all(|(v, &n)| v.len() == n)
            && self
                .basis
                .iter()
                .zip(&net.blocks)
                .all(|(v, b)| v.len() == b.n_src * b.shape.n_points());
        if fits {
            return;
        }
        self.values = sizes.iter().map(|&n| vec![0.0; n]).collect();
        self.active = sizes.iter().map(|&n| vec![true; n]).collect();
        let mut n_in: Vec<Vec<u32>> = sizes.iter().map(|&n| vec![0; n]).collect();
        n_in[0].fill(1);
        self.n_in = n_in;
        self.n_out = sizes.iter().map(|&n| vec![0; n]).collect();
        let src = &sizes[..sizes.len() - 1];
        self.sub = src.iter().map(|&n| vec![0; n]).collect();
        self.clamped = src.iter().map(|&n| vec![false; n]).collect();
        self.basis = net
            .blocks
            .iter()
            .map(|b| vec![0.0; b.n_src * b.shape.n_points()])
            .collect();
        self.dbasis = self.basis.clone();
        let n_out = sizes[sizes.len() - 1];
        self.outputs = vec![0.0; n_out];
        self.output_slopes = vec![0.0; n_out];
        let last = self.n_out.len() - 1;
        self.n_out[last].fill(1);
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn out_of_range(&self) -> u64 {
        self.out_of_range
    }

    pub fn unit_values(&self, layer: usize) -> &[f64] {
        &self.values[layer]
    }

    pub fn is_active(&self, layer: usize, unit: usize) -> bool {
        self.active[layer][unit]
    }

    /// Active in-degree (1 for input units, fed by their input link).
    pub fn n_in(&self, layer: usize, unit: usize) -> u32 {
        self.n_in[layer][unit]
    }

    /// Active out-degree (1 for output units, read by their output link).
    pub fn n_out(&self, layer: usize, unit: usize) -> u32 {
        self.n_out[layer][unit]
    }

    /// The sub-link that fired on an edge, or `None` for a dropped edge.
    pub fn active_sublink(&self, net: &Network, block: usize, edge: usize) -> Option<usize> {
        let b = &net.blocks[block];
        let (s, d) = (b.source(edge), b.destination(edge));
        (self.active[block][s] && self.active[block + 1][d]).then(|| self.sub[block][s] as usize)
    }

    /// The link output on an edge, or `None` for a dropped edge.
    pub fn edge_output(&self, net: &Network, block: usize, edge: usize) -> Option<f64> {
        let sub = self.active_sublink(net, block, edge)?;
        let b = &net.blocks[block];
        let np = b.shape.n_points();
        let s = b.source(edge);
        let off = b.weight_offset(edge, sub);
        Some(dot(&b.weights[off..off + np], &self.basis[block][s * np..(s + 1) * np]))
    }

    /// Number of edges whose link fired.
    pub fn active_edge_count(&self, net: &Network) -> usize {
        (0..net.blocks.len())
            .map(|b| self.n_out[b].iter().map(|&n| n as usize).sum::<usize>())
            .sum()
    }

    /// True when both traces fired the same sub-links on the same units.
    pub fn same_path(&self, other: &Trace) -> bool {
        self.active == other.active
            && self
                .sub
                .iter()
                .zip(&self.active)
                .zip(&other.sub)
                .all(|((a, act), b)| a.iter().zip(act).zip(b).all(|((x, &on), y)| !on || x == y))
            && self.clamped == other.clamped
    }
}

/// Which hidden units take part in training for the current presentations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutMask {
    pub(crate) active: Vec<Vec<bool>>,
}

impl DropoutMask {
    /// Everything active.
    pub fn full(net: &Network) -> Self {
        DropoutMask {
            active: net.layers.iter().map(|l| vec![true; l.len()]).collect(),
        }
    }

    pub fn layer(&self, layer: usize) -> &[bool] {
        &self.active[layer]
    }

    pub fn set(&mut self, layer: usize, unit: usize, on: bool) {
        self.active[layer][unit] = on;
    }

    pub fn n_dropped(&self) -> usize {
        self.active.iter().flatten().filter(|a| !**a).count()
    }
}

const MASK_ATTEMPTS: usize = 1000;

/// Drops each hidden unit with probability `rate`.
///
/// Layers are drawn from the top down. A layer is redrawn until it keeps at
/// least one unit and every active unit above it keeps at least one active
/// source; after repeated failures a random source is switched back on for
/// each starved unit.
pub fn fresh_mask<R: Rng + ?Sized>(net: &Network, rate: f64, rng: &mut R) -> Result<DropoutMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    let mut mask = DropoutMask::full(net);
    if rate == 0.0 {
        return Ok(mask);
    }
    let last = net.layers.len() - 1;
    for l in (1..last).rev() {
        let block = &net.blocks[l];
        let (below, above) = mask.active.split_at_mut(l + 1);
        let layer = &mut below[l];
        let upper = &above[0];
        let starved = |layer: &[bool]| {
            (0..block.n_dst)
                .filter(|&d| upper[d] && !block.incoming(d).any(|e| layer[block.source(e)]))
                .collect::<Vec<_>>()
        };
        let mut ok = false;
        for _ in 0..MASK_ATTEMPTS {
            for a in layer.iter_mut() {
                *a = rng.gen::<f64>() >= rate;
            }
            if layer.iter().any(|&a| a) && starved(layer).is_empty() {
                ok = true;
                break;
            }
        }
        if !ok {
            for d in starved(layer) {
                let range = block.incoming(d);
                let e = rng.gen_range(range);
                layer[block.source(e)] = true;
            }
            if !layer.iter().any(|&a| a) {
                let u = rng.gen_range(0..layer.len());
                layer[u] = true;
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::SymmetricLine;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net() -> Network {
        let cfg = LinkConfig {
            n_points: 2,
            n_sublinks: 1,
            range: Some(1.0),
            ..LinkConfig::default()
        };
        let mut net = build_fully_connected(&[1, 1], &cfg).unwrap();
        net.blocks_mut()[0].weights_mut().copy_from_slice(&[-1.0, 1.0]);
        net
    }

    #[test]
    fn fully_connected_edge_counts() {
        let cfg = LinkConfig::default();
        assert_eq!(build_fully_connected(&[8, 16, 2], &cfg).unwrap().n_edges(), 160);
        assert_eq!(build_fully_connected(&[1, 1], &cfg).unwrap().n_edges(), 1);
        assert_eq!(build_fully_connected(&[2, 3, 2], &cfg).unwrap().n_edges(), 12);
        assert!(matches!(build_fully_connected(&[], &cfg), Err(Error::Config(_))));
        assert!(matches!(build_fully_connected(&[3, 0], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn trainable_links_use_recommended_range() {
        let net = build_fully_connected(&[2, 2], &LinkConfig::new(3, 2)).unwrap();
        let (lo, hi) = net.block(0).shape().range();
        assert_abs_diff_eq!(hi, 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(lo, -1.25, epsilon = 1e-12);
    }

    #[test]
    fn stencil_in_degrees() {
        let cfg = LinkConfig::default();
        let net = build_stencil(7, 7, 1, 1, &cfg).unwrap();
        let b = net.block(0);
        assert_eq!(b.incoming(3 * 7 + 3).len(), 9);
        assert_eq!(b.incoming(0).len(), 4);
        assert_eq!(b.incoming(3).len(), 6);
        let net = build_stencil(7, 7, 1, 2, &cfg).unwrap();
        assert_eq!(net.block(0).incoming(3 * 7 + 3).len(), 25);
        assert_eq!(net.n_layers(), 3);
        assert!(matches!(build_stencil(5, 5, 1, 5, &cfg), Err(Error::Config(_))));
        assert!(matches!(build_stencil(5, 5, 1, 0, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn stencil_neighbourhood_is_square() {
        let net = build_stencil(6, 5, 0, 2, &LinkConfig::default()).unwrap();
        let b = net.block(0);
        for d in 0..30 {
            let (i, j) = (d / 5, d % 5);
            let mut got: Vec<usize> = b.incoming(d).map(|e| b.source(e)).collect();
            got.sort_unstable();
            let want: Vec<usize> = (0..30usize)
                .filter(|&s| (s / 5).abs_diff(i) <= 2 && (s % 5).abs_diff(j) <= 2)
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn io_links() {
        let mut net = build_fully_connected(&[1, 1], &LinkConfig::default()).unwrap();
        net.attach_io_links(&[(0.0, 255.0)], &[(0.0, 100.0)]).unwrap();
        assert_eq!(net.input_links()[0].eval(255.0).unwrap().value, 1.0);
        assert_eq!(net.input_links()[0].eval(0.0).unwrap().value, -1.0);
        let out = &net.output_links()[0];
        assert_abs_diff_eq!(out.eval(-1.0).unwrap().value, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.eval(1.0).unwrap().value, 100.0, epsilon = 1e-12);
        assert!(!out.is_trainable());
        net.attach_io_links(&[(-1.0, 1.0)], &[(-1.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(net.input_links()[0].eval(0.37).unwrap().value, 0.37, epsilon = 1e-15);
        assert!(matches!(net.attach_io_links(&[], &[(0.0, 1.0)]), Err(Error::Config(_))));
    }

    #[test]
    fn unit_activation_examples() {
        assert_eq!(unit_activation(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(unit_activation(&[0.3]).unwrap(), 0.3);
        assert_eq!(unit_activation(&[-1.0, 1.0]).unwrap(), 0.0);
        assert!(unit_activation(&[]).is_err());
    }

    #[test]
    fn forward_single_edge() {
        let net = identity_net();
        let (out, trace) = net.forward(&[0.4], None).unwrap();
        assert_abs_diff_eq!(out[0], 0.4, epsilon = 1e-15);
        assert_eq!(trace.active_edge_count(&net), 1);
        assert_eq!(trace.active_sublink(&net, 0, 0), Some(0));
        assert!(matches!(net.forward(&[0.1, 0.2], None), Err(Error::Shape { .. })));
        assert!(matches!(net.forward(&[f64::NAN], None), Err(Error::NumericInput(_))));
    }

    #[test]
    fn forward_averages_parallel_edges() {
        let cfg = LinkConfig {
            n_points: 2,
            n_sublinks: 1,
            range: Some(1.0),
            ..LinkConfig::default()
        };
        let mut net = build_fully_connected(&[2, 1], &cfg).unwrap();
        net.blocks_mut()[0]
            .weights_mut()
            .copy_from_slice(&[-1.0, -1.0, 1.0, 1.0]);
        let (out, _) = net.forward(&[0.3, -0.6], None).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn forward_with_dropped_source() {
        let cfg = LinkConfig {
            n_points: 2,
            n_sublinks: 1,
            range: Some(1.0),
            ..LinkConfig::default()
        };
        let mut net = build_fully_connected(&[1, 2, 1], &cfg).unwrap();
        net.blocks_mut()[0].weights_mut().copy_from_slice(&[-1.0, 1.0, 1.0, -1.0]);
        net.blocks_mut()[1].weights_mut().copy_from_slice(&[-1.0, 1.0, -1.0, 1.0]);
        let mut mask = DropoutMask::full(&net);
        mask.set(1, 1, false);
        let (out, trace) = net.forward(&[0.5], Some(&mask)).unwrap();
        assert_eq!(trace.n_in(2, 0), 1);
        assert_eq!(trace.n_out(1, 0), 1);
        assert_eq!(trace.n_out(1, 1), 0);
        assert_abs_diff_eq!(out[0], 0.5, epsilon = 1e-15);
        assert_eq!(trace.active_edge_count(&net), 2);
        let (full, _) = net.forward(&[0.5], None).unwrap();
        assert_abs_diff_eq!(full[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_is_counted() {
        let mut net = identity_net();
        net.attach_io_links(&[(0.0, 1.0)], &[(-1.0, 1.0)]).unwrap();
        let (_, trace) = net.forward(&[2.0], None).unwrap();
        assert_eq!(trace.out_of_range(), 1);
        let (_, trace) = net.forward(&[0.5], None).unwrap();
        assert_eq!(trace.out_of_range(), 0);
    }

    #[test]
    fn mask_examples() {
        let net = build_fully_connected(&[3, 16, 1], &LinkConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = fresh_mask(&net, 0.0, &mut rng).unwrap();
        assert_eq!(m.n_dropped(), 0);
        let dropped: usize = (0..2000)
            .map(|_| fresh_mask(&net, 0.5, &mut rng).unwrap().n_dropped())
            .sum();
        let mean = dropped as f64 / 2000.0;
        assert!((mean - 8.0).abs() < 0.2, "mean dropped {mean}");
        let a = fresh_mask(&net, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = fresh_mask(&net, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);

        let single = build_fully_connected(&[3, 1, 1], &LinkConfig::default()).unwrap();
        for _ in 0..50 {
            assert!(fresh_mask(&single, 0.5, &mut rng).unwrap().layer(1)[0]);
        }
        assert!(fresh_mask(&net, 1.0, &mut rng).is_err());
    }

    #[test]
    fn mask_never_touches_io_layers() {
        let net = build_stencil(6, 6, 3, 1, &LinkConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let m = fresh_mask(&net, 0.9, &mut rng).unwrap();
            assert!(m.layer(0).iter().all(|&a| a));
            assert!(m.layer(4).iter().all(|&a| a));
            // Every kept unit still has a kept source, so forward succeeds.
            net.forward(&[0.0; 36], Some(&m)).unwrap();
        }
    }

    fn random_net(seed: u64, sizes: &[usize], np: usize, nsub: usize) -> Network {
        let mut net = build_fully_connected(sizes, &LinkConfig::new(np, nsub)).unwrap();
        net.randomize(&mut ChaCha8Rng::seed_from_u64(seed));
        net
    }

    proptest! {
        #[test]
        fn forward_is_pure(seed in 0u64..1000, x in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let net = random_net(seed, &[3, 4, 2], 4, 3);
            let mask = fresh_mask(&net, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let (o1, t1) = net.forward(&x, Some(&mask)).unwrap();
            let (o2, t2) = net.forward(&x, Some(&mask)).unwrap();
            prop_assert_eq!(o1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            o2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(t1, t2);
        }

        #[test]
        fn units_stay_in_range(seed in 0u64..1000, x in proptest::collection::vec(-1.0f64..1.0, 3), np in 2usize..=10) {
            let net = random_net(seed, &[3, 5, 4, 2], np, 3);
            let p = recommended_range(np, 1.0).unwrap();
            let (_, t) = net.forward(&x, None).unwrap();
            prop_assert_eq!(t.out_of_range(), 0);
            for l in 1..4 {
                for &v in t.unit_values(l) {
                    prop_assert!(v.abs() <= p + 1e-12);
                }
            }
        }

        #[test]
        fn trace_is_complete(seed in 0u64..1000, x in proptest::collection::vec(-1.0f64..1.0, 4)) {
            let net = random_net(seed, &[4, 6, 5, 3], 3, 2);
            let mask = fresh_mask(&net, 0.5, &mut ChaCha8Rng::seed_from_u64(seed + 7)).unwrap();
            let (_, t) = net.forward(&x, Some(&mask)).unwrap();
            let mut live = 0;
            for (b, block) in net.blocks().iter().enumerate() {
                for d in 0..block.n_destinations() {
                    if !t.is_active(b + 1, d) {
                        continue;
                    }
                    let outs: Vec<f64> = block
                        .incoming(d)
                        .filter_map(|e| t.edge_output(&net, b, e))
                        .collect();
                    live += outs.len();
                    prop_assert_eq!(outs.len() as u32, t.n_in(b + 1, d));
                    let mean = unit_activation(&outs).unwrap();
                    prop_assert!((mean - t.unit_values(b + 1)[d]).abs() < 1e-14);
                }
            }
            prop_assert_eq!(live, t.active_edge_count(&net));
        }
    }

    #[test]
    fn init_lines_gives_linear_links() {
        let mut net = build_fully_connected(&[2, 3], &LinkConfig::new(4, 3)).unwrap();
        net.init_lines(&SymmetricLine, &mut ChaCha8Rng::seed_from_u64(5));
        for e in 0..net.block(0).n_edges() {
            let link = net.block(0).link(e);
            let r = net.block(0).shape().range().1;
            let slope = link.eval(r).unwrap().value;
            assert!(slope.abs() <= 1.0);
            for x in [-0.7, 0.1, 0.9] {
                assert_abs_diff_eq!(link.eval(x).unwrap().value, slope * x / r, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn describe_mentions_blocks() {
        let net = build_stencil(4, 4, 1, 1, &LinkConfig::default()).unwrap();
        let d = net.describe();
        assert!(d.contains("layer 0: 4x4 grid") && d.contains("block 1"), "{d}");
    }
}
