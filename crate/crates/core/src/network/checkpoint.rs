//! Binary network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//! magic `DPNNCKPT`, `u32` version, `u64` seed, layers, blocks (link shape,
//! destination offsets, sources, raw weights), then input and output links.
//! A text manifest with the same topology is written next to the file.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{Block, LayerShape, Network};
use crate::error::{Error, Result};
use crate::link::{LinkShape, PiecewiseLink};
use crate::polybasis::NodeSet;

const MAGIC: &[u8; 8] = b"DPNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }

    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.bytes(&[v])
    }

    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64s(&mut self, v: &[f64]) -> std::io::Result<()> {
        self.u64(v.len() as u64)?;
        v.iter().try_for_each(|&x| self.f64(x))
    }

    fn shape(&mut self, s: &LinkShape) -> std::io::Result<()> {
        self.u32(s.n_points() as u32)?;
        let (r0, r1) = s.range();
        let (w0, w1) = s.weight_bounds();
        for v in [r0, r1, w0, w1] {
            self.f64(v)?;
        }
        self.f64s(s.breakpoints())
    }

    fn link(&mut self, l: &PiecewiseLink) -> std::io::Result<()> {
        self.shape(l.shape())?;
        self.u8(l.is_trainable() as u8)?;
        self.f64s(l.weights())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn len(&mut self, limit: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > limit {
            return Err(Error::Checkpoint(format!("implausible length {n}")));
        }
        Ok(n)
    }

    fn f64s(&mut self, limit: usize) -> Result<Vec<f64>> {
        let n = self.len(limit)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn shape(&mut self) -> Result<LinkShape> {
        let np = self.u32()? as usize;
        let (r0, r1, w0, w1) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let bps = self.f64s(1 << 20)?;
        // Prefer the uniform constructor so selection keeps its fast path.
        let uniform = LinkShape::uniform(np, bps.len() + 1, r0, r1, w0, w1)?;
        if uniform.breakpoints() == bps.as_slice() {
            return Ok(uniform);
        }
        LinkShape::with_breakpoints(Arc::new(NodeSet::new(np)?), bps, r0, r1, w0, w1)
    }

    fn link(&mut self) -> Result<PiecewiseLink> {
        let shape = Arc::new(self.shape()?);
        let trainable = self.u8()? != 0;
        let w = self.f64s(1 << 20)?;
        PiecewiseLink::with_weights(shape, w, trainable)
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

/// Writes `net` to `path` and a readable manifest to `path.manifest`.
pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
    };
    write_network(&mut w, net).map_err(|e| Error::io(path, e))?;
    w.inner.flush().map_err(|e| Error::io(path, e))?;

    let manifest = format!(
        "format = dpnn checkpoint\nversion = {CHECKPOINT_VERSION}\nweights = {}\n{}",
        net.n_weights(),
        net.describe()
    );
    let mpath = manifest_path(path);
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(mpath, e))
}

fn write_network<W: Write>(w: &mut Writer<W>, net: &Network) -> std::io::Result<()> {
    w.bytes(MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    w.u64(net.seed)?;
    w.u32(net.layers.len() as u32)?;
    for layer in &net.layers {
        match *layer {
            LayerShape::Flat(n) => {
                w.u8(0)?;
                w.u64(n as u64)?;
                w.u64(0)?;
            }
            LayerShape::Grid { rows, cols } => {
                w.u8(1)?;
                w.u64(rows as u64)?;
                w.u64(cols as u64)?;
            }
        }
    }
    for block in &net.blocks {
        w.shape(&block.shape)?;
        w.u64(block.n_src as u64)?;
        w.u64(block.offsets.len() as u64)?;
        for &o in &block.offsets {
            w.u64(o as u64)?;
        }
        w.u64(block.sources.len() as u64)?;
        for &s in &block.sources {
            w.u32(s)?;
        }
        w.f64s(&block.weights)?;
    }
    w.u32(net.input_links.len() as u32)?;
    for l in &net.input_links {
        w.link(l)?;
    }
    w.u32(net.output_links.len() as u32)?;
    for l in &net.output_links {
        w.link(l)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let net = read_network(&mut r)?;
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after network".into()));
    }
    Ok(net)
}

fn read_network<R: Read>(r: &mut Reader<R>) -> Result<Network> {
    if &r.array::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not a dpnn checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let seed = r.u64()?;
    let n_layers = r.u32()? as usize;
    if !(2..=1 << 16).contains(&n_layers) {
        return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let layers = (0..n_layers)
        .map(|_| {
            let kind = r.u8()?;
            let (a, b) = (r.u64()? as usize, r.u64()? as usize);
            match kind {
                0 => Ok(LayerShape::Flat(a)),
                1 => Ok(LayerShape::Grid { rows: a, cols: b }),
                k => Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut blocks = Vec::with_capacity(n_layers - 1);
    for _ in 1..n_layers {
        let shape = Arc::new(r.shape()?);
        let n_src = r.u64()? as usize;
        let n_off = r.len(1 << 32)?;
        let offsets = (0..n_off)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_edges = r.len(1 << 34)?;
        let sources = (0..n_edges).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let weights = r.f64s(1 << 36)?;
        let consistent = n_off >= 2
            && offsets[0] == 0
            && offsets.windows(2).all(|w| w[0] < w[1])
            && offsets[n_off - 1] == n_edges
            && sources.iter().all(|&s| (s as usize) < n_src)
            && weights.len() == n_edges * shape.weights_per_link();
        if !consistent {
            return Err(Error::Checkpoint("inconsistent block layout".into()));
        }
        blocks.push(Block {
            shape,
            n_src,
            n_dst: n_off - 1,
            offsets,
            sources,
            weights,
        });
    }
    let n_in = r.u32()? as usize;
    let input_links = (0..n_in).map(|_| r.link()).collect::<Result<Vec<_>>>()?;
    let n_out = r.u32()? as usize;
    let output_links = (0..n_out).map(|_| r.link()).collect::<Result<Vec<_>>>()?;
    Network::from_parts(layers, blocks, input_links, output_links, seed)
}
