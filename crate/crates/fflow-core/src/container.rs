//! Versioned binary containers: datasets, image stacks, and checkpoints.
//!
//! All integers and floats are little-endian. Layouts:
//!
//! `FFLOW-DATA-1` (grid dataset)
//! ```text
//! magic        b"FFLOW-DATA-1\n"
//! u32          d
//! u32          n_blocks
//! u8           has_mixing (0 or 1)
//! [f64; d*d]   mixing matrix, row-major      (only if has_mixing = 1)
//! n_blocks ×   (f64 theta, u64 n_rows)
//! n_blocks ×   [f64; n_rows*d] block, row-major
//! ```
//!
//! `FFLOW-IMG-1` (measured image container, intensities as f32)
//! ```text
//! magic        b"FFLOW-IMG-1\n"
//! u32          width
//! u32          height
//! u32          n_positions
//! n_positions × (f64 position_um, u64 n_frames)
//! n_positions × [f32; n_frames*height*width] frames, row-major per frame
//! ```
//!
//! `FFLOW-CKPT-1` (model checkpoint)
//! ```text
//! magic        b"FFLOW-CKPT-1\n"
//! u32          n_layers
//! [u32]        layer sizes
//! u8           activation tag (0 leaky, 1 tanh), f64 activation parameter
//! u64          init seed
//! u64          epoch
//! f64          train_loss, f64 val_loss
//! per transition: weights row-major (out×in) f64, then biases (out) f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::datagen::GridDataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, Checkpoint, MlpSpec};
use crate::stats::SampleMatrix;
use crate::{Matrix, Real, Vector};

const DATA_MAGIC: &[u8] = b"FFLOW-DATA-1\n";
const IMG_MAGIC: &[u8] = b"FFLOW-IMG-1\n";
const CKPT_MAGIC: &[u8] = b"FFLOW-CKPT-1\n";

/// Default crop window applied to measured frames (rows × cols).
pub const CROP_ROWS: usize = 18;
pub const CROP_COLS: usize = 24;

/// Byte-counting reader so format errors can name an offset.
struct Counted<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counted<R> {
    fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.offset,
            message: message.into(),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            offset: self.offset,
            message: format!("unexpected end of file ({e})"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; count * 8];
        self.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f32_vec(&mut self, count: usize) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; count * 4];
        self.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn magic(&mut self, expected: &[u8], what: &str) -> Result<()> {
        let mut got = vec![0u8; expected.len()];
        self.read_exact(&mut got)?;
        if got != expected {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic, not a {what} file"),
            });
        }
        Ok(())
    }
}

fn write_f64_slice<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Row-major iteration over a matrix.
fn row_major(m: &Matrix) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

/// Write a grid dataset (plus optional mixing matrix) as FFLOW-DATA-1.
pub fn write_dataset(path: &Path, data: &GridDataset, mixing: Option<&Matrix>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATA_MAGIC)?;
    let d = data.d();
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(data.n_blocks() as u32).to_le_bytes())?;
    match mixing {
        Some(m) => {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch {
                    context: "mixing matrix vs dataset dimension",
                    left: m.nrows(),
                    right: d,
                });
            }
            w.write_all(&[1u8])?;
            write_f64_slice(&mut w, row_major(m))?;
        }
        None => w.write_all(&[0u8])?,
    }
    for (theta, block) in data.thetas().iter().zip(data.blocks()) {
        w.write_all(&theta.to_le_bytes())?;
        w.write_all(&(block.n_samples() as u64).to_le_bytes())?;
    }
    for block in data.blocks() {
        write_f64_slice(&mut w, row_major(block.data()))?;
    }
    w.flush()?;
    Ok(())
}

/// Read an FFLOW-DATA-1 file.
pub fn read_dataset(path: &Path) -> Result<(GridDataset, Option<Matrix>)> {
    let mut r = Counted::new(BufReader::new(File::open(path)?));
    r.magic(DATA_MAGIC, "FFLOW-DATA-1")?;
    let d = r.u32()? as usize;
    let n_blocks = r.u32()? as usize;
    if d == 0 || n_blocks == 0 {
        return Err(r.fail("empty dimension or block count"));
    }
    let mixing = match r.u8()? {
        0 => None,
        1 => {
            let vals = r.f64_vec(d * d)?;
            Some(Matrix::from_row_slice(d, d, &vals))
        }
        tag => return Err(r.fail(format!("invalid mixing flag {tag}"))),
    };
    let mut thetas = Vec::with_capacity(n_blocks);
    let mut counts = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        thetas.push(r.f64()?);
        counts.push(r.u64()? as usize);
    }
    let mut blocks = Vec::with_capacity(n_blocks);
    for &n in &counts {
        let vals = r.f64_vec(n * d)?;
        blocks.push(
            SampleMatrix::new(Matrix::from_row_slice(n, d, &vals))
                .map_err(|e| r.fail(format!("invalid block: {e}")))?,
        );
    }
    let data = GridDataset::new(thetas, blocks).map_err(|e| r.fail(format!("invalid grid: {e}")))?;
    Ok((data, mixing))
}

/// Stack of measured frames per stage position.
#[derive(Debug, Clone)]
pub struct ImageContainer {
    pub width: usize,
    pub height: usize,
    /// Stage positions in µm, sorted ascending.
    pub positions: Vec<Real>,
    /// One row-major intensity frame stack per position.
    pub frames: Vec<Vec<f32>>,
}

impl ImageContainer {
    pub fn new(
        width: usize,
        height: usize,
        positions: Vec<Real>,
        frames: Vec<Vec<f32>>,
    ) -> Result<Self> {
        if positions.len() != frames.len() || positions.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "positions vs frame stacks",
                left: positions.len(),
                right: frames.len(),
            });
        }
        if !positions.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter {
                name: "positions",
                value: f64::NAN,
                expected: "strictly increasing",
            });
        }
        let frame_len = width * height;
        if frames.iter().any(|f| f.is_empty() || f.len() % frame_len != 0) {
            return Err(Error::InvalidParameter {
                name: "frames",
                value: f64::NAN,
                expected: "nonempty stacks of width*height values",
            });
        }
        Ok(Self {
            width,
            height,
            positions,
            frames,
        })
    }

    pub fn n_frames(&self, position: usize) -> usize {
        self.frames[position].len() / (self.width * self.height)
    }
}

/// Write an image container as FFLOW-IMG-1.
pub fn write_image_container(path: &Path, c: &ImageContainer) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(IMG_MAGIC)?;
    w.write_all(&(c.width as u32).to_le_bytes())?;
    w.write_all(&(c.height as u32).to_le_bytes())?;
    w.write_all(&(c.positions.len() as u32).to_le_bytes())?;
    for (i, p) in c.positions.iter().enumerate() {
        w.write_all(&p.to_le_bytes())?;
        w.write_all(&(c.n_frames(i) as u64).to_le_bytes())?;
    }
    for stack in &c.frames {
        for v in stack {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read an FFLOW-IMG-1 file.
pub fn read_image_container(path: &Path) -> Result<ImageContainer> {
    let mut r = Counted::new(BufReader::new(File::open(path)?));
    r.magic(IMG_MAGIC, "FFLOW-IMG-1")?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let n_positions = r.u32()? as usize;
    if width == 0 || height == 0 || n_positions == 0 {
        return Err(r.fail("empty image dimensions or position list"));
    }
    let mut positions = Vec::with_capacity(n_positions);
    let mut counts = Vec::with_capacity(n_positions);
    for _ in 0..n_positions {
        positions.push(r.f64()?);
        counts.push(r.u64()? as usize);
    }
    let mut frames = Vec::with_capacity(n_positions);
    for &n in &counts {
        frames.push(r.f32_vec(n * width * height)?);
    }
    ImageContainer::new(width, height, positions, frames)
        .map_err(|e| Error::Format {
            offset: 0,
            message: format!("inconsistent container: {e}"),
        })
}

/// Crop window configuration for [`load_image_container`].
#[derive(Debug, Clone, Copy)]
pub struct ImageLoadOptions {
    pub crop_rows: usize,
    pub crop_cols: usize,
    /// Top row of the window; `None` centers it.
    pub row_offset: Option<usize>,
    /// Left column of the window; `None` centers it.
    pub col_offset: Option<usize>,
}

impl Default for ImageLoadOptions {
    fn default() -> Self {
        Self {
            crop_rows: CROP_ROWS,
            crop_cols: CROP_COLS,
            row_offset: None,
            col_offset: None,
        }
    }
}

/// Load an image container into a grid dataset: center-crop every frame,
/// flatten row-major, and standardize with the global mean and standard
/// deviation computed over all frames of the container. The standardization
/// is one affine map shared by every frame, hence FI-preserving.
pub fn load_image_container(path: &Path) -> Result<GridDataset> {
    load_image_container_with(path, ImageLoadOptions::default())
}

pub fn load_image_container_with(path: &Path, opts: ImageLoadOptions) -> Result<GridDataset> {
    let c = read_image_container(path)?;
    if opts.crop_rows > c.height || opts.crop_cols > c.width {
        return Err(Error::InvalidParameter {
            name: "crop window",
            value: f64::NAN,
            expected: "within frame bounds",
        });
    }
    let row0 = opts.row_offset.unwrap_or((c.height - opts.crop_rows) / 2);
    let col0 = opts.col_offset.unwrap_or((c.width - opts.crop_cols) / 2);
    if row0 + opts.crop_rows > c.height || col0 + opts.crop_cols > c.width {
        return Err(Error::InvalidParameter {
            name: "crop offset",
            value: f64::NAN,
            expected: "window within frame bounds",
        });
    }
    let d = opts.crop_rows * opts.crop_cols;

    // First pass: global moments over all cropped values.
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut count = 0u64;
    let mut cropped_blocks: Vec<Matrix> = Vec::with_capacity(c.positions.len());
    for (pi, stack) in c.frames.iter().enumerate() {
        let n = c.n_frames(pi);
        let mut block = Matrix::zeros(n, d);
        for f in 0..n {
            let frame = &stack[f * c.width * c.height..(f + 1) * c.width * c.height];
            let mut out = 0;
            for r in row0..row0 + opts.crop_rows {
                for cc in col0..col0 + opts.crop_cols {
                    let v = frame[r * c.width + cc] as f64;
                    block[(f, out)] = v;
                    sum += v;
                    sum_sq += v * v;
                    count += 1;
                    out += 1;
                }
            }
        }
        cropped_blocks.push(block);
    }
    let mean = sum / count as f64;
    let var = (sum_sq - sum * sum / count as f64) / count as f64;
    let std = var.max(0.0).sqrt();
    if std == 0.0 {
        return Err(Error::DegenerateInput(
            "constant-intensity container: standardization undefined (zero standard deviation)"
                .into(),
        ));
    }
    let blocks = cropped_blocks
        .into_iter()
        .map(|mut b| {
            for v in b.iter_mut() {
                *v = (*v - mean) / std;
            }
            SampleMatrix::new(b)
        })
        .collect::<Result<Vec<_>>>()?;
    GridDataset::new(c.positions.clone(), blocks)
}

fn activation_tag(a: Activation) -> (u8, f64) {
    match a {
        Activation::LeakyRelu(alpha) => (0, alpha),
        Activation::Tanh => (1, 0.0),
    }
}

/// Write a model checkpoint as FFLOW-CKPT-1.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    let sizes = &ckpt.spec.layer_sizes;
    w.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for &s in sizes {
        w.write_all(&(s as u32).to_le_bytes())?;
    }
    let (tag, param) = activation_tag(ckpt.spec.hidden_activation);
    w.write_all(&[tag])?;
    w.write_all(&param.to_le_bytes())?;
    w.write_all(&ckpt.spec.seed.to_le_bytes())?;
    w.write_all(&(ckpt.epoch as u64).to_le_bytes())?;
    w.write_all(&ckpt.train_loss.to_le_bytes())?;
    w.write_all(&ckpt.val_loss.to_le_bytes())?;
    for (weights, biases) in ckpt.weights.iter().zip(&ckpt.biases) {
        write_f64_slice(&mut w, row_major(weights))?;
        write_f64_slice(&mut w, biases.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

/// Read an FFLOW-CKPT-1 file.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = Counted::new(BufReader::new(File::open(path)?));
    r.magic(CKPT_MAGIC, "FFLOW-CKPT-1")?;
    let n_layers = r.u32()? as usize;
    if n_layers < 2 {
        return Err(r.fail("checkpoint needs at least 2 layers"));
    }
    let mut sizes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        sizes.push(r.u32()? as usize);
    }
    let tag = r.u8()?;
    let param = r.f64()?;
    let activation = match tag {
        0 => Activation::LeakyRelu(param),
        1 => Activation::Tanh,
        t => return Err(r.fail(format!("unknown activation tag {t}"))),
    };
    let seed = r.u64()?;
    let epoch = r.u64()? as usize;
    let train_loss = r.f64()?;
    let val_loss = r.f64()?;
    let spec = MlpSpec::new(sizes.clone(), activation, seed)
        .map_err(|e| r.fail(format!("invalid spec: {e}")))?;
    let mut weights = Vec::with_capacity(n_layers - 1);
    let mut biases = Vec::with_capacity(n_layers - 1);
    for l in 0..n_layers - 1 {
        let rows = sizes[l + 1];
        let cols = sizes[l];
        let vals = r.f64_vec(rows * cols)?;
        weights.push(Matrix::from_row_slice(rows, cols, &vals));
        let b = r.f64_vec(rows)?;
        biases.push(Vector::from_vec(b));
    }
    Ok(Checkpoint {
        spec,
        epoch,
        weights,
        biases,
        train_loss,
        val_loss,
    })
}
