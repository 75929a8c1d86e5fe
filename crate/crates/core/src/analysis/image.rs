use std::fmt::Write as _;
use std::io::{BufRead, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;

/// Scalar values on a node lattice over a box. Values are stored with the x
/// index varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    /// Node counts `[x, y(, z)]`.
    pub dims: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub values: Vec<f32>,
}

impl ScalarGrid {
    pub fn new(dims: Vec<usize>, lo: Vec<f64>, hi: Vec<f64>, values: Vec<f32>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) || dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidGrid(format!("scalar grid dims {dims:?}")));
        }
        if lo.len() != dims.len() || hi.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: lo.len().min(hi.len()),
            });
        }
        let count: usize = dims.iter().product();
        if values.len() != count {
            return Err(Error::InvalidGrid(format!(
                "{} values for {count} nodes",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at node {i}")));
        }
        Ok(ScalarGrid { dims, lo, hi, values })
    }

    pub fn node_position(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + (self.hi[axis] - self.lo[axis]) * i as f64 / (self.dims[axis] - 1) as f64
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.dims)
            .rev()
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> f32 {
        self.values[self.index(idx)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// The 2D grid at z index `k` of a 3D grid.
    pub fn slice_z(&self, k: usize) -> Result<ScalarGrid> {
        if self.dims.len() != 3 || k >= self.dims[2] {
            return Err(Error::InvalidArgument(format!(
                "no z slice {k} in a grid of dims {:?}",
                self.dims
            )));
        }
        let plane = self.dims[0] * self.dims[1];
        ScalarGrid::new(
            self.dims[..2].to_vec(),
            self.lo[..2].to_vec(),
            self.hi[..2].to_vec(),
            self.values[k * plane..(k + 1) * plane].to_vec(),
        )
    }

    /// `x,y[,z],value`, one row per node in storage order.
    pub fn to_csv(&self) -> String {
        let n = self.dims.len();
        let mut out = String::from(if n == 2 { "x,y,value\n" } else { "x,y,z,value\n" });
        let mut idx = vec![0; n];
        for v in &self.values {
            for (a, &i) in idx.iter().enumerate() {
                let _ = write!(out, "{},", self.node_position(a, i));
            }
            let _ = writeln!(out, "{v}");
            for a in 0..n {
                idx[a] += 1;
                if idx[a] < self.dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }
}

/// Value range mapped onto gray levels 0..=255.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageRange {
    /// The grid's own min and max; a constant grid maps to black.
    Auto,
    Fixed(f64, f64),
}

/// 8-bit binary PGM. Row 0 is the largest y; the comment line records the
/// domain and value range.
pub fn encode_pgm(grid: &ScalarGrid, range: ImageRange) -> Result<Vec<u8>> {
    if grid.dims.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "images need a 2D grid, got dims {:?}; emit z slices instead",
            grid.dims
        )));
    }
    let (lo, hi) = match range {
        ImageRange::Auto => {
            let (a, b) = grid.min_max();
            (a as f64, b as f64)
        }
        ImageRange::Fixed(a, b) if a < b && a.is_finite() && b.is_finite() => (a, b),
        ImageRange::Fixed(a, b) => {
            return Err(Error::InvalidArgument(format!("bad image range [{a}, {b}]")));
        }
    };
    let (w, h) = (grid.dims[0], grid.dims[1]);
    let mut out = format!(
        "P5\n# x [{}, {}] y [{}, {}] values [{lo}, {hi}] row 0 is max y\n{w} {h}\n255\n",
        grid.lo[0], grid.hi[0], grid.lo[1], grid.hi[1]
    )
    .into_bytes();
    for j in (0..h).rev() {
        for i in 0..w {
            let v = grid.get(&[i, j]) as f64;
            let level = if hi > lo {
                ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0)
            } else {
                0.0
            };
            out.push(level as u8);
        }
    }
    Ok(out)
}

pub fn emit_scalar_image(grid: &ScalarGrid, path: &Path, range: ImageRange) -> Result<()> {
    let bytes = encode_pgm(grid, range)?;
    atomic_write(path, |w| w.write_all(&bytes).map_err(|e| Error::io(path, e)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub comment: String,
    /// Row-major from the top row.
    pub pixels: Vec<u8>,
}

/// Reads images written by [`encode_pgm`] (one comment line, maxval 255).
pub fn read_pgm(r: &mut dyn BufRead) -> Result<PgmImage> {
    let mut line = |what: &str| -> Result<String> {
        let mut s = String::new();
        r.read_line(&mut s)
            .map_err(|e| Error::MalformedHeader(format!("{what}: {e}")))?;
        Ok(s.trim_end().to_string())
    };
    let magic = line("magic")?;
    if magic != "P5" {
        return Err(Error::BadMagic {
            expected: "P5",
            found: magic,
        });
    }
    let comment = line("comment")?;
    let Some(comment) = comment.strip_prefix('#') else {
        return Err(Error::MalformedHeader("expected a comment line".into()));
    };
    let size = line("size")?;
    let parsed: Vec<usize> = size
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::MalformedHeader(format!("bad size line {size:?}")))?;
    let [width, height] = parsed[..] else {
        return Err(Error::MalformedHeader(format!("bad size line {size:?}")));
    };
    if line("maxval")? != "255" {
        return Err(Error::MalformedHeader("maxval must be 255".into()));
    }
    let mut pixels = Vec::with_capacity(width * height);
    r.take((width * height) as u64)
        .read_to_end(&mut pixels)
        .map_err(|e| Error::MalformedHeader(format!("pixels: {e}")))?;
    if pixels.len() != width * height {
        return Err(Error::Truncated {
            expected: width * height,
            found: pixels.len(),
        });
    }
    Ok(PgmImage {
        width,
        height,
        comment: comment.trim().to_string(),
        pixels,
    })
}
