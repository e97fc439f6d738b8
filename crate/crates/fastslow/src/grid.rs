//! Uniformly sampled vector-valued paths on `[0, T]`.
//!
//! [`GridPath`] is the universal carrier for noise realizations, solution
//! trajectories and test functions. Values live on the uniform grid
//! `t_i = i * T / n_steps`, `i = 0..=n_steps`, one `dim`-vector per node.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    t_end: f64,
    n_steps: usize,
    dim: usize,
    /// Node-major storage: `data[i * dim + c]` is coordinate `c` at node `i`.
    data: Vec<f64>,
}

impl GridPath {
    /// Builds a path and enforces the carrier invariants: positive horizon,
    /// at least one step, matching data length, all entries finite.
    pub fn new(t_end: f64, n_steps: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::invalid(format!("horizon must be positive, got {t_end}")));
        }
        if n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let expect = (n_steps + 1) * dim;
        if data.len() != expect {
            return Err(Error::invalid(format!(
                "data length {} does not match (n_steps+1)*dim = {}",
                data.len(),
                expect
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at node {}, coordinate {}",
                k / dim,
                k % dim
            )));
        }
        Ok(Self {
            t_end,
            n_steps,
            dim,
            data,
        })
    }

    pub fn zeros(t_end: f64, n_steps: usize, dim: usize) -> Result<Self> {
        Self::new(t_end, n_steps, dim, vec![0.0; (n_steps + 1) * dim])
    }

    /// Scalar path sampled from a function of time.
    pub fn from_fn(t_end: f64, n_steps: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = t_end / n_steps as f64;
        let data: Vec<f64> = (0..=n_steps).map(|i| f(i as f64 * h)).collect();
        Self::new(t_end, n_steps, 1, data)
    }

    #[inline]
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Uniform spacing `h = T / n_steps`.
    #[inline]
    pub fn step(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step()
    }

    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Coordinate `c` at node `i`.
    #[inline]
    pub fn coord(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.dim + c]
    }

    /// Value at node `i` of a scalar path.
    #[inline]
    pub fn scalar(&self, i: usize) -> f64 {
        debug_assert_eq!(self.dim, 1);
        self.data[i]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Euclidean norm of the node-`i` vector.
    #[inline]
    pub fn node_norm(&self, i: usize) -> f64 {
        self.node(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `max_i |f(t_i)|` (Euclidean per node).
    pub fn sup_norm(&self) -> f64 {
        (0..self.n_nodes())
            .map(|i| self.node_norm(i))
            .fold(0.0, f64::max)
    }

    /// Extracts one coordinate as a scalar path.
    pub fn component(&self, c: usize) -> Result<GridPath> {
        if c >= self.dim {
            return Err(Error::invalid(format!(
                "coordinate {c} out of range for dim {}",
                self.dim
            )));
        }
        let data: Vec<f64> = (0..self.n_nodes()).map(|i| self.coord(i, c)).collect();
        GridPath::new(self.t_end, self.n_steps, 1, data)
    }

    /// Keeps every `stride`-th node; `n_steps` must be divisible by `stride`.
    pub fn subsample(&self, stride: usize) -> Result<GridPath> {
        if stride == 0 || !self.n_steps.is_multiple_of(stride) {
            return Err(Error::invalid(format!(
                "stride {stride} does not divide n_steps {}",
                self.n_steps
            )));
        }
        let m = self.n_steps / stride;
        let mut data = Vec::with_capacity((m + 1) * self.dim);
        for i in 0..=m {
            data.extend_from_slice(self.node(i * stride));
        }
        GridPath::new(self.t_end, m, self.dim, data)
    }

    /// Nodewise difference `self - other`; grids must match.
    pub fn difference(&self, other: &GridPath) -> Result<GridPath> {
        self.check_same_grid(other)?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        GridPath::new(self.t_end, self.n_steps, self.dim, data)
    }

    pub fn scale(&self, c: f64) -> Result<GridPath> {
        GridPath::new(
            self.t_end,
            self.n_steps,
            self.dim,
            self.data.iter().map(|v| c * v).collect(),
        )
    }

    pub fn check_same_grid(&self, other: &GridPath) -> Result<()> {
        let same_t = (self.t_end - other.t_end).abs() <= 1e-12 * self.t_end.abs().max(1.0);
        if self.n_steps != other.n_steps || !same_t {
            return Err(Error::invalid(format!(
                "grid mismatch: ({} steps, T={}) vs ({} steps, T={})",
                self.n_steps, self.t_end, other.n_steps, other.t_end
            )));
        }
        Ok(())
    }

    /// Writes `t,x1,...,xd` rows at full double precision (17 significant
    /// digits), one row per grid node.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        out.push('t');
        for c in 0..self.dim {
            let _ = write!(out, ",x{}", c + 1);
        }
        out.push('\n');
        for i in 0..self.n_nodes() {
            let _ = write!(out, "{:.16e}", self.time(i));
            for c in 0..self.dim {
                let _ = write!(out, ",{:.16e}", self.coord(i, c));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a path written by [`GridPath::write_csv`]. The time column must
    /// be uniform starting at 0.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<GridPath> {
        let text = std::fs::read_to_string(&path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty csv file"))?;
        let dim = header.split(',').count().saturating_sub(1);
        if dim == 0 {
            return Err(Error::invalid("csv header must be t,x1,...,xd"));
        }
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::invalid(format!(
                    "row {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    dim + 1
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad number {s:?}: {e}")))
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                data.push(parse(f)?);
            }
        }
        if times.len() < 2 {
            return Err(Error::invalid("need at least two grid nodes"));
        }
        let n_steps = times.len() - 1;
        let t_end = times[n_steps];
        let h = t_end / n_steps as f64;
        for (i, &t) in times.iter().enumerate() {
            if (t - i as f64 * h).abs() > 1e-9 * t_end.max(1.0) {
                return Err(Error::invalid(format!(
                    "non-uniform time grid at row {}: t = {t}",
                    i + 1
                )));
            }
        }
        GridPath::new(t_end, n_steps, dim, data)
    }
}
