use crate::{Error, Result};

/// Ordered supervised pairs `(x, y)` stored as two flat row-major buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedDataset {
    x_dim: usize,
    y_dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl SupervisedDataset {
    pub fn new(x_dim: usize, y_dim: usize) -> Self {
        SupervisedDataset { x_dim, y_dim, xs: Vec::new(), ys: Vec::new() }
    }

    pub fn from_rows(x_dim: usize, y_dim: usize, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if x_dim == 0 || y_dim == 0 {
            return Err(Error::invalid("dataset dimensions must be positive"));
        }
        if xs.len() % x_dim != 0 || ys.len() % y_dim != 0 || xs.len() / x_dim != ys.len() / y_dim {
            return Err(Error::invalid("x and y buffers disagree on item count"));
        }
        Ok(SupervisedDataset { x_dim, y_dim, xs, ys })
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        assert_eq!(x.len(), self.x_dim);
        assert_eq!(y.len(), self.y_dim);
        self.xs.extend_from_slice(x);
        self.ys.extend_from_slice(y);
    }

    pub fn len(&self) -> usize {
        self.ys.len() / self.y_dim
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.x_dim..(i + 1) * self.x_dim]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.y_dim..(i + 1) * self.y_dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64])> + '_ {
        self.xs.chunks_exact(self.x_dim).zip(self.ys.chunks_exact(self.y_dim))
    }

    /// Items at `indices`, in the given order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> SupervisedDataset {
        let mut out = SupervisedDataset::new(self.x_dim, self.y_dim);
        out.xs.reserve(indices.len() * self.x_dim);
        out.ys.reserve(indices.len() * self.y_dim);
        for &i in indices {
            out.push(self.x(i), self.y(i));
        }
        out
    }

    /// Contiguous range of items.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SupervisedDataset {
        SupervisedDataset {
            x_dim: self.x_dim,
            y_dim: self.y_dim,
            xs: self.xs[range.start * self.x_dim..range.end * self.x_dim].to_vec(),
            ys: self.ys[range.start * self.y_dim..range.end * self.y_dim].to_vec(),
        }
    }

    pub fn concat(&self, other: &SupervisedDataset) -> SupervisedDataset {
        assert_eq!((self.x_dim, self.y_dim), (other.x_dim, other.y_dim));
        let mut out = self.clone();
        out.xs.extend_from_slice(&other.xs);
        out.ys.extend_from_slice(&other.ys);
        out
    }

    pub fn map_values(&self, fx: impl Fn(usize, f64) -> f64, fy: impl Fn(usize, f64) -> f64) -> SupervisedDataset {
        let xd = self.x_dim;
        let yd = self.y_dim;
        SupervisedDataset {
            x_dim: xd,
            y_dim: yd,
            xs: self.xs.iter().enumerate().map(|(k, &v)| fx(k % xd, v)).collect(),
            ys: self.ys.iter().enumerate().map(|(k, &v)| fy(k % yd, v)).collect(),
        }
    }
}

/// Split into the first `n_train` items and the remainder, preserving order.
pub fn split_sequential(ds: &SupervisedDataset, n_train: usize) -> Result<(SupervisedDataset, SupervisedDataset)> {
    if n_train == 0 || n_train >= ds.len() {
        return Err(Error::invalid(format!(
            "n_train must satisfy 0 < n_train < {}, got {n_train}",
            ds.len()
        )));
    }
    Ok((ds.slice(0..n_train), ds.slice(n_train..ds.len())))
}
