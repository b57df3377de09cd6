//! Flat storage for grid-indexed families of fixed-size values.
//!
//! Everything in this crate that lives on a time grid — paths with values in
//! R^m, matrix-valued integrands (k = m²), coordinate blocks of area tables
//! (k = m³) — is stored as one contiguous `Vec<f64>` of `nodes × k` entries.
//! The fractional-derivative operators are linear functionals acting node-wise
//! on such families, so a single untyped container keeps them generic without
//! trait machinery.

/// A time-grid family of `k`-dimensional real values.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    /// Dimension of a single node value.
    pub k: usize,
    /// `nodes × k` values, node-major.
    pub data: Vec<f64>,
}

impl Series {
    /// Zero-filled series with `n_nodes` nodes of dimension `k`.
    pub fn zeros(k: usize, n_nodes: usize) -> Self {
        Series {
            k,
            data: vec![0.0; k * n_nodes],
        }
    }

    /// Builds a series by evaluating `f(node_index, out_slice)`.
    pub fn from_fn(k: usize, n_nodes: usize, mut f: impl FnMut(usize, &mut [f64])) -> Self {
        let mut s = Series::zeros(k, n_nodes);
        for i in 0..n_nodes {
            f(i, s.node_mut(i));
        }
        s
    }

    /// Number of grid nodes.
    pub fn n_nodes(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.data.len() / self.k
        }
    }

    /// Value slice at a node.
    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    /// Mutable value slice at a node.
    #[inline]
    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.k..(i + 1) * self.k]
    }

    /// Maximum absolute entry over the whole series.
    pub fn sup_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
    }
}

/// `out += c * x` over equal-length slices.
#[inline]
pub fn axpy(out: &mut [f64], c: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o += c * v;
    }
}

/// Euclidean norm of a slice.
#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|&v| v * v).sum::<f64>().sqrt()
}

/// Maximum absolute entry of a slice.
#[inline]
pub fn sup_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_fn_and_access() {
        let s = Series::from_fn(2, 3, |i, out| {
            out[0] = i as f64;
            out[1] = 10.0 * i as f64;
        });
        assert_eq!(s.n_nodes(), 3);
        assert_eq!(s.node(2), &[2.0, 20.0]);
        assert_eq!(s.sup_abs(), 20.0);
    }

    #[test]
    fn axpy_accumulates() {
        let mut out = vec![1.0, 2.0];
        axpy(&mut out, 0.5, &[2.0, -4.0]);
        assert_eq!(out, vec![2.0, 0.0]);
    }
}
