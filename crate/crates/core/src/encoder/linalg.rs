//! Row-major dense helpers used by the encoder's forward and backward passes.

/// A row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `out += W x` for `W` of shape `rows × cols`.
#[inline]
pub fn matvec_add(out: &mut [f64], w: &[f64], cols: usize, x: &[f64]) {
    debug_assert_eq!(w.len(), out.len() * cols);
    debug_assert_eq!(x.len(), cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ dy` for `W` of shape `rows × cols`.
#[inline]
pub fn matvec_t_add(out: &mut [f64], w: &[f64], cols: usize, dy: &[f64]) {
    debug_assert_eq!(w.len(), dy.len() * cols);
    debug_assert_eq!(out.len(), cols);
    for (d, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if *d == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += d * a;
        }
    }
}

/// `G += dy xᵀ`.
#[inline]
pub fn outer_add(g: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(g.len(), dy.len() * cols);
    for (d, row) in dy.iter().zip(g.chunks_exact_mut(cols)) {
        if *d == 0.0 {
            continue;
        }
        for (o, a) in row.iter_mut().zip(x) {
            *o += d * a;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
