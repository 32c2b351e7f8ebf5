//! Dense row-major matrix with the handful of operations the pipeline needs.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid_argument("matrix needs at least one row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid_argument("ragged rows in matrix literal"));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// y = M x
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::invalid_argument(format!(
                "matvec: expected input of length {}, got {}",
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            y[r] = acc;
        }
        Ok(y)
    }

    /// y = M^T x
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::invalid_argument(format!(
                "matvec_t: expected input of length {}, got {}",
                self.rows,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let xv = x[r];
            for (yc, w) in y.iter_mut().zip(row) {
                *yc += w * xv;
            }
        }
        Ok(y)
    }

    /// C = A B
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::invalid_argument(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                let orow = out.row_mut(r);
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// self += scale * (u outer v)
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            let uv = u[r] * scale;
            if uv == 0.0 {
                continue;
            }
            let row = self.row_mut(r);
            for (w, vv) in row.iter_mut().zip(v) {
                *w += uv * vv;
            }
        }
    }
}

/// Per-row softmax with max-shift so large raw weights cannot overflow.
pub fn softmax_rows(raw: &Matrix) -> Result<Matrix> {
    if !raw.is_finite() {
        return Err(Error::invalid_argument("softmax_rows: non-finite input"));
    }
    let mut out = Matrix::zeros(raw.rows, raw.cols);
    for r in 0..raw.rows {
        softmax_into(raw.row(r), out.row_mut(r));
    }
    Ok(out)
}

/// Softmax of one slice into a preallocated output, max-shifted.
pub fn softmax_into(input: &[f64], out: &mut [f64]) {
    debug_assert_eq!(input.len(), out.len());
    let max = input.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(input) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// VJP of softmax: given the softmax output `s` and upstream gradient `u` on
/// it, returns the gradient on the raw (pre-softmax) values.
pub fn softmax_vjp(s: &[f64], u: &[f64]) -> Vec<f64> {
    debug_assert_eq!(s.len(), u.len());
    let dot: f64 = s.iter().zip(u).map(|(a, b)| a * b).sum();
    s.iter().zip(u).map(|(si, ui)| si * (ui - dot)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_row() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let s = softmax_rows(&m).unwrap();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_closed_form() {
        let m = Matrix::from_rows(&[vec![2.0_f64.ln(), 0.0]]).unwrap();
        let s = softmax_rows(&m).unwrap();
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_max_shift_no_overflow() {
        let m = Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let s = softmax_rows(&m).unwrap();
        assert!(s.is_finite());
        assert!(s.get(0, 0) >= 1.0 - 1e-100);
        assert!(s.get(0, 1) < 1e-100);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let m = Matrix::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(softmax_rows(&m).is_err());
    }

    #[test]
    fn matvec_t_is_transpose() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let y = m.matvec(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(y, vec![6.0, 15.0]);
        let z = m.matvec_t(&[1.0, 1.0]).unwrap();
        assert_eq!(z, vec![5.0, 7.0, 9.0]);
    }
}
