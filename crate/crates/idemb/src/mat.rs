//! Minimal row-major f64 matrix used by the loss and model math.

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
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

    /// C = A * B^T, where A is (m x k) and B is (n x k). Result is (m x n).
    ///
    /// Both operands are row-major so this form keeps every inner loop on
    /// contiguous memory.
    pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.cols, b.cols);
        let mut c = Mat::zeros(a.rows, b.rows);
        for i in 0..a.rows {
            let ar = a.row(i);
            let cr = c.row_mut(i);
            for j in 0..b.rows {
                cr[j] = dot(ar, b.row(j));
            }
        }
        c
    }

    /// C = A * B, where A is (m x k) and B is (k x n).
    pub fn matmul_nn(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.cols, b.rows);
        let mut c = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            let ar = a.row(i);
            let cr = c.row_mut(i);
            for (k, &aik) in ar.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let br = b.row(k);
                for j in 0..b.cols {
                    cr[j] += aik * br[j];
                }
            }
        }
        c
    }

    /// C = A^T * B, where A is (k x m) and B is (k x n). Result is (m x n).
    pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.rows, b.rows);
        let mut c = Mat::zeros(a.cols, b.cols);
        for k in 0..a.rows {
            let ar = a.row(k);
            let br = b.row(k);
            for (i, &aki) in ar.iter().enumerate() {
                if aki == 0.0 {
                    continue;
                }
                let cr = c.row_mut(i);
                for j in 0..b.cols {
                    cr[j] += aki * br[j];
                }
            }
        }
        c
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}
