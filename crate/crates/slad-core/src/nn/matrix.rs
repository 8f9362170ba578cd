use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match {rows}x{cols}",
            data.len()
        );
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Reshape in place, reusing the allocation when capacity allows.
    /// Contents are unspecified afterwards; callers must overwrite.
    pub fn resize(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.resize(rows * cols, S::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// out = alpha * op(a) * op(b) + beta * out, where op transposes when
    /// the corresponding flag is set. Shapes are checked against the
    /// operated (post-transpose) dimensions.
    pub fn gemm_into(
        alpha: S,
        a: &Matrix<S>,
        ta: bool,
        b: &Matrix<S>,
        tb: bool,
        beta: S,
        out: &mut Matrix<S>,
    ) {
        let (m, ka) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
        assert_eq!(ka, kb, "inner dimensions differ: {ka} vs {kb}");
        assert_eq!(out.rows, m, "output rows {} != {m}", out.rows);
        assert_eq!(out.cols, n, "output cols {} != {n}", out.cols);
        let (rsa, csa) = if ta {
            (1isize, a.cols as isize)
        } else {
            (a.cols as isize, 1isize)
        };
        let (rsb, csb) = if tb {
            (1isize, b.cols as isize)
        } else {
            (b.cols as isize, 1isize)
        };
        unsafe {
            S::gemm(
                m,
                ka,
                n,
                alpha,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                beta,
                out.data.as_mut_ptr(),
                out.cols as isize,
                1,
            );
        }
    }

    /// Allocating convenience for op(a) * op(b).
    pub fn matmul(a: &Matrix<S>, ta: bool, b: &Matrix<S>, tb: bool) -> Matrix<S> {
        let m = if ta { a.cols } else { a.rows };
        let n = if tb { b.rows } else { b.cols };
        let mut out = Matrix::zeros(m, n);
        Matrix::gemm_into(S::one(), a, ta, b, tb, S::zero(), &mut out);
        out
    }
}
