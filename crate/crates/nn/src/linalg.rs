//! Thin safe wrapper over `matrixmultiply::dgemm`.

/// Strided matrix view: `(rows, cols, row_stride, col_stride)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Transposed view of a row-major `(rows, cols)` matrix.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Self {
            rows: cols,
            cols: rows,
            rs: 1,
            cs: cols,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = alpha * a * b + beta * c`.
pub(crate) fn gemm(
    alpha: f64,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    assert_eq!(la.cols, lb.rows, "inner dimensions");
    assert_eq!(la.rows, lc.rows, "output rows");
    assert_eq!(lb.cols, lc.cols, "output cols");
    assert!(la.span() <= a.len(), "lhs view out of bounds");
    assert!(lb.span() <= b.len(), "rhs view out of bounds");
    assert!(lc.span() <= c.len(), "output view out of bounds");
    if lc.rows == 0 || lc.cols == 0 {
        return;
    }
    // SAFETY: every index touched by the kernel lies inside the spans checked
    // above, and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            la.rows,
            la.cols,
            lb.cols,
            alpha,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product_matches_hand_result() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        let l = Layout::row_major(2, 2);
        gemm(1.0, &a, l, &b, l, 0.0, &mut c, l);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // a^T b
        gemm(1.0, &a, Layout::transposed(2, 2), &b, l, 0.0, &mut c, l);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }
}
