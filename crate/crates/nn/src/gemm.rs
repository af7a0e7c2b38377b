//! Thin wrapper over `matrixmultiply` with explicit row/column strides.

/// A read-only strided matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> MatRef<'a> {
    /// Row-major matrix whose rows are `ld` apart.
    pub fn row_major(data: &'a [f64], ld: usize) -> Self {
        Self { data, rs: ld as isize, cs: 1 }
    }

    /// The transpose of a row-major matrix whose rows are `ld` apart.
    pub fn transposed(data: &'a [f64], ld: usize) -> Self {
        Self { data, rs: 1, cs: ld as isize }
    }
}

/// `C = alpha * A * B + beta * C` where `A` is `m x k`, `B` is `k x n` and
/// `C` is row-major with leading dimension `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: MatRef, b: MatRef, beta: f64, c: &mut [f64], ldc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |mat: &MatRef, rows: usize, cols: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * mat.rs as usize + (cols - 1) * mat.cs as usize + 1
        }
    };
    assert!(a.data.len() >= span(&a, m, k), "gemm: A too short");
    assert!(b.data.len() >= span(&b, k, n), "gemm: B too short");
    assert!(c.len() >= (m - 1) * ldc + n, "gemm: C too short");
    // SAFETY: the assertions above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
