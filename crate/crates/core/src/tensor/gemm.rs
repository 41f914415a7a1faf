/// `C = alpha * A·B + beta * C` over strided row-major views.
///
/// `A` is `m×k`, `B` is `k×n`, `C` is `m×n`; strides are in elements.
/// Transposed operands are expressed by swapping their strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
    c_strides: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        (rows - 1) * rs + (cols - 1) * cs
    };
    if k > 0 {
        assert!(last(m, k, a_strides) < a.len(), "gemm: A view out of bounds");
        assert!(last(k, n, b_strides) < b.len(), "gemm: B view out of bounds");
    }
    assert!(last(m, n, c_strides) < c.len(), "gemm: C view out of bounds");
    // SAFETY: every index touched by the kernel lies inside the slices per the
    // bounds assertions above, and `c` does not alias `a` or `b` (&mut borrow).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}
