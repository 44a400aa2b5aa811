//! Thin safe wrapper over `matrixmultiply::dgemm` with strided views.

/// A strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'s> {
    data: &'s [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'s> MatRef<'s> {
    pub(crate) fn new(data: &'s [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "matrix view out of bounds");
        MatRef { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    pub(crate) fn t(self) -> Self {
        MatRef { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }
}

/// `c = alpha * a * b + beta * c` where `c` is a dense row-major `a.rows × b.cols` buffer.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "gemm output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    if m <= 4 && b.cs == 1 {
        // A few rows against a wide row-major matrix: packing `b` would cost
        // more than the product, so stream its rows instead.
        let c = &mut c[..m * n];
        for v in c.iter_mut() {
            *v = if beta == 0.0 { 0.0 } else { *v * beta };
        }
        for l in 0..k {
            let row = &b.data[l * b.rs as usize..l * b.rs as usize + n];
            for (i, out) in c.chunks_mut(n).enumerate() {
                let s = alpha * a.data[i * a.rs as usize + l * a.cs as usize];
                out.iter_mut().zip(row).for_each(|(o, r)| *o += s * r);
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked against its declared extent above,
    // and `c` does not alias the inputs (it is a distinct `&mut`).
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
            n as isize,
            1,
        );
    }
}
