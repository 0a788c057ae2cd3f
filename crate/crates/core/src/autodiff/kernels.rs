//! Raw loops behind the convolution, pooling and dense primitives.
//! Everything works on NCHW buffers; 1D variants are views with H = 1.

/// `c = a · b (+ beta · c)` where `a` is m×k and `b` is k×n; either operand
/// may be supplied transposed (stored as k×m / n×k).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the m/k/n extents checked above and the
    // strides describe dense row-major (or transposed) layouts inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Column matrix of shape (C·kh·kw) × (N·Ho·Wo).
fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = ho * wo;
    let cols = g.n * p;
    let mut col = vec![0.0; g.patch() * cols];
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst_row = &mut col[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let src = &x[(n * g.c_in + c) * g.h * g.w..(n * g.c_in + c + 1) * g.h * g.w];
                    let dst = &mut dst_row[n * p..(n + 1) * p];
                    for oh in 0..ho {
                        let ih = (oh * g.sh + i) as isize - g.ph as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[ih as usize * g.w..(ih as usize + 1) * g.w];
                        let dst_seg = &mut dst[oh * wo..(oh + 1) * wo];
                        for (ow, d) in dst_seg.iter_mut().enumerate() {
                            let iw = (ow * g.sw + j) as isize - g.pw as isize;
                            if iw >= 0 && iw < g.w as isize {
                                *d = src_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = ho * wo;
    let cols = g.n * p;
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src_row = &col[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let plane = (n * g.c_in + c) * g.h * g.w;
                    let src = &src_row[n * p..(n + 1) * p];
                    for oh in 0..ho {
                        let ih = (oh * g.sh + i) as isize - g.ph as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let base = plane + ih as usize * g.w;
                        for ow in 0..wo {
                            let iw = (ow * g.sw + j) as isize - g.pw as isize;
                            if iw >= 0 && iw < g.w as isize {
                                dx[base + iw as usize] += src[oh * wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Vec<f64> {
    let p = g.positions();
    let cols = g.n * p;
    let col = im2col(x, g);
    let mut y = vec![0.0; g.c_out * cols];
    gemm(g.c_out, g.patch(), cols, w, false, &col, false, 0.0, &mut y);
    // (C_out, N, P) -> (N, C_out, P)
    let mut out = vec![0.0; g.n * g.c_out * p];
    for o in 0..g.c_out {
        let b = bias.map_or(0.0, |b| b[o]);
        for n in 0..g.n {
            let src = &y[o * cols + n * p..o * cols + (n + 1) * p];
            let dst = &mut out[(n * g.c_out + o) * p..(n * g.c_out + o + 1) * p];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    out
}

/// Returns `(dx, dw, dbias)` for upstream gradient `dy` in NCHW layout.
pub(crate) fn conv_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvGeometry,
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let p = g.positions();
    let cols = g.n * p;
    let mut dy_t = vec![0.0; g.c_out * cols];
    let mut db = vec![0.0; g.c_out];
    for n in 0..g.n {
        for o in 0..g.c_out {
            let src = &dy[(n * g.c_out + o) * p..(n * g.c_out + o + 1) * p];
            dy_t[o * cols + n * p..o * cols + (n + 1) * p].copy_from_slice(src);
            db[o] += src.iter().sum::<f64>();
        }
    }
    let col = im2col(x, g);
    let k = g.patch();
    let mut dw = vec![0.0; g.c_out * k];
    gemm(g.c_out, cols, k, &dy_t, false, &col, true, 0.0, &mut dw);
    let dx = need_dx.then(|| {
        let mut dcol = col;
        gemm(k, g.c_out, cols, w, true, &dy_t, false, 0.0, &mut dcol);
        let mut dx = vec![0.0; x.len()];
        col2im(&dcol, g, &mut dx);
        dx
    });
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolGeometry {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl PoolGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }
}

/// Max pooling with padded cells excluded; ties go to the first cell in
/// row-major window order. Returns values and flat argmax indices.
pub(crate) fn max_pool_forward(x: &[f64], g: &PoolGeometry) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let mut out = Vec::with_capacity(g.planes * ho * wo);
    let mut arg = Vec::with_capacity(g.planes * ho * wo);
    for plane in 0..g.planes {
        let base = plane * g.h * g.w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for i in 0..g.kh {
                    let ih = (oh * g.sh + i) as isize - g.ph as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for j in 0..g.kw {
                        let iw = (ow * g.sw + j) as isize - g.pw as isize;
                        if iw < 0 || iw >= g.w as isize {
                            continue;
                        }
                        let idx = base + ih as usize * g.w + iw as usize;
                        if best_i == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_i = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

pub(crate) fn avg_pool_forward(x: &[f64], g: &PoolGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let area = (g.kh * g.kw) as f64;
    let mut out = Vec::with_capacity(g.planes * ho * wo);
    for plane in 0..g.planes {
        let base = plane * g.h * g.w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = 0.0;
                for i in 0..g.kh {
                    let ih = (oh * g.sh + i) as isize - g.ph as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for j in 0..g.kw {
                        let iw = (ow * g.sw + j) as isize - g.pw as isize;
                        if iw >= 0 && iw < g.w as isize {
                            acc += x[base + ih as usize * g.w + iw as usize];
                        }
                    }
                }
                out.push(acc / area);
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(dy: &[f64], g: &PoolGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let area = (g.kh * g.kw) as f64;
    let mut dx = vec![0.0; g.planes * g.h * g.w];
    for plane in 0..g.planes {
        let base = plane * g.h * g.w;
        for oh in 0..ho {
            for ow in 0..wo {
                let gv = dy[(plane * ho + oh) * wo + ow] / area;
                for i in 0..g.kh {
                    let ih = (oh * g.sh + i) as isize - g.ph as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for j in 0..g.kw {
                        let iw = (ow * g.sw + j) as isize - g.pw as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dx[base + ih as usize * g.w + iw as usize] += gv;
                        }
                    }
                }
            }
        }
    }
    dx
}
