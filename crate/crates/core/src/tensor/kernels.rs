//! Slice-level compute kernels shared by the forward and backward passes.
//!
//! Every kernel works on contiguous `[C, H, W]` planes of one batch item; the
//! tape handles batching and shape validation.

/// Geometry of a 2D sliding window.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn output_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.pad;
        let pw = w + 2 * self.pad;
        if ph < self.kh || pw < self.kw || self.stride == 0 {
            return None;
        }
        Some(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c = a * b + beta * c` for strided row/column-major operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the bounds above cover every element the strided views touch.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Unfolds `[C, H, W]` into `[C*kh*kw, Ho*Wo]` columns.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, win: Window, ho: usize, wo: usize) -> Vec<f64> {
    let mut cols = vec![0.0; c * win.kh * win.kw * ho * wo];
    let mut row = 0;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..win.kh {
            for j in 0..win.kw {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let y = (oy * win.stride + i) as isize - win.pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src = &plane[y as usize * w..(y as usize + 1) * w];
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let xx = (ox * win.stride + j) as isize - win.pad as isize;
                        if xx >= 0 && xx < w as isize {
                            *o = src[xx as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], x: &mut [f64], c: usize, h: usize, w: usize, win: Window, ho: usize, wo: usize) {
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for i in 0..win.kh {
            for j in 0..win.kw {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let y = (oy * win.stride + i) as isize - win.pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * w..(y as usize + 1) * w];
                    for (ox, &v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let xx = (ox * win.stride + j) as isize - win.pad as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[xx as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Shapes of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    pub win: Window,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.cin * self.win.kh * self.win.kw
    }
}

pub(crate) fn conv2d_forward(x: &[f64], kernel: &[f64], bias: Option<&[f64]>, d: ConvDims) -> Vec<f64> {
    let (in_sz, out_hw) = (d.cin * d.h * d.w, d.ho * d.wo);
    let mut out = vec![0.0; d.batch * d.cout * out_hw];
    for b in 0..d.batch {
        let xb = &x[b * in_sz..(b + 1) * in_sz];
        let ob = &mut out[b * d.cout * out_hw..(b + 1) * d.cout * out_hw];
        if let Some(bias) = bias {
            for (co, plane) in ob.chunks_exact_mut(out_hw).enumerate() {
                plane.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        if d.win.is_pointwise() {
            gemm(d.cout, d.cin, out_hw, kernel, (d.cin, 1), xb, (out_hw, 1), beta, ob, out_hw);
        } else {
            let cols = im2col(xb, d.cin, d.h, d.w, d.win, d.ho, d.wo);
            gemm(d.cout, d.patch(), out_hw, kernel, (d.patch(), 1), &cols, (out_hw, 1), beta, ob, out_hw);
        }
    }
    out
}

/// Gradients of a convolution. Each output buffer is only filled when requested.
pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    d: ConvDims,
    want: (bool, bool, bool),
) -> ConvGrads {
    let (in_sz, out_hw, patch) = (d.cin * d.h * d.w, d.ho * d.wo, d.patch());
    let mut gx = want.0.then(|| vec![0.0; d.batch * in_sz]);
    let mut gk = want.1.then(|| vec![0.0; d.cout * patch]);
    let mut gb = want.2.then(|| vec![0.0; d.cout]);
    for b in 0..d.batch {
        let xb = &x[b * in_sz..(b + 1) * in_sz];
        let gob = &grad_out[b * d.cout * out_hw..(b + 1) * d.cout * out_hw];
        if let Some(gb) = gb.as_mut() {
            for (co, plane) in gob.chunks_exact(out_hw).enumerate() {
                gb[co] += plane.iter().sum::<f64>();
            }
        }
        let pointwise = d.win.is_pointwise();
        let cols_owned;
        let cols: &[f64] = if pointwise || gk.is_none() {
            xb
        } else {
            cols_owned = im2col(xb, d.cin, d.h, d.w, d.win, d.ho, d.wo);
            &cols_owned
        };
        if let Some(gk) = gk.as_mut() {
            // grad_kernel[Co, P] += grad_out[Co, HW] * cols[P, HW]^T
            gemm(d.cout, out_hw, patch, gob, (out_hw, 1), cols, (1, out_hw), 1.0, gk, patch);
        }
        if let Some(gx) = gx.as_mut() {
            let gxb = &mut gx[b * in_sz..(b + 1) * in_sz];
            if pointwise {
                gemm(d.cin, d.cout, out_hw, kernel, (1, patch), gob, (out_hw, 1), 0.0, gxb, out_hw);
            } else {
                let mut gcols = vec![0.0; patch * out_hw];
                gemm(patch, d.cout, out_hw, kernel, (1, patch), gob, (out_hw, 1), 0.0, &mut gcols, out_hw);
                col2im(&gcols, gxb, d.cin, d.h, d.w, d.win, d.ho, d.wo);
            }
        }
    }
    ConvGrads {
        input: gx,
        kernel: gk,
        bias: gb,
    }
}

/// Transposed convolution. `d` describes the *input* grid as `ho x wo` and
/// the larger output grid as `h x w`, i.e. the geometry of the adjoint
/// strided convolution; `d.cin` is the transposed op's input channel count
/// and `d.cout` its output channel count.
pub(crate) fn transpose_conv2d_forward(x: &[f64], kernel: &[f64], d: ConvDims) -> Vec<f64> {
    let (in_hw, out_sz) = (d.ho * d.wo, d.cout * d.h * d.w);
    let patch = d.cout * d.win.kh * d.win.kw;
    let mut out = vec![0.0; d.batch * out_sz];
    let mut cols = vec![0.0; patch * in_hw];
    for b in 0..d.batch {
        let xb = &x[b * d.cin * in_hw..(b + 1) * d.cin * in_hw];
        // cols[P, HW] = kernel[Cin, P]^T * x[Cin, HW]
        gemm(patch, d.cin, in_hw, kernel, (1, patch), xb, (in_hw, 1), 0.0, &mut cols, in_hw);
        col2im(&cols, &mut out[b * out_sz..(b + 1) * out_sz], d.cout, d.h, d.w, d.win, d.ho, d.wo);
    }
    out
}

pub(crate) fn transpose_conv2d_backward(
    x: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    d: ConvDims,
    want: (bool, bool),
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (in_hw, out_sz) = (d.ho * d.wo, d.cout * d.h * d.w);
    let patch = d.cout * d.win.kh * d.win.kw;
    let mut gx = want.0.then(|| vec![0.0; d.batch * d.cin * in_hw]);
    let mut gk = want.1.then(|| vec![0.0; d.cin * patch]);
    for b in 0..d.batch {
        let gcols = im2col(&grad_out[b * out_sz..(b + 1) * out_sz], d.cout, d.h, d.w, d.win, d.ho, d.wo);
        if let Some(gx) = gx.as_mut() {
            let gxb = &mut gx[b * d.cin * in_hw..(b + 1) * d.cin * in_hw];
            gemm(d.cin, patch, in_hw, kernel, (patch, 1), &gcols, (in_hw, 1), 0.0, gxb, in_hw);
        }
        if let Some(gk) = gk.as_mut() {
            let xb = &x[b * d.cin * in_hw..(b + 1) * d.cin * in_hw];
            gemm(d.cin, in_hw, patch, xb, (in_hw, 1), &gcols, (1, in_hw), 1.0, gk, patch);
        }
    }
    (gx, gk)
}

/// 2x2 max pooling over `planes` planes of `h x w`. Returns values and the
/// flat input index of each window's maximum (first in row-major order on ties).
pub(crate) fn maxpool2(x: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let r0 = base + 2 * oy * w + 2 * ox;
                let mut best = r0;
                for cand in [r0 + 1, r0 + w, r0 + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

/// 2x2 mean pooling; a trailing odd row or column is dropped.
pub(crate) fn avgpool2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let r0 = base + 2 * oy * w + 2 * ox;
                out.push(0.25 * (x[r0] + x[r0 + 1] + x[r0 + w] + x[r0 + w + 1]));
            }
        }
    }
    out
}

pub(crate) fn avgpool2_backward(g: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut gx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let v = 0.25 * g[p * oh * ow + oy * ow + ox];
                let r0 = base + 2 * oy * w + 2 * ox;
                gx[r0] += v;
                gx[r0 + 1] += v;
                gx[r0 + w] += v;
                gx[r0 + w + 1] += v;
            }
        }
    }
    gx
}

/// `[B, C*r*r, H, W]` -> `[B, C, H*r, W*r]`; `c` is the output channel count.
pub(crate) fn pixel_shuffle(x: &[f64], out: &mut [f64], batch: usize, c: usize, h: usize, w: usize, r: usize) {
    let (ow, plane) = (w * r, h * w);
    for b in 0..batch {
        for ch in 0..c {
            let obase = (b * c + ch) * plane * r * r;
            for i in 0..r {
                for j in 0..r {
                    let ibase = ((b * c + ch) * r * r + i * r + j) * plane;
                    for y in 0..h {
                        for xx in 0..w {
                            out[obase + (y * r + i) * ow + xx * r + j] = x[ibase + y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

/// Inverse of [`pixel_shuffle`]; `h`, `w` are the *reduced* extents.
pub(crate) fn pixel_unshuffle(x: &[f64], out: &mut [f64], batch: usize, c: usize, h: usize, w: usize, r: usize) {
    let (iw, plane) = (w * r, h * w);
    for b in 0..batch {
        for ch in 0..c {
            let ibase = (b * c + ch) * plane * r * r;
            for i in 0..r {
                for j in 0..r {
                    let obase = ((b * c + ch) * r * r + i * r + j) * plane;
                    for y in 0..h {
                        for xx in 0..w {
                            out[obase + y * w + xx] = x[ibase + (y * r + i) * iw + xx * r + j];
                        }
                    }
                }
            }
        }
    }
}

/// Separable "valid" filtering of each `h x w` plane with a 1D kernel.
pub(crate) fn blur_valid(x: &[f64], planes: usize, h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut out = vec![0.0; planes * oh * ow];
    let mut tmp = vec![0.0; h * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for ox in 0..ow {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    acc += kv * row[ox + j];
                }
                tmp[y * ow + ox] = acc;
            }
        }
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let drow = &mut dst[oy * ow..(oy + 1) * ow];
            for (i, kv) in k.iter().enumerate() {
                let trow = &tmp[(oy + i) * ow..(oy + i + 1) * ow];
                for (d, t) in drow.iter_mut().zip(trow) {
                    *d += kv * t;
                }
            }
        }
    }
    out
}

pub(crate) fn blur_valid_backward(g: &[f64], planes: usize, h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut gx = vec![0.0; planes * h * w];
    let mut gtmp = vec![0.0; h * ow];
    for p in 0..planes {
        gtmp.fill(0.0);
        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let grow = &gp[oy * ow..(oy + 1) * ow];
            for (i, kv) in k.iter().enumerate() {
                let trow = &mut gtmp[(oy + i) * ow..(oy + i + 1) * ow];
                for (t, gv) in trow.iter_mut().zip(grow) {
                    *t += kv * gv;
                }
            }
        }
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let row = &mut dst[y * w..(y + 1) * w];
            for ox in 0..ow {
                let gv = gtmp[y * ow + ox];
                for (j, kv) in k.iter().enumerate() {
                    row[ox + j] += kv * gv;
                }
            }
        }
    }
    gx
}
