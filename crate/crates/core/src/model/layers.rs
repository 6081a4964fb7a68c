//! Dense layer kernels on single-image tensors (`[channels][rows][cols]`).

use crate::data::SeededRng;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane();
        &self.data[c * n..(c + 1) * n]
    }
}

/// C (m×n) = A (m×k) · B (k×n) [+ C]. Transposition flags refer to how the
/// row-major buffers `a` and `b` are read.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: buffer lengths are asserted above and the strides describe
    // exactly those m×k, k×n and m×n row/column-major views.
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

/// Unfold `k`×`k` zero-padded neighborhoods (pad = k/2) into a
/// `[c*k*k][h*w]` matrix.
pub(crate) fn im2col(input: &Tensor, k: usize) -> Vec<f64> {
    let (c, h, w) = (input.c, input.h, input.w);
    let pad = (k / 2) as isize;
    let n = h * w;
    let mut cols = vec![0.0; c * k * k * n];
    for ci in 0..c {
        let src = input.channel(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let s = sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[y * w + x0..y * w + x1].copy_from_slice(&src[s + sx0..s + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image gradient.
pub(crate) fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize) -> Tensor {
    let pad = (k / 2) as isize;
    let n = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * n..(ci + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let s = sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    for (d, v) in dst[s + sx0..s + sx0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&src[y * w + x0..y * w + x1])
                    {
                        *d += v;
                    }
                }
            }
        }
    }
    out
}

/// Same-padded k×k convolution. Weight layout `[cout][cin][k][k]`.
/// Returns the output and the unfolded input needed for the backward pass.
pub(crate) fn conv_forward(input: &Tensor, weight: &[f64], bias: &[f64], cout: usize, k: usize) -> (Tensor, Vec<f64>) {
    let n = input.plane();
    let cols = if k == 1 { input.data.clone() } else { im2col(input, k) };
    let mut out = Tensor::zeros(cout, input.h, input.w);
    for (co, &b) in bias.iter().enumerate() {
        out.data[co * n..(co + 1) * n].fill(b);
    }
    gemm(
        cout,
        input.c * k * k,
        n,
        weight,
        false,
        &cols,
        false,
        &mut out.data,
        true,
    );
    (out, cols)
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    grad_out: &Tensor,
    cols: &[f64],
    weight: &[f64],
    cin: usize,
    k: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input_grad: bool,
) -> Option<Tensor> {
    let cout = grad_out.c;
    let n = grad_out.plane();
    let kk = cin * k * k;
    gemm(cout, n, kk, &grad_out.data, false, cols, true, grad_w, true);
    for (co, gb) in grad_b.iter_mut().enumerate() {
        *gb += grad_out.channel(co).iter().sum::<f64>();
    }
    if !need_input_grad {
        return None;
    }
    let mut dcols = vec![0.0; kk * n];
    gemm(kk, cout, n, weight, true, &grad_out.data, false, &mut dcols, false);
    if k == 1 {
        Some(Tensor {
            c: cin,
            h: grad_out.h,
            w: grad_out.w,
            data: dcols,
        })
    } else {
        Some(col2im(&dcols, cin, grad_out.h, grad_out.w, k))
    }
}

/// 2×2 stride-2 transposed convolution. Weight layout `[cin][cout][2][2]`.
pub(crate) fn up_forward(input: &Tensor, weight: &[f64], bias: &[f64], cout: usize) -> Tensor {
    let (h, w) = (input.h, input.w);
    let n = h * w;
    // rows indexed by (co, ky, kx)
    let mut y = vec![0.0; cout * 4 * n];
    gemm(cout * 4, input.c, n, weight, true, &input.data, false, &mut y, false);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(cout, oh, ow);
    for co in 0..cout {
        for ky in 0..2 {
            for kx in 0..2 {
                let row = &y[((co * 2 + ky) * 2 + kx) * n..][..n];
                for yy in 0..h {
                    let orow = &mut out.data[co * oh * ow + (2 * yy + ky) * ow..][..ow];
                    for xx in 0..w {
                        orow[2 * xx + kx] = row[yy * w + xx] + bias[co];
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn up_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Tensor {
    let cout = grad_out.c;
    let (h, w) = (input.h, input.w);
    let n = h * w;
    let ow = grad_out.w;
    let mut dy = vec![0.0; cout * 4 * n];
    for co in 0..cout {
        grad_b[co] += grad_out.channel(co).iter().sum::<f64>();
        for ky in 0..2 {
            for kx in 0..2 {
                let row = &mut dy[((co * 2 + ky) * 2 + kx) * n..][..n];
                for yy in 0..h {
                    let grow = &grad_out.data[co * grad_out.plane() + (2 * yy + ky) * ow..][..ow];
                    for xx in 0..w {
                        row[yy * w + xx] = grow[2 * xx + kx];
                    }
                }
            }
        }
    }
    // dW[cin][cout*4] += In[cin][n] · dYᵀ
    gemm(input.c, n, cout * 4, &input.data, false, &dy, true, grad_w, true);
    let mut grad_in = Tensor::zeros(input.c, h, w);
    gemm(
        input.c,
        cout * 4,
        n,
        weight,
        false,
        &dy,
        false,
        &mut grad_in.data,
        false,
    );
    grad_in
}

/// 2×2 max-pool; returns the pooled tensor and the flat argmax per output.
pub(crate) fn maxpool_forward(input: &Tensor) -> (Tensor, Vec<usize>) {
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = Tensor::zeros(input.c, oh, ow);
    let mut arg = vec![0; input.c * oh * ow];
    for c in 0..input.c {
        let base = c * input.plane();
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * input.w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * input.w + 2 * x + dx;
                    if input.data[i] > input.data[best] {
                        best = i;
                    }
                }
                let o = c * oh * ow + y * ow + x;
                out.data[o] = input.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(grad_out: &Tensor, arg: &[usize], c: usize, h: usize, w: usize) -> Tensor {
    let mut g = Tensor::zeros(c, h, w);
    for (o, &i) in arg.iter().enumerate() {
        g.data[i] += grad_out.data[o];
    }
    g
}

pub(crate) fn relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the gradient where the ReLU output was not positive.
pub(crate) fn relu_backward_inplace(grad: &mut Tensor, output: &Tensor) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Inverted-dropout scale factors: 0 with probability `p`, else 1/(1-p).
pub(crate) fn dropout_mask(len: usize, p: f64, rng: &mut SeededRng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

pub(crate) fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

pub(crate) fn split_channels(t: Tensor, first: usize) -> (Tensor, Tensor) {
    let n = t.plane();
    let mut data = t.data;
    let rest = data.split_off(first * n);
    (
        Tensor {
            c: first,
            h: t.h,
            w: t.w,
            data,
        },
        Tensor {
            c: t.c - first,
            h: t.h,
            w: t.w,
            data: rest,
        },
    )
}

/// Per-pixel softmax over channels.
pub(crate) fn softmax(logits: &Tensor) -> Tensor {
    let n = logits.plane();
    let mut out = Tensor::zeros(logits.c, logits.h, logits.w);
    for p in 0..n {
        let mut mx = f64::NEG_INFINITY;
        for c in 0..logits.c {
            mx = mx.max(logits.data[c * n + p]);
        }
        let mut sum = 0.0;
        for c in 0..logits.c {
            let e = (logits.data[c * n + p] - mx).exp();
            out.data[c * n + p] = e;
            sum += e;
        }
        for c in 0..logits.c {
            out.data[c * n + p] /= sum;
        }
    }
    out
}
