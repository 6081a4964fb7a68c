//! U-Net wiring: encoder blocks with max-pooling, a bottleneck block, and
//! decoder blocks fed by 2×2 up-convolutions concatenated with the skip.
//! Every block is conv3×3-ReLU-conv3×3-ReLU followed by dropout.

use std::ops::Range;

use super::layers::{self, Tensor};
use super::{ModelConfig, ParamSpec};
use crate::data::SeededRng;

#[derive(Clone, Debug)]
struct Conv {
    w: Range<usize>,
    b: Range<usize>,
    cin: usize,
    cout: usize,
    k: usize,
}

#[derive(Clone, Debug)]
struct Up {
    w: Range<usize>,
    b: Range<usize>,
    cout: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Architecture {
    /// `depth` encoder blocks followed by the bottleneck.
    enc: Vec<[Conv; 2]>,
    /// Indexed by level; level `l` upsamples from level `l + 1`.
    dec: Vec<(Up, [Conv; 2])>,
    head: Conv,
    specs: Vec<ParamSpec>,
    dropout: f64,
}

struct Builder {
    specs: Vec<ParamSpec>,
    offset: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> Range<usize> {
        let len: usize = shape.iter().product();
        let r = self.offset..self.offset + len;
        self.specs.push(ParamSpec {
            name,
            shape,
            offset: self.offset,
            len,
        });
        self.offset += len;
        r
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let w = self.push(format!("{name}.weight"), vec![cout, cin, k, k]);
        let b = self.push(format!("{name}.bias"), vec![cout]);
        Conv { w, b, cin, cout, k }
    }

    fn up(&mut self, name: &str, cin: usize, cout: usize) -> Up {
        let w = self.push(format!("{name}.weight"), vec![cin, cout, 2, 2]);
        let b = self.push(format!("{name}.bias"), vec![cout]);
        Up { w, b, cout }
    }
}

struct BlockCache {
    cols1: Vec<f64>,
    a1: Tensor,
    cols2: Vec<f64>,
    a2: Tensor,
    mask: Option<Vec<f64>>,
}

pub(crate) struct Forward {
    pub probs: Tensor,
    pub bottleneck: Tensor,
    pub penultimate: Tensor,
    enc: Vec<BlockCache>,
    pool_args: Vec<Vec<usize>>,
    up_inputs: Vec<Tensor>,
    dec: Vec<BlockCache>,
    head_cols: Vec<f64>,
}

impl Architecture {
    pub fn new(cfg: &ModelConfig) -> Self {
        let ch = |l: usize| cfg.base_channels << l;
        let mut b = Builder {
            specs: Vec::new(),
            offset: 0,
        };
        let mut enc = Vec::with_capacity(cfg.depth + 1);
        for l in 0..=cfg.depth {
            let name = if l == cfg.depth {
                "bottleneck".to_string()
            } else {
                format!("enc{l}")
            };
            let cin = if l == 0 { 1 } else { ch(l - 1) };
            enc.push([
                b.conv(&format!("{name}.conv1"), cin, ch(l), 3),
                b.conv(&format!("{name}.conv2"), ch(l), ch(l), 3),
            ]);
        }
        let mut dec_rev = Vec::with_capacity(cfg.depth);
        for l in (0..cfg.depth).rev() {
            let up = b.up(&format!("dec{l}.up"), ch(l + 1), ch(l));
            let convs = [
                b.conv(&format!("dec{l}.conv1"), 2 * ch(l), ch(l), 3),
                b.conv(&format!("dec{l}.conv2"), ch(l), ch(l), 3),
            ];
            dec_rev.push((up, convs));
        }
        dec_rev.reverse();
        let head = b.conv("head", ch(0), cfg.num_classes, 1);
        Self {
            enc,
            dec: dec_rev,
            head,
            specs: b.specs,
            dropout: cfg.dropout_rate,
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.last().map_or(0, |s| s.offset + s.len)
    }

    /// Inputs feeding one output unit of the layer owning `spec`.
    pub fn fan_in(&self, spec: &ParamSpec) -> usize {
        if spec.name.contains(".up.") {
            // [cin][cout][2][2]: each output pixel sees cin inputs
            spec.shape[0]
        } else {
            spec.shape[1] * spec.shape[2] * spec.shape[3]
        }
    }

    fn block_forward(
        &self,
        params: &[f64],
        convs: &[Conv; 2],
        x: &Tensor,
        rng: Option<&mut SeededRng>,
        train: bool,
    ) -> (Tensor, BlockCache) {
        let [c1, c2] = convs;
        let (mut a1, cols1) = layers::conv_forward(x, &params[c1.w.clone()], &params[c1.b.clone()], c1.cout, c1.k);
        layers::relu_inplace(&mut a1);
        let (mut a2, cols2) = layers::conv_forward(&a1, &params[c2.w.clone()], &params[c2.b.clone()], c2.cout, c2.k);
        layers::relu_inplace(&mut a2);
        let (out, mask) = match rng {
            Some(rng) if self.dropout > 0.0 => {
                let mask = layers::dropout_mask(a2.data.len(), self.dropout, rng);
                let mut out = a2.clone();
                for (v, m) in out.data.iter_mut().zip(&mask) {
                    *v *= m;
                }
                (out, Some(mask))
            }
            _ => (a2.clone(), None),
        };
        let cache = if train {
            BlockCache {
                cols1,
                a1,
                cols2,
                a2,
                mask,
            }
        } else {
            BlockCache {
                cols1: Vec::new(),
                a1: Tensor::zeros(0, 0, 0),
                cols2: Vec::new(),
                a2,
                mask: None,
            }
        };
        (out, cache)
    }

    fn block_backward(
        &self,
        params: &[f64],
        convs: &[Conv; 2],
        mut grad: Tensor,
        cache: &BlockCache,
        grads: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let [c1, c2] = convs;
        if let Some(mask) = &cache.mask {
            for (g, m) in grad.data.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        layers::relu_backward_inplace(&mut grad, &cache.a2);
        let mut g1 = {
            let (gw, gb) = split_grads(grads, &c2.w, &c2.b);
            layers::conv_backward(&grad, &cache.cols2, &params[c2.w.clone()], c2.cin, c2.k, gw, gb, true)
                .expect("input gradient requested")
        };
        layers::relu_backward_inplace(&mut g1, &cache.a1);
        let (gw, gb) = split_grads(grads, &c1.w, &c1.b);
        layers::conv_backward(
            &g1,
            &cache.cols1,
            &params[c1.w.clone()],
            c1.cin,
            c1.k,
            gw,
            gb,
            need_input_grad,
        )
    }

    /// `rng` = Some draws fresh dropout masks in forward order; `train` keeps
    /// the activations needed by [`Architecture::backward`].
    pub fn forward(&self, params: &[f64], input: Tensor, mut rng: Option<&mut SeededRng>, train: bool) -> Forward {
        let depth = self.dec.len();
        let mut skips = Vec::with_capacity(depth);
        let mut enc_caches = Vec::with_capacity(depth + 1);
        let mut pool_args = Vec::with_capacity(depth);
        let mut x = input;
        for convs in &self.enc[..depth] {
            let (out, cache) = self.block_forward(params, convs, &x, rng.as_deref_mut(), train);
            enc_caches.push(cache);
            let (pooled, arg) = layers::maxpool_forward(&out);
            pool_args.push(arg);
            skips.push(out);
            x = pooled;
        }
        let (mut x, cache) = self.block_forward(params, &self.enc[depth], &x, rng.as_deref_mut(), train);
        let bottleneck = cache.a2.clone();
        enc_caches.push(cache);

        let mut up_inputs: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
        let mut dec_caches: Vec<Option<BlockCache>> = (0..depth).map(|_| None).collect();
        for l in (0..depth).rev() {
            let (up, convs) = &self.dec[l];
            let u = layers::up_forward(&x, &params[up.w.clone()], &params[up.b.clone()], up.cout);
            let cat = layers::concat(&u, &skips[l]);
            let (out, cache) = self.block_forward(params, convs, &cat, rng.as_deref_mut(), train);
            dec_caches[l] = Some(cache);
            up_inputs[l] = Some(if train { x } else { Tensor::zeros(0, 0, 0) });
            x = out;
        }
        let h = &self.head;
        let (logits, head_cols) = layers::conv_forward(&x, &params[h.w.clone()], &params[h.b.clone()], h.cout, 1);
        let probs = layers::softmax(&logits);
        Forward {
            probs,
            bottleneck,
            penultimate: x,
            enc: enc_caches,
            pool_args,
            up_inputs: up_inputs.into_iter().map(|t| t.expect("filled")).collect(),
            dec: dec_caches.into_iter().map(|c| c.expect("filled")).collect(),
            head_cols: if train { head_cols } else { Vec::new() },
        }
    }

    /// Accumulate d(loss)/d(params) into `grads` given d(loss)/d(logits).
    pub fn backward(&self, params: &[f64], fwd: &Forward, dlogits: Tensor, grads: &mut [f64]) {
        let depth = self.dec.len();
        let h = &self.head;
        let mut g = {
            let (gw, gb) = split_grads(grads, &h.w, &h.b);
            layers::conv_backward(&dlogits, &fwd.head_cols, &params[h.w.clone()], h.cin, 1, gw, gb, true)
                .expect("input gradient requested")
        };
        let mut skip_grads: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
        for l in 0..depth {
            let (up, convs) = &self.dec[l];
            let gcat = self
                .block_backward(params, convs, g, &fwd.dec[l], grads, true)
                .expect("input gradient requested");
            let (gup, gskip) = layers::split_channels(gcat, up.cout);
            skip_grads[l] = Some(gskip);
            let (gw, gb) = split_grads(grads, &up.w, &up.b);
            g = layers::up_backward(&gup, &fwd.up_inputs[l], &params[up.w.clone()], gw, gb);
        }
        g = self
            .block_backward(params, &self.enc[depth], g, &fwd.enc[depth], grads, true)
            .expect("input gradient requested");
        for l in (0..depth).rev() {
            let skip = skip_grads[l].take().expect("filled");
            let mut gl = layers::maxpool_backward(&g, &fwd.pool_args[l], skip.c, skip.h, skip.w);
            for (a, b) in gl.data.iter_mut().zip(&skip.data) {
                *a += b;
            }
            match self.block_backward(params, &self.enc[l], gl, &fwd.enc[l], grads, l > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
    }
}

fn split_grads<'a>(grads: &'a mut [f64], w: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grads[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}

/// Mean pixel cross-entropy and its gradient with respect to the logits.
pub(crate) fn cross_entropy(probs: &Tensor, targets: &[usize]) -> (f64, Tensor) {
    let n = probs.plane();
    let mut grad = probs.clone();
    let mut losses = Vec::with_capacity(n);
    for (p, &t) in targets.iter().enumerate() {
        losses.push(-probs.data[t * n + p].max(f64::MIN_POSITIVE).ln());
        grad.data[t * n + p] -= 1.0;
    }
    let inv = 1.0 / n as f64;
    for g in &mut grad.data {
        *g *= inv;
    }
    (crate::numeric::tree_sum(&losses) * inv, grad)
}
