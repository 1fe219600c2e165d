//! Fully-connected stacks over a flat parameter vector.
//!
//! Flat layout: layer by layer, each layer's weight matrix `(out, in)` row-major
//! followed by its bias vector. Policies and both halves of the autoencoder use
//! this layout, so a decoder output can be fed straight back in as policy weights.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::layers::Activation;
use crate::linalg::{axpy, dot};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseLayout {
    dims: Vec<usize>,
    hidden: Activation,
    output: Activation,
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    inp: usize,
    out: usize,
    w: usize,
    b: usize,
}

impl DenseLayout {
    /// `dims = [in, h1, ..., out]`, at least one layer, all sizes ≥ 1.
    pub fn new(dims: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(alloc::format!(
                "dense layout needs at least two positive sizes, got {dims:?}"
            )));
        }
        Ok(Self {
            dims,
            hidden,
            output,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn spans(&self) -> impl Iterator<Item = LayerSpan> + '_ {
        let mut off = 0;
        self.dims.windows(2).map(move |w| {
            let span = LayerSpan {
                inp: w[0],
                out: w[1],
                w: off,
                b: off + w[0] * w[1],
            };
            off += w[0] * w[1] + w[1];
            span
        })
    }

    /// Offsets `(weights, bias)` of layer `l` in the flat vector.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let s = self.spans().nth(l).expect("layer index out of range");
        (s.w, s.b)
    }

    /// Splits a flat vector into per-layer `(weights, bias)` slices.
    pub fn unflatten<'a>(&self, params: &'a [f64]) -> Result<Vec<(&'a [f64], &'a [f64])>> {
        check_len("DenseLayout::unflatten", self.param_count(), params.len())?;
        Ok(self
            .spans()
            .map(|s| (&params[s.w..s.b], &params[s.b..s.b + s.out]))
            .collect())
    }

    /// Inverse of [`unflatten`](Self::unflatten).
    pub fn flatten(&self, layers: &[(&[f64], &[f64])]) -> Result<Vec<f64>> {
        check_len("DenseLayout::flatten", self.num_layers(), layers.len())?;
        let mut out = Vec::with_capacity(self.param_count());
        for (s, (w, b)) in self.spans().zip(layers) {
            check_len("DenseLayout::flatten weights", s.inp * s.out, w.len())?;
            check_len("DenseLayout::flatten bias", s.out, b.len())?;
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        Ok(out)
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        check_len("flat parameters", self.param_count(), params.len())
    }

    /// Forward pass for one input row. `scratch` is resized as needed.
    pub fn forward(&self, params: &[f64], x: &[f64], scratch: &mut Scratch, out: &mut [f64]) {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(x.len(), self.input_dim());
        debug_assert_eq!(out.len(), self.output_dim());
        let n = self.num_layers();
        scratch.a.clear();
        scratch.a.extend_from_slice(x);
        for (l, s) in self.spans().enumerate() {
            let act = self.activation(l);
            let w = &params[s.w..s.b];
            let b = &params[s.b..s.b + s.out];
            scratch.b.clear();
            scratch.b.extend(
                w.chunks_exact(s.inp)
                    .zip(b)
                    .map(|(row, bi)| act.apply(dot(row, &scratch.a) + bi)),
            );
            if l + 1 == n {
                out.copy_from_slice(&scratch.b);
            } else {
                core::mem::swap(&mut scratch.a, &mut scratch.b);
            }
        }
    }

    /// Forward pass keeping every layer's pre- and post-activation for [`backward`](Self::backward).
    pub fn forward_cached(&self, params: &[f64], x: &[f64], cache: &mut ForwardCache) {
        debug_assert_eq!(params.len(), self.param_count());
        cache.ensure(self);
        cache.post[0].copy_from_slice(x);
        for (l, s) in self.spans().enumerate() {
            let act = self.activation(l);
            let w = &params[s.w..s.b];
            let b = &params[s.b..s.b + s.out];
            let (head, tail) = cache.post.split_at_mut(l + 1);
            let input = &head[l];
            let pre = &mut cache.pre[l];
            let post = &mut tail[0];
            for (o, row) in w.chunks_exact(s.inp).enumerate() {
                let z = dot(row, input) + b[o];
                pre[o] = z;
                post[o] = act.apply(z);
            }
        }
    }

    pub fn cached_output<'c>(&self, cache: &'c ForwardCache) -> &'c [f64] {
        &cache.post[self.num_layers()]
    }

    /// Backward pass from `grad_out` (gradient w.r.t. the stack's output).
    /// Parameter gradients are *added* into `grad_params`; the input gradient
    /// is written to `grad_in` when given.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &mut ForwardCache,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_in: Option<&mut [f64]>,
    ) {
        debug_assert_eq!(grad_params.len(), self.param_count());
        debug_assert_eq!(grad_out.len(), self.output_dim());
        let n = self.num_layers();
        let spans: Vec<LayerSpan> = self.spans().collect();
        cache.delta.clear();
        cache.delta.extend_from_slice(grad_out);
        let need_input = grad_in.is_some();
        for l in (0..n).rev() {
            let s = spans[l];
            let act = self.activation(l);
            for (o, d) in cache.delta.iter_mut().enumerate() {
                *d *= act.derivative(cache.pre[l][o], cache.post[l + 1][o]);
            }
            let input = &cache.post[l];
            let w = &params[s.w..s.b];
            let (gw, gb) = grad_params[s.w..s.b + s.out].split_at_mut(s.inp * s.out);
            for (o, &d) in cache.delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, input, &mut gw[o * s.inp..(o + 1) * s.inp]);
                }
                gb[o] += d;
            }
            if l > 0 || need_input {
                cache.delta_prev.clear();
                cache.delta_prev.resize(s.inp, 0.0);
                for (row, &d) in w.chunks_exact(s.inp).zip(cache.delta.iter()) {
                    if d != 0.0 {
                        axpy(d, row, &mut cache.delta_prev);
                    }
                }
                core::mem::swap(&mut cache.delta, &mut cache.delta_prev);
            }
        }
        if let Some(g) = grad_in {
            g.copy_from_slice(&cache.delta);
        }
    }
}

/// Two ping-pong buffers for [`DenseLayout::forward`].
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Per-layer activations recorded by [`DenseLayout::forward_cached`].
#[derive(Debug, Default, Clone)]
pub struct ForwardCache {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl ForwardCache {
    pub fn new(layout: &DenseLayout) -> Self {
        let mut c = Self::default();
        c.ensure(layout);
        c
    }

    fn ensure(&mut self, layout: &DenseLayout) {
        let dims = layout.dims();
        let ok = self.post.len() == dims.len()
            && self.post.iter().zip(dims).all(|(v, &d)| v.len() == d);
        if !ok {
            self.post = dims.iter().map(|&d| vec![0.0; d]).collect();
            self.pre = dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{affine_forward, elu_forward, tanh_forward};
    use crate::linalg::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layout() -> DenseLayout {
        DenseLayout::new(vec![3, 5, 4, 2], Activation::Elu, Activation::Tanh).unwrap()
    }

    #[test]
    fn param_count_and_offsets() {
        let l = layout();
        assert_eq!(l.param_count(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(l.layer_offsets(0), (0, 15));
        assert_eq!(l.layer_offsets(1), (20, 40));
        assert!(DenseLayout::new(vec![3], Activation::Elu, Activation::Tanh).is_err());
        assert!(DenseLayout::new(vec![3, 0, 1], Activation::Elu, Activation::Tanh).is_err());
    }

    #[test]
    fn forward_matches_layer_by_layer_oracle() {
        let l = layout();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..l.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = [0.2, -0.9, 1.3];
        let layers = l.unflatten(&p).unwrap();
        let mut h = x.to_vec();
        for (i, (w, b)) in layers.iter().enumerate() {
            let w = Matrix::from_vec(b.len(), h.len(), w.to_vec()).unwrap();
            let z = affine_forward(&h, &w, b).unwrap();
            h = if i + 1 == layers.len() { tanh_forward(&z) } else { elu_forward(&z) };
        }
        let mut out = [0.0; 2];
        l.forward(&p, &x, &mut Scratch::default(), &mut out);
        let mut cache = ForwardCache::new(&l);
        l.forward_cached(&p, &x, &mut cache);
        for k in 0..2 {
            assert!((out[k] - h[k]).abs() < 1e-14);
            assert_eq!(out[k], l.cached_output(&cache)[k]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let l = DenseLayout::new(vec![3, 5, 4, 2], Activation::Elu, Activation::Identity).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p: Vec<f64> = (0..l.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = vec![0.4, -0.2, 0.9];
        let g = [0.7, -1.1];
        let obj = |p: &[f64], x: &[f64]| {
            let mut out = [0.0; 2];
            l.forward(p, x, &mut Scratch::default(), &mut out);
            dot(&out, &g)
        };
        let mut cache = ForwardCache::new(&l);
        l.forward_cached(&p, &x, &mut cache);
        let mut gp = vec![0.0; l.param_count()];
        let mut gx = vec![0.0; 3];
        l.backward(&p, &mut cache, &g, &mut gp, Some(&mut gx));
        let h = 1e-5;
        for i in 0..p.len() {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp[i] += h;
            pm[i] -= h;
            let fd = (obj(&pp, &x) - obj(&pm, &x)) / (2.0 * h);
            assert!((fd - gp[i]).abs() <= 1e-6 * fd.abs().max(gp[i].abs()).max(1e-3), "param {i}");
        }
        for i in 0..3 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (obj(&p, &xp) - obj(&p, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn flatten_round_trip() {
        let l = layout();
        let p: Vec<f64> = (0..l.param_count()).map(|i| i as f64).collect();
        let layers = l.unflatten(&p).unwrap();
        assert_eq!(l.flatten(&layers).unwrap(), p);
        assert!(l.unflatten(&p[1..]).is_err());
    }
}
