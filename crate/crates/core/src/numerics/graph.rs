//! Tensor-level reverse-mode differentiation.
//!
//! A [`Graph`] is evaluated eagerly: every builder method computes its output
//! immediately and records the primitive together with whatever it needs for
//! the adjoint pass. [`Graph::backward`] walks the record in reverse and
//! accumulates gradients for every parameter leaf.
//!
//! Layout conventions: batched feature tensors are `[b, c, ...spatial]`,
//! dense layers use `[b, c, 1]`. Shape mismatches are programming errors and
//! panic.

use std::collections::BTreeMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;

use super::fd::{ddy_adjoint_into, ddy_into, FluxStencil};
use super::fft::SpectralPlan;
use super::real::Real;
use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

enum Op<T: Real> {
    Input,
    Param(String),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Square(Var),
    Abs(Var),
    Relu(Var),
    ClampMin(Var, T),
    /// Stores tanh of the inner argument for the derivative.
    Gelu(Var, Vec<T>),
    Tanh(Var),
    MulConst(Var, Arc<Vec<T>>),
    ChannelMix { w: Var, x: Var },
    AddChannel { x: Var, bias: Var },
    ScaleChannel { x: Var, s: Var },
    ChannelAffine { x: Var, scale: Vec<T> },
    SpectralConv {
        x: Var,
        w: Var,
        plan: Arc<SpectralPlan<T>>,
        xhat: Vec<Complex<T>>,
    },
    Rfft2 { x: Var, plan: Arc<SpectralPlan<T>> },
    Irfft2 { x: Var, plan: Arc<SpectralPlan<T>> },
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    GlobalAvgPool(Var),
    SumAll(Var),
    SumSpatial(Var),
    SelectChannel { x: Var, c: usize },
    PairDiff { x: Var, pairs: Vec<(usize, usize)> },
    DivEpsGrad {
        x: Var,
        stencils: Vec<Arc<FluxStencil<T>>>,
    },
    Ddy { x: Var, dy_m: f64 },
    Reshape(Var),
}

enum Value<'p, T> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

impl<T> std::ops::Deref for Value<'_, T> {
    type Target = Tensor<T>;
    fn deref(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct Node<'p, T: Real> {
    value: Value<'p, T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Parameter gradients produced by [`Graph::backward`], keyed by name.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }
}

pub struct Graph<'p, T: Real> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<'p, T>>,
}

fn inner(shape: &[usize], from: usize) -> usize {
    shape[from..].iter().product()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Input,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let t = self.store.get(name)?;
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: Op::Param(name.to_string()),
            requires_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "elementwise shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_vec(&ta.shape.clone(), data);
        self.push(t, op, &[a, b])
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let ta = self.value(a);
        let t = Tensor::from_vec(&ta.shape.clone(), ta.data.iter().map(|&x| f(x)).collect());
        self.push(t, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), |x| x.abs())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let lo = T::of(lo);
        self.map(a, Op::ClampMin(a, lo), |x| if x > lo { x } else { lo })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), |x| x.act_tanh())
    }

    /// Gaussian-error linear unit, tanh form.
    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (c, k, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
        let mut th = vec![T::zero(); ta.len()];
        let mut out = vec![T::zero(); ta.len()];
        for ((o, t), &x) in out.iter_mut().zip(th.iter_mut()).zip(&ta.data) {
            *t = (c * (x + k * x * x * x)).act_tanh();
            *o = half * x * (T::one() + *t);
        }
        let t = Tensor::from_vec(&ta.shape.clone(), out);
        self.push(t, Op::Gelu(a, th), &[a])
    }

    /// Elementwise product with a constant tensor of the same size (masking).
    pub fn mul_const(&mut self, a: Var, c: Arc<Vec<T>>) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.len(), c.len(), "mask size mismatch");
        let data = ta.data.iter().zip(c.iter()).map(|(&x, &m)| x * m).collect();
        let t = Tensor::from_vec(&ta.shape.clone(), data);
        self.push(t, Op::MulConst(a, c), &[a])
    }

    /// `w: [co, ci]` applied to every position of `x: [b, ci, ...]`.
    pub fn channel_mix(&mut self, w: Var, x: Var) -> Var {
        let (tw, tx) = (self.value(w), self.value(x));
        assert_eq!(tw.shape.len(), 2);
        let (co, ci) = (tw.shape[0], tw.shape[1]);
        assert_eq!(tx.shape[1], ci, "channel_mix input channels");
        let b = tx.shape[0];
        let n = inner(&tx.shape, 2);
        let mut shape = tx.shape.clone();
        shape[1] = co;
        let mut out = vec![T::zero(); b * co * n];
        for bi in 0..b {
            T::gemm(
                co,
                ci,
                n,
                &tw.data,
                &tx.data[bi * ci * n..(bi + 1) * ci * n],
                T::zero(),
                &mut out[bi * co * n..(bi + 1) * co * n],
            );
        }
        self.push(Tensor::from_vec(&shape, out), Op::ChannelMix { w, x }, &[w, x])
    }

    pub fn add_channel(&mut self, x: Var, bias: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.shape[1];
        assert_eq!(tb.len(), c, "bias size");
        let n = inner(&tx.shape, 2);
        let mut data = tx.data.clone();
        for (k, chunk) in data.chunks_mut(n).enumerate() {
            let b = tb.data[k % c];
            chunk.iter_mut().for_each(|v| *v = *v + b);
        }
        let t = Tensor::from_vec(&tx.shape.clone(), data);
        self.push(t, Op::AddChannel { x, bias }, &[x, bias])
    }

    pub fn scale_channel(&mut self, x: Var, s: Var) -> Var {
        let (tx, ts) = (self.value(x), self.value(s));
        let c = tx.shape[1];
        assert_eq!(ts.len(), c, "scale size");
        let n = inner(&tx.shape, 2);
        let mut data = tx.data.clone();
        for (k, chunk) in data.chunks_mut(n).enumerate() {
            let s = ts.data[k % c];
            chunk.iter_mut().for_each(|v| *v = *v * s);
        }
        let t = Tensor::from_vec(&tx.shape.clone(), data);
        self.push(t, Op::ScaleChannel { x, s }, &[x, s])
    }

    /// Constant per-channel affine map `x * scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Var {
        let tx = self.value(x);
        let c = tx.shape[1];
        assert!(scale.len() == c && shift.len() == c);
        let n = inner(&tx.shape, 2);
        let sc: Vec<T> = scale.iter().map(|&v| T::of(v)).collect();
        let sh: Vec<T> = shift.iter().map(|&v| T::of(v)).collect();
        let mut data = tx.data.clone();
        for (k, chunk) in data.chunks_mut(n).enumerate() {
            let (a, b) = (sc[k % c], sh[k % c]);
            chunk.iter_mut().for_each(|v| *v = *v * a + b);
        }
        let t = Tensor::from_vec(&tx.shape.clone(), data);
        self.push(t, Op::ChannelAffine { x, scale: sc }, &[x])
    }

    /// Fourier-domain channel mixing on retained modes:
    /// `x: [b, ci, nx, ny]`, `w: [ci, co, 2*mx, my, 2]` -> `[b, co, nx, ny]`.
    pub fn spectral_conv(&mut self, x: Var, w: Var, plan: Arc<SpectralPlan<T>>) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (b, ci, nx, ny) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        assert_eq!((nx, ny), (plan.nx, plan.ny), "spectral plan grid");
        let m = plan.n_modes();
        assert_eq!(tw.shape, vec![ci, tw.shape[1], 2 * plan.mx, plan.my, 2]);
        let co = tw.shape[1];
        let wc = as_complex(&tw.data);
        let n = nx * ny;
        let mut xhat = vec![Complex::default(); b * ci * m];
        for bi in 0..b {
            for i in 0..ci {
                let off = (bi * ci + i) * n;
                plan.forward(&tx.data[off..off + n], &mut xhat[(bi * ci + i) * m..(bi * ci + i + 1) * m]);
            }
        }
        let mut out = vec![T::zero(); b * co * n];
        let mut yhat = vec![Complex::default(); co * m];
        for bi in 0..b {
            yhat.iter_mut().for_each(|v| *v = Complex::default());
            for i in 0..ci {
                let xh = &xhat[(bi * ci + i) * m..(bi * ci + i + 1) * m];
                for o in 0..co {
                    let wk = &wc[(i * co + o) * m..(i * co + o + 1) * m];
                    let yk = &mut yhat[o * m..(o + 1) * m];
                    for k in 0..m {
                        yk[k] = yk[k] + wk[k] * xh[k];
                    }
                }
            }
            for o in 0..co {
                let off = (bi * co + o) * n;
                plan.inverse(&yhat[o * m..(o + 1) * m], &mut out[off..off + n]);
            }
        }
        let t = Tensor::from_vec(&[b, co, nx, ny], out);
        self.push(t, Op::SpectralConv { x, w, plan, xhat }, &[x, w])
    }

    /// Half-spectrum forward transform of the last two axes; appends a
    /// trailing (re, im) axis.
    pub fn rfft2(&mut self, x: Var, plan: Arc<SpectralPlan<T>>) -> Var {
        let tx = self.value(x);
        let r = tx.shape.len();
        let (nx, ny) = (tx.shape[r - 2], tx.shape[r - 1]);
        assert_eq!((nx, ny), (plan.nx, plan.ny));
        let m = plan.n_modes();
        let batches = tx.len() / (nx * ny);
        let mut out = vec![Complex::default(); batches * m];
        for bi in 0..batches {
            plan.forward(&tx.data[bi * nx * ny..(bi + 1) * nx * ny], &mut out[bi * m..(bi + 1) * m]);
        }
        let mut shape = tx.shape[..r - 2].to_vec();
        shape.extend([2 * plan.mx, plan.my, 2]);
        let t = Tensor::from_vec(&shape, from_complex(&out));
        self.push(t, Op::Rfft2 { x, plan }, &[x])
    }

    pub fn irfft2(&mut self, x: Var, plan: Arc<SpectralPlan<T>>) -> Var {
        let tx = self.value(x);
        let r = tx.shape.len();
        assert_eq!(&tx.shape[r - 3..], &[2 * plan.mx, plan.my, 2]);
        let m = plan.n_modes();
        let n = plan.nx * plan.ny;
        let xc = as_complex(&tx.data);
        let batches = xc.len() / m;
        let mut out = vec![T::zero(); batches * n];
        for bi in 0..batches {
            plan.inverse(&xc[bi * m..(bi + 1) * m], &mut out[bi * n..(bi + 1) * n]);
        }
        let mut shape = tx.shape[..r - 3].to_vec();
        shape.extend([plan.nx, plan.ny]);
        let t = Tensor::from_vec(&shape, out);
        self.push(t, Op::Irfft2 { x, plan }, &[x])
    }

    /// Square-kernel 2D convolution with zero padding, no bias:
    /// `x: [b, ci, h, w]`, `w: [co, ci, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (b, ci, h, wd) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
        let (co, k) = (tw.shape[0], tw.shape[2]);
        assert_eq!(tw.shape, vec![co, ci, k, k], "conv weight shape");
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            ci,
            co,
            h,
            w: wd,
            k,
            stride,
            pad,
            oh,
            ow,
        };
        let kk = ci * k * k;
        let l = oh * ow;
        let mut cols = vec![T::zero(); b * kk * l];
        for bi in 0..b {
            im2col(&geom, &tx.data[bi * ci * h * wd..(bi + 1) * ci * h * wd], &mut cols[bi * kk * l..(bi + 1) * kk * l]);
        }
        let mut out = vec![T::zero(); b * co * l];
        for bi in 0..b {
            T::gemm(co, kk, l, &tw.data, &cols[bi * kk * l..(bi + 1) * kk * l], T::zero(), &mut out[bi * co * l..(bi + 1) * co * l]);
        }
        let t = Tensor::from_vec(&[b, co, oh, ow], out);
        self.push(t, Op::Conv2d { x, w, geom, cols }, &[x, w])
    }

    /// `[b, c, ...] -> [b, c, 1]` mean over the spatial axes.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (b, c) = (tx.shape[0], tx.shape[1]);
        let n = inner(&tx.shape, 2);
        let inv = T::one() / T::of(n as f64);
        let data = tx.data.chunks(n).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        let t = Tensor::from_vec(&[b, c, 1], data);
        self.push(t, Op::GlobalAvgPool(x), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// `[b, c, ...] -> [b, c]`.
    pub fn sum_spatial(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (b, c) = (tx.shape[0], tx.shape[1]);
        let n = inner(&tx.shape, 2);
        let data = tx.data.chunks(n).map(|ch| ch.iter().copied().sum::<T>()).collect();
        let t = Tensor::from_vec(&[b, c], data);
        self.push(t, Op::SumSpatial(x), &[x])
    }

    /// `[b, C, ...] -> [b, 1, ...]`.
    pub fn select_channel(&mut self, x: Var, c: usize) -> Var {
        let tx = self.value(x);
        let (b, cc) = (tx.shape[0], tx.shape[1]);
        assert!(c < cc);
        let n = inner(&tx.shape, 2);
        let mut data = Vec::with_capacity(b * n);
        for bi in 0..b {
            let off = (bi * cc + c) * n;
            data.extend_from_slice(&tx.data[off..off + n]);
        }
        let mut shape = tx.shape.clone();
        shape[1] = 1;
        let t = Tensor::from_vec(&shape, data);
        self.push(t, Op::SelectChannel { x, c }, &[x])
    }

    /// Rows `x[j] - x[i]` for each `(i, j)` pair along the leading axis.
    pub fn pair_diff(&mut self, x: Var, pairs: Vec<(usize, usize)>) -> Var {
        let tx = self.value(x);
        let n = inner(&tx.shape, 1);
        let mut data = Vec::with_capacity(pairs.len() * n);
        for &(i, j) in &pairs {
            for k in 0..n {
                data.push(tx.data[j * n + k] - tx.data[i * n + k]);
            }
        }
        let mut shape = tx.shape.clone();
        shape[0] = pairs.len();
        let t = Tensor::from_vec(&shape, data);
        self.push(t, Op::PairDiff { x, pairs }, &[x])
    }

    /// Flux-form `div(eps grad x)` per batch element; `x: [b, 1, nx, ny]`.
    pub fn div_eps_grad(&mut self, x: Var, stencils: Vec<Arc<FluxStencil<T>>>) -> Var {
        let tx = self.value(x);
        let b = tx.shape[0];
        assert_eq!(stencils.len(), b);
        let n = inner(&tx.shape, 1);
        let mut out = vec![T::zero(); tx.len()];
        for bi in 0..b {
            stencils[bi].apply(&tx.data[bi * n..(bi + 1) * n], &mut out[bi * n..(bi + 1) * n]);
        }
        let t = Tensor::from_vec(&tx.shape.clone(), out);
        self.push(t, Op::DivEpsGrad { x, stencils }, &[x])
    }

    /// `d/dy` on the last axis; `x: [..., nx, ny]`, spacing in metres.
    pub fn ddy(&mut self, x: Var, dy_m: f64) -> Var {
        let tx = self.value(x);
        let r = tx.shape.len();
        let (nx, ny) = (tx.shape[r - 2], tx.shape[r - 1]);
        let mut out = vec![T::zero(); tx.len()];
        for (src, dst) in tx.data.chunks(nx * ny).zip(out.chunks_mut(nx * ny)) {
            ddy_into(nx, ny, dy_m, src, dst);
        }
        let t = Tensor::from_vec(&tx.shape.clone(), out);
        self.push(t, Op::Ddy { x, dy_m }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let tx = self.value(x);
        assert_eq!(tx.len(), shape.iter().product::<usize>());
        let t = Tensor::from_vec(shape, tx.data.clone());
        self.push(t, Op::Reshape(x), &[x])
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || out.0 >= self.nodes.len() {
            return Err(Error::Usage("backward on an unevaluated graph".into()));
        }
        if self.value(out).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(out)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(vec![T::one()]);
        let mut by_name: BTreeMap<String, Tensor<T>> = BTreeMap::new();

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, &mut by_name);
        }
        Ok(Gradients { by_name })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node<'p, T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        by_name: &mut BTreeMap<String, Tensor<T>>,
    ) {
        let val = |v: Var| -> &Tensor<T> { &self.nodes[v.0].value };
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.needs(v) {
                return;
            }
            let slot = &mut grads[v.0];
            if slot.is_none() {
                *slot = Some(vec![T::zero(); self.nodes[v.0].value.len()]);
            }
            f(slot.as_mut().unwrap());
        };
        match &node.op {
            Op::Input => {}
            Op::Param(name) => {
                let entry = by_name
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(&node.value.shape));
                for (a, &b) in entry.data.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| {
                    for (x, &y) in d.iter_mut().zip(g) {
                        *x = *x - y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * tb.data[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * ta.data[i];
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |d| {
                for (x, &y) in d.iter_mut().zip(g) {
                    *x = *x + y * *s;
                }
            }),
            Op::Square(a) => {
                let ta = val(*a);
                let two = T::of(2.0);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + two * ta.data[i] * g[i];
                    }
                });
            }
            Op::Abs(a) => {
                let ta = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        let x = ta.data[i];
                        if x > T::zero() {
                            d[i] = d[i] + g[i];
                        } else if x < T::zero() {
                            d[i] = d[i] - g[i];
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let ta = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if ta.data[i] > T::zero() {
                            d[i] = d[i] + g[i];
                        }
                    }
                });
            }
            Op::ClampMin(a, lo) => {
                let ta = val(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if ta.data[i] > *lo {
                            d[i] = d[i] + g[i];
                        }
                    }
                });
            }
            Op::Gelu(a, th) => {
                let ta = val(*a);
                let (c, half) = (T::of(GELU_C), T::of(0.5));
                let three_k = T::of(3.0 * GELU_A);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        let x = ta.data[i];
                        let t = th[i];
                        let dt = (T::one() - t * t) * c * (T::one() + three_k * x * x);
                        let deriv = half * (T::one() + t) + half * x * dt;
                        d[i] = d[i] + g[i] * deriv;
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * (T::one() - y.data[i] * y.data[i]);
                    }
                });
            }
            Op::MulConst(a, c) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    d[i] = d[i] + g[i] * c[i];
                }
            }),
            Op::ChannelMix { w, x } => {
                let (tw, tx) = (val(*w), val(*x));
                let (co, ci) = (tw.shape[0], tw.shape[1]);
                let b = tx.shape[0];
                let n = inner(&tx.shape, 2);
                acc(*x, &mut |d| {
                    for bi in 0..b {
                        T::gemm_strided(
                            ci,
                            co,
                            n,
                            &tw.data,
                            (1, ci as isize),
                            &g[bi * co * n..(bi + 1) * co * n],
                            (n as isize, 1),
                            T::one(),
                            &mut d[bi * ci * n..(bi + 1) * ci * n],
                        );
                    }
                });
                acc(*w, &mut |d| {
                    for bi in 0..b {
                        T::gemm_strided(
                            co,
                            n,
                            ci,
                            &g[bi * co * n..(bi + 1) * co * n],
                            (n as isize, 1),
                            &tx.data[bi * ci * n..(bi + 1) * ci * n],
                            (1, n as isize),
                            T::one(),
                            d,
                        );
                    }
                });
            }
            Op::AddChannel { x, bias } => {
                let c = node.value.shape[1];
                let n = inner(&node.value.shape, 2);
                acc(*x, &mut |d| add_into(d, g));
                acc(*bias, &mut |d| {
                    for (i, chunk) in g.chunks(n).enumerate() {
                        d[i % c] = d[i % c] + chunk.iter().copied().sum::<T>();
                    }
                });
            }
            Op::ScaleChannel { x, s } => {
                let (tx, ts) = (val(*x), val(*s));
                let c = node.value.shape[1];
                let n = inner(&node.value.shape, 2);
                acc(*x, &mut |d| {
                    for (k, (dc, gc)) in d.chunks_mut(n).zip(g.chunks(n)).enumerate() {
                        let s = ts.data[k % c];
                        dc.iter_mut().zip(gc).for_each(|(a, &b)| *a = *a + b * s);
                    }
                });
                acc(*s, &mut |d| {
                    for (i, (gc, xc)) in g.chunks(n).zip(tx.data.chunks(n)).enumerate() {
                        let dot: T = gc.iter().zip(xc).map(|(&a, &b)| a * b).sum();
                        d[i % c] = d[i % c] + dot;
                    }
                });
            }
            Op::ChannelAffine { x, scale } => {
                let c = node.value.shape[1];
                let n = inner(&node.value.shape, 2);
                acc(*x, &mut |d| {
                    for (k, (dc, gc)) in d.chunks_mut(n).zip(g.chunks(n)).enumerate() {
                        let s = scale[k % c];
                        dc.iter_mut().zip(gc).for_each(|(a, &b)| *a = *a + b * s);
                    }
                });
            }
            Op::SpectralConv { x, w, plan, xhat } => {
                let tw = val(*w);
                let tx = val(*x);
                let (b, ci, nx, ny) = (tx.shape[0], tx.shape[1], tx.shape[2], tx.shape[3]);
                let co = tw.shape[1];
                let m = plan.n_modes();
                let n = nx * ny;
                let wc = as_complex(&tw.data);
                let mut ghat = vec![Complex::default(); b * co * m];
                for bo in 0..b * co {
                    plan.inverse_adjoint(&g[bo * n..(bo + 1) * n], &mut ghat[bo * m..(bo + 1) * m]);
                }
                acc(*w, &mut |d| {
                    let dc = as_complex_mut(d);
                    for bi in 0..b {
                        for i in 0..ci {
                            let xh = &xhat[(bi * ci + i) * m..(bi * ci + i + 1) * m];
                            for o in 0..co {
                                let gh = &ghat[(bi * co + o) * m..(bi * co + o + 1) * m];
                                let dw = &mut dc[(i * co + o) * m..(i * co + o + 1) * m];
                                for k in 0..m {
                                    dw[k] = dw[k] + gh[k] * xh[k].conj();
                                }
                            }
                        }
                    }
                });
                acc(*x, &mut |d| {
                    let mut dxh = vec![Complex::default(); m];
                    let mut tmp = vec![T::zero(); n];
                    for bi in 0..b {
                        for i in 0..ci {
                            dxh.iter_mut().for_each(|v| *v = Complex::default());
                            for o in 0..co {
                                let gh = &ghat[(bi * co + o) * m..(bi * co + o + 1) * m];
                                let wk = &wc[(i * co + o) * m..(i * co + o + 1) * m];
                                for k in 0..m {
                                    dxh[k] = dxh[k] + wk[k].conj() * gh[k];
                                }
                            }
                            plan.forward_adjoint(&dxh, &mut tmp);
                            add_into(&mut d[(bi * ci + i) * n..(bi * ci + i + 1) * n], &tmp);
                        }
                    }
                });
            }
            Op::Rfft2 { x, plan } => {
                let m = plan.n_modes();
                let n = plan.nx * plan.ny;
                let gc = as_complex(g);
                acc(*x, &mut |d| {
                    let mut tmp = vec![T::zero(); n];
                    for (bi, chunk) in gc.chunks(m).enumerate() {
                        plan.forward_adjoint(chunk, &mut tmp);
                        add_into(&mut d[bi * n..(bi + 1) * n], &tmp);
                    }
                });
            }
            Op::Irfft2 { x, plan } => {
                let m = plan.n_modes();
                let n = plan.nx * plan.ny;
                acc(*x, &mut |d| {
                    let dc = as_complex_mut(d);
                    let mut tmp = vec![Complex::default(); m];
                    for (bi, chunk) in g.chunks(n).enumerate() {
                        plan.inverse_adjoint(chunk, &mut tmp);
                        for (a, b) in dc[bi * m..(bi + 1) * m].iter_mut().zip(&tmp) {
                            *a = *a + *b;
                        }
                    }
                });
            }
            Op::Conv2d { x, w, geom, cols } => {
                let tw = val(*w);
                let b = node.value.shape[0];
                let kk = geom.ci * geom.k * geom.k;
                let l = geom.oh * geom.ow;
                let co = geom.co;
                acc(*w, &mut |d| {
                    for bi in 0..b {
                        T::gemm_strided(
                            co,
                            l,
                            kk,
                            &g[bi * co * l..(bi + 1) * co * l],
                            (l as isize, 1),
                            &cols[bi * kk * l..(bi + 1) * kk * l],
                            (1, l as isize),
                            T::one(),
                            d,
                        );
                    }
                });
                acc(*x, &mut |d| {
                    let mut dcol = vec![T::zero(); kk * l];
                    let img = geom.ci * geom.h * geom.w;
                    for bi in 0..b {
                        T::gemm_strided(
                            kk,
                            co,
                            l,
                            &tw.data,
                            (1, kk as isize),
                            &g[bi * co * l..(bi + 1) * co * l],
                            (l as isize, 1),
                            T::zero(),
                            &mut dcol,
                        );
                        col2im_add(geom, &dcol, &mut d[bi * img..(bi + 1) * img]);
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let tx = val(*x);
                let n = inner(&tx.shape, 2);
                let inv = T::one() / T::of(n as f64);
                acc(*x, &mut |d| {
                    for (i, v) in d.iter_mut().enumerate() {
                        *v = *v + g[i / n] * inv;
                    }
                });
            }
            Op::SumAll(x) => acc(*x, &mut |d| {
                for v in d.iter_mut() {
                    *v = *v + g[0];
                }
            }),
            Op::SumSpatial(x) => {
                let n = inner(&val(*x).shape, 2);
                acc(*x, &mut |d| {
                    for (i, v) in d.iter_mut().enumerate() {
                        *v = *v + g[i / n];
                    }
                });
            }
            Op::SelectChannel { x, c } => {
                let tx = val(*x);
                let (b, cc) = (tx.shape[0], tx.shape[1]);
                let n = inner(&tx.shape, 2);
                acc(*x, &mut |d| {
                    for bi in 0..b {
                        let off = (bi * cc + c) * n;
                        add_into(&mut d[off..off + n], &g[bi * n..(bi + 1) * n]);
                    }
                });
            }
            Op::PairDiff { x, pairs } => {
                let n = inner(&val(*x).shape, 1);
                acc(*x, &mut |d| {
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        for k in 0..n {
                            d[j * n + k] = d[j * n + k] + g[p * n + k];
                            d[i * n + k] = d[i * n + k] - g[p * n + k];
                        }
                    }
                });
            }
            Op::DivEpsGrad { x, stencils } => {
                let n = inner(&val(*x).shape, 1);
                acc(*x, &mut |d| {
                    let mut tmp = vec![T::zero(); n];
                    for (bi, st) in stencils.iter().enumerate() {
                        st.apply(&g[bi * n..(bi + 1) * n], &mut tmp);
                        add_into(&mut d[bi * n..(bi + 1) * n], &tmp);
                    }
                });
            }
            Op::Ddy { x, dy_m } => {
                let shape = &val(*x).shape;
                let r = shape.len();
                let (nx, ny) = (shape[r - 2], shape[r - 1]);
                acc(*x, &mut |d| {
                    let mut tmp = vec![T::zero(); nx * ny];
                    for (gc, dc) in g.chunks(nx * ny).zip(d.chunks_mut(nx * ny)) {
                        ddy_adjoint_into(nx, ny, *dy_m, gc, &mut tmp);
                        add_into(dc, &tmp);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |d| add_into(d, g)),
        }
    }
}

fn add_into<T: Real>(d: &mut [T], g: &[T]) {
    for (a, &b) in d.iter_mut().zip(g) {
        *a = *a + b;
    }
}

/// Reinterprets interleaved (re, im) storage as complex numbers.
pub fn as_complex<T: Real>(data: &[T]) -> &[Complex<T>] {
    assert!(data.len() % 2 == 0);
    // SAFETY: Complex<T> is repr(C) { re: T, im: T }, so a slice of 2n
    // scalars has the layout of n complex values.
    unsafe { std::slice::from_raw_parts(data.as_ptr() as *const Complex<T>, data.len() / 2) }
}

fn as_complex_mut<T: Real>(data: &mut [T]) -> &mut [Complex<T>] {
    assert!(data.len() % 2 == 0);
    // SAFETY: see `as_complex`.
    unsafe { std::slice::from_raw_parts_mut(data.as_mut_ptr() as *mut Complex<T>, data.len() / 2) }
}

fn from_complex<T: Real>(data: &[Complex<T>]) -> Vec<T> {
    data.iter().flat_map(|c| [c.re, c.im]).collect()
}

fn im2col<T: Real>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let l = g.oh * g.ow;
    for c in 0..g.ci {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            img[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let l = g.oh * g.ow;
    for c in 0..g.ci {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        let i = (c * g.h + iy as usize) * g.w + ix as usize;
                        img[i] = img[i] + src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}
