//! Reverse-mode differentiation over a recorded tape.
//!
//! A [`Graph`] records each operation as it is evaluated; [`Graph::backward`]
//! replays the tape from a scalar loss. Gradients are available for any node,
//! intermediate inputs included, not only for parameters.

use std::sync::atomic::{AtomicU8, Ordering};

use crate::error::{Error, Result};
use crate::numcore::element::{lit, Element};
use crate::numcore::kernels::{self, AdainCache, ConvGeom};
use crate::numcore::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used for fault injection and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum OpKind {
    Add = 1,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Exp,
    Sum,
    Mean,
    Reshape,
    Conv2d,
    Upsample2,
    Linear,
    ChannelMean,
    ChannelStd,
    Adain,
    ConcatCols,
    SliceCols,
    GatherRows,
    ClampMin,
    RowNorm,
    Mse,
    SoftmaxCe,
    KlStdNormal,
    Consistency,
}

impl OpKind {
    pub const ALL: [OpKind; 25] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Exp,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Reshape,
        OpKind::Conv2d,
        OpKind::Upsample2,
        OpKind::Linear,
        OpKind::ChannelMean,
        OpKind::ChannelStd,
        OpKind::Adain,
        OpKind::ConcatCols,
        OpKind::SliceCols,
        OpKind::GatherRows,
        OpKind::ClampMin,
        OpKind::RowNorm,
        OpKind::Mse,
        OpKind::SoftmaxCe,
        OpKind::KlStdNormal,
        OpKind::Consistency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Reshape => "reshape",
            OpKind::Conv2d => "conv2d",
            OpKind::Upsample2 => "upsample2",
            OpKind::Linear => "linear",
            OpKind::ChannelMean => "channel_mean",
            OpKind::ChannelStd => "channel_std",
            OpKind::Adain => "adain",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SliceCols => "slice_cols",
            OpKind::GatherRows => "gather_rows",
            OpKind::ClampMin => "clamp_min",
            OpKind::RowNorm => "row_norm",
            OpKind::Mse => "mse",
            OpKind::SoftmaxCe => "softmax_cross_entropy",
            OpKind::KlStdNormal => "kl_std_normal",
            OpKind::Consistency => "consistency",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

static FAULT: AtomicU8 = AtomicU8::new(0);

/// Deliberately corrupts the reverse rule of one operation kind (its input
/// gradients are scaled by 1.5). Used by the gradient checker's mutation
/// test; `None` restores correct behaviour.
pub fn inject_fault(kind: Option<OpKind>) {
    FAULT.store(kind.map_or(0, |k| k as u8), Ordering::SeqCst);
}

fn faulty(kind: OpKind) -> bool {
    FAULT.load(Ordering::Relaxed) == kind as u8
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Upsample2(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    ChannelMean(Var),
    ChannelStd {
        x: Var,
        mean: Vec<T>,
        floored: Vec<bool>,
    },
    Adain {
        x: Var,
        mu: Var,
        sigma: Var,
        cache: AdainCache<T>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ClampMin(Var, T),
    RowNorm(Var),
    Mse(Var, Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    KlStdNormal {
        psi: Var,
        xi: Var,
    },
    Consistency {
        z: Var,
        groups: usize,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Exp(_) => OpKind::Exp,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Upsample2(_) => OpKind::Upsample2,
            Op::Linear { .. } => OpKind::Linear,
            Op::ChannelMean(_) => OpKind::ChannelMean,
            Op::ChannelStd { .. } => OpKind::ChannelStd,
            Op::Adain { .. } => OpKind::Adain,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::ClampMin(..) => OpKind::ClampMin,
            Op::RowNorm(_) => OpKind::RowNorm,
            Op::Mse(..) => OpKind::Mse,
            Op::SoftmaxCe { .. } => OpKind::SoftmaxCe,
            Op::KlStdNormal { .. } => OpKind::KlStdNormal,
            Op::Consistency { .. } => OpKind::Consistency,
        })
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single-threaded computation tape. Build it, evaluate forward, then call
/// [`Graph::backward`] once per loss of interest.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn matrix(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        &[n, d] => Ok((n, d)),
        _ => Err(Error::shape(format!("{what} expects a 2-d tensor, got {shape:?}"))),
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input: no gradient is tracked through it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        let ng = self.ng(&[x]);
        self.push(value, op, ng)
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        same_shape(self.shape(a), self.shape(b), what)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(T::zero()))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn clamp_min(&mut self, x: Var, min: T) -> Var {
        self.unary(x, Op::ClampMin(x, min), |v| v.max(min))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / lit(v.numel() as f64);
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// (B, C, H, W) * (O, C, K, K) + bias (O), zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)?;
        same_shape(self.shape(b), &[geom.out_ch], "conv2d bias")?;
        let keep_cols = self.requires_grad(w);
        let (out, cols) = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            keep_cols,
        );
        let value = Tensor::new(&[geom.batch, geom.out_ch, geom.out_h, geom.out_w], out)?;
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }, ng))
    }

    /// Nearest-neighbour 2x spatial upsampling of a (B, C, H, W) tensor.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let &[b, c, h, w] = self.shape(x) else {
            return Err(Error::shape("upsample2 expects a 4-d tensor"));
        };
        let out = kernels::upsample2_forward(self.value(x).data(), b * c, h, w);
        let value = Tensor::new(&[b, c, 2 * h, 2 * w], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::Upsample2(x), ng))
    }

    /// Fully connected layer: x (N, in), w (out, in), b (out).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, din) = matrix(self.shape(x), "linear input")?;
        let (dout, win) = matrix(self.shape(w), "linear weight")?;
        if win != din {
            return Err(Error::shape(format!("linear: input width {din} vs weight {win}")));
        }
        same_shape(self.shape(b), &[dout], "linear bias")?;
        let out = kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            din,
            dout,
        );
        let value = Tensor::new(&[n, dout], out)?;
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(value, Op::Linear { x, w, b }, ng))
    }

    fn planes(&self, x: Var, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [b, c, h, w] => Ok((b, c, h * w)),
            ref s => Err(Error::shape(format!("{what} expects (B,C,H,W), got {s:?}"))),
        }
    }

    /// Per-channel spatial mean, (B, C, H, W) -> (B, C).
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (b, c, plane) = self.planes(x, "channel_mean")?;
        let (mu, _, _) = kernels::plane_moments(self.value(x).data(), plane);
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(&[b, c], mu)?, Op::ChannelMean(x), ng))
    }

    /// Per-channel population std floored at `EPS_STD`, (B, C, H, W) -> (B, C).
    pub fn channel_std(&mut self, x: Var) -> Result<Var> {
        let (b, c, plane) = self.planes(x, "channel_std")?;
        let (mean, sd, floored) = kernels::plane_moments(self.value(x).data(), plane);
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(&[b, c], sd)?, Op::ChannelStd { x, mean, floored }, ng))
    }

    /// Re-normalizes each channel of `x` to mean `mu` and std `sigma`, both (B, C).
    pub fn adain(&mut self, x: Var, mu: Var, sigma: Var) -> Result<Var> {
        let (b, c, plane) = self.planes(x, "adain")?;
        same_shape(self.shape(mu), &[b, c], "adain target mean")?;
        same_shape(self.shape(sigma), &[b, c], "adain target std")?;
        let (out, cache) = kernels::adain_forward(
            self.value(x).data(),
            plane,
            self.value(mu).data(),
            self.value(sigma).data(),
        );
        let value = Tensor::new(self.shape(x), out)?;
        let ng = self.ng(&[x, mu, sigma]);
        Ok(self.push(value, Op::Adain { x, mu, sigma, cache }, ng))
    }

    /// Concatenates 2-d tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = matrix(self.shape(parts[0]), "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, d) = matrix(self.shape(p), "concat_cols")?;
            if pn != n {
                return Err(Error::shape(format!("concat_cols: {pn} rows vs {n}")));
            }
            widths.push(d);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &d) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * d..(r + 1) * d]);
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(Tensor::new(&[n, total], data)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Columns `[start, start + len)` of a 2-d tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = matrix(self.shape(x), "slice_cols")?;
        if len == 0 || start + len > d {
            return Err(Error::shape(format!("slice_cols {start}+{len} of width {d}")));
        }
        let src = self.value(x).data();
        let data = (0..n).flat_map(|r| src[r * d + start..r * d + start + len].iter().copied()).collect();
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(&[n, len], data)?, Op::SliceCols { x, start }, ng))
    }

    /// Leading-axis gather; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let value = self.value(x).select_rows(idx)?;
        let ng = self.ng(&[x]);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Euclidean norm of each row, (N, D) -> (N).
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let (n, d) = matrix(self.shape(x), "row_norm")?;
        let data = self.value(x).data().chunks(d).map(kernels::norm).collect();
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(&[n], data)?, Op::RowNorm(x), ng))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.shape(a), self.shape(b), "mse")?;
        let n: T = lit(self.value(a).numel() as f64);
        let s = self.value(a).sq_dist(self.value(b)) / n;
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), ng))
    }

    /// Mean softmax cross-entropy of (N, K) logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = matrix(self.shape(logits), "softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::contract(format!("label {bad} outside [0, {k})")));
        }
        let (loss, probs) = kernels::softmax_ce_forward(self.value(logits).data(), labels, k);
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// KL[N(psi, diag xi^2) || N(0, I)], summed over dims and averaged over rows.
    pub fn kl_std_normal(&mut self, psi: Var, xi: Var) -> Result<Var> {
        same_shape(self.shape(psi), self.shape(xi), "kl")?;
        let (n, _) = matrix(self.shape(psi), "kl")?;
        let (p, s) = (self.value(psi).data(), self.value(xi).data());
        if let Some(bad) = s.iter().find(|&&v| !(v > T::zero())) {
            return Err(Error::contract(format!("posterior std must be positive, got {bad}")));
        }
        let half: T = lit(0.5);
        let two: T = lit(2.0);
        let total: T = p
            .iter()
            .zip(s)
            .map(|(&m, &sd)| half * (m * m + sd * sd - T::one() - two * sd.ln()))
            .sum();
        let ng = self.ng(&[psi, xi]);
        Ok(self.push(Tensor::scalar(total / lit(n as f64)), Op::KlStdNormal { psi, xi }, ng))
    }

    /// Mean distance of each row to its group mean; rows laid out
    /// member-major over `groups` groups (see `kernels::consistency_forward`).
    pub fn consistency(&mut self, z: Var, groups: usize) -> Result<Var> {
        let (n, d) = matrix(self.shape(z), "consistency")?;
        if groups == 0 || n % groups != 0 || n / groups < 2 {
            return Err(Error::contract(format!(
                "consistency needs >= 2 members per group ({n} rows, {groups} groups)"
            )));
        }
        let loss = kernels::consistency_forward(self.value(z).data(), groups, n / groups, d);
        let ng = self.ng(&[z]);
        Ok(self.push(Tensor::scalar(loss), Op::Consistency { z, groups }, ng))
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape(), vec![T::one()])?);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                let mut local = Vec::new();
                self.op_backward(node, &g, &mut local)?;
                let bad = node.op.kind().is_some_and(faulty);
                for (v, mut t) in local {
                    if bad {
                        t = t.map(|x| x * lit(1.5));
                    }
                    accumulate(&mut grads[v.0], t)?;
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradient of `loss` with respect to each of `wrt`; nodes that do not
    /// influence the loss get zeros.
    pub fn grad(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>> {
        let mut g = self.backward(loss)?;
        Ok(wrt
            .iter()
            .map(|&v| g.take(v).unwrap_or_else(|| Tensor::zeros(self.shape(v))))
            .collect())
    }

    fn op_backward(&self, node: &Node<T>, g: &Tensor<T>, out: &mut Vec<(Var, Tensor<T>)>) -> Result<()> {
        let want = |v: Var| self.nodes[v.0].needs_grad;
        let gd = g.data();
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v), data);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &v in [a, b] {
                    if want(v) {
                        out.push((v, g.clone()));
                    }
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    out.push((*a, g.clone()));
                }
                if want(*b) {
                    out.push((*b, g.map(|v| -v)));
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let d = gd.iter().zip(self.value(*b).data()).map(|(&x, &y)| x * y).collect();
                    out.push((*a, like(*a, d)?));
                }
                if want(*b) {
                    let d = gd.iter().zip(self.value(*a).data()).map(|(&x, &y)| x * y).collect();
                    out.push((*b, like(*b, d)?));
                }
            }
            Op::Scale(x, c) => out.push((*x, g.map(|v| v * *c))),
            Op::Relu(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&dy, &v)| if v > T::zero() { dy } else { T::zero() })
                    .collect();
                out.push((*x, like(*x, d)?));
            }
            Op::Sigmoid(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&dy, &s)| dy * s * (T::one() - s))
                    .collect();
                out.push((*x, like(*x, d)?));
            }
            Op::Exp(x) => {
                let d = gd.iter().zip(node.value.data()).map(|(&dy, &e)| dy * e).collect();
                out.push((*x, like(*x, d)?));
            }
            Op::ClampMin(x, m) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&dy, &v)| if v > *m { dy } else { T::zero() })
                    .collect();
                out.push((*x, like(*x, d)?));
            }
            Op::Sum(x) => out.push((*x, Tensor::full(self.shape(*x), gd[0]))),
            Op::Mean(x) => {
                let n: T = lit(self.value(*x).numel() as f64);
                out.push((*x, Tensor::full(self.shape(*x), gd[0] / n)));
            }
            Op::Reshape(x) => out.push((*x, like(*x, gd.to_vec())?)),
            Op::Conv2d { x, w, b, geom, cols } => {
                let grads = kernels::conv2d_backward(
                    geom,
                    gd,
                    self.value(*w).data(),
                    cols,
                    (want(*x), want(*w), want(*b)),
                );
                if let Some(dx) = grads.dx {
                    out.push((*x, like(*x, dx)?));
                }
                if let Some(dw) = grads.dw {
                    out.push((*w, like(*w, dw)?));
                }
                if let Some(db) = grads.db {
                    out.push((*b, like(*b, db)?));
                }
            }
            Op::Upsample2(x) => {
                let &[b, c, h, w] = self.shape(*x) else { unreachable!() };
                out.push((*x, like(*x, kernels::upsample2_backward(gd, b * c, h, w))?));
            }
            Op::Linear { x, w, b } => {
                let (n, din) = matrix(self.shape(*x), "linear")?;
                let dout = self.shape(*w)[0];
                let (dx, dw, db) = kernels::linear_backward(
                    gd,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    (n, din, dout),
                    (want(*x), want(*w), want(*b)),
                );
                for (v, d) in [(x, dx), (w, dw), (b, db)] {
                    if let Some(d) = d {
                        out.push((*v, like(*v, d)?));
                    }
                }
            }
            Op::ChannelMean(x) => {
                let (_, _, plane) = self.planes(*x, "channel_mean")?;
                let inv: T = lit(1.0 / plane as f64);
                let d = gd.iter().flat_map(|&v| std::iter::repeat(v * inv).take(plane)).collect();
                out.push((*x, like(*x, d)?));
            }
            Op::ChannelStd { x, mean, floored } => {
                let (_, _, plane) = self.planes(*x, "channel_std")?;
                let count: T = lit(plane as f64);
                let xv = self.value(*x).data();
                let sd = node.value.data();
                let mut d = vec![T::zero(); xv.len()];
                for p in 0..gd.len() {
                    if floored[p] {
                        continue;
                    }
                    let k = gd[p] / (count * sd[p]);
                    for i in p * plane..(p + 1) * plane {
                        d[i] = k * (xv[i] - mean[p]);
                    }
                }
                out.push((*x, like(*x, d)?));
            }
            Op::Adain { x, mu, sigma, cache } => {
                let (_, _, plane) = self.planes(*x, "adain")?;
                let (dx, dmu, dsig) =
                    kernels::adain_backward(gd, plane, self.value(*sigma).data(), cache, want(*x));
                if let Some(dx) = dx {
                    out.push((*x, like(*x, dx)?));
                }
                if want(*mu) {
                    out.push((*mu, like(*mu, dmu)?));
                }
                if want(*sigma) {
                    out.push((*sigma, like(*sigma, dsig)?));
                }
            }
            Op::ConcatCols(parts) => {
                let (n, total) = matrix(node.value.shape(), "concat_cols")?;
                let mut offset = 0;
                for &p in parts {
                    let d = self.shape(p)[1];
                    if want(p) {
                        let data = (0..n)
                            .flat_map(|r| gd[r * total + offset..r * total + offset + d].iter().copied())
                            .collect();
                        out.push((p, like(p, data)?));
                    }
                    offset += d;
                }
            }
            Op::SliceCols { x, start } => {
                let (n, d) = matrix(self.shape(*x), "slice_cols")?;
                let len = node.value.shape()[1];
                let mut data = vec![T::zero(); n * d];
                for r in 0..n {
                    data[r * d + start..r * d + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                out.push((*x, like(*x, data)?));
            }
            Op::GatherRows { x, idx } => {
                let inner: usize = self.shape(*x)[1..].iter().product();
                let mut data = vec![T::zero(); self.value(*x).numel()];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..inner {
                        data[i * inner + j] = data[i * inner + j] + gd[k * inner + j];
                    }
                }
                out.push((*x, like(*x, data)?));
            }
            Op::RowNorm(x) => {
                let d = self.shape(*x)[1];
                let xv = self.value(*x).data();
                let norms = node.value.data();
                let mut data = vec![T::zero(); xv.len()];
                for r in 0..norms.len() {
                    if norms[r] > T::zero() {
                        let k = gd[r] / norms[r];
                        for j in 0..d {
                            data[r * d + j] = k * xv[r * d + j];
                        }
                    }
                }
                out.push((*x, like(*x, data)?));
            }
            Op::Mse(a, b) => {
                let n: T = lit(self.value(*a).numel() as f64);
                let k = lit::<T>(2.0) * gd[0] / n;
                let diff: Vec<T> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(&x, &y)| k * (x - y))
                    .collect();
                if want(*b) {
                    out.push((*b, like(*b, diff.iter().map(|&v| -v).collect())?));
                }
                if want(*a) {
                    out.push((*a, like(*a, diff)?));
                }
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let d = kernels::softmax_ce_backward(probs, labels, k, gd[0]);
                out.push((*logits, like(*logits, d)?));
            }
            Op::KlStdNormal { psi, xi } => {
                let n: T = lit(self.shape(*psi)[0] as f64);
                let k = gd[0] / n;
                if want(*psi) {
                    out.push((*psi, self.value(*psi).map(|m| k * m)));
                }
                if want(*xi) {
                    out.push((*xi, self.value(*xi).map(|s| k * (s - T::one() / s))));
                }
            }
            Op::Consistency { z, groups } => {
                let (n, d) = matrix(self.shape(*z), "consistency")?;
                let data = kernels::consistency_backward(self.value(*z).data(), *groups, n / groups, d, gd[0]);
                out.push((*z, like(*z, data)?));
            }
        }
        Ok(())
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, t: Tensor<T>) -> Result<()> {
    match slot {
        None => *slot = Some(t),
        Some(acc) => {
            same_shape(acc.shape(), t.shape(), "gradient accumulation")?;
            for (a, v) in acc.data_mut().iter_mut().zip(t.data()) {
                *a = *a + *v;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.grad(y, &[x]).unwrap();
        assert_eq!(grads[0].item().unwrap(), 6.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_input_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::scalar(2.0));
        let unused = g.variable(Tensor::zeros(&[3]));
        let y = g.exp(x);
        let grads = g.grad(y, &[x, unused]).unwrap();
        assert!((grads[0].item().unwrap() - 2f64.exp()).abs() < 1e-12);
        assert_eq!(grads[1].data(), &[0.0; 3]);
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_f64(&[2], &[-1.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn adain_sum_gradient_wrt_target_mean_counts_positions() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 2, 1, 3], &[1.0, 2.0, 4.0, 0.0, 1.0, 5.0]).unwrap());
        let mu = g.variable(Tensor::from_f64(&[1, 2], &[0.5, -1.0]).unwrap());
        let sd = g.constant(Tensor::from_f64(&[1, 2], &[2.0, 3.0]).unwrap());
        let y = g.adain(x, mu, sd).unwrap();
        let s = g.sum(y);
        let d = g.grad(s, &[mu]).unwrap();
        assert_eq!(d[0].data(), &[3.0, 3.0]);
    }
}
