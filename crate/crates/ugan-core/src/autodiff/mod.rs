//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every differentiable operation executed during a
//! forward pass. [`Tape::backward`] replays the record in reverse execution
//! order, accumulating gradients into every leaf created with
//! [`Tape::leaf`]. Gradients on leaves persist and add up across backward
//! calls until the tape is dropped, so callers can pull them into parameter
//! stores after each step.
//!
//! The op set is exactly what the VAE/GAN presets need: dense layers, the
//! fixed-geometry conv pair, the four activations, batch norm, dropout, and
//! the elementwise/reduction plumbing losses are made of. Convolutions are
//! specialized to 3x3 kernels with stride 2 and padding 1 (output padding 1
//! for the transpose), which round-trips 28 <-> 14 <-> 7 exactly.

pub mod kernels;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{dims2, dims4, Tensor};
use kernels::{conv_out_extent, gemm_nn, transpose};
use rand_chacha::ChaCha8Rng;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Train/eval switch for mode-dependent ops (batch norm, dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T: Real> {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
    },
    ConvTranspose2d {
        x: Var,
        k: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Reshape {
        x: Var,
    },
    ConcatCols {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Exp {
        x: Var,
    },
    Ln {
        x: Var,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    SoftmaxRows {
        x: Var,
    },
    RowGather {
        x: Var,
        idx: Vec<usize>,
    },
    SumAll {
        x: Var,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Execution record of one forward pass plus its saved intermediates.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-channel batch statistics emitted by a train-mode batch norm, used by
/// the caller to update running statistics.
#[derive(Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a tensor that gradients should flow into.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Record a tensor that takes no gradient (inputs, targets, noise).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf; `None` when no gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ── recorded operations ─────────────────────────────────────────────

    /// out[i,j] = sum_k x[i,k] w[k,j] + b[j]
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, kx) = dims2(self.value(x), "dense")?;
        let (kw, n) = dims2(self.value(w), "dense")?;
        if kx != kw {
            return Err(Error::Dimension {
                op: "dense",
                detail: format!("x has inner dimension {kx} but w expects {kw}"),
            });
        }
        if self.value(b).shape() != [n] {
            return Err(Error::Dimension {
                op: "dense",
                detail: format!(
                    "bias shape {:?} does not match output width {n}",
                    self.value(b).shape()
                ),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(x).data(), self.value(w).data(), &mut out, m, kx, n);
        let bias = self.value(b).data();
        for row in out.chunks_exact_mut(n) {
            for (o, &bv) in row.iter_mut().zip(bias.iter()) {
                *o += bv;
            }
        }
        let rg = self.requires(&[x, w, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rg, Op::Dense { x, w, b }))
    }

    /// Stride-2 3x3 convolution with padding 1 (cross-correlation).
    /// x[n, cin, h, w] * k[cout, cin, 3, 3] + b[cout] -> [n, cout, ceil(h/2), ceil(w/2)]
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (n, cin, h, w) = dims4(self.value(x), "conv2d")?;
        if h < 3 || w < 3 {
            return Err(Error::Dimension {
                op: "conv2d",
                detail: format!("spatial extent {h}x{w} is below the 3x3 kernel"),
            });
        }
        let (cout, kcin) = match self.value(k).shape() {
            [cout, kcin, 3, 3] => (*cout, *kcin),
            other => {
                return Err(Error::Dimension {
                    op: "conv2d",
                    detail: format!("kernel shape {other:?}, expected [cout, cin, 3, 3]"),
                })
            }
        };
        if kcin != cin {
            return Err(Error::Dimension {
                op: "conv2d",
                detail: format!("input has {cin} channels but kernel expects {kcin}"),
            });
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::Dimension {
                op: "conv2d",
                detail: format!("bias shape {:?}, expected [{cout}]", self.value(b).shape()),
            });
        }
        let out = kernels::conv2d_fwd(
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
            n,
            cin,
            h,
            w,
            cout,
        );
        let shape = vec![n, cout, conv_out_extent(h), conv_out_extent(w)];
        let rg = self.requires(&[x, k, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Conv2d { x, k, b }))
    }

    /// Stride-2 3x3 fractional-strided convolution with padding 1 and output
    /// padding 1; the exact adjoint of [`Tape::conv2d`].
    /// x[n, cin, h, w] * k[cin, cout, 3, 3] + b[cout] -> [n, cout, 2h, 2w]
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (n, cin, h, w) = dims4(self.value(x), "conv_transpose2d")?;
        let (kcin, cout) = match self.value(k).shape() {
            [kcin, cout, 3, 3] => (*kcin, *cout),
            other => {
                return Err(Error::Dimension {
                    op: "conv_transpose2d",
                    detail: format!("kernel shape {other:?}, expected [cin, cout, 3, 3]"),
                })
            }
        };
        if kcin != cin {
            return Err(Error::Dimension {
                op: "conv_transpose2d",
                detail: format!("input has {cin} channels but kernel expects {kcin}"),
            });
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::Dimension {
                op: "conv_transpose2d",
                detail: format!("bias shape {:?}, expected [{cout}]", self.value(b).shape()),
            });
        }
        let out = kernels::conv_transpose2d_fwd(
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
            n,
            cin,
            h,
            w,
            cout,
        );
        let rg = self.requires(&[x, k, b]);
        Ok(self.push(
            Tensor::new(vec![n, cout, 2 * h, 2 * w], out)?,
            rg,
            Op::ConvTranspose2d { x, k, b },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.requires(&[x]);
        self.push(value, rg, Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.requires(&[x]);
        self.push(value, rg, Op::LeakyRelu { x, slope })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        let rg = self.requires(&[x]);
        self.push(value, rg, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.requires(&[x]);
        self.push(value, rg, Op::Sigmoid { x })
    }

    /// Train-mode batch norm over the channel axis of a [n, c] or [n, c, h, w]
    /// tensor. Normalizes with per-channel batch statistics (population
    /// variance), applies the affine pair, and hands the batch statistics
    /// back so the caller can fold them into running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let (n, c, spatial) = bn_dims(self.value(x))?;
        if n < 2 {
            return Err(Error::Contract(format!(
                "batchnorm: train mode requires batch >= 2, got {n}"
            )));
        }
        check_bn_affine(self.value(gamma).shape(), self.value(beta).shape(), c)?;
        let m = T::from_f64((n * spatial) as f64);
        let data = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for_channel(data, n, c, spatial, ch, |v| s += v);
            mean[ch] = s / m;
            let mu = mean[ch];
            let mut sq = T::zero();
            for_channel(data, n, c, spatial, ch, |v| {
                let d = v - mu;
                sq += d * d;
            });
            var[ch] = sq / m;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        let g = self.value(gamma).data();
        let bta = self.value(beta).data();
        for ch in 0..c {
            let (mu, istd, gc, bc) = (mean[ch], inv_std[ch], g[ch], bta[ch]);
            map_channel(data, &mut xhat, n, c, spatial, ch, |v| (v - mu) * istd);
            map_channel(&xhat, &mut out, n, c, spatial, ch, |v| v * gc + bc);
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.requires(&[x, gamma, beta]);
        let xhat = Tensor::new(shape.clone(), xhat)?;
        let node = self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((node, BatchStats { mean, var }))
    }

    /// Eval-mode batch norm using running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (n, c, spatial) = bn_dims(self.value(x))?;
        let _ = n;
        check_bn_affine(self.value(gamma).shape(), self.value(beta).shape(), c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Dimension {
                op: "batchnorm",
                detail: format!(
                    "running stats have {} / {} channels, expected {c}",
                    running_mean.len(),
                    running_var.len()
                ),
            });
        }
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let data = self.value(x).data();
        let mut out = vec![T::zero(); data.len()];
        let g = self.value(gamma).data();
        let bta = self.value(beta).data();
        for ch in 0..c {
            let (mu, istd, gc, bc) = (running_mean[ch], inv_std[ch], g[ch], bta[ch]);
            map_channel(data, &mut out, n, c, spatial, ch, |v| (v - mu) * istd * gc + bc);
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.requires(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: running_mean.to_vec(),
                inv_std,
            },
        ))
    }

    /// Inverted dropout: in train mode each element is zeroed with the given
    /// probability and survivors are scaled by 1/(1-rate), so eval mode is the
    /// identity (and consumes no randomness). rate = 0 is also the identity.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let scale = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| {
                let u: f64 = rand::Rng::random(rng);
                if u < rate {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let value = Tensor::new(
            self.value(x).shape().to_vec(),
            self.value(x)
                .data()
                .iter()
                .zip(mask.iter())
                .map(|(&v, &m)| v * m)
                .collect(),
        )?;
        let rg = self.requires(&[x]);
        Ok(self.push(value, rg, Op::Dropout { x, mask }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        let rg = self.requires(&[x]);
        Ok(self.push(value, rg, Op::Reshape { x }))
    }

    /// Concatenate two 2-d tensors along the column axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca) = dims2(self.value(a), "concat")?;
        let (nb, cb) = dims2(self.value(b), "concat")?;
        if na != nb {
            return Err(Error::Dimension {
                op: "concat",
                detail: format!("row counts differ: {na} vs {nb}"),
            });
        }
        let mut out = Vec::with_capacity(na * (ca + cb));
        for i in 0..na {
            out.extend_from_slice(&self.value(a).data()[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&self.value(b).data()[i * cb..(i + 1) * cb]);
        }
        let rg = self.requires(&[a, b]);
        Ok(self.push(Tensor::new(vec![na, ca + cb], out)?, rg, Op::ConcatCols { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn zip_elementwise(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension {
                op: op_name,
                detail: format!(
                    "shapes {:?} and {:?} differ",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let value = Tensor::new(
            self.value(a).shape().to_vec(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data().iter())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        )?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(value, rg, op))
    }

    /// scale * x + shift, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| v * scale + shift);
        let rg = self.requires(&[x]);
        self.push(value, rg, Op::Affine { x, scale })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.exp());
        let rg = self.requires(&[x]);
        self.push(value, rg, Op::Exp { x })
    }

    /// Natural log. Callers clamp away from zero first; see [`Tape::clamp`].
    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.ln());
        let rg = self.requires(&[x]);
        self.push(value, rg, Op::Ln { x })
    }

    /// Clamp to [lo, hi]. Gradient passes where the input lies inside the
    /// interval (inclusive) and is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        let rg = self.requires(&[x]);
        self.push(value, rg, Op::Clamp { x, lo, hi })
    }

    /// Row-wise softmax of a 2-d tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, c) = dims2(self.value(x), "softmax")?;
        let mut out = vec![T::zero(); n * c];
        for i in 0..n {
            let row = &self.value(x).data()[i * c..(i + 1) * c];
            let mx = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            let mut denom = T::zero();
            for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(row.iter()) {
                *o = (v - mx).exp();
                denom += *o;
            }
            out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= denom);
        }
        let rg = self.requires(&[x]);
        Ok(self.push(Tensor::new(vec![n, c], out)?, rg, Op::SoftmaxRows { x }))
    }

    /// out[i] = x[i, idx[i]] for a 2-d input; the per-row class pick used by
    /// cross-entropy.
    pub fn row_gather(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (n, c) = dims2(self.value(x), "row_gather")?;
        if idx.len() != n {
            return Err(Error::Dimension {
                op: "row_gather",
                detail: format!("{} indices for {n} rows", idx.len()),
            });
        }
        if let Some(bad) = idx.iter().find(|&&j| j >= c) {
            return Err(Error::Contract(format!(
                "row_gather index {bad} out of range for {c} columns"
            )));
        }
        let data: Vec<T> = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| self.value(x).data()[i * c + j])
            .collect();
        let rg = self.requires(&[x]);
        Ok(self.push(Tensor::new(vec![n], data)?, rg, Op::RowGather { x, idx }))
    }

    /// Sum of all elements, as a [1]-shaped tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.requires(&[x]);
        self.push(value, rg, Op::SumAll { x })
    }

    /// Mean of all elements, as a [1]-shaped tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = T::from_f64(self.value(x).numel() as f64);
        let s = self.sum_all(x);
        self.affine(s, T::one() / n, T::zero())
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Every recorded operation between the
    /// tape start and the loss is visited exactly once per call; leaf
    /// gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            // Loss is detached from every leaf; nothing to do.
            return Ok(());
        }
        self.add_grad(loss, Tensor::filled(&[1], T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            // Swap the op out so its saved intermediates can be read while
            // other nodes' gradients are updated, then restore it: the same
            // tape may run backward again from another loss.
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.dispatch(Var(i), &op, &g);
            self.nodes[i].op = op;
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, contribution: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(g) => {
                for (gv, cv) in g.data_mut().iter_mut().zip(contribution.data().iter()) {
                    *gv += *cv;
                }
            }
            slot => *slot = Some(contribution),
        }
    }

    /// Take v's gradient buffer out (or a zero buffer), for ops that
    /// accumulate in place. Must be paired with `put_grad`.
    fn take_grad_buf(&mut self, v: Var) -> Option<Tensor<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(match self.nodes[v.0].grad.take() {
            Some(g) => g,
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        })
    }

    fn put_grad(&mut self, v: Var, g: Tensor<T>) {
        self.nodes[v.0].grad = Some(g);
    }

    fn dispatch(&mut self, out: Var, op: &Op<T>, g: &Tensor<T>) {
        match op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => self.backward_dense(*x, *w, *b, g),
            Op::Conv2d { x, k, b } => self.backward_conv(*x, *k, *b, g, false),
            Op::ConvTranspose2d { x, k, b } => self.backward_conv(*x, *k, *b, g, true),
            Op::Relu { x } => {
                let contr = self.unary_mask(*x, g, |v| {
                    if v > T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                });
                self.add_grad(*x, contr);
            }
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                let contr = self.unary_mask(*x, g, |v| if v > T::zero() { T::one() } else { s });
                self.add_grad(*x, contr);
            }
            Op::Tanh { x } => {
                let y = &self.nodes[out.0].value;
                let contr = Tensor::new(
                    y.shape().to_vec(),
                    y.data()
                        .iter()
                        .zip(g.data().iter())
                        .map(|(&yv, &gv)| gv * (T::one() - yv * yv))
                        .collect(),
                )
                .expect("shape preserved");
                self.add_grad(*x, contr);
            }
            Op::Sigmoid { x } => {
                let y = &self.nodes[out.0].value;
                let contr = Tensor::new(
                    y.shape().to_vec(),
                    y.data()
                        .iter()
                        .zip(g.data().iter())
                        .map(|(&yv, &gv)| gv * yv * (T::one() - yv))
                        .collect(),
                )
                .expect("shape preserved");
                self.add_grad(*x, contr);
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => self.backward_bn_train(*x, *gamma, *beta, xhat, inv_std, g),
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => self.backward_bn_eval(*x, *gamma, *beta, mean, inv_std, g),
            Op::Dropout { x, mask } => {
                let contr = Tensor::new(
                    self.nodes[x.0].value.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(mask.iter())
                        .map(|(&gv, &mv)| gv * mv)
                        .collect(),
                )
                .expect("shape preserved");
                self.add_grad(*x, contr);
            }
            Op::Reshape { x } => {
                let contr = Tensor::new(self.nodes[x.0].value.shape().to_vec(), g.data().to_vec())
                    .expect("reshape grad");
                self.add_grad(*x, contr);
            }
            Op::ConcatCols { a, b } => {
                let (n, ca) = (self.nodes[a.0].value.shape()[0], self.nodes[a.0].value.shape()[1]);
                let cb = self.nodes[b.0].value.shape()[1];
                let mut ga = vec![T::zero(); n * ca];
                let mut gb = vec![T::zero(); n * cb];
                for i in 0..n {
                    let row = &g.data()[i * (ca + cb)..(i + 1) * (ca + cb)];
                    ga[i * ca..(i + 1) * ca].copy_from_slice(&row[..ca]);
                    gb[i * cb..(i + 1) * cb].copy_from_slice(&row[ca..]);
                }
                self.add_grad(*a, Tensor::new(vec![n, ca], ga).expect("concat grad"));
                self.add_grad(*b, Tensor::new(vec![n, cb], gb).expect("concat grad"));
            }
            Op::Add { a, b } => {
                self.add_grad(*a, g.clone());
                self.add_grad(*b, g.clone());
            }
            Op::Sub { a, b } => {
                self.add_grad(*a, g.clone());
                self.add_grad(*b, g.map(|v| -v));
            }
            Op::Mul { a, b } => {
                let ga = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(self.nodes[b.0].value.data().iter())
                        .map(|(&gv, &bv)| gv * bv)
                        .collect(),
                )
                .expect("mul grad");
                let gb = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(self.nodes[a.0].value.data().iter())
                        .map(|(&gv, &av)| gv * av)
                        .collect(),
                )
                .expect("mul grad");
                self.add_grad(*a, ga);
                self.add_grad(*b, gb);
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                self.add_grad(*x, g.map(|v| v * s));
            }
            Op::Exp { x } => {
                let y = &self.nodes[out.0].value;
                let contr = Tensor::new(
                    y.shape().to_vec(),
                    y.data()
                        .iter()
                        .zip(g.data().iter())
                        .map(|(&yv, &gv)| gv * yv)
                        .collect(),
                )
                .expect("shape preserved");
                self.add_grad(*x, contr);
            }
            Op::Ln { x } => {
                let contr = Tensor::new(
                    self.nodes[x.0].value.shape().to_vec(),
                    self.nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(g.data().iter())
                        .map(|(&xv, &gv)| gv / xv)
                        .collect(),
                )
                .expect("shape preserved");
                self.add_grad(*x, contr);
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let contr = self.unary_mask(*x, g, |v| {
                    if v >= lo && v <= hi {
                        T::one()
                    } else {
                        T::zero()
                    }
                });
                self.add_grad(*x, contr);
            }
            Op::SoftmaxRows { x } => {
                let y = &self.nodes[out.0].value;
                let (n, c) = (y.shape()[0], y.shape()[1]);
                let mut contr = vec![T::zero(); n * c];
                for i in 0..n {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let mut dot = T::zero();
                    for (yv, gv) in yr.iter().zip(gr.iter()) {
                        dot += *yv * *gv;
                    }
                    for ((o, &yv), &gv) in contr[i * c..(i + 1) * c].iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.add_grad(*x, Tensor::new(vec![n, c], contr).expect("softmax grad"));
            }
            Op::RowGather { x, idx } => {
                let (n, c) = (self.nodes[x.0].value.shape()[0], self.nodes[x.0].value.shape()[1]);
                let mut contr = vec![T::zero(); n * c];
                for (i, &j) in idx.iter().enumerate() {
                    contr[i * c + j] = g.data()[i];
                }
                self.add_grad(*x, Tensor::new(vec![n, c], contr).expect("gather grad"));
            }
            Op::SumAll { x } => {
                let gv = g.item();
                let contr = Tensor::filled(self.nodes[x.0].value.shape(), gv);
                self.add_grad(*x, contr);
            }
        }
    }

    fn unary_mask(&self, x: Var, g: &Tensor<T>, mask: impl Fn(T) -> T) -> Tensor<T> {
        Tensor::new(
            self.nodes[x.0].value.shape().to_vec(),
            self.nodes[x.0]
                .value
                .data()
                .iter()
                .zip(g.data().iter())
                .map(|(&xv, &gv)| gv * mask(xv))
                .collect(),
        )
        .expect("shape preserved")
    }

    fn backward_dense(&mut self, x: Var, w: Var, b: Var, g: &Tensor<T>) {
        let (m, n) = (g.shape()[0], g.shape()[1]);
        let k = self.nodes[w.0].value.shape()[0];
        if self.nodes[x.0].requires_grad {
            let wt = transpose(self.nodes[w.0].value.data(), k, n);
            let mut gx = self.take_grad_buf(x).expect("requires_grad");
            gemm_nn(g.data(), &wt, gx.data_mut(), m, n, k);
            self.put_grad(x, gx);
        }
        if self.nodes[w.0].requires_grad {
            let xt = transpose(self.nodes[x.0].value.data(), m, k);
            let mut gw = self.take_grad_buf(w).expect("requires_grad");
            gemm_nn(&xt, g.data(), gw.data_mut(), k, m, n);
            self.put_grad(w, gw);
        }
        if self.nodes[b.0].requires_grad {
            let mut gb = self.take_grad_buf(b).expect("requires_grad");
            for row in g.data().chunks_exact(n) {
                for (gv, &rv) in gb.data_mut().iter_mut().zip(row.iter()) {
                    *gv += rv;
                }
            }
            self.put_grad(b, gb);
        }
    }

    fn backward_conv(&mut self, x: Var, k: Var, b: Var, g: &Tensor<T>, transposed: bool) {
        let xs = self.nodes[x.0].value.shape().to_vec();
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = if transposed {
            self.nodes[k.0].value.shape()[1]
        } else {
            self.nodes[k.0].value.shape()[0]
        };
        let mut gx = self.take_grad_buf(x);
        let mut gk = self.take_grad_buf(k);
        let mut gb = self.take_grad_buf(b);
        let run = if transposed {
            kernels::conv_transpose2d_bwd
        } else {
            kernels::conv2d_bwd
        };
        run(
            self.nodes[x.0].value.data(),
            self.nodes[k.0].value.data(),
            g.data(),
            n,
            cin,
            h,
            w,
            cout,
            gx.as_mut().map(|t| t.data_mut()),
            gk.as_mut().map(|t| t.data_mut()),
            gb.as_mut().map(|t| t.data_mut()),
        );
        if let Some(gx) = gx {
            self.put_grad(x, gx);
        }
        if let Some(gk) = gk {
            self.put_grad(k, gk);
        }
        if let Some(gb) = gb {
            self.put_grad(b, gb);
        }
    }

    fn backward_bn_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: &Tensor<T>,
        inv_std: &[T],
        g: &Tensor<T>,
    ) {
        let (n, c, spatial) = bn_dims(xhat).expect("saved shape");
        let m = T::from_f64((n * spatial) as f64);
        let gamma_v = self.nodes[gamma.0].value.data().to_vec();
        if self.nodes[gamma.0].requires_grad {
            let mut gg = self.take_grad_buf(gamma).expect("requires_grad");
            for ch in 0..c {
                let mut s = T::zero();
                zip_channel(g.data(), xhat.data(), n, c, spatial, ch, |gv, xv| s += gv * xv);
                gg.data_mut()[ch] += s;
            }
            self.put_grad(gamma, gg);
        }
        if self.nodes[beta.0].requires_grad {
            let mut gb = self.take_grad_buf(beta).expect("requires_grad");
            for ch in 0..c {
                let mut s = T::zero();
                for_channel(g.data(), n, c, spatial, ch, |gv| s += gv);
                gb.data_mut()[ch] += s;
            }
            self.put_grad(beta, gb);
        }
        if self.nodes[x.0].requires_grad {
            let mut gx = self.take_grad_buf(x).expect("requires_grad");
            for ch in 0..c {
                // dxhat = g * gamma; dx = istd/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
                let gc = gamma_v[ch];
                let istd = inv_std[ch];
                let mut sum_dxhat = T::zero();
                let mut sum_dxhat_xhat = T::zero();
                zip_channel(g.data(), xhat.data(), n, c, spatial, ch, |gv, xv| {
                    let d = gv * gc;
                    sum_dxhat += d;
                    sum_dxhat_xhat += d * xv;
                });
                let scale = istd / m;
                add_channel(
                    gx.data_mut(),
                    g.data(),
                    xhat.data(),
                    n,
                    c,
                    spatial,
                    ch,
                    |gv, xv| {
                        let d = gv * gc;
                        scale * (m * d - sum_dxhat - xv * sum_dxhat_xhat)
                    },
                );
            }
            self.put_grad(x, gx);
        }
    }

    fn backward_bn_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
        g: &Tensor<T>,
    ) {
        let (n, c, spatial) = bn_dims(&self.nodes[x.0].value).expect("saved shape");
        let gamma_v = self.nodes[gamma.0].value.data().to_vec();
        let x_data = self.nodes[x.0].value.data().to_vec();
        if self.nodes[gamma.0].requires_grad {
            let mut gg = self.take_grad_buf(gamma).expect("requires_grad");
            for ch in 0..c {
                let (mu, istd) = (mean[ch], inv_std[ch]);
                let mut s = T::zero();
                zip_channel(g.data(), &x_data, n, c, spatial, ch, |gv, xv| {
                    s += gv * (xv - mu) * istd;
                });
                gg.data_mut()[ch] += s;
            }
            self.put_grad(gamma, gg);
        }
        if self.nodes[beta.0].requires_grad {
            let mut gb = self.take_grad_buf(beta).expect("requires_grad");
            for ch in 0..c {
                let mut s = T::zero();
                for_channel(g.data(), n, c, spatial, ch, |gv| s += gv);
                gb.data_mut()[ch] += s;
            }
            self.put_grad(beta, gb);
        }
        if self.nodes[x.0].requires_grad {
            let mut gx = self.take_grad_buf(x).expect("requires_grad");
            for ch in 0..c {
                let f = gamma_v[ch] * inv_std[ch];
                add_channel(gx.data_mut(), g.data(), &x_data, n, c, spatial, ch, |gv, _| gv * f);
            }
            self.put_grad(x, gx);
        }
    }
}

/// (batch, channels, spatial) split for batch-norm shapes [n, c] / [n, c, h, w].
fn bn_dims<T: Real>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [n, c] => Ok((*n, *c, 1)),
        [n, c, h, w] => Ok((*n, *c, h * w)),
        other => Err(Error::Dimension {
            op: "batchnorm",
            detail: format!("expected [n, c] or [n, c, h, w], got {other:?}"),
        }),
    }
}

fn check_bn_affine(gamma: &[usize], beta: &[usize], c: usize) -> Result<()> {
    if gamma != [c] || beta != [c] {
        return Err(Error::Dimension {
            op: "batchnorm",
            detail: format!("gamma/beta shapes {gamma:?}/{beta:?}, expected [{c}]"),
        });
    }
    Ok(())
}

#[inline]
fn for_channel<T: Real>(
    data: &[T],
    n: usize,
    c: usize,
    spatial: usize,
    ch: usize,
    mut f: impl FnMut(T),
) {
    for item in 0..n {
        let base = (item * c + ch) * spatial;
        for &v in &data[base..base + spatial] {
            f(v);
        }
    }
}

#[inline]
fn zip_channel<T: Real>(
    a: &[T],
    b: &[T],
    n: usize,
    c: usize,
    spatial: usize,
    ch: usize,
    mut f: impl FnMut(T, T),
) {
    for item in 0..n {
        let base = (item * c + ch) * spatial;
        for (&x, &y) in a[base..base + spatial].iter().zip(&b[base..base + spatial]) {
            f(x, y);
        }
    }
}

#[inline]
fn map_channel<T: Real>(
    src: &[T],
    dst: &mut [T],
    n: usize,
    c: usize,
    spatial: usize,
    ch: usize,
    f: impl Fn(T) -> T,
) {
    for item in 0..n {
        let base = (item * c + ch) * spatial;
        for (d, &s) in dst[base..base + spatial].iter_mut().zip(&src[base..base + spatial]) {
            *d = f(s);
        }
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn add_channel<T: Real>(
    dst: &mut [T],
    a: &[T],
    b: &[T],
    n: usize,
    c: usize,
    spatial: usize,
    ch: usize,
    f: impl Fn(T, T) -> T,
) {
    for item in 0..n {
        let base = (item * c + ch) * spatial;
        for ((d, &x), &y) in dst[base..base + spatial]
            .iter_mut()
            .zip(&a[base..base + spatial])
            .zip(&b[base..base + spatial])
        {
            *d += f(x, y);
        }
    }
}
