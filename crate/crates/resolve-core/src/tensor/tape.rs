use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::Tensor;
use super::store::ParameterStore;

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<S> {
    Leaf,
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: S },
    /// `nt`: contract against the transpose of `b`.
    Matmul { a: Var, b: Var, nt: bool },
    ConvFull { x: Var, w: Var },
    Softmax { x: Var },
    SignSte { x: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Dropout { x: Var, mask: Vec<S> },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape { x: Var },
    SliceRows { x: Var, start: usize },
    GatherRows { table: Var, indices: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S> },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<S>, inv_std: Vec<S>, train: bool },
    Mean { x: Var },
    Sum { x: Var },
    CeLogits { logits: Var, targets: Vec<usize> },
    BceLogits { logits: Var, targets: Vec<S> },
    HdRelation { h: Var },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Eager-execution tape. Primitives compute their output immediately and
/// record a backward rule; [`Tape::backward`] walks the nodes once in
/// reverse topological (= insertion) order.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
    params: Vec<(String, Var)>,
    bn_stats: Vec<(String, Vec<S>, Vec<S>)>,
    rng: ChaCha12Rng,
    train: bool,
    ste_surrogate: bool,
}

impl<S: Scalar> Tape<S> {
    pub fn new(seed: u64, train: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            bn_stats: Vec::new(),
            rng: ChaCha12Rng::seed_from_u64(seed),
            train,
            ste_surrogate: false,
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Replace the sign in [`Tape::hd_relation`] with its continuous
    /// relaxation `clamp(x, -1, 1)`. The straight-through backward is the
    /// exact gradient of this relaxation, which makes the op finitely
    /// differentiable for gradient checks.
    pub fn set_ste_surrogate(&mut self, on: bool) {
        self.ste_surrogate = on;
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the loss w.r.t. `v`; available after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Batch statistics recorded by train-mode batch norm nodes, for the
    /// caller to fold into running statistics.
    pub fn bn_batch_stats(&self) -> &[(String, Vec<S>, Vec<S>)] {
        &self.bn_stats
    }

    // ---- leaves ----

    pub fn leaf(&mut self, t: Tensor<S>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t, false)
    }

    /// Insert a named parameter from the store as a differentiable leaf.
    pub fn param(&mut self, store: &ParameterStore<S>, name: &str) -> Result<Var> {
        let t = store.value(name)?.clone();
        let trainable = store.is_trainable(name)?;
        let v = self.leaf(t, trainable);
        if trainable {
            self.params.push((name.to_string(), v));
        }
        Ok(v)
    }

    /// Write accumulated parameter gradients back into the store.
    pub fn collect_grads(&self, store: &mut ParameterStore<S>) -> Result<()> {
        for (name, var) in &self.params {
            let shape = self.nodes[var.0].value.shape().to_vec();
            let g = self.grads[var.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(&shape));
            store.accumulate_grad(name, g)?;
        }
        Ok(())
    }

    // ---- elementwise ----

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(false);
        }
        if sb.len() < sa.len() && sa.ends_with(sb) {
            return Ok(true);
        }
        Err(Error::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.broadcast_check("add", a, b)?;
        let out = self.zip(a, b, bcast, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.broadcast_check("sub", a, b)?;
        let out = self.zip(a, b, bcast, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.broadcast_check("mul", a, b)?;
        let out = self.zip(a, b, bcast, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    fn zip(&self, a: Var, b: Var, bcast: bool, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let mut data = Vec::with_capacity(ta.numel());
        if bcast {
            let w = tb.numel();
            for chunk in ta.data().chunks_exact(w) {
                for (x, y) in chunk.iter().zip(tb.data()) {
                    data.push(f(*x, *y));
                }
            }
        } else {
            for (x, y) in ta.data().iter().zip(tb.data()) {
                data.push(f(*x, *y));
            }
        }
        Tensor::new(ta.shape().to_vec(), data).expect("zip preserves shape")
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.nodes[a.0].value.map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale { a, c }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| if v > S::zero() { v } else { S::zero() });
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let one = S::one();
        let out = self.nodes[x.0].value.map(|v| one / (one + (-v).exp()));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    /// Element-wise sign with a straight-through backward rule: the gradient
    /// passes unchanged where `|x| <= 1` and is zero elsewhere.
    pub fn sign_ste(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(sign_of);
        let rg = self.rg(x);
        self.push(out, Op::SignSte { x }, rg)
    }

    /// Inverted dropout: at train time keeps each element with probability
    /// `1 - p` and scales by `1/(1-p)`; identity at eval time.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            let out = self.nodes[x.0].value.clone();
            let rg = self.rg(x);
            return self.push(out, Op::Reshape { x }, rg);
        }
        let keep = S::from_f64_lossy(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.numel();
        let mask: Vec<S> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let tx = &self.nodes[x.0].value;
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Dropout { x, mask }, rg)
    }

    // ---- shape ----

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.nodes[x.0].value.reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let rank = first.len();
        if axis >= rank {
            return Err(Error::Config(format!("concat axis {axis} out of rank {rank}")));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != rank
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let inner: usize = first[axis + 1..].iter().product();
        let outer: usize = first[..axis].iter().product();
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = &self.nodes[p.0].value;
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if end > s[0] || start >= end {
            return Err(Error::PositionOutOfRange { pos: end, max: s[0] });
        }
        let inner: usize = s[1..].iter().product();
        let t = &self.nodes[x.0].value;
        let data = t.data()[start * inner..end * inner].to_vec();
        let mut shape = s;
        shape[0] = end - start;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    /// Row lookup into a `[V, d]` table; backward scatter-adds.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        let d = s[1];
        let v = s[0];
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(Error::PositionOutOfRange { pos: i, max: v });
            }
            data.extend_from_slice(self.nodes[table.0].value.row(i));
        }
        let out = Tensor::new(vec![indices.len(), d], data)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    // ---- matmul / convolution ----

    /// Matrix product over the two trailing axes. `a` is `[.., m, k]`;
    /// `b` is `[k, n]` (shared across the batch) or `[.., k, n]` with
    /// matching leading dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`, with `b` `[n, k]` or `[.., n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, nt: bool) -> Result<Var> {
        let (batch, m, k, n) = self.mm_shapes(a, b, nt)?;
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let b_shared = tb.shape().len() == 2;
        let mut out = vec![S::zero(); batch * m * n];
        for i in 0..batch {
            let av = &ta.data()[i * m * k..(i + 1) * m * k];
            let bo = if b_shared { 0 } else { i * k * n };
            let bv = &tb.data()[bo..bo + k * n];
            let cv = &mut out[i * m * n..(i + 1) * m * n];
            if nt {
                mm_nt(av, bv, cv, m, k, n);
            } else {
                mm(av, bv, cv, m, k, n);
            }
        }
        let mut shape = ta.shape()[..ta.shape().len() - 2].to_vec();
        shape.push(m);
        shape.push(n);
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Matmul { a, b, nt }, rg))
    }

    fn mm_shapes(&self, a: Var, b: Var, nt: bool) -> Result<(usize, usize, usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let err = || Error::ShapeMismatch {
            op: if nt { "matmul_nt" } else { "matmul" },
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let m = sa[sa.len() - 2];
        let k = sa[sa.len() - 1];
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let (bk, n) = if nt {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if bk != k {
            return Err(err());
        }
        if sb.len() > 2 {
            let b_batch: usize = sb[..sb.len() - 2].iter().product();
            if b_batch != batch || sb[..sb.len() - 2] != sa[..sa.len() - 2] {
                return Err(err());
            }
        }
        Ok((batch, m, k, n))
    }

    /// Full 1-D convolution over the trailing axis: output length
    /// `F + K - 1`. `w` is `[K]` (one kernel shared by every row) or
    /// `[N, K]` (one kernel per position along the second-to-last axis).
    pub fn conv1d_full(&mut self, x: Var, w: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let f = *sx.last().ok_or_else(|| Error::ShapeMismatch {
            op: "conv1d_full",
            lhs: sx.clone(),
            rhs: sw.clone(),
        })?;
        let per_row = sw.len() == 2;
        if per_row {
            let n = sw[0];
            if sx.len() < 2 || sx[sx.len() - 2] != n {
                return Err(Error::ShapeMismatch {
                    op: "conv1d_full",
                    lhs: sx,
                    rhs: sw,
                });
            }
        } else if sw.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "conv1d_full",
                lhs: sx,
                rhs: sw,
            });
        }
        let kl = *sw.last().unwrap();
        let d = f + kl - 1;
        let n_rows = self.nodes[x.0].value.n_rows();
        let n_pos = if per_row { sw[0] } else { 1 };
        let tx = &self.nodes[x.0].value;
        let tw = &self.nodes[w.0].value;
        let mut out = vec![S::zero(); n_rows * d];
        for r in 0..n_rows {
            let xr = &tx.data()[r * f..(r + 1) * f];
            let wi = if per_row { r % n_pos } else { 0 };
            let wr = &tw.data()[wi * kl..(wi + 1) * kl];
            let yr = &mut out[r * d..(r + 1) * d];
            conv_full(xr, wr, yr);
        }
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = d;
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::ConvFull { x, w }, rg))
    }

    // ---- normalization / activations over rows ----

    /// Row softmax over the trailing axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(t.numel());
        for r in 0..t.n_rows() {
            let row = t.row(r);
            let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            let start = data.len();
            for &v in row {
                let e = (v - m).exp();
                sum += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v = *v / sum;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Softmax { x }, rg)
    }

    /// Layer normalization over the trailing axis with learned scale/shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let c = t.last_axis();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: t.shape().to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let eps = S::from_f64_lossy(1e-5);
        let rows = t.n_rows();
        let mut xhat = Vec::with_capacity(rows * c);
        let mut inv_std = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * c);
        let g = self.nodes[gamma.0].value.data().to_vec();
        let bdat = self.nodes[beta.0].value.data().to_vec();
        for r in 0..rows {
            let row = t.row(r);
            let nc = S::from_f64_lossy(c as f64);
            let mu = row.iter().cloned().sum::<S>() / nc;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / nc;
            let inv = S::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mu) * inv;
                xhat.push(xh);
                data.push(g[j] * xh + bdat[j]);
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Batch normalization over the trailing feature axis. In train mode the
    /// batch statistics are recorded under `name` (see
    /// [`Tape::bn_batch_stats`]); in eval mode `running` supplies them.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        name: &str,
        running: (&[S], &[S]),
    ) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let c = t.last_axis();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: t.shape().to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let eps = S::from_f64_lossy(1e-5);
        let rows = t.n_rows();
        let (mean, var): (Vec<S>, Vec<S>) = if self.train {
            let nr = S::from_f64_lossy(rows as f64);
            let mut mean = vec![S::zero(); c];
            let mut var = vec![S::zero(); c];
            for r in 0..rows {
                for (j, &v) in t.row(r).iter().enumerate() {
                    mean[j] += v;
                }
            }
            for m in &mut mean {
                *m = *m / nr;
            }
            for r in 0..rows {
                for (j, &v) in t.row(r).iter().enumerate() {
                    let d = v - mean[j];
                    var[j] += d * d;
                }
            }
            for v in &mut var {
                *v = *v / nr;
            }
            (mean, var)
        } else {
            (running.0.to_vec(), running.1.to_vec())
        };
        if self.train {
            self.bn_stats
                .push((name.to_string(), mean.clone(), var.clone()));
        }
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let g = self.nodes[gamma.0].value.data().to_vec();
        let bdat = self.nodes[beta.0].value.data().to_vec();
        let t = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(rows * c);
        for r in 0..rows {
            for (j, &v) in t.row(r).iter().enumerate() {
                data.push(g[j] * (v - mean[j]) * inv_std[j] + bdat[j]);
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let train = self.train;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            },
            rg,
        ))
    }

    // ---- reductions / losses ----

    pub fn sum(&mut self, x: Var) -> Var {
        let s: S = self.nodes[x.0].value.data().iter().cloned().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s: S = t.data().iter().cloned().sum();
        let m = s / S::from_f64_lossy(t.numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean { x }, rg)
    }

    /// Mean cross-entropy over rows of `[R, C]` logits, fused with
    /// log-softmax.
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = &self.nodes[logits.0].value;
        let c = t.last_axis();
        let rows = t.n_rows();
        if targets.len() != rows {
            return Err(Error::LengthMismatch(targets.len(), rows));
        }
        let mut total = S::zero();
        for (r, &tgt) in targets.iter().enumerate() {
            if tgt >= c {
                return Err(Error::PositionOutOfRange { pos: tgt, max: c });
            }
            let row = t.row(r);
            let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<S>().ln();
            total += lse - row[tgt];
        }
        let loss = total / S::from_f64_lossy(rows as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CeLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy on raw logits (numerically fused with the
    /// sigmoid). Targets are 0/1.
    pub fn bce_logits(&mut self, logits: Var, targets: &[S]) -> Result<Var> {
        let t = &self.nodes[logits.0].value;
        if targets.len() != t.numel() {
            return Err(Error::LengthMismatch(targets.len(), t.numel()));
        }
        let mut total = S::zero();
        for (&x, &y) in t.data().iter().zip(targets) {
            // max(x,0) - x*y + ln(1 + exp(-|x|))
            let pos = if x > S::zero() { x } else { S::zero() };
            total += pos - x * y + (S::one() + (-x.abs()).exp()).ln();
        }
        let loss = total / S::from_f64_lossy(t.numel() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Relation scores from bipolarized bundles: for hypervectors
    /// `h: [B, N, D]` produces `R: [B, N, N]` with
    /// `R[b,i,j] = (1/D) Σ_d sign(h[b,i,d]) · sign(h[b,i,d] + h[b,j,d])`.
    /// Backward treats each sign as straight-through within `|x| <= 1`.
    pub fn hd_relation(&mut self, h: Var) -> Result<Var> {
        let t = &self.nodes[h.0].value;
        let s = t.shape();
        if s.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "hd_relation",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (b, n, d) = (s[0], s[1], s[2]);
        let inv_d = S::one() / S::from_f64_lossy(d as f64);
        let mut out = vec![S::zero(); b * n * n];
        for bi in 0..b {
            let base = bi * n * d;
            for i in 0..n {
                let hi = &t.data()[base + i * d..base + (i + 1) * d];
                for j in 0..n {
                    let hj = &t.data()[base + j * d..base + (j + 1) * d];
                    let mut acc = S::zero();
                    if self.ste_surrogate {
                        let one = S::one();
                        for (&a, &c) in hi.iter().zip(hj) {
                            acc += a.min(one).max(-one) * (a + c).min(one).max(-one);
                        }
                    } else {
                        for (&a, &c) in hi.iter().zip(hj) {
                            acc += sign_of(a) * sign_of(a + c);
                        }
                    }
                    out[bi * n * n + i * n + j] = acc * inv_d;
                }
            }
        }
        let out = Tensor::new(vec![b, n, n], out)?;
        let rg = self.rg(h);
        Ok(self.push(out, Op::HdRelation { h }, rg))
    }

    // ---- backward ----

    /// Reverse pass from a scalar loss. Populates gradients for every node
    /// that requires them; leaves not on the path keep a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::scalar(S::one()));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, contrib: Tensor<S>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backprop_node(&mut self, idx: usize, g: &Tensor<S>) {
        // Ops are dispatched with the node's output gradient `g`.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.acc(*a, g.clone());
                self.acc(*b, self.reduce_to_shape(g, self.shape(*b)));
            }
            Op::Sub { a, b } => {
                self.acc(*a, g.clone());
                let neg = g.map(|x| -x);
                self.acc(*b, self.reduce_to_shape(&neg, self.shape(*b)));
            }
            Op::Mul { a, b } => {
                let ta = self.nodes[a.0].value.clone();
                let tb = &self.nodes[b.0].value;
                let bcast = ta.shape() != tb.shape();
                if self.rg(*a) {
                    let da = if bcast {
                        let w = tb.numel();
                        let mut data = Vec::with_capacity(g.numel());
                        for chunk in g.data().chunks_exact(w) {
                            for (x, y) in chunk.iter().zip(tb.data()) {
                                data.push(*x * *y);
                            }
                        }
                        Tensor::new(ta.shape().to_vec(), data).unwrap()
                    } else {
                        Tensor::new(
                            ta.shape().to_vec(),
                            g.data()
                                .iter()
                                .zip(tb.data())
                                .map(|(&x, &y)| x * y)
                                .collect(),
                        )
                        .unwrap()
                    };
                    self.acc(*a, da);
                }
                if self.rg(*b) {
                    let full = Tensor::new(
                        ta.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(ta.data())
                            .map(|(&x, &y)| x * y)
                            .collect(),
                    )
                    .unwrap();
                    let db = self.reduce_to_shape(&full, self.shape(*b));
                    self.acc(*b, db);
                }
            }
            Op::Scale { a, c } => {
                let c = *c;
                self.acc(*a, g.map(|x| x * c));
            }
            Op::Matmul { a, b, nt } => self.backprop_matmul(*a, *b, *nt, g),
            Op::ConvFull { x, w } => self.backprop_conv(*x, *w, g),
            Op::Softmax { x } => {
                let y = &self.nodes[idx].value;
                let w = y.last_axis();
                let mut dx = Vec::with_capacity(y.numel());
                for r in 0..y.n_rows() {
                    let yr = y.row(r);
                    let gr = &g.data()[r * w..(r + 1) * w];
                    let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for (ye, ge) in yr.iter().zip(gr) {
                        dx.push(*ye * (*ge - dot));
                    }
                }
                let dx = Tensor::new(y.shape().to_vec(), dx).unwrap();
                self.acc(*x, dx);
            }
            Op::SignSte { x } => {
                let t = &self.nodes[x.0].value;
                let one = S::one();
                let dx = Tensor::new(
                    t.shape().to_vec(),
                    t.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &ge)| if v.abs() <= one { ge } else { S::zero() })
                        .collect(),
                )
                .unwrap();
                self.acc(*x, dx);
            }
            Op::Relu { x } => {
                let t = &self.nodes[x.0].value;
                let dx = Tensor::new(
                    t.shape().to_vec(),
                    t.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &ge)| if v > S::zero() { ge } else { S::zero() })
                        .collect(),
                )
                .unwrap();
                self.acc(*x, dx);
            }
            Op::Sigmoid { x } => {
                let y = &self.nodes[idx].value;
                let one = S::one();
                let dx = Tensor::new(
                    y.shape().to_vec(),
                    y.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &ge)| ge * v * (one - v))
                        .collect(),
                )
                .unwrap();
                self.acc(*x, dx);
            }
            Op::Dropout { x, mask } => {
                let t = &self.nodes[x.0].value;
                let dx = Tensor::new(
                    t.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(mask)
                        .map(|(&ge, &m)| ge * m)
                        .collect(),
                )
                .unwrap();
                self.acc(*x, dx);
            }
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let shape0 = self.shape(parts[0]).to_vec();
                let inner: usize = shape0[axis + 1..].iter().product();
                let outer: usize = shape0[..axis].iter().product();
                let mut offset = 0;
                let total_chunk: usize = self.shape(Var(idx)).iter().skip(axis).product();
                for &p in parts {
                    let sp = self.shape(p).to_vec();
                    let chunk = sp[axis] * inner;
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let base = o * total_chunk + offset;
                            dp.extend_from_slice(&g.data()[base..base + chunk]);
                        }
                        self.acc(p, Tensor::new(sp, dp).unwrap());
                    }
                    offset += chunk;
                }
            }
            Op::Reshape { x } => {
                let sx = self.shape(*x).to_vec();
                self.acc(*x, g.reshaped(sx).unwrap());
            }
            Op::SliceRows { x, start } => {
                let sx = self.shape(*x).to_vec();
                let inner: usize = sx[1..].iter().product();
                let mut dx = Tensor::zeros(&sx);
                let off = start * inner;
                dx.data_mut()[off..off + g.numel()].copy_from_slice(g.data());
                self.acc(*x, dx);
            }
            Op::GatherRows { table, indices } => {
                let st = self.shape(*table).to_vec();
                let d = st[1];
                let mut dt = Tensor::zeros(&st);
                for (r, &i) in indices.iter().enumerate() {
                    let dst = &mut dt.data_mut()[i * d..(i + 1) * d];
                    for (a, b) in dst.iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                        *a += *b;
                    }
                }
                self.acc(*table, dt);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = self.shape(*gamma)[0];
                let rows = inv_std.len();
                let gdat = self.nodes[gamma.0].value.data().to_vec();
                let nc = S::from_f64_lossy(c as f64);
                let mut dx = Vec::with_capacity(rows * c);
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                for r in 0..rows {
                    let gr = &g.data()[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut sum_dxhat = S::zero();
                    let mut sum_dxhat_xhat = S::zero();
                    for j in 0..c {
                        let dxh = gr[j] * gdat[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh[j];
                        dgamma[j] += gr[j] * xh[j];
                        dbeta[j] += gr[j];
                    }
                    let m1 = sum_dxhat / nc;
                    let m2 = sum_dxhat_xhat / nc;
                    for j in 0..c {
                        let dxh = gr[j] * gdat[j];
                        dx.push(inv_std[r] * (dxh - m1 - xh[j] * m2));
                    }
                }
                let sx = self.shape(*x).to_vec();
                self.acc(*x, Tensor::new(sx, dx).unwrap());
                self.acc(*gamma, Tensor::new(vec![c], dgamma).unwrap());
                self.acc(*beta, Tensor::new(vec![c], dbeta).unwrap());
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            } => {
                let c = mean.len();
                let t = self.nodes[x.0].value.clone();
                let rows = t.n_rows();
                let gdat = self.nodes[gamma.0].value.data().to_vec();
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                let mut dx = vec![S::zero(); rows * c];
                if *train {
                    let nr = S::from_f64_lossy(rows as f64);
                    // accumulate per-feature sums of dxhat and dxhat*xhat
                    let mut s1 = vec![S::zero(); c];
                    let mut s2 = vec![S::zero(); c];
                    for r in 0..rows {
                        let xr = t.row(r);
                        let gr = &g.data()[r * c..(r + 1) * c];
                        for j in 0..c {
                            let xh = (xr[j] - mean[j]) * inv_std[j];
                            let dxh = gr[j] * gdat[j];
                            s1[j] += dxh;
                            s2[j] += dxh * xh;
                            dgamma[j] += gr[j] * xh;
                            dbeta[j] += gr[j];
                        }
                    }
                    for r in 0..rows {
                        let xr = t.row(r);
                        let gr = &g.data()[r * c..(r + 1) * c];
                        for j in 0..c {
                            let xh = (xr[j] - mean[j]) * inv_std[j];
                            let dxh = gr[j] * gdat[j];
                            dx[r * c + j] = inv_std[j] * (dxh - s1[j] / nr - xh * s2[j] / nr);
                        }
                    }
                } else {
                    for r in 0..rows {
                        let xr = t.row(r);
                        let gr = &g.data()[r * c..(r + 1) * c];
                        for j in 0..c {
                            let xh = (xr[j] - mean[j]) * inv_std[j];
                            dgamma[j] += gr[j] * xh;
                            dbeta[j] += gr[j];
                            dx[r * c + j] = gr[j] * gdat[j] * inv_std[j];
                        }
                    }
                }
                let sx = self.shape(*x).to_vec();
                self.acc(*x, Tensor::new(sx, dx).unwrap());
                self.acc(*gamma, Tensor::new(vec![c], dgamma).unwrap());
                self.acc(*beta, Tensor::new(vec![c], dbeta).unwrap());
            }
            Op::Sum { x } => {
                let ge = g.item();
                let sx = self.shape(*x).to_vec();
                self.acc(*x, Tensor::full(&sx, ge));
            }
            Op::Mean { x } => {
                let sx = self.shape(*x).to_vec();
                let n: usize = sx.iter().product();
                let ge = g.item() / S::from_f64_lossy(n as f64);
                self.acc(*x, Tensor::full(&sx, ge));
            }
            Op::CeLogits { logits, targets } => {
                let t = &self.nodes[logits.0].value;
                let c = t.last_axis();
                let rows = t.n_rows();
                let scale = g.item() / S::from_f64_lossy(rows as f64);
                let mut dl = Vec::with_capacity(rows * c);
                for (r, &tgt) in targets.iter().enumerate() {
                    let row = t.row(r);
                    let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
                    let sum: S = row.iter().map(|&v| (v - m).exp()).sum();
                    for (j, &v) in row.iter().enumerate() {
                        let p = (v - m).exp() / sum;
                        let ind = if j == tgt { S::one() } else { S::zero() };
                        dl.push(scale * (p - ind));
                    }
                }
                let sl = t.shape().to_vec();
                self.acc(*logits, Tensor::new(sl, dl).unwrap());
            }
            Op::BceLogits { logits, targets } => {
                let t = &self.nodes[logits.0].value;
                let n = t.numel();
                let scale = g.item() / S::from_f64_lossy(n as f64);
                let one = S::one();
                let dl = t
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| scale * (one / (one + (-x).exp()) - y))
                    .collect();
                let sl = t.shape().to_vec();
                self.acc(*logits, Tensor::new(sl, dl).unwrap());
            }
            Op::HdRelation { h } => {
                let t = &self.nodes[h.0].value;
                let s = t.shape();
                let (b, n, d) = (s[0], s[1], s[2]);
                let inv_d = S::one() / S::from_f64_lossy(d as f64);
                let one = S::one();
                let mut dh = vec![S::zero(); b * n * d];
                for bi in 0..b {
                    let base = bi * n * d;
                    for i in 0..n {
                        let hi = &t.data()[base + i * d..base + (i + 1) * d];
                        for j in 0..n {
                            let hj = &t.data()[base + j * d..base + (j + 1) * d];
                            let gr = g.data()[bi * n * n + i * n + j] * inv_d;
                            if gr == S::zero() {
                                continue;
                            }
                            for k in 0..d {
                                let a = hi[k];
                                let sum = a + hj[k];
                                let (sa, ss) = if self.ste_surrogate {
                                    (a.min(one).max(-one), sum.min(one).max(-one))
                                } else {
                                    (sign_of(a), sign_of(sum))
                                };
                                let win_a = if a.abs() <= one { one } else { S::zero() };
                                let win_s = if sum.abs() <= one { one } else { S::zero() };
                                // first argument: d/da [s(a)*s(a+c)]
                                dh[base + i * d + k] += gr * (win_a * ss + sa * win_s);
                                // second argument: d/dc [s(a)*s(a+c)]
                                dh[base + j * d + k] += gr * sa * win_s;
                            }
                        }
                    }
                }
                let sh = s.to_vec();
                self.acc(*h, Tensor::new(sh, dh).unwrap());
            }
        }
        self.nodes[idx].op = op;
    }

    fn reduce_to_shape(&self, g: &Tensor<S>, target: &[usize]) -> Tensor<S> {
        if g.shape() == target {
            return g.clone();
        }
        let w: usize = target.iter().product();
        let mut out = Tensor::zeros(target);
        for chunk in g.data().chunks_exact(w) {
            for (a, b) in out.data_mut().iter_mut().zip(chunk) {
                *a += *b;
            }
        }
        out
    }

    fn backprop_matmul(&mut self, a: Var, b: Var, nt: bool, g: &Tensor<S>) {
        let (batch, m, k, n) = self.mm_shapes(a, b, nt).expect("checked at forward");
        let ta = self.nodes[a.0].value.clone();
        let tb = self.nodes[b.0].value.clone();
        let b_shared = tb.shape().len() == 2;
        if self.rg(a) {
            let mut da = vec![S::zero(); batch * m * k];
            for i in 0..batch {
                let gv = &g.data()[i * m * n..(i + 1) * m * n];
                let bo = if b_shared { 0 } else { i * k * n };
                let bv = &tb.data()[bo..bo + k * n];
                let dav = &mut da[i * m * k..(i + 1) * m * k];
                if nt {
                    // C = A·Bᵀ (B is [n,k]) → dA = dC·B
                    mm(gv, bv, dav, m, n, k);
                } else {
                    // dA = dC·Bᵀ
                    mm_nt(gv, bv, dav, m, n, k);
                }
            }
            let da = Tensor::new(ta.shape().to_vec(), da).unwrap();
            self.acc(a, da);
        }
        if self.rg(b) {
            let mut db = vec![S::zero(); tb.numel()];
            for i in 0..batch {
                let gv = &g.data()[i * m * n..(i + 1) * m * n];
                let av = &ta.data()[i * m * k..(i + 1) * m * k];
                let bo = if b_shared { 0 } else { i * k * n };
                let dbv = &mut db[bo..bo + k * n];
                if nt {
                    // B is [n,k]: dB = dCᵀ·A
                    mm_tn_acc(gv, av, dbv, m, n, k);
                } else {
                    // dB = Aᵀ·dC
                    mm_tn_acc(av, gv, dbv, m, k, n);
                }
            }
            let db = Tensor::new(tb.shape().to_vec(), db).unwrap();
            self.acc(b, db);
        }
    }

    fn backprop_conv(&mut self, x: Var, w: Var, g: &Tensor<S>) {
        let tx = self.nodes[x.0].value.clone();
        let tw = self.nodes[w.0].value.clone();
        let f = tx.last_axis();
        let kl = tw.last_axis();
        let d = f + kl - 1;
        let per_row = tw.shape().len() == 2;
        let n_pos = if per_row { tw.shape()[0] } else { 1 };
        let n_rows = tx.n_rows();
        let need_dx = self.rg(x);
        let need_dw = self.rg(w);
        let mut dx = vec![S::zero(); tx.numel()];
        let mut dw = vec![S::zero(); tw.numel()];
        for r in 0..n_rows {
            let xr = &tx.data()[r * f..(r + 1) * f];
            let gr = &g.data()[r * d..(r + 1) * d];
            let wi = if per_row { r % n_pos } else { 0 };
            let wr = &tw.data()[wi * kl..(wi + 1) * kl];
            if need_dx {
                let dxr = &mut dx[r * f..(r + 1) * f];
                for k in 0..f {
                    let mut acc = S::zero();
                    for (we, ge) in wr.iter().zip(&gr[k..k + kl]) {
                        acc += *we * *ge;
                    }
                    dxr[k] += acc;
                }
            }
            if need_dw {
                let dwr = &mut dw[wi * kl..(wi + 1) * kl];
                for k in 0..f {
                    let xv = xr[k];
                    for (de, ge) in dwr.iter_mut().zip(&gr[k..k + kl]) {
                        *de += xv * *ge;
                    }
                }
            }
        }
        if need_dx {
            self.acc(x, Tensor::new(tx.shape().to_vec(), dx).unwrap());
        }
        if need_dw {
            self.acc(w, Tensor::new(tw.shape().to_vec(), dw).unwrap());
        }
    }
}

fn sign_of<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

// ---- raw kernels ----

/// C[m,n] += A[m,k] · B[k,n]
fn mm<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (t, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (ce, be) in crow.iter_mut().zip(brow) {
                *ce += av * *be;
            }
        }
    }
}

/// C[m,n] += A[m,k] · B[n,k]ᵀ
fn mm_nt<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, ce) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (x, y) in arow.iter().zip(brow) {
                acc += *x * *y;
            }
            *ce += acc;
        }
    }
}

/// C[k,n] += A[m,k]ᵀ · B[m,n]
fn mm_tn_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for t in 0..m {
        let arow = &a[t * k..(t + 1) * k];
        let brow = &b[t * n..(t + 1) * n];
        for (q, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let crow = &mut c[q * n..(q + 1) * n];
            for (ce, be) in crow.iter_mut().zip(brow) {
                *ce += av * *be;
            }
        }
    }
}

/// y[f + kl - 1] += full convolution of x[f] with w[kl]
fn conv_full<S: Scalar>(x: &[S], w: &[S], y: &mut [S]) {
    let kl = w.len();
    for (k, &xv) in x.iter().enumerate() {
        if xv == S::zero() {
            continue;
        }
        for (ye, we) in y[k..k + kl].iter_mut().zip(w) {
            *ye += xv * *we;
        }
    }
}
