//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] borrows the parameter store for the duration of one forward
//! pass. Every operation appends a node holding its output value and whatever
//! the backward rule needs; [`Graph::backward`] walks the tape in reverse and
//! returns the parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::real::gemm;
use super::{Gradients, NnError, ParamId, ParameterStore, Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Additive attention mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnMask {
    None,
    /// Query `i` sees keys `0..=i` only.
    Causal,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<F> {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    AddConst(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    MaxAxis {
        x: Var,
        argmax: Vec<usize>,
    },
    Broadcast {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Concat {
        a: Var,
        b: Var,
        da: usize,
        db: usize,
    },
    Reshape(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        dims: AttnDims,
        probs: Vec<F>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        keep: Vec<bool>,
        eps: F,
        probs: Vec<F>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<F>,
    },
}

#[derive(Clone, Copy, Debug)]
struct AttnDims {
    batch: usize,
    lq: usize,
    lk: usize,
    d: usize,
    heads: usize,
}

struct Node<F> {
    shape: Vec<usize>,
    /// `None` for parameters, whose values live in the store.
    value: Option<Vec<F>>,
    op: Op<F>,
}

pub struct Graph<'s, F: Real> {
    store: &'s ParameterStore<F>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'s, F: Real> Graph<'s, F> {
    /// Inference graph: dropout is the identity.
    pub fn new(store: &'s ParameterStore<F>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            dropout_rng: None,
        }
    }

    /// Training graph: dropout masks are drawn from `seed`.
    pub fn training(store: &'s ParameterStore<F>, seed: u64) -> Self {
        Graph {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Graph::new(store)
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn store(&self) -> &'s ParameterStore<F> {
        self.store
    }

    pub fn value(&self, v: Var) -> &[F] {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(data), _) => data,
            (None, Op::Param(id)) => self.store.value(*id).data(),
            (None, _) => unreachable!("only parameters borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("graph shapes are valid")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, op: Op<F>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, shape: &[usize], data: Vec<F>) -> Result<Var, NnError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::Shape(format!(
                "input shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(self.push(shape.to_vec(), data, Op::Input))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            shape: self.store.value(id).shape().to_vec(),
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `x W + b` over the last axis of `x`, with `W: [in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (k, n) = match self.shape(w) {
            [k, n] => (*k, *n),
            s => return Err(NnError::Shape(format!("weight must be 2-D, got {s:?}"))),
        };
        let xs = self.shape(x).to_vec();
        if xs.last() != Some(&k) {
            return Err(NnError::Shape(format!("linear: input {xs:?} against weight [{k}, {n}]")));
        }
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(NnError::Shape(format!("linear: bias {:?} for {n} outputs", self.shape(b))));
            }
        }
        let rows = self.value(x).len() / k;
        let mut out = vec![F::zero(); rows * n];
        if let Some(b) = b {
            let bias = self.value(b);
            out.chunks_exact_mut(n).for_each(|r| r.copy_from_slice(bias));
        }
        let beta = if b.is_some() { F::one() } else { F::zero() };
        gemm(rows, k, n, F::one(), self.value(x), (k, 1), self.value(w), (n, 1), beta, &mut out, (n, 1));
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(shape, out, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b)))
    }

    /// Adds a constant tensor, repeated over the leading elements of `x`.
    pub fn add_const(&mut self, x: Var, c: &[F]) -> Result<Var, NnError> {
        let xv = self.value(x);
        if c.is_empty() || xv.len() % c.len() != 0 {
            return Err(NnError::Shape(format!(
                "add_const: {} values do not tile {}",
                c.len(),
                xv.len()
            )));
        }
        let out = xv.iter().zip(c.iter().cycle()).map(|(a, b)| *a + *b).collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddConst(x)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.max(F::zero())).collect();
        self.push(self.shape(x).to_vec(), out, Op::Relu(x))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NnError> {
        let d = *self.shape(x).last().unwrap();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(NnError::Shape(format!("layer_norm: parameters do not match width {d}")));
        }
        let xv = self.value(x);
        let rows = xv.len() / d;
        let mut xhat = vec![F::zero(); xv.len()];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); xv.len()];
        let (g, b) = (self.value(gain), self.value(bias));
        let inv_d = F::one() / F::of(d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() * inv_d;
            let s = F::one() / (var + F::of(LAYER_NORM_EPS)).sqrt();
            rstd[r] = s;
            for c in 0..d {
                let h = (row[c] - mean) * s;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1-p)`. Identity in inference graphs or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability {p} outside [0, 1)");
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        if p == 0.0 {
            return x;
        }
        let len = self.nodes[x.0].shape.iter().product();
        let keep = F::of(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..len)
            .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        self.push(self.shape(x).to_vec(), out, Op::Dropout { x, mask })
    }

    /// Maximum over `axis`, which is removed from the shape.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var, NnError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(NnError::Shape(format!("max_axis: axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![F::zero(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for j in 1..n {
                    let idx = (o * n + j) * inner + i;
                    if xv[idx] > xv[best] {
                        best = idx;
                    }
                }
                out[o * inner + i] = xv[best];
                argmax[o * inner + i] = best;
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push(out_shape, out, Op::MaxAxis { x, argmax }))
    }

    /// Inserts a new axis of size `n` at position `axis`, repeating `x`.
    pub fn broadcast_axis(&mut self, x: Var, axis: usize, n: usize) -> Result<Var, NnError> {
        let shape = self.shape(x).to_vec();
        if axis > shape.len() {
            return Err(NnError::Shape(format!("broadcast_axis: axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let block = &xv[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(block);
            }
        }
        let mut out_shape = shape;
        out_shape.insert(axis, n);
        Ok(self.push(out_shape, out, Op::Broadcast { x, outer, n, inner }))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(NnError::Shape(format!("concat: {sa:?} vs {sb:?}")));
        }
        let (da, db) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = self.value(a).len() / da.max(1);
        let mut out = Vec::with_capacity(rows * (da + db));
        let (av, bv) = (self.value(a), self.value(b));
        for r in 0..rows {
            out.extend_from_slice(&av[r * da..(r + 1) * da]);
            out.extend_from_slice(&bv[r * db..(r + 1) * db]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = da + db;
        Ok(self.push(shape, out, Op::Concat { a, b, da, db }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        if shape.iter().product::<usize>() != self.value(x).len() || shape.len() > super::tensor::MAX_RANK {
            return Err(NnError::Shape(format!(
                "reshape {:?} -> {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x)))
    }

    /// Rows of `table` selected by `ids`; output shape `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let (v, d) = match self.shape(table) {
            [v, d] => (*v, *d),
            s => return Err(NnError::Shape(format!("embedding table must be 2-D, got {s:?}"))),
        };
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NnError::Index(format!("token id {bad} outside vocabulary of {v}")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Scaled dot-product attention split over `heads` on already projected
    /// `q: [B, Lq, d]`, `k, v: [B, Lk, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: AttnMask) -> Result<Var, NnError> {
        let (batch, lq, d) = match self.shape(q) {
            [b, l, d] => (*b, *l, *d),
            s => return Err(NnError::Shape(format!("attention query must be 3-D, got {s:?}"))),
        };
        let lk = match self.shape(k) {
            [b, l, dk] if *b == batch && *dk == d => *l,
            s => return Err(NnError::Shape(format!("attention key {s:?} against query [{batch}, {lq}, {d}]"))),
        };
        if self.shape(v) != self.shape(k) {
            return Err(NnError::Shape("attention key and value shapes differ".into()));
        }
        if heads == 0 || d % heads != 0 {
            return Err(NnError::Shape(format!("{heads} heads do not divide width {d}")));
        }
        let causal = mask == AttnMask::Causal;
        if causal && lq != lk {
            return Err(NnError::Shape("causal attention needs equal query and key lengths".into()));
        }
        let dims = AttnDims {
            batch,
            lq,
            lk,
            d,
            heads,
        };
        let dh = d / heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let mut probs = vec![F::zero(); batch * heads * lq * lk];
        let mut out = vec![F::zero(); batch * lq * d];
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        for b in 0..batch {
            let qb = &qv[b * lq * d..(b + 1) * lq * d];
            let kb = &kv[b * lk * d..(b + 1) * lk * d];
            let vb = &vv[b * lk * d..(b + 1) * lk * d];
            let ob = &mut out[b * lq * d..(b + 1) * lq * d];
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * lq * lk..(b * heads + h + 1) * lq * lk];
                // scores = scale * Q_h K_h^T
                gemm(lq, dh, lk, scale, &qb[h * dh..], (d, 1), &kb[h * dh..], (1, d), F::zero(), p, (lk, 1));
                for i in 0..lq {
                    let row = &mut p[i * lk..(i + 1) * lk];
                    let visible = if causal { i + 1 } else { lk };
                    softmax_in_place(&mut row[..visible]);
                    row[visible..].iter_mut().for_each(|x| *x = F::zero());
                }
                gemm(lq, lk, dh, F::one(), p, (lk, 1), &vb[h * dh..], (d, 1), F::zero(), &mut ob[h * dh..], (d, 1));
            }
        }
        Ok(self.push(
            vec![batch, lq, d],
            out,
            Op::Attention { q, k, v, dims, probs },
        ))
    }

    /// Mean label-smoothed cross-entropy over the rows of `logits: [R, V]`
    /// where `keep` is true. The target distribution puts `1 - eps` on the
    /// target class and spreads `eps` uniformly over all `V` classes.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], keep: &[bool], eps: f64) -> Result<Var, NnError> {
        let (rows, classes) = match self.shape(logits) {
            [r, c] => (*r, *c),
            s => return Err(NnError::Shape(format!("logits must be 2-D, got {s:?}"))),
        };
        if targets.len() != rows || keep.len() != rows {
            return Err(NnError::Shape("targets and mask must match the logits rows".into()));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(NnError::Config(format!("label smoothing {eps} outside [0, 1)")));
        }
        let kept = keep.iter().filter(|k| **k).count();
        if kept == 0 {
            return Err(NnError::EmptyMask);
        }
        let lv = self.value(logits);
        let mut probs = vec![F::zero(); rows * classes];
        let eps_f = F::of(eps);
        let uniform = eps_f / F::of(classes as f64);
        let mut total = F::zero();
        for r in 0..rows {
            let row = &lv[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|x| (*x - max).exp()).sum::<F>().ln();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - lse).exp();
            }
            if !keep[r] {
                continue;
            }
            let t = targets[r];
            if t >= classes {
                return Err(NnError::Index(format!("target {t} outside {classes} classes")));
            }
            let mut loss = F::zero();
            for c in 0..classes {
                let weight = if c == t { F::one() - eps_f + uniform } else { uniform };
                loss -= weight * (row[c] - lse);
            }
            total += loss;
        }
        let mean = total / F::of(kept as f64);
        Ok(self.push(
            vec![],
            vec![mean],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                keep: keep.to_vec(),
                eps: eps_f,
                probs,
            },
        ))
    }

    /// `sum(x * weights)`, a scalar probe for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &[F]) -> Result<Var, NnError> {
        if self.value(x).len() != weights.len() {
            return Err(NnError::Shape("weighted_sum: weight count mismatch".into()));
        }
        let s = self.value(x).iter().zip(weights).map(|(a, b)| *a * *b).sum();
        Ok(self.push(
            vec![],
            vec![s],
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, NnError> {
        if self.value(loss).len() != 1 {
            return Err(NnError::Shape("backward needs a scalar".into()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        let mut out = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            self.backward_node(idx, &gy, &mut grads, &mut out);
        }
        out.reverse();
        Ok(Gradients(out))
    }

    fn backward_node(
        &self,
        idx: usize,
        gy: &[F],
        grads: &mut [Option<Vec<F>>],
        params: &mut Vec<(ParamId, Vec<F>)>,
    ) {
        let node = &self.nodes[idx];
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let len = self.value(v).len();
                grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
            }};
        }
        match &node.op {
            Op::Input => {}
            Op::Param(id) => params.push((*id, gy.to_vec())),
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (k, n) = (ws[0], ws[1]);
                let rows = gy.len() / n;
                // dx = dy W^T
                gemm(rows, n, k, F::one(), gy, (n, 1), self.value(*w), (1, n), F::one(), acc!(*x), (k, 1));
                // dW = x^T dy
                gemm(k, rows, n, F::one(), self.value(*x), (1, k), gy, (n, 1), F::one(), acc!(*w), (n, 1));
                if let Some(b) = b {
                    let gb = acc!(*b);
                    for r in gy.chunks_exact(n) {
                        gb.iter_mut().zip(r).for_each(|(a, g)| *a += *g);
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(acc!(*a), gy);
                add_into(acc!(*b), gy);
            }
            Op::AddConst(x) | Op::Reshape(x) => add_into(acc!(*x), gy),
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = acc!(*x);
                for i in 0..gy.len() {
                    if xv[i] > F::zero() {
                        gx[i] += gy[i];
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = *node.shape.last().unwrap();
                let g = self.value(*gain);
                {
                    let gg = acc!(*gain);
                    for r in 0..rstd.len() {
                        for c in 0..d {
                            gg[c] += gy[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                {
                    let gb = acc!(*bias);
                    for r in gy.chunks_exact(d) {
                        gb.iter_mut().zip(r).for_each(|(a, v)| *a += *v);
                    }
                }
                let gx = acc!(*x);
                let inv_d = F::one() / F::of(d as f64);
                for r in 0..rstd.len() {
                    let span = r * d..(r + 1) * d;
                    let dxhat: Vec<F> = gy[span.clone()].iter().zip(g).map(|(a, b)| *a * *b).collect();
                    let h = &xhat[span.clone()];
                    let mean_d = dxhat.iter().copied().sum::<F>() * inv_d;
                    let mean_dh = dxhat.iter().zip(h).map(|(a, b)| *a * *b).sum::<F>() * inv_d;
                    for c in 0..d {
                        gx[r * d + c] += rstd[r] * (dxhat[c] - mean_d - h[c] * mean_dh);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx = acc!(*x);
                for i in 0..gy.len() {
                    gx[i] += gy[i] * mask[i];
                }
            }
            Op::MaxAxis { x, argmax } => {
                let gx = acc!(*x);
                for (g, &src) in gy.iter().zip(argmax) {
                    gx[src] += *g;
                }
            }
            Op::Broadcast { x, outer, n, inner } => {
                let gx = acc!(*x);
                for o in 0..*outer {
                    for j in 0..*n {
                        let src = &gy[(o * n + j) * inner..(o * n + j + 1) * inner];
                        add_into(&mut gx[o * inner..(o + 1) * inner], src);
                    }
                }
            }
            Op::Concat { a, b, da, db } => {
                let w = da + db;
                let rows = gy.len() / w;
                {
                    let ga = acc!(*a);
                    for r in 0..rows {
                        add_into(&mut ga[r * da..(r + 1) * da], &gy[r * w..r * w + da]);
                    }
                }
                let gb = acc!(*b);
                for r in 0..rows {
                    add_into(&mut gb[r * db..(r + 1) * db], &gy[r * w + da..(r + 1) * w]);
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                let gt = acc!(*table);
                for (row, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * d..(id + 1) * d], &gy[row * d..(row + 1) * d]);
                }
            }
            Op::Attention { q, k, v, dims, probs } => {
                self.attention_backward(*q, *k, *v, dims, probs, gy, grads);
            }
            Op::CrossEntropy {
                logits,
                targets,
                keep,
                eps,
                probs,
            } => {
                let classes = self.shape(*logits)[1];
                let kept = keep.iter().filter(|k| **k).count();
                let scale = gy[0] / F::of(kept as f64);
                let uniform = *eps / F::of(classes as f64);
                let gl = acc!(*logits);
                for r in 0..targets.len() {
                    if !keep[r] {
                        continue;
                    }
                    for c in 0..classes {
                        let target = if c == targets[r] { F::one() - *eps + uniform } else { uniform };
                        gl[r * classes + c] += scale * (probs[r * classes + c] - target);
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                let gx = acc!(*x);
                for (a, w) in gx.iter_mut().zip(weights) {
                    *a += gy[0] * *w;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        dims: &AttnDims,
        probs: &[F],
        gy: &[F],
        grads: &mut [Option<Vec<F>>],
    ) {
        let AttnDims {
            batch,
            lq,
            lk,
            d,
            heads,
            ..
        } = *dims;
        let dh = d / heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let mut gq = grads[q.0].take().unwrap_or_else(|| vec![F::zero(); batch * lq * d]);
        let mut gk = grads[k.0].take().unwrap_or_else(|| vec![F::zero(); batch * lk * d]);
        // q, k and v may be the same node
        let mut gv = if v == k {
            None
        } else {
            Some(grads[v.0].take().unwrap_or_else(|| vec![F::zero(); batch * lk * d]))
        };
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dp = vec![F::zero(); lq * lk];
        let mut gv_shared = if v == k { Some(vec![F::zero(); batch * lk * d]) } else { None };
        for b in 0..batch {
            let qb = &qv[b * lq * d..(b + 1) * lq * d];
            let kb = &kv[b * lk * d..(b + 1) * lk * d];
            let vb = &vv[b * lk * d..(b + 1) * lk * d];
            let gob = &gy[b * lq * d..(b + 1) * lq * d];
            for h in 0..heads {
                let p = &probs[(b * heads + h) * lq * lk..(b * heads + h + 1) * lq * lk];
                // dP = dO V^T
                gemm(lq, dh, lk, F::one(), &gob[h * dh..], (d, 1), &vb[h * dh..], (1, d), F::zero(), &mut dp, (lk, 1));
                // dV += P^T dO
                let gvb = match (&mut gv, &mut gv_shared) {
                    (Some(g), _) | (None, Some(g)) => &mut g[b * lk * d..(b + 1) * lk * d],
                    _ => unreachable!(),
                };
                gemm(lk, lq, dh, F::one(), p, (1, lk), &gob[h * dh..], (d, 1), F::one(), &mut gvb[h * dh..], (d, 1));
                // dS = P * (dP - rowsum(dP * P))
                for i in 0..lq {
                    let pr = &p[i * lk..(i + 1) * lk];
                    let dr = &mut dp[i * lk..(i + 1) * lk];
                    let dot: F = pr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum();
                    dr.iter_mut().zip(pr).for_each(|(g, p)| *g = *p * (*g - dot));
                }
                gemm(lq, lk, dh, scale, &dp, (lk, 1), &kb[h * dh..], (d, 1), F::one(), &mut gq[b * lq * d + h * dh..], (d, 1));
                gemm(lk, lq, dh, scale, &dp, (1, lk), &qb[h * dh..], (d, 1), F::one(), &mut gk[b * lk * d + h * dh..], (d, 1));
            }
        }
        if let Some(shared) = gv_shared {
            add_into(&mut gk, &shared);
        }
        // Merge in case q aliases k or v.
        merge(grads, q, gq);
        merge(grads, k, gk);
        if let Some(gv) = gv {
            merge(grads, v, gv);
        }
    }
}

fn merge<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, g: Vec<F>) {
    match &mut grads[v.0] {
        Some(existing) => add_into(existing, &g),
        slot => *slot = Some(g),
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += *b);
}

pub(crate) fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = F::one() / sum;
    row.iter_mut().for_each(|x| *x *= inv);
}
