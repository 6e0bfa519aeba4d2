use rand::Rng;

use super::tensor::{gemm, MatView, Real, Tensor};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    AddConst(Var),
    Scale(Var, F),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<F>,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    MeanAxis {
        x: Var,
        outer: usize,
        mid: usize,
        inner: usize,
    },
    ConcatLast {
        parts: Vec<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
    Mse(Var, Var),
    ClampMax {
        x: Var,
        active: bool,
    },
    WeightedSum(Vec<(Var, F)>),
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Reverse-mode automatic differentiation tape.
///
/// Every operation evaluates eagerly and records what its backward pass needs.
/// Leaves created with `trainable = false` never receive gradients, and nothing
/// upstream of them is differentiated unless another path requires it.
#[derive(Debug, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate<F: Real>(slot: &mut Option<Vec<F>>, delta: Vec<F>) {
    match slot {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        None => *slot = Some(delta),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<F> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    /// Records a constant input or a parameter.
    pub fn leaf(&mut self, value: Tensor<F>, trainable: bool) -> Var {
        self.push(value, Op::Leaf, trainable)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// `x @ w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let din = *xs.last().unwrap_or(&0);
        if ws.len() != 2 || ws[0] != din {
            return Err(Error::Shape(format!(
                "linear: input {:?} incompatible with weight {:?}",
                xs, ws
            )));
        }
        let dout = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::Shape(format!(
                    "linear: bias {:?} for output width {}",
                    self.shape(b),
                    dout
                )));
            }
        }
        let rows = self.value(x).numel() / din.max(1);
        let mut out = vec![F::zero(); rows * dout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            F::one(),
            self.value(x).data(),
            MatView::row_major(rows, din),
            self.value(w).data(),
            MatView::row_major(din, dout),
            if b.is_some() { F::one() } else { F::zero() },
            &mut out,
            MatView::row_major(rows, dout),
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let needs = self.ng(x) || self.ng(w) || b.map(|b| self.ng(b)).unwrap_or(false);
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), needs))
    }

    /// Adds a constant broadcast over the leading axes of `x`.
    pub fn add_const(&mut self, x: Var, c: &Tensor<F>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let n = c.numel();
        if n == 0 || self.value(x).numel() % n != 0 || !xs.ends_with(c.shape()) {
            return Err(Error::Shape(format!(
                "add_const: {:?} does not broadcast over {:?}",
                c.shape(),
                xs
            )));
        }
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (d, v) in chunk.iter_mut().zip(c.data()) {
                *d += *v;
            }
        }
        let needs = self.ng(x);
        Ok(self.push(Tensor::new(xs, data)?, Op::AddConst(x), needs))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|a| *a * s).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let needs = self.ng(x);
        self.push(t, Op::Scale(x, s), needs)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = F::lit(GELU_C);
        let a = F::lit(GELU_A);
        let half = F::lit(0.5);
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&z| half * z * (F::one() + (c * (z + a * z * z * z)).tanh()))
            .collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let needs = self.ng(x);
        self.push(t, Op::Gelu(x), needs)
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies the
    /// optional elementwise affine `gamma * xhat + beta`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [d] {
                return Err(Error::Shape(format!(
                    "layer_norm: affine {:?} for width {}",
                    self.shape(p),
                    d
                )));
            }
        }
        let xv = self.value(x).data();
        let rows = xv.len() / d.max(1);
        let mut xhat = vec![F::zero(); xv.len()];
        let mut rstd = vec![F::zero(); rows];
        let inv_d = 1.0 / d as f64;
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() * inv_d;
            let var = row
                .iter()
                .map(|v| {
                    let c = v.as_f64() - mean;
                    c * c
                })
                .sum::<f64>()
                * inv_d;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = F::lit(rs);
            let m = F::lit(mean);
            for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (*v - m) * rstd[r];
            }
        }
        let mut out = xhat.clone();
        if let Some(g) = gamma {
            let gv = self.value(g).data();
            for row in out.chunks_mut(d) {
                for (o, g) in row.iter_mut().zip(gv) {
                    *o *= *g;
                }
            }
        }
        if let Some(b) = beta {
            let bv = self.value(b).data();
            for row in out.chunks_mut(d) {
                for (o, b) in row.iter_mut().zip(bv) {
                    *o += *b;
                }
            }
        }
        let needs = self.ng(x)
            || gamma.map(|g| self.ng(g)).unwrap_or(false)
            || beta.map(|b| self.ng(b)).unwrap_or(false);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Scaled dot-product attention over `heads` equal slices of the feature axis.
    /// `q` is `[B, Tq, D]`; `k` and `v` are `[B, Tk, D]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let qs = self.shape(q).to_vec();
        let ks = self.shape(k).to_vec();
        if qs.len() != 3 || ks.len() != 3 || ks != self.shape(v) || qs[0] != ks[0] || qs[2] != ks[2]
        {
            return Err(Error::Shape(format!(
                "attention: q {:?}, k {:?}, v {:?}",
                qs,
                ks,
                self.shape(v)
            )));
        }
        let (b, tq, d) = (qs[0], qs[1], qs[2]);
        let tk = ks[1];
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("attention: {} heads for width {}", heads, d)));
        }
        let dh = d / heads;
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut probs = vec![F::zero(); b * heads * tq * tk];
        let mut out = vec![F::zero(); b * tq * d];
        for bi in 0..b {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tq {
                    let qrow = &qd[(bi * tq + i) * d + off..(bi * tq + i) * d + off + dh];
                    let p = &mut probs[((bi * heads + h) * tq + i) * tk..((bi * heads + h) * tq + i + 1) * tk];
                    let mut max = F::neg_infinity();
                    for j in 0..tk {
                        let krow = &kd[(bi * tk + j) * d + off..(bi * tk + j) * d + off + dh];
                        let s = qrow.iter().zip(krow).map(|(a, c)| *a * *c).sum::<F>() * scale;
                        p[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                    let mut total = F::zero();
                    for pj in p.iter_mut() {
                        *pj = (*pj - max).exp();
                        total += *pj;
                    }
                    let inv = F::one() / total;
                    let orow = &mut out[(bi * tq + i) * d + off..(bi * tq + i) * d + off + dh];
                    for (j, pj) in p.iter_mut().enumerate() {
                        *pj *= inv;
                        let vrow = &vd[(bi * tk + j) * d + off..(bi * tk + j) * d + off + dh];
                        for (o, vv) in orow.iter_mut().zip(vrow) {
                            *o += *pj * *vv;
                        }
                    }
                }
            }
        }
        let needs = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            Tensor::new(vec![b, tq, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            needs,
        ))
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        let n = self.value(x).numel();
        if numel != index.len() || index.iter().any(|&i| i >= n) {
            return Err(Error::Shape(format!(
                "gather: {} indices into {} elements for shape {:?}",
                index.len(),
                n,
                shape
            )));
        }
        let xv = self.value(x).data();
        let data = index.iter().map(|&i| xv[i]).collect();
        let needs = self.ng(x);
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::Gather { x, index }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Mean over `axis`, removing it from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("mean_axis: axis {} of {:?}", axis, shape)));
        }
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); outer * inner];
        let inv = F::lit(1.0 / mid as f64);
        for o in 0..outer {
            for m in 0..mid {
                let src = &xv[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += *s;
                }
            }
        }
        for v in out.iter_mut() {
            *v *= inv;
        }
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let needs = self.ng(x);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::MeanAxis {
                x,
                outer,
                mid,
                inner,
            },
            needs,
        ))
    }

    /// Concatenates 2-D tensors `[R, c_i]` along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::Shape(format!("concat_last: part {:?}", s)));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![F::zero(); rows * total];
        let mut col = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let pv = self.value(*p).data();
            for r in 0..rows {
                out[r * total + col..r * total + col + w].copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let needs = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatLast {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Valid 1-D convolution. `x` is `[N, Cin, L]`, `w` is `[Cout, Cin, K]`, `b` is `[Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return Err(Error::Shape(format!(
                "conv1d: input {:?}, weight {:?}, bias {:?}",
                xs,
                ws,
                self.shape(b)
            )));
        }
        let (n, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if stride == 0 || len < k {
            return Err(Error::Shape(format!(
                "conv1d: kernel {} stride {} over length {}",
                k, stride, len
            )));
        }
        let lout = (len - k) / stride + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![F::zero(); n * cout * lout];
        for ni in 0..n {
            let o = &mut out[ni * cout * lout..(ni + 1) * cout * lout];
            for (co, row) in o.chunks_mut(lout).enumerate() {
                row.fill(bv[co]);
            }
            for c in 0..cin {
                // windows of channel c viewed as a [K x Lout] matrix without copying
                let window = MatView {
                    offset: (ni * cin + c) * len,
                    rows: k,
                    cols: lout,
                    rs: 1,
                    cs: stride,
                };
                let wc = MatView {
                    offset: c * k,
                    rows: cout,
                    cols: k,
                    rs: cin * k,
                    cs: 1,
                };
                gemm(
                    F::one(),
                    wv,
                    wc,
                    xv,
                    window,
                    F::one(),
                    o,
                    MatView::row_major(cout, lout),
                );
            }
        }
        let needs = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(
            Tensor::new(vec![n, cout, lout], out)?,
            Op::Conv1d { x, w, b, stride },
            needs,
        ))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = F::lit(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<F> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let needs = self.ng(x);
        self.push(t, Op::Dropout { x, mask }, needs)
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class labels (nats).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l >= s[1]) {
            return Err(Error::Shape(format!(
                "cross_entropy: logits {:?} with {} labels",
                s,
                labels.len()
            )));
        }
        let (b, c) = (s[0], s[1]);
        let lv = self.value(logits).data();
        let mut probs = vec![F::zero(); b * c];
        let mut loss = 0.0f64;
        for i in 0..b {
            let row = &lv[i * c..(i + 1) * c];
            let max = row.iter().fold(F::neg_infinity(), |m, v| m.max(*v));
            let mut total = F::zero();
            for (p, v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (*v - max).exp();
                total += *p;
            }
            for p in probs[i * c..(i + 1) * c].iter_mut() {
                *p = *p / total;
            }
            loss += (total.ln() + max - row[labels[i]]).as_f64();
        }
        let needs = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(F::lit(loss / b as f64)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mse: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let total: f64 = av
            .iter()
            .zip(bv)
            .map(|(x, y)| {
                let d = (*x - *y).as_f64();
                d * d
            })
            .sum();
        let value = F::lit(total / av.len().max(1) as f64);
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(value), Op::Mse(a, b), needs))
    }

    /// `min(x, ceiling)` on a scalar; the gradient is zero once the ceiling binds.
    pub fn clamp_max(&mut self, x: Var, ceiling: Option<f64>) -> Var {
        let v = self.value(x).item();
        let active = matches!(ceiling, Some(c) if v.as_f64() > c);
        let out = if active { F::lit(ceiling.unwrap()) } else { v };
        let needs = self.ng(x);
        self.push(Tensor::scalar(out), Op::ClampMax { x, active }, needs)
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Var {
        let mut total = F::zero();
        for (v, w) in terms {
            total += *w * self.value(*v).item();
        }
        let needs = terms.iter().any(|(v, _)| self.ng(*v));
        self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), needs)
    }

    /// Differentiates the scalar `loss` with respect to every node that needs it.
    pub fn backward(&self, loss: Var) -> Grads<F> {
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one(); self.nodes[loss.0].value.numel()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn backward_node(&self, idx: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let din = *xv.shape().last().unwrap();
                let dout = *node.value.shape().last().unwrap();
                let rows = xv.numel() / din.max(1);
                if self.ng(*x) {
                    let mut dx = vec![F::zero(); rows * din];
                    gemm(
                        F::one(),
                        g,
                        MatView::row_major(rows, dout),
                        self.value(*w).data(),
                        MatView::transposed(din, dout),
                        F::zero(),
                        &mut dx,
                        MatView::row_major(rows, din),
                    );
                    accumulate(&mut grads[x.0], dx);
                }
                if self.ng(*w) {
                    let mut dw = vec![F::zero(); din * dout];
                    gemm(
                        F::one(),
                        xv.data(),
                        MatView::transposed(rows, din),
                        g,
                        MatView::row_major(rows, dout),
                        F::zero(),
                        &mut dw,
                        MatView::row_major(din, dout),
                    );
                    accumulate(&mut grads[w.0], dw);
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let mut db = vec![F::zero(); dout];
                        for row in g.chunks(dout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += *v;
                            }
                        }
                        accumulate(&mut grads[b.0], db);
                    }
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], g.to_vec());
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                if self.ng(*x) {
                    accumulate(&mut grads[x.0], g.to_vec());
                }
            }
            Op::Scale(x, s) => {
                if self.ng(*x) {
                    accumulate(&mut grads[x.0], g.iter().map(|v| *v * *s).collect());
                }
            }
            Op::Gelu(x) => {
                if self.ng(*x) {
                    let c = F::lit(GELU_C);
                    let a = F::lit(GELU_A);
                    let half = F::lit(0.5);
                    let three = F::lit(3.0);
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&z, &gz)| {
                            let u = c * (z + a * z * z * z);
                            let t = u.tanh();
                            let du = c * (F::one() + three * a * z * z);
                            let d = half * (F::one() + t) + half * z * (F::one() - t * t) * du;
                            gz * d
                        })
                        .collect();
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = *node.value.shape().last().unwrap();
                let rows = rstd.len();
                if let Some(gm) = gamma {
                    if self.ng(*gm) {
                        let mut dg = vec![F::zero(); d];
                        for r in 0..rows {
                            for j in 0..d {
                                dg[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                        accumulate(&mut grads[gm.0], dg);
                    }
                }
                if let Some(bt) = beta {
                    if self.ng(*bt) {
                        let mut db = vec![F::zero(); d];
                        for row in g.chunks(d) {
                            for (o, v) in db.iter_mut().zip(row) {
                                *o += *v;
                            }
                        }
                        accumulate(&mut grads[bt.0], db);
                    }
                }
                if self.ng(*x) {
                    let gv = gamma.map(|gm| self.value(gm).data());
                    let inv_d = F::lit(1.0 / d as f64);
                    let mut dx = vec![F::zero(); rows * d];
                    let mut dxhat = vec![F::zero(); d];
                    for r in 0..rows {
                        let mut sum = F::zero();
                        let mut sum_xh = F::zero();
                        for j in 0..d {
                            let v = match gv {
                                Some(gv) => g[r * d + j] * gv[j],
                                None => g[r * d + j],
                            };
                            dxhat[j] = v;
                            sum += v;
                            sum_xh += v * xhat[r * d + j];
                        }
                        let mean = sum * inv_d;
                        let mean_xh = sum_xh * inv_d;
                        for j in 0..d {
                            dx[r * d + j] = rstd[r] * (dxhat[j] - mean - xhat[r * d + j] * mean_xh);
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, probs, g, grads),
            Op::Gather { x, index } => {
                if self.ng(*x) {
                    let mut dx = vec![F::zero(); self.value(*x).numel()];
                    for (gi, &src) in g.iter().zip(index) {
                        dx[src] += *gi;
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::MeanAxis {
                x,
                outer,
                mid,
                inner,
            } => {
                if self.ng(*x) {
                    let inv = F::lit(1.0 / *mid as f64);
                    let mut dx = vec![F::zero(); outer * mid * inner];
                    for o in 0..*outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for m in 0..*mid {
                            for (d, s) in dx[(o * mid + m) * inner..(o * mid + m + 1) * inner]
                                .iter_mut()
                                .zip(src)
                            {
                                *d = *s * inv;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::ConcatLast { parts } => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut col = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if self.ng(*p) {
                        let mut dp = vec![F::zero(); rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + col..r * total + col + w]);
                        }
                        accumulate(&mut grads[p.0], dp);
                    }
                    col += w;
                }
            }
            Op::Conv1d { x, w, b, stride } => {
                self.conv1d_backward(*x, *w, *b, *stride, g, grads)
            }
            Op::Dropout { x, mask } => {
                if self.ng(*x) {
                    accumulate(&mut grads[x.0], g.iter().zip(mask).map(|(a, m)| *a * *m).collect());
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if self.ng(*logits) {
                    let c = self.shape(*logits)[1];
                    let b = labels.len();
                    let scale = g[0] / F::lit(b as f64);
                    let mut dl: Vec<F> = probs.iter().map(|p| *p * scale).collect();
                    for (i, &l) in labels.iter().enumerate() {
                        dl[i * c + l] -= scale;
                    }
                    accumulate(&mut grads[logits.0], dl);
                }
            }
            Op::Mse(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let scale = g[0] * F::lit(2.0 / av.len().max(1) as f64);
                if self.ng(*a) {
                    accumulate(
                        &mut grads[a.0],
                        av.iter().zip(bv).map(|(x, y)| (*x - *y) * scale).collect(),
                    );
                }
                if self.ng(*b) {
                    accumulate(
                        &mut grads[b.0],
                        av.iter().zip(bv).map(|(x, y)| (*y - *x) * scale).collect(),
                    );
                }
            }
            Op::ClampMax { x, active } => {
                if self.ng(*x) && !active {
                    accumulate(&mut grads[x.0], g.to_vec());
                }
            }
            Op::WeightedSum(terms) => {
                for (v, w) in terms {
                    if self.ng(*v) {
                        accumulate(&mut grads[v.0], vec![g[0] * *w]);
                    }
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
        heads: usize,
        probs: &[F],
        g: &[F],
        grads: &mut [Option<Vec<F>>],
    ) {
        let qs = self.shape(q);
        let (b, tq, d) = (qs[0], qs[1], qs[2]);
        let tk = self.shape(k)[1];
        let dh = d / heads;
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut dq = vec![F::zero(); qd.len()];
        let mut dk = vec![F::zero(); kd.len()];
        let mut dv = vec![F::zero(); vd.len()];
        let mut dp = vec![F::zero(); tk];
        for bi in 0..b {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tq {
                    let p = &probs[((bi * heads + h) * tq + i) * tk..((bi * heads + h) * tq + i + 1) * tk];
                    let gi = &g[(bi * tq + i) * d + off..(bi * tq + i) * d + off + dh];
                    let mut dot = F::zero();
                    for j in 0..tk {
                        let vrow = (bi * tk + j) * d + off;
                        let mut s = F::zero();
                        for t in 0..dh {
                            s += gi[t] * vd[vrow + t];
                            dv[vrow + t] += p[j] * gi[t];
                        }
                        dp[j] = s;
                        dot += s * p[j];
                    }
                    let qrow = (bi * tq + i) * d + off;
                    for j in 0..tk {
                        let ds = p[j] * (dp[j] - dot) * scale;
                        let krow = (bi * tk + j) * d + off;
                        for t in 0..dh {
                            dq[qrow + t] += ds * kd[krow + t];
                            dk[krow + t] += ds * qd[qrow + t];
                        }
                    }
                }
            }
        }
        if self.ng(q) {
            accumulate(&mut grads[q.0], dq);
        }
        if self.ng(k) {
            accumulate(&mut grads[k.0], dk);
        }
        if self.ng(v) {
            accumulate(&mut grads[v.0], dv);
        }
    }

    fn conv1d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        g: &[F],
        grads: &mut [Option<Vec<F>>],
    ) {
        let xs = self.shape(x);
        let (n, cin, len) = (xs[0], xs[1], xs[2]);
        let ws = self.shape(w);
        let (cout, k) = (ws[0], ws[2]);
        let lout = (len - k) / stride + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        if self.ng(b) {
            let mut db = vec![F::zero(); cout];
            for ni in 0..n {
                for (co, d) in db.iter_mut().enumerate() {
                    let row = &g[(ni * cout + co) * lout..(ni * cout + co + 1) * lout];
                    *d += row.iter().copied().sum::<F>();
                }
            }
            accumulate(&mut grads[b.0], db);
        }
        if self.ng(w) {
            let mut dw = vec![F::zero(); cout * cin * k];
            for ni in 0..n {
                for c in 0..cin {
                    // dW[:, c, :] += dOut[n] (Cout x Lout) @ windows^T (Lout x K)
                    let windows_t = MatView {
                        offset: (ni * cin + c) * len,
                        rows: lout,
                        cols: k,
                        rs: stride,
                        cs: 1,
                    };
                    let dwc = MatView {
                        offset: c * k,
                        rows: cout,
                        cols: k,
                        rs: cin * k,
                        cs: 1,
                    };
                    gemm(
                        F::one(),
                        g,
                        MatView::row_major(cout, lout).at(ni * cout * lout),
                        xv,
                        windows_t,
                        F::one(),
                        &mut dw,
                        dwc,
                    );
                }
            }
            accumulate(&mut grads[w.0], dw);
        }
        if self.ng(x) {
            let mut dx = vec![F::zero(); n * cin * len];
            let mut dcols = vec![F::zero(); lout * k];
            for ni in 0..n {
                for c in 0..cin {
                    // dcols (Lout x K) = dOut[n]^T (Lout x Cout) @ W[:, c, :] (Cout x K)
                    let wc = MatView {
                        offset: c * k,
                        rows: cout,
                        cols: k,
                        rs: cin * k,
                        cs: 1,
                    };
                    gemm(
                        F::one(),
                        g,
                        MatView::transposed(cout, lout).at(ni * cout * lout),
                        wv,
                        wc,
                        F::zero(),
                        &mut dcols,
                        MatView::row_major(lout, k),
                    );
                    let base = (ni * cin + c) * len;
                    for l in 0..lout {
                        let dst = &mut dx[base + l * stride..base + l * stride + k];
                        for (d, s) in dst.iter_mut().zip(&dcols[l * k..(l + 1) * k]) {
                            *d += *s;
                        }
                    }
                }
            }
            accumulate(&mut grads[x.0], dx);
        }
    }
}
