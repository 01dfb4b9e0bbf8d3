use std::collections::HashMap;

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        shared: bool,
        batch: usize,
        n: usize,
        k: usize,
        m: usize,
    },
    Transpose {
        a: usize,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        s: F,
    },
    Softmax {
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        d: usize,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Gelu {
        a: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<u32>,
        d: usize,
    },
    Concat {
        inputs: Vec<usize>,
        outer: usize,
        lens: Vec<usize>,
        inner: usize,
    },
    Slice {
        a: usize,
        outer: usize,
        len: usize,
        start: usize,
        end: usize,
        inner: usize,
    },
    Reshape {
        a: usize,
    },
    Mse {
        a: usize,
        b: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<u32>,
        probs: Vec<F>,
        classes: usize,
    },
    NegSqDist {
        x: usize,
        table: usize,
        rows: usize,
        d: usize,
        classes: usize,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// A computation record. Ops append nodes in execution order, so node
/// order is already topological.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    params: HashMap<usize, usize>,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{op}: {a:?} vs {b:?}"))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records a constant input (no gradient).
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a differentiable leaf that is not a registered parameter.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records parameter `id`; repeated registrations share one node.
    pub fn param(&mut self, id: usize, t: &Tensor<F>) -> Var {
        if let Some(&node) = self.params.get(&id) {
            return Var(node);
        }
        let v = self.push(t.clone(), Op::Leaf, true);
        self.params.insert(id, v.0);
        v
    }

    /// `a @ b` over the last two axes. `b` is either a 2-D matrix shared by
    /// every leading index of `a`, or carries the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch("matmul needs rank >= 2", &sa, &sb));
        }
        let (n, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, m) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch("matmul inner dims", &sa, &sb));
        }
        let lead = &sa[..sa.len() - 2];
        let batch: usize = lead.iter().product();
        let shared = sb.len() == 2;
        if !shared && &sb[..sb.len() - 2] != lead {
            return Err(mismatch("matmul batch dims", &sa, &sb));
        }
        let mut out_shape = lead.to_vec();
        out_shape.extend([n, m]);
        let mut out = vec![F::zero(); batch * n * m];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            if shared {
                F::gemm(batch * n, k, m, av, false, bv, false, &mut out, false);
            } else {
                for i in 0..batch {
                    F::gemm(
                        n,
                        k,
                        m,
                        &av[i * n * k..],
                        false,
                        &bv[i * k * m..],
                        false,
                        &mut out[i * n * m..],
                        false,
                    );
                }
            }
        }
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::MatMul {
                a: a.0,
                b: b.0,
                shared,
                batch,
                n,
                k,
                m,
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(Error::ShapeMismatch(format!("transpose needs rank >= 2, got {s:?}")));
        }
        let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = s[..s.len() - 2].iter().product();
        let out = transpose_data(self.value(a).data(), batch, rows, cols);
        let mut shape = s.clone();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let rg = self.rg(a.0);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Transpose {
                a: a.0,
                batch,
                rows,
                cols,
            },
            rg,
        ))
    }

    /// `a + b` where `b`'s shape equals a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch("add", sa, sb));
        }
        let av = self.value(a);
        let bv = self.value(b).data();
        let l = bv.len();
        let out: Vec<F> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % l])
            .collect();
        let t = Tensor::new(av.shape(), out)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = F::from_f64_lossy(s);
        let av = self.value(a);
        let t = Tensor {
            shape: av.shape().to_vec(),
            data: av.data().iter().map(|&x| x * s).collect(),
        };
        let rg = self.rg(a.0);
        self.push(t, Op::Scale { a: a.0, s }, rg)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::ShapeMismatch(format!("softmax axis {axis} for shape {s:?}")));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let x = self.value(a).data();
        let mut out = vec![F::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = F::neg_infinity();
                for j in 0..len {
                    mx = mx.max(x[idx(j)]);
                }
                let mut sum = F::zero();
                for j in 0..len {
                    let e = (x[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / sum;
                }
            }
        }
        let rg = self.rg(a.0);
        Ok(self.push(
            Tensor::new(&s, out)?,
            Op::Softmax {
                a: a.0,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// the affine `gamma`, `beta` (both shaped like the last axis).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| mismatch("layer_norm", &s, &[]))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(mismatch("layer_norm affine", &s, self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.len() / d;
        let eps = F::from_f64_lossy(LN_EPS);
        let dn = F::from_usize(d).unwrap();
        let mut xhat = vec![F::zero(); xv.len()];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        Ok(self.push(
            Tensor::new(&s, out)?,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                d,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = F::from_f64_lossy(GELU_C);
        let k = F::from_f64_lossy(0.044_715);
        let half = F::from_f64_lossy(0.5);
        let av = self.value(a);
        let t = Tensor {
            shape: av.shape().to_vec(),
            data: av
                .data()
                .iter()
                .map(|&x| half * x * (F::one() + (c * (x + k * x * x * x)).tanh()))
                .collect(),
        };
        let rg = self.rg(a.0);
        self.push(t, Op::Gelu { a: a.0 }, rg)
    }

    /// Gathers rows of a `[V, d]` table; output shape is `ids_shape + [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32], ids_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(mismatch("embedding", &ts, ids_shape));
        }
        let (v, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(Error::IdOutOfRange {
                id: bad as usize,
                size: v,
            });
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i as usize * d..(i as usize + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let rg = self.rg(table.0);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
                d,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::ShapeMismatch(format!("concat axis {axis} for {first:?}")));
        }
        let mut lens = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let same = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(mismatch("concat", &first, s));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &l) in inputs.iter().zip(&lens) {
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|v| self.rg(v.0));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.iter().map(|v| v.0).collect(),
                outer,
                lens,
                inner,
            },
            rg,
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{end} on axis {axis} of {s:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let av = self.value(a).data();
        let w = end - start;
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            out.extend_from_slice(&av[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = s;
        shape[axis] = w;
        let rg = self.rg(a.0);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Slice {
                a: a.0,
                outer,
                len,
                start,
                end,
                inner,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a.0);
        Ok(self.push(t, Op::Reshape { a: a.0 }, rg))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("mse", sa, sb));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let n = F::from_usize(av.len()).unwrap();
        let s: F = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse { a: a.0, b: b.0 }, rg))
    }

    /// Mean negative log-likelihood of `targets` under softmax of the last
    /// axis of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let classes = *s.last().ok_or_else(|| mismatch("cross_entropy", &s, &[]))?;
        let x = self.value(logits).data();
        if x.len() != targets.len() * classes {
            return Err(mismatch("cross_entropy targets", &s, &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= classes) {
            return Err(Error::IdOutOfRange {
                id: bad as usize,
                size: classes,
            });
        }
        let mut probs = vec![F::zero(); x.len()];
        let mut total = F::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = &x[r * classes..(r + 1) * classes];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                probs[r * classes + j] = e;
                sum += e;
            }
            for p in &mut probs[r * classes..(r + 1) * classes] {
                *p = *p / sum;
            }
            total += sum.ln() + mx - row[t as usize];
        }
        let n = F::from_usize(targets.len()).unwrap();
        let rg = self.rg(logits.0);
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
                classes,
            },
            rg,
        ))
    }

    /// `out[.., v] = -‖x[..] - table[v]‖²` for `x: [.., d]`, `table: [V, d]`.
    pub fn neg_sq_dist(&mut self, x: Var, table: Var) -> Result<Var> {
        let (sx, st) = (self.shape(x).to_vec(), self.shape(table).to_vec());
        let d = *sx.last().unwrap_or(&0);
        if st.len() != 2 || st[1] != d || d == 0 {
            return Err(mismatch("neg_sq_dist", &sx, &st));
        }
        let classes = st[0];
        let xv = self.value(x).data();
        let tv = self.value(table).data();
        let rows = xv.len() / d;
        let mut out = vec![F::zero(); rows * classes];
        F::gemm(rows, d, classes, xv, false, tv, true, &mut out, false);
        let en: Vec<F> = (0..classes)
            .map(|v| tv[v * d..(v + 1) * d].iter().map(|&e| e * e).sum())
            .collect();
        let two = F::from_f64_lossy(2.0);
        for r in 0..rows {
            let xn: F = xv[r * d..(r + 1) * d].iter().map(|&e| e * e).sum();
            for v in 0..classes {
                let o = &mut out[r * classes + v];
                *o = two * *o - xn - en[v];
            }
        }
        let mut shape = sx[..sx.len() - 1].to_vec();
        shape.push(classes);
        let rg = self.rg(x.0) || self.rg(table.0);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::NegSqDist {
                x: x.0,
                table: table.0,
                rows,
                d,
                classes,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar(ls.to_vec()));
        }
        if !self.rg(loss.0) {
            return Err(Error::DetachedGraph);
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(ls, F::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.backprop_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let gd = g.data();
        let mut acc = |target: usize, data: Vec<F>| {
            if !self.nodes[target].requires_grad {
                return;
            }
            match &mut grads[target] {
                Some(t) => {
                    for (a, b) in t.data.iter_mut().zip(data) {
                        *a += b;
                    }
                }
                slot @ None => {
                    *slot = Some(Tensor {
                        shape: self.nodes[target].value.shape().to_vec(),
                        data,
                    })
                }
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                shared,
                batch,
                n,
                k,
                m,
            } => {
                let av = self.nodes[a].value.data();
                let bv = self.nodes[b].value.data();
                if self.rg(a) {
                    let mut da = vec![F::zero(); batch * n * k];
                    if shared {
                        F::gemm(batch * n, m, k, gd, false, bv, true, &mut da, false);
                    } else {
                        for i in 0..batch {
                            F::gemm(
                                n,
                                m,
                                k,
                                &gd[i * n * m..],
                                false,
                                &bv[i * k * m..],
                                true,
                                &mut da[i * n * k..],
                                false,
                            );
                        }
                    }
                    acc(a, da);
                }
                if self.rg(b) {
                    if shared {
                        let mut db = vec![F::zero(); k * m];
                        F::gemm(k, batch * n, m, av, true, gd, false, &mut db, false);
                        acc(b, db);
                    } else {
                        let mut db = vec![F::zero(); batch * k * m];
                        for i in 0..batch {
                            F::gemm(
                                k,
                                n,
                                m,
                                &av[i * n * k..],
                                true,
                                &gd[i * n * m..],
                                false,
                                &mut db[i * k * m..],
                                false,
                            );
                        }
                        acc(b, db);
                    }
                }
            }
            &Op::Transpose {
                a,
                batch,
                rows,
                cols,
            } => acc(a, transpose_data(gd, batch, cols, rows)),
            &Op::Add { a, b } => {
                if self.rg(a) {
                    acc(a, gd.to_vec());
                }
                if self.rg(b) {
                    let l = self.nodes[b].value.numel();
                    let mut db = vec![F::zero(); l];
                    for chunk in gd.chunks(l) {
                        for (d, &x) in db.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    acc(b, db);
                }
            }
            &Op::Scale { a, s } => acc(a, gd.iter().map(|&x| x * s).collect()),
            &Op::Softmax {
                a,
                outer,
                len,
                inner,
            } => {
                let y = self.nodes[idx].value.data();
                let mut dx = vec![F::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: F = (0..len).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                acc(a, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                d,
                xhat,
                rstd,
            } => {
                let (x, gamma, beta, d) = (*x, *gamma, *beta, *d);
                let gv = self.nodes[gamma].value.data();
                let rows = gd.len() / d;
                let dn = F::from_usize(d).unwrap();
                if self.rg(x) {
                    let mut dx = vec![F::zero(); gd.len()];
                    let mut dxh = vec![F::zero(); d];
                    for r in 0..rows {
                        let (mut m1, mut m2) = (F::zero(), F::zero());
                        for j in 0..d {
                            let v = gd[r * d + j] * gv[j];
                            dxh[j] = v;
                            m1 += v;
                            m2 += v * xhat[r * d + j];
                        }
                        m1 = m1 / dn;
                        m2 = m2 / dn;
                        for j in 0..d {
                            dx[r * d + j] = rstd[r] * (dxh[j] - m1 - xhat[r * d + j] * m2);
                        }
                    }
                    acc(x, dx);
                }
                if self.rg(gamma) {
                    let mut dg = vec![F::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += gd[r * d + j] * xhat[r * d + j];
                        }
                    }
                    acc(gamma, dg);
                }
                if self.rg(beta) {
                    let mut db = vec![F::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] += gd[r * d + j];
                        }
                    }
                    acc(beta, db);
                }
            }
            &Op::Gelu { a } => {
                let c = F::from_f64_lossy(GELU_C);
                let k = F::from_f64_lossy(0.044_715);
                let k3 = F::from_f64_lossy(3.0 * 0.044_715);
                let half = F::from_f64_lossy(0.5);
                let xv = self.nodes[a].value.data();
                let dx = xv
                    .iter()
                    .zip(gd)
                    .map(|(&x, &g)| {
                        let u = c * (x + k * x * x * x);
                        let th = u.tanh();
                        let du = c * (F::one() + k3 * x * x);
                        g * (half * (F::one() + th) + half * x * (F::one() - th * th) * du)
                    })
                    .collect();
                acc(a, dx);
            }
            Op::Embedding { table, ids, d } => {
                let (table, d) = (*table, *d);
                let mut dt = vec![F::zero(); self.nodes[table].value.numel()];
                for (r, &i) in ids.iter().enumerate() {
                    let dst = &mut dt[i as usize * d..(i as usize + 1) * d];
                    for (t, &x) in dst.iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                        *t += x;
                    }
                }
                acc(table, dt);
            }
            Op::Concat {
                inputs,
                outer,
                lens,
                inner,
            } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (&inp, &l) in inputs.iter().zip(lens) {
                    if self.rg(inp) {
                        let mut di = Vec::with_capacity(outer * l * inner);
                        for o in 0..*outer {
                            let base = (o * total + offset) * inner;
                            di.extend_from_slice(&gd[base..base + l * inner]);
                        }
                        acc(inp, di);
                    }
                    offset += l;
                }
            }
            &Op::Slice {
                a,
                outer,
                len,
                start,
                end,
                inner,
            } => {
                let w = end - start;
                let mut da = vec![F::zero(); outer * len * inner];
                for o in 0..outer {
                    da[(o * len + start) * inner..(o * len + end) * inner]
                        .copy_from_slice(&gd[o * w * inner..(o + 1) * w * inner]);
                }
                acc(a, da);
            }
            &Op::Reshape { a } => acc(a, gd.to_vec()),
            &Op::Mse { a, b } => {
                let (av, bv) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                let scale = F::from_f64_lossy(2.0) * gd[0] / F::from_usize(av.len()).unwrap();
                let da: Vec<F> = av.iter().zip(bv).map(|(&x, &y)| scale * (x - y)).collect();
                if self.rg(b) {
                    acc(b, da.iter().map(|&v| -v).collect());
                }
                if self.rg(a) {
                    acc(a, da);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                classes,
            } => {
                let scale = gd[0] / F::from_usize(targets.len()).unwrap();
                let mut dl: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * classes + t as usize] -= scale;
                }
                acc(*logits, dl);
            }
            &Op::NegSqDist {
                x,
                table,
                rows,
                d,
                classes,
            } => {
                let xv = self.nodes[x].value.data();
                let tv = self.nodes[table].value.data();
                let two = F::from_f64_lossy(2.0);
                if self.rg(x) {
                    // dx_r = 2 (G E)_r - 2 (Σ_v G_rv) x_r
                    let mut dx = vec![F::zero(); rows * d];
                    F::gemm(rows, classes, d, gd, false, tv, false, &mut dx, false);
                    for r in 0..rows {
                        let gs: F = gd[r * classes..(r + 1) * classes].iter().copied().sum();
                        for j in 0..d {
                            let v = &mut dx[r * d + j];
                            *v = two * (*v - gs * xv[r * d + j]);
                        }
                    }
                    acc(x, dx);
                }
                if self.rg(table) {
                    // dE_v = 2 (Gᵀ X)_v - 2 (Σ_r G_rv) e_v
                    let mut de = vec![F::zero(); classes * d];
                    F::gemm(classes, rows, d, gd, true, xv, false, &mut de, false);
                    let mut colsum = vec![F::zero(); classes];
                    for r in 0..rows {
                        for (c, &g) in colsum.iter_mut().zip(&gd[r * classes..(r + 1) * classes]) {
                            *c += g;
                        }
                    }
                    for v in 0..classes {
                        for j in 0..d {
                            let e = &mut de[v * d + j];
                            *e = two * (*e - colsum[v] * tv[v * d + j]);
                        }
                    }
                    acc(table, de);
                }
            }
        }
    }
}

fn transpose_data<F: Copy + Default>(x: &[F], batch: usize, rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::default(); x.len()];
    for b in 0..batch {
        let src = &x[b * rows * cols..(b + 1) * rows * cols];
        let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    out
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    params: HashMap<usize, usize>,
}

impl<F: Float> Gradients<F> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of parameter `id`; `None` when it was never recorded or the
    /// loss does not reach it.
    pub fn param(&self, id: usize) -> Option<&Tensor<F>> {
        self.params.get(&id).and_then(|&n| self.grads[n].as_ref())
    }

    pub fn take_param(&mut self, id: usize) -> Option<Tensor<F>> {
        self.params.get(&id).and_then(|&n| self.grads[n].take())
    }
}
