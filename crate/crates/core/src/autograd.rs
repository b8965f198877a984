//! Reverse-mode automatic differentiation over a per-step tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Parameters enter as
//! leaves that borrow from a [`ParamStore`]; [`Tape::backward`] returns
//! gradients keyed by parameter index. [`Tape::detach`] is the stop-gradient
//! primitive: its output is a constant leaf holding the same value.

use crate::kernels::{self, AttnLayout};
use crate::scalar::{MatMut, MatRef, Scalar};
use crate::tensor::Tensor;

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(usize),
    Embed { table: Var, ids: Vec<u32> },
    Add(Var, Var),
    Sub(Var, Var),
    AddRow { x: Var, row: Var },
    Scale { x: Var, c: T },
    MatMul { a: Var, b: Var, trans_b: bool },
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Attention { q: Var, k: Var, v: Var, layout: AttnLayout, probs: Vec<T> },
    AddGrouped { x: Var, vecs: Var, group: usize, first_only: bool },
    GatherRows { x: Var, rows: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<u32>, ignore: u32, probs: Vec<T>, count: usize },
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(usize),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients for every parameter that received one.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, param: usize) -> Option<&Tensor<T>> {
        self.grads.get(param).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor<T>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (i, g)))
    }

    /// Global L2 norm over all present gradients.
    pub fn global_norm(&self) -> T {
        self.iter().map(|(_, g)| g.sum_sq()).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_inplace(c);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.all_finite())
    }
}

pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

fn acc<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], v: Var, len: usize) -> &'a mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len]).as_mut_slice()
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::with_capacity(256), param_vars: vec![None; params.len()] }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    /// Constant leaf: never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Stop-gradient: same value as `x`, no path back to `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    pub fn embed(&mut self, table: Var, ids: &[u32]) -> Var {
        let tab = self.value(table);
        let d = tab.cols();
        let mut out = Tensor::zeros(ids.len(), d);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(tab.row(id as usize));
        }
        let rg = self.rg(&[table]);
        self.push(out, Op::Embed { table, ids: ids.to_vec() }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_inplace(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Adds a `[1, d]` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let mut out = self.value(x).clone();
        out.add_row_inplace(self.value(row).data());
        let rg = self.rg(&[x, row]);
        self.push(out, Op::AddRow { x, row }, rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let mut out = self.value(x).clone();
        out.scale_inplace(c);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale { x, c }, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul { a, b, trans_b: false }, rg)
    }

    /// `a @ b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul { a, b, trans_b: true }, rg)
    }

    /// `x @ w + bias`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, bias)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut out = Tensor::zeros(rows, cols);
        let mut mean = vec![T::zero(); rows];
        let mut rstd = vec![T::zero(); rows];
        kernels::layer_norm(
            xv.data(),
            self.value(gain).data(),
            self.value(bias).data(),
            cols,
            out.data_mut(),
            &mut mean,
            &mut rstd,
        );
        let rg = self.rg(&[x, gain, bias]);
        self.push(out, Op::LayerNorm { x, gain, bias, mean, rstd }, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| kernels::gelu(v)).collect();
        let out = Tensor::from_vec(xv.rows(), xv.cols(), data);
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttnLayout) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        assert_eq!(qv.rows(), layout.batch * layout.q_len);
        assert_eq!(kv.rows(), layout.batch * layout.k_len);
        let mut out = Tensor::zeros(qv.rows(), d);
        let mut probs = vec![T::zero(); layout.probs_len()];
        kernels::attention(qv.data(), kv.data(), vv.data(), d, &layout, out.data_mut(), &mut probs);
        let rg = self.rg(&[q, k, v]);
        self.push(out, Op::Attention { q, k, v, layout, probs }, rg)
    }

    /// Adds row `b` of `vecs` to rows `b*group .. (b+1)*group` of `x`, or only
    /// to row `b*group` when `first_only`.
    pub fn add_grouped(&mut self, x: Var, vecs: Var, group: usize, first_only: bool) -> Var {
        let mut out = self.value(x).clone();
        let vv = self.value(vecs);
        assert_eq!(out.rows(), vv.rows() * group);
        assert_eq!(out.cols(), vv.cols());
        for b in 0..vv.rows() {
            let span = if first_only { 1 } else { group };
            for t in 0..span {
                for (o, &s) in out.row_mut(b * group + t).iter_mut().zip(vv.row(b)) {
                    *o += s;
                }
            }
        }
        let rg = self.rg(&[x, vecs]);
        self.push(out, Op::AddGrouped { x, vecs, group, first_only }, rg)
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let out = self.value(x).gather_rows(rows);
        let rg = self.rg(&[x]);
        self.push(out, Op::GatherRows { x, rows: rows.to_vec() }, rg)
    }

    /// Mean token-level cross entropy over positions whose target is not
    /// `ignore`. Returns a `[1, 1]` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore: u32) -> Var {
        let lv = self.value(logits);
        let (rows, vocab) = lv.shape();
        assert_eq!(rows, targets.len());
        let mut probs = vec![T::zero(); rows * vocab];
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            let row = lv.row(r);
            let lse = kernels::log_sum_exp(row);
            total += lse - row[t as usize];
            for (p, &z) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
            count += 1;
        }
        let loss = if count == 0 { T::zero() } else { total / T::from_usize(count).unwrap() };
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy { logits, targets: targets.to_vec(), ignore, probs, count },
            rg,
        )
    }

    /// Back-propagates from the scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        let mut out: Vec<Option<Tensor<T>>> = vec![None; self.params.len()];

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let (rows, cols) = self.value(Var(idx)).shape();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out[*id] = Some(Tensor::from_vec(rows, cols, g)),
                Op::Embed { table, ids } => {
                    if self.requires_grad(*table) {
                        let d = cols;
                        let n = self.value(*table).data().len();
                        let dt = acc(&mut grads, *table, n);
                        for (i, &id) in ids.iter().enumerate() {
                            let base = id as usize * d;
                            for c in 0..d {
                                dt[base + c] += g[i * d + c];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.requires_grad(v) {
                            for (x, &y) in acc(&mut grads, v, g.len()).iter_mut().zip(&g) {
                                *x += y;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires_grad(*a) {
                        for (x, &y) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                            *x += y;
                        }
                    }
                    if self.requires_grad(*b) {
                        for (x, &y) in acc(&mut grads, *b, g.len()).iter_mut().zip(&g) {
                            *x -= y;
                        }
                    }
                }
                Op::AddRow { x, row } => {
                    if self.requires_grad(*x) {
                        for (a, &y) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                            *a += y;
                        }
                    }
                    if self.requires_grad(*row) {
                        let dr = acc(&mut grads, *row, cols);
                        for gr in g.chunks_exact(cols) {
                            for (a, &y) in dr.iter_mut().zip(gr) {
                                *a += y;
                            }
                        }
                    }
                }
                Op::Scale { x, c } => {
                    if self.requires_grad(*x) {
                        for (a, &y) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                            *a += y * *c;
                        }
                    }
                }
                Op::MatMul { a, b, trans_b } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let gv = MatRef::rm(&g, rows, cols);
                    if self.requires_grad(*a) {
                        let bview = if *trans_b { bv.view() } else { bv.view().t() };
                        let da = acc(&mut grads, *a, av.data().len());
                        T::gemm(T::one(), gv, bview, T::one(), MatMut::rm(da, av.rows(), av.cols()));
                    }
                    if self.requires_grad(*b) {
                        let db = acc(&mut grads, *b, bv.data().len());
                        if *trans_b {
                            // b is [cols, k]: db = g^T a
                            T::gemm(T::one(), gv.t(), av.view(), T::one(), MatMut::rm(db, bv.rows(), bv.cols()));
                        } else {
                            T::gemm(T::one(), av.view().t(), gv, T::one(), MatMut::rm(db, bv.rows(), bv.cols()));
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, mean, rstd } => {
                    let xv = self.value(*x).data();
                    let gv = self.value(*gain).data();
                    let mut dx = self.requires_grad(*x).then(|| vec![T::zero(); xv.len()]);
                    let mut dg = self.requires_grad(*gain).then(|| vec![T::zero(); cols]);
                    let mut db = self.requires_grad(*bias).then(|| vec![T::zero(); cols]);
                    kernels::layer_norm_backward(
                        xv,
                        gv,
                        mean,
                        rstd,
                        &g,
                        cols,
                        dx.as_deref_mut(),
                        dg.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    for (v, d) in [(*x, dx), (*gain, dg), (*bias, db)] {
                        if let Some(d) = d {
                            for (a, y) in acc(&mut grads, v, d.len()).iter_mut().zip(d) {
                                *a += y;
                            }
                        }
                    }
                }
                Op::Gelu(x) => {
                    if self.requires_grad(*x) {
                        let xv = self.value(*x).data();
                        let dx = acc(&mut grads, *x, g.len());
                        for ((a, &y), &xi) in dx.iter_mut().zip(&g).zip(xv) {
                            *a += y * kernels::gelu_grad(xi);
                        }
                    }
                }
                Op::Attention { q, k, v, layout, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let mut dq = self.requires_grad(*q).then(|| vec![T::zero(); qv.data().len()]);
                    let mut dk = self.requires_grad(*k).then(|| vec![T::zero(); kv.data().len()]);
                    let mut dv = self.requires_grad(*v).then(|| vec![T::zero(); vv.data().len()]);
                    kernels::attention_backward(
                        qv.data(),
                        kv.data(),
                        vv.data(),
                        probs,
                        &g,
                        cols,
                        layout,
                        dq.as_deref_mut(),
                        dk.as_deref_mut(),
                        dv.as_deref_mut(),
                    );
                    for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                        if let Some(d) = d {
                            for (a, y) in acc(&mut grads, var, d.len()).iter_mut().zip(d) {
                                *a += y;
                            }
                        }
                    }
                }
                Op::AddGrouped { x, vecs, group, first_only } => {
                    if self.requires_grad(*x) {
                        for (a, &y) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                            *a += y;
                        }
                    }
                    if self.requires_grad(*vecs) {
                        let nb = rows / group;
                        let dv = acc(&mut grads, *vecs, nb * cols);
                        let span = if *first_only { 1 } else { *group };
                        for b in 0..nb {
                            for t in 0..span {
                                let r = b * group + t;
                                for c in 0..cols {
                                    dv[b * cols + c] += g[r * cols + c];
                                }
                            }
                        }
                    }
                }
                Op::GatherRows { x, rows: idx_rows } => {
                    if self.requires_grad(*x) {
                        let n = self.value(*x).data().len();
                        let dx = acc(&mut grads, *x, n);
                        for (o, &r) in idx_rows.iter().enumerate() {
                            for c in 0..cols {
                                dx[r * cols + c] += g[o * cols + c];
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, ignore, probs, count } => {
                    if self.requires_grad(*logits) && *count > 0 {
                        let lv = self.value(*logits);
                        let vocab = lv.cols();
                        let scale = g[0] / T::from_usize(*count).unwrap();
                        let dl = acc(&mut grads, *logits, lv.data().len());
                        for (r, &t) in targets.iter().enumerate() {
                            if t == *ignore {
                                continue;
                            }
                            for c in 0..vocab {
                                let y = if c == t as usize { T::one() } else { T::zero() };
                                dl[r * vocab + c] += scale * (probs[r * vocab + c] - y);
                            }
                        }
                    }
                }
            }
        }
        Gradients { grads: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite-difference check of every parameter of `f`.
    fn check_grads(store: &mut ParamStore<f64>, f: &dyn Fn(&mut Tape<'_, f64>) -> Var, tol: f64) {
        let grads = {
            let mut tape = Tape::new(store);
            let root = f(&mut tape);
            tape.backward(root)
        };
        let h = 1e-6;
        for id in 0..store.len() {
            let n = store.get(id).data().len();
            for i in 0..n {
                let orig = store.get(id).data()[i];
                store.get_mut(id).data_mut()[i] = orig + h;
                let up = {
                    let mut tape = Tape::new(store);
                    let r = f(&mut tape);
                    tape.value(r).data()[0]
                };
                store.get_mut(id).data_mut()[i] = orig - h;
                let down = {
                    let mut tape = Tape::new(store);
                    let r = f(&mut tape);
                    tape.value(r).data()[0]
                };
                store.get_mut(id).data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.get(id).map(|g| g.data()[i]).unwrap_or(0.0);
                assert!((fd - an).abs() < tol * (1.0 + fd.abs()), "param {} [{i}]: fd {fd} vs analytic {an}", store.name(id));
            }
        }
    }

    #[test]
    fn attention_block_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::default();
        let emb = store.push("emb", Tensor::randn(7, 4, 0.8, &mut rng));
        let wq = store.push("wq", Tensor::randn(4, 4, 0.5, &mut rng));
        let wk = store.push("wk", Tensor::randn(4, 4, 0.5, &mut rng));
        let wv = store.push("wv", Tensor::randn(4, 4, 0.5, &mut rng));
        let g = store.push("g", Tensor::filled(1, 4, 1.0));
        let b = store.push("b", Tensor::randn(1, 4, 0.1, &mut rng));
        let sv = store.push("style", Tensor::randn(2, 4, 0.3, &mut rng));
        let f = move |tape: &mut Tape<'_, f64>| {
            let e = tape.param(emb);
            let x = tape.embed(e, &[1, 2, 3, 0, 4, 5]);
            let s = tape.param(sv);
            let x = tape.add_grouped(x, s, 3, false);
            let (gg, bb) = (tape.param(g), tape.param(b));
            let x = tape.layer_norm(x, gg, bb);
            let (q, k, v) = (tape.param(wq), tape.param(wk), tape.param(wv));
            let q = tape.matmul(x, q);
            let k = tape.matmul(x, k);
            let v = tape.matmul(x, v);
            let lay = AttnLayout { batch: 2, q_len: 3, k_len: 3, heads: 2, key_lens: vec![3, 2], causal: true };
            let a = tape.attention(q, k, v, lay);
            let a = tape.gelu(a);
            let cls = tape.gather_rows(a, &[0, 3]);
            let cls = tape.scale(cls, 0.5);
            let a = tape.add_grouped(a, cls, 3, true);
            let logits = tape.matmul_t(a, e);
            tape.cross_entropy(logits, &[2, 3, 6, 1, 5, 0], 0)
        };
        check_grads(&mut store, &f, 1e-6);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::default();
        let w = store.push("w", Tensor::<f64>::from_f64(1, 2, &[0.5, -1.0]));
        let mut tape = Tape::new(&store);
        let p = tape.param(w);
        let d = tape.detach(p);
        let s = tape.sub(p, d);
        let logits = tape.add(s, d);
        let loss = tape.cross_entropy(logits, &[1], 99);
        let grads = tape.backward(loss);
        // d(loss)/dw flows only through the undetached branch.
        let g = grads.get(w).unwrap();
        assert!(g.data()[0] > 0.0 && g.data()[1] < 0.0);
    }

    #[test]
    fn ignored_targets_contribute_nothing() {
        let store = ParamStore::<f64>::default();
        let mut tape = Tape::new(&store);
        let l = tape.constant(Tensor::from_f64(2, 3, &[0.0, 0.0, 0.0, 5.0, 1.0, 2.0]));
        let ce = tape.cross_entropy(l, &[1, 0], 0);
        assert!((tape.value(ce).data()[0] - 3f64.ln()).abs() < 1e-12);
    }
}
