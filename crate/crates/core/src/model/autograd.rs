//! A small reverse-mode autodiff tape over dense `f64` matrices.
//!
//! Only the operations the tiny backbone needs are provided. A [`Graph`] is
//! built per forward pass and borrows parameter values from a
//! [`ParamStore`]; `backward` accumulates parameter gradients into a
//! [`Gradients`] buffer.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// `out += a · b`
fn matmul_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    debug_assert_eq!(a.cols, b.rows);
    let n = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out += a · bᵀ`
fn matmul_t_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    debug_assert_eq!(a.cols, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            let dot: f64 = a_row.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            out.data[i * b.rows + j] += dot;
        }
    }
}

/// `out += aᵀ · b`
fn t_matmul_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    debug_assert_eq!(a.rows, b.rows);
    let n = b.cols;
    for k in 0..a.rows {
        let b_row = b.row(k);
        for i in 0..a.cols {
            let aki = a.data[k * a.cols + i];
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aki * bv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    /// Whether weight decay applies (false for biases, norms and embeddings of markers).
    decay: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.decay.push(decay);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|m| m.data.iter().all(|v| v.is_finite()))
    }
}

/// Per-parameter gradient buffers, allocated lazily.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    fn slot(&mut self, id: ParamId, rows: usize, cols: usize) -> &mut Matrix {
        self.grads[id.0].get_or_insert_with(|| Matrix::zeros(rows, cols))
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for m in self.grads.iter_mut().flatten() {
            for v in &mut m.data {
                *v *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|m| m.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|m| m.data.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Matrix),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param,
    /// Output row `i` is row `sources[i].1` of parameter `sources[i].0`.
    Gather(Vec<(ParamId, usize)>),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Matrix>,
    },
    SelectRows(Var, Vec<usize>),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.store.get(*id),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn gather(&mut self, sources: Vec<(ParamId, usize)>) -> Var {
        assert!(!sources.is_empty());
        let cols = self.store.get(sources[0].0).cols;
        let mut out = Matrix::zeros(sources.len(), cols);
        for (i, &(p, r)) in sources.iter().enumerate() {
            let src = self.store.get(p);
            assert_eq!(src.cols, cols, "gather width mismatch");
            out.row_mut(i).copy_from_slice(src.row(r));
        }
        self.push(out, Op::Gather(sources))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols, bm.rows, "matmul shape");
        let mut out = Matrix::zeros(am.rows, bm.cols);
        matmul_acc(am, bm, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols, bm.cols, "matmul_t shape");
        let mut out = Matrix::zeros(am.rows, bm.rows);
        matmul_t_acc(am, bm, &mut out);
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert!(out.same_shape(self.value(b)), "add shape");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, out.cols), "add_row shape");
        for r in 0..out.rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xm = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let n = xm.cols;
        assert_eq!((g.rows, g.cols), (1, n));
        assert_eq!((b.rows, b.cols), (1, n));
        let mut xhat = Matrix::zeros(xm.rows, n);
        let mut inv_std = Vec::with_capacity(xm.rows);
        let mut out = Matrix::zeros(xm.rows, n);
        for r in 0..xm.rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (c, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.data[r * n + c] = h;
                out.data[r * n + c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            let t = (GELU_C * (*v + 0.044715 * v.powi(3))).tanh();
            *v = 0.5 * *v * (1.0 + t);
        }
        self.push(out, Op::Gelu(x))
    }

    /// Inverted dropout with a precomputed keep mask (entries 0 or 1/(1-p)).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(mask.len(), out.data.len());
        for (o, m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    /// Multi-head scaled dot-product self-attention over pre-projected `q`, `k`, `v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (qm.rows, qm.cols);
        assert!(km.rows == n && vm.rows == n && km.cols == d && vm.cols == d);
        assert!(heads > 0 && d % heads == 0, "hidden size must divide into heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * dh;
            let mut p = Matrix::zeros(n, n);
            for i in 0..n {
                let qi = &qm.row(i)[off..off + dh];
                for j in 0..n {
                    let kj = &km.row(j)[off..off + dh];
                    p.data[i * n + j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                let row = p.row_mut(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in row.iter_mut() {
                    *s /= sum;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let pij = p.data[i * n + j];
                    let vj = &vm.row(j)[off..off + dh];
                    let oi = &mut out.data[i * d + off..i * d + off + dh];
                    for (o, vv) in oi.iter_mut().zip(vj) {
                        *o += pij * vv;
                    }
                }
            }
            probs.push(p);
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let xm = self.value(x);
        let mut out = Matrix::zeros(rows.len(), xm.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(xm.row(r));
        }
        self.push(out, Op::SelectRows(x, rows))
    }

    /// Back-propagates `seed` (the gradient of the objective w.r.t. `output`)
    /// and adds parameter gradients into `grads`.
    pub fn backward(&self, output: Var, seed: Matrix, grads: &mut Gradients) {
        assert!(self.value(output).same_shape(&seed), "seed shape");
        let mut node_grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        node_grads.resize_with(self.nodes.len(), || None);
        node_grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = node_grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    let Value::Param(id) = node.value else {
                        unreachable!()
                    };
                    grads.slot(id, g.rows, g.cols).add_assign(&g);
                }
                Op::Gather(sources) => {
                    for (i, &(p, r)) in sources.iter().enumerate() {
                        let src = self.store.get(p);
                        let slot = grads.slot(p, src.rows, src.cols);
                        for (s, gv) in slot.row_mut(r).iter_mut().zip(g.row(i)) {
                            *s += gv;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut node_grads, *a, am);
                    matmul_t_acc(&g, bm, ga);
                    let gb = acc(&mut node_grads, *b, bm);
                    t_matmul_acc(am, &g, gb);
                }
                Op::MatMulT(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut node_grads, *a, am);
                    matmul_acc(&g, bm, ga);
                    let gb = acc(&mut node_grads, *b, bm);
                    t_matmul_acc(&g, am, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut node_grads, *a, &g).add_assign(&g);
                    acc(&mut node_grads, *b, &g).add_assign(&g);
                }
                Op::AddRow(a, bias) => {
                    acc(&mut node_grads, *a, &g).add_assign(&g);
                    let gb = acc(&mut node_grads, *bias, self.value(*bias));
                    for r in 0..g.rows {
                        for (s, gv) in gb.data.iter_mut().zip(g.row(r)) {
                            *s += gv;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let n = g.cols;
                    let gm = self.value(*gain).data.clone();
                    {
                        let gg = acc(&mut node_grads, *gain, self.value(*gain));
                        for r in 0..g.rows {
                            for c in 0..n {
                                gg.data[c] += g.data[r * n + c] * xhat.data[r * n + c];
                            }
                        }
                    }
                    {
                        let gb = acc(&mut node_grads, *bias, self.value(*bias));
                        for r in 0..g.rows {
                            for (s, gv) in gb.data.iter_mut().zip(g.row(r)) {
                                *s += gv;
                            }
                        }
                    }
                    let gx = acc(&mut node_grads, *x, self.value(*x));
                    for (r, is) in inv_std.iter().enumerate() {
                        let dxhat: Vec<f64> = (0..n).map(|c| g.data[r * n + c] * gm[c]).collect();
                        let xh = xhat.row(r);
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for c in 0..n {
                            gx.data[r * n + c] += is * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xm = self.value(*x);
                    let gx = acc(&mut node_grads, *x, xm);
                    for ((s, &xv), gv) in gx.data.iter_mut().zip(&xm.data).zip(&g.data) {
                        let u = GELU_C * (xv + 0.044715 * xv.powi(3));
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * xv * xv);
                        let d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du;
                        *s += gv * d;
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = acc(&mut node_grads, *x, &g);
                    for ((s, gv), m) in gx.data.iter_mut().zip(&g.data).zip(mask) {
                        *s += gv * m;
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let (n, d) = (qm.rows, qm.cols);
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Matrix::zeros(n, d);
                    let mut gk = Matrix::zeros(n, d);
                    let mut gv = Matrix::zeros(n, d);
                    for (h, p) in probs.iter().enumerate() {
                        let off = h * dh;
                        // dP[i][j] = dO_i · V_j
                        let mut dp = Matrix::zeros(n, n);
                        for i in 0..n {
                            let go = &g.row(i)[off..off + dh];
                            for j in 0..n {
                                let vj = &vm.row(j)[off..off + dh];
                                dp.data[i * n + j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                                // dV_j += P[i][j] dO_i
                                let pij = p.data[i * n + j];
                                let gvj = &mut gv.data[j * d + off..j * d + off + dh];
                                for (s, gov) in gvj.iter_mut().zip(go) {
                                    *s += pij * gov;
                                }
                            }
                        }
                        for i in 0..n {
                            let pr = p.row(i);
                            let dpr = &dp.data[i * n..(i + 1) * n];
                            let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                let ds = pr[j] * (dpr[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    gq.data[i * d + off + c] += ds * km.data[j * d + off + c];
                                    gk.data[j * d + off + c] += ds * qm.data[i * d + off + c];
                                }
                            }
                        }
                    }
                    acc(&mut node_grads, *q, &gq).add_assign(&gq);
                    acc(&mut node_grads, *k, &gk).add_assign(&gk);
                    acc(&mut node_grads, *v, &gv).add_assign(&gv);
                }
                Op::SelectRows(x, rows) => {
                    let gx = acc(&mut node_grads, *x, self.value(*x));
                    for (i, &r) in rows.iter().enumerate() {
                        for (s, gv) in gx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *s += gv;
                        }
                    }
                }
            }
        }
    }
}

fn acc<'a>(grads: &'a mut [Option<Matrix>], v: Var, like: &Matrix) -> &'a mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(like.rows, like.cols))
}
