//! Tape-based reverse-mode differentiation over dense matrices.

use std::sync::Arc;

use rustc_hash::FxHashMap;

use super::params::ParamStore;
use super::tensor::{matmul_acc, matmul_at_b_acc, Real, Tensor};

/// Marks a gathered element that reads as zero (padding).
pub const GATHER_ZERO: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Gather(Var, Arc<Vec<u32>>),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    MaxPoolRows(Var, Vec<u32>),
    LogSoftmax(Var),
    RowSum(Var),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for later differentiation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: FxHashMap<usize, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: FxHashMap::default(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    #[inline]
    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient but is not backed by a parameter.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds parameter `id` of `store`; repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: usize) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let x = self.value(a);
        let value = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|v| f(*v)).collect(),
        };
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let value = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect(),
        };
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.rows, "matmul inner dimension mismatch");
        let mut out = Tensor::zeros(x.rows, y.cols);
        matmul_acc(&x.data, &y.data, &mut out.data, x.rows, x.cols, y.cols);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// Adds a `1×C` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!((1, x.cols), b.shape(), "bias shape mismatch");
        let mut out = x.clone();
        for row in out.data.chunks_exact_mut(x.cols) {
            for (o, bv) in row.iter_mut().zip(&b.data) {
                *o += *bv;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(out, Op::AddBias(a, bias), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |p, q| p * q)
    }

    /// Elementwise minimum; on ties the gradient goes to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Minimum(a, b), |p, q| if p <= q { p } else { q })
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (T::from_f64(scale), T::from_f64(shift));
        self.unary(a, Op::Affine(a, scale), |x| s * x + t)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Clamp to `[lo, hi]`; zero gradient where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(l).min(h))
    }

    /// Output element `i` (row-major, shape `rows×cols`) is element
    /// `index[i]` of `a` flattened, or zero for [`GATHER_ZERO`].
    pub fn gather(&mut self, a: Var, index: Arc<Vec<u32>>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index length mismatch");
        let x = &self.value(a).data;
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { T::zero() } else { x[i as usize] })
            .collect();
        let ng = self.ng(a);
        self.push(Tensor::from_vec(rows, cols, data), Op::Gather(a, index), ng)
    }

    /// Selects whole rows of `a`.
    pub fn gather_rows(&mut self, a: Var, rows: &[u32]) -> Var {
        let cols = self.value(a).cols;
        let index: Vec<u32> = rows
            .iter()
            .flat_map(|&r| (0..cols as u32).map(move |c| r * cols as u32 + c))
            .collect();
        self.gather(a, Arc::new(index), rows.len(), cols)
    }

    /// Picks one column per row: `out[r] = a[r, cols[r]]`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let width = self.value(a).cols;
        assert_eq!(cols.len(), self.value(a).rows);
        let index = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| (r * width + c) as u32)
            .collect();
        self.gather(a, Arc::new(index), cols.len(), 1)
    }

    /// Reinterprets row-major storage with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape size mismatch");
        let value = Tensor::from_vec(rows, cols, x.data.clone());
        let ng = self.ng(a);
        self.push(value, Op::Reshape(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + x.cols].copy_from_slice(x.row(r));
            }
            off += x.cols;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&x.data);
            rows += x.rows;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols);
        let mut out = Tensor::zeros(x.rows, len);
        for r in 0..x.rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&x.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows);
        let value = Tensor::from_vec(len, x.cols, x.data[start * x.cols..(start + len) * x.cols].to_vec());
        let ng = self.ng(a);
        self.push(value, Op::SliceRows(a, start), ng)
    }

    /// Column-wise max over consecutive groups of `group` rows. Ties resolve
    /// to the lowest row index, which alone receives the gradient.
    pub fn max_pool_rows(&mut self, a: Var, group: usize) -> Var {
        let x = self.value(a);
        assert!(group > 0 && x.rows % group == 0, "max_pool group must divide rows");
        let groups = x.rows / group;
        let cols = x.cols;
        let mut out = Tensor::zeros(groups, cols);
        let mut arg = vec![0u32; groups * cols];
        for g in 0..groups {
            let base = g * group;
            let orow = &mut out.data[g * cols..(g + 1) * cols];
            let arow = &mut arg[g * cols..(g + 1) * cols];
            orow.copy_from_slice(x.row(base));
            for (c, a) in arow.iter_mut().enumerate() {
                *a = base as u32;
                let _ = c;
            }
            for r in base + 1..base + group {
                for (c, v) in x.row(r).iter().enumerate() {
                    if *v > orow[c] {
                        orow[c] = *v;
                        arow[c] = r as u32;
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::MaxPoolRows(a, arg), ng)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for row in out.data.chunks_exact_mut(x.cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|v| (*v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.chunks_exact(x.cols).map(|r| r.iter().copied().sum()).collect();
        let value = Tensor::from_vec(x.rows, 1, data);
        let ng = self.ng(a);
        self.push(value, Op::RowSum(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Reverse pass from a `1×1` output. Returns gradients of every node
    /// that depends on a parameter or variable leaf.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut Tensor<T>)) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            let (r, c) = self.value(v).shape();
            *slot = Some(Tensor::zeros(r, c));
        }
        f(slot.as_mut().unwrap());
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| {
                    let wt = w.transpose();
                    matmul_acc(&g.data, &wt.data, &mut ga.data, g.rows, g.cols, x.cols);
                });
                self.acc(grads, *b, |gb| {
                    matmul_at_b_acc(&x.data, &g.data, &mut gb.data, x.rows, x.cols, g.cols);
                });
            }
            Op::AddBias(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| {
                    for row in g.data.chunks_exact(g.cols) {
                        for (o, v) in gb.data.iter_mut().zip(row) {
                            *o += *v;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| {
                    for (o, v) in gb.data.iter_mut().zip(&g.data) {
                        *o -= *v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| {
                    for ((o, gv), wv) in ga.data.iter_mut().zip(&g.data).zip(&w.data) {
                        *o += *gv * *wv;
                    }
                });
                self.acc(grads, *b, |gb| {
                    for ((o, gv), xv) in gb.data.iter_mut().zip(&g.data).zip(&x.data) {
                        *o += *gv * *xv;
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| {
                    for (k, o) in ga.data.iter_mut().enumerate() {
                        if x.data[k] <= w.data[k] {
                            *o += g.data[k];
                        }
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (k, o) in gb.data.iter_mut().enumerate() {
                        if x.data[k] > w.data[k] {
                            *o += g.data[k];
                        }
                    }
                });
            }
            Op::Affine(a, s) => {
                let s = T::from_f64(*s);
                self.acc(grads, *a, |ga| {
                    for (o, v) in ga.data.iter_mut().zip(&g.data) {
                        *o += s * *v;
                    }
                });
            }
            Op::Relu(a) => self.acc(grads, *a, |ga| {
                for ((o, v), yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                    if *yv > T::zero() {
                        *o += *v;
                    }
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |ga| {
                for ((o, v), yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                    *o += *v * *yv * (T::one() - *yv);
                }
            }),
            Op::Tanh(a) => self.acc(grads, *a, |ga| {
                for ((o, v), yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                    *o += *v * (T::one() - *yv * *yv);
                }
            }),
            Op::Exp(a) => self.acc(grads, *a, |ga| {
                for ((o, v), yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                    *o += *v * *yv;
                }
            }),
            Op::Square(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, |ga| {
                    let two = T::from_f64(2.0);
                    for ((o, v), xv) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                        *o += two * *v * *xv;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let (l, h) = (T::from_f64(*lo), T::from_f64(*hi));
                self.acc(grads, *a, |ga| {
                    for ((o, v), xv) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                        if *xv >= l && *xv <= h {
                            *o += *v;
                        }
                    }
                });
            }
            Op::Gather(a, index) => self.acc(grads, *a, |ga| {
                for (v, &k) in g.data.iter().zip(index.iter()) {
                    if k != GATHER_ZERO {
                        ga.data[k as usize] += *v;
                    }
                }
            }),
            Op::Reshape(a) => self.acc(grads, *a, |ga| {
                for (o, v) in ga.data.iter_mut().zip(&g.data) {
                    *o += *v;
                }
            }),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols;
                    self.acc(grads, *p, |gp| {
                        for r in 0..g.rows {
                            for (o, v) in gp.data[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(&g.row(r)[off..off + w])
                            {
                                *o += *v;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.acc(grads, *p, |gp| {
                        for (o, v) in gp.data.iter_mut().zip(&g.data[off..off + n]) {
                            *o += *v;
                        }
                    });
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                let w = g.cols;
                let full = self.value(*a).cols;
                self.acc(grads, *a, |ga| {
                    for r in 0..g.rows {
                        for (o, v) in ga.data[r * full + start..r * full + start + w]
                            .iter_mut()
                            .zip(g.row(r))
                        {
                            *o += *v;
                        }
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let off = start * g.cols;
                self.acc(grads, *a, |ga| {
                    for (o, v) in ga.data[off..off + g.len()].iter_mut().zip(&g.data) {
                        *o += *v;
                    }
                });
            }
            Op::MaxPoolRows(a, arg) => {
                let cols = g.cols;
                self.acc(grads, *a, |ga| {
                    for (k, v) in g.data.iter().enumerate() {
                        let c = k % cols;
                        ga.data[arg[k] as usize * cols + c] += *v;
                    }
                });
            }
            Op::LogSoftmax(a) => self.acc(grads, *a, |ga| {
                let cols = g.cols;
                for r in 0..g.rows {
                    let gs: T = g.row(r).iter().copied().sum();
                    for c in 0..cols {
                        let k = r * cols + c;
                        ga.data[k] += g.data[k] - y.data[k].exp() * gs;
                    }
                }
            }),
            Op::RowSum(a) => {
                let cols = self.value(*a).cols;
                self.acc(grads, *a, |ga| {
                    for (k, o) in ga.data.iter_mut().enumerate() {
                        *o += g.data[k / cols];
                    }
                });
            }
            Op::Sum(a) => {
                let s = g.data[0];
                self.acc(grads, *a, |ga| {
                    for o in ga.data.iter_mut() {
                        *o += s;
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    for (o, v) in dst.data.iter_mut().zip(&src.data) {
        *o += *v;
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, graph: &Graph<T>, store: &mut ParamStore<T>) {
        for (&id, &v) in &graph.params {
            if let Some(g) = self.get(v) {
                let dst = store.grad_mut(id);
                for (o, x) in dst.data.iter_mut().zip(&g.data) {
                    *o += *x;
                }
            }
        }
    }
}
