use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::{Real, Tensor};

/// `rows×cols` matrix with orthonormal rows or columns (whichever is
/// fewer), scaled by `gain`.
pub fn orthogonal<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    let (n, m) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(n, m, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    let data = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| T::from_f64(gain * q[(i, j)]))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

/// He-style uniform init, bound `sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Real, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..fan_in * fan_out).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::from_vec(fan_in, fan_out, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Orthogonal,
    KaimingUniform,
}

/// Affine map `x·W + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = match init {
            Init::Orthogonal => orthogonal(fan_in, fan_out, gain, rng),
            Init::KaimingUniform => kaiming_uniform(fan_in, fan_out, rng),
        };
        Linear {
            w: store.add(format!("{name}.w"), w),
            b: store.add(format!("{name}.b"), Tensor::zeros(1, fan_out)),
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let h = g.matmul(x, w);
        g.add_bias(h, b)
    }
}

/// Gated recurrent unit with gate order (reset, update, candidate).
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_ih = orthogonal(input, 3 * hidden, 1.0, rng);
        let mut w_hh = Tensor::zeros(hidden, 3 * hidden);
        for gate in 0..3 {
            let block: Tensor<T> = orthogonal(hidden, hidden, 1.0, rng);
            for r in 0..hidden {
                w_hh.data[r * 3 * hidden + gate * hidden..r * 3 * hidden + (gate + 1) * hidden]
                    .copy_from_slice(block.row(r));
            }
        }
        Gru {
            w_ih: store.add(format!("{name}.w_ih"), w_ih),
            w_hh: store.add(format!("{name}.w_hh"), w_hh),
            b_ih: store.add(format!("{name}.b_ih"), Tensor::zeros(1, 3 * hidden)),
            b_hh: store.add(format!("{name}.b_hh"), Tensor::zeros(1, 3 * hidden)),
            input,
            hidden,
        }
    }

    /// Input projection `x·W_ih + b_ih`, usable for many steps at once.
    pub fn project_input<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w_ih);
        let b = g.param(store, self.b_ih);
        let h = g.matmul(x, w);
        g.add_bias(h, b)
    }

    /// One recurrence step from a projected input `xp` (`B×3H`) and state `h` (`B×H`).
    pub fn step<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, xp: Var, h: Var) -> Var {
        let n = self.hidden;
        let w = g.param(store, self.w_hh);
        let b = g.param(store, self.b_hh);
        let hw = g.matmul(h, w);
        let hp = g.add_bias(hw, b);
        let xr = g.slice_cols(xp, 0, n);
        let xz = g.slice_cols(xp, n, n);
        let xn = g.slice_cols(xp, 2 * n, n);
        let hr = g.slice_cols(hp, 0, n);
        let hz = g.slice_cols(hp, n, n);
        let hn = g.slice_cols(hp, 2 * n, n);
        let r_pre = g.add(xr, hr);
        let r = g.sigmoid(r_pre);
        let z_pre = g.add(xz, hz);
        let z = g.sigmoid(z_pre);
        let rh = g.mul(r, hn);
        let n_pre = g.add(xn, rh);
        let cand = g.tanh(n_pre);
        // h' = n + z·(h − n)
        let diff = g.sub(h, cand);
        let zd = g.mul(z, diff);
        g.add(cand, zd)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, h: Var) -> Var {
        let xp = self.project_input(g, store, x);
        self.step(g, store, xp, h)
    }
}

/// Strided 2D convolution over row-major `H×W×C` samples via im2col.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub lin: Linear,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_c: usize,
    col_index: Arc<Vec<u32>>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        (in_h, in_w, in_c): (usize, usize, usize),
        kernel: usize,
        stride: usize,
        out_c: usize,
        rng: &mut R,
    ) -> Self {
        assert!(in_h >= kernel && in_w >= kernel, "input smaller than the kernel");
        let lin = Linear::new(store, name, kernel * kernel * in_c, out_c, Init::Orthogonal, 2f64.sqrt(), rng);
        let mut c = Conv2d {
            lin,
            in_h,
            in_w,
            in_c,
            kernel,
            stride,
            out_c,
            col_index: Arc::new(Vec::new()),
        };
        let (oh, ow) = c.out_hw();
        let mut idx = Vec::with_capacity(oh * ow * kernel * kernel * in_c);
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        for ch in 0..in_c {
                            let (y, x) = (oy * stride + ky, ox * stride + kx);
                            idx.push(((y * in_w + x) * in_c + ch) as u32);
                        }
                    }
                }
            }
        }
        c.col_index = Arc::new(idx);
        c
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.in_h - self.kernel) / self.stride + 1,
            (self.in_w - self.kernel) / self.stride + 1,
        )
    }

    pub fn out_len(&self) -> usize {
        let (h, w) = self.out_hw();
        h * w * self.out_c
    }

    /// `x: B×(H·W·C)` → `B×(OH·OW·OC)`, no activation.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let batch = g.shape(x).0;
        let in_len = self.in_h * self.in_w * self.in_c;
        assert_eq!(g.shape(x).1, in_len, "conv input size mismatch");
        let per = self.col_index.len();
        let index: Vec<u32> = (0..batch)
            .flat_map(|b| self.col_index.iter().map(move |&i| i + (b * in_len) as u32))
            .collect();
        let (oh, ow) = self.out_hw();
        let k = self.kernel * self.kernel * self.in_c;
        debug_assert_eq!(per, oh * ow * k);
        let cols = g.gather(x, Arc::new(index), batch * oh * ow, k);
        let y = self.lin.forward(g, store, cols);
        g.reshape(y, batch, self.out_len())
    }
}
