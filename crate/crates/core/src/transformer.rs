//! Pre-norm transformer stack with hand-written reverse-mode gradients.
//!
//! The same stack backs the causal language model (causal mask on) and the
//! bidirectional text encoder used by the ranker (mask off). Sequences are
//! processed one at a time; the stack never sees padding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, matmul, matmul_acc, matmul_nt_acc, matmul_tn_acc, Mat};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub n_ctx: usize,
    pub mlp_hidden: usize,
    pub causal: bool,
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.n_ctx == 0 || self.mlp_hidden == 0 {
            return Err(Error::InvalidConfig("transformer dims must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Mat,
    pub ln1_b: Mat,
    pub w_qkv: Mat,
    pub b_qkv: Mat,
    pub w_o: Mat,
    pub b_o: Mat,
    pub ln2_g: Mat,
    pub ln2_b: Mat,
    pub w_fc: Mat,
    pub b_fc: Mat,
    pub w_proj: Mat,
    pub b_proj: Mat,
}

impl Block {
    fn init<R: Rng>(cfg: &StackConfig, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let m = cfg.mlp_hidden;
        let std_in = 1.0 / (h as f64).sqrt();
        // residual-branch outputs are scaled down with depth
        let std_out = std_in / (2.0 * cfg.layers.max(1) as f64).sqrt();
        Self {
            ln1_g: Mat::filled(1, h, 1.0),
            ln1_b: Mat::zeros(1, h),
            w_qkv: Mat::randn(h, 3 * h, std_in, rng),
            b_qkv: Mat::zeros(1, 3 * h),
            w_o: Mat::randn(h, h, std_out, rng),
            b_o: Mat::zeros(1, h),
            ln2_g: Mat::filled(1, h, 1.0),
            ln2_b: Mat::zeros(1, h),
            w_fc: Mat::randn(h, m, std_in, rng),
            b_fc: Mat::zeros(1, m),
            w_proj: Mat::randn(m, h, std_out / ((m as f64 / h as f64).sqrt()), rng),
            b_proj: Mat::zeros(1, h),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            ln1_g: self.ln1_g.zeros_like(),
            ln1_b: self.ln1_b.zeros_like(),
            w_qkv: self.w_qkv.zeros_like(),
            b_qkv: self.b_qkv.zeros_like(),
            w_o: self.w_o.zeros_like(),
            b_o: self.b_o.zeros_like(),
            ln2_g: self.ln2_g.zeros_like(),
            ln2_b: self.ln2_b.zeros_like(),
            w_fc: self.w_fc.zeros_like(),
            b_fc: self.b_fc.zeros_like(),
            w_proj: self.w_proj.zeros_like(),
            b_proj: self.b_proj.zeros_like(),
        }
    }

    fn named(&self) -> [(&'static str, &Mat); 12] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("w_qkv", &self.w_qkv),
            ("b_qkv", &self.b_qkv),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w_fc", &self.w_fc),
            ("b_fc", &self.b_fc),
            ("w_proj", &self.w_proj),
            ("b_proj", &self.b_proj),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Mat); 12] {
        [
            ("ln1_g", &mut self.ln1_g),
            ("ln1_b", &mut self.ln1_b),
            ("w_qkv", &mut self.w_qkv),
            ("b_qkv", &mut self.b_qkv),
            ("w_o", &mut self.w_o),
            ("b_o", &mut self.b_o),
            ("ln2_g", &mut self.ln2_g),
            ("ln2_b", &mut self.ln2_b),
            ("w_fc", &mut self.w_fc),
            ("b_fc", &mut self.b_fc),
            ("w_proj", &mut self.w_proj),
            ("b_proj", &mut self.b_proj),
        ]
    }
}

/// Learned positional embeddings, `layers` blocks and a final layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub config: StackConfig,
    pub pos: Mat,
    pub blocks: Vec<Block>,
    pub lnf_g: Mat,
    pub lnf_b: Mat,
}

struct LnCache {
    xhat: Mat,
    rstd: Vec<f64>,
}

struct BlockCache {
    ln1: LnCache,
    a: Mat,
    qkv: Mat,
    probs: Vec<Mat>,
    concat: Mat,
    ln2: LnCache,
    b: Mat,
    u: Mat,
    g: Mat,
}

pub struct StackCache {
    blocks: Vec<BlockCache>,
    lnf: LnCache,
}

impl Stack {
    pub fn init<R: Rng>(config: StackConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let pos = Mat::randn(config.n_ctx, h, 0.02, rng);
        let blocks = (0..config.layers).map(|_| Block::init(&config, rng)).collect();
        Ok(Self {
            config,
            pos,
            blocks,
            lnf_g: Mat::filled(1, h, 1.0),
            lnf_b: Mat::zeros(1, h),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            pos: self.pos.zeros_like(),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            lnf_g: self.lnf_g.zeros_like(),
            lnf_b: self.lnf_b.zeros_like(),
        }
    }

    /// Parameters in a fixed, documented order with dotted names.
    pub fn tensors(&self, prefix: &str) -> Vec<(String, &Mat)> {
        let mut out = vec![(format!("{prefix}pos"), &self.pos)];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, m) in b.named() {
                out.push((format!("{prefix}blocks.{i}.{name}"), m));
            }
        }
        out.push((format!("{prefix}lnf_g"), &self.lnf_g));
        out.push((format!("{prefix}lnf_b"), &self.lnf_b));
        out
    }

    pub fn tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Mat)> {
        let mut out = vec![(format!("{prefix}pos"), &mut self.pos)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (name, m) in b.named_mut() {
                out.push((format!("{prefix}blocks.{i}.{name}"), m));
            }
        }
        out.push((format!("{prefix}lnf_g"), &mut self.lnf_g));
        out.push((format!("{prefix}lnf_b"), &mut self.lnf_b));
        out
    }

    pub fn forward(&self, input: &Mat) -> Result<(Mat, StackCache)> {
        let cfg = &self.config;
        let n = input.rows;
        if n == 0 {
            return Err(Error::Empty("input sequence".into()));
        }
        if n > cfg.n_ctx {
            return Err(Error::ContextOverflow { len: n, n_ctx: cfg.n_ctx });
        }
        if input.cols != cfg.hidden {
            return Err(Error::DimensionMismatch(format!(
                "input width {} vs hidden {}",
                input.cols, cfg.hidden
            )));
        }
        let mut x = input.clone();
        for i in 0..n {
            axpy(1.0, self.pos.row(i), x.row_mut(i));
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (next, cache) = block_forward(cfg, blk, &x);
            x = next;
            caches.push(cache);
        }
        let (y, lnf) = ln_forward(&x, &self.lnf_g, &self.lnf_b);
        Ok((y, StackCache { blocks: caches, lnf }))
    }

    /// Propagates `d_out` back to the input embeddings. Parameter gradients
    /// are accumulated into `grads` when given.
    pub fn backward(&self, cache: &StackCache, d_out: &Mat, mut grads: Option<&mut Stack>) -> Mat {
        let cfg = &self.config;
        let mut dx = ln_backward(
            d_out,
            &cache.lnf,
            &self.lnf_g,
            grads.as_deref_mut().map(|g| (&mut g.lnf_g, &mut g.lnf_b)),
        );
        for (li, blk) in self.blocks.iter().enumerate().rev() {
            let gblk = grads.as_deref_mut().map(|g| &mut g.blocks[li]);
            dx = block_backward(cfg, blk, &cache.blocks[li], &dx, gblk);
        }
        if let Some(g) = grads {
            for i in 0..dx.rows {
                axpy(1.0, dx.row(i), g.pos.row_mut(i));
            }
        }
        dx
    }
}

fn ln_forward(x: &Mat, g: &Mat, b: &Mat) -> (Mat, LnCache) {
    let h = x.cols;
    let mut y = Mat::zeros(x.rows, h);
    let mut xhat = Mat::zeros(x.rows, h);
    let mut rstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for c in 0..h {
            xh[c] = (row[c] - mean) * rs;
        }
        let yr = &mut y.data[r * h..(r + 1) * h];
        for c in 0..h {
            yr[c] = xh[c] * g.data[c] + b.data[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn ln_backward(dy: &Mat, cache: &LnCache, g: &Mat, grads: Option<(&mut Mat, &mut Mat)>) -> Mat {
    let h = dy.cols;
    let mut dx = Mat::zeros(dy.rows, h);
    if let Some((dg, db)) = grads {
        for r in 0..dy.rows {
            let dyr = dy.row(r);
            let xh = cache.xhat.row(r);
            for c in 0..h {
                dg.data[c] += dyr[c] * xh[c];
                db.data[c] += dyr[c];
            }
        }
    }
    let mut dxhat = vec![0.0; h];
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..h {
            dxhat[c] = dyr[c] * g.data[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / h as f64;
        let mean_dx = dot(&dxhat, xh) / h as f64;
        let rs = cache.rstd[r];
        let out = dx.row_mut(r);
        for c in 0..h {
            out[c] = rs * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn block_forward(cfg: &StackConfig, blk: &Block, x: &Mat) -> (Mat, BlockCache) {
    let n = x.rows;
    let h = cfg.hidden;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let (a, ln1) = ln_forward(x, &blk.ln1_g, &blk.ln1_b);
    let mut qkv = matmul(&a, &blk.w_qkv);
    qkv.add_row_vector(&blk.b_qkv);

    let mut concat = Mat::zeros(n, h);
    let mut probs = Vec::with_capacity(cfg.heads);
    for hd in 0..cfg.heads {
        let qo = hd * dh;
        let ko = h + hd * dh;
        let vo = 2 * h + hd * dh;
        let mut p = Mat::zeros(n, n);
        for i in 0..n {
            let lim = if cfg.causal { i + 1 } else { n };
            let qi = &qkv.row(i)[qo..qo + dh];
            let prow = &mut p.data[i * n..i * n + lim];
            for (j, pv) in prow.iter_mut().enumerate() {
                *pv = dot(qi, &qkv.row(j)[ko..ko + dh]) * scale;
            }
            crate::linalg::softmax_in_place(prow);
            let out = &mut concat.data[i * h + qo..i * h + qo + dh];
            for j in 0..lim {
                axpy(p.data[i * n + j], &qkv.row(j)[vo..vo + dh], out);
            }
        }
        probs.push(p);
    }
    let mut attn = matmul(&concat, &blk.w_o);
    attn.add_row_vector(&blk.b_o);
    let mut x_mid = x.clone();
    x_mid.add_assign(&attn);

    let (b, ln2) = ln_forward(&x_mid, &blk.ln2_g, &blk.ln2_b);
    let mut u = matmul(&b, &blk.w_fc);
    u.add_row_vector(&blk.b_fc);
    let mut g = u.clone();
    g.data.iter_mut().for_each(|v| *v = gelu(*v));
    let mut mlp = matmul(&g, &blk.w_proj);
    mlp.add_row_vector(&blk.b_proj);
    let mut out = x_mid;
    out.add_assign(&mlp);

    (
        out,
        BlockCache {
            ln1,
            a,
            qkv,
            probs,
            concat,
            ln2,
            b,
            u,
            g,
        },
    )
}

fn block_backward(
    cfg: &StackConfig,
    blk: &Block,
    c: &BlockCache,
    d_out: &Mat,
    mut grads: Option<&mut Block>,
) -> Mat {
    let n = d_out.rows;
    let h = cfg.hidden;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // MLP branch
    let mut dg = Mat::zeros(n, cfg.mlp_hidden);
    matmul_nt_acc(d_out, &blk.w_proj, &mut dg);
    if let Some(gr) = grads.as_deref_mut() {
        matmul_tn_acc(&c.g, d_out, &mut gr.w_proj);
        d_out.sum_rows_into(&mut gr.b_proj);
    }
    let mut du = dg;
    for (d, &uv) in du.data.iter_mut().zip(&c.u.data) {
        *d *= gelu_grad(uv);
    }
    let mut db = Mat::zeros(n, h);
    matmul_nt_acc(&du, &blk.w_fc, &mut db);
    if let Some(gr) = grads.as_deref_mut() {
        matmul_tn_acc(&c.b, &du, &mut gr.w_fc);
        du.sum_rows_into(&mut gr.b_fc);
    }
    let mut dx_mid = ln_backward(
        &db,
        &c.ln2,
        &blk.ln2_g,
        grads.as_deref_mut().map(|g| (&mut g.ln2_g, &mut g.ln2_b)),
    );
    dx_mid.add_assign(d_out);

    // attention branch
    let mut dconcat = Mat::zeros(n, h);
    matmul_nt_acc(&dx_mid, &blk.w_o, &mut dconcat);
    if let Some(gr) = grads.as_deref_mut() {
        matmul_tn_acc(&c.concat, &dx_mid, &mut gr.w_o);
        dx_mid.sum_rows_into(&mut gr.b_o);
    }
    let mut dqkv = Mat::zeros(n, 3 * h);
    let mut dp = vec![0.0; n];
    for hd in 0..cfg.heads {
        let qo = hd * dh;
        let ko = h + hd * dh;
        let vo = 2 * h + hd * dh;
        let p = &c.probs[hd];
        for i in 0..n {
            let lim = if cfg.causal { i + 1 } else { n };
            let dout_i = &dconcat.row(i)[qo..qo + dh];
            let mut weighted = 0.0;
            for j in 0..lim {
                let pij = p.data[i * n + j];
                dp[j] = dot(dout_i, &c.qkv.row(j)[vo..vo + dh]);
                weighted += pij * dp[j];
                let dv = &mut dqkv.data[j * 3 * h + vo..j * 3 * h + vo + dh];
                axpy(pij, dout_i, dv);
            }
            for j in 0..lim {
                let ds = p.data[i * n + j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                // dq_i += ds * k_j ; dk_j += ds * q_i
                let kj = &c.qkv.row(j)[ko..ko + dh];
                let qi = &c.qkv.row(i)[qo..qo + dh];
                axpy(ds, kj, &mut dqkv.data[i * 3 * h + qo..i * 3 * h + qo + dh]);
                axpy(ds, qi, &mut dqkv.data[j * 3 * h + ko..j * 3 * h + ko + dh]);
            }
        }
    }
    let mut da = Mat::zeros(n, h);
    matmul_nt_acc(&dqkv, &blk.w_qkv, &mut da);
    if let Some(gr) = grads.as_deref_mut() {
        matmul_tn_acc(&c.a, &dqkv, &mut gr.w_qkv);
        dqkv.sum_rows_into(&mut gr.b_qkv);
    }
    let mut dx = ln_backward(
        &da,
        &c.ln1,
        &blk.ln1_g,
        grads.map(|g| (&mut g.ln1_g, &mut g.ln1_b)),
    );
    dx.add_assign(&dx_mid);
    dx
}

/// Column-wise mean of the rows; zero vector for an empty matrix.
pub fn mean_pool(x: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; x.cols];
    if x.rows == 0 {
        return out;
    }
    for r in 0..x.rows {
        axpy(1.0, x.row(r), &mut out);
    }
    let inv = 1.0 / x.rows as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Small two-layer perceptron `y = tanh(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

pub struct MlpCache {
    input: Mat,
    hidden: Mat,
}

impl Mlp {
    pub fn init<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w1: Mat::randn(input, hidden, 1.0 / (input as f64).sqrt(), rng),
            b1: Mat::zeros(1, hidden),
            w2: Mat::randn(hidden, output, 1.0 / (hidden as f64).sqrt(), rng),
            b2: Mat::zeros(1, output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: self.w1.zeros_like(),
            b1: self.b1.zeros_like(),
            w2: self.w2.zeros_like(),
            b2: self.b2.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols
    }

    pub fn tensors(&self, prefix: &str) -> Vec<(String, &Mat)> {
        vec![
            (format!("{prefix}w1"), &self.w1),
            (format!("{prefix}b1"), &self.b1),
            (format!("{prefix}w2"), &self.w2),
            (format!("{prefix}b2"), &self.b2),
        ]
    }

    pub fn tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Mat)> {
        vec![
            (format!("{prefix}w1"), &mut self.w1),
            (format!("{prefix}b1"), &mut self.b1),
            (format!("{prefix}w2"), &mut self.w2),
            (format!("{prefix}b2"), &mut self.b2),
        ]
    }

    /// Applies the MLP to each row of `x`.
    pub fn forward(&self, x: &Mat) -> (Mat, MlpCache) {
        let mut hidden = matmul(x, &self.w1);
        hidden.add_row_vector(&self.b1);
        hidden.data.iter_mut().for_each(|v| *v = v.tanh());
        let mut y = matmul(&hidden, &self.w2);
        y.add_row_vector(&self.b2);
        (
            y,
            MlpCache {
                input: x.clone(),
                hidden,
            },
        )
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let m = Mat::from_vec(1, x.len(), x.to_vec());
        self.forward(&m).0.data
    }

    pub fn backward(&self, cache: &MlpCache, dy: &Mat, grads: Option<&mut Mlp>) -> Mat {
        let mut dh = Mat::zeros(dy.rows, self.w2.rows);
        matmul_nt_acc(dy, &self.w2, &mut dh);
        for (d, &hv) in dh.data.iter_mut().zip(&cache.hidden.data) {
            *d *= 1.0 - hv * hv;
        }
        let mut dx = Mat::zeros(dy.rows, self.w1.rows);
        matmul_nt_acc(&dh, &self.w1, &mut dx);
        if let Some(g) = grads {
            matmul_tn_acc(&cache.hidden, dy, &mut g.w2);
            dy.sum_rows_into(&mut g.b2);
            matmul_tn_acc(&cache.input, &dh, &mut g.w1);
            dh.sum_rows_into(&mut g.b1);
        }
        dx
    }
}

/// Output projection helper: `logits = x W + b` restricted to chosen rows.
pub fn project_rows(x: &Mat, rows: &[usize], w: &Mat, b: &Mat) -> Mat {
    let sel = x.select_rows(rows);
    let mut out = Mat::zeros(rows.len(), w.cols);
    matmul_acc(&sel, w, &mut out);
    out.add_row_vector(b);
    out
}
