use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::vocab::Vocab;
use crate::checkpoint::{restore, Checkpoint};
use crate::error::{Error, Result};
use crate::linalg::{axpy, log_sum_exp, Mat};
use crate::transformer::{project_rows, Stack, StackCache, StackConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub n_ctx: usize,
    pub mlp_hidden: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            hidden: 64,
            n_ctx: 64,
            mlp_hidden: 256,
        }
    }
}

impl LmConfig {
    fn stack(&self) -> StackConfig {
        StackConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            n_ctx: self.n_ctx,
            mlp_hidden: self.mlp_hidden,
            causal: true,
        }
    }
}

/// Decoder-only language model with an untied output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalLM {
    pub config: LmConfig,
    pub vocab: Vocab,
    pub tok_emb: Mat,
    pub body: Stack,
    pub head_w: Mat,
    pub head_b: Mat,
}

pub struct LmCache {
    body: StackCache,
    hidden: Mat,
    positions: Vec<usize>,
}

pub const CHECKPOINT_KIND: &str = "causal_lm";

impl CausalLM {
    pub fn new(vocab: Vocab, config: LmConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let body = Stack::init(config.stack(), &mut rng)?;
        let v = vocab.len();
        let h = config.hidden;
        Ok(Self {
            config,
            tok_emb: Mat::randn(v, h, 1.0 / (h as f64).sqrt(), &mut rng),
            head_w: Mat::randn(h, v, 1.0 / (h as f64).sqrt(), &mut rng),
            head_b: Mat::zeros(1, v),
            vocab,
            body,
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn n_ctx(&self) -> usize {
        self.config.n_ctx
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Row lookup into the embedding table. Positional information is added
    /// later, inside the forward pass.
    pub fn embed_tokens(&self, ids: &[usize]) -> Result<Mat> {
        let v = self.vocab.len();
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::TokenOutOfRange { id: bad, size: v });
        }
        Ok(self.tok_emb.select_rows(ids))
    }

    /// Logits for every position of an embedding sequence.
    pub fn forward_embeddings(&self, emb: &Mat) -> Result<Mat> {
        let positions: Vec<usize> = (0..emb.rows).collect();
        Ok(self.forward_at(emb, &positions)?.0)
    }

    pub fn next_token_logits(&self, emb: &Mat) -> Result<Vec<f64>> {
        if emb.rows == 0 {
            return Err(Error::Empty("embedding sequence".into()));
        }
        Ok(self.forward_at(emb, &[emb.rows - 1])?.0.data)
    }

    /// Logits at the requested positions only, plus the activations needed by
    /// [`CausalLM::backward`].
    pub fn forward_at(&self, emb: &Mat, positions: &[usize]) -> Result<(Mat, LmCache)> {
        let (hidden, body) = self.body.forward(emb)?;
        if let Some(&p) = positions.iter().find(|&&p| p >= emb.rows) {
            return Err(Error::Precondition(format!("position {p} beyond sequence")));
        }
        let logits = project_rows(&hidden, positions, &self.head_w, &self.head_b);
        Ok((
            logits,
            LmCache {
                body,
                hidden,
                positions: positions.to_vec(),
            },
        ))
    }

    /// Back-propagates logit gradients (one row per cached position) to the
    /// input embeddings. Parameter gradients go to `grads` when present.
    pub fn backward(&self, cache: &LmCache, d_logits: &Mat, mut grads: Option<&mut CausalLM>) -> Mat {
        let h = self.config.hidden;
        let mut d_hidden = Mat::zeros(cache.hidden.rows, h);
        for (k, &p) in cache.positions.iter().enumerate() {
            let dl = d_logits.row(k);
            let dh = d_hidden.row_mut(p);
            for (c, slot) in dh.iter_mut().enumerate() {
                *slot += crate::linalg::dot(self.head_w.row(c), dl);
            }
            if let Some(g) = grads.as_deref_mut() {
                let hrow = cache.hidden.row(p);
                for (c, &hv) in hrow.iter().enumerate() {
                    if hv != 0.0 {
                        axpy(hv, dl, g.head_w.row_mut(c));
                    }
                }
                axpy(1.0, dl, &mut g.head_b.data);
            }
        }
        self.body
            .backward(&cache.body, &d_hidden, grads.map(|g| &mut g.body))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            vocab: self.vocab.clone(),
            tok_emb: self.tok_emb.zeros_like(),
            body: self.body.zeros_like(),
            head_w: self.head_w.zeros_like(),
            head_b: self.head_b.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb)];
        out.extend(self.body.tensors("body."));
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = vec![("tok_emb".to_string(), &mut self.tok_emb)];
        out.extend(self.body.tensors_mut("body."));
        out.push(("head_w".into(), &mut self.head_w));
        out.push(("head_b".into(), &mut self.head_b));
        out
    }

    /// SHA-256 over every parameter byte, in tensor order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.tensors() {
            h.update(name.as_bytes());
            h.update(m.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "vocab": self.vocab.tokens(),
        });
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        for (name, m) in self.tensors() {
            ck.push(name, m);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: LmConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let tokens: Vec<String> = serde_json::from_value(ck.meta["vocab"].clone())?;
        let mut model = Self::new(Vocab::from_tokens(tokens), config, 0)?;
        restore(ck, model.tensors_mut())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Softmax cross-entropy for each logit row against its target id.
///
/// Returns the summed loss and `scale * (softmax - onehot)` per row.
pub fn cross_entropy_rows(logits: &Mat, targets: &[usize], scale: f64) -> (f64, Mat) {
    assert_eq!(logits.rows, targets.len());
    let mut grad = Mat::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        loss += lse - row[t];
        let g = grad.row_mut(r);
        for (gv, &lv) in g.iter_mut().zip(row) {
            *gv = scale * (lv - lse).exp();
        }
        g[t] -= scale;
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, matmul};

    fn micro() -> CausalLM {
        let vocab = Vocab::build(&["red green blue cyan magenta"]).unwrap();
        let cfg = LmConfig {
            layers: 1,
            heads: 1,
            hidden: 4,
            n_ctx: 8,
            mlp_hidden: 8,
        };
        CausalLM::new(vocab, cfg, 42).unwrap()
    }

    #[test]
    fn embed_is_row_lookup() {
        let m = micro();
        let e = m.embed_tokens(&[4, 3]).unwrap();
        assert_eq!(e.row(0), m.tok_emb.row(4));
        assert_eq!(e.row(1), m.tok_emb.row(3));
        assert_eq!(m.embed_tokens(&[]).unwrap().rows, 0);
        assert!(matches!(m.embed_tokens(&[99]), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn next_token_logits_is_last_row() {
        let m = micro();
        let e = m.embed_tokens(&[3, 4, 5]).unwrap();
        let all = m.forward_embeddings(&e).unwrap();
        assert_eq!(m.next_token_logits(&e).unwrap(), all.row(2));
    }

    #[test]
    fn forward_is_bit_identical_across_calls() {
        let m = micro();
        let e = m.embed_tokens(&[3, 4, 5]).unwrap();
        assert_eq!(m.forward_embeddings(&e).unwrap(), m.forward_embeddings(&e).unwrap());
    }

    #[test]
    fn too_long_sequence_rejected() {
        let m = micro();
        let e = Mat::zeros(9, 4);
        assert!(matches!(m.forward_embeddings(&e), Err(Error::ContextOverflow { .. })));
    }

    #[test]
    fn uniform_cross_entropy_is_log_vocab() {
        let logits = Mat::zeros(1, 7);
        let (loss, _) = cross_entropy_rows(&logits, &[3], 1.0);
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_parameters() {
        let m = micro();
        let back = CausalLM::from_checkpoint(&CausalLM::from_checkpoint(&m.to_checkpoint()).unwrap().to_checkpoint()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.checksum(), m.checksum());
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let m = micro();
        let ids = [3usize, 5, 4, 6];
        let targets = [5usize, 4, 6, 7];
        let loss = |m: &CausalLM| {
            let e = m.embed_tokens(&ids).unwrap();
            let (lg, _) = m.forward_at(&e, &[0, 1, 2, 3]).unwrap();
            cross_entropy_rows(&lg, &targets, 1.0).0
        };
        let e = m.embed_tokens(&ids).unwrap();
        let (lg, cache) = m.forward_at(&e, &[0, 1, 2, 3]).unwrap();
        let (_, dl) = cross_entropy_rows(&lg, &targets, 1.0);
        let mut g = m.zeros_like();
        let demb = m.backward(&cache, &dl, Some(&mut g));
        for (k, &id) in ids.iter().enumerate() {
            axpy(1.0, demb.row(k), g.tok_emb.row_mut(id));
        }
        let eps = 1e-5;
        let grads: Vec<Mat> = g.tensors().into_iter().map(|(_, m)| m.clone()).collect();
        for (ti, gm) in grads.iter().enumerate() {
            for i in (0..gm.len()).step_by(gm.len().div_ceil(5)) {
                let mut p = m.clone();
                p.tensors_mut()[ti].1.data[i] += eps;
                let mut q = m.clone();
                q.tensors_mut()[ti].1.data[i] -= eps;
                let fd = (loss(&p) - loss(&q)) / (2.0 * eps);
                assert!((fd - gm.data[i]).abs() <= 1e-7 + 1e-4 * fd.abs(), "tensor {ti}[{i}]: {fd} vs {}", gm.data[i]);
            }
        }
    }

    // Independent dense-algebra forward for a one-layer, one-head model.
    fn oracle_forward(m: &CausalLM, x: &Mat) -> Mat {
        let n = x.rows;
        let h = m.config.hidden;
        let b = &m.body.blocks[0];
        let ln = |x: &Mat, g: &Mat, bb: &Mat| {
            let mut y = Mat::zeros(x.rows, x.cols);
            for r in 0..x.rows {
                let mu: f64 = x.row(r).iter().sum::<f64>() / h as f64;
                let var: f64 = x.row(r).iter().map(|v| (v - mu).powi(2)).sum::<f64>() / h as f64;
                for c in 0..h {
                    y.set(r, c, (x.get(r, c) - mu) / (var + 1e-5).sqrt() * g.data[c] + bb.data[c]);
                }
            }
            y
        };
        let addb = |mut m: Mat, b: &Mat| {
            for r in 0..m.rows {
                for c in 0..m.cols {
                    m.data[r * m.cols + c] += b.data[c];
                }
            }
            m
        };
        let mut x0 = x.clone();
        for r in 0..n {
            for c in 0..h {
                x0.data[r * h + c] += m.body.pos.get(r, c);
            }
        }
        let a = ln(&x0, &b.ln1_g, &b.ln1_b);
        let qkv = addb(matmul(&a, &b.w_qkv), &b.b_qkv);
        let mut att = Mat::zeros(n, h);
        for i in 0..n {
            let q: Vec<f64> = (0..h).map(|c| qkv.get(i, c)).collect();
            let mut w: Vec<f64> = (0..=i)
                .map(|j| dot(&q, &(0..h).map(|c| qkv.get(j, h + c)).collect::<Vec<_>>()) / (h as f64).sqrt())
                .collect();
            let mx = w.iter().cloned().fold(f64::MIN, f64::max);
            let s: f64 = w.iter().map(|v| (v - mx).exp()).sum();
            w.iter_mut().for_each(|v| *v = (*v - mx).exp() / s);
            for (j, wj) in w.iter().enumerate() {
                for c in 0..h {
                    att.data[i * h + c] += wj * qkv.get(j, 2 * h + c);
                }
            }
        }
        let mut x1 = x0.clone();
        x1.add_assign(&addb(matmul(&att, &b.w_o), &b.b_o));
        let u = addb(matmul(&ln(&x1, &b.ln2_g, &b.ln2_b), &b.w_fc), &b.b_fc);
        let mut gact = u.clone();
        for v in gact.data.iter_mut() {
            let z = *v;
            *v = 0.5 * z * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh());
        }
        x1.add_assign(&addb(matmul(&gact, &b.w_proj), &b.b_proj));
        let hf = ln(&x1, &m.body.lnf_g, &m.body.lnf_b);
        addb(matmul(&hf, &m.head_w), &m.head_b)
    }

    #[test]
    fn micro_model_matches_dense_oracle() {
        let m = micro();
        let e = m.embed_tokens(&[3, 7, 4, 5, 6]).unwrap();
        let got = m.forward_embeddings(&e).unwrap();
        let want = oracle_forward(&m, &e);
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-12) + 1e-12, "{a} vs {b}");
        }
    }
}
