//! Transformer denoiser with step embedding and cross-attention to a
//! trainable description encoder.

mod text;

pub use text::{split_words, TextBatch, TextVocab, TEXT_PAD_ID, TEXT_UNK_ID};

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, Tensor, Var};

const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub text_vocab_size: usize,
    /// Token sequence length `n`.
    pub seq_len: usize,
    /// Token embedding width `d`.
    pub emb_dim: usize,
    /// Transformer width `d2`.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Description embedding width `d1`.
    pub text_dim: usize,
    /// Maximum description length `m_max`.
    pub text_len: usize,
    /// Largest diffusion step the model is conditioned on.
    pub total_steps: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.text_vocab_size,
            self.seq_len,
            self.emb_dim,
            self.hidden,
            self.layers,
            self.heads,
            self.text_dim,
            self.text_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) || !self.hidden.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "hidden width {} must be even and divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

fn specs(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, h, d1) = (c.emb_dim, c.hidden, c.text_dim);
    let fan = |n: usize| Init::Normal(1.0 / (n as f64).sqrt());
    let mut s: Vec<(String, Vec<usize>, Init)> = vec![
        ("emb".into(), vec![c.vocab_size, d], Init::Normal(1.0)),
        ("in.w".into(), vec![d, h], fan(d)),
        ("in.b".into(), vec![h], Init::Zeros),
        ("pos".into(), vec![c.seq_len, h], Init::Normal(0.1)),
        ("time.w1".into(), vec![h, h], fan(h)),
        ("time.b1".into(), vec![h], Init::Zeros),
        ("time.w2".into(), vec![h, h], fan(h)),
        ("time.b2".into(), vec![h], Init::Zeros),
        ("text.word".into(), vec![c.text_vocab_size, d1], Init::Normal(1.0)),
        ("text.pos".into(), vec![c.text_len, d1], Init::Normal(0.1)),
        ("text.w1".into(), vec![d1, h], fan(d1)),
        ("text.b1".into(), vec![h], Init::Zeros),
        ("text.w2".into(), vec![h, h], fan(h)),
        ("text.b2".into(), vec![h], Init::Zeros),
    ];
    for l in 0..c.layers {
        let mut add = |name: &str, shape: Vec<usize>, init| {
            s.push((format!("layer{l}.{name}"), shape, init));
        };
        for ln in ["ln1", "ln2", "ln3"] {
            add(&format!("{ln}.g"), vec![h], Init::Ones);
            add(&format!("{ln}.b"), vec![h], Init::Zeros);
        }
        for p in ["q", "k", "v", "o"] {
            add(&format!("sa.{p}.w"), vec![h, h], fan(h));
            add(&format!("sa.{p}.b"), vec![h], Init::Zeros);
        }
        for p in ["q", "k", "v", "o"] {
            add(&format!("ca.{p}.w"), vec![h, h], fan(h));
        }
        add("ca.o.b", vec![h], Init::Zeros);
        add("mlp.w1", vec![h, 4 * h], fan(h));
        add("mlp.b1", vec![4 * h], Init::Zeros);
        add("mlp.w2", vec![4 * h, h], fan(4 * h));
        add("mlp.b2", vec![h], Init::Zeros);
    }
    s.extend([
        ("lnf.g".into(), vec![h], Init::Ones),
        ("lnf.b".into(), vec![h], Init::Zeros),
        ("out.w".into(), vec![h, d], fan(h)),
        ("out.b".into(), vec![d], Init::Zeros),
    ]);
    s
}

/// Names of the description encoder's parameters.
pub fn is_text_encoder_param(name: &str) -> bool {
    name.starts_with("text.")
}

/// Named trainable tensors of one denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F: Float> Parameters<F> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let named = specs(cfg)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::Normal(std) => Tensor::randn(&shape, std, &mut rng),
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::full(&shape, F::one()),
                };
                (name, t)
            })
            .collect();
        Ok(Self::from_named_unchecked(named))
    }

    fn from_named_unchecked(named: Vec<(String, Tensor<F>)>) -> Self {
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        let mut index = HashMap::with_capacity(named.len());
        for (i, (n, t)) in named.into_iter().enumerate() {
            index.insert(n.clone(), i);
            names.push(n);
            tensors.push(t);
        }
        Parameters {
            names,
            tensors,
            index,
        }
    }

    /// Validates names and shapes against `cfg`; the offending tensor is
    /// named in any error.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        cfg.validate()?;
        let expected = specs(cfg);
        let mut given: HashMap<String, Tensor<F>> = named.into_iter().collect();
        let mut out = Vec::with_capacity(expected.len());
        for (name, shape, _) in expected {
            let t = given
                .remove(&name)
                .ok_or_else(|| Error::ShapeMismatch(format!("tensor {name} missing")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {name} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
            out.push((name, t));
        }
        if let Some(extra) = given.keys().min() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {extra} is not part of this architecture"
            )));
        }
        Ok(Self::from_named_unchecked(out))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn id(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        &self.tensors[self.id(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<F> {
        let i = self.id(name);
        &mut self.tensors[i]
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<G: Float>(&self) -> Parameters<G> {
        Parameters {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Sinusoidal encoding of a diffusion step.
pub fn step_encoding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let freq = (-(10_000f64).ln() * j as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[j] = a.sin();
        out[half + j] = a.cos();
    }
    out
}

/// Forward pass builder over a parameter set.
pub struct Denoiser<'a, F> {
    pub cfg: &'a ModelConfig,
    pub params: &'a Parameters<F>,
}

impl<'a, F: Float> Denoiser<'a, F> {
    pub fn new(cfg: &'a ModelConfig, params: &'a Parameters<F>) -> Self {
        Denoiser { cfg, params }
    }

    pub fn param(&self, g: &mut Graph<F>, name: &str) -> Var {
        let id = self.params.id(name);
        g.param(id, &self.params.tensors[id])
    }

    fn linear(&self, g: &mut Graph<F>, x: Var, w: &str, b: Option<&str>) -> Result<Var> {
        let wv = self.param(g, w);
        let y = g.matmul(x, wv)?;
        match b {
            Some(b) => {
                let bv = self.param(g, b);
                g.add(y, bv)
            }
            None => Ok(y),
        }
    }

    fn layer_norm(&self, g: &mut Graph<F>, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(g, &format!("{prefix}.g"));
        let beta = self.param(g, &format!("{prefix}.b"));
        g.layer_norm(x, gamma, beta)
    }

    /// Multi-head scaled dot-product attention over `[B, nq, h]` queries and
    /// `[B, nk, h]` keys/values, with an optional additive `[B, nq, nk]` bias.
    pub fn attention(
        &self,
        g: &mut Graph<F>,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
    ) -> Result<Var> {
        let h = self.cfg.hidden;
        let dh = h / self.cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for i in 0..self.cfg.heads {
            let qh = g.slice(q, 2, i * dh, (i + 1) * dh)?;
            let kh = g.slice(k, 2, i * dh, (i + 1) * dh)?;
            let vh = g.slice(v, 2, i * dh, (i + 1) * dh)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let mut s = g.scale(s, scale);
            if let Some(b) = bias {
                s = g.add(s, b)?;
            }
            let a = g.softmax(s, 2)?;
            heads.push(g.matmul(a, vh)?);
        }
        if heads.len() == 1 {
            Ok(heads[0])
        } else {
            g.concat(&heads, 2)
        }
    }

    pub fn self_attention_block(&self, g: &mut Graph<F>, z: Var, l: usize) -> Result<Var> {
        let p = |s: &str| format!("layer{l}.{s}");
        let x = self.layer_norm(g, z, &p("ln1"))?;
        let q = self.linear(g, x, &p("sa.q.w"), Some(&p("sa.q.b")))?;
        let k = self.linear(g, x, &p("sa.k.w"), Some(&p("sa.k.b")))?;
        let v = self.linear(g, x, &p("sa.v.w"), Some(&p("sa.v.b")))?;
        let a = self.attention(g, q, k, v, None)?;
        let o = self.linear(g, a, &p("sa.o.w"), Some(&p("sa.o.b")))?;
        g.add(z, o)
    }

    /// `text` is the projected description `[B, m, h]`, `bias` its mask.
    pub fn cross_attention_block(
        &self,
        g: &mut Graph<F>,
        z: Var,
        text: Var,
        bias: Var,
        l: usize,
    ) -> Result<Var> {
        let p = |s: &str| format!("layer{l}.{s}");
        let x = self.layer_norm(g, z, &p("ln2"))?;
        let q = self.linear(g, x, &p("ca.q.w"), None)?;
        let k = self.linear(g, text, &p("ca.k.w"), None)?;
        let v = self.linear(g, text, &p("ca.v.w"), None)?;
        let a = self.attention(g, q, k, v, Some(bias))?;
        let o = self.linear(g, a, &p("ca.o.w"), Some(&p("ca.o.b")))?;
        g.add(z, o)
    }

    pub fn mlp_block(&self, g: &mut Graph<F>, z: Var, l: usize) -> Result<Var> {
        let p = |s: &str| format!("layer{l}.{s}");
        let x = self.layer_norm(g, z, &p("ln3"))?;
        let hdn = self.linear(g, x, &p("mlp.w1"), Some(&p("mlp.b1")))?;
        let hdn = g.gelu(hdn);
        let o = self.linear(g, hdn, &p("mlp.w2"), Some(&p("mlp.b2")))?;
        g.add(z, o)
    }

    /// Word plus position embeddings, `[B, m, d1]`.
    pub fn encode_text(&self, g: &mut Graph<F>, text: &TextBatch) -> Result<Var> {
        if text.m > self.cfg.text_len {
            return Err(Error::ShapeMismatch(format!(
                "description length {} exceeds {}",
                text.m, self.cfg.text_len
            )));
        }
        let word = self.param(g, "text.word");
        let pos = self.param(g, "text.pos");
        let c = g.embedding(word, &text.ids, &[text.batch(), text.m])?;
        let p = g.slice(pos, 0, 0, text.m)?;
        g.add(c, p)
    }

    /// Projection of encoded text into the denoiser width, `[B, m, h]`.
    pub fn project_text(&self, g: &mut Graph<F>, c: Var) -> Result<Var> {
        let x = self.linear(g, c, "text.w1", Some("text.b1"))?;
        let x = g.gelu(x);
        self.linear(g, x, "text.w2", Some("text.b2"))
    }

    pub fn step_embedding(&self, g: &mut Graph<F>, steps: &[usize]) -> Result<Var> {
        let h = self.cfg.hidden;
        let mut enc = Vec::with_capacity(steps.len() * h);
        for &t in steps {
            if t > self.cfg.total_steps {
                return Err(Error::StepOutOfRange {
                    t,
                    max: self.cfg.total_steps,
                });
            }
            enc.extend(step_encoding(t, h).into_iter().map(F::from_f64_lossy));
        }
        let e = g.constant(Tensor::new(&[steps.len(), h], enc)?);
        let x = self.linear(g, e, "time.w1", Some("time.b1"))?;
        let x = g.gelu(x);
        self.linear(g, x, "time.w2", Some("time.b2"))
    }

    /// Predicts `x_0` `[B, n, d]` from `x_t` `[B, n, d]`. Cross-attention is
    /// skipped entirely when `text` is `None`.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        x: Var,
        steps: &[usize],
        text: Option<&TextBatch>,
    ) -> Result<Var> {
        let c = self.cfg;
        let b = steps.len();
        let want = [b, c.seq_len, c.emb_dim];
        if g.shape(x) != want {
            return Err(Error::ShapeMismatch(format!(
                "denoiser input {:?}, expected {want:?}",
                g.shape(x)
            )));
        }
        if let Some(t) = text {
            if t.batch() != b {
                return Err(Error::ShapeMismatch(format!(
                    "text batch {} vs state batch {b}",
                    t.batch()
                )));
            }
        }
        let z = self.linear(g, x, "in.w", Some("in.b"))?;
        let pos = self.param(g, "pos");
        let z = g.add(z, pos)?;
        let de = self.step_embedding(g, steps)?;
        let de = g.reshape(de, &[b, 1, c.hidden])?;
        let de = g.concat(&vec![de; c.seq_len], 1)?;
        let mut z = g.add(z, de)?;

        let cond = match text {
            Some(t) => {
                let enc = self.encode_text(g, t)?;
                let proj = self.project_text(g, enc)?;
                let mut bias = Vec::with_capacity(b * c.seq_len * t.m);
                let zero = F::zero();
                let neg = F::from_f64_lossy(MASK_BIAS);
                for row in t.mask.chunks(t.m) {
                    for _ in 0..c.seq_len {
                        bias.extend(row.iter().map(|&keep| if keep { zero } else { neg }));
                    }
                }
                let bias = g.constant(Tensor::new(&[b, c.seq_len, t.m], bias)?);
                Some((proj, bias))
            }
            None => None,
        };
        for l in 0..c.layers {
            z = self.self_attention_block(g, z, l)?;
            if let Some((proj, bias)) = cond {
                z = self.cross_attention_block(g, z, proj, bias, l)?;
            }
            z = self.mlp_block(g, z, l)?;
        }
        let z = self.layer_norm(g, z, "lnf")?;
        self.linear(g, z, "out.w", Some("out.b"))
    }

    /// Inference-only prediction for a batch of `[n, d]` states.
    pub fn predict(
        &self,
        xs: &[&Tensor<F>],
        steps: &[usize],
        text: Option<&TextBatch>,
    ) -> Result<Vec<Tensor<F>>> {
        let c = self.cfg;
        let mut data = Vec::with_capacity(xs.len() * c.seq_len * c.emb_dim);
        for x in xs {
            data.extend_from_slice(x.data());
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[xs.len(), c.seq_len, c.emb_dim], data)?);
        let y = self.forward(&mut g, x, steps, text)?;
        let per = c.seq_len * c.emb_dim;
        g.value(y)
            .data()
            .chunks(per)
            .map(|ch| Tensor::new(&[c.seq_len, c.emb_dim], ch.to_vec()))
            .collect()
    }
}
