//! Noise schedules, the forward process, posterior sampling and rounding.
//!
//! States are `[n, d]` tensors: one row per sequence position.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokenizer::TokenSequence;

const SQRT_OFFSET: f64 = 1e-4;
const BETA_MIN: f64 = 1e-8;
const BETA_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Sqrt,
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(ScheduleKind::Sqrt),
            "linear" => Ok(ScheduleKind::Linear),
            other => Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        }
    }
}

/// A (possibly respaced) noise schedule. Index 0 is the clean state; index
/// `i ≥ 1` corresponds to original timestep `steps[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    total: usize,
    steps: Vec<usize>,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Mean and variance coefficients of `q(x_{i-1} | x_i, x_0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub c0: f64,
    pub ct: f64,
    pub var: f64,
}

impl NoiseSchedule {
    pub fn build(total: usize, kind: ScheduleKind) -> Result<Self> {
        if total < 2 {
            return Err(Error::InvalidT(total));
        }
        let tf = total as f64;
        let raw_beta: Vec<f64> = match kind {
            ScheduleKind::Sqrt => {
                let ab = |t: usize| 1.0 - ((t as f64 - 1.0) / tf + SQRT_OFFSET).sqrt();
                (1..=total)
                    .map(|t| {
                        let prev = if t == 1 { 1.0 } else { ab(t - 1) };
                        1.0 - ab(t) / prev
                    })
                    .collect()
            }
            ScheduleKind::Linear => {
                let scale = 1000.0 / tf;
                let (lo, hi) = (scale * 1e-4, scale * 0.02);
                (0..total)
                    .map(|i| lo + (hi - lo) * i as f64 / (tf - 1.0))
                    .collect()
            }
        };
        let mut beta = vec![0.0];
        let mut alpha_bar = vec![1.0];
        for b in raw_beta {
            let b = b.clamp(BETA_MIN, BETA_MAX);
            beta.push(b);
            alpha_bar.push(alpha_bar.last().unwrap() * (1.0 - b));
        }
        Ok(NoiseSchedule {
            kind,
            total,
            steps: (0..=total).collect(),
            beta,
            alpha_bar,
        })
    }

    /// Schedule with explicit cumulative products; `alpha_bar[0]` must be 1
    /// and the sequence strictly decreasing within `(0, 1]`.
    pub fn from_alpha_bars(alpha_bar: &[f64]) -> Result<Self> {
        let ok = alpha_bar.len() >= 3
            && alpha_bar[0] == 1.0
            && alpha_bar.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0);
        if !ok {
            return Err(Error::Config(
                "alpha_bar must start at 1 and decrease strictly within (0, 1]".into(),
            ));
        }
        let mut beta = vec![0.0];
        beta.extend(alpha_bar.windows(2).map(|w| 1.0 - w[1] / w[0]));
        Ok(NoiseSchedule {
            kind: ScheduleKind::Sqrt,
            total: alpha_bar.len() - 1,
            steps: (0..alpha_bar.len()).collect(),
            beta,
            alpha_bar: alpha_bar.to_vec(),
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Length `T` of the schedule this one was derived from.
    pub fn total_steps(&self) -> usize {
        self.total
    }

    /// Number of non-clean indices.
    pub fn len(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Original timestep of index `i`.
    pub fn timestep(&self, i: usize) -> usize {
        self.steps[i]
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.steps
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.beta[i]
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.len() {
            return Err(Error::StepOutOfRange {
                t: i,
                max: self.len(),
            });
        }
        Ok(())
    }

    /// `S` indices spread uniformly over `1..=len`, both ends included.
    pub fn respace(&self, s: usize) -> Result<Self> {
        if s < 2 || s > self.len() {
            return Err(Error::InvalidS { s, len: self.len() });
        }
        self.respace_range(1, self.len(), s)
    }

    /// `S` indices spread uniformly over `lo..=hi`. With `S = 1` only `hi`
    /// is kept.
    pub fn respace_range(&self, lo: usize, hi: usize, s: usize) -> Result<Self> {
        let width = hi.saturating_sub(lo) + 1;
        if lo == 0 || hi > self.len() || lo > hi || s == 0 || s > width {
            return Err(Error::InvalidS { s, len: width });
        }
        let picks: Vec<usize> = if s == 1 {
            vec![hi]
        } else {
            (0..s)
                .map(|i| {
                    (lo as f64 + (hi - lo) as f64 * i as f64 / (s - 1) as f64).round() as usize
                })
                .collect()
        };
        if picks.len() == self.len() {
            return Ok(self.clone());
        }
        let mut steps = vec![0];
        let mut alpha_bar = vec![1.0];
        let mut beta = vec![0.0];
        for &p in &picks {
            let ab = self.alpha_bar[p];
            beta.push(1.0 - ab / alpha_bar.last().unwrap());
            alpha_bar.push(ab);
            steps.push(self.steps[p]);
        }
        Ok(NoiseSchedule {
            kind: self.kind,
            total: self.total,
            steps,
            beta,
            alpha_bar,
        })
    }

    /// Index whose original timestep is `t`, if present.
    pub fn index_of(&self, t: usize) -> Option<usize> {
        self.steps.binary_search(&t).ok()
    }

    pub fn posterior(&self, i: usize) -> Result<Posterior> {
        self.check(i)?;
        let (ab, ab_prev, b) = (self.alpha_bar[i], self.alpha_bar[i - 1], self.beta[i]);
        let denom = 1.0 - ab;
        Ok(Posterior {
            c0: ab_prev.sqrt() * b / denom,
            ct: (1.0 - b).sqrt() * (1.0 - ab_prev) / denom,
            var: (1.0 - ab_prev) * b / denom,
        })
    }

    /// CSV rows `t,beta,alpha_bar`, one per index including the clean state.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,beta,alpha_bar")?;
        for i in 0..self.steps.len() {
            writeln!(w, "{},{},{}", self.steps[i], self.beta[i], self.alpha_bar[i])?;
        }
        Ok(())
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Rows of the `[V, d]` table for each token of `seq`.
pub fn lookup(seq: &[u32], emb: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (v, d) = (emb.shape()[0], emb.shape()[1]);
    let mut out = Vec::with_capacity(seq.len() * d);
    for &id in seq {
        let id = id as usize;
        if id >= v {
            return Err(Error::IdOutOfRange { id, size: v });
        }
        out.extend_from_slice(&emb.data()[id * d..(id + 1) * d]);
    }
    Tensor::new(&[seq.len(), d], out)
}

/// `x_0 = Emb(seq) + σ_0 ε`.
pub fn embed_sequence<R: Rng + ?Sized>(
    seq: &TokenSequence,
    emb: &Tensor<f32>,
    sigma0: f64,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let mut x = lookup(seq.ids(), emb)?;
    if sigma0 != 0.0 {
        for v in x.data_mut() {
            *v += (sigma0 * normal(rng)) as f32;
        }
    }
    Ok(x)
}

/// `x_i = sqrt(ᾱ_i) x_0 + sqrt(1 − ᾱ_i) ε`.
pub fn q_sample<R: Rng + ?Sized>(
    x0: &Tensor<f32>,
    i: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    sched.check(i)?;
    let ab = sched.alpha_bar(i);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut x = x0.clone();
    for v in x.data_mut() {
        *v = (a * f64::from(*v) + b * normal(rng)) as f32;
    }
    Ok(x)
}

/// Draws `x_{i-1} ~ N(c0 x̂_0 + ct x_i, v I)`. At `i = 1` this returns
/// `x̂_0` unchanged.
pub fn posterior_step<R: Rng + ?Sized>(
    xt: &Tensor<f32>,
    x0hat: &Tensor<f32>,
    i: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    if xt.shape() != x0hat.shape() {
        return Err(Error::ShapeMismatch(format!(
            "posterior_step: {:?} vs {:?}",
            xt.shape(),
            x0hat.shape()
        )));
    }
    let p = sched.posterior(i)?;
    if i == 1 {
        return Ok(x0hat.clone());
    }
    let sd = p.var.sqrt();
    let mut out = xt.clone();
    for (o, &h) in out.data_mut().iter_mut().zip(x0hat.data()) {
        *o = (p.c0 * f64::from(h) + p.ct * f64::from(*o) + sd * normal(rng)) as f32;
    }
    Ok(out)
}

/// Nearest-embedding rounding of an `[n, d]` state.
#[derive(Debug, Clone)]
pub struct Rounding {
    /// Per-position argmax, before layout coercion.
    pub raw: Vec<u32>,
    pub seq: TokenSequence,
    /// `[n, V]` row-wise log-softmax of `−‖x_i − e_v‖²`.
    pub log_probs: Vec<f64>,
    pub vocab_size: usize,
}

pub fn round_to_tokens(x0: &Tensor<f32>, emb: &Tensor<f32>) -> Result<Rounding> {
    let (v, d) = (emb.shape()[0], emb.shape()[1]);
    if x0.shape().len() != 2 || x0.shape()[1] != d {
        return Err(Error::ShapeMismatch(format!(
            "round_to_tokens: state {:?} vs embedding {:?}",
            x0.shape(),
            emb.shape()
        )));
    }
    let n = x0.shape()[0];
    let mut raw = Vec::with_capacity(n);
    let mut log_probs = vec![0.0; n * v];
    for i in 0..n {
        let row = &x0.data()[i * d..(i + 1) * d];
        let logits = &mut log_probs[i * v..(i + 1) * v];
        for (w, l) in logits.iter_mut().enumerate() {
            let e = &emb.data()[w * d..(w + 1) * d];
            *l = -row
                .iter()
                .zip(e)
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum::<f64>();
        }
        // Lowest id wins ties: only a strictly larger logit replaces `best`.
        let mut best = 0;
        for w in 1..v {
            if logits[w] > logits[best] {
                best = w;
            }
        }
        raw.push(best as u32);
        let mx = logits[best];
        let lse = mx + logits.iter().map(|&l| (l - mx).exp()).sum::<f64>().ln();
        for l in logits.iter_mut() {
            *l -= lse;
        }
    }
    let seq = TokenSequence::coerce(&raw);
    Ok(Rounding {
        raw,
        seq,
        log_probs,
        vocab_size: v,
    })
}

/// Replaces each row by its nearest embedding row.
pub fn clamp_to_embeddings(x: &Tensor<f32>, emb: &Tensor<f32>) -> Result<Tensor<f32>> {
    let r = round_to_tokens(x, emb)?;
    lookup(&r.raw, emb)
}
