//! Training objectives and the optimization loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::model::{is_text_encoder_param, Denoiser, ModelConfig, Parameters, TextBatch};
use crate::molecule::{corrupt, CorruptParams};
use crate::parallel::{self, ExecMode};
use crate::tensor::{AdamConfig, AdamState, Float, Graph, Tensor, Var};
use crate::tokenizer::{TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    One,
    Two,
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" | "1" => Ok(Phase::One),
            "two" | "2" => Ok(Phase::Two),
            other => Err(Error::Config(format!("unknown phase {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    /// Diffusion length `T`.
    pub total_steps: usize,
    /// Steps below `tau` train on corrupted input in phase two.
    pub tau: usize,
    pub schedule: ScheduleKind,
    /// Standard deviation of the embedding noise `σ_0`.
    pub sigma0: f64,
    pub corrupt: CorruptParams,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Fixed number of gradient shards per batch.
    pub shards: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
    /// Train a single model for both phases with objective two.
    pub joint: bool,
    pub freeze_text: bool,
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase: Phase::One,
            total_steps: 2000,
            tau: 400,
            schedule: ScheduleKind::Sqrt,
            sigma0: 0.1,
            corrupt: CorruptParams::default(),
            adam: AdamConfig {
                lr: 1e-4,
                warmup: 500,
                ..AdamConfig::default()
            },
            batch_size: 64,
            max_steps: 100_000,
            seed: 0,
            shards: 4,
            log_every: 50,
            checkpoint_every: 0,
            joint: false,
            freeze_text: false,
            exec: ExecMode::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.tau >= self.total_steps {
            return Err(Error::Config(format!(
                "tau must satisfy 0 < tau < T, got tau={} T={}",
                self.tau, self.total_steps
            )));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.shards == 0 {
            return Err(Error::Config("batch size and shard count must be positive".into()));
        }
        if self.sigma0.is_nan() || self.sigma0 <= 0.0 {
            return Err(Error::Config("sigma0 must be positive".into()));
        }
        Ok(())
    }

    /// Objective actually optimized.
    pub fn objective(&self) -> Phase {
        if self.joint {
            Phase::Two
        } else {
            self.phase
        }
    }
}

/// A tokenized molecule with its encoded description.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub seq: TokenSequence,
    pub text: Vec<u32>,
}

/// Random quantities of one batch slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub example: usize,
    pub t: usize,
    /// Embedding noise, `n·d` standard normals.
    pub eps0: Vec<f64>,
    /// Forward-process noise, `n·d` standard normals.
    pub eps: Vec<f64>,
    /// Corrupted input, present only on the phase-two `1 ≤ t < τ` branch.
    pub corrupted: Option<TokenSequence>,
}

/// Per-branch loss sums of a set of draws.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BranchSums {
    /// Contribution to the batch loss.
    pub loss: f64,
    pub mse_sum: f64,
    pub mse_n: usize,
    pub nll_sum: f64,
    pub nll_n: usize,
    pub corrupt_sum: f64,
    pub corrupt_n: usize,
}

impl BranchSums {
    fn merge(&mut self, o: &BranchSums) {
        self.loss += o.loss;
        self.mse_sum += o.mse_sum;
        self.mse_n += o.mse_n;
        self.nll_sum += o.nll_sum;
        self.nll_n += o.nll_n;
        self.corrupt_sum += o.corrupt_sum;
        self.corrupt_n += o.corrupt_n;
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent stream seed for a tuple of coordinates.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed, |h, &p| splitmix(h ^ splitmix(p)))
}

const STREAM_MAIN: u64 = 0;
const STREAM_CORRUPT: u64 = 1;
const STREAM_ORDER: u64 = 2;

#[allow(clippy::too_many_arguments)]
pub fn draw_slot(
    seed: u64,
    step: usize,
    slot: usize,
    example: usize,
    data: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    dims: usize,
) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, step as u64, slot as u64, STREAM_MAIN]));
    let t = rng.random_range(0..=cfg.total_steps);
    let eps0 = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
    let eps = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
    let corrupted = (cfg.objective() == Phase::Two && t >= 1 && t < cfg.tau).then(|| {
        let mut crng = ChaCha8Rng::seed_from_u64(derive_seed(&[
            seed,
            step as u64,
            slot as u64,
            STREAM_CORRUPT,
        ]));
        corrupt(&data[example].seq, vocab, &cfg.corrupt, &mut crng)
    });
    Draw {
        example,
        t,
        eps0,
        eps,
        corrupted,
    }
}

/// Records the batch loss of `draws` on `g`. Each branch contributes its
/// mean per-example loss weighted by its share of `batch_total`.
///
/// The diffusion branches embed inputs and targets with `frozen_emb`, a
/// constant copy of the embedding table, so the table is trained by the
/// rounding loss alone.
#[allow(clippy::too_many_arguments)]
pub fn objective_graph<F: Float>(
    g: &mut Graph<F>,
    model: &ModelConfig,
    params: &Parameters<F>,
    frozen_emb: &Tensor<F>,
    data: &[Example],
    draws: &[Draw],
    sched: &NoiseSchedule,
    sigma0: f64,
    batch_total: usize,
) -> Result<(Var, BranchSums)> {
    let den = Denoiser::new(model, params);
    let (n, d) = (model.seq_len, model.emb_dim);
    let mut sums = BranchSums::default();
    let mut total: Option<Var> = None;
    let mut accumulate = |g: &mut Graph<F>, loss: Var, count: usize| -> Result<f64> {
        let w = count as f64 / batch_total as f64;
        let scaled = g.scale(loss, w);
        total = Some(match total {
            Some(t) => g.add(t, scaled)?,
            None => scaled,
        });
        Ok(g.value(loss).item().to_f64().unwrap_or(f64::NAN))
    };

    let nll: Vec<&Draw> = draws.iter().filter(|dr| dr.t == 0).collect();
    if !nll.is_empty() {
        let mut ids = Vec::with_capacity(nll.len() * n);
        let mut noise = Vec::with_capacity(nll.len() * n * d);
        let s = F::from_f64_lossy(sigma0);
        for dr in &nll {
            ids.extend_from_slice(data[dr.example].seq.ids());
            noise.extend(dr.eps0.iter().map(|&e| s * F::from_f64_lossy(e)));
        }
        let table = den.param(g, "emb");
        let e = g.embedding(table, &ids, &[nll.len(), n])?;
        let noise = g.constant(Tensor::new(&[nll.len(), n, d], noise)?);
        let x0 = g.add(e, noise)?;
        let logits = g.neg_sq_dist(x0, table)?;
        let loss = g.cross_entropy(logits, &ids)?;
        let v = accumulate(g, loss, nll.len())?;
        sums.nll_sum += v * nll.len() as f64;
        sums.nll_n += nll.len();
    }

    for corrupted_branch in [false, true] {
        let group: Vec<&Draw> = draws
            .iter()
            .filter(|dr| dr.t > 0 && dr.corrupted.is_some() == corrupted_branch)
            .collect();
        if group.is_empty() {
            continue;
        }
        let table = g.constant(frozen_emb.clone());
        let s = F::from_f64_lossy(sigma0);
        let mut xts = Vec::with_capacity(group.len());
        let mut targets = Vec::with_capacity(group.len());
        let mut steps = Vec::with_capacity(group.len());
        for dr in &group {
            let noise: Vec<F> = dr.eps0.iter().map(|&e| s * F::from_f64_lossy(e)).collect();
            let noise = g.constant(Tensor::new(&[1, n, d], noise)?);
            let e = g.embedding(table, data[dr.example].seq.ids(), &[1, n])?;
            let x0 = g.add(e, noise)?;
            let input = match &dr.corrupted {
                Some(c) => {
                    let e = g.embedding(table, c.ids(), &[1, n])?;
                    g.add(e, noise)?
                }
                None => x0,
            };
            let ab = sched.alpha_bar(dr.t);
            let b = (1.0 - ab).sqrt();
            let eps: Vec<F> = dr.eps.iter().map(|&e| F::from_f64_lossy(b * e)).collect();
            let eps = g.constant(Tensor::new(&[1, n, d], eps)?);
            let scaled = g.scale(input, ab.sqrt());
            xts.push(g.add(scaled, eps)?);
            targets.push(x0);
            steps.push(dr.t);
        }
        let xt = g.concat(&xts, 0)?;
        let target = g.concat(&targets, 0)?;
        let texts: Vec<&[u32]> = group.iter().map(|dr| data[dr.example].text.as_slice()).collect();
        let text = (!corrupted_branch).then(|| TextBatch::new(&texts));
        let pred = den.forward(g, xt, &steps, text.as_ref())?;
        let loss = g.mse(pred, target)?;
        let v = accumulate(g, loss, group.len())?;
        if corrupted_branch {
            sums.corrupt_sum += v * group.len() as f64;
            sums.corrupt_n += group.len();
        } else {
            sums.mse_sum += v * group.len() as f64;
            sums.mse_n += group.len();
        }
    }
    let total = total.ok_or_else(|| Error::Data("empty batch".into()))?;
    sums.loss = g.value(total).item().to_f64().unwrap_or(f64::NAN);
    Ok((total, sums))
}

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub branch_mse: Option<f64>,
    pub branch_nll: Option<f64>,
    /// Mean loss of the corrupted-input branch.
    pub branch_corrupt: Option<f64>,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "step,loss,branch_mse,branch_nll,lr";

impl StepLog {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
        format!(
            "{},{:.6e},{},{},{:.6e}",
            self.step,
            self.loss,
            opt(self.branch_mse),
            opt(self.branch_nll),
            self.lr
        )
    }
}

pub fn write_log(logs: &[StepLog], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for l in logs {
        writeln!(w, "{}", l.csv_row())?;
    }
    Ok(())
}

/// Owns the parameters and optimizer state of one training run.
pub struct Trainer<'a> {
    model: ModelConfig,
    cfg: TrainConfig,
    vocab: &'a Vocabulary,
    data: &'a [Example],
    sched: NoiseSchedule,
    params: Parameters<f32>,
    adam: AdamState,
    step: usize,
    order: Vec<(usize, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: ModelConfig,
        cfg: TrainConfig,
        vocab: &'a Vocabulary,
        data: &'a [Example],
        params: Option<Parameters<f32>>,
    ) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if model.total_steps != cfg.total_steps || model.vocab_size != vocab.len() {
            return Err(Error::Config("model config disagrees with training config".into()));
        }
        for (i, ex) in data.iter().enumerate() {
            if ex.seq.len() != model.seq_len
                || ex.seq.ids().iter().any(|&id| id as usize >= model.vocab_size)
                || ex.text.is_empty()
                || ex.text.len() > model.text_len
                || ex.text.iter().any(|&w| w as usize >= model.text_vocab_size)
            {
                return Err(Error::Data(format!("example {i} does not fit the model")));
            }
        }
        let params = match params {
            Some(p) => p,
            None => Parameters::init(&model, derive_seed(&[cfg.seed, 0xface]))?,
        };
        let adam = AdamState::new(params.tensors());
        Ok(Trainer {
            sched: NoiseSchedule::build(cfg.total_steps, cfg.schedule)?,
            model,
            cfg,
            vocab,
            data,
            params,
            adam,
            step: 0,
            order: Vec::new(),
        })
    }

    pub fn params(&self) -> &Parameters<f32> {
        &self.params
    }

    pub fn into_params(self) -> Parameters<f32> {
        self.params
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    fn example_at(&mut self, pos: usize) -> usize {
        let n = self.data.len();
        let epoch = pos / n;
        if let Some((_, perm)) = self.order.iter().find(|(e, _)| *e == epoch) {
            return perm[pos % n];
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
            self.cfg.seed,
            epoch as u64,
            STREAM_ORDER,
        ]));
        perm.shuffle(&mut rng);
        let ex = perm[pos % n];
        self.order.push((epoch, perm));
        if self.order.len() > 2 {
            self.order.remove(0);
        }
        ex
    }

    /// Draws for optimizer step `step` (1-based).
    pub fn draws(&mut self, step: usize) -> Vec<Draw> {
        let b = self.cfg.batch_size;
        let dims = self.model.seq_len * self.model.emb_dim;
        (0..b)
            .map(|slot| {
                let ex = self.example_at((step - 1) * b + slot);
                draw_slot(self.cfg.seed, step, slot, ex, self.data, self.vocab, &self.cfg, dims)
            })
            .collect()
    }

    /// Summed gradients and branch statistics of `draws`, computed on a
    /// fixed shard layout.
    pub fn gradients(&self, draws: &[Draw]) -> Result<(BranchSums, Vec<Option<Tensor<f32>>>)> {
        let per = draws.len().div_ceil(self.cfg.shards).max(1);
        let shards: Vec<&[Draw]> = draws.chunks(per).collect();
        let total = draws.len();
        let results = parallel::map(self.cfg.exec, &shards, |_, shard| {
            let mut g = Graph::<f32>::new();
            let (loss, sums) = objective_graph(
                &mut g,
                &self.model,
                &self.params,
                self.params.get("emb"),
                self.data,
                shard,
                &self.sched,
                self.cfg.sigma0,
                total,
            )?;
            let mut grads = g.backward(loss)?;
            let gs: Vec<Option<Tensor<f32>>> =
                (0..self.params.len()).map(|i| grads.take_param(i)).collect();
            Ok::<_, Error>((sums, gs))
        });
        let mut sums = BranchSums::default();
        let mut acc: Vec<Option<Tensor<f32>>> = vec![None; self.params.len()];
        for r in results {
            let (s, gs) = r?;
            sums.merge(&s);
            for (a, g) in acc.iter_mut().zip(gs) {
                match (a.as_mut(), g) {
                    (Some(a), Some(g)) => a.add_assign(&g),
                    (None, Some(g)) => *a = Some(g),
                    _ => {}
                }
            }
        }
        Ok((sums, acc))
    }

    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.step + 1;
        let draws = self.draws(step);
        let (sums, mut grads) = self.gradients(&draws)?;
        if !sums.loss.is_finite() {
            return Err(Error::Data(format!("non-finite loss at step {step}")));
        }
        if self.cfg.freeze_text {
            for (name, g) in self.params.names().iter().zip(grads.iter_mut()) {
                if is_text_encoder_param(name) {
                    *g = None;
                }
            }
        }
        let lr = self
            .adam
            .step(&self.cfg.adam, self.params.tensors_mut(), &grads);
        self.step = step;
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        Ok(StepLog {
            step,
            loss: sums.loss,
            branch_mse: mean(sums.mse_sum, sums.mse_n),
            branch_nll: mean(sums.nll_sum, sums.nll_n),
            branch_corrupt: mean(sums.corrupt_sum, sums.corrupt_n),
            lr,
        })
    }

    /// Runs until `max_steps`, handing every step's log to `on_step`.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepLog, &Parameters<f32>) -> Result<()>) -> Result<Vec<StepLog>> {
        let mut logs = Vec::with_capacity(self.cfg.max_steps.saturating_sub(self.step));
        while self.step < self.cfg.max_steps {
            let log = self.step()?;
            on_step(&log, &self.params)?;
            logs.push(log);
        }
        Ok(logs)
    }
}
