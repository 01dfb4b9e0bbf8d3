//! Text-guided generation followed by unguided correction of invalid
//! outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    clamp_to_embeddings, lookup, posterior_step, q_sample, round_to_tokens, NoiseSchedule, Rounding,
};
use crate::error::{Error, Result};
use crate::model::{Denoiser, ModelConfig, Parameters, TextBatch, TextVocab};
use crate::molecule::{validate, Diagnostic};
use crate::parallel::{self, ExecMode};
use crate::tensor::Tensor;
use crate::tokenizer::{detokenize, TokenSequence, Vocabulary};
use crate::train::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Respaced reverse steps of phase one (`S1`).
    pub steps1: usize,
    /// Respaced reverse steps of phase two (`S2`).
    pub steps2: usize,
    /// Re-noising level `B` for correction.
    pub correction_level: usize,
    pub max_rounds: usize,
    /// Snap each predicted `x̂_0` to its nearest embeddings.
    pub clamp: bool,
    pub seed: u64,
    /// Molecules denoised together in one forward pass.
    pub batch: usize,
    pub exec: ExecMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps1: 200,
            steps2: 20,
            correction_level: 400,
            max_rounds: 1,
            clamp: false,
            seed: 0,
            batch: 16,
            exec: ExecMode::Parallel,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, tau: usize, total: usize) -> Result<()> {
        if self.steps1 < 2 || self.steps1 > total {
            return Err(Error::InvalidS {
                s: self.steps1,
                len: total,
            });
        }
        if self.correction_level == 0 || self.correction_level > tau {
            return Err(Error::Config(format!(
                "correction level must satisfy 0 < B <= tau={tau}, got {}",
                self.correction_level
            )));
        }
        if self.steps2 == 0 || self.steps2 > self.correction_level {
            return Err(Error::InvalidS {
                s: self.steps2,
                len: self.correction_level,
            });
        }
        if self.batch == 0 {
            return Err(Error::Config("generation batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub smiles: String,
    pub tokens: TokenSequence,
    pub valid: bool,
    pub corrected: bool,
    pub phase_one_smiles: String,
    pub diagnostics: Vec<Diagnostic>,
}

/// One trained denoiser.
#[derive(Clone, Copy)]
pub struct Model<'a> {
    pub cfg: &'a ModelConfig,
    pub params: &'a Parameters<f32>,
}

impl Model<'_> {
    fn emb(&self) -> &Tensor<f32> {
        self.params.get("emb")
    }
}

const STREAM_PHASE_ONE: u64 = 11;
const STREAM_PHASE_TWO: u64 = 12;

/// Runs the reverse chain of `sched` from `starts` (states at its last
/// index) down to index 0, in chunks of `batch`.
#[allow(clippy::too_many_arguments)]
fn reverse(
    model: Model<'_>,
    starts: Vec<Tensor<f32>>,
    sched: &NoiseSchedule,
    texts: Option<&[&[u32]]>,
    clamp: bool,
    seeds: &[u64],
    batch: usize,
    exec: ExecMode,
) -> Result<Vec<Tensor<f32>>> {
    let idx: Vec<usize> = (0..starts.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(batch.max(1)).collect();
    let den = Denoiser::new(model.cfg, model.params);
    let results = parallel::map(exec, &chunks, |_, chunk| {
        let mut xs: Vec<Tensor<f32>> = chunk.iter().map(|&i| starts[i].clone()).collect();
        let mut rngs: Vec<ChaCha8Rng> = chunk
            .iter()
            .map(|&i| ChaCha8Rng::seed_from_u64(seeds[i]))
            .collect();
        let text = texts.map(|t| {
            let items: Vec<&[u32]> = chunk.iter().map(|&i| t[i]).collect();
            TextBatch::new(&items)
        });
        for i in (1..=sched.len()).rev() {
            let steps = vec![sched.timestep(i); chunk.len()];
            let refs: Vec<&Tensor<f32>> = xs.iter().collect();
            let preds = den.predict(&refs, &steps, text.as_ref())?;
            for ((x, p), rng) in xs.iter_mut().zip(preds).zip(rngs.iter_mut()) {
                let p = if clamp {
                    clamp_to_embeddings(&p, model.emb())?
                } else {
                    p
                };
                *x = posterior_step(x, &p, i, sched, rng)?;
            }
        }
        Ok::<_, Error>(xs)
    });
    let mut out = Vec::with_capacity(starts.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Text-guided sampling from pure noise over `S1` respaced steps.
pub fn phase_one_sample(
    model: Model<'_>,
    texts: &[&[u32]],
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    seeds: &[u64],
) -> Result<Vec<Rounding>> {
    let resp = sched.respace(cfg.steps1)?;
    let shape = [model.cfg.seq_len, model.cfg.emb_dim];
    let mut rngs: Vec<ChaCha8Rng> = seeds
        .iter()
        .map(|&s| ChaCha8Rng::seed_from_u64(derive_seed(&[s, 0])))
        .collect();
    let starts = rngs
        .iter_mut()
        .map(|r| Tensor::randn(&shape, 1.0, r))
        .collect();
    let step_seeds: Vec<u64> = seeds.iter().map(|&s| derive_seed(&[s, 1])).collect();
    let xs = reverse(model, starts, &resp, Some(texts), cfg.clamp, &step_seeds, cfg.batch, cfg.exec)?;
    xs.iter().map(|x| round_to_tokens(x, model.emb())).collect()
}

/// Re-noises each sequence to level `B` and denoises it over `S2` steps
/// without text.
pub fn phase_two_correct(
    model: Model<'_>,
    seqs: &[&TokenSequence],
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    seeds: &[u64],
) -> Result<Vec<Rounding>> {
    let resp = sched.respace_range(1, cfg.correction_level, cfg.steps2)?;
    let top = resp.len();
    let mut starts = Vec::with_capacity(seqs.len());
    for (seq, &s) in seqs.iter().zip(seeds) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[s, 0]));
        let x0 = lookup(seq.ids(), model.emb())?;
        starts.push(q_sample(&x0, top, &resp, &mut rng)?);
    }
    let step_seeds: Vec<u64> = seeds.iter().map(|&s| derive_seed(&[s, 1])).collect();
    let xs = reverse(model, starts, &resp, None, cfg.clamp, &step_seeds, cfg.batch, cfg.exec)?;
    xs.iter().map(|x| round_to_tokens(x, model.emb())).collect()
}

/// Encodes descriptions, runs phase one and corrects invalid outputs.
pub struct Generator<'a> {
    pub vocab: &'a Vocabulary,
    pub text_vocab: &'a TextVocab,
    pub phase_one: Model<'a>,
    pub phase_two: Option<Model<'a>>,
    pub sched: &'a NoiseSchedule,
    pub cfg: SamplerConfig,
}

impl Generator<'_> {
    fn describe(&self, seq: &TokenSequence) -> (String, bool, Vec<Diagnostic>) {
        let smiles = detokenize(seq, self.vocab).unwrap_or_default();
        let rep = validate(seq, self.vocab);
        (smiles, rep.valid, rep.diagnostics)
    }

    fn item_seed(&self, item: usize, stream: u64) -> u64 {
        derive_seed(&[self.cfg.seed, item as u64, stream])
    }

    pub fn generate(&self, description: &str) -> Result<GenerationResult> {
        Ok(self.generate_batch(&[description])?.remove(0))
    }

    /// Item `i` uses seeds derived from `(cfg.seed, i)` only, so results do
    /// not depend on batch composition or execution mode.
    pub fn generate_batch(&self, descriptions: &[&str]) -> Result<Vec<GenerationResult>> {
        if self.cfg.max_rounds > 0 && self.phase_two.is_none() {
            return Err(Error::ModelNotLoaded("phase-two model".into()));
        }
        let texts: Vec<Vec<u32>> = descriptions
            .iter()
            .map(|d| self.text_vocab.encode(d, self.phase_one.cfg.text_len))
            .collect::<Result<_>>()?;
        let refs: Vec<&[u32]> = texts.iter().map(Vec::as_slice).collect();
        let seeds: Vec<u64> = (0..texts.len())
            .map(|i| self.item_seed(i, STREAM_PHASE_ONE))
            .collect();
        let rounded = phase_one_sample(self.phase_one, &refs, self.sched, &self.cfg, &seeds)?;
        let mut results: Vec<GenerationResult> = rounded
            .into_iter()
            .map(|r| {
                let (smiles, valid, diagnostics) = self.describe(&r.seq);
                GenerationResult {
                    phase_one_smiles: smiles.clone(),
                    smiles,
                    tokens: r.seq,
                    valid,
                    corrected: false,
                    diagnostics,
                }
            })
            .collect();
        for round in 0..self.cfg.max_rounds {
            let todo: Vec<usize> = (0..results.len()).filter(|&i| !results[i].valid).collect();
            if todo.is_empty() {
                break;
            }
            let model = self.phase_two.expect("checked above");
            let seqs: Vec<&TokenSequence> = todo.iter().map(|&i| &results[i].tokens).collect();
            let seeds: Vec<u64> = todo
                .iter()
                .map(|&i| self.item_seed(i, STREAM_PHASE_TWO + round as u64))
                .collect();
            let fixed = phase_two_correct(model, &seqs, self.sched, &self.cfg, &seeds)?;
            for (&i, r) in todo.iter().zip(fixed) {
                let (smiles, valid, diagnostics) = self.describe(&r.seq);
                let res = &mut results[i];
                res.smiles = smiles;
                res.tokens = r.seq;
                res.valid = valid;
                res.diagnostics = diagnostics;
                res.corrected = true;
            }
        }
        Ok(results)
    }
}

/// TSV header of batch generation output.
pub const RESULTS_HEADER: &str = "cid\tdescription\tsmiles\tvalid\tcorrected\tphase1_smiles";

pub fn results_row(cid: &str, description: &str, r: &GenerationResult) -> String {
    format!(
        "{cid}\t{description}\t{}\t{}\t{}\t{}",
        r.smiles, r.valid, r.corrected, r.phase_one_smiles
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;

    fn setup() -> (Vocabulary, TextVocab, ModelConfig, Parameters<f32>, NoiseSchedule) {
        let vocab = Vocabulary::build(["CCO", "C1CC1", "CC(C)N"]).unwrap();
        let tv = TextVocab::build(["an alcohol", "a ring"]);
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            text_vocab_size: tv.len(),
            seq_len: 8,
            emb_dim: 4,
            hidden: 16,
            layers: 1,
            heads: 2,
            text_dim: 8,
            text_len: 8,
            total_steps: 100,
        };
        let p = Parameters::init(&cfg, 1).unwrap();
        let s = NoiseSchedule::build(100, ScheduleKind::Sqrt).unwrap();
        (vocab, tv, cfg, p, s)
    }

    fn scfg() -> SamplerConfig {
        SamplerConfig {
            steps1: 10,
            steps2: 4,
            correction_level: 20,
            batch: 2,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn untrained_pipeline_is_deterministic_and_consistent() {
        let (vocab, tv, cfg, p, s) = setup();
        let m = Model {
            cfg: &cfg,
            params: &p,
        };
        let gen = Generator {
            vocab: &vocab,
            text_vocab: &tv,
            phase_one: m,
            phase_two: Some(m),
            sched: &s,
            cfg: scfg(),
        };
        let descs = ["an alcohol", "a ring", "a ring alcohol"];
        let a = gen.generate_batch(&descs).unwrap();
        assert_eq!(a, gen.generate_batch(&descs).unwrap());
        let mut seq_gen = Generator { cfg: scfg(), ..gen };
        seq_gen.cfg.exec = ExecMode::Sequential;
        assert_eq!(a, seq_gen.generate_batch(&descs).unwrap());
        for r in &a {
            assert_eq!(r.valid, validate(&r.tokens, &vocab).valid);
            assert_eq!(r.corrected, !validate_smiles_str(&r.phase_one_smiles));
            assert_eq!(r.tokens.len(), 8);
        }
        assert!(matches!(gen.generate("  "), Err(Error::EmptyText)));
    }

    fn validate_smiles_str(s: &str) -> bool {
        crate::molecule::validate_smiles(s).valid
    }

    #[test]
    fn missing_phase_two_model() {
        let (vocab, tv, cfg, p, s) = setup();
        let m = Model {
            cfg: &cfg,
            params: &p,
        };
        let mut gen = Generator {
            vocab: &vocab,
            text_vocab: &tv,
            phase_one: m,
            phase_two: None,
            sched: &s,
            cfg: scfg(),
        };
        assert!(matches!(
            gen.generate("an alcohol"),
            Err(Error::ModelNotLoaded(_))
        ));
        gen.cfg.max_rounds = 0;
        let r = gen.generate("an alcohol").unwrap();
        assert!(!r.corrected);
        assert_eq!(r.smiles, r.phase_one_smiles);
    }

    #[test]
    fn config_bounds() {
        let c = SamplerConfig::default();
        assert!(c.validate(400, 2000).is_ok());
        assert!(c.validate(399, 2000).is_err());
        let c = SamplerConfig {
            steps1: 1,
            ..SamplerConfig::default()
        };
        assert!(c.validate(400, 2000).is_err());
    }
}
