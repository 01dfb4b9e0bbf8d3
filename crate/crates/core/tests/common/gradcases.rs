//! Gradient-check scenarios for every denoiser block and both objectives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use smiles_diffusion::diffusion::{NoiseSchedule, ScheduleKind};
use smiles_diffusion::model::{Denoiser, ModelConfig, Parameters, TextBatch};
use smiles_diffusion::molecule::{corrupt, CorruptParams};
use smiles_diffusion::tensor::{Graph, Tensor, Var};
use smiles_diffusion::tokenizer::{tokenize, TokenSequence, Vocabulary};
use smiles_diffusion::train::{objective_graph, Draw, Example};

use super::{check_input, check_params, GradCheck};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

pub type Cases = Vec<(String, GradCheck)>;

const SMILES: [&str; 3] = ["CC(O)N", "C1CC1", "CCO"];

/// Small shapes for fast unit-level checks.
pub fn tiny() -> ModelConfig {
    ModelConfig {
        vocab_size: 10,
        seq_len: 8,
        ..super::tiny_config()
    }
}

/// Desk architecture widths with a short sequence.
pub fn desk() -> ModelConfig {
    ModelConfig {
        vocab_size: 10,
        text_vocab_size: 12,
        seq_len: 10,
        emb_dim: 32,
        hidden: 128,
        layers: 2,
        heads: 4,
        text_dim: 64,
        text_len: 16,
        total_steps: 2000,
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape, 1.0, &mut rng)
}

/// Scalar probe of a block output: mean squared distance to a fixed target.
fn probe(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let target = g.constant(randn(g.shape(out), seed));
    g.mse(out, target).unwrap()
}

fn text_batch() -> TextBatch {
    TextBatch::padded(&[&[2, 3, 4, 5], &[6, 7]], 0)
}

fn mask_bias(t: &TextBatch, n: usize) -> Tensor<f64> {
    let mut v = Vec::new();
    for row in t.mask.chunks(t.m) {
        for _ in 0..n {
            v.extend(row.iter().map(|&k| if k { 0.0 } else { -1e9 }));
        }
    }
    Tensor::new(&[t.batch(), n, t.m], v).unwrap()
}

pub fn self_attention(cfg: &ModelConfig, per: usize) -> Cases {
    let p = Parameters::<f64>::init(cfg, 1).unwrap();
    let z = randn(&[2, cfg.seq_len, cfg.hidden], 2);
    let f = |g: &mut Graph<f64>, p: &Parameters<f64>| {
        let zv = g.constant(z.clone());
        let out = Denoiser::new(cfg, p).self_attention_block(g, zv, 0).unwrap();
        probe(g, out, 3)
    };
    let fx = |g: &mut Graph<f64>, x: Var| {
        let out = Denoiser::new(cfg, &p).self_attention_block(g, x, 1).unwrap();
        probe(g, out, 3)
    };
    vec![
        ("self-attention params".into(), check_params(&p, None, per, H, &f)),
        ("self-attention input".into(), check_input(&z, H, &fx)),
    ]
}

pub fn cross_attention(cfg: &ModelConfig, per: usize) -> Cases {
    let p = Parameters::<f64>::init(cfg, 4).unwrap();
    let tb = text_batch();
    let z = randn(&[2, cfg.seq_len, cfg.hidden], 5);
    let text = randn(&[2, tb.m, cfg.hidden], 6);
    let bias = mask_bias(&tb, cfg.seq_len);
    let run = |g: &mut Graph<f64>, p: &Parameters<f64>, z: Var, t: Var| {
        let bv = g.constant(bias.clone());
        let out = Denoiser::new(cfg, p)
            .cross_attention_block(g, z, t, bv, 0)
            .unwrap();
        probe(g, out, 7)
    };
    let f = |g: &mut Graph<f64>, p: &Parameters<f64>| {
        let zv = g.constant(z.clone());
        let tv = g.constant(text.clone());
        run(g, p, zv, tv)
    };
    let fz = |g: &mut Graph<f64>, x: Var| {
        let tv = g.constant(text.clone());
        run(g, &p, x, tv)
    };
    let ft = |g: &mut Graph<f64>, t: Var| {
        let zv = g.constant(z.clone());
        run(g, &p, zv, t)
    };
    vec![
        ("cross-attention params".into(), check_params(&p, None, per, H, &f)),
        ("cross-attention query input".into(), check_input(&z, H, &fz)),
        ("cross-attention text input".into(), check_input(&text, H, &ft)),
    ]
}

pub fn mlp(cfg: &ModelConfig, per: usize) -> Cases {
    let p = Parameters::<f64>::init(cfg, 8).unwrap();
    let z = randn(&[2, cfg.seq_len, cfg.hidden], 9);
    let f = |g: &mut Graph<f64>, p: &Parameters<f64>| {
        let zv = g.constant(z.clone());
        let out = Denoiser::new(cfg, p).mlp_block(g, zv, 1).unwrap();
        probe(g, out, 10)
    };
    let fx = |g: &mut Graph<f64>, x: Var| {
        let out = Denoiser::new(cfg, &p).mlp_block(g, x, 1).unwrap();
        probe(g, out, 10)
    };
    vec![
        ("mlp params".into(), check_params(&p, None, per, H, &f)),
        ("mlp input".into(), check_input(&z, H, &fx)),
    ]
}

pub fn step_and_text(cfg: &ModelConfig, per: usize) -> Cases {
    let p = Parameters::<f64>::init(cfg, 11).unwrap();
    let steps = [0, 17, cfg.total_steps];
    let f = |g: &mut Graph<f64>, p: &Parameters<f64>| {
        let out = Denoiser::new(cfg, p).step_embedding(g, &steps).unwrap();
        probe(g, out, 12)
    };
    let tb = text_batch();
    let ft = |g: &mut Graph<f64>, p: &Parameters<f64>| {
        let den = Denoiser::new(cfg, p);
        let c = den.encode_text(g, &tb).unwrap();
        let out = den.project_text(g, c).unwrap();
        probe(g, out, 13)
    };
    vec![
        ("step embedding".into(), check_params(&p, None, per, H, &f)),
        ("text encoder".into(), check_params(&p, None, per, H, &ft)),
    ]
}

pub fn full_denoiser(cfg: &ModelConfig, per: usize) -> Cases {
    let p = Parameters::<f64>::init(cfg, 14).unwrap();
    let x = randn(&[2, cfg.seq_len, cfg.emb_dim], 15);
    let tb = text_batch();
    let steps = [3, cfg.total_steps - 10];
    let mut out = Cases::new();
    for (label, text) in [("with text", Some(&tb)), ("without text", None)] {
        let f = |g: &mut Graph<f64>, p: &Parameters<f64>| {
            let xv = g.constant(x.clone());
            let y = Denoiser::new(cfg, p).forward(g, xv, &steps, text).unwrap();
            probe(g, y, 16)
        };
        let fx = |g: &mut Graph<f64>, xv: Var| {
            let y = Denoiser::new(cfg, &p).forward(g, xv, &steps, text).unwrap();
            probe(g, y, 16)
        };
        out.push((format!("denoiser params {label}"), check_params(&p, None, per, H, &f)));
        out.push((format!("denoiser input {label}"), check_input(&x, H, &fx)));
    }
    out
}

fn examples(cfg: &ModelConfig) -> (Vocabulary, Vec<Example>) {
    let vocab = Vocabulary::build(SMILES).unwrap();
    assert_eq!(vocab.len(), cfg.vocab_size);
    let texts: [&[u32]; 3] = [&[2, 3], &[4, 5, 6], &[7]];
    let data = SMILES
        .iter()
        .zip(texts)
        .map(|(s, t)| Example {
            seq: tokenize(s, &vocab, cfg.seq_len).unwrap(),
            text: t.to_vec(),
        })
        .collect();
    (vocab, data)
}

fn draw(cfg: &ModelConfig, example: usize, t: usize, seed: u64, corrupted: Option<TokenSequence>) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = cfg.seq_len * cfg.emb_dim;
    Draw {
        example,
        t,
        eps0: (0..dims).map(|_| rng.sample(StandardNormal)).collect(),
        eps: (0..dims).map(|_| rng.sample(StandardNormal)).collect(),
        corrupted,
    }
}

fn objective_check(cfg: &ModelConfig, draws: &[Draw], data: &[Example], seed: u64, per: usize) -> Cases {
    let sched = NoiseSchedule::build(cfg.total_steps, ScheduleKind::Sqrt).unwrap();
    let p = Parameters::<f64>::init(cfg, seed).unwrap();
    let frozen = p.get("emb").clone();
    let f = |g: &mut Graph<f64>, p: &Parameters<f64>| {
        objective_graph(g, cfg, p, &frozen, data, draws, &sched, 0.1, draws.len())
            .unwrap()
            .0
    };
    vec![
        ("params".into(), check_params(&p, None, per, H, &f)),
        ("embedding table".into(), check_params(&p, Some(&["emb"]), usize::MAX, H, &f)),
    ]
}

pub fn objective_one(cfg: &ModelConfig, per: usize) -> Cases {
    let (_, data) = examples(cfg);
    let draws = vec![
        draw(cfg, 0, 0, 1, None),
        draw(cfg, 1, 0, 2, None),
        draw(cfg, 2, 9, 3, None),
        draw(cfg, 0, cfg.total_steps, 4, None),
    ];
    objective_check(cfg, &draws, &data, 21, per)
        .into_iter()
        .map(|(n, r)| (format!("objective one {n}"), r))
        .collect()
}

pub fn objective_two(cfg: &ModelConfig, per: usize) -> Cases {
    let (vocab, data) = examples(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cp = CorruptParams { p: 1.0, max_edits: 2 };
    let mut changed = |seq: &TokenSequence| loop {
        let c = corrupt(seq, &vocab, &cp, &mut rng);
        if &c != seq {
            break c;
        }
    };
    let c0 = changed(&data[0].seq);
    let c1 = changed(&data[1].seq);
    let draws = vec![
        draw(cfg, 0, 0, 6, None),
        draw(cfg, 0, 3, 7, Some(c0)),
        draw(cfg, 1, 12, 8, Some(c1)),
        draw(cfg, 2, 30, 9, None),
    ];
    objective_check(cfg, &draws, &data, 22, per)
        .into_iter()
        .map(|(n, r)| (format!("objective two {n}"), r))
        .collect()
}

/// Every scenario at the given shapes.
pub fn all(cfg: &ModelConfig, per: usize) -> Cases {
    let mut out = Cases::new();
    out.extend(self_attention(cfg, per));
    out.extend(cross_attention(cfg, per));
    out.extend(mlp(cfg, per));
    out.extend(step_and_text(cfg, per));
    out.extend(full_denoiser(cfg, per));
    out.extend(objective_one(cfg, per));
    out.extend(objective_two(cfg, per));
    out
}
