//! Acceptance suite: runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

mod common;

use std::fs;
use std::io::Cursor;
use std::path::Path;
use std::time::{Duration, Instant};

use common::criteria::{self, Outcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smiles_diffusion::cli::run_cli;
use smiles_diffusion::config::RunConfig;
use smiles_diffusion::data::{filter_records, synth_dataset, Ingested};
use smiles_diffusion::diffusion::NoiseSchedule;
use smiles_diffusion::model::{ModelConfig, Parameters, TextVocab};
use smiles_diffusion::molecule::{
    corrupt, morgan_fingerprint, parse_smiles, tanimoto, validate, CorruptParams,
};
use smiles_diffusion::sampler::{phase_two_correct, Generator, Model, SamplerConfig};
use smiles_diffusion::tokenizer::{detokenize, TokenSequence};
use smiles_diffusion::train::{Example, Phase, StepLog, Trainer};

struct Trained {
    model: ModelConfig,
    params: Parameters<f32>,
    logs: Vec<StepLog>,
}

fn examples(ing: &Ingested, tv: &TextVocab, m: usize) -> Vec<Example> {
    ing.records
        .iter()
        .zip(&ing.sequences)
        .map(|(r, s)| Example {
            seq: s.clone(),
            text: tv.encode(&r.description, m).unwrap(),
        })
        .collect()
}

fn train(cfg: &RunConfig, ing: &Ingested, tv: &TextVocab, phase: Phase) -> Trained {
    let model = cfg.model_config(ing.vocab.len(), tv.len());
    let data = examples(ing, tv, model.text_len);
    let mut tc = cfg.train.clone();
    tc.phase = phase;
    let mut tr = Trainer::new(model.clone(), tc, &ing.vocab, &data, None).unwrap();
    let logs = tr.run(|_, _| Ok(())).unwrap();
    Trained {
        model,
        params: tr.into_params(),
        logs,
    }
}

fn mean_loss(logs: &[StepLog]) -> f64 {
    logs.iter().map(|l| l.loss).sum::<f64>() / logs.len() as f64
}

fn overfit_generation() -> Outcome {
    let cfg = RunConfig::desk();
    let ing = filter_records(synth_dataset(32, 0), None, cfg.arch.seq_len).unwrap();
    assert_eq!(ing.records.len(), 32);
    let tv = TextVocab::build(ing.records.iter().map(|r| r.description.as_str()));
    let t = train(&cfg, &ing, &tv, Phase::One);
    let first = mean_loss(&t.logs[..20]);
    let last = mean_loss(&t.logs[t.logs.len() - 100..]);
    let sched = NoiseSchedule::build(cfg.train.total_steps, cfg.train.schedule).unwrap();
    let gen = Generator {
        vocab: &ing.vocab,
        text_vocab: &tv,
        phase_one: Model {
            cfg: &t.model,
            params: &t.params,
        },
        phase_two: None,
        sched: &sched,
        cfg: SamplerConfig {
            max_rounds: 0,
            ..cfg.sampler.clone()
        },
    };
    let descs: Vec<&str> = ing.records.iter().map(|r| r.description.as_str()).collect();
    let out = gen.generate_batch(&descs).unwrap();
    let exact = out
        .iter()
        .zip(&ing.records)
        .filter(|(g, r)| g.smiles == r.smiles)
        .count();
    let ratio = last / first;
    Outcome::new(
        exact * 5 >= 32 * 4 && ratio < 0.1 && t.logs.len() <= 2000,
        format!(
            "{} steps, exact match {exact}/32 (need >= 80%), loss {first:.4} -> {last:.4} ({:.1}% of initial, need < 10%), S1={}",
            t.logs.len(),
            100.0 * ratio,
            cfg.sampler.steps1
        ),
    )
}

struct Corrected {
    valid: usize,
    mean_tanimoto: f64,
}

fn fidelity(outputs: &[TokenSequence], ing: &Ingested) -> Corrected {
    let (mut valid, mut total) = (0, 0.0);
    for (seq, orig) in outputs.iter().zip(&ing.records) {
        if !validate(seq, &ing.vocab).valid {
            continue;
        }
        valid += 1;
        let s = detokenize(seq, &ing.vocab).unwrap();
        let a = morgan_fingerprint(&parse_smiles(&s).unwrap(), 2, 2048);
        let b = morgan_fingerprint(&parse_smiles(&orig.smiles).unwrap(), 2, 2048);
        total += tanimoto(&a, &b).unwrap();
    }
    Corrected {
        valid,
        mean_tanimoto: total / valid.max(1) as f64,
    }
}

const CORRECTION_SET: usize = 256;
const CORRECTION_STEPS: usize = 2000;

fn correction_uplift() -> Outcome {
    let mut cfg = RunConfig::desk();
    cfg.train.max_steps = CORRECTION_STEPS;
    let ing = filter_records(synth_dataset(CORRECTION_SET, 1), None, cfg.arch.seq_len).unwrap();
    let tv = TextVocab::build(ing.records.iter().map(|r| r.description.as_str()));
    let t = train(&cfg, &ing, &tv, Phase::Two);
    let model = Model {
        cfg: &t.model,
        params: &t.params,
    };
    let sched = NoiseSchedule::build(cfg.train.total_steps, cfg.train.schedule).unwrap();

    let n = 200;
    let params = CorruptParams { p: 1.0, max_edits: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let corrupted: Vec<TokenSequence> = ing.sequences[..n]
        .iter()
        .map(|s| corrupt(s, &ing.vocab, &params, &mut rng))
        .collect();
    let baseline = fidelity(&corrupted, &ing).valid;
    let todo: Vec<usize> = (0..n)
        .filter(|&i| !validate(&corrupted[i], &ing.vocab).valid)
        .collect();
    let inputs: Vec<&TokenSequence> = todo.iter().map(|&i| &corrupted[i]).collect();
    let seeds: Vec<u64> = todo.iter().map(|&i| i as u64).collect();

    let s2 = cfg.sampler.steps2;
    let mut runs = Vec::new();
    for steps in [s2 / 2, s2, 2 * s2] {
        let sc = SamplerConfig {
            steps2: steps,
            ..cfg.sampler.clone()
        };
        let fixed = phase_two_correct(model, &inputs, &sched, &sc, &seeds).unwrap();
        let mut out = corrupted.clone();
        for (&i, r) in todo.iter().zip(fixed) {
            out[i] = r.seq;
        }
        runs.push((steps, fidelity(&out, &ing)));
    }
    let at_default = &runs[1].1;
    let uplift = 100.0 * (at_default.valid as f64 - baseline as f64) / n as f64;
    let monotone = runs.windows(2).all(|w| {
        w[1].1.valid >= w[0].1.valid && w[1].1.mean_tanimoto <= w[0].1.mean_tanimoto
    });
    let trend: Vec<String> = runs
        .iter()
        .map(|(s, c)| format!("S2={s}: {}/{n} valid, Tanimoto {:.3}", c.valid, c.mean_tanimoto))
        .collect();
    Outcome::new(
        uplift >= 30.0 && monotone,
        format!(
            "baseline {baseline}/{n} valid, corrected +{uplift:.1} points (need >= 30); {}; monotone {monotone}",
            trend.join(", ")
        ),
    )
}

fn cli(args: &[&str]) -> (i32, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("smidiff").chain(args.iter().copied());
    let code = run_cli(argv, &mut Cursor::new(Vec::new()), &mut out, &mut err);
    (code, String::from_utf8_lossy(&err).into_owned())
}

type Artifacts = (Vec<u8>, Vec<u8>, Vec<u8>);

/// Checkpoint and results bytes of one train-and-generate pass in `dir`.
fn pipeline(dir: &Path, data: &Path) -> Result<Artifacts, String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    let d = data.to_str().unwrap();
    let (m1, m2, res) = (p("m1.ckpt"), p("m2.ckpt"), p("results.tsv"));
    let steps = ["--steps", "20", "--seed", "3"];
    let runs: [Vec<&str>; 3] = [
        [&["train", "--data", d, "--out", &m1][..], &steps].concat(),
        [&["train", "--phase", "two", "--vocab-from", &m1, "--data", d, "--out", &m2][..], &steps].concat(),
        vec![
            "generate", "--model-phase1", &m1, "--model-phase2", &m2, "--desc-file", d, "--out",
            &res, "--seed", "3",
        ],
    ];
    for args in &runs {
        let (code, err) = cli(args);
        if code != 0 {
            return Err(format!("`{}` exited {code}: {}", args[0], err.trim()));
        }
    }
    let read = |f: &str| fs::read(f).map_err(|e| e.to_string());
    Ok((read(&m1)?, read(&m2)?, read(&res)?))
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.tsv");
    let (code, err) = cli(&["make-synth", "--count", "32", "--out", data.to_str().unwrap()]);
    if code != 0 {
        return Outcome::new(false, err);
    }
    let mut passes = Vec::new();
    for k in 0..2 {
        let sub = dir.path().join(format!("run{k}"));
        fs::create_dir(&sub).unwrap();
        match pipeline(&sub, &data) {
            Ok(p) => passes.push(p),
            Err(e) => return Outcome::new(false, e),
        }
    }
    let (a, b) = (&passes[0], &passes[1]);
    Outcome::new(
        a == b,
        format!(
            "phase-one checkpoint identical {}, phase-two checkpoint identical {}, generated SMILES identical {} ({} bytes of results)",
            a.0 == b.0,
            a.1 == b.1,
            a.2 == b.2,
            a.2.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome, u64);

fn main() {
    let suite: [Criterion; 10] = [
        ("posterior oracle", criteria::posterior_oracle, 1),
        ("forward statistics", criteria::forward_statistics, 10),
        ("gradient check", criteria::gradient_check, 120),
        ("tokenizer round trip", criteria::tokenizer_round_trip, 30),
        ("validator oracle", criteria::validator_agreement, 60),
        ("corruption efficacy", criteria::corruption_efficacy, 10),
        ("overfit generation", overfit_generation, 900),
        ("correction uplift", correction_uplift, 1200),
        ("metrics identities", criteria::metrics_identity, 5),
        ("reproducibility", reproducibility, 600),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check, limit)) in suite.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(*limit);
        let pass = outcome.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "{} {id:>2}. {name}: {} [{:.2}s, limit {limit}s{}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            took.as_secs_f64(),
            if in_time { "" } else { ", over time" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
