//! Checks behind the fast acceptance criteria, each returning a verdict
//! and a one-line summary of what was measured.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smiles_diffusion::data::{ingest_dataset, synth_dataset, TsvFormat};
use smiles_diffusion::diffusion::{q_sample, NoiseSchedule, ScheduleKind};
use smiles_diffusion::metrics::{evaluate, BleuUnit, Hypothesis};
use smiles_diffusion::molecule::{corrupt, validate, validate_smiles, CorruptParams};
use smiles_diffusion::parallel::ExecMode;
use smiles_diffusion::tensor::Tensor;
use smiles_diffusion::tokenizer::{
    detokenize, tokenize, token_class, TokenClass, TokenSequence, Vocabulary,
};

use super::{all_strings, bayes_posterior, gradcases, rel_err, validator_oracle};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

pub fn posterior_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for total in [10, 100, 2000] {
        for kind in [ScheduleKind::Sqrt, ScheduleKind::Linear] {
            let s = NoiseSchedule::build(total, kind).unwrap();
            for i in 1..=total {
                let p = s.posterior(i).unwrap();
                let (c0, ct, v) = bayes_posterior(s.alpha_bar(i - 1), s.alpha_bar(i));
                worst = worst
                    .max(rel_err(p.c0, c0))
                    .max(rel_err(p.ct, ct))
                    .max(rel_err(p.var, v));
                checked += 1;
            }
        }
    }
    Outcome::new(
        worst < 1e-10,
        format!("{checked} steps, max relative error {worst:.2e} (limit 1e-10)"),
    )
}

pub fn forward_statistics() -> Outcome {
    let sched = NoiseSchedule::build(2000, ScheduleKind::Sqrt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 10_000;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let t = rng.random_range(1..=2000);
        let x0v: f64 = rng.random_range(-2.0..2.0);
        let x0 = Tensor::new(&[1, 1], vec![x0v as f32]).unwrap();
        let samples: Vec<f64> = (0..draws)
            .map(|_| f64::from(q_sample(&x0, t, &sched, &mut rng).unwrap().data()[0]))
            .collect();
        let n = draws as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let ab = sched.alpha_bar(t);
        let want_mean = ab.sqrt() * f64::from(x0v as f32);
        let want_sd = (1.0 - ab).sqrt();
        let se_mean = want_sd / n.sqrt();
        let se_sd = want_sd / (2.0 * (n - 1.0)).sqrt();
        worst = worst
            .max((mean - want_mean).abs() / se_mean)
            .max((var.sqrt() - want_sd).abs() / se_sd);
    }
    Outcome::new(
        worst <= 3.0,
        format!("5 (t, x0) cases x 10^4 draws, worst deviation {worst:.2} standard errors (limit 3)"),
    )
}

pub fn gradient_check() -> Outcome {
    let mut cases = gradcases::all(&gradcases::tiny(), 6);
    cases.extend(
        gradcases::all(&gradcases::desk(), 2)
            .into_iter()
            .map(|(n, r)| (format!("desk {n}"), r)),
    );
    let (name, worst) = cases
        .iter()
        .map(|(n, r)| (n.as_str(), r.max_rel))
        .fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let checked: usize = cases.iter().map(|(_, r)| r.checked).sum();
    let pass = cases.iter().all(|(_, r)| r.checked > 0 && r.max_rel < gradcases::TOL);
    Outcome::new(
        pass,
        format!(
            "{} scenarios, {checked} entries, max relative error {worst:.2e} in {name} (limit 1e-4)",
            cases.len()
        ),
    )
}

/// Round trip over `smiles`, returning `(passed, total)`.
fn round_trip(smiles: &[String]) -> (usize, usize) {
    let vocab = Vocabulary::build(smiles).unwrap();
    let ok = smiles
        .iter()
        .filter(|s| {
            let n = smiles_diffusion::tokenizer::scan(s).unwrap().len() + 2;
            tokenize(s, &vocab, n)
                .and_then(|seq| detokenize(&seq, &vocab))
                .is_ok_and(|back| &back == *s)
        })
        .count();
    (ok, smiles.len())
}

/// Reads the optional external corpus named by `SMILES_CORPUS_TSV`.
pub fn tokenizer_round_trip() -> Outcome {
    let synth: Vec<String> = synth_dataset(10_000, 7).into_iter().map(|r| r.smiles).collect();
    let (ok, total) = round_trip(&synth);
    let mut pass = ok == total;
    let mut detail = format!("synthetic {ok}/{total}");
    match std::env::var("SMILES_CORPUS_TSV") {
        Ok(path) => match ingest_dataset(Path::new(&path), None, 10_000, &TsvFormat::default()) {
            Ok(ing) => {
                let smiles: Vec<String> = ing.records.into_iter().map(|r| r.smiles).collect();
                let (ok, total) = round_trip(&smiles);
                pass &= ok == total;
                detail.push_str(&format!(", external corpus {ok}/{total}"));
            }
            Err(e) => {
                pass = false;
                detail.push_str(&format!(", external corpus unreadable: {e}"));
            }
        },
        Err(_) => detail.push_str(", no external corpus configured"),
    }
    Outcome::new(pass, detail)
}

pub fn validator_agreement() -> Outcome {
    let strings = all_strings(&['C', 'O', 'N', '(', ')', '1', '='], 6);
    let mut disagree = Vec::new();
    let mut valid = 0;
    for s in &strings {
        let want = validator_oracle(s);
        valid += usize::from(want);
        if validate_smiles(s).valid != want {
            disagree.push(s.clone());
        }
    }
    let mut detail = format!(
        "{} strings ({valid} valid), {} disagreements",
        strings.len(),
        disagree.len()
    );
    if let Some(s) = disagree.first() {
        detail.push_str(&format!(", first {s:?}"));
    }
    Outcome::new(disagree.is_empty(), detail)
}

fn skeleton(seq: &TokenSequence, vocab: &Vocabulary) -> Vec<u32> {
    seq.payload()
        .iter()
        .copied()
        .filter(|&id| {
            let c = token_class(vocab.token(id).unwrap());
            !matches!(
                c,
                TokenClass::OpenParen | TokenClass::CloseParen | TokenClass::RingDigit
            )
        })
        .collect()
}

pub fn corruption_efficacy() -> Outcome {
    let recs = synth_dataset(1000, 11);
    let vocab = Vocabulary::build(
        recs.iter()
            .map(|r| r.smiles.as_str())
            .chain(["C(C)C1CC2CC3CC4CC5CC6CC7CC8CC9CC123456789"]),
    )
    .unwrap();
    let params = CorruptParams { p: 1.0, max_edits: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut invalid, mut altered) = (0, 0);
    for r in &recs {
        let seq = tokenize(&r.smiles, &vocab, 40).unwrap();
        assert!(validate(&seq, &vocab).valid, "{}", r.smiles);
        let c = corrupt(&seq, &vocab, &params, &mut rng);
        invalid += usize::from(!validate(&c, &vocab).valid);
        altered += usize::from(skeleton(&c, &vocab) != skeleton(&seq, &vocab));
    }
    let n = recs.len() as f64;
    Outcome::new(
        invalid as f64 / n >= 0.9 && altered == 0,
        format!(
            "{:.1}% invalid after corruption (need >= 90%), {altered} outputs with altered atom/bond tokens (need 0)",
            100.0 * invalid as f64 / n
        ),
    )
}

pub fn metrics_identity() -> Outcome {
    let refs: Vec<String> = synth_dataset(300, 3).into_iter().map(|r| r.smiles).collect();
    let hyps: Vec<Hypothesis> = refs.iter().map(|s| Hypothesis::checked(s)).collect();
    let r = evaluate(&hyps, &refs, BleuUnit::Token, ExecMode::default()).unwrap();
    let pass = r.bleu == 1.0
        && r.exact == 1.0
        && r.levenshtein == 0.0
        && r.validity == 1.0
        && r.morgan_fts_defined
        && r.morgan_fts == 1.0;
    Outcome::new(
        pass,
        format!(
            "BLEU {:.3} Exact {:.3} Levenshtein {:.3} Validity {:.3} Morgan FTS {:.3} over {} pairs",
            r.bleu, r.exact, r.levenshtein, r.validity, r.morgan_fts, r.total
        ),
    )
}
