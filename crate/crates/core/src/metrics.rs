//! BLEU, Levenshtein, exact match, validity and fingerprint similarity.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molecule::{
    morgan_fingerprint, parse_smiles, tanimoto, validate_smiles, DEFAULT_NBITS, DEFAULT_RADIUS,
};
use crate::parallel::{self, ExecMode};
use crate::tokenizer::scan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuUnit {
    /// SMILES tokens as produced by the tokenizer.
    #[default]
    Token,
    Char,
}

/// Splits a SMILES string into BLEU units. Strings that do not scan fall
/// back to characters.
pub fn units(smiles: &str, unit: BleuUnit) -> Vec<String> {
    let chars = || smiles.chars().map(String::from).collect();
    match unit {
        BleuUnit::Char => chars(),
        BleuUnit::Token => scan(smiles.trim())
            .map(|t| t.into_iter().map(String::from).collect())
            .unwrap_or_else(|_| chars()),
    }
}

/// Modified n-gram precisions (1..=4) and brevity penalty of a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuParts {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuParts {
    /// `matches / totals`, with an empty denominator counted as 0.
    pub fn precision(&self, n: usize) -> f64 {
        if self.totals[n - 1] == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / self.totals[n - 1] as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    pub fn score(&self) -> f64 {
        let mut log_sum = 0.0;
        for n in 1..=4 {
            let p = self.precision(n);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln() / 4.0;
        }
        self.brevity_penalty() * log_sum.exp()
    }

    fn add(&mut self, o: &BleuParts) {
        for i in 0..4 {
            self.matches[i] += o.matches[i];
            self.totals[i] += o.totals[i];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn bleu_pair_parts(hyp: &[String], reference: &[String]) -> BleuParts {
    let mut parts = BleuParts {
        matches: [0; 4],
        totals: [0; 4],
        hyp_len: hyp.len(),
        ref_len: reference.len(),
    };
    for n in 1..=4 {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        parts.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        parts.matches[n - 1] = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    parts
}

pub fn bleu_parts(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<BleuParts> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch(hyps.len(), refs.len()));
    }
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = BleuParts {
        matches: [0; 4],
        totals: [0; 4],
        hyp_len: 0,
        ref_len: 0,
    };
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&bleu_pair_parts(h, r));
    }
    Ok(total)
}

/// Corpus BLEU-4 with uniform weights and no smoothing.
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    Ok(bleu_parts(hyps, refs)?.score())
}

/// Character edit distance with unit costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn exact_match(hyp: &str, reference: &str) -> bool {
    hyp.trim() == reference.trim()
}

/// A generated molecule to score.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub smiles: String,
    pub valid: bool,
}

impl Hypothesis {
    /// Validity judged by the in-house validator.
    pub fn checked(smiles: &str) -> Self {
        Hypothesis {
            smiles: smiles.to_string(),
            valid: validate_smiles(smiles).valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub levenshtein: f64,
    pub exact: f64,
    pub validity: f64,
    pub morgan_fts: f64,
    /// False when no valid pair exists and `morgan_fts` is a placeholder 0.
    pub morgan_fts_defined: bool,
    pub total: usize,
    pub valid: usize,
    pub exact_count: usize,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>8}", "metric", "value")?;
        writeln!(f, "{:<12} {:>8.3}", "BLEU", self.bleu)?;
        writeln!(f, "{:<12} {:>8.3}", "Exact", self.exact)?;
        writeln!(f, "{:<12} {:>8.3}", "Levenshtein", self.levenshtein)?;
        writeln!(f, "{:<12} {:>8.3}", "Validity", self.validity)?;
        let fts = if self.morgan_fts_defined {
            format!("{:.3}", self.morgan_fts)
        } else {
            "n/a".to_string()
        };
        writeln!(f, "{:<12} {:>8}", "Morgan FTS", fts)?;
        write!(
            f,
            "{} pairs, {} valid, {} exact",
            self.total, self.valid, self.exact_count
        )
    }
}

struct PairStats {
    bleu: BleuParts,
    lev: usize,
    exact: bool,
    fts: Option<f64>,
}

pub fn evaluate(
    hyps: &[Hypothesis],
    refs: &[String],
    unit: BleuUnit,
    exec: ExecMode,
) -> Result<EvalReport> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch(hyps.len(), refs.len()));
    }
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let pairs: Vec<(&Hypothesis, &String)> = hyps.iter().zip(refs).collect();
    let stats = parallel::map(exec, &pairs, |_, (h, r)| {
        let fts = if h.valid {
            match (parse_smiles(&h.smiles), parse_smiles(r)) {
                (Ok(gh), Ok(gr)) => {
                    let a = morgan_fingerprint(&gh, DEFAULT_RADIUS, DEFAULT_NBITS);
                    let b = morgan_fingerprint(&gr, DEFAULT_RADIUS, DEFAULT_NBITS);
                    tanimoto(&a, &b).ok()
                }
                _ => None,
            }
        } else {
            None
        };
        PairStats {
            bleu: bleu_pair_parts(&units(&h.smiles, unit), &units(r, unit)),
            lev: levenshtein(&h.smiles, r),
            exact: exact_match(&h.smiles, r),
            fts,
        }
    });
    let n = hyps.len();
    let mut parts = stats[0].bleu;
    for s in &stats[1..] {
        parts.add(&s.bleu);
    }
    let fts: Vec<f64> = stats.iter().filter_map(|s| s.fts).collect();
    let valid = hyps.iter().filter(|h| h.valid).count();
    let exact_count = stats.iter().filter(|s| s.exact).count();
    Ok(EvalReport {
        bleu: parts.score(),
        levenshtein: stats.iter().map(|s| s.lev as f64).sum::<f64>() / n as f64,
        exact: exact_count as f64 / n as f64,
        validity: valid as f64 / n as f64,
        morgan_fts: if fts.is_empty() {
            0.0
        } else {
            fts.iter().sum::<f64>() / fts.len() as f64
        },
        morgan_fts_defined: !fts.is_empty(),
        total: n,
        valid,
        exact_count,
    })
}
