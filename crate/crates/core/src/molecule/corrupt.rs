use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tokenizer::{TokenClass, TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptParams {
    /// Probability that a sequence is corrupted at all.
    pub p: f64,
    /// Upper bound of the uniform edit count.
    pub max_edits: usize,
}

impl Default for CorruptParams {
    fn default() -> Self {
        CorruptParams {
            p: 0.4,
            max_edits: 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Edit {
    InsertOpen,
    InsertClose,
    InsertDigit,
    DeleteParen,
    DeleteDigit,
}

/// Breaks ring and branch pairing by inserting or deleting parentheses and
/// ring-bond digits. Atom and bond tokens are never touched.
pub fn corrupt<R: Rng + ?Sized>(
    seq: &TokenSequence,
    vocab: &Vocabulary,
    params: &CorruptParams,
    rng: &mut R,
) -> TokenSequence {
    if !rng.random_bool(params.p.clamp(0.0, 1.0)) {
        return seq.clone();
    }
    let n = seq.len();
    let open = vocab.id("(");
    let close = vocab.id(")");
    let digits: Vec<u32> = (1..=9)
        .filter_map(|d| vocab.id(&d.to_string()))
        .collect();
    let mut payload = seq.payload().to_vec();
    let edits = rng.random_range(1..=params.max_edits.max(1));
    for _ in 0..edits {
        let parens: Vec<usize> = positions(&payload, vocab, |c| {
            matches!(c, TokenClass::OpenParen | TokenClass::CloseParen)
        });
        let rings: Vec<usize> = positions(&payload, vocab, |c| c == TokenClass::RingDigit);
        let mut kinds = Vec::with_capacity(5);
        if open.is_some() {
            kinds.push(Edit::InsertOpen);
        }
        if close.is_some() {
            kinds.push(Edit::InsertClose);
        }
        if !digits.is_empty() {
            kinds.push(Edit::InsertDigit);
        }
        if !parens.is_empty() {
            kinds.push(Edit::DeleteParen);
        }
        if !rings.is_empty() {
            kinds.push(Edit::DeleteDigit);
        }
        if kinds.is_empty() {
            break;
        }
        let kind = kinds[rng.random_range(0..kinds.len())];
        let insert = |payload: &mut Vec<u32>, id: u32, rng: &mut R| {
            // An insertion that would overflow n is a no-op.
            if payload.len() + 3 <= n {
                let at = rng.random_range(0..=payload.len());
                payload.insert(at, id);
            }
        };
        match kind {
            Edit::InsertOpen => insert(&mut payload, open.unwrap(), rng),
            Edit::InsertClose => insert(&mut payload, close.unwrap(), rng),
            Edit::InsertDigit => {
                let d = digits[rng.random_range(0..digits.len())];
                insert(&mut payload, d, rng)
            }
            Edit::DeleteParen => {
                payload.remove(parens[rng.random_range(0..parens.len())]);
            }
            Edit::DeleteDigit => {
                payload.remove(rings[rng.random_range(0..rings.len())]);
            }
        }
    }
    TokenSequence::from_payload(&payload, n).expect("length checked on insert")
}

fn positions(payload: &[u32], vocab: &Vocabulary, keep: impl Fn(TokenClass) -> bool) -> Vec<usize> {
    payload
        .iter()
        .enumerate()
        .filter(|(_, &id)| keep(vocab.class(id)))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::tokenize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["C1CCCCC1", "CC(C)O", "C2CC2"]).unwrap()
    }

    #[test]
    fn zero_probability_is_identity() {
        let v = vocab();
        let seq = tokenize("C1CCCCC1", &v, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = CorruptParams {
            p: 0.0,
            max_edits: 3,
        };
        for _ in 0..100 {
            assert_eq!(corrupt(&seq, &v, &params, &mut rng), seq);
        }
    }

    #[test]
    fn only_paren_and_digit_tokens_change() {
        let v = vocab();
        let seq = tokenize("C1CCCCC1", &v, 16).unwrap();
        let params = CorruptParams {
            p: 1.0,
            max_edits: 3,
        };
        let keep = |s: &TokenSequence| -> Vec<u32> {
            s.payload()
                .iter()
                .copied()
                .filter(|&id| {
                    !matches!(
                        v.class(id),
                        TokenClass::OpenParen | TokenClass::CloseParen | TokenClass::RingDigit
                    )
                })
                .collect()
        };
        let mut changed = 0;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = corrupt(&seq, &v, &params, &mut rng);
            assert_eq!(keep(&out), keep(&seq));
            assert_eq!(out.len(), 16);
            changed += usize::from(out != seq);
        }
        assert!(changed > 150);
    }

    #[test]
    fn full_sequences_only_delete() {
        let v = vocab();
        let seq = tokenize("C1CCCCC1", &v, 10).unwrap();
        let params = CorruptParams {
            p: 1.0,
            max_edits: 3,
        };
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = corrupt(&seq, &v, &params, &mut rng);
            assert!(out.effective_len() <= seq.effective_len());
        }
    }
}
