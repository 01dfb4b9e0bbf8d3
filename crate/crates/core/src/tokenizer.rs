//! SMILES tokenizer.
//!
//! Atoms and bracket atom groups are single tokens, as are two-letter
//! halogens, aromatic atoms, `%nn` ring closures, bonds, ring digits,
//! parentheses and the dot separator. Scanning is maximal-munch and
//! left to right.
//!
//! Every [`TokenSequence`] is padded to a fixed length `n` with the layout
//! `[SOS] payload.. [EOS] [PAD]..`.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const SOS: &str = "[SOS]";
pub const EOS: &str = "[EOS]";
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";

pub const SOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const PAD_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

const SPECIALS: [&str; 4] = [SOS, EOS, PAD, UNK];

/// Broad class of a SMILES token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenClass {
    Atom,
    Bond,
    RingDigit,
    OpenParen,
    CloseParen,
    Dot,
    Special,
}

pub fn token_class(tok: &str) -> TokenClass {
    match tok {
        "(" => TokenClass::OpenParen,
        ")" => TokenClass::CloseParen,
        "." => TokenClass::Dot,
        "-" | "=" | "#" | "$" | ":" | "/" | "\\" => TokenClass::Bond,
        t if SPECIALS.contains(&t) => TokenClass::Special,
        t if t.starts_with('%') => TokenClass::RingDigit,
        t if t.len() == 1 && t.as_bytes()[0].is_ascii_digit() => TokenClass::RingDigit,
        _ => TokenClass::Atom,
    }
}

/// Splits a SMILES string into token strings without consulting a vocabulary.
pub fn scan(smiles: &str) -> Result<Vec<&str>> {
    let bytes = smiles.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let len = match c {
            b'[' => {
                let close = bytes[i + 1..]
                    .iter()
                    .position(|&b| b == b']' || b == b'[')
                    .map(|p| p + i + 1);
                match close {
                    Some(j) if bytes[j] == b']' => {
                        let tok = &smiles[i..=j];
                        if SPECIALS.contains(&tok) {
                            return Err(Error::Tokenize {
                                pos: i,
                                msg: format!("reserved token {tok} inside SMILES"),
                            });
                        }
                        if j == i + 1 {
                            return Err(Error::Tokenize {
                                pos: i,
                                msg: "empty bracket atom".into(),
                            });
                        }
                        j + 1 - i
                    }
                    _ => {
                        return Err(Error::Tokenize {
                            pos: i,
                            msg: "unterminated bracket atom".into(),
                        })
                    }
                }
            }
            b'C' if bytes.get(i + 1) == Some(&b'l') => 2,
            b'B' if bytes.get(i + 1) == Some(&b'r') => 2,
            b'%' => {
                let ok = bytes.len() >= i + 3
                    && bytes[i + 1].is_ascii_digit()
                    && bytes[i + 2].is_ascii_digit();
                if !ok {
                    return Err(Error::Tokenize {
                        pos: i,
                        msg: "'%' must be followed by two digits".into(),
                    });
                }
                3
            }
            b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I' | b'*' => 1,
            b'b' | b'c' | b'n' | b'o' | b's' | b'p' => 1,
            b'0'..=b'9' => 1,
            b'-' | b'=' | b'#' | b'$' | b':' | b'/' | b'\\' => 1,
            b'(' | b')' | b'.' => 1,
            _ => {
                let ch = smiles[i..].chars().next().unwrap_or('?');
                return Err(Error::Tokenize {
                    pos: i,
                    msg: format!("illegal character {ch:?}"),
                });
            }
        };
        out.push(&smiles[i..i + len]);
        i += len;
    }
    Ok(out)
}

/// Token inventory. Ids are contiguous; specials occupy ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::specials_only()
    }
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            v.push(s);
        }
        v
    }

    /// Builds a vocabulary from a corpus: specials first, then tokens in
    /// first-seen order.
    pub fn build<I, S>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::specials_only();
        for smiles in corpus {
            for tok in scan(smiles.as_ref())? {
                v.push(tok);
            }
        }
        Ok(v)
    }

    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 4 || tokens[..4].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Format(
                "vocabulary must start with [SOS], [EOS], [PAD], [UNK]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    fn push(&mut self, tok: &str) {
        if !self.index.contains_key(tok) {
            self.index.insert(tok.to_string(), self.tokens.len() as u32);
            self.tokens.push(tok.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, tok: &str) -> Option<u32> {
        self.index.get(tok).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn class(&self, id: u32) -> TokenClass {
        self.token(id).map(token_class).unwrap_or(TokenClass::Special)
    }

    /// One token per line, line number = id.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::Format(e.to_string()))?;
            tokens.push(line.trim_end_matches('\r').to_string());
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Fixed-length token id sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
    effective_len: usize,
}

impl TokenSequence {
    /// Builds a padded sequence around `payload`.
    pub fn from_payload(payload: &[u32], n: usize) -> Result<Self> {
        let needed = payload.len() + 2;
        if needed > n {
            return Err(Error::Length { needed, max: n });
        }
        if let Some(&bad) = payload
            .iter()
            .find(|&&id| id == SOS_ID || id == EOS_ID || id == PAD_ID)
        {
            return Err(Error::Format(format!(
                "special token id {bad} inside payload"
            )));
        }
        let mut ids = Vec::with_capacity(n);
        ids.push(SOS_ID);
        ids.extend_from_slice(payload);
        ids.push(EOS_ID);
        ids.resize(n, PAD_ID);
        Ok(TokenSequence {
            ids,
            effective_len: needed,
        })
    }

    /// Validates the `[SOS] .. [EOS] [PAD]..` layout of raw ids.
    pub fn from_ids(ids: Vec<u32>) -> Result<Self> {
        if ids.first() != Some(&SOS_ID) {
            return Err(Error::Format("sequence must start with [SOS]".into()));
        }
        let eos = ids
            .iter()
            .position(|&i| i == EOS_ID)
            .ok_or_else(|| Error::Format("sequence has no [EOS]".into()))?;
        if let Some(p) = ids[1..eos]
            .iter()
            .position(|&i| i == PAD_ID || i == SOS_ID)
        {
            return Err(Error::Format(format!(
                "special token before [EOS] at position {}",
                p + 1
            )));
        }
        if let Some(p) = ids[eos + 1..].iter().position(|&i| i != PAD_ID) {
            return Err(Error::Format(format!(
                "non-[PAD] token after [EOS] at position {}",
                eos + 1 + p
            )));
        }
        Ok(TokenSequence {
            ids,
            effective_len: eos + 1,
        })
    }

    /// Forces arbitrary ids (e.g. rounded argmaxes) into a valid layout.
    ///
    /// The first `[EOS]` after position 0 ends the payload; stray `[SOS]`
    /// and `[PAD]` ids inside the payload are dropped. Without any `[EOS]`
    /// the payload runs to position `n - 2`.
    pub fn coerce(raw: &[u32]) -> Self {
        let n = raw.len().max(2);
        let end = raw
            .iter()
            .skip(1)
            .position(|&i| i == EOS_ID)
            .map(|p| p + 1)
            .unwrap_or(raw.len());
        let payload: Vec<u32> = raw
            .get(1..end)
            .unwrap_or(&[])
            .iter()
            .copied()
            .filter(|&i| i != SOS_ID && i != PAD_ID && i != EOS_ID)
            .take(n - 2)
            .collect();
        Self::from_payload(&payload, n).expect("payload bounded by n - 2")
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn effective_len(&self) -> usize {
        self.effective_len
    }

    /// Ids strictly between `[SOS]` and `[EOS]`.
    pub fn payload(&self) -> &[u32] {
        &self.ids[1..self.effective_len - 1]
    }
}

pub fn tokenize(smiles: &str, vocab: &Vocabulary, n: usize) -> Result<TokenSequence> {
    if !smiles.is_ascii() {
        let pos = smiles.bytes().position(|b| !b.is_ascii()).unwrap_or(0);
        return Err(Error::Tokenize {
            pos,
            msg: "non-ASCII input".into(),
        });
    }
    let payload: Vec<u32> = scan(smiles)?
        .into_iter()
        .map(|t| vocab.id(t).unwrap_or(UNK_ID))
        .collect();
    TokenSequence::from_payload(&payload, n)
}

pub fn detokenize(seq: &TokenSequence, vocab: &Vocabulary) -> Result<String> {
    // Re-check the layout; sequences can be built from arbitrary ids.
    let seq = TokenSequence::from_ids(seq.ids.clone())?;
    let mut out = String::new();
    for &id in seq.payload() {
        let tok = vocab.token(id).ok_or(Error::IdOutOfRange {
            id: id as usize,
            size: vocab.len(),
        })?;
        out.push_str(tok);
    }
    Ok(out)
}

/// Token strings of a sequence's payload.
pub fn payload_tokens<'v>(seq: &TokenSequence, vocab: &'v Vocabulary) -> Vec<&'v str> {
    seq.payload()
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(seq: &TokenSequence, v: &Vocabulary) -> Vec<String> {
        seq.ids()
            .iter()
            .map(|&i| v.token(i).unwrap().to_string())
            .collect()
    }

    #[test]
    fn amino_acid_example() {
        let s = "C(C(=O)O)[NH3+]";
        let v = Vocabulary::build([s]).unwrap();
        let seq = tokenize(s, &v, 16).unwrap();
        let got = toks(&seq, &v);
        let want = [
            "[SOS]", "C", "(", "C", "(", "=", "O", ")", "O", ")", "[NH3+]", "[EOS]", "[PAD]",
            "[PAD]", "[PAD]", "[PAD]",
        ];
        assert_eq!(got, want);
        for t in ["[SOS]", "[EOS]", "[PAD]", "[UNK]", "C", "(", ")", "=", "O", "[NH3+]"] {
            assert!(v.id(t).is_some(), "{t}");
        }
        assert_eq!(detokenize(&seq, &v).unwrap(), s);
    }

    #[test]
    fn empty_corpus_has_only_specials() {
        let v = Vocabulary::build(Vec::<&str>::new()).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id(SOS), Some(SOS_ID));
        assert_eq!(v.id(UNK), Some(UNK_ID));
    }

    #[test]
    fn halogen_and_bracket_munch() {
        assert_eq!(scan("CCl").unwrap(), ["C", "Cl"]);
        assert_eq!(scan("[Sc]C").unwrap(), ["[Sc]", "C"]);
        assert_eq!(scan("BrC%12CC%12").unwrap(), ["Br", "C", "%12", "C", "C", "%12"]);
        assert_eq!(scan("c1ccccc1").unwrap(), ["c", "1", "c", "c", "c", "c", "c", "1"]);
        assert_eq!(scan("C/C=C\\C").unwrap(), ["C", "/", "C", "=", "C", "\\", "C"]);
        assert_eq!(scan("[C@@H](N)O").unwrap(), ["[C@@H]", "(", "N", ")", "O"]);
    }

    #[test]
    fn scan_errors() {
        assert!(matches!(scan("C[NH3+"), Err(Error::Tokenize { pos: 1, .. })));
        assert!(matches!(scan("CXC"), Err(Error::Tokenize { pos: 1, .. })));
        assert!(matches!(scan("C%1"), Err(Error::Tokenize { .. })));
        assert!(matches!(scan("C[]"), Err(Error::Tokenize { .. })));
        assert!(matches!(scan("C[PAD]"), Err(Error::Tokenize { .. })));
        assert!(matches!(scan("C@C"), Err(Error::Tokenize { .. })));
    }

    #[test]
    fn too_long_is_rejected() {
        let v = Vocabulary::build(["CCCC"]).unwrap();
        assert!(matches!(
            tokenize("CCCC", &v, 5),
            Err(Error::Length { needed: 6, max: 5 })
        ));
        assert!(tokenize("CCCC", &v, 6).is_ok());
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = Vocabulary::build(["CC"]).unwrap();
        let seq = tokenize("CO", &v, 8).unwrap();
        assert_eq!(seq.payload(), &[v.id("C").unwrap(), UNK_ID]);
    }

    #[test]
    fn detokenize_empty_and_malformed() {
        let v = Vocabulary::specials_only();
        let empty = TokenSequence::from_payload(&[], 6).unwrap();
        assert_eq!(detokenize(&empty, &v).unwrap(), "");
        assert!(TokenSequence::from_ids(vec![SOS_ID, PAD_ID, EOS_ID, PAD_ID]).is_err());
        assert!(TokenSequence::from_ids(vec![SOS_ID, EOS_ID, 5, PAD_ID]).is_err());
        assert!(TokenSequence::from_ids(vec![EOS_ID, PAD_ID]).is_err());
    }

    #[test]
    fn coerce_layout() {
        let seq = TokenSequence::coerce(&[7, 5, PAD_ID, 6, EOS_ID, 9, EOS_ID, 4]);
        assert_eq!(seq.ids(), &[SOS_ID, 5, 6, EOS_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]);
        let none = TokenSequence::coerce(&[5, 5, 5, 5]);
        assert_eq!(none.ids(), &[SOS_ID, 5, 5, EOS_ID]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocabulary::build(["C(C(=O)O)[NH3+]", "c1ccccc1Cl"]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let back = Vocabulary::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, v);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("[SOS]\n[EOS]\n[PAD]\n[UNK]\n"));
    }
}
