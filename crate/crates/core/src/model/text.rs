use std::collections::HashMap;

use crate::error::{Error, Result};

pub const TEXT_PAD_ID: u32 = 0;
pub const TEXT_UNK_ID: u32 = 1;

/// Lowercased words and single punctuation characters.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '-' && !cur.is_empty() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Word inventory of the text encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextVocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl TextVocab {
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(descriptions: I) -> Self {
        let mut v = Self::from_words(vec!["[PAD]".into(), "[UNK]".into()]).unwrap();
        for d in descriptions {
            for w in split_words(d) {
                if !v.index.contains_key(&w) {
                    v.index.insert(w.clone(), v.words.len() as u32);
                    v.words.push(w);
                }
            }
        }
        v
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[0] != "[PAD]" || words[1] != "[UNK]" {
            return Err(Error::Format("text vocabulary must start with [PAD], [UNK]".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate word {w:?} in text vocabulary")));
            }
        }
        Ok(TextVocab { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Word ids of `text`, truncated to `m_max`.
    pub fn encode(&self, text: &str, m_max: usize) -> Result<Vec<u32>> {
        let ids: Vec<u32> = split_words(text)
            .into_iter()
            .take(m_max)
            .map(|w| self.index.get(&w).copied().unwrap_or(TEXT_UNK_ID))
            .collect();
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(ids)
    }
}

/// Descriptions of a batch padded to a common length `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBatch {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub m: usize,
}

impl TextBatch {
    pub fn new(items: &[&[u32]]) -> Self {
        Self::padded(items, 0)
    }

    /// Pads to at least `min_m` columns.
    pub fn padded(items: &[&[u32]], min_m: usize) -> Self {
        let m = items.iter().map(|i| i.len()).max().unwrap_or(0).max(min_m).max(1);
        let mut ids = Vec::with_capacity(items.len() * m);
        let mut mask = Vec::with_capacity(items.len() * m);
        for item in items {
            ids.extend_from_slice(item);
            mask.extend(std::iter::repeat_n(true, item.len()));
            ids.extend(std::iter::repeat_n(TEXT_PAD_ID, m - item.len()));
            mask.extend(std::iter::repeat_n(false, m - item.len()));
        }
        TextBatch { ids, mask, m }
    }

    pub fn batch(&self) -> usize {
        self.ids.len() / self.m
    }
}
