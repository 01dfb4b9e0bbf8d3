//! Molecular graphs parsed from SMILES token sequences.
//!
//! Validity here is a self-contained approximation of toolkit sanitization:
//! ring closures must pair up, parentheses must balance, the token grammar
//! must hold, and every atom must respect a small valence table.

mod corrupt;
mod fingerprint;
mod parse;
mod valence;

use std::fmt;

pub use corrupt::{corrupt, CorruptParams};
pub use fingerprint::{morgan_fingerprint, tanimoto, Fingerprint, DEFAULT_NBITS, DEFAULT_RADIUS};
pub use parse::{parse, parse_smiles, parse_tokens};
pub use valence::{allowed_valences, implicit_hydrogens};

use crate::tokenizer::{TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Quadruple,
    Aromatic,
}

impl BondOrder {
    /// Bond order times two, so aromatic bonds (1.5) stay integral.
    pub fn twice(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Quadruple => 8,
            BondOrder::Aromatic => 3,
        }
    }

    pub(crate) fn code(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: String,
    pub aromatic: bool,
    pub charge: i32,
    /// Explicit hydrogens; always zero for organic-subset atoms.
    pub hydrogens: u32,
    /// Whether the atom was written in brackets (no implicit hydrogens).
    pub bracket: bool,
    /// Token position in the sequence (`[SOS]` is position 0).
    pub token: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolecularGraph {
    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = (usize, BondOrder)> + '_ {
        self.bonds.iter().filter_map(move |b| {
            if b.a == atom {
                Some((b.b, b.order))
            } else if b.b == atom {
                Some((b.a, b.order))
            } else {
                None
            }
        })
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.neighbors(atom).count()
    }

    /// Sum of bond orders at `atom`, doubled.
    pub fn bond_order_sum2(&self, atom: usize) -> u32 {
        self.neighbors(atom).map(|(_, o)| o.twice()).sum()
    }

    /// Rounded valence contributed by bonds (aromatic 1.5, halves round down).
    pub fn bond_valence(&self, atom: usize) -> u32 {
        self.bond_order_sum2(atom) / 2
    }

    pub fn total_hydrogens(&self, atom: usize) -> u32 {
        let a = &self.atoms[atom];
        if a.bracket {
            a.hydrogens
        } else {
            implicit_hydrogens(a, self.bond_valence(atom))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiagnosticKind {
    UnclosedRing,
    UnmatchedParenthesis,
    ValenceError,
    SyntaxError,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagnosticKind::UnclosedRing => "UnclosedRing",
            DiagnosticKind::UnmatchedParenthesis => "UnmatchedParenthesis",
            DiagnosticKind::ValenceError => "ValenceError",
            DiagnosticKind::SyntaxError => "SyntaxError",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub pos: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidityReport {
    pub valid: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidityReport {
    pub fn from_diagnostics(diagnostics: Vec<Diagnostic>) -> Self {
        ValidityReport {
            valid: diagnostics.is_empty(),
            diagnostics,
        }
    }

    pub fn has(&self, kind: DiagnosticKind) -> bool {
        self.diagnostics.iter().any(|d| d.kind == kind)
    }

    /// Line-oriented `POS KIND MESSAGE` rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for d in &self.diagnostics {
            out.push_str(&format!("{} {} {}\n", d.pos, d.kind, d.message));
        }
        out
    }
}

/// Parses and valence-checks a token sequence.
pub fn validate(seq: &TokenSequence, vocab: &Vocabulary) -> ValidityReport {
    let toks = crate::tokenizer::payload_tokens(seq, vocab);
    validate_tokens(&toks)
}

pub fn validate_tokens(toks: &[&str]) -> ValidityReport {
    match parse_tokens(toks) {
        Ok(g) => ValidityReport::from_diagnostics(valence::check(&g)),
        Err(report) => report,
    }
}

/// Validates a raw SMILES string; scan failures are reported as syntax errors.
pub fn validate_smiles(smiles: &str) -> ValidityReport {
    match crate::tokenizer::scan(smiles) {
        Ok(toks) => validate_tokens(&toks),
        Err(e) => ValidityReport::from_diagnostics(vec![Diagnostic {
            kind: DiagnosticKind::SyntaxError,
            pos: 0,
            message: e.to_string(),
        }]),
    }
}
