use std::collections::BTreeMap;

use super::{Atom, Bond, BondOrder, Diagnostic, DiagnosticKind, MolecularGraph, ValidityReport};
use crate::tokenizer::{payload_tokens, token_class, TokenClass, TokenSequence, Vocabulary};

/// Parses a token sequence into a graph, or reports why it cannot be parsed.
///
/// Diagnostic positions index the full sequence, so `[SOS]` is position 0
/// and the first payload token is position 1.
pub fn parse(seq: &TokenSequence, vocab: &Vocabulary) -> Result<MolecularGraph, ValidityReport> {
    parse_tokens(&payload_tokens(seq, vocab))
}

pub fn parse_smiles(smiles: &str) -> Result<MolecularGraph, ValidityReport> {
    match crate::tokenizer::scan(smiles) {
        Ok(toks) => parse_tokens(&toks),
        Err(e) => Err(ValidityReport::from_diagnostics(vec![Diagnostic {
            kind: DiagnosticKind::SyntaxError,
            pos: 0,
            message: e.to_string(),
        }])),
    }
}

struct Pending {
    order: BondOrder,
    pos: usize,
}

struct OpenRing {
    atom: usize,
    order: Option<BondOrder>,
    pos: usize,
}

#[derive(Default)]
struct Parser {
    graph: MolecularGraph,
    diags: Vec<Diagnostic>,
    prev: Option<usize>,
    pending: Option<Pending>,
    expect_atom: bool,
    after_branch: bool,
    branches: Vec<(usize, usize)>,
    rings: BTreeMap<u32, OpenRing>,
}

impl Parser {
    fn error(&mut self, kind: DiagnosticKind, pos: usize, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            kind,
            pos,
            message: message.into(),
        });
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.graph.atoms[a].aromatic && self.graph.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn atom(&mut self, tok: &str, pos: usize) {
        let atom = match parse_atom(tok, pos) {
            Ok(a) => a,
            Err(msg) => {
                self.error(DiagnosticKind::SyntaxError, pos, msg);
                // Keep going with a wildcard so later diagnostics stay meaningful.
                Atom {
                    element: "*".into(),
                    aromatic: false,
                    charge: 0,
                    hydrogens: 0,
                    bracket: true,
                    token: pos,
                }
            }
        };
        let idx = self.graph.atoms.len();
        self.graph.atoms.push(atom);
        let pending = self.pending.take();
        if let Some(p) = self.prev {
            let order = pending
                .map(|b| b.order)
                .unwrap_or_else(|| self.default_order(p, idx));
            self.graph.bonds.push(Bond {
                a: p,
                b: idx,
                order,
            });
        }
        self.prev = Some(idx);
        self.expect_atom = false;
        self.after_branch = false;
    }

    fn bond(&mut self, tok: &str, pos: usize) {
        if self.prev.is_none() {
            self.error(DiagnosticKind::SyntaxError, pos, "bond without a preceding atom");
            return;
        }
        if self.pending.is_some() {
            self.error(DiagnosticKind::SyntaxError, pos, "two consecutive bonds");
            return;
        }
        let order = match tok {
            "=" => BondOrder::Double,
            "#" => BondOrder::Triple,
            "$" => BondOrder::Quadruple,
            ":" => BondOrder::Aromatic,
            _ => BondOrder::Single,
        };
        self.pending = Some(Pending { order, pos });
    }

    fn open_branch(&mut self, pos: usize) {
        let Some(root) = self.prev else {
            self.error(DiagnosticKind::SyntaxError, pos, "branch without a preceding atom");
            return;
        };
        if self.expect_atom {
            self.error(DiagnosticKind::SyntaxError, pos, "branch must start with an atom");
            return;
        }
        if let Some(p) = self.pending.take() {
            self.error(DiagnosticKind::SyntaxError, p.pos, "bond before a branch");
        }
        self.branches.push((root, pos));
        self.expect_atom = true;
        self.after_branch = false;
    }

    fn close_branch(&mut self, pos: usize) {
        let Some((root, _)) = self.branches.pop() else {
            self.error(
                DiagnosticKind::UnmatchedParenthesis,
                pos,
                "')' without matching '('",
            );
            return;
        };
        if self.expect_atom {
            self.error(DiagnosticKind::SyntaxError, pos, "empty branch");
        }
        if let Some(p) = self.pending.take() {
            self.error(DiagnosticKind::SyntaxError, p.pos, "dangling bond at branch end");
        }
        self.prev = Some(root);
        self.expect_atom = false;
        self.after_branch = true;
    }

    fn ring(&mut self, tok: &str, pos: usize) {
        let num: u32 = tok.trim_start_matches('%').parse().unwrap_or(0);
        let prev = match self.prev {
            Some(p) if !self.expect_atom => p,
            _ => {
                self.error(DiagnosticKind::SyntaxError, pos, "ring bond without an atom");
                self.pending = None;
                return;
            }
        };
        if self.after_branch {
            self.error(DiagnosticKind::SyntaxError, pos, "ring bond after a branch");
            self.pending = None;
            return;
        }
        let here = self.pending.take().map(|p| p.order);
        match self.rings.remove(&num) {
            None => {
                self.rings.insert(
                    num,
                    OpenRing {
                        atom: prev,
                        order: here,
                        pos,
                    },
                );
            }
            Some(open) => {
                if open.atom == prev {
                    self.error(DiagnosticKind::SyntaxError, pos, "ring bond to the same atom");
                    return;
                }
                let order = match (open.order, here) {
                    (Some(a), Some(b)) if a != b => {
                        self.error(
                            DiagnosticKind::SyntaxError,
                            pos,
                            "conflicting ring bond orders",
                        );
                        return;
                    }
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.default_order(open.atom, prev),
                };
                let dup = self.graph.bonds.iter().any(|b| {
                    (b.a == open.atom && b.b == prev) || (b.a == prev && b.b == open.atom)
                });
                if dup {
                    self.error(
                        DiagnosticKind::SyntaxError,
                        pos,
                        format!("ring bond {num} duplicates an existing bond"),
                    );
                    return;
                }
                self.graph.bonds.push(Bond {
                    a: open.atom,
                    b: prev,
                    order,
                });
            }
        }
    }

    fn dot(&mut self, pos: usize) {
        if self.prev.is_none() || self.expect_atom {
            self.error(DiagnosticKind::SyntaxError, pos, "'.' without a preceding atom");
        }
        if let Some(p) = self.pending.take() {
            self.error(DiagnosticKind::SyntaxError, p.pos, "dangling bond before '.'");
        }
        self.prev = None;
        self.expect_atom = true;
        self.after_branch = false;
    }

    fn finish(mut self, len: usize) -> Result<MolecularGraph, ValidityReport> {
        if let Some(p) = self.pending.take() {
            self.error(DiagnosticKind::SyntaxError, p.pos, "dangling bond at end");
        }
        if self.expect_atom && self.branches.is_empty() && !self.graph.atoms.is_empty() {
            self.error(DiagnosticKind::SyntaxError, len, "sequence ends after '.'");
        }
        for (_, pos) in std::mem::take(&mut self.branches) {
            self.error(
                DiagnosticKind::UnmatchedParenthesis,
                pos,
                "'(' is never closed",
            );
        }
        for (num, open) in std::mem::take(&mut self.rings) {
            self.error(
                DiagnosticKind::UnclosedRing,
                open.pos,
                format!("ring bond {num} is never closed"),
            );
        }
        if self.graph.atoms.is_empty() {
            self.error(DiagnosticKind::SyntaxError, len.max(1), "no atoms");
        }
        if self.diags.is_empty() {
            Ok(self.graph)
        } else {
            self.diags.sort_by_key(|d| d.pos);
            Err(ValidityReport::from_diagnostics(self.diags))
        }
    }
}

/// Parses payload token strings (position 1 is the first token).
pub fn parse_tokens(toks: &[&str]) -> Result<MolecularGraph, ValidityReport> {
    let mut p = Parser {
        expect_atom: true,
        ..Default::default()
    };
    for (i, &tok) in toks.iter().enumerate() {
        let pos = i + 1;
        match token_class(tok) {
            TokenClass::Atom => p.atom(tok, pos),
            TokenClass::Bond => p.bond(tok, pos),
            TokenClass::RingDigit => p.ring(tok, pos),
            TokenClass::OpenParen => p.open_branch(pos),
            TokenClass::CloseParen => p.close_branch(pos),
            TokenClass::Dot => p.dot(pos),
            TokenClass::Special => {
                p.error(DiagnosticKind::SyntaxError, pos, format!("unexpected token {tok}"))
            }
        }
    }
    p.finish(toks.len() + 1)
}

fn parse_atom(tok: &str, pos: usize) -> Result<Atom, String> {
    let organic = |element: &str, aromatic: bool| Atom {
        element: element.to_string(),
        aromatic,
        charge: 0,
        hydrogens: 0,
        bracket: false,
        token: pos,
    };
    match tok {
        "B" | "C" | "N" | "O" | "P" | "S" | "F" | "Cl" | "Br" | "I" | "*" => {
            return Ok(organic(tok, false))
        }
        "b" | "c" | "n" | "o" | "p" | "s" => return Ok(organic(&tok.to_uppercase(), true)),
        _ => {}
    }
    let inner = tok
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| format!("unrecognized atom token {tok}"))?;
    parse_bracket(inner, pos).map_err(|m| format!("bad bracket atom {tok}: {m}"))
}

fn parse_bracket(s: &str, pos: usize) -> Result<Atom, String> {
    let b = s.as_bytes();
    let mut i = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let (element, aromatic) = {
        let rest = &s[i..];
        if rest.starts_with("se") || rest.starts_with("as") || rest.starts_with("te") {
            i += 2;
            (rest[..1].to_uppercase() + &rest[1..2], true)
        } else if let Some(c @ (b'b' | b'c' | b'n' | b'o' | b'p' | b's')) = b.get(i) {
            i += 1;
            ((*c as char).to_ascii_uppercase().to_string(), true)
        } else if b.get(i) == Some(&b'*') {
            i += 1;
            ("*".to_string(), false)
        } else if b.get(i).is_some_and(u8::is_ascii_uppercase) {
            let start = i;
            i += 1;
            if b.get(i).is_some_and(u8::is_ascii_lowercase) {
                i += 1;
            }
            (s[start..i].to_string(), false)
        } else {
            return Err("missing element symbol".into());
        }
    };
    if b.get(i) == Some(&b'@') {
        i += 1;
        if b.get(i) == Some(&b'@') {
            i += 1;
        } else if b.get(i).is_some_and(u8::is_ascii_uppercase)
            && b.get(i + 1).is_some_and(u8::is_ascii_uppercase)
        {
            i += 2;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    let mut hydrogens = 0;
    if b.get(i) == Some(&b'H') {
        i += 1;
        hydrogens = 1;
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i > start {
            hydrogens = s[start..i].parse().map_err(|_| "bad hydrogen count")?;
        }
    }
    let mut charge: i32 = 0;
    if let Some(&sign @ (b'+' | b'-')) = b.get(i) {
        let unit = if sign == b'+' { 1 } else { -1 };
        i += 1;
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i > start {
            let mag: i32 = s[start..i].parse().map_err(|_| "bad charge")?;
            charge = unit * mag;
        } else {
            charge = unit;
            while b.get(i) == Some(&sign) {
                charge += unit;
                i += 1;
            }
        }
    }
    if b.get(i) == Some(&b':') {
        i += 1;
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return Err("empty atom class".into());
        }
    }
    if i != b.len() {
        return Err(format!("unexpected {:?}", &s[i..]));
    }
    Ok(Atom {
        element,
        aromatic,
        charge,
        hydrogens,
        bracket: true,
        token: pos,
    })
}
