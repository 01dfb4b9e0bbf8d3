//! Molecule/description datasets: TSV ingestion and a synthetic generator.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tokenizer::{scan, tokenize, TokenSequence, Vocabulary, UNK_ID};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub cid: String,
    pub smiles: String,
    pub description: String,
}

/// Header names of the cid, SMILES and description columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsvFormat {
    pub cid: String,
    pub smiles: String,
    pub description: String,
}

impl Default for TsvFormat {
    fn default() -> Self {
        TsvFormat {
            cid: "CID".into(),
            smiles: "SMILES".into(),
            description: "description".into(),
        }
    }
}

impl std::str::FromStr for TsvFormat {
    type Err = Error;
    /// `"cid,smiles,description"` column names, in that role order.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        match parts.as_slice() {
            [c, m, d] if !c.is_empty() && !m.is_empty() && !d.is_empty() => Ok(TsvFormat {
                cid: c.to_string(),
                smiles: m.to_string(),
                description: d.to_string(),
            }),
            _ => Err(Error::Config(format!(
                "format must name three columns as cid,smiles,description; got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub records: Vec<DatasetRecord>,
    pub sequences: Vec<TokenSequence>,
    pub vocab: Vocabulary,
    pub dropped: usize,
    pub total: usize,
}

pub fn read_records(r: impl BufRead, format: &TsvFormat) -> Result<Vec<DatasetRecord>> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::Data(e.to_string()))?,
        None => return Err(Error::Header("file is empty".into())),
    };
    let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Header(format!("missing column {name:?} in {header:?}")))
    };
    let (ci, si, di) = (find(&format.cid)?, find(&format.smiles)?, find(&format.description)?);
    let mut out = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Data(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let get = |i: usize| {
            f.get(i)
                .map(|s| s.to_string())
                .ok_or_else(|| Error::Data(format!("line {}: expected {} fields", no + 2, cols.len())))
        };
        out.push(DatasetRecord {
            cid: get(ci)?,
            smiles: get(si)?,
            description: get(di)?,
        });
    }
    Ok(out)
}

/// Tokenizes records, dropping those that do not scan, exceed `n`, or (with
/// a given vocabulary) contain unknown tokens. Without a vocabulary one is
/// built from the accepted records.
pub fn filter_records(
    records: Vec<DatasetRecord>,
    vocab: Option<&Vocabulary>,
    n: usize,
) -> Result<Ingested> {
    let total = records.len();
    let fits = |r: &DatasetRecord| {
        !r.smiles.is_empty()
            && !r.description.trim().is_empty()
            && scan(&r.smiles).is_ok_and(|t| t.len() + 2 <= n)
    };
    let kept: Vec<DatasetRecord> = records.into_iter().filter(fits).collect();
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => Vocabulary::build(kept.iter().map(|r| r.smiles.as_str()))?,
    };
    let mut out = Vec::with_capacity(kept.len());
    let mut seqs = Vec::with_capacity(kept.len());
    for r in kept {
        if let Ok(seq) = tokenize(&r.smiles, &vocab, n) {
            if !seq.payload().contains(&UNK_ID) {
                seqs.push(seq);
                out.push(r);
            }
        }
    }
    let dropped = total - out.len();
    if dropped > 0 {
        log::info!("dropped {dropped} of {total} records");
    }
    Ok(Ingested {
        records: out,
        sequences: seqs,
        vocab,
        dropped,
        total,
    })
}

pub fn ingest_dataset(
    path: &Path,
    vocab: Option<&Vocabulary>,
    n: usize,
    format: &TsvFormat,
) -> Result<Ingested> {
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    let records = read_records(BufReader::new(f), format)?;
    filter_records(records, vocab, n)
}

pub fn write_records(records: &[DatasetRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "CID\tSMILES\tdescription")?;
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.cid, r.smiles, r.description)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ring {
    None,
    Cyclo(usize),
    Phenyl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    Alkane,
    Alcohol,
    Amine,
    Thiol,
    Halide(&'static str),
    Acid,
    Nitrile,
    Ether(usize),
    Ketone(usize),
    Alkene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Spec {
    ring: Ring,
    chain: usize,
    branch: Option<usize>,
    group: Group,
}

const NUMBERS: [&str; 13] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve",
];

impl Spec {
    fn heavy_atoms(&self) -> usize {
        let ring = match self.ring {
            Ring::None => 0,
            Ring::Cyclo(r) => r,
            Ring::Phenyl => 6,
        };
        let group = match self.group {
            Group::Alkane | Group::Alkene => 0,
            Group::Alcohol | Group::Amine | Group::Thiol | Group::Halide(_) => 1,
            Group::Ether(_) | Group::Ketone(_) => 1,
            Group::Nitrile => 2,
            Group::Acid => 3,
        };
        ring + self.chain + usize::from(self.branch.is_some()) + group
    }

    fn smiles(&self) -> String {
        let mut s = String::new();
        match self.ring {
            Ring::None => {}
            Ring::Cyclo(r) => {
                s.push_str("C1");
                s.push_str(&"C".repeat(r - 2));
                s.push_str("C1");
            }
            Ring::Phenyl => s.push_str("c1ccccc1"),
        }
        for i in 1..=self.chain {
            if i == 2 && self.group == Group::Alkene {
                s.push('=');
            }
            s.push('C');
            if self.group == Group::Ketone(i) {
                s.push_str("(=O)");
            }
            if self.branch == Some(i) {
                s.push_str("(C)");
            }
            if self.group == Group::Ether(i) {
                s.push('O');
            }
        }
        s.push_str(match self.group {
            Group::Alcohol => "O",
            Group::Amine => "N",
            Group::Thiol => "S",
            Group::Halide(x) => x,
            Group::Acid => "C(=O)O",
            Group::Nitrile => "C#N",
            _ => "",
        });
        s
    }

    fn description<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let num = NUMBERS[self.chain];
        let group = match self.group {
            Group::Alkane => "an alkane".to_string(),
            Group::Alcohol => "a primary alcohol".to_string(),
            Group::Amine => "a primary amine".to_string(),
            Group::Thiol => "a thiol".to_string(),
            Group::Halide("F") => "a fluoroalkane".to_string(),
            Group::Halide("Cl") => "a chloroalkane".to_string(),
            Group::Halide(_) => "a bromoalkane".to_string(),
            Group::Acid => "a carboxylic acid".to_string(),
            Group::Nitrile => "a nitrile".to_string(),
            Group::Ether(k) => format!("an ether with the oxygen after carbon {}", NUMBERS[k]),
            Group::Ketone(k) => format!("a ketone with the carbonyl on carbon {}", NUMBERS[k]),
            Group::Alkene => "a terminal alkene".to_string(),
        };
        let branch = match self.branch {
            Some(p) => format!(", carrying a methyl branch on carbon {}", NUMBERS[p]),
            None => ", with no branches".to_string(),
        };
        let ring = match self.ring {
            Ring::None => " It contains no ring.".to_string(),
            Ring::Cyclo(r) => format!(
                " A {} ring caps one end of the chain.",
                ["", "", "", "cyclopropyl", "cyclobutyl", "cyclopentyl", "cyclohexyl"][r]
            ),
            Ring::Phenyl => " A phenyl ring caps one end of the chain.".to_string(),
        };
        let lead = match rng.random_range(0..3) {
            0 => format!("The molecule is {group} built on a {num}-carbon chain"),
            1 => format!("This compound is {group} whose main chain has {num} carbon atoms"),
            _ => format!("Described here is {group} with a backbone of {num} carbons"),
        };
        format!("{lead}{branch}.{ring}")
    }
}

fn all_specs() -> Vec<Spec> {
    let rings = [
        Ring::None,
        Ring::Cyclo(3),
        Ring::Cyclo(4),
        Ring::Cyclo(5),
        Ring::Cyclo(6),
        Ring::Phenyl,
    ];
    let mut out = Vec::new();
    for ring in rings {
        for chain in 1..=8 {
            let mut groups = vec![
                Group::Alkane,
                Group::Alcohol,
                Group::Amine,
                Group::Thiol,
                Group::Halide("F"),
                Group::Halide("Cl"),
                Group::Halide("Br"),
                Group::Acid,
                Group::Nitrile,
            ];
            if chain >= 2 {
                groups.push(Group::Alkene);
                groups.extend((1..chain).map(Group::Ether));
            }
            groups.extend((2..chain).map(Group::Ketone));
            for group in groups {
                let branches = std::iter::once(None).chain((2..chain).map(Some));
                for branch in branches {
                    if let (Some(p), Group::Ketone(k)) = (branch, group) {
                        if p == k {
                            continue;
                        }
                    }
                    let spec = Spec {
                        ring,
                        chain,
                        branch,
                        group,
                    };
                    if (3..=12).contains(&spec.heavy_atoms()) {
                        out.push(spec);
                    }
                }
            }
        }
    }
    out
}

/// Number of distinct molecules the synthetic generator can emit.
pub fn synth_space_size() -> usize {
    all_specs().len()
}

/// Deterministic synthetic corpus. Records are distinct until the space of
/// structures is exhausted, after which it is cycled in a fresh order.
pub fn synth_dataset(count: usize, seed: u64) -> Vec<DatasetRecord> {
    let specs = all_specs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut order = specs.clone();
        order.shuffle(&mut rng);
        for spec in order.into_iter().take(count - out.len()) {
            out.push(DatasetRecord {
                cid: format!("synth-{}", out.len() + 1),
                smiles: spec.smiles(),
                description: spec.description(&mut rng),
            });
        }
    }
    out
}
