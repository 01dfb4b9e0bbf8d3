//! Command-line interface. `run_cli` returns the process exit code:
//! 0 on success, 1 on usage errors, 2 on data or model errors.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::{Preset, RunConfig};
use crate::data::{ingest_dataset, synth_dataset, write_records, TsvFormat};
use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, BleuUnit, Hypothesis};
use crate::model::TextVocab;
use crate::molecule::{corrupt, validate_smiles, CorruptParams};
use crate::parallel::ExecMode;
use crate::sampler::{results_row, Generator, Model, RESULTS_HEADER};
use crate::tokenizer::{detokenize, scan, tokenize, Vocabulary, SOS, EOS, PAD, UNK};
use crate::train::{derive_seed, write_log, Example, Phase, Trainer};

#[derive(Parser, Debug)]
#[command(name = "smidiff", version, about = "Text-conditioned SMILES diffusion")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the tokens of each SMILES line read from stdin.
    Tokenize {
        /// Print a JSON array per line instead of space-separated tokens.
        #[arg(long)]
        json: bool,
    },
    /// Validate SMILES (arguments, or stdin lines) and print diagnostics.
    Lint { smiles: Vec<String> },
    /// Corrupt ring and branch pairing of each SMILES line from stdin.
    Corrupt {
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 3)]
        max_edits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic molecule/description TSV.
    MakeSynth {
        #[arg(long, default_value_t = 32)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a denoiser.
    Train(TrainArgs),
    /// Generate molecules for descriptions.
    Generate(GenerateArgs),
    /// Score generated SMILES against references.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "token")]
        unit: UnitArg,
    },
    /// Write the noise schedule as CSV.
    DumpSchedule {
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value = "sqrt")]
        kind: ScheduleKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as JSON.
    ShowConfig(ConfigArgs),
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum UnitArg {
    Token,
    Char,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// JSON configuration file; replaces the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    exec: Option<ExecMode>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    phase: Option<Phase>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Column names as cid,smiles,description.
    #[arg(long)]
    format: Option<TsvFormat>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    joint: bool,
    /// Reuse the token vocabulary of this checkpoint.
    #[arg(long)]
    vocab_from: Option<PathBuf>,
    /// Loss log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long = "model-phase1")]
    model_phase1: PathBuf,
    #[arg(long = "model-phase2")]
    model_phase2: Option<PathBuf>,
    #[arg(long = "desc")]
    desc: Vec<String>,
    /// Dataset TSV (descriptions column) or one description per line.
    #[arg(long = "desc-file")]
    desc_file: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps1: Option<usize>,
    #[arg(long)]
    steps2: Option<usize>,
    /// Skip phase-two correction.
    #[arg(long)]
    no_correct: bool,
    #[arg(long)]
    clamp: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::preset(self.preset),
        };
        if let Some(s) = self.seed {
            c.train.seed = s;
            c.sampler.seed = s;
        }
        if let Some(e) = self.exec {
            c.train.exec = e;
            c.sampler.exec = e;
        }
        Ok(c)
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(Error::Data(e.to_string()))
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run_cli<I, S>(argv: I, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.cmd, stdin, out, err) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "usage error: {m}");
            1
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Tokenize { json } => cmd_tokenize(json, stdin, out),
        Command::Lint { smiles } => cmd_lint(smiles, stdin, out),
        Command::Corrupt { p, max_edits, seed } => {
            cmd_corrupt(CorruptParams { p, max_edits }, seed, stdin, out)
        }
        Command::MakeSynth { count, seed, out: path } => {
            if count == 0 {
                return Err(Failure::Usage("--count must be at least 1".into()));
            }
            let recs = synth_dataset(count, seed);
            let f = File::create(&path).map_err(|e| Error::file(&path, e))?;
            write_records(&recs, BufWriter::new(f)).map_err(|e| Error::file(&path, e))?;
            writeln!(out, "wrote {} records to {}", recs.len(), path.display())?;
            Ok(())
        }
        Command::Train(a) => cmd_train(a, out, err),
        Command::Generate(a) => cmd_generate(a, out, err),
        Command::Evaluate { hyp, reference, out: path, unit } => {
            let unit = match unit {
                UnitArg::Token => BleuUnit::Token,
                UnitArg::Char => BleuUnit::Char,
            };
            cmd_evaluate(&hyp, &reference, path.as_deref(), unit, out)
        }
        Command::DumpSchedule { steps, kind, out: path } => {
            let s = NoiseSchedule::build(steps, kind)?;
            match path {
                Some(p) => {
                    let f = File::create(&p).map_err(|e| Error::file(&p, e))?;
                    s.write_csv(BufWriter::new(f)).map_err(|e| Error::file(&p, e))?;
                }
                None => s.write_csv(&mut *out)?,
            }
            Ok(())
        }
        Command::ShowConfig(c) => {
            writeln!(out, "{}", c.resolve()?.to_json())?;
            Ok(())
        }
    }
}

fn input_lines(stdin: &mut dyn BufRead) -> Result<Vec<String>> {
    let mut v = Vec::new();
    for line in stdin.lines() {
        let line = line.map_err(|e| Error::Data(e.to_string()))?;
        let line = line.trim();
        if !line.is_empty() {
            v.push(line.to_string());
        }
    }
    Ok(v)
}

fn cmd_tokenize(json: bool, stdin: &mut dyn BufRead, out: &mut dyn Write) -> CliResult {
    for line in input_lines(stdin)? {
        let toks = scan(&line)?;
        if json {
            writeln!(out, "{}", serde_json::to_string(&toks).expect("strings serialize"))?;
        } else {
            writeln!(out, "{}", toks.join(" "))?;
        }
    }
    Ok(())
}

fn cmd_lint(args: Vec<String>, stdin: &mut dyn BufRead, out: &mut dyn Write) -> CliResult {
    let items = if args.is_empty() { input_lines(stdin)? } else { args };
    let mut bad = 0;
    for s in &items {
        let rep = validate_smiles(s);
        if rep.valid {
            writeln!(out, "{s}\tvalid")?;
        } else {
            bad += 1;
            writeln!(out, "{s}\tinvalid")?;
            for d in &rep.diagnostics {
                writeln!(out, "  {} at {}: {}", d.kind, d.pos, d.message)?;
            }
        }
    }
    if bad > 0 {
        return Err(Failure::Run(Error::Data(format!("{bad} of {} invalid", items.len()))));
    }
    Ok(())
}

fn cmd_corrupt(params: CorruptParams, seed: u64, stdin: &mut dyn BufRead, out: &mut dyn Write) -> CliResult {
    if !(0.0..=1.0).contains(&params.p) {
        return Err(Failure::Usage("--p must lie in [0, 1]".into()));
    }
    let lines = input_lines(stdin)?;
    let mut toks: Vec<String> = [SOS, EOS, PAD, UNK].map(String::from).to_vec();
    let extra = ["(", ")", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
    for line in &lines {
        for t in scan(line)?.into_iter().chain(extra) {
            if !toks.iter().any(|x| x == t) {
                toks.push(t.to_string());
            }
        }
    }
    let vocab = Vocabulary::from_tokens(toks)?;
    for (i, line) in lines.iter().enumerate() {
        let n = scan(line)?.len() + 2 + 2 * params.max_edits.max(1);
        let seq = tokenize(line, &vocab, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, i as u64]));
        let c = corrupt(&seq, &vocab, &params, &mut rng);
        writeln!(out, "{}", detokenize(&c, &vocab)?)?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let mut cfg = a.cfg.resolve()?;
    if let Some(p) = a.phase {
        cfg.train.phase = p;
    }
    if let Some(s) = a.steps {
        cfg.train.max_steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.train.adam.lr = lr;
    }
    if let Some(b) = a.batch {
        cfg.train.batch_size = b;
    }
    cfg.train.joint |= a.joint;
    cfg.validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let vocab = match &a.vocab_from {
        Some(p) => Some(load_checkpoint(p, None)?.0.vocabulary()?),
        None => None,
    };
    let format = a.format.clone().unwrap_or_default();
    let ing = ingest_dataset(&a.data, vocab.as_ref(), cfg.arch.seq_len, &format)?;
    if ing.dropped > 0 {
        writeln!(err, "dropped {} of {} records", ing.dropped, ing.total)?;
    }
    let text_vocab = TextVocab::build(ing.records.iter().map(|r| r.description.as_str()));
    let data: Vec<Example> = ing
        .records
        .iter()
        .zip(&ing.sequences)
        .map(|(r, s)| {
            Ok(Example {
                seq: s.clone(),
                text: text_vocab.encode(&r.description, cfg.arch.text_len)?,
            })
        })
        .collect::<Result<_>>()?;
    let model = cfg.model_config(ing.vocab.len(), text_vocab.len());
    let phase_tag = if cfg.train.joint {
        "joint"
    } else if cfg.train.phase == Phase::One {
        "one"
    } else {
        "two"
    };
    let meta_at = |step: usize| CheckpointMeta {
        model: model.clone(),
        vocab: ing.vocab.tokens().to_vec(),
        text_vocab: text_vocab.words().to_vec(),
        schedule: cfg.train.schedule,
        step,
        phase: phase_tag.to_string(),
        train: cfg.train.clone(),
    };
    let mut trainer = Trainer::new(model.clone(), cfg.train.clone(), &ing.vocab, &data, None)?;
    let every = cfg.train.checkpoint_every;
    let log_every = cfg.train.log_every.max(1);
    let logs = trainer.run(|l, params| {
        if l.step % log_every == 0 {
            log::info!("step {} loss {:.5}", l.step, l.loss);
        }
        if every > 0 && l.step % every == 0 {
            let p = with_suffix(&a.out, &format!("step{}", l.step));
            save_checkpoint(&p, &meta_at(l.step), params)?;
        }
        Ok(())
    })?;
    save_checkpoint(&a.out, &meta_at(trainer.steps_done()), trainer.params())?;
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, "log.csv"));
    let f = File::create(&log_path).map_err(|e| Error::file(&log_path, e))?;
    let kept: Vec<_> = logs
        .into_iter()
        .filter(|l| l.step % log_every == 0 || l.step == 1 || l.step == trainer.steps_done())
        .collect();
    write_log(&kept, BufWriter::new(f)).map_err(|e| Error::file(&log_path, e))?;
    let last = kept.last().map(|l| l.loss).unwrap_or(f64::NAN);
    writeln!(
        out,
        "trained {} steps on {} examples, final loss {last:.5}; wrote {}",
        trainer.steps_done(),
        data.len(),
        a.out.display()
    )?;
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Reads `(id, text)` pairs from a dataset TSV or plain lines.
fn read_descriptions(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let header = text.lines().next().unwrap_or("");
    if header.split('\t').any(|c| c == "description") {
        let fmt = TsvFormat::default();
        let recs = crate::data::read_records(BufReader::new(text.as_bytes()), &fmt)?;
        return Ok(recs.into_iter().map(|r| (r.cid, r.description)).collect());
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| (i.to_string(), l.to_string()))
        .collect())
}

fn cmd_generate(a: GenerateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let mut cfg = a.cfg.resolve()?;
    if let Some(s) = a.steps1 {
        cfg.sampler.steps1 = s;
    }
    if let Some(s) = a.steps2 {
        cfg.sampler.steps2 = s;
    }
    if a.no_correct {
        cfg.sampler.max_rounds = 0;
    }
    cfg.sampler.clamp |= a.clamp;
    let mut items: Vec<(String, String)> = a
        .desc
        .iter()
        .enumerate()
        .map(|(i, d)| (i.to_string(), d.clone()))
        .collect();
    if let Some(p) = &a.desc_file {
        items.extend(read_descriptions(p)?);
    }
    if items.is_empty() {
        return Err(Failure::Usage("give --desc or --desc-file".into()));
    }
    let (meta1, p1) = load_checkpoint(&a.model_phase1, None)?;
    let vocab = meta1.vocabulary()?;
    let text_vocab = meta1.text_vocabulary()?;
    let second = match (&a.model_phase2, cfg.sampler.max_rounds) {
        (_, 0) => None,
        (Some(p), _) => Some(load_checkpoint(p, None)?),
        (None, _) => {
            return Err(Failure::Usage(
                "--model-phase2 is required unless --no-correct is given".into(),
            ))
        }
    };
    if let Some((m2, _)) = &second {
        if m2.vocab != meta1.vocab || m2.model.total_steps != meta1.model.total_steps {
            return Err(Error::Config("phase-two checkpoint uses a different vocabulary or T".into()).into());
        }
    }
    cfg.sampler
        .validate(meta1.train.tau, meta1.model.total_steps)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let sched = NoiseSchedule::build(meta1.model.total_steps, meta1.schedule)?;
    let gen = Generator {
        vocab: &vocab,
        text_vocab: &text_vocab,
        phase_one: Model { cfg: &meta1.model, params: &p1 },
        phase_two: second.as_ref().map(|(m, p)| Model { cfg: &m.model, params: p }),
        sched: &sched,
        cfg: cfg.sampler.clone(),
    };
    let descs: Vec<&str> = items.iter().map(|(_, d)| d.as_str()).collect();
    let results = gen.generate_batch(&descs)?;
    let mut buf = Vec::new();
    writeln!(buf, "{RESULTS_HEADER}")?;
    for ((id, d), r) in items.iter().zip(&results) {
        writeln!(buf, "{}", results_row(id, d, r))?;
    }
    match &a.out {
        Some(p) => fs::write(p, &buf).map_err(|e| Error::file(p, e))?,
        None => out.write_all(&buf)?,
    }
    let valid = results.iter().filter(|r| r.valid).count();
    writeln!(err, "{valid} of {} valid", results.len())?;
    Ok(())
}

/// SMILES column and optional validity column of a results or dataset TSV,
/// or plain lines.
fn read_smiles(path: &Path) -> Result<Vec<(String, Option<bool>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
    let col = header
        .iter()
        .position(|c| c.eq_ignore_ascii_case("smiles"));
    let Some(si) = col else {
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| (l.to_string(), None))
            .collect());
    };
    let vi = header.iter().position(|c| *c == "valid");
    let mut v = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let s = f
            .get(si)
            .ok_or_else(|| Error::Data(format!("{}: line {} is short", path.display(), no + 2)))?;
        let valid = vi.and_then(|i| f.get(i)).and_then(|x| x.parse().ok());
        v.push((s.to_string(), valid));
    }
    Ok(v)
}

fn cmd_evaluate(hyp: &Path, reference: &Path, path: Option<&Path>, unit: BleuUnit, out: &mut dyn Write) -> CliResult {
    let hyps: Vec<Hypothesis> = read_smiles(hyp)?
        .into_iter()
        .map(|(s, v)| match v {
            Some(valid) => Hypothesis { smiles: s, valid },
            None => Hypothesis::checked(&s),
        })
        .collect();
    let refs: Vec<String> = read_smiles(reference)?.into_iter().map(|(s, _)| s).collect();
    let report = evaluate(&hyps, &refs, unit, ExecMode::default())?;
    writeln!(out, "{report}")?;
    if let Some(p) = path {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(p, json).map_err(|e| Error::file(p, e))?;
    }
    Ok(())
}
