//! Plain-text and JSON input/output formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use promptopt_core::data::Example;
use promptopt_core::planted::PlantedSpec;
use promptopt_core::pmi::{CandidateVocabulary, SimpleTokenizer, Tokenizer};

use crate::error::{Error, Result};

pub const VOCAB_HEADER: &str = "# promptopt vocabulary v1";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

pub fn format_vocab(vocab: &CandidateVocabulary) -> String {
    let mut out = String::from(VOCAB_HEADER);
    out.push('\n');
    for (e, f) in vocab.entries().iter().zip(vocab.frequencies()) {
        out.push_str(&format!("{f}\t{e}\n"));
    }
    out
}

pub fn write_vocab(path: &Path, vocab: &CandidateVocabulary) -> Result<()> {
    write_text(path, &format_vocab(vocab))
}

pub fn parse_vocab(path: &Path, text: &str) -> Result<CandidateVocabulary> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == VOCAB_HEADER => {}
        Some((_, h)) if h.starts_with("# promptopt vocabulary") => {
            return Err(parse_err(path, 1, format!("unsupported vocabulary format {h:?}")))
        }
        _ => return Err(parse_err(path, 1, format!("missing header {VOCAB_HEADER:?}"))),
    }
    let mut entries = Vec::new();
    let mut freqs = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (f, e) = line.split_once('\t').ok_or_else(|| parse_err(path, i + 1, "expected frequency<TAB>ngram"))?;
        let f = f.parse::<u64>().map_err(|e| parse_err(path, i + 1, format!("bad frequency: {e}")))?;
        entries.push(e.to_string());
        freqs.push(f);
    }
    CandidateVocabulary::new(entries, freqs).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn read_vocab(path: &Path) -> Result<CandidateVocabulary> {
    parse_vocab(path, &read_text(path)?)
}

/// `label<TAB>text` or `label<TAB>text_a<TAB>text_b`; labels are class
/// indices. Blank lines and lines starting with `#` are skipped.
pub fn parse_dataset(path: &Path, text: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let label = fields[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(path, i + 1, format!("label {:?} is not a class index", fields[0])))?;
        let ex = match fields.len() {
            2 => Example::new(label, fields[1]),
            3 => Example::pair(label, fields[1], fields[2]),
            n => return Err(parse_err(path, i + 1, format!("expected 2 or 3 tab-separated fields, found {n}"))),
        };
        out.push(ex);
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "dataset has no examples"));
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Example>> {
    parse_dataset(path, &read_text(path)?)
}

pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    let mut out = String::new();
    for e in examples {
        match &e.text_b {
            Some(b) => out.push_str(&format!("{}\t{}\t{}\n", e.label, e.text_a, b)),
            None => out.push_str(&format!("{}\t{}\n", e.label, e.text_a)),
        }
    }
    write_text(path, &out)
}

/// One example per line, tokenized; empty lines are dropped.
pub fn read_corpus(path: &Path, tokenizer: &impl Tokenizer) -> Result<Vec<Vec<String>>> {
    Ok(read_text(path)?.lines().map(|l| tokenizer.tokenize(l)).filter(|s| !s.is_empty()).collect())
}

pub fn read_corpus_simple(path: &Path) -> Result<Vec<Vec<String>>> {
    read_corpus(path, &SimpleTokenizer)
}

pub fn read_planted(path: &Path) -> Result<PlantedSpec> {
    serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

pub fn write_planted(path: &Path, spec: &PlantedSpec) -> Result<()> {
    let mut s = serde_json::to_string_pretty(spec).expect("spec serializes");
    s.push('\n');
    write_text(path, &s)
}
