//! Text corpora: word tokenization, subword encoding, on-disk formats,
//! and the synthetic benchmark generator.
//!
//! A corpus carries its own trained [`SubwordModel`] so that encodings stay
//! consistent across train/test splits and checkpoint reloads. Word-level
//! structure is preserved alongside subword ids: the attack operates on
//! words, the encoder on subwords, and [`align_gradients`] maps between the
//! two by averaging each word's subword rows.

pub mod subword;
pub mod synth;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub use subword::{SubwordModel, CLS, MASK, PAD, UNK};

use ndarray::Array2;

/// Half-open subword range covered by one word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// One example, tokenized at both word and subword granularity.
///
/// `subword_ids` covers the text only — no padding or `[CLS]` marker; the
/// encoder adds those itself. Spans are contiguous, non-empty, and cover
/// `subword_ids` exactly, one span per word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub id: String,
    pub words: Vec<String>,
    pub spans: Vec<Span>,
    pub subword_ids: Vec<u32>,
    pub label: Option<u32>,
}

impl TokenizedExample {
    /// Tokenize `text` into words and encode each with `model`.
    pub fn from_text(
        id: impl Into<String>,
        text: &str,
        label: Option<u32>,
        model: &SubwordModel,
    ) -> Result<Self> {
        let words = split_words(text);
        Self::from_words(id, words, label, model)
    }

    /// Encode an already word-split example.
    pub fn from_words(
        id: impl Into<String>,
        words: Vec<String>,
        label: Option<u32>,
        model: &SubwordModel,
    ) -> Result<Self> {
        let id = id.into();
        if words.is_empty() {
            return Err(Error::contract(format!("example {id} has no words")));
        }
        let mut subword_ids = Vec::new();
        let mut spans = Vec::with_capacity(words.len());
        for word in &words {
            let ids = model.tokenize_word(word);
            debug_assert!(!ids.is_empty());
            let start = subword_ids.len();
            subword_ids.extend_from_slice(&ids);
            spans.push(Span {
                start,
                end: subword_ids.len(),
            });
        }
        Ok(TokenizedExample {
            id,
            words,
            spans,
            subword_ids,
            label,
        })
    }

    /// Re-encode with one word replaced. Spans and subword ids are rebuilt.
    pub fn with_replacement(
        &self,
        word_index: usize,
        replacement: &str,
        model: &SubwordModel,
    ) -> Result<Self> {
        if word_index >= self.words.len() {
            return Err(Error::contract(format!(
                "replacement index {word_index} out of bounds for {} words",
                self.words.len()
            )));
        }
        let mut words = self.words.clone();
        words[word_index] = replacement.to_string();
        Self::from_words(self.id.clone(), words, self.label, model)
    }

    /// Number of words.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Reassemble the surface text (single spaces between words).
    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    /// Check the span/subword invariants hold. Used by tests and loaders.
    pub fn check_alignment(&self) -> Result<()> {
        if self.words.len() != self.spans.len() {
            return Err(Error::contract(format!(
                "example {}: {} words but {} spans",
                self.id,
                self.words.len(),
                self.spans.len()
            )));
        }
        let mut cursor = 0;
        for (i, span) in self.spans.iter().enumerate() {
            if span.start != cursor || span.is_empty() || span.end > self.subword_ids.len() {
                return Err(Error::contract(format!(
                    "example {}: span {i} ({}..{}) breaks coverage at offset {cursor}",
                    self.id, span.start, span.end
                )));
            }
            cursor = span.end;
        }
        if cursor != self.subword_ids.len() {
            return Err(Error::contract(format!(
                "example {}: spans cover {cursor} of {} subwords",
                self.id,
                self.subword_ids.len()
            )));
        }
        Ok(())
    }
}

/// Split text on whitespace, with punctuation characters as standalone words.
///
/// Alphanumeric runs (plus `'` and `-` word-internally) form words; every
/// other non-space character is its own single-character word.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() || c == '\'' || c == '-' {
            current.push(c);
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Supported on-disk corpus formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    /// `#classes=N` header line, then one `label<TAB>text` record per line.
    Tsv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(Error::config(format!("unknown corpus format {other:?}"))),
        }
    }
}

/// Raw labeled text records, before subword encoding.
#[derive(Debug, Clone)]
pub struct RawCorpus {
    pub records: Vec<(u32, String)>,
    pub num_classes: u32,
}

impl RawCorpus {
    pub fn load(path: &Path, format: CorpusFormat) -> Result<Self> {
        match format {
            CorpusFormat::Tsv => Self::load_tsv(path),
        }
    }

    fn load_tsv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();

        let header = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 1,
                reason: "empty file, expected #classes=N header".into(),
            })?
            .1
            .pipe_line(1)?;
        let num_classes: u32 = header
            .strip_prefix("#classes=")
            .and_then(|n| n.trim().parse().ok())
            .filter(|&n| n >= 2)
            .ok_or_else(|| Error::Parse {
                line: 1,
                reason: format!("expected #classes=N header with N >= 2, got {header:?}"),
            })?;

        let mut records = Vec::new();
        for (idx, line) in lines {
            let line = line.pipe_line(idx + 1)?;
            if line.trim().is_empty() {
                continue;
            }
            let (label, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: idx + 1,
                reason: "expected label<TAB>text".into(),
            })?;
            let label: u32 = label.trim().parse().map_err(|_| Error::Parse {
                line: idx + 1,
                reason: format!("label {label:?} is not an integer"),
            })?;
            if label >= num_classes {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: format!("label {label} out of range for {num_classes} classes"),
                });
            }
            records.push((label, text.to_string()));
        }
        if records.is_empty() {
            return Err(Error::Parse {
                line: 1,
                reason: "corpus has no records".into(),
            });
        }
        Ok(RawCorpus {
            records,
            num_classes,
        })
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("#classes={}\n", self.num_classes));
        for (label, text) in &self.records {
            out.push_str(&format!("{label}\t{text}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Word-frequency table over all records, for subword training.
    pub fn word_counts(&self) -> HashMap<String, u64> {
        let mut counts = HashMap::new();
        for (_, text) in &self.records {
            for word in split_words(text) {
                *counts.entry(word).or_insert(0) += 1;
            }
        }
        counts
    }
}

// Small adapter so header/record reads share io-error mapping.
trait PipeLine {
    fn pipe_line(self, line: usize) -> Result<String>;
}

impl PipeLine for std::io::Result<String> {
    fn pipe_line(self, line: usize) -> Result<String> {
        self.map_err(|e| Error::Parse {
            line,
            reason: format!("read failed: {e}"),
        })
    }
}

/// A fully tokenized dataset plus the subword model that encoded it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<TokenizedExample>,
    pub num_classes: u32,
    pub subword: SubwordModel,
}

impl Corpus {
    /// Encode raw records with an existing subword model.
    ///
    /// `id_prefix` keeps example ids unique across corpora (`"{prefix}-{i}"`).
    pub fn build(raw: &RawCorpus, subword: SubwordModel, id_prefix: &str) -> Result<Self> {
        let examples = raw
            .records
            .iter()
            .enumerate()
            .map(|(i, (label, text))| {
                TokenizedExample::from_text(
                    format!("{id_prefix}-{i:05}"),
                    text,
                    Some(*label),
                    &subword,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            examples,
            num_classes: raw.num_classes,
            subword,
        })
    }

    /// Token → id view of the subword vocabulary.
    pub fn vocabulary(&self) -> &HashMap<String, u32> {
        self.subword.vocabulary()
    }

    /// Content hash identifying this exact dataset: example ids, words,
    /// labels, the class count, and the subword vocabulary all contribute.
    /// Two corpora compare equal iff every one of those matches.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.subword.id().as_bytes());
        hasher.update(self.num_classes.to_le_bytes());
        for ex in &self.examples {
            hasher.update(ex.id.as_bytes());
            hasher.update([0xff]);
            for w in &ex.words {
                hasher.update(w.as_bytes());
                hasher.update([0xfe]);
            }
            match ex.label {
                Some(l) => hasher.update(l.to_le_bytes()),
                None => hasher.update([0xfd]),
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Split off the last `n_test` examples into a test corpus.
    ///
    /// Callers shuffle beforehand if they need a random split; the synthetic
    /// generator already interleaves labels.
    pub fn split_tail(mut self, n_test: usize) -> Result<(Corpus, Corpus)> {
        if n_test == 0 || n_test >= self.examples.len() {
            return Err(Error::config(format!(
                "test split {n_test} out of range for {} examples",
                self.examples.len()
            )));
        }
        let test_examples = self.examples.split_off(self.examples.len() - n_test);
        let test = Corpus {
            examples: test_examples,
            num_classes: self.num_classes,
            subword: self.subword.clone(),
        };
        Ok((self, test))
    }

    /// Versioned line-JSON serialization: one header line, one subword-model
    /// line, then one line per example.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header = serde_json::json!({
            "format": "advcl-corpus",
            "version": 1u32,
            "num_classes": self.num_classes,
            "examples": self.examples.len(),
        });
        let io = |e| Error::io(path, e);
        writeln!(w, "{header}").map_err(io)?;
        writeln!(w, "{}", serde_json::to_string(&self.subword)?).map_err(io)?;
        for ex in &self.examples {
            writeln!(w, "{}", serde_json::to_string(ex)?).map_err(io)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 1,
                reason: "empty corpus file".into(),
            })?
            .pipe_line(1)?;
        let header: serde_json::Value = serde_json::from_str(&header_line)?;
        if header["format"] != "advcl-corpus" || header["version"] != 1 {
            return Err(Error::Parse {
                line: 1,
                reason: format!("unsupported corpus header {header_line}"),
            });
        }
        let num_classes = header["num_classes"].as_u64().ok_or_else(|| Error::Parse {
            line: 1,
            reason: "header missing num_classes".into(),
        })? as u32;

        let model_line = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 2,
                reason: "missing subword model line".into(),
            })?
            .pipe_line(2)?;
        let mut subword: SubwordModel = serde_json::from_str(&model_line)?;
        subword.rebuild_index();

        let mut examples = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line.pipe_line(idx + 3)?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: TokenizedExample = serde_json::from_str(&line)?;
            ex.check_alignment()?;
            examples.push(ex);
        }
        Ok(Corpus {
            examples,
            num_classes,
            subword,
        })
    }
}

/// Load a labeled corpus from `path`, training a fresh subword model on it.
///
/// The model is capped at `vocab_cap` tokens. When encoding must match an
/// existing model (test splits, attack-time candidates), use
/// [`Corpus::build`] with that model instead.
pub fn load_corpus(path: &Path, format: CorpusFormat, vocab_cap: usize) -> Result<Corpus> {
    let raw = RawCorpus::load(path, format)?;
    let subword = SubwordModel::train(&raw.word_counts(), vocab_cap)?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus");
    Corpus::build(&raw, subword, stem)
}

/// Collapse per-subword gradient rows to per-word rows by averaging each
/// word's span. Input is `(n_subwords, width)`, output `(n_words, width)`.
pub fn align_gradients(example: &TokenizedExample, subword_grads: &Array2<f64>) -> Result<Array2<f64>> {
    if subword_grads.nrows() != example.subword_ids.len() {
        return Err(Error::contract(format!(
            "example {}: gradient has {} rows but example has {} subwords",
            example.id,
            subword_grads.nrows(),
            example.subword_ids.len()
        )));
    }
    let width = subword_grads.ncols();
    let mut out = Array2::zeros((example.words.len(), width));
    for (w, span) in example.spans.iter().enumerate() {
        let mut acc = out.row_mut(w);
        for s in span.start..span.end {
            acc += &subword_grads.row(s);
        }
        acc /= span.len() as f64;
    }
    Ok(out)
}
