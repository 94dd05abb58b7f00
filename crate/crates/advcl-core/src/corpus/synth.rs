//! Synthetic two-domain classification benchmark.
//!
//! The generator builds a small artificial language with three word kinds:
//!
//! * **Marker families** carry the label. Each (domain, class) pair owns its
//!   own families; an example of class `c` contains markers only from class
//!   `c` families of its domain, so swapping a marker for a family sibling
//!   preserves the label.
//! * **Filler families** are label-neutral and shared by both domains.
//! * **Function words** form a small closed set with no substitutes.
//!
//! Each family has one common surface form and several rare synonyms. Text
//! mostly uses the common forms; the rare ones appear just often enough to
//! exist in the vocabulary while staying undertrained. Synonym structure
//! lives only in the accompanying embedding table (family members cluster
//! around a shared direction; unrelated families are orthogonal), so nothing
//! about the surface strings gives the relation away.
//!
//! Domains A and B share fillers and function words but have disjoint marker
//! families, which makes B a distribution shift with a familiar backbone.

use super::{Corpus, RawCorpus, SubwordModel};
use crate::error::{Error, Result};
use crate::rng::{gauss, stage_rng};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

const FILLER_FAMILIES: usize = 40;
const FILLER_FAMILY_SIZE: usize = 3;
const MARKER_FAMILIES_PER_CLASS: usize = 8;
const MARKER_FAMILY_SIZE: usize = 6;
const FUNCTION_WORDS: [&str; 8] = ["ne", "ta", "su", "ko", "va", "ri", "po", "lu"];

/// Member deviation from the family direction; cos(member, centroid) stays
/// near 1/sqrt(1 + SPREAD^2) ≈ 0.94 while cross-family cosines stay under
/// SPREAD^2/(1 + SPREAD^2) ≈ 0.11.
const MEMBER_SPREAD: f64 = 0.35;

/// Which half of the language a corpus draws its markers from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::A => "A",
            Domain::B => "B",
        }
    }

    fn index(&self) -> usize {
        match self {
            Domain::A => 0,
            Domain::B => 1,
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Domain::A),
            "B" | "b" => Ok(Domain::B),
            other => Err(Error::config(format!("unknown domain {other:?}"))),
        }
    }
}

/// A synonym family: `words[0]` is the common surface form, the rest rare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Family {
    pub words: Vec<String>,
}

impl Family {
    pub fn common(&self) -> &str {
        &self.words[0]
    }

    pub fn rare(&self) -> &[String] {
        &self.words[1..]
    }
}

/// The generated language: word inventory plus embedding geometry.
#[derive(Debug, Clone)]
pub struct Language {
    pub seed: u64,
    pub num_classes: u32,
    pub fillers: Vec<Family>,
    /// `markers[domain][class]` → that slot's marker families.
    pub markers: [Vec<Vec<Family>>; 2],
    pub function_words: Vec<String>,
    pub embed_dim: usize,
}

impl Language {
    /// Build the language for `(seed, num_classes)` deterministically.
    pub fn generate(seed: u64, num_classes: u32) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let mut rng = stage_rng(seed, "synth-language");
        let mut taken: HashSet<String> =
            FUNCTION_WORDS.iter().map(|w| w.to_string()).collect();
        let mut fresh_word = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
            const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
            const VOWELS: &[u8] = b"aeiou";
            loop {
                let syllables = rng.gen_range(2..=4);
                let mut w = String::new();
                for _ in 0..syllables {
                    w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
                    w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
                }
                if taken.insert(w.clone()) {
                    return w;
                }
            }
        };

        let mut family = |rng: &mut rand_chacha::ChaCha8Rng, size: usize| Family {
            words: (0..size).map(|_| fresh_word(rng)).collect(),
        };

        let fillers: Vec<Family> = (0..FILLER_FAMILIES)
            .map(|_| family(&mut rng, FILLER_FAMILY_SIZE))
            .collect();
        let mut markers: [Vec<Vec<Family>>; 2] = [Vec::new(), Vec::new()];
        for domain_slot in &mut markers {
            for _class in 0..num_classes {
                domain_slot.push(
                    (0..MARKER_FAMILIES_PER_CLASS)
                        .map(|_| family(&mut rng, MARKER_FAMILY_SIZE))
                        .collect(),
                );
            }
        }

        let n_directions =
            FILLER_FAMILIES + 2 * num_classes as usize * MARKER_FAMILIES_PER_CLASS + FUNCTION_WORDS.len();
        let embed_dim = (n_directions + 16).max(96);

        Ok(Language {
            seed,
            num_classes,
            fillers,
            markers,
            function_words: FUNCTION_WORDS.iter().map(|w| w.to_string()).collect(),
            embed_dim,
        })
    }

    fn families_in_order(&self) -> Vec<&Family> {
        let mut out: Vec<&Family> = self.fillers.iter().collect();
        for domain_slot in &self.markers {
            for class_families in domain_slot {
                out.extend(class_families.iter());
            }
        }
        out
    }

    /// Unit word vectors: family members cluster around a shared orthonormal
    /// direction, function words get directions of their own.
    pub fn synonym_vectors(&self) -> Vec<(String, Vec<f64>)> {
        let mut rng = stage_rng(self.seed, "synth-embeddings");
        let families = self.families_in_order();
        let n_dirs = families.len() + self.function_words.len();
        let dirs = orthonormal_rows(&mut rng, n_dirs, self.embed_dim);

        let mut out = Vec::new();
        for (family, dir) in families.iter().zip(&dirs) {
            for word in &family.words {
                let mut noise: Vec<f64> =
                    (0..self.embed_dim).map(|_| gauss(&mut rng)).collect();
                normalize(&mut noise);
                let mut v: Vec<f64> = dir
                    .iter()
                    .zip(&noise)
                    .map(|(d, n)| d + MEMBER_SPREAD * n)
                    .collect();
                normalize(&mut v);
                out.push((word.clone(), v));
            }
        }
        for (word, dir) in self.function_words.iter().zip(&dirs[families.len()..]) {
            out.push((word.clone(), dir.clone()));
        }
        out
    }

    /// Write the embedding table as `word v1 ... vdim` lines.
    pub fn write_synonym_table(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for (word, vec) in self.synonym_vectors() {
            write!(w, "{word}").map_err(|e| Error::io(path, e))?;
            for x in vec {
                write!(w, " {x}").map_err(|e| Error::io(path, e))?;
            }
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Word-frequency table for subword training, covering both domains so
    /// one model serves in-domain and shifted corpora alike. Common forms
    /// dominate; rare synonyms barely register and stay multi-piece.
    pub fn lexicon_counts(&self) -> HashMap<String, u64> {
        let mut counts = HashMap::new();
        for family in self.families_in_order() {
            counts.insert(family.common().to_string(), 50);
            for rare in family.rare() {
                counts.insert(rare.clone(), 2);
            }
        }
        for w in &self.function_words {
            counts.insert(w.clone(), 80);
        }
        counts
    }

    /// All marker words of one domain (any class, common and rare).
    pub fn marker_words(&self, domain: Domain) -> HashSet<String> {
        self.markers[domain.index()]
            .iter()
            .flatten()
            .flat_map(|f| f.words.iter().cloned())
            .collect()
    }

    /// All words of the language.
    pub fn all_words(&self) -> HashSet<String> {
        let mut out: HashSet<String> = self
            .families_in_order()
            .iter()
            .flat_map(|f| f.words.iter().cloned())
            .collect();
        out.extend(self.function_words.iter().cloned());
        out
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// Mutually orthogonal unit vectors via Gram–Schmidt on Gaussian draws.
fn orthonormal_rows(rng: &mut rand_chacha::ChaCha8Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(k <= dim, "cannot fit {k} orthogonal directions in {dim} dims");
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            for (vi, ri) in v.iter_mut().zip(r) {
                *vi -= dot * ri;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for x in &mut v {
                *x /= norm;
            }
            rows.push(v);
        }
    }
    rows
}

/// Knobs for one generated corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_examples: usize,
    pub num_classes: u32,
    pub domain: Domain,
    /// Words per example, inclusive bounds.
    pub len_range: (usize, usize),
    /// Markers per example, inclusive bounds (clamped to a third of length).
    pub markers_range: (usize, usize),
    pub rare_marker_prob: f64,
    pub rare_filler_prob: f64,
    pub function_word_prob: f64,
    pub vocab_cap: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 17,
            n_examples: 5000,
            num_classes: 2,
            domain: Domain::A,
            len_range: (10, 24),
            markers_range: (2, 4),
            rare_marker_prob: 0.05,
            rare_filler_prob: 0.08,
            function_word_prob: 0.12,
            vocab_cap: 512,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_examples == 0 {
            return Err(Error::config("n_examples must be positive"));
        }
        if self.len_range.0 < 3 || self.len_range.0 > self.len_range.1 {
            return Err(Error::config(format!(
                "bad len_range {:?}",
                self.len_range
            )));
        }
        if self.markers_range.0 < 1 || self.markers_range.0 > self.markers_range.1 {
            return Err(Error::config(format!(
                "bad markers_range {:?}",
                self.markers_range
            )));
        }
        for (name, p) in [
            ("rare_marker_prob", self.rare_marker_prob),
            ("rare_filler_prob", self.rare_filler_prob),
            ("function_word_prob", self.function_word_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Generate a labeled corpus (and the language behind it).
///
/// Labels alternate round-robin, so any contiguous split stays balanced.
/// The same `seed` always yields the same language; corpora for domains A
/// and B of one seed share fillers, function words, and the subword model.
pub fn synth_corpus(config: &SynthConfig) -> Result<(Corpus, Language)> {
    config.validate()?;
    let lang = Language::generate(config.seed, config.num_classes)?;
    let subword = SubwordModel::train(&lang.lexicon_counts(), config.vocab_cap)?;

    let mut rng = stage_rng(
        config.seed,
        &format!("synth-text-{}", config.domain.as_str()),
    );
    let mut records = Vec::with_capacity(config.n_examples);
    for i in 0..config.n_examples {
        let label = (i as u32) % config.num_classes;
        let words = generate_sentence(&lang, config, label, &mut rng);
        records.push((label, words.join(" ")));
    }
    let raw = RawCorpus {
        records,
        num_classes: config.num_classes,
    };
    let prefix = format!("synth{}-{}", config.domain.as_str(), config.seed);
    let corpus = Corpus::build(&raw, subword, &prefix)?;
    Ok((corpus, lang))
}

fn generate_sentence(
    lang: &Language,
    config: &SynthConfig,
    label: u32,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<String> {
    let len = rng.gen_range(config.len_range.0..=config.len_range.1);
    let max_markers = (len / 3).max(1);
    let n_markers = rng
        .gen_range(config.markers_range.0..=config.markers_range.1)
        .min(max_markers);

    let mut positions: Vec<usize> = (0..len).collect();
    positions.shuffle(rng);
    let marker_positions: HashSet<usize> = positions[..n_markers].iter().copied().collect();

    let class_families = &lang.markers[config.domain.index()][label as usize];
    let mut family_order: Vec<usize> = (0..class_families.len()).collect();
    family_order.shuffle(rng);
    let mut next_family = family_order.into_iter().cycle();

    let mut words = Vec::with_capacity(len);
    for pos in 0..len {
        let word = if marker_positions.contains(&pos) {
            let fam = &class_families[next_family.next().expect("cycle never ends")];
            pick_member(fam, config.rare_marker_prob, rng)
        } else if rng.gen::<f64>() < config.function_word_prob {
            lang.function_words[rng.gen_range(0..lang.function_words.len())].clone()
        } else {
            let fam = &lang.fillers[rng.gen_range(0..lang.fillers.len())];
            pick_member(fam, config.rare_filler_prob, rng)
        };
        words.push(word);
    }
    words
}

fn pick_member(family: &Family, rare_prob: f64, rng: &mut rand_chacha::ChaCha8Rng) -> String {
    if family.words.len() > 1 && rng.gen::<f64>() < rare_prob {
        family.words[rng.gen_range(1..family.words.len())].clone()
    } else {
        family.common().to_string()
    }
}
