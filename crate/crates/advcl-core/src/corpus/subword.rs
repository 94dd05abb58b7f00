//! Byte-pair subword model trained on the corpus itself.
//!
//! Words are split to characters and merged bottom-up by pair frequency.
//! Merges never cross word boundaries. Unknown characters map to `[UNK]`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const MASK: u32 = 3;

pub const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[MASK]"];

/// Trained byte-pair subword vocabulary.
///
/// Token ids are dense from 0: the four specials first, then single
/// characters in sorted order, then merged tokens in merge-creation order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubwordModel {
    version: u32,
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    #[serde(skip)]
    token_to_id: HashMap<String, u32>,
    #[serde(skip)]
    merge_rank: HashMap<(String, String), usize>,
}

impl SubwordModel {
    /// Train on a word-frequency table, capped at `vocab_cap` total tokens.
    ///
    /// Pairs are merged most-frequent first; ties break toward the
    /// lexicographically smallest pair. Merging stops when the cap is
    /// reached or no pair occurs at least twice.
    pub fn train(word_counts: &HashMap<String, u64>, vocab_cap: usize) -> Result<Self> {
        if vocab_cap > 8192 {
            return Err(Error::config(format!(
                "subword vocab cap {vocab_cap} exceeds the 8192 limit"
            )));
        }
        let mut chars: Vec<String> = word_counts
            .keys()
            .flat_map(|w| w.chars().map(|c| c.to_string()))
            .collect();
        chars.sort();
        chars.dedup();

        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        vocab.extend(chars);

        // Working representation: each word type as a piece sequence plus count.
        let mut words: Vec<(Vec<String>, u64)> = {
            let mut v: Vec<(&String, u64)> =
                word_counts.iter().map(|(w, &c)| (w, c)).collect();
            v.sort(); // deterministic iteration order
            v.iter()
                .map(|(w, c)| (w.chars().map(|ch| ch.to_string()).collect(), *c))
                .collect()
        };

        let mut merges: Vec<(String, String)> = Vec::new();
        while vocab.len() < vocab_cap {
            let mut pair_counts: HashMap<(&str, &str), u64> = HashMap::new();
            for (pieces, count) in &words {
                for pair in pieces.windows(2) {
                    *pair_counts
                        .entry((pair[0].as_str(), pair[1].as_str()))
                        .or_insert(0) += count;
                }
            }
            let best = pair_counts
                .iter()
                .filter(|(_, &c)| c >= 2)
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let ((a, b), _) = match best {
                Some((&pair, &count)) => (pair, count),
                None => break,
            };
            let (a, b) = (a.to_string(), b.to_string());
            let merged = format!("{a}{b}");
            for (pieces, _) in &mut words {
                let mut i = 0;
                while i + 1 < pieces.len() {
                    if pieces[i] == a && pieces[i + 1] == b {
                        pieces[i] = merged.clone();
                        pieces.remove(i + 1);
                    } else {
                        i += 1;
                    }
                }
            }
            vocab.push(merged);
            merges.push((a, b));
        }

        let mut model = SubwordModel {
            version: 1,
            vocab,
            merges,
            token_to_id: HashMap::new(),
            merge_rank: HashMap::new(),
        };
        model.rebuild_index();
        Ok(model)
    }

    /// Rebuild the derived lookup tables after construction or deserialization.
    pub fn rebuild_index(&mut self) {
        self.token_to_id = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        self.merge_rank = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ((a.clone(), b.clone()), i))
            .collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(|s| s.as_str())
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Dense token → id view of the vocabulary.
    pub fn vocabulary(&self) -> &HashMap<String, u32> {
        &self.token_to_id
    }

    /// Split one word into subword pieces and map them to ids.
    ///
    /// Every word yields at least one id; characters outside the vocabulary
    /// become `[UNK]`.
    pub fn tokenize_word(&self, word: &str) -> Vec<u32> {
        if word.is_empty() {
            return vec![UNK];
        }
        let mut pieces: Vec<String> = word
            .chars()
            .map(|c| {
                let s = c.to_string();
                if self.token_to_id.contains_key(&s) {
                    s
                } else {
                    SPECIALS[UNK as usize].to_string()
                }
            })
            .collect();
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..pieces.len().saturating_sub(1) {
                let key = (pieces[i].clone(), pieces[i + 1].clone());
                if let Some(&rank) = self.merge_rank.get(&key) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            match best {
                Some((_, i)) => {
                    let merged = format!("{}{}", pieces[i], pieces[i + 1]);
                    pieces[i] = merged;
                    pieces.remove(i + 1);
                }
                None => break,
            }
        }
        pieces
            .iter()
            .map(|p| self.token_to_id.get(p).copied().unwrap_or(UNK))
            .collect()
    }

    /// Stable content hash identifying this model in checkpoints.
    pub fn id(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("subword model serializes"));
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, u64)]) -> HashMap<String, u64> {
        pairs.iter().map(|(w, c)| (w.to_string(), *c)).collect()
    }

    #[test]
    fn frequent_words_become_single_tokens() {
        let model = SubwordModel::train(&counts(&[("kara", 50), ("kiro", 40), ("mu", 1)]), 64)
            .unwrap();
        assert_eq!(model.tokenize_word("kara").len(), 1);
        assert_eq!(model.tokenize_word("kiro").len(), 1);
    }

    #[test]
    fn rare_words_stay_multi_piece_under_tight_cap() {
        // Cap leaves room for chars plus a couple of merges only.
        let model = SubwordModel::train(
            &counts(&[("kara", 50), ("kiro", 3), ("zuvi", 2)]),
            SPECIALS.len() + 8 + 2,
        )
        .unwrap();
        assert!(model.tokenize_word("zuvi").len() > 1);
    }

    #[test]
    fn unknown_chars_map_to_unk() {
        let model = SubwordModel::train(&counts(&[("abc", 5)]), 32).unwrap();
        let ids = model.tokenize_word("axb");
        assert!(ids.contains(&UNK));
        assert!(!ids.is_empty());
    }

    #[test]
    fn empty_word_yields_unk() {
        let model = SubwordModel::train(&counts(&[("ab", 2)]), 16).unwrap();
        assert_eq!(model.tokenize_word(""), vec![UNK]);
    }

    #[test]
    fn training_is_deterministic() {
        let c = counts(&[("kara", 5), ("karo", 5), ("miru", 4)]);
        let a = SubwordModel::train(&c, 64).unwrap();
        let b = SubwordModel::train(&c, 64).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.id(), b.id());
    }

    #[test]
    fn vocab_ids_are_dense_from_zero() {
        let model = SubwordModel::train(&counts(&[("kara", 5)]), 32).unwrap();
        for id in 0..model.vocab_size() as u32 {
            let tok = model.token(id).unwrap();
            assert_eq!(model.token_id(tok), Some(id));
        }
    }

    #[test]
    fn cap_above_limit_is_rejected() {
        assert!(SubwordModel::train(&counts(&[("ab", 2)]), 10_000).is_err());
    }
}
