//! Sources of replacement candidates for a single word position.
//!
//! Two interchangeable strategies are provided. [`TableProvider`] reads
//! nearest neighbours straight out of the word-embedding table and is the
//! default. [`MlmProvider`] masks the target word, runs the encoder, and
//! ranks in-context fills by a tied-embedding logit; it is slower but
//! context-sensitive. Either way the caller still vets the proposals with
//! [`super::filter_candidates`] before use.

use ndarray::Array1;

use crate::corpus::subword::{self, SubwordModel};
use crate::corpus::{Span, TokenizedExample};
use crate::encoder::EncoderBundle;
use crate::error::Result;

use super::table::SynonymEmbeddingTable;

/// Proposes up to `limit` distinct replacement words for one position.
///
/// Proposals never equal the original word (case-folded) and are returned
/// in a deterministic preference order, best first.
pub trait CandidateProvider {
    fn propose(
        &self,
        example: &TokenizedExample,
        word_index: usize,
        limit: usize,
    ) -> Result<Vec<String>>;

    /// Model forward passes one `propose` call costs, so attack query
    /// counts stay honest across providers.
    fn query_cost(&self) -> usize {
        0
    }
}

/// Nearest neighbours of the original word in the embedding table.
///
/// A word absent from the table yields no proposals.
#[derive(Debug, Clone, Copy)]
pub struct TableProvider<'a> {
    pub table: &'a SynonymEmbeddingTable,
}

impl CandidateProvider for TableProvider<'_> {
    fn propose(
        &self,
        example: &TokenizedExample,
        word_index: usize,
        limit: usize,
    ) -> Result<Vec<String>> {
        let word = &example.words[word_index];
        Ok(self
            .table
            .neighbors(word, limit)
            .into_iter()
            .map(|(w, _)| w)
            .collect())
    }
}

/// Masked-fill proposals scored by the encoder.
///
/// The target word's subwords are collapsed into a single mask token, the
/// masked sentence is encoded, and every vocabulary token is scored by the
/// dot product between the mask position's hidden state and that token's
/// input embedding (the embedding matrix is reused as the output layer).
/// Only tokens that are standalone words in the embedding table survive the
/// ranking, so multi-subword table words can never be proposed by this
/// provider; proposals the table cannot vet would be useless downstream.
pub struct MlmProvider<'a> {
    pub bundle: &'a EncoderBundle,
    pub subword: &'a SubwordModel,
    pub table: &'a SynonymEmbeddingTable,
}

impl MlmProvider<'_> {
    /// The example with `word_index`'s span collapsed to one mask token.
    /// Returns the masked example and the subword row of the mask.
    fn masked(&self, example: &TokenizedExample, word_index: usize) -> (TokenizedExample, usize) {
        let target: Span = example.spans[word_index];
        let mut subword_ids = Vec::with_capacity(example.subword_ids.len() - target.len() + 1);
        subword_ids.extend_from_slice(&example.subword_ids[..target.start]);
        subword_ids.push(subword::MASK);
        subword_ids.extend_from_slice(&example.subword_ids[target.end..]);

        let mut words = example.words.clone();
        words[word_index] = subword::SPECIALS[subword::MASK as usize].to_string();
        let mut spans = Vec::with_capacity(example.spans.len());
        let mut cursor = 0;
        for (i, span) in example.spans.iter().enumerate() {
            let len = if i == word_index { 1 } else { span.len() };
            spans.push(Span { start: cursor, end: cursor + len });
            cursor += len;
        }
        let masked = TokenizedExample {
            id: format!("{}#masked", example.id),
            words,
            spans,
            subword_ids,
            label: example.label,
        };
        (masked, target.start)
    }
}

impl CandidateProvider for MlmProvider<'_> {
    fn propose(
        &self,
        example: &TokenizedExample,
        word_index: usize,
        limit: usize,
    ) -> Result<Vec<String>> {
        let original = example.words[word_index].to_lowercase();
        let (masked, mask_row) = self.masked(example, word_index);
        if mask_row + 1 >= self.bundle.cfg.max_len {
            // The mask sits past the encoder's window; there is no hidden
            // state to score with.
            return Ok(Vec::new());
        }
        let rows = self.bundle.hidden_rows(&[&masked])?;
        let hidden: Array1<f64> = rows[0].row(mask_row).to_owned();
        let logits = self.bundle.tok.table.dot(&hidden);

        let mut ranked: Vec<(u32, f64)> = (subword::SPECIALS.len() as u32
            ..self.subword.vocab_size() as u32)
            .map(|id| (id, logits[id as usize]))
            .collect();
        ranked.sort_by(|(ia, la), (ib, lb)| {
            lb.partial_cmp(la)
                .expect("logits are finite")
                .then_with(|| ia.cmp(ib))
        });

        let mut out = Vec::new();
        for (id, _) in ranked {
            if out.len() == limit {
                break;
            }
            let Some(token) = self.subword.token(id) else {
                continue;
            };
            let folded = token.to_lowercase();
            if folded == original || !self.table.contains(&folded) {
                continue;
            }
            if !out.contains(&folded) {
                out.push(folded);
            }
        }
        Ok(out)
    }

    fn query_cost(&self) -> usize {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::subword::SubwordModel;
    use crate::encoder::EncoderConfig;
    use std::collections::HashMap;

    fn tiny_model() -> SubwordModel {
        let counts: HashMap<String, u64> = [("cold", 8u64), ("warm", 8), ("wind", 6), ("ice", 5)]
            .into_iter()
            .map(|(w, c)| (w.to_string(), c))
            .collect();
        SubwordModel::train(&counts, 128).unwrap()
    }

    fn tiny_table() -> SynonymEmbeddingTable {
        SynonymEmbeddingTable::from_rows(vec![
            ("cold".into(), vec![1.0, 0.0, 0.0]),
            ("ice".into(), vec![0.9, 0.3, 0.0]),
            ("warm".into(), vec![0.0, 1.0, 0.0]),
            ("wind".into(), vec![0.0, 0.0, 1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn table_provider_ranks_by_cosine_and_skips_original() {
        let table = tiny_table();
        let model = tiny_model();
        let ex = TokenizedExample::from_text("t", "cold wind", None, &model).unwrap();
        let provider = TableProvider { table: &table };
        let got = provider.propose(&ex, 0, 2).unwrap();
        assert_eq!(got, vec!["ice".to_string(), "warm".to_string()]);
        assert!(
            !got.contains(&"cold".to_string()),
            "the original word must never be proposed"
        );
    }

    #[test]
    fn table_provider_respects_limit_and_unknown_word() {
        let table = tiny_table();
        let model = tiny_model();
        let ex = TokenizedExample::from_text("t", "cold zzz", None, &model).unwrap();
        let provider = TableProvider { table: &table };
        assert_eq!(provider.propose(&ex, 0, 1).unwrap().len(), 1);
        assert!(
            provider.propose(&ex, 1, 5).unwrap().is_empty(),
            "a word outside the table has no neighbours"
        );
    }

    #[test]
    fn masked_example_collapses_span_to_one_token() {
        let model = tiny_model();
        let table = tiny_table();
        let cfg = EncoderConfig::small(model.vocab_size(), 2);
        let bundle = EncoderBundle::new(cfg, model.id(), 7).unwrap();
        let provider = MlmProvider { bundle: &bundle, subword: &model, table: &table };

        let ex = TokenizedExample::from_text("t", "cold wind ice", None, &model).unwrap();
        let (masked, row) = provider.masked(&ex, 1);
        masked.check_alignment().unwrap();
        assert_eq!(masked.spans[1].len(), 1, "mask must occupy one subword");
        assert_eq!(masked.subword_ids[row], subword::MASK);
        assert_eq!(
            masked.subword_ids.len(),
            ex.subword_ids.len() - ex.spans[1].len() + 1
        );
        // Words before and after the mask keep their subwords.
        assert_eq!(
            &masked.subword_ids[..ex.spans[1].start],
            &ex.subword_ids[..ex.spans[1].start]
        );
    }

    #[test]
    fn mlm_provider_only_proposes_table_words() {
        let model = tiny_model();
        let table = tiny_table();
        let cfg = EncoderConfig::small(model.vocab_size(), 2);
        let bundle = EncoderBundle::new(cfg, model.id(), 7).unwrap();
        let provider = MlmProvider { bundle: &bundle, subword: &model, table: &table };

        let ex = TokenizedExample::from_text("t", "cold wind ice", None, &model).unwrap();
        let got = provider.propose(&ex, 0, 10).unwrap();
        assert!(!got.is_empty(), "an in-table word must yield proposals");
        for w in &got {
            assert!(table.contains(w), "`{w}` proposed but not in the table");
            assert_ne!(w, "cold", "the original word must never be proposed");
        }
        // Distinctness.
        let mut dedup = got.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), got.len());
        assert!(got.len() <= 10);
    }

    #[test]
    fn mlm_ranking_follows_tied_embedding_logits() {
        let model = tiny_model();
        let table = tiny_table();
        let cfg = EncoderConfig::small(model.vocab_size(), 2);
        let bundle = EncoderBundle::new(cfg, model.id(), 7).unwrap();
        let provider = MlmProvider { bundle: &bundle, subword: &model, table: &table };

        let ex = TokenizedExample::from_text("t", "cold wind", None, &model).unwrap();
        let (masked, row) = provider.masked(&ex, 0);
        let hidden = bundle.hidden_rows(&[&masked]).unwrap()[0].row(row).to_owned();
        let got = provider.propose(&ex, 0, 4).unwrap();

        // Independent oracle: score each surviving single-token table word
        // by hand and check the provider returns them best-first.
        let mut expect: Vec<(String, f64)> = ["ice", "warm", "wind"]
            .iter()
            .filter_map(|w| {
                let ids = model.tokenize_word(w);
                if ids.len() != 1 {
                    return None;
                }
                Some((w.to_string(), bundle.tok.table.row(ids[0] as usize).dot(&hidden)))
            })
            .collect();
        expect.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let expect: Vec<String> = expect.into_iter().map(|(w, _)| w).collect();
        assert_eq!(got, expect, "provider order must match the hand scoring");
    }
}
