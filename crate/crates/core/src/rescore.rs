//! Second-pass n-best rescoring: first-pass total plus a weighted rescoring
//! LM score plus a per-word reward.

use crate::decoder::NBestList;
use crate::error::{Error, Result};
use crate::ngram::NGramModel;

/// Anything that can assign a sentence log-probability. The word n-gram
/// model fills this slot here; a learned model can be substituted without
/// touching the rescoring pass.
pub trait SentenceScorer {
    fn sentence_log_prob(&self, words: &[String]) -> f64;
}

impl SentenceScorer for NGramModel {
    fn sentence_log_prob(&self, words: &[String]) -> f64 {
        NGramModel::sentence_log_prob(self, words)
    }
}

pub struct RescoreConfig<'a> {
    pub alpha: f64,
    pub word_reward: f64,
    pub scorer: &'a dyn SentenceScorer,
}

/// Re-ranks by total' = first-pass total + alpha * rescoring log-prob +
/// word_reward * word count. The sort is stable, so ties keep first-pass
/// order and alpha=0 with zero reward preserves the ranking exactly.
pub fn rescore_nbest(nbest: &NBestList, cfg: &RescoreConfig) -> Result<NBestList> {
    if nbest.is_empty() {
        return Err(Error::EmptyNBest);
    }
    if cfg.alpha < 0.0 {
        return Err(Error::DecoderParam(format!(
            "rescoring weight {} negative",
            cfg.alpha
        )));
    }
    let mut hyps = nbest.0.clone();
    for h in &mut hyps {
        let lm = cfg.scorer.sentence_log_prob(&h.words);
        h.rescore_total = Some(h.total + cfg.alpha * lm + cfg.word_reward * h.words.len() as f64);
    }
    hyps.sort_by(|a, b| b.rescore_total.unwrap().total_cmp(&a.rescore_total.unwrap()));
    Ok(NBestList(hyps))
}
