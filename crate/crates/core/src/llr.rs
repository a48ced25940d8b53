//! Log-likelihood-ratio n-gram selection and threshold pruning.
//!
//! Boost scores are snapped to a dyadic 2^-20 grid when stored. Every weight
//! the transducer and decoder later touch is a sum, difference, or max of
//! grid values, so path scores, the sentence oracle, and subword lookahead
//! deltas agree exactly, with no floating-point tolerance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ngram::{NGramModel, BOS, EOS, UNK};

const GRID: f64 = (1u64 << 20) as f64;

/// Snaps a score to the 2^-20 grid.
pub fn quantize_score(s: f64) -> f64 {
    (s * GRID).round() / GRID
}

/// LLR of an n-gram: the conditional log-probability of its final word given
/// the preceding words under the OOD model, minus the same under the general
/// model, each side resolved with backoff.
pub fn llr_score<S: AsRef<str>>(gen: &NGramModel, ood: &NGramModel, ngram: &[S]) -> Result<f64> {
    let max = ood.order().max(gen.order());
    if ngram.is_empty() || ngram.len() > max {
        return Err(Error::NgramLength {
            max,
            got: ngram.len(),
        });
    }
    let (word, context) = ngram.split_last().unwrap();
    let word = word.as_ref();
    Ok(ood.log_prob(word, context) - gen.log_prob(word, context))
}

/// Clipped boosting scores: n-grams whose LLR clears the threshold, mapped to
/// that LLR.
#[derive(Debug, Clone)]
pub struct BoostTable {
    threshold: f64,
    entries: BTreeMap<Vec<String>, f64>,
    max_len: usize,
    pub gen_id: String,
    pub ood_id: String,
}

impl BoostTable {
    /// Quantizes scores and keeps only entries strictly above the threshold.
    pub fn new<I, S>(threshold: f64, entries: I, gen_id: &str, ood_id: &str) -> Self
    where
        I: IntoIterator<Item = (Vec<S>, f64)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        let mut max_len = 0;
        for (words, score) in entries {
            let q = quantize_score(score);
            if q > threshold {
                let words: Vec<String> = words.into_iter().map(Into::into).collect();
                max_len = max_len.max(words.len());
                map.insert(words, q);
            }
        }
        BoostTable {
            threshold,
            entries: map,
            max_len,
            gen_id: gen_id.to_string(),
            ood_id: ood_id.to_string(),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<String>, f64)> {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    pub fn get<S: AsRef<str>>(&self, ngram: &[S]) -> Option<f64> {
        // BTreeMap<Vec<String>> cannot be queried by &[&str] without an
        // owned key; n-grams are short, so build one.
        let key: Vec<String> = ngram.iter().map(|w| w.as_ref().to_string()).collect();
        self.entries.get(&key).copied()
    }

    /// TSV: a `#threshold=` header line, then one entry per line as
    /// space-joined words, a tab, and the score with six decimals.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = format!("#threshold={}\n", self.threshold);
        for (words, score) in &self.entries {
            out.push_str(&format!("{}\t{:.6}\n", words.join(" "), score));
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |line: usize, msg: &str| Error::TableFormat {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let threshold: f64 = header
            .strip_prefix("#threshold=")
            .ok_or_else(|| bad(1, "missing #threshold= header"))?
            .parse()
            .map_err(|_| bad(1, "bad threshold value"))?;
        let mut entries = Vec::new();
        for (ln, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (words, score) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(ln + 1, "expected words<TAB>score"))?;
            let score: f64 = score.parse().map_err(|_| bad(ln + 1, "bad score"))?;
            let words: Vec<String> = words.split_whitespace().map(str::to_string).collect();
            if words.is_empty() {
                return Err(bad(ln + 1, "empty n-gram"));
            }
            let q = quantize_score(score);
            if q <= threshold {
                // Six-decimal serialization can nudge a score that sat right
                // at the threshold below it; such entries carry no weight.
                log::warn!("dropping boost entry at or below threshold: {line:?}");
                continue;
            }
            entries.push((words, score));
        }
        let name = path.to_string_lossy().into_owned();
        Ok(BoostTable::new(threshold, entries, &name, &name))
    }
}

/// Scores every explicit n-gram stored in the OOD model against the general
/// model and keeps those with LLR above the threshold. Entries ending in a
/// marker that can never be decoded (`<s>`, `<unk>`) are skipped; `</s>` is a
/// scoreable position and stays.
pub fn build_boost_table(gen: &NGramModel, ood: &NGramModel, threshold: f64) -> Result<BoostTable> {
    if ood.total_entries() == 0 {
        return Err(Error::EmptyModel);
    }
    let mut entries: Vec<(Vec<&str>, f64)> = Vec::new();
    for k in 1..=ood.order() {
        for (words, _, _) in ood.ngrams(k) {
            let last = *words.last().unwrap();
            if last == BOS || last == UNK {
                continue;
            }
            let llr = llr_score(gen, ood, &words)?;
            entries.push((words, llr));
        }
    }
    Ok(BoostTable::new(threshold, entries, gen.name(), ood.name()))
}

/// Reference scorer: for each position of the sentence (including the
/// `</s>` position), add the score of the longest table n-gram ending there.
/// The sentence is `<s>`-padded, so `<s>`-anchored entries can match.
pub fn sentence_boost_oracle<S: AsRef<str>>(table: &BoostTable, sentence: &[S]) -> f64 {
    let mut padded: Vec<&str> = Vec::with_capacity(sentence.len() + 2);
    padded.push(BOS);
    padded.extend(sentence.iter().map(|w| w.as_ref()));
    padded.push(EOS);
    let mut total = 0.0;
    for pos in 1..padded.len() {
        let longest = table.max_len.min(pos + 1);
        for len in (1..=longest).rev() {
            if let Some(s) = table.get(&padded[pos + 1 - len..=pos]) {
                total += s;
                break;
            }
        }
    }
    total
}
