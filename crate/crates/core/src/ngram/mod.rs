//! Backoff n-gram language models with Katz smoothing.
//!
//! Probabilities are natural-log internally; log10 appears only at the ARPA
//! file boundary. Models are open-vocabulary: `<unk>` holds the unigram mass
//! left over by discounting. `<s>` is context-only and never predicted.

mod arpa;

pub use arpa::{read_arpa, write_arpa};

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::LN_10;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// ARPA-convention stand-in for log 0 (-99 in log10), kept finite.
pub(crate) const LN_ZERO: f64 = -99.0 * LN_10;

pub const MAX_ORDER: usize = 4;

/// Word id table. Ids 0..=2 are reserved for `<unk>`, `<s>`, `</s>`.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const UNK_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;
    pub const EOS_ID: u32 = 2;

    pub fn with_markers() -> Self {
        let mut v = Vocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        v.intern(UNK);
        v.intern(BOS);
        v.intern(EOS);
        v
    }

    pub fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> u32 {
        self.get(word).unwrap_or(Self::UNK_ID)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Raw n-gram statistics for orders 1..=order.
#[derive(Debug, Clone)]
pub struct CountTable {
    order: usize,
    vocab: Vocab,
    /// levels[k-1] maps k-grams (word id sequences) to occurrence counts.
    levels: Vec<HashMap<Box<[u32]>, u64>>,
}

impl CountTable {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Count of an n-gram given as words; 0 when absent.
    pub fn count(&self, ngram: &[&str]) -> u64 {
        if ngram.is_empty() || ngram.len() > self.order {
            return 0;
        }
        let mut ids = Vec::with_capacity(ngram.len());
        for w in ngram {
            match self.vocab.get(w) {
                Some(id) => ids.push(id),
                None => return 0,
            }
        }
        self.levels[ngram.len() - 1]
            .get(&ids[..])
            .copied()
            .unwrap_or(0)
    }

    pub fn level_len(&self, k: usize) -> usize {
        self.levels[k - 1].len()
    }
}

/// Counts all k-grams for k=1..=order over `<s>`-padded sentences. `<s>` is
/// counted only as context, never as a predicted unigram.
pub fn count_ngrams(corpus: &Corpus, order: usize) -> Result<CountTable> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::OrderRange(order));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCounts);
    }
    let mut vocab = Vocab::with_markers();
    let mut levels: Vec<HashMap<Box<[u32]>, u64>> = vec![HashMap::new(); order];
    for sentence in &corpus.sentences {
        let mut ids = Vec::with_capacity(sentence.len() + 2);
        ids.push(Vocab::BOS_ID);
        for w in sentence {
            ids.push(vocab.intern(w));
        }
        ids.push(Vocab::EOS_ID);
        for k in 1..=order {
            for window in ids.windows(k) {
                if k == 1 && window[0] == Vocab::BOS_ID {
                    continue;
                }
                *levels[k - 1].entry(window.into()).or_insert(0) += 1;
            }
        }
    }
    Ok(CountTable {
        order,
        vocab,
        levels,
    })
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Entry {
    pub logp: f64,
    pub backoff: Option<f64>,
}

/// Katz-smoothed backoff model.
#[derive(Debug, Clone)]
pub struct NGramModel {
    name: String,
    order: usize,
    vocab: Vocab,
    /// levels[k-1] maps k-grams to entries.
    pub(crate) levels: Vec<HashMap<Box<[u32]>, Entry>>,
}

impl NGramModel {
    pub(crate) fn empty(name: &str, order: usize, vocab: Vocab) -> Self {
        NGramModel {
            name: name.to_string(),
            order,
            vocab,
            levels: vec![HashMap::new(); order],
        }
    }

    /// Raw constructor used by tests and fixtures: stores the given log-probs
    /// verbatim, with no backoff weights and no normalization.
    pub fn from_entries(name: &str, order: usize, entries: &[(&[&str], f64)]) -> Self {
        let mut vocab = Vocab::with_markers();
        let mut model = NGramModel {
            name: name.to_string(),
            order,
            vocab: Vocab::with_markers(),
            levels: vec![HashMap::new(); order],
        };
        for (words, logp) in entries {
            let ids: Vec<u32> = words.iter().map(|w| vocab.intern(w)).collect();
            model.levels[ids.len() - 1].insert(
                ids.into_boxed_slice(),
                Entry {
                    logp: *logp,
                    backoff: None,
                },
            );
        }
        model.vocab = vocab;
        model
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: &str) {
        self.name = name.to_string();
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn level_len(&self, k: usize) -> usize {
        self.levels[k - 1].len()
    }

    pub fn total_entries(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum()
    }

    /// All stored k-grams as word strings, lexicographically sorted, with
    /// (log-prob, backoff).
    pub fn ngrams(&self, k: usize) -> Vec<(Vec<&str>, f64, Option<f64>)> {
        let mut out: Vec<(Vec<&str>, f64, Option<f64>)> = self.levels[k - 1]
            .iter()
            .map(|(ids, e)| {
                (
                    ids.iter().map(|&id| self.vocab.word(id)).collect(),
                    e.logp,
                    e.backoff,
                )
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Stored log-prob for an exact n-gram, if present (no backoff).
    pub fn stored_log_prob(&self, ngram: &[&str]) -> Option<f64> {
        let mut ids = Vec::with_capacity(ngram.len());
        for w in ngram {
            ids.push(self.vocab.get(w)?);
        }
        self.levels
            .get(ngram.len() - 1)?
            .get(&ids[..])
            .map(|e| e.logp)
    }

    /// Stored backoff weight for a context, if present.
    pub fn stored_backoff(&self, context: &[&str]) -> Option<f64> {
        let mut ids = Vec::with_capacity(context.len());
        for w in context {
            ids.push(self.vocab.get(w)?);
        }
        self.levels
            .get(context.len() - 1)?
            .get(&ids[..])
            .and_then(|e| e.backoff)
    }

    /// Conditional natural-log probability with longest-match backoff.
    /// Histories longer than order-1 are truncated to the most recent words;
    /// unknown words map to `<unk>`. Total function.
    pub fn log_prob<S: AsRef<str>>(&self, word: &str, history: &[S]) -> f64 {
        let wid = self.vocab.id_or_unk(word);
        let mut hist = [0u32; MAX_ORDER - 1];
        let keep = history.len().min(self.order - 1);
        let tail = &history[history.len() - keep..];
        for (i, h) in tail.iter().enumerate() {
            hist[i] = self.vocab.id_or_unk(h.as_ref());
        }
        self.log_prob_ids(wid, &hist[..keep])
    }

    /// Id-based query path; ids must come from this model's vocabulary.
    /// Histories longer than order-1 are truncated to the most recent words.
    pub fn log_prob_ids(&self, word: u32, hist: &[u32]) -> f64 {
        let mut h = &hist[hist.len() - hist.len().min(self.order - 1)..];
        let mut acc = 0.0;
        let mut key = [0u32; MAX_ORDER];
        loop {
            let hlen = h.len();
            key[..hlen].copy_from_slice(h);
            key[hlen] = word;
            if let Some(e) = self.levels[hlen].get(&key[..hlen + 1]) {
                return acc + e.logp;
            }
            if hlen == 0 {
                // Word absent at the unigram level: collapse to <unk>.
                let unk = self.levels[0]
                    .get(&[Vocab::UNK_ID][..])
                    .map(|e| e.logp)
                    .unwrap_or(LN_ZERO);
                return acc + unk;
            }
            acc += self.levels[hlen - 1]
                .get(h)
                .and_then(|e| e.backoff)
                .unwrap_or(0.0);
            h = &h[1..];
        }
    }

    /// Sum of per-token log-probs over the `<s>`-padded sentence, including
    /// the `</s>` position.
    pub fn sentence_log_prob<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut seq = Vec::with_capacity(words.len() + 2);
        seq.push(Vocab::BOS_ID);
        for w in words {
            seq.push(self.vocab.id_or_unk(w.as_ref()));
        }
        seq.push(Vocab::EOS_ID);
        let mut total = 0.0;
        for i in 1..seq.len() {
            let start = i.saturating_sub(self.order - 1).min(i);
            total += self.log_prob_ids(seq[i], &seq[start..i]);
        }
        total
    }

    /// Per-token perplexity over a corpus (tokens include `</s>`).
    pub fn perplexity(&self, corpus: &Corpus) -> f64 {
        let mut lp = 0.0;
        let mut n = 0usize;
        for s in &corpus.sentences {
            lp += self.sentence_log_prob(s);
            n += s.len() + 1;
        }
        (-lp / n as f64).exp()
    }

    /// Backoff weight recomputation: alpha(h) = leftover mass at h divided by
    /// the lower-order mass of words unseen after h. The denominator is
    /// summed over the complement vocabulary directly, which keeps full
    /// normalization within 1e-9 even when the seen set carries nearly all
    /// lower-order mass.
    fn backoff_for_context(&self, context: &[u32], cont_words: &[u32], cont_mass: f64) -> f64 {
        let leftover = 1.0 - cont_mass;
        if leftover <= 1e-13 {
            return LN_ZERO;
        }
        let lower = &context[1..];
        let mut seen = vec![false; self.vocab.len()];
        for &w in cont_words {
            seen[w as usize] = true;
        }
        let mut denom = 0.0;
        for id in 0..self.vocab.len() as u32 {
            if id == Vocab::BOS_ID || seen[id as usize] {
                continue;
            }
            denom += self.log_prob_ids(id, lower).exp();
        }
        if denom <= 0.0 {
            return LN_ZERO;
        }
        (leftover / denom).ln()
    }
}

/// Good-Turing discount ratios d[r] for r = 1..=cutoff at one order.
/// Degenerate statistics (missing count-of-count buckets, or a ratio outside
/// (0, 1]) disable discounting for that bucket with a logged warning.
fn good_turing_discounts(counts: impl Iterator<Item = u64>, cutoff: usize, level: usize) -> Vec<f64> {
    let mut n = vec![0u64; cutoff + 2];
    for c in counts {
        if (c as usize) <= cutoff + 1 {
            n[c as usize] += 1;
        }
    }
    let n1 = n[1] as f64;
    let a = if n1 > 0.0 {
        ((cutoff + 1) as f64) * (n[cutoff + 1] as f64) / n1
    } else {
        1.0
    };
    let mut d = vec![1.0; cutoff + 1]; // d[0] unused
    let mut degenerate = Vec::new();
    for r in 1..=cutoff {
        let ok = n[r] > 0 && n[r + 1] > 0 && n1 > 0.0 && a < 1.0;
        if ok {
            let rstar = ((r + 1) as f64) * (n[r + 1] as f64) / (n[r] as f64);
            let ratio = (rstar / r as f64 - a) / (1.0 - a);
            if ratio > 0.0 && ratio <= 1.0 {
                d[r] = ratio;
                continue;
            }
        }
        degenerate.push(r);
    }
    if !degenerate.is_empty() {
        log::warn!(
            "degenerate Good-Turing statistics at order {level}: no discounting for count buckets {degenerate:?}"
        );
    }
    d
}

/// Estimates a Katz backoff model. Good-Turing discounting applies to counts
/// <= discount_cutoff; `<unk>` receives the unigram mass left by discounting.
pub fn estimate_katz(counts: &CountTable, discount_cutoff: u64) -> Result<NGramModel> {
    if discount_cutoff < 1 {
        return Err(Error::DiscountCutoff);
    }
    if counts.levels[0].is_empty() {
        return Err(Error::EmptyCounts);
    }
    let cutoff = discount_cutoff as usize;
    let order = counts.order;
    let mut model = NGramModel::empty("katz", order, counts.vocab.clone());

    for k in 1..=order {
        let level = &counts.levels[k - 1];
        let d = good_turing_discounts(level.values().copied(), cutoff, k);
        let disc = |c: u64| -> f64 {
            if (c as usize) <= cutoff {
                d[c as usize]
            } else {
                1.0
            }
        };

        if k == 1 {
            let total: u64 = level.values().sum();
            let mut grams: Vec<(&Box<[u32]>, u64)> = level.iter().map(|(g, &c)| (g, c)).collect();
            grams.sort_by(|a, b| a.0.cmp(b.0));
            let mut mass = 0.0;
            for (gram, c) in grams {
                let p = disc(c) * c as f64 / total as f64;
                mass += p;
                model.levels[0].insert(
                    gram.clone(),
                    Entry {
                        logp: p.ln(),
                        backoff: None,
                    },
                );
            }
            let leftover = 1.0 - mass;
            model.levels[0].insert(
                Box::from([Vocab::UNK_ID]),
                Entry {
                    logp: if leftover > 0.0 { leftover.ln() } else { LN_ZERO },
                    backoff: None,
                },
            );
            model.levels[0].insert(
                Box::from([Vocab::BOS_ID]),
                Entry {
                    logp: LN_ZERO,
                    backoff: None,
                },
            );
        } else {
            // Group continuations by context, deterministically.
            let mut by_context: BTreeMap<&[u32], Vec<(u32, u64)>> = BTreeMap::new();
            for (gram, &c) in level {
                by_context
                    .entry(&gram[..k - 1])
                    .or_default()
                    .push((gram[k - 1], c));
            }
            for (context, mut conts) in by_context {
                conts.sort_by_key(|&(w, _)| w);
                let denom: u64 = conts.iter().map(|&(_, c)| c).sum();
                let mut cont_words = Vec::with_capacity(conts.len());
                let mut mass = 0.0;
                for (w, c) in conts {
                    let p = disc(c) * c as f64 / denom as f64;
                    mass += p;
                    cont_words.push(w);
                    let mut key = Vec::with_capacity(k);
                    key.extend_from_slice(context);
                    key.push(w);
                    model.levels[k - 1].insert(
                        key.into_boxed_slice(),
                        Entry {
                            logp: p.ln(),
                            backoff: None,
                        },
                    );
                }
                let alpha = model.backoff_for_context(context, &cont_words, mass);
                match model.levels[k - 2].get_mut(context) {
                    Some(e) => e.backoff = Some(alpha),
                    None => {
                        // Contexts are counted at order k-1 by construction,
                        // so this only guards corrupted inputs.
                        model.levels[k - 2].insert(
                            context.into(),
                            Entry {
                                logp: LN_ZERO,
                                backoff: Some(alpha),
                            },
                        );
                    }
                }
            }
        }
    }
    Ok(model)
}

/// Weighted components for linear interpolation.
pub struct InterpolationSpec<'a> {
    components: Vec<(&'a NGramModel, f64)>,
}

impl<'a> InterpolationSpec<'a> {
    pub fn new(components: Vec<(&'a NGramModel, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyComponents);
        }
        let order = components[0].0.order;
        for (m, w) in &components {
            if m.order != order {
                return Err(Error::MismatchedOrders(order, m.order));
            }
            if *w < 0.0 {
                return Err(Error::BadWeights(format!("negative weight {w}")));
            }
        }
        let sum: f64 = components.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::BadWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(InterpolationSpec { components })
    }

    pub fn equal(models: &'a [NGramModel]) -> Result<Self> {
        let w = 1.0 / models.len().max(1) as f64;
        Self::new(models.iter().map(|m| (m, w)).collect())
    }
}

/// Component probability under interpolation semantics: a word outside the
/// component's vocabulary contributes zero mass (not `<unk>` mass), so the
/// mixture stays normalized over the union vocabulary.
fn interp_component_prob(model: &NGramModel, words: &[&str]) -> f64 {
    let last = words[words.len() - 1];
    if model.vocab.get(last).is_none() {
        return 0.0;
    }
    model.log_prob(last, &words[..words.len() - 1]).exp()
}

/// Materializes the linear mixture over the union of component n-grams, with
/// backoff weights recomputed so every context still normalizes.
pub fn interpolate(spec: &InterpolationSpec) -> Result<NGramModel> {
    let order = spec.components[0].0.order;

    // Union vocabulary, interned in sorted order for determinism.
    let mut union_words: Vec<&str> = Vec::new();
    for (m, _) in &spec.components {
        union_words.extend(m.vocab.words.iter().map(|s| s.as_str()));
    }
    union_words.sort_unstable();
    union_words.dedup();
    let mut vocab = Vocab::with_markers();
    for w in &union_words {
        vocab.intern(w);
    }

    let name = format!(
        "interp({})",
        spec.components
            .iter()
            .map(|(m, w)| format!("{}:{w}", m.name))
            .collect::<Vec<_>>()
            .join(",")
    );
    let mut model = NGramModel::empty(&name, order, vocab);

    for k in 1..=order {
        // Union of stored k-grams as strings.
        let mut keys: Vec<Vec<&str>> = Vec::new();
        for (m, _) in &spec.components {
            for ids in m.levels[k - 1].keys() {
                keys.push(ids.iter().map(|&id| m.vocab.word(id)).collect());
            }
        }
        keys.sort();
        keys.dedup();

        let mut by_context: BTreeMap<Box<[u32]>, Vec<(u32, f64)>> = BTreeMap::new();
        for words in &keys {
            let ids: Vec<u32> = words.iter().map(|w| model.vocab.id_or_unk(w)).collect();
            let last = *words.last().unwrap();
            let logp = if last == BOS {
                LN_ZERO
            } else {
                let p: f64 = spec
                    .components
                    .iter()
                    .map(|(m, w)| w * interp_component_prob(m, words))
                    .sum();
                if p > 0.0 {
                    p.ln()
                } else {
                    LN_ZERO
                }
            };
            model.levels[k - 1].insert(
                ids.clone().into_boxed_slice(),
                Entry {
                    logp,
                    backoff: None,
                },
            );
            if k >= 2 {
                by_context
                    .entry(ids[..k - 1].into())
                    .or_default()
                    .push((ids[k - 1], logp.exp()));
            }
        }

        if k >= 2 {
            for (context, conts) in by_context {
                let mass: f64 = conts
                    .iter()
                    .filter(|(w, _)| *w != Vocab::BOS_ID)
                    .map(|(_, p)| p)
                    .sum();
                let words: Vec<u32> = conts.iter().map(|&(w, _)| w).collect();
                let alpha = model.backoff_for_context(&context, &words, mass);
                match model.levels[k - 2].get_mut(&context) {
                    Some(e) => e.backoff = Some(alpha),
                    None => {
                        // Context absent at order k-1 (possible for raw
                        // fixture models): give it the mixture's own value.
                        let words: Vec<&str> =
                            context.iter().map(|&id| model.vocab.word(id)).collect();
                        let p: f64 = spec
                            .components
                            .iter()
                            .map(|(m, w)| w * interp_component_prob(m, &words))
                            .sum();
                        model.levels[k - 2].insert(
                            context.clone(),
                            Entry {
                                logp: if p > 0.0 { p.ln() } else { LN_ZERO },
                                backoff: Some(alpha),
                            },
                        );
                    }
                }
            }
        }
    }
    Ok(model)
}

/// Count-threshold pruning of highest-order entries, with backoff weights of
/// the affected contexts recomputed. Lower orders are never pruned; an
/// order-1 model passes through unchanged.
pub fn prune_by_count(
    model: &NGramModel,
    counts: &CountTable,
    min_count: u64,
) -> Result<NGramModel> {
    if model.levels[0].is_empty() {
        return Err(Error::EmptyModel);
    }
    let mut pruned = model.clone();
    pruned.name = format!("{}|prune>={min_count}", model.name);
    if model.order == 1 || min_count <= 1 {
        return Ok(pruned);
    }
    let k = model.order;
    let top: Vec<Box<[u32]>> = model.levels[k - 1].keys().cloned().collect();
    let mut dropped_contexts: Vec<Box<[u32]>> = Vec::new();
    for gram in top {
        let words: Vec<&str> = gram.iter().map(|&id| model.vocab.word(id)).collect();
        if counts.count(&words) < min_count {
            pruned.levels[k - 1].remove(&gram);
            dropped_contexts.push(gram[..k - 1].into());
        }
    }
    dropped_contexts.sort();
    dropped_contexts.dedup();

    // Recompute the backoff weight of every touched context.
    let mut by_context: BTreeMap<Box<[u32]>, Vec<(u32, f64)>> = BTreeMap::new();
    for (gram, e) in &pruned.levels[k - 1] {
        by_context
            .entry(gram[..k - 1].into())
            .or_default()
            .push((gram[k - 1], e.logp.exp()));
    }
    let mut new_backoffs: Vec<(Box<[u32]>, Option<f64>)> = Vec::new();
    for context in dropped_contexts {
        let alpha = match by_context.get(&context) {
            Some(conts) => {
                let mut conts = conts.clone();
                conts.sort_by_key(|&(w, _)| w);
                let mass: f64 = conts.iter().map(|(_, p)| p).sum();
                let words: Vec<u32> = conts.iter().map(|&(w, _)| w).collect();
                Some(pruned.backoff_for_context(&context, &words, mass))
            }
            None => None, // no continuations left: neutral backoff
        };
        new_backoffs.push((context, alpha));
    }
    for (context, alpha) in new_backoffs {
        if let Some(e) = pruned.levels[k - 2].get_mut(&context) {
            e.backoff = alpha;
        }
    }
    Ok(pruned)
}

/// Smallest count threshold whose pruned model fits the entry budget.
pub fn prune_to_size(
    model: &NGramModel,
    counts: &CountTable,
    max_total_entries: usize,
) -> Result<NGramModel> {
    let top = model.levels[model.order - 1].len();
    let floor = model.total_entries() - top;
    if max_total_entries < floor {
        return Err(Error::PruneBudget {
            min: floor,
            given: max_total_entries,
        });
    }
    if model.total_entries() <= max_total_entries {
        return Ok(model.clone());
    }
    let mut thresholds: Vec<u64> = model.levels[model.order - 1]
        .keys()
        .map(|gram| {
            let words: Vec<&str> = gram.iter().map(|&id| model.vocab.word(id)).collect();
            counts.count(&words)
        })
        .collect();
    thresholds.sort_unstable();
    thresholds.dedup();
    for t in thresholds {
        let candidate = prune_by_count(model, counts, t + 1)?;
        if candidate.total_entries() <= max_total_entries {
            return Ok(candidate);
        }
    }
    prune_by_count(model, counts, u64::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;

    fn corpus(lines: &[&str]) -> Corpus {
        Corpus::from_sentences(
            lines
                .iter()
                .map(|l| l.split_whitespace().collect::<Vec<_>>()),
        )
    }

    /// Full-enumeration normalization check on every stored context.
    pub(crate) fn assert_normalized(model: &NGramModel) {
        for k in 0..model.order {
            for context in model.levels.get(k).map(|l| l.keys()).into_iter().flatten() {
                if k + 1 >= model.order && model.order > 1 {
                    continue; // highest-order grams are not contexts
                }
                let mut sum = 0.0;
                for id in 0..model.vocab.len() as u32 {
                    if id == Vocab::BOS_ID {
                        continue;
                    }
                    sum += model.log_prob_ids(id, context).exp();
                }
                assert!(
                    (sum - 1.0).abs() < 1e-9,
                    "context {:?} sums to {sum}",
                    context
                        .iter()
                        .map(|&id| model.vocab.word(id))
                        .collect::<Vec<_>>()
                );
            }
        }
        // The empty context as well.
        let mut sum = 0.0;
        for id in 0..model.vocab.len() as u32 {
            if id == Vocab::BOS_ID {
                continue;
            }
            sum += model.log_prob_ids(id, &[]).exp();
        }
        assert!((sum - 1.0).abs() < 1e-9, "unigram level sums to {sum}");
    }

    #[test]
    fn counts_basic_bigrams() {
        let c = corpus(&["a b"]);
        let t = count_ngrams(&c, 2).unwrap();
        assert_eq!(t.count(&["a"]), 1);
        assert_eq!(t.count(&["b"]), 1);
        assert_eq!(t.count(&[EOS]), 1);
        assert_eq!(t.count(&[BOS]), 0);
        assert_eq!(t.count(&[BOS, "a"]), 1);
        assert_eq!(t.count(&["a", "b"]), 1);
        assert_eq!(t.count(&["b", EOS]), 1);
        assert_eq!(t.level_len(1), 3);
        assert_eq!(t.level_len(2), 3);
    }

    #[test]
    fn counts_repeated_unigrams() {
        let c = corpus(&["a a a"]);
        let t = count_ngrams(&c, 1).unwrap();
        assert_eq!(t.count(&["a"]), 3);
        assert_eq!(t.count(&[EOS]), 1);
        assert_eq!(t.level_len(1), 2);
    }

    #[test]
    fn counts_match_sliding_window_recount() {
        // Independent recount oracle over a synthetic 50-sentence corpus.
        let mut lines = Vec::new();
        for i in 0..50usize {
            let words: Vec<String> = (0..(3 + i % 4))
                .map(|j| format!("w{}", (i * 7 + j * 13) % 9))
                .collect();
            lines.push(words);
        }
        let c = Corpus::from_sentences(lines.clone());
        let t = count_ngrams(&c, 4).unwrap();

        let mut oracle: HashMap<Vec<String>, u64> = HashMap::new();
        for s in &lines {
            let mut padded = vec![BOS.to_string()];
            padded.extend(s.iter().cloned());
            padded.push(EOS.to_string());
            for k in 1..=4usize {
                for w in padded.windows(k) {
                    if k == 1 && w[0] == BOS {
                        continue;
                    }
                    *oracle.entry(w.to_vec()).or_insert(0) += 1;
                }
            }
        }
        let mut total = 0usize;
        for (gram, &n) in &oracle {
            let words: Vec<&str> = gram.iter().map(|s| s.as_str()).collect();
            assert_eq!(t.count(&words), n, "mismatch at {gram:?}");
            total += 1;
        }
        let stored: usize = (1..=4).map(|k| t.level_len(k)).sum();
        assert_eq!(stored, total);
    }

    #[test]
    fn order_out_of_range() {
        let c = corpus(&["a"]);
        assert!(matches!(count_ngrams(&c, 0), Err(Error::OrderRange(0))));
        assert!(matches!(count_ngrams(&c, 5), Err(Error::OrderRange(5))));
    }

    #[test]
    fn unigram_normalization_forced() {
        let c = corpus(&["a", "a", "a", "b"]);
        let t = count_ngrams(&c, 1).unwrap();
        let m = estimate_katz(&t, 5).unwrap();
        let sum = m.log_prob("a", &[] as &[&str]).exp()
            + m.log_prob("b", &[] as &[&str]).exp()
            + m.log_prob(EOS, &[] as &[&str]).exp()
            + m.log_prob(UNK, &[] as &[&str]).exp();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalization_full_enumeration() {
        let c = corpus(&[
            "a b c d",
            "a b c",
            "b c d a",
            "c c c",
            "a d",
            "d a b c",
            "b b a",
        ]);
        for order in 1..=4 {
            let t = count_ngrams(&c, order).unwrap();
            let m = estimate_katz(&t, 2).unwrap();
            assert_normalized(&m);
        }
    }

    #[test]
    fn backoff_trace_matches_direct_arithmetic() {
        let c = corpus(&["a b", "a c", "b c"]);
        let t = count_ngrams(&c, 2).unwrap();
        let m = estimate_katz(&t, 5).unwrap();
        // "c" never follows "c": query must resolve as bw(c) + logp(c).
        let bw = m.stored_backoff(&["c"]).unwrap();
        let uni = m.stored_log_prob(&["c"]).unwrap();
        let got = m.log_prob("c", &["c"]);
        assert!((got - (bw + uni)).abs() < 1e-12);
    }

    #[test]
    fn one_word_corpus_close_to_ml() {
        let c = corpus(&["a"]);
        let t = count_ngrams(&c, 1).unwrap();
        let m = estimate_katz(&t, 5).unwrap();
        // ML estimate: p(a) = 1/2, p(</s>) = 1/2; degenerate GT stats mean no
        // discounting applies.
        assert!((m.log_prob("a", &[] as &[&str]) - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn injected_scores_sum_to_sentence_log_prob() {
        let m = NGramModel::from_entries(
            "ood",
            4,
            &[
                (&[BOS, "play"], -3.0),
                (&[BOS, "play", "some"], -5.23),
                (&[BOS, "play", "some", "music"], -3.79),
                (&["play", "some", "music", EOS], -1.83),
            ],
        );
        let got = m.sentence_log_prob(&["play", "some", "music"]);
        assert!((got - (-13.85)).abs() < 1e-9);
    }

    #[test]
    fn sentence_log_prob_is_sum_of_tokens() {
        let c = corpus(&["a b c", "b c a", "a a b"]);
        let t = count_ngrams(&c, 3).unwrap();
        let m = estimate_katz(&t, 2).unwrap();
        let s = ["a", "b", "a"];
        let direct = m.sentence_log_prob(&s);
        // Histories longer than order-1 are truncated inside log_prob.
        let manual = m.log_prob("a", &[BOS])
            + m.log_prob("b", &[BOS, "a"])
            + m.log_prob("a", &[BOS, "a", "b"])
            + m.log_prob(EOS, &["a", "b", "a"]);
        assert!((direct - manual).abs() < 1e-12);
    }

    #[test]
    fn empty_sentence_scores_eos() {
        let c = corpus(&["a b"]);
        let t = count_ngrams(&c, 2).unwrap();
        let m = estimate_katz(&t, 5).unwrap();
        let got = m.sentence_log_prob(&[] as &[&str]);
        assert!((got - m.log_prob(EOS, &[BOS])).abs() < 1e-12);
    }

    #[test]
    fn interpolate_identity() {
        let c = corpus(&["a b c", "b c a", "c a b", "a b b"]);
        let t = count_ngrams(&c, 3).unwrap();
        let m = estimate_katz(&t, 2).unwrap();
        let spec = InterpolationSpec::new(vec![(&m, 1.0)]).unwrap();
        let mixed = interpolate(&spec).unwrap();
        for w in ["a", "b", "c", EOS, UNK] {
            for h in [vec![], vec!["a"], vec!["b", "c"], vec!["c", "c"]] {
                let d = (m.log_prob(w, &h) - mixed.log_prob(w, &h)).abs();
                assert!(d < 1e-9, "query {w} | {h:?} differs by {d}");
            }
        }
        assert_normalized(&mixed);
    }

    #[test]
    fn interpolate_idempotent_on_identical_pair() {
        let c = corpus(&["a b c", "b c a", "c a b"]);
        let t = count_ngrams(&c, 2).unwrap();
        let m = estimate_katz(&t, 2).unwrap();
        let spec = InterpolationSpec::new(vec![(&m, 0.5), (&m, 0.5)]).unwrap();
        let mixed = interpolate(&spec).unwrap();
        for w in ["a", "b", "c", EOS] {
            for h in [vec![], vec!["b"], vec!["c"]] {
                assert!((m.log_prob(w, &h) - mixed.log_prob(w, &h)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn interpolate_disjoint_vocabularies() {
        let c1 = corpus(&["a b", "b a", "a a"]);
        let c2 = corpus(&["x y", "y x", "x x"]);
        let m1 = estimate_katz(&count_ngrams(&c1, 2).unwrap(), 5).unwrap();
        let m2 = estimate_katz(&count_ngrams(&c2, 2).unwrap(), 5).unwrap();
        let spec = InterpolationSpec::new(vec![(&m1, 0.5), (&m2, 0.5)]).unwrap();
        let mixed = interpolate(&spec).unwrap();
        // Words exclusive to one component carry exactly half their mass.
        for w in ["a", "b"] {
            let want = 0.5 * m1.log_prob(w, &[] as &[&str]).exp();
            let got = mixed.log_prob(w, &[] as &[&str]).exp();
            assert!((want - got).abs() < 1e-12, "{w}: want {want} got {got}");
        }
        for w in ["x", "y"] {
            let want = 0.5 * m2.log_prob(w, &[] as &[&str]).exp();
            let got = mixed.log_prob(w, &[] as &[&str]).exp();
            assert!((want - got).abs() < 1e-12);
        }
        assert_normalized(&mixed);
    }

    #[test]
    fn interpolate_rejects_bad_specs() {
        let c = corpus(&["a b"]);
        let m2 = estimate_katz(&count_ngrams(&c, 2).unwrap(), 5).unwrap();
        let m3 = estimate_katz(&count_ngrams(&c, 3).unwrap(), 5).unwrap();
        assert!(InterpolationSpec::new(vec![]).is_err());
        assert!(InterpolationSpec::new(vec![(&m2, 0.5), (&m3, 0.5)]).is_err());
        assert!(InterpolationSpec::new(vec![(&m2, 0.7), (&m2, 0.7)]).is_err());
    }

    #[test]
    fn prune_threshold_one_is_identity() {
        let c = corpus(&["a b c d", "b c d a", "c d a b"]);
        let t = count_ngrams(&c, 4).unwrap();
        let m = estimate_katz(&t, 2).unwrap();
        let p = prune_by_count(&m, &t, 1).unwrap();
        assert_eq!(p.total_entries(), m.total_entries());
        for w in ["a", "b", "c", "d"] {
            assert_eq!(m.log_prob(w, &["b", "c", "d"]), p.log_prob(w, &["b", "c", "d"]));
        }
    }

    #[test]
    fn prune_all_top_level_backs_off_and_normalizes() {
        let c = corpus(&["a b c d", "b c d a", "c d a b", "a b c a"]);
        let t = count_ngrams(&c, 4).unwrap();
        let m = estimate_katz(&t, 2).unwrap();
        let p = prune_by_count(&m, &t, u64::MAX).unwrap();
        assert_eq!(p.level_len(4), 0);
        assert_normalized(&p);
        // Queries now resolve through trigram backoff.
        let got = p.log_prob("d", &["a", "b", "c"]);
        let via = p.stored_backoff(&["a", "b", "c"]).unwrap_or(0.0) + p.log_prob("d", &["b", "c"]);
        assert!((got - via).abs() < 1e-12);
    }

    #[test]
    fn pruned_perplexity_not_better_on_training_text() {
        // Fourth-order context is informative here: (a b c) always continues
        // with d, while the trigram (b c) spreads over many words. Dropping
        // the singleton 4-gram forces its position through the flat backoff.
        let mut lines = vec!["a b c d"; 6];
        lines.push("a b c e");
        lines.extend(["k b c m", "k b c m", "k b c n", "k b c n"]);
        lines.extend(["k b c o", "k b c o", "k b c p", "k b c p"]);
        lines.extend(["e m n o p", "p o n m e"]);
        let c = corpus(&lines);
        let t = count_ngrams(&c, 4).unwrap();
        let m = estimate_katz(&t, 2).unwrap();
        let p = prune_by_count(&m, &t, 2).unwrap();
        assert!(p.level_len(4) < m.level_len(4));
        assert!(p.perplexity(&c) >= m.perplexity(&c) - 1e-9);
        assert_normalized(&p);
    }

    #[test]
    fn prune_to_size_respects_budget() {
        let c = corpus(&["a b c d", "b c d a", "c d a b", "a b c a", "d c b a"]);
        let t = count_ngrams(&c, 4).unwrap();
        let m = estimate_katz(&t, 2).unwrap();
        let floor = m.total_entries() - m.level_len(4);
        assert!(matches!(
            prune_to_size(&m, &t, floor - 1),
            Err(Error::PruneBudget { .. })
        ));
        let p = prune_to_size(&m, &t, m.total_entries() - 2).unwrap();
        assert!(p.total_entries() <= m.total_entries() - 2);
        assert_normalized(&p);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let c = corpus(&["a b", "b a"]);
        let t = count_ngrams(&c, 2).unwrap();
        let m = estimate_katz(&t, 1).unwrap();
        let lp = m.log_prob("zzz", &["a"]);
        assert!(lp.is_finite());
        let direct = m.stored_backoff(&["a"]).unwrap_or(0.0) + m.log_prob(UNK, &[] as &[&str]);
        assert!((lp - direct).abs() < 1e-12);
    }
}
