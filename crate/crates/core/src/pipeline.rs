//! End-to-end wiring: train the LMs and inventory once, then build boost
//! tables and transducers per threshold and decode testsets at any fusion
//! weight. Utterances decode in parallel; per-utterance seeds depend only on
//! the pipeline seed, testset name, and utterance index, so results are
//! order-stable and identical across grid points.

use rayon::prelude::*;

use crate::corpus::{build_subword_inventory, Corpus, SubwordInventory};
use crate::decoder::{beam_search, segment_corpus, surrogate_emit, DecodedUtterance};
use crate::error::Result;
use crate::eval::Testset;
use crate::fst::BoostingFst;
use crate::llr::{build_boost_table, BoostTable};
use crate::ngram::{count_ngrams, estimate_katz, interpolate, InterpolationSpec, NGramModel};
use crate::rescore::RescoreConfig;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub order: usize,
    pub discount_cutoff: u64,
    pub subword_budget: usize,
    pub threshold: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub word_reward: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub beam: usize,
    pub nbest: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            order: 4,
            discount_cutoff: 5,
            subword_budget: 160,
            threshold: 3.0,
            lambda: 0.25,
            alpha: 0.4,
            word_reward: 0.5,
            beta: 0.5,
            epsilon: 1e-4,
            beam: 8,
            nbest: 8,
            seed: 17,
        }
    }
}

/// Immutable trained artifacts shared by decoding workers.
pub struct TrainedPipeline {
    pub cfg: PipelineConfig,
    pub inventory: SubwordInventory,
    pub gen_lm: NGramModel,
    pub ood_lm: NGramModel,
    pub prior: NGramModel,
    pub rescore_lm: NGramModel,
}

/// Deterministic per-utterance seed, independent of iteration order.
pub fn mix_seed(seed: u64, name: &str, index: usize) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^= index as u64;
    h = h.wrapping_mul(0x100000001b3);
    h
}

/// Trains everything the sweep and decode stages need: word LMs for both
/// domains (OOD corpora interpolated with equal weights), the subword
/// inventory and prior from the general corpus, and a rescoring LM adapted
/// toward OOD text.
pub fn train_pipeline(
    general: &Corpus,
    ood_corpora: &[Corpus],
    cfg: &PipelineConfig,
) -> Result<TrainedPipeline> {
    let inventory = build_subword_inventory(general, cfg.subword_budget)?;

    let mut gen_lm = estimate_katz(&count_ngrams(general, cfg.order)?, cfg.discount_cutoff)?;
    gen_lm.set_name("gen");

    let mut domain_lms = Vec::with_capacity(ood_corpora.len());
    for (i, corpus) in ood_corpora.iter().enumerate() {
        let mut lm = estimate_katz(&count_ngrams(corpus, cfg.order)?, cfg.discount_cutoff)?;
        lm.set_name(&format!("ood{i}"));
        domain_lms.push(lm);
    }
    let mut ood_lm = interpolate(&InterpolationSpec::equal(&domain_lms)?)?;
    ood_lm.set_name("ood");

    let segmented = segment_corpus(general, &inventory)?;
    let mut prior = estimate_katz(&count_ngrams(&segmented, cfg.order)?, cfg.discount_cutoff)?;
    prior.set_name("subword-prior");

    let mut rescore_lm = interpolate(&InterpolationSpec::new(vec![
        (&gen_lm, 0.5),
        (&ood_lm, 0.5),
    ])?)?;
    rescore_lm.set_name("rescore");

    Ok(TrainedPipeline {
        cfg: cfg.clone(),
        inventory,
        gen_lm,
        ood_lm,
        prior,
        rescore_lm,
    })
}

impl TrainedPipeline {
    pub fn boost_table(&self, threshold: f64) -> Result<BoostTable> {
        build_boost_table(&self.gen_lm, &self.ood_lm, threshold)
    }

    pub fn boost_fst(&self, threshold: f64) -> Result<BoostingFst> {
        BoostingFst::build(&self.boost_table(threshold)?, &self.inventory)
    }

    /// Decodes a whole testset through the surrogate channel. Posteriors
    /// depend on (seed, testset, index) only, never on the fusion setup.
    pub fn decode_testset(
        &self,
        testset: &Testset,
        fst: Option<&BoostingFst>,
        lambda: f64,
    ) -> Result<Vec<DecodedUtterance>> {
        testset
            .utterances
            .par_iter()
            .enumerate()
            .map(|(i, (id, reference))| {
                let seed = mix_seed(self.cfg.seed, &testset.name, i);
                let post = surrogate_emit(
                    reference,
                    &self.inventory,
                    &self.prior,
                    self.cfg.beta,
                    self.cfg.epsilon,
                    seed,
                    id,
                )?;
                let nbest = beam_search(
                    &post,
                    &self.inventory,
                    self.cfg.beam,
                    fst,
                    lambda,
                    self.cfg.nbest,
                )?;
                Ok(DecodedUtterance {
                    utterance_id: id.clone(),
                    nbest,
                })
            })
            .collect()
    }

    pub fn rescore_config(&self) -> RescoreConfig<'_> {
        RescoreConfig {
            alpha: self.cfg.alpha,
            word_reward: self.cfg.word_reward,
            scorer: &self.rescore_lm,
        }
    }
}
