//! Seeded synthetic experiment suite: a templated general-domain corpus, a
//! few out-of-domain corpora with injected rare entities, matching testsets,
//! and a control testset drawn from the general distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::eval::Testset;
use crate::pipeline::mix_seed;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub general_sentences: usize,
    pub ood_sentences: usize,
    pub testset_utterances: usize,
    pub control_utterances: usize,
    pub entities_per_domain: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            general_sentences: 5000,
            ood_sentences: 500,
            testset_utterances: 80,
            control_utterances: 160,
            entities_per_domain: 12,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSuite {
    pub general: Corpus,
    pub ood: Vec<(String, Corpus)>,
    pub ood_testsets: Vec<Testset>,
    pub control_testset: Testset,
}

// Slot fillers: the leading entries are sampled far more often, giving the
// subword prior confident expectations that rare branches then violate.
const MEDIA: &[&str] = &[
    "music", "news", "radio", "playlist", "song", "album", "jazz", "mix", "podcast", "quiz",
];
const DEVICES: &[&str] = &[
    "lights", "lamp", "speaker", "tv", "fan", "heater", "plug", "switch", "doorbell", "vacuum",
];
const TIMERS: &[&str] = &["timer", "alarm", "reminder", "countdown", "stopwatch"];
const INFO: &[&str] = &[
    "weather", "time", "forecast", "temperature", "traffic", "score", "calendar", "jokes",
];

const GENERAL_TEMPLATES: &[&[&str]] = &[
    &["play", "some", "{m}"],
    &["play", "the", "{m}"],
    &["play", "my", "{m}", "please"],
    &["start", "the", "{m}"],
    &["stop", "the", "{m}"],
    &["turn", "on", "the", "{d}"],
    &["turn", "off", "the", "{d}"],
    &["dim", "the", "{d}"],
    &["set", "a", "{t}"],
    &["cancel", "the", "{t}"],
    &["snooze", "the", "{t}"],
    &["what", "is", "the", "{i}"],
    &["what", "is", "the", "{i}", "today"],
    &["show", "me", "the", "{i}"],
    &["tell", "me", "the", "{i}", "now"],
    &["next", "song", "please"],
    &["volume", "up"],
    &["volume", "down", "a", "bit"],
    &["call", "{n}"],
    &["call", "{n}", "please"],
    &["text", "{n}", "now"],
];

const OOD_DOMAINS: &[(&str, &[&[&str]])] = &[
    (
        "sports",
        &[
            &["tune", "into", "the", "{e}", "game"],
            &["play", "the", "{e}", "match"],
            &["show", "me", "{e}", "highlights"],
            &["when", "do", "{e}", "play", "next"],
            &["follow", "the", "{e}", "score"],
        ],
    ),
    (
        "grocery",
        &[
            &["add", "{e}", "to", "my", "cart"],
            &["buy", "some", "{e}"],
            &["order", "{e}", "again"],
            &["put", "{e}", "on", "the", "list"],
            &["how", "much", "is", "{e}"],
        ],
    ),
    (
        "payments",
        &[
            &["pay", "for", "{e}", "now"],
            &["send", "money", "to", "{e}"],
            &["check", "my", "{e}", "balance"],
            &["transfer", "funds", "to", "{e}"],
            &["split", "the", "{e}", "bill"],
        ],
    ),
];

// Entity name fragments: letter patterns that barely occur in the general
// templates, so entity subwords are genuinely surprising to the prior.
const ONSETS: &[&str] = &[
    "br", "kr", "zv", "gl", "fr", "vr", "tr", "dr", "gr", "kl", "pr", "sk",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ei", "au", "ou", "ie"];
const CODAS: &[&str] = &["n", "rk", "lm", "nz", "rg", "x", "sh", "nd", "lt", "ss"];

fn zipf_index(rng: &mut ChaCha8Rng, len: usize) -> usize {
    // Weight 1/(rank+1); small alphabet so a linear scan is fine.
    let total: f64 = (0..len).map(|r| 1.0 / (r + 1) as f64).sum();
    let mut x = rng.gen::<f64>() * total;
    for r in 0..len {
        x -= 1.0 / (r + 1) as f64;
        if x <= 0.0 {
            return r;
        }
    }
    len - 1
}

fn fill_general(rng: &mut ChaCha8Rng, names: &[String]) -> Vec<String> {
    let template = GENERAL_TEMPLATES[rng.gen_range(0..GENERAL_TEMPLATES.len())];
    // Name-first utterances keep the sentence-start context open too.
    let prefix = rng.gen_bool(0.05);
    let mut words: Vec<String> = if prefix {
        vec![names[zipf_index(rng, names.len())].clone()]
    } else {
        Vec::new()
    };
    words.extend(template
        .iter()
        .map(|tok| {
            if *tok == "{n}" {
                return names[zipf_index(rng, names.len())].clone();
            }
            let pool: &[&str] = match *tok {
                "{m}" => MEDIA,
                "{d}" => DEVICES,
                "{t}" => TIMERS,
                "{i}" => INFO,
                _ => return tok.to_string(),
            };
            // A thin tail of one-off words in every slot keeps each carrier
            // context open, the way real traffic never closes over a fixed
            // vocabulary. Without it the general LM assigns zero leftover
            // mass at common contexts and LLR scores saturate.
            if rng.gen_bool(0.06) {
                names[zipf_index(rng, names.len())].clone()
            } else {
                pool[zipf_index(rng, pool.len())].to_string()
            }
        }));
    // Sprinkle noise words into arbitrary gaps, the way hesitations and
    // mis-transcriptions land anywhere in real traffic. Every context keeps
    // a sliver of unseen-continuation mass this way.
    let mut i = 1;
    while i <= words.len() {
        if rng.gen_bool(0.02) {
            words.insert(i, names[zipf_index(rng, names.len())].clone());
            i += 1;
        }
        i += 1;
    }
    words
}

fn make_entity(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut name = String::new();
    for i in 0..syllables {
        name.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        name.push_str(NUCLEI[rng.gen_range(0..NUCLEI.len())]);
        if i == syllables - 1 || rng.gen_bool(0.4) {
            name.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
        }
    }
    name
}

fn fill_ood(rng: &mut ChaCha8Rng, templates: &[&[&str]], entities: &[String]) -> Vec<String> {
    let template = templates[rng.gen_range(0..templates.len())];
    template
        .iter()
        .map(|tok| {
            if *tok == "{e}" {
                entities[rng.gen_range(0..entities.len())].clone()
            } else {
                tok.to_string()
            }
        })
        .collect()
}

/// Generates the whole suite deterministically from the seed.
pub fn generate_suite(cfg: &SynthConfig) -> SynthSuite {
    // A long tail of contact names keeps the general vocabulary open: the
    // count-of-count buckets stay populated, discounting stays live, and
    // `<unk>` carries realistic mass, which in turn keeps entity LLR scores
    // in a plausible range instead of saturating at the log-zero floor.
    let mut name_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "synth-names", 0));
    let mut names: Vec<String> = Vec::new();
    while names.len() < 400 {
        let n = make_entity(&mut name_rng);
        if !names.contains(&n) {
            names.push(n);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "synth-general", 0));
    let mut sentences: Vec<Vec<String>> = (0..cfg.general_sentences)
        .map(|_| fill_general(&mut rng, &names))
        .collect();
    // One fixed sentence per slot word: every word (and so every letter the
    // entities can use) is guaranteed in the general corpus on any seed.
    for m in MEDIA {
        sentences.push(vec!["play".into(), "some".into(), (*m).into()]);
    }
    for d in DEVICES {
        sentences.push(vec!["turn".into(), "on".into(), "the".into(), (*d).into()]);
    }
    for t in TIMERS {
        sentences.push(vec!["set".into(), "a".into(), (*t).into()]);
    }
    for i in INFO {
        sentences.push(vec!["show".into(), "me".into(), "the".into(), (*i).into()]);
    }
    let general = Corpus { sentences };

    let mut ood = Vec::new();
    let mut ood_testsets = Vec::new();
    for (domain, templates) in OOD_DOMAINS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, domain, 0));
        let mut entities: Vec<String> = Vec::new();
        while entities.len() < cfg.entities_per_domain {
            let e = make_entity(&mut rng);
            if !entities.contains(&e) && !names.contains(&e) {
                entities.push(e);
            }
        }
        let corpus = Corpus {
            sentences: (0..cfg.ood_sentences)
                .map(|_| fill_ood(&mut rng, templates, &entities))
                .collect(),
        };
        let testset = Testset {
            name: format!("test-{domain}"),
            utterances: (0..cfg.testset_utterances)
                .map(|i| {
                    (
                        format!("{domain}-{i:04}"),
                        fill_ood(&mut rng, templates, &entities),
                    )
                })
                .collect(),
        };
        ood.push((domain.to_string(), corpus));
        ood_testsets.push(testset);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "synth-control", 0));
    let control_testset = Testset {
        name: "test-control".to_string(),
        utterances: (0..cfg.control_utterances)
            .map(|i| (format!("control-{i:04}"), fill_general(&mut rng, &names)))
            .collect(),
    };

    SynthSuite {
        general,
        ood,
        ood_testsets,
        control_testset,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn suite_is_deterministic() {
        let cfg = SynthConfig {
            general_sentences: 50,
            ood_sentences: 20,
            testset_utterances: 5,
            control_utterances: 5,
            ..SynthConfig::default()
        };
        let a = generate_suite(&cfg);
        let b = generate_suite(&cfg);
        assert_eq!(a.general.sentences, b.general.sentences);
        for ((na, ca), (nb, cb)) in a.ood.iter().zip(b.ood.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ca.sentences, cb.sentences);
        }
        assert_eq!(
            a.control_testset.utterances,
            b.control_testset.utterances
        );
    }

    #[test]
    fn general_alphabet_covers_entity_characters() {
        let cfg = SynthConfig {
            general_sentences: 2000,
            ood_sentences: 100,
            testset_utterances: 10,
            control_utterances: 10,
            ..SynthConfig::default()
        };
        let suite = generate_suite(&cfg);
        let general_alpha: BTreeSet<char> = suite
            .general
            .sentences
            .iter()
            .flatten()
            .flat_map(|w| w.chars())
            .collect();
        let mut entity_alpha = BTreeSet::new();
        for (_, corpus) in &suite.ood {
            for s in &corpus.sentences {
                for w in s {
                    entity_alpha.extend(w.chars());
                }
            }
        }
        for ts in &suite.ood_testsets {
            for (_, words) in &ts.utterances {
                for w in words {
                    entity_alpha.extend(w.chars());
                }
            }
        }
        assert!(
            entity_alpha.is_subset(&general_alpha),
            "uncovered: {:?}",
            entity_alpha.difference(&general_alpha).collect::<Vec<_>>()
        );
    }

    #[test]
    fn testset_entities_appear_in_training_corpora() {
        let cfg = SynthConfig {
            general_sentences: 100,
            ood_sentences: 200,
            testset_utterances: 40,
            control_utterances: 10,
            ..SynthConfig::default()
        };
        let suite = generate_suite(&cfg);
        for ((_, corpus), ts) in suite.ood.iter().zip(&suite.ood_testsets) {
            let train_words: BTreeSet<&String> = corpus.sentences.iter().flatten().collect();
            for (_, words) in &ts.utterances {
                for w in words {
                    assert!(train_words.contains(w), "{w} unseen in OOD training");
                }
            }
        }
    }
}
