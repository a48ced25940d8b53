//! Clean-room Katz estimator used as an oracle: recomputes every discounted
//! probability straight from the counting and discounting formulas, sharing
//! no code with the library implementation.

use std::collections::HashMap;

use biasfst_core::corpus::Corpus;
use biasfst_core::ngram::{count_ngrams, estimate_katz, NGramModel, BOS, EOS, UNK};

fn corpus(lines: &[&str]) -> Corpus {
    Corpus::from_sentences(
        lines
            .iter()
            .map(|l| l.split_whitespace().collect::<Vec<_>>()),
    )
}

/// (n-gram -> probability) for every counted n-gram, plus the <unk> mass.
fn oracle_probs(
    lines: &[&str],
    order: usize,
    cutoff: u64,
) -> (HashMap<Vec<String>, f64>, f64, Vec<bool>) {
    // Counting.
    let mut counts: Vec<HashMap<Vec<String>, u64>> = vec![HashMap::new(); order];
    for line in lines {
        let mut s: Vec<String> = vec![BOS.to_string()];
        s.extend(line.split_whitespace().map(str::to_string));
        s.push(EOS.to_string());
        for k in 1..=order {
            for w in s.windows(k) {
                if k == 1 && w[0] == BOS {
                    continue;
                }
                *counts[k - 1].entry(w.to_vec()).or_insert(0) += 1;
            }
        }
    }

    let cutoff = cutoff as usize;
    let mut probs = HashMap::new();
    let mut unk = 0.0;
    let mut discounted_level = vec![false; order + 1];
    for k in 1..=order {
        // Count-of-counts and Katz discount ratios for this level.
        let mut n = vec![0u64; cutoff + 2];
        for &c in counts[k - 1].values() {
            if (c as usize) <= cutoff + 1 {
                n[c as usize] += 1;
            }
        }
        let mut d = vec![1.0f64; cutoff + 1];
        let a = if n[1] > 0 {
            ((cutoff + 1) as f64) * n[cutoff + 1] as f64 / n[1] as f64
        } else {
            1.0
        };
        for r in 1..=cutoff {
            if n[r] > 0 && n[r + 1] > 0 && n[1] > 0 && a < 1.0 {
                let rstar = (r as f64 + 1.0) * n[r + 1] as f64 / n[r] as f64;
                let ratio = (rstar / r as f64 - a) / (1.0 - a);
                if ratio > 0.0 && ratio <= 1.0 {
                    d[r] = ratio;
                    if ratio < 1.0 {
                        discounted_level[k] = true;
                    }
                }
            }
        }
        let disc = |c: u64| if (c as usize) <= cutoff { d[c as usize] } else { 1.0 };

        if k == 1 {
            let total: u64 = counts[0].values().sum();
            let mut mass = 0.0;
            for (gram, &c) in &counts[0] {
                let p = disc(c) * c as f64 / total as f64;
                probs.insert(gram.clone(), p);
                mass += p;
            }
            unk = 1.0 - mass;
        } else {
            // Denominator is the context total, summed over continuations.
            let mut ctx_total: HashMap<&[String], u64> = HashMap::new();
            for (gram, &c) in &counts[k - 1] {
                *ctx_total.entry(&gram[..k - 1]).or_insert(0) += c;
            }
            for (gram, &c) in &counts[k - 1] {
                let denom = ctx_total[&gram[..k - 1]];
                probs.insert(gram.clone(), disc(c) * c as f64 / denom as f64);
            }
        }
    }
    (probs, unk, discounted_level)
}

fn check_against_oracle(lines: &[&str], order: usize, cutoff: u64) -> (NGramModel, Vec<bool>) {
    let model = estimate_katz(&count_ngrams(&corpus(lines), order).unwrap(), cutoff).unwrap();
    let (probs, unk, discounted) = oracle_probs(lines, order, cutoff);
    for (gram, want) in &probs {
        let words: Vec<&str> = gram.iter().map(String::as_str).collect();
        let got = model
            .stored_log_prob(&words)
            .unwrap_or_else(|| panic!("{gram:?} missing from model"))
            .exp();
        assert!(
            (got - want).abs() < 1e-12,
            "{gram:?}: model {got}, oracle {want}"
        );
    }
    let got_unk = model.stored_log_prob(&[UNK]).unwrap().exp();
    if unk > 0.0 {
        assert!((got_unk - unk).abs() < 1e-12, "unk: model {got_unk}, oracle {unk}");
    } else {
        assert!(got_unk < 1e-40);
    }
    (model, discounted)
}

#[test]
fn matches_oracle_with_populated_buckets() {
    // Unigram counts: one word thrice, three twice, eight once, plus </s> at
    // four. With cutoff 2 the count-of-count buckets n1, n2, n3 are all
    // populated and real discounting applies.
    let lines = ["a b c d", "a b d e f", "a c g h i", "j k l"];
    let (model, discounted) = check_against_oracle(&lines, 2, 2);
    assert!(discounted[1], "unigram level should discount");
    // Discounting means a stored probability sits below its ML estimate:
    // count(e)=1 over 17 tokens.
    let p_e = model.stored_log_prob(&["e"]).unwrap().exp();
    assert!(p_e < 1.0 / 17.0 - 1e-9);
    // Leftover mass lands on <unk>.
    assert!(model.stored_log_prob(&[UNK]).unwrap().exp() > 1e-6);
}

#[test]
fn matches_oracle_on_bigram_discounting() {
    // Bigram count-of-counts: one bigram at count 3 (ab), two at count 2
    // (ba, cd), sixteen singletons. That keeps A = 3*n3/n1 well under 1 and
    // both discount ratios inside (0, 1).
    let lines = ["a b a b a b", "c d c d", "e f g h i", "j k l m"];
    let (_, discounted) = check_against_oracle(&lines, 2, 2);
    assert!(discounted[2], "bigram level should discount");
}

#[test]
fn matches_oracle_up_to_order_four() {
    let lines = [
        "a b c d e",
        "a b c d f",
        "a b c d e",
        "b c d a",
        "c d a b c",
        "d e f a b",
        "f e d c b a",
        "a a b b c",
    ];
    for cutoff in [1, 2, 5] {
        for order in 1..=4 {
            check_against_oracle(&lines, order, cutoff);
        }
    }
}
