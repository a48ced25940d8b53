//! WER metrics and the threshold/weight operating-point sweep.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{DecodedUtterance, NBestList};
use crate::error::{Error, Result};
use crate::fst::BoostingFst;
use crate::pipeline::TrainedPipeline;

/// Levenshtein alignment decomposition at word level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_words: usize,
    pub wer: f64,
}

impl WerBreakdown {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost alignment. Ambiguous alignments resolve preferring substitution
/// over insertion over deletion, so breakdowns are reproducible.
pub fn wer<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let r: Vec<&str> = reference.iter().map(|w| w.as_ref()).collect();
    let h: Vec<&str> = hypothesis.iter().map(|w| w.as_ref()).collect();
    let (rn, hn) = (r.len(), h.len());
    let mut d = vec![vec![0usize; hn + 1]; rn + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=hn {
        d[0][j] = j;
    }
    for i in 1..=rn {
        for j in 1..=hn {
            let sub = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let ins = d[i][j - 1] + 1;
            let del = d[i - 1][j] + 1;
            d[i][j] = sub.min(ins).min(del);
        }
    }
    let (mut i, mut j) = (rn, hn);
    let (mut s, mut del, mut ins) = (0usize, 0usize, 0usize);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = usize::from(r[i - 1] != h[j - 1]);
            if d[i][j] == d[i - 1][j - 1] + sub_cost {
                s += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            ins += 1;
            j -= 1;
            continue;
        }
        del += 1;
        i -= 1;
    }
    Ok(WerBreakdown {
        substitutions: s,
        deletions: del,
        insertions: ins,
        reference_words: rn,
        wer: (s + del + ins) as f64 / rn as f64,
    })
}

/// Lowest-WER hypothesis in the list; ties go to the better first-pass rank.
pub fn oracle_wer<S: AsRef<str>>(reference: &[S], nbest: &NBestList) -> Result<WerBreakdown> {
    if nbest.is_empty() {
        return Err(Error::EmptyNBest);
    }
    let mut best: Option<WerBreakdown> = None;
    for hyp in &nbest.0 {
        let b = wer(reference, &hyp.words)?;
        if best.map_or(true, |cur| b.edits() < cur.edits()) {
            best = Some(b);
        }
    }
    Ok(best.unwrap())
}

/// Relative WER reduction in percent; positive means improvement.
pub fn werr(baseline_wer: f64, new_wer: f64) -> Result<f64> {
    if baseline_wer <= 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(100.0 * (baseline_wer - new_wer) / baseline_wer)
}

/// Testset: utterance ids with reference transcripts.
#[derive(Debug, Clone)]
pub struct Testset {
    pub name: String,
    pub utterances: Vec<(String, Vec<String>)>,
}

impl Testset {
    /// TSV: `utterance_id \t reference transcript`.
    pub fn read_tsv(path: &Path) -> Result<Testset> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |line: usize, msg: &str| Error::TestsetFormat {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut utterances = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| bad(ln + 1, "expected id<TAB>transcript"))?;
            let words: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            if words.is_empty() {
                return Err(bad(ln + 1, "empty transcript"));
            }
            utterances.push((id.to_string(), words));
        }
        if utterances.is_empty() {
            return Err(bad(0, "no utterances"));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "testset".to_string());
        Ok(Testset { name, utterances })
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, words) in &self.utterances {
            out.push_str(&format!("{id}\t{}\n", words.join(" ")));
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Pooled error counts over a decoded testset.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PooledWer {
    pub edits: usize,
    pub oracle_edits: usize,
    pub reference_words: usize,
}

impl PooledWer {
    pub fn wer(&self) -> f64 {
        self.edits as f64 / self.reference_words as f64
    }

    pub fn oracle(&self) -> f64 {
        self.oracle_edits as f64 / self.reference_words as f64
    }

    pub fn add(&mut self, other: &PooledWer) {
        self.edits += other.edits;
        self.oracle_edits += other.oracle_edits;
        self.reference_words += other.reference_words;
    }
}

/// Scores 1-best and oracle errors of decoded output against its testset.
pub fn score_testset(testset: &Testset, decoded: &[DecodedUtterance]) -> Result<PooledWer> {
    let mut pooled = PooledWer::default();
    for ((_, reference), utt) in testset.utterances.iter().zip(decoded) {
        let top = wer(reference, &utt.nbest.best().words)?;
        let orc = oracle_wer(reference, &utt.nbest)?;
        pooled.edits += top.edits();
        pooled.oracle_edits += orc.edits();
        pooled.reference_words += top.reference_words;
    }
    Ok(pooled)
}

fn werr_or_flat(baseline: f64, new: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (baseline - new) / baseline
    } else if new <= 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// One grid cell of the sweep, per testset.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub lambda: f64,
    pub testset: String,
    pub baseline_wer: f64,
    pub new_wer: f64,
    pub werr: f64,
}

/// Aggregates per grid point used for operating-point selection.
#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub threshold: f64,
    pub lambda: f64,
    /// Micro-averaged over all OOD testsets pooled together.
    pub ood_werr: f64,
    pub ood_oracle_werr: f64,
    pub control_werr: f64,
    pub control_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub grid: Vec<GridSummary>,
    /// Index into `grid` of the selected operating point, if any grid point
    /// satisfies the control constraint.
    pub selected: Option<usize>,
    pub baseline_ood_wer: f64,
    pub baseline_ood_oracle: f64,
    pub baseline_control_wer: f64,
}

impl SweepReport {
    pub fn selected_point(&self) -> Option<&GridSummary> {
        self.selected.map(|i| &self.grid[i])
    }

    /// CSV grid with one row per (grid point, testset).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("threshold,lambda,testset,baseline_wer,new_wer,werr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.4}\n",
                r.threshold, r.lambda, r.testset, r.baseline_wer, r.new_wer, r.werr
            ));
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// JSON summary of the selected operating point.
    pub fn write_selected_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            feasible: bool,
            selected: Option<&'a GridSummary>,
            baseline_ood_wer: f64,
            baseline_ood_oracle: f64,
            baseline_control_wer: f64,
        }
        let s = Summary {
            feasible: self.selected.is_some(),
            selected: self.selected_point(),
            baseline_ood_wer: self.baseline_ood_wer,
            baseline_ood_oracle: self.baseline_ood_oracle,
            baseline_control_wer: self.baseline_control_wer,
        };
        let text = serde_json::to_string_pretty(&s).expect("serializable");
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Maximum relative control degradation tolerated when selecting the
/// operating point, in percent.
pub const CONTROL_DEGRADATION_LIMIT_PCT: f64 = 0.5;

/// Sweeps the (threshold, lambda) grid: rebuilds the boost table at each
/// threshold, decodes every testset at each weight, and selects the point
/// with the best pooled OOD improvement whose control degradation stays
/// under half a percent relative. Decoding seeds depend only on the testset,
/// so posteriors are identical across grid points.
pub fn sweep(
    pipeline: &TrainedPipeline,
    grid: &[(f64, f64)],
    ood_testsets: &[Testset],
    control: &Testset,
) -> Result<SweepReport> {
    if grid.is_empty() || ood_testsets.is_empty() {
        return Err(Error::EmptySweep);
    }

    // Baseline decode, once.
    let mut baseline_per_set = Vec::new();
    let mut baseline_pool = PooledWer::default();
    for ts in ood_testsets {
        let decoded = pipeline.decode_testset(ts, None, 0.0)?;
        let pooled = score_testset(ts, &decoded)?;
        baseline_pool.add(&pooled);
        baseline_per_set.push(pooled);
    }
    let control_decoded = pipeline.decode_testset(control, None, 0.0)?;
    let baseline_control = score_testset(control, &control_decoded)?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut fst_cache: Vec<(f64, BoostingFst)> = Vec::new();
    for &(threshold, lambda) in grid {
        let fst = match fst_cache.iter().find(|(t, _)| *t == threshold) {
            Some((_, f)) => f.clone(),
            None => {
                let f = pipeline.boost_fst(threshold)?;
                fst_cache.push((threshold, f.clone()));
                f
            }
        };
        let mut pool = PooledWer::default();
        for (ts, base) in ood_testsets.iter().zip(&baseline_per_set) {
            let decoded = pipeline.decode_testset(ts, Some(&fst), lambda)?;
            let pooled = score_testset(ts, &decoded)?;
            rows.push(SweepRow {
                threshold,
                lambda,
                testset: ts.name.clone(),
                baseline_wer: base.wer(),
                new_wer: pooled.wer(),
                werr: werr_or_flat(base.wer(), pooled.wer()),
            });
            pool.add(&pooled);
        }
        let control_new = score_testset(
            control,
            &pipeline.decode_testset(control, Some(&fst), lambda)?,
        )?;
        rows.push(SweepRow {
            threshold,
            lambda,
            testset: control.name.clone(),
            baseline_wer: baseline_control.wer(),
            new_wer: control_new.wer(),
            werr: werr_or_flat(baseline_control.wer(), control_new.wer()),
        });
        rows.push(SweepRow {
            threshold,
            lambda,
            testset: "all-ood".to_string(),
            baseline_wer: baseline_pool.wer(),
            new_wer: pool.wer(),
            werr: werr_or_flat(baseline_pool.wer(), pool.wer()),
        });
        let control_ok = control_new.wer()
            <= baseline_control.wer() * (1.0 + CONTROL_DEGRADATION_LIMIT_PCT / 100.0);
        summaries.push(GridSummary {
            threshold,
            lambda,
            ood_werr: werr_or_flat(baseline_pool.wer(), pool.wer()),
            ood_oracle_werr: werr_or_flat(baseline_pool.oracle(), pool.oracle()),
            control_werr: werr_or_flat(baseline_control.wer(), control_new.wer()),
            control_ok,
        });
    }

    let mut selected: Option<usize> = None;
    for (i, s) in summaries.iter().enumerate() {
        if !s.control_ok {
            continue;
        }
        if selected.map_or(true, |j| s.ood_werr > summaries[j].ood_werr) {
            selected = Some(i);
        }
    }
    if selected.is_none() {
        log::warn!("no grid point satisfies the control degradation constraint");
    }
    Ok(SweepReport {
        rows,
        grid: summaries,
        selected,
        baseline_ood_wer: baseline_pool.wer(),
        baseline_ood_oracle: baseline_pool.oracle(),
        baseline_control_wer: baseline_control.wer(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::ScoredHyp;

    fn hyp(words: &[&str]) -> ScoredHyp {
        ScoredHyp {
            words: words.iter().map(|w| w.to_string()).collect(),
            model_score: 0.0,
            fusion_score: 0.0,
            total: 0.0,
            rescore_total: None,
            tokens: vec![],
        }
    }

    #[test]
    fn identical_sequences_score_zero() {
        let b = wer(&["a", "b", "c"], &["a", "b", "c"]).unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions), (0, 0, 0));
        assert_eq!(b.wer, 0.0);
    }

    #[test]
    fn single_substitution() {
        let b = wer(&["a", "b", "c"], &["a", "x", "c"]).unwrap();
        assert_eq!(b.substitutions, 1);
        assert_eq!(b.edits(), 1);
        assert!((b.wer - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn insertion_and_deletion() {
        let b = wer(&["a", "b"], &["a", "x", "b"]).unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions), (0, 0, 1));
        let b = wer(&["a", "b", "c"], &["a", "c"]).unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions), (0, 1, 0));
    }

    #[test]
    fn empty_reference_rejected() {
        assert!(matches!(
            wer(&[] as &[&str], &["a"]),
            Err(Error::EmptyReference)
        ));
    }

    #[test]
    fn distance_matches_plain_dp_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let vocab = ["a", "b", "c", "d"];
        for _ in 0..100 {
            let r: Vec<&str> = (0..rng.gen_range(1..8))
                .map(|_| vocab[rng.gen_range(0..vocab.len())])
                .collect();
            let h: Vec<&str> = (0..rng.gen_range(0..8))
                .map(|_| vocab[rng.gen_range(0..vocab.len())])
                .collect();
            // Independent quadratic DP, distance only.
            let mut d = vec![vec![0usize; h.len() + 1]; r.len() + 1];
            for i in 0..=r.len() {
                for j in 0..=h.len() {
                    d[i][j] = if i == 0 {
                        j
                    } else if j == 0 {
                        i
                    } else {
                        let sub = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
                        sub.min(d[i][j - 1] + 1).min(d[i - 1][j] + 1)
                    };
                }
            }
            let got = wer(&r, &h).unwrap();
            assert_eq!(got.edits(), d[r.len()][h.len()]);
        }
    }

    #[test]
    fn oracle_wer_takes_minimum() {
        let reference = ["a", "b", "c"];
        let nbest = NBestList(vec![
            hyp(&["a", "x", "c"]),
            hyp(&["a", "b", "c"]),
            hyp(&["x", "y", "z"]),
        ]);
        let o = oracle_wer(&reference, &nbest).unwrap();
        assert_eq!(o.edits(), 0);
        let top = wer(&reference, &nbest.best().words).unwrap();
        assert!(o.edits() <= top.edits());
    }

    #[test]
    fn oracle_of_single_entry_is_its_wer() {
        let reference = ["a", "b"];
        let nbest = NBestList(vec![hyp(&["a", "x"])]);
        let o = oracle_wer(&reference, &nbest).unwrap();
        let w = wer(&reference, &["a", "x"]).unwrap();
        assert_eq!(o, w);
    }

    #[test]
    fn werr_sign_convention() {
        assert_eq!(werr(0.2, 0.2).unwrap(), 0.0);
        assert!((werr(0.20, 0.18).unwrap() - 10.0).abs() < 1e-9);
        assert!(werr(0.20, 0.30).unwrap() < 0.0);
        assert!(matches!(werr(0.0, 0.1), Err(Error::ZeroBaseline)));
    }

    #[test]
    fn testset_tsv_round_trip() {
        let ts = Testset {
            name: "t".into(),
            utterances: vec![
                ("u-0".into(), vec!["play".into(), "music".into()]),
                ("u-1".into(), vec!["stop".into()]),
            ],
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        ts.write_tsv(f.path()).unwrap();
        let back = Testset::read_tsv(f.path()).unwrap();
        assert_eq!(back.utterances, ts.utterances);
    }
}
