//! biasfst: train n-gram LMs, build likelihood-ratio boost tables and
//! transducers, synthesize surrogate test suites, decode with shallow
//! fusion, rescore, evaluate, and sweep operating points.

mod settings;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use biasfst_core::corpus::{build_subword_inventory, load_corpus, Corpus, SubwordInventory};
use biasfst_core::decoder::{read_nbest_jsonl, write_nbest_jsonl, DecodedUtterance};
use biasfst_core::eval::{oracle_wer, score_testset, sweep, wer, PooledWer, Testset};
use biasfst_core::fst::BoostingFst;
use biasfst_core::llr::{build_boost_table, BoostTable};
use biasfst_core::ngram::{
    count_ngrams, estimate_katz, interpolate, prune_by_count, read_arpa, write_arpa,
    InterpolationSpec,
};
use biasfst_core::pipeline::train_pipeline;
use biasfst_core::rescore::{rescore_nbest, RescoreConfig};
use biasfst_core::synth::{generate_suite, SynthConfig};

use settings::Settings;

#[derive(Parser)]
#[command(name = "biasfst", version, about = "n-gram boosting adaptation toolkit")]
struct Cli {
    /// Flat key=value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    general_corpus: Option<PathBuf>,

    /// OOD corpus, repeatable; multiple corpora interpolate with equal weights.
    #[arg(long, global = true)]
    ood_corpus: Vec<PathBuf>,

    #[arg(long, global = true)]
    order: Option<usize>,

    #[arg(long, global = true)]
    discount_cutoff: Option<u64>,

    #[arg(long, global = true)]
    subword_budget: Option<usize>,

    #[arg(long, global = true)]
    threshold: Option<f64>,

    #[arg(long, global = true)]
    lambda: Option<f64>,

    #[arg(long, global = true)]
    alpha: Option<f64>,

    #[arg(long, global = true)]
    word_reward: Option<f64>,

    #[arg(long, global = true)]
    beta: Option<f64>,

    #[arg(long, global = true)]
    epsilon: Option<f64>,

    #[arg(long, global = true)]
    beam: Option<usize>,

    #[arg(long, global = true)]
    nbest: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Comma-separated sweep thresholds.
    #[arg(long, global = true)]
    thresholds: Option<String>,

    /// Comma-separated sweep fusion weights.
    #[arg(long, global = true)]
    lambdas: Option<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a Katz-smoothed ARPA model from a text corpus.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional count-threshold pruning of the highest order.
        #[arg(long)]
        prune_min_count: Option<u64>,
    },
    /// Interpolate ARPA models with equal weights.
    Interpolate {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score OOD n-grams against the general model and emit the boost table.
    BuildBoost {
        #[arg(long)]
        gen_lm: PathBuf,
        #[arg(long)]
        ood_lm: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compile a boost table into the word-level boosting transducer.
    BuildFst {
        #[arg(long)]
        boost_table: PathBuf,
        #[arg(long)]
        inventory: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the seeded synthetic corpus/testset suite.
    SynthSuite,
    /// Decode a testset through the surrogate channel with optional fusion.
    Decode {
        #[arg(long)]
        inventory: PathBuf,
        #[arg(long)]
        fst: Option<PathBuf>,
        #[arg(long)]
        testset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Second-pass rescoring of an n-best file.
    Rescore {
        #[arg(long)]
        nbest: PathBuf,
        #[arg(long)]
        rescore_lm: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// WER and oracle WER of an n-best file against its testset.
    Evaluate {
        #[arg(long)]
        nbest: PathBuf,
        #[arg(long)]
        testset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold/weight grid sweep with the control-degradation rule.
    Sweep {
        #[arg(long, required = true)]
        testset: Vec<PathBuf>,
        #[arg(long)]
        control_testset: PathBuf,
    },
    /// Full chain: train, boost, decode, rescore, evaluate.
    Pipeline {
        /// Generate the synthetic suite instead of reading corpora.
        #[arg(long)]
        synth: bool,
        #[arg(long)]
        testset: Vec<PathBuf>,
        #[arg(long)]
        control_testset: Option<PathBuf>,
    },
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let (corpus, _) = load_corpus(path, true)?;
    Ok(corpus)
}

fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[derive(serde::Serialize)]
struct EvalReport {
    testset: String,
    utterances: usize,
    wer: f64,
    oracle_wer: f64,
    substitutions: usize,
    deletions: usize,
    insertions: usize,
    reference_words: usize,
}

fn evaluate_nbest(testset: &Testset, decoded: &[DecodedUtterance]) -> Result<EvalReport> {
    if testset.utterances.len() != decoded.len() {
        bail!(
            "testset {} has {} utterances, n-best file has {}",
            testset.name,
            testset.utterances.len(),
            decoded.len()
        );
    }
    let mut subs = 0;
    let mut dels = 0;
    let mut ins = 0;
    let mut pooled = PooledWer::default();
    for ((_, reference), utt) in testset.utterances.iter().zip(decoded) {
        let top = wer(reference, &utt.nbest.best().words)?;
        let orc = oracle_wer(reference, &utt.nbest)?;
        subs += top.substitutions;
        dels += top.deletions;
        ins += top.insertions;
        pooled.edits += top.edits();
        pooled.oracle_edits += orc.edits();
        pooled.reference_words += top.reference_words;
    }
    Ok(EvalReport {
        testset: testset.name.clone(),
        utterances: decoded.len(),
        wer: pooled.wer(),
        oracle_wer: pooled.oracle(),
        substitutions: subs,
        deletions: dels,
        insertions: ins,
        reference_words: pooled.reference_words,
    })
}

/// Rebuilds the trained pipeline from corpora on disk.
fn load_pipeline(s: &Settings) -> Result<biasfst_core::pipeline::TrainedPipeline> {
    let general = read_corpus(s.general_corpus()?)?;
    if s.ood_corpora().is_empty() {
        bail!("at least one --ood-corpus is required");
    }
    let ood: Vec<Corpus> = s
        .ood_corpora()
        .iter()
        .map(|p| read_corpus(p))
        .collect::<Result<_>>()?;
    Ok(train_pipeline(&general, &ood, &s.pipeline_config())?)
}

fn run(cli: Cli) -> Result<()> {
    let s = Settings::load(&cli)?;
    if let Some(jobs) = s.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("initializing worker pool")?;
    }

    match &cli.cmd {
        Cmd::TrainLm {
            corpus,
            out,
            prune_min_count,
        } => {
            let c = read_corpus(corpus)?;
            let counts = count_ngrams(&c, s.order)?;
            let mut model = estimate_katz(&counts, s.discount_cutoff)?;
            if let Some(min_count) = prune_min_count {
                model = prune_by_count(&model, &counts, *min_count)?;
            }
            model.set_name(
                corpus
                    .file_stem()
                    .map(|x| x.to_string_lossy().into_owned())
                    .as_deref()
                    .unwrap_or("lm"),
            );
            write_arpa(&model, out)?;
            log::info!("wrote {} ({} entries)", out.display(), model.total_entries());
        }
        Cmd::Interpolate { model, out } => {
            let models: Vec<_> = model
                .iter()
                .map(|p| read_arpa(p))
                .collect::<std::result::Result<_, _>>()?;
            let mixed = interpolate(&InterpolationSpec::equal(&models)?)?;
            write_arpa(&mixed, out)?;
        }
        Cmd::BuildBoost { gen_lm, ood_lm, out } => {
            let gen = read_arpa(gen_lm)?;
            let ood = read_arpa(ood_lm)?;
            let table = build_boost_table(&gen, &ood, s.threshold)?;
            table.write_tsv(out)?;
            log::info!("wrote {} ({} entries)", out.display(), table.len());
        }
        Cmd::BuildFst {
            boost_table,
            inventory,
            out,
        } => {
            let table = BoostTable::read_tsv(boost_table)?;
            let inv = SubwordInventory::read(inventory)?;
            let fst = BoostingFst::build(&table, &inv)?;
            fst.write(out)?;
            log::info!(
                "wrote {} ({} states, {} arcs)",
                out.display(),
                fst.num_states(),
                fst.num_arcs()
            );
        }
        Cmd::SynthSuite => {
            let dir = s.out_dir()?;
            fs::create_dir_all(dir)?;
            let suite = generate_suite(&SynthConfig {
                seed: s.seed,
                ..SynthConfig::default()
            });
            suite.general.write(&out_file(dir, "general.txt"))?;
            for (name, corpus) in &suite.ood {
                corpus.write(&out_file(dir, &format!("ood-{name}.txt")))?;
            }
            for ts in &suite.ood_testsets {
                ts.write_tsv(&out_file(dir, &format!("{}.tsv", ts.name)))?;
            }
            suite
                .control_testset
                .write_tsv(&out_file(dir, "test-control.tsv"))?;
            let inv = build_subword_inventory(&suite.general, s.subword_budget)?;
            inv.write(&out_file(dir, "inventory.tsv"))?;
            log::info!("suite written to {}", dir.display());
        }
        Cmd::Decode {
            inventory,
            fst,
            testset,
            out,
        } => {
            let tp = load_pipeline(&s)?;
            let inv = SubwordInventory::read(inventory)?;
            let fst = match fst {
                Some(p) => Some(BoostingFst::read(p, &inv)?),
                None => None,
            };
            let ts = Testset::read_tsv(testset)?;
            let decoded = tp.decode_testset(&ts, fst.as_ref(), s.lambda)?;
            write_nbest_jsonl(&decoded, out)?;
        }
        Cmd::Rescore {
            nbest,
            rescore_lm,
            out,
        } => {
            let lm = read_arpa(rescore_lm)?;
            let cfg = RescoreConfig {
                alpha: s.alpha,
                word_reward: s.word_reward,
                scorer: &lm,
            };
            let rescored: Vec<DecodedUtterance> = read_nbest_jsonl(nbest)?
                .into_iter()
                .map(|u| {
                    Ok(DecodedUtterance {
                        utterance_id: u.utterance_id,
                        nbest: rescore_nbest(&u.nbest, &cfg)?,
                    })
                })
                .collect::<Result<_>>()?;
            write_nbest_jsonl(&rescored, out)?;
        }
        Cmd::Evaluate {
            nbest,
            testset,
            out,
        } => {
            let ts = Testset::read_tsv(testset)?;
            let decoded = read_nbest_jsonl(nbest)?;
            let report = evaluate_nbest(&ts, &decoded)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => fs::write(p, text)?,
                None => println!("{text}"),
            }
        }
        Cmd::Sweep {
            testset,
            control_testset,
        } => {
            let dir = s.out_dir()?;
            fs::create_dir_all(dir)?;
            let tp = load_pipeline(&s)?;
            let testsets: Vec<Testset> = testset
                .iter()
                .map(|p| Testset::read_tsv(p))
                .collect::<std::result::Result<_, _>>()?;
            let control = Testset::read_tsv(control_testset)?;
            let report = sweep(&tp, &s.grid(), &testsets, &control)?;
            report.write_csv(&out_file(dir, "sweep.csv"))?;
            report.write_selected_json(&out_file(dir, "selected.json"))?;
            match report.selected_point() {
                Some(p) => log::info!(
                    "selected T={} lambda={} (ood werr {:+.1}%)",
                    p.threshold,
                    p.lambda,
                    p.ood_werr
                ),
                None => log::warn!("no feasible operating point"),
            }
        }
        Cmd::Pipeline {
            synth,
            testset,
            control_testset,
        } => {
            run_pipeline(&s, *synth, testset, control_testset.as_deref())?;
        }
    }
    Ok(())
}

/// One full pass at a fixed operating point, writing every intermediate
/// artifact into the output directory.
fn run_pipeline(
    s: &Settings,
    synth: bool,
    testset_paths: &[PathBuf],
    control_path: Option<&Path>,
) -> Result<()> {
    let dir = s.out_dir()?.to_path_buf();
    fs::create_dir_all(&dir)?;

    let (general, ood, testsets, control) = if synth {
        let suite = generate_suite(&SynthConfig {
            seed: s.seed,
            ..SynthConfig::default()
        });
        suite.general.write(&out_file(&dir, "general.txt"))?;
        for (name, corpus) in &suite.ood {
            corpus.write(&out_file(&dir, &format!("ood-{name}.txt")))?;
        }
        for ts in &suite.ood_testsets {
            ts.write_tsv(&out_file(&dir, &format!("{}.tsv", ts.name)))?;
        }
        suite
            .control_testset
            .write_tsv(&out_file(&dir, "test-control.tsv"))?;
        let ood: Vec<Corpus> = suite.ood.iter().map(|(_, c)| c.clone()).collect();
        (
            suite.general,
            ood,
            suite.ood_testsets,
            Some(suite.control_testset),
        )
    } else {
        let general = read_corpus(s.general_corpus()?)?;
        if s.ood_corpora().is_empty() {
            bail!("at least one --ood-corpus is required");
        }
        let ood: Vec<Corpus> = s
            .ood_corpora()
            .iter()
            .map(|p| read_corpus(p))
            .collect::<Result<_>>()?;
        let testsets: Vec<Testset> = testset_paths
            .iter()
            .map(|p| Testset::read_tsv(p))
            .collect::<std::result::Result<_, _>>()?;
        if testsets.is_empty() {
            bail!("pipeline needs at least one --testset");
        }
        let control = control_path.map(Testset::read_tsv).transpose()?;
        (general, ood, testsets, control)
    };

    let cfg = s.pipeline_config();
    let tp = train_pipeline(&general, &ood, &cfg)?;
    tp.inventory.write(&out_file(&dir, "inventory.tsv"))?;
    write_arpa(&tp.gen_lm, &out_file(&dir, "gen.arpa"))?;
    write_arpa(&tp.ood_lm, &out_file(&dir, "ood.arpa"))?;
    write_arpa(&tp.rescore_lm, &out_file(&dir, "rescore.arpa"))?;

    let table = tp.boost_table(s.threshold)?;
    table.write_tsv(&out_file(&dir, "boost.tsv"))?;
    let fst = BoostingFst::build(&table, &tp.inventory)?;
    fst.write(&out_file(&dir, "boost.fst"))?;

    let rescore_cfg = tp.rescore_config();
    let mut reports: Vec<serde_json::Value> = Vec::new();
    let all: Vec<&Testset> = testsets.iter().chain(control.iter()).collect();
    for ts in all {
        let baseline = tp.decode_testset(ts, None, 0.0)?;
        write_nbest_jsonl(&baseline, &out_file(&dir, &format!("{}.baseline.jsonl", ts.name)))?;
        let fused = tp.decode_testset(ts, Some(&fst), s.lambda)?;
        write_nbest_jsonl(&fused, &out_file(&dir, &format!("{}.boosted.jsonl", ts.name)))?;
        let rescored: Vec<DecodedUtterance> = fused
            .iter()
            .map(|u| {
                Ok(DecodedUtterance {
                    utterance_id: u.utterance_id.clone(),
                    nbest: rescore_nbest(&u.nbest, &rescore_cfg)?,
                })
            })
            .collect::<Result<_>>()?;
        write_nbest_jsonl(&rescored, &out_file(&dir, &format!("{}.rescored.jsonl", ts.name)))?;

        let base = score_testset(ts, &baseline)?;
        let boost = score_testset(ts, &fused)?;
        let resc = score_testset(ts, &rescored)?;
        reports.push(serde_json::json!({
            "testset": ts.name,
            "baseline_wer": base.wer(),
            "baseline_oracle": base.oracle(),
            "boosted_wer": boost.wer(),
            "boosted_oracle": boost.oracle(),
            "rescored_wer": resc.wer(),
        }));
    }
    let report = serde_json::json!({
        "threshold": s.threshold,
        "lambda": s.lambda,
        "alpha": s.alpha,
        "word_reward": s.word_reward,
        "beta": s.beta,
        "seed": s.seed,
        "boost_entries": table.len(),
        "testsets": reports,
    });
    fs::write(
        out_file(&dir, "report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    log::info!("pipeline artifacts in {}", dir.display());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("BIASFST_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("biasfst: error: {e:#}");
        std::process::exit(1);
    }
}
