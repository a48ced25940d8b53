//! Parameter resolution: command-line flag > config file > default.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use biasfst_core::pipeline::PipelineConfig;

/// Flat `key = value` config file; keys use the flag spelling, `ood-corpus`
/// may repeat, `#` starts a comment.
#[derive(Default)]
struct FileCfg {
    values: HashMap<String, Vec<String>>,
}

impl FileCfg {
    fn parse(path: &Path) -> Result<FileCfg> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut values: HashMap<String, Vec<String>> = HashMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), ln + 1))?;
            values
                .entry(key.trim().to_string())
                .or_default()
                .push(value.trim().to_string());
        }
        Ok(FileCfg { values })
    }

    fn one(&self, key: &str) -> Option<&str> {
        self.values.get(key).and_then(|v| v.last()).map(String::as_str)
    }

    fn many(&self, key: &str) -> Vec<String> {
        self.values.get(key).cloned().unwrap_or_default()
    }
}

fn resolve<T: std::str::FromStr>(flag: Option<T>, file: Option<&str>, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match file {
        Some(raw) => raw
            .parse()
            .map_err(|e| anyhow::anyhow!("bad config value {raw:?}: {e}")),
        None => Ok(default),
    }
}

pub struct Settings {
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
    pub jobs: Option<usize>,
    thresholds: Vec<f64>,
    lambdas: Vec<f64>,
    general_corpus: Option<PathBuf>,
    ood_corpora: Vec<PathBuf>,
    out_dir: Option<PathBuf>,
}

fn parse_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| anyhow::anyhow!("bad list entry {x:?}: {e}"))
        })
        .collect()
}

impl Settings {
    pub fn load(cli: &crate::Cli) -> Result<Settings> {
        let file = match &cli.config {
            Some(p) => FileCfg::parse(p)?,
            None => FileCfg::default(),
        };
        let d = PipelineConfig::default();
        let s = Settings {
            order: resolve(cli.order, file.one("order"), d.order)?,
            discount_cutoff: resolve(
                cli.discount_cutoff,
                file.one("discount-cutoff"),
                d.discount_cutoff,
            )?,
            subword_budget: resolve(
                cli.subword_budget,
                file.one("subword-budget"),
                d.subword_budget,
            )?,
            threshold: resolve(cli.threshold, file.one("threshold"), d.threshold)?,
            lambda: resolve(cli.lambda, file.one("lambda"), d.lambda)?,
            alpha: resolve(cli.alpha, file.one("alpha"), d.alpha)?,
            word_reward: resolve(cli.word_reward, file.one("word-reward"), d.word_reward)?,
            beta: resolve(cli.beta, file.one("beta"), d.beta)?,
            epsilon: resolve(cli.epsilon, file.one("epsilon"), d.epsilon)?,
            beam: resolve(cli.beam, file.one("beam"), d.beam)?,
            nbest: resolve(cli.nbest, file.one("nbest"), d.nbest)?,
            seed: resolve(cli.seed, file.one("seed"), d.seed)?,
            jobs: match (cli.jobs, file.one("jobs")) {
                (Some(j), _) => Some(j),
                (None, Some(raw)) => Some(raw.parse().context("bad jobs value")?),
                (None, None) => None,
            },
            thresholds: match (&cli.thresholds, file.one("thresholds")) {
                (Some(raw), _) => parse_list(raw)?,
                (None, Some(raw)) => parse_list(raw)?,
                (None, None) => vec![2.0, 2.5, 3.0],
            },
            lambdas: match (&cli.lambdas, file.one("lambdas")) {
                (Some(raw), _) => parse_list(raw)?,
                (None, Some(raw)) => parse_list(raw)?,
                (None, None) => vec![0.25, 0.5, 0.75],
            },
            general_corpus: cli
                .general_corpus
                .clone()
                .or_else(|| file.one("general-corpus").map(PathBuf::from)),
            ood_corpora: if cli.ood_corpus.is_empty() {
                file.many("ood-corpus").into_iter().map(PathBuf::from).collect()
            } else {
                cli.ood_corpus.clone()
            },
            out_dir: cli
                .out_dir
                .clone()
                .or_else(|| file.one("out-dir").map(PathBuf::from)),
        };
        if s.beam < 1 || s.nbest < 1 || s.nbest > s.beam {
            bail!("need 1 <= nbest <= beam (got beam={} nbest={})", s.beam, s.nbest);
        }
        Ok(s)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            order: self.order,
            discount_cutoff: self.discount_cutoff,
            subword_budget: self.subword_budget,
            threshold: self.threshold,
            lambda: self.lambda,
            alpha: self.alpha,
            word_reward: self.word_reward,
            beta: self.beta,
            epsilon: self.epsilon,
            beam: self.beam,
            nbest: self.nbest,
            seed: self.seed,
        }
    }

    pub fn grid(&self) -> Vec<(f64, f64)> {
        self.thresholds
            .iter()
            .flat_map(|&t| self.lambdas.iter().map(move |&l| (t, l)))
            .collect()
    }

    pub fn general_corpus(&self) -> Result<&Path> {
        self.general_corpus
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("--general-corpus is required"))
    }

    pub fn ood_corpora(&self) -> &[PathBuf] {
        &self.ood_corpora
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("--out-dir is required"))
    }
}
