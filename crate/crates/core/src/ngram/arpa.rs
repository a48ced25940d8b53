//! ARPA text format. Values are log10 on disk, natural log in memory.

use std::f64::consts::LN_10;
use std::fs;
use std::path::Path;

use super::{Entry, NGramModel, Vocab};
use crate::error::{Error, Result};

/// Writes the standard ARPA sections. N-grams are listed in lexicographic
/// word order and floats use shortest round-trip formatting, so output is
/// byte-identical for identical models.
pub fn write_arpa(model: &NGramModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("\\data\\\n");
    for k in 1..=model.order() {
        out.push_str(&format!("ngram {}={}\n", k, model.level_len(k)));
    }
    for k in 1..=model.order() {
        out.push_str(&format!("\n\\{k}-grams:\n"));
        for (words, logp, backoff) in model.ngrams(k) {
            out.push_str(&format!("{}\t{}", logp / LN_10, words.join(" ")));
            if let Some(bw) = backoff {
                out.push_str(&format!("\t{}", bw / LN_10));
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_arpa(path: &Path) -> Result<NGramModel> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |line: usize, msg: String| Error::ArpaFormat {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate();

    // Header.
    let mut declared: Vec<usize> = Vec::new();
    loop {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| bad(0, "missing \\data\\ section".into()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "\\data\\" {
            break;
        }
        return Err(bad(ln + 1, format!("expected \\data\\, found {line:?}")));
    }
    loop {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| bad(0, "truncated header".into()))?;
        let line = line.trim();
        if line.is_empty() {
            break;
        }
        let rest = line
            .strip_prefix("ngram ")
            .ok_or_else(|| bad(ln + 1, format!("expected ngram k=N, found {line:?}")))?;
        let (k, n) = rest
            .split_once('=')
            .ok_or_else(|| bad(ln + 1, "expected ngram k=N".into()))?;
        let k: usize = k
            .trim()
            .parse()
            .map_err(|_| bad(ln + 1, "bad order in header".into()))?;
        if k != declared.len() + 1 {
            return Err(bad(ln + 1, "header orders must be 1..order in sequence".into()));
        }
        declared.push(
            n.trim()
                .parse()
                .map_err(|_| bad(ln + 1, "bad count in header".into()))?,
        );
    }
    let order = declared.len();
    if !(1..=super::MAX_ORDER).contains(&order) {
        return Err(bad(0, format!("unsupported order {order}")));
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "arpa".to_string());
    let mut model = NGramModel::empty(&name, order, Vocab::with_markers());

    let mut current: Option<usize> = None;
    let mut seen_end = false;
    for (ln, raw) in lines {
        let line = raw.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        if line.trim() == "\\end\\" {
            seen_end = true;
            continue;
        }
        if seen_end {
            return Err(bad(ln + 1, "content after \\end\\".into()));
        }
        if let Some(section) = line.trim().strip_prefix('\\').and_then(|s| s.strip_suffix("-grams:")) {
            let k: usize = section
                .parse()
                .map_err(|_| bad(ln + 1, "bad section header".into()))?;
            if k != current.map_or(1, |c| c + 1) {
                return Err(bad(ln + 1, format!("section {k} out of order")));
            }
            if k > order {
                return Err(bad(ln + 1, "section order exceeds header".into()));
            }
            current = Some(k);
            continue;
        }
        let k = current.ok_or_else(|| bad(ln + 1, "entry before any section header".into()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let has_backoff = match fields.len() {
            n if n == k + 1 => false,
            n if n == k + 2 => true,
            _ => {
                return Err(bad(
                    ln + 1,
                    format!("expected {} or {} fields, found {}", k + 1, k + 2, fields.len()),
                ))
            }
        };
        let logp: f64 = fields[0]
            .parse()
            .map_err(|_| bad(ln + 1, "bad log-prob".into()))?;
        let backoff = if has_backoff {
            Some(
                fields[k + 1]
                    .parse::<f64>()
                    .map_err(|_| bad(ln + 1, "bad backoff weight".into()))?
                    * LN_10,
            )
        } else {
            None
        };
        let ids: Vec<u32> = fields[1..=k].iter().map(|w| model.vocab.intern(w)).collect();
        model.levels[k - 1].insert(
            ids.into_boxed_slice(),
            Entry {
                logp: logp * LN_10,
                backoff,
            },
        );
    }
    if !seen_end {
        return Err(bad(0, "missing \\end\\".into()));
    }
    for (k, &want) in declared.iter().enumerate() {
        let got = model.levels[k].len();
        if got != want {
            return Err(bad(
                0,
                format!("header declares {want} {}-grams, body has {got}", k + 1),
            ));
        }
    }
    Ok(model)
}
