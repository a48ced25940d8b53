//! Text corpus ingestion and the deterministic subword inventory.
//!
//! Words are segmented by greedy longest-match over a frequency-ranked
//! substring inventory. Every character of the corpus alphabet is present in
//! both word-internal and word-final form, so any word over the alphabet is
//! segmentable and segmentation round-trips to the original string.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Line-oriented text corpus. Sentence markers are not stored; the LM layer
/// injects them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Vec<String>>,
}

impl Corpus {
    pub fn from_sentences<S: Into<String>, I: IntoIterator<Item = Vec<S>>>(it: I) -> Self {
        Corpus {
            sentences: it
                .into_iter()
                .map(|s| s.into_iter().map(Into::into).collect())
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&s.join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Loads a one-utterance-per-line UTF-8 file. Returns the corpus and the
/// number of blank lines skipped.
pub fn load_corpus(path: &Path, lowercase: bool) -> Result<(Corpus, usize)> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut sentences = Vec::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            skipped += 1;
            continue;
        }
        let words: Vec<String> = line
            .split_whitespace()
            .map(|w| {
                if lowercase {
                    w.to_lowercase()
                } else {
                    w.to_string()
                }
            })
            .collect();
        sentences.push(words);
    }
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    log::info!(
        "loaded {} sentences from {} ({} blank lines skipped)",
        sentences.len(),
        path.display(),
        skipped
    );
    Ok((Corpus { sentences }, skipped))
}

/// Position tag of a subword unit within a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnitPos {
    Internal,
    Final,
}

impl fmt::Display for UnitPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitPos::Internal => write!(f, "internal"),
            UnitPos::Final => write!(f, "final"),
        }
    }
}

/// One subword unit: surface string plus its position tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubwordUnit {
    pub text: String,
    pub pos: UnitPos,
}

/// Fixed unit inventory with dense 0-based ids.
#[derive(Debug, Clone)]
pub struct SubwordInventory {
    units: Vec<SubwordUnit>,
    internal_ids: HashMap<String, u32>,
    final_ids: HashMap<String, u32>,
    alphabet: BTreeSet<char>,
}

impl SubwordInventory {
    fn from_units(units: Vec<SubwordUnit>, alphabet: BTreeSet<char>) -> Self {
        let mut internal_ids = HashMap::new();
        let mut final_ids = HashMap::new();
        for (i, u) in units.iter().enumerate() {
            match u.pos {
                UnitPos::Internal => internal_ids.insert(u.text.clone(), i as u32),
                UnitPos::Final => final_ids.insert(u.text.clone(), i as u32),
            };
        }
        SubwordInventory {
            units,
            internal_ids,
            final_ids,
            alphabet,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn unit(&self, id: u32) -> &SubwordUnit {
        &self.units[id as usize]
    }

    pub fn units(&self) -> &[SubwordUnit] {
        &self.units
    }

    /// Greedy longest-match segmentation. The last unit carries the
    /// word-final tag; concatenating unit strings reproduces the word.
    pub fn segment(&self, word: &str) -> Result<Vec<u32>> {
        if word.is_empty() {
            return Err(Error::Unsegmentable {
                word: word.to_string(),
            });
        }
        for ch in word.chars() {
            if !self.alphabet.contains(&ch) {
                return Err(Error::UnknownChar {
                    word: word.to_string(),
                    ch,
                });
            }
        }
        // Char boundary offsets so slicing stays valid UTF-8.
        let mut bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).collect();
        bounds.push(word.len());
        let n = bounds.len() - 1;
        let mut out = Vec::new();
        let mut i = 0usize;
        while i < n {
            let mut matched = None;
            for j in (i + 1..=n).rev() {
                let piece = &word[bounds[i]..bounds[j]];
                let id = if j == n {
                    self.final_ids.get(piece)
                } else {
                    self.internal_ids.get(piece)
                };
                if let Some(&id) = id {
                    matched = Some((id, j));
                    break;
                }
            }
            match matched {
                Some((id, j)) => {
                    out.push(id);
                    i = j;
                }
                // Unreachable with character coverage, but keep it total.
                None => {
                    return Err(Error::Unsegmentable {
                        word: word.to_string(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Concatenated surface string of a unit id sequence.
    pub fn text_of(&self, ids: &[u32]) -> String {
        ids.iter().map(|&id| self.unit(id).text.as_str()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, u) in self.units.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\n", u.text, u.pos, i));
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |line: usize, msg: &str| Error::InventoryFormat {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut units = Vec::new();
        let mut alphabet = BTreeSet::new();
        for (ln, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(ln + 1, "expected <string>\\t<internal|final>\\t<id>"));
            }
            let pos = match fields[1] {
                "internal" => UnitPos::Internal,
                "final" => UnitPos::Final,
                _ => return Err(bad(ln + 1, "position tag must be internal or final")),
            };
            let id: usize = fields[2]
                .parse()
                .map_err(|_| bad(ln + 1, "id is not an integer"))?;
            if id != units.len() {
                return Err(bad(ln + 1, "unit ids must be dense and ascending"));
            }
            alphabet.extend(fields[0].chars());
            units.push(SubwordUnit {
                text: fields[0].to_string(),
                pos,
            });
        }
        if units.is_empty() {
            return Err(bad(0, "inventory has no units"));
        }
        Ok(SubwordInventory::from_units(units, alphabet))
    }
}

/// Builds the inventory: every alphabet character in both position tags, then
/// the most frequent multi-character substrings (added as internal+final
/// pairs) while the budget allows. Ties break lexicographically.
pub fn build_subword_inventory(corpus: &Corpus, max_units: usize) -> Result<SubwordInventory> {
    let mut alphabet = BTreeSet::new();
    for s in &corpus.sentences {
        for w in s {
            alphabet.extend(w.chars());
        }
    }
    let needed = 2 * alphabet.len();
    if max_units < needed {
        return Err(Error::SubwordBudget {
            needed,
            given: max_units,
        });
    }

    // Token-frequency counts of multi-character substrings.
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for s in &corpus.sentences {
        for w in s {
            let bounds: Vec<usize> = w.char_indices().map(|(i, _)| i).collect();
            let n = bounds.len();
            let mut ext = bounds.clone();
            ext.push(w.len());
            for i in 0..n {
                for j in i + 2..=n {
                    *freq.entry(w[ext[i]..ext[j]].to_string()).or_insert(0) += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(&String, u64)> = freq.iter().map(|(s, &c)| (s, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut units = Vec::with_capacity(max_units);
    for ch in &alphabet {
        let t = ch.to_string();
        units.push(SubwordUnit {
            text: t.clone(),
            pos: UnitPos::Internal,
        });
        units.push(SubwordUnit {
            text: t,
            pos: UnitPos::Final,
        });
    }
    for (s, _) in ranked {
        if units.len() + 2 > max_units {
            break;
        }
        units.push(SubwordUnit {
            text: s.clone(),
            pos: UnitPos::Internal,
        });
        units.push(SubwordUnit {
            text: s.clone(),
            pos: UnitPos::Final,
        });
    }
    Ok(SubwordInventory::from_units(units, alphabet))
}
