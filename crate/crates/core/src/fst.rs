//! Word-level boosting transducer with context and backoff arcs.
//!
//! States are n-gram contexts (proper prefixes of boosted entries). An arc's
//! weight is the score of the longest boosted n-gram that is a suffix of the
//! (state history + word) sequence, so a walk applies exactly the
//! longest-suffix match per position and path totals equal
//! [`sentence_boost_oracle`](crate::llr::sentence_boost_oracle) with no
//! tolerance. Arcs are sorted by the subword segmentation of their word
//! label, which makes common-prefix lookup a binary search.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::corpus::SubwordInventory;
use crate::error::{Error, Result};
use crate::llr::{quantize_score, BoostTable};
use crate::ngram::{BOS, EOS};

pub type StateId = u32;

/// Pseudo-unit for the `</s>` arc label; sorts after every real unit and
/// never matches a pending prefix.
const SEG_SENTINEL: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct FstArc {
    word: u32,
    seg: Box<[u32]>,
    weight: f64,
    next: StateId,
}

#[derive(Debug, Clone)]
struct FstState {
    history: Vec<u32>,
    /// Sorted by segmentation sequence.
    arcs: Vec<FstArc>,
    /// (word symbol, arc index), sorted by word symbol.
    by_word: Vec<(u32, u32)>,
    backoff: Option<StateId>,
}

/// Immutable boosting transducer. Decoder hypotheses hold [`FstCursor`]
/// values into it; cursors are small and freely copyable.
#[derive(Debug, Clone)]
pub struct BoostingFst {
    order: usize,
    words: Vec<String>,
    word_ids: HashMap<String, u32>,
    states: Vec<FstState>,
    start: StateId,
    units: Vec<(String, bool)>, // (text, is word-final)
}

/// Per-hypothesis decoding state: current context state, the subword buffer
/// of the in-progress word, and the provisional lookahead weight currently
/// applied. Empty pending implies zero provisional.
#[derive(Debug, Clone, PartialEq)]
pub struct FstCursor {
    pub state: StateId,
    pending: Vec<u32>,
    provisional: f64,
}

impl FstCursor {
    pub fn pending(&self) -> &[u32] {
        &self.pending
    }

    pub fn provisional(&self) -> f64 {
        self.provisional
    }
}

impl BoostingFst {
    /// Compiles a boost table. Context arcs carry the score of any shorter
    /// boosted n-gram that matching them completes (zero when none), backoff
    /// arcs carry zero, and every word label is segmented with `inv`.
    pub fn build(table: &BoostTable, inv: &SubwordInventory) -> Result<BoostingFst> {
        let entries: BTreeMap<Vec<&str>, f64> = table
            .entries()
            .map(|(w, s)| (w.iter().map(String::as_str).collect(), s))
            .collect();
        let order = table.max_len().max(1);

        // Context states: every proper prefix of every entry.
        let mut state_keys: BTreeSet<Vec<&str>> = BTreeSet::new();
        state_keys.insert(Vec::new());
        for words in entries.keys() {
            for len in 1..words.len() {
                state_keys.insert(words[..len].to_vec());
            }
        }

        // Word symbols and their segmentations.
        let mut sym_set: BTreeSet<&str> = BTreeSet::new();
        for words in entries.keys() {
            sym_set.extend(words.iter().copied());
        }
        let mut words_tab: Vec<String> = Vec::with_capacity(sym_set.len());
        let mut word_ids = HashMap::new();
        let mut segs: Vec<Option<Box<[u32]>>> = Vec::with_capacity(sym_set.len());
        for w in &sym_set {
            let seg = if *w == EOS {
                Some(Box::from([SEG_SENTINEL]))
            } else if *w == BOS {
                None
            } else {
                Some(inv.segment(w)?.into_boxed_slice())
            };
            word_ids.insert(w.to_string(), words_tab.len() as u32);
            words_tab.push(w.to_string());
            segs.push(seg);
        }

        let state_index: BTreeMap<&Vec<&str>, StateId> = state_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k, i as StateId))
            .collect();
        let lookup = |h: &[&str]| -> Option<StateId> { state_index.get(&h.to_vec()).copied() };

        // Candidate arcs: one per (state, word) that either completes an
        // entry or builds context toward a longer one.
        let mut arc_words: BTreeMap<Vec<&str>, BTreeSet<&str>> = BTreeMap::new();
        for words in entries.keys() {
            let (last, ctx) = words.split_last().unwrap();
            if *last != BOS {
                arc_words.entry(ctx.to_vec()).or_default().insert(last);
            }
        }
        for key in &state_keys {
            if let Some((last, ctx)) = key.split_last() {
                if *last != BOS {
                    arc_words.entry(ctx.to_vec()).or_default().insert(last);
                }
            }
        }

        let mut states: Vec<FstState> = state_keys
            .iter()
            .map(|k| FstState {
                history: Vec::with_capacity(k.len()),
                arcs: Vec::new(),
                by_word: Vec::new(),
                backoff: None,
            })
            .collect();

        for (ctx, words) in &arc_words {
            let src = lookup(ctx).expect("arc context is a state");
            for w in words {
                let mut extended: Vec<&str> = ctx.clone();
                extended.push(w);
                // Longest boosted entry that is a suffix of history + word.
                let mut weight = 0.0;
                for i in 0..extended.len() {
                    if let Some(&s) = entries.get(&extended[i..].to_vec()) {
                        weight = s;
                        break;
                    }
                }
                // Longest suffix of history + word that is a state.
                let mut next = 0;
                for i in 0..=extended.len() {
                    if let Some(id) = lookup(&extended[i..]) {
                        next = id;
                        break;
                    }
                }
                let word = word_ids[*w];
                let seg = segs[word as usize]
                    .as_ref()
                    .expect("arc labels are segmentable")
                    .clone();
                states[src as usize].arcs.push(FstArc {
                    word,
                    seg,
                    weight,
                    next,
                });
            }
        }

        for (key, &id) in &state_index {
            let st = &mut states[id as usize];
            st.history = key.iter().map(|w| word_ids[*w]).collect();
            st.arcs.sort_by(|a, b| a.seg.cmp(&b.seg));
            st.by_word = st
                .arcs
                .iter()
                .enumerate()
                .map(|(i, a)| (a.word, i as u32))
                .collect();
            st.by_word.sort_by_key(|&(w, _)| w);
            if !key.is_empty() {
                let mut back = 0;
                for i in 1..=key.len() {
                    if let Some(b) = lookup(&key[i..]) {
                        back = b;
                        break;
                    }
                }
                st.backoff = Some(back);
            }
        }

        let start = lookup(&[BOS]).unwrap_or(0);
        Ok(BoostingFst {
            order,
            words: words_tab,
            word_ids,
            states,
            start,
            units: inv
                .units()
                .iter()
                .map(|u| (u.text.clone(), u.pos == crate::corpus::UnitPos::Final))
                .collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn start_state(&self) -> StateId {
        self.start
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.states.iter().map(|s| s.arcs.len()).sum()
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    /// Arcs of one state in their sorted order: (word, segmentation, weight,
    /// next state).
    pub fn arcs(&self, state: StateId) -> impl Iterator<Item = (&str, &[u32], f64, StateId)> {
        self.states[state as usize]
            .arcs
            .iter()
            .map(|a| (self.words[a.word as usize].as_str(), &a.seg[..], a.weight, a.next))
    }

    /// Unit table captured at build time; must match the decoder inventory.
    pub fn units_match(&self, inv: &SubwordInventory) -> bool {
        self.units.len() == inv.len()
            && self.units.iter().zip(inv.units()).all(|(a, b)| {
                a.0 == b.text && a.1 == (b.pos == crate::corpus::UnitPos::Final)
            })
    }

    /// Consumes one word: binary search on the sorted arcs of the current
    /// state, falling back through zero-weight backoff arcs. Total.
    pub fn advance(&self, state: StateId, word: &str) -> (StateId, f64) {
        let Some(&wid) = self.word_ids.get(word) else {
            return (0, 0.0);
        };
        let mut s = state;
        loop {
            let st = &self.states[s as usize];
            if let Ok(i) = st.by_word.binary_search_by_key(&wid, |p| p.0) {
                let arc = &st.arcs[st.by_word[i].1 as usize];
                return (arc.next, arc.weight);
            }
            match st.backoff {
                Some(b) => s = b,
                None => return (0, 0.0),
            }
        }
    }

    /// Sum of advance weights over a word sequence, including the final
    /// `</s>` step. Equals the sentence boost oracle exactly.
    pub fn score_sentence<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut state = self.start;
        let mut total = 0.0;
        for w in words {
            let (next, weight) = self.advance(state, w.as_ref());
            total += weight;
            state = next;
        }
        let (_, weight) = self.advance(state, EOS);
        total + weight
    }

    /// Half-open index range of arcs whose word's segmentation begins with
    /// the given unit prefix. O(log arcs) comparisons.
    pub fn prefix_range(&self, state: StateId, prefix: &[u32]) -> Range<usize> {
        let arcs = &self.states[state as usize].arcs;
        let cmp = |seg: &[u32]| -> Ordering {
            let head = &seg[..seg.len().min(prefix.len())];
            head.cmp(&prefix[..head.len()])
                .then(if seg.len() < prefix.len() {
                    Ordering::Less
                } else {
                    Ordering::Equal
                })
        };
        let lo = arcs.partition_point(|a| cmp(&a.seg) == Ordering::Less);
        let hi = arcs.partition_point(|a| cmp(&a.seg) != Ordering::Greater);
        lo..hi
    }

    /// Maximum arc weight within the prefix range at this state only; zero
    /// when the range is empty.
    pub fn lookahead_weight(&self, state: StateId, prefix: &[u32]) -> f64 {
        let range = self.prefix_range(state, prefix);
        self.states[state as usize].arcs[range]
            .iter()
            .map(|a| a.weight)
            .fold(0.0, f64::max)
    }

    pub fn start_cursor(&self) -> FstCursor {
        FstCursor {
            state: self.start,
            pending: Vec::new(),
            provisional: 0.0,
        }
    }

    /// Extends a cursor by one subword unit. Word-internal units move the
    /// provisional lookahead weight; a word-final unit resolves the completed
    /// word exactly and retracts the provisional. Deltas telescope to the
    /// exact advance weights.
    pub fn cursor_extend(&self, cursor: &FstCursor, unit: u32) -> (FstCursor, f64) {
        let (text, is_final) = &self.units[unit as usize];
        if *is_final {
            let mut word = String::new();
            for &u in &cursor.pending {
                word.push_str(&self.units[u as usize].0);
            }
            word.push_str(text);
            let (next, exact) = self.advance(cursor.state, &word);
            let delta = exact - cursor.provisional;
            (
                FstCursor {
                    state: next,
                    pending: Vec::new(),
                    provisional: 0.0,
                },
                delta,
            )
        } else {
            let mut pending = cursor.pending.clone();
            pending.push(unit);
            let provisional = self.lookahead_weight(cursor.state, &pending);
            let delta = provisional - cursor.provisional;
            (
                FstCursor {
                    state: cursor.state,
                    pending,
                    provisional,
                },
                delta,
            )
        }
    }

    /// Surface string of a cursor's pending buffer (the in-progress word).
    pub fn pending_text(&self, cursor: &FstCursor) -> String {
        cursor
            .pending
            .iter()
            .map(|&u| self.units[u as usize].0.as_str())
            .collect()
    }

    /// Finalizes a cursor at end of utterance: resolves any pending partial
    /// word exactly, then applies the `</s>` step. Returns the fused weight
    /// delta and the forced word, if one was pending.
    pub fn finish_cursor(&self, cursor: &FstCursor) -> (FstCursor, f64, Option<String>) {
        let mut delta = 0.0;
        let mut cur = cursor.clone();
        let mut forced = None;
        if !cur.pending.is_empty() {
            let word = self.pending_text(&cur);
            let (next, exact) = self.advance(cur.state, &word);
            delta += exact - cur.provisional;
            cur = FstCursor {
                state: next,
                pending: Vec::new(),
                provisional: 0.0,
            };
            forced = Some(word);
        }
        let (next, w) = self.advance(cur.state, EOS);
        delta += w;
        cur.state = next;
        (cur, delta, forced)
    }

    fn history_words(&self, state: StateId) -> Vec<&str> {
        self.states[state as usize]
            .history
            .iter()
            .map(|&w| self.words[w as usize].as_str())
            .collect()
    }

    /// Text serialization: `#order=` header, `state` lines with histories,
    /// `arc` lines in sorted order with six-decimal weights, `backoff` lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = format!("#order={}\n", self.order);
        for (id, _) in self.states.iter().enumerate() {
            let h = self.history_words(id as StateId);
            let h = if h.is_empty() {
                "\u{03b5}".to_string()
            } else {
                h.join(" ")
            };
            out.push_str(&format!("state {id} {h}\n"));
        }
        for (id, st) in self.states.iter().enumerate() {
            for arc in &st.arcs {
                out.push_str(&format!(
                    "arc {id} {} {} {:.6}\n",
                    arc.next, self.words[arc.word as usize], arc.weight
                ));
            }
        }
        for (id, st) in self.states.iter().enumerate() {
            if let Some(b) = st.backoff {
                out.push_str(&format!("backoff {id} {b}\n"));
            }
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path, inv: &SubwordInventory) -> Result<BoostingFst> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |line: usize, msg: &str| Error::FstFormat {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let order: usize = header
            .strip_prefix("#order=")
            .ok_or_else(|| bad(1, "missing #order= header"))?
            .parse()
            .map_err(|_| bad(1, "bad order"))?;

        let mut histories: Vec<Vec<String>> = Vec::new();
        let mut raw_arcs: Vec<(usize, StateId, String, f64)> = Vec::new();
        let mut backoffs: Vec<(usize, StateId)> = Vec::new();
        for (ln, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            match fields[0] {
                "state" => {
                    if fields.len() < 3 {
                        return Err(bad(ln + 1, "state needs id and history"));
                    }
                    let id: usize = fields[1].parse().map_err(|_| bad(ln + 1, "bad state id"))?;
                    if id != histories.len() {
                        return Err(bad(ln + 1, "state ids must be dense and ascending"));
                    }
                    let hist = if fields[2] == "\u{03b5}" && fields.len() == 3 {
                        Vec::new()
                    } else {
                        fields[2..].iter().map(|w| w.to_string()).collect()
                    };
                    histories.push(hist);
                }
                "arc" => {
                    if fields.len() != 5 {
                        return Err(bad(ln + 1, "arc needs src dst word weight"));
                    }
                    let src: usize = fields[1].parse().map_err(|_| bad(ln + 1, "bad src"))?;
                    let dst: StateId = fields[2].parse().map_err(|_| bad(ln + 1, "bad dst"))?;
                    let weight: f64 = fields[4].parse().map_err(|_| bad(ln + 1, "bad weight"))?;
                    raw_arcs.push((src, dst, fields[3].to_string(), quantize_score(weight)));
                }
                "backoff" => {
                    if fields.len() != 3 {
                        return Err(bad(ln + 1, "backoff needs src dst"));
                    }
                    let src: usize = fields[1].parse().map_err(|_| bad(ln + 1, "bad src"))?;
                    let dst: StateId = fields[2].parse().map_err(|_| bad(ln + 1, "bad dst"))?;
                    backoffs.push((src, dst));
                }
                _ => return Err(bad(ln + 1, "unknown record")),
            }
        }
        if histories.is_empty() {
            return Err(bad(0, "no states"));
        }

        let mut sym_set: BTreeSet<&str> = BTreeSet::new();
        for h in &histories {
            sym_set.extend(h.iter().map(String::as_str));
        }
        for (_, _, w, _) in &raw_arcs {
            sym_set.insert(w);
        }
        let mut words_tab = Vec::new();
        let mut word_ids = HashMap::new();
        let mut segs: Vec<Option<Box<[u32]>>> = Vec::new();
        for w in &sym_set {
            let seg = if *w == EOS {
                Some(Box::from([SEG_SENTINEL]))
            } else if *w == BOS {
                None
            } else {
                Some(
                    inv.segment(w)
                        .map_err(|_| bad(0, "arc word not segmentable under the inventory"))?
                        .into_boxed_slice(),
                )
            };
            word_ids.insert(w.to_string(), words_tab.len() as u32);
            words_tab.push(w.to_string());
            segs.push(seg);
        }

        let n = histories.len();
        let mut states: Vec<FstState> = histories
            .iter()
            .map(|h| FstState {
                history: h.iter().map(|w| word_ids[w.as_str()]).collect(),
                arcs: Vec::new(),
                by_word: Vec::new(),
                backoff: None,
            })
            .collect();
        for (src, dst, word, weight) in raw_arcs {
            if src >= n || (dst as usize) >= n {
                return Err(bad(0, "arc references unknown state"));
            }
            let word = word_ids[word.as_str()];
            let seg = segs[word as usize]
                .as_ref()
                .ok_or_else(|| bad(0, "arc labeled with <s>"))?
                .clone();
            states[src].arcs.push(FstArc {
                word,
                seg,
                weight,
                next: dst,
            });
        }
        for (src, dst) in backoffs {
            if src >= n || (dst as usize) >= n {
                return Err(bad(0, "backoff references unknown state"));
            }
            states[src].backoff = Some(dst);
        }
        for st in &mut states {
            st.arcs.sort_by(|a, b| a.seg.cmp(&b.seg));
            st.by_word = st
                .arcs
                .iter()
                .enumerate()
                .map(|(i, a)| (a.word, i as u32))
                .collect();
            st.by_word.sort_by_key(|&(w, _)| w);
        }
        let bos_id = word_ids.get(BOS).copied();
        let start = states
            .iter()
            .position(|s| bos_id.is_some() && s.history.len() == 1 && Some(s.history[0]) == bos_id)
            .map(|i| i as StateId)
            .unwrap_or(0);
        Ok(BoostingFst {
            order,
            words: words_tab,
            word_ids,
            states,
            start,
            units: inv
                .units()
                .iter()
                .map(|u| (u.text.clone(), u.pos == crate::corpus::UnitPos::Final))
                .collect(),
        })
    }
}
