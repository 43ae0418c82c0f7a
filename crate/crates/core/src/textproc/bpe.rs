//! Byte-pair-encoding subword tokenizer trained from scratch.
//!
//! Words are whitespace-delimited character sequences followed by an
//! end-of-word marker symbol. Training repeatedly merges the most frequent
//! adjacent symbol pair (ties go to the lexicographically smallest pair) until
//! the vocabulary budget is spent or no pair occurs at least twice.

use std::collections::{BTreeSet, HashMap};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::TextprocError;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

/// End-of-word marker. Lives in the private use area, which is never admitted
/// into the character alphabet, so learned symbols cannot collide with it.
pub const END_OF_WORD: &str = "\u{E000}";
const RESERVED_SYMBOLS: [&str; 4] = ["\u{E001}pad", "\u{E001}unk", "\u{E001}bos", "\u{E001}eos"];

fn admissible(ch: char) -> bool {
    !('\u{E000}'..='\u{F8FF}').contains(&ch) && !ch.is_whitespace()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    /// Base symbols: the end-of-word marker followed by the sorted characters.
    alphabet: Vec<String>,
    merges: Vec<(String, String)>,
    /// id -> symbol; ids are dense.
    symbols: Vec<String>,
    ids: HashMap<String, u32>,
    /// (left id, right id) -> (merge rank, merged id)
    merge_ranks: HashMap<(u32, u32), (usize, u32)>,
}

/// On-disk JSON document for a [`BpeModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpeDocument {
    pub alphabet: Vec<String>,
    pub merges: Vec<(String, String)>,
    pub vocab: IndexMap<String, u32>,
}

impl BpeModel {
    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, symbol: &str) -> Option<u32> {
        self.ids.get(symbol).copied()
    }

    fn from_parts(alphabet: Vec<String>, merges: Vec<(String, String)>) -> Result<Self, TextprocError> {
        let mut symbols: Vec<String> = RESERVED_SYMBOLS.iter().map(|s| s.to_string()).collect();
        symbols.extend(alphabet.iter().cloned());
        let mut ids: HashMap<String, u32> = HashMap::with_capacity(symbols.len() + merges.len());
        for (i, s) in symbols.iter().enumerate() {
            if ids.insert(s.clone(), i as u32).is_some() {
                return Err(TextprocError::Format(format!("duplicate symbol {s:?}")));
            }
        }
        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let (Some(&li), Some(&ri)) = (ids.get(l), ids.get(r)) else {
                return Err(TextprocError::Format(format!(
                    "merge {rank} references unknown symbol ({l:?}, {r:?})"
                )));
            };
            let merged = format!("{l}{r}");
            // Two different splits can produce the same string; they share an id.
            let new_id = match ids.get(&merged) {
                Some(&id) if (id as usize) >= RESERVED_SYMBOLS.len() + alphabet.len() => id,
                Some(_) => {
                    return Err(TextprocError::Format(format!(
                        "merge {rank} produces a base symbol {merged:?}"
                    )))
                }
                None => {
                    let id = symbols.len() as u32;
                    ids.insert(merged.clone(), id);
                    symbols.push(merged);
                    id
                }
            };
            if merge_ranks.insert((li, ri), (rank, new_id)).is_some() {
                return Err(TextprocError::Format(format!("merge {rank} is a duplicate")));
            }
        }
        Ok(BpeModel {
            alphabet,
            merges,
            symbols,
            ids,
            merge_ranks,
        })
    }

    pub fn to_document(&self) -> BpeDocument {
        BpeDocument {
            alphabet: self.alphabet.clone(),
            merges: self.merges.clone(),
            vocab: self
                .symbols
                .iter()
                .enumerate()
                .map(|(i, s)| (s.clone(), i as u32))
                .collect(),
        }
    }

    /// Rebuilds a model from its document, checking that the stored vocabulary
    /// agrees with the one implied by alphabet and merges.
    pub fn from_document(doc: BpeDocument) -> Result<Self, TextprocError> {
        if doc.alphabet.first().map(String::as_str) != Some(END_OF_WORD) {
            return Err(TextprocError::Format(
                "alphabet must start with the end-of-word marker".into(),
            ));
        }
        for sym in &doc.alphabet[1..] {
            let mut chars = sym.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if admissible(c) => {}
                _ => {
                    return Err(TextprocError::Format(format!(
                        "alphabet entry {sym:?} is not a single admissible character"
                    )))
                }
            }
        }
        let model = BpeModel::from_parts(doc.alphabet, doc.merges)?;
        if model.symbols.len() != doc.vocab.len()
            || model
                .symbols
                .iter()
                .enumerate()
                .any(|(i, s)| doc.vocab.get(s) != Some(&(i as u32)))
        {
            return Err(TextprocError::Format(
                "vocab does not match alphabet and merges".into(),
            ));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("bpe document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TextprocError> {
        let doc: BpeDocument =
            serde_json::from_str(s).map_err(|e| TextprocError::Format(e.to_string()))?;
        BpeModel::from_document(doc)
    }

    fn base_ids(&self, word: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = word
            .chars()
            .map(|ch| {
                let mut buf = [0u8; 4];
                self.ids.get(&*ch.encode_utf8(&mut buf)).copied().unwrap_or(UNK_ID)
            })
            .collect();
        ids.push(self.ids[END_OF_WORD]);
        ids
    }

    /// Subword ids of one word, merges applied lowest rank first.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        self.apply_merges(self.base_ids(word))
    }

    fn apply_merges(&self, mut ids: Vec<u32>) -> Vec<u32> {
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0], w[1])))
                .min_by_key(|(rank, _)| *rank)
                .copied();
            let Some((rank, new_id)) = best else { break };
            let (l, r) = {
                let (l, r) = &self.merges[rank];
                (self.ids[l], self.ids[r])
            };
            let mut merged = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(ids[i]);
                    i += 1;
                }
            }
            ids = merged;
        }
        ids
    }

    /// `BOS`, subword ids, `EOS`, truncated to `max_len` with `EOS` kept last.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let mut out = vec![BOS_ID];
        for word in text.split_whitespace() {
            out.extend(self.encode_word(word));
            if out.len() >= max_len {
                break;
            }
        }
        if max_len < 2 {
            out.truncate(max_len);
            return out;
        }
        out.truncate(max_len - 1);
        out.push(EOS_ID);
        out
    }

    /// Concatenates symbols, turning end-of-word markers into spaces and
    /// dropping reserved ids.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TextprocError> {
        let mut out = String::new();
        for &id in ids {
            let sym = self
                .symbols
                .get(id as usize)
                .ok_or(TextprocError::UnknownId(id))?;
            if (id as usize) < RESERVED_SYMBOLS.len() {
                continue;
            }
            match sym.strip_suffix(END_OF_WORD) {
                Some(stem) => {
                    out.push_str(stem);
                    out.push(' ');
                }
                None => out.push_str(sym),
            }
        }
        if out.ends_with(' ') {
            out.pop();
        }
        Ok(out)
    }
}

/// Learns a BPE model with at most `vocab_size` symbols (reserved ids included).
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<BpeModel, TextprocError> {
    let mut word_counts: HashMap<&str, usize> = HashMap::new();
    let mut chars = BTreeSet::new();
    for line in corpus {
        for word in line.as_ref().split_whitespace() {
            *word_counts.entry(word).or_default() += 1;
            chars.extend(word.chars().filter(|&c| admissible(c)));
        }
    }

    let mut alphabet = vec![END_OF_WORD.to_string()];
    alphabet.extend(chars.into_iter().map(String::from));
    // The end-of-word marker does not count towards the character alphabet.
    if vocab_size <= (alphabet.len() - 1) + RESERVED_SYMBOLS.len() {
        return Err(TextprocError::VocabTooSmall {
            requested: vocab_size,
            minimum: alphabet.len() + RESERVED_SYMBOLS.len() - 1,
        });
    }

    let mut model = BpeModel::from_parts(alphabet, Vec::new())?;
    // Deterministic word order keeps pair counting independent of hashing.
    let mut words: Vec<(Vec<u32>, usize)> = word_counts
        .into_iter()
        .map(|(w, c)| (model.base_ids(w), c))
        .collect();
    words.sort();

    while model.vocab_size() < vocab_size {
        let mut pair_counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (syms, count) in &words {
            for w in syms.windows(2) {
                if w[0] == UNK_ID || w[1] == UNK_ID {
                    continue;
                }
                *pair_counts.entry((w[0], w[1])).or_default() += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .filter(|&(pair, c)| c >= 2 && !model.merge_ranks.contains_key(&pair))
            .map(|((l, r), c)| (c, model.symbols[l as usize].clone(), model.symbols[r as usize].clone(), l, r))
            .max_by(|a, b| a.0.cmp(&b.0).then_with(|| (&b.1, &b.2).cmp(&(&a.1, &a.2))));
        let Some((_, ls, rs, l, r)) = best else { break };

        let merged = format!("{ls}{rs}");
        let (new_id, shared) = match model.ids.get(&merged) {
            Some(&id) => (id, true),
            None => {
                let id = model.symbols.len() as u32;
                model.ids.insert(merged.clone(), id);
                model.symbols.push(merged);
                (id, false)
            }
        };
        model.merge_ranks.insert((l, r), (model.merges.len(), new_id));
        model.merges.push((ls, rs));

        if shared {
            // A reused symbol can re-form pairs that earlier merges cover.
            for (syms, _) in words.iter_mut() {
                *syms = model.apply_merges(std::mem::take(syms));
            }
            continue;
        }
        for (syms, _) in words.iter_mut() {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }
    Ok(model)
}
