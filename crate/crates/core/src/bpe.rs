//! Byte-level BPE: training, encoding and decoding.
//!
//! Merges never span a line break, so `\n` is always its own token. Pair
//! selection is deterministic: highest count first, then the lexicographically
//! smaller concatenation, then the smaller left part. A pair whose
//! concatenation is already a token is never merged, which keeps token byte
//! strings unique.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

const ALPHABET_SIZE: usize = 256;
const NEWLINE: u8 = b'\n';

#[derive(Debug, Error)]
pub enum BpeError {
    #[error("target vocabulary {0} is smaller than the 256-byte alphabet")]
    TargetTooSmall(usize),
    #[error("unknown token id {0}")]
    UnknownTokenId(TokenId),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where a vocabulary came from. Recorded in the vocab file; never affects
/// encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub documents: usize,
    pub corpus_bytes: usize,
    pub target_vocab: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    alphabet_size: usize,
    merges: Vec<(Vec<u8>, Vec<u8>)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

/// A trained vocabulary: the byte alphabet plus ranked merges.
///
/// Token `i < 256` is byte `i`; token `256 + r` is the result of merge `r`.
#[derive(Debug, Clone)]
pub struct BpeVocab {
    merges: Vec<(TokenId, TokenId)>,
    tokens: Vec<Vec<u8>>,
    ranks: HashMap<(TokenId, TokenId), u32>,
    provenance: Option<Provenance>,
}

impl PartialEq for BpeVocab {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges
    }
}

impl Eq for BpeVocab {}

impl Default for BpeVocab {
    fn default() -> Self {
        BpeVocab {
            merges: Vec::new(),
            tokens: (0..=255u8).map(|b| vec![b]).collect(),
            ranks: HashMap::new(),
            provenance: None,
        }
    }
}

impl BpeVocab {
    /// The untrained vocabulary: one token per byte.
    pub fn bytes_only() -> Self {
        Self::default()
    }

    fn push_merge(&mut self, pair: (TokenId, TokenId)) {
        let mut bytes = self.tokens[pair.0 as usize].clone();
        bytes.extend_from_slice(&self.tokens[pair.1 as usize]);
        self.ranks.insert(pair, self.merges.len() as u32);
        self.merges.push(pair);
        self.tokens.push(bytes);
    }

    /// Builds a vocabulary from merges given as byte strings, checking every
    /// invariant a trained vocabulary satisfies.
    pub fn from_merges<I>(merges: I) -> Result<Self, BpeError>
    where
        I: IntoIterator<Item = (Vec<u8>, Vec<u8>)>,
    {
        let mut vocab = BpeVocab::default();
        let mut ids: HashMap<Vec<u8>, TokenId> = vocab
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        for (rank, (left, right)) in merges.into_iter().enumerate() {
            let lookup = |part: &Vec<u8>| {
                ids.get(part).copied().ok_or_else(|| {
                    BpeError::InvalidVocab(format!("merge {rank} uses an unknown part"))
                })
            };
            let pair = (lookup(&left)?, lookup(&right)?);
            let mut joined = left;
            joined.extend_from_slice(&right);
            if joined.contains(&NEWLINE) {
                return Err(BpeError::InvalidVocab(format!(
                    "merge {rank} spans a line break"
                )));
            }
            if ids.contains_key(&joined) {
                return Err(BpeError::InvalidVocab(format!(
                    "merge {rank} duplicates an existing token"
                )));
            }
            ids.insert(joined, vocab.tokens.len() as TokenId);
            vocab.push_merge(pair);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    /// Merges in rank order, as byte strings.
    pub fn merges(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.merges
            .iter()
            .map(|&(l, r)| {
                (
                    self.tokens[l as usize].clone(),
                    self.tokens[r as usize].clone(),
                )
            })
            .collect()
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    /// The vocabulary restricted to its first `n` merges.
    pub fn truncated(&self, n: usize) -> Self {
        let mut out = BpeVocab::default();
        for &pair in self.merges.iter().take(n) {
            out.push_merge(pair);
        }
        out.provenance = self.provenance.clone();
        out
    }

    pub fn to_json(&self) -> Result<String, BpeError> {
        let file = VocabFile {
            alphabet_size: ALPHABET_SIZE,
            merges: self.merges(),
            provenance: self.provenance.clone(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(json: &str) -> Result<Self, BpeError> {
        let file: VocabFile = serde_json::from_str(json)?;
        if file.alphabet_size != ALPHABET_SIZE {
            return Err(BpeError::InvalidVocab(format!(
                "alphabet_size must be {ALPHABET_SIZE}, found {}",
                file.alphabet_size
            )));
        }
        let mut vocab = Self::from_merges(file.merges)?;
        vocab.provenance = file.provenance;
        Ok(vocab)
    }
}

/// Splits text into the line bodies BPE operates on; newlines are yielded
/// as `None`.
fn pieces(text: &[u8]) -> impl Iterator<Item = Option<&[u8]>> {
    let mut rest = text;
    let mut pending_newline = false;
    std::iter::from_fn(move || {
        if pending_newline {
            pending_newline = false;
            return Some(None);
        }
        if rest.is_empty() {
            return None;
        }
        match rest.iter().position(|&b| b == NEWLINE) {
            Some(0) => {
                rest = &rest[1..];
                Some(None)
            }
            Some(p) => {
                let word = &rest[..p];
                rest = &rest[p + 1..];
                pending_newline = true;
                Some(Some(word))
            }
            None => {
                let word = rest;
                rest = &[];
                Some(Some(word))
            }
        }
    })
}

fn merge_word(word: &[TokenId], pair: (TokenId, TokenId), new_id: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    out
}

type Pair = (TokenId, TokenId);

fn count_words<S: AsRef<[u8]> + Sync>(corpus: &[S]) -> Vec<(Vec<u8>, u64)> {
    let counts = corpus
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<&[u8], u64>, doc| {
            for word in pieces(doc.as_ref()).flatten() {
                if word.len() > 1 {
                    *acc.entry(word).or_insert(0) += 1;
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    let mut words: Vec<(Vec<u8>, u64)> = counts.into_iter().map(|(k, v)| (k.to_vec(), v)).collect();
    words.sort_unstable();
    words
}

fn count_pairs(words: &[(Vec<TokenId>, u64)]) -> HashMap<Pair, i64> {
    words
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<Pair, i64>, (w, f)| {
            for p in w.windows(2) {
                *acc.entry((p[0], p[1])).or_insert(0) += *f as i64;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        })
}

/// Orders candidate pairs by the documented tie-break (greater is better).
fn compare_candidates(vocab: &BpeVocab, a: Pair, b: Pair) -> Ordering {
    let bytes = |p: Pair| {
        let l = &vocab.tokens[p.0 as usize];
        let r = &vocab.tokens[p.1 as usize];
        (
            l.iter().chain(r.iter()).copied().collect::<Vec<u8>>(),
            l.clone(),
        )
    };
    // smaller concatenation wins, then smaller left part
    bytes(b).cmp(&bytes(a))
}

fn pair_bytes(vocab: &BpeVocab, p: Pair) -> Vec<u8> {
    let mut v = vocab.tokens[p.0 as usize].clone();
    v.extend_from_slice(&vocab.tokens[p.1 as usize]);
    v
}

struct Trainer<'a> {
    vocab: &'a mut BpeVocab,
    known: HashSet<Vec<u8>>,
    banned: HashSet<Pair>,
}

impl Trainer<'_> {
    fn best_pair(&mut self, counts: &HashMap<Pair, i64>) -> Option<Pair> {
        loop {
            let top = counts
                .iter()
                .filter(|(p, &c)| c >= 2 && !self.banned.contains(*p))
                .map(|(_, &c)| c)
                .max()?;
            let mut ties: Vec<Pair> = counts
                .iter()
                .filter(|(p, &c)| c == top && !self.banned.contains(*p))
                .map(|(&p, _)| p)
                .collect();
            ties.retain(|&p| {
                if self.known.contains(&pair_bytes(self.vocab, p)) {
                    self.banned.insert(p);
                    false
                } else {
                    true
                }
            });
            let vocab = &*self.vocab;
            if let Some(best) = ties
                .into_iter()
                .max_by(|&a, &b| compare_candidates(vocab, a, b))
            {
                return Some(best);
            }
        }
    }
}

/// Trains a vocabulary of at most `target_vocab` tokens using the global
/// rayon pool for counting.
pub fn train<S: AsRef<[u8]> + Sync>(
    corpus: &[S],
    target_vocab: usize,
) -> Result<BpeVocab, BpeError> {
    if target_vocab < ALPHABET_SIZE {
        return Err(BpeError::TargetTooSmall(target_vocab));
    }
    let words = count_words(corpus);
    let mut words: Vec<(Vec<TokenId>, u64)> = words
        .into_iter()
        .map(|(w, f)| (w.into_iter().map(TokenId::from).collect(), f))
        .collect();

    let mut counts = count_pairs(&words);
    let mut where_: HashMap<Pair, Vec<usize>> = HashMap::new();
    for (i, (w, _)) in words.iter().enumerate() {
        for p in w.windows(2) {
            let list = where_.entry((p[0], p[1])).or_default();
            if list.last() != Some(&i) {
                list.push(i);
            }
        }
    }

    let mut vocab = BpeVocab::default();
    let known: HashSet<Vec<u8>> = vocab.tokens.iter().cloned().collect();
    let mut trainer = Trainer {
        vocab: &mut vocab,
        known,
        banned: HashSet::new(),
    };

    while trainer.vocab.len() < target_vocab {
        let Some(pair) = trainer.best_pair(&counts) else {
            break;
        };
        let new_id = trainer.vocab.len() as TokenId;
        trainer.known.insert(pair_bytes(trainer.vocab, pair));
        trainer.vocab.push_merge(pair);

        let mut affected = where_.remove(&pair).unwrap_or_default();
        affected.sort_unstable();
        affected.dedup();
        for idx in affected {
            let (word, freq) = &mut words[idx];
            let freq = *freq as i64;
            if !word.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            for p in word.windows(2) {
                let key = (p[0], p[1]);
                if let Some(c) = counts.get_mut(&key) {
                    *c -= freq;
                    if *c <= 0 {
                        counts.remove(&key);
                    }
                }
            }
            *word = merge_word(word, pair, new_id);
            for p in word.windows(2) {
                let key = (p[0], p[1]);
                *counts.entry(key).or_insert(0) += freq;
                if key != pair {
                    let list = where_.entry(key).or_default();
                    if list.last() != Some(&idx) {
                        list.push(idx);
                    }
                }
            }
        }
        counts.remove(&pair);
    }

    let documents = corpus.len();
    let corpus_bytes = corpus.iter().map(|d| d.as_ref().len()).sum();
    Ok(vocab.with_provenance(Provenance {
        documents,
        corpus_bytes,
        target_vocab,
        note: None,
    }))
}

/// [`train`] inside a dedicated pool of `workers` threads.
pub fn train_with_workers<S: AsRef<[u8]> + Sync>(
    corpus: &[S],
    target_vocab: usize,
    workers: usize,
) -> Result<BpeVocab, BpeError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BpeError::Pool(e.to_string()))?;
    pool.install(|| train(corpus, target_vocab))
}

fn encode_word(word: &[u8], vocab: &BpeVocab, out: &mut Vec<TokenId>) {
    let mut ids: Vec<TokenId> = word.iter().map(|&b| TokenId::from(b)).collect();
    if !vocab.merges.is_empty() {
        loop {
            let best = ids
                .windows(2)
                .filter_map(|p| vocab.ranks.get(&(p[0], p[1])).map(|&r| (r, (p[0], p[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            ids = merge_word(&ids, pair, ALPHABET_SIZE as TokenId + rank);
        }
    }
    out.extend(ids);
}

/// Encodes text line by line, applying merges lowest rank first.
pub fn encode(text: &[u8], vocab: &BpeVocab) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(text.len());
    let mut cache: HashMap<&[u8], Vec<TokenId>> = HashMap::new();
    for piece in pieces(text) {
        match piece {
            None => out.push(TokenId::from(NEWLINE)),
            Some(word) => {
                let ids = cache.entry(word).or_insert_with(|| {
                    let mut ids = Vec::new();
                    encode_word(word, vocab, &mut ids);
                    ids
                });
                out.extend_from_slice(ids);
            }
        }
    }
    out
}

pub fn decode(ids: &[TokenId], vocab: &BpeVocab) -> Result<Vec<u8>, BpeError> {
    let mut out = Vec::with_capacity(ids.len() * 2);
    for &id in ids {
        let bytes = vocab.token_bytes(id).ok_or(BpeError::UnknownTokenId(id))?;
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

/// Caps an id sequence at `context` ids and reports how many were dropped.
pub fn cap_context(mut ids: Vec<TokenId>, context: usize) -> (Vec<TokenId>, usize) {
    let dropped = ids.len().saturating_sub(context);
    ids.truncate(context);
    (ids, dropped)
}
