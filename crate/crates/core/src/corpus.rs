//! Tokenization, vocabulary construction, sentence filtering and minibatching.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeded_rng;

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const NUM_SPECIALS: usize = 3;
/// Marker stored in padded minibatch cells.
pub const PAD: usize = usize::MAX;

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<s>", "</s>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub valid: bool,
}

/// A token is valid iff it consists of letters, hyphens and apostrophes and
/// contains at least one letter.
pub fn is_valid_token(token: &str) -> bool {
    token.chars().any(char::is_alphabetic)
        && token.chars().all(|c| c.is_alphabetic() || c == '-' || c == '\'')
}

/// Splits on whitespace and lowercases. Invalid tokens are kept, flagged.
pub fn tokenize_line(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .map(|raw| {
            let text = raw.replace('\u{2019}', "'").to_lowercase();
            let valid = is_valid_token(&text);
            Token { text, valid }
        })
        .collect()
}

/// Word ↔ id mapping. Ids `0..3` are the specials, words follow in
/// frequency-descending order (ties lexicographic).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    entries: Vec<(String, u64)>,
    word_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from `(word, frequency)` pairs; sorts and validates them.
    pub fn from_entries(mut entries: Vec<(String, u64)>) -> Result<Self> {
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut word_to_id = HashMap::with_capacity(entries.len());
        for (i, (word, _)) in entries.iter().enumerate() {
            if !is_valid_token(word) {
                return Err(Error::Invalid(format!("vocabulary word `{word}` is not a valid token")));
            }
            if word_to_id.insert(word.clone(), i + NUM_SPECIALS).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary word `{word}`")));
            }
        }
        Ok(Self { entries, word_to_id })
    }

    /// Number of real words, excluding specials.
    pub fn num_words(&self) -> usize {
        self.entries.len()
    }

    /// Total size including the specials.
    pub fn len(&self) -> usize {
        self.entries.len() + NUM_SPECIALS
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id_of(&self, word: &str) -> Option<usize> {
        match SPECIAL_NAMES.iter().position(|s| *s == word) {
            Some(i) => Some(i),
            None => self.word_to_id.get(word).copied(),
        }
    }

    pub fn word_of(&self, id: usize) -> Option<&str> {
        if id < NUM_SPECIALS {
            Some(SPECIAL_NAMES[id])
        } else {
            self.entries.get(id - NUM_SPECIALS).map(|(w, _)| w.as_str())
        }
    }

    pub fn frequency(&self, word: &str) -> Option<u64> {
        self.word_to_id.get(word).map(|&id| self.entries[id - NUM_SPECIALS].1)
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (w, f) in &self.entries {
            writeln!(out, "{w}\t{f}").expect("writing to a Vec cannot fail");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (word, freq) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `word<TAB>frequency`"))?;
            let freq = freq
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad frequency `{freq}`")))?;
            entries.push((word.to_string(), freq));
        }
        Self::from_entries(entries)
    }
}

/// The `n_top` most frequent valid training words, plus any `test_words`
/// not already among them.
pub fn build_vocabulary<'a, I>(training_tokens: I, test_words: &BTreeSet<String>, n_top: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    assert!(n_top >= 1, "n_top must be at least 1");
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for tok in training_tokens {
        if is_valid_token(tok) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, u64)> = counts.iter().map(|(w, c)| (*w, *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(n_top);
    let top: BTreeSet<&str> = ranked.iter().map(|(w, _)| *w).collect();
    let mut entries: Vec<(String, u64)> = ranked.iter().map(|(w, c)| (w.to_string(), *c)).collect();
    for w in test_words {
        if is_valid_token(w) && !top.contains(w.as_str()) {
            entries.push((w.clone(), counts.get(w.as_str()).copied().unwrap_or(0)));
        }
    }
    Vocabulary::from_entries(entries)
}

/// Training sentences as word ids (no BOS/EOS).
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceCorpus {
    pub sentences: Vec<Vec<usize>>,
    pub max_len: usize,
}

impl SentenceCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn write_text(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let mut out = String::new();
        for s in &self.sentences {
            let words: Vec<&str> = s.iter().map(|&id| vocab.word_of(id).unwrap_or("<unk>")).collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Keeps sentences made only of non-special vocabulary words, at most `max_len` long.
pub fn filter_sentences<'a, I>(raw: I, vocab: &Vocabulary, max_len: usize) -> SentenceCorpus
where
    I: IntoIterator<Item = &'a str>,
{
    let mut sentences = Vec::new();
    'lines: for line in raw {
        let tokens = tokenize_line(line);
        if tokens.is_empty() || tokens.len() > max_len {
            continue;
        }
        let mut ids = Vec::with_capacity(tokens.len());
        for t in &tokens {
            match vocab.id_of(&t.text) {
                Some(id) if t.valid && id >= NUM_SPECIALS => ids.push(id),
                _ => continue 'lines,
            }
        }
        sentences.push(ids);
    }
    SentenceCorpus { sentences, max_len }
}

/// `[BOS] + words + [EOS]`
pub fn with_boundaries(words: &[usize]) -> Vec<usize> {
    let mut seq = Vec::with_capacity(words.len() + 2);
    seq.push(BOS);
    seq.extend_from_slice(words);
    seq.push(EOS);
    seq
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    /// `B × T_max`, each row `BOS words EOS` followed by [`PAD`].
    pub token_ids: Vec<Vec<usize>>,
    /// True at real (non-pad) positions.
    pub pad_mask: Vec<Vec<bool>>,
    /// Sequence lengths including BOS and EOS.
    pub lengths: Vec<usize>,
}

impl Minibatch {
    fn from_sentences(sentences: &[&Vec<usize>]) -> Self {
        let seqs: Vec<Vec<usize>> = sentences.iter().map(|s| with_boundaries(s)).collect();
        let t_max = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let lengths = seqs.iter().map(Vec::len).collect();
        let pad_mask = seqs.iter().map(|s| (0..t_max).map(|t| t < s.len()).collect()).collect();
        let token_ids = seqs
            .into_iter()
            .map(|mut s| {
                s.resize(t_max, PAD);
                s
            })
            .collect();
        Self { token_ids, pad_mask, lengths }
    }

    pub fn batch_size(&self) -> usize {
        self.token_ids.len()
    }

    /// Unpadded sequences.
    pub fn sequences(&self) -> impl Iterator<Item = &[usize]> {
        self.token_ids.iter().zip(&self.lengths).map(|(s, &l)| &s[..l])
    }
}

/// One epoch of minibatches in a shuffled order determined by `order_seed`.
pub fn batches(corpus: &SentenceCorpus, batch_size: usize, order_seed: u64) -> impl Iterator<Item = Minibatch> + '_ {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seeded_rng(order_seed, crate::STREAM_ORDER));
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |idx| {
        let refs: Vec<&Vec<usize>> = idx.iter().map(|&i| &corpus.sentences[i]).collect();
        Minibatch::from_sentences(&refs)
    })
}
