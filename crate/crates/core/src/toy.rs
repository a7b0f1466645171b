//! A deterministic toy language: a pseudo-word lexicon with Zipfian
//! frequencies, number agreement and topical noun clusters, rendered either
//! as bare training sentences or as punctuated reading stimuli.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seeded_rng;

const ONSETS: [&str; 20] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl", "gr", "sn"];
const VOWELS: [&str; 7] = ["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: [&str; 7] = ["", "n", "r", "l", "m", "t", "k"];

const DET_SG: [&str; 6] = ["the", "a", "this", "that", "every", "one"];
const DET_PL: [&str; 6] = ["the", "these", "those", "some", "many", "two"];
const PREPS: [&str; 8] = ["in", "on", "near", "with", "under", "behind", "from", "for"];
const CONJS: [&str; 3] = ["and", "but", "while"];
const CLUSTERS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Num {
    Sg,
    Pl,
}

struct Category {
    words: Vec<String>,
    sampler: WeightedIndex<f64>,
}

impl Category {
    fn new(words: Vec<String>, exponent: f64) -> Self {
        let weights: Vec<f64> = (0..words.len()).map(|r| 1.0 / (r as f64 + 2.0).powf(exponent)).collect();
        Self { sampler: WeightedIndex::new(&weights).expect("non-empty category"), words }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        self.sampler.sample(rng)
    }
}

/// Lexicon and sampling tables of the toy language.
pub struct ToyGrammar {
    nouns: Category,
    intransitive: Category,
    transitive: Category,
    adjectives: Category,
    adverbs: Category,
    /// Topic cluster of each noun; verbs and adjectives prefer one cluster.
    noun_cluster: Vec<usize>,
    cluster_members: Vec<Category>,
}

/// One rendered sentence: words, and whether each is followed by a comma.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySentence {
    pub words: Vec<String>,
    pub comma_after: Vec<bool>,
}

impl ToySentence {
    /// Bare lowercase words separated by spaces.
    pub fn plain(&self) -> String {
        self.words.join(" ")
    }

    /// Capitalized, with commas attached to words and a final period.
    pub fn punctuated(&self) -> String {
        let mut out = String::new();
        for (i, (w, &c)) in self.words.iter().zip(&self.comma_after).enumerate() {
            if i > 0 {
                out.push(' ');
            }
            if i == 0 {
                let mut chars = w.chars();
                if let Some(f) = chars.next() {
                    out.extend(f.to_uppercase());
                    out.push_str(chars.as_str());
                }
            } else {
                out.push_str(w);
            }
            if c {
                out.push(',');
            }
        }
        out.push('.');
        out
    }
}

fn pseudo_words(rng: &mut ChaCha8Rng, n: usize, taken: &mut BTreeSet<String>, suffix: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(1..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
            w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        }
        // keep inflected forms distinct from every other base
        if w.len() < 3 || w.ends_with('s') {
            continue;
        }
        let inflected = format!("{w}{suffix}");
        if taken.contains(&w) || taken.contains(&inflected) || taken.contains(&format!("{w}s")) {
            continue;
        }
        taken.insert(w.clone());
        taken.insert(inflected);
        taken.insert(format!("{w}s"));
        out.push(w);
    }
    out
}

impl ToyGrammar {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded_rng(seed, 10);
        let mut taken: BTreeSet<String> = DET_SG
            .iter()
            .chain(&DET_PL)
            .chain(&PREPS)
            .chain(&CONJS)
            .chain(&["who"])
            .map(|s| s.to_string())
            .collect();
        let nouns = pseudo_words(&mut rng, 900, &mut taken, "s");
        let intransitive = pseudo_words(&mut rng, 250, &mut taken, "s");
        let transitive = pseudo_words(&mut rng, 350, &mut taken, "s");
        let adjectives = pseudo_words(&mut rng, 400, &mut taken, "");
        let adverbs: Vec<String> = pseudo_words(&mut rng, 150, &mut taken, "ly").into_iter().map(|w| w + "ly").collect();

        let noun_cluster: Vec<usize> = (0..nouns.len()).map(|i| i % CLUSTERS).collect();
        let cluster_members = (0..CLUSTERS)
            .map(|c| {
                let members: Vec<String> = (0..nouns.len()).filter(|&i| noun_cluster[i] == c).map(|i| i.to_string()).collect();
                Category::new(members, 1.0)
            })
            .collect();
        Self {
            nouns: Category::new(nouns, 1.0),
            intransitive: Category::new(intransitive, 1.0),
            transitive: Category::new(transitive, 1.0),
            adjectives: Category::new(adjectives, 1.0),
            adverbs: Category::new(adverbs, 1.0),
            noun_cluster,
            cluster_members,
        }
    }

    fn noun(&self, rng: &mut ChaCha8Rng, topic: Option<usize>) -> usize {
        match topic {
            Some(c) if rng.random_bool(0.7) => {
                let members = &self.cluster_members[c];
                members.words[members.draw(rng)].parse().expect("cluster members are noun indices")
            }
            _ => self.nouns.draw(rng),
        }
    }

    fn noun_phrase(&self, rng: &mut ChaCha8Rng, out: &mut ToySentence, num: Num, topic: Option<usize>, depth: usize, commas: bool) {
        let det = match num {
            Num::Sg => DET_SG[rng.random_range(0..DET_SG.len())],
            Num::Pl => DET_PL[rng.random_range(0..DET_PL.len())],
        };
        push(out, det);
        let noun = self.noun(rng, topic);
        if rng.random_bool(0.3) {
            let adj = self.adjectives.draw(rng);
            let adj = if rng.random_bool(0.5) { (noun * 7 + adj) % self.adjectives.words.len() } else { adj };
            push(out, &self.adjectives.words[adj]);
        }
        let base = &self.nouns.words[noun];
        match num {
            Num::Sg => push(out, base),
            Num::Pl => push(out, &format!("{base}s")),
        }
        if depth < 2 {
            let r: f64 = rng.random();
            if r < 0.12 {
                let set_off = commas && rng.random_bool(0.5);
                if set_off {
                    mark_comma(out);
                }
                push(out, "who");
                self.verb_phrase(rng, out, num, depth + 1, commas);
                if set_off {
                    mark_comma(out);
                }
            } else if r < 0.27 {
                push(out, PREPS[rng.random_range(0..PREPS.len())]);
                let n2 = if rng.random_bool(0.7) { Num::Sg } else { Num::Pl };
                self.noun_phrase(rng, out, n2, Some(self.noun_cluster[noun]), depth + 1, commas);
            }
        }
    }

    fn verb_phrase(&self, rng: &mut ChaCha8Rng, out: &mut ToySentence, num: Num, depth: usize, commas: bool) {
        let inflect = |w: &str| match num {
            Num::Sg => format!("{w}s"),
            Num::Pl => w.to_string(),
        };
        if rng.random_bool(0.45) {
            let v = self.intransitive.draw(rng);
            push(out, &inflect(&self.intransitive.words[v]));
            if rng.random_bool(0.2) {
                push(out, &self.adverbs.words[self.adverbs.draw(rng)]);
            } else if depth < 2 && rng.random_bool(0.2) {
                push(out, PREPS[rng.random_range(0..PREPS.len())]);
                let n2 = if rng.random_bool(0.7) { Num::Sg } else { Num::Pl };
                self.noun_phrase(rng, out, n2, Some(v % CLUSTERS), depth + 1, commas);
            }
        } else {
            let v = self.transitive.draw(rng);
            push(out, &inflect(&self.transitive.words[v]));
            let n2 = if rng.random_bool(0.6) { Num::Sg } else { Num::Pl };
            self.noun_phrase(rng, out, n2, Some(v % CLUSTERS), depth + 1, commas);
        }
    }

    fn clause(&self, rng: &mut ChaCha8Rng, out: &mut ToySentence, commas: bool) {
        let num = if rng.random_bool(0.65) { Num::Sg } else { Num::Pl };
        self.noun_phrase(rng, out, num, None, 0, commas);
        self.verb_phrase(rng, out, num, 0, commas);
    }

    /// Draws one sentence of at most `max_len` words.
    pub fn sentence(&self, rng: &mut ChaCha8Rng, max_len: usize, commas: bool) -> ToySentence {
        loop {
            let mut out = ToySentence { words: Vec::new(), comma_after: Vec::new() };
            self.clause(rng, &mut out, commas);
            if rng.random_bool(0.15) {
                if commas {
                    mark_comma(&mut out);
                }
                push(&mut out, CONJS[rng.random_range(0..CONJS.len())]);
                self.clause(rng, &mut out, commas);
            }
            if let Some(last) = out.comma_after.last_mut() {
                *last = false;
            }
            if out.words.len() <= max_len {
                return out;
            }
        }
    }
}

fn push(out: &mut ToySentence, w: &str) {
    out.words.push(w.to_string());
    out.comma_after.push(false);
}

fn mark_comma(out: &mut ToySentence) {
    if let Some(last) = out.comma_after.last_mut() {
        *last = true;
    }
}

/// Bare training sentences, one per element.
pub fn corpus(seed: u64, n: usize) -> Vec<String> {
    let g = ToyGrammar::new(seed);
    let mut rng = seeded_rng(seed, 11);
    (0..n).map(|_| g.sentence(&mut rng, 39, false).plain()).collect()
}

/// Punctuated stimuli `(sentence_id, text)` of 5 to `max_len` words, ids from 1.
pub fn stimuli(seed: u64, n: usize, max_len: usize) -> Vec<(u32, String)> {
    let g = ToyGrammar::new(seed);
    let mut rng = seeded_rng(seed, 12);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = g.sentence(&mut rng, max_len, true);
        if s.words.len() >= 5 {
            out.push((out.len() as u32 + 1, s.punctuated()));
        }
    }
    out
}

/// Counts per million words over `sentences` (bare words, whitespace split).
pub fn frequency_norms<'a>(sentences: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for s in sentences {
        for w in s.split_whitespace() {
            *counts.entry(w.to_string()).or_default() += 1;
            total += 1;
        }
    }
    counts.into_iter().map(|(w, c)| (w, c as f64 * 1e6 / total as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize_line;

    #[test]
    fn corpus_is_deterministic_and_valid() {
        let a = corpus(3, 200);
        assert_eq!(a, corpus(3, 200));
        assert_ne!(a, corpus(4, 200));
        for s in &a {
            let toks = tokenize_line(s);
            assert!(!toks.is_empty() && toks.len() <= 39);
            assert!(toks.iter().all(|t| t.valid), "{s}");
        }
    }

    #[test]
    fn agreement_holds_in_simple_clauses() {
        let g = ToyGrammar::new(1);
        let verbs: BTreeSet<&str> = g.intransitive.words.iter().chain(&g.transitive.words).map(String::as_str).collect();
        let mut rng = seeded_rng(1, 99);
        let mut checked = 0;
        for _ in 0..300 {
            let s = g.sentence(&mut rng, 39, false);
            let w = &s.words;
            // "det noun verb..." with a bare noun head directly before the verb
            if w.len() >= 3 && (DET_SG.contains(&w[0].as_str()) && w[0] != "the") {
                let v = &w[2];
                if let Some(base) = v.strip_suffix('s') {
                    if verbs.contains(base) {
                        checked += 1;
                    }
                } else {
                    assert!(!verbs.contains(v.as_str()), "plural verb after singular subject: {}", s.plain());
                }
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn stimuli_carry_commas_and_periods() {
        let st = stimuli(2, 60, 20);
        assert_eq!(st.len(), 60);
        assert_eq!(st[0].0, 1);
        assert!(st.iter().all(|(_, t)| t.ends_with('.')));
        assert!(st.iter().any(|(_, t)| t.contains(", ")));
        assert!(st.iter().all(|(_, t)| !t.contains(",.")));
        assert!(st.iter().all(|(_, t)| (5..=20).contains(&t.split_whitespace().count())));
    }

    #[test]
    fn norms_are_per_million() {
        let n = frequency_norms(["a b a", "c a"]);
        assert!((n["a"] - 600_000.0).abs() < 1e-6);
        assert!((n.values().sum::<f64>() - 1e6).abs() < 1e-6);
    }
}
