//! Reading-measure events, exclusion rules and standardized predictor tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize_line;
use crate::error::{Error, Result};
use crate::lm::surprisal::csv_error;
use crate::lm::SurprisalRow;
use crate::stats::standardize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Dataset {
    Spr,
    Et,
    Eeg,
}

impl Dataset {
    pub const ALL: [Dataset; 3] = [Dataset::Spr, Dataset::Et, Dataset::Eeg];

    /// Whether the measure is a duration (log-transformed, range-checked).
    pub fn is_timed(self) -> bool {
        matches!(self, Dataset::Spr | Dataset::Et)
    }

    /// Baseline fixed effects, in design order.
    pub fn main_effects(self) -> &'static [&'static str] {
        match self {
            Dataset::Spr => &["logfreq", "length", "position", "prev_logfreq", "prev_length", "prev_logrt"],
            Dataset::Et => &["logfreq", "length", "position", "prev_logfreq", "prev_length"],
            Dataset::Eeg => &["logfreq", "length", "position", "baseline"],
        }
    }

    pub fn surprisal_terms(self) -> &'static [&'static str] {
        match self {
            Dataset::Spr | Dataset::Et => &["surprisal", "prev_surprisal"],
            Dataset::Eeg => &["surprisal"],
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Spr => "SPR",
            Dataset::Et => "ET",
            Dataset::Eeg => "EEG",
        })
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SPR" => Ok(Dataset::Spr),
            "ET" => Ok(Dataset::Et),
            "EEG" => Ok(Dataset::Eeg),
            _ => Err(Error::Invalid(format!("unknown dataset `{s}` (expected SPR, ET or EEG)"))),
        }
    }
}

/// One measurement of one subject on one word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingEvent {
    pub dataset: Dataset,
    pub subject: String,
    pub sentence_id: u32,
    /// 1-based.
    pub position: usize,
    /// The word as displayed, including attached punctuation.
    pub word: String,
    /// Milliseconds (SPR, ET) or microvolts (EEG).
    pub measure: f64,
    pub baseline: Option<f64>,
    pub artifact: Option<bool>,
}

impl ReadingEvent {
    pub fn followed_by_comma(&self) -> bool {
        self.word.trim_end_matches(['"', '\'', ')']).ends_with(',')
    }

    pub fn normalized_word(&self) -> String {
        normalize_word(&self.word)
    }
}

/// Lowercased word without surrounding punctuation.
pub fn normalize_word(raw: &str) -> String {
    let trimmed = raw.trim_matches(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\'' || c == '\u{2019}'));
    let trimmed = trimmed.trim_matches('\'');
    tokenize_line(trimmed).into_iter().next().map(|t| t.text).unwrap_or_default()
}

/// Reads the event CSV. Rows of other datasets are an error.
pub fn load_dataset(kind: Dataset, path: &Path) -> Result<Vec<ReadingEvent>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut events = Vec::new();
    for (i, row) in r.deserialize::<ReadingEvent>().enumerate() {
        let ev = row.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        if ev.dataset != kind {
            return Err(Error::parse(path, line, format!("{} row in a {kind} file", ev.dataset)));
        }
        if ev.position == 0 {
            return Err(Error::parse(path, line, "positions are 1-based"));
        }
        if !ev.measure.is_finite() || ev.baseline.is_some_and(|b| !b.is_finite()) {
            return Err(Error::parse(path, line, "non-finite measure"));
        }
        if kind == Dataset::Eeg && (ev.baseline.is_none() || ev.artifact.is_none()) {
            return Err(Error::parse(path, line, "EEG rows need baseline and artifact fields"));
        }
        events.push(ev);
    }
    Ok(events)
}

pub fn save_dataset(events: &[ReadingEvent], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if events.is_empty() {
        w.write_record(["dataset", "subject", "sentence_id", "position", "word", "measure", "baseline", "artifact"])
            .map_err(|e| csv_error(path, e))?;
    }
    for ev in events {
        w.serialize(ev).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A stimulus sentence: displayed tokens and their normalized words.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub sentence_id: u32,
    pub displayed: Vec<String>,
    pub words: Vec<String>,
}

impl Stimulus {
    pub fn new(sentence_id: u32, text: &str) -> Self {
        let displayed: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let words = displayed.iter().map(|d| normalize_word(d)).collect();
        Self { sentence_id, displayed, words }
    }
}

/// Reads `sentence_id<TAB>text` lines.
pub fn read_stimuli(path: &Path) -> Result<Vec<Stimulus>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, sentence) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected sentence_id<TAB>text"))?;
        let id: u32 = id.trim().parse().map_err(|_| Error::parse(path, i + 1, format!("bad sentence id `{id}`")))?;
        if !seen.insert(id) {
            return Err(Error::parse(path, i + 1, format!("duplicate sentence id {id}")));
        }
        let s = Stimulus::new(id, sentence);
        if let Some(bad) = s.words.iter().find(|w| !crate::corpus::is_valid_token(w)) {
            return Err(Error::parse(path, i + 1, format!("stimulus word `{bad}` is not a valid token")));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_stimuli(stimuli: &[(u32, String)], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for (id, text) in stimuli {
        writeln!(out, "{id}\t{text}").expect("writing to a Vec cannot fail");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Which exclusion rules to apply. All are on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExclusionRules {
    pub sentence_boundaries: bool,
    pub before_comma: bool,
    /// SPR/ET only.
    pub after_comma: bool,
    /// SPR/ET only: keep 50 ms ≤ measure ≤ 3500 ms.
    pub duration_range: bool,
    /// EEG only.
    pub artifacts: bool,
}

impl Default for ExclusionRules {
    fn default() -> Self {
        Self { sentence_boundaries: true, before_comma: true, after_comma: true, duration_range: true, artifacts: true }
    }
}

pub const MIN_DURATION_MS: f64 = 50.0;
pub const MAX_DURATION_MS: f64 = 3500.0;

pub fn apply_exclusions(events: &[ReadingEvent]) -> Vec<ReadingEvent> {
    apply_exclusions_with(events, ExclusionRules::default())
}

/// Sentence-final positions and comma marks are taken from all events of
/// the same sentence (any subject).
pub fn apply_exclusions_with(events: &[ReadingEvent], rules: ExclusionRules) -> Vec<ReadingEvent> {
    let mut last: HashMap<u32, usize> = HashMap::new();
    let mut comma: HashMap<(u32, usize), bool> = HashMap::new();
    for ev in events {
        let l = last.entry(ev.sentence_id).or_default();
        *l = (*l).max(ev.position);
        *comma.entry((ev.sentence_id, ev.position)).or_default() |= ev.followed_by_comma();
    }
    events
        .iter()
        .filter(|ev| {
            let timed = ev.dataset.is_timed();
            if rules.sentence_boundaries && (ev.position == 1 || ev.position == last[&ev.sentence_id]) {
                return false;
            }
            if rules.before_comma && comma[&(ev.sentence_id, ev.position)] {
                return false;
            }
            if rules.after_comma && timed && ev.position > 1 && comma.get(&(ev.sentence_id, ev.position - 1)).copied().unwrap_or(false) {
                return false;
            }
            if rules.duration_range && timed && !(MIN_DURATION_MS..=MAX_DURATION_MS).contains(&ev.measure) {
                return false;
            }
            if rules.artifacts && ev.artifact == Some(true) {
                return false;
            }
            true
        })
        .cloned()
        .collect()
}

/// Events on sentences in `ids`, and the rest.
pub fn split_spr_by_subset(events: &[ReadingEvent], ids: &BTreeSet<u32>) -> (Vec<ReadingEvent>, Vec<ReadingEvent>) {
    events.iter().cloned().partition(|ev| ids.contains(&ev.sentence_id))
}

/// Word frequencies per million.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrequencyNorms {
    counts: BTreeMap<String, f64>,
}

impl FrequencyNorms {
    pub fn new(counts: BTreeMap<String, f64>) -> Result<Self> {
        if let Some((w, c)) = counts.iter().find(|(_, c)| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::Invalid(format!("frequency of `{w}` must be positive, got {c}")));
        }
        Ok(Self { counts })
    }

    pub fn per_million(&self, word: &str) -> Option<f64> {
        self.counts.get(word).copied()
    }

    /// `ln(count + 1)`.
    pub fn log_frequency(&self, word: &str) -> Option<f64> {
        self.per_million(word).map(|c| (c + 1.0).ln())
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut counts = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (w, c) = line.split_once('\t').ok_or_else(|| Error::parse(path, i + 1, "expected word<TAB>count"))?;
            let c: f64 = c.trim().parse().map_err(|_| Error::parse(path, i + 1, format!("bad count `{c}`")))?;
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::parse(path, i + 1, format!("count for `{w}` must be positive")));
            }
            counts.insert(w.to_string(), c);
        }
        Ok(Self { counts })
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (w, c) in &self.counts {
            writeln!(out, "{w}\t{c}").expect("writing to a Vec cannot fail");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// A named predictor: raw values and their standardized version.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub raw: Vec<f64>,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: &str, raw: Vec<f64>) -> Self {
        let mut values = raw.clone();
        standardize(&mut values);
        Self { name: name.to_string(), raw, values }
    }
}

/// Regression-ready rows for one dataset and one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorTable {
    pub dataset: Dataset,
    /// ln(ms) for SPR/ET, µV for EEG.
    pub y: Vec<f64>,
    pub mains: Vec<Column>,
    pub surprisal: Vec<Column>,
    /// Index into `subject_labels`.
    pub subject: Vec<usize>,
    pub subject_labels: Vec<String>,
    /// Index into `item_labels`; an item is a `(sentence, position)` token.
    pub item: Vec<usize>,
    pub item_labels: Vec<(u32, usize)>,
}

impl PredictorTable {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.mains.iter().chain(&self.surprisal).find(|c| c.name == name)
    }

    /// Mean log-probability of the current words over the rows.
    pub fn avg_log_prob(&self) -> f64 {
        let s = &self.column("surprisal").expect("table has a surprisal column").raw;
        -s.iter().sum::<f64>() / s.len() as f64
    }
}

/// Builds the predictor table for the `included` events.
///
/// `all` supplies the previous word's measure (spill-over refers to position
/// `t − 1` whether or not that event was itself included). `surprisal` holds
/// the rows of a single model checkpoint.
pub fn build_predictors(
    all: &[ReadingEvent],
    included: &[ReadingEvent],
    norms: &FrequencyNorms,
    surprisal: &[SurprisalRow],
) -> Result<PredictorTable> {
    let Some(first) = included.first() else {
        return Err(Error::Invalid("no events left to analyze".into()));
    };
    let dataset = first.dataset;
    if included.iter().chain(all).any(|e| e.dataset != dataset) {
        return Err(Error::Invalid("events from more than one dataset".into()));
    }

    let mut words: HashMap<(u32, usize), String> = HashMap::new();
    let mut measures: HashMap<(&str, u32, usize), f64> = HashMap::new();
    for ev in all.iter().chain(included) {
        words.entry((ev.sentence_id, ev.position)).or_insert_with(|| ev.normalized_word());
        measures.insert((ev.subject.as_str(), ev.sentence_id, ev.position), ev.measure);
    }
    let surp: HashMap<(u32, usize), &SurprisalRow> = surprisal.iter().map(|r| ((r.sentence_id, r.position), r)).collect();

    let mut missing = BTreeSet::new();
    let mut freq_missing = BTreeSet::new();
    let mut lookup_freq = |w: &str| -> f64 {
        norms.log_frequency(w).unwrap_or_else(|| {
            freq_missing.insert(format!("frequency: {w}"));
            f64::NAN
        })
    };
    let mut raw: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut y = Vec::with_capacity(included.len());
    let mut surprisal_missing = BTreeSet::new();
    let mut surprisal_at = |sid: u32, pos: usize, word: &str| -> f64 {
        match surp.get(&(sid, pos)) {
            Some(r) if r.word == word => r.surprisal,
            Some(r) => {
                surprisal_missing.insert(format!("surprisal: sentence {sid} position {pos} is `{}`, expected `{word}`", r.word));
                f64::NAN
            }
            None => {
                surprisal_missing.insert(format!("surprisal: sentence {sid} position {pos} ({word})"));
                f64::NAN
            }
        }
    };

    for ev in included {
        if ev.position < 2 {
            return Err(Error::Invalid(format!("sentence-initial event in sentence {} has no previous word", ev.sentence_id)));
        }
        let w = ev.normalized_word();
        let prev = words.get(&(ev.sentence_id, ev.position - 1)).cloned().unwrap_or_else(|| {
            missing.insert(format!("word: sentence {} position {}", ev.sentence_id, ev.position - 1));
            String::new()
        });
        y.push(if dataset.is_timed() { ev.measure.ln() } else { ev.measure });
        let mut push = |name: &'static str, v: f64| raw.entry(name).or_default().push(v);
        push("logfreq", lookup_freq(&w));
        push("length", w.chars().count() as f64);
        push("position", ev.position as f64);
        if dataset.is_timed() {
            push("prev_logfreq", lookup_freq(&prev));
            push("prev_length", prev.chars().count() as f64);
            push("prev_surprisal", surprisal_at(ev.sentence_id, ev.position - 1, &prev));
        }
        if dataset == Dataset::Spr {
            let prev_rt = measures.get(&(ev.subject.as_str(), ev.sentence_id, ev.position - 1)).copied();
            push("prev_logrt", prev_rt.map(f64::ln).unwrap_or_else(|| {
                missing.insert(format!("previous reading time: subject {} sentence {} position {}", ev.subject, ev.sentence_id, ev.position - 1));
                f64::NAN
            }));
        }
        if dataset == Dataset::Eeg {
            push("baseline", ev.baseline.unwrap_or(f64::NAN));
        }
        push("surprisal", surprisal_at(ev.sentence_id, ev.position, &w));
    }
    missing.extend(freq_missing);
    missing.extend(surprisal_missing);
    if !missing.is_empty() {
        return Err(Error::Missing { what: "predictor inputs", items: missing.into_iter().collect() });
    }
    if raw.values().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite predictor value".into()));
    }

    let mut take = |name: &str| Column::new(name, raw.remove(name).expect("column filled above"));
    let mains = dataset.main_effects().iter().map(|n| take(n)).collect();
    let surprisal = dataset.surprisal_terms().iter().map(|n| take(n)).collect();

    let mut subject_labels: Vec<String> = included.iter().map(|e| e.subject.clone()).collect();
    subject_labels.sort();
    subject_labels.dedup();
    let mut item_labels: Vec<(u32, usize)> = included.iter().map(|e| (e.sentence_id, e.position)).collect();
    item_labels.sort();
    item_labels.dedup();
    let subject = included.iter().map(|e| subject_labels.binary_search(&e.subject).expect("label present")).collect();
    let item = included
        .iter()
        .map(|e| item_labels.binary_search(&(e.sentence_id, e.position)).expect("label present"))
        .collect();

    Ok(PredictorTable { dataset, y, mains, surprisal, subject, subject_labels, item, item_labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelKind;
    use crate::stats::{mean, sd};
    use proptest::prelude::*;

    fn ev(dataset: Dataset, subject: &str, sid: u32, pos: usize, word: &str, measure: f64) -> ReadingEvent {
        let eeg = dataset == Dataset::Eeg;
        ReadingEvent {
            dataset,
            subject: subject.into(),
            sentence_id: sid,
            position: pos,
            word: word.into(),
            measure,
            baseline: eeg.then_some(0.5),
            artifact: eeg.then_some(false),
        }
    }

    fn sentence(dataset: Dataset, subject: &str, sid: u32, words: &[&str], measures: &[f64]) -> Vec<ReadingEvent> {
        words.iter().zip(measures).enumerate().map(|(i, (w, &m))| ev(dataset, subject, sid, i + 1, w, m)).collect()
    }

    fn srow(sid: u32, pos: usize, word: &str, s: f64) -> SurprisalRow {
        SurprisalRow {
            model: ModelKind::Gru,
            layers: 1,
            seed: 0,
            checkpoint: "epoch1".into(),
            sentence_id: sid,
            position: pos,
            word: word.into(),
            surprisal: s,
        }
    }

    #[test]
    fn word_normalization_and_commas() {
        assert_eq!(normalize_word("House,"), "house");
        assert_eq!(normalize_word("\"Don't"), "don't");
        assert_eq!(normalize_word("end."), "end");
        assert!(ev(Dataset::Spr, "s", 1, 2, "house,", 300.0).followed_by_comma());
        assert!(!ev(Dataset::Spr, "s", 1, 2, "house.", 300.0).followed_by_comma());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eeg.csv");
        let mut events = sentence(Dataset::Eeg, "p1", 3, &["The", "dog,", "barked."], &[1.5, -2.25, 0.125]);
        events[1].artifact = Some(true);
        save_dataset(&events, &path).unwrap();
        assert_eq!(load_dataset(Dataset::Eeg, &path).unwrap(), events);
        assert!(load_dataset(Dataset::Spr, &path).is_err());

        let empty = dir.path().join("empty.csv");
        save_dataset(&[], &empty).unwrap();
        assert!(load_dataset(Dataset::Spr, &empty).unwrap().is_empty());

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "dataset,subject,sentence_id,position,word,measure,baseline,artifact\nSPR,a,1,1,x,300,,\nSPR,a,1,x,y,300,,\n").unwrap();
        match load_dataset(Dataset::Spr, &bad).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn exclusion_rules() {
        let mut events = sentence(Dataset::Spr, "a", 1, &["The", "old", "house,", "as", "we", "saw", "burned."], &[300.0; 7]);
        events[4].measure = 49.0;
        let kept: Vec<usize> = apply_exclusions(&events).iter().map(|e| e.position).collect();
        // 1 initial, 3 before comma, 4 after comma, 5 too fast, 7 final
        assert_eq!(kept, vec![2, 6]);
        events[5].measure = 3501.0;
        assert_eq!(apply_exclusions(&events).len(), 1);

        let mut eeg = sentence(Dataset::Eeg, "a", 1, &["The", "old", "house,", "as", "we", "burned."], &[1.0; 6]);
        eeg[4].artifact = Some(true);
        eeg[1].measure = 10_000.0;
        let kept: Vec<usize> = apply_exclusions(&eeg).iter().map(|e| e.position).collect();
        assert_eq!(kept, vec![2, 4]);
    }

    fn rules_strategy() -> impl Strategy<Value = ExclusionRules> {
        (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(a, b, c, d, e)| ExclusionRules {
            sentence_boundaries: a,
            before_comma: b,
            after_comma: c,
            duration_range: d,
            artifacts: e,
        })
    }

    proptest! {
        #[test]
        fn adding_a_rule_never_grows_the_set(rules in rules_strategy(), extra in 0usize..5, rts in proptest::collection::vec(20.0f64..4000.0, 8)) {
            let words = ["A", "b,", "c", "d", "e,", "f", "g", "h."];
            let events = sentence(Dataset::Spr, "a", 1, &words, &rts);
            let mut more = rules;
            match extra {
                0 => more.sentence_boundaries = true,
                1 => more.before_comma = true,
                2 => more.after_comma = true,
                3 => more.duration_range = true,
                _ => more.artifacts = true,
            }
            let base = apply_exclusions_with(&events, rules);
            let stricter = apply_exclusions_with(&events, more);
            prop_assert!(stricter.len() <= base.len());
            prop_assert!(stricter.iter().all(|e| base.contains(e)));
        }
    }

    #[test]
    fn subset_split() {
        let mut events = sentence(Dataset::Spr, "a", 1, &["x", "y"], &[1.0, 1.0]);
        events.extend(sentence(Dataset::Spr, "a", 2, &["x", "y"], &[1.0, 1.0]));
        let all: BTreeSet<u32> = [1, 2].into();
        let (shared, rest) = split_spr_by_subset(&events, &all);
        assert_eq!((shared.len(), rest.len()), (4, 0));
        let (shared, rest) = split_spr_by_subset(&events, &BTreeSet::from([9]));
        assert_eq!((shared.len(), rest.len()), (0, 4));
        let (shared, rest) = split_spr_by_subset(&events, &BTreeSet::from([2]));
        assert!(shared.iter().all(|e| e.sentence_id == 2) && rest.iter().all(|e| e.sentence_id == 1));
    }

    fn norms() -> FrequencyNorms {
        FrequencyNorms::new(
            [("the", 50_000.0), ("old", 300.0), ("house", 120.0), ("fell", 40.0), ("down", 900.0)]
                .into_iter()
                .map(|(w, c)| (w.to_string(), c))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn spill_over_uses_previous_word() {
        let words = ["The", "old", "house", "fell", "down."];
        let all = sentence(Dataset::Spr, "s1", 7, &words, &[250.0, 1000.0, 400.0, 500.0, 350.0]);
        let included: Vec<ReadingEvent> = all[1..4].to_vec();
        let surprisal: Vec<SurprisalRow> =
            ["the", "old", "house", "fell", "down"].iter().enumerate().map(|(i, w)| srow(7, i + 1, w, 1.0 + i as f64)).collect();
        let t = build_predictors(&all, &included, &norms(), &surprisal).unwrap();
        let col = |n: &str| t.column(n).unwrap().raw.clone();
        let lf = |c: f64| (c + 1.0f64).ln();
        assert_eq!(col("logfreq"), vec![lf(300.0), lf(120.0), lf(40.0)]);
        assert_eq!(col("prev_logfreq"), vec![lf(50_000.0), lf(300.0), lf(120.0)]);
        assert_eq!(col("length"), vec![3.0, 5.0, 4.0]);
        assert_eq!(col("prev_length"), vec![3.0, 3.0, 5.0]);
        assert_eq!(col("position"), vec![2.0, 3.0, 4.0]);
        assert_eq!(col("prev_logrt"), vec![250f64.ln(), 1000f64.ln(), 400f64.ln()]);
        assert_eq!(col("surprisal"), vec![2.0, 3.0, 4.0]);
        assert_eq!(col("prev_surprisal"), vec![1.0, 2.0, 3.0]);
        assert!((t.y[0] - 6.907755).abs() < 1e-6);
        assert_eq!(t.item_labels, vec![(7, 2), (7, 3), (7, 4)]);
        assert!((t.avg_log_prob() + 3.0).abs() < 1e-12);
        for c in t.mains.iter().chain(&t.surprisal) {
            assert!(mean(&c.values).abs() < 1e-10, "{}", c.name);
            assert!((sd(&c.values) - 1.0).abs() < 1e-10, "{}", c.name);
        }
        let names: Vec<&str> = t.mains.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, Dataset::Spr.main_effects());
    }

    #[test]
    fn standardization_is_idempotent() {
        let mut x: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 1.7 + 3.0).collect();
        standardize(&mut x);
        let once = x.clone();
        standardize(&mut x);
        assert!(once.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn missing_inputs_are_listed() {
        let all = sentence(Dataset::Et, "s1", 1, &["The", "odd", "house", "fell"], &[250.0, 300.0, 400.0, 500.0]);
        let surprisal: Vec<SurprisalRow> = ["the", "odd", "house"].iter().enumerate().map(|(i, w)| srow(1, i + 1, w, 1.0)).collect();
        match build_predictors(&all, &all[1..3], &norms(), &surprisal).unwrap_err() {
            Error::Missing { items, .. } => {
                assert!(items.iter().any(|i| i.contains("odd")), "{items:?}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn eeg_has_baseline_and_no_spill_over() {
        let mut all = sentence(Dataset::Eeg, "s1", 1, &["The", "old", "house", "fell", "down."], &[1.0, -2.0, 0.5, 3.0, 1.0]);
        for (i, e) in all.iter_mut().enumerate() {
            e.baseline = Some(i as f64 * 0.25);
        }
        let surprisal: Vec<SurprisalRow> =
            ["the", "old", "house", "fell", "down"].iter().enumerate().map(|(i, w)| srow(1, i + 1, w, 2.0)).collect();
        let t = build_predictors(&all, &all[1..4], &norms(), &surprisal).unwrap();
        let names: Vec<&str> = t.mains.iter().chain(&t.surprisal).map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["logfreq", "length", "position", "baseline", "surprisal"]);
        assert_eq!(t.y, vec![-2.0, 0.5, 3.0]);
    }
}
