//! Synthetic data with known generating parameters.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reading::{Column, Dataset, FrequencyNorms, PredictorTable, ReadingEvent, Stimulus};
use crate::seeded_rng;
use crate::stats::standardize;

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Fully crossed subjects × items with item-level predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossedSim {
    pub subjects: usize,
    pub items: usize,
    /// Intercept followed by one slope per predictor `x1, x2, ...`.
    pub beta: Vec<f64>,
    /// Effect of the `surprisal` column, in residual sd per predictor sd.
    pub gamma: f64,
    pub sd_subject: f64,
    /// By-subject slope sd on `x1`.
    pub sd_slope: f64,
    pub sd_item: f64,
    pub sd_residual: f64,
}

impl CrossedSim {
    pub fn predictor_names(&self) -> Vec<String> {
        (1..self.beta.len()).map(|i| format!("x{i}")).collect()
    }

    /// One replication. Predictor columns and `surprisal` are standard
    /// normal draws per item, standardized over rows.
    pub fn simulate(&self, seed: u64) -> PredictorTable {
        let mut rng = seeded_rng(seed, 40);
        let k = self.beta.len() - 1;
        let item_x: Vec<Vec<f64>> = (0..self.items).map(|_| (0..=k).map(|_| normal(&mut rng)).collect()).collect();
        let item_b: Vec<f64> = (0..self.items).map(|_| self.sd_item * normal(&mut rng)).collect();
        let subj_b: Vec<(f64, f64)> =
            (0..self.subjects).map(|_| (self.sd_subject * normal(&mut rng), self.sd_slope * normal(&mut rng))).collect();

        let n = self.subjects * self.items;
        let mut y = Vec::with_capacity(n);
        let mut raw: Vec<Vec<f64>> = vec![Vec::with_capacity(n); k + 1];
        let (mut subject, mut item) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for s in 0..self.subjects {
            for (i, x) in item_x.iter().enumerate() {
                let mut v = self.beta[0] + self.gamma * self.sd_residual * x[k] + item_b[i] + subj_b[s].0;
                for j in 0..k {
                    v += self.beta[j + 1] * x[j];
                }
                if k > 0 {
                    v += subj_b[s].1 * x[0];
                }
                v += self.sd_residual * normal(&mut rng);
                y.push(v);
                for (col, xv) in raw.iter_mut().zip(x) {
                    col.push(*xv);
                }
                subject.push(s);
                item.push(i);
            }
        }
        let surprisal = raw.pop().expect("surprisal column");
        let mains = self.predictor_names().iter().zip(raw).map(|(n, r)| Column::new(n, r)).collect();
        PredictorTable {
            dataset: Dataset::Spr,
            y,
            mains,
            surprisal: vec![Column::new("surprisal", surprisal)],
            subject,
            subject_labels: (0..self.subjects).map(|s| format!("s{s}")).collect(),
            item,
            item_labels: (0..self.items).map(|i| (i as u32, 1)).collect(),
        }
    }
}

/// Generating parameters of a synthetic reading dataset.
///
/// The dependent variable (log ms for SPR/ET, µV for EEG) is
/// `intercept + Σ β·z(predictor) + gamma·z(surprisal) + subject + item + noise`,
/// where `z` standardizes over all stimulus tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub dataset: Dataset,
    pub subjects: usize,
    pub intercept: f64,
    /// Effects of `logfreq`, `length`, `position`, and for SPR/ET also
    /// `prev_logfreq` and `prev_length`.
    pub beta: Vec<f64>,
    /// SPR/ET: effect of the previous word's surprisal.
    pub gamma_prev: f64,
    pub gamma: f64,
    /// EEG: effect of the baseline amplitude (baseline ~ N(0, sd_baseline)).
    pub beta_baseline: f64,
    pub sd_baseline: f64,
    pub sd_subject: f64,
    pub sd_item: f64,
    pub sd_residual: f64,
    /// SPR/ET: share of events replaced by implausibly long durations.
    pub outlier_rate: f64,
    /// EEG: share of events flagged as artifacts.
    pub artifact_rate: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn spr(seed: u64) -> Self {
        Self {
            dataset: Dataset::Spr,
            subjects: 24,
            intercept: 5.8,
            beta: vec![-0.03, 0.02, -0.01, -0.01, 0.01],
            gamma_prev: 0.02,
            gamma: 0.05,
            beta_baseline: 0.0,
            sd_baseline: 0.0,
            sd_subject: 0.15,
            sd_item: 0.04,
            sd_residual: 0.25,
            outlier_rate: 0.005,
            artifact_rate: 0.0,
            seed,
        }
    }

    pub fn eeg(seed: u64) -> Self {
        Self {
            dataset: Dataset::Eeg,
            subjects: 16,
            intercept: 0.0,
            beta: vec![-0.3, 0.1, -0.1],
            gamma_prev: 0.0,
            gamma: 0.6,
            beta_baseline: 0.3,
            sd_baseline: 2.0,
            sd_subject: 1.0,
            sd_item: 0.5,
            sd_residual: 4.0,
            outlier_rate: 0.0,
            artifact_rate: 0.05,
            seed,
        }
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.beta.len() != n_features {
            return Err(Error::Invalid(format!("{} needs {n_features} baseline effects, got {}", self.dataset, self.beta.len())));
        }
        if self.subjects == 0 {
            return Err(Error::Invalid("synthetic dataset needs at least one subject".into()));
        }
        Ok(())
    }
}

/// Reading events for every subject on every stimulus in `stimuli`.
///
/// `surprisal` maps `(sentence_id, position)` to the generating surprisal.
pub fn synthesize_reading(
    params: &SynthParams,
    stimuli: &[Stimulus],
    surprisal: &HashMap<(u32, usize), f64>,
    norms: &FrequencyNorms,
) -> Result<Vec<ReadingEvent>> {
    let timed = params.dataset.is_timed();
    let n_features = if timed { 5 } else { 3 };
    params.validate(n_features)?;

    // Standardized features over all stimulus tokens.
    let mut missing = BTreeSet::new();
    let mut tokens = Vec::new();
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); n_features + 2];
    for s in stimuli {
        for (t, w) in s.words.iter().enumerate() {
            let lf = |w: &str, missing: &mut BTreeSet<String>| {
                norms.log_frequency(w).unwrap_or_else(|| {
                    missing.insert(format!("frequency: {w}"));
                    0.0
                })
            };
            let pos = t + 1;
            let surp = |p: usize, missing: &mut BTreeSet<String>| {
                surprisal.get(&(s.sentence_id, p)).copied().unwrap_or_else(|| {
                    missing.insert(format!("surprisal: sentence {} position {p}", s.sentence_id));
                    0.0
                })
            };
            let prev = if t > 0 { s.words[t - 1].as_str() } else { "" };
            let mut row = vec![lf(w, &mut missing), w.chars().count() as f64, pos as f64];
            if timed {
                row.push(if t > 0 { lf(prev, &mut missing) } else { 0.0 });
                row.push(prev.chars().count() as f64);
            }
            row.push(surp(pos, &mut missing));
            row.push(if t > 0 { surp(pos - 1, &mut missing) } else { 0.0 });
            for (f, v) in feats.iter_mut().zip(row) {
                f.push(v);
            }
            tokens.push((s.sentence_id, pos, s.displayed[t].clone()));
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing { what: "synthesis inputs", items: missing.into_iter().collect() });
    }
    for f in &mut feats {
        standardize(f);
    }

    let mut rng = seeded_rng(params.seed, 41);
    let item_b: Vec<f64> = tokens.iter().map(|_| params.sd_item * normal(&mut rng)).collect();
    let noise = Normal::new(0.0, params.sd_residual).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut events = Vec::with_capacity(tokens.len() * params.subjects);
    for s in 0..params.subjects {
        let subject = format!("{}{:02}", params.dataset.to_string().to_lowercase(), s + 1);
        let subj_b = params.sd_subject * normal(&mut rng);
        for (i, (sid, pos, word)) in tokens.iter().enumerate() {
            let mut v = params.intercept + subj_b + item_b[i] + noise.sample(&mut rng);
            for (b, f) in params.beta.iter().zip(&feats) {
                v += b * f[i];
            }
            v += params.gamma * feats[n_features][i];
            if timed {
                v += params.gamma_prev * feats[n_features + 1][i];
            }
            let (measure, baseline, artifact) = if timed {
                let ms = if rng.random::<f64>() < params.outlier_rate { rng.random_range(3600.0..6000.0) } else { v.exp() };
                (ms.round(), None, None)
            } else {
                let b = params.sd_baseline * normal(&mut rng);
                let amp = v + params.beta_baseline * b;
                let flagged = rng.random::<f64>() < params.artifact_rate;
                (round4(amp), Some(round4(b)), Some(flagged))
            };
            events.push(ReadingEvent {
                dataset: params.dataset,
                subject: subject.clone(),
                sentence_id: *sid,
                position: *pos,
                word: word.clone(),
                measure,
                baseline,
                artifact,
            });
        }
    }
    Ok(events)
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reading::{apply_exclusions, load_dataset, save_dataset};

    fn stimuli() -> Vec<Stimulus> {
        vec![Stimulus::new(1, "The old house, as we saw, fell down."), Stimulus::new(2, "A dog barked at the house.")]
    }

    fn norms() -> FrequencyNorms {
        let words = ["the", "old", "house", "as", "we", "saw", "fell", "down", "a", "dog", "barked", "at"];
        FrequencyNorms::new(words.iter().enumerate().map(|(i, w)| (w.to_string(), 10.0 * (i + 1) as f64)).collect()).unwrap()
    }

    fn surprisal() -> HashMap<(u32, usize), f64> {
        stimuli().iter().flat_map(|s| (1..=s.words.len()).map(move |p| ((s.sentence_id, p), p as f64 * 0.7))).collect()
    }

    #[test]
    fn deterministic_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        for params in [SynthParams::spr(5), SynthParams::eeg(5)] {
            let a = synthesize_reading(&params, &stimuli(), &surprisal(), &norms()).unwrap();
            let b = synthesize_reading(&params, &stimuli(), &surprisal(), &norms()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), params.subjects * 14);
            let path = dir.path().join("x.csv");
            save_dataset(&a, &path).unwrap();
            assert_eq!(load_dataset(params.dataset, &path).unwrap(), a);
            assert!(!apply_exclusions(&a).is_empty());
        }
    }

    #[test]
    fn missing_surprisal_is_reported() {
        let mut s = surprisal();
        s.remove(&(2, 3));
        assert!(matches!(synthesize_reading(&SynthParams::spr(1), &stimuli(), &s, &norms()), Err(Error::Missing { .. })));
    }

    #[test]
    fn crossed_sim_shape() {
        let sim = CrossedSim {
            subjects: 4,
            items: 6,
            beta: vec![1.0, 0.5],
            gamma: 0.2,
            sd_subject: 0.5,
            sd_slope: 0.1,
            sd_item: 0.3,
            sd_residual: 1.0,
        };
        let t = sim.simulate(3);
        assert_eq!(t.len(), 24);
        assert_eq!(t.item_labels.len(), 6);
        assert!(t.column("x1").is_some() && t.column("surprisal").is_some());
        assert_eq!(t, sim.simulate(3));
    }
}
