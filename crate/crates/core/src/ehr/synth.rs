//! Synthetic patient generator driven by latent condition rules.
//!
//! Each rule ties a set of diseases, symptoms, and an age band to a
//! preferred examination set. A patient's recent history follows one rule;
//! optionally an earlier segment of unrelated clutter precedes it (old,
//! idiosyncratic record noise). The final examination comes from the active
//! rule's preferred set with a configurable probability, so the mapping is
//! learnable from the recent tokens while the clutter rewards models that
//! can weight recency and prune spurious interactions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, EntityId, EntityVocab, Gender, PatientRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_patients: usize,
    pub n_diseases: usize,
    pub n_symptoms: usize,
    pub n_exams: usize,
    pub n_rules: usize,
    pub seq_len_range: (usize, usize),
    /// Probability the final examination follows the active rule.
    pub rule_follow_prob: f64,
    /// Probability a non-leading token is uniform noise instead of rule-driven.
    pub noise_prob: f64,
    /// Probability a patient carries an early clutter segment of unrelated
    /// entities before the rule-driven recent phase.
    pub two_phase_prob: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_patients: 200,
            n_diseases: 30,
            n_symptoms: 40,
            n_exams: 20,
            n_rules: 10,
            seq_len_range: (8, 16),
            rule_follow_prob: 0.9,
            noise_prob: 0.1,
            two_phase_prob: 0.8,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let positive = [
            ("n_patients", self.n_patients),
            ("n_diseases", self.n_diseases),
            ("n_symptoms", self.n_symptoms),
            ("n_exams", self.n_exams),
            ("n_rules", self.n_rules),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(DataError::Config {
                    field,
                    msg: "must be >= 1".into(),
                });
            }
        }
        if self.seq_len_range.0 < 3 {
            return Err(DataError::Config {
                field: "seq_len_range",
                msg: "lower bound must be >= 3".into(),
            });
        }
        if self.seq_len_range.0 > self.seq_len_range.1 {
            return Err(DataError::Config {
                field: "seq_len_range",
                msg: "lower bound exceeds upper bound".into(),
            });
        }
        let probs = [
            ("rule_follow_prob", self.rule_follow_prob),
            ("noise_prob", self.noise_prob),
            ("two_phase_prob", self.two_phase_prob),
        ];
        for (field, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::Config {
                    field,
                    msg: format!("{v} outside [0, 1]"),
                });
            }
        }
        if self.n_rules > self.n_diseases.min(self.n_symptoms).min(self.n_exams) {
            return Err(DataError::Config {
                field: "n_rules",
                msg: "cannot exceed the smallest entity count".into(),
            });
        }
        Ok(())
    }
}

/// A latent condition profile: which findings co-occur and which
/// examinations are indicated for them.
#[derive(Debug, Clone)]
pub struct ConditionRule {
    pub diseases: Vec<EntityId>,
    pub symptoms: Vec<EntityId>,
    pub exams: Vec<EntityId>,
    pub age_range: (u32, u32),
}

/// Rules are a pure function of the config: entity ids are striped across
/// rules round-robin, and age bands are staggered, overlapping decades.
pub fn derive_rules(cfg: &GenConfig) -> Result<Vec<ConditionRule>, DataError> {
    cfg.validate()?;
    let vocab = EntityVocab::new(cfg.n_diseases, cfg.n_symptoms, cfg.n_exams)?;
    let mut rules = Vec::with_capacity(cfg.n_rules);
    for r in 0..cfg.n_rules {
        let diseases = (0..cfg.n_diseases)
            .filter(|d| d % cfg.n_rules == r)
            .map(|d| vocab.disease(d))
            .collect();
        let symptoms = (0..cfg.n_symptoms)
            .filter(|p| p % cfg.n_rules == r)
            .map(|p| vocab.symptom(p))
            .collect();
        let exams = (0..cfg.n_exams)
            .filter(|c| c % cfg.n_rules == r)
            .map(|c| vocab.exam(c))
            .collect();
        let start = ((r * 3) % 8) as u32 * 10;
        rules.push(ConditionRule {
            diseases,
            symptoms,
            exams,
            age_range: (start, (start + 29).min(99)),
        });
    }
    Ok(rules)
}

fn pick<R: Rng>(rng: &mut R, pool: &[EntityId]) -> EntityId {
    pool[rng.gen_range(0..pool.len())]
}

/// Deterministic for a fixed config: same config and seed produce a
/// byte-identical dataset.
pub fn generate_synthetic(cfg: &GenConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let vocab = EntityVocab::new(cfg.n_diseases, cfg.n_symptoms, cfg.n_exams)?;
    let rules = derive_rules(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let all_tokens: Vec<EntityId> = (0..cfg.n_diseases)
        .map(|d| vocab.disease(d))
        .chain((0..cfg.n_symptoms).map(|p| vocab.symptom(p)))
        .chain((0..cfg.n_exams).map(|c| vocab.exam(c)))
        .collect();
    let all_exams: Vec<EntityId> = vocab.exam_ids().collect();

    let mut patients = Vec::with_capacity(cfg.n_patients);
    for pid in 0..cfg.n_patients {
        let rule_idx = rng.gen_range(0..cfg.n_rules);
        let rule = &rules[rule_idx];
        let cluttered = rng.gen_bool(cfg.two_phase_prob);
        let (age_lo, age_hi) = rule.age_range;
        let age = rng.gen_range(age_lo..=age_hi);
        let gender = if rng.gen_bool(0.5) {
            Gender::Female
        } else {
            Gender::Male
        };
        let len = rng.gen_range(cfg.seq_len_range.0..=cfg.seq_len_range.1);
        let body_len = len - 1;
        let clutter_len = if cluttered { body_len / 2 } else { 0 };

        let mut sequence = Vec::with_capacity(len);
        for pos in 0..body_len {
            let token = if pos < clutter_len {
                // old unrelated record: idiosyncratic clutter, weighted
                // toward examinations so spurious exam interactions occur
                if rng.gen_bool(0.5) {
                    pick(&mut rng, &all_exams)
                } else {
                    pick(&mut rng, &all_tokens)
                }
            } else if pos == clutter_len {
                // the active condition opens with one of its diseases
                pick(&mut rng, &rule.diseases)
            } else if rng.gen_bool(cfg.noise_prob) {
                pick(&mut rng, &all_tokens)
            } else {
                let roll: f64 = rng.gen();
                if roll < 0.4 {
                    pick(&mut rng, &rule.diseases)
                } else if roll < 0.8 {
                    pick(&mut rng, &rule.symptoms)
                } else {
                    pick(&mut rng, &rule.exams)
                }
            };
            sequence.push(token);
        }
        let last = if rng.gen_bool(cfg.rule_follow_prob) {
            pick(&mut rng, &rule.exams)
        } else {
            pick(&mut rng, &all_exams)
        };
        sequence.push(last);

        patients.push(PatientRecord {
            patient_id: pid,
            age,
            gender,
            sequence,
        });
    }

    inject_missing_entities(&vocab, &mut patients, &all_tokens);

    let ds = Dataset::new(vocab, patients, cfg.seed);
    ds.validate()?;
    Ok(ds)
}

/// Guarantee every entity id occurs at least once so the vocabulary is
/// reconstructible from the saved file. Missing ids are inserted just
/// before a patient's final token, round-robin over patients.
fn inject_missing_entities(
    vocab: &EntityVocab,
    patients: &mut [PatientRecord],
    all_tokens: &[EntityId],
) {
    let mut present = vec![false; vocab.total()];
    for p in patients.iter() {
        for e in &p.sequence {
            present[e.0] = true;
        }
    }
    let mut slot = 0usize;
    for &e in all_tokens {
        if !present[e.0] {
            let p = &mut patients[slot % patients.len()];
            let at = p.sequence.len() - 1;
            p.sequence.insert(at, e);
            slot += 1;
        }
    }
}
