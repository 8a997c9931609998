//! Leave-one-out ranking evaluation: each test target is ranked against
//! sampled negatives and scored with hit ratio and NDCG at cutoffs 5 and 10.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ehr::{sample_negatives_excluding, Dataset, EntityId, PatientRecord, Split};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("target {0:?} not among the ranked candidates")]
    TargetMissing(EntityId),
}

/// Aggregate metrics plus per-patient ranks for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    /// `(patient_id, rank)` with rank 1 best.
    pub ranks: Vec<(usize, usize)>,
    /// Patients whose candidate pool fell short of the requested negatives.
    pub shortage_count: usize,
}

impl MetricRecord {
    pub fn n_evaluated(&self) -> usize {
        self.ranks.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,K,value\n");
        out.push_str(&format!("HR,5,{}\n", self.hr5));
        out.push_str(&format!("HR,10,{}\n", self.hr10));
        out.push_str(&format!("NDCG,5,{}\n", self.ndcg5));
        out.push_str(&format!("NDCG,10,{}\n", self.ndcg10));
        out
    }
}

/// Scores candidates for one patient given their training history.
/// Implementations must be deterministic functions of their inputs.
pub trait Scorer {
    fn score(&self, patient: &PatientRecord, candidates: &[EntityId]) -> Vec<f64>;
}

/// 1 when the target sits within the top `k`, else 0.
pub fn hit_at_k(ranked: &[EntityId], target: EntityId, k: usize) -> Result<u32, EvalError> {
    let rank = rank_of(ranked, target)?;
    Ok(u32::from(rank <= k))
}

/// `1 / log2(rank + 1)` when the target sits within the top `k`, else 0;
/// the single-relevant-item form with ideal value 1.
pub fn ndcg_at_k(ranked: &[EntityId], target: EntityId, k: usize) -> Result<f64, EvalError> {
    let rank = rank_of(ranked, target)?;
    if rank <= k {
        Ok(1.0 / ((rank as f64) + 1.0).log2())
    } else {
        Ok(0.0)
    }
}

fn rank_of(ranked: &[EntityId], target: EntityId) -> Result<usize, EvalError> {
    ranked
        .iter()
        .position(|&e| e == target)
        .map(|p| p + 1)
        .ok_or(EvalError::TargetMissing(target))
}

/// Sort candidates by score descending, ties broken by lower entity id.
pub fn rank_candidates(candidates: &[EntityId], scores: &[f64]) -> Vec<EntityId> {
    assert_eq!(candidates.len(), scores.len());
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(candidates[a].cmp(&candidates[b]))
    });
    order.into_iter().map(|i| candidates[i]).collect()
}

/// Evaluation knobs. Negative sampling derives a per-patient stream from
/// `seed`, so results are independent of iteration order.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub n_negatives: usize,
    pub seed: u64,
    /// Rank against every non-interacted examination instead of sampling.
    pub full_catalog: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_negatives: 99,
            seed: 0,
            full_catalog: false,
        }
    }
}

/// Score, rank, and accumulate metrics over every test patient.
pub fn evaluate(scorer: &dyn Scorer, split: &Split, opts: &EvalOptions) -> MetricRecord {
    let by_id: BTreeMap<usize, &PatientRecord> = split
        .train
        .patients
        .iter()
        .map(|p| (p.patient_id, p))
        .collect();
    let vocab = &split.train.vocab;
    let mut hr5 = 0.0;
    let mut hr10 = 0.0;
    let mut ndcg5 = 0.0;
    let mut ndcg10 = 0.0;
    let mut ranks = Vec::with_capacity(split.test.len());
    let mut shortage_count = 0usize;

    for &(pid, target) in &split.test {
        let patient = by_id.get(&pid).expect("test patient present in train");
        let interacted = patient.interacted_exams(vocab);
        let (negatives, shortage) = if opts.full_catalog {
            let all: Vec<EntityId> = vocab
                .exam_ids()
                .filter(|e| *e != target && !interacted.contains(e))
                .collect();
            (all, false)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(pid as u64 + 1);
            sample_negatives_excluding(vocab, &interacted, target, opts.n_negatives, &mut rng)
        };
        if shortage {
            shortage_count += 1;
        }
        let mut candidates = negatives;
        candidates.push(target);
        candidates.sort();
        let scores = scorer.score(patient, &candidates);
        let ranked = rank_candidates(&candidates, &scores);
        let rank = rank_of(&ranked, target).expect("target is a candidate");
        hr5 += f64::from(u32::from(rank <= 5));
        hr10 += f64::from(u32::from(rank <= 10));
        ndcg5 += ndcg_at_k(&ranked, target, 5).unwrap();
        ndcg10 += ndcg_at_k(&ranked, target, 10).unwrap();
        ranks.push((pid, rank));
    }

    let n = ranks.len().max(1) as f64;
    MetricRecord {
        hr5: hr5 / n,
        hr10: hr10 / n,
        ndcg5: ndcg5 / n,
        ndcg10: ndcg10 / n,
        ranks,
        shortage_count,
    }
}

/// Frequency-of-interaction baseline: scores an examination by how often it
/// occurs in training sequences; unseen exams score zero.
pub struct PopularityScorer {
    counts: BTreeMap<EntityId, usize>,
}

pub fn popularity_baseline(train: &Dataset) -> PopularityScorer {
    let mut counts = BTreeMap::new();
    for p in &train.patients {
        for &e in &p.sequence {
            if train.vocab.is_exam(e) {
                *counts.entry(e).or_insert(0) += 1;
            }
        }
    }
    PopularityScorer { counts }
}

impl Scorer for PopularityScorer {
    fn score(&self, _patient: &PatientRecord, candidates: &[EntityId]) -> Vec<f64> {
        candidates
            .iter()
            .map(|e| self.counts.get(e).copied().unwrap_or(0) as f64)
            .collect()
    }
}
