//! Two-stage training loop with recommendation-loss feedback.
//!
//! Each outer round first trains the diffusion denoiser on the interaction
//! graph (gated by the previous round's recommendation-loss trend), rebuilds
//! the denoised subgraph, filters sequences through it, then trains the
//! encoders and fusion on ranking instances. Stage-two epoch losses feed the
//! gate that scales the next round's diffusion loss. The checkpoint kept is
//! the best by validation HR@10, where validation holds out each patient's
//! second-to-last examination.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use model::{
    compute_espa, espa_graph, filter_tokens, patient_logits, ModelScorer, ModelState,
};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffusion::{
    elbo_loss_graph, gate, make_schedule, rebuild_subgraph, reverse_denoise, DenoisedSubgraph,
    DiffusionError, DiffusionSchedule, GateState,
};
use crate::ehr::{
    build_hetero_graph, leave_one_out_split, sample_negatives_excluding, update_sequences,
    DataError, Dataset, EntityId, HeteroGraph,
};
use crate::evaluation::{evaluate, EvalOptions, MetricRecord};
use crate::fusion::l2_penalty_graph;
use crate::kansformer::truncate_to_recent;
use crate::nn::{Adam, Graph};
use crate::rgat::EdgeList;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {key}: {msg}")]
    Config { key: String, msg: String },
    #[error("non-finite loss in round {round} stage {stage} epoch {epoch}")]
    NonFinite {
        round: usize,
        stage: u8,
        epoch: usize,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One logged optimization epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub round: usize,
    pub stage: u8,
    pub epoch: usize,
    pub loss: f64,
    pub gate: f64,
}

pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("round,stage,epoch,loss,gate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.round, r.stage, r.epoch, r.loss, r.gate
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curve: Vec<CurveRow>,
    pub warnings: Vec<String>,
    pub best_round: usize,
    pub best_epoch: usize,
    pub best_val: MetricRecord,
}

/// Stage one: gated bound minimization over the interaction rows, then a
/// deterministic reverse pass and top-k rebuild. With zero epochs the
/// untrained denoiser still produces a subgraph.
#[allow(clippy::too_many_arguments)]
pub fn train_stage1(
    model: &mut ModelState,
    graph: &HeteroGraph,
    schedule: &DiffusionSchedule,
    cfg: &RunConfig,
    multiplier: f64,
    opt: &mut Adam,
    rng: &mut ChaCha8Rng,
    round: usize,
) -> Result<(Vec<f64>, DenoisedSubgraph), TrainError> {
    let n = graph.n_patients();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut x0 = Array2::zeros((chunk.len(), graph.n_cols()));
            for (i, &row) in chunk.iter().enumerate() {
                x0.row_mut(i).assign(&graph.a.row(row));
            }
            let g = Graph::new();
            let loss = elbo_loss_graph(&g, &model.store, &model.denoiser, &x0, schedule, rng)
                .mul_scalar(multiplier);
            let value = loss.scalar();
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    round,
                    stage: 1,
                    epoch,
                });
            }
            let grads = g.backward(loss, model.store.len());
            opt.step(&mut model.store, &grads);
            weighted += value * chunk.len() as f64;
        }
        losses.push(weighted / n as f64);
    }
    let scores = reverse_denoise(&model.store, &model.denoiser, &graph.a, cfg.t_inf, schedule)?;
    let mut subgraph = rebuild_subgraph(&scores, cfg.rebuild_k, graph);
    subgraph.reimpose_demographics(graph, graph.first_demo_col());
    Ok((losses, subgraph))
}

/// One ranking instance: the patient's most recent examination in the
/// working sequence is the positive, everything before it is the input.
fn build_instance(
    working: &Dataset,
    idx: usize,
    max_len: usize,
) -> Option<(Vec<EntityId>, EntityId)> {
    let p = &working.patients[idx];
    let pos = p.sequence.iter().rposition(|&e| working.vocab.is_exam(e))?;
    if pos == 0 {
        return None;
    }
    let prefix = &p.sequence[..pos];
    let idxs: Vec<usize> = prefix.iter().map(|e| e.idx()).collect();
    let tokens = truncate_to_recent(&idxs, max_len)
        .into_iter()
        .map(EntityId)
        .collect();
    Some((tokens, p.sequence[pos]))
}

/// Stage two: ranking-loss epochs over the denoise-filtered sequences.
/// `on_epoch` observes the model after every epoch (validation and gate
/// feedback hook).
///
/// Instance assembly (shuffle order and negative draws) restarts from a
/// round-derived stream every epoch, so with frozen parameters the epoch
/// loss is exactly constant; the caller's rng only drives dropout.
#[allow(clippy::too_many_arguments)]
pub fn train_stage2<F>(
    model: &mut ModelState,
    cfg: &RunConfig,
    working: &Dataset,
    edges: &EdgeList,
    opt: &mut Adam,
    rng: &mut ChaCha8Rng,
    round: usize,
    mut on_epoch: F,
) -> Result<Vec<f64>, TrainError>
where
    F: FnMut(&ModelState, usize, f64),
{
    let n = working.patients.len();
    let reg_ids = model.stage2_param_ids();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut inst_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        inst_rng.set_stream(100 + round as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut inst_rng);
        let mut total_loss = 0.0;
        let mut total_inst = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let masks = if cfg.use_rgat && cfg.dropout > 0.0 {
                let keep = 1.0 - cfg.dropout;
                (0..cfg.rgat_layers)
                    .map(|_| {
                        Some(Array2::from_shape_fn(
                            (model.rgat.n_nodes(), cfg.embed_dim),
                            |_| {
                                if rng.gen_bool(keep) {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            },
                        ))
                    })
                    .collect()
            } else {
                vec![]
            };
            let g = Graph::new();
            let espa = espa_graph(&g, model, cfg, edges, masks);
            let mut batch_total: Option<crate::nn::Var> = None;
            let mut n_inst = 0usize;
            for &idx in chunk {
                let Some((tokens, target)) = build_instance(working, idx, cfg.max_len) else {
                    continue;
                };
                let interacted = working.patients[idx].interacted_exams(&working.vocab);
                let (negatives, _) = sample_negatives_excluding(
                    &working.vocab,
                    &interacted,
                    target,
                    cfg.train_negatives,
                    &mut inst_rng,
                );
                let mut candidates = vec![target];
                candidates.extend(negatives);
                let mut labels = Array2::zeros((1, candidates.len()));
                labels[[0, 0]] = 1.0;
                let logits = patient_logits(&g, model, cfg, espa, idx, &tokens, &candidates);
                let bce = logits.bce_with_logits_sum(labels);
                batch_total = Some(match batch_total {
                    None => bce,
                    Some(t) => t.add(bce),
                });
                n_inst += 1;
            }
            let Some(total) = batch_total else { continue };
            let mut loss = total.mul_scalar(1.0 / n_inst as f64);
            if let Some(reg) = l2_penalty_graph(&g, &model.store, &reg_ids, cfg.l2_lambda) {
                loss = loss.add(reg);
            }
            let value = loss.scalar();
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    round,
                    stage: 2,
                    epoch,
                });
            }
            let grads = g.backward(loss, model.store.len());
            opt.step(&mut model.store, &grads);
            total_loss += value * n_inst as f64;
            total_inst += n_inst;
        }
        let epoch_loss = if total_inst == 0 {
            0.0
        } else {
            total_loss / total_inst as f64
        };
        losses.push(epoch_loss);
        on_epoch(model, epoch, epoch_loss);
    }
    Ok(losses)
}

struct BestSnapshot {
    hr10: f64,
    round: usize,
    epoch: usize,
    metrics: MetricRecord,
    params: Vec<(String, Array2<f64>)>,
    subgraph: DenoisedSubgraph,
}

/// The raw interaction matrix reused as the subgraph (diffusion ablation).
fn raw_subgraph(graph: &HeteroGraph, k: usize) -> DenoisedSubgraph {
    DenoisedSubgraph {
        edges: graph.a.clone(),
        k,
        scores: graph.a.clone(),
    }
}

/// Validation seed derived from the run seed; fixed across epochs so the
/// checkpoint selection compares like with like.
fn validation_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_0fe7_a100
}

/// Full training procedure: outer rounds of stage one (denoise), sequence
/// update, and stage two (ranking), with gate feedback across rounds.
/// Deterministic for a fixed seed.
pub fn train(dataset: &Dataset, cfg: &RunConfig) -> Result<(Checkpoint, TrainReport), TrainError> {
    let warnings = cfg.validate()?;
    let outer = leave_one_out_split(dataset);
    let inner = leave_one_out_split(&outer.train);
    if inner.train.patients.is_empty() {
        return Err(TrainError::Invalid(
            "no trainable patients after splitting".into(),
        ));
    }
    let graph = build_hetero_graph(&inner.train);
    let vocab = inner.train.vocab.clone();
    let schedule = make_schedule(cfg.noise_scale, cfg.alpha_low, cfg.alpha_up, cfg.diff_steps)?;

    let mut model = ModelState::init(cfg, graph.n_patients(), graph.n_cols(), cfg.seed);
    let mut opt1 = Adam::new(cfg.learning_rate, model.store.len());
    let mut opt2 = Adam::new(cfg.learning_rate, model.store.len());
    let gate_epsilon = if cfg.use_task_adaptive {
        cfg.gate_epsilon
    } else {
        1.0
    };
    let mut gate_state = GateState::new(cfg.gate_window, gate_epsilon);
    let mut rng1 = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng1.set_stream(2);
    let mut rng2 = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng2.set_stream(3);
    let mut reset_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    reset_rng.set_stream(4);

    let patient_ids: Vec<usize> = inner.train.patients.iter().map(|p| p.patient_id).collect();
    let val_opts = EvalOptions {
        n_negatives: cfg.eval_negatives,
        seed: validation_seed(cfg.seed),
        full_catalog: false,
    };

    let mut curve: Vec<CurveRow> = Vec::new();
    let mut best: Option<BestSnapshot> = None;
    let mut multiplier = 1.0;

    for round in 1..=cfg.rounds {
        let subgraph = if cfg.use_diffusion {
            if cfg.stage1_reset && round > 1 {
                model.reset_denoiser(&mut reset_rng);
                opt1 = Adam::new(cfg.learning_rate, model.store.len());
            }
            let (losses, sub) = train_stage1(
                &mut model, &graph, &schedule, cfg, multiplier, &mut opt1, &mut rng1, round,
            )?;
            for (e, l) in losses.iter().enumerate() {
                curve.push(CurveRow {
                    round,
                    stage: 1,
                    epoch: e + 1,
                    loss: *l,
                    gate: multiplier,
                });
            }
            sub
        } else {
            raw_subgraph(&graph, cfg.rebuild_k)
        };

        let working = update_sequences(&inner.train, &subgraph);
        let edges = EdgeList::from_subgraph(&subgraph, &vocab, graph.n_patients());

        let gate_state_ref = &mut gate_state;
        let multiplier_ref = &mut multiplier;
        let curve_ref = &mut curve;
        let best_ref = &mut best;
        train_stage2(
            &mut model,
            cfg,
            &working,
            &edges,
            &mut opt2,
            &mut rng2,
            round,
            |m, epoch, loss| {
                let g = gate(gate_state_ref, loss);
                *multiplier_ref = g;
                curve_ref.push(CurveRow {
                    round,
                    stage: 2,
                    epoch,
                    loss,
                    gate: g,
                });
                let scorer = ModelScorer::new(m, cfg, &subgraph, &patient_ids, &vocab);
                let metrics = evaluate(&scorer, &inner, &val_opts);
                let better = best_ref.as_ref().is_none_or(|b| metrics.hr10 > b.hr10);
                if better {
                    *best_ref = Some(BestSnapshot {
                        hr10: metrics.hr10,
                        round,
                        epoch,
                        metrics,
                        params: m
                            .store
                            .iter()
                            .map(|(n, v)| (n.to_string(), v.clone()))
                            .collect(),
                        subgraph: subgraph.clone(),
                    });
                }
            },
        )?;
        // with zero stage-two epochs, still keep something restorable
        if best.is_none() {
            best = Some(BestSnapshot {
                hr10: 0.0,
                round,
                epoch: 0,
                metrics: MetricRecord {
                    hr5: 0.0,
                    hr10: 0.0,
                    ndcg5: 0.0,
                    ndcg10: 0.0,
                    ranks: vec![],
                    shortage_count: 0,
                },
                params: model
                    .store
                    .iter()
                    .map(|(n, v)| (n.to_string(), v.clone()))
                    .collect(),
                subgraph: subgraph.clone(),
            });
        }
    }

    let best = best.expect("at least one snapshot");
    let report = TrainReport {
        curve,
        warnings,
        best_round: best.round,
        best_epoch: best.epoch,
        best_val: best.metrics.clone(),
    };
    let ckpt = Checkpoint {
        config_text: cfg.to_text(),
        config_hash: cfg.hash(),
        round: best.round,
        epoch: best.epoch,
        metrics: best.metrics,
        subgraph: best.subgraph,
        schedule_hash: schedule.hash(),
        patient_ids,
        params: best.params,
    };
    Ok((ckpt, report))
}

/// Rebuild a model from archived parameter blocks.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(ModelState, RunConfig), TrainError> {
    let cfg = RunConfig::from_text(&ckpt.config_text)?;
    let n_patients = ckpt.patient_ids.len();
    let n_cols = ckpt.subgraph.edges.ncols();
    let mut model = ModelState::init(&cfg, n_patients, n_cols, cfg.seed);
    if ckpt.params.len() != model.store.len() {
        return Err(TrainError::Checkpoint(format!(
            "expected {} parameter blocks, found {}",
            model.store.len(),
            ckpt.params.len()
        )));
    }
    for (name, value) in &ckpt.params {
        let id = model.store.id_of(name).ok_or_else(|| {
            TrainError::Checkpoint(format!("unknown parameter block {name:?}"))
        })?;
        if model.store.get(id).dim() != value.dim() {
            return Err(TrainError::Checkpoint(format!(
                "parameter {name:?} has shape {:?}, expected {:?}",
                value.dim(),
                model.store.get(id).dim()
            )));
        }
        *model.store.get_mut(id) = value.clone();
    }
    Ok((model, cfg))
}

/// Leave-one-out evaluation of a checkpoint on a dataset.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    full_catalog: bool,
) -> Result<(MetricRecord, RunConfig), TrainError> {
    let (model, cfg) = model_from_checkpoint(ckpt)?;
    if dataset.vocab.total() != model.n_cols {
        return Err(TrainError::Invalid(format!(
            "dataset has {} entity columns but the checkpoint was trained with {}",
            dataset.vocab.total(),
            model.n_cols
        )));
    }
    let split = leave_one_out_split(dataset);
    let scorer = ModelScorer::new(&model, &cfg, &ckpt.subgraph, &ckpt.patient_ids, &dataset.vocab);
    let opts = EvalOptions {
        n_negatives: cfg.eval_negatives,
        seed: validation_seed(cfg.seed) ^ 0x7e57,
        full_catalog,
    };
    Ok((evaluate(&scorer, &split, &opts), cfg))
}
