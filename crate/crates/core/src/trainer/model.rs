//! Model assembly and the per-patient forward pass shared by training and
//! evaluation.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{DenoiserNet, DenoisedSubgraph};
use crate::ehr::{EntityId, EntityVocab, PatientRecord};
use crate::evaluation::Scorer;
use crate::fusion::{fuse_graph, score_graph, FusionParams};
use crate::kansformer::{
    kansformer_block_graph, truncate_to_recent, KansformerBlock,
};
use crate::nn::{Graph, ParamId, ParamStore, Var};
use crate::rgat::{spatial_encode, EdgeList, RgatParams};

use super::config::RunConfig;

/// Every learnable table in one place: node/relation/position embeddings,
/// the diffusion denoiser, the graph attention weight, the KAN blocks, and
/// the fusion projections.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub store: ParamStore,
    pub denoiser: DenoiserNet,
    pub rgat: RgatParams,
    pub pos_table: ParamId,
    pub blocks: Vec<KansformerBlock>,
    pub fusion: FusionParams,
    pub n_patients: usize,
    pub n_cols: usize,
}

impl ModelState {
    pub fn init(cfg: &RunConfig, n_patients: usize, n_cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut store = ParamStore::new();
        let denoiser = DenoiserNet::init(&mut store, n_cols, &mut rng);
        let rgat = RgatParams::init(&mut store, n_patients, n_cols, cfg.embed_dim, &mut rng);
        let bound = 1.0 / (cfg.embed_dim as f64).sqrt();
        let pos_table = store.add_uniform(
            "temporal.positions",
            cfg.max_len,
            cfg.embed_dim,
            bound,
            &mut rng,
        );
        let blocks = (0..cfg.num_blocks)
            .map(|b| {
                KansformerBlock::init(
                    &mut store,
                    &format!("temporal.block{b}"),
                    cfg.embed_dim,
                    cfg.num_heads,
                    2 * cfg.embed_dim,
                    &mut rng,
                )
            })
            .collect();
        let fusion = FusionParams::init(&mut store, cfg.embed_dim, &mut rng);
        Self {
            store,
            denoiser,
            rgat,
            pos_table,
            blocks,
            fusion,
            n_patients,
            n_cols,
        }
    }

    /// Parameters updated by the recommendation stage.
    pub fn stage2_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.rgat.embeddings,
            self.rgat.relations,
            self.rgat.w,
            self.pos_table,
        ];
        for b in &self.blocks {
            ids.extend(b.param_ids());
        }
        ids.extend(self.fusion.param_ids());
        ids
    }

    /// Fresh denoiser weights, used by the optional per-round reset.
    pub fn reset_denoiser<R: Rng>(&mut self, rng: &mut R) {
        let hidden = self.denoiser.hidden;
        let d_in = self.n_cols + crate::diffusion::STEP_EMBED_DIM;
        let bounds: [(usize, usize, f64); 6] = [
            (d_in, hidden, 1.0 / (d_in as f64).sqrt()),
            (1, hidden, 0.0),
            (hidden, hidden, 1.0 / (hidden as f64).sqrt()),
            (1, hidden, 0.0),
            (hidden, self.n_cols, 1.0 / (hidden as f64).sqrt()),
            (1, self.n_cols, 0.0),
        ];
        for (name, (rows, cols, bound)) in DenoiserNet::param_names().iter().zip(bounds) {
            let id = self.store.id_of(name).expect("denoiser param exists");
            let value = if bound == 0.0 {
                Array2::zeros((rows, cols))
            } else {
                Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
            };
            *self.store.get_mut(id) = value;
        }
    }
}

/// Spatial embeddings on the tape, honoring the encoder ablation.
pub fn espa_graph<'g>(
    g: &'g Graph,
    model: &ModelState,
    cfg: &RunConfig,
    edges: &EdgeList,
    dropout_masks: Vec<Option<Array2<f64>>>,
) -> Var<'g> {
    if cfg.use_rgat {
        spatial_encode(
            g,
            &model.store,
            &model.rgat,
            edges,
            cfg.rgat_layers,
            dropout_masks,
        )
    } else {
        g.param(&model.store, model.rgat.embeddings)
    }
}

/// Value-level spatial table (evaluation mode, no dropout).
pub fn compute_espa(model: &ModelState, cfg: &RunConfig, edges: &EdgeList) -> Array2<f64> {
    let g = Graph::new();
    espa_graph(&g, model, cfg, edges, vec![]).value()
}

/// Logits for one patient over candidate entities, on the tape.
///
/// `tokens` are the (already filtered and truncated) sequence entity ids;
/// `row` is the patient's node row.
pub fn patient_logits<'g>(
    g: &'g Graph,
    model: &ModelState,
    cfg: &RunConfig,
    espa: Var<'g>,
    row: usize,
    tokens: &[EntityId],
    candidates: &[EntityId],
) -> Var<'g> {
    assert!(!tokens.is_empty(), "temporal input must be nonempty");
    assert!(
        tokens.len() <= cfg.max_len,
        "sequence must be truncated to max_len before encoding"
    );
    let p = tokens.len();
    let token_nodes: Vec<usize> = tokens.iter().map(|e| model.rgat.entity_node(e.idx())).collect();
    let spa_seq = espa.index_select_rows(token_nodes);
    let pos = g
        .param(&model.store, model.pos_table)
        .index_select_rows((0..p).collect());
    let h0 = spa_seq.add(pos);

    let (tem_seq, e_tem) = if cfg.use_kansformer {
        let mut h = h0;
        for block in &model.blocks {
            h = kansformer_block_graph(g, &model.store, block, h);
        }
        let last = h.index_select_rows(vec![p - 1]);
        (h, last)
    } else {
        // temporal encoder ablated: mean pooling over the input sequence
        let mean_weights = g.constant(Array2::from_elem((1, p), 1.0 / p as f64));
        (h0, mean_weights.matmul(h0))
    };

    let e_spa_u = espa.index_select_rows(vec![row]);
    let e_final = fuse_graph(
        g,
        &model.store,
        &model.fusion,
        cfg.fusion_mode,
        e_spa_u,
        spa_seq,
        tem_seq,
        e_tem,
    );
    let cand_nodes: Vec<usize> = candidates
        .iter()
        .map(|e| model.rgat.entity_node(e.idx()))
        .collect();
    let cand_emb = espa.index_select_rows(cand_nodes);
    score_graph(e_final, cand_emb)
}

/// Apply the subgraph's edge filter to a raw sequence, mirroring the
/// sequence-update rule (most recent token survives an empty filter), then
/// truncate to the most recent `max_len` tokens.
pub fn filter_tokens(
    sequence: &[EntityId],
    subgraph_row: ndarray::ArrayView1<f64>,
    max_len: usize,
) -> Vec<EntityId> {
    let kept: Vec<EntityId> = sequence
        .iter()
        .copied()
        .filter(|e| subgraph_row[e.idx()] != 0.0)
        .collect();
    let kept = if kept.is_empty() {
        match sequence.last() {
            Some(&last) => vec![last],
            None => return Vec::new(),
        }
    } else {
        kept
    };
    let idx: Vec<usize> = kept.iter().map(|e| e.idx()).collect();
    truncate_to_recent(&idx, max_len)
        .into_iter()
        .map(EntityId)
        .collect()
}

/// Evaluation-time scorer: caches the spatial table once, then runs the
/// temporal/fusion path per patient with the model's current parameters.
pub struct ModelScorer<'a> {
    model: &'a ModelState,
    cfg: &'a RunConfig,
    subgraph: &'a DenoisedSubgraph,
    espa: Array2<f64>,
    row_of: BTreeMap<usize, usize>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(
        model: &'a ModelState,
        cfg: &'a RunConfig,
        subgraph: &'a DenoisedSubgraph,
        patient_ids: &[usize],
        vocab: &EntityVocab,
    ) -> Self {
        let edges = EdgeList::from_subgraph(subgraph, vocab, model.n_patients);
        let espa = compute_espa(model, cfg, &edges);
        let row_of = patient_ids
            .iter()
            .enumerate()
            .map(|(row, pid)| (*pid, row))
            .collect();
        Self {
            model,
            cfg,
            subgraph,
            espa,
            row_of,
        }
    }
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, patient: &PatientRecord, candidates: &[EntityId]) -> Vec<f64> {
        let Some(&row) = self.row_of.get(&patient.patient_id) else {
            // unseen patient: no representation, neutral scores
            return vec![0.0; candidates.len()];
        };
        let tokens = filter_tokens(
            &patient.sequence,
            self.subgraph.edges.row(row),
            self.cfg.max_len,
        );
        if tokens.is_empty() {
            return vec![0.0; candidates.len()];
        }
        let g = Graph::new();
        let espa = g.constant(self.espa.clone());
        let logits = patient_logits(&g, self.model, self.cfg, espa, row, &tokens, candidates);
        logits.value().remove_axis(Axis(0)).to_vec()
    }
}
