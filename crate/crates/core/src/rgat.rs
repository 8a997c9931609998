//! Relation-aware graph attention over the denoised subgraph.
//!
//! Nodes are patients followed by entity columns. Every patient-entity edge
//! is materialized in both directions with forward/inverse relation types,
//! so entities aggregate from patients as well. Attention logits condition
//! on a learned relation vector; per-layer output is
//! `Drop(Norm(x + sum_n alpha * x_n))`, and the spatial embedding is the sum
//! of all layer outputs.

use ndarray::Array2;
use rand::Rng;

use crate::diffusion::DenoisedSubgraph;
use crate::ehr::{EntityId, EntityVocab, RelationType, N_RELATION_TYPES};
use crate::nn::{Graph, ParamId, ParamStore, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const LN_EPS: f64 = 1e-6;

/// Learnable pieces of the spatial encoder. The attention weight and
/// relation table are shared across layers.
#[derive(Debug, Clone)]
pub struct RgatParams {
    /// Node table `x^0`, patients first then entity columns: `(n_nodes, d)`.
    pub embeddings: ParamId,
    /// Relation vectors, forward then inverse types: `(2 * n_relations, d)`.
    pub relations: ParamId,
    /// Attention weight applied to `[x_m || x_n]`: `(d, 2d)`.
    pub w: ParamId,
    pub dim: usize,
    pub n_patients: usize,
    pub n_cols: usize,
}

impl RgatParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        n_patients: usize,
        n_cols: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            embeddings: store.add_uniform("rgat.embeddings", n_patients + n_cols, dim, bound, rng),
            relations: store.add_uniform(
                "rgat.relations",
                2 * N_RELATION_TYPES,
                dim,
                bound,
                rng,
            ),
            w: store.add_uniform("rgat.w", dim, 2 * dim, bound, rng),
            dim,
            n_patients,
            n_cols,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_patients + self.n_cols
    }

    pub fn entity_node(&self, col: usize) -> usize {
        self.n_patients + col
    }
}

/// Directed edges grouped contiguously by aggregating node.
#[derive(Debug, Clone, Default)]
pub struct EdgeList {
    /// Aggregating node per edge (sorted ascending).
    pub dst: Vec<usize>,
    /// Neighbor supplying the message.
    pub src: Vec<usize>,
    /// Row into the relation table.
    pub rel: Vec<usize>,
    /// Segment offsets over the edge arrays, one segment per dst group.
    pub offsets: Vec<usize>,
}

impl EdgeList {
    /// Both directions of every subgraph edge: patients aggregate entities
    /// through forward relations, entities aggregate patients through the
    /// inverse types.
    pub fn from_subgraph(sub: &DenoisedSubgraph, vocab: &EntityVocab, n_patients: usize) -> Self {
        let mut triples: Vec<(usize, usize, usize)> = Vec::new();
        for u in 0..sub.edges.nrows() {
            for c in 0..sub.edges.ncols() {
                if sub.edges[[u, c]] != 0.0 {
                    let cat = vocab
                        .category_of(EntityId(c))
                        .expect("column within vocab");
                    let rel = RelationType::from_category(cat).index();
                    triples.push((u, n_patients + c, rel));
                    triples.push((n_patients + c, u, rel + N_RELATION_TYPES));
                }
            }
        }
        Self::from_triples(triples)
    }

    /// Build from explicit `(dst, src, rel)` triples.
    pub fn from_triples(mut triples: Vec<(usize, usize, usize)>) -> Self {
        triples.sort();
        let mut out = EdgeList::default();
        out.offsets.push(0);
        let mut current_dst = None;
        for (d, s, r) in triples {
            if current_dst != Some(d) {
                if current_dst.is_some() {
                    out.offsets.push(out.dst.len());
                }
                current_dst = Some(d);
            }
            out.dst.push(d);
            out.src.push(s);
            out.rel.push(r);
        }
        out.offsets.push(out.dst.len());
        if out.dst.is_empty() {
            out.offsets = vec![0, 0];
        }
        out
    }

    pub fn n_edges(&self) -> usize {
        self.dst.len()
    }
}

/// One propagation layer on the tape.
///
/// Nodes with no incoming edges receive a zero message, which reduces to
/// the residual-plus-normalize path.
pub fn rgat_layer<'g>(
    g: &'g Graph,
    store: &ParamStore,
    params: &RgatParams,
    edges: &EdgeList,
    x: Var<'g>,
    dropout_mask: Option<Array2<f64>>,
) -> Var<'g> {
    let n_nodes = params.n_nodes();
    let agg = if edges.n_edges() > 0 {
        let x_dst = x.index_select_rows(edges.dst.clone());
        let x_src = x.index_select_rows(edges.src.clone());
        let rel = g
            .param(store, params.relations)
            .index_select_rows(edges.rel.clone());
        let cat = Var::concat_cols(&[x_dst, x_src]);
        let w = g.param(store, params.w);
        let u = cat.matmul(w.t());
        let logits = rel.rows_dot(u).leaky_relu(LEAKY_SLOPE);
        let alpha = logits.segment_softmax(edges.offsets.clone());
        x_src
            .mul_col_broadcast(alpha)
            .scatter_add_rows(edges.dst.clone(), n_nodes)
    } else {
        g.constant(Array2::zeros((n_nodes, params.dim)))
    };
    x.add(agg).layernorm_rows(LN_EPS).dropout_mask(dropout_mask)
}

/// Run `l_layers` propagation layers and sum their outputs into the spatial
/// embedding table (the learnable `x^0` is excluded from the sum).
pub fn spatial_encode<'g>(
    g: &'g Graph,
    store: &ParamStore,
    params: &RgatParams,
    edges: &EdgeList,
    l_layers: usize,
    mut dropout_masks: Vec<Option<Array2<f64>>>,
) -> Var<'g> {
    assert!(l_layers >= 1, "at least one propagation layer is required");
    if dropout_masks.is_empty() {
        dropout_masks = vec![None; l_layers];
    }
    assert_eq!(dropout_masks.len(), l_layers);
    let mut x = g.param(store, params.embeddings);
    let mut total: Option<Var<'g>> = None;
    for mask in dropout_masks.into_iter() {
        x = rgat_layer(g, store, params, edges, x, mask);
        total = Some(match total {
            None => x,
            Some(t) => t.add(x),
        });
    }
    total.expect("l_layers >= 1")
}

/// Attention weights of one node over its neighborhood, as a plain vector.
/// `neighbors` pairs each neighbor node with its relation-table row.
pub fn attention_weights(
    node: usize,
    neighbors: &[(usize, usize)],
    embeddings: &Array2<f64>,
    relations: &Array2<f64>,
    w: &Array2<f64>,
) -> Vec<f64> {
    assert!(!neighbors.is_empty(), "neighborhood must be nonempty");
    let g = Graph::new();
    let emb = g.constant(embeddings.clone());
    let rel_table = g.constant(relations.clone());
    let x_dst = emb.index_select_rows(vec![node; neighbors.len()]);
    let x_src = emb.index_select_rows(neighbors.iter().map(|(n, _)| *n).collect());
    let rel = rel_table.index_select_rows(neighbors.iter().map(|(_, r)| *r).collect());
    let cat = Var::concat_cols(&[x_dst, x_src]);
    let u = cat.matmul(g.constant(w.clone()).t());
    let logits = rel.rows_dot(u).leaky_relu(LEAKY_SLOPE);
    let alpha = logits.segment_softmax(vec![0, neighbors.len()]);
    alpha.value().column(0).to_vec()
}
