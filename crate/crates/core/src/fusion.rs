//! Cross-attention fusion of spatial and temporal features, inner-product
//! scoring, and the regularized ranking loss.
//!
//! The default direction uses the patient's spatial embedding as the query
//! over the full temporal output sequence: with a single pooled key the
//! softmax collapses to 1 and the query would be ignored, so the sequence
//! form keeps the fusion informative. The literal pooled form and the
//! reversed query direction remain available as configuration variants.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::nn::{Graph, ParamId, ParamStore, Var};

/// Which features drive the fusion attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Spatial query over the temporal sequence (default).
    SpatialQuery,
    /// Pooled temporal query over the sequence items' spatial embeddings.
    TemporalQuery,
    /// Plain linear map over the concatenated features.
    Linear,
    /// Spatial query over the single pooled temporal vector.
    PooledKv,
}

impl FusionMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spatial_query" => Some(Self::SpatialQuery),
            "temporal_query" => Some(Self::TemporalQuery),
            "linear" => Some(Self::Linear),
            "pooled" => Some(Self::PooledKv),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SpatialQuery => "spatial_query",
            Self::TemporalQuery => "temporal_query",
            Self::Linear => "linear",
            Self::PooledKv => "pooled",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    /// Used only by the linear variant.
    pub linear: ParamId,
    pub dim: usize,
}

impl FusionParams {
    pub fn init<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            wq: store.add_uniform("fusion.wq", dim, dim, bound, rng),
            wk: store.add_uniform("fusion.wk", dim, dim, bound, rng),
            wv: store.add_uniform("fusion.wv", dim, dim, bound, rng),
            linear: store.add_uniform("fusion.linear", 2 * dim, dim, bound, rng),
            dim,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.wq, self.wk, self.wv, self.linear]
    }
}

/// Fuse on the tape. `spa_seq` and `tem_seq` are the per-token spatial
/// embeddings and the temporal encoder output over the same tokens.
#[allow(clippy::too_many_arguments)]
pub fn fuse_graph<'g>(
    g: &'g Graph,
    store: &ParamStore,
    params: &FusionParams,
    mode: FusionMode,
    e_spa_u: Var<'g>,
    spa_seq: Var<'g>,
    tem_seq: Var<'g>,
    e_tem: Var<'g>,
) -> Var<'g> {
    let scale = 1.0 / (params.dim as f64).sqrt();
    let attend = |q: Var<'g>, kv: Var<'g>| {
        let keys = kv.matmul(g.param(store, params.wk));
        let vals = kv.matmul(g.param(store, params.wv));
        q.matmul(g.param(store, params.wq))
            .matmul(keys.t())
            .mul_scalar(scale)
            .softmax_rows()
            .matmul(vals)
    };
    match mode {
        FusionMode::SpatialQuery => attend(e_spa_u, tem_seq),
        FusionMode::TemporalQuery => attend(e_tem, spa_seq),
        FusionMode::PooledKv => attend(e_spa_u, e_tem),
        FusionMode::Linear => {
            Var::concat_cols(&[e_spa_u, e_tem]).matmul(g.param(store, params.linear))
        }
    }
}

/// Default-direction fusion at value level: spatial query, temporal
/// sequence as keys and values.
pub fn fuse(
    store: &ParamStore,
    params: &FusionParams,
    e_spa_u: &Array1<f64>,
    temporal_sequence: &Array2<f64>,
) -> Array1<f64> {
    assert!(temporal_sequence.nrows() >= 1);
    let g = Graph::new();
    let spa = g.constant(e_spa_u.clone().insert_axis(ndarray::Axis(0)));
    let seq = g.constant(temporal_sequence.clone());
    let out = fuse_graph(
        &g,
        store,
        params,
        FusionMode::SpatialQuery,
        spa,
        seq,
        seq,
        spa,
    );
    out.value().row(0).to_owned()
}

/// Inner-product scores of one fused vector against candidate embeddings.
pub fn score(e_final: &Array1<f64>, candidate_embeddings: &Array2<f64>) -> Vec<f64> {
    assert_eq!(e_final.len(), candidate_embeddings.ncols());
    candidate_embeddings
        .rows()
        .into_iter()
        .map(|r| r.dot(e_final))
        .collect()
}

/// Scores on the tape: `(1 x d) x (m x d)^T`.
pub fn score_graph<'g>(e_final: Var<'g>, candidates: Var<'g>) -> Var<'g> {
    e_final.matmul(candidates.t())
}

/// Binary cross-entropy through a sigmoid link over the score vector, plus
/// an L2 penalty on the supplied parameters; mean over instances.
pub fn rec_loss(
    instances: &[(Array1<f64>, Array1<f64>)],
    lambda: f64,
    store: &ParamStore,
    reg_params: &[ParamId],
) -> f64 {
    assert!(!instances.is_empty());
    let g = Graph::new();
    let mut total: Option<Var> = None;
    for (scores, labels) in instances {
        let s = g.constant(scores.clone().insert_axis(ndarray::Axis(0)));
        let l = s.bce_with_logits_sum(labels.clone().insert_axis(ndarray::Axis(0)));
        total = Some(match total {
            None => l,
            Some(t) => t.add(l),
        });
    }
    let mut loss = total.unwrap().mul_scalar(1.0 / instances.len() as f64);
    if lambda != 0.0 {
        for &id in reg_params {
            loss = loss.add(g.param(store, id).sum_squares().mul_scalar(lambda));
        }
    }
    loss.scalar()
}

/// L2 penalty term on the tape, `lambda * sum ||theta||^2`.
pub fn l2_penalty_graph<'g>(
    g: &'g Graph,
    store: &ParamStore,
    reg_params: &[ParamId],
    lambda: f64,
) -> Option<Var<'g>> {
    if lambda == 0.0 || reg_params.is_empty() {
        return None;
    }
    let mut total: Option<Var<'g>> = None;
    for &id in reg_params {
        let sq = g.param(store, id).sum_squares();
        total = Some(match total {
            None => sq,
            Some(t) => t.add(sq),
        });
    }
    total.map(|t| t.mul_scalar(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(dim: usize, seed: u64) -> (ParamStore, FusionParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = FusionParams::init(&mut store, dim, &mut rng);
        (store, params)
    }

    fn identity_projections(store: &mut ParamStore, params: &FusionParams) {
        for id in [params.wq, params.wk, params.wv] {
            let d = params.dim;
            let mut eye = Array2::zeros((d, d));
            for i in 0..d {
                eye[[i, i]] = 1.0;
            }
            *store.get_mut(id) = eye;
        }
    }

    #[test]
    fn single_key_with_identity_projections_returns_the_temporal_vector() {
        let (mut store, params) = toy(3, 1);
        identity_projections(&mut store, &params);
        let e_spa = Array1::from_vec(vec![0.4, -0.2, 0.9]);
        let seq = Array2::from_shape_vec((1, 3), vec![0.7, 0.1, -0.5]).unwrap();
        let out = fuse(&store, &params, &e_spa, &seq);
        for c in 0..3 {
            assert!((out[c] - seq[[0, c]]).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_dominate_regardless_of_query() {
        let (store, params) = toy(3, 2);
        let row = [0.7, 0.1, -0.5];
        let seq =
            Array2::from_shape_vec((2, 3), row.iter().chain(row.iter()).copied().collect())
                .unwrap();
        let a = fuse(&store, &params, &Array1::from_vec(vec![1.0, 0.0, 0.0]), &seq);
        let b = fuse(&store, &params, &Array1::from_vec(vec![-2.0, 5.0, 1.0]), &seq);
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_matches_dense_attention_oracle() {
        let (store, params) = toy(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let e_spa = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let seq = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
        let got = fuse(&store, &params, &e_spa, &seq);

        let wq = store.get(params.wq);
        let wk = store.get(params.wk);
        let wv = store.get(params.wv);
        let q: Vec<f64> = (0..4)
            .map(|c| (0..4).map(|i| e_spa[i] * wq[[i, c]]).sum())
            .collect();
        let mut logits = [0.0; 4];
        for p in 0..4 {
            let mut k = vec![0.0; 4];
            for c in 0..4 {
                k[c] = (0..4).map(|i| seq[[p, i]] * wk[[i, c]]).sum();
            }
            logits[p] = q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / 2.0;
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for c in 0..4 {
            let mut acc = 0.0;
            for p in 0..4 {
                let v: f64 = (0..4).map(|i| seq[[p, i]] * wv[[i, c]]).sum();
                acc += exps[p] / z * v;
            }
            assert!((got[c] - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn fusion_attention_is_a_simplex() {
        let (store, params) = toy(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let g = Graph::new();
            let spa =
                g.constant(Array2::from_shape_fn((1, 4), |_| rng.gen_range(-2.0..2.0)));
            let seq = g.constant(Array2::from_shape_fn((5, 4), |_| rng.gen_range(-2.0..2.0)));
            let _ = fuse_graph(
                &g,
                &store,
                &params,
                FusionMode::SpatialQuery,
                spa,
                seq,
                seq,
                spa,
            );
            for s in g.softmax_row_sums() {
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn score_arithmetic() {
        let e = Array1::from_vec(vec![1.0, 0.0]);
        let items = Array2::from_shape_vec((2, 2), vec![0.5, 2.0, 0.0, 3.0]).unwrap();
        let s = score(&e, &items);
        assert_eq!(s[0], 0.5);
        assert_eq!(s[1], 0.0); // orthogonal
    }

    #[test]
    fn positive_scaling_preserves_argsort() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let items = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-1.0..1.0));
        let base = score(&e, &items);
        let scaled = score(&(&e * 3.5), &items);
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
            idx
        };
        assert_eq!(order(&base), order(&scaled));
    }

    #[test]
    fn rec_loss_arithmetic_at_even_odds() {
        // logits 0 -> sigmoid 0.5; one positive and one negative:
        // loss = -(ln 0.5 + ln 0.5) = 2 ln 2
        let store = ParamStore::new();
        let inst = vec![(
            Array1::from_vec(vec![0.0, 0.0]),
            Array1::from_vec(vec![1.0, 0.0]),
        )];
        let loss = rec_loss(&inst, 0.0, &store, &[]);
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn rec_loss_vanishes_at_perfect_separation() {
        let store = ParamStore::new();
        let inst = vec![(
            Array1::from_vec(vec![40.0, -40.0, -40.0]),
            Array1::from_vec(vec![1.0, 0.0, 0.0]),
        )];
        let loss = rec_loss(&inst, 0.0, &store, &[]);
        assert!(loss < 1e-12);
    }

    #[test]
    fn rec_loss_includes_the_l2_term() {
        let mut store = ParamStore::new();
        let w = store.add("w", Array2::from_elem((2, 2), 0.5));
        let inst = vec![(
            Array1::from_vec(vec![40.0, -40.0]),
            Array1::from_vec(vec![1.0, 0.0]),
        )];
        let loss = rec_loss(&inst, 0.1, &store, &[w]);
        assert!((loss - 0.1 * 4.0 * 0.25).abs() < 1e-9);
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        let (mut store, params) = toy(4, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e_spa = Array2::from_shape_fn((1, 4), |_| rng.gen_range(-1.0..1.0));
        let seq = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let labels = Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 0.0]).unwrap();
        let cands = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));

        let readout = |store: &ParamStore, mode: FusionMode| -> f64 {
            let g = Graph::new();
            let spa = g.constant(e_spa.clone());
            let sv = g.constant(seq.clone());
            let fused = fuse_graph(&g, store, &params, mode, spa, sv, sv, spa);
            let logits = score_graph(fused, g.constant(cands.clone()));
            logits.bce_with_logits_sum(labels.clone()).scalar()
        };

        for mode in [
            FusionMode::SpatialQuery,
            FusionMode::TemporalQuery,
            FusionMode::Linear,
            FusionMode::PooledKv,
        ] {
            let g = Graph::new();
            let spa = g.constant(e_spa.clone());
            let sv = g.constant(seq.clone());
            let fused = fuse_graph(&g, &store, &params, mode, spa, sv, sv, spa);
            let logits = score_graph(fused, g.constant(cands.clone()));
            let loss = logits.bce_with_logits_sum(labels.clone());
            let grads = g.backward(loss, store.len());

            for id in params.param_ids() {
                let Some(an) = grads.get(id) else { continue };
                let an = an.clone();
                let dim = store.get(id).dim();
                let mut worst = 0.0f64;
                for r in 0..dim.0 {
                    for c in 0..dim.1 {
                        let eps = 1e-6;
                        let orig = store.get(id)[[r, c]];
                        store.get_mut(id)[[r, c]] = orig + eps;
                        let plus = readout(&store, mode);
                        store.get_mut(id)[[r, c]] = orig - eps;
                        let minus = readout(&store, mode);
                        store.get_mut(id)[[r, c]] = orig;
                        let fd = (plus - minus) / (2.0 * eps);
                        let denom = an[[r, c]].abs().max(fd.abs()).max(1e-6);
                        worst = worst.max((an[[r, c]] - fd).abs() / denom);
                    }
                }
                assert!(
                    worst < 1e-4,
                    "{} rel err {worst} in {mode:?}",
                    store.name(id)
                );
            }
        }
    }
}
