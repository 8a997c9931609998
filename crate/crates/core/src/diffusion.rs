//! Task-gated diffusion denoiser over patient interaction rows.
//!
//! A linear noise scheduler fixes how much of each row survives at step t;
//! an MLP conditioned on a sinusoidal step embedding learns to predict the
//! clean row; training minimizes the reconstruction/denoise-matching bound,
//! scaled by a gate that backs off whenever the downstream recommendation
//! loss is already improving faster than its recent average.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::ehr::{Fnv, HeteroGraph};
use crate::nn::{Graph, ParamId, ParamStore, Var};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {field}: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("invalid argument: {0}")]
    Arg(String),
}

/// Noise schedule tables. `alpha_bar` and `beta` are 1-indexed via accessors;
/// `alpha_bar(0)` is defined as 1. The ramp values `1 - alpha_bar(t)` are the
/// primary table so the endpoints stay exactly `s * alpha_low` and
/// `s * alpha_up`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub t_max: usize,
    pub s: f64,
    pub alpha_low: f64,
    pub alpha_up: f64,
    noise_level: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta: Vec<f64>,
}

/// Linear ramp for the retained-signal tables:
/// `1 - alpha_bar(t) = s * (alpha_low + (t-1)/(T-1) * (alpha_up - alpha_low))`,
/// with the endpoints computed exactly.
pub fn make_schedule(
    s: f64,
    alpha_low: f64,
    alpha_up: f64,
    t_max: usize,
) -> Result<DiffusionSchedule, DiffusionError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(DiffusionError::Config {
            field: "s",
            msg: format!("{s} outside [0, 1]"),
        });
    }
    if !(alpha_low > 0.0 && alpha_low < alpha_up && alpha_up < 1.0) {
        return Err(DiffusionError::Config {
            field: "alpha_low/alpha_up",
            msg: format!("need 0 < alpha_low < alpha_up < 1, got ({alpha_low}, {alpha_up})"),
        });
    }
    if t_max < 2 {
        return Err(DiffusionError::Config {
            field: "T",
            msg: format!("{t_max} < 2"),
        });
    }
    if s * alpha_up >= 1.0 {
        return Err(DiffusionError::Config {
            field: "s",
            msg: format!("s * alpha_up = {} must stay below 1", s * alpha_up),
        });
    }
    let mut noise_level = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let noise = if t == 1 {
            s * alpha_low
        } else if t == t_max {
            s * alpha_up
        } else {
            s * (alpha_low + (t - 1) as f64 / (t_max - 1) as f64 * (alpha_up - alpha_low))
        };
        noise_level.push(noise);
    }
    let alpha_bar: Vec<f64> = noise_level.iter().map(|n| 1.0 - n).collect();
    let mut beta = Vec::with_capacity(t_max);
    let mut prev = 1.0;
    for &ab in &alpha_bar {
        beta.push(1.0 - ab / prev);
        prev = ab;
    }
    Ok(DiffusionSchedule {
        t_max,
        s,
        alpha_low,
        alpha_up,
        noise_level,
        alpha_bar,
        beta,
    })
}

impl DiffusionSchedule {
    /// `alpha_bar(t)` for `t` in `0..=T`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// The scheduled ramp value `1 - alpha_bar(t)` for `t` in `1..=T`,
    /// exactly as constructed.
    pub fn noise_level(&self, t: usize) -> f64 {
        self.noise_level[t - 1]
    }

    /// `beta(t)` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// Signal-to-noise ratio `alpha_bar / (1 - alpha_bar)` at step `t >= 1`.
    pub fn snr(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        ab / (1.0 - ab)
    }

    /// Stable identifier of the schedule, recorded in subgraph checkpoints.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv::new();
        h.push(self.t_max as u64);
        h.push(self.s.to_bits());
        h.push(self.alpha_low.to_bits());
        h.push(self.alpha_up.to_bits());
        h.finish()
    }
}

/// One forward corruption step straight from the closed form:
/// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise`.
pub fn forward_diffuse(
    x0: &Array2<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
    noise: &Array2<f64>,
) -> Result<Array2<f64>, DiffusionError> {
    if t < 1 || t > schedule.t_max {
        return Err(DiffusionError::Arg(format!(
            "t = {t} outside 1..={}",
            schedule.t_max
        )));
    }
    let ab = schedule.alpha_bar(t);
    Ok(x0 * ab.sqrt() + noise * (1.0 - ab).sqrt())
}

/// Anything that predicts the clean row from a corrupted row and its step.
pub trait Denoise {
    fn predict<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        x_t: &Array2<f64>,
        ts: &[usize],
    ) -> Var<'g>;
}

pub const STEP_EMBED_DIM: usize = 16;

/// Sinusoidal embedding of a diffusion step, parameter-free.
pub fn step_embedding(t: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let half = dim / 2;
    for i in 0..half {
        let freq = 1.0 / 10_000f64.powf(i as f64 / half as f64);
        out[2 * i] = (t as f64 * freq).sin();
        out[2 * i + 1] = (t as f64 * freq).cos();
    }
    out
}

/// Two-hidden-layer MLP over `[x_t || step_embedding(t)]` with tanh
/// nonlinearities, predicting the clean row.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    pub row_width: usize,
    pub hidden: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    w3: ParamId,
    b3: ParamId,
}

impl DenoiserNet {
    pub fn init<R: Rng>(store: &mut ParamStore, row_width: usize, rng: &mut R) -> Self {
        let hidden = row_width.clamp(64, 1024);
        let d_in = row_width + STEP_EMBED_DIM;
        let bound1 = 1.0 / (d_in as f64).sqrt();
        let bound2 = 1.0 / (hidden as f64).sqrt();
        Self {
            row_width,
            hidden,
            w1: store.add_uniform("denoiser.w1", d_in, hidden, bound1, rng),
            b1: store.add("denoiser.b1", Array2::zeros((1, hidden))),
            w2: store.add_uniform("denoiser.w2", hidden, hidden, bound2, rng),
            b2: store.add("denoiser.b2", Array2::zeros((1, hidden))),
            w3: store.add_uniform("denoiser.w3", hidden, row_width, bound2, rng),
            b3: store.add("denoiser.b3", Array2::zeros((1, row_width))),
        }
    }

    pub fn param_names() -> [&'static str; 6] {
        [
            "denoiser.w1",
            "denoiser.b1",
            "denoiser.w2",
            "denoiser.b2",
            "denoiser.w3",
            "denoiser.b3",
        ]
    }

    fn input_matrix(&self, x_t: &Array2<f64>, ts: &[usize]) -> Array2<f64> {
        assert_eq!(x_t.nrows(), ts.len());
        let mut input = Array2::zeros((x_t.nrows(), self.row_width + STEP_EMBED_DIM));
        for (r, &t) in ts.iter().enumerate() {
            for c in 0..self.row_width {
                input[[r, c]] = x_t[[r, c]];
            }
            for (c, v) in step_embedding(t, STEP_EMBED_DIM).into_iter().enumerate() {
                input[[r, self.row_width + c]] = v;
            }
        }
        input
    }
}

impl Denoise for DenoiserNet {
    fn predict<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        x_t: &Array2<f64>,
        ts: &[usize],
    ) -> Var<'g> {
        let input = g.constant(self.input_matrix(x_t, ts));
        let h1 = input
            .matmul(g.param(store, self.w1))
            .add_row_broadcast(g.param(store, self.b1))
            .tanh();
        let h2 = h1
            .matmul(g.param(store, self.w2))
            .add_row_broadcast(g.param(store, self.b2))
            .tanh();
        h2.matmul(g.param(store, self.w3))
            .add_row_broadcast(g.param(store, self.b3))
    }
}

/// Bound loss with explicit per-row steps and noise, on the tape.
/// Row weight is 1 at t = 1 and half the SNR difference at t >= 2;
/// the batch loss is the mean of weighted squared residuals.
pub fn elbo_loss_with<'g, D: Denoise>(
    g: &'g Graph,
    store: &ParamStore,
    denoiser: &D,
    x0: &Array2<f64>,
    schedule: &DiffusionSchedule,
    ts: &[usize],
    noise: &Array2<f64>,
) -> Var<'g> {
    let n = x0.nrows();
    assert!(n > 0, "batch must be nonempty");
    assert_eq!(ts.len(), n);
    let mut x_t = Array2::zeros(x0.dim());
    let mut weights = Array2::zeros((n, 1));
    for (r, &t) in ts.iter().enumerate() {
        let ab = schedule.alpha_bar(t);
        for c in 0..x0.ncols() {
            x_t[[r, c]] = ab.sqrt() * x0[[r, c]] + (1.0 - ab).sqrt() * noise[[r, c]];
        }
        weights[[r, 0]] = if t == 1 {
            1.0
        } else {
            0.5 * (schedule.snr(t - 1) - schedule.snr(t))
        };
    }
    let pred = denoiser.predict(g, store, &x_t, ts);
    let res = pred.sub(g.constant(x0.clone()));
    res.mul(res)
        .mul_col_broadcast(g.constant(weights))
        .sum_all()
        .mul_scalar(1.0 / n as f64)
}

/// Bound loss with steps and noise sampled from `rng` (steps uniform on
/// `1..=T`, noise standard normal), built on the tape for training.
pub fn elbo_loss_graph<'g, D: Denoise, R: Rng>(
    g: &'g Graph,
    store: &ParamStore,
    denoiser: &D,
    x0: &Array2<f64>,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Var<'g> {
    let n = x0.nrows();
    assert!(n > 0, "batch must be nonempty");
    let ts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=schedule.t_max)).collect();
    let noise = Array2::from_shape_fn(x0.dim(), |_| rng.sample(StandardNormal));
    elbo_loss_with(g, store, denoiser, x0, schedule, &ts, &noise)
}

/// Value-level wrapper around [`elbo_loss_graph`].
pub fn elbo_loss<D: Denoise, R: Rng>(
    store: &ParamStore,
    denoiser: &D,
    x0: &Array2<f64>,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> f64 {
    let g = Graph::new();
    elbo_loss_graph(&g, store, denoiser, x0, schedule, rng).scalar()
}

/// Recommendation-loss history feeding the task gate.
#[derive(Debug, Clone)]
pub struct GateState {
    history: VecDeque<f64>,
    delta: usize,
    epsilon: f64,
}

impl GateState {
    pub fn new(delta: usize, epsilon: f64) -> Self {
        assert!(delta > 1, "gate window must exceed 1");
        assert!(epsilon > 0.0 && epsilon <= 1.0, "epsilon in (0, 1]");
        Self {
            history: VecDeque::with_capacity(delta + 2),
            delta,
            epsilon,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// The multiplier the gate would emit for `current_loss`, without
    /// recording it. Warm-up (fewer than `delta + 1` recorded losses)
    /// returns 1.
    pub fn multiplier(&self, current_loss: f64) -> f64 {
        if self.history.len() < self.delta + 1 {
            return 1.0;
        }
        let losses: Vec<f64> = self.history.iter().copied().collect();
        let recent = &losses[losses.len() - (self.delta + 1)..];
        let mean_change: f64 = recent
            .windows(2)
            .map(|w| w[0] - w[1])
            .sum::<f64>()
            / self.delta as f64;
        let change = *recent.last().unwrap() - current_loss;
        if change > mean_change {
            1.0
        } else {
            self.epsilon
        }
    }

    pub fn push(&mut self, loss: f64) {
        self.history.push_back(loss);
        while self.history.len() > self.delta + 1 {
            self.history.pop_front();
        }
    }
}

/// Task-adaptive gate: compares the current loss improvement against the
/// mean improvement over the window, then records the loss.
pub fn gate(state: &mut GateState, current_loss: f64) -> f64 {
    let m = state.multiplier(current_loss);
    state.push(current_loss);
    m
}

/// Gate multiplier applied to the bound loss.
pub fn gated_elbo<D: Denoise, R: Rng>(
    store: &ParamStore,
    denoiser: &D,
    x0: &Array2<f64>,
    schedule: &DiffusionSchedule,
    state: &mut GateState,
    current_rec_loss: f64,
    rng: &mut R,
) -> f64 {
    gate(state, current_rec_loss) * elbo_loss(store, denoiser, x0, schedule, rng)
}

/// Deterministic reverse refinement: from step `t_inf` down to 1, predict
/// the clean row and move to the posterior mean, injecting no noise.
/// Returns the final clean-row prediction; `t_inf = 0` returns the input.
pub fn reverse_denoise<D: Denoise>(
    store: &ParamStore,
    denoiser: &D,
    x_in: &Array2<f64>,
    t_inf: usize,
    schedule: &DiffusionSchedule,
) -> Result<Array2<f64>, DiffusionError> {
    if t_inf > schedule.t_max {
        return Err(DiffusionError::Arg(format!(
            "t_inf = {t_inf} exceeds T = {}",
            schedule.t_max
        )));
    }
    if t_inf == 0 {
        return Ok(x_in.clone());
    }
    let n = x_in.nrows();
    let mut x_t = x_in.clone();
    let mut x0_hat = x_in.clone();
    for t in (1..=t_inf).rev() {
        let g = Graph::new();
        let ts = vec![t; n];
        x0_hat = denoiser.predict(&g, store, &x_t, &ts).value();
        let (c0, ct) = posterior_mean_coefficients(schedule, t);
        x_t = &x0_hat * c0 + &x_t * ct;
    }
    Ok(x0_hat)
}

/// Coefficients `(on prediction, on current state)` of the Gaussian
/// posterior mean for the transition from step `t` to `t - 1`.
pub fn posterior_mean_coefficients(schedule: &DiffusionSchedule, t: usize) -> (f64, f64) {
    let ab_prev = schedule.alpha_bar(t - 1);
    let ab_t = schedule.alpha_bar(t);
    let beta_t = schedule.beta(t);
    let c0 = ab_prev.sqrt() * beta_t / (1.0 - ab_t);
    let ct = (1.0 - beta_t).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    (c0, ct)
}

/// Binary subgraph rebuilt from denoised scores: per patient row, exactly
/// the top-k scored columns survive (ties keep the lower column index).
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedSubgraph {
    pub edges: Array2<f64>,
    pub k: usize,
    pub scores: Array2<f64>,
}

pub fn rebuild_subgraph(scores: &Array2<f64>, k: usize, graph: &HeteroGraph) -> DenoisedSubgraph {
    assert!(k >= 1, "k must be >= 1");
    assert_eq!(scores.dim(), graph.a.dim(), "score matrix must match the graph");
    let (n, w) = scores.dim();
    let keep = k.min(w);
    let mut edges = Array2::zeros((n, w));
    let mut order: Vec<usize> = Vec::with_capacity(w);
    for r in 0..n {
        order.clear();
        order.extend(0..w);
        order.sort_by(|&a, &b| {
            scores[[r, b]]
                .partial_cmp(&scores[[r, a]])
                .unwrap()
                .then(a.cmp(&b))
        });
        for &c in order.iter().take(keep) {
            edges[[r, c]] = 1.0;
        }
    }
    DenoisedSubgraph {
        edges,
        k,
        scores: scores.clone(),
    }
}

impl DenoisedSubgraph {
    /// Demographics are facts, not noisy interactions: reset the age and
    /// gender column block to the original graph values after rebuilding.
    pub fn reimpose_demographics(&mut self, graph: &HeteroGraph, first_demo_col: usize) {
        let (n, w) = self.edges.dim();
        for r in 0..n {
            for c in first_demo_col..w {
                self.edges[[r, c]] = graph.a[[r, c]];
            }
        }
    }

    /// Sparse edge-list serialization with k and the schedule hash.
    pub fn to_edge_list(&self, patient_ids: &[usize], schedule_hash: u64) -> String {
        let mut out = format!("#subgraph-v1 k={} schedule={:016x}\n", self.k, schedule_hash);
        for (row, pid) in patient_ids.iter().enumerate() {
            for col in 0..self.edges.ncols() {
                if self.edges[[row, col]] != 0.0 {
                    out.push_str(&format!("{pid}\t{col}\n"));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{build_hetero_graph, generate_synthetic, GenConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct PerfectDenoiser {
        x0: Array2<f64>,
    }

    impl Denoise for PerfectDenoiser {
        fn predict<'g>(
            &self,
            g: &'g Graph,
            _store: &ParamStore,
            _x_t: &Array2<f64>,
            _ts: &[usize],
        ) -> Var<'g> {
            g.constant(self.x0.clone())
        }
    }

    struct FixedRowDenoiser {
        row: Array2<f64>,
    }

    impl Denoise for FixedRowDenoiser {
        fn predict<'g>(
            &self,
            g: &'g Graph,
            _store: &ParamStore,
            x_t: &Array2<f64>,
            _ts: &[usize],
        ) -> Var<'g> {
            let mut out = Array2::zeros(x_t.dim());
            for mut r in out.rows_mut() {
                r.assign(&self.row.row(0));
            }
            g.constant(out)
        }
    }

    #[test]
    fn schedule_rejects_equal_bounds() {
        assert!(make_schedule(1.0, 0.5, 0.5, 10).is_err());
        assert!(make_schedule(1.2, 0.1, 0.9, 10).is_err());
        assert!(make_schedule(0.5, 0.1, 0.9, 1).is_err());
        assert!(make_schedule(1.0, 0.1, 0.99999, 10).is_ok());
    }

    #[test]
    fn schedule_midpoint_arithmetic() {
        let s = make_schedule(0.5, 0.2, 0.8, 5).unwrap();
        assert!((1.0 - s.alpha_bar(3) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn schedule_two_step_tables() {
        let s = make_schedule(1.0, 0.1, 0.9, 2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.1).abs() < 1e-15);
        assert!((s.beta(1) - 0.1).abs() < 1e-15);
        assert!((s.beta(2) - (1.0 - 0.1 / 0.9)).abs() < 1e-15);
    }

    #[test]
    fn schedule_identity_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s: f64 = rng.gen_range(0.01..1.0);
            let lo: f64 = rng.gen_range(0.001..0.5);
            let hi: f64 = rng.gen_range(lo + 1e-3..0.999);
            if s * hi >= 1.0 {
                continue;
            }
            let t_max = rng.gen_range(2..200);
            let sched = make_schedule(s, lo, hi, t_max).unwrap();
            for t in 1..=t_max {
                let expect = s * (lo + (t - 1) as f64 / (t_max - 1) as f64 * (hi - lo));
                assert!((1.0 - sched.alpha_bar(t) - expect).abs() < 1e-12);
                assert!(sched.beta(t) >= 0.0 && sched.beta(t) < 1.0);
                if t > 1 {
                    assert!(sched.alpha_bar(t) < sched.alpha_bar(t - 1));
                }
            }
        }
    }

    #[test]
    fn forward_zero_noise_scales_input() {
        let sched = make_schedule(0.5, 0.2, 0.8, 5).unwrap();
        let x0 = Array2::from_elem((1, 4), 1.0);
        let zero = Array2::zeros((1, 4));
        let out = forward_diffuse(&x0, 3, &sched, &zero).unwrap();
        let expect = sched.alpha_bar(3).sqrt();
        for v in out.iter() {
            assert!((v - expect).abs() < 1e-15);
        }
        assert!(forward_diffuse(&x0, 0, &sched, &zero).is_err());
        assert!(forward_diffuse(&x0, 6, &sched, &zero).is_err());
    }

    #[test]
    fn forward_degenerate_schedule_is_identity() {
        let sched = make_schedule(0.0, 0.2, 0.8, 5).unwrap();
        let x0 = Array2::from_shape_fn((2, 3), |(r, c)| (r + c) as f64);
        let noise = Array2::from_elem((2, 3), 5.0);
        let out = forward_diffuse(&x0, 2, &sched, &noise).unwrap();
        assert_eq!(out, x0);
    }

    #[test]
    fn perfect_denoiser_gives_zero_loss() {
        let sched = make_schedule(0.5, 0.2, 0.8, 5).unwrap();
        let x0 = Array2::from_shape_fn((3, 4), |(r, c)| ((r * c) % 2) as f64);
        let store = ParamStore::new();
        let den = PerfectDenoiser { x0: x0.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            assert_eq!(elbo_loss(&store, &den, &x0, &sched, &mut rng), 0.0);
        }
    }

    #[test]
    fn elbo_weight_arithmetic_at_t2() {
        // residual norm^2 = 1 on a unit offset, weight = (9 - 1/9) / 2
        let sched = make_schedule(1.0, 0.1, 0.9, 2).unwrap();
        let x0 = Array2::zeros((1, 4));
        let mut off = Array2::zeros((1, 4));
        off[[0, 0]] = 1.0;
        let den = FixedRowDenoiser { row: off };
        let store = ParamStore::new();
        let g = Graph::new();
        let noise = Array2::zeros((1, 4));
        let loss = elbo_loss_with(&g, &store, &den, &x0, &sched, &[2], &noise).scalar();
        let expect = 0.5 * (0.9 / 0.1 - 0.1 / 0.9);
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
    }

    #[test]
    fn snr_weights_positive_across_long_schedule() {
        let sched = make_schedule(0.1, 0.001, 0.01, 1000).unwrap();
        for t in 2..=1000 {
            assert!(sched.snr(t - 1) - sched.snr(t) > 0.0, "weight at t={t}");
        }
    }

    #[test]
    fn gate_follows_the_comparison_rule() {
        let mut state = GateState::new(3, 0.2);
        // warm-up with one recorded loss
        assert_eq!(gate(&mut state, 10.0), 1.0);
        for l in [9.9, 9.7, 9.4] {
            state.push(l);
        }
        // deltas are [0.1, 0.2, 0.3], mean 0.2; change 9.4 - 9.15 = 0.25 > 0.2
        assert_eq!(state.multiplier(9.15), 1.0);
        // change 0.1 < 0.2
        assert_eq!(state.multiplier(9.3), 0.2);
    }

    #[test]
    fn gated_elbo_is_the_product() {
        let sched = make_schedule(0.5, 0.2, 0.8, 5).unwrap();
        let x0 = Array2::from_elem((2, 3), 1.0);
        let store = ParamStore::new();
        let den = FixedRowDenoiser {
            row: Array2::zeros((1, 3)),
        };
        let mut state = GateState::new(2, 0.2);
        for l in [5.0, 4.0, 3.5] {
            state.push(l);
        }
        // change 3.5 - 3.45 = 0.05 < mean 0.75 -> epsilon branch
        let plain = elbo_loss(&store, &den, &x0, &sched, &mut ChaCha8Rng::seed_from_u64(4));
        let gated = gated_elbo(
            &store,
            &den,
            &x0,
            &sched,
            &mut state,
            3.45,
            &mut ChaCha8Rng::seed_from_u64(4),
        );
        assert!((gated - 0.2 * plain).abs() < 1e-15);
    }

    #[test]
    fn epsilon_one_gate_never_changes_the_loss() {
        let sched = make_schedule(0.5, 0.2, 0.8, 5).unwrap();
        let x0 = Array2::from_elem((2, 3), 1.0);
        let store = ParamStore::new();
        let den = FixedRowDenoiser {
            row: Array2::zeros((1, 3)),
        };
        let mut state = GateState::new(2, 1.0);
        for l in [5.0, 1.0, 0.9, 0.89] {
            state.push(l);
        }
        let plain = elbo_loss(&store, &den, &x0, &sched, &mut ChaCha8Rng::seed_from_u64(4));
        let gated = gated_elbo(
            &store,
            &den,
            &x0,
            &sched,
            &mut state,
            0.888,
            &mut ChaCha8Rng::seed_from_u64(4),
        );
        assert_eq!(gated, plain);
    }

    #[test]
    fn reverse_zero_steps_is_identity() {
        let sched = make_schedule(0.5, 0.2, 0.8, 5).unwrap();
        let store = ParamStore::new();
        let den = FixedRowDenoiser {
            row: Array2::from_elem((1, 4), 0.7),
        };
        let x = Array2::from_shape_fn((2, 4), |(r, c)| (r + 2 * c) as f64);
        let out = reverse_denoise(&store, &den, &x, 0, &sched).unwrap();
        assert_eq!(out, x);
        assert!(reverse_denoise(&store, &den, &x, 6, &sched).is_err());
    }

    #[test]
    fn reverse_fixed_point_of_constant_denoiser() {
        let sched = make_schedule(0.5, 0.2, 0.8, 5).unwrap();
        let store = ParamStore::new();
        let row = Array2::from_elem((1, 4), 0.7);
        let den = FixedRowDenoiser { row: row.clone() };
        let x = Array2::zeros((3, 4));
        for t_inf in 1..=5 {
            let out = reverse_denoise(&store, &den, &x, t_inf, &sched).unwrap();
            for r in out.rows() {
                for (v, e) in r.iter().zip(row.row(0)) {
                    assert_eq!(v, e);
                }
            }
        }
    }

    #[test]
    fn posterior_mean_is_consistent_with_noise_free_forward() {
        // with prediction = 1 and state = sqrt(alpha_bar_t), the posterior
        // mean lands exactly on sqrt(alpha_bar_{t-1})
        let sched = make_schedule(0.7, 0.05, 0.9, 50).unwrap();
        for t in 1..=50 {
            let (c0, ct) = posterior_mean_coefficients(&sched, t);
            let mean = c0 * 1.0 + ct * sched.alpha_bar(t).sqrt();
            assert!(
                (mean - sched.alpha_bar(t - 1).sqrt()).abs() < 1e-12,
                "t={t}: {mean}"
            );
        }
    }

    #[test]
    fn rebuild_keeps_top_k_with_index_tie_break() {
        let ds = generate_synthetic(&GenConfig {
            n_patients: 1,
            ..GenConfig::default()
        })
        .unwrap();
        let graph = build_hetero_graph(&ds);
        let w = graph.n_cols();
        let mut scores = Array2::zeros((1, w));
        scores[[0, 0]] = 0.9;
        scores[[0, 1]] = 0.1;
        scores[[0, 2]] = 0.8;
        scores[[0, 3]] = 0.3;
        let sub = rebuild_subgraph(&scores, 2, &graph);
        assert_eq!(sub.edges.row(0).sum(), 2.0);
        assert_eq!(sub.edges[[0, 0]], 1.0);
        assert_eq!(sub.edges[[0, 2]], 1.0);

        // saturation
        let sub = rebuild_subgraph(&scores, w + 10, &graph);
        assert_eq!(sub.edges.row(0).sum(), w as f64);

        // all-equal scores fall back to the lowest indices
        let flat = Array2::zeros((1, w));
        let sub = rebuild_subgraph(&flat, 2, &graph);
        assert_eq!(sub.edges[[0, 0]], 1.0);
        assert_eq!(sub.edges[[0, 1]], 1.0);
    }

    #[test]
    fn edge_list_carries_k_and_schedule_hash() {
        let mut edges = Array2::zeros((2, 4));
        edges[[0, 1]] = 1.0;
        edges[[1, 3]] = 1.0;
        let sub = DenoisedSubgraph {
            scores: edges.clone(),
            edges,
            k: 7,
        };
        let text = sub.to_edge_list(&[10, 42], 0xabcd);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "#subgraph-v1 k=7 schedule=000000000000abcd");
        assert_eq!(lines[1], "10\t1");
        assert_eq!(lines[2], "42\t3");
    }

    #[test]
    fn rebuild_is_monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = generate_synthetic(&GenConfig {
            n_patients: 4,
            ..GenConfig::default()
        })
        .unwrap();
        let graph = build_hetero_graph(&ds);
        let scores = Array2::from_shape_fn(graph.a.dim(), |_| rng.gen_range(-1.0..1.0));
        let mut prev = rebuild_subgraph(&scores, 1, &graph);
        for k in 2..20 {
            let next = rebuild_subgraph(&scores, k, &graph);
            for (p, n) in prev.edges.iter().zip(next.edges.iter()) {
                assert!(*n >= *p, "k={k} lost an edge");
            }
            prev = next;
        }
    }

    #[test]
    fn elbo_gradients_match_finite_differences_on_toy_matrix() {
        let sched = make_schedule(0.5, 0.1, 0.8, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let den = DenoiserNet::init(&mut store, 6, &mut rng);
        let x0 = Array2::from_shape_fn((4, 6), |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
        let ts = vec![1, 2, 4, 6];
        let noise = Array2::from_shape_fn((4, 6), |_| rng.sample(StandardNormal));

        let g = Graph::new();
        let loss = elbo_loss_with(&g, &store, &den, &x0, &sched, &ts, &noise);
        let grads = g.backward(loss, store.len());

        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let dim = store.get(id).dim();
            let an = grads.get(id).expect("gradient present").clone();
            // spot-check a handful of coordinates per parameter
            let mut rng2 = ChaCha8Rng::seed_from_u64(id.index() as u64);
            for _ in 0..5 {
                let r = rng2.gen_range(0..dim.0);
                let c = rng2.gen_range(0..dim.1);
                let eps = 1e-6;
                let orig = store.get(id)[[r, c]];
                store.get_mut(id)[[r, c]] = orig + eps;
                let g = Graph::new();
                let plus = elbo_loss_with(&g, &store, &den, &x0, &sched, &ts, &noise).scalar();
                store.get_mut(id)[[r, c]] = orig - eps;
                let g = Graph::new();
                let minus = elbo_loss_with(&g, &store, &den, &x0, &sched, &ts, &noise).scalar();
                store.get_mut(id)[[r, c]] = orig;
                let fd = (plus - minus) / (2.0 * eps);
                let denom = an[[r, c]].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (an[[r, c]] - fd).abs() / denom < 1e-4,
                    "param {} at ({r},{c}): {} vs {}",
                    store.name(id),
                    an[[r, c]],
                    fd
                );
            }
        }
    }

    #[test]
    fn forward_moments_match_the_marginal() {
        let sched = make_schedule(0.4, 0.05, 0.6, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x0 = Array2::from_elem((1, 2), 1.0);
        for &t in &[1usize, 7, 20] {
            let n = 10_000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let noise = Array2::from_shape_fn((1, 2), |_| rng.sample(StandardNormal));
                let out = forward_diffuse(&x0, t, &sched, &noise).unwrap();
                sum += out[[0, 0]];
                sumsq += out[[0, 0]] * out[[0, 0]];
            }
            let mean = sum / n as f64;
            let var = sumsq / n as f64 - mean * mean;
            let ab = sched.alpha_bar(t);
            let se_mean = ((1.0 - ab) / n as f64).sqrt();
            let se_var = (1.0 - ab) * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((mean - ab.sqrt()).abs() < 3.0 * se_mean, "mean at t={t}");
            assert!((var - (1.0 - ab)).abs() < 3.0 * se_var, "variance at t={t}");
        }
    }
}
