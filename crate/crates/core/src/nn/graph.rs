use std::cell::RefCell;

use ndarray::{Array2, Axis};

use super::param::{ParamId, ParamStore};
use super::spline::SplineGrid;

/// Backward closure: `(grad_of_output, all_node_values, own_index) -> grads per parent`.
type BackFn = Box<dyn Fn(&Array2<f64>, &[Array2<f64>], usize) -> Vec<Array2<f64>>>;

/// A Wengert-list computation graph over `Array2<f64>` values.
///
/// Nodes are appended by op methods on [`Var`]; `backward` walks the list in
/// reverse, accumulating gradients into parameter leaves. Softmax ops record
/// their node index so tests can audit every attention row produced during a
/// forward pass.
pub struct Graph {
    values: RefCell<Vec<Array2<f64>>>,
    parents: RefCell<Vec<Vec<usize>>>,
    backs: RefCell<Vec<Option<BackFn>>>,
    param_of: RefCell<Vec<Option<ParamId>>>,
    softmax_nodes: RefCell<Vec<usize>>,
    segment_meta: RefCell<Vec<(usize, Vec<usize>)>>,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    g: &'g Graph,
    i: usize,
}

/// Per-parameter gradients produced by [`Graph::backward`].
pub struct Grads {
    by_param: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.by_param.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn iter_present(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.by_param
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            values: RefCell::new(Vec::new()),
            parents: RefCell::new(Vec::new()),
            backs: RefCell::new(Vec::new()),
            param_of: RefCell::new(Vec::new()),
            softmax_nodes: RefCell::new(Vec::new()),
            segment_meta: RefCell::new(Vec::new()),
        }
    }

    fn push(
        &self,
        value: Array2<f64>,
        parents: Vec<usize>,
        back: Option<BackFn>,
        param: Option<ParamId>,
    ) -> Var<'_> {
        let mut values = self.values.borrow_mut();
        let i = values.len();
        values.push(value);
        self.parents.borrow_mut().push(parents);
        self.backs.borrow_mut().push(back);
        self.param_of.borrow_mut().push(param);
        Var { g: self, i }
    }

    /// A leaf with no gradient.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, vec![], None, None)
    }

    /// A parameter leaf; gradients accumulate under its [`ParamId`].
    pub fn param<'g>(&'g self, store: &ParamStore, id: ParamId) -> Var<'g> {
        self.push(store.get(id).clone(), vec![], None, Some(id))
    }

    pub fn value(&self, v: Var) -> Array2<f64> {
        self.values.borrow()[v.i].clone()
    }

    pub fn len(&self) -> usize {
        self.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row sums of every row-softmax output created so far.
    pub fn softmax_row_sums(&self) -> Vec<f64> {
        let values = self.values.borrow();
        let mut sums = Vec::new();
        for &i in self.softmax_nodes.borrow().iter() {
            for row in values[i].rows() {
                sums.push(row.sum());
            }
        }
        for (node, offsets) in self.segment_meta.borrow().iter() {
            let col = values[*node].column(0);
            for w in offsets.windows(2) {
                if w[0] == w[1] {
                    continue;
                }
                sums.push(col.slice(ndarray::s![w[0]..w[1]]).sum());
            }
        }
        sums
    }

    /// Reverse pass from a scalar (1x1) root. Returns gradients for every
    /// parameter leaf reached from the root.
    pub fn backward(&self, root: Var, n_params: usize) -> Grads {
        let values = self.values.borrow();
        let parents = self.parents.borrow();
        let backs = self.backs.borrow();
        let param_of = self.param_of.borrow();

        assert_eq!(values[root.i].len(), 1, "backward root must be scalar");
        let n = values.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[root.i] = Some(Array2::ones((1, 1)));
        let mut by_param: Vec<Option<Array2<f64>>> = vec![None; n_params];

        for i in (0..=root.i).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(pid) = param_of[i] {
                match &mut by_param[pid.index()] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g.clone()),
                }
            }
            if let Some(back) = &backs[i] {
                let parent_grads = back(&g, &values, i);
                debug_assert_eq!(parent_grads.len(), parents[i].len());
                for (p, pg) in parents[i].iter().zip(parent_grads) {
                    debug_assert_eq!(values[*p].dim(), pg.dim(), "gradient shape mismatch");
                    match &mut grads[*p] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            }
        }
        Grads { by_param }
    }
}

fn elementwise<'g>(
    v: Var<'g>,
    f: impl Fn(f64) -> f64,
    // derivative as a function of (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var<'g> {
    let y = v.g.values.borrow()[v.i].mapv(&f);
    let pi = v.i;
    v.g.push(
        y,
        vec![pi],
        Some(Box::new(move |g, values, own| {
            let x = &values[pi];
            let y = &values[own];
            let mut dx = Array2::zeros(x.dim());
            ndarray::Zip::from(&mut dx)
                .and(g)
                .and(x)
                .and(y)
                .for_each(|d, &g, &x, &y| *d = g * df(x, y));
            vec![dx]
        })),
        None,
    )
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.g
    }

    pub fn value(&self) -> Array2<f64> {
        self.g.value(*self)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.g.values.borrow()[self.i].dim()
    }

    pub fn scalar(&self) -> f64 {
        let v = self.g.values.borrow();
        assert_eq!(v[self.i].len(), 1);
        v[self.i][[0, 0]]
    }

    pub fn matmul(self, rhs: Var<'g>) -> Var<'g> {
        let values = self.g.values.borrow();
        let y = values[self.i].dot(&values[rhs.i]);
        drop(values);
        let (a, b) = (self.i, rhs.i);
        self.g.push(
            y,
            vec![a, b],
            Some(Box::new(move |g, values, _| {
                vec![g.dot(&values[b].t()), values[a].t().dot(g)]
            })),
            None,
        )
    }

    pub fn t(self) -> Var<'g> {
        let y = self.g.values.borrow()[self.i].t().to_owned();
        self.g.push(
            y,
            vec![self.i],
            Some(Box::new(|g, _, _| vec![g.t().to_owned()])),
            None,
        )
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'g>) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            &values[self.i] + &values[rhs.i]
        };
        self.g.push(
            y,
            vec![self.i, rhs.i],
            Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])),
            None,
        )
    }

    /// `self` is `n x d`, `row` is `1 x d`, added to every row.
    pub fn add_row_broadcast(self, row: Var<'g>) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            &values[self.i] + &values[row.i].row(0)
        };
        self.g.push(
            y,
            vec![self.i, row.i],
            Some(Box::new(|g, _, _| {
                let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![g.clone(), db]
            })),
            None,
        )
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Var<'g>) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            &values[self.i] - &values[rhs.i]
        };
        self.g.push(
            y,
            vec![self.i, rhs.i],
            Some(Box::new(|g, _, _| vec![g.clone(), -g])),
            None,
        )
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'g>) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            &values[self.i] * &values[rhs.i]
        };
        let (a, b) = (self.i, rhs.i);
        self.g.push(
            y,
            vec![a, b],
            Some(Box::new(move |g, values, _| {
                vec![g * &values[b], g * &values[a]]
            })),
            None,
        )
    }

    pub fn mul_scalar(self, c: f64) -> Var<'g> {
        let y = &self.g.values.borrow()[self.i] * c;
        self.g.push(
            y,
            vec![self.i],
            Some(Box::new(move |g, _, _| vec![g * c])),
            None,
        )
    }

    /// Scale each row of `self` (`n x d`) by the matching entry of `col` (`n x 1`).
    pub fn mul_col_broadcast(self, col: Var<'g>) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            let a = &values[self.i];
            let c = &values[col.i];
            assert_eq!(c.ncols(), 1);
            let mut y = a.clone();
            for (mut row, &s) in y.rows_mut().into_iter().zip(c.column(0)) {
                row *= s;
            }
            y
        };
        let (ai, ci) = (self.i, col.i);
        self.g.push(
            y,
            vec![ai, ci],
            Some(Box::new(move |g, values, _| {
                let a = &values[ai];
                let c = &values[ci];
                let mut da = g.clone();
                for (mut row, &s) in da.rows_mut().into_iter().zip(c.column(0)) {
                    row *= s;
                }
                let dc_vec: Vec<f64> = g
                    .rows()
                    .into_iter()
                    .zip(a.rows())
                    .map(|(gr, ar)| gr.dot(&ar))
                    .collect();
                let dc = Array2::from_shape_vec((dc_vec.len(), 1), dc_vec).unwrap();
                vec![da, dc]
            })),
            None,
        )
    }

    /// Row-wise dot product of two `n x d` matrices, producing `n x 1`.
    pub fn rows_dot(self, rhs: Var<'g>) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            let a = &values[self.i];
            let b = &values[rhs.i];
            let y_vec: Vec<f64> = a
                .rows()
                .into_iter()
                .zip(b.rows())
                .map(|(ar, br)| ar.dot(&br))
                .collect();
            Array2::from_shape_vec((y_vec.len(), 1), y_vec).unwrap()
        };
        let (ai, bi) = (self.i, rhs.i);
        self.g.push(
            y,
            vec![ai, bi],
            Some(Box::new(move |g, values, _| {
                let mut da = values[bi].clone();
                let mut db = values[ai].clone();
                for ((mut ra, mut rb), &s) in da
                    .rows_mut()
                    .into_iter()
                    .zip(db.rows_mut())
                    .zip(g.column(0))
                {
                    ra *= s;
                    rb *= s;
                }
                vec![da, db]
            })),
            None,
        )
    }

    pub fn sum_all(self) -> Var<'g> {
        let (s, dim) = {
            let values = self.g.values.borrow();
            (values[self.i].sum(), values[self.i].dim())
        };
        self.g.push(
            Array2::from_elem((1, 1), s),
            vec![self.i],
            Some(Box::new(move |g, _, _| {
                vec![Array2::from_elem(dim, g[[0, 0]])]
            })),
            None,
        )
    }

    pub fn mean_all(self) -> Var<'g> {
        let n = {
            let values = self.g.values.borrow();
            values[self.i].len() as f64
        };
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Frobenius norm squared, as a scalar node.
    pub fn sum_squares(self) -> Var<'g> {
        let s = {
            let values = self.g.values.borrow();
            values[self.i].iter().map(|x| x * x).sum()
        };
        let ai = self.i;
        self.g.push(
            Array2::from_elem((1, 1), s),
            vec![ai],
            Some(Box::new(move |g, values, _| {
                vec![&values[ai] * (2.0 * g[[0, 0]])]
            })),
            None,
        )
    }

    pub fn tanh(self) -> Var<'g> {
        elementwise(self, |x| x.tanh(), |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'g> {
        elementwise(self, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        elementwise(
            self,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn silu(self) -> Var<'g> {
        elementwise(
            self,
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// tanh-form GELU; the derivative matches the same approximation.
    pub fn gelu(self) -> Var<'g> {
        elementwise(self, gelu, |x, _| gelu_prime(x))
    }

    /// Row-wise softmax; rows sum to 1. Recorded for attention audits.
    pub fn softmax_rows(self) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            let mut y = values[self.i].clone();
            for mut row in y.rows_mut() {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row /= s;
            }
            y
        };
        let out = self.g.push(
            y,
            vec![self.i],
            Some(Box::new(move |g, values, own| {
                let y = &values[own];
                let mut dx = Array2::zeros(y.dim());
                for ((mut drow, grow), yrow) in
                    dx.rows_mut().into_iter().zip(g.rows()).zip(y.rows())
                {
                    let dot = grow.dot(&yrow);
                    for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = yv * (gv - dot);
                    }
                }
                vec![dx]
            })),
            None,
        );
        self.g.softmax_nodes.borrow_mut().push(out.i);
        out
    }

    /// Softmax over contiguous segments of a column vector (`n x 1`).
    /// `offsets` has one more entry than there are segments.
    pub fn segment_softmax(self, offsets: Vec<usize>) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            let x = &values[self.i];
            assert_eq!(x.ncols(), 1);
            assert_eq!(*offsets.last().unwrap(), x.nrows());
            let mut y = x.clone();
            for w in offsets.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                if lo == hi {
                    continue;
                }
                let mut seg = y.slice_mut(ndarray::s![lo..hi, ..]);
                let m = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                seg.mapv_inplace(|v| (v - m).exp());
                let s = seg.sum();
                seg /= s;
            }
            y
        };
        let offs = offsets.clone();
        let out = self.g.push(
            y,
            vec![self.i],
            Some(Box::new(move |g, values, own| {
                let y = &values[own];
                let mut dx = Array2::zeros(y.dim());
                for w in offs.windows(2) {
                    let (lo, hi) = (w[0], w[1]);
                    let dot: f64 = (lo..hi).map(|r| g[[r, 0]] * y[[r, 0]]).sum();
                    for r in lo..hi {
                        dx[[r, 0]] = y[[r, 0]] * (g[[r, 0]] - dot);
                    }
                }
                vec![dx]
            })),
            None,
        );
        self.g.segment_meta.borrow_mut().push((out.i, offsets));
        out
    }

    /// Per-row layer normalization (no affine parameters).
    pub fn layernorm_rows(self, eps: f64) -> Var<'g> {
        let (y, inv_std) = {
            let values = self.g.values.borrow();
            let x = &values[self.i];
            let d = x.ncols() as f64;
            let mut y = x.clone();
            let mut inv_std = Vec::with_capacity(x.nrows());
            for mut row in y.rows_mut() {
                let mean = row.sum() / d;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                let istd = 1.0 / (var + eps).sqrt();
                inv_std.push(istd);
                row.mapv_inplace(|v| (v - mean) * istd);
            }
            (y, inv_std)
        };
        self.g.push(
            y,
            vec![self.i],
            Some(Box::new(move |g, values, own| {
                let y = &values[own];
                let d = y.ncols() as f64;
                let mut dx = Array2::zeros(y.dim());
                for (r, ((mut drow, grow), yrow)) in dx
                    .rows_mut()
                    .into_iter()
                    .zip(g.rows())
                    .zip(y.rows())
                    .enumerate()
                {
                    let g_mean = grow.sum() / d;
                    let gy_mean = grow.dot(&yrow) / d;
                    for ((dv, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *dv = inv_std[r] * (gv - g_mean - yv * gy_mean);
                    }
                }
                vec![dx]
            })),
            None,
        )
    }

    /// Gather rows by index. Backward scatter-adds into the source shape.
    pub fn index_select_rows(self, idx: Vec<usize>) -> Var<'g> {
        let (y, src_dim) = {
            let values = self.g.values.borrow();
            let a = &values[self.i];
            let mut y = Array2::zeros((idx.len(), a.ncols()));
            for (r, &i) in idx.iter().enumerate() {
                y.row_mut(r).assign(&a.row(i));
            }
            (y, a.dim())
        };
        self.g.push(
            y,
            vec![self.i],
            Some(Box::new(move |g, _, _| {
                let mut da = Array2::zeros(src_dim);
                for (r, &i) in idx.iter().enumerate() {
                    let mut dst = da.row_mut(i);
                    dst += &g.row(r);
                }
                vec![da]
            })),
            None,
        )
    }

    /// Scatter-add rows of `self` (`e x d`) into `n_rows` buckets.
    pub fn scatter_add_rows(self, target: Vec<usize>, n_rows: usize) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            let a = &values[self.i];
            assert_eq!(target.len(), a.nrows());
            let mut y = Array2::zeros((n_rows, a.ncols()));
            for (row, &t) in a.rows().into_iter().zip(&target) {
                let mut dst = y.row_mut(t);
                dst += &row;
            }
            y
        };
        self.g.push(
            y,
            vec![self.i],
            Some(Box::new(move |g, _, _| {
                let mut da = Array2::zeros((target.len(), g.ncols()));
                for (mut row, &t) in da.rows_mut().into_iter().zip(&target) {
                    row.assign(&g.row(t));
                }
                vec![da]
            })),
            None,
        )
    }

    /// Column-concatenate. All inputs share a row count.
    pub fn concat_cols(parts: &[Var<'g>]) -> Var<'g> {
        assert!(!parts.is_empty());
        let g = parts[0].g;
        let (y, widths) = {
            let values = g.values.borrow();
            let rows = values[parts[0].i].nrows();
            let widths: Vec<usize> = parts.iter().map(|p| values[p.i].ncols()).collect();
            let total: usize = widths.iter().sum();
            let mut y = Array2::zeros((rows, total));
            let mut at = 0;
            for (p, w) in parts.iter().zip(&widths) {
                y.slice_mut(ndarray::s![.., at..at + w])
                    .assign(&values[p.i]);
                at += w;
            }
            (y, widths)
        };
        g.push(
            y,
            parts.iter().map(|p| p.i).collect(),
            Some(Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(widths.len());
                let mut at = 0;
                for w in &widths {
                    out.push(g.slice(ndarray::s![.., at..at + w]).to_owned());
                    at += w;
                }
                out
            })),
            None,
        )
    }

    /// Repeat each row `times` times consecutively; backward sums the group.
    pub fn repeat_rows(self, times: usize) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            let a = &values[self.i];
            let mut y = Array2::zeros((a.nrows() * times, a.ncols()));
            for (r, row) in a.rows().into_iter().enumerate() {
                for k in 0..times {
                    y.row_mut(r * times + k).assign(&row);
                }
            }
            y
        };
        self.g.push(
            y,
            vec![self.i],
            Some(Box::new(move |g, _, _| {
                let rows = g.nrows() / times;
                let mut da = Array2::zeros((rows, g.ncols()));
                for r in 0..rows {
                    for k in 0..times {
                        let mut dst = da.row_mut(r);
                        dst += &g.row(r * times + k);
                    }
                }
                vec![da]
            })),
            None,
        )
    }

    /// Inverted dropout with a precomputed mask; identity when `mask` is `None`.
    pub fn dropout_mask(self, mask: Option<Array2<f64>>) -> Var<'g> {
        let Some(mask) = mask else { return self };
        let y = &self.g.values.borrow()[self.i] * &mask;
        self.g.push(
            y,
            vec![self.i],
            Some(Box::new(move |g, _, _| vec![g * &mask])),
            None,
        )
    }

    /// B-spline basis expansion: input `n x m` becomes `n x (m * n_basis)`,
    /// inputs clamped to the grid range. Gradient flows through `x` inside
    /// the grid and is zero where the clamp saturates.
    pub fn bspline_basis(self, grid: SplineGrid) -> Var<'g> {
        let y = {
            let values = self.g.values.borrow();
            let x = &values[self.i];
            let nb = grid.n_basis();
            let (n, m) = x.dim();
            let mut y = Array2::zeros((n, m * nb));
            for r in 0..n {
                for c in 0..m {
                    let xv = grid.clamp(x[[r, c]]);
                    grid.basis_into(
                        xv,
                        y.row_mut(r).slice_mut(ndarray::s![c * nb..(c + 1) * nb]),
                    );
                }
            }
            y
        };
        let ai = self.i;
        self.g.push(
            y,
            vec![ai],
            Some(Box::new(move |g, values, _| {
                let x = &values[ai];
                let (n, m) = x.dim();
                let nb = grid.n_basis();
                let mut dx = Array2::zeros((n, m));
                let mut deriv = vec![0.0; nb];
                for r in 0..n {
                    for c in 0..m {
                        let raw = x[[r, c]];
                        if !grid.inside(raw) {
                            continue;
                        }
                        grid.basis_deriv_into(raw, &mut deriv);
                        let mut acc = 0.0;
                        for (j, d) in deriv.iter().enumerate() {
                            acc += g[[r, c * nb + j]] * d;
                        }
                        dx[[r, c]] = acc;
                    }
                }
                vec![dx]
            })),
            None,
        )
    }

    /// Summed binary cross-entropy on logits against fixed 0/1 labels.
    /// Numerically stable; gradient w.r.t. a logit is `sigmoid(z) - y`.
    pub fn bce_with_logits_sum(self, labels: Array2<f64>) -> Var<'g> {
        let total = {
            let values = self.g.values.borrow();
            let z = &values[self.i];
            assert_eq!(z.dim(), labels.dim());
            z.iter()
                .zip(labels.iter())
                .map(|(&zv, &yv)| yv * softplus(-zv) + (1.0 - yv) * softplus(zv))
                .sum()
        };
        let zi = self.i;
        self.g.push(
            Array2::from_elem((1, 1), total),
            vec![zi],
            Some(Box::new(move |g, values, _| {
                let z = &values[zi];
                let scale = g[[0, 0]];
                let mut dz = Array2::zeros(z.dim());
                ndarray::Zip::from(&mut dz)
                    .and(z)
                    .and(&labels)
                    .for_each(|d, &zv, &yv| *d = scale * (sigmoid(zv) - yv));
                vec![dz]
            })),
            None,
        )
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
