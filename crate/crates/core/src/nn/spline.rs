use ndarray::ArrayViewMut1;

/// Uniform B-spline basis on `[-range, range]`, knots extended by `degree`
/// on each side. `intervals + degree` basis functions form a partition of
/// unity inside the range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineGrid {
    intervals: usize,
    degree: usize,
    range: f64,
}

impl SplineGrid {
    pub fn new(intervals: usize, degree: usize, range: f64) -> Self {
        assert!(intervals >= 1 && degree >= 1 && range > 0.0);
        Self {
            intervals,
            degree,
            range,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    fn step(&self) -> f64 {
        2.0 * self.range / self.intervals as f64
    }

    /// Knot `t_j` for `j` in `0..intervals + 2*degree + 1`.
    pub fn knot(&self, j: usize) -> f64 {
        -self.range + (j as f64 - self.degree as f64) * self.step()
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(-self.range, self.range)
    }

    pub fn inside(&self, x: f64) -> bool {
        (-self.range..=self.range).contains(&x)
    }

    /// Inner interval index of a clamped `x`, in `0..intervals`.
    fn span(&self, x: f64) -> usize {
        let m = ((x + self.range) / self.step()).floor() as isize;
        m.clamp(0, self.intervals as isize - 1) as usize
    }

    /// All `n_basis` basis values at `x` (must already be clamped).
    /// Only `degree + 1` entries are nonzero.
    pub fn basis_into(&self, x: f64, mut out: ArrayViewMut1<f64>) {
        out.fill(0.0);
        let m = self.span(x);
        let j = m + self.degree; // knot span: t_j <= x < t_{j+1}
        let p = self.degree;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for r in 1..=p {
            left[r] = x - self.knot(j + 1 - r);
            right[r] = self.knot(j + r) - x;
            let mut saved = 0.0;
            for k in 0..r {
                let temp = n[k] / (right[k + 1] + left[r - k]);
                n[k] = saved + right[k + 1] * temp;
                saved = left[r - k] * temp;
            }
            n[r] = saved;
        }
        for (k, v) in n.iter().enumerate() {
            out[m + k] = *v;
        }
    }

    /// Derivatives of all basis functions at `x` (clamped internally).
    pub fn basis_deriv_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_basis());
        out.fill(0.0);
        let x = self.clamp(x);
        let p = self.degree;
        let m = self.span(x);
        let j = m + p;
        // degree-(p-1) basis values on the same knots
        let q = p - 1;
        let mut n = vec![0.0; q + 1];
        if q == 0 {
            n[0] = 1.0;
        } else {
            let mut left = vec![0.0; q + 1];
            let mut right = vec![0.0; q + 1];
            n[0] = 1.0;
            for r in 1..=q {
                left[r] = x - self.knot(j + 1 - r);
                right[r] = self.knot(j + r) - x;
                let mut saved = 0.0;
                for k in 0..r {
                    let temp = n[k] / (right[k + 1] + left[r - k]);
                    n[k] = saved + right[k + 1] * temp;
                    saved = left[r - k] * temp;
                }
                n[r] = saved;
            }
        }
        // n[k] = B_{j-q+k, q}(x); derivative of B_{i,p} is (B_{i,q} - B_{i+1,q})/h
        let low = |i: isize| -> f64 {
            let base = j as isize - q as isize;
            if i < base || i > j as isize {
                0.0
            } else {
                n[(i - base) as usize]
            }
        };
        let h = self.step();
        for k in 0..=p {
            let i = (m + k) as isize;
            out[m + k] = (low(i) - low(i + 1)) / h;
        }
    }
}
