//! Tridiagonal kernels: Thomas elimination and Sturm-sequence bisection.

/// Factorization of a tridiagonal matrix for repeated solves (no pivoting;
/// intended for diagonally dominant or negated-SPD matrices).
#[derive(Debug, Clone)]
pub struct TriFactor {
    lower: Vec<f64>,
    /// Modified super-diagonal.
    cp: Vec<f64>,
    /// Pivots.
    piv: Vec<f64>,
}

impl TriFactor {
    /// `lower[i] = M[i+1][i]`, `upper[i] = M[i][i+1]`.
    pub fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Self {
        let n = diag.len();
        let mut cp = vec![0.0; n.saturating_sub(1)];
        let mut piv = vec![0.0; n];
        piv[0] = diag[0];
        for i in 1..n {
            cp[i - 1] = upper[i - 1] / piv[i - 1];
            piv[i] = diag[i] - lower[i - 1] * cp[i - 1];
        }
        Self {
            lower: lower.to_vec(),
            cp,
            piv,
        }
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.piv.len();
        x[0] /= self.piv[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i - 1] * x[i - 1]) / self.piv[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.cp[i] * x[i + 1];
        }
    }

    pub fn min_abs_pivot(&self) -> f64 {
        self.piv.iter().fold(f64::INFINITY, |m, p| m.min(p.abs()))
    }
}

/// One-shot solve of a tridiagonal system.
pub fn solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut cp = vec![0.0; n];
    let mut p = diag[0];
    rhs[0] /= p;
    for i in 1..n {
        cp[i - 1] = upper[i - 1] / p;
        p = diag[i] - lower[i - 1] * cp[i - 1];
        rhs[i] = (rhs[i] - lower[i - 1] * rhs[i - 1]) / p;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= cp[i] * rhs[i + 1];
    }
}

/// Symmetric tridiagonal matrix given by its diagonal and off-diagonal.
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    /// Number of eigenvalues strictly less than `x`.
    pub fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.diag.len() {
            let e2 = self.off[i - 1] * self.off[i - 1];
            let denom = if q == 0.0 { f64::EPSILON * (1.0 + e2.abs()) } else { q };
            q = self.diag[i] - x - e2 / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `k`-th largest eigenvalue (k = 0 is the top), by bisection.
    pub fn eigenvalue_from_top(&self, k: usize) -> f64 {
        let n = self.diag.len();
        assert!(k < n);
        let target = n - k; // number of eigenvalues <= lambda
        let (mut lo, mut hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs()).max(1.0);
        lo -= 1e-8 * scale;
        hi += 1e-8 * scale;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if self.count_below(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * scale {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i] * x[i + 1];
                }
                s
            })
            .collect()
    }
}
