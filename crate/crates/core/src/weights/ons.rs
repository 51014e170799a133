//! Online Newton Step portfolio over the base test supermartingales.

use nalgebra::{DMatrix, DVector};

/// ONS with no uniform mixing.
#[derive(Clone, Debug)]
pub struct OnsState {
    delta: f64,
    beta: f64,
    a: DMatrix<f64>,
    b: DVector<f64>,
    p: Vec<f64>,
}

impl OnsState {
    pub const DEFAULT_BETA: f64 = 1.0;

    pub fn new(r: usize, delta: f64) -> Self {
        Self::with_beta(r, delta, Self::DEFAULT_BETA)
    }

    pub fn with_beta(r: usize, delta: f64, beta: f64) -> Self {
        assert!(r >= 1);
        OnsState {
            delta,
            beta,
            a: DMatrix::identity(r, r),
            b: DVector::zeros(r),
            p: vec![1.0 / r as f64; r],
        }
    }

    pub fn portfolio(&self) -> &[f64] {
        &self.p
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Folds in one vector of price relatives (base increments) and moves to
    /// the next portfolio: `p ← argmin_{q ∈ Δ} (q − y)ᵀA(q − y)` with
    /// `y = δ A⁻¹ b`.
    pub fn step(&mut self, x: &[f64]) {
        let r = self.p.len();
        assert_eq!(x.len(), r);
        debug_assert!(x.iter().all(|v| v.is_finite() && *v > 0.0));
        if r == 1 {
            return;
        }
        let dot: f64 = self.p.iter().zip(x).map(|(p, x)| p * x).sum();
        let g = DVector::from_iterator(r, x.iter().map(|v| v / dot));
        self.a.ger(1.0, &g, &g, 1.0);
        self.b.axpy(1.0 + 1.0 / self.beta, &g, 1.0);
        // (q − y)ᵀA(q − y) = qᵀAq − 2δ bᵀq + const
        let linear = &self.b * self.delta;
        self.p = project_simplex_quadratic(&self.a, &linear, &self.p);
    }
}

/// Minimises `½ qᵀAq − cᵀq` over the probability simplex for symmetric
/// positive definite `A`, by a primal active-set method started from the
/// feasible point `start`.
pub fn project_simplex_quadratic(a: &DMatrix<f64>, c: &DVector<f64>, start: &[f64]) -> Vec<f64> {
    let r = c.len();
    let mut q: Vec<f64> = start.to_vec();
    debug_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let mut fixed: Vec<bool> = q.iter().map(|&v| v <= 0.0).collect();
    for (v, f) in q.iter_mut().zip(&fixed) {
        if *f {
            *v = 0.0;
        }
    }
    let scale = 1.0 + c.amax() + a.amax();

    for _ in 0..(50 * r + 100) {
        let free: Vec<usize> = (0..r).filter(|&i| !fixed[i]).collect();
        let (target, nu) = equality_qp(a, c, &free);

        if target.iter().all(|&v| v >= 0.0) {
            for (&i, &v) in free.iter().zip(&target) {
                q[i] = v;
            }
            // multipliers of the bounds held at zero
            let grad = a * DVector::from_column_slice(&q) - c;
            let worst = (0..r)
                .filter(|&i| fixed[i])
                .map(|i| (i, grad[i] - nu))
                .min_by(|x, y| x.1.total_cmp(&y.1));
            match worst {
                Some((i, lambda)) if lambda < -1e-13 * scale => fixed[i] = false,
                _ => break,
            }
        } else {
            // move toward the target until the first free coordinate hits zero
            let (i, step) = free
                .iter()
                .zip(&target)
                .filter(|(_, &t)| t < 0.0)
                .map(|(&i, &t)| (i, q[i] / (q[i] - t)))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("an infeasible target has a negative coordinate");
            for (&j, &t) in free.iter().zip(&target) {
                q[j] += step * (t - q[j]);
            }
            q[i] = 0.0;
            fixed[i] = true;
        }
    }

    for v in q.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    q
}

/// Solves `min ½ qᵀAq − cᵀq` subject to `Σ q_F = 1` on the free
/// coordinates `F`, returning `q_F` and the multiplier of the sum constraint.
fn equality_qp(a: &DMatrix<f64>, c: &DVector<f64>, free: &[usize]) -> (Vec<f64>, f64) {
    let n = free.len();
    let sub = DMatrix::from_fn(n, n, |i, j| a[(free[i], free[j])]);
    let rhs_c = DVector::from_iterator(n, free.iter().map(|&i| c[i]));
    let chol = sub.cholesky().expect("A is positive definite");
    let u = chol.solve(&rhs_c);
    let v = chol.solve(&DVector::from_element(n, 1.0));
    let nu = (1.0 - u.sum()) / v.sum();
    let q = u + v * nu;
    (q.iter().copied().collect(), nu)
}

/// Largest violation of the KKT conditions of the simplex-constrained
/// problem at `q` (stationarity on the support, dual feasibility off it).
pub fn kkt_residual(a: &DMatrix<f64>, c: &DVector<f64>, q: &[f64]) -> f64 {
    let grad = a * DVector::from_column_slice(q) - c;
    let support: Vec<usize> = (0..q.len()).filter(|&i| q[i] > 1e-12).collect();
    let nu = support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
    let mut worst = (q.iter().sum::<f64>() - 1.0).abs();
    for i in 0..q.len() {
        let viol = if support.contains(&i) { (grad[i] - nu).abs() } else { (nu - grad[i]).max(0.0) };
        worst = worst.max(viol).max(-q[i]);
    }
    worst
}
