//! Conjugate gradient for symmetric positive-definite operators.

/// A symmetric positive-definite linear map applied matrix-free.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `out = A x`.
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final 2-norm of `b - A x`.
    pub residual_norm: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` from a zero initial guess until `||b - A x||_2 <= tol`
/// or `max_iters` iterations have run.
pub fn conjugate_gradient<A: LinearOperator + ?Sized>(a: &A, b: &[f64], tol: f64, max_iters: usize) -> CgOutcome {
    conjugate_gradient_with(a, b, tol, max_iters, |_| {})
}

/// Same as [`conjugate_gradient`], calling `observe` with every iterate
/// (starting with the zero guess).
pub fn conjugate_gradient_with<A, F>(a: &A, b: &[f64], tol: f64, max_iters: usize, mut observe: F) -> CgOutcome
where
    A: LinearOperator + ?Sized,
    F: FnMut(&[f64]),
{
    let n = a.dim();
    assert_eq!(b.len(), n, "right-hand side length");
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    observe(&x);

    let mut iterations = 0;
    while rr.sqrt() > tol && iterations < max_iters {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            // Operator is not positive definite along p.
            break;
        }
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
        iterations += 1;
        observe(&x);
    }

    let residual_norm = rr.sqrt();
    CgOutcome {
        solution: x,
        iterations,
        residual_norm,
        converged: residual_norm <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense(Vec<Vec<f64>>);

    impl LinearOperator for Dense {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, x: &[f64], out: &mut [f64]) {
            for (o, row) in out.iter_mut().zip(&self.0) {
                *o = dot(row, x);
            }
        }
    }

    #[test]
    fn solves_small_spd_system() {
        let a = Dense(vec![vec![4.0, 1.0], vec![1.0, 3.0]]);
        let out = conjugate_gradient(&a, &[1.0, 2.0], 1e-12, 10);
        assert!(out.converged);
        assert!((out.solution[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((out.solution[1] - 7.0 / 11.0).abs() < 1e-12);
        assert!(out.iterations <= 2);
    }

    #[test]
    fn zero_rhs_needs_no_iterations() {
        let a = Dense(vec![vec![2.0]]);
        let out = conjugate_gradient(&a, &[0.0], 1e-9, 10);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution, vec![0.0]);
    }

    #[test]
    fn reports_non_convergence() {
        let a = Dense(vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]]);
        let out = conjugate_gradient(&a, &[1.0, 2.0, 3.0], 1e-14, 1);
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
        assert!(out.residual_norm > 1e-14);
    }
}
