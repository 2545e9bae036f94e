//! Compensated arithmetic and the small dense solvers built on it.
//!
//! The Grammian is graded: its entries fall off like `1/(m² + n²)` and its
//! smallest eigenvalue sits far below `ε‖Q‖`. The routines here keep relative
//! accuracy on that end of the spectrum.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Running sum with an error term carried alongside.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    hi: f64,
    lo: f64,
}

impl CompensatedSum {
    #[inline]
    fn add_product(&mut self, a: f64, b: f64) {
        let (p, pe) = two_prod(a, b);
        let (s, se) = two_sum(self.hi, p);
        self.hi = s;
        self.lo += pe + se;
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// `xᵀ y` accurate to roughly twice the working precision.
pub(crate) fn dot(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for (a, b) in x.iter().zip(y.iter()) {
        acc.add_product(*a, *b);
    }
    acc.value()
}

/// `b - A x` with compensated row sums.
pub(crate) fn residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(b.len(), |i, _| {
        let mut acc = CompensatedSum::default();
        acc.add_product(b[i], 1.0);
        for j in 0..x.len() {
            acc.add_product(-a[(i, j)], x[j]);
        }
        acc.value()
    })
}

/// `vᵀ A v` where every product `v_i v_j A_ij` is formed without rounding loss.
pub(crate) fn quadratic_form(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for i in 0..v.len() {
        for j in 0..v.len() {
            let (p, pe) = two_prod(v[i], v[j]);
            acc.add_product(p, a[(i, j)]);
            acc.add_product(pe, a[(i, j)]);
        }
    }
    acc.value()
}

/// Solves the SPD system `A x = b` by Cholesky with compensated iterative refinement.
///
/// Returns `None` when `A` is not numerically positive definite.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = Cholesky::new(a.clone())?;
    let mut x = chol.solve(b);
    for _ in 0..2 {
        let r = residual(a, &x, b);
        if r.norm() <= f64::EPSILON * b.norm() {
            break;
        }
        x += chol.solve(&r);
    }
    Some(x)
}

/// Relative residual `‖b - A x‖ / ‖b‖` (zero for `b = 0`, `x = 0`).
pub(crate) fn relative_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let r = residual(a, x, b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        r
    } else {
        r / scale
    }
}

/// Eigenvalues in ascending order, with the smallest replaced by a refined value.
pub(crate) fn symmetric_spectrum(a: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    if let Some(first) = values.first_mut() {
        *first = smallest_eigenvalue_from(a, &eig);
    }
    values
}

/// Smallest eigenvalue of a symmetric matrix with relative accuracy on the
/// positive definite branch.
pub(crate) fn smallest_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone());
    smallest_eigenvalue_from(a, &eig)
}

fn smallest_eigenvalue_from(a: &DMatrix<f64>, eig: &SymmetricEigen<f64, Dyn>) -> f64 {
    let (idx, &approx) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty matrix");
    // Cholesky of a graded positive definite matrix is accurate row by row, so
    // inverse iteration through it recovers the small eigenvector that the
    // orthogonal solver only resolves up to ε‖A‖.
    let Some(chol) = Cholesky::new(a.clone()) else {
        return approx;
    };
    let mut v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
    for _ in 0..8 {
        let w = chol.solve(&v);
        let n = w.norm();
        if !(n.is_finite() && n > 0.0) {
            return approx;
        }
        v = w / n;
    }
    quadratic_form(a, &v) / dot(&v, &v)
}
