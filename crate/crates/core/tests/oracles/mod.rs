//! Independent reference computations for the integration tests.
//!
//! Nothing here calls into the closed forms of the library: overlaps and
//! Grammians are integrated numerically, and eigenvalues come from Sylvester
//! inertia counts in double-double arithmetic.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre quadrature of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let (x, w) = gauss_legendre(12);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (xi, wi) in x.iter().zip(&w) {
            total += wi * f(mid + 0.5 * h * xi);
        }
    }
    0.5 * h * total
}

/// `∫_θ e_m e_n dx` by quadrature.
pub fn overlap_by_quadrature(theta: &[(f64, f64)], n_modes: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_modes, n_modes, |i, j| {
        let (m, n) = ((i + 1) as f64, (j + 1) as f64);
        theta
            .iter()
            .map(|&(a, b)| integrate(|x| 2.0 / PI * (m * x).sin() * (n * x).sin(), a, b, 64))
            .sum()
    })
}

/// `∫₀ˡ D(s) C D(s) ds` with `C` from quadrature and the time integral by quadrature.
pub fn grammian_by_quadrature(theta: &[(f64, f64)], tail: f64, n_modes: usize) -> DMatrix<f64> {
    let c = overlap_by_quadrature(theta, n_modes);
    DMatrix::from_fn(n_modes, n_modes, |i, j| {
        let rate = ((i + 1) * (i + 1) + (j + 1) * (j + 1)) as f64;
        // The integrand decays on the scale 1/rate; resolve that layer separately.
        let knee = (40.0 / rate).min(tail);
        let head = integrate(|s| (-rate * s).exp(), 0.0, knee, 64);
        let rest = if knee < tail {
            integrate(|s| (-rate * s).exp(), knee, tail, 16)
        } else {
            0.0
        };
        c[(i, j)] * (head + rest)
    })
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

impl DoubleDouble {
    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick_two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        Self {
            hi: s,
            lo: b - (s - a),
        }
    }

    pub fn add(self, o: Self) -> Self {
        let (s, e) = Self::two_sum(self.hi, o.hi);
        let (t, f) = Self::two_sum(self.lo, o.lo);
        let r = Self::quick_two_sum(s, e + t);
        Self::quick_two_sum(r.hi, r.lo + f)
    }

    pub fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Self) -> Self {
        self.add(o.neg())
    }

    pub fn mul(self, o: Self) -> Self {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Self::quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }

    pub fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Self::new(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Self::new(q2)));
        let q3 = r.hi / o.hi;
        Self::quick_two_sum(q1, q2).add(Self::new(q3))
    }

    pub fn is_negative(self) -> bool {
        self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Number of eigenvalues of the symmetric matrix `a` below `sigma`, from the
/// signs of the `LDLᵀ` pivots of `a - σI` in double-double arithmetic.
#[allow(clippy::needless_range_loop)]
pub fn count_below(a: &DMatrix<f64>, sigma: f64) -> usize {
    let n = a.nrows();
    let s = DoubleDouble::new(sigma);
    let mut m: Vec<Vec<DoubleDouble>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let v = DoubleDouble::new(a[(i, j)]);
                    if i == j {
                        v.sub(s)
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let mut negative = 0;
    for k in 0..n {
        let mut pivot = m[k][k];
        if pivot.hi == 0.0 {
            pivot = DoubleDouble::new(f64::MIN_POSITIVE);
        }
        if pivot.is_negative() {
            negative += 1;
        }
        for i in k + 1..n {
            let factor = m[i][k].div(pivot);
            for j in k + 1..n {
                m[i][j] = m[i][j].sub(factor.mul(m[k][j]));
            }
        }
    }
    negative
}

/// Smallest eigenvalue of a positive definite matrix by inertia bisection.
pub fn min_eigenvalue_by_bisection(a: &DMatrix<f64>) -> f64 {
    assert_eq!(count_below(a, 0.0), 0, "matrix is not positive definite");
    let mut lo = 0.0;
    // Gershgorin bound on the spectrum.
    let mut hi = (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    while hi - lo > 1e-15 * hi {
        // Geometric midpoints reach tiny eigenvalues in few steps.
        let mid = if lo > 0.0 {
            (lo * hi).sqrt()
        } else {
            hi * 1e-3
        };
        let mid = if mid <= lo || mid >= hi {
            0.5 * (lo + hi)
        } else {
            mid
        };
        if count_below(a, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Coefficient `k` (1-based) of the variation-of-constants solution under a
/// constant forcing `b` from initial value `c`: `e^{-k²t} c_k + (1 - e^{-k²t}) b_k / k²`.
pub fn constant_forcing_solution(c: &DVector<f64>, b: &DVector<f64>, t: f64) -> DVector<f64> {
    DVector::from_fn(c.len(), |i, _| {
        let lambda = ((i + 1) * (i + 1)) as f64;
        let e = (-lambda * t).exp();
        e * c[i] + (1.0 - e) * b[i] / lambda
    })
}

pub fn reference_theta() -> Vec<(f64, f64)> {
    vec![(PI / 4.0, PI)]
}
