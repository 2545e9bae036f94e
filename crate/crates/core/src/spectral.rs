//! Sine eigenbasis of the Dirichlet Laplacian on `[0, π]`.
//!
//! States are stored as coefficient vectors against the orthonormal basis
//! `e_n(x) = √(2/π) sin(n x)`, `n = 1..N`. In this basis the generator is
//! `diag(n²)` and the heat semigroup is `diag(e^{-n² t})`, so both are applied
//! exactly. The interior actuator `1_θ` is represented by the overlap matrix
//! `C_{mn} = ⟨1_θ e_n, e_m⟩`, computed in closed form.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Coefficients of a function in the normalized sine basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    coeffs: DVector<f64>,
}

impl SpectralState {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(coeffs))
    }

    pub fn from_vector(coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("state", "at least one mode is required"));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(invalid(
                "state",
                format!("coefficient c_{} is not finite", i + 1),
            ));
        }
        Ok(Self { coeffs })
    }

    /// Wraps a vector produced by arithmetic on already validated states.
    pub(crate) fn from_vector_unchecked(coeffs: DVector<f64>) -> Self {
        debug_assert!(!coeffs.is_empty());
        Self { coeffs }
    }

    /// # Panics
    /// If `n_modes == 0`.
    pub fn zeros(n_modes: usize) -> Self {
        assert!(n_modes > 0, "a spectral state needs at least one mode");
        Self {
            coeffs: DVector::zeros(n_modes),
        }
    }

    /// The basis function `e_k` (1-based) as a state with `n_modes` modes.
    ///
    /// # Panics
    /// If `k` is zero or exceeds `n_modes`.
    pub fn mode(n_modes: usize, k: usize) -> Self {
        assert!(k >= 1 && k <= n_modes, "mode {k} outside 1..={n_modes}");
        let mut s = Self::zeros(n_modes);
        s.coeffs[k - 1] = 1.0;
        s
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.coeffs
    }

    /// `L²(0, π)` norm of the represented function (Parseval).
    pub fn norm(&self) -> f64 {
        self.coeffs.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub(crate) fn check_len(&self, expected: usize) -> Result<()> {
        if self.n_modes() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.n_modes(),
            });
        }
        Ok(())
    }
}

impl Add for &SpectralState {
    type Output = SpectralState;
    fn add(self, rhs: &SpectralState) -> SpectralState {
        SpectralState::from_vector_unchecked(&self.coeffs + &rhs.coeffs)
    }
}

impl Sub for &SpectralState {
    type Output = SpectralState;
    fn sub(self, rhs: &SpectralState) -> SpectralState {
        SpectralState::from_vector_unchecked(&self.coeffs - &rhs.coeffs)
    }
}

impl Mul<f64> for &SpectralState {
    type Output = SpectralState;
    fn mul(self, rhs: f64) -> SpectralState {
        SpectralState::from_vector_unchecked(&self.coeffs * rhs)
    }
}

impl Neg for &SpectralState {
    type Output = SpectralState;
    fn neg(self) -> SpectralState {
        SpectralState::from_vector_unchecked(-&self.coeffs)
    }
}

/// Eigenvalue `λ_n = n²` of the generator for the 1-based mode `n`.
pub fn eigenvalue(n: usize) -> f64 {
    (n * n) as f64
}

/// Diagonal of `S(t)` on the first `n_modes` modes.
pub fn decay_factors(t: f64, n_modes: usize) -> DVector<f64> {
    DVector::from_fn(n_modes, |i, _| (-eigenvalue(i + 1) * t).exp())
}

/// `S(t) x`, exact on the truncation.
pub fn apply_semigroup(t: f64, state: &SpectralState) -> Result<SpectralState> {
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    let d = decay_factors(t, state.n_modes());
    Ok(SpectralState::from_vector_unchecked(
        state.coeffs.component_mul(&d),
    ))
}

/// `A x` with `A e_n = n² e_n`.
pub fn apply_generator(state: &SpectralState) -> SpectralState {
    let coeffs = DVector::from_fn(state.n_modes(), |i, _| eigenvalue(i + 1) * state.coeffs[i]);
    SpectralState::from_vector_unchecked(coeffs)
}

/// Samples of a function on a uniform grid of `[0, π]`, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl PhysicalField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid("field", "a grid needs at least two points"));
        }
        Ok(Self {
            nodes: uniform_grid(values.len()),
            values,
        })
    }

    /// Samples `f` on `n_grid` uniform points.
    pub fn sample(n_grid: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n_grid < 2 {
            return Err(invalid("field", "a grid needs at least two points"));
        }
        let nodes = uniform_grid(n_grid);
        let values = nodes.iter().map(|&x| f(x)).collect();
        Ok(Self { nodes, values })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Composite-trapezoid `L²(0, π)` norm.
    pub fn l2_norm(&self) -> f64 {
        trapezoid_l2(&self.values)
    }
}

pub(crate) fn trapezoid_l2(values: &[f64]) -> f64 {
    let n = values.len();
    let h = PI / (n - 1) as f64;
    let interior: f64 = values[1..n - 1].iter().map(|v| v * v).sum();
    let ends = 0.5 * (values[0] * values[0] + values[n - 1] * values[n - 1]);
    (h * (interior + ends)).sqrt()
}

pub fn uniform_grid(n_grid: usize) -> Vec<f64> {
    let h = PI / (n_grid - 1) as f64;
    (0..n_grid)
        .map(|j| if j == n_grid - 1 { PI } else { j as f64 * h })
        .collect()
}

/// Tabulated sine basis on a fixed grid, for repeated projection and synthesis.
#[derive(Debug, Clone)]
pub struct SineBasis {
    nodes: Vec<f64>,
    /// `n_grid × n_modes`, entry `(j, n-1) = e_n(x_j)`; endpoint rows are zero.
    table: DMatrix<f64>,
    /// Trapezoid weights.
    weights: DVector<f64>,
}

impl SineBasis {
    /// Minimum grid points per mode accepted by [`SineBasis::new`].
    pub const POINTS_PER_MODE: usize = 4;

    pub fn new(n_modes: usize, n_grid: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(invalid("modes", "at least one mode is required"));
        }
        let required = Self::POINTS_PER_MODE * n_modes;
        if n_grid < required {
            return Err(Error::GridTooCoarse {
                n_grid,
                n_modes,
                required,
            });
        }
        let nodes = uniform_grid(n_grid);
        let scale = (2.0 / PI).sqrt();
        let table = DMatrix::from_fn(n_grid, n_modes, |j, k| {
            if j == 0 || j == n_grid - 1 {
                0.0
            } else {
                scale * ((k + 1) as f64 * nodes[j]).sin()
            }
        });
        let h = PI / (n_grid - 1) as f64;
        let weights = DVector::from_fn(n_grid, |j, _| {
            if j == 0 || j == n_grid - 1 {
                0.5 * h
            } else {
                h
            }
        });
        Ok(Self {
            nodes,
            table,
            weights,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.table.ncols()
    }

    pub fn n_grid(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `c_n = ∫ field · e_n` by the composite trapezoid rule.
    pub fn project(&self, field: &PhysicalField) -> Result<SpectralState> {
        if field.len() != self.n_grid() {
            return Err(Error::DimensionMismatch {
                expected: self.n_grid(),
                found: field.len(),
            });
        }
        self.project_values(&field.values)
    }

    pub(crate) fn project_values(&self, values: &[f64]) -> Result<SpectralState> {
        let weighted = DVector::from_iterator(
            values.len(),
            values.iter().zip(self.weights.iter()).map(|(v, w)| v * w),
        );
        SpectralState::from_vector(self.table.tr_mul(&weighted))
    }

    pub fn synthesize(&self, state: &SpectralState) -> Result<PhysicalField> {
        Ok(PhysicalField {
            nodes: self.nodes.clone(),
            values: self.synthesize_values(state)?,
        })
    }

    pub(crate) fn synthesize_values(&self, state: &SpectralState) -> Result<Vec<f64>> {
        state.check_len(self.n_modes())?;
        Ok((&self.table * state.coeffs()).data.into())
    }
}

/// Projects `field` onto the first `n_modes` sine modes.
///
/// Refuses grids with fewer than [`SineBasis::POINTS_PER_MODE`] points per mode.
pub fn project(field: &PhysicalField, n_modes: usize) -> Result<SpectralState> {
    SineBasis::new(n_modes, field.len())?.project(field)
}

/// Evaluates `Σ c_n e_n(x)` on `n_grid` uniform points; the endpoints are exactly zero.
pub fn synthesize(state: &SpectralState, n_grid: usize) -> Result<PhysicalField> {
    if n_grid < 2 {
        return Err(invalid("field", "a grid needs at least two points"));
    }
    let nodes = uniform_grid(n_grid);
    let scale = (2.0 / PI).sqrt();
    let values = nodes
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            if j == 0 || j == n_grid - 1 {
                return 0.0;
            }
            state
                .coeffs()
                .iter()
                .enumerate()
                .map(|(k, c)| c * scale * ((k + 1) as f64 * x).sin())
                .sum()
        })
        .collect();
    Ok(PhysicalField { nodes, values })
}

/// Disjoint open sub-intervals of `(0, π)` where the control acts.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorSet {
    intervals: Vec<(f64, f64)>,
}

impl ActuatorSet {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(invalid("actuator", "at least one interval is required"));
        }
        for &(a, b) in &intervals {
            if !(a.is_finite() && b.is_finite()) {
                return Err(invalid(
                    "actuator",
                    format!("interval ({a}, {b}) is not finite"),
                ));
            }
            if a < 0.0 || b > PI || a >= b {
                return Err(invalid(
                    "actuator",
                    format!("interval ({a}, {b}) must satisfy 0 <= a < b <= pi"),
                ));
            }
        }
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in intervals.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(invalid(
                    "actuator",
                    format!(
                        "intervals ({}, {}) and ({}, {}) overlap",
                        w[0].0, w[0].1, w[1].0, w[1].1
                    ),
                ));
            }
        }
        Ok(Self { intervals })
    }

    /// `θ = (0, π)`.
    pub fn full() -> Self {
        Self {
            intervals: vec![(0.0, PI)],
        }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    /// Indicator `1_θ(x)`; intervals are open.
    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a < x && x < b)
    }

    pub fn indicator(&self, x: f64) -> f64 {
        if self.contains(x) {
            1.0
        } else {
            0.0
        }
    }
}

/// `∫_a^b sin(m x) sin(n x) dx` from the elementary antiderivative.
fn sine_product_integral(m: usize, n: usize, a: f64, b: f64) -> f64 {
    let antiderivative = |x: f64| {
        if m == n {
            let m = m as f64;
            x / 2.0 - (2.0 * m * x).sin() / (4.0 * m)
        } else {
            let d = m as f64 - n as f64;
            let s = (m + n) as f64;
            (d * x).sin() / (2.0 * d) - (s * x).sin() / (2.0 * s)
        }
    };
    antiderivative(b) - antiderivative(a)
}

/// `C_{mn} = ⟨1_θ e_n, e_m⟩`, the Galerkin matrix of `B_θ B_θ*`.
pub fn overlap_matrix(theta: &ActuatorSet, n_modes: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(n_modes, n_modes);
    for m in 1..=n_modes {
        for n in m..=n_modes {
            let v: f64 = theta
                .intervals
                .iter()
                .map(|&(a, b)| sine_product_integral(m, n, a, b))
                .sum::<f64>()
                * (2.0 / PI);
            c[(m - 1, n - 1)] = v;
            c[(n - 1, m - 1)] = v;
        }
    }
    c
}
