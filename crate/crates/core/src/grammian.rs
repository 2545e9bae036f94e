//! Controllability Grammian of the heat equation on a tail window, the
//! regularized inverse `(αI + Q)⁻¹`, and the steering control built from it.
//!
//! For a window `(T - l, T]` the Grammian is
//! `Q = ∫_{T-l}^{T} S(T-t) B_θ B_θ* S*(T-t) dt`. In the sine basis the time
//! integral is elementary:
//!
//! ```text
//! Q_{mn} = C_{mn} · (1 - e^{-(m² + n²) l}) / (m² + n²)
//! ```
//!
//! with `C` the actuator overlap matrix. Only `l` enters; `T` fixes where the
//! window sits. The control `u_α(t) = B_θ* S*(T-t) z` with
//! `(αI + Q) z = w¹ - S(l) y₀` drives the state to `w¹ - α z` at time `T`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::numerics;
use crate::spectral::{
    decay_factors, eigenvalue, overlap_matrix, ActuatorSet, PhysicalField, SineBasis, SpectralState,
};

/// Relative residual every regularized solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Where the Grammian's window sits and which actuator it uses.
#[derive(Debug, Clone, PartialEq)]
pub struct TailWindow {
    pub horizon: f64,
    pub tail: f64,
    pub theta: ActuatorSet,
    overlap: DMatrix<f64>,
}

impl TailWindow {
    pub fn start(&self) -> f64 {
        self.horizon - self.tail
    }

    pub fn overlap(&self) -> &DMatrix<f64> {
        &self.overlap
    }

    pub fn contains(&self, t: f64) -> bool {
        t > self.start() && t <= self.horizon
    }
}

/// Truncated Grammian `Q_{Tl}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammianMatrix {
    matrix: DMatrix<f64>,
    window: Option<TailWindow>,
}

impl GrammianMatrix {
    /// Wraps a bare symmetric positive semidefinite matrix with no actuation
    /// window attached. Controls cannot be evaluated from such a matrix.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(invalid("grammian", "matrix must be square and non-empty"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grammian", "matrix has non-finite entries"));
        }
        if matrix != matrix.transpose() {
            return Err(invalid("grammian", "matrix is not symmetric"));
        }
        Ok(Self {
            matrix,
            window: None,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn window(&self) -> Option<&TailWindow> {
        self.window.as_ref()
    }

    pub fn n_modes(&self) -> usize {
        self.matrix.nrows()
    }

    /// Ascending eigenvalues; the first entry is the refined smallest eigenvalue.
    pub fn eigenvalues(&self) -> Vec<f64> {
        numerics::symmetric_spectrum(&self.matrix)
    }

    /// `λ_min(Q)`, resolved to relative accuracy even when far below `ε‖Q‖`.
    pub fn min_eigenvalue(&self) -> f64 {
        numerics::smallest_eigenvalue(&self.matrix)
    }

    /// Spectral condition number of `αI + Q`.
    pub fn condition_number(&self, alpha: f64) -> f64 {
        let ev = self.eigenvalues();
        (alpha + ev[ev.len() - 1]) / (alpha + ev[0])
    }

    /// `Q x`.
    pub fn apply(&self, x: &SpectralState) -> Result<SpectralState> {
        x.check_len(self.n_modes())?;
        SpectralState::from_vector(&self.matrix * x.coeffs())
    }
}

/// Closed-form Grammian for the window `(T - l, T]`.
pub fn assemble_grammian(
    theta: &ActuatorSet,
    horizon: f64,
    tail: f64,
    n_modes: usize,
) -> Result<GrammianMatrix> {
    if n_modes == 0 {
        return Err(invalid("modes", "at least one mode is required"));
    }
    if !(tail > 0.0 && tail <= horizon) {
        return Err(invalid(
            "tail length",
            format!("need 0 < l <= T, got l = {tail}, T = {horizon}"),
        ));
    }
    let overlap = overlap_matrix(theta, n_modes);
    let matrix = grammian_entries(&overlap, tail);
    Ok(GrammianMatrix {
        matrix,
        window: Some(TailWindow {
            horizon,
            tail,
            theta: theta.clone(),
            overlap,
        }),
    })
}

/// The entries depend on the window length alone.
fn grammian_entries(overlap: &DMatrix<f64>, tail: f64) -> DMatrix<f64> {
    let n = overlap.nrows();
    let mut q = DMatrix::zeros(n, n);
    for m in 0..n {
        for k in m..n {
            let rate = eigenvalue(m + 1) + eigenvalue(k + 1);
            let v = overlap[(m, k)] * (-(-rate * tail).exp_m1()) / rate;
            q[(m, k)] = v;
            q[(k, m)] = v;
        }
    }
    q
}

/// `z = (αI + Q)⁻¹ r` together with what is needed to turn it into a control.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedTail {
    z: SpectralState,
    alpha: f64,
    window: Option<TailWindow>,
}

impl SynthesizedTail {
    pub fn z(&self) -> &SpectralState {
        &self.z
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn window(&self) -> Option<&TailWindow> {
        self.window.as_ref()
    }

    fn checked_window(&self, t: f64) -> Result<&TailWindow> {
        let w = self
            .window
            .as_ref()
            .ok_or_else(|| invalid("tail", "solution carries no actuation window"))?;
        if !w.contains(t) {
            return Err(Error::OutsideWindow {
                t,
                start: w.start(),
                end: w.horizon,
            });
        }
        Ok(w)
    }

    /// `S*(T - t) z`, the adjoint profile before restriction to `θ`.
    fn adjoint_profile(&self, horizon: f64, t: f64) -> DVector<f64> {
        self.z
            .coeffs()
            .component_mul(&decay_factors(horizon - t, self.z.n_modes()))
    }

    /// Spectral coefficients of `u_α(t) = 1_θ Σ e^{-n²(T-t)} z_n e_n`, i.e. `C D(T-t) z`.
    pub fn control_coefficients(&self, t: f64) -> Result<SpectralState> {
        let w = self.checked_window(t)?;
        Ok(self.coefficients_unchecked(w, t))
    }

    pub(crate) fn coefficients_unchecked(&self, w: &TailWindow, t: f64) -> SpectralState {
        SpectralState::from_vector_unchecked(w.overlap() * self.adjoint_profile(w.horizon, t))
    }

    /// Pointwise values of `u_α(t, ·)` on the basis grid.
    pub fn control_field(&self, t: f64, basis: &SineBasis) -> Result<PhysicalField> {
        let w = self.checked_window(t)?;
        PhysicalField::new(self.field_values_unchecked(w, t, basis)?)
    }

    pub(crate) fn field_values_unchecked(
        &self,
        w: &TailWindow,
        t: f64,
        basis: &SineBasis,
    ) -> Result<Vec<f64>> {
        let profile = SpectralState::from_vector_unchecked(self.adjoint_profile(w.horizon, t));
        let mut values = basis.synthesize_values(&profile)?;
        for (v, x) in values.iter_mut().zip(basis.nodes()) {
            *v *= w.theta.indicator(*x);
        }
        Ok(values)
    }
}

/// Solves `(αI + Q) z = rhs` by Cholesky with refinement.
pub fn regularized_solve(
    grammian: &GrammianMatrix,
    alpha: f64,
    rhs: &SpectralState,
) -> Result<SynthesizedTail> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("must be positive, got {alpha}")));
    }
    rhs.check_len(grammian.n_modes())?;
    let n = grammian.n_modes();
    let system = &grammian.matrix + DMatrix::identity(n, n) * alpha;
    let z = numerics::spd_solve(&system, rhs.coeffs())
        .ok_or_else(|| Error::Solver("αI + Q is not positive definite".into()))?;
    let rel = numerics::relative_residual(&system, &z, rhs.coeffs());
    if !(rel <= SOLVE_TOLERANCE) {
        return Err(Error::Solver(format!(
            "relative residual {rel:e} exceeds {SOLVE_TOLERANCE:e}"
        )));
    }
    Ok(SynthesizedTail {
        z: SpectralState::from_vector(z)?,
        alpha,
        window: grammian.window.clone(),
    })
}

/// `S(l) y₀ + Q z`, the state the tail control reaches from `y₀`.
pub fn predicted_final_state(
    grammian: &GrammianMatrix,
    tail: &SynthesizedTail,
    y0: &SpectralState,
    l: f64,
) -> Result<SpectralState> {
    let free = crate::spectral::apply_semigroup(l, y0)?;
    let steered = grammian.apply(tail.z())?;
    Ok(&free + &steered)
}

/// `E_α = α (αI + Q)⁻¹ r` and its norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringError {
    pub state: SpectralState,
    pub norm: f64,
}

pub fn steering_error(
    grammian: &GrammianMatrix,
    alpha: f64,
    residual: &SpectralState,
) -> Result<SteeringError> {
    let tail = regularized_solve(grammian, alpha, residual)?;
    let state = tail.z() * alpha;
    let norm = state.norm();
    Ok(SteeringError { state, norm })
}

/// How `‖α(αI + Q)⁻¹ x‖` behaved for one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDiagnostic {
    /// `⟨Q x, x⟩ = ∫ ‖B_θ* S*(T-t) x‖² dt`; zero would mean the adjoint vanishes on the window.
    pub adjoint_energy: f64,
    pub error_norms: Vec<f64>,
    /// `α / (α + λ_min) ‖x‖` for each α.
    pub spectral_bounds: Vec<f64>,
    /// Least-squares slope of `log ‖E_α x‖` against `log α`.
    pub decay_rate: f64,
    pub vanishing: bool,
}

/// Numerical reading of the four equivalent controllability conditions on the truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityReport {
    pub min_eigenvalue: f64,
    pub positive_definite: bool,
    pub alphas: Vec<f64>,
    pub probes: Vec<ProbeDiagnostic>,
}

impl ControllabilityReport {
    pub fn controllable(&self) -> bool {
        self.positive_definite && self.probes.iter().all(|p| p.vanishing)
    }
}

impl fmt::Display for ControllabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lambda_min(Q) = {:.8e}", self.min_eigenvalue)?;
        for (i, p) in self.probes.iter().enumerate() {
            writeln!(
                f,
                "probe {i}: <Qx,x> = {:.8e}, decay rate {:.3}, {}",
                p.adjoint_energy,
                p.decay_rate,
                if p.vanishing { "vanishing" } else { "stalled" }
            )?;
        }
        write!(
            f,
            "{}",
            if self.controllable() {
                "controllable"
            } else {
                "not controllable"
            }
        )
    }
}

/// Probes positivity of `Q` and the limit `α (αI + Q)⁻¹ x → 0` along `alphas`.
pub fn check_controllability(
    grammian: &GrammianMatrix,
    alphas: &[f64],
    probes: &[SpectralState],
) -> Result<ControllabilityReport> {
    if alphas.len() < 2 {
        return Err(invalid("alpha sequence", "need at least two values"));
    }
    if alphas.iter().any(|a| !(*a > 0.0)) || alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid(
            "alpha sequence",
            "values must be positive and strictly decreasing",
        ));
    }
    let min_eigenvalue = grammian.min_eigenvalue();
    let positive_definite = min_eigenvalue > 0.0;
    let log_alpha: Vec<f64> = alphas.iter().map(|a| a.ln()).collect();

    let mut out = Vec::with_capacity(probes.len());
    for x in probes {
        let adjoint_energy = numerics::quadratic_form(grammian.matrix(), x.coeffs());
        let error_norms = alphas
            .iter()
            .map(|&a| steering_error(grammian, a, x).map(|e| e.norm))
            .collect::<Result<Vec<_>>>()?;
        let spectral_bounds = alphas
            .iter()
            .map(|&a| a / (a + min_eigenvalue.max(0.0)) * x.norm())
            .collect();
        let decay_rate = if error_norms.iter().all(|e| *e > 0.0) {
            let logs: Vec<f64> = error_norms.iter().map(|e| e.ln()).collect();
            slope(&log_alpha, &logs)
        } else {
            f64::INFINITY
        };
        let nonincreasing = error_norms.windows(2).all(|w| w[1] <= w[0]);
        let first = error_norms[0];
        let last = error_norms[error_norms.len() - 1];
        let vanishing = nonincreasing && (last == 0.0 || (last < first && decay_rate > 1e-3));
        out.push(ProbeDiagnostic {
            adjoint_energy,
            error_norms,
            spectral_bounds,
            decay_rate,
            vanishing,
        });
    }
    Ok(ControllabilityReport {
        min_eigenvalue,
        positive_definite,
        alphas: alphas.to_vec(),
        probes: out,
    })
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
