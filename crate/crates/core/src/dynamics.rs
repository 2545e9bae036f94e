//! Time-stepped mild solution of the semilinear heat equation with delay,
//! memory and non-instantaneous impulses.
//!
//! On flow intervals the state obeys
//!
//! ```text
//! ω' = -A ω + B_θ u + ∫₀ᵗ M(t, s) g(ω(s - r)) ds + f(t, ω(t - r), u(t))
//! ```
//!
//! and on each impulse interval `(t_i, s_i]` it satisfies the algebraic
//! relation `ω(t) = G_i(t, ω(t), u(t))`. Flow intervals are stepped with the
//! exact factor `e^{-n² h}` per mode and the trapezoid rule on the forcing:
//!
//! ```text
//! ω_{k+1} = D(h) ω_k + h/2 · (D(h) F_k + F_{k+1})
//! ```
//!
//! Every forcing evaluation reads the state only at `t - r`, so each step is
//! explicit as long as the step does not exceed the delay.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::grammian::SynthesizedTail;
use crate::spectral::{
    decay_factors, overlap_matrix, trapezoid_l2, ActuatorSet, SineBasis, SpectralState,
};

/// Residual at which an impulse fixed point is accepted.
pub const IMPULSE_TOLERANCE: f64 = 1e-9;
/// Fixed-point iterations allowed per impulse grid point.
pub const IMPULSE_MAX_ITERATIONS: usize = 100;

/// Breakpoints closer than this are merged; lookups this close to a node snap to it.
const TIME_SNAP: f64 = 1e-10;

/// Interleaved impulse intervals `0 < t₁ ≤ s₁ < t₂ ≤ … ≤ s_N < T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseSchedule {
    pairs: Vec<(f64, f64)>,
    horizon: f64,
}

impl ImpulseSchedule {
    pub fn new(pairs: Vec<(f64, f64)>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(
                "horizon",
                format!("must be positive, got {horizon}"),
            ));
        }
        let mut prev_end = 0.0;
        for (i, &(t, s)) in pairs.iter().enumerate() {
            if !(t > prev_end) {
                return Err(invalid(
                    "impulse schedule",
                    format!(
                        "start t_{} = {t} must exceed the previous end {prev_end}",
                        i + 1
                    ),
                ));
            }
            if !(s >= t) {
                return Err(invalid(
                    "impulse schedule",
                    format!("t_{0} = {t} exceeds s_{0} = {s}", i + 1),
                ));
            }
            prev_end = s;
        }
        if !(prev_end < horizon) {
            return Err(invalid(
                "impulse schedule",
                format!("last end s_N = {prev_end} must lie before T = {horizon}"),
            ));
        }
        Ok(Self { pairs, horizon })
    }

    pub fn without_impulses(horizon: f64) -> Result<Self> {
        Self::new(Vec::new(), horizon)
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `s_N`, or `0` without impulses.
    pub fn last_end(&self) -> f64 {
        self.pairs.last().map_or(0.0, |p| p.1)
    }

    /// Index of the impulse interval `(t_i, s_i]` containing `t`.
    pub fn interval_containing(&self, t: f64) -> Option<usize> {
        self.pairs.iter().position(|&(a, b)| t > a && t <= b)
    }
}

/// A state-valued function of time.
pub type StateProfile = Arc<dyn Fn(f64) -> SpectralState + Send + Sync>;

/// Initial history `h` on `[-r, 0]`, continuous between a finite set of jump points.
///
/// Each piece covers `(previous end, end]`; the first piece also covers `-r`.
#[derive(Clone)]
pub struct History {
    delay: f64,
    ends: Vec<f64>,
    pieces: Vec<StateProfile>,
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("History")
            .field("delay", &self.delay)
            .field("jump_points", &self.jump_points())
            .finish_non_exhaustive()
    }
}

impl History {
    pub fn constant(delay: f64, state: SpectralState) -> Result<Self> {
        Self::from_fn(delay, move |_| state.clone())
    }

    pub fn from_fn(
        delay: f64,
        profile: impl Fn(f64) -> SpectralState + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::piecewise(delay, vec![(0.0, Arc::new(profile) as StateProfile)])
    }

    /// Pieces given as `(end, profile)` with strictly increasing ends, the last one `0`.
    pub fn piecewise(delay: f64, pieces: Vec<(f64, StateProfile)>) -> Result<Self> {
        if !(delay > 0.0 && delay.is_finite()) {
            return Err(invalid("delay", format!("must be positive, got {delay}")));
        }
        if pieces.is_empty() {
            return Err(invalid("history", "at least one piece is required"));
        }
        let mut prev = -delay;
        for (end, _) in &pieces {
            if !(*end > prev) {
                return Err(invalid(
                    "history",
                    "piece ends must increase strictly inside (-r, 0]",
                ));
            }
            prev = *end;
        }
        if prev != 0.0 {
            return Err(invalid("history", "the last piece must end at 0"));
        }
        let (ends, pieces) = pieces.into_iter().unzip();
        Ok(Self {
            delay,
            ends,
            pieces,
        })
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    /// Interior points where `h` may jump.
    pub fn jump_points(&self) -> Vec<f64> {
        self.ends[..self.ends.len() - 1].to_vec()
    }

    fn check_range(&self, t: f64) -> Result<()> {
        if t < -self.delay || t > 0.0 || t.is_nan() {
            return Err(Error::BeforeHistory {
                t,
                delay: self.delay,
            });
        }
        Ok(())
    }

    /// `h(t)`.
    pub fn value(&self, t: f64) -> Result<SpectralState> {
        self.check_range(t)?;
        let idx = self.ends.iter().position(|e| t <= *e).unwrap_or(0);
        Ok((self.pieces[idx])(t))
    }

    /// `h(t⁺)`; equal to `h(t)` away from jump points.
    pub fn right_limit(&self, t: f64) -> Result<SpectralState> {
        self.check_range(t)?;
        let idx = self
            .ends
            .iter()
            .position(|e| t < *e)
            .unwrap_or(self.pieces.len() - 1);
        Ok((self.pieces[idx])(t))
    }

    /// `max ‖h(t)‖` over a sampling of `[-r, 0]` that includes both sides of every jump.
    pub fn sup_norm(&self, samples_per_piece: usize) -> f64 {
        let n = samples_per_piece.max(2);
        let mut start = -self.delay;
        let mut best: f64 = 0.0;
        for (end, piece) in self.ends.iter().zip(&self.pieces) {
            for j in 0..n {
                let t = start + (end - start) * j as f64 / (n - 1) as f64;
                best = best.max(piece(t).norm());
            }
            start = *end;
        }
        best
    }
}

type PointwiseFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// A map acting pointwise in space: `(t, x, w, u) ↦ value`.
///
/// Used for the forcing `f(t, ω(t - r, x), u(t, x))`, the memory response
/// `g(ω(t - r, x))` and the impulse maps `G_i(t, ω(t, x), u(t, x))`.
#[derive(Clone, Default)]
pub struct PointwiseMap(Option<PointwiseFn>);

impl fmt::Debug for PointwiseMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_zero() {
            "PointwiseMap(zero)"
        } else {
            "PointwiseMap(..)"
        })
    }
}

impl PointwiseMap {
    pub fn zero() -> Self {
        Self(None)
    }

    pub fn new(f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Some(Arc::new(f)))
    }

    /// A map of the state value alone.
    pub fn of_state(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(move |_, _, w, _| g(w))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_none()
    }

    pub fn eval(&self, t: f64, x: f64, w: f64, u: f64) -> f64 {
        self.0.as_ref().map_or(0.0, |f| f(t, x, w, u))
    }
}

/// Memory kernel `M(t, s)`.
#[derive(Clone)]
pub enum MemoryKernel {
    Zero,
    Constant(f64),
    /// `amplitude · e^{-rate (t - s)}`.
    Exponential {
        amplitude: f64,
        rate: f64,
    },
    /// Arbitrary bounded kernel; integrated in `O(steps)` per step.
    General(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for MemoryKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Exponential { amplitude, rate } => {
                write!(f, "Exponential {{ amplitude: {amplitude}, rate: {rate} }}")
            }
            Self::General(_) => write!(f, "General(..)"),
        }
    }
}

impl MemoryKernel {
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant(c) => *c,
            Self::Exponential { amplitude, rate } => amplitude * (-rate * (t - s)).exp(),
            Self::General(m) => m(t, s),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    /// `(amplitude, rate)` when the kernel is `amplitude · e^{-rate (t - s)}`.
    fn convolution_form(&self) -> Option<(f64, f64)> {
        match self {
            Self::Constant(c) => Some((*c, 0.0)),
            Self::Exponential { amplitude, rate } => Some((*amplitude, *rate)),
            _ => None,
        }
    }
}

/// Growth bound `ρ` with `‖f(t, Φ, u)‖ ≤ ρ(‖Φ‖)`.
#[derive(Clone)]
pub struct GrowthBound(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl fmt::Debug for GrowthBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("GrowthBound(..)")
    }
}

impl GrowthBound {
    pub fn new(rho: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(rho))
    }

    /// `ρ(ξ) = coefficient · ξ^exponent + offset`.
    pub fn power(coefficient: f64, exponent: f64, offset: f64) -> Self {
        Self::new(move |xi| coefficient * xi.powf(exponent) + offset)
    }

    pub fn eval(&self, xi: f64) -> f64 {
        (self.0)(xi)
    }
}

/// Everything that defines the semilinear problem apart from the control.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub history: History,
    pub schedule: ImpulseSchedule,
    pub theta: ActuatorSet,
    pub memory: MemoryKernel,
    /// `g`, fed through the memory kernel.
    pub memory_response: PointwiseMap,
    /// `f(t, ω(t - r, x), u(t, x))`.
    pub forcing: PointwiseMap,
    /// One map per schedule entry.
    pub impulse_maps: Vec<PointwiseMap>,
    pub growth_bound: Option<GrowthBound>,
}

impl ProblemSpec {
    /// A problem with no nonlinearity, memory or impulses.
    pub fn new(history: History, schedule: ImpulseSchedule, theta: ActuatorSet) -> Self {
        let impulse_maps = vec![PointwiseMap::zero(); schedule.len()];
        Self {
            history,
            schedule,
            theta,
            memory: MemoryKernel::Zero,
            memory_response: PointwiseMap::zero(),
            forcing: PointwiseMap::zero(),
            impulse_maps,
            growth_bound: None,
        }
    }

    /// The controlled linear heat equation started from `initial` at `t = 0`.
    ///
    /// The delay is set to the horizon; it is never read since nothing depends on it.
    pub fn linear(theta: ActuatorSet, horizon: f64, initial: SpectralState) -> Result<Self> {
        Ok(Self::new(
            History::constant(horizon, initial)?,
            ImpulseSchedule::without_impulses(horizon)?,
            theta,
        ))
    }

    pub fn with_forcing(mut self, f: PointwiseMap) -> Self {
        self.forcing = f;
        self
    }

    pub fn with_memory(mut self, kernel: MemoryKernel, g: PointwiseMap) -> Self {
        self.memory = kernel;
        self.memory_response = g;
        self
    }

    pub fn with_impulse_maps(mut self, maps: Vec<PointwiseMap>) -> Self {
        self.impulse_maps = maps;
        self
    }

    pub fn with_growth_bound(mut self, rho: GrowthBound) -> Self {
        self.growth_bound = Some(rho);
        self
    }

    pub fn horizon(&self) -> f64 {
        self.schedule.horizon()
    }

    pub fn delay(&self) -> f64 {
        self.history.delay()
    }

    fn memory_active(&self) -> bool {
        !self.memory.is_zero() && !self.memory_response.is_zero()
    }

    /// Whether any forcing term reads the delayed state.
    pub fn reads_delayed_state(&self) -> bool {
        self.memory_active() || !self.forcing.is_zero()
    }

    pub fn validate(&self) -> Result<()> {
        if self.impulse_maps.len() != self.schedule.len() {
            return Err(invalid(
                "impulse maps",
                format!(
                    "{} maps for {} scheduled impulses",
                    self.impulse_maps.len(),
                    self.schedule.len()
                ),
            ));
        }
        if let MemoryKernel::Constant(c) = self.memory {
            if !c.is_finite() {
                return Err(invalid("memory kernel", "constant is not finite"));
            }
        }
        if let MemoryKernel::Exponential { amplitude, rate } = self.memory {
            if !(amplitude.is_finite() && rate.is_finite() && rate >= 0.0) {
                return Err(invalid(
                    "memory kernel",
                    "exponential kernel needs finite amplitude and rate >= 0",
                ));
            }
        }
        Ok(())
    }
}

/// Which one-sided limit to take at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Left,
    Right,
}

/// The control on `[0, T - l]` before any tail is attached.
#[derive(Clone)]
pub enum BaseControl {
    Zero,
    /// `u(t) = Σ v_n e_n` for all `t`.
    Constant(SpectralState),
    /// Coefficients of `u(t)` as a function of time.
    TimeVarying(StateProfile),
}

impl fmt::Debug for BaseControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::TimeVarying(_) => write!(f, "TimeVarying(..)"),
        }
    }
}

impl BaseControl {
    fn coefficients(&self, t: f64, n_modes: usize) -> Option<SpectralState> {
        match self {
            Self::Zero => None,
            Self::Constant(v) => Some(v.clone()),
            Self::TimeVarying(f) => Some(f(t)),
        }
        .inspect(|v| debug_assert_eq!(v.n_modes(), n_modes))
    }
}

/// Piecewise control: the base control up to `T - l`, the synthesized tail on `(T - l, T]`.
#[derive(Debug, Clone)]
pub struct ControlLaw {
    base: BaseControl,
    tail: Option<SynthesizedTail>,
}

impl ControlLaw {
    pub fn new(base: BaseControl) -> Self {
        Self { base, tail: None }
    }

    pub fn zero() -> Self {
        Self::new(BaseControl::Zero)
    }

    pub fn with_tail(base: BaseControl, tail: SynthesizedTail) -> Result<Self> {
        if tail.window().is_none() {
            return Err(invalid("control", "tail solution has no actuation window"));
        }
        Ok(Self {
            base,
            tail: Some(tail),
        })
    }

    pub fn base(&self) -> &BaseControl {
        &self.base
    }

    pub fn tail(&self) -> Option<&SynthesizedTail> {
        self.tail.as_ref()
    }

    /// Start of the synthesized segment, if any.
    pub fn switch_time(&self) -> Option<f64> {
        self.tail
            .as_ref()
            .and_then(|t| t.window())
            .map(|w| w.start())
    }

    fn in_tail(&self, t: f64, side: Side) -> Option<&SynthesizedTail> {
        let tail = self.tail.as_ref()?;
        let start = tail.window()?.start();
        let inside = t > start || (t == start && side == Side::Right);
        inside.then_some(tail)
    }

    fn check_dims(&self, n_modes: usize) -> Result<()> {
        if let BaseControl::Constant(v) = &self.base {
            v.check_len(n_modes)?;
        }
        if let Some(t) = &self.tail {
            t.z().check_len(n_modes)?;
        }
        Ok(())
    }

    /// Coefficients of `B_θ u(t)`.
    pub(crate) fn actuation(&self, t: f64, side: Side, overlap: &DMatrix<f64>) -> DVector<f64> {
        if let Some(tail) = self.in_tail(t, side) {
            let w = tail.window().expect("checked at construction");
            return tail.coefficients_unchecked(w, t).into_vector();
        }
        match self.base.coefficients(t, overlap.nrows()) {
            None => DVector::zeros(overlap.nrows()),
            Some(v) => overlap * v.coeffs(),
        }
    }

    /// `u(t, x)` on the basis grid.
    pub(crate) fn values(&self, t: f64, side: Side, basis: &SineBasis) -> Result<Vec<f64>> {
        if let Some(tail) = self.in_tail(t, side) {
            let w = tail.window().expect("checked at construction");
            return tail.field_values_unchecked(w, t, basis);
        }
        match self.base.coefficients(t, basis.n_modes()) {
            None => Ok(vec![0.0; basis.n_grid()]),
            Some(v) => basis.synthesize_values(&v),
        }
    }
}

/// Which branch of the mild solution produced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentTag {
    History,
    Flow,
    Impulse,
}

impl SegmentTag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::History => "history",
            Self::Flow => "flow",
            Self::Impulse => "impulse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryNode {
    pub t: f64,
    pub tag: SegmentTag,
    /// `ω(t)`; left-continuous at impulse starts.
    pub state: SpectralState,
    /// `ω(t⁺)` where it differs from `ω(t)` (impulse starts and ends, history jumps).
    pub right_limit: Option<SpectralState>,
}

impl TrajectoryNode {
    fn value(&self, side: Side) -> &SpectralState {
        match side {
            Side::Left => &self.state,
            Side::Right => self.right_limit.as_ref().unwrap_or(&self.state),
        }
    }
}

/// Decomposition of the flow forcing at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSample {
    /// `B_θ u(t)`.
    pub actuation: SpectralState,
    /// `∫₀ᵗ M(t, s) g(ω(s - r)) ds`.
    pub memory: SpectralState,
    /// Projected `f(t, ω(t - r), u(t))`.
    pub forcing: SpectralState,
    /// Grid `L²` norm of `f(t, ω(t - r), u(t))`, the larger of the two sides at jumps.
    pub forcing_norm: f64,
    /// `‖ω(t - r)‖` read for `f`; `None` when `f` is zero.
    pub delayed_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct NodeSample {
    g_left_norm: f64,
    g_right_norm: f64,
    forcing: Option<ForcingSample>,
    /// `(‖f‖, ‖ω(t - r)‖)` for every side at which the forcing was evaluated.
    growth: Vec<(f64, Option<f64>)>,
}

/// States on `[-r, T]` with delay lookup support.
#[derive(Debug, Clone)]
pub struct Trajectory {
    history: History,
    nodes: Vec<TrajectoryNode>,
    /// Index of the node at `t = 0`.
    origin: usize,
    /// One entry per node from `origin` on.
    samples: Vec<NodeSample>,
}

impl Trajectory {
    pub fn nodes(&self) -> &[TrajectoryNode] {
        &self.nodes
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn delay(&self) -> f64 {
        self.history.delay()
    }

    pub fn final_node(&self) -> &TrajectoryNode {
        self.nodes.last().expect("trajectory always holds t = 0")
    }

    pub fn final_time(&self) -> f64 {
        self.final_node().t
    }

    /// Nodes with `t ≥ 0`.
    pub fn live_nodes(&self) -> &[TrajectoryNode] {
        &self.nodes[self.origin..]
    }

    /// Node at exactly `t`, if it is on the grid.
    pub fn node_at(&self, t: f64) -> Option<&TrajectoryNode> {
        self.nodes.iter().find(|n| n.t == t)
    }

    /// Forcing decomposition recorded at flow nodes, paired with their times.
    pub fn forcing_samples(&self) -> impl Iterator<Item = (f64, &ForcingSample)> {
        self.live_nodes()
            .iter()
            .zip(&self.samples)
            .filter_map(|(n, s)| s.forcing.as_ref().map(|f| (n.t, f)))
    }

    /// `ω(t)` for `t ∈ [-r, T_computed]`, interpolating linearly between nodes.
    pub fn lookup(&self, t: f64) -> Result<SpectralState> {
        self.lookup_side(t, Side::Left)
    }

    pub(crate) fn lookup_side(&self, t: f64, side: Side) -> Result<SpectralState> {
        let delay = self.delay();
        if t.is_nan() || t < -delay - TIME_SNAP {
            return Err(Error::BeforeHistory { t, delay });
        }
        if t <= TIME_SNAP {
            if t.abs() <= TIME_SNAP {
                return Ok(self.nodes[self.origin].value(side).clone());
            }
            let mut tt = t.max(-delay);
            if let Some(j) = self
                .history
                .jump_points()
                .into_iter()
                .find(|j| (tt - j).abs() <= TIME_SNAP)
            {
                tt = j;
            }
            return match side {
                Side::Left => self.history.value(tt),
                Side::Right => self.history.right_limit(tt),
            };
        }
        let live = self.live_nodes();
        let last = live[live.len() - 1].t;
        if t > last + TIME_SNAP {
            return Err(Error::NotYetComputed { t, last });
        }
        let idx = live.partition_point(|n| n.t < t);
        for k in [idx.saturating_sub(1), idx.min(live.len() - 1)] {
            if (live[k].t - t).abs() <= TIME_SNAP {
                return Ok(live[k].value(side).clone());
            }
        }
        let (a, b) = (&live[idx - 1], &live[idx]);
        let w = (t - a.t) / (b.t - a.t);
        let left = a.value(Side::Right);
        Ok(SpectralState::from_vector_unchecked(
            left.coeffs() * (1.0 - w) + b.state.coeffs() * w,
        ))
    }

    /// CSV with columns `t,segment,c_1..c_N`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.nodes[0].state.n_modes();
        write!(out, "t,segment")?;
        for k in 1..=n {
            write!(out, ",c_{k}")?;
        }
        writeln!(out)?;
        for node in &self.nodes {
            write!(out, "{:.8e},{}", node.t, node.tag.as_str())?;
            for c in node.state.coeffs().iter() {
                write!(out, ",{c:.8e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Physical snapshots `t,x,value` at the nodes closest to the requested times.
    pub fn write_snapshots<W: Write>(
        &self,
        mut out: W,
        basis: &SineBasis,
        times: &[f64],
    ) -> io::Result<()> {
        writeln!(out, "t,x,value")?;
        for &t in times {
            let node = self
                .nodes
                .iter()
                .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
                .expect("non-empty");
            let values = basis
                .synthesize_values(&node.state)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
            for (x, v) in basis.nodes().iter().zip(values) {
                writeln!(out, "{:.8e},{x:.8e},{v:.8e}", node.t)?;
            }
        }
        Ok(())
    }

    /// Trapezoid sum of `e^{-(T - s)} [∫₀ˢ |M(s, m)| ‖g(ω(m - r))‖ dm + ρ(‖ω(s - r)‖)]`
    /// over the grid nodes in `[start, T]`.
    ///
    /// Without a growth bound the observed `‖f‖` at each node stands in for `ρ`.
    pub fn tail_forcing_bound(&self, spec: &ProblemSpec, start: f64) -> Result<f64> {
        let live = self.live_nodes();
        let horizon = self.final_time();
        let first = live.partition_point(|n| n.t < start - TIME_SNAP);
        let mut integrand = Vec::with_capacity(live.len() - first);
        for k in first..live.len() {
            let s = live[k].t;
            let mut inner = 0.0;
            if spec.memory_active() {
                for m in 0..k {
                    let h = live[m + 1].t - live[m].t;
                    inner += 0.5
                        * h
                        * (spec.memory.eval(s, live[m].t).abs() * self.samples[m].g_right_norm
                            + spec.memory.eval(s, live[m + 1].t).abs()
                                * self.samples[m + 1].g_left_norm);
                }
            }
            let growth = match &spec.growth_bound {
                Some(rho) => rho.eval(self.lookup(s - spec.delay())?.norm()),
                None => self.samples[k]
                    .forcing
                    .as_ref()
                    .map_or(0.0, |f| f.forcing_norm),
            };
            integrand.push((s, (-(horizon - s)).exp() * (inner + growth)));
        }
        Ok(integrand
            .windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum())
    }
}

/// `ω(t)` read from a trajectory: history values for `t ≤ 0`, linear
/// interpolation between stored nodes for `t > 0`.
pub fn delay_lookup(trajectory: &Trajectory, t: f64) -> Result<SpectralState> {
    trajectory.lookup(t)
}

/// Outcome of checking `‖f(t, ω(t - r), u(t))‖ ≤ ρ(‖ω(t - r)‖)` along a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthReport {
    /// `max_t ‖f‖ - ρ(‖ω(t - r)‖)`; nonpositive means the bound held.
    pub margin: f64,
    pub worst_time: f64,
}

impl GrowthReport {
    pub fn satisfied(&self) -> bool {
        self.margin <= 0.0
    }
}

pub fn check_growth_bound(trajectory: &Trajectory, spec: &ProblemSpec) -> Result<GrowthReport> {
    let rho = spec
        .growth_bound
        .as_ref()
        .ok_or_else(|| invalid("growth bound", "problem has no growth bound"))?;
    let mut report = GrowthReport {
        margin: f64::NEG_INFINITY,
        worst_time: 0.0,
    };
    for (node, sample) in trajectory.live_nodes().iter().zip(&trajectory.samples) {
        for &(forcing, delayed) in &sample.growth {
            let delayed = match delayed {
                Some(d) => d,
                None => trajectory.lookup(node.t - spec.delay())?.norm(),
            };
            let margin = forcing - rho.eval(delayed);
            if margin > report.margin {
                report = GrowthReport {
                    margin,
                    worst_time: node.t,
                };
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeKind {
    Flow,
    Impulse(usize),
}

#[derive(Debug, Clone, Copy)]
struct PlannedNode {
    t: f64,
    kind: NodeKind,
    breakpoint: bool,
    opens: Option<usize>,
    closes: Option<usize>,
}

/// Node times for `[0, T]`: uniform sub-steps of at most `dt` between breakpoints.
fn plan_nodes(spec: &ProblemSpec, dt: f64, extra: &[f64]) -> Vec<PlannedNode> {
    let horizon = spec.horizon();
    let delay = spec.delay();
    // (time, priority): exact schedule times win over delay images when merged.
    let mut marks: Vec<(f64, u8)> = vec![(0.0, 2), (horizon, 2)];
    for &(t, s) in spec.schedule.pairs() {
        marks.push((t, 2));
        marks.push((s, 2));
        if spec.reads_delayed_state() {
            marks.push((t + delay, 0));
            marks.push((s + delay, 0));
        }
    }
    marks.extend(extra.iter().map(|&t| (t, 1)));
    if spec.reads_delayed_state() {
        // The solution's derivative jumps at 0, so delayed reads kink at r.
        marks.push((delay, 0));
        marks.extend(spec.history.jump_points().iter().map(|&j| (j + delay, 0)));
    }
    marks.retain(|(t, _)| *t >= 0.0 && *t <= horizon);
    marks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points: Vec<(f64, u8)> = Vec::new();
    for m in marks {
        match points.last_mut() {
            Some(last) if m.0 - last.0 <= TIME_SNAP => {
                if m.1 > last.1 {
                    *last = m;
                }
            }
            _ => points.push(m),
        }
    }

    let classify = |t: f64, breakpoint: bool| {
        let kind = spec
            .schedule
            .interval_containing(t)
            .map_or(NodeKind::Flow, NodeKind::Impulse);
        let (opens, closes) = if breakpoint {
            let pairs = spec.schedule.pairs();
            (
                pairs.iter().position(|p| p.0 == t),
                pairs.iter().position(|p| p.1 == t),
            )
        } else {
            (None, None)
        };
        PlannedNode {
            t,
            kind,
            breakpoint,
            opens,
            closes,
        }
    };

    let mut nodes = vec![classify(0.0, true)];
    for w in points.windows(2) {
        let (a, b) = (w[0].0, w[1].0);
        let steps = ((b - a) / dt - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / steps as f64;
        for j in 1..steps {
            nodes.push(classify(a + j as f64 * h, false));
        }
        nodes.push(classify(b, true));
    }
    nodes
}

fn history_nodes(history: &History, dt: f64) -> Result<Vec<TrajectoryNode>> {
    let mut points = vec![-history.delay()];
    points.extend(history.jump_points());
    points.push(0.0);
    let mut nodes = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let steps = ((b - a) / dt - 1e-9).ceil().max(1.0) as usize;
        for j in 0..steps {
            let t = a + (b - a) * j as f64 / steps as f64;
            let state = history.value(t)?;
            let right = history.right_limit(t)?;
            nodes.push(TrajectoryNode {
                t,
                tag: SegmentTag::History,
                right_limit: (right != state).then_some(right),
                state,
            });
        }
    }
    Ok(nodes)
}

/// Trapezoid accumulation of `∫₀ᵗ M(t, s) g_s ds` over node samples.
enum MemoryIntegral {
    Off,
    Running {
        amplitude: f64,
        rate: f64,
        value: DVector<f64>,
        last_t: f64,
        last_right: DVector<f64>,
    },
    General {
        kernel: MemoryKernel,
        times: Vec<f64>,
        left: Vec<DVector<f64>>,
        right: Vec<DVector<f64>>,
        value: DVector<f64>,
    },
}

impl MemoryIntegral {
    fn new(
        kernel: &MemoryKernel,
        active: bool,
        g0_left: DVector<f64>,
        g0_right: DVector<f64>,
    ) -> Self {
        if !active {
            return Self::Off;
        }
        let zero = DVector::zeros(g0_left.len());
        match kernel.convolution_form() {
            Some((amplitude, rate)) => Self::Running {
                amplitude,
                rate,
                value: zero,
                last_t: 0.0,
                last_right: g0_right,
            },
            None => Self::General {
                kernel: kernel.clone(),
                times: vec![0.0],
                left: vec![g0_left],
                right: vec![g0_right],
                value: zero,
            },
        }
    }

    fn push(&mut self, t: f64, g_left: DVector<f64>, g_right: DVector<f64>) {
        match self {
            Self::Off => {}
            Self::Running {
                amplitude,
                rate,
                value,
                last_t,
                last_right,
            } => {
                let h = t - *last_t;
                let e = (-*rate * h).exp();
                *value = &*value * e + (&*last_right * e + &g_left) * (*amplitude * 0.5 * h);
                *last_t = t;
                *last_right = g_right;
            }
            Self::General {
                kernel,
                times,
                left,
                right,
                value,
            } => {
                times.push(t);
                left.push(g_left);
                right.push(g_right);
                let mut acc = DVector::zeros(value.len());
                for k in 0..times.len() - 1 {
                    let h = times[k + 1] - times[k];
                    acc += &right[k] * (0.5 * h * kernel.eval(t, times[k]))
                        + &left[k + 1] * (0.5 * h * kernel.eval(t, times[k + 1]));
                }
                *value = acc;
            }
        }
    }

    fn value(&self) -> Option<&DVector<f64>> {
        match self {
            Self::Off => None,
            Self::Running { value, .. } | Self::General { value, .. } => Some(value),
        }
    }
}

/// `ω_{k+1} = D(h) ω_k + h/2 (D(h) F_k + F_{k+1})`.
pub(crate) fn exponential_trapezoid_step(
    h: f64,
    state: &DVector<f64>,
    forcing_start: &DVector<f64>,
    forcing_end: &DVector<f64>,
) -> DVector<f64> {
    let decay = decay_factors(h, state.len());
    decay.component_mul(state) + (decay.component_mul(forcing_start) + forcing_end) * (0.5 * h)
}

/// Incremental evaluator of the mild solution; can be advanced in phases
/// with different controls.
pub struct Simulator<'a> {
    spec: &'a ProblemSpec,
    basis: SineBasis,
    overlap: DMatrix<f64>,
    plan: Vec<PlannedNode>,
    /// Plan index of the last committed node.
    cursor: usize,
    traj: Trajectory,
    memory: MemoryIntegral,
    /// Left-side forcing at the cursor, reusable as its right side away from breakpoints.
    cached_forcing: Option<DVector<f64>>,
    /// Trajectory index of the node `t_i` for each opened impulse.
    impulse_seed: Option<usize>,
    max_delay_read: f64,
}

impl<'a> Simulator<'a> {
    /// `breakpoints` are extra times the grid must hit exactly (e.g. `T - l`).
    pub fn new(
        spec: &'a ProblemSpec,
        basis: SineBasis,
        dt: f64,
        breakpoints: &[f64],
    ) -> Result<Self> {
        spec.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {dt}")));
        }
        if spec.reads_delayed_state() && dt > spec.delay() {
            return Err(invalid(
                "dt",
                format!("step {dt} exceeds the delay {}", spec.delay()),
            ));
        }
        let n = basis.n_modes();
        let h0 = spec.history.value(0.0)?;
        h0.check_len(n)?;
        let overlap = overlap_matrix(&spec.theta, n);
        let plan = plan_nodes(spec, dt, breakpoints);

        let mut nodes = history_nodes(&spec.history, dt)?;
        let origin = nodes.len();
        nodes.push(TrajectoryNode {
            t: 0.0,
            tag: SegmentTag::History,
            state: h0,
            right_limit: None,
        });
        let traj = Trajectory {
            history: spec.history.clone(),
            nodes,
            origin,
            samples: Vec::new(),
        };
        let mut sim = Self {
            spec,
            basis,
            overlap,
            plan,
            cursor: 0,
            traj,
            memory: MemoryIntegral::Off,
            cached_forcing: None,
            impulse_seed: None,
            max_delay_read: f64::NEG_INFINITY,
        };
        let (g_left, g_right, sample) = sim.memory_samples(0.0, true)?;
        sim.traj.samples.push(sample);
        sim.memory = MemoryIntegral::new(&spec.memory, spec.memory_active(), g_left, g_right);
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.plan[self.cursor].t
    }

    pub fn state(&self) -> &SpectralState {
        &self.traj.final_node().state
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }

    pub fn basis(&self) -> &SineBasis {
        &self.basis
    }

    pub fn overlap(&self) -> &DMatrix<f64> {
        &self.overlap
    }

    /// Latest time at which the delayed state has been read.
    pub fn max_delay_read(&self) -> f64 {
        self.max_delay_read
    }

    /// Grid times in `[from, to]`.
    pub fn grid_times(&self, from: f64, to: f64) -> Vec<f64> {
        self.plan
            .iter()
            .map(|p| p.t)
            .filter(|t| *t >= from - TIME_SNAP && *t <= to + TIME_SNAP)
            .collect()
    }

    /// Advances to the grid node at `t_stop` using `control`.
    pub fn advance_to(&mut self, t_stop: f64, control: &ControlLaw) -> Result<()> {
        control.check_dims(self.basis.n_modes())?;
        let Some(target) = self
            .plan
            .iter()
            .position(|p| (p.t - t_stop).abs() <= TIME_SNAP)
        else {
            return Err(invalid("stop time", format!("{t_stop} is not a grid node")));
        };
        if target < self.cursor {
            return Err(invalid(
                "stop time",
                format!("{t_stop} precedes the current time {}", self.time()),
            ));
        }
        // The control may have changed since the last phase.
        self.cached_forcing = None;
        while self.cursor < target {
            self.step(control)?;
        }
        Ok(())
    }

    fn read_delayed(&mut self, t: f64, side: Side) -> Result<SpectralState> {
        let tau = t - self.spec.delay();
        self.max_delay_read = self.max_delay_read.max(tau);
        self.traj.lookup_side(tau, side)
    }

    fn apply_map(
        &self,
        map: &PointwiseMap,
        t: f64,
        state: &SpectralState,
        control: &[f64],
    ) -> Result<(SpectralState, f64)> {
        let w = self.basis.synthesize_values(state)?;
        let values: Vec<f64> = self
            .basis
            .nodes()
            .iter()
            .zip(w.iter().zip(control))
            .map(|(x, (w, u))| map.eval(t, *x, *w, *u))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t });
        }
        let norm = trapezoid_l2(&values);
        Ok((self.basis.project_values(&values)?, norm))
    }

    /// Both one-sided samples of `g(ω(t - r))` at a node.
    fn memory_samples(
        &mut self,
        t: f64,
        breakpoint: bool,
    ) -> Result<(DVector<f64>, DVector<f64>, NodeSample)> {
        let n = self.basis.n_modes();
        if !self.spec.memory_active() {
            return Ok((DVector::zeros(n), DVector::zeros(n), NodeSample::default()));
        }
        let zeros = vec![0.0; self.basis.n_grid()];
        let left_state = self.read_delayed(t, Side::Left)?;
        let (left, _) = self.apply_map(&self.spec.memory_response, t, &left_state, &zeros)?;
        let right = if breakpoint {
            let right_state = self.read_delayed(t, Side::Right)?;
            self.apply_map(&self.spec.memory_response, t, &right_state, &zeros)?
                .0
        } else {
            left.clone()
        };
        let sample = NodeSample {
            g_left_norm: left.norm(),
            g_right_norm: right.norm(),
            forcing: None,
            growth: Vec::new(),
        };
        Ok((left.into_vector(), right.into_vector(), sample))
    }

    /// Flow forcing `B_θ u + ∫ M g + f` at the cursor-relative node `t`.
    fn forcing(
        &mut self,
        t: f64,
        side: Side,
        control: &ControlLaw,
    ) -> Result<(DVector<f64>, ForcingSample)> {
        let n = self.basis.n_modes();
        let actuation = control.actuation(t, side, &self.overlap);
        let memory = self
            .memory
            .value()
            .cloned()
            .unwrap_or_else(|| DVector::zeros(n));
        let (f, forcing_norm, delayed_norm) = if self.spec.forcing.is_zero() {
            (DVector::zeros(n), 0.0, None)
        } else {
            let delayed = self.read_delayed(t, side)?;
            let u = control.values(t, side, &self.basis)?;
            let (f, norm) = self.apply_map(&self.spec.forcing, t, &delayed, &u)?;
            (f.into_vector(), norm, Some(delayed.norm()))
        };
        let mut total = actuation.clone();
        if self.spec.memory_active() {
            total += &memory;
        }
        if !self.spec.forcing.is_zero() {
            total += &f;
        }
        let sample = ForcingSample {
            actuation: SpectralState::from_vector_unchecked(actuation),
            memory: SpectralState::from_vector_unchecked(memory),
            forcing: SpectralState::from_vector_unchecked(f),
            forcing_norm,
            delayed_norm,
        };
        Ok((total, sample))
    }

    fn record_forcing(&mut self, node: usize, sample: ForcingSample) {
        let entry = &mut self.traj.samples[node - self.traj.origin];
        entry
            .growth
            .push((sample.forcing_norm, sample.delayed_norm));
        let slot = &mut entry.forcing;
        match slot {
            Some(existing) => {
                existing.forcing_norm = existing.forcing_norm.max(sample.forcing_norm)
            }
            None => *slot = Some(sample),
        }
    }

    fn solve_impulse(
        &self,
        index: usize,
        t: f64,
        seed: &SpectralState,
        control: &[f64],
    ) -> Result<SpectralState> {
        let map = &self.spec.impulse_maps[index];
        let (start, end) = self.spec.schedule.pairs()[index];
        let mut w = seed.clone();
        let mut residual = f64::INFINITY;
        for iteration in 0..=IMPULSE_MAX_ITERATIONS {
            let (gw, _) =
                self.apply_map(map, t, &w, control)
                    .map_err(|_| Error::ImpulseDivergence {
                        index: index + 1,
                        start,
                        end,
                        t,
                        residual: f64::INFINITY,
                        iterations: iteration,
                    })?;
            residual = (&gw - &w).norm();
            if residual <= IMPULSE_TOLERANCE {
                return Ok(w);
            }
            if !residual.is_finite() {
                break;
            }
            w = gw;
        }
        Err(Error::ImpulseDivergence {
            index: index + 1,
            start,
            end,
            t,
            residual,
            iterations: IMPULSE_MAX_ITERATIONS,
        })
    }

    fn step(&mut self, control: &ControlLaw) -> Result<()> {
        let current = self.plan[self.cursor];
        let next = self.plan[self.cursor + 1];
        let (t0, t1) = (current.t, next.t);
        let current_idx = self.traj.nodes.len() - 1;

        // Forcing at t0 must see the memory integral before it advances.
        let start_forcing = match next.kind {
            NodeKind::Flow => Some(match self.cached_forcing.take() {
                Some(f) if !current.breakpoint => f,
                _ => {
                    let (f, s) = self.forcing(t0, Side::Right, control)?;
                    self.record_forcing(current_idx, s);
                    f
                }
            }),
            NodeKind::Impulse(_) => {
                self.cached_forcing = None;
                None
            }
        };

        let (g_left, g_right, sample) = self.memory_samples(t1, next.breakpoint)?;
        self.memory.push(t1, g_left, g_right);

        let (state, tag, arriving) = match (next.kind, start_forcing) {
            (NodeKind::Flow, Some(start_forcing)) => {
                let (end_forcing, end_sample) = self.forcing(t1, Side::Left, control)?;
                let y0 = self.traj.nodes[current_idx].value(Side::Right).coeffs();
                let y1 = exponential_trapezoid_step(t1 - t0, y0, &start_forcing, &end_forcing);
                if y1.iter().any(|v| !v.is_finite()) {
                    return Err(Error::BlowUp { t: t1 });
                }
                self.cached_forcing = Some(end_forcing);
                (
                    SpectralState::from_vector_unchecked(y1),
                    SegmentTag::Flow,
                    Some(end_sample),
                )
            }
            (NodeKind::Impulse(i), _) => {
                let seed_idx = self
                    .impulse_seed
                    .expect("impulse nodes follow their opening node");
                let seed = self.traj.nodes[seed_idx].state.clone();
                let u = self.control_values(t1, Side::Left, control, i)?;
                (
                    self.solve_impulse(i, t1, &seed, &u)?,
                    SegmentTag::Impulse,
                    None,
                )
            }
            (NodeKind::Flow, None) => unreachable!("flow steps always have a start forcing"),
        };

        self.traj.nodes.push(TrajectoryNode {
            t: t1,
            tag,
            state,
            right_limit: None,
        });
        self.traj.samples.push(sample);
        let idx = self.traj.nodes.len() - 1;
        if let Some(s) = arriving {
            self.record_forcing(idx, s);
        }
        self.cursor += 1;

        if let Some(i) = next.opens {
            self.impulse_seed = Some(idx);
            let (start, end) = self.spec.schedule.pairs()[i];
            let u = self.control_values(t1, Side::Right, control, i)?;
            let state = self.traj.nodes[idx].state.clone();
            let right = if start < end {
                self.solve_impulse(i, t1, &state, &u)?
            } else {
                self.apply_map(&self.spec.impulse_maps[i], t1, &state, &u)?
                    .0
            };
            self.traj.nodes[idx].right_limit = Some(right);
        }
        if let Some(i) = next.closes {
            let (start, end) = self.spec.schedule.pairs()[i];
            if start < end {
                let u = self.control_values(t1, Side::Left, control, i)?;
                let state = self.traj.nodes[idx].state.clone();
                let restart = self
                    .apply_map(&self.spec.impulse_maps[i], t1, &state, &u)?
                    .0;
                self.traj.nodes[idx].right_limit = Some(restart);
            }
            self.impulse_seed = None;
        }
        Ok(())
    }

    fn control_values(
        &self,
        t: f64,
        side: Side,
        control: &ControlLaw,
        impulse: usize,
    ) -> Result<Vec<f64>> {
        if self.spec.impulse_maps[impulse].is_zero() {
            return Ok(vec![0.0; self.basis.n_grid()]);
        }
        control.values(t, side, &self.basis)
    }
}

/// Simulates the mild solution on `[0, T]` under `control`.
pub fn simulate_mild(
    spec: &ProblemSpec,
    control: &ControlLaw,
    basis: SineBasis,
    dt: f64,
) -> Result<Trajectory> {
    let extra: Vec<f64> = control.switch_time().into_iter().collect();
    let mut sim = Simulator::new(spec, basis, dt, &extra)?;
    sim.advance_to(spec.horizon(), control)?;
    Ok(sim.into_trajectory())
}

/// `∫₀ᵗ M(t, s) g(ω(s - r)) ds` by the trapezoid rule over the trajectory nodes.
pub fn memory_term(
    trajectory: &Trajectory,
    spec: &ProblemSpec,
    basis: &SineBasis,
    t: f64,
) -> Result<SpectralState> {
    let n = basis.n_modes();
    let mut acc = DVector::zeros(n);
    if !spec.memory_active() {
        return Ok(SpectralState::from_vector_unchecked(acc));
    }
    let zeros = vec![0.0; basis.n_grid()];
    let g = |s: f64, right: bool| -> Result<DVector<f64>> {
        let side = if right { Side::Right } else { Side::Left };
        let w = basis.synthesize_values(&trajectory.lookup_side(s - spec.delay(), side)?)?;
        let values: Vec<f64> = basis
            .nodes()
            .iter()
            .zip(w.iter().zip(&zeros))
            .map(|(x, (w, u))| spec.memory_response.eval(s, *x, *w, *u))
            .collect();
        Ok(basis.project_values(&values)?.into_vector())
    };
    let times: Vec<f64> = trajectory
        .live_nodes()
        .iter()
        .map(|n| n.t)
        .filter(|s| *s <= t + TIME_SNAP)
        .collect();
    for w in times.windows(2) {
        let h = w[1] - w[0];
        acc += g(w[0], true)? * (0.5 * h * spec.memory.eval(t, w[0]))
            + g(w[1], false)? * (0.5 * h * spec.memory.eval(t, w[1]));
    }
    Ok(SpectralState::from_vector_unchecked(acc))
}
