//! Scenario files.
//!
//! A scenario is a TOML document. Every nonlinear ingredient is chosen from a
//! small set of named presets with numeric parameters, for example
//! `f = { preset = "sine", scale = 0.1 }`. Reals may be written as literals
//! or as multiples of π: `"pi"`, `"-pi/2"`, `"7pi/8"`, `"2*pi"`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use heatsteer::{
    ActuatorSet, BaseControl, Discretization, GrowthBound, History, ImpulseSchedule, MemoryKernel,
    PhysicalField, PointwiseMap, ProblemSpec, Scenario, SineBasis, SpectralState, StateProfile,
    SteeringMode, SteeringPlan,
};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A real number that remembers how it was written.
#[derive(Debug, Clone)]
pub struct Real {
    value: f64,
    text: Option<String>,
}

impl Real {
    pub fn new(value: f64) -> Self {
        Self { value, text: None }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        Ok(Self {
            value: parse_real(text)?,
            text: Some(text.to_string()),
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

impl From<f64> for Real {
    fn from(value: f64) -> Self {
        Self::new(value)
    }
}

impl PartialEq for Real {
    fn eq(&self, other: &Self) -> bool {
        self.value.to_bits() == other.value.to_bits()
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.text {
            Some(t) => write!(f, "{t} (= {})", self.value),
            None => write!(f, "{}", self.value),
        }
    }
}

fn parse_real(text: &str) -> Result<f64, String> {
    let s: String = text
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '*')
        .collect::<String>()
        .to_ascii_lowercase();
    let unreadable = || {
        format!(
            "cannot read {text:?} as a number; use a literal or a multiple of pi like \"7pi/8\""
        )
    };
    let value = if let Ok(v) = s.parse::<f64>() {
        v
    } else {
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n, Some(d)),
            None => (s.as_str(), None),
        };
        let numerator = match num.strip_suffix("pi") {
            Some("") | Some("+") => PI,
            Some("-") => -PI,
            Some(c) => c.parse::<f64>().map_err(|_| unreadable())? * PI,
            None => num.parse::<f64>().map_err(|_| unreadable())?,
        };
        let denominator = match den {
            Some(d) => d.parse::<f64>().map_err(|_| unreadable())?,
            None => 1.0,
        };
        if denominator == 0.0 {
            return Err(format!("division by zero in {text:?}"));
        }
        numerator / denominator
    };
    if !value.is_finite() {
        return Err(format!("{text:?} is not a finite number"));
    }
    Ok(value)
}

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match &self.text {
            Some(t) => serializer.serialize_str(t),
            None => serializer.serialize_f64(self.value),
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct RealVisitor;

        impl Visitor<'_> for RealVisitor {
            type Value = Real;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or a string such as \"7pi/8\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Real, E> {
                Ok(Real::new(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Real, E> {
                Ok(Real::new(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Real, E> {
                Ok(Real::new(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Real, E> {
                Real::parse(v).map_err(E::custom)
            }
        }

        deserializer.deserialize_any(RealVisitor)
    }
}

/// A preset parameter: a single real or a list of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Scalar(Real),
    List(Vec<Real>),
}

/// A named preset with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub preset: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, Param>,
}

impl Preset {
    pub fn named(name: &str) -> Self {
        Self {
            preset: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params
            .insert(key.to_string(), Param::Scalar(Real::new(value)));
        self
    }

    pub fn with_list(mut self, key: &str, values: &[f64]) -> Self {
        let list = values.iter().map(|v| Real::new(*v)).collect();
        self.params.insert(key.to_string(), Param::List(list));
        self
    }
}

impl Default for Preset {
    fn default() -> Self {
        Self::named("zero")
    }
}

fn zero_preset() -> Preset {
    Preset::default()
}

/// Parameter access for one preset, with the keys it accepts.
struct Args<'a> {
    preset: &'a Preset,
}

impl<'a> Args<'a> {
    fn new(preset: &'a Preset, known: &[&str]) -> Result<Self, String> {
        for key in preset.params.keys() {
            if !known.contains(&key.as_str()) {
                let accepted = if known.is_empty() {
                    "none".to_string()
                } else {
                    known.join(", ")
                };
                return Err(format!(
                    "unknown parameter '{key}' for preset '{}' (accepted: {accepted})",
                    preset.preset
                ));
            }
        }
        Ok(Self { preset })
    }

    fn real(&self, key: &str, default: Option<f64>) -> Result<f64, String> {
        match (self.preset.params.get(key), default) {
            (Some(Param::Scalar(r)), _) => Ok(r.value()),
            (Some(Param::List(_)), _) => Err(format!("parameter '{key}' must be a single number")),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(format!(
                "preset '{}' needs parameter '{key}'",
                self.preset.preset
            )),
        }
    }

    fn list(&self, key: &str) -> Result<Vec<f64>, String> {
        match self.preset.params.get(key) {
            Some(Param::List(v)) => Ok(v.iter().map(Real::value).collect()),
            Some(Param::Scalar(r)) => Ok(vec![r.value()]),
            None => Err(format!(
                "preset '{}' needs parameter '{key}'",
                self.preset.preset
            )),
        }
    }

    fn mode(&self) -> Result<usize, String> {
        let k = self.real("mode", Some(1.0))?;
        if k < 1.0 || k.fract() != 0.0 || k > u32::MAX as f64 {
            return Err(format!("mode must be a positive integer, got {k}"));
        }
        Ok(k as usize)
    }
}

fn unknown_preset(name: &str, known: &[&str]) -> String {
    format!("unknown preset '{name}' (known: {})", known.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// Every `α` with every `l`.
    #[default]
    Product,
    /// `α` and `l` lists zipped.
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Linear,
    #[default]
    Semilinear,
}

impl From<ModeKind> for SteeringMode {
    fn from(m: ModeKind) -> Self {
        match m {
            ModeKind::Linear => SteeringMode::Linear,
            ModeKind::Semilinear => SteeringMode::Semilinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub modes: usize,
    pub grid_points: usize,
    pub dt: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub horizon: Real,
    pub delay: Real,
    /// Actuator intervals inside `[0, π]`.
    pub actuator: Vec<(Real, Real)>,
    #[serde(default = "zero_preset")]
    pub history: Preset,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    #[serde(default = "zero_preset")]
    pub f: Preset,
    #[serde(default = "zero_preset")]
    pub g: Preset,
    #[serde(default = "zero_preset")]
    pub memory: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_bound: Option<Preset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseConfig {
    pub start: Real,
    pub end: Real,
    pub map: Preset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringConfig {
    #[serde(deserialize_with = "one_or_many")]
    pub alpha: Vec<Real>,
    #[serde(deserialize_with = "one_or_many")]
    pub tail: Vec<Real>,
    #[serde(default)]
    pub grid: GridKind,
    #[serde(default)]
    pub mode: ModeKind,
    #[serde(default = "zero_preset")]
    pub base_control: Preset,
}

fn one_or_many<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<Real>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Real),
        Many(Vec<Real>),
    }
    Ok(match OneOrMany::deserialize(deserializer)? {
        OneOrMany::One(r) => vec![r],
        OneOrMany::Many(v) => v,
    })
}

/// A scenario file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub discretization: DiscretizationConfig,
    pub problem: ProblemConfig,
    pub target: Preset,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub impulses: Vec<ImpulseConfig>,
    pub steering: SteeringConfig,
}

/// One violated requirement and the field responsible for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// A validated scenario together with its `(α, l)` lists.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub alphas: Vec<f64>,
    pub tails: Vec<f64>,
    pub grid: GridKind,
}

impl Prepared {
    /// The `(α, l)` cells of the sweep, ordered by `α` descending, then `l` descending.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        let mut pairs: Vec<(f64, f64)> = match self.grid {
            GridKind::Product => self
                .alphas
                .iter()
                .flat_map(|&a| self.tails.iter().map(move |&l| (a, l)))
                .collect(),
            GridKind::Paired => self
                .alphas
                .iter()
                .copied()
                .zip(self.tails.iter().copied())
                .collect(),
        };
        pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(y.1.total_cmp(&x.1)));
        pairs
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Read {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|e| LoadError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Builds the scenario, collecting every violated requirement.
    pub fn prepare(&self) -> Result<Prepared, Vec<Violation>> {
        let mut v = Violations::default();
        let d = &self.discretization;
        let p = &self.problem;

        let basis = v.check("discretization", SineBasis::new(d.modes, d.grid_points));
        let dt = d.dt.value();
        if !(dt > 0.0) {
            v.push("discretization.dt", format!("must be positive, got {dt}"));
        }
        let horizon = p.horizon.value();
        if !(horizon > 0.0) {
            v.push(
                "problem.horizon",
                format!("must be positive, got {horizon}"),
            );
        }
        let delay = p.delay.value();
        if !(delay > 0.0) {
            v.push("problem.delay", format!("must be positive, got {delay}"));
        }
        let theta = v.check(
            "problem.actuator",
            ActuatorSet::new(
                p.actuator
                    .iter()
                    .map(|(a, b)| (a.value(), b.value()))
                    .collect(),
            ),
        );
        let pairs = self
            .impulses
            .iter()
            .map(|i| (i.start.value(), i.end.value()))
            .collect();
        let schedule = v.check("impulses", ImpulseSchedule::new(pairs, horizon));

        let n = d.modes;
        let history = basis
            .as_ref()
            .and_then(|b| v.field("problem.history", history(&p.history, delay, b)));
        let target = basis
            .as_ref()
            .and_then(|b| v.field("target", state_preset(&self.target, b)));
        let base_control = basis.as_ref().and_then(|b| {
            let preset = &self.steering.base_control;
            v.field(
                "steering.base_control",
                state_preset(preset, b).map(|s| state_to_control(preset, s)),
            )
        });
        let nl = &self.nonlinearity;
        let forcing = v.field("nonlinearity.f", pointwise(&nl.f));
        let response = v.field("nonlinearity.g", pointwise(&nl.g));
        let memory = v.field("nonlinearity.memory", memory_kernel(&nl.memory));
        let growth = match &nl.growth_bound {
            Some(g) => v.field("nonlinearity.growth_bound", growth_bound(g).map(Some)),
            None => Some(None),
        };
        let maps: Vec<Option<PointwiseMap>> = self
            .impulses
            .iter()
            .enumerate()
            .map(|(i, imp)| v.field(&format!("impulses[{i}].map"), impulse_map(&imp.map)))
            .collect();

        let alphas: Vec<f64> = self.steering.alpha.iter().map(Real::value).collect();
        let tails: Vec<f64> = self.steering.tail.iter().map(Real::value).collect();
        for (i, a) in alphas.iter().enumerate() {
            if !(*a > 0.0 && *a <= 1.0) {
                v.push(
                    &format!("steering.alpha[{i}]"),
                    format!("must lie in (0, 1], got {a}"),
                );
            }
        }
        if self.steering.grid == GridKind::Paired && alphas.len() != tails.len() {
            v.push(
                "steering.tail",
                format!(
                    "paired grid needs as many tails as alphas ({} vs {})",
                    tails.len(),
                    alphas.len()
                ),
            );
        }

        let (
            Some(_),
            Some(theta),
            Some(schedule),
            Some(history),
            Some(target),
            Some(base_control),
            Some(forcing),
            Some(response),
            Some(memory),
            Some(growth),
        ) = (
            basis,
            theta,
            schedule,
            history,
            target,
            base_control,
            forcing,
            response,
            memory,
            growth,
        )
        else {
            return Err(v.0);
        };
        let Some(maps) = maps.into_iter().collect::<Option<Vec<_>>>() else {
            return Err(v.0);
        };

        let mut spec = ProblemSpec::new(history, schedule, theta)
            .with_forcing(forcing)
            .with_memory(memory, response)
            .with_impulse_maps(maps);
        if let Some(rho) = growth {
            spec = spec.with_growth_bound(rho);
        }
        v.check("problem", spec.validate());
        if spec.reads_delayed_state() && dt > delay {
            v.push(
                "discretization.dt",
                format!("must not exceed the delay r = {delay} when delayed terms are present"),
            );
        }
        for (i, l) in tails.iter().enumerate() {
            let plan = SteeringPlan::new(SpectralState::zeros(n), *l, 1.0);
            if let Err(e) = plan.validate(&spec) {
                v.push(&format!("steering.tail[{i}]"), e.to_string());
            }
        }
        if !v.0.is_empty() {
            return Err(v.0);
        }
        Ok(Prepared {
            scenario: Scenario {
                spec,
                target,
                base_control,
                discretization: Discretization {
                    n_modes: n,
                    n_grid: d.grid_points,
                    dt,
                },
                mode: self.steering.mode.into(),
            },
            alphas,
            tails,
            grid: self.steering.grid,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Default)]
struct Violations(Vec<Violation>);

impl Violations {
    fn push(&mut self, field: &str, message: String) {
        self.0.push(Violation {
            field: field.to_string(),
            message,
        });
    }

    fn field<T>(&mut self, field: &str, r: Result<T, String>) -> Option<T> {
        r.map_err(|m| self.push(field, m)).ok()
    }

    fn check<T>(&mut self, field: &str, r: heatsteer::Result<T>) -> Option<T> {
        r.map_err(|e| self.push(field, e.to_string())).ok()
    }
}

/// `amplitude · sin(k x)` projected onto the basis.
fn sine_state(basis: &SineBasis, amplitude: f64, k: usize) -> Result<SpectralState, String> {
    let field = PhysicalField::sample(basis.n_grid(), |x| amplitude * (k as f64 * x).sin())
        .map_err(|e| e.to_string())?;
    basis.project(&field).map_err(|e| e.to_string())
}

const STATE_PRESETS: &[&str] = &["zero", "sine", "coefficients"];

/// Targets and constant base controls.
fn state_preset(p: &Preset, basis: &SineBasis) -> Result<SpectralState, String> {
    let n = basis.n_modes();
    match p.preset.as_str() {
        "zero" => {
            Args::new(p, &[])?;
            Ok(SpectralState::zeros(n))
        }
        "sine" => {
            let a = Args::new(p, &["amplitude", "mode"])?;
            sine_state(basis, a.real("amplitude", Some(1.0))?, a.mode()?)
        }
        "coefficients" => {
            let a = Args::new(p, &["values"])?;
            let mut values = a.list("values")?;
            if values.len() > n {
                return Err(format!(
                    "{} coefficients given but only {n} modes are resolved",
                    values.len()
                ));
            }
            values.resize(n, 0.0);
            SpectralState::new(values).map_err(|e| e.to_string())
        }
        other => Err(unknown_preset(other, STATE_PRESETS)),
    }
}

fn state_to_control(p: &Preset, state: SpectralState) -> BaseControl {
    if p.preset == "zero" {
        BaseControl::Zero
    } else {
        BaseControl::Constant(state)
    }
}

const HISTORY_PRESETS: &[&str] = &["zero", "sine", "step", "heat_mode"];

fn history(p: &Preset, delay: f64, basis: &SineBasis) -> Result<History, String> {
    let n = basis.n_modes();
    let err = |e: heatsteer::Error| e.to_string();
    match p.preset.as_str() {
        "zero" => {
            Args::new(p, &[])?;
            History::constant(delay, SpectralState::zeros(n)).map_err(err)
        }
        "sine" => {
            let a = Args::new(p, &["amplitude", "mode"])?;
            let s = sine_state(basis, a.real("amplitude", Some(1.0))?, a.mode()?)?;
            History::constant(delay, s).map_err(err)
        }
        "step" => {
            let a = Args::new(p, &["before", "after", "at", "mode"])?;
            let k = a.mode()?;
            let at = a.real("at", None)?;
            if !(at > -delay && at < 0.0) {
                return Err(format!(
                    "jump time must lie in (-r, 0) = ({}, 0), got {at}",
                    -delay
                ));
            }
            let before = sine_state(basis, a.real("before", None)?, k)?;
            let after = sine_state(basis, a.real("after", None)?, k)?;
            History::piecewise(
                delay,
                vec![
                    (at, Arc::new(move |_| before.clone()) as StateProfile),
                    (0.0, Arc::new(move |_| after.clone()) as StateProfile),
                ],
            )
            .map_err(err)
        }
        "heat_mode" => {
            // The free heat flow of `amplitude · sin(k x)` through t = 0.
            let a = Args::new(p, &["amplitude", "mode"])?;
            let k = a.mode()?;
            let s = sine_state(basis, a.real("amplitude", Some(1.0))?, k)?;
            let rate = (k * k) as f64;
            History::from_fn(delay, move |t| &s * (-rate * t).exp()).map_err(err)
        }
        other => Err(unknown_preset(other, HISTORY_PRESETS)),
    }
}

const POINTWISE_PRESETS: &[&str] = &["zero", "linear", "sine", "tanh"];

/// `f` and `g`, as functions of the delayed state value.
fn pointwise(p: &Preset) -> Result<PointwiseMap, String> {
    let scale = |p| Args::new(p, &["scale"])?.real("scale", Some(1.0));
    Ok(match p.preset.as_str() {
        "zero" => {
            Args::new(p, &[])?;
            PointwiseMap::zero()
        }
        "linear" => {
            let c = scale(p)?;
            PointwiseMap::of_state(move |w| c * w)
        }
        "sine" => {
            let c = scale(p)?;
            PointwiseMap::of_state(move |w| c * w.sin())
        }
        "tanh" => {
            let c = scale(p)?;
            PointwiseMap::of_state(move |w| c * w.tanh())
        }
        other => return Err(unknown_preset(other, POINTWISE_PRESETS)),
    })
}

const MEMORY_PRESETS: &[&str] = &["zero", "constant", "exponential"];

fn memory_kernel(p: &Preset) -> Result<MemoryKernel, String> {
    Ok(match p.preset.as_str() {
        "zero" => {
            Args::new(p, &[])?;
            MemoryKernel::Zero
        }
        "constant" => MemoryKernel::Constant(Args::new(p, &["value"])?.real("value", None)?),
        "exponential" => {
            let a = Args::new(p, &["amplitude", "rate"])?;
            let rate = a.real("rate", None)?;
            if rate < 0.0 {
                return Err(format!("rate must be non-negative, got {rate}"));
            }
            MemoryKernel::Exponential {
                amplitude: a.real("amplitude", None)?,
                rate,
            }
        }
        other => return Err(unknown_preset(other, MEMORY_PRESETS)),
    })
}

const GROWTH_PRESETS: &[&str] = &["constant", "saturated_power"];

fn growth_bound(p: &Preset) -> Result<GrowthBound, String> {
    match p.preset.as_str() {
        "constant" => {
            let c = Args::new(p, &["value"])?.real("value", None)?;
            if c < 0.0 {
                return Err(format!("value must be non-negative, got {c}"));
            }
            Ok(GrowthBound::new(move |_| c))
        }
        "saturated_power" => {
            // ρ(ξ) = min(coefficient · ξ^exponent + offset, cap).
            let a = Args::new(p, &["coefficient", "exponent", "offset", "cap"])?;
            let c = a.real("coefficient", None)?;
            let beta = a.real("exponent", Some(1.0))?;
            let eta = a.real("offset", Some(0.0))?;
            let cap = a.real("cap", Some(f64::INFINITY))?;
            if c < 0.0 || eta < 0.0 || beta < 0.0 {
                return Err("coefficient, exponent and offset must be non-negative".to_string());
            }
            let power = GrowthBound::power(c, beta, eta);
            Ok(GrowthBound::new(move |xi| power.eval(xi).min(cap)))
        }
        other => Err(unknown_preset(other, GROWTH_PRESETS)),
    }
}

const IMPULSE_PRESETS: &[&str] = &["constant", "affine", "contractive"];

/// `G_i(t, w, u)` evaluated pointwise, `w = ω(t, x)`.
fn impulse_map(p: &Preset) -> Result<PointwiseMap, String> {
    match p.preset.as_str() {
        "constant" => {
            let a = Args::new(p, &["amplitude", "mode"])?;
            let c = a.real("amplitude", None)?;
            let k = a.mode()? as f64;
            Ok(PointwiseMap::new(move |_, x, _, _| c * (k * x).sin()))
        }
        "affine" => {
            let a = Args::new(p, &["state_gain", "control_gain", "amplitude", "mode"])?;
            let sg = a.real("state_gain", Some(0.0))?;
            let cg = a.real("control_gain", Some(0.0))?;
            let c = a.real("amplitude", Some(0.0))?;
            let k = a.mode()? as f64;
            if sg.abs() >= 1.0 {
                return Err(format!(
                    "|state_gain| must be below 1 for the fixed point to exist, got {sg}"
                ));
            }
            Ok(PointwiseMap::new(move |_, x, w, u| {
                sg * w + cg * u + c * (k * x).sin()
            }))
        }
        "contractive" => {
            let a = Args::new(p, &["gain", "amplitude", "mode"])?;
            let gain = a.real("gain", None)?;
            let c = a.real("amplitude", Some(0.0))?;
            let k = a.mode()? as f64;
            if gain.abs() >= 1.0 {
                return Err(format!("|gain| must be below 1, got {gain}"));
            }
            Ok(PointwiseMap::new(move |_, x, w, _| {
                gain * w.sin() + c * (k * x).sin()
            }))
        }
        other => Err(unknown_preset(other, IMPULSE_PRESETS)),
    }
}
