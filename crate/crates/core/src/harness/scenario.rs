//! Scenario files: JSON schema and construction of the runtime objects.
//!
//! Angles in scenario files are degrees (angular state components, angular
//! inputs, angle limits); everything is converted to radians at load.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::controllers::{tracking_controller_di, DoubletSpec, PidSas, SasGains, TrackingGains};
use crate::barrier::{AngleOfAttackBarrier, Barrier, ClassKappa, GapBarrier, GuardedBarrier, RadialBarrier};
use crate::error::{Error, Result};
use crate::predictor::{
    compute_delta_h_with_nominal, BangBang, GradientSource, Linearization, NeutralValue, PredictionPolicy, DEFAULT_DT,
    DEFAULT_T_MAX,
};
use crate::qpfilter::{FilterConfig, FilterMode};
use crate::system::{
    cartesian_to_polar, trim_solve, AdaptiveCruise, AffineSystem, AircraftParams, DoubleIntegratorPolar,
    LongitudinalAircraft, Trim,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsSource {
    /// Path relative to the scenario file.
    Path(PathBuf),
    Inline(Box<AircraftParams>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    DoubleIntegrator {
        u_max: f64,
    },
    Acc {
        mass: f64,
        v_front: f64,
        a_max: f64,
        #[serde(default)]
        resistance: Vec<f64>,
    },
    Aircraft {
        params: ParamsSource,
        airspeed: f64,
        #[serde(default)]
        flight_path_deg: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// State vector in model order; angular components in degrees.
    State { values: Vec<f64> },
    /// Planar position and velocity, for the double integrator.
    Cartesian { position: [f64; 2], velocity: [f64; 2] },
    /// The aircraft trim point.
    Trim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    TrackingDi {
        #[serde(flatten)]
        gains: TrackingGains,
    },
    PidSas {
        #[serde(flatten)]
        gains: SasGains,
    },
    /// Constant input; angular channels in degrees.
    Constant { input: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BarrierKind {
    RadialBackstepping {
        radius: f64,
        mu: f64,
    },
    AoaMax {
        limit_deg: f64,
    },
    AoaMin {
        limit_deg: f64,
    },
    AccGap {
        z_min: f64,
        #[serde(default)]
        headway: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearizationSpec {
    #[default]
    Current,
    /// Fixed at the aircraft trim point.
    Trim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    BangBang {
        #[serde(default)]
        source: GradientSource,
        #[serde(default)]
        linearization: LinearizationSpec,
        #[serde(default)]
        neutral: Vec<NeutralValue>,
        #[serde(default)]
        hold: Vec<bool>,
        #[serde(default)]
        zero_tol: f64,
    },
    QpMaximal,
    Normball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierEntry {
    pub barrier: BarrierKind,
    pub policy: PolicySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub mode: FilterMode,
    pub gamma: f64,
    /// Diagonal of the QP weight; identity when absent.
    #[serde(default)]
    pub weight: Option<Vec<f64>>,
    #[serde(default = "default_dt_prediction")]
    pub dt_prediction: f64,
    #[serde(default = "default_t_max")]
    pub t_max_prediction: f64,
}

fn default_dt_prediction() -> f64 {
    DEFAULT_DT
}

fn default_t_max() -> f64 {
    DEFAULT_T_MAX
}

fn default_dt_sim() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub metrics: Option<PathBuf>,
}

/// The on-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub system: SystemSpec,
    pub x0: InitialState,
    pub controller: ControllerSpec,
    /// Doublet amplitudes in degrees on angular channels.
    #[serde(default)]
    pub disturbance: Option<DoubletSpec>,
    pub filter: FilterSpec,
    pub barriers: Vec<BarrierEntry>,
    pub duration: f64,
    #[serde(default = "default_dt_sim")]
    pub dt_sim: f64,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl ScenarioFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }
}

/// A model instance together with what the harness needs to know about it.
#[derive(Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Plant {
    DoubleIntegrator(DoubleIntegratorPolar),
    Acc(AdaptiveCruise),
    Aircraft { model: LongitudinalAircraft, trim: Trim },
}

impl Plant {
    pub fn system(&self) -> &dyn AffineSystem {
        match self {
            Plant::DoubleIntegrator(s) => s,
            Plant::Acc(s) => s,
            Plant::Aircraft { model, .. } => model,
        }
    }

    /// Indices of state components given in degrees in scenario files.
    fn angular_states(&self) -> &'static [usize] {
        match self {
            Plant::DoubleIntegrator(_) => &[1, 3],
            Plant::Acc(_) => &[],
            Plant::Aircraft { .. } => &[2, 3],
        }
    }

    fn angular_inputs(&self) -> &'static [usize] {
        match self {
            Plant::Aircraft { .. } => &[0],
            _ => &[],
        }
    }

    pub fn trim(&self) -> Option<&Trim> {
        match self {
            Plant::Aircraft { trim, .. } => Some(trim),
            _ => None,
        }
    }
}

/// Runtime nominal controller, including any internal state.
#[derive(Debug, Clone)]
pub enum Controller {
    TrackingDi { gains: TrackingGains, u_max: f64 },
    PidSas(Box<PidSas>),
    Constant(DVector<f64>),
}

impl Controller {
    pub fn output(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        match self {
            Controller::TrackingDi { gains, u_max } => tracking_controller_di(x, t, gains, *u_max),
            Controller::PidSas(sas) => sas.output(x),
            Controller::Constant(u) => u.clone(),
        }
    }

    pub fn advance(&mut self, x: &DVector<f64>, dt: f64) {
        if let Controller::PidSas(sas) = self {
            sas.advance(x, dt);
        }
    }

    /// True when the recovery push (not the tracking law) is in charge.
    pub fn recovering(&self, x: &DVector<f64>) -> bool {
        matches!(self, Controller::TrackingDi { gains, .. } if x[0] < gains.radius)
    }
}

/// A validated, ready-to-run scenario.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub plant: Plant,
    pub x0: DVector<f64>,
    pub controller: Controller,
    pub disturbance: Option<DoubletSpec>,
    pub filter: FilterConfig,
    pub barriers: Vec<GuardedBarrier>,
    pub duration: f64,
    pub dt_sim: f64,
    pub outputs: OutputSpec,
    pub spec: ScenarioFile,
}

impl Scenario {
    /// Reads and builds a scenario; relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let spec = ScenarioFile::load(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::build(spec, base)
    }

    pub fn build(spec: ScenarioFile, base_dir: &Path) -> Result<Self> {
        if !(spec.dt_sim > 0.0) || !(spec.duration >= 0.0) || !spec.duration.is_finite() {
            return Err(Error::Invalid(format!(
                "need dt_sim > 0 and a finite duration >= 0 (dt_sim = {}, duration = {})",
                spec.dt_sim, spec.duration
            )));
        }
        let plant = build_plant(&spec.system, base_dir)?;
        let system = plant.system();
        let n = system.state_dim();
        let m = system.input_dim();

        let x0 = match &spec.x0 {
            InitialState::State { values } => {
                if values.len() != n {
                    return Err(Error::Invalid(format!("x0 has {} entries, the model has {n} states", values.len())));
                }
                let mut x = DVector::from_column_slice(values);
                for &i in plant.angular_states() {
                    x[i] = x[i].to_radians();
                }
                x
            }
            InitialState::Cartesian { position, velocity } => match plant {
                Plant::DoubleIntegrator(_) => {
                    cartesian_to_polar(Vector2::new(position[0], position[1]), Vector2::new(velocity[0], velocity[1]))
                }
                _ => return Err(Error::Invalid("cartesian x0 only applies to the double integrator".into())),
            },
            InitialState::Trim => match plant.trim() {
                Some(trim) => trim.state.clone(),
                None => return Err(Error::Invalid("trim x0 only applies to the aircraft".into())),
            },
        };
        crate::error::check_finite(x0.as_slice(), "x0")?;

        let controller = match (&spec.controller, &plant) {
            (ControllerSpec::TrackingDi { gains }, Plant::DoubleIntegrator(di)) => {
                if !(gains.kp > 0.0 && gains.kd > 0.0) {
                    return Err(Error::Invalid("tracking gains must be positive".into()));
                }
                Controller::TrackingDi { gains: *gains, u_max: di.u_max() }
            }
            (ControllerSpec::PidSas { gains }, Plant::Aircraft { trim, .. }) => {
                Controller::PidSas(Box::new(PidSas::new(*gains, trim.clone(), system.bounds())))
            }
            (ControllerSpec::Constant { input }, _) => {
                if input.len() != m {
                    return Err(Error::Invalid(format!(
                        "constant input has {} entries, the model has {m}",
                        input.len()
                    )));
                }
                let mut u = DVector::from_column_slice(input);
                for &i in plant.angular_inputs() {
                    u[i] = u[i].to_radians();
                }
                Controller::Constant(u)
            }
            (c, _) => return Err(Error::Invalid(format!("controller {c:?} does not match the model"))),
        };

        let disturbance = match spec.disturbance {
            Some(mut d) => {
                if d.channel >= m {
                    return Err(Error::Invalid(format!("doublet channel {} out of range", d.channel)));
                }
                if plant.angular_inputs().contains(&d.channel) {
                    d.amplitude1 = d.amplitude1.to_radians();
                    d.amplitude2 = d.amplitude2.to_radians();
                }
                Some(d)
            }
            None => None,
        };

        let kappa = ClassKappa::linear(spec.filter.gamma)?;
        let weight = match &spec.filter.weight {
            Some(diag) if diag.len() == m => DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
            Some(diag) => return Err(Error::Invalid(format!("weight diagonal has {} entries, need {m}", diag.len()))),
            None => DMatrix::identity(m, m),
        };
        let filter = FilterConfig::new(weight, kappa, spec.filter.mode)?
            .with_prediction(spec.filter.dt_prediction, spec.filter.t_max_prediction)?;

        let barriers = spec.barriers.iter().map(|entry| build_barrier(entry, &plant)).collect::<Result<Vec<_>>>()?;

        let scenario = Scenario {
            name: spec.name.clone(),
            plant,
            x0,
            controller,
            disturbance,
            filter,
            barriers,
            duration: spec.duration,
            dt_sim: spec.dt_sim,
            outputs: spec.outputs.clone(),
            spec,
        };
        scenario.check_initial_state()?;
        Ok(scenario)
    }

    pub fn system(&self) -> &dyn AffineSystem {
        self.plant.system()
    }

    /// Nominal input before the filter: controller plus disturbance.
    pub fn nominal(&self, controller: &Controller, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut u = controller.output(x, t);
        if let Some(d) = &self.disturbance {
            u += super::controllers::doublet(t, d, u.len());
        }
        u
    }

    /// `h(x0) > 0` for every barrier, and `h(x0) + delta_h(x0) > 0` in
    /// prediction mode.
    fn check_initial_state(&self) -> Result<()> {
        let system = self.system();
        let u_nom = self.nominal(&self.controller, &self.x0, 0.0);
        for entry in &self.barriers {
            let h = entry.barrier.value(&self.x0)?;
            if !(h > 0.0) {
                return Err(Error::Invalid(format!("x0 is not inside barrier '{}' (h = {h:e})", entry.barrier.name())));
            }
            if self.filter.mode == FilterMode::Pb {
                let p = compute_delta_h_with_nominal(
                    system,
                    entry.barrier.as_ref(),
                    &entry.policy,
                    &self.x0,
                    self.filter.dt_prediction,
                    self.filter.t_max_prediction,
                    Some(&u_nom),
                )?;
                if !(h + p.delta_h > 0.0) {
                    return Err(Error::Invalid(format!(
                        "x0 is outside the predicted safe set of '{}' (h = {h:e}, delta_h = {:e})",
                        entry.barrier.name(),
                        p.delta_h
                    )));
                }
            }
        }
        Ok(())
    }

    /// The same scenario file with a different filter mode.
    pub fn with_mode(&self, mode: FilterMode, base_dir: &Path) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.filter.mode = mode;
        Self::build(spec, base_dir)
    }
}

fn build_plant(spec: &SystemSpec, base_dir: &Path) -> Result<Plant> {
    Ok(match spec {
        SystemSpec::DoubleIntegrator { u_max } => Plant::DoubleIntegrator(DoubleIntegratorPolar::new(*u_max)?),
        SystemSpec::Acc { mass, v_front, a_max, resistance } => {
            Plant::Acc(AdaptiveCruise::new(*mass, *v_front, *a_max, resistance.clone())?)
        }
        SystemSpec::Aircraft { params, airspeed, flight_path_deg } => {
            let params = match params {
                ParamsSource::Path(p) => AircraftParams::load(base_dir.join(p))?,
                ParamsSource::Inline(p) => {
                    p.validate()?;
                    (**p).clone()
                }
            };
            let trim = trim_solve(&params, *airspeed, flight_path_deg.to_radians())?;
            Plant::Aircraft { model: LongitudinalAircraft::new(params)?, trim }
        }
    })
}

fn build_barrier(entry: &BarrierEntry, plant: &Plant) -> Result<GuardedBarrier> {
    let barrier: Arc<dyn Barrier> = match (&entry.barrier, plant) {
        (BarrierKind::RadialBackstepping { radius, mu }, Plant::DoubleIntegrator(_)) => {
            if !(*radius > 0.0 && *mu > 0.0) {
                return Err(Error::Invalid("radial barrier needs radius > 0 and mu > 0".into()));
            }
            Arc::new(RadialBarrier { radius: *radius, mu: *mu })
        }
        (BarrierKind::AoaMax { limit_deg }, Plant::Aircraft { .. }) => {
            Arc::new(AngleOfAttackBarrier::upper(limit_deg.to_radians()))
        }
        (BarrierKind::AoaMin { limit_deg }, Plant::Aircraft { .. }) => {
            Arc::new(AngleOfAttackBarrier::lower(limit_deg.to_radians()))
        }
        (BarrierKind::AccGap { z_min, headway }, Plant::Acc(_)) => {
            Arc::new(GapBarrier { z_min: *z_min, headway: *headway })
        }
        (b, _) => return Err(Error::Invalid(format!("barrier {b:?} does not match the model"))),
    };
    let system = plant.system();
    let policy = match &entry.policy {
        PolicySpec::BangBang { source, linearization, neutral, hold, zero_tol } => {
            let lin = match linearization {
                LinearizationSpec::Current => Linearization::Current,
                LinearizationSpec::Trim => {
                    let Some(trim) = plant.trim() else {
                        return Err(Error::Invalid("trim linearization needs the aircraft model".into()));
                    };
                    Linearization::at(system, &trim.state, &trim.input)?
                }
            };
            let mut bb = BangBang::new(*source, lin);
            if !neutral.is_empty() {
                bb.neutral = neutral.clone();
            }
            bb.hold = hold.clone();
            bb.zero_tol = *zero_tol;
            PredictionPolicy::BangBang(bb)
        }
        PolicySpec::QpMaximal => {
            if system.input_dim() > 3 {
                return Err(Error::UnsupportedDimension(system.input_dim()));
            }
            PredictionPolicy::QpMaximal
        }
        PolicySpec::Normball => PredictionPolicy::NormBallGradient,
    };
    Ok(GuardedBarrier { barrier, policy })
}
