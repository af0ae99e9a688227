//! Plant-driven Kalman step on both axes.
//!
//! Fixation uses a closed-loop hold: the neural command always holds the
//! current position estimate, so any position is an equilibrium and the
//! velocity decays through the plant dynamics. During a saccade the filter
//! follows a pulse-step template (unit response of the plant scaled by the
//! estimated amplitude) and tracks the deviation from it with the exact
//! per-step transition matrices.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use nalgebra::{Matrix1, Matrix1x4, Matrix2, Matrix2x4, Matrix4, Vector1, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::classify::ClassifierConfig;
use crate::error::{Error, Result};
use crate::plant::{discretize, discretize_system, ChannelTaus, Discrete, Matrix4x2, PlantParams, PlantState};

use super::kalman::{kf_predict, kf_update, Gaussian};

/// Pulse widths are quantised to this grid when building templates (ms).
pub const WIDTH_GRID_MS: f64 = 0.25;
const GRID_DIV: usize = 4;
/// Template length in 1 ms steps; later states repeat the last one.
pub const TEMPLATE_LEN: usize = 300;
/// Largest amplitude the saccade estimator will report (dva).
pub const MAX_AMPLITUDE_DVA: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FixationDynamics {
    /// Closed-loop plant hold at the current position.
    #[default]
    Hold,
    /// Position integrates a free velocity state.
    ConstantVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpkfConfig {
    pub pi_ms: usize,
    /// Per-step process variance on position and velocity (dva^2, (dva/s)^2).
    pub q_fix: f64,
    /// Per-step process variance on the muscle forces during saccades.
    pub q_sac: f64,
    /// Measurement variances `[position, velocity]`; derived from the
    /// subject's fixation precision when absent.
    pub r: Option<[f64; 2]>,
    pub params: PlantParams,
    pub fixation: FixationDynamics,
    pub classifier: ClassifierConfig,
    /// How far before the detected onset the command onset is searched (ms).
    pub max_onset_shift_ms: usize,
    /// Initial state variances `[theta, omega, f_ag, f_ant]`.
    pub initial_var: [f64; 4],
}

impl Default for OpkfConfig {
    fn default() -> Self {
        OpkfConfig {
            pi_ms: 40,
            q_fix: 1e-4,
            q_sac: 0.1,
            r: None,
            params: PlantParams::default(),
            fixation: FixationDynamics::Hold,
            classifier: ClassifierConfig::default(),
            max_onset_shift_ms: 12,
            initial_var: [1.0, 100.0, 1.0, 1.0],
        }
    }
}

impl OpkfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pi_ms == 0 {
            return Err(Error::Config("pi_ms must be positive".into()));
        }
        if !(self.q_fix > 0.0 && self.q_sac > 0.0) {
            return Err(Error::Config("process noise scales must be positive".into()));
        }
        if let Some(r) = self.r {
            if !r.iter().all(|v| v.is_finite() && *v >= 0.0) {
                return Err(Error::Config(format!("measurement variances {r:?} must be finite and >= 0")));
            }
        }
        if !self.initial_var.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Config("initial variances must be positive".into()));
        }
        self.classifier.validate()?;
        self.params.validate()
    }
}

/// Smallest position variance used in the measurement model (dva^2).
pub const MIN_POSITION_VARIANCE: f64 = 1e-8;

/// `[position, velocity]` variances for a white position noise of RMS
/// sample-to-sample size `precision_dva`, pushed through a derivative filter
/// with per-step weights `weights` at `rate_hz`.
pub fn measurement_noise(precision_dva: f64, weights: &[f64], rate_hz: f64) -> [f64; 2] {
    let pos = (precision_dva * precision_dva).max(MIN_POSITION_VARIANCE);
    let gain: f64 = weights.iter().map(|w| w * w).sum();
    [pos, pos * gain * rate_hz * rate_hz]
}

/// Unit-amplitude, positive-direction pulse-step response from rest at 0,
/// one state per millisecond.
#[derive(Debug, Clone)]
pub struct Template {
    pub width_ms: f64,
    pub states: Vec<Vector4<f64>>,
    /// First step after which the position stays within 1 % of the target.
    pub settle_k: usize,
}

impl Template {
    pub fn state(&self, k: usize) -> &Vector4<f64> {
        &self.states[k.min(self.states.len() - 1)]
    }

    pub fn theta(&self, k: usize) -> f64 {
        self.state(k)[0]
    }
}

/// A saccade as the filter currently believes it on one axis.
#[derive(Debug, Clone)]
pub struct AxisPlan {
    pub theta0: f64,
    pub amplitude: f64,
    pub template: Rc<Template>,
    /// Steps since the command onset for the current sample.
    pub elapsed: usize,
    /// Restart the deviation from the template (first saccade sample).
    pub fresh: bool,
}

#[derive(Debug, Clone)]
pub enum Regime {
    Fixation,
    Saccade([AxisPlan; 2]),
}

/// Filter posterior, one four-state Gaussian per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub axes: [Gaussian<4>; 2],
}

impl KalmanState {
    pub fn at_rest(params: &PlantParams, pos: [f64; 2], var: [f64; 4]) -> Self {
        let cov = Matrix4::from_diagonal(&Vector4::from(var));
        KalmanState {
            axes: pos.map(|p| Gaussian::new(PlantState::at_rest(params, p).to_vector(), cov)),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.axes[0].mean[0], self.axes[1].mean[0]]
    }
}

/// One sample's observation; `None` entries are missing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Measurement {
    pub pos: Option<[f64; 2]>,
    pub vel: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy)]
struct DirSteps {
    pulse: Discrete,
    settle: Discrete,
    /// Boundary steps for pulse ends at fractions 1/4, 2/4, 3/4 of a step.
    split: [Matrix4<f64>; GRID_DIV - 1],
    split_drive: [(Discrete, Discrete); GRID_DIV - 1],
}

/// Discretised dynamics and template cache for one parameter set.
#[derive(Debug)]
pub struct OpkfModel {
    cfg: OpkfConfig,
    r: Matrix2<f64>,
    fix_phi: Matrix4<f64>,
    fix_ahead: Matrix4<f64>,
    q_fix: Matrix4<f64>,
    q_sac: Matrix4<f64>,
    dirs: [DirSteps; 2],
    templates: RefCell<HashMap<usize, Rc<Template>>>,
}

fn dir_index(amplitude: f64) -> usize {
    usize::from(amplitude < 0.0)
}

/// Maps a positive-direction state to the mirrored negative one.
fn mirror(v: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(-v[0], -v[1], v[3], v[2])
}

impl OpkfModel {
    /// `r` gives the measurement variances `[position, velocity]`.
    pub fn new(cfg: &OpkfConfig, r: [f64; 2]) -> Result<Self> {
        cfg.validate()?;
        let p = &cfg.params;
        let dt = 1e-3;
        let fix_phi = match cfg.fixation {
            FixationDynamics::Hold => {
                let (a, b) = crate::plant::continuous(p, ChannelTaus::settle(p, 1.0));
                let c = p.stiffness() / (2.0 * p.gain());
                let mut l = nalgebra::Matrix2x4::zeros();
                l[(0, 0)] = c;
                l[(1, 0)] = -c;
                discretize_system(&(a + b * l), &Matrix4x2::zeros(), dt)?.phi
            }
            FixationDynamics::ConstantVelocity => {
                let mut m = Matrix4::identity();
                m[(0, 1)] = dt;
                m
            }
        };
        let fix_ahead = fix_phi.pow(cfg.pi_ms as u32);
        let mut dirs = Vec::with_capacity(2);
        for dir in [1.0, -1.0] {
            let pulse_taus = ChannelTaus::pulse(p, dir);
            let settle_taus = ChannelTaus::settle(p, dir);
            let pulse = discretize(p, pulse_taus, dt)?;
            let settle = discretize(p, settle_taus, dt)?;
            let mut split = [Matrix4::zeros(); GRID_DIV - 1];
            let mut split_drive = [(pulse, settle); GRID_DIV - 1];
            for (j, (m, d)) in split.iter_mut().zip(split_drive.iter_mut()).enumerate() {
                let frac = (j + 1) as f64 / GRID_DIV as f64;
                let first = discretize(p, pulse_taus, frac * dt)?;
                let rest = discretize(p, settle_taus, (1.0 - frac) * dt)?;
                *m = rest.phi * first.phi;
                *d = (first, rest);
            }
            dirs.push(DirSteps {
                pulse,
                settle,
                split,
                split_drive,
            });
        }
        let q_fix = Matrix4::from_diagonal(&Vector4::new(cfg.q_fix, cfg.q_fix, cfg.q_fix, cfg.q_fix));
        let q_sac = Matrix4::from_diagonal(&Vector4::new(cfg.q_fix, cfg.q_fix, cfg.q_sac, cfg.q_sac));
        Ok(OpkfModel {
            cfg: cfg.clone(),
            r: Matrix2::new(r[0], 0.0, 0.0, r[1]),
            fix_phi,
            fix_ahead,
            q_fix,
            q_sac,
            dirs: [dirs[0], dirs[1]],
            templates: RefCell::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &OpkfConfig {
        &self.cfg
    }

    pub fn params(&self) -> &PlantParams {
        &self.cfg.params
    }

    /// Grid index of the pulse width for `amplitude`.
    pub fn width_index(&self, amplitude: f64) -> usize {
        (self.cfg.params.pulse_width_ms(amplitude) / WIDTH_GRID_MS).round() as usize
    }

    pub fn template(&self, width_index: usize) -> Rc<Template> {
        if let Some(t) = self.templates.borrow().get(&width_index) {
            return Rc::clone(t);
        }
        let t = Rc::new(self.build_template(width_index));
        self.templates.borrow_mut().insert(width_index, Rc::clone(&t));
        t
    }

    fn build_template(&self, width_index: usize) -> Template {
        let p = &self.cfg.params;
        let width_ms = width_index as f64 * WIDTH_GRID_MS;
        let d = &self.dirs[0];
        let step = p.holding_command(1.0);
        let pulse = step + Vector2::new(p.pulse_height(1.0), 0.0);
        let mut x = Vector4::zeros();
        let mut states = Vec::with_capacity(TEMPLATE_LEN + 1);
        states.push(x);
        for k in 0..TEMPLATE_LEN {
            let (whole, frac) = (k as f64, width_ms - k as f64);
            x = if whole + 1.0 <= width_ms {
                d.pulse.apply(&x, &pulse)
            } else if whole >= width_ms {
                d.settle.apply(&x, &step)
            } else {
                let (first, rest) = &d.split_drive[split_slot(frac)];
                rest.apply(&first.apply(&x, &pulse), &step)
            };
            states.push(x);
        }
        let settle_k = states
            .iter()
            .rposition(|s| (s[0] - 1.0).abs() >= 0.01)
            .map_or(0, |k| k + 1);
        Template {
            width_ms,
            states,
            settle_k,
        }
    }

    /// Transition from step `k` to `k + 1` of a saccade in the direction of
    /// `amplitude` with pulse width `width_ms`.
    fn saccade_phi(&self, amplitude: f64, width_ms: f64, k: usize) -> &Matrix4<f64> {
        let d = &self.dirs[dir_index(amplitude)];
        let whole = k as f64;
        if whole + 1.0 <= width_ms {
            &d.pulse.phi
        } else if whole >= width_ms {
            &d.settle.phi
        } else {
            &d.split[split_slot(width_ms - whole)]
        }
    }

    /// Full plant state of a planned saccade `k` steps after its command.
    pub fn plan_state(&self, plan: &AxisPlan, k: usize) -> Vector4<f64> {
        let rest = PlantState::at_rest(&self.cfg.params, plan.theta0).to_vector();
        let s = plan.template.state(k);
        let unit = if plan.amplitude < 0.0 { mirror(s) } else { *s };
        rest + unit * plan.amplitude.abs()
    }

    fn measure(&self, g: &Gaussian<4>, pos: Option<f64>, vel: Option<f64>) -> Result<Gaussian<4>> {
        match (pos, vel) {
            (Some(z), Some(v)) => {
                let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
                kf_update(g, &Vector2::new(z, v), &h, &self.r)
            }
            (Some(z), None) => {
                let h = Matrix1x4::new(1.0, 0.0, 0.0, 0.0);
                kf_update(g, &Vector1::new(z), &h, &Matrix1::new(self.r[(0, 0)]))
            }
            _ => Ok(*g),
        }
    }

    fn axis_step(&self, g: &Gaussian<4>, pos: Option<f64>, vel: Option<f64>, plan: Option<&AxisPlan>) -> Result<(Gaussian<4>, f64)> {
        let pi = self.cfg.pi_ms;
        match plan {
            None => {
                let prior = kf_predict(g, &self.fix_phi, &Vector4::zeros(), &self.q_fix);
                let post = self.measure(&prior, pos, vel)?;
                let ahead = (self.fix_ahead * post.mean)[0];
                Ok((post, ahead))
            }
            Some(plan) => {
                let k = plan.elapsed.max(1);
                let w = plan.template.width_ms;
                let mut dev = if plan.fresh {
                    Gaussian::new(Vector4::zeros(), g.cov)
                } else {
                    let mut e = g.mean - self.plan_state(plan, k - 1);
                    e[2] = 0.0;
                    e[3] = 0.0;
                    Gaussian::new(e, g.cov)
                };
                let phi = self.saccade_phi(plan.amplitude, w, k - 1);
                dev = kf_predict(&dev, phi, &Vector4::zeros(), &self.q_sac);
                let here = self.plan_state(plan, k);
                let prior = Gaussian::new(here + dev.mean, dev.cov);
                let post = self.measure(&prior, pos, vel)?;
                let mut e = post.mean - here;
                for j in k..k + pi {
                    e = self.saccade_phi(plan.amplitude, w, j) * e;
                }
                let ahead = self.plan_state(plan, k + pi)[0] + e[0];
                Ok((post, ahead))
            }
        }
    }
}

fn split_slot(frac: f64) -> usize {
    ((frac * GRID_DIV as f64).round() as usize).clamp(1, GRID_DIV - 1) - 1
}

/// One predict/update cycle on both axes followed by the PI-ahead forecast.
/// Missing position skips the update (coast); missing velocity falls back
/// to a position-only update.
pub fn opkf_step(
    model: &OpkfModel,
    state: &KalmanState,
    m: &Measurement,
    regime: &Regime,
) -> Result<(KalmanState, [f64; 2])> {
    let mut next = *state;
    let mut ahead = [0.0; 2];
    for a in 0..2 {
        let plan = match regime {
            Regime::Fixation => None,
            Regime::Saccade(plans) => Some(&plans[a]),
        };
        let (g, y) = model.axis_step(
            &state.axes[a],
            m.pos.map(|p| p[a]),
            m.vel.map(|v| v[a]),
            plan,
        )?;
        next.axes[a] = g;
        ahead[a] = y;
    }
    if !ahead.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite forecast".into()));
    }
    Ok((next, ahead))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{AxisIntegrator, PulseStep};

    fn model(fixation: FixationDynamics, r: [f64; 2]) -> OpkfModel {
        let cfg = OpkfConfig { fixation, ..OpkfConfig::default() };
        OpkfModel::new(&cfg, r).unwrap()
    }

    #[test]
    fn constant_velocity_fixation_extrapolates_linearly() {
        let m = model(FixationDynamics::ConstantVelocity, [1e-12, 1e-12]);
        let v = [12.0, -7.0];
        let mut s = KalmanState::at_rest(m.params(), [0.0, 0.0], [1.0, 100.0, 1.0, 1.0]);
        let mut ahead = [0.0; 2];
        for i in 0..50 {
            let pos = [v[0] * i as f64 / 1000.0, v[1] * i as f64 / 1000.0];
            let meas = Measurement { pos: Some(pos), vel: Some(v) };
            (s, ahead) = opkf_step(&m, &s, &meas, &Regime::Fixation).unwrap();
            for a in 0..2 {
                assert!((ahead[a] - (pos[a] + v[a] * 0.04)).abs() < 1e-6, "{i} {ahead:?}");
            }
        }
        assert!(ahead[0].is_finite());
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let m = model(FixationDynamics::Hold, [1e-12, 1e-12]);
        let s = KalmanState::at_rest(m.params(), [3.0, -2.0], [0.1, 1.0, 0.1, 0.1]);
        let meas = Measurement { pos: Some([3.0, -2.0]), vel: Some([0.0, 0.0]) };
        let (next, ahead) = opkf_step(&m, &s, &meas, &Regime::Fixation).unwrap();
        for a in 0..2 {
            assert!((next.axes[a].mean - s.axes[a].mean).norm() < 1e-9);
        }
        assert!((ahead[0] - 3.0).abs() < 1e-9 && (ahead[1] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn hold_regime_is_an_equilibrium_anywhere() {
        let m = model(FixationDynamics::Hold, [1e-4, 1.0]);
        let x = PlantState::at_rest(m.params(), 7.5).to_vector();
        assert!((m.fix_phi * x - x).norm() < 1e-12);
    }

    #[test]
    fn template_matches_plant_integrator() {
        let m = model(FixationDynamics::Hold, [1e-4, 1.0]);
        let p = *m.params();
        let integ = AxisIntegrator::new(p, 1.0).unwrap();
        for amp in [-12.0, 4.0, 10.0] {
            let w = m.width_index(amp);
            let mut cmd = PulseStep::new(&p, 2.0, 2.0 + amp);
            cmd.width_ms = w as f64 * WIDTH_GRID_MS;
            let plan = AxisPlan { theta0: 2.0, amplitude: amp, template: m.template(w), elapsed: 0, fresh: true };
            let mut x = PlantState::at_rest(&p, 2.0).to_vector();
            for k in 0..200 {
                assert!((m.plan_state(&plan, k) - x).norm() < 1e-9 * (1.0 + x.norm()), "{amp} {k}");
                let next = integ.step(&x, &cmd, k as f64).unwrap();
                let phi = m.saccade_phi(amp, cmd.width_ms, k);
                let pert = Vector4::new(0.01, -0.3, 0.2, 0.1);
                let moved = integ.step(&(x + pert), &cmd, k as f64).unwrap();
                assert!((moved - next - phi * pert).norm() < 1e-9);
                x = next;
            }
        }
    }

    #[test]
    fn saccade_regime_forecasts_the_template() {
        let m = model(FixationDynamics::Hold, [1e-10, 1e-6]);
        let amp = 10.0;
        let w = m.width_index(amp);
        let plan = |k: usize, fresh: bool| AxisPlan { theta0: 0.0, amplitude: amp, template: m.template(w), elapsed: k, fresh };
        let mut s = KalmanState::at_rest(m.params(), [0.0, 0.0], [1e-4; 4]);
        for k in 1..60 {
            let truth = plan(k, false);
            let x = m.plan_state(&truth, k);
            let meas = Measurement { pos: Some([x[0], 0.0]), vel: Some([x[1], 0.0]) };
            let zero = AxisPlan { amplitude: 0.0, ..plan(k, k == 1) };
            let (next, ahead) = opkf_step(&m, &s, &meas, &Regime::Saccade([plan(k, k == 1), zero])).unwrap();
            let want = m.plan_state(&truth, k + 40)[0];
            assert!((ahead[0] - want).abs() < 1e-6, "{k}: {} vs {want}", ahead[0]);
            assert!(ahead[1].abs() < 1e-6);
            s = next;
        }
    }
}
