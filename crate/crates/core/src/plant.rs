//! Linear two-muscle oculomotor plant and the synthetic cohort generator.
//!
//! Each axis carries four states `x = [theta, omega, F_ag, F_ant]`: eye
//! position (dva), velocity (dva/s) and the active-state tensions of the
//! positive-pulling (`ag`) and negative-pulling (`ant`) muscle channels,
//! expressed as deviations from the tonic level. With `g = Kse / (Kse + Klt)`,
//! `K = Kp + 2 g Klt` and `B = Bp + g (Bag + Bant)`:
//!
//! ```text
//! theta'  = omega
//! J omega' = g (F_ag - F_ant) - K theta - B omega
//! F_ag'   = (N_ag  - F_ag)  / tau_ag_channel
//! F_ant'  = (N_ant - F_ant) / tau_ant_channel
//! ```
//!
//! i.e. `x' = A x + Bu u` with `u = [N_ag, N_ant]`. The neural command is a
//! pulse-step: the step holds the target (`N_ag - N_ant = K theta_T / g`),
//! and for `pulse_width_coeff * |a|` ms the agonist channel gets an extra
//! `pulse_height_coeff * |a|`, where `a` is the intended amplitude. The
//! agonist role uses the `*_act` constant during the pulse and `*_deact`
//! afterwards; the antagonist role the reverse. Steps are discretised
//! exactly (zero-order hold via the matrix exponential), so a 1 ms
//! transition matrix is exact for the linear system.

use nalgebra::{Matrix4, SMatrix, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{segments_from_labels, EventKind, EventSegment};
use crate::error::{Error, Result};
use crate::signal::{
    compute_velocity, DiffConfig, GazeRecording, GazeSample, TargetPoint,
};

pub type Matrix4x2 = SMatrix<f64, 4, 2>;
type Matrix6 = SMatrix<f64, 6, 6>;

pub const PARAM_COUNT: usize = 13;

pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "Kse",
    "Klt",
    "J",
    "Bag",
    "Bant",
    "Kp",
    "Bp",
    "tau_ag_act",
    "tau_ag_deact",
    "tau_ant_act",
    "tau_ant_deact",
    "pulse_height_coeff",
    "pulse_width_coeff",
];

/// Plant constants. Forces in g, positions in dva, time constants in s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Series elasticity (g/dva).
    #[serde(rename = "Kse")]
    pub kse: f64,
    /// Length-tension elasticity (g/dva).
    #[serde(rename = "Klt")]
    pub klt: f64,
    /// Globe inertia (g s^2/dva).
    #[serde(rename = "J")]
    pub j: f64,
    /// Agonist viscosity (g s/dva).
    #[serde(rename = "Bag")]
    pub bag: f64,
    /// Antagonist viscosity (g s/dva).
    #[serde(rename = "Bant")]
    pub bant: f64,
    /// Passive orbital elasticity (g/dva).
    #[serde(rename = "Kp")]
    pub kp: f64,
    /// Passive orbital viscosity (g s/dva).
    #[serde(rename = "Bp")]
    pub bp: f64,
    pub tau_ag_act: f64,
    pub tau_ag_deact: f64,
    pub tau_ant_act: f64,
    pub tau_ant_deact: f64,
    /// Pulse force per dva of intended amplitude (g/dva).
    pub pulse_height_coeff: f64,
    /// Pulse duration per dva of intended amplitude (ms/dva).
    pub pulse_width_coeff: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            kse: 2.5,
            klt: 1.2,
            j: 1.9e-5,
            bag: 0.02,
            bant: 0.015,
            kp: 0.8,
            bp: 0.0167,
            tau_ag_act: 0.004,
            tau_ag_deact: 0.0047,
            tau_ant_act: 0.0047,
            tau_ant_deact: 0.0033,
            pulse_height_coeff: 0.6,
            pulse_width_coeff: 1.0,
        }
    }
}

impl PlantParams {
    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        [
            self.kse,
            self.klt,
            self.j,
            self.bag,
            self.bant,
            self.kp,
            self.bp,
            self.tau_ag_act,
            self.tau_ag_deact,
            self.tau_ant_act,
            self.tau_ant_deact,
            self.pulse_height_coeff,
            self.pulse_width_coeff,
        ]
    }

    pub fn from_array(v: [f64; PARAM_COUNT]) -> Self {
        PlantParams {
            kse: v[0],
            klt: v[1],
            j: v[2],
            bag: v[3],
            bant: v[4],
            kp: v[5],
            bp: v[6],
            tau_ag_act: v[7],
            tau_ag_deact: v[8],
            tau_ant_act: v[9],
            tau_ant_deact: v[10],
            pulse_height_coeff: v[11],
            pulse_width_coeff: v[12],
        }
    }

    pub fn index_of(name: &str) -> Option<usize> {
        PARAM_NAMES.iter().position(|n| *n == name)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in PARAM_NAMES.iter().zip(self.to_array()) {
            if !(v.is_finite() && v > 0.0) {
                return Err(self.instability(format!("{name} = {v} is not strictly positive")));
            }
        }
        for (name, v) in PARAM_NAMES[7..11].iter().zip(&self.to_array()[7..11]) {
            if !(0.001..=0.5).contains(v) {
                return Err(self.instability(format!("{name} = {v} s outside [0.001, 0.5]")));
            }
        }
        Ok(())
    }

    fn instability(&self, message: String) -> Error {
        Error::Instability {
            params: serde_json::to_string(self).unwrap_or_default(),
            message,
        }
    }

    /// Fraction of muscle tension transmitted through the series element.
    pub fn gain(&self) -> f64 {
        self.kse / (self.kse + self.klt)
    }

    pub fn stiffness(&self) -> f64 {
        self.kp + 2.0 * self.gain() * self.klt
    }

    pub fn damping(&self) -> f64 {
        self.bp + self.gain() * (self.bag + self.bant)
    }

    /// Channel inputs that hold `theta` at rest.
    pub fn holding_command(&self, theta: f64) -> Vector2<f64> {
        let half = self.stiffness() * theta / (2.0 * self.gain());
        Vector2::new(half, -half)
    }

    pub fn pulse_width_ms(&self, amplitude: f64) -> f64 {
        self.pulse_width_coeff * amplitude.abs()
    }

    pub fn pulse_height(&self, amplitude: f64) -> f64 {
        self.pulse_height_coeff * amplitude.abs()
    }

    /// Speeds the plant up by `factor`: viscosities, time constants and pulse
    /// width shrink by it, leaving the holding forces unchanged.
    pub fn with_speed(&self, factor: f64) -> Self {
        let mut p = *self;
        p.bag /= factor;
        p.bant /= factor;
        p.bp /= factor;
        p.tau_ag_act /= factor;
        p.tau_ag_deact /= factor;
        p.tau_ant_act /= factor;
        p.tau_ant_deact /= factor;
        p.pulse_width_coeff /= factor;
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PlantState {
    pub theta: f64,
    pub omega: f64,
    pub f_ag: f64,
    pub f_ant: f64,
}

impl PlantState {
    pub fn at_rest(params: &PlantParams, theta: f64) -> Self {
        let u = params.holding_command(theta);
        PlantState {
            theta,
            omega: 0.0,
            f_ag: u[0],
            f_ant: u[1],
        }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.theta, self.omega, self.f_ag, self.f_ant)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        PlantState {
            theta: v[0],
            omega: v[1],
            f_ag: v[2],
            f_ant: v[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Activation time constants currently in force on the two channels (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelTaus {
    pub ag: f64,
    pub ant: f64,
}

impl ChannelTaus {
    /// During the pulse of a movement in direction `sign(dir)`.
    pub fn pulse(p: &PlantParams, dir: f64) -> Self {
        if dir >= 0.0 {
            ChannelTaus {
                ag: p.tau_ag_act,
                ant: p.tau_ant_deact,
            }
        } else {
            ChannelTaus {
                ag: p.tau_ant_deact,
                ant: p.tau_ag_act,
            }
        }
    }

    /// After the pulse of a movement in direction `sign(dir)`.
    pub fn settle(p: &PlantParams, dir: f64) -> Self {
        if dir >= 0.0 {
            ChannelTaus {
                ag: p.tau_ag_deact,
                ant: p.tau_ant_act,
            }
        } else {
            ChannelTaus {
                ag: p.tau_ant_act,
                ant: p.tau_ag_deact,
            }
        }
    }
}

/// Channel inputs plus the time constants they act through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuralCommand {
    pub input: Vector2<f64>,
    pub taus: ChannelTaus,
}

impl NeuralCommand {
    pub fn hold(p: &PlantParams, theta: f64) -> Self {
        NeuralCommand {
            input: p.holding_command(theta),
            taus: ChannelTaus::settle(p, 1.0),
        }
    }
}

/// `x_{k+1} = phi x_k + gamma u_k` over one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrete {
    pub phi: Matrix4<f64>,
    pub gamma: Matrix4x2,
}

impl Discrete {
    pub fn apply(&self, x: &Vector4<f64>, u: &Vector2<f64>) -> Vector4<f64> {
        self.phi * x + self.gamma * u
    }
}

/// Continuous-time `(A, Bu)` for the given channel time constants.
pub fn continuous(p: &PlantParams, taus: ChannelTaus) -> (Matrix4<f64>, Matrix4x2) {
    let g = p.gain();
    let mut a = Matrix4::zeros();
    a[(0, 1)] = 1.0;
    a[(1, 0)] = -p.stiffness() / p.j;
    a[(1, 1)] = -p.damping() / p.j;
    a[(1, 2)] = g / p.j;
    a[(1, 3)] = -g / p.j;
    a[(2, 2)] = -1.0 / taus.ag;
    a[(3, 3)] = -1.0 / taus.ant;
    let mut b = Matrix4x2::zeros();
    b[(2, 0)] = 1.0 / taus.ag;
    b[(3, 1)] = 1.0 / taus.ant;
    (a, b)
}

/// Exact zero-order-hold discretisation of an arbitrary `(A, Bu)` pair.
pub fn discretize_system(a: &Matrix4<f64>, b: &Matrix4x2, dt_s: f64) -> Result<Discrete> {
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<4, 4>(0, 0).copy_from(&(a * dt_s));
    m.fixed_view_mut::<4, 2>(0, 4).copy_from(&(b * dt_s));
    let e = m.exp();
    if !e.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok(Discrete {
        phi: e.fixed_view::<4, 4>(0, 0).into_owned(),
        gamma: e.fixed_view::<4, 2>(0, 4).into_owned(),
    })
}

pub fn discretize(p: &PlantParams, taus: ChannelTaus, dt_s: f64) -> Result<Discrete> {
    let (a, b) = continuous(p, taus);
    discretize_system(&a, &b, dt_s)
}

/// One exact step of the plant under a held neural command.
pub fn plant_transition(
    params: &PlantParams,
    state: &PlantState,
    command: &NeuralCommand,
    dt_ms: f64,
) -> Result<PlantState> {
    if !state.is_finite() {
        return Err(Error::Numerical("non-finite plant state".into()));
    }
    let d = discretize(params, command.taus, dt_ms / 1000.0)?;
    let next = PlantState::from_vector(&d.apply(&state.to_vector(), &command.input));
    if !next.is_finite() {
        return Err(params.instability("state diverged".into()));
    }
    Ok(next)
}

/// Pulse-step command for a saccade of signed amplitude `amplitude` to `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseStep {
    pub target: f64,
    pub amplitude: f64,
    pub width_ms: f64,
    pub height: f64,
}

impl PulseStep {
    pub fn new(p: &PlantParams, start: f64, target: f64) -> Self {
        let amplitude = target - start;
        PulseStep {
            target,
            amplitude,
            width_ms: p.pulse_width_ms(amplitude),
            height: p.pulse_height(amplitude),
        }
    }

    fn dir(&self) -> f64 {
        if self.amplitude >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    fn step_input(&self, p: &PlantParams) -> Vector2<f64> {
        p.holding_command(self.target)
    }

    fn pulse_input(&self, p: &PlantParams) -> Vector2<f64> {
        let mut u = self.step_input(p);
        if self.amplitude >= 0.0 {
            u[0] += self.height;
        } else {
            u[1] += self.height;
        }
        u
    }
}

/// Steps one axis through pulse-step commands, caching the discretisations.
#[derive(Debug, Clone)]
pub struct AxisIntegrator {
    params: PlantParams,
    dt_ms: f64,
    steps: [Discrete; 4],
}

impl AxisIntegrator {
    pub fn new(params: PlantParams, dt_ms: f64) -> Result<Self> {
        params.validate()?;
        if !(dt_ms > 0.0 && dt_ms <= 1.0) {
            return Err(Error::Config(format!("integration step {dt_ms} ms outside (0, 1]")));
        }
        let dt = dt_ms / 1000.0;
        let steps = [
            discretize(&params, ChannelTaus::pulse(&params, 1.0), dt)?,
            discretize(&params, ChannelTaus::settle(&params, 1.0), dt)?,
            discretize(&params, ChannelTaus::pulse(&params, -1.0), dt)?,
            discretize(&params, ChannelTaus::settle(&params, -1.0), dt)?,
        ];
        Ok(AxisIntegrator {
            params,
            dt_ms,
            steps,
        })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn dt_ms(&self) -> f64 {
        self.dt_ms
    }

    /// Advances one step, `elapsed_ms` after the command onset.
    pub fn step(&self, x: &Vector4<f64>, cmd: &PulseStep, elapsed_ms: f64) -> Result<Vector4<f64>> {
        let p = &self.params;
        let (pulse, settle) = if cmd.dir() > 0.0 {
            (&self.steps[0], &self.steps[1])
        } else {
            (&self.steps[2], &self.steps[3])
        };
        let end = elapsed_ms + self.dt_ms;
        let next = if end <= cmd.width_ms {
            pulse.apply(x, &cmd.pulse_input(p))
        } else if elapsed_ms >= cmd.width_ms {
            settle.apply(x, &cmd.step_input(p))
        } else {
            let first = (cmd.width_ms - elapsed_ms) / 1000.0;
            let rest = (end - cmd.width_ms) / 1000.0;
            let mid = discretize(p, ChannelTaus::pulse(p, cmd.dir()), first)?
                .apply(x, &cmd.pulse_input(p));
            discretize(p, ChannelTaus::settle(p, cmd.dir()), rest)?.apply(&mid, &cmd.step_input(p))
        };
        if !next.iter().all(|v| v.is_finite()) {
            return Err(p.instability("state diverged during saccade".into()));
        }
        Ok(next)
    }
}

/// Longest simulated saccade (ms).
pub const SIMULATION_CAP_MS: f64 = 400.0;
/// How long the eye must stay within 1 % of the amplitude to count as settled.
pub const SETTLE_HOLD_MS: f64 = 20.0;

/// Simulates one axis from rest at `start` to `target`. The first state is
/// the starting rest state; one state follows per `dt_ms`.
pub fn simulate_saccade(
    params: &PlantParams,
    start_dva: f64,
    target_dva: f64,
    dt_ms: f64,
) -> Result<Vec<PlantState>> {
    if (target_dva - start_dva).abs() > 40.0 {
        return Err(Error::Config(format!(
            "saccade amplitude {} dva exceeds 40",
            (target_dva - start_dva).abs()
        )));
    }
    let integ = AxisIntegrator::new(*params, dt_ms)?;
    let cmd = PulseStep::new(params, start_dva, target_dva);
    let tol = (0.01 * cmd.amplitude.abs()).max(1e-12);
    let hold_steps = (SETTLE_HOLD_MS / dt_ms).round() as usize;
    let max_steps = (SIMULATION_CAP_MS / dt_ms).round() as usize;
    let mut x = PlantState::at_rest(params, start_dva).to_vector();
    let mut out = vec![PlantState::from_vector(&x)];
    let mut settled_for = 0usize;
    for k in 0..max_steps {
        x = integ.step(&x, &cmd, k as f64 * dt_ms)?;
        out.push(PlantState::from_vector(&x));
        if (x[0] - target_dva).abs() < tol {
            settled_for += 1;
            if settled_for >= hold_steps {
                break;
            }
        } else {
            settled_for = 0;
        }
    }
    Ok(out)
}

/// Both axes of a straight command to a 2-D target, simulated independently.
pub fn simulate_saccade_2d(
    params: &PlantParams,
    start: [f64; 2],
    target: [f64; 2],
    dt_ms: f64,
    steps: usize,
) -> Result<Vec<[PlantState; 2]>> {
    let integ = AxisIntegrator::new(*params, dt_ms)?;
    let cmds = [0, 1].map(|a| PulseStep::new(params, start[a], target[a]));
    let mut xs = [0, 1].map(|a| PlantState::at_rest(params, start[a]).to_vector());
    let mut out = vec![xs.map(|x| PlantState::from_vector(&x))];
    for k in 0..steps {
        for a in 0..2 {
            xs[a] = integ.step(&xs[a], &cmds[a], k as f64 * dt_ms)?;
        }
        out.push(xs.map(|x| PlantState::from_vector(&x)));
    }
    Ok(out)
}

/// Cohort generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub duration_s: f64,
    /// Half-ranges of the uniform target distribution (dva).
    pub target_range: [f64; 2],
    /// Smallest displacement between consecutive targets (dva).
    pub min_step_dva: f64,
    pub hold_ms: usize,
    pub latency_ms: f64,
    pub latency_jitter_ms: f64,
    /// Range the per-subject noise standard deviation is drawn from (dva).
    pub noise_sigma_range: [f64; 2],
    /// Correlation time of the low-pass fixation noise; 0 gives white noise.
    pub noise_corr_ms: f64,
    /// Expected blinks per second (each 80-200 ms, placed inside holds).
    pub blink_rate_hz: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 30,
            duration_s: 30.0,
            target_range: [15.0, 9.0],
            min_step_dva: 5.0,
            hold_ms: 1000,
            latency_ms: 200.0,
            latency_jitter_ms: 30.0,
            noise_sigma_range: [0.05, 0.8],
            noise_corr_ms: 500.0,
            blink_rate_hz: 0.0,
            rng_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::Config("cohort needs at least one subject".into()));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        if self.hold_ms < 300 {
            return Err(Error::Config("hold_ms must be at least 300".into()));
        }
        let [lo, hi] = self.noise_sigma_range;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::Config("noise_sigma_range must satisfy 0 <= lo <= hi".into()));
        }
        let [rx, ry] = self.target_range;
        if !(rx > 0.0 && ry > 0.0) || self.min_step_dva >= 2.0 * rx.max(ry) {
            return Err(Error::Config("target range too small for min_step_dva".into()));
        }
        if self.latency_jitter_ms >= self.latency_ms || self.latency_ms + self.latency_jitter_ms >= self.hold_ms as f64 {
            return Err(Error::Config("latency must fit inside a target hold".into()));
        }
        Ok(())
    }
}

/// Per-subject parameter distribution: log-normal jitter around `base`, then
/// a uniform speed factor applied via [`PlantParams::with_speed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSampler {
    pub base: PlantParams,
    pub log_sd: f64,
    pub speed_range: [f64; 2],
}

impl Default for ParamSampler {
    fn default() -> Self {
        ParamSampler {
            base: PlantParams::default(),
            log_sd: 0.05,
            speed_range: [0.9, 1.1],
        }
    }
}

impl ParamSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (PlantParams, f64) {
        let mut v = self.base.to_array();
        for x in &mut v {
            let z: f64 = StandardNormal.sample(rng);
            *x *= (self.log_sd * z).exp();
        }
        let [lo, hi] = self.speed_range;
        let speed = if hi > lo { rng.random_range(lo..hi) } else { lo };
        (PlantParams::from_array(v).with_speed(speed), speed)
    }
}

/// A generated subject with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSubject {
    pub recording: GazeRecording,
    pub truth: Vec<EventSegment>,
    pub params: PlantParams,
    pub noise_sigma: f64,
    pub speed_factor: f64,
}

/// Ground-truth saccades are the spans where the noise-free radial speed is
/// at least this (dva/s).
pub const TRUTH_SPEED_THRESHOLD: f64 = 20.0;

pub fn generate_cohort(cfg: &SynthConfig, sampler: &ParamSampler) -> Result<Vec<SyntheticSubject>> {
    cfg.validate()?;
    (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| generate_subject(cfg, sampler, i))
        .collect()
}

fn subject_rng(seed: u64, subject: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject as u64 + 1);
    rng
}

pub fn generate_subject(cfg: &SynthConfig, sampler: &ParamSampler, index: usize) -> Result<SyntheticSubject> {
    let mut rng = subject_rng(cfg.rng_seed, index);
    let mut attempt = 0;
    let (params, speed) = loop {
        let (p, s) = sampler.sample(&mut rng);
        match p.validate().and_then(|_| AxisIntegrator::new(p, 1.0).map(|_| ())) {
            Ok(()) => break (p, s),
            Err(e) if attempt >= 10 => return Err(e),
            Err(_) => attempt += 1,
        }
    };
    let [lo, hi] = cfg.noise_sigma_range;
    let sigma = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let n = (cfg.duration_s * 1000.0).round() as usize;
    let integ = AxisIntegrator::new(params, 1.0)?;

    // Target schedule.
    let mut targets = Vec::new();
    let mut current = random_target(&mut rng, cfg, None);
    let mut t = 0usize;
    while t < n {
        targets.push(TargetPoint {
            t_ms: t as i64,
            x_dva: current[0],
            y_dva: current[1],
        });
        current = random_target(&mut rng, cfg, Some(current));
        t += cfg.hold_ms;
    }

    // Clean trajectory under pulse-step commands issued after each latency.
    let mut clean = vec![[0.0f64; 2]; n];
    let mut x = [0, 1].map(|a| PlantState::at_rest(&params, targets[0].pos()[a]).to_vector());
    let mut cmds = [0, 1].map(|a| PulseStep::new(&params, targets[0].pos()[a], targets[0].pos()[a]));
    let mut cmd_time = 0usize;
    let mut onsets = Vec::new();
    let mut next_target = 1;
    let mut next_cmd = latency(&mut rng, cfg) + cfg.hold_ms;
    for (k, slot) in clean.iter_mut().enumerate() {
        if k == next_cmd && next_target < targets.len() {
            let goal = targets[next_target].pos();
            cmds = [0, 1].map(|a| PulseStep::new(&params, x[a][0], goal[a]));
            cmd_time = k;
            onsets.push(k);
            next_target += 1;
            next_cmd = next_target * cfg.hold_ms + latency(&mut rng, cfg);
        }
        *slot = [x[0][0], x[1][0]];
        for a in 0..2 {
            x[a] = integ.step(&x[a], &cmds[a], (k - cmd_time) as f64)?;
        }
    }

    // Low-pass Gaussian noise per axis.
    let rho = if cfg.noise_corr_ms > 0.0 {
        (-1.0 / cfg.noise_corr_ms).exp()
    } else {
        0.0
    };
    let innov = sigma * (1.0 - rho * rho).sqrt();
    let mut noise = [0.0f64; 2];
    for v in &mut noise {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = sigma * z;
    }
    let mut samples = Vec::with_capacity(n);
    for (k, p) in clean.iter().enumerate() {
        if k > 0 {
            for v in &mut noise {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = rho * *v + innov * z;
            }
        }
        samples.push(GazeSample::new(k as i64, p[0] + noise[0], p[1] + noise[1]));
    }

    // Blinks fall inside holds, clear of commanded saccades.
    if cfg.blink_rate_hz > 0.0 {
        let expected = cfg.blink_rate_hz * cfg.duration_s;
        let count = expected.floor() as usize + usize::from(rng.random_bool(expected.fract()));
        for _ in 0..count {
            let len = rng.random_range(80..=200usize);
            let start = rng.random_range(0..n.saturating_sub(len).max(1));
            let clear = onsets.iter().all(|&o| start + len + 50 < o || start > o + 300);
            if clear {
                for s in samples.iter_mut().skip(start).take(len) {
                    *s = GazeSample::invalid(s.t_ms);
                }
            }
        }
    }

    let subject_id = format!("S{:03}", index + 1);
    let recording = GazeRecording::new(subject_id.clone(), "1", samples, Some(targets))?;
    let truth = ground_truth(&recording, &clean)?;
    Ok(SyntheticSubject {
        recording,
        truth,
        params,
        noise_sigma: sigma,
        speed_factor: speed,
    })
}

impl TargetPoint {
    fn pos(&self) -> [f64; 2] {
        [self.x_dva, self.y_dva]
    }
}

fn latency(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> usize {
    let j = cfg.latency_jitter_ms;
    let l = if j > 0.0 {
        rng.random_range(cfg.latency_ms - j..=cfg.latency_ms + j)
    } else {
        cfg.latency_ms
    };
    l.round() as usize
}

fn random_target(rng: &mut ChaCha8Rng, cfg: &SynthConfig, prev: Option<[f64; 2]>) -> [f64; 2] {
    let [rx, ry] = cfg.target_range;
    loop {
        let p = [rng.random_range(-rx..=rx), rng.random_range(-ry..=ry)];
        match prev {
            Some(q) if (p[0] - q[0]).hypot(p[1] - q[1]) < cfg.min_step_dva => continue,
            _ => return p,
        }
    }
}

/// Labels from the noise-free trajectory: saccade where the clean radial
/// speed is at least [`TRUTH_SPEED_THRESHOLD`], blink where the recording is
/// invalid, fixation elsewhere. Props are measured on the clean signal.
fn ground_truth(rec: &GazeRecording, clean: &[[f64; 2]]) -> Result<Vec<EventSegment>> {
    let samples = clean
        .iter()
        .enumerate()
        .map(|(k, p)| GazeSample::new(k as i64, p[0], p[1]))
        .collect();
    let clean_rec = GazeRecording::new(rec.subject_id.clone(), "clean", samples, None)?;
    let vel = compute_velocity(&clean_rec, &DiffConfig::default())?;
    let labels: Vec<EventKind> = (0..rec.len())
        .map(|i| {
            if !rec.is_valid(i) {
                EventKind::Blink
            } else if vel.v_radial[i] >= TRUTH_SPEED_THRESHOLD {
                EventKind::Saccade
            } else {
                EventKind::Fixation
            }
        })
        .collect();
    Ok(segments_from_labels(&clean_rec, &vel, &labels, true))
}
