use std::io::Write;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::VelocityTrace;

use super::lstm::{euclidean_loss, param_count, LstmModel, INPUT, OUTPUT};
use super::windows::{WindowSample, WINDOW_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Fraction of training subjects held out for early stopping.
    pub val_fraction: f64,
    /// Upper bound on training windows per horizon; 0 keeps them all.
    pub max_train_windows: usize,
    /// Upper bound on validation windows; 0 keeps them all.
    pub max_val_windows: usize,
    /// Share of the capped set drawn from windows whose target moves more
    /// than [`MOVING_TARGET_DVA`].
    pub moving_fraction: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10,
            patience: 3,
            val_fraction: 0.1,
            max_train_windows: 0,
            max_val_windows: 0,
            moving_fraction: 0.5,
            rng_seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.eps > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::OptimizerInit(format!(
                "lr {} beta1 {} beta2 {} eps {}",
                self.lr, self.beta1, self.beta2, self.eps
            )));
        }
        if !(0.0..=1.0).contains(&self.moving_fraction) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("moving_fraction and val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Displacement above which a window counts as moving when subsampling.
pub const MOVING_TARGET_DVA: f64 = 0.5;

/// Windows drawn from several velocity traces.
#[derive(Debug, Clone, Default)]
pub struct WindowSet<'a> {
    pub traces: Vec<&'a VelocityTrace>,
    pub items: Vec<(usize, WindowSample)>,
}

impl<'a> WindowSet<'a> {
    pub fn push_trace(&mut self, vel: &'a VelocityTrace, windows: impl IntoIterator<Item = WindowSample>) {
        let k = self.traces.len();
        self.traces.push(vel);
        self.items.extend(windows.into_iter().map(|w| (k, w)));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Keeps at most `cap` windows, `moving_fraction` of them (when
    /// available) from windows with a large target displacement. Sampling is
    /// seeded and the kept windows stay in their original order.
    pub fn subsample(&mut self, cap: usize, moving_fraction: f64, seed: u64) {
        if cap == 0 || self.items.len() <= cap {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut moving, mut still): (Vec<usize>, Vec<usize>) = (0..self.items.len()).partition(|&i| {
            let t = self.items[i].1.target;
            t[0].hypot(t[1]) > MOVING_TARGET_DVA
        });
        moving.shuffle(&mut rng);
        still.shuffle(&mut rng);
        let want_moving = ((cap as f64 * moving_fraction).round() as usize).min(moving.len());
        let want_still = (cap - want_moving).min(still.len());
        let extra_moving = (cap - want_moving - want_still).min(moving.len() - want_moving);
        let mut keep: Vec<usize> = moving[..want_moving + extra_moving]
            .iter()
            .chain(&still[..want_still])
            .copied()
            .collect();
        keep.sort_unstable();
        self.items = keep.into_iter().map(|i| self.items[i]).collect();
    }

    /// Inputs shaped `(T, B, 2)` and targets `(B, 2)` for the listed items.
    pub fn batch(&self, idx: &[usize]) -> (Array3<f64>, Array2<f64>) {
        let b = idx.len();
        let mut x = Array3::zeros((WINDOW_LEN, b, INPUT));
        let mut y = Array2::zeros((b, OUTPUT));
        for (col, &i) in idx.iter().enumerate() {
            let (k, w) = self.items[i];
            for (t, v) in w.input(self.traces[k]).enumerate() {
                x[[t, col, 0]] = v[0];
                x[[t, col, 1]] = v[1];
            }
            y[[col, 0]] = w.target[0];
            y[[col, 1]] = w.target[1];
        }
        (x, y)
    }

    /// Mean Euclidean loss of `model` over every window.
    pub fn mean_loss(&self, model: &LstmModel, batch_size: usize) -> Result<f64> {
        if self.is_empty() {
            return Ok(f64::NAN);
        }
        let idx: Vec<usize> = (0..self.len()).collect();
        let mut total = 0.0;
        for chunk in idx.chunks(batch_size) {
            let (x, y) = self.batch(chunk);
            let out = model.forward(x.view())?;
            total += euclidean_loss(out.view(), y.view())?.0 * chunk.len() as f64;
        }
        Ok(total / self.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LstmModel,
    /// Row 0 holds the losses before any update.
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
}

pub fn write_loss_csv<W: Write>(history: &[EpochLoss], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for h in history {
        w.serialize((h.epoch, h.train_loss, h.val_loss))?;
    }
    w.flush().map_err(|e| Error::io("<loss csv>", e))?;
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
}

/// Mini-batch Adam on the mean Euclidean loss, reshuffling each epoch with a
/// stream derived from the seed. Stops after `patience` epochs without a
/// validation improvement and returns the best weights seen.
pub fn lstm_train(
    model: LstmModel,
    train: &WindowSet<'_>,
    val: &WindowSet<'_>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    let score = |m: &LstmModel, train_loss: f64| -> Result<f64> {
        if val.is_empty() {
            Ok(train_loss)
        } else {
            val.mean_loss(m, cfg.batch_size)
        }
    };
    let mut model = model;
    let initial_train = train.mean_loss(&model, cfg.batch_size)?;
    let initial_val = score(&model, initial_train)?;
    let mut history = vec![EpochLoss {
        epoch: 0,
        train_loss: initial_train,
        val_loss: initial_val,
    }];
    let mut best = (initial_val, 0usize, model.clone());
    let mut adam = Adam::new(param_count());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        // Epoch training loss is the running mean over its batches.
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train.batch(chunk);
            let (loss, grad) = model.loss_and_grad(x.view(), y.view())?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch, loss });
            }
            total += loss * chunk.len() as f64;
            adam.update(model.params_mut(), &grad, cfg);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = score(&model, train_loss)?;
        tracing::debug!(epoch, train_loss, val_loss, "lstm epoch");
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        history,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learned::windows::make_windows;
    use crate::signal::{compute_velocity, DiffConfig, GazeRecording, GazeSample};

    const PIECE: usize = 160;

    /// Constant-velocity pieces of [`PIECE`] samples with random velocities.
    fn piecewise(seed: u64, n: usize) -> GazeRecording {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pos = [0.0, 0.0];
        let mut v = [0.0, 0.0];
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            if i % PIECE == 0 {
                v = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            }
            pos[0] += v[0] / 1000.0;
            pos[1] += v[1] / 1000.0;
            samples.push(GazeSample::new(i as i64, pos[0], pos[1]));
        }
        GazeRecording::new(format!("p{seed}"), "1", samples, None).unwrap()
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut order: Vec<usize> = (0..1000).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        order.shuffle(&mut rng);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..1000).collect::<Vec<_>>());
        assert_ne!(order, sorted);
    }

    #[test]
    fn subsample_respects_cap_and_order() {
        let vel = VelocityTrace { vx: vec![0.0; 10], vy: vec![0.0; 10], v_radial: vec![0.0; 10] };
        let mut set = WindowSet::default();
        set.push_trace(
            &vel,
            (0..100).map(|i| WindowSample { end_idx: i, target: [if i % 10 == 0 { 1.0 } else { 0.0 }, 0.0] }),
        );
        set.subsample(20, 0.5, 4);
        assert_eq!(set.len(), 20);
        let moving = set.items.iter().filter(|(_, w)| w.target[0] > 0.5).count();
        assert_eq!(moving, 10);
        assert!(set.items.windows(2).all(|w| w[0].1.end_idx < w[1].1.end_idx));
    }

    #[test]
    fn learns_constant_velocity_and_is_deterministic() {
        let recs: Vec<GazeRecording> = (0..6).map(|s| piecewise(s, 8000)).collect();
        let vels: Vec<VelocityTrace> = recs.iter().map(|r| compute_velocity(r, &DiffConfig::causal()).unwrap()).collect();
        let windows = |k: usize| -> Vec<WindowSample> {
            // Windows lying within one constant-velocity piece.
            make_windows(&recs[k], &vels[k], 40)
                .into_iter()
                .filter(|w| w.start_idx() / PIECE == (w.end_idx + 40) / PIECE && w.start_idx() % PIECE >= 8)
                .collect()
        };
        let mut train = WindowSet::default();
        let mut val = WindowSet::default();
        let mut test = WindowSet::default();
        for k in 0..4 {
            train.push_trace(&vels[k], windows(k));
        }
        val.push_trace(&vels[4], windows(4));
        test.push_trace(&vels[5], windows(5));
        train.subsample(2048, 0.0, 1);
        val.subsample(256, 0.0, 2);
        test.subsample(512, 0.0, 3);
        let cfg = TrainConfig { epochs: 20, patience: 20, lr: 1e-3, batch_size: 64, ..TrainConfig::default() };
        let short = TrainConfig { epochs: 1, ..cfg.clone() };
        let a = lstm_train(LstmModel::seeded(1), &train, &val, &short).unwrap();
        let b = lstm_train(LstmModel::seeded(1), &train, &val, &short).unwrap();
        assert_eq!(a.model, b.model);
        let a = lstm_train(LstmModel::seeded(1), &train, &val, &cfg).unwrap();
        let first = a.history[0].train_loss;
        let last = a.history.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let held_out = test.mean_loss(&a.model, 256).unwrap();
        assert!(held_out < 0.02, "held-out mean error {held_out}");
    }

    #[test]
    fn empty_training_set_rejected() {
        let cfg = TrainConfig::default();
        let e = lstm_train(LstmModel::zeros(), &WindowSet::default(), &WindowSet::default(), &cfg);
        assert!(matches!(e, Err(Error::InsufficientData(_))));
        let bad = TrainConfig { lr: -1.0, ..cfg };
        let vel = VelocityTrace { vx: vec![0.0; 200], vy: vec![0.0; 200], v_radial: vec![0.0; 200] };
        let mut set = WindowSet::default();
        set.push_trace(&vel, [WindowSample { end_idx: 150, target: [0.0, 0.0] }]);
        assert!(matches!(lstm_train(LstmModel::zeros(), &set, &set, &bad), Err(Error::OptimizerInit(_))));
    }
}
