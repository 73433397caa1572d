//! Losses, windowed mini-batch training with Adam, gradient clipping, and
//! early stopping on validation loss.

use std::ops::Range;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::split::SplitRanges;
use crate::error::{Error, Result};
use crate::model::{
    encode_sequence, log_density_at_points, mlp_heads, raster_likelihood, ModelConfig, RasterPlan,
};
use crate::numerics::{
    adam_step, clip_global_norm, AdamConfig, CsrMatrix, ParamStore, Tape, TensorId, Tensor,
};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub window: usize,
    pub early_stop_tolerance: u32,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.003,
            batch: 5,
            window: 10,
            early_stop_tolerance: 5,
            clip_norm: 10.0,
            weight_decay: 0.001,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0
            || self.batch == 0
            || self.window == 0
            || self.early_stop_tolerance == 0
            || self.clip_norm <= 0.0
            || self.weight_decay < 0.0
            || self.max_epochs == 0
        {
            return Err(Error::Config(format!("invalid training config: {self:?}")));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub counter: u32,
}

/// Early-stopping bookkeeping: the counter grows on every epoch whose
/// validation loss fails to improve on the best and resets on improvement.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_loss: f64,
    pub non_improvement: u32,
    pub history: Vec<EpochRecord>,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            epoch: 0,
            best_val_loss: f64::INFINITY,
            non_improvement: 0,
            history: Vec::new(),
        }
    }
}

impl TrainState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one epoch's validation loss; returns true on improvement.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        self.epoch += 1;
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.non_improvement = 0;
            true
        } else {
            self.non_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self, tolerance: u32) -> bool {
        self.non_improvement >= tolerance
    }
}

/// Render the log as line-delimited records.
pub fn format_training_log(history: &[EpochRecord]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for r in history {
        writeln!(
            out,
            "epoch={} train_loss={:.6} val_loss={:.6} lr={} counter={}",
            r.epoch, r.train_loss, r.val_loss, r.lr, r.counter
        )
        .unwrap();
    }
    out
}

/// Binary cross-entropy between a clamped likelihood raster and binary cell
/// labels, averaged over all cells: every grid cell is counted exactly once
/// because the regions partition the grid.
pub fn bce_loss(tape: &mut Tape, lik: TensorId, labels: &Tensor) -> Result<TensorId> {
    let lv = tape.value(lik);
    if lv.shape() != labels.shape() {
        return Err(Error::ShapeMismatch {
            prim: "bce-loss",
            detail: format!("raster {:?} vs labels {:?}", lv.shape(), labels.shape()),
        });
    }
    if lv.data().iter().any(|&v| v <= 0.0 || v >= 1.0) {
        return Err(Error::InvalidArgument(
            "bce expects likelihoods clamped inside (0, 1)".into(),
        ));
    }
    let n_cells = labels.numel() as f64;
    let q = tape.constant(labels.clone());
    let ones = tape.constant(Tensor::ones(labels.shape()));
    let log_l = tape.log(lik)?;
    let pos = tape.mul(q, log_l)?;
    let not_q = tape.sub(ones, q)?;
    let not_l = tape.sub(ones, lik)?;
    let log_not_l = tape.log(not_l)?;
    let neg = tape.mul(not_q, log_not_l)?;
    let both = tape.add(pos, neg)?;
    let total = tape.sum(both)?;
    tape.smul(-1.0 / n_cells, total)
}

/// Negative log-likelihood of observed event locations under their regions'
/// Gaussians. The alternative objective; sum over events, zero when empty.
pub fn nll_loss(
    tape: &mut Tape,
    events: &[(usize, f64, f64)],
    n_regions: usize,
    mu: TensorId,
    v: TensorId,
) -> Result<TensorId> {
    if events.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let mut triplets = Vec::with_capacity(events.len());
    let mut xs = Vec::with_capacity(events.len());
    let mut ys = Vec::with_capacity(events.len());
    for (idx, &(region, x, y)) in events.iter().enumerate() {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::InvalidArgument(format!(
                "event ({x}, {y}) outside the unit square"
            )));
        }
        if region >= n_regions {
            return Err(Error::InvalidArgument(format!(
                "event region {region} out of {n_regions}"
            )));
        }
        triplets.push((idx, region, 1.0));
        xs.push(x);
        ys.push(y);
    }
    let selection = Rc::new(CsrMatrix::from_triplets(events.len(), n_regions, &triplets)?);
    let xs = Tensor::new(vec![events.len(), 1], xs)?;
    let ys = Tensor::new(vec![events.len(), 1], ys)?;
    let log_l = log_density_at_points(tape, &selection, &xs, &ys, mu, v)?;
    let total = tape.sum(log_l)?;
    tape.smul(-1.0, total)
}

/// Per-slot model inputs and targets at the training raster resolution.
#[derive(Clone, Debug)]
pub struct TrainingData {
    /// Node features per slot, each (N, d_x).
    pub features: Vec<Tensor>,
    /// Flattened binary cell labels per slot, each (I*J, 1).
    pub labels: Vec<Tensor>,
}

impl TrainingData {
    pub fn n_slots(&self) -> usize {
        self.features.len()
    }
}

/// Sliding-window start offsets whose window and target both fall inside
/// `range` (windows never straddle split boundaries).
pub fn window_starts(range: &Range<usize>, window: usize) -> Vec<usize> {
    if range.len() < window + 1 {
        return Vec::new();
    }
    (range.start..=range.end - window - 1).collect()
}

/// Build one window's loss on the tape: encode the window, emit densities,
/// rasterize, and score against the target slot's labels.
fn window_loss(
    tape: &mut Tape,
    store: &ParamStore,
    model_cfg: &ModelConfig,
    scaled: &Rc<CsrMatrix>,
    plan: &RasterPlan,
    data: &TrainingData,
    start: usize,
) -> Result<TensorId> {
    let window = &data.features[start..start + model_cfg.window];
    let h = encode_sequence(tape, store, model_cfg, scaled, window)?;
    let (mu, v) = mlp_heads(tape, store, h)?;
    let lik = raster_likelihood(tape, plan, mu, v)?;
    bce_loss(tape, lik, &data.labels[start + model_cfg.window])
}

/// One pass over the training range: seeded-shuffled stride-1 windows in
/// batches, each batch followed by clipping and an Adam step. Returns the
/// mean batch loss.
pub fn train_epoch(
    store: &mut ParamStore,
    model_cfg: &ModelConfig,
    scaled: &Rc<CsrMatrix>,
    plan: &RasterPlan,
    data: &TrainingData,
    train_range: &Range<usize>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let mut starts = window_starts(train_range, model_cfg.window);
    if starts.is_empty() {
        return Err(Error::Training(format!(
            "training range {train_range:?} is shorter than window + 1"
        )));
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add((epoch as u64).wrapping_mul(0x9E3779B97F4A7C15)));
    starts.shuffle(&mut rng);

    let adam = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::new(cfg.lr, cfg.weight_decay)
    };
    let mut batch_losses = Vec::new();
    for batch in starts.chunks(cfg.batch) {
        let mut tape = Tape::new();
        let mut acc: Option<TensorId> = None;
        for &s in batch {
            let loss = window_loss(&mut tape, store, model_cfg, scaled, plan, data, s)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, loss)?,
                None => loss,
            });
        }
        let total = acc.expect("non-empty batch");
        let batch_loss = tape.smul(1.0 / batch.len() as f64, total)?;
        let loss_val = tape.value(batch_loss).item();
        if !loss_val.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {loss_val} at epoch {epoch}, windows {batch:?}"
            )));
        }
        store.zero_grads();
        tape.backward(batch_loss)?;
        tape.accumulate_param_grads(store);
        clip_global_norm(store, cfg.clip_norm);
        adam_step(store, &adam)?;
        batch_losses.push(loss_val);
    }
    Ok(batch_losses.iter().sum::<f64>() / batch_losses.len() as f64)
}

/// Mean window BCE over a range, without parameter updates.
pub fn evaluate_loss(
    store: &ParamStore,
    model_cfg: &ModelConfig,
    scaled: &Rc<CsrMatrix>,
    plan: &RasterPlan,
    data: &TrainingData,
    range: &Range<usize>,
) -> Result<f64> {
    let starts = window_starts(range, model_cfg.window);
    if starts.is_empty() {
        return Err(Error::Training(format!(
            "evaluation range {range:?} is shorter than window + 1"
        )));
    }
    let mut total = 0.0;
    for s in starts.iter().copied() {
        let mut tape = Tape::new();
        let loss = window_loss(&mut tape, store, model_cfg, scaled, plan, data, s)?;
        total += tape.value(loss).item();
    }
    Ok(total / starts.len() as f64)
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub state: TrainState,
    /// True when the non-improvement counter reached the tolerance.
    pub stopped_early: bool,
    /// True when training ran out of epochs instead.
    pub hit_max_epochs: bool,
}

/// Train with early stopping; on return the store holds the parameters of
/// the best validation epoch.
pub fn fit(
    store: &mut ParamStore,
    model_cfg: &ModelConfig,
    scaled: &Rc<CsrMatrix>,
    plan: &RasterPlan,
    data: &TrainingData,
    splits: &SplitRanges,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if cfg.window != model_cfg.window {
        return Err(Error::Config(format!(
            "training window {} disagrees with model window {}",
            cfg.window, model_cfg.window
        )));
    }
    let mut state = TrainState::new();
    let mut best_snapshot = store.snapshot();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = train_epoch(
            store,
            model_cfg,
            scaled,
            plan,
            data,
            &splits.train,
            cfg,
            epoch,
        )?;
        let val_loss = evaluate_loss(store, model_cfg, scaled, plan, data, &splits.val)?;
        if state.observe(val_loss) {
            best_snapshot = store.snapshot();
        }
        state.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: cfg.lr,
            counter: state.non_improvement,
        });
        if state.should_stop(cfg.early_stop_tolerance) {
            stopped_early = true;
            break;
        }
    }
    store.restore(&best_snapshot);
    Ok(FitOutcome {
        hit_max_epochs: !stopped_early,
        state,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian_pdf, GaussianParams};

    #[test]
    fn bce_constant_half_is_log_two() {
        let mut tape = Tape::new();
        let lik = tape.constant(Tensor::full(&[4, 1], 0.5));
        let labels = Tensor::new(vec![4, 1], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let loss = bce_loss(&mut tape, lik, &labels).unwrap();
        assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_hand_value() {
        // l = (0.9, 0.1, 0.8, 0.2), q = (1, 0, 1, 0)
        // -> -(log .9 + log .9 + log .8 + log .8)/4
        let mut tape = Tape::new();
        let lik = tape.constant(Tensor::new(vec![4, 1], vec![0.9, 0.1, 0.8, 0.2]).unwrap());
        let labels = Tensor::new(vec![4, 1], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let loss = bce_loss(&mut tape, lik, &labels).unwrap();
        let want = -(0.9f64.ln() + 0.9f64.ln() + 0.8f64.ln() + 0.8f64.ln()) / 4.0;
        assert!((tape.value(loss).item() - want).abs() < 1e-12);
        assert!((tape.value(loss).item() - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn bce_at_clamp_limits_is_tiny() {
        let eps = crate::model::RASTER_CLAMP;
        let mut tape = Tape::new();
        let lik = tape.constant(Tensor::new(vec![2, 1], vec![1.0 - eps, eps]).unwrap());
        let labels = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
        let loss = bce_loss(&mut tape, lik, &labels).unwrap();
        // each term is -log(1 - eps) ~ eps
        assert!(tape.value(loss).item() < 2.0 * eps);
        assert!(tape.value(loss).item() >= 0.0);
    }

    #[test]
    fn bce_rejects_unclamped_values() {
        let mut tape = Tape::new();
        let lik = tape.constant(Tensor::new(vec![2, 1], vec![0.5, 1.2]).unwrap());
        let labels = Tensor::zeros(&[2, 1]);
        assert!(bce_loss(&mut tape, lik, &labels).is_err());
    }

    #[test]
    fn nll_single_event_at_mean() {
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::new(vec![1, 2], vec![0.4, 0.6]).unwrap());
        let v = tape.constant(Tensor::new(vec![1, 2], vec![0.1, 0.1]).unwrap());
        let loss = nll_loss(&mut tape, &[(0, 0.4, 0.6)], 1, mu, v).unwrap();
        let peak = gaussian_pdf(0.4, 0.6, (0.4, 0.6), (0.1, 0.1)).unwrap();
        assert!((tape.value(loss).item() + peak.ln()).abs() < 1e-12);
        assert!((tape.value(loss).item() + 0.4647).abs() < 1e-4);
    }

    #[test]
    fn nll_empty_and_duplicate_events() {
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::new(vec![1, 2], vec![0.4, 0.6]).unwrap());
        let v = tape.constant(Tensor::new(vec![1, 2], vec![0.1, 0.2]).unwrap());
        let empty = nll_loss(&mut tape, &[], 1, mu, v).unwrap();
        assert_eq!(tape.value(empty).item(), 0.0);

        let single = nll_loss(&mut tape, &[(0, 0.3, 0.3)], 1, mu, v).unwrap();
        let double = nll_loss(&mut tape, &[(0, 0.3, 0.3), (0, 0.3, 0.3)], 1, mu, v).unwrap();
        assert!(
            (tape.value(double).item() - 2.0 * tape.value(single).item()).abs() < 1e-12
        );

        assert!(nll_loss(&mut tape, &[(0, 1.5, 0.5)], 1, mu, v).is_err());
    }

    #[test]
    fn window_start_arithmetic() {
        // 15 slots, window 10 -> 5 windows
        assert_eq!(window_starts(&(0..15), 10).len(), 5);
        assert_eq!(window_starts(&(0..15), 10), vec![0, 1, 2, 3, 4]);
        // too short -> none
        assert!(window_starts(&(0..10), 10).is_empty());
        // offset ranges stay inside the range
        assert_eq!(window_starts(&(100..115), 10), vec![100, 101, 102, 103, 104]);
    }

    #[test]
    fn early_stop_counter_semantics() {
        // losses 1.0, 0.9, then five non-improving -> stop after epoch 7
        let mut state = TrainState::new();
        assert!(state.observe(1.0));
        assert!(state.observe(0.9));
        for i in 1..=5u32 {
            assert!(!state.observe(0.95));
            assert_eq!(state.non_improvement, i);
            let expect_stop = i == 5;
            assert_eq!(state.should_stop(5), expect_stop);
        }
        assert_eq!(state.epoch, 7);
        assert_eq!(state.best_val_loss, 0.9);
    }

    #[test]
    fn equal_loss_counts_as_non_improvement() {
        let mut state = TrainState::new();
        state.observe(0.5);
        assert!(!state.observe(0.5));
        assert_eq!(state.non_improvement, 1);
    }

    #[test]
    fn log_format_is_stable() {
        let rec = EpochRecord {
            epoch: 3,
            train_loss: 0.123456789,
            val_loss: 0.5,
            lr: 0.003,
            counter: 1,
        };
        assert_eq!(
            format_training_log(&[rec]),
            "epoch=3 train_loss=0.123457 val_loss=0.500000 lr=0.003 counter=1\n"
        );
    }

    #[test]
    fn gaussian_params_roundtrip_from_tape() {
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let v = tape.constant(Tensor::new(vec![2, 2], vec![0.5, 0.6, 0.7, 0.8]).unwrap());
        let p = GaussianParams::from_tape(&tape, mu, v);
        assert_eq!(p.mu, vec![(0.1, 0.2), (0.3, 0.4)]);
        assert_eq!(p.v, vec![(0.5, 0.6), (0.7, 0.8)]);
    }
}
