use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{Model, ModelSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Stream reserved for the validation split; epoch shuffles use stream `epoch`.
const SPLIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 16,
            max_epochs: 500,
            patience: 5,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must be in (0, 1), got {}", self.val_fraction)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: Model,
    pub history: Vec<EpochLoss>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub config: TrainConfig,
}

/// Patience rule on a monitored loss; only strict improvements reset the counter.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records the loss of `epoch` (1-based). Returns true when training should stop.
    pub fn update(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            false
        } else {
            self.wait += 1;
            self.wait >= self.patience
        }
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Stratified split of positions `0..labels.len()` into (train, validation).
///
/// Each class gives `round(frac * count)` samples to validation, clamped so
/// that both sides keep at least one sample of the class.
pub fn validation_split(labels: &[u8], frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::Domain(format!(
                "class {class} has {} training samples, need at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let nv = ((frac * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..nv]);
        train.extend_from_slice(&idx[nv..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Visiting order of `n` training positions in `epoch`; depends only on `(seed, epoch, n)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains on all samples of `inputs`.
pub fn train(spec: ModelSpec, inputs: &Tensor, labels: &[u8], cfg: &TrainConfig) -> Result<TrainedModel> {
    let rows: Vec<usize> = (0..inputs.batch()).collect();
    train_rows(spec, inputs, labels, &rows, cfg)
}

/// Trains on logical samples `i` stored at `inputs.sample(rows[i])` with label `labels[i]`.
pub fn train_rows(
    spec: ModelSpec,
    inputs: &Tensor,
    labels: &[u8],
    rows: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if labels.len() != rows.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![rows.len()],
            got: vec![labels.len()],
        });
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= inputs.batch()) {
        return Err(Error::Domain(format!("row {bad} out of range for {} samples", inputs.batch())));
    }
    let (train_pos, val_pos) = validation_split(labels, cfg.val_fraction, cfg.seed)?;
    let gather = |pos: &[usize]| -> (Tensor, Vec<f64>) {
        let physical: Vec<usize> = pos.iter().map(|&p| rows[p]).collect();
        (inputs.gather(&physical), pos.iter().map(|&p| labels[p] as f64).collect())
    };
    let (x_train, y_train) = gather(&train_pos);
    let (x_val, y_val) = gather(&val_pos);

    let mut model = Model::glorot(spec, cfg.seed)?;
    let mut state = AdamState::new(model.param_count());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params.clone();
    let mut history = Vec::new();
    let n = train_pos.len();

    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(cfg.seed, epoch, n);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_train.gather(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| y_train[i]).collect();
            let (loss, grads) = model.gradients(&xb, &yb)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            adam_step(&cfg.adam, &mut model.params, &grads, &mut state);
        }
        let train_loss = loss_sum / n as f64;
        let val_loss = model.loss(&x_val, &y_val)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss in epoch {epoch}")));
        }
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        let stop = stopper.update(epoch, val_loss);
        if stopper.improved_at(epoch) {
            best_params.clone_from(&model.params);
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        if stop {
            break;
        }
    }
    model.set_params(best_params)?;
    Ok(TrainedModel {
        model,
        stopped_epoch: history.len(),
        best_epoch: stopper.best_epoch(),
        history,
        config: cfg.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Probabilities and hard labels; a probability of exactly 0.5 maps to the positive class.
pub fn predict(trained: &TrainedModel, batch: &Tensor) -> Result<Prediction> {
    let probabilities = trained.model.predict_proba(batch)?;
    let labels = probabilities.iter().map(|&p| u8::from(p >= 0.5)).collect();
    Ok(Prediction { probabilities, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::Arch;

    /// Class 0 lights the top half of an 8×8 image, class 1 the bottom half.
    fn separable(n: usize, seed: u64) -> (Tensor, Vec<u8>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * 64);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = (i % 2) as u8;
            for r in 0..8 {
                for _ in 0..8 {
                    let on = (r < 4) == (y == 0);
                    data.push(if on { rng.random_range(0.5..1.0) } else { 0.0 });
                }
            }
            labels.push(y);
        }
        (Tensor::new(vec![n, 8, 8, 1], data).unwrap(), labels)
    }

    #[test]
    fn early_stopping_rule() {
        let mut es = EarlyStopping::new(5);
        let losses = [0.7, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.1];
        let mut stopped = None;
        for (i, &l) in losses.iter().enumerate() {
            if es.update(i + 1, l) {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(7));
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i < 25)).collect();
        let (t, v) = validation_split(&labels, 0.1, 3).unwrap();
        assert_eq!(t.len() + v.len(), 40);
        assert_eq!(v.iter().filter(|&&i| labels[i] == 1).count(), 3);
        assert_eq!(v.iter().filter(|&&i| labels[i] == 0).count(), 2);
        let tiny = [0, 0, 1, 1];
        let (t, v) = validation_split(&tiny, 0.1, 0).unwrap();
        assert_eq!((t.len(), v.len()), (2, 2));
        assert!(validation_split(&[0, 0, 0, 1], 0.1, 0).is_err());
    }

    #[test]
    fn missing_class_rejected() {
        let (x, _) = separable(10, 0);
        let labels = vec![1u8; 10];
        let err = train(ModelSpec::new(Arch::Fc, vec![8, 8, 1]), &x, &labels, &TrainConfig::default());
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn separable_fc_learns() {
        let (x, y) = separable(80, 1);
        let cfg = TrainConfig {
            max_epochs: 200,
            ..TrainConfig::default()
        }
        .with_seed(7);
        let rows: Vec<usize> = (0..40).collect();
        let trained = train_rows(ModelSpec::new(Arch::Fc, vec![8, 8, 1]), &x, &y[..40], &rows, &cfg).unwrap();
        let last = trained.history[trained.best_epoch - 1];
        assert!(last.train_loss < 0.1, "train loss {}", last.train_loss);
        assert!(trained.stopped_epoch <= 200);
        assert_eq!(trained.history.len(), trained.stopped_epoch);

        let held: Vec<usize> = (40..80).collect();
        let pred = predict(&trained, &x.gather(&held)).unwrap();
        let correct = pred.labels.iter().zip(&y[40..]).filter(|(a, b)| a == b).count();
        assert!(correct as f64 / 40.0 >= 0.95);
        assert!(pred.probabilities.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn deterministic_and_order_free() {
        let (x, y) = separable(24, 2);
        let cfg = TrainConfig {
            max_epochs: 15,
            ..TrainConfig::default()
        }
        .with_seed(11);
        let spec = ModelSpec::new(Arch::Cnn2d, vec![8, 8, 1]).with_filters(2);
        let a = train(spec.clone(), &x, &y, &cfg).unwrap();
        let b = train(spec.clone(), &x, &y, &cfg).unwrap();
        assert_eq!(a, b);

        // physically permute storage, compensate with the row map
        let perm: Vec<usize> = (0..24).map(|i| (i * 7) % 24).collect();
        let stored = x.gather(&perm);
        let mut rows = vec![0; 24];
        for (pos, &orig) in perm.iter().enumerate() {
            rows[orig] = pos;
        }
        let c = train_rows(spec, &stored, &y, &rows, &cfg).unwrap();
        assert_eq!(a.model.params, c.model.params);
        assert_eq!(a.history, c.history);
    }

    #[test]
    fn tie_goes_positive() {
        let spec = ModelSpec::new(Arch::Fc, vec![2]);
        let trained = TrainedModel {
            model: Model::zeros(spec).unwrap(),
            history: vec![],
            stopped_epoch: 0,
            best_epoch: 0,
            config: TrainConfig::default(),
        };
        let p = predict(&trained, &Tensor::new(vec![1, 2], vec![0.3, 0.1]).unwrap()).unwrap();
        assert_eq!(p.probabilities, vec![0.5]);
        assert_eq!(p.labels, vec![1]);
    }
}
