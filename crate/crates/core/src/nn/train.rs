//! Mini-batch training with Adam, a linear λ schedule and best-epoch
//! selection on the validation set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::Graph;
use super::params::ParamStore;
use super::sna::{Sna, SnaInput, SnaTarget};
use super::tensor::Tensor;
use crate::error::{param_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    /// Weight of the intermediate-output terms in the first epoch; decays
    /// linearly to zero at the last epoch.
    pub lambda0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Train on non-overlapping square patches of this size instead of whole
    /// images. An epoch still covers every pixel once.
    pub patch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 2,
            lr: 1e-3,
            lr_decay: 0.95,
            lambda0: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            patch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return param_err("epochs and batch_size must be positive");
        }
        if !(self.lr >= 0.0) || !(self.lr_decay > 0.0) {
            return param_err(format!("invalid learning rate {} / decay {}", self.lr, self.lr_decay));
        }
        if self.patch == Some(0) {
            return param_err("patch size must be positive");
        }
        if !(self.lambda0 >= 0.0) {
            return param_err(format!("λ0 must be non-negative, got {}", self.lambda0));
        }
        Ok(())
    }

    /// λ for a zero-based epoch index.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lambda0;
        }
        self.lambda0 * (self.epochs - 1 - epoch.min(self.epochs - 1)) as f64 / (self.epochs - 1) as f64
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

/// One training example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: SnaInput,
    pub target: SnaTarget,
}

impl Sample {
    /// Splits into non-overlapping `size × size` patches, dropping any
    /// remainder at the right and bottom edges.
    pub fn patches(&self, size: usize) -> Result<Vec<Sample>> {
        let (w, h) = self.input.dims();
        if size == 0 || size > w || size > h {
            return param_err(format!("patch size {size} does not fit {w}x{h}"));
        }
        let crop = |t: &Tensor, x: usize, y: usize| t.crop(x, y, size, size);
        let mut out = Vec::with_capacity((w / size) * (h / size));
        for y in (0..=h - size).step_by(size) {
            for x in (0..=w - size).step_by(size) {
                let i = &self.input;
                out.push(Sample {
                    input: SnaInput {
                        rgb: crop(&i.rgb, x, y)?,
                        sparse_stokes: crop(&i.sparse_stokes, x, y)?,
                        sparse_angles: crop(&i.sparse_angles, x, y)?,
                        mask: crop(&i.mask, x, y)?,
                        prior_stokes: crop(&i.prior_stokes, x, y)?,
                        prior_angles: crop(&i.prior_angles, x, y)?,
                    },
                    target: SnaTarget {
                        stokes: crop(&self.target.stokes, x, y)?,
                        rgb: crop(&self.target.rgb, x, y)?,
                    },
                });
            }
        }
        Ok(out)
    }
}

/// Averages of the loss terms over a pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSummary {
    pub total: f64,
    pub main: f64,
    pub intermediate: f64,
    pub rgb: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub train: LossSummary,
    pub val: LossSummary,
}

impl EpochLog {
    pub const HEADER: [&'static str; 11] = [
        "epoch",
        "lr",
        "lambda",
        "train_total",
        "train_pol",
        "train_intermediate",
        "train_rgb",
        "val_total",
        "val_pol",
        "val_intermediate",
        "val_rgb",
    ];

    pub fn record(&self) -> [String; 11] {
        let f = |v: f64| format!("{v:.9e}");
        [
            self.epoch.to_string(),
            f(self.lr),
            f(self.lambda),
            f(self.train.total),
            f(self.train.main),
            f(self.train.intermediate),
            f(self.train.rgb),
            f(self.val.total),
            f(self.val.main),
            f(self.val.intermediate),
            f(self.val.rgb),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// One-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = store.get_mut(id).data_mut();
            for (((pi, mi), vi), gi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grads[k].data()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            }
        }
    }
}

fn batch_of(samples: &[Sample], idx: &[usize]) -> Result<(SnaInput, SnaTarget)> {
    let inputs: Vec<&SnaInput> = idx.iter().map(|&i| &samples[i].input).collect();
    let targets: Vec<&SnaTarget> = idx.iter().map(|&i| &samples[i].target).collect();
    Ok((SnaInput::stack(&inputs)?, SnaTarget::stack(&targets)?))
}

/// Mean loss terms over `samples`, weighting each by its image count.
pub fn evaluate_loss(model: &Sna, samples: &[Sample], lambda: f64) -> Result<LossSummary> {
    let mut acc = LossSummary::default();
    for s in samples {
        let mut g = Graph::new();
        let l = model.loss(&mut g, &s.input, &s.target, lambda)?;
        acc.total += g.value(l.total).data()[0];
        acc.main += g.value(l.main).data()[0];
        acc.intermediate += g.value(l.intermediate).data()[0];
        acc.rgb += g.value(l.rgb).data()[0];
    }
    let n = samples.len().max(1) as f64;
    Ok(LossSummary {
        total: acc.total / n,
        main: acc.main / n,
        intermediate: acc.intermediate / n,
        rgb: acc.rgb / n,
    })
}

/// Train `model` in place. The parameters of the epoch with the lowest
/// validation loss (λ = 0, so epochs compare fairly) are kept; with no
/// validation data the last epoch wins.
pub fn train(model: &mut Sna, train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return param_err("training set is empty");
    }
    let patched;
    let train_set = match cfg.patch {
        Some(size) => {
            patched = train_set.iter().map(|s| s.patches(size)).collect::<Result<Vec<_>>>()?.concat();
            &patched[..]
        }
        None => train_set,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_0000);
    let mut adam = Adam::new(model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let (lr, lambda) = (cfg.lr_at(epoch), cfg.lambda_at(epoch));
        order.shuffle(&mut rng);
        let mut sum = LossSummary::default();
        for chunk in order.chunks(cfg.batch_size) {
            let (input, target) = batch_of(train_set, chunk)?;
            let mut g = Graph::with_nan_check();
            let loss = model.loss(&mut g, &input, &target, lambda).map_err(|e| match e {
                Error::Validation(detail) => Error::Diverged {
                    epoch: epoch + 1,
                    step,
                    detail,
                },
                other => other,
            })?;
            let total = g.value(loss.total).data()[0];
            if !total.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    step,
                    detail: format!("loss is {total}"),
                });
            }
            let grads = g.backward(loss.total);
            let pg = g.param_grads(&grads);
            let store = model.params();
            let mut flat: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
            for (id, t) in pg {
                flat[id.index()] = t.clone();
            }
            if let Some(bad) = flat.iter().position(|t| !t.is_finite()) {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    step,
                    detail: format!("non-finite gradient for {}", store.name(store.ids().nth(bad).expect("index"))),
                });
            }
            adam.step(model.params_mut(), &flat, lr, cfg);
            let k = chunk.len() as f64;
            sum.total += k * total;
            sum.main += k * g.value(loss.main).data()[0];
            sum.intermediate += k * g.value(loss.intermediate).data()[0];
            sum.rgb += k * g.value(loss.rgb).data()[0];
            step += 1;
        }
        let n = train_set.len() as f64;
        let train_summary = LossSummary {
            total: sum.total / n,
            main: sum.main / n,
            intermediate: sum.intermediate / n,
            rgb: sum.rgb / n,
        };
        let val = evaluate_loss(model, val_set, 0.0)?;
        let score = if val_set.is_empty() { -(epoch as f64) } else { val.total };
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch + 1, model.params().clone()));
        }
        log::debug!("epoch {} train {:.6} val {:.6}", epoch + 1, train_summary.total, val.total);
        log.push(EpochLog {
            epoch: epoch + 1,
            lr,
            lambda,
            train: train_summary,
            val,
        });
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainReport { log, best_epoch })
}
