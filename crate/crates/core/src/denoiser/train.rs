//! Training loop for the tiny network.
//!
//! Each iteration draws a minibatch of `(pair, crop, t)` triples, samples
//! `x_t` from the weighted marginal, runs the network and takes one
//! optimizer step on the batch-mean mixed loss.

use std::io::Write;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::loss::{l1_loss_tensor, mixed_loss_tensor};
use super::net::{ArchConfig, Cache, Network, ResidualBase, Role, TinyNetModel};
use super::nn::image_to_tensor;
use crate::diffusion::sample_marginal;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::predictor::SrPredictor;
use crate::rng::RngState;
use crate::schedule::NoiseSchedule;
use crate::uncertainty::{weight_map_for, WeightMap, WeightingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the edge term in the mixed loss.
    pub lambda: f64,
    /// Root seed; the caller turns it into the `RngState` passed to [`train`].
    pub seed: u64,
    /// Square crop side; 0 trains on whole images.
    pub patch_size: usize,
    pub arch: ArchConfig,
    pub weighting: WeightingParams,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 8,
            learning_rate: 0.05,
            lambda: 1.0,
            seed: 0,
            patch_size: 32,
            arch: ArchConfig::default(),
            weighting: WeightingParams::default(),
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.iterations == 0 || self.batch_size == 0 {
            return bad("iterations and batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.arch.unshuffle == 0 || !self.patch_size.is_multiple_of(self.arch.unshuffle) {
            return bad(format!(
                "patch size {} must be a multiple of the unshuffle factor {}",
                self.patch_size, self.arch.unshuffle
            ));
        }
        self.weighting.validate()
    }
}

/// One high-quality image and its degraded, upsampled counterpart.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub x0: Image,
    pub y0: Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub loss: f64,
    pub mse: f64,
    pub perceptual: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TinyNetModel,
    pub log: Vec<TrainLogRow>,
}

pub fn write_log_csv<W: Write>(rows: &[TrainLogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<training log>", e))?;
    Ok(())
}

/// Pair with the conditioning computed once up front.
struct Prepared {
    x0: Image,
    y0: Image,
    g_y0: Image,
    w: WeightMap,
}

fn check_dataset(dataset: &[TrainPair], cfg: &TrainConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, p) in dataset.iter().enumerate() {
        p.x0.ensure_same_shape(&p.y0, &format!("training pair {i}"))?;
        let (h, w, c) = p.x0.shape();
        if c != cfg.arch.image_channels {
            return Err(Error::ShapeMismatch(format!(
                "pair {i} has {c} channels, model expects {}",
                cfg.arch.image_channels
            )));
        }
        if cfg.patch_size > 0 && (h < cfg.patch_size || w < cfg.patch_size) {
            return Err(Error::ShapeMismatch(format!(
                "pair {i} is {h}x{w}, smaller than patch size {}",
                cfg.patch_size
            )));
        }
        let r = cfg.arch.unshuffle;
        if cfg.patch_size == 0 && (h % r != 0 || w % r != 0) {
            return Err(Error::NotDivisible {
                axis: if h % r != 0 { "height" } else { "width" },
                len: if h % r != 0 { h } else { w },
                factor: r,
            });
        }
    }
    Ok(())
}

fn crop_window(
    h: usize,
    w: usize,
    patch: usize,
    rng: &mut RngState,
) -> (usize, usize, usize, usize) {
    if patch == 0 {
        return (0, 0, h, w);
    }
    (
        rng.int_in(0, h - patch),
        rng.int_in(0, w - patch),
        patch,
        patch,
    )
}

/// Adam moment buffers.
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

struct Stepper {
    optimizer: Optimizer,
    lr: f64,
    adam: Option<AdamState>,
}

impl Stepper {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        Self {
            optimizer: cfg.optimizer,
            lr: cfg.learning_rate,
            adam: (cfg.optimizer == Optimizer::Adam).then(|| AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            }),
        }
    }

    fn apply(&mut self, net: &mut Network<f32>, grads: &Network<f32>) {
        match self.optimizer {
            Optimizer::Sgd => net.axpy(-(self.lr as f32), grads),
            Optimizer::Adam => {
                let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                let st = self.adam.as_mut().expect("adam state");
                st.step += 1;
                let c1 = 1.0 - b1.powi(st.step);
                let c2 = 1.0 - b2.powi(st.step);
                let mut p = net.to_flat();
                for (i, (pi, gi)) in p.iter_mut().zip(grads.to_flat()).enumerate() {
                    let g = gi as f64;
                    st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
                    st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
                    let upd = self.lr * (st.m[i] / c1) / ((st.v[i] / c2).sqrt() + eps);
                    *pi -= upd as f32;
                }
                net.set_flat(&p);
            }
        }
    }
}

/// Generic optimization loop. `sample` fills one batch element and returns
/// `(inputs, target, t)`; `loss` turns a prediction into a log row and a
/// gradient.
fn optimize<S, L>(
    model: &mut TinyNetModel,
    cfg: &TrainConfig,
    mut sample: S,
    loss: L,
) -> Result<Vec<TrainLogRow>>
where
    S: FnMut() -> Result<(Vec<Array3<f32>>, Array3<f32>, usize)>,
    L: Fn(&Array3<f32>, &Array3<f32>) -> Result<(TrainLogRow, Array3<f32>)>,
{
    let mut net = Network::<f32>::from_model(model)?;
    let mut grads = net.zeros_like();
    let mut stepper = Stepper::new(cfg, net.param_count());
    let mut cache = Cache::default();
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut last_finite: Option<f64> = None;
    let inv_b = 1.0 / cfg.batch_size as f32;

    for it in 1..=cfg.iterations {
        grads.scale(0.0);
        let mut row = TrainLogRow {
            iteration: it,
            loss: 0.0,
            mse: 0.0,
            perceptual: 0.0,
        };
        for _ in 0..cfg.batch_size {
            let (inputs, target, t) = sample()?;
            let refs: Vec<&Array3<f32>> = inputs.iter().collect();
            let pred = net.predict(&refs, t, Some(&mut cache))?;
            let (r, mut d) = loss(&pred, &target)?;
            d *= inv_b;
            net.predict_backward(&cache, &d, &mut grads)?;
            row.loss += r.loss / cfg.batch_size as f64;
            row.mse += r.mse / cfg.batch_size as f64;
            row.perceptual += r.perceptual / cfg.batch_size as f64;
        }
        if !row.loss.is_finite() || !grads.squared_norm().is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                last_finite_loss: last_finite,
            });
        }
        last_finite = Some(row.loss);
        stepper.apply(&mut net, &grads);
        if it == 1 || it % 500 == 0 || it == cfg.iterations {
            log::debug!("iteration {it}: loss {:.6}", row.loss);
        }
        log.push(row);
    }
    net.write_into(model);
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Diverged {
            iteration: cfg.iterations,
            last_finite_loss: last_finite,
        });
    }
    Ok(log)
}

/// Trains a denoiser. Every iteration samples a pair, a crop, `t ~ U{1..T}`
/// and `x_t` from the weighted marginal, then steps on the mixed loss.
pub fn train(
    dataset: &[TrainPair],
    predictor: &dyn SrPredictor,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(dataset, cfg)?;
    let prepared = dataset
        .iter()
        .map(|p| {
            let g_y0 = predictor.predict(&p.y0)?;
            let (_, w) = weight_map_for(&p.y0, &g_y0, &cfg.weighting)?;
            Ok(Prepared {
                x0: p.x0.clone(),
                y0: p.y0.clone(),
                g_y0,
                w,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut init_rng = rng.split("init");
    let mut model = TinyNetModel::init(Role::Denoiser, &cfg.arch, schedule.steps(), &mut init_rng)?;
    let mut pick = rng.split("batches");
    let mut noise = rng.split("noise");
    let steps = schedule.steps();

    let sample = || {
        let p = &prepared[pick.int_in(0, prepared.len() - 1)];
        let (top, left, h, w) = crop_window(p.x0.height(), p.x0.width(), cfg.patch_size, &mut pick);
        let t = pick.int_in(1, steps);
        let x0 = p.x0.crop(top, left, h, w)?;
        let y0 = p.y0.crop(top, left, h, w)?;
        let g = p.g_y0.crop(top, left, h, w)?;
        let wm = p.w.crop(top, left, h, w)?;
        let x_t = sample_marginal(&x0, &y0, schedule, &wm, t, &mut noise)?;
        Ok((
            vec![
                image_to_tensor(&x_t),
                image_to_tensor(&y0),
                image_to_tensor(&g),
            ],
            image_to_tensor(&x0),
            t,
        ))
    };
    let lambda = cfg.lambda;
    let loss = |pred: &Array3<f32>, target: &Array3<f32>| {
        let (v, g) = mixed_loss_tensor(pred, target, lambda)?;
        Ok((
            TrainLogRow {
                iteration: 0,
                loss: v.total,
                mse: v.mse,
                perceptual: v.perceptual,
            },
            g,
        ))
    };
    let log = optimize(&mut model, cfg, sample, loss)?;
    Ok(TrainOutcome { model, log })
}

/// Trains the same network family as a one-step predictor `y0 -> x0` under
/// an L1 loss. The `mse` column of the log holds the L1 value.
pub fn train_predictor(
    dataset: &[TrainPair],
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(dataset, cfg)?;
    let mut init_rng = rng.split("init");
    let arch = ArchConfig {
        residual: ResidualBase::Condition,
        ..cfg.arch
    };
    let mut model = TinyNetModel::init(Role::Predictor, &arch, 1, &mut init_rng)?;
    let mut pick = rng.split("batches");
    let sample = || {
        let p = &dataset[pick.int_in(0, dataset.len() - 1)];
        let (top, left, h, w) = crop_window(p.x0.height(), p.x0.width(), cfg.patch_size, &mut pick);
        let y0 = p.y0.crop(top, left, h, w)?;
        let x0 = p.x0.crop(top, left, h, w)?;
        Ok((vec![image_to_tensor(&y0)], image_to_tensor(&x0), 1))
    };
    let loss = |pred: &Array3<f32>, target: &Array3<f32>| {
        let (v, g) = l1_loss_tensor(pred, target)?;
        Ok((
            TrainLogRow {
                iteration: 0,
                loss: v,
                mse: v,
                perceptual: 0.0,
            },
            g,
        ))
    };
    let log = optimize(&mut model, cfg, sample, loss)?;
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{IdentityPredictor, SmoothingPredictor};
    use crate::schedule::ScheduleParams;
    use crate::synth::dead_leaves;

    fn pair(seed: u64, size: usize) -> TrainPair {
        let mut rng = RngState::new(seed);
        let x0 = dead_leaves(size, size, 3, &mut rng).unwrap();
        let y0 = crate::degradation::gaussian_blur(&x0, 1.0).unwrap();
        TrainPair { x0, y0 }
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            iterations: 30,
            batch_size: 2,
            learning_rate: 0.02,
            patch_size: 8,
            arch: ArchConfig {
                hidden: 8,
                ..ArchConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let s = ScheduleParams::default().build().unwrap();
        let err = train(&[], &IdentityPredictor, &s, &small_cfg(), &RngState::new(0)).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
    }

    #[test]
    fn same_seed_same_parameters() {
        let s = ScheduleParams::default().build().unwrap();
        let data = vec![pair(1, 16), pair(2, 16)];
        let p = SmoothingPredictor::new(2.0).unwrap();
        let a = train(&data, &p, &s, &small_cfg(), &RngState::new(7)).unwrap();
        let b = train(&data, &p, &s, &small_cfg(), &RngState::new(7)).unwrap();
        let bits = |m: &TinyNetModel| m.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.model), bits(&b.model));
        assert_eq!(a.log.len(), 30);
        let c = train(&data, &p, &s, &small_cfg(), &RngState::new(8)).unwrap();
        assert_ne!(bits(&a.model), bits(&c.model));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let s = ScheduleParams::default().build().unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e12,
            iterations: 50,
            ..small_cfg()
        };
        match train(
            &[pair(3, 16)],
            &IdentityPredictor,
            &s,
            &cfg,
            &RngState::new(1),
        ) {
            Err(Error::Diverged { iteration, .. }) => assert!(iteration >= 2),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.log.len())),
        }
    }

    #[test]
    fn predictor_training_reduces_l1() {
        let cfg = TrainConfig {
            iterations: 200,
            optimizer: Optimizer::Adam,
            learning_rate: 0.003,
            ..small_cfg()
        };
        let out = train_predictor(&[pair(4, 16)], &cfg, &RngState::new(2)).unwrap();
        let first: f64 = out.log[..10].iter().map(|r| r.loss).sum();
        let last: f64 = out.log[out.log.len() - 10..].iter().map(|r| r.loss).sum();
        assert!(last < first, "{first} -> {last}");
        assert_eq!(out.model.role, Role::Predictor);
    }

    #[test]
    fn log_csv_round_trip() {
        let rows = vec![
            TrainLogRow {
                iteration: 1,
                loss: 0.5,
                mse: 0.25,
                perceptual: 0.25,
            },
            TrainLogRow {
                iteration: 2,
                loss: 0.4,
                mse: 0.2,
                perceptual: 0.2,
            },
        ];
        let mut buf = Vec::new();
        write_log_csv(&rows, &mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let back: Vec<TrainLogRow> = rdr.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(back, rows);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            patch_size: 7,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        TrainConfig::default().validate().unwrap();
    }
}
