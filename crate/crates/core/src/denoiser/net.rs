//! The toy fully-convolutional denoiser.
//!
//! Inputs are concatenated along channels, pixel-unshuffled by `r`, passed
//! through a stack of 3×3 convolutions (a per-timestep bias row is added
//! after the first one), pixel-shuffled back and added to one of the inputs
//! (the residual base, `y0` by default).

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::nn::{self, real, Real};
use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Denoiser,
    Predictor,
}

impl Role {
    pub fn tag(self) -> u8 {
        match self {
            Role::Denoiser => 0,
            Role::Predictor => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Role> {
        match tag {
            0 => Some(Role::Denoiser),
            1 => Some(Role::Predictor),
            _ => None,
        }
    }

    /// Number of images concatenated at the input.
    pub fn input_groups(self) -> usize {
        match self {
            Role::Denoiser => 3,
            Role::Predictor => 1,
        }
    }
}

/// Which input the network output is added to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualBase {
    /// The noisy state `x_t`.
    State,
    /// The upsampled low-resolution image `y0`.
    Condition,
    /// The auxiliary prediction `g(y0)`.
    Prediction,
}

impl ResidualBase {
    pub fn tag(self) -> u8 {
        match self {
            ResidualBase::State => 0,
            ResidualBase::Condition => 1,
            ResidualBase::Prediction => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<ResidualBase> {
        match tag {
            0 => Some(ResidualBase::State),
            1 => Some(ResidualBase::Condition),
            2 => Some(ResidualBase::Prediction),
            _ => None,
        }
    }

    /// Position among the concatenated inputs, or `None` if `role` has no
    /// such input. The predictor sees only `y0`.
    pub fn input_index(self, role: Role) -> Option<usize> {
        match (role, self) {
            (Role::Denoiser, ResidualBase::State) => Some(0),
            (Role::Denoiser, ResidualBase::Condition) => Some(1),
            (Role::Denoiser, ResidualBase::Prediction) => Some(2),
            (Role::Predictor, ResidualBase::Condition) => Some(0),
            (Role::Predictor, _) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    LeakyRelu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::LeakyRelu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Activation> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::LeakyRelu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub image_channels: usize,
    pub unshuffle: usize,
    pub hidden: usize,
    pub layers: usize,
    pub leaky_slope: f32,
    pub residual: ResidualBase,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            unshuffle: 2,
            hidden: 32,
            layers: 4,
            leaky_slope: 0.1,
            residual: ResidualBase::Condition,
        }
    }
}

/// Serializable model: architecture description plus a flat `f32`
/// parameter block (per layer: weights then bias; then the timestep table).
#[derive(Debug, Clone, PartialEq)]
pub struct TinyNetModel {
    pub role: Role,
    pub image_channels: usize,
    pub unshuffle: usize,
    /// Rows of the timestep table (`T` for the denoiser, 1 for the predictor).
    pub steps: usize,
    pub leaky_slope: f32,
    pub residual: ResidualBase,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<f32>,
}

impl TinyNetModel {
    /// All-zero parameters: the model outputs its residual base unchanged.
    pub fn zeros(role: Role, arch: &ArchConfig, steps: usize) -> Result<Self> {
        if arch.layers < 2 || arch.hidden == 0 || arch.unshuffle == 0 || steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "need >= 2 layers, hidden > 0, unshuffle > 0, steps > 0; got {arch:?}, steps {steps}"
            )));
        }
        if arch.residual.input_index(role).is_none() {
            return Err(Error::InvalidParameter(format!(
                "{role:?} model cannot use {:?} as residual base",
                arch.residual
            )));
        }
        if !matches!(arch.image_channels, 1 | 3) {
            return Err(Error::InvalidParameter(format!(
                "image channels must be 1 or 3, got {}",
                arch.image_channels
            )));
        }
        let rr = arch.unshuffle * arch.unshuffle;
        let mut layers = Vec::with_capacity(arch.layers);
        for i in 0..arch.layers {
            let first = i == 0;
            let last = i + 1 == arch.layers;
            layers.push(LayerSpec {
                in_channels: if first {
                    role.input_groups() * arch.image_channels * rr
                } else {
                    arch.hidden
                },
                out_channels: if last {
                    arch.image_channels * rr
                } else {
                    arch.hidden
                },
                kernel: 3,
                activation: if last {
                    Activation::Identity
                } else {
                    Activation::LeakyRelu
                },
            });
        }
        let mut model = TinyNetModel {
            role,
            image_channels: arch.image_channels,
            unshuffle: arch.unshuffle,
            steps,
            leaky_slope: arch.leaky_slope,
            residual: arch.residual,
            layers,
            params: Vec::new(),
        };
        model.params = vec![0.0; model.expected_param_count()];
        Ok(model)
    }

    /// He-initialized hidden layers and a zero output layer, so training
    /// starts from the identity residual.
    pub fn init(role: Role, arch: &ArchConfig, steps: usize, rng: &mut RngState) -> Result<Self> {
        let mut model = Self::zeros(role, arch, steps)?;
        let slope = arch.leaky_slope as f64;
        let mut offset = 0;
        let n_layers = model.layers.len();
        for (i, l) in model.layers.iter().enumerate() {
            let n_w = l.out_channels * l.in_channels * l.kernel * l.kernel;
            if i + 1 < n_layers {
                let fan_in = (l.in_channels * l.kernel * l.kernel) as f64;
                let std = (2.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
                for p in &mut model.params[offset..offset + n_w] {
                    *p = (std * rng.normal()) as f32;
                }
            }
            offset += l.param_count();
        }
        Ok(model)
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].out_channels
    }

    pub fn expected_param_count(&self) -> usize {
        self.layers
            .iter()
            .map(LayerSpec::param_count)
            .sum::<usize>()
            + self.steps * self.hidden()
    }

    /// Checks that the layer table chains and matches the declared role and
    /// image channel count.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ModelMismatch(m));
        if self.layers.len() < 2 {
            return bad("need at least two layers".into());
        }
        if self.residual.input_index(self.role).is_none() {
            return bad(format!(
                "{:?} model cannot use {:?} as residual base",
                self.role, self.residual
            ));
        }
        let rr = self.unshuffle * self.unshuffle;
        let want_in = self.role.input_groups() * self.image_channels * rr;
        if self.layers[0].in_channels != want_in {
            return bad(format!(
                "first layer takes {} channels, expected {want_in}",
                self.layers[0].in_channels
            ));
        }
        let last = self.layers.last().expect("non-empty");
        if last.out_channels != self.image_channels * rr {
            return bad(format!(
                "last layer emits {} channels, expected {}",
                last.out_channels,
                self.image_channels * rr
            ));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return bad(format!(
                    "layer chain broken: {:?} -> {:?}",
                    pair[0], pair[1]
                ));
            }
        }
        if self.layers.iter().any(|l| l.kernel % 2 == 0) {
            return bad("kernels must have odd size".into());
        }
        if self.params.len() != self.expected_param_count() {
            return bad(format!(
                "{} parameters, layer table implies {}",
                self.params.len(),
                self.expected_param_count()
            ));
        }
        Ok(())
    }
}

/// Parameters unpacked into arrays of a chosen float type. Also used as the
/// gradient accumulator.
#[derive(Debug, Clone)]
pub struct Network<F: Real> {
    pub specs: Vec<LayerSpec>,
    pub weights: Vec<Array2<F>>,
    pub biases: Vec<Array1<F>>,
    /// `(steps, hidden)` rows added after the first convolution.
    pub time: Array2<F>,
    pub slope: F,
    pub unshuffle: usize,
    pub image_channels: usize,
    /// Index of the input the output is added to.
    pub residual_input: usize,
}

/// Intermediate values kept by [`Network::forward`] for the backward pass.
#[derive(Debug, Default)]
pub struct Cache<F: Real> {
    cols: Vec<Array2<F>>,
    pre: Vec<Array3<F>>,
    t: usize,
}

impl<F: Real> Network<F> {
    pub fn from_model(model: &TinyNetModel) -> Result<Self> {
        model.validate()?;
        let flat: Vec<F> = model.params.iter().map(|&p| real::<F>(p as f64)).collect();
        let mut net = Self::zeros_like_specs(model);
        net.set_flat(&flat);
        Ok(net)
    }

    fn zeros_like_specs(model: &TinyNetModel) -> Self {
        Network {
            specs: model.layers.clone(),
            weights: model
                .layers
                .iter()
                .map(|l| Array2::zeros((l.out_channels, l.in_channels * l.kernel * l.kernel)))
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| Array1::zeros(l.out_channels))
                .collect(),
            time: Array2::zeros((model.steps, model.hidden())),
            slope: real(model.leaky_slope as f64),
            unshuffle: model.unshuffle,
            image_channels: model.image_channels,
            residual_input: model.residual.input_index(model.role).unwrap_or(0),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Network {
            specs: self.specs.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| Array2::zeros(w.dim()))
                .collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.dim())).collect(),
            time: Array2::zeros(self.time.dim()),
            slope: self.slope,
            unshuffle: self.unshuffle,
            image_channels: self.image_channels,
            residual_input: self.residual_input,
        }
    }

    pub fn steps(&self) -> usize {
        self.time.nrows()
    }

    /// Writes parameters back into `model` (rounding to `f32`).
    pub fn write_into(&self, model: &mut TinyNetModel) {
        model.params = self
            .to_flat()
            .iter()
            .map(|v| v.to_f32().unwrap_or(f32::NAN))
            .collect();
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
            + self.time.len()
    }

    /// Flat parameter vector in container order.
    pub fn to_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out.extend(self.time.iter().copied());
        out
    }

    pub fn set_flat(&mut self, flat: &[F]) {
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut()
                .for_each(|v| *v = it.next().expect("flat length"));
            b.iter_mut()
                .for_each(|v| *v = it.next().expect("flat length"));
        }
        self.time
            .iter_mut()
            .for_each(|v| *v = it.next().expect("flat length"));
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: F, other: &Network<F>) {
        for (w, ow) in self.weights.iter_mut().zip(&other.weights) {
            w.scaled_add(alpha, ow);
        }
        for (b, ob) in self.biases.iter_mut().zip(&other.biases) {
            b.scaled_add(alpha, ob);
        }
        self.time.scaled_add(alpha, &other.time);
    }

    pub fn scale(&mut self, alpha: F) {
        self.weights
            .iter_mut()
            .for_each(|w| w.mapv_inplace(|v| v * alpha));
        self.biases
            .iter_mut()
            .for_each(|b| b.mapv_inplace(|v| v * alpha));
        self.time.mapv_inplace(|v| v * alpha);
    }

    pub fn squared_norm(&self) -> F {
        self.to_flat().iter().fold(F::zero(), |a, &v| a + v * v)
    }

    /// Runs the conv stack on an already unshuffled input. `t` is 1-based.
    pub fn forward(
        &self,
        input: &Array3<F>,
        t: usize,
        mut cache: Option<&mut Cache<F>>,
    ) -> Result<Array3<F>> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                lo: 1,
                hi: self.steps(),
            });
        }
        if input.dim().0 != self.specs[0].in_channels {
            return Err(Error::ModelMismatch(format!(
                "network expects {} input channels, got {}",
                self.specs[0].in_channels,
                input.dim().0
            )));
        }
        if let Some(c) = cache.as_deref_mut() {
            c.cols.clear();
            c.pre.clear();
            c.t = t;
        }
        let mut x = input.clone();
        for (i, spec) in self.specs.iter().enumerate() {
            let (mut y, cols) =
                nn::conv2d_forward(x.view(), &self.weights[i], &self.biases[i], spec.kernel);
            if i == 0 {
                nn::add_channel_bias(&mut y, self.time.row(t - 1));
            }
            if let Some(c) = cache.as_deref_mut() {
                c.cols.push(cols);
            }
            x = match spec.activation {
                Activation::Identity => y,
                Activation::LeakyRelu => {
                    let out = nn::leaky_relu(&y, self.slope);
                    if let Some(c) = cache.as_deref_mut() {
                        c.pre.push(y);
                    }
                    out
                }
            };
        }
        Ok(x)
    }

    /// Backpropagates `d_out` through the cached forward pass, accumulating
    /// into `grads`. Returns the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &Cache<F>,
        d_out: &Array3<F>,
        grads: &mut Network<F>,
    ) -> Array3<F> {
        let mut d = d_out.clone();
        let mut pre_idx = cache.pre.len();
        for i in (0..self.specs.len()).rev() {
            let spec = &self.specs[i];
            if spec.activation == Activation::LeakyRelu {
                pre_idx -= 1;
                d = nn::leaky_relu_backward(&cache.pre[pre_idx], &d, self.slope);
            }
            if i == 0 {
                let db = nn::channel_bias_backward(&d);
                let mut row = grads.time.row_mut(cache.t - 1);
                row += &db;
            }
            d = nn::conv2d_backward(
                &d,
                &cache.cols[i],
                &self.weights[i],
                spec.kernel,
                spec.in_channels,
                &mut grads.weights[i],
                &mut grads.biases[i],
            );
        }
        d
    }

    /// Full denoiser pass on `CHW` tensors: concat, unshuffle, conv stack,
    /// shuffle, add the residual base. Returns the prediction.
    pub fn predict(
        &self,
        inputs: &[&Array3<F>],
        t: usize,
        cache: Option<&mut Cache<F>>,
    ) -> Result<Array3<F>> {
        let base = inputs
            .first()
            .ok_or_else(|| Error::ModelMismatch("no inputs".into()))?;
        if base.dim().0 != self.image_channels {
            return Err(Error::ModelMismatch(format!(
                "model built for {} channels, got {}",
                self.image_channels,
                base.dim().0
            )));
        }
        for other in &inputs[1..] {
            if other.dim() != base.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "network inputs {:?} vs {:?}",
                    base.dim(),
                    other.dim()
                )));
            }
        }
        let residual = inputs.get(self.residual_input).ok_or_else(|| {
            Error::ModelMismatch(format!(
                "residual base is input {} but only {} given",
                self.residual_input,
                inputs.len()
            ))
        })?;
        let stacked = nn::concat_channels(inputs);
        let packed = nn::space_to_depth(&stacked, self.unshuffle)?;
        let delta = nn::depth_to_space(&self.forward(&packed, t, cache)?, self.unshuffle)?;
        Ok(delta + *residual)
    }

    /// Backward pass for [`Network::predict`] given the loss gradient with
    /// respect to the prediction. Parameter gradients only.
    pub fn predict_backward(
        &self,
        cache: &Cache<F>,
        d_pred: &Array3<F>,
        grads: &mut Network<F>,
    ) -> Result<()> {
        let d_packed = nn::space_to_depth(d_pred, self.unshuffle)?;
        self.backward(cache, &d_packed, grads);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_table_shapes() {
        let m = TinyNetModel::zeros(Role::Denoiser, &ArchConfig::default(), 5).unwrap();
        assert_eq!(m.layers.len(), 4);
        assert_eq!(m.layers[0].in_channels, 3 * 3 * 4);
        assert_eq!(m.layers[3].out_channels, 12);
        m.validate().unwrap();
        let p = TinyNetModel::zeros(Role::Predictor, &ArchConfig::default(), 1).unwrap();
        assert_eq!(p.layers[0].in_channels, 12);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = RngState::new(1);
        let m = TinyNetModel::init(
            Role::Denoiser,
            &ArchConfig {
                hidden: 8,
                ..ArchConfig::default()
            },
            3,
            &mut rng,
        )
        .unwrap();
        let net = Network::<f32>::from_model(&m).unwrap();
        let mut back = m.clone();
        net.write_into(&mut back);
        assert_eq!(back, m);
        assert_eq!(net.param_count(), m.params.len());
    }

    #[test]
    fn validate_catches_inconsistency() {
        let mut m = TinyNetModel::zeros(Role::Denoiser, &ArchConfig::default(), 5).unwrap();
        m.params.pop();
        assert!(m.validate().is_err());
        let mut m = TinyNetModel::zeros(Role::Denoiser, &ArchConfig::default(), 5).unwrap();
        m.layers[1].in_channels = 7;
        assert!(m.validate().is_err());
    }

    #[test]
    fn rejects_bad_timestep() {
        let m = TinyNetModel::zeros(
            Role::Denoiser,
            &ArchConfig {
                image_channels: 1,
                hidden: 4,
                ..ArchConfig::default()
            },
            2,
        )
        .unwrap();
        let net = Network::<f64>::from_model(&m).unwrap();
        let x = Array3::zeros((1, 4, 4));
        assert!(net.predict(&[&x, &x, &x], 0, None).is_err());
        assert!(net.predict(&[&x, &x, &x], 3, None).is_err());
        assert!(net.predict(&[&x, &x, &x], 2, None).is_ok());
    }
}
