use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, ResidualMode};
use crate::attention::{AttentionParams, HourglassParams};
use crate::cost_volume::SqueezeParams;
use crate::error::{invalid, Error, Result};
use crate::layers::{Conv2dLayer, Conv3dLayer, Deconv2dLayer};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Conv3d,
    Deconv2d,
}

/// Shape description of one learnable layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub zero_init: bool,
}

impl LayerSpec {
    fn new(name: impl Into<String>, kind: LayerKind, c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self { name: name.into(), kind, c_in, c_out, kernel, stride: 1, zero_init: false }
    }

    fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    fn zero(mut self) -> Self {
        self.zero_init = true;
        self
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let k = self.kernel;
        match self.kind {
            LayerKind::Conv2d => vec![self.c_out, self.c_in, k, k],
            LayerKind::Conv3d => vec![self.c_out, self.c_in, k, k, k],
            LayerKind::Deconv2d => vec![self.c_in, self.c_out, k, k],
        }
    }

    fn fan_in(&self) -> usize {
        let k = self.kernel;
        match self.kind {
            LayerKind::Conv2d => self.c_in * k * k,
            LayerKind::Conv3d => self.c_in * k * k * k,
            LayerKind::Deconv2d => (self.c_in * k * k / (self.stride * self.stride)).max(1),
        }
    }
}

pub(crate) const SCALE_NAMES: [&str; 3] = ["dec0", "dec1", "dec2"];

/// Every learnable layer of the configured network, in construction order.
pub fn layer_specs(config: &ModelConfig) -> Vec<LayerSpec> {
    use LayerKind::*;
    let w = config.widths();
    let v = config.variant;
    let levels = config.disparity_levels();
    let mut specs = vec![
        LayerSpec::new("enc.conv1", Conv2d, 3, w.conv1, 7).stride(2),
        LayerSpec::new("enc.conv1b", Conv2d, w.conv1, w.conv1, 3),
        LayerSpec::new("enc.conv2", Conv2d, w.conv1, w.conv2, 5).stride(2),
        LayerSpec::new("enc.conv2b", Conv2d, w.conv2, w.conv2, 3),
        LayerSpec::new("enc.conv3", Conv2d, w.conv2, w.conv3, 3).stride(2),
        LayerSpec::new("enc.conv3b", Conv2d, w.conv3, w.conv3, 3),
    ];
    if v.squeezed_concat {
        let c = w.conv3;
        let half = (c / 2).max(1);
        specs.push(LayerSpec::new("squeeze.0", Conv3d, 2 * c, c, 3));
        specs.push(LayerSpec::new("squeeze.1", Conv3d, c, half, 3));
        specs.push(LayerSpec::new("squeeze.2", Conv3d, half, 1, 3));
    }
    specs.push(LayerSpec::new("agg.0", Conv2d, v.volume_channels(levels), w.aggregation, 3));
    specs.push(LayerSpec::new("agg.1", Conv2d, w.aggregation, w.aggregation, 3));
    specs.push(LayerSpec::new("agg.pred", Conv2d, w.aggregation, 1, 3));

    let residual = w.residual();
    for s in (0..3).rev() {
        let name = SCALE_NAMES[s];
        let up_in = if s == 2 { w.aggregation } else { residual[s + 1] };
        specs.push(LayerSpec::new(format!("{name}.up"), Deconv2d, up_in, w.upconv[s], 4).stride(2));
        if v.residual == ResidualMode::Attention {
            let a = w.attention;
            specs.push(LayerSpec::new(format!("{name}.att.reduce"), Conv2d, 10, a, 1));
            specs.push(LayerSpec::new(format!("{name}.att.spatial"), Conv2d, a, a, 3));
            specs.push(LayerSpec::new(format!("{name}.att.project"), Conv2d, a, 1, 1));
        }
        let c = residual[s];
        specs.push(LayerSpec::new(format!("{name}.hg.down1"), Conv2d, c, c, 3).stride(2));
        specs.push(LayerSpec::new(format!("{name}.hg.down2"), Conv2d, c, c, 3).stride(2));
        specs.push(LayerSpec::new(format!("{name}.hg.up1"), Deconv2d, c, c, 4).stride(2));
        specs.push(LayerSpec::new(format!("{name}.hg.up2"), Deconv2d, c, c, 4).stride(2));
        specs.push(LayerSpec::new(format!("{name}.hg.head"), Conv2d, c, c, 3));
        let out = LayerSpec::new(format!("{name}.hg.out"), Conv2d, c, 1, 3);
        specs.push(if v.residual == ResidualMode::None { out } else { out.zero() });
    }
    specs
}

/// All learnable tensors of a network, keyed `<layer>.weight` / `<layer>.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Seeded initialization: uniform in ±sqrt(6 / fan_in) for weights,
    /// zeros for biases and for the residual output layers.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut tensors = BTreeMap::new();
        for spec in layer_specs(config) {
            let shape = spec.weight_shape();
            let weight = if spec.zero_init {
                Tensor::zeros(&shape)
            } else {
                let bound = (6.0 / spec.fan_in() as f64).sqrt();
                Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound))
            };
            tensors.insert(format!("{}.weight", spec.name), weight);
            tensors.insert(format!("{}.bias", spec.name), Tensor::zeros(&[spec.c_out]));
        }
        Ok(Self { config: config.clone(), tensors })
    }

    /// Reassembles parameters, checking names and shapes against `config`.
    pub fn from_tensors(config: &ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let reference = Self::build(config)?;
        if reference.tensors.len() != tensors.len() {
            return Err(invalid!(
                "expected {} tensors, found {}",
                reference.tensors.len(),
                tensors.len()
            ));
        }
        for (name, t) in &reference.tensors {
            let got = tensors.get(name).ok_or_else(|| invalid!("missing tensor `{name}`"))?;
            if got.shape() != t.shape() {
                return Err(invalid!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                ));
            }
        }
        Ok(Self { config: config.clone(), tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Wraps every tensor as a graph leaf. With `trainable == false` nothing
    /// is recorded during the forward pass.
    pub fn bind(&self, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable { Var::leaf(t.clone()) } else { Var::constant(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        BoundParams { config: self.config.clone(), vars }
    }
}

/// Parameters as graph leaves for one forward pass.
pub struct BoundParams {
    config: ModelConfig,
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Binds caller-owned variables, checking names and shapes against `config`.
    pub fn from_vars(config: &ModelConfig, vars: BTreeMap<String, Var>) -> Result<Self> {
        let tensors = vars.iter().map(|(k, v)| (k.clone(), v.value().clone())).collect();
        ModelParams::from_tensors(config, tensors)?;
        Ok(Self { config: config.clone(), vars })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Result<&Var> {
        self.vars.get(name).ok_or_else(|| invalid!("no parameter named `{name}`"))
    }

    fn pair(&self, layer: &str) -> Result<(Var, Var)> {
        Ok((
            self.var(&format!("{layer}.weight"))?.clone(),
            self.var(&format!("{layer}.bias"))?.clone(),
        ))
    }

    pub fn conv2d(&self, layer: &str) -> Result<Conv2dLayer> {
        let (weight, bias) = self.pair(layer)?;
        Ok(Conv2dLayer { weight, bias })
    }

    pub fn conv3d(&self, layer: &str) -> Result<Conv3dLayer> {
        let (weight, bias) = self.pair(layer)?;
        Ok(Conv3dLayer { weight, bias })
    }

    pub fn deconv2d(&self, layer: &str) -> Result<Deconv2dLayer> {
        let (weight, bias) = self.pair(layer)?;
        Ok(Deconv2dLayer { weight, bias })
    }

    pub fn squeeze(&self) -> Result<SqueezeParams> {
        Ok(SqueezeParams {
            layers: [self.conv3d("squeeze.0")?, self.conv3d("squeeze.1")?, self.conv3d("squeeze.2")?],
        })
    }

    pub fn attention(&self, scale: usize) -> Result<AttentionParams> {
        let n = SCALE_NAMES[scale];
        Ok(AttentionParams {
            reduce: self.conv2d(&format!("{n}.att.reduce"))?,
            spatial: self.conv2d(&format!("{n}.att.spatial"))?,
            project: self.conv2d(&format!("{n}.att.project"))?,
        })
    }

    pub fn hourglass(&self, scale: usize) -> Result<HourglassParams> {
        let n = SCALE_NAMES[scale];
        Ok(HourglassParams {
            down1: self.conv2d(&format!("{n}.hg.down1"))?,
            down2: self.conv2d(&format!("{n}.hg.down2"))?,
            up1: self.deconv2d(&format!("{n}.hg.up1"))?,
            up2: self.deconv2d(&format!("{n}.hg.up2"))?,
            head: self.conv2d(&format!("{n}.hg.head"))?,
            out: self.conv2d(&format!("{n}.hg.out"))?,
        })
    }

    /// Gradients of every parameter after `backward`.
    pub fn grads(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                v.grad()
                    .map(|g| (k.clone(), g))
                    .ok_or_else(|| Error::InvalidState(format!("parameter `{k}` has no gradient")))
            })
            .collect()
    }
}
