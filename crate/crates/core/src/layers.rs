//! Weight containers for the convolution layers the network is built from.

use crate::error::Result;
use crate::tensor::{conv2d, conv3d, deconv2d, ConvSpec, Var};

#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: Var,
    pub bias: Var,
}

impl Conv2dLayer {
    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, x: &Var, spec: ConvSpec) -> Result<Var> {
        conv2d(x, &self.weight, Some(&self.bias), spec)
    }

    /// Stride 1, size-preserving.
    pub fn same(&self, x: &Var) -> Result<Var> {
        self.forward(x, ConvSpec::same(self.kernel()))
    }
}

#[derive(Clone, Debug)]
pub struct Conv3dLayer {
    pub weight: Var,
    pub bias: Var,
}

impl Conv3dLayer {
    pub fn same(&self, x: &Var) -> Result<Var> {
        conv3d(x, &self.weight, Some(&self.bias), ConvSpec::same(self.weight.shape()[2]))
    }
}

/// Stride-2 transposed convolution with a 4×4 kernel and padding 1, which
/// exactly doubles the spatial extent.
#[derive(Clone, Debug)]
pub struct Deconv2dLayer {
    pub weight: Var,
    pub bias: Var,
}

impl Deconv2dLayer {
    pub const SPEC: ConvSpec = ConvSpec::new(2, 1);

    pub fn forward(&self, x: &Var) -> Result<Var> {
        deconv2d(x, &self.weight, Some(&self.bias), Self::SPEC)
    }
}
