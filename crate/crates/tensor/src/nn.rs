//! Parameterised layers over [`Graph`] operations.

use rand::Rng;

use crate::error::Result;
use crate::{Element, Graph, ParamId, ParamStore, Var};

/// Weight initialisation policy for a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He-uniform weights, zero bias.
    Kaiming,
    /// All-zero weights and bias.
    Zeros,
}

/// 2-D convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2d {
    /// Square `kernel`, stride 1, "same" padding for odd kernels.
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        init: Init,
    ) -> Result<Self> {
        Self::dilated(store, rng, name, in_c, out_c, kernel, 1, init)
    }

    /// Stride-1 convolution with padding `dilation · (kernel − 1) / 2`.
    #[allow(clippy::too_many_arguments)]
    pub fn dilated<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        dilation: usize,
        init: Init,
    ) -> Result<Self> {
        let shape = [out_c, in_c, kernel, kernel];
        let weight = match init {
            Init::Kaiming => store.kaiming(format!("{name}.weight"), shape, in_c * kernel * kernel, rng)?,
            Init::Zeros => store.zeros(format!("{name}.weight"), shape)?,
        };
        let bias = store.zeros(format!("{name}.bias"), [1, out_c, 1, 1])?;
        Ok(Self {
            weight,
            bias,
            in_c,
            out_c,
            kernel,
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        })
    }

    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.padding, self.dilation)
    }

    /// Convolution followed by ReLU.
    pub fn forward_relu<T: Element>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        Ok(g.relu(self.forward(g, x)?))
    }

    pub fn num_params(&self) -> usize {
        self.out_c * self.in_c * self.kernel * self.kernel + self.out_c
    }
}

/// Transposed convolution with a square kernel and no padding.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        // each output pixel receives in_c · (kernel / stride)^2 taps
        let fan_in = (in_c * kernel * kernel / (stride * stride)).max(1);
        let weight = store.kaiming(format!("{name}.weight"), [in_c, out_c, kernel, kernel], fan_in, rng)?;
        let bias = store.zeros(format!("{name}.bias"), [1, out_c, 1, 1])?;
        Ok(Self { weight, bias, stride })
    }

    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv_transpose2d(x, w, Some(b), self.stride)
    }
}

/// Squeeze-and-excitation channel gate.
///
/// Global average pool, `c → c/r` affine map, ReLU, `c/r → c` affine map,
/// sigmoid, then channel-wise scaling of the input. The bottleneck width is
/// `max(1, c / r)`.
#[derive(Debug, Clone)]
pub struct SeLayer {
    pub squeeze: Conv2d,
    pub excite: Conv2d,
}

impl SeLayer {
    /// Reduction ratio used throughout the network: `min(16, channels)`.
    pub fn default_reduction(channels: usize) -> usize {
        channels.clamp(1, 16)
    }

    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(1);
        Ok(Self {
            squeeze: Conv2d::new(store, rng, &format!("{name}.squeeze"), channels, hidden, 1, Init::Kaiming)?,
            excite: Conv2d::new(store, rng, &format!("{name}.excite"), hidden, channels, 1, Init::Kaiming)?,
        })
    }

    /// The per-channel gate `s ∈ (0, 1)`, shape `[n, c, 1, 1]`.
    pub fn gate<T: Element>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let pooled = g.global_avg_pool(x);
        let hidden = self.squeeze.forward_relu(g, pooled)?;
        Ok(g.sigmoid(self.excite.forward(g, hidden)?))
    }

    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let s = self.gate(g, x)?;
        g.scale_channels(x, s)
    }
}
