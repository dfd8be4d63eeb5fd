use crate::diffcore::{seeded_init, InitScheme, Padding, ParamId, ParamStore, RngStream, Tape, Tensor, Var};
use crate::error::{ensure, Result};

/// 1-D convolution with weights `[filters, in_channels, kernel]` and a bias per filter.
#[derive(Clone, Debug)]
pub struct Conv1DLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv1DLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Self::with_init(store, name, in_channels, filters, kernel, stride, padding, InitScheme::FanIn, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        init: InitScheme,
        rng: &mut RngStream,
    ) -> Result<Self> {
        ensure!(stride >= 1 && kernel >= 1, "conv {name}: kernel and stride must be positive");
        let w = seeded_init(&[filters, in_channels, kernel], init, rng)?;
        let weight = store.add(format!("{name}.w"), w, true);
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[filters]), true);
        Ok(Self { weight, bias, in_channels, filters, kernel, stride, padding })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        ensure!(
            shape.len() == 3 && shape[1] == self.in_channels,
            "conv expects [batch, {}, len], got {shape:?}",
            self.in_channels
        );
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.conv1d(x, w, self.stride, self.padding)?;
        tape.add_bias(y, b)
    }
}
