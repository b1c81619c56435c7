use crate::error::Result;
use crate::numerics::layers::{Conv2d, ConvTranspose2d};
use crate::numerics::{dedup_params, Activation, Layer, LayerKind, Param, Phase, Rng, Sequential, Tape, Tensor};
use crate::roadworld::Action;

use super::{action_planes, check_actions, check_frames, FramePredictor, NetConfig, Trunk, F, TRUNK_CHANNELS};

/// Encoder-decoder `G(x(t), a) → x̂(t+1)` built only from (transposed) convolutions.
///
/// Without a shared trunk the one-hot action planes join the frame at the input; with
/// one, the trunk sees the frame alone and the planes join at the bottleneck.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: NetConfig,
    encoder: Sequential<F>,
    decoder: Sequential<F>,
    shared: bool,
}

pub struct GeneratorTape {
    encoder: Tape<F>,
    decoder: Tape<F>,
}

impl Generator {
    pub fn new(cfg: &NetConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Self::build(cfg, None, rng)
    }

    pub(super) fn build(cfg: &NetConfig, trunk: Option<&Trunk>, rng: &mut Rng) -> Result<Self> {
        let encoder = match trunk {
            Some(t) => t.0.clone(),
            None => {
                let mut layers = Vec::new();
                for (i, (cin, cout)) in [(4, 16), (16, 32), (32, 64)].into_iter().enumerate() {
                    layers.push(Layer::Conv2d(Conv2d::new(&format!("gen.enc{}", i + 1), cin, cout, 4, 2, 1, rng)));
                    layers.push(cfg.bn(&format!("gen.enc_bn{}", i + 1), cout));
                    layers.push(cfg.lrelu());
                }
                Sequential::new(layers)
            }
        };
        let bottleneck = if trunk.is_some() { TRUNK_CHANNELS + 3 } else { 64 };
        let mut layers = Vec::new();
        for (i, (cin, cout)) in [(bottleneck, 32), (32, 16)].into_iter().enumerate() {
            layers.push(Layer::ConvTranspose2d(ConvTranspose2d::new(
                &format!("gen.dec{}", i + 1),
                cin,
                cout,
                4,
                2,
                1,
                rng,
            )));
            layers.push(cfg.bn(&format!("gen.dec_bn{}", i + 1), cout));
            layers.push(Layer::Activation(Activation::Relu));
        }
        layers.push(Layer::ConvTranspose2d(ConvTranspose2d::new("gen.dec3", 16, 1, 4, 2, 1, rng)));
        layers.push(Layer::Activation(Activation::Tanh));
        Ok(Generator {
            cfg: cfg.clone(),
            encoder,
            decoder: Sequential::new(layers),
            shared: trunk.is_some(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn forward(&self, frames: &Tensor<F>, actions: &[Action], phase: &mut Phase<'_>) -> Result<(Tensor<F>, GeneratorTape)> {
        let n = check_frames(frames, &self.cfg, "generator input")?;
        check_actions(n, actions)?;
        let (code, encoder) = if self.shared {
            let (code, tape) = self.encoder.forward(frames, phase)?;
            let [_, _, h, w] = code.nchw()?;
            (Tensor::concat_axis1(&[&code, &action_planes(actions, h, w)])?, tape)
        } else {
            let input = Tensor::concat_axis1(&[frames, &action_planes(actions, self.cfg.height, self.cfg.width)])?;
            self.encoder.forward(&input, phase)?
        };
        let (out, decoder) = self.decoder.forward(&code, phase)?;
        Ok((out, GeneratorTape { encoder, decoder }))
    }

    /// Accumulate parameter gradients for `d loss / d output`.
    pub fn backward(&self, tape: GeneratorTape, grad: &Tensor<F>) -> Result<()> {
        let mut g = self.decoder.backward(tape.decoder, grad)?;
        if self.shared {
            g = g.split_axis1(&[TRUNK_CHANNELS, 3])?.swap_remove(0);
        }
        self.encoder.backward(tape.encoder, &g)?;
        Ok(())
    }

    /// Inference-mode prediction.
    pub fn predict(&self, frames: &Tensor<F>, actions: &[Action]) -> Result<Tensor<F>> {
        Ok(self.forward(frames, actions, &mut Phase::Eval)?.0)
    }

    pub fn params(&self) -> Vec<Param<F>> {
        let mut all = self.encoder.params();
        all.extend(self.decoder.params());
        dedup_params(all)
    }

    pub fn trunk_params(&self) -> Vec<Param<F>> {
        if self.shared {
            self.encoder.params()
        } else {
            Vec::new()
        }
    }

    pub fn structure(&self) -> Vec<LayerKind> {
        let mut kinds = self.encoder.kinds();
        kinds.extend(self.decoder.kinds());
        kinds
    }
}

impl FramePredictor for Generator {
    fn predict(&self, frames: &Tensor<F>, actions: &[Action]) -> Result<Tensor<F>> {
        Generator::predict(self, frames, actions)
    }
}
