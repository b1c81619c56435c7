use crate::error::Result;
use crate::numerics::layers::Conv2d;
use crate::numerics::{dedup_params, Activation, Layer, LayerKind, Param, Phase, Rng, Sequential, Tape, Tensor};
use crate::roadworld::Action;

use super::{action_planes, check_actions, check_frames, NetConfig, Trunk, F, TRUNK_CHANNELS};

/// `D(x(t), a, x(t+1)) → P(real)`, one probability per example.
#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: NetConfig,
    /// Shared trunk, applied to each frame separately.
    trunk: Option<Sequential<F>>,
    body: Sequential<F>,
}

pub struct DiscriminatorTape {
    trunk: Option<Tape<F>>,
    body: Tape<F>,
    batch: usize,
}

impl Discriminator {
    pub fn new(cfg: &NetConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Self::build(cfg, None, rng)
    }

    pub(super) fn build(cfg: &NetConfig, trunk: Option<&Trunk>, rng: &mut Rng) -> Result<Self> {
        let readout = cfg.height / 8;
        let mut layers = Vec::new();
        match trunk {
            Some(_) => {
                let cin = if cfg.conditional_disc { 2 * TRUNK_CHANNELS + 3 } else { TRUNK_CHANNELS };
                layers.push(Layer::Conv2d(Conv2d::new("disc.readout", cin, 1, readout, 1, 0, rng)));
            }
            None => {
                let cin = if cfg.conditional_disc { 5 } else { 1 };
                if cfg.disc_input_bn {
                    layers.push(cfg.bn("disc.input_bn", cin));
                }
                layers.push(Layer::Conv2d(Conv2d::new("disc.conv1", cin, 16, 4, 2, 1, rng)));
                layers.push(cfg.lrelu());
                for (i, (a, b)) in [(16, 32), (32, 64)].into_iter().enumerate() {
                    layers.push(Layer::Conv2d(Conv2d::new(&format!("disc.conv{}", i + 2), a, b, 4, 2, 1, rng)));
                    layers.push(cfg.bn(&format!("disc.bn{}", i + 2), b));
                    layers.push(cfg.lrelu());
                }
                layers.push(Layer::Conv2d(Conv2d::new("disc.readout", 64, 1, readout, 1, 0, rng)));
            }
        }
        layers.push(Layer::Activation(Activation::Sigmoid));
        Ok(Discriminator {
            cfg: cfg.clone(),
            trunk: trunk.map(|t| t.0.clone()),
            body: Sequential::new(layers),
        })
    }

    /// Probabilities `[N]`.
    pub fn forward(&self, frame_t: &Tensor<F>, actions: &[Action], frame_t1: &Tensor<F>, phase: &mut Phase<'_>) -> Result<(Tensor<F>, DiscriminatorTape)> {
        let n = check_frames(frame_t1, &self.cfg, "discriminator frame_t1")?;
        if self.cfg.conditional_disc {
            if check_frames(frame_t, &self.cfg, "discriminator frame_t")? != n {
                return Err(crate::Error::dim("discriminator batch", n, frame_t.dims()[0]));
            }
            check_actions(n, actions)?;
        }
        let (input, trunk_tape) = match &self.trunk {
            Some(trunk) if self.cfg.conditional_disc => {
                let (codes, tape) = trunk.forward(&Tensor::concat_axis0(&[frame_t, frame_t1])?, phase)?;
                let halves = codes.split_axis0(&[n, n])?;
                let [_, _, h, w] = codes.nchw()?;
                (Tensor::concat_axis1(&[&halves[0], &halves[1], &action_planes(actions, h, w)])?, Some(tape))
            }
            Some(trunk) => {
                let (code, tape) = trunk.forward(frame_t1, phase)?;
                (code, Some(tape))
            }
            None if self.cfg.conditional_disc => {
                let planes = action_planes(actions, self.cfg.height, self.cfg.width);
                (Tensor::concat_axis1(&[frame_t, frame_t1, &planes])?, None)
            }
            None => (frame_t1.clone(), None),
        };
        let (out, body) = self.body.forward(&input, phase)?;
        Ok((
            out.reshape(&[n])?,
            DiscriminatorTape {
                trunk: trunk_tape,
                body,
                batch: n,
            },
        ))
    }

    /// Accumulate parameter gradients and return `d loss / d frame_t1`.
    pub fn backward(&self, tape: DiscriminatorTape, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let n = tape.batch;
        let g = self.body.backward(tape.body, &grad.clone().reshape(&[n, 1, 1, 1])?)?;
        match (&self.trunk, tape.trunk) {
            (Some(trunk), Some(t)) if self.cfg.conditional_disc => {
                let parts = g.split_axis1(&[TRUNK_CHANNELS, TRUNK_CHANNELS, 3])?;
                let stacked = trunk.backward(t, &Tensor::concat_axis0(&[&parts[0], &parts[1]])?)?;
                Ok(stacked.split_axis0(&[n, n])?.swap_remove(1))
            }
            (Some(trunk), Some(t)) => trunk.backward(t, &g),
            _ if self.cfg.conditional_disc => Ok(g.split_axis1(&[1, 1, 3])?.swap_remove(1)),
            _ => Ok(g),
        }
    }

    pub fn predict(&self, frame_t: &Tensor<F>, actions: &[Action], frame_t1: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.forward(frame_t, actions, frame_t1, &mut Phase::Eval)?.0)
    }

    pub fn params(&self) -> Vec<Param<F>> {
        let mut all = self.trunk_params();
        all.extend(self.body.params());
        dedup_params(all)
    }

    pub fn trunk_params(&self) -> Vec<Param<F>> {
        self.trunk.as_ref().map(Sequential::params).unwrap_or_default()
    }

    pub fn structure(&self) -> Vec<LayerKind> {
        let mut kinds = self.trunk.as_ref().map(Sequential::kinds).unwrap_or_default();
        kinds.extend(self.body.kinds());
        kinds
    }
}
