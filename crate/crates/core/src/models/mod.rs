//! The three networks: action-conditioned generator, conditional discriminator, and
//! siamese key-press classifier, plus their checkpoint format.

mod checkpoint;
mod classifier;
mod discriminator;
mod generator;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, restore, save_checkpoint, CHECKPOINT_MAGIC};
pub use classifier::{Classifier, ClassifierTape};
pub use discriminator::{Discriminator, DiscriminatorTape};
pub use generator::{Generator, GeneratorTape};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::layers::{BatchNorm, Conv2d};
use crate::numerics::{Activation, Hyperparams, Layer, LayerKind, Param, Rng, Sequential, Tensor};
use crate::roadworld::{Action, Frame};

/// Element type the networks train in.
pub type F = f32;

/// Architecture switches and the layer hyperparameters the constructors need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub width: usize,
    pub height: usize,
    pub leaky_slope: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub dropout_p: f64,
    /// One conv parameter set reused by the generator encoder, discriminator and classifier.
    pub shared_trunk: bool,
    /// Discriminator sees `frame_t` and the action as well as `frame_t1`.
    pub conditional_disc: bool,
    /// Batch-normalize the raw discriminator input.
    pub disc_input_bn: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::from_hyperparams(&Hyperparams::default())
    }
}

impl NetConfig {
    pub fn from_hyperparams(hp: &Hyperparams) -> Self {
        NetConfig {
            width: 64,
            height: 64,
            leaky_slope: hp.leaky_slope,
            bn_epsilon: hp.bn_epsilon,
            bn_momentum: hp.bn_momentum,
            dropout_p: hp.dropout_p,
            shared_trunk: false,
            conditional_disc: true,
            disc_input_bn: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width != self.height || !self.width.is_multiple_of(8) || self.width < 16 {
            return Err(Error::Config(format!(
                "frames must be square with a side divisible by 8 and at least 16, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    fn bn(&self, name: &str, channels: usize) -> Layer<F> {
        Layer::BatchNorm(BatchNorm::new(name, channels, self.bn_epsilon, self.bn_momentum))
    }

    fn lrelu(&self) -> Layer<F> {
        Layer::Activation(Activation::LeakyRelu(self.leaky_slope))
    }
}

/// The three-layer stride-2 conv stack shared across networks when `shared_trunk` is on.
///
/// Maps `[N,1,H,W]` to `[N,64,H/8,W/8]`.
#[derive(Debug, Clone)]
pub struct Trunk(pub Sequential<F>);

pub const TRUNK_CHANNELS: usize = 64;

impl Trunk {
    pub fn new(cfg: &NetConfig, rng: &mut Rng) -> Self {
        let mut layers = Vec::new();
        for (i, (cin, cout)) in [(1, 16), (16, 32), (32, TRUNK_CHANNELS)].into_iter().enumerate() {
            layers.push(Layer::Conv2d(Conv2d::new(&format!("trunk.conv{}", i + 1), cin, cout, 4, 2, 1, rng)));
            layers.push(cfg.bn(&format!("trunk.bn{}", i + 1), cout));
            layers.push(cfg.lrelu());
        }
        Trunk(Sequential::new(layers))
    }

    pub fn checksum(&self) -> u64 {
        params_checksum(&self.0.params())
    }
}

/// Generator, discriminator and classifier built together, so a shared trunk is shared.
#[derive(Debug, Clone)]
pub struct Models {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub classifier: Classifier,
    pub trunk: Option<Trunk>,
}

impl Models {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let trunk = cfg.shared_trunk.then(|| Trunk::new(cfg, &mut rng));
        Ok(Models {
            generator: Generator::build(cfg, trunk.as_ref(), &mut rng)?,
            discriminator: Discriminator::build(cfg, trunk.as_ref(), &mut rng)?,
            classifier: Classifier::build(cfg, trunk.as_ref(), &mut rng)?,
            trunk,
        })
    }

    /// Build the networks and restore generator and classifier weights from disk.
    ///
    /// A checkpoint file that does not exist is reported as an unavailable model.
    pub fn load_predictors(cfg: &NetConfig, gen_path: &Path, cls_path: &Path) -> Result<Self> {
        let models = Models::new(cfg, 0)?;
        for (path, params) in [(gen_path, models.generator.params()), (cls_path, models.classifier.params())] {
            if !path.exists() {
                return Err(Error::ModelUnavailable(format!("checkpoint {} not found", path.display())));
            }
            load_checkpoint(&params, path)?;
        }
        Ok(models)
    }
}

/// Anything that predicts `x(t+1)` from `x(t)` and the key press.
pub trait FramePredictor: Send + Sync {
    /// `frames: [N,1,H,W]` in `[-1,1]`, one action per frame.
    fn predict(&self, frames: &Tensor<F>, actions: &[Action]) -> Result<Tensor<F>>;
}

/// Anything that names the key press behind a `(before, after)` frame pair.
pub trait ActionClassifier: Send + Sync {
    /// Logits `[N,3]` in `Action` index order.
    fn logits(&self, before: &Tensor<F>, after: &Tensor<F>) -> Result<Tensor<F>>;

    fn predict_actions(&self, before: &Tensor<F>, after: &Tensor<F>) -> Result<Vec<Action>> {
        let logits = self.logits(before, after)?;
        Ok((0..logits.dims()[0])
            .map(|i| Action::from_index(argmax(logits.item(i))).expect("3 logits"))
            .collect())
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Stack frames into `[N,1,H,W]` with intensities mapped to `[-1,1]`.
pub fn frames_to_tensor<'a>(frames: impl IntoIterator<Item = &'a Frame>) -> Result<Tensor<F>> {
    let mut data = Vec::new();
    let mut shape = None;
    let mut n = 0;
    for f in frames {
        match shape {
            None => shape = Some((f.height, f.width)),
            Some(s) if s != (f.height, f.width) => return Err(Error::dim("frame size", s.0 * s.1, f.height * f.width)),
            _ => {}
        }
        data.extend(f.to_unit());
        n += 1;
    }
    let (h, w) = shape.ok_or_else(|| Error::Config("no frames to stack".into()))?;
    Tensor::from_vec(&[n, 1, h, w], data)
}

/// Constant one-hot planes `[N,3,H,W]`, the conditioning input for G and D.
pub fn action_planes(actions: &[Action], height: usize, width: usize) -> Tensor<F> {
    let plane = height * width;
    Tensor::from_fn(&[actions.len(), 3, height, width], |i| {
        let (n, c) = (i / (3 * plane), (i / plane) % 3);
        if actions[n].index() == c {
            1.0
        } else {
            0.0
        }
    })
}

pub fn params_checksum(params: &[Param<F>]) -> u64 {
    params.iter().fold(0u64, |acc, p| acc.rotate_left(7) ^ p.checksum())
}

fn check_frames(t: &Tensor<F>, cfg: &NetConfig, what: &'static str) -> Result<usize> {
    let [n, c, h, w] = t.nchw()?;
    if c != 1 {
        return Err(Error::dim(format!("{what} channels"), 1, c));
    }
    if h != cfg.height {
        return Err(Error::dim(format!("{what} height"), cfg.height, h));
    }
    if w != cfg.width {
        return Err(Error::dim(format!("{what} width"), cfg.width, w));
    }
    Ok(n)
}

fn check_actions(n: usize, actions: &[Action]) -> Result<()> {
    if actions.len() != n {
        return Err(Error::dim("action count", n, actions.len()));
    }
    Ok(())
}

/// Number of dense layers in a structural description.
pub fn count_dense(kinds: &[LayerKind]) -> usize {
    kinds.iter().filter(|k| k.is_dense()).count()
}
