use crate::error::Result;
use crate::numerics::layers::{Conv2d, Dense};
use crate::numerics::{dedup_params, Activation, Layer, LayerKind, Param, Phase, Rng, Sequential, Tape, Tensor};

use super::{check_frames, ActionClassifier, NetConfig, Trunk, F, TRUNK_CHANNELS};

/// Siamese key-press classifier `C(x(t), x(t+1)) → logits[3]`.
///
/// Both frames pass through one trunk (stacked on the batch axis, so they share
/// weights and batch statistics); the flattened features are concatenated and read out
/// by a dense head.
#[derive(Debug, Clone)]
pub struct Classifier {
    cfg: NetConfig,
    trunk: Sequential<F>,
    head: Sequential<F>,
    shared: bool,
}

pub struct ClassifierTape {
    trunk: Tape<F>,
    head: Tape<F>,
    batch: usize,
    features: usize,
}

const POOL_KERNEL: usize = 3;
const POOL_STRIDE: usize = 2;

impl Classifier {
    pub fn new(cfg: &NetConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Self::build(cfg, None, rng)
    }

    pub(super) fn build(cfg: &NetConfig, shared: Option<&Trunk>, rng: &mut Rng) -> Result<Self> {
        let (trunk, features) = match shared {
            Some(t) => {
                let mut layers = t.0.layers.clone();
                layers.push(Layer::Flatten);
                let side = cfg.height / 8;
                (Sequential::new(layers), TRUNK_CHANNELS * side * side)
            }
            None => own_trunk(cfg, rng),
        };
        let relu = || Layer::Activation(Activation::Relu);
        let dropout = || Layer::Dropout { p: cfg.dropout_p };
        let head = Sequential::new(vec![
            Layer::Dense(Dense::new("cls.fc1", 2 * features, 256, rng)),
            relu(),
            dropout(),
            Layer::Dense(Dense::new("cls.fc2", 256, 128, rng)),
            relu(),
            dropout(),
            Layer::Dense(Dense::new("cls.fc3", 128, 64, rng)),
            relu(),
            Layer::Dense(Dense::new("cls.readout", 64, 3, rng)),
        ]);
        Ok(Classifier {
            cfg: cfg.clone(),
            trunk,
            head,
            shared: shared.is_some(),
        })
    }

    /// Per-frame trunk features `[N, F]`.
    pub fn embed(&self, frames: &Tensor<F>) -> Result<Tensor<F>> {
        check_frames(frames, &self.cfg, "classifier frame")?;
        Ok(self.trunk.forward(frames, &mut Phase::Eval)?.0)
    }

    /// Logits `[N,3]`.
    pub fn forward(&self, before: &Tensor<F>, after: &Tensor<F>, phase: &mut Phase<'_>) -> Result<(Tensor<F>, ClassifierTape)> {
        let n = check_frames(before, &self.cfg, "classifier frame_t")?;
        let m = check_frames(after, &self.cfg, "classifier frame_t1")?;
        if n != m {
            return Err(crate::Error::dim("classifier batch", n, m));
        }
        let (codes, trunk) = self.trunk.forward(&Tensor::concat_axis0(&[before, after])?, phase)?;
        let features = codes.dims()[1];
        let halves = codes.split_axis0(&[n, n])?;
        let joined = Tensor::concat_axis1(&[&halves[0], &halves[1]])?;
        let (logits, head) = self.head.forward(&joined, phase)?;
        Ok((
            logits,
            ClassifierTape {
                trunk,
                head,
                batch: n,
                features,
            },
        ))
    }

    pub fn backward(&self, tape: ClassifierTape, grad: &Tensor<F>) -> Result<()> {
        let g = self.head.backward(tape.head, grad)?;
        let parts = g.split_axis1(&[tape.features, tape.features])?;
        debug_assert_eq!(parts[0].dims()[0], tape.batch);
        self.trunk.backward(tape.trunk, &Tensor::concat_axis0(&[&parts[0], &parts[1]])?)?;
        Ok(())
    }

    pub fn predict(&self, before: &Tensor<F>, after: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.forward(before, after, &mut Phase::Eval)?.0)
    }

    pub fn params(&self) -> Vec<Param<F>> {
        let mut all = self.trunk.params();
        all.extend(self.head.params());
        dedup_params(all)
    }

    pub fn trunk_params(&self) -> Vec<Param<F>> {
        if self.shared {
            self.trunk.params()
        } else {
            Vec::new()
        }
    }

    pub fn trunk_structure(&self) -> Vec<LayerKind> {
        self.trunk.kinds()
    }

    pub fn head_structure(&self) -> Vec<LayerKind> {
        self.head.kinds()
    }

    pub fn structure(&self) -> Vec<LayerKind> {
        let mut kinds = self.trunk.kinds();
        kinds.extend(self.head.kinds());
        kinds
    }
}

fn own_trunk(cfg: &NetConfig, rng: &mut Rng) -> (Sequential<F>, usize) {
    // (in, out, kernel, pad, pooled)
    let spec = [
        (1, 8, 5, 2, true),
        (8, 16, 5, 2, true),
        (16, 24, 3, 1, false),
        (24, 24, 3, 1, false),
        (24, 16, 3, 1, true),
    ];
    let mut side = cfg.height;
    let mut layers = Vec::new();
    for (i, &(cin, cout, k, pad, pooled)) in spec.iter().enumerate() {
        layers.push(Layer::Conv2d(Conv2d::new(&format!("cls.conv{}", i + 1), cin, cout, k, 1, pad, rng)));
        layers.push(cfg.bn(&format!("cls.bn{}", i + 1), cout));
        layers.push(Layer::Activation(Activation::Relu));
        if pooled {
            layers.push(Layer::MaxPool {
                kernel: POOL_KERNEL,
                stride: POOL_STRIDE,
            });
            side = (side - POOL_KERNEL) / POOL_STRIDE + 1;
        }
    }
    layers.push(Layer::Flatten);
    (Sequential::new(layers), 16 * side * side)
}

impl ActionClassifier for Classifier {
    fn logits(&self, before: &Tensor<F>, after: &Tensor<F>) -> Result<Tensor<F>> {
        self.predict(before, after)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Models;

    #[test]
    fn per_frame_feature_layout() {
        let mut rng = Rng::new(3);
        let c = Classifier::new(&NetConfig::default(), &mut rng).unwrap();
        assert!(matches!(c.head_structure()[0], LayerKind::Dense { inputs: 1568, outputs: 256 }));
        let x = Tensor::from_fn(&[2, 1, 64, 64], |i| (i % 7) as F / 7.0);
        assert_eq!(c.embed(&x).unwrap().dims(), &[2, 784]);
        let logits = c.predict(&x, &x).unwrap();
        assert_eq!(logits.dims(), &[2, 3]);
    }

    #[test]
    fn identical_frames_embed_identically() {
        let mut rng = Rng::new(3);
        let c = Classifier::new(&NetConfig::default(), &mut rng).unwrap();
        let one = Tensor::from_fn(&[1, 1, 64, 64], |i| ((i * 31) % 11) as F / 11.0);
        let two = Tensor::concat_axis0(&[&one, &one]).unwrap();
        let e = c.embed(&two).unwrap();
        assert_eq!(e.item(0), e.item(1));
    }

    #[test]
    fn training_step_reaches_every_trainable_parameter() {
        let m = Models::new(&NetConfig::default(), 8).unwrap();
        let c = &m.classifier;
        let mut rng = Rng::new(1);
        let a = Tensor::from_fn(&[4, 1, 64, 64], |_| rng.normal() as F);
        let b = Tensor::from_fn(&[4, 1, 64, 64], |_| rng.normal() as F);
        let (logits, tape) = c.forward(&a, &b, &mut Phase::Train(&mut rng)).unwrap();
        let (_, g) = crate::numerics::loss::softmax_xent(&logits, &[0, 1, 2, 0]).unwrap();
        c.backward(tape, &g).unwrap();
        for p in c.params().iter().filter(|p| p.read().trainable) {
            assert!(p.read().grad.data().iter().any(|&v| v != 0.0), "{} got no gradient", p.name());
        }
    }

    #[test]
    fn shared_trunk_variant_runs() {
        let cfg = NetConfig {
            shared_trunk: true,
            ..NetConfig::default()
        };
        let m = Models::new(&cfg, 2).unwrap();
        let x = Tensor::zeros(&[1, 1, 64, 64]);
        assert_eq!(m.classifier.predict(&x, &x).unwrap().dims(), &[1, 3]);
        assert!(matches!(m.classifier.head_structure()[0], LayerKind::Dense { inputs: 8192, .. }));
    }
}
