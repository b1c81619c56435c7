//! Training loops for the GAN pair and the classifier, evaluation metrics, and the
//! per-epoch loss CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datalog::Transition;
use crate::error::{Error, Result};
use crate::models::{argmax, save_checkpoint, ActionClassifier, Classifier, Discriminator, FramePredictor, Generator, F};
use crate::numerics::loss::{bce, l1, softmax_xent};
use crate::numerics::{zero_grads, Hyperparams, Param, Phase, Rng, Tensor};
use crate::roadworld::Action;

/// Evaluation batches; inference has no batch-size semantics so this only bounds memory.
const EVAL_BATCH: usize = 64;

pub const LOSS_CSV_HEADER: &str = "epoch,d_loss,g_adv,g_l1,cls_loss,cls_acc";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: Option<f64>,
    pub g_adv: Option<f64>,
    pub g_l1: Option<f64>,
    pub cls_loss: Option<f64>,
    pub cls_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub wall_seconds: f64,
    /// Optimizer steps taken per network.
    pub steps: usize,
    /// Epoch whose checkpoint was kept as best, if checkpointing.
    pub best_epoch: Option<usize>,
}

/// Run-level settings that are not network hyperparameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Stop after this many generator (or classifier) steps, even mid-epoch.
    pub max_steps: Option<usize>,
    /// Write `*-last.sadw` every epoch and `*-best.sadw` on improvement.
    pub checkpoint_dir: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

/// Frames of a transition set pre-scaled to `[-1,1]`.
pub struct PairSet {
    before: Vec<F>,
    after: Vec<F>,
    actions: Vec<Action>,
    height: usize,
    width: usize,
}

impl PairSet {
    pub fn new(transitions: &[Transition]) -> Result<Self> {
        let first = transitions.first().ok_or_else(|| Error::Config("empty transition set".into()))?;
        let (height, width) = (first.frame_t.height, first.frame_t.width);
        let mut set = PairSet {
            before: Vec::with_capacity(transitions.len() * height * width),
            after: Vec::with_capacity(transitions.len() * height * width),
            actions: Vec::with_capacity(transitions.len()),
            height,
            width,
        };
        for t in transitions {
            for f in [&t.frame_t, &t.frame_t1] {
                if (f.height, f.width) != (height, width) {
                    return Err(Error::dim("transition frame size", height * width, f.height * f.width));
                }
            }
            set.before.extend(t.frame_t.to_unit());
            set.after.extend(t.frame_t1.to_unit());
            set.actions.push(t.action);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `(frame_t, actions, frame_t1)` for the given example indices.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<F>, Vec<Action>, Tensor<F>)> {
        let plane = self.height * self.width;
        let gather = |src: &[F]| {
            let mut out = Vec::with_capacity(idx.len() * plane);
            for &i in idx {
                out.extend_from_slice(&src[i * plane..(i + 1) * plane]);
            }
            out
        };
        let dims = [idx.len(), 1, self.height, self.width];
        Ok((
            Tensor::from_vec(&dims, gather(&self.before))?,
            idx.iter().map(|&i| self.actions[i]).collect(),
            Tensor::from_vec(&dims, gather(&self.after))?,
        ))
    }
}

/// Shuffled index batches for one epoch. A trailing batch of one is dropped, since
/// batch normalization needs at least two examples.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

fn finite(v: f64, epoch: usize, batch: usize, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::TrainingDiverged { epoch, batch, what })
    }
}

fn save(dir: &Path, file: &str, params: &[Param<F>]) -> Result<()> {
    save_checkpoint(params, &dir.join(file))
}

fn prepare(dir: &Option<PathBuf>) -> Result<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    Ok(())
}

struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn new() -> Self {
        Mean { sum: 0.0, count: 0 }
    }

    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Alternating adversarial training.
///
/// Each batch takes one discriminator step on real (target 1) and generated (target 0)
/// pairs, then one generator step on the non-saturating adversarial loss plus
/// `l1_weight · L1(x̂, x(t+1))`. The best checkpoint is the epoch with the lowest mean
/// training L1.
pub fn train_gan(data: &[Transition], gen: &Generator, disc: &Discriminator, hp: &Hyperparams, opts: &TrainOptions) -> Result<TrainReport> {
    hp.validate()?;
    let set = PairSet::new(data)?;
    prepare(&opts.checkpoint_dir)?;
    let start = Instant::now();
    let sgd = hp.sgd();
    let (g_params, d_params) = (gen.params(), disc.params());
    let mut rng = Rng::new(hp.seed);
    let mut report = TrainReport::default();
    let mut best = f64::INFINITY;
    'epochs: for epoch in 1..=hp.epochs {
        let (mut d_mean, mut adv_mean, mut l1_mean) = (Mean::new(), Mean::new(), Mean::new());
        for (b, idx) in epoch_batches(set.len(), hp.batch_size, &mut rng).into_iter().enumerate() {
            if opts.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let (x_t, actions, x_t1) = set.batch(&idx)?;
            let (fake, g_tape) = gen.forward(&x_t, &actions, &mut Phase::Train(&mut rng))?;

            zero_grads(&d_params);
            let (p_real, tape) = disc.forward(&x_t, &actions, &x_t1, &mut Phase::Train(&mut rng))?;
            let (loss_real, grad) = bce(&p_real, 1.0);
            disc.backward(tape, &grad)?;
            let (p_fake, tape) = disc.forward(&x_t, &actions, &fake, &mut Phase::Train(&mut rng))?;
            let (loss_fake, grad) = bce(&p_fake, 0.0);
            disc.backward(tape, &grad)?;
            d_mean.push(finite(loss_real + loss_fake, epoch, b, "discriminator loss")?);
            sgd.step(&d_params)?;

            let (p, tape) = disc.forward(&x_t, &actions, &fake, &mut Phase::Train(&mut rng))?;
            let (adv, grad) = bce(&p, 1.0);
            let mut grad_fake = disc.backward(tape, &grad)?;
            zero_grads(&d_params);
            let (recon, grad_l1) = l1(&fake, &x_t1)?;
            let w = hp.l1_weight as F;
            for (g, &r) in grad_fake.data_mut().iter_mut().zip(grad_l1.data()) {
                *g += w * r;
            }
            adv_mean.push(finite(adv, epoch, b, "generator adversarial loss")?);
            l1_mean.push(finite(recon, epoch, b, "generator L1 loss")?);
            gen.backward(g_tape, &grad_fake)?;
            sgd.step(&g_params)?;
            report.steps += 1;
        }
        if l1_mean.count == 0 {
            break 'epochs;
        }
        let record = EpochRecord {
            epoch,
            d_loss: d_mean.get(),
            g_adv: adv_mean.get(),
            g_l1: l1_mean.get(),
            ..EpochRecord::default()
        };
        if opts.verbose {
            eprintln!(
                "gan epoch {epoch}: d {:.4} adv {:.4} l1 {:.4}",
                d_mean.get().unwrap_or(0.0),
                adv_mean.get().unwrap_or(0.0),
                l1_mean.get().unwrap_or(0.0)
            );
        }
        if let Some(dir) = &opts.checkpoint_dir {
            save(dir, "gen-last.sadw", &g_params)?;
            save(dir, "disc-last.sadw", &d_params)?;
            let score = record.g_l1.unwrap_or(f64::INFINITY);
            if score < best {
                best = score;
                report.best_epoch = Some(epoch);
                save(dir, "gen-best.sadw", &g_params)?;
                save(dir, "disc-best.sadw", &d_params)?;
            }
        }
        report.records.push(record);
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Softmax cross-entropy with dropout and batch statistics active. The best checkpoint
/// is the epoch with the lowest mean training loss.
pub fn train_classifier(train: &[Transition], cls: &Classifier, hp: &Hyperparams, opts: &TrainOptions) -> Result<TrainReport> {
    hp.validate()?;
    let set = PairSet::new(train)?;
    prepare(&opts.checkpoint_dir)?;
    let start = Instant::now();
    let sgd = hp.sgd();
    let params = cls.params();
    let mut rng = Rng::new(hp.seed);
    let mut report = TrainReport::default();
    let mut best = f64::INFINITY;
    for epoch in 1..=hp.epochs {
        let (mut loss_mean, mut hits, mut seen) = (Mean::new(), 0usize, 0usize);
        for (b, idx) in epoch_batches(set.len(), hp.batch_size, &mut rng).into_iter().enumerate() {
            if opts.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let (x_t, actions, x_t1) = set.batch(&idx)?;
            let labels: Vec<usize> = actions.iter().map(|a| a.index()).collect();
            zero_grads(&params);
            let (logits, tape) = cls.forward(&x_t, &x_t1, &mut Phase::Train(&mut rng))?;
            let (loss, grad) = softmax_xent(&logits, &labels)?;
            loss_mean.push(finite(loss, epoch, b, "classifier loss")?);
            hits += labels.iter().enumerate().filter(|&(i, &l)| argmax(logits.item(i)) == l).count();
            seen += labels.len();
            cls.backward(tape, &grad)?;
            sgd.step(&params)?;
            report.steps += 1;
        }
        if seen == 0 {
            break;
        }
        let record = EpochRecord {
            epoch,
            cls_loss: loss_mean.get(),
            cls_acc: Some(hits as f64 / seen as f64),
            ..EpochRecord::default()
        };
        if opts.verbose {
            eprintln!(
                "cls epoch {epoch}: loss {:.4} acc {:.3}",
                loss_mean.get().unwrap_or(0.0),
                hits as f64 / seen as f64
            );
        }
        if let Some(dir) = &opts.checkpoint_dir {
            save(dir, "cls-last.sadw", &params)?;
            let score = record.cls_loss.unwrap_or(f64::INFINITY);
            if score < best {
                best = score;
                report.best_epoch = Some(epoch);
                save(dir, "cls-best.sadw", &params)?;
            }
        }
        report.records.push(record);
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEval {
    pub accuracy: f64,
    /// `confusion[true][predicted]`, in `Action` index order.
    pub confusion: [[usize; 3]; 3],
}

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(EVAL_BATCH).map(move |s| (s..(s + EVAL_BATCH).min(n)).collect())
}

pub fn eval_classifier(test: &[Transition], cls: &dyn ActionClassifier) -> Result<ClassifierEval> {
    let set = PairSet::new(test)?;
    let mut confusion = [[0usize; 3]; 3];
    for idx in chunks(set.len()) {
        let (x_t, actions, x_t1) = set.batch(&idx)?;
        for (truth, guess) in actions.iter().zip(cls.predict_actions(&x_t, &x_t1)?) {
            confusion[truth.index()][guess.index()] += 1;
        }
    }
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    Ok(ClassifierEval {
        accuracy: correct as f64 / set.len() as f64,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEval {
    /// Mean absolute error against the recorded `x(t+1)`, in `[-1,1]` pixel units.
    pub mae: f64,
    /// The same error for the copy-the-input prediction `x̂ = x(t)`.
    pub identity_baseline_mae: f64,
    /// Generator MAE per action class; `None` where the class is absent.
    pub per_action: [Option<f64>; 3],
}

pub fn eval_generator(test: &[Transition], gen: &dyn FramePredictor) -> Result<GeneratorEval> {
    let set = PairSet::new(test)?;
    let (mut total, mut baseline) = (0.0f64, 0.0f64);
    let mut per = [(0.0f64, 0usize); 3];
    for idx in chunks(set.len()) {
        let (x_t, actions, x_t1) = set.batch(&idx)?;
        let pred = gen.predict(&x_t, &actions)?;
        if pred.dims() != x_t1.dims() {
            return Err(Error::dim("generator output", x_t1.len(), pred.len()));
        }
        for (i, a) in actions.iter().enumerate() {
            let err: f64 = pred.item(i).iter().zip(x_t1.item(i)).map(|(&p, &t)| (p - t).abs() as f64).sum();
            let base: f64 = x_t.item(i).iter().zip(x_t1.item(i)).map(|(&p, &t)| (p - t).abs() as f64).sum();
            total += err;
            baseline += base;
            per[a.index()].0 += err;
            per[a.index()].1 += 1;
        }
    }
    let pixels = (set.height * set.width) as f64;
    let n = set.len() as f64 * pixels;
    Ok(GeneratorEval {
        mae: total / n,
        identity_baseline_mae: baseline / n,
        per_action: per.map(|(s, c)| (c > 0).then(|| s / (c as f64 * pixels))),
    })
}

pub fn loss_csv(report: &TrainReport) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in &report.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            cell(r.d_loss),
            cell(r.g_adv),
            cell(r.g_l1),
            cell(r.cls_loss),
            cell(r.cls_acc)
        );
    }
    out
}

pub fn emit_loss_csv(report: &TrainReport, path: &Path) -> Result<()> {
    std::fs::write(path, loss_csv(report)).map_err(|e| Error::io(path, e))
}

/// Parse a loss CSV back into records.
pub fn parse_loss_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_CSV_HEADER) {
        return Err(Error::Config("loss CSV header mismatch".into()));
    }
    lines
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 6 {
                return Err(Error::Config(format!("loss CSV row has {} cells: {line}", cells.len())));
            }
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| Error::Config(format!("bad number {s:?}: {e}")))
                }
            };
            Ok(EpochRecord {
                epoch: cells[0].parse().map_err(|e| Error::Config(format!("bad epoch {:?}: {e}", cells[0])))?,
                d_loss: num(cells[1])?,
                g_adv: num(cells[2])?,
                g_l1: num(cells[3])?,
                cls_loss: num(cells[4])?,
                cls_acc: num(cells[5])?,
            })
        })
        .collect()
}
