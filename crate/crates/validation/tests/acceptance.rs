//! End-to-end acceptance suite, run without the libtest harness so every PASS/FAIL line
//! reaches the output. Exits nonzero if any criterion fails.
//!
//! `cargo test -p sadgan-validation --test acceptance -- 4 5` runs only the listed criteria.

use std::process::ExitCode;
use std::time::Instant;

use sadgan::datalog::{balance_split, collect_into, write_dataset, DatasetHeader, DatasetReader, DatasetWriter, Policy, Transition};
use sadgan::models::{count_dense, encode_checkpoint, restore, Models, NetConfig};
use sadgan::numerics::gradcheck::standard_suite;
use sadgan::numerics::{Activation, Hyperparams, LayerKind, Rng};
use sadgan::planner::{choose_action, drive, node_budget, safe_depth, teacher_episode, DriveMode, OracleModel};
use sadgan::roadworld::{Action, WorldConfig, WorldState};
use sadgan::training::{eval_classifier, eval_generator, loss_csv, train_classifier, train_gan, TrainOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn dataset(seed: u64, steps: usize) -> Vec<Transition> {
    let (_, bytes) = collect_into(seed, steps, &WorldConfig::default(), &Policy::Teacher, Vec::new()).unwrap();
    DatasetReader::new(&bytes[..]).unwrap().collect::<sadgan::Result<_>>().unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let reports = standard_suite().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let required = [
        "conv2d",
        "conv2d_transpose",
        "maxpool",
        "batchnorm(train)",
        "dense",
        "dropout(p=0)",
        "leaky_relu",
        "relu",
        "tanh",
        "sigmoid",
        "softmax_xent",
        "bce(target=1)",
    ];
    let missing: Vec<_> = required.iter().filter(|n| !reports.iter().any(|r| r.name == **n)).collect();
    // tolerances carried by the reports must be the stated ones, not loosened
    let tolerances_ok = reports.iter().all(|r| r.tolerance <= if r.name.starts_with("batchnorm") { 1e-3 } else { 1e-4 });
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    outcome(
        missing.is_empty() && failed.is_empty() && tolerances_ok && secs < 60.0,
        format!(
            "{} checks, worst rel err {worst:.2e}, failed {failed:?}, missing {missing:?}, {secs:.1}s",
            reports.len()
        ),
    )
}

fn classifier_accuracy() -> Outcome {
    let start = Instant::now();
    let all = dataset(21, 6000);
    let (train, test) = balance_split(&all, 200, 0.2, 5).unwrap();
    let per_class: Vec<usize> = Action::ALL.iter().map(|a| train.iter().filter(|t| t.action == *a).count()).collect();
    let models = Models::new(&NetConfig::default(), 1).unwrap();
    let hp = Hyperparams {
        learning_rate: 0.01,
        epochs: 25,
        ..Hyperparams::default()
    };
    let report = train_classifier(&train, &models.classifier, &hp, &TrainOptions::default()).unwrap();
    let eval = eval_classifier(&test, &models.classifier).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        per_class == [200, 200, 200] && test.len() >= 150 && report.records.len() <= 25 && eval.accuracy >= 0.90 && secs < 900.0,
        format!(
            "test accuracy {:.4} on {} held out, train {:?}/class, {} epochs, {secs:.0}s",
            eval.accuracy,
            test.len(),
            per_class,
            report.records.len()
        ),
    )
}

fn generator_usefulness() -> Outcome {
    let start = Instant::now();
    let train = dataset(11, 2500);
    let test = dataset(999, 400);
    let models = Models::new(&NetConfig::default(), 1).unwrap();
    let hp = Hyperparams {
        learning_rate: 0.002,
        epochs: 10_000,
        ..Hyperparams::default()
    };
    let opts = TrainOptions {
        max_steps: Some(2000),
        ..TrainOptions::default()
    };
    let report = train_gan(&train, &models.generator, &models.discriminator, &hp, &opts).unwrap();
    let eval = eval_generator(&test, &models.generator).unwrap();
    let ratio = eval.mae / eval.identity_baseline_mae;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        train.len() >= 2000 && report.steps <= 2000 && ratio <= 0.7 && secs < 1200.0,
        format!(
            "mae {:.5} vs identity {:.5} (ratio {ratio:.3}, need <= 0.7) after {} steps on {} transitions, {secs:.0}s",
            eval.mae,
            eval.identity_baseline_mae,
            report.steps,
            train.len()
        ),
    )
}

/// Varied states: seeds advanced by a noisy teacher, never past a crash.
fn random_states(n: usize) -> Vec<WorldState> {
    let mut rng = Rng::new(2024);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut s = WorldState::new(rng.next_u64(), WorldConfig::default()).unwrap();
        for _ in 0..rng.below(120) {
            let a = if rng.chance(0.3) {
                Action::from_index(rng.below(3) as usize).unwrap()
            } else {
                sadgan::datalog::teacher_action(&s)
            };
            let (next, safe) = s.stepped(a).unwrap();
            if !safe {
                break;
            }
            s = next;
        }
        out.push(s);
    }
    out
}

/// Prune-free reference: walk all 27 sequences and take the longest safe prefix.
fn brute_force_depths(state: &WorldState) -> [usize; 3] {
    let mut best = [0; 3];
    for code in 0..27 {
        let seq = [code / 9, (code / 3) % 3, code % 3];
        let mut s = state.clone();
        let mut prefix = 0;
        for &a in &seq {
            let (next, safe) = s.lookahead_step(Action::from_index(a).unwrap()).unwrap();
            if !safe {
                break;
            }
            prefix += 1;
            s = next;
        }
        best[seq[0]] = best[seq[0]].max(prefix);
    }
    best
}

fn planner_soundness() -> Outcome {
    let start = Instant::now();
    let states = random_states(1000);
    let (mut mismatches, mut bad_choices, mut over_budget, mut partial) = (0, 0, 0, 0);
    for s in &states {
        let reference = brute_force_depths(s);
        for a in Action::ALL {
            let (d, visited) = safe_depth(&OracleModel, s, a, 3).unwrap();
            mismatches += usize::from(d != reference[a.index()]);
            over_budget += usize::from(visited > node_budget(3));
        }
        let scores = choose_action(&OracleModel, s, 3).unwrap();
        let best = *reference.iter().max().unwrap();
        bad_choices += usize::from(best > 0 && scores.score(scores.chosen) == 0);
        bad_choices += usize::from(best == 3 && reference[scores.chosen.index()] != 3);
        partial += usize::from(best < 3);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && bad_choices == 0 && over_budget == 0 && secs < 60.0,
        format!(
            "{} states ({partial} without a full-depth path): {mismatches} depth mismatches, {bad_choices} bad choices, {over_budget} over budget, {secs:.1}s",
            states.len()
        ),
    )
}

fn closed_loop_safety() -> Outcome {
    let cfg = WorldConfig::default();
    let (mut oracle, mut teacher) = (0usize, 0usize);
    for seed in 0..20 {
        oracle += drive(seed, 1000, 3, &cfg, &DriveMode::Oracle).unwrap().survived;
        teacher += teacher_episode(seed, 1000, &cfg).unwrap().survived;
    }
    let (o, t) = (oracle as f64 / 20.0, teacher as f64 / 20.0);
    outcome(
        o >= t,
        format!("mean survival oracle planner {o:.1} vs teacher {t:.1} over 20 seeds x 1000 steps"),
    )
}

fn determinism_and_formats() -> Outcome {
    let mut problems = Vec::new();

    let (_, bytes) = collect_into(3, 300, &WorldConfig::default(), &Policy::Teacher, Vec::new()).unwrap();
    let records: Vec<Transition> = DatasetReader::new(&bytes[..]).unwrap().collect::<sadgan::Result<_>>().unwrap();
    let mut w = DatasetWriter::new(Vec::new(), DatasetHeader::new(64, 64)).unwrap();
    for r in &records {
        w.write(r).unwrap();
    }
    if w.finish().unwrap() != bytes {
        problems.push("dataset rewrite differs");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.sadg");
    write_dataset(&path, DatasetHeader::new(64, 64), &records).unwrap();
    if std::fs::read(&path).unwrap() != bytes {
        problems.push("dataset file differs");
    }

    let a = Models::new(&NetConfig::default(), 7).unwrap();
    let b = Models::new(&NetConfig::default(), 8).unwrap();
    for (src, dst) in [
        (a.generator.params(), b.generator.params()),
        (a.discriminator.params(), b.discriminator.params()),
        (a.classifier.params(), b.classifier.params()),
    ] {
        let ckpt = encode_checkpoint(&src);
        let file = dir.path().join("w.sadw");
        sadgan::models::save_checkpoint(&src, &file).unwrap();
        sadgan::models::load_checkpoint(&dst, &file).unwrap();
        if encode_checkpoint(&dst) != ckpt || std::fs::read(&file).unwrap() != ckpt {
            problems.push("checkpoint round trip differs");
        }
        restore(&dst, &ckpt).unwrap();
    }

    let runs: Vec<(String, String)> = (0..2)
        .map(|_| {
            let m = Models::new(&NetConfig::default(), 4).unwrap();
            let hp = Hyperparams {
                learning_rate: 0.002,
                epochs: 2,
                seed: 9,
                ..Hyperparams::default()
            };
            let opts = TrainOptions {
                max_steps: Some(6),
                ..TrainOptions::default()
            };
            let gan = train_gan(&records, &m.generator, &m.discriminator, &hp, &opts).unwrap();
            let cls = train_classifier(&records, &m.classifier, &Hyperparams { learning_rate: 0.01, ..hp }, &opts).unwrap();
            (loss_csv(&gan), loss_csv(&cls))
        })
        .collect();
    if runs[0] != runs[1] {
        problems.push("loss CSVs differ between identical runs");
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "dataset, checkpoint and loss CSV reproduce byte for byte".into()
        } else {
            problems.join("; ")
        },
    )
}

fn structural_fidelity() -> Outcome {
    let mut problems = Vec::new();
    for shared_trunk in [false, true] {
        let cfg = NetConfig {
            shared_trunk,
            ..NetConfig::default()
        };
        let m = Models::new(&cfg, 0).unwrap();
        if count_dense(&m.generator.structure()) != 0 || count_dense(&m.discriminator.structure()) != 0 {
            problems.push(format!("dense layer in G or D (shared={shared_trunk})"));
        }
        if !shared_trunk {
            let trunk = m.classifier.trunk_structure();
            let convs = trunk.iter().filter(|k| k.is_conv()).count();
            let mut seen = 0;
            let mut pooled_after = Vec::new();
            for k in &trunk {
                match k {
                    LayerKind::Conv2d { .. } => seen += 1,
                    LayerKind::MaxPool { .. } => pooled_after.push(seen),
                    _ => {}
                }
            }
            let head = m.classifier.head_structure();
            let dense: Vec<_> = head
                .iter()
                .filter_map(|k| if let LayerKind::Dense { outputs, .. } = k { Some(*outputs) } else { None })
                .collect();
            let dropouts: Vec<f64> = head
                .iter()
                .filter_map(|k| if let LayerKind::Dropout { p } = k { Some(*p) } else { None })
                .collect();
            let relu_after_bn = trunk
                .windows(2)
                .filter(|w| matches!(w, [LayerKind::BatchNorm { .. }, LayerKind::Activation(Activation::Relu)]))
                .count();
            if convs != 5 {
                problems.push(format!("classifier has {convs} conv layers"));
            }
            if pooled_after != [1, 2, 5] {
                problems.push(format!("pooling after convs {pooled_after:?}"));
            }
            if dense.len() != 4 || dense.last() != Some(&3) {
                problems.push(format!("classifier dense outputs {dense:?}"));
            }
            if dropouts.len() != 2 || dropouts.iter().any(|&p| p != 0.5) {
                problems.push(format!("dropout {dropouts:?}"));
            }
            if relu_after_bn != 5 {
                problems.push(format!("{relu_after_bn} batch-normalized ReLU layers"));
            }
        }
    }
    let hp = Hyperparams::default();
    if hp.momentum != 0.9 || hp.sgd().momentum != 0.9 || hp.dropout_p != 0.5 {
        problems.push("optimizer momentum or dropout default".into());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "G/D convolution-only; classifier 5 conv + 3 dense + readout, pools after 1/2/5; dropout 0.5; momentum 0.9".into()
        } else {
            problems.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("gradient correctness", gradients),
        ("classifier accuracy", classifier_accuracy),
        ("generator beats identity", generator_usefulness),
        ("planner soundness", planner_soundness),
        ("closed-loop safety", closed_loop_safety),
        ("determinism and formats", determinism_and_formats),
        ("structural fidelity", structural_fidelity),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let o = check();
        println!("{} criterion {id} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
