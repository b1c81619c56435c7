//! Safe-depth game-tree search over imagined futures, and the closed driving loop.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datalog::teacher_action;
use crate::error::{Error, Result};
use crate::models::{argmax, frames_to_tensor, ActionClassifier, FramePredictor, F};
use crate::numerics::Tensor;
use crate::roadworld::{Action, Hazard, WorldConfig, WorldState};

/// Evaluation order for ties: earlier wins.
pub const TIE_BREAK: [Action; 3] = [Action::Up, Action::Left, Action::Right];

/// The dynamics and safety rule a search runs over.
pub trait WorldModel {
    type Node: Clone;

    /// Children in `Action` index order (Left, Up, Right), each with its safety label.
    fn expand(&self, node: &Self::Node) -> Result<[(Self::Node, bool); 3]>;
}

/// Generated frames labeled by classifier agreement.
pub struct LearnedModel<'a> {
    generator: &'a dyn FramePredictor,
    classifier: &'a dyn ActionClassifier,
}

impl<'a> LearnedModel<'a> {
    pub fn new(generator: &'a dyn FramePredictor, classifier: &'a dyn ActionClassifier) -> Self {
        LearnedModel { generator, classifier }
    }

    /// Either network may be absent; that is reported rather than silently skipped.
    pub fn try_new(generator: Option<&'a dyn FramePredictor>, classifier: Option<&'a dyn ActionClassifier>) -> Result<Self> {
        let generator = generator.ok_or_else(|| Error::ModelUnavailable("no generator checkpoint loaded".into()))?;
        let classifier = classifier.ok_or_else(|| Error::ModelUnavailable("no classifier checkpoint loaded".into()))?;
        Ok(Self::new(generator, classifier))
    }
}

/// The three predicted successors of `frame` (`[1,1,H,W]`), in Left, Up, Right order.
pub fn expand(frame: &Tensor<F>, generator: &dyn FramePredictor) -> Result<[Tensor<F>; 3]> {
    let batch = Tensor::concat_axis0(&[frame, frame, frame])?;
    let out = generator.predict(&batch, &Action::ALL)?;
    let mut parts = out.split_axis0(&[1, 1, 1])?.into_iter();
    Ok([0, 1, 2].map(|_| parts.next().expect("three parts")))
}

/// Safe iff the classifier names the action that generated `child` from `parent`.
pub fn label_safe(parent: &Tensor<F>, child: &Tensor<F>, action: Action, classifier: &dyn ActionClassifier) -> Result<bool> {
    let logits = classifier.logits(parent, child)?;
    Ok(argmax(logits.item(0)) == action.index())
}

impl WorldModel for LearnedModel<'_> {
    type Node = Tensor<F>;

    fn expand(&self, node: &Tensor<F>) -> Result<[(Tensor<F>, bool); 3]> {
        let children = expand(node, self.generator)?;
        let parents = Tensor::concat_axis0(&[node, node, node])?;
        let stacked = Tensor::concat_axis0(&[&children[0], &children[1], &children[2]])?;
        let logits = self.classifier.logits(&parents, &stacked)?;
        let [l, u, r] = children;
        Ok([(l, 0), (u, 1), (r, 2)].map(|(c, i)| (c, argmax(logits.item(i)) == i)))
    }
}

/// True simulator dynamics with spawning frozen, safety from the ground truth.
pub struct OracleModel;

impl WorldModel for OracleModel {
    type Node = WorldState;

    fn expand(&self, node: &WorldState) -> Result<[(WorldState, bool); 3]> {
        let mut out = Vec::with_capacity(3);
        for a in Action::ALL {
            out.push(node.lookahead_step(a)?);
        }
        Ok(out.try_into().expect("three children"))
    }
}

/// Nodes generated while scoring one root action at `max_depth`, root included.
pub fn node_budget(max_depth: usize) -> usize {
    (3usize.pow(max_depth as u32) - 1) / 2 + 1
}

/// Longest all-safe chain strictly below a safe `node`, capped at `levels`.
fn chain<M: WorldModel>(model: &M, node: &M::Node, levels: usize, visited: &mut usize) -> Result<usize> {
    if levels == 0 {
        return Ok(0);
    }
    let children = model.expand(node)?;
    *visited += 3;
    let mut best = 0;
    for (child, safe) in &children {
        // An unsafe node ends its branch: nothing below it can extend an all-safe chain.
        if *safe {
            best = best.max(1 + chain(model, child, levels - 1, visited)?);
            if best == levels {
                break;
            }
        }
    }
    Ok(best)
}

fn depth_from_children<M: WorldModel>(model: &M, children: &[(M::Node, bool); 3], action: Action, max_depth: usize, visited: &mut usize) -> Result<usize> {
    let (child, safe) = &children[action.index()];
    if !safe {
        return Ok(0);
    }
    Ok(1 + chain(model, child, max_depth - 1, visited)?)
}

fn check_depth(max_depth: usize) -> Result<()> {
    if max_depth == 0 {
        return Err(Error::Config("max_depth must be at least 1".into()));
    }
    Ok(())
}

/// Safe depth of `action` from `root`, with the number of nodes generated.
pub fn safe_depth<M: WorldModel>(model: &M, root: &M::Node, action: Action, max_depth: usize) -> Result<(usize, usize)> {
    check_depth(max_depth)?;
    let children = model.expand(root)?;
    // root plus the one child for `action`; its siblings belong to other root actions
    let mut visited = 2;
    let d = depth_from_children(model, &children, action, max_depth, &mut visited)?;
    Ok((d, visited))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionScores {
    /// Safe depth per action, in `Action` index order.
    pub scores: [usize; 3],
    pub chosen: Action,
    /// Every score is zero; `chosen` is then Up by convention.
    pub no_safe_option: bool,
    /// Nodes generated across all three root actions, root included once.
    pub nodes: usize,
}

impl ActionScores {
    pub fn from_scores(scores: [usize; 3], nodes: usize) -> Self {
        let mut chosen = TIE_BREAK[0];
        for a in TIE_BREAK {
            if scores[a.index()] > scores[chosen.index()] {
                chosen = a;
            }
        }
        ActionScores {
            scores,
            chosen,
            no_safe_option: scores.iter().all(|&s| s == 0),
            nodes,
        }
    }

    pub fn score(&self, a: Action) -> usize {
        self.scores[a.index()]
    }
}

pub fn choose_action<M: WorldModel>(model: &M, root: &M::Node, max_depth: usize) -> Result<ActionScores> {
    check_depth(max_depth)?;
    let children = model.expand(root)?;
    let mut nodes = 4;
    let mut scores = [0; 3];
    for a in Action::ALL {
        scores[a.index()] = depth_from_children(model, &children, a, max_depth, &mut nodes)?;
    }
    Ok(ActionScores::from_scores(scores, nodes))
}

/// One level of the fully expanded tree.
#[derive(Debug, Clone)]
pub struct PlanNode<N> {
    pub node: N,
    pub action_taken: Action,
    pub safe: bool,
    pub depth: usize,
    pub children: Vec<PlanNode<N>>,
}

/// Expand every safe node down to `max_depth`; returns the root's three children.
pub fn build_tree<M: WorldModel>(model: &M, root: &M::Node, max_depth: usize) -> Result<Vec<PlanNode<M::Node>>> {
    check_depth(max_depth)?;
    grow(model, root, 1, max_depth)
}

fn grow<M: WorldModel>(model: &M, parent: &M::Node, depth: usize, max_depth: usize) -> Result<Vec<PlanNode<M::Node>>> {
    let mut out = Vec::with_capacity(3);
    for (a, (node, safe)) in Action::ALL.into_iter().zip(model.expand(parent)?) {
        let children = if safe && depth < max_depth {
            grow(model, &node, depth + 1, max_depth)?
        } else {
            Vec::new()
        };
        out.push(PlanNode {
            node,
            action_taken: a,
            safe,
            depth,
            children,
        });
    }
    Ok(out)
}

impl<N> PlanNode<N> {
    /// Longest safe chain starting at this node, counting the node itself.
    pub fn safe_depth(&self) -> usize {
        if !self.safe {
            return 0;
        }
        1 + self.children.iter().map(PlanNode::safe_depth).max().unwrap_or(0)
    }
}

pub enum DriveMode<'a> {
    Learned(LearnedModel<'a>),
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub step: usize,
    /// `None` for scripted (non-planning) drivers.
    pub scores: Option<[usize; 3]>,
    pub chosen: Action,
    pub safe: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub steps: Vec<EpisodeStep>,
    /// Steps completed without a crash.
    pub survived: usize,
    pub crash: Option<Hazard>,
}

impl EpisodeReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,score_left,score_up,score_right,chosen,safe\n");
        for s in &self.steps {
            let [l, u, r] = s.scores.map(|v| v.map(|x| x.to_string())).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", s.step, l, u, r, s.chosen, s.safe);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Closed loop: render, score the three actions, apply the best to the real world.
/// Stops at the first crash.
pub fn drive(seed: u64, n_steps: usize, max_depth: usize, config: &WorldConfig, mode: &DriveMode<'_>) -> Result<EpisodeReport> {
    check_depth(max_depth)?;
    run_episode(seed, n_steps, config, |state| {
        let scores = match mode {
            DriveMode::Oracle => choose_action(&OracleModel, state, max_depth)?,
            DriveMode::Learned(model) => choose_action(model, &frames_to_tensor([&state.render()])?, max_depth)?,
        };
        Ok((scores.chosen, Some(scores.scores)))
    })
}

/// The scripted teacher over the same episode protocol, as a baseline.
pub fn teacher_episode(seed: u64, n_steps: usize, config: &WorldConfig) -> Result<EpisodeReport> {
    run_episode(seed, n_steps, config, |state| Ok((teacher_action(state), None)))
}

fn run_episode(
    seed: u64,
    n_steps: usize,
    config: &WorldConfig,
    mut policy: impl FnMut(&WorldState) -> Result<(Action, Option<[usize; 3]>)>,
) -> Result<EpisodeReport> {
    let mut state = WorldState::new(seed, config.clone())?;
    let mut report = EpisodeReport {
        seed,
        steps: Vec::with_capacity(n_steps),
        survived: 0,
        crash: None,
    };
    for step in 0..n_steps {
        let (chosen, scores) = policy(&state)?;
        let safe = state.step(chosen)?;
        report.steps.push(EpisodeStep { step, scores, chosen, safe });
        if !safe {
            report.crash = state.hazard();
            break;
        }
        report.survived += 1;
    }
    Ok(report)
}
