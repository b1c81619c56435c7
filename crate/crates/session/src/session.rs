//! One driver's session as a transport-free state machine.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use sadgan::datalog::{DatasetHeader, DatasetWriter, Transition};
use sadgan::models::{frames_to_tensor, Models};
use sadgan::planner::{choose_action, LearnedModel, OracleModel};
use sadgan::roadworld::{Action, WorldConfig, WorldState};

use crate::protocol::{ClientMessage, ServerMessage};

/// Planner recommendations attached to every frame reply.
pub enum Advisor {
    Learned {
        models: Models,
        depth: usize,
    },
    /// True lookahead dynamics; for demos and tests without checkpoints.
    Oracle {
        depth: usize,
    },
}

impl Advisor {
    pub fn advise(&self, state: &WorldState) -> sadgan::Result<(Action, [usize; 3])> {
        let scores = match self {
            Advisor::Learned { models, depth } => {
                let model = LearnedModel::new(&models.generator, &models.classifier);
                choose_action(&model, &frames_to_tensor([&state.render()])?, *depth)?
            }
            Advisor::Oracle { depth } => choose_action(&OracleModel, state, *depth)?,
        };
        Ok((scores.chosen, scores.scores))
    }
}

struct Running {
    seed: u64,
    world: WorldState,
    step: u32,
    record: bool,
    log: Vec<Transition>,
}

enum Phase {
    Idle,
    Running(Running),
    Over { survived: u32, log_path: String },
}

pub struct Session<'a> {
    id: u32,
    config: WorldConfig,
    log_dir: PathBuf,
    advisor: Option<&'a Advisor>,
    phase: Phase,
}

pub fn log_file_name(id: u32, seed: u64) -> String {
    format!("session-{id}-{seed}.sadg")
}

impl<'a> Session<'a> {
    pub fn new(id: u32, config: WorldConfig, log_dir: &Path, advisor: Option<&'a Advisor>) -> Self {
        Session {
            id,
            config,
            log_dir: log_dir.to_path_buf(),
            advisor,
            phase: Phase::Idle,
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn is_running(&self) -> bool {
        matches!(self.phase, Phase::Running(_))
    }

    /// Replies to `msg`, in send order.
    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Start { seed, record } => self.start(seed, record),
            ClientMessage::Action { step, action } => self.act(step, action),
            ClientMessage::Stop => match self.finish() {
                Some(over) => vec![over],
                None => vec![ServerMessage::error("no session running")],
            },
        }
    }

    /// Handle one raw text frame; unparseable input yields an error reply and changes nothing.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match ClientMessage::parse(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::error(format!("malformed message: {e}"))],
        }
    }

    fn start(&mut self, seed: u64, record: bool) -> Vec<ServerMessage> {
        if self.is_running() {
            return vec![ServerMessage::error("session already running; send stop first")];
        }
        let world = match WorldState::new(seed, self.config.clone()) {
            Ok(w) => w,
            Err(e) => return vec![ServerMessage::error(e.to_string())],
        };
        let run = Running {
            seed,
            world,
            step: 0,
            record,
            log: Vec::new(),
        };
        let reply = self.frame_reply(&run, true);
        self.phase = Phase::Running(run);
        vec![reply]
    }

    fn act(&mut self, step: u32, action: Action) -> Vec<ServerMessage> {
        let run = match &mut self.phase {
            Phase::Running(run) => run,
            Phase::Over { survived, log_path } => {
                return vec![ServerMessage::SessionOver {
                    survived: *survived,
                    log_path: log_path.clone(),
                }]
            }
            Phase::Idle => return vec![ServerMessage::error("no session running; send start first")],
        };
        if step != run.step {
            return vec![ServerMessage::error(format!("action for step {step}, but the session is at step {}", run.step))];
        }
        let before = run.world.render();
        let safe = match run.world.step(action) {
            Ok(safe) => safe,
            Err(e) => return vec![ServerMessage::error(e.to_string())],
        };
        let after = run.world.render();
        if run.record {
            run.log.push(Transition {
                frame_t: before,
                action,
                frame_t1: after,
                safe,
                session_id: self.id,
                step: run.step,
            });
        }
        run.step += 1;
        let run = match &self.phase {
            Phase::Running(run) => run,
            _ => unreachable!(),
        };
        let mut replies = vec![self.frame_reply(run, safe)];
        if !safe {
            replies.extend(self.finish());
        }
        replies
    }

    fn frame_reply(&self, run: &Running, safe: bool) -> ServerMessage {
        let advice = match self.advisor {
            Some(a) if safe => match a.advise(&run.world) {
                Ok(advice) => Some(advice),
                Err(e) => return ServerMessage::error(format!("planner failed: {e}")),
            },
            _ => None,
        };
        ServerMessage::frame(run.step, &run.world.render(), safe, advice)
    }

    /// End a running session, flushing its log; `None` if nothing was running.
    /// Also called when the connection drops.
    pub fn finish(&mut self) -> Option<ServerMessage> {
        let Phase::Running(run) = std::mem::replace(&mut self.phase, Phase::Idle) else {
            return None;
        };
        let survived = if run.world.alive { run.step } else { run.step - 1 };
        let log_path = if run.record {
            let path = self.log_dir.join(log_file_name(self.id, run.seed));
            match write_log(&path, &run) {
                Ok(()) => path.display().to_string(),
                Err(e) => return Some(ServerMessage::error(format!("could not write {}: {e}", path.display()))),
            }
        } else {
            String::new()
        };
        self.phase = Phase::Over {
            survived,
            log_path: log_path.clone(),
        };
        Some(ServerMessage::SessionOver { survived, log_path })
    }
}

fn write_log(path: &Path, run: &Running) -> std::io::Result<()> {
    let header = DatasetHeader::new(run.world.config.width, run.world.config.height);
    // Written aside and renamed, so a reader never sees a half-flushed file.
    let partial = path.with_extension("sadg.part");
    let mut w = DatasetWriter::new(BufWriter::new(File::create(&partial)?), header)?;
    for t in &run.log {
        w.write(t)?;
    }
    w.finish()?;
    std::fs::rename(&partial, path)
}

impl Drop for Session<'_> {
    fn drop(&mut self) {
        self.finish();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sadgan::datalog::read_dataset;

    fn start(s: &mut Session<'_>, seed: u64, record: bool) -> ServerMessage {
        s.handle(ClientMessage::Start { seed, record }).remove(0)
    }

    #[test]
    fn n_actions_log_n_transitions() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Session::new(3, WorldConfig::obstacle_free(), dir.path(), None);
        assert!(matches!(start(&mut s, 9, true), ServerMessage::Frame { step: 0, safe: true, .. }));
        for step in 0..5 {
            let r = s.handle(ClientMessage::Action { step, action: Action::Up });
            assert!(matches!(r[..], [ServerMessage::Frame { step: s, safe: true, .. }] if s == step + 1));
        }
        let over = s.handle(ClientMessage::Stop).remove(0);
        let ServerMessage::SessionOver { survived, log_path } = over else { panic!() };
        assert_eq!(survived, 5);
        assert!(log_path.ends_with("session-3-9.sadg"));
        let log = read_dataset(Path::new(&log_path)).unwrap();
        assert_eq!(log.len(), 5);
        assert!(log.iter().enumerate().all(|(i, t)| t.step == i as u32 && t.session_id == 3));
    }

    #[test]
    fn crash_reports_unsafe_then_over() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Session::new(1, WorldConfig::obstacle_free(), dir.path(), None);
        start(&mut s, 0, true);
        let mut step = 0;
        let replies = loop {
            let r = s.handle(ClientMessage::Action { step, action: Action::Left });
            step += 1;
            if r.len() > 1 {
                break r;
            }
        };
        assert!(matches!(replies[0], ServerMessage::Frame { safe: false, .. }));
        let ServerMessage::SessionOver { survived, ref log_path } = replies[1] else {
            panic!()
        };
        assert_eq!(survived, step - 1);
        let log = read_dataset(Path::new(log_path)).unwrap();
        assert_eq!(log.len() as u32, step);
        assert!(!log.last().unwrap().safe);
        let again = s.handle(ClientMessage::Action { step, action: Action::Up });
        assert!(matches!(again[..], [ServerMessage::SessionOver { .. }]));
    }

    #[test]
    fn bad_input_keeps_session() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Session::new(1, WorldConfig::default(), dir.path(), None);
        assert!(matches!(s.handle_text("{nope")[..], [ServerMessage::Error { .. }]));
        assert!(matches!(
            s.handle(ClientMessage::Action { step: 0, action: Action::Up })[..],
            [ServerMessage::Error { .. }]
        ));
        start(&mut s, 2, false);
        assert!(matches!(
            s.handle_text(r#"{"type":"action","step":5,"action":"up"}"#)[..],
            [ServerMessage::Error { .. }]
        ));
        assert!(matches!(
            s.handle_text(r#"{"type":"action","step":0,"action":"up"}"#)[..],
            [ServerMessage::Frame { step: 1, .. }]
        ));
        let ServerMessage::SessionOver { log_path, .. } = s.handle(ClientMessage::Stop).remove(0) else {
            panic!()
        };
        assert!(log_path.is_empty());
    }

    #[test]
    fn advisor_scores_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let advisor = Advisor::Oracle { depth: 3 };
        let mut s = Session::new(1, WorldConfig::default(), dir.path(), Some(&advisor));
        start(&mut s, 5, false);
        for step in 0..20 {
            let r = s.handle(ClientMessage::Action { step, action: Action::Up });
            if let ServerMessage::Frame {
                safe: true,
                scores,
                recommended,
                ..
            } = &r[0]
            {
                let sc = scores.unwrap();
                assert!([sc.left, sc.up, sc.right].iter().all(|&v| v <= 3));
                assert!(recommended.is_some());
            } else {
                break;
            }
        }
    }

    #[test]
    fn drop_flushes_partial_log() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Session::new(8, WorldConfig::obstacle_free(), dir.path(), None);
            start(&mut s, 1, true);
            s.handle(ClientMessage::Action { step: 0, action: Action::Up });
        }
        assert_eq!(read_dataset(&dir.path().join(log_file_name(8, 1))).unwrap().len(), 1);
    }
}
