//! Labeled transition capture and the little-endian dataset file format.
//!
//! Layout: a 12-byte header (`"SADG"`, version u16, width u16, height u16,
//! channels u8, action count u8) followed by fixed-size records of
//! `frame_t`, action u8, `frame_t1`, safe u8, session id u32, step u32.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::roadworld::{Action, Frame, WorldConfig, WorldState};

pub const MAGIC: &[u8; 4] = b"SADG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 12;

/// How many rows above the ego block the teacher scans for obstacles.
const TEACHER_LOOKAHEAD: i32 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub frame_t: Frame,
    pub action: Action,
    pub frame_t1: Frame,
    pub safe: bool,
    pub session_id: u32,
    pub step: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub width: u16,
    pub height: u16,
    pub channels: u8,
    pub action_count: u8,
}

impl DatasetHeader {
    pub fn new(width: usize, height: usize) -> Self {
        DatasetHeader {
            width: width as u16,
            height: height as u16,
            channels: 1,
            action_count: 3,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize
    }

    pub fn record_len(&self) -> usize {
        2 * self.frame_len() + 10
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6..8].copy_from_slice(&self.width.to_le_bytes());
        b[8..10].copy_from_slice(&self.height.to_le_bytes());
        b[10] = self.channels;
        b[11] = self.action_count;
        b
    }

    fn decode(b: &[u8; HEADER_LEN]) -> Result<Self> {
        let fail = |offset: u64, message: String| Err(Error::Format { offset, message });
        if &b[..4] != MAGIC {
            return fail(0, format!("bad magic {:?}", &b[..4]));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return fail(4, format!("unsupported version {version}"));
        }
        let h = DatasetHeader {
            width: u16::from_le_bytes([b[6], b[7]]),
            height: u16::from_le_bytes([b[8], b[9]]),
            channels: b[10],
            action_count: b[11],
        };
        if h.channels != 1 {
            return fail(10, format!("expected 1 channel, found {}", h.channels));
        }
        if h.action_count != 3 {
            return fail(11, format!("expected 3 actions, found {}", h.action_count));
        }
        if h.width == 0 || h.height == 0 {
            return fail(6, "zero frame extent".into());
        }
        Ok(h)
    }
}

/// Streaming record reader over any byte source.
pub struct DatasetReader<R> {
    inner: R,
    header: DatasetHeader,
    offset: u64,
    buf: Vec<u8>,
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut head = [0u8; HEADER_LEN];
        let got = read_full(&mut inner, &mut head).map_err(|e| Error::Format {
            offset: 0,
            message: e.to_string(),
        })?;
        if got < HEADER_LEN {
            return Err(Error::Format {
                offset: got as u64,
                message: "truncated header".into(),
            });
        }
        let header = DatasetHeader::decode(&head)?;
        Ok(DatasetReader {
            inner,
            buf: vec![0; header.record_len()],
            header,
            offset: HEADER_LEN as u64,
        })
    }

    pub fn header(&self) -> DatasetHeader {
        self.header
    }

    fn next_record(&mut self) -> Result<Option<Transition>> {
        let start = self.offset;
        let got = read_full(&mut self.inner, &mut self.buf).map_err(|e| Error::Format {
            offset: start,
            message: e.to_string(),
        })?;
        if got == 0 {
            return Ok(None);
        }
        if got < self.buf.len() {
            return Err(Error::Format {
                offset: start + got as u64,
                message: format!("truncated record: {got} of {} bytes", self.buf.len()),
            });
        }
        self.offset += got as u64;
        let n = self.header.frame_len();
        let (w, h) = (self.header.width as usize, self.header.height as usize);
        let b = &self.buf;
        let action = Action::from_index(b[n] as usize).ok_or_else(|| Error::Format {
            offset: start + n as u64,
            message: format!("action byte {} out of range", b[n]),
        })?;
        let safe = match b[2 * n + 1] {
            0 => false,
            1 => true,
            v => {
                return Err(Error::Format {
                    offset: start + 2 * n as u64 + 1,
                    message: format!("safe flag {v} is not 0/1"),
                })
            }
        };
        let tail = 2 * n + 2;
        Ok(Some(Transition {
            frame_t: Frame {
                width: w,
                height: h,
                pixels: b[..n].to_vec(),
            },
            action,
            frame_t1: Frame {
                width: w,
                height: h,
                pixels: b[n + 1..2 * n + 1].to_vec(),
            },
            safe,
            session_id: u32::from_le_bytes(b[tail..tail + 4].try_into().expect("4 bytes")),
            step: u32::from_le_bytes(b[tail + 4..tail + 8].try_into().expect("4 bytes")),
        }))
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<Transition>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Append-only record writer; the header is written on creation.
pub struct DatasetWriter<W: Write> {
    inner: W,
    header: DatasetHeader,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut inner: W, header: DatasetHeader) -> std::io::Result<Self> {
        inner.write_all(&header.encode())?;
        Ok(DatasetWriter { inner, header })
    }

    pub fn write(&mut self, t: &Transition) -> std::io::Result<()> {
        let n = self.header.frame_len();
        if t.frame_t.pixels.len() != n || t.frame_t1.pixels.len() != n {
            return Err(std::io::Error::new(ErrorKind::InvalidInput, "frame size does not match dataset header"));
        }
        self.inner.write_all(&t.frame_t.pixels)?;
        self.inner.write_all(&[t.action as u8])?;
        self.inner.write_all(&t.frame_t1.pixels)?;
        self.inner.write_all(&[t.safe as u8])?;
        self.inner.write_all(&t.session_id.to_le_bytes())?;
        self.inner.write_all(&t.step.to_le_bytes())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn open_dataset(path: &Path) -> Result<DatasetReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    DatasetReader::new(BufReader::new(file))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Transition>> {
    open_dataset(path)?.collect()
}

pub fn write_dataset(path: &Path, header: DatasetHeader, transitions: &[Transition]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = DatasetWriter::new(BufWriter::new(file), header).map_err(io)?;
    for t in transitions {
        w.write(t).map_err(io)?;
    }
    w.finish().map_err(io)?;
    Ok(())
}

/// Scripted driver: dodge obstacles ahead, otherwise hold the centerline.
pub fn teacher_action(state: &WorldState) -> Action {
    let cfg = &state.config;
    let size = cfg.obstacle_size as i32;
    let ego_top = cfg.ego_row as i32 - 1;
    let ego_bottom = cfg.ego_row as i32 + 1;
    let (left, right) = (state.ego_col - 1, state.ego_col + 1);
    let threat = state
        .obstacles
        .iter()
        .filter(|o| {
            let bottom = o.row + size - 1;
            bottom >= ego_top - TEACHER_LOOKAHEAD && o.row <= ego_bottom && o.col <= right && o.col + size > left
        })
        .max_by_key(|o| o.row);
    let (road_lo, road_hi) = state.road_edges(cfg.ego_row);
    if let Some(o) = threat {
        let room_left = o.col - road_lo;
        let room_right = road_hi - (o.col + size - 1);
        return if room_left >= room_right { Action::Left } else { Action::Right };
    }
    let offset = state.ego_col - state.center_at_ego();
    if offset > 1 {
        Action::Left
    } else if offset < -1 {
        Action::Right
    } else {
        Action::Up
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Policy {
    Teacher,
    /// Replay recorded key presses in order; collection stops when they run out.
    Replay(Vec<Action>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub records: usize,
    pub per_action: [usize; 3],
    pub crashes: usize,
    pub races: usize,
}

/// Roll the simulator under `policy`, streaming one record per step into `sink`.
///
/// A crash is recorded with `safe = false`, then the world restarts with the next
/// seed and a new session id.
pub fn collect_into<W: Write>(seed: u64, n_steps: usize, config: &WorldConfig, policy: &Policy, sink: W) -> Result<(CollectSummary, W)> {
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    let header = DatasetHeader::new(config.width, config.height);
    let io = |e| Error::io("<dataset sink>", e);
    let mut writer = DatasetWriter::new(sink, header).map_err(io)?;
    let mut summary = CollectSummary {
        races: 1,
        ..Default::default()
    };
    let mut session = 0u32;
    let mut state = WorldState::new(seed, config.clone())?;
    let mut step_in_race = 0u32;
    let mut replay = match policy {
        Policy::Replay(actions) => Some(actions.iter().copied()),
        Policy::Teacher => None,
    };
    for _ in 0..n_steps {
        let action = match replay.as_mut() {
            Some(it) => match it.next() {
                Some(a) => a,
                None => break,
            },
            None => teacher_action(&state),
        };
        let frame_t = state.render();
        let safe = state.step(action)?;
        writer
            .write(&Transition {
                frame_t,
                action,
                frame_t1: state.render(),
                safe,
                session_id: session,
                step: step_in_race,
            })
            .map_err(io)?;
        summary.records += 1;
        summary.per_action[action.index()] += 1;
        step_in_race += 1;
        if !safe {
            summary.crashes += 1;
            session += 1;
            summary.races += 1;
            step_in_race = 0;
            state = WorldState::new(seed.wrapping_add(session as u64), config.clone())?;
        }
    }
    let sink = writer.finish().map_err(io)?;
    Ok((summary, sink))
}

pub fn collect(seed: u64, n_steps: usize, config: &WorldConfig, policy: &Policy, path: &Path) -> Result<CollectSummary> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let (summary, _) = collect_into(seed, n_steps, config, policy, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    Ok(summary)
}

/// Drop crash transitions, keeping only those logged as safe.
pub fn safe_only(transitions: Vec<Transition>) -> Vec<Transition> {
    transitions.into_iter().filter(|t| t.safe).collect()
}

/// Split into a class-balanced training set of exactly `per_class` per action and a
/// disjoint, equally balanced test set sized by `test_fraction`.
pub fn balance_split(transitions: &[Transition], per_class: usize, test_fraction: f64, seed: u64) -> Result<(Vec<Transition>, Vec<Transition>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
    }
    let test_per_class = (per_class as f64 * test_fraction / (1.0 - test_fraction)).round() as usize;
    let needed = per_class + test_per_class;
    let mut rng = Rng::new(seed);
    let mut train = Vec::with_capacity(3 * per_class);
    let mut test = Vec::with_capacity(3 * test_per_class);
    for action in Action::ALL {
        let mut members: Vec<usize> = (0..transitions.len()).filter(|&i| transitions[i].action == action).collect();
        if members.len() < needed {
            return Err(Error::DataStarvation {
                class: action.name().to_string(),
                needed,
                available: members.len(),
            });
        }
        rng.shuffle(&mut members);
        train.extend(members[..per_class].iter().map(|&i| transitions[i].clone()));
        test.extend(members[per_class..needed].iter().map(|&i| transitions[i].clone()));
    }
    rng.shuffle(&mut train);
    rng.shuffle(&mut test);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadworld::Obstacle;

    fn clear(config: WorldConfig) -> WorldState {
        let mut s = WorldState::new(1, config).unwrap();
        s.obstacles.clear();
        s
    }

    #[test]
    fn teacher_holds_center_on_clear_road() {
        let s = clear(WorldConfig::straight());
        assert_eq!(teacher_action(&s), Action::Up);
        let mut off = s.clone();
        off.ego_col -= 4;
        assert_eq!(teacher_action(&off), Action::Right);
        off.ego_col += 8;
        assert_eq!(teacher_action(&off), Action::Left);
    }

    #[test]
    fn teacher_dodges_toward_more_clearance() {
        let mut s = clear(WorldConfig::straight());
        // ego at center 32, road 22..=42; obstacle 29..=32 leaves 7 px left, 10 px right
        s.obstacles.push(Obstacle { row: 48, col: 29 });
        assert_eq!(teacher_action(&s), Action::Right);
        s.obstacles[0].col = 32;
        assert_eq!(teacher_action(&s), Action::Left);
        // symmetric clearance ties to Left
        s.obstacles[0].col = 31;
        assert_eq!(teacher_action(&s), Action::Left);
    }

    #[test]
    fn header_record_len() {
        let h = DatasetHeader::new(64, 64);
        assert_eq!(h.record_len(), 2 * 4096 + 10);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = DatasetHeader::new(4, 4).encode().to_vec();
        bytes[0] = b'X';
        assert!(matches!(DatasetReader::new(&bytes[..]), Err(Error::Format { offset: 0, .. })));
        let mut bytes = DatasetHeader::new(4, 4).encode().to_vec();
        bytes[4] = 9;
        assert!(matches!(DatasetReader::new(&bytes[..]), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn split_sizes_are_exact() {
        let (transitions, _) = {
            let mut buf = Vec::new();
            let (_, sink) = collect_into(3, 400, &WorldConfig::default(), &Policy::Teacher, &mut buf).unwrap();
            let _ = sink;
            (DatasetReader::new(&buf[..]).unwrap().collect::<Result<Vec<_>>>().unwrap(), ())
        };
        let (train, test) = balance_split(&transitions, 1, 0.0, 7).unwrap();
        assert_eq!(train.len(), 3);
        assert!(test.is_empty());
        let err = balance_split(&transitions, 10_000, 0.2, 7).unwrap_err();
        assert!(matches!(err, Error::DataStarvation { .. }));
    }
}
