//! Deterministic top-down road simulator.
//!
//! Screen row 0 is the far horizon and the ego block sits near the bottom. Every step
//! the world scrolls down one row: the centerline and obstacles shift toward the ego
//! and a fresh row is generated at the top. Safety is a pure function of the state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const OFF_ROAD: u8 = 32;
pub const ROAD: u8 = 160;
pub const OBSTACLE: u8 = 96;
pub const EGO: u8 = 255;

/// Half-extent of the square 3×3 ego block.
const EGO_HALF: i32 = 1;
/// Probability that the road's drift direction changes on a new row.
const TURN_RATE: f64 = 0.08;
/// Probability that a row actually moves by one column along the current drift.
const DRIFT_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Left = 0,
    Up = 1,
    Right = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Left, Action::Up, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn lateral(self) -> i32 {
        match self {
            Action::Left => -1,
            Action::Up => 0,
            Action::Right => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Up => "up",
            Action::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub road_half_width: usize,
    pub ego_row: usize,
    pub ego_step: usize,
    /// Largest centerline shift between adjacent rows; 0 gives a straight road.
    pub curvature_max: usize,
    pub obstacle_rate: f64,
    pub obstacle_size: usize,
    /// No obstacle is ever placed within this many rows above the ego block.
    pub spawn_margin: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 64,
            height: 64,
            road_half_width: 10,
            ego_row: 56,
            ego_step: 2,
            curvature_max: 1,
            obstacle_rate: 0.06,
            obstacle_size: 4,
            spawn_margin: 6,
        }
    }
}

impl WorldConfig {
    pub fn straight() -> Self {
        WorldConfig {
            curvature_max: 0,
            ..Self::default()
        }
    }

    pub fn obstacle_free() -> Self {
        WorldConfig {
            obstacle_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 || self.obstacle_size == 0 || self.ego_step == 0 {
            return fail("all extents must be positive".into());
        }
        if self.ego_row + 1 >= self.height {
            return fail(format!("ego_row {} leaves no room for the ego block in height {}", self.ego_row, self.height));
        }
        if self.road_half_width < self.obstacle_size {
            return fail("road_half_width must be at least obstacle_size".into());
        }
        if 2 * self.road_half_width + 1 > self.width {
            return fail("road wider than the frame".into());
        }
        if !(0.0..=1.0).contains(&self.obstacle_rate) {
            return fail("obstacle_rate must be a probability".into());
        }
        if self.ego_row < self.spawn_margin + self.obstacle_size + 1 {
            return fail("spawn margin leaves no rows for obstacles".into());
        }
        Ok(())
    }

    fn min_center(&self) -> i32 {
        self.road_half_width as i32
    }

    fn max_center(&self) -> i32 {
        (self.width - 1 - self.road_half_width) as i32
    }

    /// Lowest top-row index an obstacle may occupy at creation.
    fn spawn_limit(&self) -> i32 {
        self.ego_row as i32 - EGO_HALF - self.spawn_margin as i32 - self.obstacle_size as i32
    }
}

/// Top-left corner of a square obstacle block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Obstacle {
    pub row: i32,
    pub col: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hazard {
    OffRoad,
    Obstacle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub config: WorldConfig,
    pub rng: Rng,
    pub step_index: u64,
    /// Road center column for each screen row, index 0 at the top.
    pub centerline: Vec<i32>,
    /// Current drift direction of newly generated rows (−1, 0, +1).
    pub heading: i32,
    pub obstacles: Vec<Obstacle>,
    pub ego_col: i32,
    pub alive: bool,
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Pixels as floats in `[−1, 1]`.
    pub fn to_unit(&self) -> impl Iterator<Item = f32> + '_ {
        self.pixels.iter().map(|&p| p as f32 / 127.5 - 1.0)
    }
}

impl WorldState {
    pub fn new(seed: u64, config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let mut state = WorldState {
            rng: Rng::new(seed),
            step_index: 0,
            centerline: Vec::with_capacity(config.height),
            heading: 0,
            obstacles: Vec::new(),
            ego_col: (config.width / 2) as i32,
            alive: true,
            config,
        };
        // Grow the road upward from the ego's row so the ego starts centered.
        let cfg = state.config.clone();
        let mut rows = vec![state.ego_col; cfg.height];
        for r in (0..cfg.ego_row).rev() {
            rows[r] = state.next_center(rows[r + 1]);
        }
        state.centerline = rows;
        let limit = cfg.spawn_limit();
        for r in (0..=limit).rev() {
            if let Some(ob) = state.maybe_spawn(r) {
                state.obstacles.push(ob);
            }
        }
        Ok(state)
    }

    fn next_center(&mut self, below: i32) -> i32 {
        let cfg = &self.config;
        if cfg.curvature_max == 0 {
            return below;
        }
        if self.rng.chance(TURN_RATE) {
            self.heading = self.rng.below(3) as i32 - 1;
        }
        let mut c = below;
        if self.rng.chance(DRIFT_RATE) {
            let max = cfg.curvature_max as i32;
            c = below + self.heading * (1 + self.rng.below(max as u64) as i32);
        }
        let (lo, hi) = (cfg.min_center(), cfg.max_center());
        if c < lo || c > hi {
            self.heading = -self.heading;
            c = c.clamp(lo, hi);
        }
        c
    }

    fn maybe_spawn(&mut self, row: i32) -> Option<Obstacle> {
        let cfg = &self.config;
        if !self.rng.chance(cfg.obstacle_rate) {
            return None;
        }
        let center = self.centerline[row.max(0) as usize];
        let lo = center - cfg.road_half_width as i32;
        let span = 2 * cfg.road_half_width + 2 - cfg.obstacle_size;
        let col = lo + self.rng.below(span as u64) as i32;
        Some(Obstacle { row, col })
    }

    pub fn road_edges(&self, row: usize) -> (i32, i32) {
        let c = self.centerline[row];
        let hw = self.config.road_half_width as i32;
        (c - hw, c + hw)
    }

    pub fn center_at_ego(&self) -> i32 {
        self.centerline[self.config.ego_row]
    }

    fn ego_rows(&self) -> std::ops::RangeInclusive<i32> {
        let r = self.config.ego_row as i32;
        r - EGO_HALF..=r + EGO_HALF
    }

    /// Ground-truth hazard at the current state, if any.
    pub fn hazard(&self) -> Option<Hazard> {
        let (left, right) = (self.ego_col - EGO_HALF, self.ego_col + EGO_HALF);
        for r in self.ego_rows() {
            let (lo, hi) = self.road_edges(r as usize);
            if left < lo || right > hi {
                return Some(Hazard::OffRoad);
            }
        }
        let size = self.config.obstacle_size as i32;
        let (top, bottom) = (*self.ego_rows().start(), *self.ego_rows().end());
        let hit = self
            .obstacles
            .iter()
            .any(|o| o.row <= bottom && o.row + size > top && o.col <= right && o.col + size > left);
        hit.then_some(Hazard::Obstacle)
    }

    pub fn is_safe(&self) -> bool {
        self.hazard().is_none()
    }

    fn advance(&mut self, action: Action, spawn: bool) -> Result<bool> {
        if !self.alive {
            return Err(Error::DeadState);
        }
        self.ego_col += action.lateral() * self.config.ego_step as i32;
        self.ego_col = self.ego_col.clamp(EGO_HALF, self.config.width as i32 - 1 - EGO_HALF);
        let height = self.config.height as i32;
        for o in &mut self.obstacles {
            o.row += 1;
        }
        self.obstacles.retain(|o| o.row < height);
        self.centerline.pop();
        let top = if spawn { self.next_center(self.centerline[0]) } else { self.centerline[0] };
        self.centerline.insert(0, top);
        if spawn {
            if let Some(ob) = self.maybe_spawn(0) {
                self.obstacles.push(ob);
            }
        }
        self.step_index += 1;
        let safe = self.is_safe();
        self.alive = safe;
        Ok(safe)
    }

    /// Apply one key press and scroll the world by one row.
    pub fn step(&mut self, action: Action) -> Result<bool> {
        self.advance(action, true)
    }

    pub fn stepped(&self, action: Action) -> Result<(WorldState, bool)> {
        let mut next = self.clone();
        let safe = next.step(action)?;
        Ok((next, safe))
    }

    /// Look-ahead step: no obstacles spawn and the new horizon row continues straight,
    /// so the outcome depends only on the current state and the action.
    pub fn lookahead_step(&self, action: Action) -> Result<(WorldState, bool)> {
        let mut next = self.clone();
        let safe = next.advance(action, false)?;
        Ok((next, safe))
    }

    pub fn render(&self) -> Frame {
        let cfg = &self.config;
        let (w, h) = (cfg.width, cfg.height);
        let mut pixels = vec![OFF_ROAD; w * h];
        for r in 0..h {
            let (lo, hi) = self.road_edges(r);
            for c in lo.max(0)..=hi.min(w as i32 - 1) {
                pixels[r * w + c as usize] = ROAD;
            }
        }
        let size = cfg.obstacle_size as i32;
        for o in &self.obstacles {
            for r in o.row.max(0)..(o.row + size).min(h as i32) {
                for c in o.col.max(0)..(o.col + size).min(w as i32) {
                    pixels[r as usize * w + c as usize] = OBSTACLE;
                }
            }
        }
        if self.alive {
            for r in self.ego_rows() {
                for c in self.ego_col - EGO_HALF..=self.ego_col + EGO_HALF {
                    pixels[r as usize * w + c as usize] = EGO;
                }
            }
        }
        Frame { width: w, height: h, pixels }
    }
}

/// Longest all-safe look-ahead chain that starts with `action`, capped at `depth`.
///
/// Exhaustive over the `3^(depth−1)` continuations; look-ahead never spawns obstacles.
pub fn oracle_safe_depth(state: &WorldState, action: Action, depth: usize) -> usize {
    if depth == 0 || !state.alive {
        return 0;
    }
    match state.lookahead_step(action) {
        Ok((next, true)) => 1 + Action::ALL.iter().map(|&a| oracle_safe_depth(&next, a, depth - 1)).max().unwrap_or(0),
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clear_state(config: WorldConfig) -> WorldState {
        let mut s = WorldState::new(0, config).unwrap();
        s.obstacles.clear();
        s
    }

    #[test]
    fn init_is_deterministic_and_safe() {
        let a = WorldState::new(5, WorldConfig::default()).unwrap();
        let b = WorldState::new(5, WorldConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.is_safe());
        let c = WorldState::new(6, WorldConfig::default()).unwrap();
        assert_ne!(a.centerline, c.centerline);
    }

    #[test]
    fn seeds_zero_and_one_differ() {
        let a = WorldState::new(0, WorldConfig::default()).unwrap();
        let b = WorldState::new(1, WorldConfig::default()).unwrap();
        assert_ne!(a.centerline, b.centerline);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = WorldConfig {
            ego_row: 63,
            ..WorldConfig::default()
        };
        assert!(matches!(WorldState::new(0, bad), Err(Error::Config(_))));
        let narrow = WorldConfig {
            road_half_width: 3,
            ..WorldConfig::default()
        };
        assert!(WorldState::new(0, narrow).is_err());
    }

    #[test]
    fn centered_up_on_straight_road_is_safe() {
        let mut s = clear_state(WorldConfig::straight());
        s.config.obstacle_rate = 0.0;
        assert_eq!(s.ego_col, s.center_at_ego());
        assert!(s.step(Action::Up).unwrap());
    }

    #[test]
    fn left_from_left_edge_goes_off_road() {
        let mut s = clear_state(WorldConfig::straight());
        let (lo, _) = s.road_edges(s.config.ego_row);
        s.ego_col = lo + EGO_HALF;
        assert!(s.is_safe());
        assert!(!s.step(Action::Left).unwrap());
        assert_eq!(s.hazard(), Some(Hazard::OffRoad));
        assert!(matches!(s.step(Action::Up), Err(Error::DeadState)));
    }

    #[test]
    fn lateral_moves_commute() {
        let s = WorldState::new(3, WorldConfig::default()).unwrap();
        let mut a = s.clone();
        a.step(Action::Left).unwrap();
        a.step(Action::Right).unwrap();
        let mut b = s.clone();
        b.step(Action::Right).unwrap();
        b.step(Action::Left).unwrap();
        assert_eq!(a.ego_col, b.ego_col);
        assert_eq!(a.centerline, b.centerline);
    }

    #[test]
    fn render_is_pure_and_uses_palette() {
        let s = WorldState::new(8, WorldConfig::default()).unwrap();
        let f = s.render();
        assert_eq!(f, s.render());
        assert!(f.pixels.iter().all(|p| [OFF_ROAD, ROAD, OBSTACLE, EGO].contains(p)));
        assert_eq!(f.pixels.iter().filter(|&&p| p == EGO).count(), 9);
    }

    #[test]
    fn dead_state_renders_without_ego() {
        let mut s = clear_state(WorldConfig::straight());
        s.ego_col = s.road_edges(s.config.ego_row).0 + EGO_HALF;
        s.step(Action::Left).unwrap();
        assert!(!s.alive);
        assert!(!s.render().pixels.contains(&EGO));
    }

    #[test]
    fn road_pixel_count_per_row() {
        let s = WorldState::new(21, WorldConfig::default()).unwrap();
        let f = s.render();
        let size = s.config.obstacle_size as i32;
        for r in 0..s.config.height {
            let road = (0..s.config.width).filter(|&c| f.pixel(r, c) == ROAD).count();
            let (lo, hi) = s.road_edges(r);
            let covered = (lo..=hi)
                .filter(|&c| {
                    let ob = s
                        .obstacles
                        .iter()
                        .any(|o| (o.row..o.row + size).contains(&(r as i32)) && (o.col..o.col + size).contains(&c));
                    let ego = s.ego_rows().contains(&(r as i32)) && (c - s.ego_col).abs() <= EGO_HALF;
                    ob || ego
                })
                .count();
            assert_eq!(road, 2 * s.config.road_half_width + 1 - covered, "row {r}");
        }
    }

    #[test]
    fn obstacle_directly_ahead_blocks_up() {
        let mut s = clear_state(WorldConfig::straight());
        let top = s.config.ego_row as i32 - EGO_HALF;
        s.obstacles.push(Obstacle {
            row: top - s.config.obstacle_size as i32,
            col: s.ego_col - 1,
        });
        assert!(s.is_safe());
        assert_eq!(oracle_safe_depth(&s, Action::Up, 3), 0);
    }

    #[test]
    fn empty_straight_road_has_full_depth() {
        let s = clear_state(WorldConfig {
            obstacle_rate: 0.0,
            ..WorldConfig::straight()
        });
        for a in Action::ALL {
            assert_eq!(oracle_safe_depth(&s, a, 3), 3);
        }
    }
}
