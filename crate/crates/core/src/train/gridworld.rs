//! A square gridworld where the agent must reach and hold a target cell.
//!
//! The grid spans `[-E, E]^2`, the agent starts at the origin and moves one cell
//! per step. Targets are drawn from cells strictly inside the configured
//! quadrants. The target is absorbing: once reached, the agent stays put. A
//! step pays the on-target reward when the agent is on the target at the start
//! of the step.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid size must be odd and at least 3, got {0}")]
    InvalidSize(usize),
    #[error("at least one target quadrant is required")]
    NoQuadrants,
    #[error("max_steps must be at least 1")]
    NoSteps,
    #[error("episode already finished after {0} steps")]
    EpisodeDone(usize),
    #[error("unknown quadrant `{0}` (expected I, II, III or IV)")]
    UnknownQuadrant(String),
    #[error("target {0:?} is not strictly inside the grid's quadrants")]
    InvalidTarget((i32, i32)),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    I,
    II,
    III,
    IV,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::I, Quadrant::II, Quadrant::III, Quadrant::IV];

    /// Sign of (x, y) inside the quadrant.
    pub fn signs(self) -> (i32, i32) {
        match self {
            Quadrant::I => (1, 1),
            Quadrant::II => (-1, 1),
            Quadrant::III => (-1, -1),
            Quadrant::IV => (1, -1),
        }
    }

    pub fn contains(self, (x, y): (i32, i32)) -> bool {
        let (sx, sy) = self.signs();
        x * sx > 0 && y * sy > 0
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrant::I => "I",
            Quadrant::II => "II",
            Quadrant::III => "III",
            Quadrant::IV => "IV",
        })
    }
}

impl FromStr for Quadrant {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Quadrant::I),
            "II" | "2" => Ok(Quadrant::II),
            "III" | "3" => Ok(Quadrant::III),
            "IV" | "4" => Ok(Quadrant::IV),
            _ => Err(GridError::UnknownQuadrant(s.to_string())),
        }
    }
}

/// Policy output order is `[Up, Down, Left, Right]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Action {
        Self::ALL[i]
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeState {
    pub agent: (i32, i32),
    pub target: (i32, i32),
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    half_extent: i32,
    quadrants: Vec<Quadrant>,
    max_steps: usize,
    reward_on_target: f64,
}

pub const DEFAULT_REWARD: f64 = 0.1;

impl GridWorld {
    /// `grid_size` is the side length (odd), e.g. 9 for `[-4, 4]^2`.
    pub fn new(
        grid_size: usize,
        quadrants: &[Quadrant],
        max_steps: usize,
    ) -> Result<Self, GridError> {
        if grid_size < 3 || grid_size % 2 == 0 {
            return Err(GridError::InvalidSize(grid_size));
        }
        if quadrants.is_empty() {
            return Err(GridError::NoQuadrants);
        }
        if max_steps == 0 {
            return Err(GridError::NoSteps);
        }
        let mut quadrants = quadrants.to_vec();
        quadrants.sort();
        quadrants.dedup();
        Ok(Self {
            half_extent: ((grid_size - 1) / 2) as i32,
            quadrants,
            max_steps,
            reward_on_target: DEFAULT_REWARD,
        })
    }

    pub fn with_reward(mut self, reward: f64) -> Self {
        self.reward_on_target = reward;
        self
    }

    pub fn half_extent(&self) -> i32 {
        self.half_extent
    }

    pub fn grid_size(&self) -> usize {
        (2 * self.half_extent + 1) as usize
    }

    pub fn quadrants(&self) -> &[Quadrant] {
        &self.quadrants
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn reward_on_target(&self) -> f64 {
        self.reward_on_target
    }

    pub const OBSERVATION_DIM: usize = 2;
    pub const ACTIONS: usize = 4;

    /// Every admissible target cell, in a fixed order.
    pub fn target_cells(&self) -> Vec<(i32, i32)> {
        let e = self.half_extent;
        let mut cells = Vec::new();
        for &q in &self.quadrants {
            let (sx, sy) = q.signs();
            for a in 1..=e {
                for b in 1..=e {
                    cells.push((sx * a, sy * b));
                }
            }
        }
        cells
    }

    /// Fresh episode with the agent at the origin and a uniformly drawn target.
    pub fn reset_with<R: Rng + ?Sized>(&self, rng: &mut R) -> EpisodeState {
        let e = self.half_extent;
        let q = self.quadrants[rng.gen_range(0..self.quadrants.len())];
        let (sx, sy) = q.signs();
        let target = (sx * rng.gen_range(1..=e), sy * rng.gen_range(1..=e));
        EpisodeState {
            agent: (0, 0),
            target,
            steps: 0,
        }
    }

    pub fn reset(&self, seed: u64) -> EpisodeState {
        self.reset_with(&mut seeded(seed))
    }

    /// Episode with a chosen target, which must lie in one of the quadrants.
    pub fn start_at(&self, target: (i32, i32)) -> Result<EpisodeState, GridError> {
        let inside = target.0.abs() <= self.half_extent && target.1.abs() <= self.half_extent;
        if !inside || !self.quadrants.iter().any(|q| q.contains(target)) {
            return Err(GridError::InvalidTarget(target));
        }
        Ok(EpisodeState {
            agent: (0, 0),
            target,
            steps: 0,
        })
    }

    /// `(target - agent) / E`.
    pub fn observe(&self, state: &EpisodeState) -> [f64; 2] {
        let e = f64::from(self.half_extent);
        [
            f64::from(state.target.0 - state.agent.0) / e,
            f64::from(state.target.1 - state.agent.1) / e,
        ]
    }

    pub fn is_done(&self, state: &EpisodeState) -> bool {
        state.steps >= self.max_steps
    }

    /// Advance one step. Returns the next state, the step reward and whether
    /// the episode is over.
    pub fn step(
        &self,
        state: &EpisodeState,
        action: Action,
    ) -> Result<(EpisodeState, f64, bool), GridError> {
        if self.is_done(state) {
            return Err(GridError::EpisodeDone(state.steps));
        }
        let on_target = state.agent == state.target;
        let reward = if on_target {
            self.reward_on_target
        } else {
            0.0
        };
        let agent = if on_target {
            state.agent
        } else {
            let (dx, dy) = action.delta();
            let e = self.half_extent;
            (
                (state.agent.0 + dx).clamp(-e, e),
                (state.agent.1 + dy).clamp(-e, e),
            )
        };
        let next = EpisodeState {
            agent,
            target: state.target,
            steps: state.steps + 1,
        };
        Ok((next, reward, self.is_done(&next)))
    }

    /// Total reward of an agent that walks a shortest path and then holds the target.
    pub fn optimal_return(&self, target: (i32, i32)) -> f64 {
        let distance = (target.0.abs() + target.1.abs()) as usize;
        self.max_steps.saturating_sub(distance) as f64 * self.reward_on_target
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> GridWorld {
        GridWorld::new(9, &[Quadrant::I], 50).unwrap()
    }

    #[test]
    fn reward_on_target() {
        let env = env();
        let state = EpisodeState {
            agent: (2, 2),
            target: (2, 2),
            steps: 3,
        };
        for a in Action::ALL {
            let (next, r, done) = env.step(&state, a).unwrap();
            assert_eq!(r, 0.1);
            assert_eq!(next.agent, (2, 2));
            assert!(!done);
        }
    }

    #[test]
    fn boundary_clamps() {
        let env = env();
        let state = EpisodeState {
            agent: (4, 0),
            target: (2, 2),
            steps: 0,
        };
        let (next, r, _) = env.step(&state, Action::Right).unwrap();
        assert_eq!(next.agent, (4, 0));
        assert_eq!(r, 0.0);
        let state = EpisodeState {
            agent: (0, -4),
            target: (2, 2),
            steps: 0,
        };
        assert_eq!(env.step(&state, Action::Down).unwrap().0.agent, (0, -4));
    }

    #[test]
    fn optimal_episode_total() {
        let env = env();
        let mut state = env.start_at((2, 2)).unwrap();
        let mut total = 0.0;
        let mut done = false;
        while !done {
            let action = if state.agent.0 < 2 {
                Action::Right
            } else {
                Action::Up
            };
            let (next, r, d) = env.step(&state, action).unwrap();
            total += r;
            state = next;
            done = d;
        }
        assert!((total - 0.1 * 46.0).abs() < 1e-12);
        assert!((env.optimal_return((2, 2)) - total).abs() < 1e-12);
        assert!(matches!(
            env.step(&state, Action::Up),
            Err(GridError::EpisodeDone(50))
        ));
    }

    #[test]
    fn targets_lie_in_quadrants() {
        let env = GridWorld::new(9, &[Quadrant::I, Quadrant::II], 10).unwrap();
        let mut rng = seeded(1);
        for _ in 0..500 {
            let s = env.reset_with(&mut rng);
            assert!(s.target != (0, 0));
            assert!(env.quadrants().iter().any(|q| q.contains(s.target)));
        }
        assert_eq!(env.target_cells().len(), 32);
        assert!(env.start_at((0, 2)).is_err());
        assert!(env.start_at((1, -1)).is_err());
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            GridWorld::new(8, &[Quadrant::I], 5).unwrap_err(),
            GridError::InvalidSize(8)
        );
        assert_eq!(
            GridWorld::new(9, &[], 5).unwrap_err(),
            GridError::NoQuadrants
        );
        assert_eq!("iii".parse::<Quadrant>().unwrap(), Quadrant::III);
        assert!("V".parse::<Quadrant>().is_err());
    }
}
