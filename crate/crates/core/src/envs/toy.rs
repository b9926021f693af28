//! A small chain MDP for studying recovery from off-demonstration states.
//!
//! Bottom states `b0..b{n-1}` form the demonstrated path: `Progress` moves
//! right and leaves `b{n-1}` into the goal. `Deviate` from `b_i` lands on the
//! top state `t_i`. From a top state `StayPath` keeps moving right along the
//! top row and falls into a failure sink after `t{n-1}`. `Return` goes back
//! to `b_i` in the recoverable variant; in the non-recoverable variant the
//! edge is cut and `Return` behaves like `StayPath`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToyState {
    Bottom(usize),
    Top(usize),
    Goal,
    Failure,
}

impl ToyState {
    pub fn is_terminal(self) -> bool {
        matches!(self, ToyState::Goal | ToyState::Failure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToyAction {
    Progress,
    Deviate,
    Return,
    StayPath,
}

impl ToyAction {
    /// Slot of the action within its state's two-way choice.
    pub fn slot(self) -> usize {
        match self {
            ToyAction::Progress | ToyAction::Return => 0,
            ToyAction::Deviate | ToyAction::StayPath => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyMdp {
    pub chain_length: usize,
    /// Probability that the other action of the pair is executed instead.
    pub noise: f64,
    pub recoverable: bool,
    pub goal_reward: f64,
    pub horizon: usize,
}

impl Default for ToyMdp {
    fn default() -> Self {
        Self {
            chain_length: 5,
            noise: 0.1,
            recoverable: true,
            goal_reward: 1.0,
            horizon: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTransition {
    pub state: ToyState,
    /// Action chosen by the agent (before noise).
    pub action: ToyAction,
    pub next_state: ToyState,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEpisode {
    pub steps: Vec<ToyTransition>,
}

impl ToyEpisode {
    pub fn reached_goal(&self) -> bool {
        self.steps.last().is_some_and(|t| t.next_state == ToyState::Goal)
    }
}

impl ToyMdp {
    pub fn start(&self) -> ToyState {
        ToyState::Bottom(0)
    }

    /// Number of non-terminal states; these index a tabular policy.
    pub fn num_states(&self) -> usize {
        2 * self.chain_length
    }

    pub fn state_index(&self, s: ToyState) -> Option<usize> {
        match s {
            ToyState::Bottom(i) => Some(i),
            ToyState::Top(i) => Some(self.chain_length + i),
            ToyState::Goal | ToyState::Failure => None,
        }
    }

    pub fn action_for_slot(&self, s: ToyState, slot: usize) -> ToyAction {
        match (s, slot) {
            (ToyState::Bottom(_), 0) => ToyAction::Progress,
            (ToyState::Bottom(_), _) => ToyAction::Deviate,
            (_, 0) => ToyAction::Return,
            _ => ToyAction::StayPath,
        }
    }

    fn check(&self, s: ToyState, a: ToyAction) -> Result<()> {
        let ok = match s {
            ToyState::Bottom(i) => {
                i < self.chain_length && matches!(a, ToyAction::Progress | ToyAction::Deviate)
            }
            ToyState::Top(i) => {
                i < self.chain_length && matches!(a, ToyAction::Return | ToyAction::StayPath)
            }
            ToyState::Goal | ToyState::Failure => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidAction {
                state: format!("{s:?}"),
                action: format!("{a:?}"),
            })
        }
    }

    /// Deterministic successor of an executed action.
    pub fn successor(&self, s: ToyState, executed: ToyAction) -> Result<ToyState> {
        self.check(s, executed)?;
        let last = self.chain_length - 1;
        Ok(match (s, executed) {
            (ToyState::Bottom(i), ToyAction::Progress) if i == last => ToyState::Goal,
            (ToyState::Bottom(i), ToyAction::Progress) => ToyState::Bottom(i + 1),
            (ToyState::Bottom(i), ToyAction::Deviate) => ToyState::Top(i),
            (ToyState::Top(i), ToyAction::Return) if self.recoverable => ToyState::Bottom(i),
            (ToyState::Top(i), _) if i == last => ToyState::Failure,
            (ToyState::Top(i), _) => ToyState::Top(i + 1),
            _ => unreachable!("checked above"),
        })
    }

    fn flip(a: ToyAction) -> ToyAction {
        match a {
            ToyAction::Progress => ToyAction::Deviate,
            ToyAction::Deviate => ToyAction::Progress,
            ToyAction::Return => ToyAction::StayPath,
            ToyAction::StayPath => ToyAction::Return,
        }
    }

    /// One noisy step. Reward is paid on entering the goal.
    pub fn step(&self, s: ToyState, a: ToyAction, rng: &mut Rng) -> Result<ToyTransition> {
        self.check(s, a)?;
        let executed = if rng.random::<f64>() < self.noise {
            Self::flip(a)
        } else {
            a
        };
        let next_state = self.successor(s, executed)?;
        Ok(ToyTransition {
            state: s,
            action: a,
            next_state,
            reward: if next_state == ToyState::Goal {
                self.goal_reward
            } else {
                0.0
            },
            terminal: next_state.is_terminal(),
        })
    }

    /// Runs one episode with `policy` choosing a slot per state.
    pub fn rollout(
        &self,
        rng: &mut Rng,
        mut policy: impl FnMut(ToyState, &mut Rng) -> usize,
    ) -> Result<ToyEpisode> {
        let mut s = self.start();
        let mut steps = Vec::new();
        for _ in 0..self.horizon {
            let slot = policy(s, rng);
            let t = self.step(s, self.action_for_slot(s, slot), rng)?;
            steps.push(t);
            s = t.next_state;
            if t.terminal {
                break;
            }
        }
        Ok(ToyEpisode { steps })
    }

    /// The expert always picks `Progress`.
    pub fn expert_slot(&self, _s: ToyState) -> usize {
        0
    }

    pub fn validate(&self) -> Result<()> {
        if self.chain_length == 0 {
            return Err(Error::Config("toy chain_length must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::Config(format!("toy noise {} not in [0, 0.5)", self.noise)));
        }
        if self.goal_reward <= 0.0 || self.horizon == 0 {
            return Err(Error::Config("toy goal_reward and horizon must be positive".into()));
        }
        Ok(())
    }

    /// Expert episodes, generated with the noise switched off so they never
    /// leave the bottom chain.
    pub fn demonstrations(&self, count: usize, rng: &mut Rng) -> Result<Vec<ToyEpisode>> {
        self.validate()?;
        if count == 0 {
            return Err(Error::Config("demonstration count must be at least 1".into()));
        }
        let clean = ToyMdp { noise: 0.0, ..*self };
        (0..count)
            .map(|_| clean.rollout(rng, |s, _| clean.expert_slot(s)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn demonstrations_are_clean_progress_runs() {
        let mdp = ToyMdp::default();
        let demos = mdp.demonstrations(50, &mut stream(0, "t")).unwrap();
        for d in &demos {
            assert!(d.reached_goal());
            assert_eq!(d.steps.len(), 5);
            assert!(d.steps.iter().all(|t| t.action == ToyAction::Progress));
            assert!(d
                .steps
                .iter()
                .all(|t| !matches!(t.next_state, ToyState::Top(_)) && !matches!(t.state, ToyState::Top(_))));
            assert_eq!(d.steps.iter().map(|t| t.reward).sum::<f64>(), 1.0);
            assert_eq!(d, &demos[0]);
        }
        assert!(mdp.demonstrations(0, &mut stream(0, "t")).is_err());
        assert!(ToyMdp { noise: 0.5, ..mdp }.validate().is_err());
    }

    #[test]
    fn dynamics_table() {
        let rec = ToyMdp::default();
        let non = ToyMdp {
            recoverable: false,
            ..rec
        };
        use ToyAction::*;
        use ToyState::*;
        assert_eq!(rec.successor(Bottom(2), Deviate).unwrap(), Top(2));
        assert_eq!(rec.successor(Top(2), Return).unwrap(), Bottom(2));
        assert_eq!(non.successor(Top(2), Return).unwrap(), Top(3));
        assert_eq!(rec.successor(Top(4), StayPath).unwrap(), Failure);
        assert_eq!(rec.successor(Bottom(4), Progress).unwrap(), Goal);
        assert!(rec.successor(Bottom(0), Return).is_err());
        assert!(rec.successor(Top(0), Progress).is_err());
        assert!(rec.successor(Goal, Progress).is_err());
    }

    #[test]
    fn noise_rate_is_respected() {
        let mdp = ToyMdp::default();
        let mut rng = stream(3, "noise");
        let n = 100_000;
        let flips = (0..n)
            .filter(|_| {
                mdp.step(ToyState::Bottom(0), ToyAction::Progress, &mut rng)
                    .unwrap()
                    .next_state
                    != ToyState::Bottom(1)
            })
            .count();
        let p = flips as f64 / n as f64;
        let sd = (0.1 * 0.9 / n as f64).sqrt();
        assert!((p - 0.1).abs() < 3.0 * sd && (p - 0.1).abs() < 0.01, "{p}");
    }

    #[test]
    fn non_recoverable_top_never_reaches_bottom() {
        let mdp = ToyMdp {
            recoverable: false,
            ..Default::default()
        };
        let mut rng = stream(1, "walk");
        for i in 0..5 {
            let mut s = ToyState::Top(i);
            while !s.is_terminal() {
                let slot = usize::from(rng.random::<bool>());
                s = mdp
                    .step(s, mdp.action_for_slot(s, slot), &mut rng)
                    .unwrap()
                    .next_state;
                assert!(!matches!(s, ToyState::Bottom(_) | ToyState::Goal));
            }
        }
    }
}
