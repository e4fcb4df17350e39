//! Planar point-reach task with the scene's reward shape, for checking the
//! learner on something cheap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::endoscope::ACTION_LIMIT;
use crate::env::{reward, EnvError, Environment, Transition};

/// Damped double integrator: `v <- drag v + a`, `p <- p + v`.
#[derive(Debug, Clone)]
pub struct PointReach {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub target: [f64; 2],
    pub steps: usize,
    pub max_steps: usize,
    pub success_radius: f64,
    /// Leaving `|x| <= arena` or `|y| <= arena` ends the episode with the
    /// boundary penalty.
    pub arena: f64,
    pub drag: f64,
    done: bool,
}

impl Default for PointReach {
    fn default() -> Self {
        Self {
            pos: [0.0; 2],
            vel: [0.0; 2],
            target: [0.0; 2],
            steps: 0,
            max_steps: 128,
            success_radius: 1.0,
            arena: 12.0,
            drag: 0.8,
            done: true,
        }
    }
}

impl PointReach {
    fn obs(&self) -> Vec<f64> {
        vec![self.target[0] - self.pos[0], self.target[1] - self.pos[1], self.vel[0], self.vel[1]]
    }

    fn distance(&self) -> f64 {
        (self.target[0] - self.pos[0]).hypot(self.target[1] - self.pos[1])
    }
}

impl Environment for PointReach {
    fn obs_dim(&self) -> usize {
        4
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: f64 = rng.random_range(3.0..8.0);
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        self.target = [r * a.cos(), r * a.sin()];
        self.pos = [0.0; 2];
        self.vel = [0.0; 2];
        self.steps = 0;
        self.done = false;
        Ok(self.obs())
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        if self.done {
            return Err(EnvError::Usage("step called on a finished episode".into()));
        }
        if action.len() != 2 {
            return Err(EnvError::Usage(format!("action must have 2 components, got {}", action.len())));
        }
        for k in 0..2 {
            let a = if action[k].is_nan() { 0.0 } else { action[k].clamp(-ACTION_LIMIT, ACTION_LIMIT) };
            self.vel[k] = self.drag * self.vel[k] + a;
            self.pos[k] += self.vel[k];
        }
        self.steps += 1;
        let d = self.distance();
        // the boundary test is on |x| and |y|; map it onto the one-sided form
        let margin = self.arena - self.pos[0].abs().max(self.pos[1].abs());
        let (r, success, _) = reward(d, margin, 0.0, self.success_radius);
        let terminated = success || margin < 0.0;
        let truncated = !terminated && self.steps >= self.max_steps;
        self.done = terminated || truncated;
        Ok(Transition {
            obs: self.obs(),
            reward: r,
            terminated,
            truncated,
            success,
        })
    }
}
