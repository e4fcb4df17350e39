//! Evaluation and ablation: success rate and average error over seeded
//! trials, the policy-by-environment grid, episode logs, replay, the
//! force-versus-distance profile, exports and plots.

pub mod export;
pub mod plot;
pub mod profile;

use serde::{Deserialize, Serialize};

use crate::endoscope::ACTION_LIMIT;
use crate::env::{self, make_variant, EnvError, Observation, Scene, SceneConfig, SceneGeometry, Variant};
use crate::mesh::Vec3;
use crate::ppo::{eval_seed, Agent, PpoError};

pub const EVAL_MAX_STEPS: usize = 80;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PpoError),
    #[error("{0}")]
    Usage(String),
    #[error("empty profile: {0}")]
    EmptyProfile(String),
    #[error("i/o error at {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
}

/// Policy families by training environment and sensing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyId {
    A,
    B,
    C,
    D,
    E,
}

impl PolicyId {
    pub const ALL: [PolicyId; 5] = [PolicyId::A, PolicyId::B, PolicyId::C, PolicyId::D, PolicyId::E];

    /// Training environment and whether force/contact are observed.
    pub fn training(&self) -> (Variant, bool) {
        match self {
            PolicyId::A => (Variant::Fe, false),
            PolicyId::B => (Variant::Se, false),
            PolicyId::C => (Variant::Se, true),
            PolicyId::D => (Variant::De, false),
            PolicyId::E => (Variant::De, true),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyId::A => "A",
            PolicyId::B => "B",
            PolicyId::C => "C",
            PolicyId::D => "D",
            PolicyId::E => "E",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }

    /// Scene configuration this policy trains in.
    pub fn training_config(&self, base: &SceneConfig) -> SceneConfig {
        let (variant, force) = self.training();
        let mut c = make_variant(base, variant);
        c.force_observation = force;
        c
    }

    /// Scene configuration for evaluating this policy in `variant`: the
    /// policy keeps its own sensing.
    pub fn eval_config(&self, base: &SceneConfig, variant: Variant, max_steps: usize) -> SceneConfig {
        let mut c = make_variant(base, variant);
        c.force_observation = self.training().1;
        c.max_steps = max_steps;
        c
    }
}

/// Anything that maps the current observation (and, for scripted
/// baselines, the scene) to an action.
pub trait Controller {
    fn action(&mut self, obs: &Observation, scene: &Scene) -> Result<Vec<f64>, EvalError>;
}

impl Controller for Agent {
    fn action(&mut self, obs: &Observation, _scene: &Scene) -> Result<Vec<f64>, EvalError> {
        Ok(self.act(&obs.to_vec())?)
    }
}

/// Null policy: never moves.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Controller for ZeroPolicy {
    fn action(&mut self, _obs: &Observation, _scene: &Scene) -> Result<Vec<f64>, EvalError> {
        Ok(vec![0.0; env::ACT_DIM])
    }
}

/// Scripted baseline with privileged geometry: solves the
/// constant-curvature inverse for the current target and moves cables and
/// insertion toward it at full rate.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedReach;

impl Controller for ScriptedReach {
    fn action(&mut self, _obs: &Observation, scene: &Scene) -> Result<Vec<f64>, EvalError> {
        let c = &scene.config;
        let target = scene.target_position();
        let x0 = c.tip_start_x - c.insertion_start + scene.act.insertion - c.endoscope.active_length;
        let travel = (c.insertion_max - scene.act.insertion).max(0.0);
        let (adv, theta, phi, _) = env::cc_inverse(&target, x0, travel, c.endoscope.active_length);
        let want = env::cables_for_bend(theta, phi, c.endoscope.cable_moment_arm);
        let mut a: Vec<f64> = (0..4).map(|i| (want[i] - scene.act.cables[i]).clamp(-ACTION_LIMIT, ACTION_LIMIT)).collect();
        a.push(adv.clamp(-ACTION_LIMIT, ACTION_LIMIT));
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Boundary,
    Timeout,
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Boundary => "boundary",
            Outcome::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Outcome::Success, Outcome::Boundary, Outcome::Timeout].into_iter().find(|o| o.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub ee: [f64; 3],
    pub target: [f64; 3],
    pub distance: f64,
    pub force: [f64; 3],
    pub contact: bool,
    pub action: [f64; 5],
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub policy: String,
    pub variant: Variant,
    pub trial: usize,
    pub seed: u64,
    pub initial_distance: f64,
    pub records: Vec<StepRecord>,
    pub outcome: Outcome,
    pub first_contact: Option<usize>,
}

impl EpisodeLog {
    pub fn final_distance(&self) -> f64 {
        self.records.last().map_or(self.initial_distance, |r| r.distance)
    }

    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub variant: Variant,
    pub trials: usize,
    pub successes: usize,
    /// Percent of trials ending in success.
    pub sr: f64,
    /// Mean final error over successful trials; `None` without any.
    pub ae: Option<f64>,
    /// Mean final error over all trials.
    pub ae_all: f64,
    pub final_errors: Vec<f64>,
    pub outcomes: Vec<Outcome>,
}

impl EvalReport {
    pub fn from_logs(policy: &str, variant: Variant, logs: &[EpisodeLog]) -> Self {
        let trials = logs.len();
        let final_errors: Vec<f64> = logs.iter().map(|l| l.final_distance()).collect();
        let outcomes: Vec<Outcome> = logs.iter().map(|l| l.outcome).collect();
        let ok: Vec<f64> = logs.iter().filter(|l| l.success()).map(|l| l.final_distance()).collect();
        let successes = ok.len();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Self {
            policy: policy.to_string(),
            variant,
            trials,
            successes,
            sr: 100.0 * successes as f64 / trials.max(1) as f64,
            ae: mean(&ok),
            ae_all: mean(&final_errors).unwrap_or(f64::NAN),
            final_errors,
            outcomes,
        }
    }
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Runs one episode of at most `max_steps` steps from `seed`.
pub fn run_episode(
    controller: &mut dyn Controller,
    scene: &mut Scene,
    policy: &str,
    trial: usize,
    seed: u64,
    max_steps: usize,
) -> Result<EpisodeLog, EvalError> {
    scene.config.max_steps = max_steps;
    let mut obs = scene.reset(seed)?;
    let initial_distance = obs.p.norm();
    let mut records = Vec::new();
    let mut first_contact = None;
    let outcome = loop {
        let a = controller.action(&obs, scene)?;
        let r = scene.step(&a)?;
        let mut action = [0.0; 5];
        for (dst, src) in action.iter_mut().zip(&a) {
            *dst = src.clamp(-ACTION_LIMIT, ACTION_LIMIT);
        }
        let contact = r.info.contact_count > 0;
        if contact && first_contact.is_none() {
            first_contact = Some(records.len());
        }
        records.push(StepRecord {
            step: records.len() + 1,
            ee: arr(&r.info.ee),
            target: arr(&r.info.target),
            distance: r.info.distance,
            force: arr(&r.info.force),
            contact,
            action,
            reward: r.reward,
        });
        obs = r.observation;
        if r.terminated {
            break if r.info.success { Outcome::Success } else { Outcome::Boundary };
        }
        if r.truncated {
            break Outcome::Timeout;
        }
    };
    Ok(EpisodeLog {
        policy: policy.to_string(),
        variant: scene.variant(),
        trial,
        seed,
        initial_distance,
        records,
        outcome,
        first_contact,
    })
}

/// `n_trials` deterministic episodes with seeds `eval_seed(seed, k)`.
pub fn evaluate(
    controller: &mut dyn Controller,
    scene: &mut Scene,
    policy: &str,
    n_trials: usize,
    max_steps: usize,
    seed: u64,
) -> Result<(EvalReport, Vec<EpisodeLog>), EvalError> {
    if n_trials == 0 {
        return Err(EvalError::Usage("n_trials must be >= 1".into()));
    }
    let mut logs = Vec::with_capacity(n_trials);
    for k in 0..n_trials {
        logs.push(run_episode(controller, scene, policy, k, eval_seed(seed, k), max_steps)?);
    }
    Ok((EvalReport::from_logs(policy, scene.variant(), &logs), logs))
}

/// Re-executes a logged action sequence; returns the largest per-step
/// deviation of tip position or distance.
pub fn replay(log: &EpisodeLog, scene: &mut Scene) -> Result<f64, EvalError> {
    scene.config.max_steps = scene.config.max_steps.max(log.records.len());
    let obs = scene.reset(log.seed)?;
    let mut worst: f64 = (obs.p.norm() - log.initial_distance).abs();
    for rec in &log.records {
        let r = scene.step(&rec.action)?;
        let ee = Vec3::from(rec.ee);
        worst = worst.max((r.info.ee - ee).norm()).max((r.info.distance - rec.distance).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub policy: PolicyId,
    pub variant: Variant,
    /// `None` when the policy's checkpoint is absent.
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub policies: Vec<PolicyId>,
    pub variants: Vec<Variant>,
    pub cells: Vec<GridCell>,
    pub trials: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl ComparisonTable {
    pub fn cell(&self, policy: PolicyId, variant: Variant) -> Option<&EvalReport> {
        self.cells
            .iter()
            .find(|c| c.policy == policy && c.variant == variant)
            .and_then(|c| c.report.as_ref())
    }

    /// Rows are policies; each variant contributes an SR and an AE column.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Policy |");
        for v in &self.variants {
            s.push_str(&format!(" {n} SR (%) | {n} AE (mm) |", n = v.name()));
        }
        s.push_str("\n|---|");
        for _ in &self.variants {
            s.push_str("---|---|");
        }
        s.push('\n');
        for p in &self.policies {
            s.push_str(&format!("| {} |", p.name()));
            for v in &self.variants {
                match self.cell(*p, *v) {
                    Some(EvalReport { sr, ae: None, .. }) => s.push_str(&format!(" {sr:.1} | - |")),
                    Some(EvalReport { sr, ae: Some(ae), .. }) => s.push_str(&format!(" {sr:.1} | {ae:.2} |")),
                    None => s.push_str(" absent | absent |"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Evaluates every available policy in every variant with shared seeds.
/// Cells are independent and may run on the rayon pool; order is fixed by
/// `(policy, variant)`.
pub fn compare_policies(
    base: &SceneConfig,
    geometry: &SceneGeometry,
    policies: &[(PolicyId, Option<Agent>)],
    variants: &[Variant],
    n_trials: usize,
    max_steps: usize,
    seed: u64,
    parallel: bool,
) -> Result<(ComparisonTable, Vec<EpisodeLog>), EvalError> {
    let jobs: Vec<(PolicyId, Option<&Agent>, Variant)> = policies
        .iter()
        .flat_map(|(p, a)| variants.iter().map(move |v| (*p, a.as_ref(), *v)))
        .collect();
    let run = |(p, agent, v): &(PolicyId, Option<&Agent>, Variant)| -> Result<(GridCell, Vec<EpisodeLog>), EvalError> {
        let Some(agent) = agent else {
            return Ok((
                GridCell {
                    policy: *p,
                    variant: *v,
                    report: None,
                },
                Vec::new(),
            ));
        };
        let mut scene = Scene::with_geometry(p.eval_config(base, *v, max_steps), geometry.clone())?;
        let mut ctl = (*agent).clone();
        let (report, logs) = evaluate(&mut ctl, &mut scene, p.name(), n_trials, max_steps, seed)?;
        Ok((
            GridCell {
                policy: *p,
                variant: *v,
                report: Some(report),
            },
            logs,
        ))
    };
    let results: Vec<Result<(GridCell, Vec<EpisodeLog>), EvalError>> = if parallel {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };
    let mut cells = Vec::new();
    let mut logs = Vec::new();
    for r in results {
        let (c, l) = r?;
        cells.push(c);
        logs.extend(l);
    }
    Ok((
        ComparisonTable {
            policies: policies.iter().map(|p| p.0).collect(),
            variants: variants.to_vec(),
            cells,
            trials: n_trials,
            max_steps,
            seed,
        },
        logs,
    ))
}
