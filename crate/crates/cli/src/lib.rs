//! Reproducible runs over the navigation stack: scene generation, training,
//! evaluation, the policy comparison grid, replay and plotting.
//!
//! Every command writes a `manifest.json` next to its outputs recording the
//! config hash and seed it ran with.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use endonav_core::env::{EnvError, Scene, SceneConfig, SceneGeometry, Variant};
use endonav_core::evalsuite::export::{self, Format};
use endonav_core::evalsuite::{self, plot, profile, ComparisonTable, EpisodeLog, EvalError, EvalReport, PolicyId};
use endonav_core::mesh::write_msh;
use endonav_core::ppo::checkpoint::{self, Checkpoint};
use endonav_core::ppo::{self, CurvePoint, PpoError, TrainConfig, TrainOptions, TrainState};

pub const ARTIFACT_VERSION: &str = concat!("endonav ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";
/// Largest per-step deviation accepted by `replay`.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("version mismatch: {0}")]
    Version(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Version(_) => 4,
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PpoError> for CliError {
    fn from(e: PpoError) -> Self {
        match e {
            PpoError::Env(e) => e.into(),
            PpoError::Usage(_) | PpoError::ConfigMismatch { .. } => CliError::Config(e.to_string()),
            PpoError::Version { .. } | PpoError::Checkpoint(_) => CliError::Version(e.to_string()),
            PpoError::NonFinite { .. } | PpoError::Io { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Env(e) => e.into(),
            EvalError::Policy(e) => e.into(),
            EvalError::Usage(_) | EvalError::Parse(_) => CliError::Config(e.to_string()),
            EvalError::EmptyProfile(_) | EvalError::Io { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "endonav", version, about = "Contact-aided endoscope navigation in a deformable cavity")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed for every sub-system.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Evaluation trials per cell.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Evaluation step limit.
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    /// Policy: A (FE), B (SE), C (SE + force), D (DE), E (DE + force).
    #[arg(long, global = true, value_parser = parse_policy)]
    pub variant: Option<PolicyId>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "ENDONAV_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Checkpoint to resume training from.
    #[arg(long, global = true)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the cavity and write the mesh plus the fully resolved config.
    GenScene,
    /// Train one policy.
    Train {
        /// Stop after this many updates in total (a later `--resume` continues).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Evaluate one checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Environments, comma separated (defaults to the policy's own).
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        env: Vec<Variant>,
    },
    /// Policy-by-environment grid of SR and AE.
    Compare {
        /// Directory holding `<policy>/final.bin` or `<policy>.bin`.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
        policies: Vec<PolicyId>,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        env: Vec<Variant>,
    },
    /// Re-execute logged episodes and check they reproduce.
    Replay {
        /// Episode log (`.csv` or `.jsonl`).
        #[arg(long)]
        log: PathBuf,
    },
    /// Render learning curves, SR bars and the force-distance profile.
    Plot {
        /// Learning-curve CSV files; the label is the parent directory name.
        #[arg(long)]
        curve: Vec<PathBuf>,
        /// `table.json` written by `compare`.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Episode logs for the force-distance profile.
        #[arg(long)]
        logs: Option<PathBuf>,
    },
}

fn parse_policy(s: &str) -> Result<PolicyId, String> {
    PolicyId::parse(s).ok_or_else(|| format!("unknown policy `{s}` (expected A-E)"))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown environment `{s}` (expected FE, SE, DE, UE1, UE2)"))
}

fn default_envs() -> Vec<Variant> {
    vec![Variant::Se, Variant::De, Variant::Ue1, Variant::Ue2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub trials: usize,
    pub max_steps: usize,
    pub envs: Vec<Variant>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            trials: 40,
            max_steps: evalsuite::EVAL_MAX_STEPS,
            envs: default_envs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    /// Periodic checkpoint interval in updates; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { checkpoint_every: 10 }
    }
}

/// Everything a run depends on. `seed`, when set, replaces the scene and
/// training seeds; sub-systems draw from named streams of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "SceneConfig::standard")]
    pub scene: SceneConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            scene: SceneConfig::standard(),
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
            output: OutputSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let c: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scene.validate()?;
        self.train.validate()?;
        if self.eval.trials == 0 || self.eval.max_steps == 0 {
            return Err(CliError::Config("eval: trials and max_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Loads the file (or defaults) and applies command-line overrides.
    pub fn load(common: &Common) -> Result<Self, CliError> {
        let mut c = match &common.config {
            Some(p) => Self::from_toml(&fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)?,
            None => Self::default(),
        };
        if let Some(s) = common.seed {
            c.seed = Some(s);
        }
        if let Some(s) = c.seed {
            c.scene.seed = s;
            c.train.seed = s;
        }
        if let Some(t) = common.trials {
            c.eval.trials = t;
        }
        if let Some(m) = common.max_steps {
            c.eval.max_steps = m;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn eval_seed(&self) -> u64 {
        self.seed.unwrap_or(self.scene.seed)
    }

    /// SHA-256 over the canonical TOML of the resolved config.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    /// Hash bound into training checkpoints: the config plus the policy.
    pub fn train_hash(&self, policy: PolicyId) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        h.update(b"\npolicy=");
        h.update(policy.name().as_bytes());
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub seed: u64,
    pub artifact_version: String,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub parameters: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Collects outputs and writes the manifest at the end of a command.
pub struct Run {
    pub out: PathBuf,
    pub config: RunConfig,
    manifest: RunManifest,
}

impl Run {
    fn start(command: &str, common: &Common) -> Result<Self, CliError> {
        let config = RunConfig::load(common)?;
        fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;
        Ok(Self {
            out: common.out.clone(),
            manifest: RunManifest {
                command: command.to_string(),
                config_path: common.config.clone(),
                config_hash: checkpoint::hex(&config.hash()),
                seed: config.eval_seed(),
                artifact_version: ARTIFACT_VERSION.to_string(),
                started_unix_s: now(),
                finished_unix_s: 0,
                parameters: BTreeMap::new(),
                outputs: Vec::new(),
            },
            config,
        })
    }

    fn param(&mut self, k: &str, v: impl ToString) {
        self.manifest.parameters.insert(k.to_string(), v.to_string());
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.record(path.clone());
        Ok(path)
    }

    fn record(&mut self, path: PathBuf) {
        if !self.manifest.outputs.contains(&path) {
            self.manifest.outputs.push(path);
        }
    }

    /// Writes the manifest through a temporary file and a rename.
    fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.finished_unix_s = now();
        let path = self.out.join(MANIFEST_FILE);
        let tmp = self.out.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(self.manifest)
    }
}

fn init_threads(n: usize) {
    // the global pool can be built once per process; later calls keep it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
}

pub fn run(cli: &Cli) -> Result<RunManifest, CliError> {
    init_threads(cli.common.threads);
    let c = &cli.common;
    match &cli.command {
        Command::GenScene => gen_scene(c),
        Command::Train { stop_after } => train(c, *stop_after),
        Command::Eval { checkpoint, env } => eval(c, checkpoint, env),
        Command::Compare { checkpoints, policies, env } => compare(c, checkpoints, policies, env),
        Command::Replay { log } => replay(c, log),
        Command::Plot { curve, table, logs } => plot_cmd(c, curve, table.as_deref(), logs.as_deref()),
    }
}

pub fn gen_scene(common: &Common) -> Result<RunManifest, CliError> {
    let mut run = Run::start("gen-scene", common)?;
    let geo = SceneGeometry::build(&run.config.scene)?;
    let mut resolved = run.config.clone();
    resolved.scene.fixed_indices = Some(geo.fixed.clone());
    resolved.scene.force_indices = Some(geo.force_nodes.to_vec());
    run.write("scene.msh", write_msh(&geo.mesh))?;
    run.write("scene.toml", resolved.to_toml())?;
    run.param("nodes", geo.mesh.vertices.len());
    run.param("tets", geo.mesh.tets.len());
    run.param("wall_targets_a", geo.targets.wall_a.len());
    run.param("wall_targets_b", geo.targets.wall_b.len());
    run.param("entry_x", geo.entry_x);
    run.finish()
}

fn require_policy(common: &Common) -> Result<PolicyId, CliError> {
    common.variant.ok_or_else(|| CliError::Config("--variant <A|B|C|D|E> is required".into()))
}

pub fn train(common: &Common, stop_after: Option<usize>) -> Result<RunManifest, CliError> {
    let policy = require_policy(common)?;
    let mut run = Run::start("train", common)?;
    let cfg = run.config.clone();
    let hash = cfg.train_hash(policy);
    run.param("policy", policy.name());
    run.param("train_hash", checkpoint::hex(&hash));
    let state = match &common.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_hash(&hash)?;
            run.param("resumed_from", path.display());
            Some(ck.state)
        }
        None => None,
    };
    let geo = SceneGeometry::build(&cfg.scene)?;
    let scene_cfg = policy.training_config(&cfg.scene);
    let every = cfg.output.checkpoint_every;
    let out = run.out.clone();
    let mut saved = Vec::new();
    let mut on_update = |st: &TrainState| -> Result<(), PpoError> {
        if every > 0 && st.update % every == 0 {
            let path = out.join(format!("checkpoint_{:05}.bin", st.update));
            Checkpoint {
                config_hash: hash,
                seed: cfg.train.seed,
                state: st.clone(),
            }
            .save(&path)?;
            saved.push(path);
        }
        Ok(())
    };
    let st = ppo::train(
        |_| Scene::with_geometry(scene_cfg.clone(), geo.clone()),
        &cfg.train,
        state,
        TrainOptions {
            on_update: Some(&mut on_update),
            stop_after,
            parallel: common.threads > 1,
        },
    )?;
    for p in saved {
        run.record(p);
    }
    let ck = Checkpoint {
        config_hash: hash,
        seed: cfg.train.seed,
        state: st.clone(),
    };
    let name = if st.update >= cfg.train.total_updates() {
        "final.bin".to_string()
    } else {
        format!("checkpoint_{:05}.bin", st.update)
    };
    let path = run.out.join(&name);
    ck.save(&path)?;
    run.record(path);
    run.write("curve.csv", ppo::curve_csv(&st.curve))?;
    run.param("updates", st.update);
    run.param("timesteps", st.timestep);
    run.finish()
}

fn load_agent(path: &Path) -> Result<(ppo::Agent, String), CliError> {
    let ck = Checkpoint::load(path)?;
    Ok((ck.state.agent, checkpoint::hex(&ck.config_hash)))
}

fn write_logs(run: &mut Run, logs: &[EpisodeLog]) -> Result<(), CliError> {
    let csv = run.out.join("logs.csv");
    export::export_logs(logs, &csv, Format::Csv)?;
    run.record(csv);
    let jsonl = run.out.join("logs.jsonl");
    export::export_logs(logs, &jsonl, Format::JsonLines)?;
    run.record(jsonl);
    Ok(())
}

pub fn eval(common: &Common, checkpoint: &Path, envs: &[Variant]) -> Result<RunManifest, CliError> {
    let policy = require_policy(common)?;
    let mut run = Run::start("eval", common)?;
    let (agent, ck_hash) = load_agent(checkpoint)?;
    let envs = if envs.is_empty() { vec![policy.training().0] } else { envs.to_vec() };
    let (trials, max_steps, seed) = (run.config.eval.trials, run.config.eval.max_steps, run.config.eval_seed());
    run.param("policy", policy.name());
    run.param("checkpoint", checkpoint.display());
    run.param("checkpoint_hash", ck_hash);
    run.param("trials", trials);
    run.param("max_steps", max_steps);
    run.param("envs", envs.iter().map(|v| v.name()).collect::<Vec<_>>().join(","));
    let geo = SceneGeometry::build(&run.config.scene)?;
    let mut reports = Vec::new();
    let mut all_logs = Vec::new();
    for v in envs {
        let mut scene = Scene::with_geometry(policy.eval_config(&run.config.scene, v, max_steps), geo.clone())?;
        let (rep, logs) = evalsuite::evaluate(&mut agent.clone(), &mut scene, policy.name(), trials, max_steps, seed)?;
        println!("{} in {}: SR {:.1}% AE {}", policy.name(), v.name(), rep.sr, fmt_ae(&rep));
        reports.push(rep);
        all_logs.extend(logs);
    }
    run.write("report.json", serde_json::to_string_pretty(&reports).expect("reports serialize"))?;
    run.write("report.csv", export::reports_to_csv(&reports))?;
    write_logs(&mut run, &all_logs)?;
    run.finish()
}

fn fmt_ae(r: &EvalReport) -> String {
    r.ae.map_or("-".into(), |a| format!("{a:.2} mm"))
}

fn find_checkpoint(dir: &Path, p: PolicyId) -> Option<PathBuf> {
    [dir.join(p.name()).join("final.bin"), dir.join(format!("{}.bin", p.name()))]
        .into_iter()
        .find(|c| c.is_file())
}

pub fn compare(common: &Common, dir: &Path, policies: &[PolicyId], envs: &[Variant]) -> Result<RunManifest, CliError> {
    let mut run = Run::start("compare", common)?;
    let policies = if policies.is_empty() { PolicyId::ALL.to_vec() } else { policies.to_vec() };
    let envs = if envs.is_empty() { run.config.eval.envs.clone() } else { envs.to_vec() };
    let mut agents = Vec::new();
    for p in &policies {
        match find_checkpoint(dir, *p) {
            Some(path) => {
                let (agent, h) = load_agent(&path)?;
                run.param(&format!("checkpoint_{}", p.name()), format!("{} ({h})", path.display()));
                agents.push((*p, Some(agent)));
            }
            None => {
                log::warn!("no checkpoint for policy {} under {}; listed as absent", p.name(), dir.display());
                run.param(&format!("checkpoint_{}", p.name()), "absent");
                agents.push((*p, None));
            }
        }
    }
    let (trials, max_steps, seed) = (run.config.eval.trials, run.config.eval.max_steps, run.config.eval_seed());
    run.param("trials", trials);
    run.param("max_steps", max_steps);
    let geo = SceneGeometry::build(&run.config.scene)?;
    let (table, logs) =
        evalsuite::compare_policies(&run.config.scene, &geo, &agents, &envs, trials, max_steps, seed, common.threads > 1)?;
    let md = table.to_markdown();
    print!("{md}");
    run.write("table.md", md)?;
    run.write("table.json", serde_json::to_string_pretty(&table).expect("table serializes"))?;
    let reports: Vec<EvalReport> = table.cells.iter().filter_map(|c| c.report.clone()).collect();
    run.write("reports.csv", export::reports_to_csv(&reports))?;
    write_logs(&mut run, &logs)?;
    if let Some(svg) = plot::sr_bars(&table) {
        run.write("sr.svg", svg)?;
    }
    run.finish()
}

fn read_logs(path: &Path) -> Result<Vec<EpisodeLog>, CliError> {
    let fmt = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Format::Csv,
        _ => Format::JsonLines,
    };
    Ok(export::import_logs(path, fmt)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResult {
    pub policy: String,
    pub variant: Variant,
    pub trial: usize,
    pub steps: usize,
    pub max_divergence: f64,
}

pub fn replay(common: &Common, log_path: &Path) -> Result<RunManifest, CliError> {
    let mut run = Run::start("replay", common)?;
    let logs = read_logs(log_path)?;
    run.param("log", log_path.display());
    let geo = SceneGeometry::build(&run.config.scene)?;
    let mut results = Vec::new();
    for l in &logs {
        let mut cfg = endonav_core::env::make_variant(&run.config.scene, l.variant);
        cfg.max_steps = l.records.len();
        let mut scene = Scene::with_geometry(cfg, geo.clone())?;
        let d = evalsuite::replay(l, &mut scene)?;
        results.push(ReplayResult {
            policy: l.policy.clone(),
            variant: l.variant,
            trial: l.trial,
            steps: l.records.len(),
            max_divergence: d,
        });
    }
    let worst = results.iter().map(|r| r.max_divergence).fold(0.0, f64::max);
    println!("replayed {} episodes, max divergence {worst:e}", results.len());
    run.param("episodes", results.len());
    run.param("max_divergence", worst);
    run.write("replay.json", serde_json::to_string_pretty(&results).expect("results serialize"))?;
    let manifest = run.finish()?;
    if worst > REPLAY_TOLERANCE {
        return Err(CliError::Runtime(format!("replay diverged by {worst:e} (tolerance {REPLAY_TOLERANCE:e})")));
    }
    Ok(manifest)
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .collect::<Result<Vec<CurvePoint>, _>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn plot_cmd(common: &Common, curves: &[PathBuf], table: Option<&Path>, logs: Option<&Path>) -> Result<RunManifest, CliError> {
    let mut run = Run::start("plot", common)?;
    if curves.is_empty() && table.is_none() && logs.is_none() {
        return Err(CliError::Config("plot needs --curve, --table or --logs".into()));
    }
    if !curves.is_empty() {
        let mut series = Vec::new();
        for p in curves {
            let label = p
                .parent()
                .and_then(|d| d.file_name())
                .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            series.push((label, read_curve(p)?));
        }
        let path = run.out.join("curve.svg");
        if plot::write_plot(plot::curve_plot("Training curves", &series), &path)? {
            run.record(path);
        }
    }
    if let Some(t) = table {
        let text = fs::read_to_string(t).map_err(io_err(t))?;
        let table: ComparisonTable = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", t.display())))?;
        let path = run.out.join("sr.svg");
        if plot::write_plot(plot::sr_bars(&table), &path)? {
            run.record(path);
        }
    }
    if let Some(l) = logs {
        let prof = profile::force_distance_profile(&read_logs(l)?)?;
        println!(
            "profile over {} trajectories ({} without contact skipped): rank correlation {:.3}",
            prof.trajectories.len(),
            prof.skipped_no_force,
            prof.correlation
        );
        run.param("correlation", prof.correlation);
        run.write("profile.json", serde_json::to_string_pretty(&prof).expect("profile serializes"))?;
        let path = run.out.join("profile.svg");
        if plot::write_plot(plot::profile_plot(&prof), &path)? {
            run.record(path);
        }
    }
    run.finish()
}
