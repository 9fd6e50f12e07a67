//! Experiment orchestration: JSON-loadable configs, seeded (agent × seed)
//! cell execution, per-cell CSV and JSONL emission, aggregate summaries, and
//! a closed-form reference regret curve for plots.
//!
//! One config describes one experiment: a synthetic-environment recipe, a
//! seed list, and a list of learner cells. Every cell at the same seed runs
//! on the *same* synthesized instance and consumes the same environment
//! noise stream, so learner columns are pathwise comparable. All randomness
//! descends from the cell seed; outputs are reproducible byte-for-byte
//! except for the wall-clock column.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{run_agent, run_random_baseline, AgentConfig, AgentMode, RunRecord};
use crate::env::{self, MdpSpec, NoiseSpec, SyntheticMdp};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::planner::{uniform_action_grid, GridPolicy, PlannerConfig};

/// Environment recipe: everything instance synthesis needs except the seed
/// and the episode budget. The default is the desk-scale benchmark instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    /// Size of the uniform 1-D action grid; ignored when `action_grid` is
    /// given explicitly.
    pub action_count: usize,
    /// Explicit action grid, required when `action_dim > 1`.
    pub action_grid: Option<Vec<Vec<f64>>>,
    pub initial_state: Vec<f64>,
    pub kernel_r: KernelSpec,
    pub kernel_p: KernelSpec,
    pub norm_cap_r: f64,
    pub norm_cap_p: f64,
    /// Expansion centers drawn per channel during synthesis.
    pub centers: usize,
    pub noise: NoiseSpec,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            state_dim: 1,
            action_dim: 1,
            horizon: 5,
            action_count: 11,
            action_grid: None,
            initial_state: vec![0.5],
            kernel_r: env::default_kernel(),
            kernel_p: env::default_kernel(),
            norm_cap_r: env::DEFAULT_NORM_CAP,
            norm_cap_p: env::DEFAULT_NORM_CAP,
            centers: env::GENERATOR_CENTERS,
            noise: env::default_noise(),
        }
    }
}

impl EnvConfig {
    /// Assemble the instance skeleton for a given episode budget.
    pub fn mdp_spec(&self, episode_count: usize) -> Result<MdpSpec> {
        let action_grid = match &self.action_grid {
            Some(grid) => grid.clone(),
            None if self.action_dim == 1 => uniform_action_grid(self.action_count)?,
            None => {
                return Err(Error::Input(
                    "multi-dimensional actions need an explicit action_grid".into(),
                ))
            }
        };
        let spec = MdpSpec {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            horizon: self.horizon,
            episode_count,
            action_grid,
            initial_state: self.initial_state.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.mdp_spec(1)?;
        let dim = spec.joint_dim();
        self.kernel_r.validate(dim)?;
        self.kernel_p.validate(dim)?;
        if self.centers == 0 {
            return Err(Error::Input("need at least one expansion center".into()));
        }
        Ok(())
    }

    /// Draw the instance for one seed. The synthesis stream and the
    /// in-episode noise stream both descend from the same seed, so a cell is
    /// fully determined by `(config, seed)`.
    pub fn synthesize(
        &self,
        episode_count: usize,
        planner: &PlannerConfig,
        seed: u64,
    ) -> Result<SyntheticMdp> {
        let spec = self.mdp_spec(episode_count)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env::synthesize_mdp(
            &spec,
            &self.kernel_r,
            &self.kernel_p,
            self.norm_cap_r,
            self.norm_cap_p,
            self.centers,
            self.noise,
            planner,
            seed,
            &mut rng,
        )
    }
}

/// Which learner occupies a cell column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    UcrlNystrom,
    UcrlQff,
    Psrl,
    RandomBaseline,
}

impl CellKind {
    pub fn label(&self) -> &'static str {
        match self {
            CellKind::UcrlNystrom => AgentMode::UcrlNystrom.label(),
            CellKind::UcrlQff => AgentMode::UcrlQff.label(),
            CellKind::Psrl => AgentMode::Psrl.label(),
            CellKind::RandomBaseline => "uniform",
        }
    }
}

fn default_delta() -> f64 {
    0.1
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_slack() -> f64 {
    1.0
}

/// One learner column of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAgent {
    pub kind: CellKind,
    /// Optional label override; needed when the same kind appears twice with
    /// different knobs. Labels name the output files.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub qff_nodes: Option<usize>,
    #[serde(default = "default_slack")]
    pub slack_coeff: f64,
    #[serde(default)]
    pub force_generic: bool,
}

impl CellAgent {
    pub fn of(kind: CellKind) -> Self {
        Self {
            kind,
            name: None,
            delta: default_delta(),
            epsilon: default_epsilon(),
            qff_nodes: None,
            slack_coeff: default_slack(),
            force_generic: false,
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.label().to_string())
    }

    fn agent_config(&self, planner: PlannerConfig, seed: u64) -> Option<AgentConfig> {
        let mode = match self.kind {
            CellKind::UcrlNystrom => AgentMode::UcrlNystrom,
            CellKind::UcrlQff => AgentMode::UcrlQff,
            CellKind::Psrl => AgentMode::Psrl,
            CellKind::RandomBaseline => return None,
        };
        Some(AgentConfig {
            mode,
            delta: self.delta,
            epsilon: self.epsilon,
            qff_nodes: self.qff_nodes,
            slack_coeff: self.slack_coeff,
            planner,
            force_generic: self.force_generic,
            seed,
        })
    }
}

fn default_jobs() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Top-level experiment description, loadable from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub env: EnvConfig,
    pub seeds: Vec<u64>,
    pub agents: Vec<CellAgent>,
    /// Episode budget τ shared by every cell, so all columns see the same
    /// total step count τ·H.
    pub episode_count: usize,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn total_steps(&self) -> usize {
        self.episode_count * self.env.horizon
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Input("seed list must not be empty".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::Input("need at least one agent cell".into()));
        }
        if self.episode_count == 0 {
            return Err(Error::Input("episode_count must be >= 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Input("jobs must be >= 1".into()));
        }
        let mut labels: Vec<String> = self.agents.iter().map(|a| a.label()).collect();
        for label in &labels {
            if label.is_empty()
                || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return Err(Error::Input(format!(
                    "label {label:?} must be non-empty and use only [A-Za-z0-9-_]"
                )));
            }
        }
        labels.sort();
        labels.dedup();
        if labels.len() != self.agents.len() {
            return Err(Error::Input(
                "agent labels collide; set distinct `name` overrides".into(),
            ));
        }
        Ok(())
    }
}

/// Parse the `KERNMDP_SEED` override value: one seed or a comma-separated
/// list.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    let seeds = text
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| Error::Input(format!("bad seed {part:?} in override list")))
        })
        .collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(Error::Input("seed override list is empty".into()));
    }
    Ok(seeds)
}

/// Replace the configured seeds when the `KERNMDP_SEED` environment variable
/// is set (smoke runs in CI). Returns whether an override was applied.
pub fn apply_seed_override(cfg: &mut ExperimentConfig) -> Result<bool> {
    match std::env::var("KERNMDP_SEED") {
        Ok(text) => {
            cfg.seeds = parse_seed_list(&text)?;
            Ok(true)
        }
        Err(std::env::VarError::NotPresent) => Ok(false),
        Err(e) => Err(Error::Input(format!("KERNMDP_SEED is not unicode: {e}"))),
    }
}

/// Instantaneous regret below `-REGRET_TOLERANCE` is flagged: value tables
/// for the oracle and for executed policies come from the same grid backup,
/// so anything beyond float-roundoff negativity indicates a bug.
pub const REGRET_TOLERANCE: f64 = 1e-9;

/// Per-cell regret series and diagnostics, derived from a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub label: String,
    pub seed: u64,
    pub v_star: f64,
    pub v_uniform: f64,
    pub lipschitz_l: f64,
    /// `V*(s₁) − V(π_l, s₁)` per episode, both evaluated exactly on the true
    /// instance.
    pub instantaneous: Vec<f64>,
    /// Prefix sums of `instantaneous`.
    pub cumulative: Vec<f64>,
    /// Realized (noisy) return per episode; a sanity cross-check only.
    pub empirical_return: Vec<f64>,
    pub dict_size_r: Vec<usize>,
    pub dict_size_p: Vec<usize>,
    pub beta_r: Vec<f64>,
    pub beta_p: Vec<f64>,
    pub gamma_hat_r: Vec<f64>,
    pub gamma_hat_p: Vec<f64>,
    pub covered_r: Vec<bool>,
    pub covered_p: Vec<bool>,
    pub wall_ms: Vec<f64>,
    pub covered_fraction_r: f64,
    pub covered_fraction_p: f64,
    pub clip_fraction: f64,
    /// 1-based episodes whose instantaneous regret fell below
    /// `-REGRET_TOLERANCE`.
    pub flagged_episodes: Vec<usize>,
}

impl RegretReport {
    pub fn from_run(record: &RunRecord, label: &str) -> Self {
        let n = record.episodes.len();
        let mut instantaneous = Vec::with_capacity(n);
        let mut cumulative = Vec::with_capacity(n);
        let mut flagged = Vec::new();
        let mut acc = 0.0;
        for (i, ep) in record.episodes.iter().enumerate() {
            let inst = record.v_star - ep.policy_value;
            if inst < -REGRET_TOLERANCE {
                flagged.push(i + 1);
            }
            acc += inst;
            instantaneous.push(inst);
            cumulative.push(acc);
        }
        let covered_r: Vec<bool> = record.episodes.iter().map(|e| e.covered_r).collect();
        let covered_p: Vec<bool> = record.episodes.iter().map(|e| e.covered_p).collect();
        let fraction = |flags: &[bool]| {
            if flags.is_empty() {
                1.0
            } else {
                flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64
            }
        };
        Self {
            label: label.to_string(),
            seed: record.seed,
            v_star: record.v_star,
            v_uniform: record.v_uniform,
            lipschitz_l: record.lipschitz_l,
            covered_fraction_r: fraction(&covered_r),
            covered_fraction_p: fraction(&covered_p),
            clip_fraction: record.clip_fraction(),
            empirical_return: record
                .episodes
                .iter()
                .map(|e| e.steps.iter().map(|s| s.reward).sum())
                .collect(),
            dict_size_r: record.episodes.iter().map(|e| e.dict_size_r).collect(),
            dict_size_p: record.episodes.iter().map(|e| e.dict_size_p).collect(),
            beta_r: record.episodes.iter().map(|e| e.beta_r).collect(),
            beta_p: record.episodes.iter().map(|e| e.beta_p).collect(),
            gamma_hat_r: record.episodes.iter().map(|e| e.gamma_hat_r).collect(),
            gamma_hat_p: record.episodes.iter().map(|e| e.gamma_hat_p).collect(),
            wall_ms: record.episodes.iter().map(|e| e.wall_ms).collect(),
            covered_r,
            covered_p,
            instantaneous,
            cumulative,
            flagged_episodes: flagged,
        }
    }

    pub fn episode_count(&self) -> usize {
        self.instantaneous.len()
    }

    pub fn final_cumulative(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Regret accumulated per episode over the first `episodes` episodes.
    pub fn average_regret_through(&self, episodes: usize) -> Option<f64> {
        if episodes == 0 || episodes > self.cumulative.len() {
            return None;
        }
        Some(self.cumulative[episodes - 1] / episodes as f64)
    }

    /// Slope of `ln γ̂_R` against `ln ln t` over the late half of the run,
    /// with `t = (l−1)·horizon` observed inputs at planning time. The early
    /// episodes grow the log-determinant almost linearly while the state
    /// space is still unexplored, so the fit deliberately starts past the
    /// midpoint of the usable series.
    pub fn gamma_growth_exponent(&self, horizon: usize) -> Option<f64> {
        let mut ts = Vec::new();
        let mut vals = Vec::new();
        for (i, &g) in self.gamma_hat_r.iter().enumerate() {
            let t = (i * horizon) as f64;
            if t > 1.0 && g > 0.0 {
                ts.push(t);
                vals.push(g);
            }
        }
        let start = ts.len() / 2;
        loglog_growth_exponent(&ts[start..], &vals[start..])
    }

    /// Serialize the pinned CSV schema: `.` decimal separator, `\n` line
    /// endings, header always present, one data row per episode.
    pub fn csv_string(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for i in 0..self.episode_count() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                i + 1,
                self.instantaneous[i],
                self.cumulative[i],
                self.dict_size_r[i],
                self.dict_size_p[i],
                self.beta_r[i],
                self.beta_p[i],
                self.gamma_hat_r[i],
                self.gamma_hat_p[i],
                self.covered_r[i] as u8,
                self.covered_p[i] as u8,
                self.wall_ms[i],
            );
        }
        out
    }
}

/// Column order of the per-cell CSV files.
pub const CSV_HEADER: &str =
    "l,inst_regret,cum_regret,d_R,d_P,beta_R,beta_P,gamma_hat_R,gamma_hat_P,covered_R,covered_P,wall_ms";

/// Drop the trailing wall-clock column from a cell CSV, leaving exactly the
/// deterministic payload. Two runs of the same config agree byte-for-byte on
/// everything but timing, and this is the canonical projection used to check
/// that.
pub fn strip_wall_clock_column(csv: &str) -> String {
    let mut out = String::with_capacity(csv.len());
    for line in csv.lines() {
        match line.rfind(',') {
            Some(pos) => out.push_str(&line[..pos]),
            None => out.push_str(line),
        }
        out.push('\n');
    }
    out
}

/// Least-squares slope of `ln(values)` against `ln(ln(ts))`. Returns `None`
/// when fewer than two usable points remain or the abscissa is degenerate.
pub fn loglog_growth_exponent(ts: &[f64], values: &[f64]) -> Option<f64> {
    let points: Vec<(f64, f64)> = ts
        .iter()
        .zip(values)
        .filter(|(&t, &v)| t > 1.0 && v > 0.0)
        .map(|(&t, &v)| (t.ln().ln(), v.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx < 1e-12 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    Some(sxy / sxx)
}

/// Constants feeding the closed-form reference regret curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub norm_cap_r: f64,
    pub norm_cap_p: f64,
    pub sigma_r: f64,
    pub sigma_p: f64,
    pub lipschitz_l: f64,
    /// Euclidean diameter of the state box.
    pub diameter: f64,
    pub state_dim: usize,
    pub horizon: usize,
    pub delta: f64,
    pub epsilon_r: f64,
    pub epsilon_p: f64,
}

impl BoundInputs {
    pub fn for_instance(mdp: &SyntheticMdp, delta: f64, epsilon_r: f64, epsilon_p: f64) -> Self {
        Self {
            norm_cap_r: mdp.norm_cap_r,
            norm_cap_p: mdp.norm_cap_p,
            sigma_r: mdp.noise.sigma_r,
            sigma_p: mdp.noise.sigma_p,
            lipschitz_l: mdp.lipschitz_l,
            diameter: mdp.spec.diameter(),
            state_dim: mdp.spec.state_dim,
            horizon: mdp.spec.horizon,
            delta,
            epsilon_r,
            epsilon_p,
        }
    }
}

/// Closed-form high-probability regret curve for the optimistic learner,
/// evaluated with every hidden leading constant set to one. Reported next to
/// empirical regret as a shape reference only — the true constants are
/// unknown, so this is not a certified ceiling. Meaningful for positive
/// inputs, `delta` in (0, 1), and `epsilon` values in (0, 1).
pub fn theoretical_bound(c: &BoundInputs, total_steps: usize, gamma_r: f64, gamma_p: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let t = total_steps as f64;
    let m = c.state_dim as f64;
    let h = c.horizon as f64;
    let e = std::f64::consts::E;
    let lambda_r = (1.0 + c.epsilon_r) / (1.0 - c.epsilon_r);
    let lambda_p = (1.0 + c.epsilon_p) / (1.0 - c.epsilon_p);
    let rate_r = lambda_r * lambda_r / (c.epsilon_r * c.epsilon_r);
    let rate_p = lambda_p * lambda_p / (c.epsilon_p * c.epsilon_p);
    let width_r = c.norm_cap_r / (1.0 - c.epsilon_r).sqrt()
        + c.sigma_r / h.sqrt()
            * ((1.0 / c.delta).ln() + rate_r * gamma_r * (t / c.delta).ln().powi(2)).sqrt();
    let width_p = c.norm_cap_p / (1.0 - c.epsilon_p).sqrt()
        + c.sigma_p / (m * h).sqrt()
            * ((1.0 / c.delta).ln() + rate_p * gamma_p * (m * t / c.delta).ln().powi(2)).sqrt();
    (c.lipschitz_l * c.diameter + 2.0 * c.norm_cap_r * h) * (2.0 * t * (3.0 / c.delta).ln()).sqrt()
        + 2.0 * width_r * (2.0 * e * lambda_r * h * gamma_r * t).sqrt()
        + 2.0 * c.lipschitz_l * width_p * (2.0 * e * lambda_p * m * h * gamma_p * t).sqrt()
}

/// Deterministic mean-backup value of a fixed grid policy on the true
/// instance, started from `initial`. This is the exact evaluation behind
/// every regret number: a grid DP under the true mean functions, no rollout
/// noise.
pub fn evaluate_policy_value(
    mdp: &SyntheticMdp,
    policy: &GridPolicy,
    initial: &[f64],
) -> Result<f64> {
    if initial.len() != mdp.spec.state_dim {
        return Err(Error::Dimension { expected: mdp.spec.state_dim, got: initial.len() });
    }
    if initial == mdp.spec.initial_state.as_slice() {
        return env::policy_value(mdp, policy);
    }
    let mut moved = mdp.clone();
    moved.spec.initial_state = initial.to_vec();
    env::policy_value(&moved, policy)
}

/// Oracle artifacts for one seed: the optimal grid values and the scalars
/// every report compares against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSnapshot {
    pub seed: u64,
    pub v_star: f64,
    pub v_uniform: f64,
    pub lipschitz_l: f64,
    pub horizon: usize,
    pub state_nodes_per_dim: usize,
    /// Optimal value table, `values[h][node]`.
    pub values: Vec<Vec<f64>>,
}

/// Synthesize the instance for `seed` and precompute its oracle quantities.
pub fn oracle_snapshot(cfg: &ExperimentConfig, seed: u64) -> Result<OracleSnapshot> {
    let mdp = cfg.env.synthesize(cfg.episode_count, &cfg.planner, seed)?;
    let (policy, v_star) = env::oracle_value(&mdp, &cfg.planner)?;
    let v_uniform = env::uniform_policy_value(&mdp, &cfg.planner)?;
    Ok(OracleSnapshot {
        seed,
        v_star,
        v_uniform,
        lipschitz_l: mdp.lipschitz_l,
        horizon: mdp.spec.horizon,
        state_nodes_per_dim: cfg.planner.state_nodes_per_dim,
        values: policy.values,
    })
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, sd })
    }
}

/// A cell that did not produce a report, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub label: String,
    pub seed: u64,
    pub error: String,
}

/// Across-seed aggregates for one learner column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub label: String,
    pub seeds_completed: usize,
    pub final_cum_regret: Option<Stat>,
    pub mean_inst_regret: Option<Stat>,
    pub covered_fraction_r: Option<Stat>,
    pub covered_fraction_p: Option<Stat>,
    pub final_gamma_hat_r: Option<Stat>,
    pub final_gamma_hat_p: Option<Stat>,
    pub final_dict_size_r: Option<Stat>,
    pub final_dict_size_p: Option<Stat>,
    pub clip_fraction: Option<Stat>,
    pub total_wall_ms: Option<Stat>,
    /// Closed-form reference curve at the measured information gains; only
    /// populated for the dictionary-based optimist, whose knobs the formula
    /// describes.
    pub reference_bound: Option<Stat>,
}

/// Aggregate JSON document written next to the cell CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub schema: u32,
    pub episode_count: usize,
    pub horizon: Option<usize>,
    pub total_steps: Option<usize>,
    pub seeds: Vec<u64>,
    pub reference_note: String,
    pub bayes_note: String,
    pub agents: Vec<AgentSummary>,
    pub failures: Vec<CellFailure>,
}

pub const SUMMARY_SCHEMA: u32 = 1;

fn reference_note() -> String {
    "reference_bound evaluates the closed-form regret curve at unit leading constants; \
     it is a shape reference for plots, not a certified ceiling."
        .to_string()
}

fn bayes_note() -> String {
    "psrl regret averaged over environment draws is a Monte-Carlo stand-in for the \
     average-case quantity: the synthetic generator approximates, but does not equal, \
     the functional prior the sampler updates."
        .to_string()
}

/// Everything `run_experiment` produced, in config order (agents major,
/// seeds minor).
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<RegretReport>,
    pub failures: Vec<CellFailure>,
    pub summary: SummaryDoc,
}

impl ExperimentOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn reports_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RegretReport> {
        self.reports.iter().filter(move |r| r.label == label)
    }
}

struct CellResult {
    agent_index: usize,
    label: String,
    seed: u64,
    outcome: std::result::Result<(RegretReport, Option<f64>), String>,
}

fn run_seed_batch(cfg: &ExperimentConfig, seed: u64) -> Vec<CellResult> {
    let mdp = match cfg.env.synthesize(cfg.episode_count, &cfg.planner, seed) {
        Ok(mdp) => mdp,
        Err(e) => {
            return cfg
                .agents
                .iter()
                .enumerate()
                .map(|(agent_index, agent)| CellResult {
                    agent_index,
                    label: agent.label(),
                    seed,
                    outcome: Err(format!("instance synthesis failed: {e}")),
                })
                .collect();
        }
    };
    cfg.agents
        .iter()
        .enumerate()
        .map(|(agent_index, agent)| {
            let label = agent.label();
            let run: Result<RunRecord> = match agent.agent_config(cfg.planner, seed) {
                Some(agent_cfg) => run_agent(&mdp, &agent_cfg),
                None => run_random_baseline(&mdp, &cfg.planner, seed),
            };
            let outcome = match run.and_then(|record| {
                let report = RegretReport::from_run(&record, &label);
                let bound = (agent.kind == CellKind::UcrlNystrom).then(|| {
                    let inputs =
                        BoundInputs::for_instance(&mdp, agent.delta, agent.epsilon, agent.epsilon);
                    theoretical_bound(
                        &inputs,
                        cfg.total_steps(),
                        report.gamma_hat_r.last().copied().unwrap_or(0.0),
                        report.gamma_hat_p.last().copied().unwrap_or(0.0),
                    )
                });
                write_cell_outputs(cfg, &label, &record, &report)?;
                Ok((report, bound))
            }) {
                Ok(pair) => Ok(pair),
                Err(e) => Err(e.to_string()),
            };
            CellResult { agent_index, label, seed, outcome }
        })
        .collect()
}

fn write_cell_outputs(
    cfg: &ExperimentConfig,
    label: &str,
    record: &RunRecord,
    report: &RegretReport,
) -> Result<()> {
    let csv_path = cfg.output_dir.join(format!("{label}-seed{}.csv", report.seed));
    fs::write(&csv_path, report.csv_string())?;
    let jsonl_path = cfg.output_dir.join(format!("{label}-seed{}.jsonl", report.seed));
    let mut stream = fs::File::create(&jsonl_path)?;
    for episode in &record.episodes {
        serde_json::to_writer(&mut stream, episode)?;
        stream.write_all(b"\n")?;
    }
    Ok(())
}

fn build_summary(cfg: &ExperimentConfig, cells: &[CellResult]) -> SummaryDoc {
    let mut agents = Vec::with_capacity(cfg.agents.len());
    for (agent_index, agent) in cfg.agents.iter().enumerate() {
        let done: Vec<&(RegretReport, Option<f64>)> = cells
            .iter()
            .filter(|c| c.agent_index == agent_index)
            .filter_map(|c| c.outcome.as_ref().ok())
            .collect();
        let collect = |f: &dyn Fn(&RegretReport) -> f64| -> Vec<f64> {
            done.iter().map(|(r, _)| f(r)).collect()
        };
        let stat = |f: &dyn Fn(&RegretReport) -> f64| Stat::of(&collect(f));
        let bounds: Vec<f64> = done.iter().filter_map(|(_, b)| *b).collect();
        agents.push(AgentSummary {
            label: agent.label(),
            seeds_completed: done.len(),
            final_cum_regret: stat(&|r| r.final_cumulative()),
            mean_inst_regret: stat(&|r| {
                r.final_cumulative() / r.episode_count().max(1) as f64
            }),
            covered_fraction_r: stat(&|r| r.covered_fraction_r),
            covered_fraction_p: stat(&|r| r.covered_fraction_p),
            final_gamma_hat_r: stat(&|r| r.gamma_hat_r.last().copied().unwrap_or(0.0)),
            final_gamma_hat_p: stat(&|r| r.gamma_hat_p.last().copied().unwrap_or(0.0)),
            final_dict_size_r: stat(&|r| r.dict_size_r.last().copied().unwrap_or(0) as f64),
            final_dict_size_p: stat(&|r| r.dict_size_p.last().copied().unwrap_or(0) as f64),
            clip_fraction: stat(&|r| r.clip_fraction),
            total_wall_ms: stat(&|r| r.wall_ms.iter().sum()),
            reference_bound: Stat::of(&bounds),
        });
    }
    let failures = cells
        .iter()
        .filter_map(|c| {
            c.outcome.as_ref().err().map(|e| CellFailure {
                label: c.label.clone(),
                seed: c.seed,
                error: e.clone(),
            })
        })
        .collect();
    SummaryDoc {
        schema: SUMMARY_SCHEMA,
        episode_count: cfg.episode_count,
        horizon: Some(cfg.env.horizon),
        total_steps: Some(cfg.total_steps()),
        seeds: cfg.seeds.clone(),
        reference_note: reference_note(),
        bayes_note: bayes_note(),
        agents,
        failures,
    }
}

/// Execute every (agent, seed) cell, write one CSV and one JSONL per cell
/// plus `summary.json`, and return the reports. Seeds are independent tasks
/// spread over at most `jobs` worker threads; cells at the same seed share
/// one synthesized instance. A failing cell is recorded in the summary and
/// does not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let batches: Vec<Mutex<Option<Vec<CellResult>>>> =
        cfg.seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.jobs.min(cfg.seeds.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cfg.seeds.len() {
                    break;
                }
                let batch = run_seed_batch(cfg, cfg.seeds[i]);
                *batches[i].lock().expect("batch slot poisoned") = Some(batch);
            });
        }
    });
    let mut cells: Vec<CellResult> = Vec::with_capacity(cfg.seeds.len() * cfg.agents.len());
    for slot in batches {
        cells.extend(slot.into_inner().expect("batch slot poisoned").expect("worker finished"));
    }
    cells.sort_by_key(|c| (c.agent_index, c.seed));
    let summary = build_summary(cfg, &cells);
    let summary_path = cfg.output_dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for cell in cells {
        match cell.outcome {
            Ok((report, _)) => reports.push(report),
            Err(error) => {
                failures.push(CellFailure { label: cell.label, seed: cell.seed, error })
            }
        }
    }
    Ok(ExperimentOutcome { reports, failures, summary })
}

/// One parsed row of a cell CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub l: usize,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub d_r: f64,
    pub d_p: f64,
    pub beta_r: f64,
    pub beta_p: f64,
    pub gamma_hat_r: f64,
    pub gamma_hat_p: f64,
    pub covered_r: f64,
    pub covered_p: f64,
    pub wall_ms: f64,
}

/// Parse a cell CSV produced by [`RegretReport::csv_string`].
pub fn parse_cell_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => {
            return Err(Error::Input(format!("unexpected CSV header: {other:?}")));
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::Input(format!(
                "row {} has {} fields, expected 12",
                i + 1,
                fields.len()
            )));
        }
        let num = |j: usize| -> Result<f64> {
            fields[j]
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("bad number {:?} in row {}", fields[j], i + 1)))
        };
        rows.push(CsvRow {
            l: num(0)? as usize,
            inst_regret: num(1)?,
            cum_regret: num(2)?,
            d_r: num(3)?,
            d_p: num(4)?,
            beta_r: num(5)?,
            beta_p: num(6)?,
            gamma_hat_r: num(7)?,
            gamma_hat_p: num(8)?,
            covered_r: num(9)?,
            covered_p: num(10)?,
            wall_ms: num(11)?,
        });
    }
    Ok(rows)
}

/// Re-aggregate a directory of cell CSVs into a summary document plus a
/// plot-ready long-format CSV (`label,seed,l,metric,value`). Works from the
/// files alone, so fields that never reach the CSVs stay unset.
pub fn aggregate_cell_csvs(dir: &Path) -> Result<(SummaryDoc, String)> {
    let mut cell_files: Vec<(String, u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if let Some(stem) = name.strip_suffix(".csv") {
            if let Some(pos) = stem.rfind("-seed") {
                if let Ok(seed) = stem[pos + 5..].parse::<u64>() {
                    cell_files.push((stem[..pos].to_string(), seed, path));
                }
            }
        }
    }
    if cell_files.is_empty() {
        return Err(Error::Input(format!("no cell CSVs found under {}", dir.display())));
    }
    cell_files.sort();
    let mut long = String::from("label,seed,l,metric,value\n");
    let metrics: [(&str, fn(&CsvRow) -> f64); 11] = [
        ("inst_regret", |r| r.inst_regret),
        ("cum_regret", |r| r.cum_regret),
        ("d_R", |r| r.d_r),
        ("d_P", |r| r.d_p),
        ("beta_R", |r| r.beta_r),
        ("beta_P", |r| r.beta_p),
        ("gamma_hat_R", |r| r.gamma_hat_r),
        ("gamma_hat_P", |r| r.gamma_hat_p),
        ("covered_R", |r| r.covered_r),
        ("covered_P", |r| r.covered_p),
        ("wall_ms", |r| r.wall_ms),
    ];
    let mut labels: Vec<String> = Vec::new();
    let mut seeds: Vec<u64> = Vec::new();
    let mut parsed: Vec<(String, u64, Vec<CsvRow>)> = Vec::new();
    let mut episode_count = 0;
    for (label, seed, path) in &cell_files {
        let rows = parse_cell_csv(&fs::read_to_string(path)?)?;
        episode_count = episode_count.max(rows.len());
        if !labels.contains(label) {
            labels.push(label.clone());
        }
        if !seeds.contains(seed) {
            seeds.push(*seed);
        }
        for row in &rows {
            for (metric, get) in &metrics {
                let _ = writeln!(long, "{label},{seed},{},{metric},{}", row.l, get(row));
            }
        }
        parsed.push((label.clone(), *seed, rows));
    }
    seeds.sort_unstable();
    let mut agents = Vec::new();
    for label in &labels {
        let runs: Vec<&Vec<CsvRow>> =
            parsed.iter().filter(|(l, _, _)| l == label).map(|(_, _, rows)| rows).collect();
        let finals = |f: &dyn Fn(&CsvRow) -> f64| -> Option<Stat> {
            Stat::of(&runs.iter().filter_map(|rows| rows.last().map(|r| f(r))).collect::<Vec<_>>())
        };
        let means = |f: &dyn Fn(&CsvRow) -> f64| -> Option<Stat> {
            Stat::of(
                &runs
                    .iter()
                    .filter(|rows| !rows.is_empty())
                    .map(|rows| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64)
                    .collect::<Vec<_>>(),
            )
        };
        agents.push(AgentSummary {
            label: label.clone(),
            seeds_completed: runs.len(),
            final_cum_regret: finals(&|r| r.cum_regret),
            mean_inst_regret: means(&|r| r.inst_regret),
            covered_fraction_r: means(&|r| r.covered_r),
            covered_fraction_p: means(&|r| r.covered_p),
            final_gamma_hat_r: finals(&|r| r.gamma_hat_r),
            final_gamma_hat_p: finals(&|r| r.gamma_hat_p),
            final_dict_size_r: finals(&|r| r.d_r),
            final_dict_size_p: finals(&|r| r.d_p),
            clip_fraction: None,
            total_wall_ms: Some(Stat::of(
                &runs
                    .iter()
                    .map(|rows| rows.iter().map(|r| r.wall_ms).sum::<f64>())
                    .collect::<Vec<_>>(),
            )
            .unwrap_or(Stat { mean: 0.0, sd: 0.0 })),
            reference_bound: None,
        });
    }
    let summary = SummaryDoc {
        schema: SUMMARY_SCHEMA,
        episode_count,
        horizon: None,
        total_steps: None,
        seeds,
        reference_note: reference_note(),
        bayes_note: bayes_note(),
        agents,
        failures: Vec::new(),
    };
    Ok((summary, long))
}

fn selftest_config(output_dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        env: EnvConfig {
            horizon: 3,
            action_count: 5,
            centers: 60,
            ..EnvConfig::default()
        },
        seeds: vec![1, 2],
        agents: vec![CellAgent::of(CellKind::UcrlNystrom), CellAgent::of(CellKind::RandomBaseline)],
        episode_count: 6,
        planner: PlannerConfig { state_nodes_per_dim: 11 },
        jobs: 1,
        output_dir,
    }
}

/// Run the invariant suite at smoke scale, printing one line per check.
/// Returns whether every check passed.
pub fn run_selftest(out: &mut dyn std::io::Write) -> Result<bool> {
    let mut all_ok = true;
    let mut check = |out: &mut dyn std::io::Write, name: &str, ok: bool, detail: String| {
        all_ok &= ok;
        let status = if ok { "ok" } else { "FAIL" };
        writeln!(out, "selftest {name}: {status} ({detail})")
    };

    let inputs = BoundInputs {
        norm_cap_r: 2.0,
        norm_cap_p: 2.0,
        sigma_r: 0.1,
        sigma_p: 0.1,
        lipschitz_l: 1.0,
        diameter: 1.0,
        state_dim: 1,
        horizon: 5,
        delta: 0.1,
        epsilon_r: 0.5,
        epsilon_p: 0.5,
    };
    let at_zero = theoretical_bound(&inputs, 0, 5.0, 5.0);
    let low = theoretical_bound(&inputs, 1000, 5.0, 5.0);
    let high = theoretical_bound(&inputs, 1000, 10.0, 10.0);
    check(
        out,
        "reference-curve",
        at_zero == 0.0 && low.is_finite() && low > 0.0 && high > low,
        format!("T=0 -> {at_zero}, T=1000 -> {low:.1} then {high:.1} after doubling gains"),
    )?;

    let ts: Vec<f64> = (10..200).map(|t| t as f64).collect();
    let squares: Vec<f64> = ts.iter().map(|t| t.ln().powi(2)).collect();
    let fitted = loglog_growth_exponent(&ts, &squares).unwrap_or(f64::NAN);
    check(
        out,
        "growth-regression",
        (fitted - 2.0).abs() < 1e-9,
        format!("recovered exponent {fitted:.6} for (ln t)^2 data"),
    )?;

    let base = std::env::temp_dir().join(format!("kernmdp-selftest-{}", std::process::id()));
    let run_a = run_experiment(&selftest_config(base.join("a")))?;
    let run_b = run_experiment(&selftest_config(base.join("b")))?;
    let mut identical = run_a.all_succeeded() && run_b.all_succeeded();
    for report in &run_a.reports {
        let name = format!("{}-seed{}.csv", report.label, report.seed);
        let a = fs::read_to_string(base.join("a").join(&name))?;
        let b = fs::read_to_string(base.join("b").join(&name))?;
        identical &= strip_wall_clock_column(&a) == strip_wall_clock_column(&b);
    }
    check(
        out,
        "determinism",
        identical,
        "repeated run agrees byte-for-byte outside the wall-clock column".to_string(),
    )?;

    let mut series_ok = true;
    let mut coverage_ok = true;
    for report in &run_a.reports {
        let mut acc = 0.0;
        for (inst, cum) in report.instantaneous.iter().zip(&report.cumulative) {
            acc += inst;
            series_ok &= acc == *cum;
        }
        series_ok &= report.flagged_episodes.is_empty();
        coverage_ok &= report.covered_fraction_r >= 0.9 && report.covered_fraction_p >= 0.9;
    }
    check(out, "regret-series", series_ok, "prefix sums exact, no negative-regret flags".into())?;
    check(out, "band-coverage", coverage_ok, "covered fractions at or above 1 - delta".into())?;

    // An additive pair of one-dimensional squared-exponential parts has
    // polylog information growth of power two (each part contributes
    // dimension-plus-one), so the fitted exponent must stay under 2.5.
    let additive = KernelSpec::Additive {
        parts: vec![
            crate::kernel::KernelPart { kernel: env::default_kernel(), slice: [0, 1] },
            crate::kernel::KernelPart { kernel: env::default_kernel(), slice: [1, 2] },
        ],
    };
    let gamma_cfg = ExperimentConfig {
        env: EnvConfig {
            kernel_r: additive.clone(),
            kernel_p: additive,
            centers: 3200,
            ..EnvConfig::default()
        },
        seeds: vec![1],
        agents: vec![CellAgent::of(CellKind::UcrlNystrom)],
        episode_count: 150,
        planner: PlannerConfig::default(),
        jobs: 1,
        output_dir: base.join("gamma"),
    };
    let gamma_run = run_experiment(&gamma_cfg)?;
    let exponent = gamma_run
        .reports
        .first()
        .and_then(|r| r.gamma_growth_exponent(gamma_cfg.env.horizon))
        .unwrap_or(f64::NAN);
    check(
        out,
        "information-growth",
        exponent <= 2.5,
        format!("late-window log-log exponent {exponent:.3} (limit 2.5)"),
    )?;

    let _ = fs::remove_dir_all(&base);
    Ok(all_ok)
}
