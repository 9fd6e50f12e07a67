//! Episode loops: the optimistic planner-driven agent in its two feature
//! modes, the posterior-sampling agent, and a uniform-random baseline.
//!
//! All agents interact with a [`SyntheticMdp`] through `step` only; the true
//! mean functions are touched exclusively for diagnostics (exact policy
//! values, band-coverage flags) that a synthetic-benchmark harness is
//! entitled to.
//!
//! The dictionary agent carries an exact-GP fast path: whenever every
//! history point is accepted into the dictionary (the common case — the
//! inclusion threshold `η·σ̃²` is far above one at this problem scale), the
//! posterior the dictionary features reproduce is the exact kernel
//! posterior, so the agent maintains an incrementally-updated Cholesky
//! factor over the raw history instead of re-projecting features each
//! episode. Episodes where some draw rejects fall back to the generic
//! feature-channel path.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::env::SyntheticMdp;
use crate::error::{Error, Result};
use crate::features::nystrom::{eta_for, lambda_for, NystromDictionary};
use crate::features::qff::{build_qff, qff_schedule};
use crate::kernel::KernelSpec;
use crate::planner::{
    optimistic_value_iterate, optimistic_value_iterate_tables, value_iterate_tables, BandTables,
    GridPolicy, PlannerConfig, PlausibleSet, StateGrid,
};
use crate::regression::{
    nystrom_width, stacked_input, ChannelKind, ConfidenceChannel, FeatureMap,
};

/// Which learner runs the episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    UcrlNystrom,
    UcrlQff,
    Psrl,
}

impl AgentMode {
    pub fn label(&self) -> &'static str {
        match self {
            AgentMode::UcrlNystrom => "ucrl-nystrom",
            AgentMode::UcrlQff => "ucrl-qff",
            AgentMode::Psrl => "psrl",
        }
    }
}

/// Learner knobs. Norm caps, noise scales and the Lipschitz constant are
/// instance properties and come from the [`SyntheticMdp`] itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub mode: AgentMode,
    /// Confidence-band failure budget.
    pub delta: f64,
    /// Dictionary sparsification accuracy.
    pub epsilon: f64,
    /// Fixed quadrature order per dimension; `None` derives it from the
    /// lengthscale and the total step count.
    pub qff_nodes: Option<usize>,
    /// Multiplier on the quadrature channel's additive feature-bias slack.
    pub slack_coeff: f64,
    pub planner: PlannerConfig,
    /// Diagnostic switch: always run the feature-channel path even when the
    /// exact fast path applies.
    #[serde(default)]
    pub force_generic: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            mode: AgentMode::UcrlNystrom,
            delta: 0.1,
            epsilon: 0.1,
            qff_nodes: None,
            slack_coeff: 1.0,
            planner: PlannerConfig::default(),
            force_generic: false,
            seed: 0,
        }
    }
}

/// One environment interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub clipped: bool,
}

/// Per-episode outcome and posterior diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Exact value of the executed policy under the true means.
    pub policy_value: f64,
    /// Initial-state value of the model the agent planned on: the optimistic
    /// value for planner-driven modes, the sampled-model value for
    /// posterior sampling.
    pub planned_value: f64,
    pub dict_size_r: usize,
    pub dict_size_p: usize,
    pub beta_r: f64,
    pub beta_p: f64,
    pub gamma_hat_r: f64,
    pub gamma_hat_p: f64,
    /// Whether the true mean lay inside the band at every planning-grid
    /// point this episode.
    pub covered_r: bool,
    pub covered_p: bool,
    pub clipped_steps: usize,
    pub wall_ms: f64,
    pub steps: Vec<StepRecord>,
}

/// A whole run plus the instance-level reference values regret is measured
/// against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub v_star: f64,
    pub v_uniform: f64,
    pub lipschitz_l: f64,
    pub episodes: Vec<EpisodeRecord>,
}

impl RunRecord {
    /// Running sum of `V* − V(π_k)`.
    pub fn cumulative_regret(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.episodes
            .iter()
            .map(|e| {
                acc += self.v_star - e.policy_value;
                acc
            })
            .collect()
    }

    /// Fraction of steps whose next-state draw hit the box boundary.
    pub fn clip_fraction(&self) -> f64 {
        let total: usize = self.episodes.iter().map(|e| e.steps.len()).sum();
        if total == 0 {
            return 0.0;
        }
        let clipped: usize = self.episodes.iter().map(|e| e.clipped_steps).sum();
        clipped as f64 / total as f64
    }
}

/// Kernel over stacked `(z, index)` inputs that reproduces `base` on the
/// state-action slice. With several outputs a deliberately narrow factor on
/// the index coordinate makes distinct outputs effectively independent.
pub fn stacked_kernel(base: &KernelSpec, z_dim: usize, output_dim: usize) -> KernelSpec {
    use crate::kernel::KernelPart;
    let mut parts =
        vec![KernelPart { kernel: base.clone(), slice: [0, z_dim] }];
    if output_dim > 1 {
        parts.push(KernelPart {
            kernel: KernelSpec::Se { lengthscale: 0.1 / output_dim as f64 },
            slice: [z_dim, z_dim + 1],
        });
    }
    KernelSpec::Product { parts }
}

// ---------------------------------------------------------------------------
// Incremental exact posterior over a fixed query set
// ---------------------------------------------------------------------------

/// Exact kernel posterior maintained incrementally: a growing Cholesky
/// factor of `K + ridge·I` over the history, forward-substituted rows for a
/// fixed query grid, and per-candidate columns for inclusion-probability
/// lookups. Appending `n` points costs `O(n·t·(q + t))` instead of the
/// `O(t³)` full rebuild.
struct ExactGpTracker {
    kernel: KernelSpec,
    ridge: f64,
    points: Vec<Vec<f64>>,
    /// Lower-triangular rows of the factor.
    chol: Vec<Vec<f64>>,
    /// `targets[output]` raw observations, `wy[output] = L⁻¹ y`.
    targets: Vec<Vec<f64>>,
    wy: Vec<Vec<f64>>,
    /// Fixed grid queries: `grid_half[i][col] = (L⁻¹ K_dQ)[i][col]`.
    queries: Vec<Vec<f64>>,
    grid_half: Vec<Vec<f64>>,
    grid_colnorm2: Vec<f64>,
    /// One forward-solved column per history point, for `σ̃²` at candidates.
    cand_cols: Vec<Vec<f64>>,
    cand_norm2: Vec<f64>,
    log_diag_sum: f64,
}

impl ExactGpTracker {
    fn new(kernel: KernelSpec, ridge: f64, queries: Vec<Vec<f64>>, outputs: usize) -> Self {
        let q = queries.len();
        Self {
            kernel,
            ridge,
            points: Vec::new(),
            chol: Vec::new(),
            targets: vec![Vec::new(); outputs],
            wy: vec![Vec::new(); outputs],
            queries,
            grid_half: Vec::new(),
            grid_colnorm2: vec![0.0; q],
            cand_cols: Vec::new(),
            cand_norm2: Vec::new(),
            log_diag_sum: 0.0,
        }
    }

    fn len(&self) -> usize {
        self.points.len()
    }

    /// Fold in one point with its per-output targets.
    fn push(&mut self, x: Vec<f64>, y: &[f64]) -> Result<()> {
        let t = self.len();
        let mut row = vec![0.0; t + 1];
        for (j, p) in self.points.iter().enumerate() {
            let mut v = self.kernel.eval(&x, p)?;
            for m in 0..j {
                v -= row[m] * self.chol[j][m];
            }
            row[j] = v / self.chol[j][j];
        }
        let mut diag = self.kernel.eval(&x, &x)? + self.ridge;
        for m in 0..t {
            diag -= row[m] * row[m];
        }
        if diag <= 0.0 {
            return Err(Error::Factorization { context: "incremental factor", size: t + 1 });
        }
        let l_tt = diag.sqrt();
        row[t] = l_tt;
        self.log_diag_sum += l_tt.ln();

        // extend the solved grid rows
        let mut new_grid = vec![0.0; self.queries.len()];
        for (col, q) in self.queries.iter().enumerate() {
            let mut v = self.kernel.eval(&x, q)?;
            for m in 0..t {
                v -= row[m] * self.grid_half[m][col];
            }
            let g = v / l_tt;
            new_grid[col] = g;
            self.grid_colnorm2[col] += g * g;
        }
        self.grid_half.push(new_grid);

        // extend existing candidate columns, then open a column for x itself:
        // its first t entries repeat the factor row, and the last one follows
        // from l_tt² = k(x,x) + ridge − Σ row²
        for (cand, col) in self.cand_cols.iter_mut().enumerate() {
            let mut v = self.kernel.eval(&x, &self.points[cand])?;
            for m in 0..t {
                v -= row[m] * col[m];
            }
            let g = v / l_tt;
            col.push(g);
            self.cand_norm2[cand] += g * g;
        }
        let mut own_col = row[..t].to_vec();
        own_col.push(l_tt - self.ridge / l_tt);
        let own_norm2 = own_col.iter().map(|g| g * g).sum();
        self.cand_cols.push(own_col);
        self.cand_norm2.push(own_norm2);

        for (out, target) in y.iter().enumerate() {
            let mut v = *target;
            for m in 0..t {
                v -= row[m] * self.wy[out][m];
            }
            self.targets[out].push(*target);
            self.wy[out].push(v / l_tt);
        }
        self.chol.push(row);
        self.points.push(x);
        Ok(())
    }

    /// Posterior means over the query grid for one output.
    fn grid_means(&self, output: usize) -> Vec<f64> {
        let wy = &self.wy[output];
        (0..self.queries.len())
            .map(|col| {
                self.grid_half.iter().zip(wy).map(|(row, w)| row[col] * w).sum::<f64>()
            })
            .collect()
    }

    /// Posterior standard deviations over the query grid.
    fn grid_devs(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.queries.len());
        for (col, q) in self.queries.iter().enumerate() {
            let prior = self.kernel.eval(q, q)?;
            out.push((prior - self.grid_colnorm2[col]).max(0.0).sqrt());
        }
        Ok(out)
    }

    /// `σ̃²` at every history point under the current posterior.
    fn candidate_variances(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for (i, p) in self.points.iter().enumerate() {
            let prior = self.kernel.eval(p, p)?;
            out.push((prior - self.cand_norm2[i]).max(0.0));
        }
        Ok(out)
    }

    /// `ln det(I + K/ridge)`, matching the feature-space information ratio.
    fn logdet_ratio(&self) -> f64 {
        2.0 * self.log_diag_sum - self.len() as f64 * self.ridge.ln()
    }

    /// Prior kernel matrix over the query grid; episode-invariant, so
    /// callers compute it once.
    fn prior_cov(&self) -> Result<ndarray::Array2<f64>> {
        let q = self.queries.len();
        let mut cov = ndarray::Array2::zeros((q, q));
        for i in 0..q {
            for j in 0..=i {
                let v = self.kernel.eval(&self.queries[i], &self.queries[j])?;
                cov[[i, j]] = v;
                cov[[j, i]] = v;
            }
        }
        Ok(cov)
    }

    /// Joint posterior covariance over the query grid (kernel scale):
    /// the prior minus the explained part `(L⁻¹K_dQ)ᵀ(L⁻¹K_dQ)`.
    fn grid_cov(&self, prior: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
        let q = self.queries.len();
        let mut cov = prior.clone();
        for i in 0..q {
            for j in 0..=i {
                let mut v = cov[[i, j]];
                for row in &self.grid_half {
                    v -= row[i] * row[j];
                }
                cov[[i, j]] = v;
                cov[[j, i]] = v;
            }
        }
        cov
    }
}

// ---------------------------------------------------------------------------
// Shared run scaffolding
// ---------------------------------------------------------------------------

struct RunContext<'a> {
    mdp: &'a SyntheticMdp,
    grid: StateGrid,
    /// Planning-grid inputs, row-major `[node][action]`.
    zs: Vec<Vec<f64>>,
    /// True means at `zs` for coverage diagnostics.
    true_r: Vec<f64>,
    true_p: Vec<Vec<f64>>,
    ridge_r: f64,
    ridge_p: f64,
    horizon_t: usize,
}

impl<'a> RunContext<'a> {
    fn new(mdp: &'a SyntheticMdp, planner: &PlannerConfig) -> Result<Self> {
        mdp.spec.validate()?;
        let grid = StateGrid::uniform(mdp.spec.state_dim, planner.state_nodes_per_dim)?;
        let mut zs = Vec::with_capacity(grid.node_count() * mdp.spec.action_grid.len());
        let mut true_r = Vec::with_capacity(zs.capacity());
        let mut true_p = Vec::with_capacity(zs.capacity());
        for node in 0..grid.node_count() {
            let s = grid.coords(node);
            for a in &mdp.spec.action_grid {
                let mut z = s.clone();
                z.extend_from_slice(a);
                true_r.push(mdp.mean_reward(&z)?);
                true_p.push(mdp.mean_transition(&z)?);
                zs.push(z);
            }
        }
        Ok(Self {
            mdp,
            grid,
            zs,
            true_r,
            true_p,
            ridge_r: mdp.spec.horizon as f64,
            ridge_p: (mdp.spec.state_dim * mdp.spec.horizon) as f64,
            horizon_t: mdp.spec.total_steps(),
        })
    }

    fn actions(&self) -> &[Vec<f64>] {
        &self.mdp.spec.action_grid
    }

    fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    /// The true tables reshaped for the tabulated planner entry points.
    fn true_tables(&self) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let actions = self.actions().len();
        let reward = self.true_r.chunks(actions).map(|c| c.to_vec()).collect();
        let next = self.true_p.chunks(actions).map(|c| c.to_vec()).collect();
        (reward, next)
    }

    /// Optimal grid value of the initial state, from the cached tables.
    fn oracle_value(&self) -> Result<f64> {
        let (reward, next) = self.true_tables();
        let policy = value_iterate_tables(
            reward,
            next,
            self.mdp.spec.horizon,
            &self.grid,
            self.actions(),
        )?;
        Ok(policy.initial_value(&self.mdp.spec.initial_state))
    }

    /// Expected value of uniform-random actions, from the cached tables.
    fn uniform_value(&self) -> f64 {
        let nodes = self.node_count();
        let actions = self.actions().len();
        let mut value = vec![0.0f64; nodes];
        for _ in 0..self.mdp.spec.horizon {
            let mut now = vec![0.0f64; nodes];
            for (node, slot) in now.iter_mut().enumerate() {
                let mut acc = 0.0;
                for a in 0..actions {
                    let pos = node * actions + a;
                    acc += self.true_r[pos] + self.grid.interpolate(&value, &self.true_p[pos]);
                }
                *slot = acc / actions as f64;
            }
            value = now;
        }
        self.grid.interpolate(&value, &self.mdp.spec.initial_state)
    }

    /// Walk one episode under `policy`, logging every interaction.
    fn execute_episode<R: Rng + ?Sized>(
        &self,
        policy: &GridPolicy,
        rng: &mut R,
    ) -> Result<(Vec<StepRecord>, usize)> {
        let mut s = self.mdp.spec.initial_state.clone();
        let mut steps = Vec::with_capacity(self.mdp.spec.horizon);
        let mut clipped_steps = 0;
        for h in 0..self.mdp.spec.horizon {
            let action = policy.action(h, &s).to_vec();
            let mut z = s.clone();
            z.extend_from_slice(&action);
            let (reward, next, clipped) = self.mdp.step_flagged(&z, rng)?;
            if clipped {
                clipped_steps += 1;
            }
            steps.push(StepRecord {
                state: s.clone(),
                action,
                reward,
                next_state: next.clone(),
                clipped,
            });
            s = next;
        }
        Ok((steps, clipped_steps))
    }

    fn coverage(&self, means: &[f64], devs: &[f64], beta: f64, slack: f64, truth: &[f64]) -> bool {
        means
            .iter()
            .zip(devs)
            .zip(truth)
            .all(|((m, d), t)| (t - m).abs() <= beta * d + slack + 1e-9)
    }

    /// Exact expected value of a grid policy under the true means, computed
    /// from the cached tables (same recursion as [`policy_value`], which
    /// re-evaluates the expansions and is too slow to call every episode).
    fn policy_value_from_tables(&self, policy: &GridPolicy) -> f64 {
        let nodes = self.node_count();
        let actions = self.actions().len();
        let mut value = vec![0.0f64; nodes];
        for h in (0..policy.horizon()).rev() {
            let mut now = vec![0.0f64; nodes];
            for (node, slot) in now.iter_mut().enumerate() {
                let pos = node * actions + policy.table[h][node];
                *slot = self.true_r[pos] + self.grid.interpolate(&value, &self.true_p[pos]);
            }
            value = now;
        }
        self.grid.interpolate(&value, &self.mdp.spec.initial_state)
    }
}

/// Split one seed into independent environment and learner streams.
fn split_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(0);
    let mut agent_rng = ChaCha8Rng::seed_from_u64(seed);
    agent_rng.set_stream(1);
    (env_rng, agent_rng)
}

/// Run the configured learner for the instance's full episode budget.
pub fn run_agent(mdp: &SyntheticMdp, config: &AgentConfig) -> Result<RunRecord> {
    if !(0.0 < config.delta && config.delta < 1.0) {
        return Err(Error::Input(format!("delta must be in (0, 1), got {}", config.delta)));
    }
    if !(0.0..1.0).contains(&config.epsilon) {
        return Err(Error::Input(format!("epsilon must be in [0, 1), got {}", config.epsilon)));
    }
    let ctx = RunContext::new(mdp, &config.planner)?;
    let v_star = ctx.oracle_value()?;
    let v_uniform = ctx.uniform_value();
    let episodes = match config.mode {
        AgentMode::UcrlNystrom => run_ucrl_nystrom(&ctx, config)?,
        AgentMode::UcrlQff => run_ucrl_qff(&ctx, config)?,
        AgentMode::Psrl => run_psrl(&ctx, config)?,
    };
    Ok(RunRecord {
        label: config.mode.label().to_string(),
        seed: config.seed,
        v_star,
        v_uniform,
        lipschitz_l: mdp.lipschitz_l,
        episodes,
    })
}

// ---------------------------------------------------------------------------
// Dictionary-mode optimist
// ---------------------------------------------------------------------------

fn run_ucrl_nystrom(ctx: &RunContext, config: &AgentConfig) -> Result<Vec<EpisodeRecord>> {
    let mdp = ctx.mdp;
    let m = mdp.spec.state_dim;
    let kernel_r = mdp.reward_fn.kernel().clone();
    let base_p = mdp.transition_fn.kernel().clone();
    let z_dim = mdp.spec.joint_dim();
    let kernel_p = stacked_kernel(&base_p, z_dim, m);
    let eta = eta_for(config.epsilon, config.delta, ctx.horizon_t);
    let lambda = lambda_for(config.epsilon);

    let stacked_queries: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|i| ctx.zs.iter().map(|z| stacked_input(z, i, m)).collect())
        .collect();

    let mut tracker_r =
        ExactGpTracker::new(kernel_r.clone(), ctx.ridge_r, ctx.zs.clone(), 1);
    // one tracker per output would duplicate the factor; the stacked space
    // carries every output's queries in one posterior
    let mut tracker_p = ExactGpTracker::new(
        kernel_p.clone(),
        ctx.ridge_p,
        stacked_queries.concat(),
        1,
    );

    let (mut env_rng, mut agent_rng) = split_rngs(config.seed);
    let mut records = Vec::with_capacity(mdp.spec.episode_count);
    let q = ctx.zs.len();

    for episode in 0..mdp.spec.episode_count {
        let started = Instant::now();
        // inclusion draws against the previous posterior
        let vars_r = tracker_r.candidate_variances()?;
        let vars_p = tracker_p.candidate_variances()?;
        let accept_r: Vec<bool> =
            vars_r.iter().map(|v| agent_rng.gen_range(0.0..1.0) < (eta * v).min(1.0)).collect();
        let accept_p: Vec<bool> =
            vars_p.iter().map(|v| agent_rng.gen_range(0.0..1.0) < (eta * v).min(1.0)).collect();
        let full_r = accept_r.iter().all(|&a| a);
        let full_p = accept_p.iter().all(|&a| a);

        let (policy, beta_r, beta_p, d_r, d_p, gamma_r, gamma_p, cov_r, cov_p);
        if full_r && full_p && !config.force_generic {
            let logdet_r = tracker_r.logdet_ratio();
            let logdet_p = tracker_p.logdet_ratio();
            beta_r = nystrom_width(
                mdp.noise.sigma_r,
                ctx.ridge_r,
                mdp.norm_cap_r,
                config.epsilon,
                config.delta,
                logdet_r,
            );
            beta_p = nystrom_width(
                mdp.noise.sigma_p,
                ctx.ridge_p,
                mdp.norm_cap_p,
                config.epsilon,
                config.delta,
                logdet_p,
            );
            let mu_r = tracker_r.grid_means(0);
            let dev_r = tracker_r.grid_devs()?;
            let mu_p_flat = tracker_p.grid_means(0);
            let dev_p_flat = tracker_p.grid_devs()?;
            let bands = BandTables {
                reward_mean: chunk_rows(&mu_r, ctx.actions().len()),
                reward_dev: chunk_rows(&dev_r, ctx.actions().len()),
                next_mean: stack_outputs(&mu_p_flat, q, m, ctx.actions().len()),
                next_dev_norm: stack_dev_norm(&dev_p_flat, q, m, ctx.actions().len()),
                beta_r,
                beta_p,
                slack_r: 0.0,
                slack_p: 0.0,
                lipschitz_l: mdp.lipschitz_l,
                reward_clip: mdp.norm_cap_r,
            };
            policy = optimistic_value_iterate_tables(
                &bands,
                mdp.spec.horizon,
                &ctx.grid,
                ctx.actions(),
            )?;
            d_r = tracker_r.len();
            d_p = tracker_p.len();
            gamma_r = 0.5 * logdet_r;
            gamma_p = 0.5 * logdet_p;
            cov_r = ctx.coverage(&mu_r, &dev_r, beta_r, 0.0, &ctx.true_r);
            let true_p_flat = flatten_truth(&ctx.true_p, q, m);
            cov_p = ctx.coverage(&mu_p_flat, &dev_p_flat, beta_p, 0.0, &true_p_flat);
        } else {
            let anchors_r: Vec<Vec<f64>> = tracker_r
                .points
                .iter()
                .zip(&accept_r)
                .filter(|(_, &a)| a)
                .map(|(p, _)| p.clone())
                .collect();
            let anchors_p: Vec<Vec<f64>> = tracker_p
                .points
                .iter()
                .zip(&accept_p)
                .filter(|(_, &a)| a)
                .map(|(p, _)| p.clone())
                .collect();
            let dict_r = NystromDictionary::from_anchors(
                &kernel_r,
                anchors_r,
                eta,
                lambda,
                config.epsilon,
            )?;
            let dict_p = NystromDictionary::from_anchors(
                &kernel_p,
                anchors_p,
                eta,
                lambda,
                config.epsilon,
            )?;
            d_r = dict_r.len();
            d_p = dict_p.len();
            let channel_r = ConfidenceChannel::from_history(
                ChannelKind::Reward,
                FeatureMap::Nystrom { dict: dict_r, kernel: kernel_r.clone() },
                ctx.ridge_r,
                mdp.noise.sigma_r,
                mdp.norm_cap_r,
                config.epsilon,
                config.delta,
                ctx.horizon_t,
                config.slack_coeff,
                &tracker_r.points,
                &tracker_r.targets[0],
            )?;
            let channel_p = ConfidenceChannel::from_history(
                ChannelKind::Transition { output_dim: m },
                FeatureMap::Nystrom { dict: dict_p, kernel: kernel_p.clone() },
                ctx.ridge_p,
                mdp.noise.sigma_p,
                mdp.norm_cap_p,
                config.epsilon,
                config.delta,
                ctx.horizon_t,
                config.slack_coeff,
                &tracker_p.points,
                &tracker_p.targets[0],
            )?;
            gamma_r = 0.5 * channel_r.posterior.logdet_ratio();
            gamma_p = 0.5 * channel_p.posterior.logdet_ratio();
            let set = PlausibleSet::from_channels(
                channel_r,
                channel_p,
                mdp.lipschitz_l,
                mdp.norm_cap_r,
            );
            beta_r = set.beta_r;
            beta_p = set.beta_p;
            let (c_r, c_p) = channel_coverage(ctx, &set, m)?;
            cov_r = c_r;
            cov_p = c_p;
            policy = optimistic_value_iterate(&set, mdp.spec.horizon, &ctx.grid, ctx.actions())?;
        }

        let planned_value = policy.initial_value(&mdp.spec.initial_state);
        let exact_value = ctx.policy_value_from_tables(&policy);
        let (steps, clipped_steps) = ctx.execute_episode(&policy, &mut env_rng)?;
        for step in &steps {
            let mut z = step.state.clone();
            z.extend_from_slice(&step.action);
            tracker_r.push(z.clone(), &[step.reward])?;
            for i in 0..m {
                tracker_p.push(stacked_input(&z, i, m), &[step.next_state[i]])?;
            }
        }
        records.push(EpisodeRecord {
            episode,
            policy_value: exact_value,
            planned_value,
            dict_size_r: d_r,
            dict_size_p: d_p,
            beta_r,
            beta_p,
            gamma_hat_r: gamma_r,
            gamma_hat_p: gamma_p,
            covered_r: cov_r,
            covered_p: cov_p,
            clipped_steps,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            steps,
        });
    }
    Ok(records)
}

/// Reshape a flat `[node·action]` vector into `[node][action]` rows.
fn chunk_rows(flat: &[f64], actions: usize) -> Vec<Vec<f64>> {
    flat.chunks(actions).map(|c| c.to_vec()).collect()
}

/// Reassemble per-output stacked grid vectors into `[node][action][output]`.
fn stack_outputs(flat: &[f64], q: usize, outputs: usize, actions: usize) -> Vec<Vec<Vec<f64>>> {
    let nodes = q / actions;
    let mut out = vec![vec![vec![0.0; outputs]; actions]; nodes];
    for i in 0..outputs {
        for (pos, v) in flat[i * q..(i + 1) * q].iter().enumerate() {
            out[pos / actions][pos % actions][i] = *v;
        }
    }
    out
}

/// 2-norm across outputs of per-output deviations, shaped `[node][action]`.
fn stack_dev_norm(flat: &[f64], q: usize, outputs: usize, actions: usize) -> Vec<Vec<f64>> {
    let nodes = q / actions;
    let mut out = vec![vec![0.0; actions]; nodes];
    for i in 0..outputs {
        for (pos, v) in flat[i * q..(i + 1) * q].iter().enumerate() {
            out[pos / actions][pos % actions] += v * v;
        }
    }
    for row in &mut out {
        for v in row {
            *v = v.sqrt();
        }
    }
    out
}

/// True transition means rearranged to match the stacked query ordering.
fn flatten_truth(true_p: &[Vec<f64>], q: usize, outputs: usize) -> Vec<f64> {
    let mut flat = vec![0.0; q * outputs];
    for (pos, means) in true_p.iter().enumerate() {
        for (i, v) in means.iter().enumerate() {
            flat[i * q + pos] = *v;
        }
    }
    flat
}

/// Band-coverage flags evaluated through the channel interface.
fn channel_coverage(ctx: &RunContext, set: &PlausibleSet, m: usize) -> Result<(bool, bool)> {
    let mut cov_r = true;
    let mut cov_p = true;
    for (pos, z) in ctx.zs.iter().enumerate() {
        let (mu, dev) = set.reward_channel.predict(z)?;
        if (ctx.true_r[pos] - mu).abs() > set.beta_r * dev + set.slack_r + 1e-9 {
            cov_r = false;
        }
        let (mus, devs) = set.transition_channel.predict_vector(z)?;
        for i in 0..m {
            if (ctx.true_p[pos][i] - mus[i]).abs() > set.beta_p * devs[i] + set.slack_p + 1e-9 {
                cov_p = false;
            }
        }
    }
    Ok((cov_r, cov_p))
}

// ---------------------------------------------------------------------------
// Quadrature-mode optimist
// ---------------------------------------------------------------------------

fn se_lengthscale(kernel: &KernelSpec) -> Result<f64> {
    match kernel {
        KernelSpec::Se { lengthscale } => Ok(*lengthscale),
        other => Err(Error::Input(format!(
            "quadrature features need an isotropic SE kernel, got {other:?}"
        ))),
    }
}

fn run_ucrl_qff(ctx: &RunContext, config: &AgentConfig) -> Result<Vec<EpisodeRecord>> {
    let mdp = ctx.mdp;
    let m = mdp.spec.state_dim;
    let z_dim = mdp.spec.joint_dim();
    let l_r = se_lengthscale(mdp.reward_fn.kernel())?;
    let l_p = se_lengthscale(mdp.transition_fn.kernel())?;
    let nodes_r = match config.qff_nodes {
        Some(n) => n,
        None => qff_schedule(l_r, ctx.horizon_t)?,
    };
    let nodes_p = match config.qff_nodes {
        Some(n) => n,
        None => qff_schedule(l_p, ctx.horizon_t)?,
    };
    let map_r = build_qff(l_r, z_dim, nodes_r)?;
    let map_p = build_qff(l_p, z_dim + 1, nodes_p)?;

    let mut channel_r = ConfidenceChannel::new(
        ChannelKind::Reward,
        FeatureMap::Qff { map: map_r },
        ctx.ridge_r,
        mdp.noise.sigma_r,
        mdp.norm_cap_r,
        config.epsilon,
        config.delta,
        ctx.horizon_t,
        config.slack_coeff,
    )?;
    let mut channel_p = ConfidenceChannel::new(
        ChannelKind::Transition { output_dim: m },
        FeatureMap::Qff { map: map_p },
        ctx.ridge_p,
        mdp.noise.sigma_p,
        mdp.norm_cap_p,
        config.epsilon,
        config.delta,
        ctx.horizon_t,
        config.slack_coeff,
    )?;

    let (mut env_rng, _) = split_rngs(config.seed);
    let mut records = Vec::with_capacity(mdp.spec.episode_count);
    for episode in 0..mdp.spec.episode_count {
        let started = Instant::now();
        let set = PlausibleSet::from_channels(
            channel_r.clone(),
            channel_p.clone(),
            mdp.lipschitz_l,
            mdp.norm_cap_r,
        );
        let policy =
            optimistic_value_iterate(&set, mdp.spec.horizon, &ctx.grid, ctx.actions())?;
        let planned_value = policy.initial_value(&mdp.spec.initial_state);
        let exact_value = ctx.policy_value_from_tables(&policy);
        let (cov_r, cov_p) = channel_coverage(ctx, &set, m)?;
        let (steps, clipped_steps) = ctx.execute_episode(&policy, &mut env_rng)?;
        let mut inputs_r = Vec::with_capacity(steps.len());
        let mut targets_r = Vec::with_capacity(steps.len());
        let mut inputs_p = Vec::with_capacity(steps.len() * m);
        let mut targets_p = Vec::with_capacity(steps.len() * m);
        for step in &steps {
            let mut z = step.state.clone();
            z.extend_from_slice(&step.action);
            inputs_r.push(z.clone());
            targets_r.push(step.reward);
            for i in 0..m {
                inputs_p.push(stacked_input(&z, i, m));
                targets_p.push(step.next_state[i]);
            }
        }
        channel_r.append(&inputs_r, &targets_r)?;
        channel_p.append(&inputs_p, &targets_p)?;
        records.push(EpisodeRecord {
            episode,
            policy_value: exact_value,
            planned_value,
            dict_size_r: set.reward_channel.map.dim(),
            dict_size_p: set.transition_channel.map.dim(),
            beta_r: set.beta_r,
            beta_p: set.beta_p,
            gamma_hat_r: 0.5 * set.reward_channel.posterior.logdet_ratio(),
            gamma_hat_p: 0.5 * set.transition_channel.posterior.logdet_ratio(),
            covered_r: cov_r,
            covered_p: cov_p,
            clipped_steps,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            steps,
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Posterior sampling
// ---------------------------------------------------------------------------

fn run_psrl(ctx: &RunContext, config: &AgentConfig) -> Result<Vec<EpisodeRecord>> {
    let mdp = ctx.mdp;
    let m = mdp.spec.state_dim;
    let kernel_r = mdp.reward_fn.kernel().clone();
    let base_p = mdp.transition_fn.kernel().clone();
    let z_dim = mdp.spec.joint_dim();
    let kernel_p = stacked_kernel(&base_p, z_dim, m);
    let q = ctx.zs.len();
    let actions = ctx.actions().len();

    let stacked_queries: Vec<Vec<f64>> = (0..m)
        .flat_map(|i| ctx.zs.iter().map(move |z| stacked_input(z, i, m)))
        .collect();
    let mut tracker_r = ExactGpTracker::new(kernel_r, ctx.ridge_r, ctx.zs.clone(), 1);
    let mut tracker_p = ExactGpTracker::new(kernel_p, ctx.ridge_p, stacked_queries, 1);
    let prior_r = tracker_r.prior_cov()?;
    let prior_p = tracker_p.prior_cov()?;

    let scale_r = mdp.noise.sigma_r / ctx.ridge_r.sqrt();
    let scale_p = mdp.noise.sigma_p / ctx.ridge_p.sqrt();
    let (mut env_rng, mut agent_rng) = split_rngs(config.seed);
    let mut records = Vec::with_capacity(mdp.spec.episode_count);

    for episode in 0..mdp.spec.episode_count {
        let started = Instant::now();
        let sample_r = sample_posterior_function(&tracker_r, &prior_r, scale_r, &mut agent_rng)?;
        let sample_p_all =
            sample_posterior_function(&tracker_p, &prior_p, scale_p, &mut agent_rng)?;

        let mut reward_tab = Vec::with_capacity(ctx.node_count());
        let mut next_tab = Vec::with_capacity(ctx.node_count());
        for node in 0..ctx.node_count() {
            let mut r_row = Vec::with_capacity(actions);
            let mut p_row = Vec::with_capacity(actions);
            for a in 0..actions {
                let pos = node * actions + a;
                r_row.push(sample_r[pos]);
                let mean: Vec<f64> = (0..m)
                    .map(|i| sample_p_all[i * q + pos].clamp(0.0, 1.0))
                    .collect();
                p_row.push(mean);
            }
            reward_tab.push(r_row);
            next_tab.push(p_row);
        }
        let policy = value_iterate_tables(
            reward_tab,
            next_tab,
            mdp.spec.horizon,
            &ctx.grid,
            ctx.actions(),
        )?;
        let planned_value = policy.initial_value(&mdp.spec.initial_state);
        let exact_value = ctx.policy_value_from_tables(&policy);

        // diagnostics: the exact-GP band at the dictionary agent's width
        let logdet_r = tracker_r.logdet_ratio();
        let logdet_p = tracker_p.logdet_ratio();
        let beta_r = nystrom_width(
            mdp.noise.sigma_r,
            ctx.ridge_r,
            mdp.norm_cap_r,
            0.0,
            config.delta,
            logdet_r,
        );
        let beta_p = nystrom_width(
            mdp.noise.sigma_p,
            ctx.ridge_p,
            mdp.norm_cap_p,
            0.0,
            config.delta,
            logdet_p,
        );
        let mu_r = tracker_r.grid_means(0);
        let dev_r = tracker_r.grid_devs()?;
        let mu_p = tracker_p.grid_means(0);
        let dev_p = tracker_p.grid_devs()?;
        let cov_r = ctx.coverage(&mu_r, &dev_r, beta_r, 0.0, &ctx.true_r);
        let true_p_flat = flatten_truth(&ctx.true_p, q, m);
        let cov_p = ctx.coverage(&mu_p, &dev_p, beta_p, 0.0, &true_p_flat);

        let d_r = tracker_r.len();
        let d_p = tracker_p.len();
        let (steps, clipped_steps) = ctx.execute_episode(&policy, &mut env_rng)?;
        for step in &steps {
            let mut z = step.state.clone();
            z.extend_from_slice(&step.action);
            tracker_r.push(z.clone(), &[step.reward])?;
            for i in 0..m {
                tracker_p.push(stacked_input(&z, i, m), &[step.next_state[i]])?;
            }
        }
        records.push(EpisodeRecord {
            episode,
            policy_value: exact_value,
            planned_value,
            dict_size_r: d_r,
            dict_size_p: d_p,
            beta_r,
            beta_p,
            gamma_hat_r: 0.5 * logdet_r,
            gamma_hat_p: 0.5 * logdet_p,
            covered_r: cov_r,
            covered_p: cov_p,
            clipped_steps,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            steps,
        });
    }
    Ok(records)
}

/// One exact function-space posterior draw over the tracker's query grid:
/// `f = μ̃ + scale·Chol(Σ)·ξ` with `Σ` the joint kernel-scale posterior
/// covariance.
fn sample_posterior_function<R: Rng + ?Sized>(
    tracker: &ExactGpTracker,
    prior: &ndarray::Array2<f64>,
    scale: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let means = tracker.grid_means(0);
    let cov = tracker.grid_cov(prior);
    let (chol, _) = crate::kernel::cholesky_with_jitter(&cov, "posterior draw covariance")?;
    let xi: Vec<f64> = (0..means.len())
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let mut out = means;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += chol[[i, j]] * xi[j];
        }
        *o += scale * acc;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Uniform baseline
// ---------------------------------------------------------------------------

/// Uniform-random action picks: the convergence-free reference run. The
/// recorded per-episode value is the exact expected value of the uniform
/// policy, so its regret column is noise-free.
pub fn run_random_baseline(
    mdp: &SyntheticMdp,
    planner: &PlannerConfig,
    seed: u64,
) -> Result<RunRecord> {
    let ctx = RunContext::new(mdp, planner)?;
    let v_star = ctx.oracle_value()?;
    let v_uniform = ctx.uniform_value();
    let (mut env_rng, mut agent_rng) = split_rngs(seed);
    let mut episodes = Vec::with_capacity(mdp.spec.episode_count);
    for episode in 0..mdp.spec.episode_count {
        let started = Instant::now();
        let mut s = mdp.spec.initial_state.clone();
        let mut steps = Vec::with_capacity(mdp.spec.horizon);
        let mut clipped_steps = 0;
        for _ in 0..mdp.spec.horizon {
            let a = ctx.actions()[agent_rng.gen_range(0..ctx.actions().len())].clone();
            let mut z = s.clone();
            z.extend_from_slice(&a);
            let (reward, next, clipped) = mdp.step_flagged(&z, &mut env_rng)?;
            if clipped {
                clipped_steps += 1;
            }
            steps.push(StepRecord { state: s, action: a, reward, next_state: next.clone(), clipped });
            s = next;
        }
        episodes.push(EpisodeRecord {
            episode,
            policy_value: v_uniform,
            planned_value: v_uniform,
            dict_size_r: 0,
            dict_size_p: 0,
            beta_r: 0.0,
            beta_p: 0.0,
            gamma_hat_r: 0.0,
            gamma_hat_p: 0.0,
            covered_r: true,
            covered_p: true,
            clipped_steps,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            steps,
        });
    }
    Ok(RunRecord {
        label: "uniform".into(),
        seed,
        v_star,
        v_uniform,
        lipschitz_l: mdp.lipschitz_l,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{default_kernel, default_noise, synthesize_mdp, MdpSpec};
    use crate::kernel::GramState;

    fn tiny_mdp(seed: u64, episodes: usize) -> SyntheticMdp {
        let spec = MdpSpec {
            state_dim: 1,
            action_dim: 1,
            horizon: 3,
            episode_count: episodes,
            action_grid: crate::planner::uniform_action_grid(5).unwrap(),
            initial_state: vec![0.5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synthesize_mdp(
            &spec,
            &default_kernel(),
            &default_kernel(),
            2.0,
            2.0,
            50,
            default_noise(),
            &PlannerConfig { state_nodes_per_dim: 11 },
            seed,
            &mut rng,
        )
        .unwrap()
    }

    fn tiny_config(mode: AgentMode, seed: u64) -> AgentConfig {
        AgentConfig {
            mode,
            seed,
            planner: PlannerConfig { state_nodes_per_dim: 11 },
            ..AgentConfig::default()
        }
    }

    #[test]
    fn incremental_factor_matches_batch_gram() {
        let kernel = default_kernel();
        let queries: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, 0.3]).collect();
        let mut tracker = ExactGpTracker::new(kernel.clone(), 3.0, queries.clone(), 1);
        let points: Vec<Vec<f64>> =
            (0..9).map(|i| vec![(i as f64 * 0.11).fract(), (i as f64 * 0.31).fract()]).collect();
        let targets: Vec<f64> = points.iter().map(|p| p[0] - 2.0 * p[1]).collect();
        for (p, y) in points.iter().zip(&targets) {
            tracker.push(p.clone(), &[*y]).unwrap();
        }
        let gram = GramState::build(kernel, points.clone(), 3.0).unwrap();
        let means = tracker.grid_means(0);
        let devs = tracker.grid_devs().unwrap();
        for (i, query) in queries.iter().enumerate() {
            let (mu, var) = gram.exact_posterior(&targets, query).unwrap();
            assert!((means[i] - mu).abs() < 1e-10, "mean {} vs {}", means[i], mu);
            assert!((devs[i] - var.sqrt()).abs() < 1e-10);
        }
        assert!((tracker.logdet_ratio() - 2.0 * gram.log_det_information()).abs() < 1e-9);
        let vars = tracker.candidate_variances().unwrap();
        for (p, v) in points.iter().zip(vars) {
            let (_, var) = gram.exact_posterior(&targets, p).unwrap();
            assert!((v - var).abs() < 1e-10);
        }
    }

    #[test]
    fn fast_path_matches_generic_channels() {
        let mdp = tiny_mdp(7, 3);
        let fast = run_agent(&mdp, &tiny_config(AgentMode::UcrlNystrom, 11)).unwrap();
        let generic = run_agent(
            &mdp,
            &AgentConfig { force_generic: true, ..tiny_config(AgentMode::UcrlNystrom, 11) },
        )
        .unwrap();
        assert_eq!(fast.episodes.len(), generic.episodes.len());
        for (a, b) in fast.episodes.iter().zip(&generic.episodes) {
            assert_eq!(a.dict_size_r, b.dict_size_r);
            assert!((a.policy_value - b.policy_value).abs() < 1e-7);
            assert!((a.planned_value - b.planned_value).abs() < 1e-7);
            assert!((a.beta_r - b.beta_r).abs() < 1e-7);
            assert!((a.beta_p - b.beta_p).abs() < 1e-7);
            assert!((a.gamma_hat_r - b.gamma_hat_r).abs() < 1e-7);
            assert_eq!(a.covered_r, b.covered_r);
            for (sa, sb) in a.steps.iter().zip(&b.steps) {
                assert_eq!(sa.action, sb.action);
                assert_eq!(sa.reward, sb.reward);
            }
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let mdp = tiny_mdp(3, 4);
        let one = run_agent(&mdp, &tiny_config(AgentMode::UcrlNystrom, 5)).unwrap();
        let two = run_agent(&mdp, &tiny_config(AgentMode::UcrlNystrom, 5)).unwrap();
        let strip = |r: &RunRecord| {
            let mut r = r.clone();
            for e in &mut r.episodes {
                e.wall_ms = 0.0;
            }
            r
        };
        assert_eq!(strip(&one), strip(&two));
    }

    #[test]
    fn optimism_holds_on_covered_episodes() {
        let mdp = tiny_mdp(13, 12);
        let record = run_agent(&mdp, &tiny_config(AgentMode::UcrlNystrom, 2)).unwrap();
        let mut covered = 0;
        for e in &record.episodes {
            if e.covered_r && e.covered_p {
                covered += 1;
                assert!(
                    e.planned_value >= record.v_star - 2e-9,
                    "episode {}: optimistic {} below {}",
                    e.episode,
                    e.planned_value,
                    record.v_star
                );
            }
        }
        assert!(covered as f64 >= 0.85 * record.episodes.len() as f64);
    }

    #[test]
    fn qff_agent_runs_on_wide_kernel() {
        let spec = MdpSpec {
            state_dim: 1,
            action_dim: 1,
            horizon: 2,
            episode_count: 2,
            action_grid: crate::planner::uniform_action_grid(3).unwrap(),
            initial_state: vec![0.5],
        };
        let kernel = KernelSpec::Se { lengthscale: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = synthesize_mdp(
            &spec,
            &kernel,
            &kernel,
            1.0,
            1.0,
            20,
            default_noise(),
            &PlannerConfig { state_nodes_per_dim: 7 },
            1,
            &mut rng,
        )
        .unwrap();
        let config = AgentConfig {
            qff_nodes: Some(3),
            ..tiny_config(AgentMode::UcrlQff, 4)
        };
        let record = run_agent(&mdp, &config).unwrap();
        assert_eq!(record.episodes.len(), 2);
        for e in &record.episodes {
            assert!(e.planned_value.is_finite());
            assert_eq!(e.dict_size_r, 2 * 3 * 3);
            assert!(e.beta_r >= 1.0);
        }
    }

    #[test]
    fn psrl_marginals_match_exact_posterior() {
        let kernel = default_kernel();
        let queries = vec![vec![0.25, 0.5], vec![0.7, 0.1]];
        let mut tracker = ExactGpTracker::new(kernel.clone(), 3.0, queries.clone(), 1);
        let points: Vec<Vec<f64>> =
            (0..8).map(|i| vec![(0.13 * i as f64).fract(), (0.29 * i as f64).fract()]).collect();
        for (i, p) in points.iter().enumerate() {
            tracker.push(p.clone(), &[(i as f64 * 0.7).sin()]).unwrap();
        }
        let sigma = 0.4;
        let scale = sigma / 3.0f64.sqrt();
        let prior = tracker.prior_cov().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let n = 4000;
        let mut acc = vec![0.0; 2];
        let mut acc2 = vec![0.0; 2];
        for _ in 0..n {
            let draw = sample_posterior_function(&tracker, &prior, scale, &mut rng).unwrap();
            for (k, v) in draw.iter().enumerate() {
                acc[k] += v;
                acc2[k] += v * v;
            }
        }
        let gram = GramState::build(kernel, points, 3.0).unwrap();
        let targets: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        for k in 0..2 {
            let (mu, var) = gram.exact_posterior(&targets, &queries[k]).unwrap();
            let mean = acc[k] / n as f64;
            let sample_var = acc2[k] / n as f64 - mean * mean;
            let want_var = scale * scale * var;
            assert!((mean - mu).abs() < 4.0 * (want_var / n as f64).sqrt() + 1e-6);
            assert!(
                (sample_var - want_var).abs() < 0.15 * want_var + 1e-8,
                "var {} vs {}",
                sample_var,
                want_var
            );
        }
    }

    #[test]
    fn psrl_episodes_complete_with_sane_records() {
        let mdp = tiny_mdp(21, 5);
        let record = run_agent(&mdp, &tiny_config(AgentMode::Psrl, 6)).unwrap();
        assert_eq!(record.episodes.len(), 5);
        for e in &record.episodes {
            assert!(e.policy_value.is_finite());
            assert!(e.policy_value <= record.v_star + 1e-9);
            assert!(e.gamma_hat_r >= 0.0);
        }
        assert_eq!(record.episodes[2].dict_size_r, 2 * 3);
    }

    #[test]
    fn table_policy_value_matches_direct_evaluation() {
        let mdp = tiny_mdp(61, 2);
        let planner = PlannerConfig { state_nodes_per_dim: 11 };
        let ctx = RunContext::new(&mdp, &planner).unwrap();
        let (policy, v_star) = crate::env::oracle_value(&mdp, &planner).unwrap();
        let direct = crate::env::policy_value(&mdp, &policy).unwrap();
        let tabled = ctx.policy_value_from_tables(&policy);
        assert!((direct - tabled).abs() < 1e-12, "{direct} vs {tabled}");
        assert!((ctx.oracle_value().unwrap() - v_star).abs() < 1e-12);
        let v_unif = crate::env::uniform_policy_value(&mdp, &planner).unwrap();
        assert!((ctx.uniform_value() - v_unif).abs() < 1e-12);
    }

    #[test]
    fn baseline_reports_exact_uniform_value() {
        let mdp = tiny_mdp(31, 6);
        let planner = PlannerConfig { state_nodes_per_dim: 11 };
        let record = run_random_baseline(&mdp, &planner, 9).unwrap();
        let v_unif = crate::env::uniform_policy_value(&mdp, &planner).unwrap();
        assert_eq!(record.episodes.len(), 6);
        for e in &record.episodes {
            assert_eq!(e.policy_value, v_unif);
        }
        let regret = record.cumulative_regret();
        assert!((regret[5] - 6.0 * (record.v_star - v_unif)).abs() < 1e-9);
    }

    #[test]
    fn regret_declines_on_a_small_run() {
        let mdp = tiny_mdp(41, 30);
        let record = run_agent(&mdp, &tiny_config(AgentMode::UcrlNystrom, 3)).unwrap();
        let regrets: Vec<f64> =
            record.episodes.iter().map(|e| record.v_star - e.policy_value).collect();
        let early: f64 = regrets[..10].iter().sum::<f64>() / 10.0;
        let late: f64 = regrets[20..].iter().sum::<f64>() / 10.0;
        assert!(
            late <= early + 1e-9,
            "late mean regret {late} above early {early}"
        );
        for e in &record.episodes {
            assert!(e.covered_r && e.covered_p);
        }
    }

    #[test]
    fn clip_fraction_counts_boundary_hits() {
        let mut mdp = tiny_mdp(51, 2);
        mdp.transition_scale = 0.0;
        mdp.transition_offset = vec![0.999];
        mdp.noise.sigma_p = 0.2;
        mdp.noise.kind = crate::env::NoiseKind::Gaussian;
        let record = run_random_baseline(&mdp, &PlannerConfig { state_nodes_per_dim: 11 }, 1).unwrap();
        assert!(record.clip_fraction() > 0.3);
    }
}
