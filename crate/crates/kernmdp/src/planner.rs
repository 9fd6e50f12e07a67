//! Finite-horizon value iteration on a state grid.
//!
//! Two modes share one backward recursion: plain value iteration on given
//! mean functions (used by the oracle and by posterior-sampling agents), and
//! optimistic value iteration where per-pair confidence bands inflate the
//! backup. Off-grid states are handled by multilinear interpolation of value
//! tables and nearest-node action lookup, so a policy is defined on the whole
//! continuous state box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::ConfidenceChannel;

/// Planner resolution knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub state_nodes_per_dim: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { state_nodes_per_dim: 51 }
    }
}

/// Tensor grid over the unit state box: one sorted node list per dimension.
/// Flat node indices are row-major with the last dimension fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    nodes: Vec<Vec<f64>>,
}

impl StateGrid {
    pub fn new(nodes: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Input("state grid needs at least one dimension".into()));
        }
        for dim in &nodes {
            if dim.is_empty() {
                return Err(Error::Input("state grid dimension has no nodes".into()));
            }
            if dim.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Input("state grid nodes must be strictly increasing".into()));
            }
        }
        Ok(Self { nodes })
    }

    /// Uniformly spaced nodes over [0, 1] in every dimension.
    pub fn uniform(dims: usize, nodes_per_dim: usize) -> Result<Self> {
        if nodes_per_dim < 2 {
            return Err(Error::Input("need at least two nodes per dimension".into()));
        }
        let step = 1.0 / (nodes_per_dim - 1) as f64;
        let line: Vec<f64> = (0..nodes_per_dim).map(|i| i as f64 * step).collect();
        Self::new(vec![line; dims])
    }

    pub fn dims(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().map(|d| d.len()).product()
    }

    /// Coordinates of the flat node index.
    pub fn coords(&self, mut index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dims()];
        for d in (0..self.dims()).rev() {
            let len = self.nodes[d].len();
            out[d] = self.nodes[d][index % len];
            index /= len;
        }
        out
    }

    /// Flat index of the grid node nearest to `s` (per-dimension nearest,
    /// ties toward the lower node).
    pub fn nearest(&self, s: &[f64]) -> usize {
        let mut index = 0;
        for d in 0..self.dims() {
            let line = &self.nodes[d];
            let x = s[d];
            let hi = line.partition_point(|&v| v < x).min(line.len() - 1);
            let lo = hi.saturating_sub(1);
            let pick = if (x - line[lo]).abs() <= (line[hi] - x).abs() { lo } else { hi };
            index = index * line.len() + pick;
        }
        index
    }

    /// Multilinear interpolation of a node table, with queries clamped into
    /// the grid's bounding box.
    pub fn interpolate(&self, values: &[f64], s: &[f64]) -> f64 {
        let m = self.dims();
        let mut lower = vec![0usize; m];
        let mut frac = vec![0.0f64; m];
        for d in 0..m {
            let line = &self.nodes[d];
            let last = line.len() - 1;
            let x = s[d].clamp(line[0], line[last]);
            if last == 0 {
                continue;
            }
            let i = line.partition_point(|&v| v <= x).saturating_sub(1).min(last - 1);
            lower[d] = i;
            frac[d] = ((x - line[i]) / (line[i + 1] - line[i])).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << m) {
            let mut weight = 1.0;
            let mut index = 0;
            for d in 0..m {
                let len = self.nodes[d].len();
                let hi = corner >> d & 1 == 1;
                weight *= if hi { frac[d] } else { 1.0 - frac[d] };
                let node = (lower[d] + usize::from(hi)).min(len - 1);
                index = index * len + node;
            }
            if weight != 0.0 {
                acc += weight * values[index];
            }
        }
        acc
    }
}

/// A finite-horizon grid policy with its value tables: `table[h][node]` is
/// the greedy action index at period `h` (0-based), `values[h][node]` the
/// backed-up value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub state_grid: StateGrid,
    pub action_grid: Vec<Vec<f64>>,
    pub table: Vec<Vec<usize>>,
    pub values: Vec<Vec<f64>>,
}

impl GridPolicy {
    pub fn horizon(&self) -> usize {
        self.table.len()
    }

    /// Greedy action (by nearest grid node) at period `h` for state `s`.
    pub fn action(&self, h: usize, s: &[f64]) -> &[f64] {
        &self.action_grid[self.table[h][self.state_grid.nearest(s)]]
    }

    /// Interpolated value of period `h` at state `s`.
    pub fn value(&self, h: usize, s: &[f64]) -> f64 {
        self.state_grid.interpolate(&self.values[h], s)
    }

    pub fn initial_value(&self, s1: &[f64]) -> f64 {
        self.value(0, s1)
    }
}

fn checked_eval<F>(f: &F, z: &[f64], what: &str) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let v = f(z);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{what} produced {v} at z = {z:?}")));
    }
    Ok(v)
}

struct BackupTables {
    /// reward[node][action]
    reward: Vec<Vec<f64>>,
    /// next_mean[node][action] -> m-vector
    next_mean: Vec<Vec<Vec<f64>>>,
    /// Optimism ingredients, absent for plain iteration:
    /// (reward deviation, transition deviation 2-norm) per [node][action].
    widths: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

/// The backward recursion shared by both planner modes. When `optimism` is
/// set, the reward entry is clipped optimism `min{μ̃+β·σ̃+slack, B_R}` and a
/// transition bonus `L·(β_P·‖σ̃_P‖₂ + slack_P)` is added at every period
/// except the last (where the next-state value is identically zero).
fn backward_recursion(
    tables: &BackupTables,
    grid: &StateGrid,
    action_grid: &[Vec<f64>],
    horizon: usize,
    optimism: Option<(f64, f64, f64, f64, f64)>, // (beta_r, beta_p, slack_r, slack_p, L) with reward clip applied upstream
) -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
    let nodes = grid.node_count();
    let mut table = vec![vec![0usize; nodes]; horizon];
    let mut values = vec![vec![0.0f64; nodes]; horizon];
    let mut next = vec![0.0f64; nodes];
    for h in (0..horizon).rev() {
        let backups = crate::parallel::map_indexed(nodes, |node| {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0usize;
            for (a, _) in action_grid.iter().enumerate() {
                let mut q = tables.reward[node][a]
                    + grid.interpolate(&next, &tables.next_mean[node][a]);
                if let (Some((_, beta_p, _, slack_p, lip)), Some((_, dev_p))) =
                    (optimism, tables.widths.as_ref())
                {
                    if h + 1 < horizon {
                        q += lip * (beta_p * dev_p[node][a] + slack_p);
                    }
                }
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            (best_a, best)
        });
        for (node, (a, v)) in backups.into_iter().enumerate() {
            table[h][node] = a;
            values[h][node] = v;
        }
        next.copy_from_slice(&values[h]);
    }
    (table, values)
}

/// Plain finite-horizon value iteration over given mean functions.
/// `reward` and `transition` take the concatenated `(s, a)` vector.
pub fn value_iterate<FR, FP>(
    reward: FR,
    transition: FP,
    horizon: usize,
    grid: &StateGrid,
    action_grid: &[Vec<f64>],
) -> Result<GridPolicy>
where
    FR: Fn(&[f64]) -> f64 + Sync,
    FP: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if horizon == 0 {
        return Err(Error::Input("horizon must be at least 1".into()));
    }
    if action_grid.is_empty() {
        return Err(Error::Input("action grid is empty".into()));
    }
    let nodes = grid.node_count();
    let rows = crate::parallel::try_map_indexed(nodes, |node| {
        let s = grid.coords(node);
        let mut r_row = Vec::with_capacity(action_grid.len());
        let mut p_row = Vec::with_capacity(action_grid.len());
        for a in action_grid {
            let mut z = s.clone();
            z.extend_from_slice(a);
            r_row.push(checked_eval(&reward, &z, "reward")?);
            let mean = transition(&z);
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "transition produced {mean:?} at z = {z:?}"
                )));
            }
            p_row.push(mean);
        }
        Ok((r_row, p_row))
    })?;
    let mut tables = BackupTables {
        reward: Vec::with_capacity(nodes),
        next_mean: Vec::with_capacity(nodes),
        widths: None,
    };
    for (r_row, p_row) in rows {
        tables.reward.push(r_row);
        tables.next_mean.push(p_row);
    }
    let (table, values) = backward_recursion(&tables, grid, action_grid, horizon, None);
    Ok(GridPolicy { state_grid: grid.clone(), action_grid: action_grid.to_vec(), table, values })
}

/// Plain value iteration over already-tabulated means: `reward[node][action]`
/// and `next_mean[node][action]`. Used when the model only exists as grid
/// samples (posterior draws) rather than as evaluable functions.
pub fn value_iterate_tables(
    reward: Vec<Vec<f64>>,
    next_mean: Vec<Vec<Vec<f64>>>,
    horizon: usize,
    grid: &StateGrid,
    action_grid: &[Vec<f64>],
) -> Result<GridPolicy> {
    if horizon == 0 {
        return Err(Error::Input("horizon must be at least 1".into()));
    }
    let nodes = grid.node_count();
    if reward.len() != nodes || next_mean.len() != nodes {
        return Err(Error::Dimension { expected: nodes, got: reward.len().min(next_mean.len()) });
    }
    for (r_row, p_row) in reward.iter().zip(&next_mean) {
        if r_row.len() != action_grid.len() || p_row.len() != action_grid.len() {
            return Err(Error::Dimension {
                expected: action_grid.len(),
                got: r_row.len().min(p_row.len()),
            });
        }
        if r_row.iter().any(|v| !v.is_finite())
            || p_row.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("tabulated model contains non-finite entries".into()));
        }
    }
    let tables = BackupTables { reward, next_mean, widths: None };
    let (table, values) = backward_recursion(&tables, grid, action_grid, horizon, None);
    Ok(GridPolicy { state_grid: grid.clone(), action_grid: action_grid.to_vec(), table, values })
}

/// The set of MDPs the optimistic planner reasons over: confidence bands for
/// both channels, the Lipschitz constant of plausible value functions, and
/// the reward magnitude cap.
#[derive(Debug, Clone)]
pub struct PlausibleSet {
    pub reward_channel: ConfidenceChannel,
    pub transition_channel: ConfidenceChannel,
    pub lipschitz_l: f64,
    pub reward_clip: f64,
    pub beta_r: f64,
    pub beta_p: f64,
    pub slack_r: f64,
    pub slack_p: f64,
}

impl PlausibleSet {
    /// Standard construction: widths and slacks come straight from the
    /// channels' confidence formulas.
    pub fn from_channels(
        reward_channel: ConfidenceChannel,
        transition_channel: ConfidenceChannel,
        lipschitz_l: f64,
        reward_clip: f64,
    ) -> Self {
        let beta_r = reward_channel.compute_width();
        let beta_p = transition_channel.compute_width();
        let slack_r = reward_channel.slack();
        let slack_p = transition_channel.slack();
        Self {
            reward_channel,
            transition_channel,
            lipschitz_l,
            reward_clip,
            beta_r,
            beta_p,
            slack_r,
            slack_p,
        }
    }
}

/// Optimistic value iteration: per-pair UCB backup
/// `Q_h = min{μ̃_R + β_R·σ̃_R + slack_R, B_R} + interp(V_{h+1}, μ̃_P)
///        + L·(β_P·‖σ̃_P‖₂ + slack_P)`,
/// the transition bonus being the maximal value gain over the band for an
/// L-Lipschitz continuation value (and therefore dropped in the final
/// period, whose continuation is identically zero).
pub fn optimistic_value_iterate(
    set: &PlausibleSet,
    horizon: usize,
    grid: &StateGrid,
    action_grid: &[Vec<f64>],
) -> Result<GridPolicy> {
    if horizon == 0 {
        return Err(Error::Input("horizon must be at least 1".into()));
    }
    if action_grid.is_empty() {
        return Err(Error::Input("action grid is empty".into()));
    }
    let nodes = grid.node_count();
    let rows = crate::parallel::try_map_indexed(nodes, |node| {
        let s = grid.coords(node);
        let mut r_row = Vec::with_capacity(action_grid.len());
        let mut p_row = Vec::with_capacity(action_grid.len());
        let mut dr_row = Vec::with_capacity(action_grid.len());
        let mut dp_row = Vec::with_capacity(action_grid.len());
        for a in action_grid {
            let mut z = s.clone();
            z.extend_from_slice(a);
            let (mu_r, dev_r) = set.reward_channel.predict(&z)?;
            let (mu_p, dev_p) = set.transition_channel.predict_vector(&z)?;
            let optimistic_r =
                (mu_r + set.beta_r * dev_r + set.slack_r).min(set.reward_clip);
            if !optimistic_r.is_finite() || mu_p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("channel prediction at z = {z:?}")));
            }
            r_row.push(optimistic_r);
            p_row.push(mu_p);
            dr_row.push(dev_r);
            dp_row.push(dev_p.iter().map(|d| d * d).sum::<f64>().sqrt());
        }
        Ok((r_row, p_row, dr_row, dp_row))
    })?;
    let mut reward = Vec::with_capacity(nodes);
    let mut next_mean = Vec::with_capacity(nodes);
    let mut dev_r = Vec::with_capacity(nodes);
    let mut dev_p = Vec::with_capacity(nodes);
    for (r_row, p_row, dr_row, dp_row) in rows {
        reward.push(r_row);
        next_mean.push(p_row);
        dev_r.push(dr_row);
        dev_p.push(dp_row);
    }
    let tables = BackupTables { reward, next_mean, widths: Some((dev_r, dev_p)) };
    let (table, values) = backward_recursion(
        &tables,
        grid,
        action_grid,
        horizon,
        Some((set.beta_r, set.beta_p, set.slack_r, set.slack_p, set.lipschitz_l)),
    );
    Ok(GridPolicy { state_grid: grid.clone(), action_grid: action_grid.to_vec(), table, values })
}

/// Posterior band tables for [`optimistic_value_iterate_tables`]: means and
/// deviations already evaluated at every `(node, action)` pair, with the
/// transition deviation pre-reduced to its 2-norm across outputs.
#[derive(Debug, Clone)]
pub struct BandTables {
    pub reward_mean: Vec<Vec<f64>>,
    pub reward_dev: Vec<Vec<f64>>,
    pub next_mean: Vec<Vec<Vec<f64>>>,
    pub next_dev_norm: Vec<Vec<f64>>,
    pub beta_r: f64,
    pub beta_p: f64,
    pub slack_r: f64,
    pub slack_p: f64,
    pub lipschitz_l: f64,
    pub reward_clip: f64,
}

/// Optimistic value iteration over pre-evaluated band tables — identical
/// backups to [`optimistic_value_iterate`], for callers whose posterior is
/// kept as grid tables instead of a query-able channel pair.
pub fn optimistic_value_iterate_tables(
    bands: &BandTables,
    horizon: usize,
    grid: &StateGrid,
    action_grid: &[Vec<f64>],
) -> Result<GridPolicy> {
    if horizon == 0 {
        return Err(Error::Input("horizon must be at least 1".into()));
    }
    if action_grid.is_empty() {
        return Err(Error::Input("action grid is empty".into()));
    }
    let nodes = grid.node_count();
    if bands.reward_mean.len() != nodes
        || bands.reward_dev.len() != nodes
        || bands.next_mean.len() != nodes
        || bands.next_dev_norm.len() != nodes
    {
        return Err(Error::Dimension { expected: nodes, got: bands.reward_mean.len() });
    }
    let mut reward = Vec::with_capacity(nodes);
    for node in 0..nodes {
        if bands.reward_mean[node].len() != action_grid.len() {
            return Err(Error::Dimension {
                expected: action_grid.len(),
                got: bands.reward_mean[node].len(),
            });
        }
        let row: Vec<f64> = bands.reward_mean[node]
            .iter()
            .zip(&bands.reward_dev[node])
            .map(|(mu, dev)| (mu + bands.beta_r * dev + bands.slack_r).min(bands.reward_clip))
            .collect();
        if row.iter().any(|v| !v.is_finite())
            || bands.next_mean[node].iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite(format!("band tables at node {node}")));
        }
        reward.push(row);
    }
    let tables = BackupTables {
        reward,
        next_mean: bands.next_mean.clone(),
        widths: Some((bands.reward_dev.clone(), bands.next_dev_norm.clone())),
    };
    let (table, values) = backward_recursion(
        &tables,
        grid,
        action_grid,
        horizon,
        Some((bands.beta_r, bands.beta_p, bands.slack_r, bands.slack_p, bands.lipschitz_l)),
    );
    Ok(GridPolicy { state_grid: grid.clone(), action_grid: action_grid.to_vec(), table, values })
}

/// 1-D action grids `{0, 1/(k−1), …, 1}` as single-coordinate vectors.
pub fn uniform_action_grid(count: usize) -> Result<Vec<Vec<f64>>> {
    if count < 1 {
        return Err(Error::Input("action grid needs at least one point".into()));
    }
    if count == 1 {
        return Ok(vec![vec![0.5]]);
    }
    let step = 1.0 / (count - 1) as f64;
    Ok((0..count).map(|i| vec![i as f64 * step]).collect())
}
