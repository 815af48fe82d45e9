//! Reynolds-style flocking control law.
//!
//! Each agent computes a velocity command from the positions of its
//! neighbors: a separation term pushing away from close neighbors (inverse
//! distance weighting), a cohesion term pulling toward the local centroid,
//! and a migration term of fixed magnitude toward a goal point. The sum of
//! separation and cohesion (`v_rey`) is kept separate from the final clamped
//! command because it also serves as the regression target for the vision
//! network.

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Migration is disabled below this distance to the goal; the unit
/// normalization is undefined there.
pub const MIGRATION_EPS: f64 = 1e-9;

/// If the horizontal projection of a command is shorter than this, the
/// heading is left unchanged.
pub const HEADING_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlockParams {
    pub n_agents: usize,
    /// Neighbor cutoff distance in meters.
    pub r_max: f64,
    /// Speed limit applied to the total command, m/s.
    pub v_max: f64,
    pub k_sep: f64,
    pub k_coh: f64,
    pub k_mig: f64,
}

impl Default for FlockParams {
    fn default() -> Self {
        FlockParams {
            n_agents: 9,
            r_max: 20.0,
            v_max: 2.0,
            k_sep: 7.0,
            k_coh: 1.0,
            k_mig: 1.0,
        }
    }
}

impl FlockParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be at least 1".into()));
        }
        if !(self.r_max > 0.0) {
            return Err(Error::Config(format!("r_max must be > 0, got {}", self.r_max)));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::Config(format!("v_max must be > 0, got {}", self.v_max)));
        }
        for (name, g) in [
            ("k_sep", self.k_sep),
            ("k_coh", self.k_coh),
            ("k_mig", self.k_mig),
        ] {
            if !(g >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub id: u16,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Heading about the vertical axis, wrapped to [-pi, pi).
    pub yaw: f64,
}

impl AgentState {
    pub fn at_rest(id: u16, position: Vec3) -> Self {
        AgentState {
            id,
            position,
            velocity: Vec3::zero(),
            yaw: 0.0,
        }
    }
}

fn check_agents(self_idx: usize, agents: &[AgentState]) -> Result<()> {
    if self_idx >= agents.len() {
        return Err(Error::InvalidIndex {
            index: self_idx,
            count: agents.len(),
        });
    }
    for (a, rest) in agents.iter().zip(1..).map(|(a, k)| (a, &agents[k..])) {
        if let Some(dup) = rest.iter().find(|b| b.id == a.id) {
            return Err(Error::DuplicateAgentId { id: dup.id });
        }
    }
    Ok(())
}

/// Indices of all agents strictly closer than `r_max` to agent `self_idx`.
pub fn neighbor_set(self_idx: usize, agents: &[AgentState], r_max: f64) -> Result<Vec<usize>> {
    check_agents(self_idx, agents)?;
    let p = agents[self_idx].position;
    Ok(agents
        .iter()
        .enumerate()
        .filter(|&(j, a)| j != self_idx && (a.position - p).norm() < r_max)
        .map(|(j, _)| j)
        .collect())
}

/// Separation: average inverse-square repulsion from each neighbor.
/// `rel_positions` are neighbor positions relative to the agent (p_j - p_i).
pub fn separation_cmd(rel_positions: &[Vec3], k_sep: f64) -> Result<Vec3> {
    if rel_positions.is_empty() {
        return Ok(Vec3::zero());
    }
    let mut acc = Vec3::zero();
    for &r in rel_positions {
        let n2 = r.norm_sq();
        if n2 == 0.0 {
            return Err(Error::DegenerateGeometry);
        }
        acc += r / n2;
    }
    Ok(acc * (-k_sep / rel_positions.len() as f64))
}

/// Cohesion: attraction toward the centroid of the neighbors.
pub fn cohesion_cmd(rel_positions: &[Vec3], k_coh: f64) -> Vec3 {
    if rel_positions.is_empty() {
        return Vec3::zero();
    }
    let mut acc = Vec3::zero();
    for &r in rel_positions {
        acc += r;
    }
    acc * (k_coh / rel_positions.len() as f64)
}

/// Constant-magnitude pull toward the goal; zero within `MIGRATION_EPS` of it.
pub fn migration_cmd(rel_goal: Vec3, k_mig: f64) -> Vec3 {
    match rel_goal.normalized(MIGRATION_EPS) {
        Some(dir) => dir * k_mig,
        None => Vec3::zero(),
    }
}

/// Limit a velocity to `v_max` while preserving direction.
pub fn clamp_speed(v: Vec3, v_max: f64) -> Vec3 {
    v.clamped(v_max)
}

/// The full control law for one agent.
///
/// Returns `(v_total, v_rey)`: the clamped command actually flown, and the
/// unclamped separation + cohesion sum used as the learning target.
pub fn full_command(
    self_idx: usize,
    agents: &[AgentState],
    goal: Vec3,
    params: &FlockParams,
) -> Result<(Vec3, Vec3)> {
    command_with_goal(self_idx, agents, Some(goal), params)
}

/// Like [`full_command`] but with an optional goal; `None` drops the
/// migration term entirely (used for goal-free runs).
pub fn command_with_goal(
    self_idx: usize,
    agents: &[AgentState],
    goal: Option<Vec3>,
    params: &FlockParams,
) -> Result<(Vec3, Vec3)> {
    let neighbors = neighbor_set(self_idx, agents, params.r_max)?;
    let p = agents[self_idx].position;
    let rel: Vec<Vec3> = neighbors.iter().map(|&j| agents[j].position - p).collect();
    let v_rey = separation_cmd(&rel, params.k_sep)? + cohesion_cmd(&rel, params.k_coh);
    let v_mig = match goal {
        Some(g) => migration_cmd(g - p, params.k_mig),
        None => Vec3::zero(),
    };
    let v_total = clamp_speed(v_rey + v_mig, params.v_max);
    Ok((v_total, v_rey))
}

/// Heading update rule: yaw follows the horizontal projection of the
/// commanded velocity, keeping the previous yaw for near-vertical or
/// near-zero commands.
pub fn heading_from_command(prev_yaw: f64, cmd: Vec3) -> f64 {
    let h = cmd.horizontal();
    if h.norm() < HEADING_EPS {
        prev_yaw
    } else {
        crate::math::wrap_angle(h.y.atan2(h.x))
    }
}
