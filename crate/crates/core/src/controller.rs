//! Closed-loop control: the position-based reference controller and the
//! vision-based neural controller, plus the episode runner that drives
//! either against the simulated world.
//!
//! Both controllers share one composition: a separation+cohesion part
//! (ground truth or predicted), plus migration toward a goal, clamped to
//! `v_max`. Episodes are synchronous — every controller in a step sees the
//! same world snapshot, and nobody observes another agent's same-step move.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::flocking::{
    clamp_speed, command_with_goal, migration_cmd, AgentState, FlockParams,
};
use crate::math::{body_to_world, Vec3};
use crate::metrics::{metrics_row, MetricsRow};
use crate::nn::network::Network;
use crate::render::{render_view, CameraRig, CubeImage, RenderStyle};
use crate::world::{check_termination, spawn_agents, step, RunOutcome, WorldConfig};

/// Command source for an episode.
pub enum Controller<'a> {
    /// Ground-truth flocking law on shared positions.
    PositionBased,
    /// Trained network on rendered views. `alpha` enables the low-pass
    /// filter; `None` sends raw predictions (the default protocol).
    VisionBased {
        network: &'a Network,
        alpha: Option<f64>,
    },
}

/// The reference command: exactly the flocking law's clamped total.
pub fn position_cmd(
    self_idx: usize,
    agents: &[AgentState],
    goal: Option<Vec3>,
    params: &FlockParams,
) -> Result<Vec3> {
    Ok(command_with_goal(self_idx, agents, goal, params)?.0)
}

/// Finish the vision pipeline from a body-frame prediction: rotate into the
/// world frame, add migration, clamp. Mirrors the position-based
/// composition so the two controllers differ only in where the
/// separation+cohesion term comes from.
pub fn compose_vision_command(
    pred_body: Vec3,
    agent: &AgentState,
    goal: Option<Vec3>,
    params: &FlockParams,
) -> Vec3 {
    let v_rey = body_to_world(agent.yaw, pred_body);
    let v_mig = match goal {
        Some(g) => migration_cmd(g - agent.position, params.k_mig),
        None => Vec3::zero(),
    };
    clamp_speed(v_rey + v_mig, params.v_max)
}

/// Full vision command for one agent: standardize the rendered view, run
/// the network in eval mode, and compose. A non-finite prediction is a
/// controller fault (`Error::NonFinite`); the episode runner substitutes a
/// zero command and logs it.
pub fn vision_cmd(
    network: &Network,
    agent: &AgentState,
    image: &CubeImage,
    goal: Option<Vec3>,
    params: &FlockParams,
) -> Result<Vec3> {
    let x = network.standardize(&image.pixels);
    let pred = network.predict(&x)?;
    let pred = Vec3::new(pred[0] as f64, pred[1] as f64, pred[2] as f64);
    if !pred.is_finite() {
        return Err(Error::NonFinite {
            context: format!("network prediction for agent {}", agent.id),
        });
    }
    Ok(compose_vision_command(pred, agent, goal, params))
}

/// Per-agent exponential moving average over commands:
/// `out = α·new + (1−α)·previous output`, seeded by the first command.
pub struct LowPassFilter {
    alpha: f64,
    prev: Vec<Option<Vec3>>,
}

impl LowPassFilter {
    pub fn new(alpha: f64, n_agents: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("filter alpha {alpha} outside (0,1]")));
        }
        Ok(LowPassFilter {
            alpha,
            prev: vec![None; n_agents],
        })
    }

    pub fn apply(&mut self, agent_idx: usize, cmd: Vec3) -> Vec3 {
        let out = match self.prev[agent_idx] {
            Some(prev) => cmd * self.alpha + prev * (1.0 - self.alpha),
            None => cmd,
        };
        self.prev[agent_idx] = Some(out);
        out
    }
}

/// Everything an episode needs besides the controller itself.
#[derive(Debug, Clone, Default)]
pub struct EpisodeConfig {
    pub world: WorldConfig,
    pub flock: FlockParams,
    pub rig: CameraRig,
    pub style: RenderStyle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: u32,
    pub agent_id: u16,
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
    pub command: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultRecord {
    pub step: u32,
    pub agent_id: u16,
    pub context: String,
}

#[derive(Debug)]
pub struct EpisodeResult {
    /// One row per agent per commanded step (pre-step state + command).
    pub trajectory: Vec<TrajectoryRow>,
    /// One row per visited state including the terminal one; empty for
    /// single-agent episodes, where pairwise metrics are undefined.
    pub metrics: Vec<MetricsRow>,
    pub outcome: RunOutcome,
    pub faults: Vec<FaultRecord>,
}

/// Run one closed-loop episode. Agents spawn from `seed`, then each step:
/// check termination, snapshot the world, compute every command from that
/// snapshot, advance, and update headings from the commands flown.
pub fn run_episode(
    controller: &Controller,
    goals: &[Option<Vec3>],
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    cfg.flock.validate()?;
    cfg.world.validate()?;
    let n = cfg.flock.n_agents;
    if goals.len() != n {
        return Err(Error::Config(format!(
            "{} goals for {n} agents",
            goals.len()
        )));
    }
    let mut filter = match controller {
        Controller::VisionBased {
            alpha: Some(alpha), ..
        } => Some(LowPassFilter::new(*alpha, n)?),
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = spawn_agents(&cfg.world, n, &mut rng)?;

    let mut trajectory = Vec::new();
    let mut metrics = Vec::new();
    let mut faults = Vec::new();
    let mut k = 0usize;
    loop {
        let done = check_termination(&agents, goals, &cfg.world, k);
        if n >= 2 {
            metrics.push(metrics_row(k, &agents)?);
        }
        if let Some(outcome) = done {
            return Ok(EpisodeResult {
                trajectory,
                metrics,
                outcome,
                faults,
            });
        }

        let snapshot = agents.clone();
        // (command, fault context) per agent, all from the same snapshot.
        let raw: Vec<(Vec3, Option<String>)> = match controller {
            Controller::PositionBased => (0..n)
                .map(|i| Ok((position_cmd(i, &snapshot, goals[i], &cfg.flock)?, None)))
                .collect::<Result<_>>()?,
            Controller::VisionBased { network, .. } => (0..n)
                .into_par_iter()
                .map(|i| {
                    let others: Vec<AgentState> = snapshot
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, a)| *a)
                        .collect();
                    let image = render_view(&snapshot[i], &others, &cfg.rig, &cfg.style)?;
                    match vision_cmd(network, &snapshot[i], &image, goals[i], &cfg.flock) {
                        Ok(cmd) => Ok((cmd, None)),
                        Err(Error::NonFinite { context }) => Ok((Vec3::zero(), Some(context))),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()?,
        };

        let mut commands = Vec::with_capacity(n);
        for (i, (cmd, fault)) in raw.into_iter().enumerate() {
            // Faults bypass the filter and leave its state untouched, so
            // smoothing resumes from the last healthy command.
            let cmd = match (&mut filter, &fault) {
                (Some(f), None) => f.apply(i, cmd),
                _ => cmd,
            };
            if let Some(context) = fault {
                faults.push(FaultRecord {
                    step: k as u32,
                    agent_id: snapshot[i].id,
                    context,
                });
            }
            trajectory.push(TrajectoryRow {
                step: k as u32,
                agent_id: snapshot[i].id,
                position: snapshot[i].position,
                velocity: snapshot[i].velocity,
                yaw: snapshot[i].yaw,
                command: cmd,
            });
            commands.push(cmd);
        }

        step(&mut agents, &commands, &cfg.world)?;
        k += 1;
    }
}

/// Render trajectory rows as CSV (with header).
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from("step,agent_id,px,py,pz,vx,vy,vz,yaw,cmd_x,cmd_y,cmd_z\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.agent_id,
            r.position.x,
            r.position.y,
            r.position.z,
            r.velocity.x,
            r.velocity.y,
            r.velocity.z,
            r.yaw,
            r.command.x,
            r.command.y,
            r.command.z
        )
        .unwrap();
    }
    out
}
