//! Discrete-time world model: spawning, kinematic integration, and
//! run-termination detection.
//!
//! The world is deliberately simple — first-order kinematics at the 10 Hz
//! control rate. The interesting behavior lives in the controllers; this
//! module just moves points around deterministically.

use rand::Rng;

use crate::error::{Error, Result};
use crate::flocking::{heading_from_command, AgentState};
use crate::math::Vec3;

/// Total rejection-sampling draws allowed before spawning is declared
/// infeasible.
pub const SPAWN_ATTEMPT_CAP: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackingMode {
    /// Commands take effect instantly: v <- cmd.
    Perfect,
    /// First-order lag toward the command with time constant `tau` seconds:
    /// v <- v + (1 - e^(-dt/tau)) (cmd - v).
    Lag { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldConfig {
    pub dt: f64,
    pub spawn_cube_side: f64,
    pub spawn_min_dist: f64,
    pub goal_radius: f64,
    pub collision_thresh: f64,
    pub dispersion_thresh: f64,
    pub max_steps: usize,
    pub rng_seed: u64,
    pub tracking: TrackingMode,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            dt: 0.1,
            spawn_cube_side: 4.0,
            spawn_min_dist: 1.5,
            goal_radius: 1.0,
            collision_thresh: 1.0,
            dispersion_thresh: 7.0,
            max_steps: 2000,
            rng_seed: 0,
            tracking: TrackingMode::Perfect,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.spawn_min_dist < self.spawn_cube_side * 3.0_f64.sqrt()) {
            return Err(Error::Config(format!(
                "spawn_min_dist {} cannot exceed the cube diagonal {}",
                self.spawn_min_dist,
                self.spawn_cube_side * 3.0_f64.sqrt()
            )));
        }
        if self.collision_thresh > self.dispersion_thresh {
            return Err(Error::Config(format!(
                "collision_thresh {} must not exceed dispersion_thresh {}",
                self.collision_thresh, self.dispersion_thresh
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if let TrackingMode::Lag { tau } = self.tracking {
            if !(tau > 0.0) {
                return Err(Error::Config(format!("lag tau must be > 0, got {tau}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationKind {
    GoalReached,
    Collision,
    Dispersion,
    MaxSteps,
}

impl std::fmt::Display for TerminationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TerminationKind::GoalReached => "goal_reached",
            TerminationKind::Collision => "collision",
            TerminationKind::Dispersion => "dispersion",
            TerminationKind::MaxSteps => "max_steps",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    pub kind: TerminationKind,
    /// Step index at which the run ended.
    pub step: usize,
}

/// Place `n` agents uniformly in the spawn cube by rejection sampling,
/// keeping every pair at least `spawn_min_dist` apart. Velocities and yaw
/// start at zero.
pub fn spawn_agents(
    config: &WorldConfig,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<AgentState>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Config("cannot spawn zero agents".into()));
    }
    if n > u16::MAX as usize {
        return Err(Error::Config(format!("agent count {n} exceeds id range")));
    }
    let half = config.spawn_cube_side / 2.0;
    let mut agents: Vec<AgentState> = Vec::with_capacity(n);
    let mut attempts = 0u32;
    while agents.len() < n {
        if attempts >= SPAWN_ATTEMPT_CAP {
            return Err(Error::InfeasibleSpawn { attempts });
        }
        attempts += 1;
        let candidate = Vec3::new(
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
        );
        let ok = agents
            .iter()
            .all(|a| (a.position - candidate).norm() >= config.spawn_min_dist);
        if ok {
            agents.push(AgentState::at_rest(agents.len() as u16, candidate));
        }
    }
    Ok(agents)
}

/// Advance every agent by one control period under its velocity command.
pub fn step(agents: &mut [AgentState], commands: &[Vec3], config: &WorldConfig) -> Result<()> {
    if agents.len() != commands.len() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "{} commands for {} agents",
                commands.len(),
                agents.len()
            ),
        });
    }
    for (i, cmd) in commands.iter().enumerate() {
        if !cmd.is_finite() {
            return Err(Error::NonFinite {
                context: format!("velocity command for agent index {i}"),
            });
        }
    }
    for (agent, &cmd) in agents.iter_mut().zip(commands) {
        match config.tracking {
            TrackingMode::Perfect => agent.velocity = cmd,
            TrackingMode::Lag { tau } => {
                let gain = 1.0 - (-config.dt / tau).exp();
                agent.velocity += (cmd - agent.velocity) * gain;
            }
        }
        agent.position += agent.velocity * config.dt;
        agent.yaw = heading_from_command(agent.yaw, cmd);
    }
    Ok(())
}

/// Check the run-ending conditions for the state after `step` steps.
///
/// Tie-break when several fire at once: collision dominates (it is the
/// safety-relevant outcome), then dispersion, then goal, with the step cap
/// only reported when nothing else ended the run.
pub fn check_termination(
    agents: &[AgentState],
    goals: &[Option<Vec3>],
    config: &WorldConfig,
    step: usize,
) -> Option<RunOutcome> {
    let mut min_pair = f64::INFINITY;
    let mut max_pair = f64::NEG_INFINITY;
    for i in 0..agents.len() {
        for j in (i + 1)..agents.len() {
            let d = (agents[i].position - agents[j].position).norm();
            min_pair = min_pair.min(d);
            max_pair = max_pair.max(d);
        }
    }
    let done = |kind| Some(RunOutcome { kind, step });
    if agents.len() >= 2 {
        if min_pair < config.collision_thresh {
            return done(TerminationKind::Collision);
        }
        if max_pair > config.dispersion_thresh {
            return done(TerminationKind::Dispersion);
        }
    }
    let goal_hit = agents.iter().zip(goals).any(|(a, g)| {
        g.map_or(false, |g| (a.position - g).norm() <= config.goal_radius)
    });
    if goal_hit {
        return done(TerminationKind::GoalReached);
    }
    if step >= config.max_steps {
        return done(TerminationKind::MaxSteps);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spawn_single_agent_inside_cube() {
        let config = WorldConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agents = spawn_agents(&config, 1, &mut rng).unwrap();
        assert_eq!(agents.len(), 1);
        let p = agents[0].position;
        for c in [p.x, p.y, p.z] {
            assert!(c.abs() <= 2.0);
        }
        assert_eq!(agents[0].velocity, Vec3::zero());
        assert_eq!(agents[0].yaw, 0.0);
    }

    #[test]
    fn spawn_nine_agents_keeps_min_distance() {
        let config = WorldConfig::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let agents = spawn_agents(&config, 9, &mut rng).unwrap();
            assert_eq!(agents.len(), 9);
            let mut pairs = 0;
            for i in 0..9 {
                for j in (i + 1)..9 {
                    let d = (agents[i].position - agents[j].position).norm();
                    assert!(d >= 1.5, "seed {seed}: pair ({i},{j}) at {d}");
                    pairs += 1;
                }
                let p = agents[i].position;
                assert!(p.x.abs() <= 2.0 && p.y.abs() <= 2.0 && p.z.abs() <= 2.0);
            }
            assert_eq!(pairs, 36);
        }
    }

    #[test]
    fn spawn_impossible_density_errors() {
        let config = WorldConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match spawn_agents(&config, 1000, &mut rng) {
            Err(Error::InfeasibleSpawn { attempts }) => {
                assert_eq!(attempts, SPAWN_ATTEMPT_CAP)
            }
            other => panic!("expected infeasible spawn, got {other:?}"),
        }
    }

    #[test]
    fn spawn_is_deterministic() {
        let config = WorldConfig::default();
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let first = spawn_agents(&config, 9, &mut a).unwrap();
        let second = spawn_agents(&config, 9, &mut b).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn perfect_tracking_euler_step() {
        let config = WorldConfig::default();
        let mut agents = vec![AgentState::at_rest(0, Vec3::zero())];
        step(&mut agents, &[Vec3::new(1.0, 0.0, 0.0)], &config).unwrap();
        assert!((agents[0].position - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(agents[0].velocity, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(agents[0].yaw, 0.0);
    }

    #[test]
    fn zero_command_freezes_agent() {
        let config = WorldConfig::default();
        let mut agents = vec![AgentState {
            id: 0,
            position: Vec3::new(1.0, 2.0, 3.0),
            velocity: Vec3::new(0.5, 0.0, 0.0),
            yaw: 0.7,
        }];
        step(&mut agents, &[Vec3::zero()], &config).unwrap();
        assert_eq!(agents[0].position, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(agents[0].velocity, Vec3::zero());
        assert_eq!(agents[0].yaw, 0.7);
    }

    #[test]
    fn lag_tracking_matches_closed_form() {
        // One step from rest toward a unit command with tau = 0.3, dt = 0.1:
        // v = 1 - e^(-1/3). Constant independently of this implementation.
        const ONE_STEP_GAIN: f64 = 0.28346868942621073;
        let config = WorldConfig {
            tracking: TrackingMode::Lag { tau: 0.3 },
            ..WorldConfig::default()
        };
        let cmd = Vec3::new(1.0, 0.0, 0.0);
        let mut agents = vec![AgentState::at_rest(0, Vec3::zero())];
        step(&mut agents, &[cmd], &config).unwrap();
        assert!((agents[0].velocity.x - ONE_STEP_GAIN).abs() < 1e-12);

        // After k steps the closed form is v_k = 1 - e^(-k dt / tau).
        for k in 2..=30 {
            step(&mut agents, &[cmd], &config).unwrap();
            let expect = 1.0 - (-(k as f64) * 0.1 / 0.3).exp();
            assert!(
                (agents[0].velocity.x - expect).abs() < 1e-9,
                "step {k}: {} vs {expect}",
                agents[0].velocity.x
            );
        }
        // Long-run convergence toward the command.
        assert!((agents[0].velocity.x - 1.0).abs() < 5e-5);
    }

    #[test]
    fn step_rejects_bad_input() {
        let config = WorldConfig::default();
        let mut agents = vec![AgentState::at_rest(0, Vec3::zero())];
        assert!(matches!(
            step(&mut agents, &[], &config),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            step(&mut agents, &[Vec3::new(f64::NAN, 0.0, 0.0)], &config),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn step_preserves_ids() {
        let config = WorldConfig::default();
        let mut agents = vec![
            AgentState::at_rest(4, Vec3::zero()),
            AgentState::at_rest(9, Vec3::new(2.0, 0.0, 0.0)),
        ];
        step(
            &mut agents,
            &[Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.0)],
            &config,
        )
        .unwrap();
        assert_eq!(agents.len(), 2);
        assert_eq!(agents[0].id, 4);
        assert_eq!(agents[1].id, 9);
    }

    fn pair_at(d: f64) -> Vec<AgentState> {
        vec![
            AgentState::at_rest(0, Vec3::zero()),
            AgentState::at_rest(1, Vec3::new(d, 0.0, 0.0)),
        ]
    }

    #[test]
    fn termination_thresholds() {
        let config = WorldConfig::default();
        let no_goals = vec![None, None];
        let out = check_termination(&pair_at(0.9), &no_goals, &config, 5).unwrap();
        assert_eq!(out.kind, TerminationKind::Collision);
        assert_eq!(out.step, 5);

        let out = check_termination(&pair_at(7.5), &no_goals, &config, 5).unwrap();
        assert_eq!(out.kind, TerminationKind::Dispersion);

        // Comfortable pair distance, one agent near its goal.
        let agents = pair_at(3.0);
        let goals = vec![Some(Vec3::new(0.0, 0.8, 0.0)), None];
        let out = check_termination(&agents, &goals, &config, 5).unwrap();
        assert_eq!(out.kind, TerminationKind::GoalReached);

        assert!(check_termination(&pair_at(3.0), &no_goals, &config, 5).is_none());
    }

    #[test]
    fn termination_priority_order() {
        let config = WorldConfig::default();
        // Three agents: one colliding pair, one dispersed pair, and a goal
        // right on top of agent 0. Collision must win.
        let agents = vec![
            AgentState::at_rest(0, Vec3::zero()),
            AgentState::at_rest(1, Vec3::new(0.9, 0.0, 0.0)),
            AgentState::at_rest(2, Vec3::new(8.0, 0.0, 0.0)),
        ];
        let goals = vec![Some(Vec3::zero()), None, None];
        let out = check_termination(&agents, &goals, &config, 1).unwrap();
        assert_eq!(out.kind, TerminationKind::Collision);

        // Remove the collision: dispersion beats the goal.
        let agents = vec![
            AgentState::at_rest(0, Vec3::zero()),
            AgentState::at_rest(1, Vec3::new(1.5, 0.0, 0.0)),
            AgentState::at_rest(2, Vec3::new(8.0, 0.0, 0.0)),
        ];
        let out = check_termination(&agents, &goals, &config, 1).unwrap();
        assert_eq!(out.kind, TerminationKind::Dispersion);
    }

    #[test]
    fn max_steps_is_last_resort() {
        let config = WorldConfig {
            max_steps: 10,
            ..WorldConfig::default()
        };
        let agents = pair_at(3.0);
        let goals = vec![None, None];
        assert!(check_termination(&agents, &goals, &config, 9).is_none());
        let out = check_termination(&agents, &goals, &config, 10).unwrap();
        assert_eq!(out.kind, TerminationKind::MaxSteps);
    }

    #[test]
    fn single_agent_skips_pair_checks() {
        let config = WorldConfig::default();
        let agents = vec![AgentState::at_rest(0, Vec3::zero())];
        assert!(check_termination(&agents, &[None], &config, 0).is_none());
        let out = check_termination(
            &agents,
            &[Some(Vec3::new(0.5, 0.0, 0.0))],
            &config,
            0,
        )
        .unwrap();
        assert_eq!(out.kind, TerminationKind::GoalReached);
    }

    #[test]
    fn config_validation() {
        assert!(WorldConfig::default().validate().is_ok());
        let bad = WorldConfig {
            dt: 0.0,
            ..WorldConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = WorldConfig {
            collision_thresh: 8.0,
            ..WorldConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = WorldConfig {
            spawn_min_dist: 10.0,
            ..WorldConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
