//! Flocking-quality measures: inter-agent distance extremes and the
//! velocity-alignment order parameter.

use crate::error::{Error, Result};
use crate::flocking::AgentState;
use crate::math::Vec3;

/// Velocities at or below this norm have no direction; the order parameter
/// is undefined for them.
pub const ORDER_EPS: f64 = 1e-9;

/// One step of the per-episode metrics series. `order` is `None` on steps
/// where any agent is (numerically) stationary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub order: Option<f64>,
}

/// Minimum and maximum distance over all unordered agent pairs.
pub fn min_max_distance(agents: &[AgentState]) -> Result<(f64, f64)> {
    if agents.len() < 2 {
        return Err(Error::UndefinedMetric {
            reason: format!(
                "pairwise distances need at least 2 agents, got {}",
                agents.len()
            ),
        });
    }
    let mut d_min = f64::INFINITY;
    let mut d_max = f64::NEG_INFINITY;
    for i in 0..agents.len() {
        for j in (i + 1)..agents.len() {
            let d = (agents[i].position - agents[j].position).norm();
            d_min = d_min.min(d);
            d_max = d_max.max(d);
        }
    }
    Ok((d_min, d_max))
}

/// Mean pairwise cosine similarity of the velocity directions:
/// (1/(|A|(|A|−1))) Σ_i Σ_{j≠i} cos(v_i, v_j). Ranges over [−1, 1]; 1 means
/// perfect alignment.
pub fn order_parameter(velocities: &[Vec3]) -> Result<f64> {
    if velocities.len() < 2 {
        return Err(Error::UndefinedMetric {
            reason: format!(
                "order parameter needs at least 2 agents, got {}",
                velocities.len()
            ),
        });
    }
    let mut dirs = Vec::with_capacity(velocities.len());
    for v in velocities {
        match v.normalized(ORDER_EPS) {
            Some(d) => dirs.push(d),
            None => {
                return Err(Error::UndefinedMetric {
                    reason: "order parameter undefined: an agent velocity is (near) zero"
                        .into(),
                })
            }
        }
    }
    let n = dirs.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += dirs[i].dot(dirs[j]);
        }
    }
    // Each unordered pair appears twice in the ordered double sum.
    Ok(2.0 * acc / (n * (n - 1)) as f64)
}

/// Compute the full metrics row for one step. A zero-velocity agent leaves a
/// gap in `order` rather than failing the whole row.
pub fn metrics_row(step: usize, agents: &[AgentState]) -> Result<MetricsRow> {
    let (d_min, d_max) = min_max_distance(agents)?;
    let velocities: Vec<Vec3> = agents.iter().map(|a| a.velocity).collect();
    let order = order_parameter(&velocities).ok();
    Ok(MetricsRow {
        step,
        d_min,
        d_max,
        order,
    })
}

/// CSV with header `step,d_min,d_max,order`; a missing order value is an
/// empty field, never a fabricated number.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("step,d_min,d_max,order\n");
    for row in rows {
        let order = row.order.map(|o| o.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.step, row.d_min, row.d_max, order
        ));
    }
    out
}
