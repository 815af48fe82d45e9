//! Subcommand implementations. Every run writes a `manifest` holding the
//! fully-resolved configuration next to its artifacts, so any output
//! directory doubles as the recipe that produced it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use vswarm_core::attribution::{self, AttributionTarget};
use vswarm_core::controller::{run_episode, trajectory_csv, Controller, EpisodeResult};
use vswarm_core::dataset::{build_dataset, DatasetReader};
use vswarm_core::metrics::metrics_csv;
use vswarm_core::nn::checkpoint::{load_checkpoint, save_checkpoint};
use vswarm_core::nn::network::{eval_mse, Network};
use vswarm_core::nn::train::{
    epoch_log_csv, load_supervised, train_with_progress, StopReason, SupervisedSet,
};
use vswarm_core::{Error, Result};

use crate::config::{ControllerKind, ExperimentConfig, GoalMode};

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join("manifest"), cfg.manifest())
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let t0 = Instant::now();
    let summary = build_dataset(cfg.counts, &cfg.gen_config(), cfg.seed, out)?;
    write_manifest(cfg, out)?;

    let o = summary.outcomes;
    let used = o.goal_reached + o.collision + o.dispersion + o.max_steps;
    println!(
        "wrote train.vsfd ({}), val.vsfd ({}), test.vsfd ({}) in {}",
        summary.counts.train,
        summary.counts.val,
        summary.counts.test,
        out.display()
    );
    println!(
        "runs used: {used} (goal_reached {}, collision {}, dispersion {}, max_steps {})",
        o.goal_reached, o.collision, o.dispersion, o.max_steps
    );
    println!(
        "pixel stats: mean {} std {} (training split)",
        summary.pixel_mean, summary.pixel_std
    );
    println!("elapsed: {:.1} s", t0.elapsed().as_secs_f64());
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    let train_set = load_supervised(&data.join("train.vsfd"))?;
    let val_set = load_supervised(&data.join("val.vsfd"))?;
    ensure_dir(out)?;

    let mut net = Network::standard();
    net.init_weights(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    println!(
        "training {} parameters on {} samples ({} validation), batch {}",
        net.param_count(),
        train_set.n,
        val_set.n,
        cfg.train.batch_size
    );

    let t0 = Instant::now();
    let result = train_with_progress(net, &train_set, &val_set, &cfg.train, |e| {
        println!(
            "epoch {:>3}: train {:.6}  val {:.6}  lr {}",
            e.epoch, e.train_loss, e.val_loss, e.lr
        );
    })?;

    save_checkpoint(&result.network, &out.join("model.vsnn"))?;
    write_file(&out.join("epochs.csv"), epoch_log_csv(&result.log))?;
    write_manifest(cfg, out)?;

    let stopped = match &result.stopped {
        StopReason::Plateau => "validation plateau".to_string(),
        StopReason::MaxEpochs => "epoch limit".to_string(),
        StopReason::Diverged(layer) => format!("divergence in {layer}"),
    };
    println!(
        "stopped after {} epochs ({stopped}), {:.1} s",
        result.log.len(),
        t0.elapsed().as_secs_f64()
    );
    println!(
        "best val MSE {} at epoch {} (untrained: {})",
        result.best_val, result.best_epoch, result.initial_val_loss
    );
    println!("wrote model.vsnn, epochs.csv in {}", out.display());

    // The best checkpoint is on disk either way; a diverged run still
    // exits through the numeric-failure path.
    if let StopReason::Diverged(layer) = result.stopped {
        return Err(Error::Divergence { layer });
    }
    Ok(())
}

pub fn cmd_run(cfg: &ExperimentConfig, checkpoint: Option<&Path>, out: &Path) -> Result<()> {
    let net = match (cfg.controller, checkpoint) {
        (ControllerKind::Vision, Some(path)) => Some(load_checkpoint(path)?),
        (ControllerKind::Vision, None) => {
            return Err(Error::Config(
                "controller = vision requires --checkpoint".into(),
            ))
        }
        (ControllerKind::Position, Some(_)) => {
            eprintln!("note: --checkpoint is ignored by the position controller");
            None
        }
        (ControllerKind::Position, None) => None,
    };
    let controller = match &net {
        Some(network) => Controller::VisionBased {
            network,
            alpha: cfg.lowpass_alpha,
        },
        None => Controller::PositionBased,
    };

    ensure_dir(out)?;
    let result = run_episode(&controller, &cfg.goal_vector(), &cfg.episode(), cfg.seed)?;
    write_file(&out.join("trajectory.csv"), trajectory_csv(&result.trajectory))?;
    write_file(&out.join("metrics.csv"), metrics_csv(&result.metrics))?;
    write_manifest(cfg, out)?;

    print!("{}", episode_report(&result, cfg.world.dt));
    println!("wrote trajectory.csv, metrics.csv in {}", out.display());
    Ok(())
}

fn episode_report(r: &EpisodeResult, dt: f64) -> String {
    let mut out = format!(
        "outcome: {} at step {} ({:.1} s simulated)\n",
        r.outcome.kind,
        r.outcome.step,
        r.outcome.step as f64 * dt
    );
    let d_min = r.metrics.iter().map(|m| m.d_min).fold(f64::INFINITY, f64::min);
    let d_max = r.metrics.iter().map(|m| m.d_max).fold(f64::NEG_INFINITY, f64::max);
    if !r.metrics.is_empty() {
        out.push_str(&format!(
            "distance envelope: d_min {d_min:.3} m, d_max {d_max:.3} m over {} states\n",
            r.metrics.len()
        ));
    }
    if !r.faults.is_empty() {
        out.push_str(&format!("faults: {} (zero command substituted)\n", r.faults.len()));
    }
    out
}

pub fn cmd_eval(checkpoint: &Path, data: &Path) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    let set = load_supervised(data)?;
    let mse = eval_with_net_stats(&net, &set)?;
    println!("checkpoint: {}", checkpoint.display());
    println!("dataset: {} ({} samples)", data.display(), set.n);
    println!("mse: {mse}");
    Ok(())
}

/// Mean squared error of `net` over a supervised set, standardizing with
/// the statistics stored in the checkpoint (not the dataset's own), in
/// bounded-memory chunks.
pub fn eval_with_net_stats(net: &Network, set: &SupervisedSet) -> Result<f64> {
    if set.n == 0 {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let len = set.sample_len;
    let chunk = 512.min(set.n);
    let mut x = vec![0.0f32; chunk * len];
    let mut sum = 0.0f64;
    let mut done = 0usize;
    while done < set.n {
        let b = chunk.min(set.n - done);
        for bi in 0..b {
            let img = set.image(done + bi);
            for (dst, &p) in x[bi * len..(bi + 1) * len].iter_mut().zip(img) {
                *dst = (p as f32 - net.pixel_mean) / net.pixel_std;
            }
        }
        let mse = eval_mse(net, &x[..b * len], &set.targets[done * 3..(done + b) * 3], b)?;
        sum += mse * b as f64;
        done += b;
    }
    Ok(sum / set.n as f64)
}

pub struct SaliencyArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub index: usize,
    pub target: AttributionTarget,
    pub alpha: f32,
    pub out: PathBuf,
    pub csv: Option<PathBuf>,
    pub input_pgm: Option<PathBuf>,
}

pub fn cmd_saliency(a: &SaliencyArgs) -> Result<()> {
    let net = load_checkpoint(&a.checkpoint)?;
    let mut reader = DatasetReader::open(&a.data)?;
    let count = reader.header.sample_count as usize;
    let sample = reader.nth(a.index).ok_or(Error::InvalidIndex {
        index: a.index,
        count,
    })??;

    let map = attribution::grad_cam(&net, &sample.image, a.target)?;
    let rgb = attribution::blend_overlay(&map, &sample.image, a.alpha);
    write_file(&a.out, attribution::overlay_to_ppm(&rgb))?;
    if let Some(csv) = &a.csv {
        write_file(csv, attribution::raw_map_csv(&map))?;
    }
    if let Some(pgm) = &a.input_pgm {
        write_file(pgm, sample.image.to_pgm())?;
    }

    println!(
        "sample {}: run {}, step {}, agent {}",
        a.index, sample.run_id, sample.step, sample.agent_id
    );
    println!(
        "prediction: [{:.4}, {:.4}, {:.4}]  recorded target: [{:.4}, {:.4}, {:.4}]",
        map.prediction[0],
        map.prediction[1],
        map.prediction[2],
        sample.target.x,
        sample.target.y,
        sample.target.z
    );
    println!("attributed scalar: {:.4}", map.scalar);
    println!("wrote {}", a.out.display());
    Ok(())
}

struct Cell {
    name: &'static str,
    cfg: ExperimentConfig,
}

/// The experiment grid: goal layouts and flock-scale ablations for the
/// position controller, plus the goal layouts for the vision controller
/// when a checkpoint is supplied.
fn build_cells(base: &ExperimentConfig, with_vision: bool) -> Vec<Cell> {
    let mut position = base.clone();
    position.controller = ControllerKind::Position;
    let cell = |name, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut cfg = position.clone();
        f(&mut cfg);
        Cell { name, cfg }
    };

    let mut cells = vec![
        cell("pos_common", &|c| c.goals = GoalMode::Common),
        cell("pos_opposing", &|c| c.goals = GoalMode::Opposing),
        cell("pos_none", &|c| c.goals = GoalMode::None),
        cell("pos_n3", &|c| {
            c.goals = GoalMode::Common;
            c.flock.n_agents = 3;
        }),
        cell("pos_n12", &|c| {
            c.goals = GoalMode::Common;
            c.flock.n_agents = 12;
        }),
        cell("pos_vmax4", &|c| {
            c.goals = GoalMode::Common;
            c.flock.v_max = 4.0;
        }),
    ];
    if with_vision {
        for (name, goals) in [
            ("vis_common", GoalMode::Common),
            ("vis_opposing", GoalMode::Opposing),
            ("vis_none", GoalMode::None),
        ] {
            let mut cfg = position.clone();
            cfg.controller = ControllerKind::Vision;
            cfg.goals = goals;
            cells.push(Cell { name, cfg });
        }
    }
    cells
}

struct CellOutcome {
    name: &'static str,
    cfg: ExperimentConfig,
    result: EpisodeResult,
}

pub fn cmd_suite(
    base: &ExperimentConfig,
    checkpoint: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<()> {
    if out.exists() {
        if !force {
            return Err(Error::Config(format!(
                "results directory {} already exists (pass --force to replace it)",
                out.display()
            )));
        }
        fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    ensure_dir(out)?;

    let net = checkpoint.map(load_checkpoint).transpose()?;
    let cells = build_cells(base, net.is_some());

    let outcomes: Vec<CellOutcome> = cells
        .into_par_iter()
        .map(|cell| {
            let controller = match (cell.cfg.controller, &net) {
                (ControllerKind::Vision, Some(network)) => Controller::VisionBased {
                    network,
                    alpha: cell.cfg.lowpass_alpha,
                },
                _ => Controller::PositionBased,
            };
            let result = run_episode(
                &controller,
                &cell.cfg.goal_vector(),
                &cell.cfg.episode(),
                cell.cfg.seed,
            )?;
            Ok(CellOutcome {
                name: cell.name,
                cfg: cell.cfg,
                result,
            })
        })
        .collect::<Result<_>>()?;

    let mut summary =
        String::from("cell,controller,goals,n_agents,v_max,outcome,end_step,d_min,d_max,order_final,faults\n");
    for o in &outcomes {
        let dir = out.join(o.name);
        ensure_dir(&dir)?;
        write_file(&dir.join("trajectory.csv"), trajectory_csv(&o.result.trajectory))?;
        write_file(&dir.join("metrics.csv"), metrics_csv(&o.result.metrics))?;
        write_manifest(&o.cfg, &dir)?;

        let d_min = o.result.metrics.iter().map(|m| m.d_min).fold(f64::INFINITY, f64::min);
        let d_max = o.result.metrics.iter().map(|m| m.d_max).fold(f64::NEG_INFINITY, f64::max);
        let order_final = o
            .result
            .metrics
            .last()
            .and_then(|m| m.order)
            .map_or(String::new(), |v| v.to_string());
        let controller = match o.cfg.controller {
            ControllerKind::Position => "position",
            ControllerKind::Vision => "vision",
        };
        let goals = match o.cfg.goals {
            GoalMode::Common => "common",
            GoalMode::Opposing => "opposing",
            GoalMode::None => "none",
        };
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            o.name,
            controller,
            goals,
            o.cfg.flock.n_agents,
            o.cfg.flock.v_max,
            o.result.outcome.kind,
            o.result.outcome.step,
            d_min,
            d_max,
            order_final,
            o.result.faults.len()
        ));
        println!(
            "{:<14} {:<12} step {:>5}  d_min {:.3}  d_max {:.3}",
            o.name,
            o.result.outcome.kind.to_string(),
            o.result.outcome.step,
            d_min,
            d_max
        );
    }
    write_file(&out.join("summary.csv"), &summary)?;
    println!("wrote summary.csv and {} cell directories in {}", outcomes.len(), out.display());
    Ok(())
}

pub fn cmd_stats(data: &Path, dump: Option<(usize, &Path)>) -> Result<()> {
    let reader = DatasetReader::open(data)?;
    let h = reader.header;
    println!("path: {}", data.display());
    println!("samples: {}", h.sample_count);
    println!("image: {}x{}", h.width, h.height);
    println!("pixel_mean: {}", h.pixel_mean);
    println!("pixel_std: {}", h.pixel_std);
    if let Some((index, out)) = dump {
        let mut reader = reader;
        let sample = reader.nth(index).ok_or(Error::InvalidIndex {
            index,
            count: h.sample_count as usize,
        })??;
        write_file(out, sample.image.to_pgm())?;
        println!("wrote sample {index} image to {}", out.display());
    }
    Ok(())
}
