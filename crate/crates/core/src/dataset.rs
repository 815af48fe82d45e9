//! Supervised dataset generation and the VSFD on-disk format.
//!
//! Samples are gathered by spawning a flock, assigning every agent one
//! velocity drawn uniformly from a narrow cone around the migration
//! direction, and letting the agents fly those straight lines while the
//! expert flocking law is evaluated (but not flown) at every step. Each
//! agent contributes one sample per step: its rendered six-camera image and
//! the body-frame separation+cohesion command computed from the true poses.
//! Because the trajectories ignore the expert, runs drift into close
//! encounters and break-ups, which is exactly what populates the label
//! distribution with large commands.
//!
//! A run ends by the world-sim termination rules; the terminal state itself
//! is not recorded, which keeps labels bounded (a collision state would
//! yield a near-singular separation command).
//!
//! ## VSFD format (little-endian throughout)
//!
//! Header, 22 bytes: magic `VSFD`, version u16 (=1), sample count u32,
//! width u16 (=384), height u16 (=64), pixel mean f32, pixel std f32. The
//! statistics are always those of the *training* split, copied verbatim
//! into the validation and test headers so every file is self-describing
//! for standardization.
//!
//! Record, 24 614 bytes: run_id u32, step u32, agent_id u16, target 3×f32,
//! position 3×f32, yaw f32, then 24 576 image bytes. Poses are rounded to
//! f32 *before* rendering and label computation, so a re-render from the
//! stored pose reproduces the stored image bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flocking::{command_with_goal, AgentState, FlockParams};
use crate::math::{world_to_body, Vec3};
use crate::render::{render_view, CameraRig, CubeImage, RenderStyle, IMAGE_BYTES};
use crate::world::{check_termination, spawn_agents, step, RunOutcome, WorldConfig};

pub const MAGIC: [u8; 4] = *b"VSFD";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 22;
pub const RECORD_BYTES: usize = 4 + 4 + 2 + 12 + 12 + 4 + IMAGE_BYTES;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub sample_count: u32,
    pub width: u16,
    pub height: u16,
    pub pixel_mean: f32,
    pub pixel_std: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: CubeImage,
    /// Body-frame separation+cohesion command (the learning target); the
    /// migration term is deliberately absent.
    pub target: Vec3,
    pub run_id: u32,
    pub step: u32,
    pub agent_id: u16,
    pub position: Vec3,
    pub yaw: f64,
}

fn encode_sample(s: &Sample) -> Vec<u8> {
    let mut buf = Vec::with_capacity(RECORD_BYTES);
    buf.extend_from_slice(&s.run_id.to_le_bytes());
    buf.extend_from_slice(&s.step.to_le_bytes());
    buf.extend_from_slice(&s.agent_id.to_le_bytes());
    for v in [s.target, s.position] {
        for c in [v.x, v.y, v.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(s.yaw as f32).to_le_bytes());
    buf.extend_from_slice(&s.image.pixels);
    debug_assert_eq!(buf.len(), RECORD_BYTES);
    buf
}

fn decode_sample(buf: &[u8]) -> Sample {
    assert_eq!(buf.len(), RECORD_BYTES);
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u16_at = |o: usize| u16::from_le_bytes(buf[o..o + 2].try_into().unwrap());
    let f_at = |o: usize| f32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as f64;
    Sample {
        run_id: u32_at(0),
        step: u32_at(4),
        agent_id: u16_at(8),
        target: Vec3::new(f_at(10), f_at(14), f_at(18)),
        position: Vec3::new(f_at(22), f_at(26), f_at(30)),
        yaw: f_at(34),
        image: CubeImage {
            pixels: buf[38..].to_vec(),
        },
    }
}

fn encode_header(h: &DatasetHeader) -> [u8; HEADER_BYTES] {
    let mut buf = [0u8; HEADER_BYTES];
    buf[0..4].copy_from_slice(&MAGIC);
    buf[4..6].copy_from_slice(&VERSION.to_le_bytes());
    buf[6..10].copy_from_slice(&h.sample_count.to_le_bytes());
    buf[10..12].copy_from_slice(&h.width.to_le_bytes());
    buf[12..14].copy_from_slice(&h.height.to_le_bytes());
    buf[14..18].copy_from_slice(&h.pixel_mean.to_le_bytes());
    buf[18..22].copy_from_slice(&h.pixel_std.to_le_bytes());
    buf
}

fn decode_header(buf: &[u8; HEADER_BYTES], path: &Path) -> Result<DatasetHeader> {
    let magic: [u8; 4] = buf[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes(buf[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            supported: VERSION,
        });
    }
    let header = DatasetHeader {
        sample_count: u32::from_le_bytes(buf[6..10].try_into().unwrap()),
        width: u16::from_le_bytes(buf[10..12].try_into().unwrap()),
        height: u16::from_le_bytes(buf[12..14].try_into().unwrap()),
        pixel_mean: f32::from_le_bytes(buf[14..18].try_into().unwrap()),
        pixel_std: f32::from_le_bytes(buf[18..22].try_into().unwrap()),
    };
    if header.width != 384 || header.height != 64 {
        return Err(Error::ShapeMismatch {
            context: format!(
                "{}: image dimensions {}x{}, expected 384x64",
                path.display(),
                header.width,
                header.height
            ),
        });
    }
    Ok(header)
}

/// Append-only VSFD writer. The header is patched on `finalize`, once the
/// count and (for a training file) pixel statistics are known.
pub struct DatasetWriter {
    file: BufWriter<File>,
    path: PathBuf,
    count: u32,
    pixel_sum: u64,
    pixel_sq_sum: u64,
}

impl DatasetWriter {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = DatasetWriter {
            file: BufWriter::new(file),
            path,
            count: 0,
            pixel_sum: 0,
            pixel_sq_sum: 0,
        };
        let placeholder = DatasetHeader {
            sample_count: 0,
            width: 384,
            height: 64,
            pixel_mean: 0.0,
            pixel_std: 1.0,
        };
        w.file
            .write_all(&encode_header(&placeholder))
            .map_err(|e| Error::io(&w.path, e))?;
        Ok(w)
    }

    pub fn append(&mut self, sample: &Sample) -> Result<()> {
        self.file
            .write_all(&encode_sample(sample))
            .map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        for &p in &sample.image.pixels {
            self.pixel_sum += p as u64;
            self.pixel_sq_sum += (p as u64) * (p as u64);
        }
        Ok(())
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    /// Mean and standard deviation of every pixel byte written so far.
    /// A degenerate (constant) image set reports std 1.0 so downstream
    /// standardization stays well-defined.
    pub fn own_stats(&self) -> (f32, f32) {
        let n = (self.count as u64 * IMAGE_BYTES as u64).max(1) as f64;
        let mean = self.pixel_sum as f64 / n;
        let var = (self.pixel_sq_sum as f64 / n - mean * mean).max(0.0);
        let std = var.sqrt();
        (mean as f32, if std > 0.0 { std as f32 } else { 1.0 })
    }

    /// Patch the header with the final count and the given statistics.
    pub fn finalize(mut self, pixel_mean: f32, pixel_std: f32) -> Result<()> {
        let header = DatasetHeader {
            sample_count: self.count,
            width: 384,
            height: 64,
            pixel_mean,
            pixel_std,
        };
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        let mut file = self.file.into_inner().map_err(|e| {
            Error::io(&self.path, e.into_error())
        })?;
        file.seek(SeekFrom::Start(0))
            .map_err(|e| Error::io(&self.path, e))?;
        file.write_all(&encode_header(&header))
            .map_err(|e| Error::io(&self.path, e))?;
        file.sync_all().map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

/// Streaming VSFD reader; iterates samples in stored order.
#[derive(Debug)]
pub struct DatasetReader {
    pub header: DatasetHeader,
    file: BufReader<File>,
    path: PathBuf,
    yielded: u32,
}

impl DatasetReader {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let found = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut reader = BufReader::new(file);
        let mut buf = [0u8; HEADER_BYTES];
        if found < HEADER_BYTES as u64 {
            return Err(Error::Truncated {
                path,
                expected: HEADER_BYTES as u64,
                found,
            });
        }
        reader
            .read_exact(&mut buf)
            .map_err(|e| Error::io(&path, e))?;
        let header = decode_header(&buf, &path)?;
        let expected =
            HEADER_BYTES as u64 + header.sample_count as u64 * RECORD_BYTES as u64;
        if found != expected {
            return Err(Error::Truncated {
                path,
                expected,
                found,
            });
        }
        Ok(DatasetReader {
            header,
            file: reader,
            path,
            yielded: 0,
        })
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.yielded >= self.header.sample_count {
            return None;
        }
        let mut buf = vec![0u8; RECORD_BYTES];
        match self.file.read_exact(&mut buf) {
            Ok(()) => {
                self.yielded += 1;
                Some(Ok(decode_sample(&buf)))
            }
            Err(e) => Some(Err(Error::io(&self.path, e))),
        }
    }
}

/// Read an entire file into memory. Fine at desk scale; use the iterator
/// for anything larger.
pub fn read_all(path: impl Into<PathBuf>) -> Result<(DatasetHeader, Vec<Sample>)> {
    let reader = DatasetReader::open(path)?;
    let header = reader.header;
    let samples = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, samples))
}

/// Uniform sampling over a spherical cap: directions within `half_angle` of
/// `axis`, scaled to `speed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSampler {
    pub axis: Vec3,
    pub half_angle: f64,
    pub speed: f64,
}

impl ConeSampler {
    pub fn new(axis: Vec3, half_angle: f64, speed: f64) -> Result<Self> {
        let axis = axis.normalized(1e-9).ok_or_else(|| {
            Error::Config("cone axis must have nonzero length".into())
        })?;
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&half_angle) {
            return Err(Error::Config(format!(
                "cone half angle must be in [0, pi/2), got {half_angle}"
            )));
        }
        if !(speed > 0.0) {
            return Err(Error::Config(format!("cone speed must be > 0, got {speed}")));
        }
        Ok(ConeSampler {
            axis,
            half_angle,
            speed,
        })
    }

    /// Draw one velocity: cos(angle to axis) uniform on [cos half_angle, 1],
    /// azimuth uniform — i.e. uniform over the cap's solid angle.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        let cos_min = self.half_angle.cos();
        let cos_theta: f64 = rng.random_range(cos_min..=1.0);
        let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (u, w) = orthonormal_complement(self.axis);
        let dir = self.axis * cos_theta + (u * phi.cos() + w * phi.sin()) * sin_theta;
        dir * self.speed
    }
}

/// Two unit vectors completing `axis` (assumed unit) to a right-handed
/// orthonormal basis, chosen deterministically.
fn orthonormal_complement(axis: Vec3) -> (Vec3, Vec3) {
    let helper = if axis.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let u = axis
        .cross(helper)
        .normalized(1e-12)
        .expect("helper is never parallel to axis");
    let w = axis.cross(u);
    (u, w)
}

/// Everything needed to generate one dataset: world and flocking settings,
/// the render pipeline, the shared migration goal, and the cone the linear
/// trajectories are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub world: WorldConfig,
    pub flock: FlockParams,
    pub rig: CameraRig,
    pub style: RenderStyle,
    /// Shared migration goal; also the cone axis direction.
    pub goal: Vec3,
    pub cone_half_angle: f64,
    pub cone_speed: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            world: WorldConfig::default(),
            flock: FlockParams::default(),
            rig: CameraRig::default(),
            style: RenderStyle::default(),
            goal: Vec3::new(15.0, 0.0, 0.0),
            cone_half_angle: 15.0_f64.to_radians(),
            cone_speed: 2.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.flock.validate()?;
        self.rig.validate()?;
        self.style.validate()?;
        if !self.goal.is_finite() {
            return Err(Error::Config("goal must be finite".into()));
        }
        self.cone_sampler()?;
        Ok(())
    }

    pub fn cone_sampler(&self) -> Result<ConeSampler> {
        let axis = if self.goal.norm() > 1e-9 {
            self.goal
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        };
        ConeSampler::new(axis, self.cone_half_angle, self.cone_speed)
    }
}

/// The RNG for one run: a single seed with an independent stream per run
/// id, so runs can be generated in any order or in parallel.
pub fn run_rng(seed: u64, run_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_id as u64);
    rng
}

fn round_vec_to_f32(v: Vec3) -> Vec3 {
    Vec3::new(v.x as f32 as f64, v.y as f32 as f64, v.z as f32 as f64)
}

fn round_pose_to_f32(a: &AgentState) -> AgentState {
    AgentState {
        id: a.id,
        position: round_vec_to_f32(a.position),
        velocity: a.velocity,
        yaw: a.yaw as f32 as f64,
    }
}

/// Generate all samples of one run: spawn, assign one cone velocity per
/// agent, record every pre-step state, move linearly, stop at termination.
pub fn generate_run(
    run_id: u32,
    gen: &GenConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<Sample>, RunOutcome)> {
    gen.validate()?;
    let n = gen.flock.n_agents;
    let mut agents = spawn_agents(&gen.world, n, rng)?;
    let sampler = gen.cone_sampler()?;
    let velocities: Vec<Vec3> = (0..n).map(|_| sampler.sample(rng)).collect();
    let goals: Vec<Option<Vec3>> = vec![Some(gen.goal); n];

    let mut samples = Vec::new();
    let mut k: usize = 0;
    loop {
        if let Some(outcome) = check_termination(&agents, &goals, &gen.world, k) {
            return Ok((samples, outcome));
        }
        // Poses are rounded to storage precision before rendering and label
        // computation so stored records are exactly reproducible from their
        // own fields.
        let snap: Vec<AgentState> = agents.iter().map(round_pose_to_f32).collect();
        for i in 0..n {
            let others: Vec<AgentState> = snap
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, a)| *a)
                .collect();
            let image = render_view(&snap[i], &others, &gen.rig, &gen.style)?;
            let (_, v_rey) = command_with_goal(i, &snap, None, &gen.flock)?;
            samples.push(Sample {
                image,
                // Rounded to storage precision so encode/decode is lossless.
                target: round_vec_to_f32(world_to_body(snap[i].yaw, v_rey)),
                run_id,
                step: k as u32,
                agent_id: snap[i].id,
                position: snap[i].position,
                yaw: snap[i].yaw,
            });
        }
        step(&mut agents, &velocities, &gen.world)?;
        k += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 20_000,
            val: 2_000,
            test: 2_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeTally {
    pub goal_reached: u32,
    pub collision: u32,
    pub dispersion: u32,
    pub max_steps: u32,
}

impl OutcomeTally {
    fn record(&mut self, outcome: RunOutcome) {
        use crate::world::TerminationKind::*;
        match outcome.kind {
            GoalReached => self.goal_reached += 1,
            Collision => self.collision += 1,
            Dispersion => self.dispersion += 1,
            MaxSteps => self.max_steps += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildSummary {
    pub paths: [PathBuf; 3],
    pub counts: SplitCounts,
    pub runs: u32,
    pub pixel_mean: f32,
    pub pixel_std: f32,
    pub outcomes: OutcomeTally,
}

/// Build train/val/test files in `dir`. Splits never share a run: when a
/// split's quota lands mid-run the surplus samples are dropped and the next
/// split starts from a fresh run id. Runs are generated in parallel batches
/// keyed by run id, so the output is identical for any thread count.
pub fn build_dataset(
    counts: SplitCounts,
    gen: &GenConfig,
    seed: u64,
    dir: &Path,
) -> Result<BuildSummary> {
    gen.validate()?;
    for (name, quota) in [("train", counts.train), ("val", counts.val), ("test", counts.test)] {
        if quota == 0 {
            return Err(Error::Config(format!("{name} split needs at least 1 sample")));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    // Fixed batch width so the run ids consumed by each split do not depend
    // on how many worker threads happen to exist.
    let batch: u32 = 8;
    let mut run_id: u32 = 0;
    let mut outcomes = OutcomeTally::default();
    let mut train_stats: Option<(f32, f32)> = None;
    let mut paths: Vec<PathBuf> = Vec::new();

    for (name, quota) in [("train", counts.train), ("val", counts.val), ("test", counts.test)] {
        let path = dir.join(format!("{name}.vsfd"));
        let mut writer = DatasetWriter::create(&path)?;
        let mut empty_streak = 0u32;
        while writer.count() < quota {
            let ids: Vec<u32> = (run_id..run_id + batch).collect();
            run_id += batch;
            let runs: Vec<Result<(Vec<Sample>, RunOutcome)>> = ids
                .par_iter()
                .map(|&id| generate_run(id, gen, &mut run_rng(seed, id)))
                .collect();
            for run in runs {
                let (samples, outcome) = run?;
                if writer.count() >= quota {
                    break;
                }
                if samples.is_empty() {
                    empty_streak += 1;
                    if empty_streak >= 10 {
                        return Err(Error::Config(
                            "dataset generation is not progressing: runs terminate \
                             before producing any samples"
                                .into(),
                        ));
                    }
                    continue;
                }
                empty_streak = 0;
                outcomes.record(outcome);
                let room = (quota - writer.count()) as usize;
                for sample in samples.iter().take(room) {
                    writer.append(sample)?;
                }
            }
        }
        let (mean, std) = match train_stats {
            None => {
                let stats = writer.own_stats();
                train_stats = Some(stats);
                stats
            }
            Some(stats) => stats,
        };
        writer.finalize(mean, std)?;
        paths.push(path);
    }

    let (pixel_mean, pixel_std) = train_stats.unwrap();
    Ok(BuildSummary {
        paths: [
            paths[0].clone(),
            paths[1].clone(),
            paths[2].clone(),
        ],
        counts,
        runs: run_id,
        pixel_mean,
        pixel_std,
        outcomes,
    })
}
