//! Six-camera omnidirectional software renderer.
//!
//! Every agent carries six pinhole cameras looking along its body-frame
//! coordinate axes. Each camera has a 100°×100° field of view at 64×64
//! pixels; the six views are concatenated left-to-right into one 64×384
//! grayscale strip in the fixed order front(+x), right(−y), back(−x),
//! left(+y), top(+z), bottom(−z). That order is part of the on-disk dataset
//! format and must never change.
//!
//! Other agents are drawn as uniform spheres via direct ray–sphere
//! intersection, nearest hit wins. No lighting, no textures — the point is a
//! deterministic renderer with an analytic oracle, not photorealism.

use crate::error::{Error, Result};
use crate::flocking::AgentState;
use crate::math::{world_to_body, Vec3};

pub const FACE_RES: usize = 64;
pub const IMAGE_WIDTH: usize = 6 * FACE_RES;
pub const IMAGE_HEIGHT: usize = FACE_RES;
pub const IMAGE_BYTES: usize = IMAGE_WIDTH * IMAGE_HEIGHT;

/// Hit distance at which distance-attenuated shading fades fully to the
/// background.
const ATTENUATION_RANGE: f64 = 20.0;

/// Intensity slope per unit of ray z-component when the optional horizon
/// gradient is enabled.
const HORIZON_GAIN: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    Front,
    Right,
    Back,
    Left,
    Top,
    Bottom,
}

pub const FACES: [Face; 6] = [
    Face::Front,
    Face::Right,
    Face::Back,
    Face::Left,
    Face::Top,
    Face::Bottom,
];

impl Face {
    pub fn index(self) -> usize {
        match self {
            Face::Front => 0,
            Face::Right => 1,
            Face::Back => 2,
            Face::Left => 3,
            Face::Top => 4,
            Face::Bottom => 5,
        }
    }

    /// Optical axis in the body frame.
    pub fn axis(self) -> Vec3 {
        match self {
            Face::Front => Vec3::new(1.0, 0.0, 0.0),
            Face::Right => Vec3::new(0.0, -1.0, 0.0),
            Face::Back => Vec3::new(-1.0, 0.0, 0.0),
            Face::Left => Vec3::new(0.0, 1.0, 0.0),
            Face::Top => Vec3::new(0.0, 0.0, 1.0),
            Face::Bottom => Vec3::new(0.0, 0.0, -1.0),
        }
    }

    /// Image-space "to the right" direction in the body frame. For the four
    /// lateral faces this is axis × ẑ, which makes the horizontal strip a
    /// continuous panorama; the top and bottom faces keep the body −y axis
    /// as "right" so they share columns with the front view.
    pub fn right(self) -> Vec3 {
        match self {
            Face::Front => Vec3::new(0.0, -1.0, 0.0),
            Face::Right => Vec3::new(-1.0, 0.0, 0.0),
            Face::Back => Vec3::new(0.0, 1.0, 0.0),
            Face::Left => Vec3::new(1.0, 0.0, 0.0),
            Face::Top => Vec3::new(0.0, -1.0, 0.0),
            Face::Bottom => Vec3::new(0.0, -1.0, 0.0),
        }
    }

    /// Image-space "downward" direction in the body frame.
    pub fn down(self) -> Vec3 {
        match self {
            Face::Top => Vec3::new(1.0, 0.0, 0.0),
            Face::Bottom => Vec3::new(-1.0, 0.0, 0.0),
            _ => Vec3::new(0.0, 0.0, -1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    /// Full field of view in degrees, horizontal and vertical.
    pub fov_deg: f64,
    /// Camera displacement from the center of gravity along its own optical
    /// axis, meters.
    pub mount_offset: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            fov_deg: 100.0,
            mount_offset: 0.15,
        }
    }
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config(format!(
                "camera fov must be in (0, 180) degrees, got {}",
                self.fov_deg
            )));
        }
        if !self.mount_offset.is_finite() || self.mount_offset < 0.0 {
            return Err(Error::Config(format!(
                "camera mount offset must be non-negative, got {}",
                self.mount_offset
            )));
        }
        Ok(())
    }

    /// Tangent of the half field of view: the half-extent of the image plane
    /// at unit focal distance.
    pub fn half_extent(&self) -> f64 {
        (self.fov_deg / 2.0).to_radians().tan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shading {
    Flat,
    /// Sphere intensity fades linearly toward the background with hit
    /// distance, reaching background level at `ATTENUATION_RANGE`.
    DistanceAttenuated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderStyle {
    pub agent_sphere_radius: f64,
    pub agent_intensity: f64,
    pub background_intensity: f64,
    pub shading: Shading,
    /// Optional sky-lighter/ground-darker background ramp for robustness
    /// experiments. Off by default: the background is perfectly uniform.
    pub horizon_gradient: bool,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            agent_sphere_radius: 0.25,
            agent_intensity: 0.2,
            background_intensity: 0.8,
            shading: Shading::Flat,
            horizon_gradient: false,
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<()> {
        if !(self.agent_sphere_radius > 0.0) {
            return Err(Error::Config(format!(
                "agent_sphere_radius must be > 0, got {}",
                self.agent_sphere_radius
            )));
        }
        for (name, v) in [
            ("agent_intensity", self.agent_intensity),
            ("background_intensity", self.background_intensity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {v}")));
            }
        }
        Ok(())
    }
}

/// One agent's concatenated six-camera view: 64 rows × 384 columns,
/// row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubeImage {
    pub pixels: Vec<u8>,
}

impl CubeImage {
    pub fn filled(value: u8) -> Self {
        CubeImage {
            pixels: vec![value; IMAGE_BYTES],
        }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() != IMAGE_BYTES {
            return Err(Error::ShapeMismatch {
                context: format!("image has {} bytes, expected {IMAGE_BYTES}", bytes.len()),
            });
        }
        Ok(CubeImage { pixels: bytes })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * IMAGE_WIDTH + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * IMAGE_WIDTH + col] = value;
    }

    /// The 64×64 block belonging to one face, as (row, col-within-face)
    /// accessor.
    pub fn face_pixel(&self, face: Face, row: usize, col: usize) -> u8 {
        self.get(row, face.index() * FACE_RES + col)
    }

    /// Binary PGM (P5, maxval 255) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{IMAGE_WIDTH} {IMAGE_HEIGHT}\n255\n").into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Direction (unit, body frame) of the ray through image position `(u, v)`
/// on `face`. Pixel centers sit at integer coordinates; the image center is
/// at 31.5 and the field-of-view boundary at ±(FOV/2) corresponds to
/// u = −0.5 and u = 63.5.
pub fn pixel_ray(rig: &CameraRig, face: Face, u: f64, v: f64) -> Result<Vec3> {
    if !(0.0..64.0).contains(&u) || !(0.0..64.0).contains(&v) {
        return Err(Error::ShapeMismatch {
            context: format!("pixel coordinate ({u}, {v}) outside [0, 64)"),
        });
    }
    let half = rig.half_extent();
    let ru = (u - 31.5) / 32.0 * half;
    let rv = (v - 31.5) / 32.0 * half;
    let dir = face.axis() + face.right() * ru + face.down() * rv;
    Ok(dir.normalized(0.0).expect("pinhole ray cannot be zero"))
}

/// Smallest positive parameter t with ‖origin + t·dir − center‖ = radius,
/// for unit `dir`. A camera inside the sphere yields the far (positive)
/// root, so such spheres cover the whole face.
fn ray_sphere(origin: Vec3, dir: Vec3, center: Vec3, radius: f64) -> Option<f64> {
    let m = origin - center;
    let b = m.dot(dir);
    let c = m.norm_sq() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t_near = -b - sq;
    if t_near > 0.0 {
        return Some(t_near);
    }
    let t_far = -b + sq;
    if t_far > 0.0 {
        return Some(t_far);
    }
    None
}

fn quantize(intensity: f64) -> u8 {
    // Round half away from zero (f64::round), clamped to the byte range.
    (intensity.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Render the observer's full six-camera strip.
///
/// All other agents are drawn as spheres of `style.agent_sphere_radius`
/// centered at their centers of gravity. Occlusion between spheres is
/// depth-correct (nearest hit wins). The observer never renders itself.
pub fn render_view(
    observer: &AgentState,
    others: &[AgentState],
    rig: &CameraRig,
    style: &RenderStyle,
) -> Result<CubeImage> {
    rig.validate()?;
    style.validate()?;
    if !observer.position.is_finite() || !observer.yaw.is_finite() {
        return Err(Error::NonFinite {
            context: format!("observer agent {}", observer.id),
        });
    }
    for other in others {
        if other.id == observer.id {
            return Err(Error::DuplicateAgentId { id: other.id });
        }
        if !other.position.is_finite() {
            return Err(Error::NonFinite {
                context: format!("agent {} position", other.id),
            });
        }
    }

    // Sphere centers in the observer's body frame.
    let centers: Vec<Vec3> = others
        .iter()
        .map(|o| world_to_body(observer.yaw, o.position - observer.position))
        .collect();

    let half = rig.half_extent();
    let radius = style.agent_sphere_radius;
    // A ray through any point of the image square deviates from the optical
    // axis by at most the corner angle atan(√2·tan(FOV/2)); a sphere whose
    // angular distance from the axis exceeds that plus its own angular
    // radius cannot intersect any ray of the face.
    let corner_angle = (std::f64::consts::SQRT_2 * half).atan();

    let mut image = CubeImage::filled(0);
    for face in FACES {
        let cam = face.axis() * rig.mount_offset;
        let candidates: Vec<(Vec3, usize)> = centers
            .iter()
            .enumerate()
            .filter(|&(_, &c)| {
                let rel = c - cam;
                let d = rel.norm();
                if d <= radius {
                    return true; // camera inside the sphere
                }
                let angle = (rel.dot(face.axis()) / d).clamp(-1.0, 1.0).acos();
                angle <= corner_angle + (radius / d).asin()
            })
            .map(|(i, &c)| (c, i))
            .collect();

        let right = face.right();
        let down = face.down();
        let axis = face.axis();
        for v in 0..FACE_RES {
            let rv = (v as f64 - 31.5) / 32.0 * half;
            let row_base = v * IMAGE_WIDTH + face.index() * FACE_RES;
            for u in 0..FACE_RES {
                let ru = (u as f64 - 31.5) / 32.0 * half;
                let dir = (axis + right * ru + down * rv)
                    .normalized(0.0)
                    .expect("pinhole ray cannot be zero");
                let mut nearest: Option<f64> = None;
                for &(center, _) in &candidates {
                    if let Some(t) = ray_sphere(cam, dir, center, radius) {
                        if nearest.map_or(true, |best| t < best) {
                            nearest = Some(t);
                        }
                    }
                }
                let background = if style.horizon_gradient {
                    style.background_intensity + HORIZON_GAIN * dir.z
                } else {
                    style.background_intensity
                };
                let intensity = match (nearest, style.shading) {
                    (None, _) => background,
                    (Some(_), Shading::Flat) => style.agent_intensity,
                    (Some(t), Shading::DistanceAttenuated) => {
                        let fade = (t / ATTENUATION_RANGE).clamp(0.0, 1.0);
                        style.agent_intensity
                            + (style.background_intensity - style.agent_intensity) * fade
                    }
                };
                image.pixels[row_base + u] = quantize(intensity);
            }
        }
    }
    Ok(image)
}
