//! Procedural indoor scenes rendered by ray casting through a pinhole camera.
//!
//! The camera sits at the origin looking down `+z` with `y` pointing down.
//! Depth is the `z` coordinate of the first hit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DepthMap, RgbImage, RgbdSample};

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_depth: f64,
    pub max_depth: f64,
    pub primitive_count: usize,
    pub rng_seed: u64,
    /// Standard deviation of additive Gaussian noise on rendered colors.
    pub rgb_noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            min_depth: 0.5,
            max_depth: 10.0,
            primitive_count: 4,
            rng_seed: 0,
            rgb_noise: 0.01,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height % 32 != 0 || self.width % 32 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::IndivisibleSize {
                height: self.height,
                width: self.width,
                factor: 32,
            });
        }
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth) {
            return Err(Error::InvalidArgument("require 0 < min_depth < max_depth".into()));
        }
        if self.primitive_count == 0 {
            return Err(Error::InvalidArgument("primitive_count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Unbounded plane `dot(normal, p) = offset`.
    Plane { normal: Vec3, offset: f64 },
    /// Box rotated by `yaw` radians about the vertical axis.
    Box { center: Vec3, half: Vec3, yaw: f64 },
    /// Rectangle spanned by two orthogonal unit axes around `center`.
    Quad {
        center: Vec3,
        u: Vec3,
        v: Vec3,
        half_u: f64,
        half_v: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    /// Focal length as a multiple of the image width.
    pub focal: f64,
    /// Direction towards the light.
    pub light: Vec3,
    pub ambient: f64,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Self {
            primitives,
            focal: 0.8,
            light: normalize([-0.4, -1.0, -0.6]),
            ambient: 0.25,
        }
    }
}

struct Hit {
    t: f64,
    normal: Vec3,
}

fn intersect(shape: &Shape, dir: Vec3) -> Option<Hit> {
    match shape {
        Shape::Plane { normal, offset } => {
            let denom = dot(*normal, dir);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = offset / denom;
            (t > 1e-9).then(|| Hit {
                t,
                normal: if denom > 0.0 { [-normal[0], -normal[1], -normal[2]] } else { *normal },
            })
        }
        Shape::Quad {
            center,
            u,
            v,
            half_u,
            half_v,
        } => {
            let n = normalize([
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ]);
            let denom = dot(n, dir);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = dot(n, *center) / denom;
            if t <= 1e-9 {
                return None;
            }
            let p = sub([dir[0] * t, dir[1] * t, dir[2] * t], *center);
            (dot(p, *u).abs() <= *half_u && dot(p, *v).abs() <= *half_v).then(|| Hit {
                t,
                normal: if denom > 0.0 { [-n[0], -n[1], -n[2]] } else { n },
            })
        }
        Shape::Box { center, half, yaw } => {
            // Slab test in the box frame; the ray starts at the origin.
            let (s, c) = yaw.sin_cos();
            let to_local = |p: Vec3| [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]];
            let o = to_local([-center[0], -center[1], -center[2]]);
            let d = to_local(dir);
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut axis = 0;
            let mut sign = 1.0;
            for i in 0..3 {
                if d[i].abs() < 1e-12 {
                    if o[i].abs() > half[i] {
                        return None;
                    }
                    continue;
                }
                let mut t0 = (-half[i] - o[i]) / d[i];
                let mut t1 = (half[i] - o[i]) / d[i];
                let mut s0 = -1.0;
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                    s0 = 1.0;
                }
                if t0 > t_near {
                    t_near = t0;
                    axis = i;
                    sign = s0;
                }
                t_far = t_far.min(t1);
            }
            if t_near > t_far || t_near <= 1e-9 {
                return None;
            }
            let mut ln = [0.0; 3];
            ln[axis] = sign;
            // Back to camera frame.
            let normal = [c * ln[0] - s * ln[2], ln[1], s * ln[0] + c * ln[2]];
            Some(Hit { t: t_near, normal })
        }
    }
}

/// Renders depth and Lambertian-shaded color. Pixels whose ray hits nothing
/// get depth `0` and black color.
pub fn render_scene(scene: &Scene, height: usize, width: usize) -> Result<(RgbImage, DepthMap)> {
    let f = scene.focal * width as f64;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let mut rgb = Vec::with_capacity(height * width);
    let mut depth = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let dir = [(x as f64 + 0.5 - cx) / f, (y as f64 + 0.5 - cy) / f, 1.0];
            let mut best: Option<(Hit, &Primitive)> = None;
            for p in &scene.primitives {
                if let Some(hit) = intersect(&p.shape, dir) {
                    if best.as_ref().map_or(true, |(b, _)| hit.t < b.t) {
                        best = Some((hit, p));
                    }
                }
            }
            match best {
                Some((hit, p)) => {
                    let shade = scene.ambient + (1.0 - scene.ambient) * dot(hit.normal, scene.light).max(0.0);
                    rgb.push([p.albedo[0] * shade, p.albedo[1] * shade, p.albedo[2] * shade]);
                    // dir.z == 1, so the ray parameter is the z-depth.
                    depth.push(hit.t);
                }
                None => {
                    rgb.push([0.0; 3]);
                    depth.push(0.0);
                }
            }
        }
    }
    Ok((RgbImage::new(height, width, rgb)?, DepthMap::new(height, width, depth)?))
}

fn random_albedo(rng: &mut impl Rng) -> Vec3 {
    [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)]
}

/// Random room: floor, ceiling, side walls and back wall, plus
/// `primitive_count` boxes and panels.
pub fn random_scene(cfg: &SceneConfig, rng: &mut impl Rng) -> Scene {
    let floor_y = rng.gen_range(1.1..1.6);
    let ceil_y = -rng.gen_range(1.0..1.5);
    let half_w = rng.gen_range(1.6..3.2);
    let back = rng.gen_range(4.0..(cfg.max_depth - 0.5).max(4.5));
    let wall = |normal: Vec3, offset: f64, rng: &mut ChaCha8Rng| Primitive {
        shape: Shape::Plane { normal, offset },
        albedo: random_albedo(rng),
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut prims = vec![
        wall([0.0, 1.0, 0.0], floor_y, &mut local),
        wall([0.0, 1.0, 0.0], ceil_y, &mut local),
        wall([1.0, 0.0, 0.0], -half_w, &mut local),
        wall([1.0, 0.0, 0.0], half_w, &mut local),
        wall([0.0, 0.0, 1.0], back, &mut local),
    ];
    for _ in 0..cfg.primitive_count {
        let albedo = random_albedo(rng);
        let z = rng.gen_range(1.5..(back - 0.4).max(1.6));
        let x = rng.gen_range(-half_w + 0.3..half_w - 0.3);
        if rng.gen_bool(0.7) {
            let half = [rng.gen_range(0.15..0.7), rng.gen_range(0.15..0.6), rng.gen_range(0.15..0.6)];
            // Boxes stand on the floor.
            let center = [x, floor_y - half[1], z];
            prims.push(Primitive {
                shape: Shape::Box {
                    center,
                    half,
                    yaw: rng.gen_range(-0.8..0.8),
                },
                albedo,
            });
        } else {
            let yaw: f64 = rng.gen_range(-1.0..1.0);
            let (s, c) = yaw.sin_cos();
            prims.push(Primitive {
                shape: Shape::Quad {
                    center: [x, rng.gen_range(ceil_y + 0.5..floor_y - 0.3), z],
                    u: [c, 0.0, s],
                    v: [0.0, 1.0, 0.0],
                    half_u: rng.gen_range(0.2..0.8),
                    half_v: rng.gen_range(0.2..0.6),
                },
                albedo,
            });
        }
    }
    Scene::new(prims)
}

/// Deterministic synthetic sample: dense ground truth, sensor equal to the
/// ground truth, full validity mask.
pub fn generate_scene(cfg: &SceneConfig) -> Result<RgbdSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let scene = random_scene(cfg, &mut rng);
    let (rgb, depth) = render_scene(&scene, cfg.height, cfg.width)?;
    let noise = Normal::new(0.0, cfg.rgb_noise.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let pixels = rgb
        .pixels()
        .iter()
        .map(|p| p.map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0)))
        .collect();
    let rgb = RgbImage::new(cfg.height, cfg.width, pixels)?;
    // The room is closed, so every ray hits something; clamp to the
    // configured range.
    let depth = depth.map_indexed(|_, v| v.clamp(cfg.min_depth, cfg.max_depth));
    RgbdSample::new(rgb, depth.clone(), Some(depth))
}
