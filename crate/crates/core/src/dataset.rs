//! Procedural toy shapes with area-uniform surface sampling, plus the
//! training-time augmentation.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::{normalize_unit_sphere, Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeFamily {
    Sphere,
    Box,
    Torus,
    Cylinder,
    TwoBox,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 5] = [
        ShapeFamily::Sphere,
        ShapeFamily::Box,
        ShapeFamily::Torus,
        ShapeFamily::Cylinder,
        ShapeFamily::TwoBox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Box => "box",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::TwoBox => "two-box",
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown shape family `{s}`")))
    }
}

/// Recipe for a deterministic toy dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDatasetSpec {
    /// Family names: sphere, box, torus, cylinder, two-box.
    pub families: Vec<String>,
    pub samples_per_family: usize,
    pub n_points: usize,
    /// Standard deviation of Gaussian noise added before normalization.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            families: ShapeFamily::ALL.iter().map(|f| f.name().to_string()).collect(),
            samples_per_family: 40,
            n_points: 512,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl ToyDatasetSpec {
    pub fn parsed_families(&self) -> Result<Vec<ShapeFamily>> {
        self.families.iter().map(|f| f.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.families.is_empty(), Config, "no shape families");
        ensure!(
            self.samples_per_family > 0,
            Config,
            "samples_per_family must be positive"
        );
        ensure!(self.n_points > 0, Config, "n_points must be positive");
        ensure!(
            self.noise >= 0.0 && self.noise.is_finite(),
            Config,
            "noise must be finite and >= 0"
        );
        self.parsed_families().map(|_| ())
    }
}

/// One generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyShape {
    pub id: String,
    pub family: ShapeFamily,
    pub cloud: PointCloud,
}

/// Generates `samples_per_family` shapes per family, interleaving families,
/// each normalized to the unit sphere.
pub fn make_toy_dataset(spec: &ToyDatasetSpec) -> Result<Vec<ToyShape>> {
    spec.validate()?;
    let families = spec.parsed_families()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut out = Vec::with_capacity(families.len() * spec.samples_per_family);
    for s in 0..spec.samples_per_family {
        for &family in &families {
            let shape = ShapeParams::random(family, &mut rng);
            let mut pts = sample_surface(&shape, spec.n_points, &mut rng);
            if spec.noise > 0.0 {
                for p in &mut pts {
                    for c in p.iter_mut() {
                        *c += noise.sample(&mut rng);
                    }
                }
            }
            let (cloud, _) = normalize_unit_sphere(&PointCloud::new(pts)?);
            out.push(ToyShape {
                id: format!("{}-{s:04}", family.name()),
                family,
                cloud,
            });
        }
    }
    Ok(out)
}

/// Concrete dimensions of one shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeParams {
    Sphere {
        radius: f64,
    },
    Box {
        half: [f64; 3],
    },
    Torus {
        major: f64,
        minor: f64,
    },
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    TwoBox {
        half_a: [f64; 3],
        half_b: [f64; 3],
        offset: [f64; 3],
    },
}

impl ShapeParams {
    pub fn random<R: Rng + ?Sized>(family: ShapeFamily, rng: &mut R) -> Self {
        let half = |rng: &mut R| [0.0; 3].map(|_: f64| rng.random_range(0.3..1.0));
        match family {
            ShapeFamily::Sphere => ShapeParams::Sphere { radius: 1.0 },
            ShapeFamily::Box => ShapeParams::Box { half: half(rng) },
            ShapeFamily::Torus => {
                let major = rng.random_range(0.6..1.0);
                ShapeParams::Torus {
                    major,
                    minor: major * rng.random_range(0.2..0.5),
                }
            }
            ShapeFamily::Cylinder => ShapeParams::Cylinder {
                radius: rng.random_range(0.3..0.8),
                half_height: rng.random_range(0.3..1.0),
            },
            ShapeFamily::TwoBox => {
                let half_a = half(rng);
                let half_b = half(rng).map(|v| v * 0.6);
                // Stack b on top of a, shifted sideways.
                let offset = [
                    rng.random_range(-0.5..0.5) * half_a[0],
                    rng.random_range(-0.5..0.5) * half_a[1],
                    half_a[2] + half_b[2],
                ];
                ShapeParams::TwoBox {
                    half_a,
                    half_b,
                    offset,
                }
            }
        }
    }
}

/// Axis-aligned box faces as (area, sampler) pairs.
fn box_faces(half: [f64; 3], center: [f64; 3]) -> Vec<(f64, Face)> {
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let area = 4.0 * half[u] * half[v];
        for sign in [-1.0, 1.0] {
            faces.push((
                area,
                Face {
                    axis,
                    sign,
                    half,
                    center,
                },
            ));
        }
    }
    faces
}

#[derive(Debug, Clone, Copy)]
struct Face {
    axis: usize,
    sign: f64,
    half: [f64; 3],
    center: [f64; 3],
}

impl Face {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point3 {
        std::array::from_fn(|d| {
            let v = if d == self.axis {
                self.sign * self.half[d]
            } else {
                rng.random_range(-self.half[d]..self.half[d])
            };
            v + self.center[d]
        })
    }
}

fn pick<R: Rng + ?Sized>(areas: &[f64], rng: &mut R) -> usize {
    let total: f64 = areas.iter().sum();
    let mut t = rng.random_range(0.0..total);
    for (i, &a) in areas.iter().enumerate() {
        if t < a {
            return i;
        }
        t -= a;
    }
    areas.len() - 1
}

/// Index of the box face a surface point lies on, for diagnostics.
pub fn box_face_of(p: &Point3, half: [f64; 3]) -> usize {
    let (axis, _) =
        (0..3)
            .map(|d| (d, (p[d].abs() - half[d]).abs()))
            .fold(
                (0, f64::INFINITY),
                |best, cur| if cur.1 < best.1 { cur } else { best },
            );
    2 * axis + usize::from(p[axis] > 0.0)
}

/// Area-uniform samples on the surface, before any normalization.
pub fn sample_surface<R: Rng + ?Sized>(shape: &ShapeParams, n: usize, rng: &mut R) -> Vec<Point3> {
    let mut out = Vec::with_capacity(n);
    match *shape {
        ShapeParams::Sphere { radius } => {
            while out.len() < n {
                let v: [f64; 3] = [0.0; 3].map(|_: f64| StandardNormal.sample(rng));
                let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if len > 1e-12 {
                    out.push(v.map(|c| c / len * radius));
                }
            }
        }
        ShapeParams::Box { half } => {
            let faces = box_faces(half, [0.0; 3]);
            let areas: Vec<f64> = faces.iter().map(|f| f.0).collect();
            for _ in 0..n {
                out.push(faces[pick(&areas, rng)].1.sample(rng));
            }
        }
        ShapeParams::TwoBox {
            half_a,
            half_b,
            offset,
        } => {
            let mut faces = box_faces(half_a, [0.0; 3]);
            faces.extend(box_faces(half_b, offset));
            let areas: Vec<f64> = faces.iter().map(|f| f.0).collect();
            for _ in 0..n {
                out.push(faces[pick(&areas, rng)].1.sample(rng));
            }
        }
        ShapeParams::Torus { major, minor } => {
            // Rejection on the area element (major + minor cos v).
            while out.len() < n {
                let u = rng.random_range(0.0..TAU);
                let v = rng.random_range(0.0..TAU);
                let w = rng.random_range(0.0..major + minor);
                if w <= major + minor * v.cos() {
                    let ring = major + minor * v.cos();
                    out.push([ring * u.cos(), ring * u.sin(), minor * v.sin()]);
                }
            }
        }
        ShapeParams::Cylinder { radius, half_height } => {
            let side = TAU * radius * 2.0 * half_height;
            let cap = std::f64::consts::PI * radius * radius;
            let areas = [side, cap, cap];
            for _ in 0..n {
                let theta = rng.random_range(0.0..TAU);
                let p = match pick(&areas, rng) {
                    0 => [
                        radius * theta.cos(),
                        radius * theta.sin(),
                        rng.random_range(-half_height..half_height),
                    ],
                    k => {
                        let rho = radius * rng.random_range(0.0f64..1.0).sqrt();
                        let z = if k == 1 { -half_height } else { half_height };
                        [rho * theta.cos(), rho * theta.sin(), z]
                    }
                };
                out.push(p);
            }
        }
    }
    out
}

/// Augmentation ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub scale_range: [f64; 2],
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            scale_range: [0.8, 1.2],
            jitter_sigma: 0.005,
            jitter_clip: 0.015,
        }
    }
}

/// Uniform scale followed by a rotation of `angle` radians about z.
pub fn scale_rotate(cloud: &PointCloud, scale: f64, angle: f64) -> PointCloud {
    let (s, c) = angle.sin_cos();
    cloud.map_points(|p| {
        [
            scale * (c * p[0] - s * p[1]),
            scale * (s * p[0] + c * p[1]),
            scale * p[2],
        ]
    })
}

/// Random uniform scale, rotation about the vertical (z) axis and clipped
/// Gaussian jitter.
pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, spec: &AugmentSpec, rng: &mut R) -> Result<PointCloud> {
    let [lo, hi] = spec.scale_range;
    let scale = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let angle = rng.random_range(0.0..TAU);
    let moved = scale_rotate(cloud, scale, angle);
    if spec.jitter_sigma <= 0.0 {
        return Ok(moved);
    }
    let jitter = Normal::new(0.0, spec.jitter_sigma).expect("valid sigma");
    let clip = spec.jitter_clip;
    let pts = moved
        .points()
        .iter()
        .map(|p| p.map(|v| v + jitter.sample(rng).clamp(-clip, clip)))
        .collect();
    PointCloud::new(pts)
}

/// Splits shuffled indices into `batch`-sized chunks (the last may be short).
pub fn epoch_batches<R: Rng + ?Sized>(len: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}
