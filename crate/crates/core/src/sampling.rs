//! Binomial and Poisson point processes on a small family of closed manifolds.
//!
//! Every manifold here has a closed-form area element, so uniform sampling is
//! exact and on-manifold membership can be checked through a constraint
//! residual. Non-uniform densities are sampled by rejection against the
//! uniform measure with envelope `f_max`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Metric, MAX_DIM};

/// Name of the random generator recorded in every output artifact.
pub const GENERATOR_NAME: &str = "ChaCha8Rng";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("rejection sampler stalled: acceptance rate {rate:.3e} is below 1e-4")]
    RejectionStall { rate: f64 },
    #[error("invalid manifold: {0}")]
    InvalidManifold(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
}

/// Supported manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manifold {
    /// `[0, side)^m` with periodic boundary; intrinsic and ambient dimension `m`.
    FlatTorus { m: usize, side: f64 },
    /// Circle of the given radius in `R^2`.
    Circle { radius: f64 },
    /// Round 2-sphere of the given radius in `R^3`.
    Sphere2 { radius: f64 },
    /// Torus of revolution in `R^3` with tube radius `minor` around a core
    /// circle of radius `major`.
    EmbeddedTorus { major: f64, minor: f64 },
    /// Plain points in `R^dim` with no underlying manifold (loaded clouds).
    Ambient { dim: usize },
}

impl Manifold {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let bad = |msg: String| Err(SamplingError::InvalidManifold(msg));
        match *self {
            Manifold::FlatTorus { m, side } => {
                if m == 0 || m > MAX_DIM {
                    return bad(format!("flat torus dimension {m} outside 1..={MAX_DIM}"));
                }
                if !(side > 0.0 && side.is_finite()) {
                    return bad(format!("flat torus side {side} must be positive"));
                }
            }
            Manifold::Circle { radius } | Manifold::Sphere2 { radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return bad(format!("radius {radius} must be positive"));
                }
            }
            Manifold::EmbeddedTorus { major, minor } => {
                if !(minor > 0.0 && major > minor && major.is_finite()) {
                    return bad(format!("torus radii need 0 < minor < major, got {major}, {minor}"));
                }
            }
            Manifold::Ambient { dim } => {
                if dim == 0 || dim > MAX_DIM {
                    return bad(format!("ambient dimension {dim} outside 1..={MAX_DIM}"));
                }
            }
        }
        Ok(())
    }

    pub fn intrinsic_dim(&self) -> usize {
        match *self {
            Manifold::FlatTorus { m, .. } => m,
            Manifold::Circle { .. } => 1,
            Manifold::Sphere2 { .. } | Manifold::EmbeddedTorus { .. } => 2,
            Manifold::Ambient { dim } => dim,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match *self {
            Manifold::FlatTorus { m, .. } => m,
            Manifold::Circle { .. } => 2,
            Manifold::Sphere2 { .. } | Manifold::EmbeddedTorus { .. } => 3,
            Manifold::Ambient { dim } => dim,
        }
    }

    /// Riemannian volume; `None` for [`Manifold::Ambient`].
    pub fn volume(&self) -> Option<f64> {
        match *self {
            Manifold::FlatTorus { m, side } => Some(side.powi(m as i32)),
            Manifold::Circle { radius } => Some(2.0 * PI * radius),
            Manifold::Sphere2 { radius } => Some(4.0 * PI * radius * radius),
            Manifold::EmbeddedTorus { major, minor } => Some(4.0 * PI * PI * major * minor),
            Manifold::Ambient { .. } => None,
        }
    }

    pub fn metric(&self) -> Metric {
        match *self {
            Manifold::FlatTorus { side, .. } => Metric::Periodic { side },
            _ => Metric::Euclidean,
        }
    }

    /// Betti numbers `beta_0..beta_m` over Z/2.
    pub fn betti_numbers(&self) -> Option<Vec<usize>> {
        match *self {
            Manifold::FlatTorus { m, .. } => Some((0..=m).map(|k| binomial(m, k)).collect()),
            Manifold::Circle { .. } => Some(vec![1, 1]),
            Manifold::Sphere2 { .. } => Some(vec![1, 0, 1]),
            Manifold::EmbeddedTorus { .. } => Some(vec![1, 2, 1]),
            Manifold::Ambient { .. } => None,
        }
    }

    /// Absolute deviation of `p` from the manifold's defining constraint.
    pub fn residual(&self, p: &[f64]) -> f64 {
        match *self {
            Manifold::FlatTorus { side, .. } => p
                .iter()
                .map(|&x| if (0.0..side).contains(&x) { 0.0 } else { x.min(x - side).abs() })
                .fold(0.0, f64::max),
            Manifold::Circle { radius } | Manifold::Sphere2 { radius } => {
                (p.iter().map(|x| x * x).sum::<f64>().sqrt() - radius).abs()
            }
            Manifold::EmbeddedTorus { major, minor } => {
                let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
                (((rho - major).powi(2) + p[2] * p[2]).sqrt() - minor).abs()
            }
            Manifold::Ambient { .. } => 0.0,
        }
    }

    /// Draws one point from the normalized volume measure.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match *self {
            Manifold::FlatTorus { m, side } => {
                for x in out.iter_mut().take(m) {
                    *x = rng.random::<f64>() * side;
                }
            }
            Manifold::Circle { radius } => {
                let t = rng.random::<f64>() * 2.0 * PI;
                out[0] = radius * t.cos();
                out[1] = radius * t.sin();
            }
            Manifold::Sphere2 { radius } => loop {
                let v: [f64; 3] = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 1e-12 {
                    for t in 0..3 {
                        out[t] = radius * v[t] / norm;
                    }
                    break;
                }
            },
            Manifold::EmbeddedTorus { major, minor } => {
                // area element (major + minor cos theta) dtheta dphi
                let theta = loop {
                    let theta = rng.random::<f64>() * 2.0 * PI;
                    let accept = (major + minor * theta.cos()) / (major + minor);
                    if rng.random::<f64>() < accept {
                        break theta;
                    }
                };
                let phi = rng.random::<f64>() * 2.0 * PI;
                let rho = major + minor * theta.cos();
                out[0] = rho * phi.cos();
                out[1] = rho * phi.sin();
                out[2] = minor * theta.sin();
            }
            Manifold::Ambient { .. } => {
                panic!("cannot sample from an ambient point set without a manifold")
            }
        }
    }

    /// Deterministic net with every point of the manifold within `eps` of it.
    pub fn coverage_net(&self, eps: f64) -> Vec<Vec<f64>> {
        assert!(eps > 0.0, "net spacing must be positive");
        let count = |len: f64, step: f64| ((len / step) - 1e-9).ceil().max(1.0) as usize;
        match *self {
            Manifold::FlatTorus { m, side } => {
                let step = eps / (m as f64).sqrt();
                let per_axis = count(side, step);
                let h = side / per_axis as f64;
                let total = per_axis.pow(m as u32);
                (0..total)
                    .map(|mut idx| {
                        (0..m)
                            .map(|_| {
                                let c = idx % per_axis;
                                idx /= per_axis;
                                c as f64 * h
                            })
                            .collect()
                    })
                    .collect()
            }
            Manifold::Circle { radius } => {
                let n = count(2.0 * PI * radius, eps);
                (0..n)
                    .map(|i| {
                        let t = 2.0 * PI * i as f64 / n as f64;
                        vec![radius * t.cos(), radius * t.sin()]
                    })
                    .collect()
            }
            Manifold::Sphere2 { radius } => {
                // rings in polar angle; longitude count sized by the widest
                // latitude inside each ring's band
                let rings = count(PI * radius, eps) + 1;
                let dtheta = PI / (rings - 1) as f64;
                let mut net = Vec::new();
                for i in 0..rings {
                    let theta = i as f64 * dtheta;
                    let lo = (theta - dtheta / 2.0).max(0.0);
                    let hi = (theta + dtheta / 2.0).min(PI);
                    let widest = if lo <= PI / 2.0 && hi >= PI / 2.0 { 1.0 } else { lo.sin().max(hi.sin()) };
                    let n = count(2.0 * PI * radius * widest, eps);
                    for j in 0..n {
                        let phi = 2.0 * PI * j as f64 / n as f64;
                        net.push(vec![
                            radius * theta.sin() * phi.cos(),
                            radius * theta.sin() * phi.sin(),
                            radius * theta.cos(),
                        ]);
                    }
                }
                net
            }
            Manifold::EmbeddedTorus { major, minor } => {
                let nt = count(2.0 * PI * minor, eps);
                let np = count(2.0 * PI * (major + minor), eps);
                let mut net = Vec::with_capacity(nt * np);
                for i in 0..nt {
                    let theta = 2.0 * PI * i as f64 / nt as f64;
                    let rho = major + minor * theta.cos();
                    for j in 0..np {
                        let phi = 2.0 * PI * j as f64 / np as f64;
                        net.push(vec![rho * phi.cos(), rho * phi.sin(), minor * theta.sin()]);
                    }
                }
                net
            }
            Manifold::Ambient { .. } => Vec::new(),
        }
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Manifold::FlatTorus { m, side } => write!(f, "flat_torus({m},{side})"),
            Manifold::Circle { radius } => write!(f, "circle({radius})"),
            Manifold::Sphere2 { radius } => write!(f, "sphere2({radius})"),
            Manifold::EmbeddedTorus { major, minor } => write!(f, "embedded_torus({major},{minor})"),
            Manifold::Ambient { dim } => write!(f, "ambient({dim})"),
        }
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A density function on a manifold with known bounds.
#[derive(Clone)]
pub struct CustomDensity {
    pub name: String,
    pub f_min: f64,
    pub f_max: f64,
    pub eval: DensityFn,
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("name", &self.name)
            .field("f_min", &self.f_min)
            .field("f_max", &self.f_max)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Density {
    Uniform,
    Custom(CustomDensity),
}

impl Density {
    /// `f(x) = (1 + a cos(2 pi x_0 / side)) / side^m` on a flat torus.
    pub fn cosine_wave(manifold: &Manifold, amplitude: f64) -> Result<Density, SamplingError> {
        let Manifold::FlatTorus { m, side } = *manifold else {
            return Err(SamplingError::InvalidDensity("cosine density needs a flat torus".into()));
        };
        if !(0.0..1.0).contains(&amplitude) {
            return Err(SamplingError::InvalidDensity(format!(
                "cosine amplitude {amplitude} must lie in [0, 1)"
            )));
        }
        let vol = side.powi(m as i32);
        Ok(Density::Custom(CustomDensity {
            name: format!("cosine({amplitude})"),
            f_min: (1.0 - amplitude) / vol,
            f_max: (1.0 + amplitude) / vol,
            eval: Arc::new(move |x: &[f64]| (1.0 + amplitude * (2.0 * PI * x[0] / side).cos()) / vol),
        }))
    }

    pub fn label(&self) -> String {
        match self {
            Density::Uniform => "uniform".into(),
            Density::Custom(c) => c.name.clone(),
        }
    }

    pub fn f_min(&self, manifold: &Manifold) -> f64 {
        match self {
            Density::Uniform => 1.0 / manifold.volume().unwrap_or(f64::NAN),
            Density::Custom(c) => c.f_min,
        }
    }

    pub fn f_max(&self, manifold: &Manifold) -> f64 {
        match self {
            Density::Uniform => 1.0 / manifold.volume().unwrap_or(f64::NAN),
            Density::Custom(c) => c.f_max,
        }
    }

    pub fn eval(&self, manifold: &Manifold, x: &[f64]) -> f64 {
        match self {
            Density::Uniform => 1.0 / manifold.volume().unwrap_or(f64::NAN),
            Density::Custom(c) => (c.eval)(x),
        }
    }

    /// `int_M f^p` with a standard error: exact for uniform densities,
    /// Monte Carlo against the volume measure otherwise.
    pub fn power_integral(&self, manifold: &Manifold, p: u32, samples: usize, seed: u64) -> (f64, f64) {
        let vol = manifold.volume().expect("density integral needs a manifold volume");
        match self {
            Density::Uniform => (vol.powi(1 - p as i32), 0.0),
            Density::Custom(c) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut buf = [0.0; MAX_DIM];
                let d = manifold.ambient_dim();
                let (mut sum, mut sum2) = (crate::limit_theory::KahanSum::default(), 0.0);
                for _ in 0..samples {
                    manifold.sample_uniform(&mut rng, &mut buf[..d]);
                    let v = vol * (c.eval)(&buf[..d]).powi(p as i32);
                    sum.add(v);
                    sum2 += v * v;
                }
                let n = samples as f64;
                let mean = sum.value() / n;
                let var = (sum2 / n - mean * mean).max(0.0);
                (mean, (var / n).sqrt())
            }
        }
    }

    fn validate(&self, manifold: &Manifold) -> Result<(), SamplingError> {
        if let Density::Custom(c) = self {
            if !(c.f_min > 0.0 && c.f_max.is_finite() && c.f_max >= c.f_min) {
                return Err(SamplingError::InvalidDensity(format!(
                    "need 0 < f_min <= f_max < inf, got {} and {}",
                    c.f_min, c.f_max
                )));
            }
            if manifold.volume().is_none() {
                return Err(SamplingError::InvalidDensity("density needs a manifold".into()));
            }
        }
        Ok(())
    }
}

/// Number-of-points model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "n", rename_all = "snake_case")]
pub enum SamplingMode {
    /// Exactly `n` i.i.d. points.
    Binomial(usize),
    /// Poisson process with intensity `n f`.
    Poisson(usize),
}

impl SamplingMode {
    pub fn n(&self) -> usize {
        match *self {
            SamplingMode::Binomial(n) | SamplingMode::Poisson(n) => n,
        }
    }
}

/// Sampled points plus the metadata needed to reproduce and interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub spec: Manifold,
    #[serde(default = "default_density_label")]
    pub density: String,
    pub seed: u64,
    pub mode: Option<SamplingMode>,
    #[serde(default = "default_generator")]
    pub generator: String,
    #[serde(with = "rows")]
    pub points: FlatPoints,
}

fn default_density_label() -> String {
    "uniform".into()
}

fn default_generator() -> String {
    GENERATOR_NAME.into()
}

/// Row-major point storage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatPoints {
    pub dim: usize,
    pub coords: Vec<f64>,
}

mod rows {
    use super::FlatPoints;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &FlatPoints, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = if p.dim == 0 { Vec::new() } else { p.coords.chunks(p.dim).collect() };
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FlatPoints, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(serde::de::Error::custom("ragged point rows"));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(serde::de::Error::custom("non-finite coordinate"));
        }
        Ok(FlatPoints { dim, coords: rows.into_iter().flatten().collect() })
    }
}

impl PointCloud {
    /// Wraps explicit points; the manifold only supplies the metric and labels.
    pub fn from_points(spec: Manifold, points: &[Vec<f64>]) -> PointCloud {
        let dim = spec.ambient_dim();
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            assert_eq!(p.len(), dim, "point dimension does not match the manifold");
            coords.extend_from_slice(p);
        }
        PointCloud {
            spec,
            density: default_density_label(),
            seed: 0,
            mode: None,
            generator: default_generator(),
            points: FlatPoints { dim, coords },
        }
    }

    /// Euclidean cloud in `R^d` with no manifold attached.
    pub fn euclidean(points: &[Vec<f64>]) -> PointCloud {
        let dim = points.first().map_or(1, |p| p.len());
        PointCloud::from_points(Manifold::Ambient { dim }, points)
    }

    pub fn len(&self) -> usize {
        self.points.coords.len().checked_div(self.points.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.dim
    }

    pub fn metric(&self) -> Metric {
        self.spec.metric()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.points.dim;
        &self.points.coords[i * d..(i + 1) * d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.coords.chunks(self.points.dim.max(1))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(|p| p.to_vec()).collect()
    }

    /// Largest constraint residual over all points.
    pub fn max_residual(&self) -> f64 {
        self.iter().map(|p| self.spec.residual(p)).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("point cloud serializes")
    }

    pub fn from_json(s: &str) -> Result<PointCloud, serde_json::Error> {
        let cloud: PointCloud = serde_json::from_str(s)?;
        if !cloud.is_empty() && cloud.points.dim != cloud.spec.ambient_dim() {
            return Err(serde::de::Error::custom(format!(
                "points have {} coordinates but {} lives in R^{}",
                cloud.points.dim,
                cloud.spec,
                cloud.spec.ambient_dim()
            )));
        }
        Ok(cloud)
    }
}

/// SplitMix64 finalizer; used to derive independent replicate seeds.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples a point cloud; a pure function of its arguments.
pub fn sample(
    spec: &Manifold,
    density: &Density,
    mode: SamplingMode,
    seed: u64,
) -> Result<PointCloud, SamplingError> {
    spec.validate()?;
    if matches!(spec, Manifold::Ambient { .. }) {
        return Err(SamplingError::InvalidManifold("cannot sample without a manifold".into()));
    }
    density.validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = match mode {
        SamplingMode::Binomial(n) => n,
        SamplingMode::Poisson(n) => {
            if n == 0 {
                0
            } else {
                let dist = Poisson::new(n as f64).expect("positive Poisson mean");
                dist.sample(&mut rng) as usize
            }
        }
    };
    let d = spec.ambient_dim();
    let mut coords = vec![0.0; count * d];
    match density {
        Density::Uniform => {
            for p in coords.chunks_mut(d) {
                spec.sample_uniform(&mut rng, p);
            }
        }
        Density::Custom(c) => {
            let vol = spec.volume().expect("validated");
            let expected_rate = 1.0 / (vol * c.f_max);
            if expected_rate < 1e-4 {
                return Err(SamplingError::RejectionStall { rate: expected_rate });
            }
            let (mut tries, mut accepted) = (0u64, 0u64);
            for p in coords.chunks_mut(d) {
                loop {
                    tries += 1;
                    spec.sample_uniform(&mut rng, p);
                    let f = (c.eval)(p);
                    if rng.random::<f64>() * c.f_max < f {
                        accepted += 1;
                        break;
                    }
                    if tries >= 1_000_000 && (accepted as f64) < 1e-4 * tries as f64 {
                        return Err(SamplingError::RejectionStall { rate: accepted as f64 / tries as f64 });
                    }
                }
            }
        }
    }
    Ok(PointCloud {
        spec: *spec,
        density: density.label(),
        seed,
        mode: Some(mode),
        generator: GENERATOR_NAME.into(),
        points: FlatPoints { dim: d, coords },
    })
}
