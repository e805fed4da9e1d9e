//! Geometric predicates and constructions in ambient `R^d`.
//!
//! Everything here works on small point sets (a handful of points in at most
//! [`MAX_DIM`] dimensions) and is allocation-free on the hot paths used by the
//! Čech builder and the critical-point enumerator. The public wrappers accept
//! anything that derefs to `[f64]`.

use thiserror::Error;

/// Largest ambient dimension supported by the fixed-size kernels.
pub const MAX_DIM: usize = 8;

/// Default relative tolerance for geometric predicates.
pub const DEFAULT_TOL: f64 = 1e-9;

/// A point stored in a fixed-size row; only the first `d` entries are used.
pub type Coords = [f64; MAX_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("points are not in general position (affine rank {rank} < {needed})")]
    Degenerate { rank: usize, needed: usize },
    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{count} points cannot be affinely independent in R^{dim}")]
    TooManyPoints { count: usize, dim: usize },
    #[error("ambient dimension {0} exceeds the supported maximum {MAX_DIM}")]
    DimensionTooLarge(usize),
    #[error("empty point set")]
    Empty,
}

/// The unique smallest sphere through an affinely independent point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Circumsphere {
    pub center: Vec<f64>,
    pub radius: f64,
    pub defining_subset: Vec<usize>,
}

/// A closed ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Orthonormal frame of the affine hull of `k + 1` points, from a modified
/// Gram-Schmidt QR of the difference vectors `p_i - p_0`.
#[derive(Clone)]
pub(crate) struct Frame {
    d: usize,
    k: usize,
    origin: Coords,
    q: [Coords; MAX_DIM],
    r: [[f64; MAX_DIM]; MAX_DIM],
}

impl Frame {
    pub(crate) fn new(rows: &[Coords], d: usize, tol: f64) -> Result<Frame, GeometryError> {
        let npts = rows.len();
        if npts == 0 {
            return Err(GeometryError::Empty);
        }
        let k = npts - 1;
        if k > d {
            return Err(GeometryError::TooManyPoints { count: npts, dim: d });
        }
        let origin = rows[0];
        let mut q = [[0.0; MAX_DIM]; MAX_DIM];
        let mut r = [[0.0; MAX_DIM]; MAX_DIM];
        let mut max_len: f64 = 0.0;
        for j in 0..k {
            let mut v = [0.0; MAX_DIM];
            for t in 0..d {
                v[t] = rows[j + 1][t] - origin[t];
            }
            max_len = max_len.max(dot(&v, &v, d).sqrt());
            for i in 0..j {
                let proj = dot(&q[i], &v, d);
                r[i][j] = proj;
                for t in 0..d {
                    v[t] -= proj * q[i][t];
                }
            }
            // second pass keeps the basis orthogonal for nearly dependent input
            for i in 0..j {
                let proj = dot(&q[i], &v, d);
                r[i][j] += proj;
                for t in 0..d {
                    v[t] -= proj * q[i][t];
                }
            }
            let norm = dot(&v, &v, d).sqrt();
            r[j][j] = norm;
            if norm > 0.0 {
                for t in 0..d {
                    q[j][t] = v[t] / norm;
                }
            }
        }
        for j in 0..k {
            if !(r[j][j] > tol * max_len) {
                return Err(GeometryError::Degenerate { rank: j, needed: k });
            }
        }
        Ok(Frame { d, k, origin, q, r })
    }

    /// Circumcenter (in hull coordinates `z`, ambient `center`) and radius.
    pub(crate) fn circumsphere(&self) -> (Coords, f64) {
        let (d, k) = (self.d, self.k);
        // |v_j|^2 / 2 = sum_{i<=j} r_ij z_i  (lower-triangular system R^T z = b)
        let mut z = [0.0; MAX_DIM];
        for j in 0..k {
            let mut b = 0.0;
            for i in 0..=j {
                b += self.r[i][j] * self.r[i][j];
            }
            let mut acc = 0.5 * b;
            for i in 0..j {
                acc -= self.r[i][j] * z[i];
            }
            z[j] = acc / self.r[j][j];
        }
        let mut center = self.origin;
        let mut r2 = 0.0;
        for i in 0..k {
            r2 += z[i] * z[i];
            for t in 0..d {
                center[t] += z[i] * self.q[i][t];
            }
        }
        (center, r2.sqrt())
    }

    /// Barycentric coordinates of `x` (assumed to lie in the affine hull).
    pub(crate) fn barycentric(&self, x: &Coords) -> [f64; MAX_DIM + 1] {
        let (d, k) = (self.d, self.k);
        let mut w = [0.0; MAX_DIM];
        let mut diff = [0.0; MAX_DIM];
        for t in 0..d {
            diff[t] = x[t] - self.origin[t];
        }
        for i in 0..k {
            w[i] = dot(&self.q[i], &diff, d);
        }
        // back substitution R lambda = w
        let mut lam = [0.0; MAX_DIM + 1];
        for i in (0..k).rev() {
            let mut acc = w[i];
            for j in (i + 1)..k {
                acc -= self.r[i][j] * lam[j + 1];
            }
            lam[i + 1] = acc / self.r[i][i];
        }
        lam[0] = 1.0 - lam[1..=k].iter().sum::<f64>();
        lam
    }
}

#[inline]
pub(crate) fn dot(a: &Coords, b: &Coords, d: usize) -> f64 {
    let mut s = 0.0;
    for t in 0..d {
        s += a[t] * b[t];
    }
    s
}

#[inline]
pub(crate) fn dist2(a: &Coords, b: &Coords, d: usize) -> f64 {
    let mut s = 0.0;
    for t in 0..d {
        let x = a[t] - b[t];
        s += x * x;
    }
    s
}

pub(crate) fn to_row(p: &[f64]) -> Coords {
    let mut row = [0.0; MAX_DIM];
    row[..p.len()].copy_from_slice(p);
    row
}

fn collect_rows<P: AsRef<[f64]>>(points: &[P]) -> Result<(Vec<Coords>, usize), GeometryError> {
    let first = points.first().ok_or(GeometryError::Empty)?;
    let d = first.as_ref().len();
    if d > MAX_DIM {
        return Err(GeometryError::DimensionTooLarge(d));
    }
    let mut rows = Vec::with_capacity(points.len());
    for p in points {
        let p = p.as_ref();
        if p.len() != d {
            return Err(GeometryError::DimensionMismatch { expected: d, got: p.len() });
        }
        rows.push(to_row(p));
    }
    Ok((rows, d))
}

/// Center and radius of the unique (k-1)-sphere through `k + 1` affinely
/// independent points, with the center in their affine hull.
pub fn circumsphere<P: AsRef<[f64]>>(points: &[P], tol: f64) -> Result<Circumsphere, GeometryError> {
    let (rows, d) = collect_rows(points)?;
    if rows.len() < 2 {
        return Err(GeometryError::Degenerate { rank: 0, needed: 1 });
    }
    let frame = Frame::new(&rows, d, tol)?;
    let (center, radius) = frame.circumsphere();
    Ok(Circumsphere {
        center: center[..d].to_vec(),
        radius,
        defining_subset: (0..rows.len()).collect(),
    })
}

/// Open convex hull membership: all barycentric coordinates of `center`
/// with respect to `points` exceed `tol`.
pub fn in_open_convex_hull<P: AsRef<[f64]>>(
    center: &[f64],
    points: &[P],
    tol: f64,
) -> Result<bool, GeometryError> {
    let (rows, d) = collect_rows(points)?;
    if center.len() != d {
        return Err(GeometryError::DimensionMismatch { expected: d, got: center.len() });
    }
    let frame = Frame::new(&rows, d, tol)?;
    let lam = frame.barycentric(&to_row(center));
    Ok(lam[..rows.len()].iter().all(|&l| l > tol))
}

/// Smallest enclosing ball, processing the points in the given order.
pub fn min_enclosing_ball<P: AsRef<[f64]>>(points: &[P], tol: f64) -> Result<Ball, GeometryError> {
    let (rows, d) = collect_rows(points)?;
    let (center, radius) = miniball_rows(&rows, d, tol);
    Ok(Ball { center: center[..d].to_vec(), radius })
}

/// Smallest enclosing ball after a seeded shuffle of the input (expected
/// linear time on large inputs, reproducible for a fixed seed).
pub fn min_enclosing_ball_shuffled<P: AsRef<[f64]>>(
    points: &[P],
    tol: f64,
    seed: u64,
) -> Result<Ball, GeometryError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let (mut rows, d) = collect_rows(points)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let (center, radius) = miniball_rows(&rows, d, tol);
    Ok(Ball { center: center[..d].to_vec(), radius })
}

/// Welzl's recursion over rows; returns (center, radius).
pub(crate) fn miniball_rows(rows: &[Coords], d: usize, tol: f64) -> (Coords, f64) {
    let mut support: Vec<Coords> = Vec::with_capacity(d + 1);
    let (c, r) = welzl(rows, rows.len(), &mut support, d, tol);
    (c, r.max(0.0))
}

/// Smallest ball enclosing `rows` with `pinned` on its boundary; this is the
/// enclosing ball of `rows` plus `pinned` whenever `pinned` lies outside the
/// smallest ball of `rows`.
pub(crate) fn miniball_rows_pinned(rows: &[Coords], pinned: &Coords, d: usize, tol: f64) -> (Coords, f64) {
    let mut support: Vec<Coords> = Vec::with_capacity(d + 1);
    support.push(*pinned);
    let (c, r) = welzl(rows, rows.len(), &mut support, d, tol);
    (c, r.max(0.0))
}

#[inline]
fn inside(c: &Coords, r: f64, p: &Coords, d: usize) -> bool {
    let slack = 1e-12 * (1.0 + r);
    dist2(c, p, d).sqrt() <= r + slack
}

fn welzl(rows: &[Coords], n: usize, support: &mut Vec<Coords>, d: usize, tol: f64) -> (Coords, f64) {
    if n == 0 || support.len() == d + 1 {
        return support_ball(support, d, tol);
    }
    let p = rows[n - 1];
    let (c, r) = welzl(rows, n - 1, support, d, tol);
    if r >= 0.0 && inside(&c, r, &p, d) {
        return (c, r);
    }
    support.push(p);
    let out = welzl(rows, n - 1, support, d, tol);
    support.pop();
    out
}

/// Smallest ball with all support points on its boundary. Negative radius
/// encodes the empty ball.
fn support_ball(support: &[Coords], d: usize, tol: f64) -> (Coords, f64) {
    match support.len() {
        0 => ([0.0; MAX_DIM], -1.0),
        1 => (support[0], 0.0),
        2 => {
            let mut c = [0.0; MAX_DIM];
            for t in 0..d {
                c[t] = 0.5 * (support[0][t] + support[1][t]);
            }
            (c, 0.5 * dist2(&support[0], &support[1], d).sqrt())
        }
        3 | 4 if support.len() <= d + 1 => {
            gram_ball(support, d, tol).unwrap_or_else(|| match Frame::new(support, d, tol) {
                Ok(frame) => frame.circumsphere(),
                Err(_) => degenerate_support_ball(support, d, tol),
            })
        }
        _ => match Frame::new(support, d, tol) {
            Ok(frame) => frame.circumsphere(),
            Err(_) => degenerate_support_ball(support, d, tol),
        },
    }
}

/// Circumball of 3 or 4 points from the Gram system of the edge vectors at
/// the first point; `None` when the system is close to singular.
fn gram_ball(support: &[Coords], d: usize, tol: f64) -> Option<(Coords, f64)> {
    let k = support.len() - 1;
    let p0 = &support[0];
    let mut v = [[0.0; MAX_DIM]; 3];
    for i in 0..k {
        for t in 0..d {
            v[i][t] = support[i + 1][t] - p0[t];
        }
    }
    let mut g = [[0.0; 3]; 3];
    for i in 0..k {
        for j in 0..=i {
            let x = dot(&v[i], &v[j], d);
            g[i][j] = x;
            g[j][i] = x;
        }
    }
    let b = [0.5 * g[0][0], 0.5 * g[1][1], 0.5 * g[2][2]];
    let scale: f64 = (0..k).map(|i| g[i][i]).product();
    let z = if k == 2 {
        let det = g[0][0] * g[1][1] - g[0][1] * g[0][1];
        if !(det > tol * tol * scale) {
            return None;
        }
        [(b[0] * g[1][1] - b[1] * g[0][1]) / det, (g[0][0] * b[1] - g[0][1] * b[0]) / det, 0.0]
    } else {
        let det3 = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let det = det3(&g);
        if !(det > tol * tol * scale) {
            return None;
        }
        let mut z = [0.0; 3];
        for (col, zc) in z.iter_mut().enumerate() {
            let mut m = g;
            for row in 0..3 {
                m[row][col] = b[row];
            }
            *zc = det3(&m) / det;
        }
        z
    };
    let mut c = *p0;
    let mut off = [0.0; MAX_DIM];
    for i in 0..k {
        for t in 0..d {
            off[t] += z[i] * v[i][t];
        }
    }
    for t in 0..d {
        c[t] += off[t];
    }
    Some((c, dot(&off, &off, d).sqrt()))
}

// Nearly dependent support sets only arise from float noise; fall back to the
// smallest circumball over proper subsets that still encloses every point.
fn degenerate_support_ball(support: &[Coords], d: usize, tol: f64) -> (Coords, f64) {
    let mut best: Option<(Coords, f64)> = None;
    for skip in 0..support.len() {
        let sub: Vec<Coords> = support
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, p)| *p)
            .collect();
        let (c, r) = support_ball(&sub, d, tol);
        if support.iter().all(|p| dist2(&c, p, d).sqrt() <= r * (1.0 + 1e-9) + 1e-12)
            && best.is_none_or(|(_, br)| r < br)
        {
            best = Some((c, r));
        }
    }
    best.unwrap_or_else(|| {
        // enclose everything around the first point
        let r = support.iter().map(|p| dist2(&support[0], p, d).sqrt()).fold(0.0, f64::max);
        (support[0], r)
    })
}

/// Distance convention of a point cloud.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    /// Flat torus `[0, side)^d` with the minimum-image convention.
    Periodic { side: f64 },
}

impl Metric {
    /// Displacement `b - a`, wrapped to the nearest image for periodic metrics.
    #[inline]
    pub fn displacement(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        match *self {
            Metric::Euclidean => {
                for t in 0..a.len() {
                    out[t] = b[t] - a[t];
                }
            }
            Metric::Periodic { side } => {
                for t in 0..a.len() {
                    let x = b[t] - a[t];
                    out[t] = x - side * (x / side).round();
                }
            }
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut buf = [0.0; MAX_DIM];
        self.displacement(a, b, &mut buf[..a.len()]);
        buf[..a.len()].iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Maps a point back into the fundamental domain (identity for Euclidean).
    pub fn wrap(&self, p: &mut [f64]) {
        if let Metric::Periodic { side } = *self {
            for x in p.iter_mut() {
                *x -= side * (*x / side).floor();
                if *x >= side {
                    *x -= side;
                }
            }
        }
    }
}

/// Minimum distance from `x` to any point of the cloud, under the cloud's metric.
pub fn distance_to_set(x: &[f64], cloud: &crate::sampling::PointCloud) -> f64 {
    cloud
        .iter()
        .map(|p| cloud.metric().distance(x, p))
        .fold(f64::INFINITY, f64::min)
}

/// Minimum Euclidean distance from `x` to a list of points.
pub fn euclidean_distance_to_set<P: AsRef<[f64]>>(x: &[f64], points: &[P]) -> f64 {
    points
        .iter()
        .map(|p| {
            p.as_ref()
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}
