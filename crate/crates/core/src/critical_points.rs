//! Critical points of the distance function `d_P` with value at most `r`.
//!
//! A subset `Y` of `k + 1` points generates an index-k critical point when its
//! circumcenter lies in the open convex hull of `Y` and no point of the cloud
//! lies strictly inside its circumball; the point is the circumcenter and the
//! value is the circumradius.
//!
//! Each subset is enumerated once, from its generator with the smallest index
//! (the anchor). Everything that matters lies within `2r` of the anchor, so
//! the anchor's neighbor list (including periodic images) suffices for both
//! candidate generation and the empty-ball test. In dimensions up to 3 the
//! candidates are further restricted to the anchor's Voronoi neighbors: a
//! critical point is equidistant from its generators and no closer to any
//! other point, so it lies on a face shared by their Voronoi cells.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cech::combinations;
use crate::geometry::{dist2, dot, Coords, Frame, Metric, DEFAULT_TOL, MAX_DIM};
use crate::sampling::PointCloud;
use crate::spatial::SpatialGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriticalError {
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("periodic metric needs r < side/2 (r = {r}, side = {side})")]
    MetricRange { r: f64, side: f64 },
    #[error("brute-force enumeration on a periodic cloud needs r < side/4 (r = {r}, side = {side})")]
    BruteForceRange { r: f64, side: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    #[serde(rename = "k")]
    pub index: usize,
    pub center: Vec<f64>,
    pub value: f64,
    pub generators: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalCounts {
    pub r: f64,
    pub counts: Vec<usize>,
}

impl CriticalCounts {
    /// Alternating sum of the counts.
    pub fn euler(&self) -> i64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| if k % 2 == 0 { c as i64 } else { -(c as i64) })
            .sum()
    }
}

/// Measure-zero events met during an enumeration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    /// Affinely dependent candidate subsets.
    pub degenerate: usize,
    /// Candidates rejected because another point sat on their circumsphere.
    pub boundary: usize,
}

impl std::ops::AddAssign for Diagnostics {
    fn add_assign(&mut self, o: Diagnostics) {
        self.degenerate += o.degenerate;
        self.boundary += o.boundary;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Voronoi pruning where implemented (dimension <= 3), neighbor cliques otherwise.
    #[default]
    Auto,
    Voronoi,
    /// Every set of larger-index neighbors within `2r` of the anchor.
    Neighbors,
    /// All subsets; exponential, for tests.
    BruteForce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub points: Vec<CriticalPoint>,
    pub diagnostics: Diagnostics,
}

pub fn enumerate_critical_points(
    cloud: &PointCloud,
    r: f64,
    max_index: usize,
) -> Result<Vec<CriticalPoint>, CriticalError> {
    Ok(enumerate_with(cloud, r, max_index, Strategy::Auto)?.points)
}

pub fn critical_counts(cloud: &PointCloud, r: f64, max_index: usize) -> Result<CriticalCounts, CriticalError> {
    let points = enumerate_critical_points(cloud, r, max_index)?;
    Ok(counts_from(cloud.len(), r, max_index, &points))
}

pub fn counts_from(n: usize, r: f64, max_index: usize, points: &[CriticalPoint]) -> CriticalCounts {
    let mut counts = vec![0usize; max_index + 1];
    counts[0] = n;
    for p in points {
        counts[p.index] += 1;
    }
    CriticalCounts { r, counts }
}

pub fn morse_euler(cloud: &PointCloud, r: f64, max_index: usize) -> Result<i64, CriticalError> {
    Ok(critical_counts(cloud, r, max_index)?.euler())
}

/// One JSON object per critical point.
pub fn write_jsonl<W: Write>(points: &[CriticalPoint], mut out: W) -> io::Result<()> {
    for p in points {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn enumerate_with(
    cloud: &PointCloud,
    r: f64,
    max_index: usize,
    strategy: Strategy,
) -> Result<Enumeration, CriticalError> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(CriticalError::InvalidRadius(r));
    }
    if let Metric::Periodic { side } = cloud.metric() {
        if r >= side / 2.0 {
            return Err(CriticalError::MetricRange { r, side });
        }
        if strategy == Strategy::BruteForce && r >= side / 4.0 {
            return Err(CriticalError::BruteForceRange { r, side });
        }
    }
    let d = cloud.dim();
    // more than d+1 points are never affinely independent
    let top = max_index.min(d);
    let mut out = if top == 0 || cloud.len() < 2 {
        Enumeration { points: Vec::new(), diagnostics: Diagnostics::default() }
    } else {
        match strategy {
            Strategy::BruteForce => brute_force(cloud, r, top),
            Strategy::Voronoi | Strategy::Auto if d <= 3 => by_anchor(cloud, r, top, true),
            _ => by_anchor(cloud, r, top, false),
        }
    };
    out.points.sort_by(|a, b| {
        a.index.cmp(&b.index).then(a.value.total_cmp(&b.value)).then_with(|| a.generators.cmp(&b.generators))
    });
    Ok(out)
}

fn tol_for(radius: f64) -> f64 {
    DEFAULT_TOL * (1.0 + radius)
}

#[derive(Clone, Copy)]
struct Neighbor {
    j: u32,
    disp: Coords,
    d2: f64,
}

fn by_anchor(cloud: &PointCloud, r: f64, top: usize, voronoi: bool) -> Enumeration {
    let grid = SpatialGrid::new(cloud, (2.0 * r / 3.0).max(1e-12));
    let results: Vec<(Vec<CriticalPoint>, Diagnostics)> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let mut anchor = Anchor::new(cloud, &grid, i, r, top, voronoi);
            anchor.run();
            (anchor.out, anchor.diag)
        })
        .collect();
    let mut points = Vec::new();
    let mut diagnostics = Diagnostics::default();
    for (p, dg) in results {
        points.extend(p);
        diagnostics += dg;
    }
    Enumeration { points, diagnostics }
}

struct Anchor<'a> {
    cloud: &'a PointCloud,
    i: usize,
    d: usize,
    r: f64,
    top: usize,
    nb: Vec<Neighbor>,
    /// positions in `nb` usable as further generators
    cand: Vec<usize>,
    chosen: Vec<usize>,
    out: Vec<CriticalPoint>,
    diag: Diagnostics,
}

impl<'a> Anchor<'a> {
    fn new(cloud: &'a PointCloud, grid: &SpatialGrid, i: usize, r: f64, top: usize, voronoi: bool) -> Anchor<'a> {
        let d = cloud.dim();
        let reach = 2.0 * r * (1.0 + 1e-9);
        let mut nb = Vec::new();
        grid.for_each_within(cloud.point(i), reach, |j, disp, d2| {
            if !(j == i && d2 == 0.0) {
                nb.push(Neighbor { j: j as u32, disp: *disp, d2 });
            }
        });
        nb.sort_by(|a, b| {
            a.d2.total_cmp(&b.d2).then(a.j.cmp(&b.j)).then_with(|| {
                a.disp[..d].iter().zip(&b.disp[..d]).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let adjacent = if voronoi { voronoi_adjacent(&nb, d, r) } else { vec![true; nb.len()] };
        let cand = (0..nb.len()).filter(|&q| nb[q].j as usize > i && adjacent[q]).collect();
        Anchor { cloud, i, d, r, top, nb, cand, chosen: Vec::with_capacity(top), out: Vec::new(), diag: Diagnostics::default() }
    }

    fn run(&mut self) {
        self.extend(0);
    }

    fn rows(&self, extra: usize) -> ([Coords; MAX_DIM + 1], usize) {
        let mut rows = [[0.0; MAX_DIM]; MAX_DIM + 1];
        for (t, &q) in self.chosen.iter().enumerate() {
            rows[t + 1] = self.nb[q].disp;
        }
        rows[self.chosen.len() + 1] = self.nb[extra].disp;
        (rows, self.chosen.len() + 2)
    }

    fn extend(&mut self, start: usize) {
        let d = self.d;
        let limit = 4.0 * self.r * self.r * (1.0 + 1e-9);
        for c in start..self.cand.len() {
            let q = self.cand[c];
            let fits = self.chosen.iter().all(|&o| {
                self.nb[o].j != self.nb[q].j && dist2(&self.nb[o].disp, &self.nb[q].disp, d) <= limit
            });
            if !fits {
                continue;
            }
            let (rows, len) = self.rows(q);
            let frame = match Frame::new(&rows[..len], d, DEFAULT_TOL) {
                Ok(f) => f,
                Err(_) => {
                    self.diag.degenerate += 1;
                    continue;
                }
            };
            let (center, radius) = frame.circumsphere();
            // circumradii of subsets never exceed that of the full set
            if radius > self.r {
                continue;
            }
            let lam = frame.barycentric(&center);
            if lam[..len].iter().all(|&l| l > DEFAULT_TOL) {
                self.chosen.push(q);
                if self.ball_is_empty(&center, radius) {
                    self.emit(&center, radius);
                }
                self.chosen.pop();
            }
            if len - 1 < self.top {
                self.chosen.push(q);
                self.extend(c + 1);
                self.chosen.pop();
            }
        }
    }

    fn ball_is_empty(&mut self, center: &Coords, radius: f64) -> bool {
        let d = self.d;
        let tol = tol_for(radius);
        let reach = (2.0 * radius + 2.0 * tol).powi(2);
        for (q, nb) in self.nb.iter().enumerate() {
            if nb.d2 > reach {
                break;
            }
            if self.chosen.contains(&q) {
                continue;
            }
            let dist = dist2(&nb.disp, center, d).sqrt();
            if dist < radius - tol {
                return false;
            }
            if dist <= radius + tol {
                self.diag.boundary += 1;
                return false;
            }
        }
        true
    }

    fn emit(&mut self, center: &Coords, radius: f64) {
        let d = self.d;
        let base = self.cloud.point(self.i);
        let mut c: Vec<f64> = (0..d).map(|t| base[t] + center[t]).collect();
        self.cloud.metric().wrap(&mut c);
        let mut generators: Vec<u32> = std::iter::once(self.i as u32).chain(self.chosen.iter().map(|&q| self.nb[q].j)).collect();
        generators.sort_unstable();
        self.out.push(CriticalPoint { index: self.chosen.len(), center: c, value: radius, generators });
    }
}

/// Marks the neighbors whose bisector hyperplane touches the anchor's
/// Voronoi cell clipped to the cube `[-r, r]^d`. Falls back to all neighbors
/// above dimension 3.
fn voronoi_adjacent(nb: &[Neighbor], d: usize, r: f64) -> Vec<bool> {
    if d > 3 || d == 0 {
        return vec![true; nb.len()];
    }
    let mut cell = Cell::cube(d, r);
    let mut processed = 0;
    for n in nb {
        if 0.5 * n.d2.sqrt() > cell.max_norm() * (1.0 + 1e-9) {
            break;
        }
        cell.clip(&n.disp, 0.5 * n.d2);
        processed += 1;
    }
    let verts = cell.vertices();
    let mut adjacent = vec![false; nb.len()];
    for (q, n) in nb.iter().enumerate().take(processed) {
        let b = 0.5 * n.d2;
        let tol = 1e-9 * (r * r + b);
        adjacent[q] = verts.iter().any(|x| dot(x, &n.disp, d) - b >= -tol);
    }
    adjacent
}

/// Convex cell as an interval, a polygon or a list of polygonal faces.
struct Cell {
    d: usize,
    faces: Vec<Vec<Coords>>,
}

impl Cell {
    fn cube(d: usize, r: f64) -> Cell {
        let pt = |xs: &[f64]| {
            let mut c = [0.0; MAX_DIM];
            c[..xs.len()].copy_from_slice(xs);
            c
        };
        let faces = match d {
            1 => vec![vec![pt(&[-r]), pt(&[r])]],
            2 => vec![vec![pt(&[-r, -r]), pt(&[r, -r]), pt(&[r, r]), pt(&[-r, r])]],
            _ => {
                let mut faces = Vec::new();
                for axis in 0..3 {
                    for s in [-r, r] {
                        let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
                        let face = [(-r, -r), (r, -r), (r, r), (-r, r)]
                            .iter()
                            .map(|&(a, b)| {
                                let mut c = [0.0; MAX_DIM];
                                c[axis] = s;
                                c[u] = a;
                                c[w] = b;
                                c
                            })
                            .collect();
                        faces.push(face);
                    }
                }
                faces
            }
        };
        Cell { d, faces }
    }

    fn vertices(&self) -> Vec<Coords> {
        self.faces.iter().flatten().copied().collect()
    }

    fn max_norm(&self) -> f64 {
        self.faces.iter().flatten().map(|v| dot(v, v, self.d)).fold(0.0, f64::max).sqrt()
    }

    /// Keeps the part with `a . x <= b`.
    fn clip(&mut self, a: &Coords, b: f64) {
        let d = self.d;
        let eps = 1e-12 * (b.abs() + 1e-300);
        match d {
            1 => {
                let seg = &mut self.faces[0];
                if seg.is_empty() {
                    return;
                }
                let cut = b / a[0];
                if a[0] > 0.0 {
                    seg[1][0] = seg[1][0].min(cut);
                } else {
                    seg[0][0] = seg[0][0].max(cut);
                }
                if seg[0][0] > seg[1][0] {
                    seg.clear();
                }
            }
            2 => {
                let mut on_plane = Vec::new();
                let poly = clip_polygon(&self.faces[0], a, b, d, eps, &mut on_plane);
                self.faces[0] = poly;
            }
            _ => {
                let mut cap = Vec::new();
                let mut faces = Vec::with_capacity(self.faces.len() + 1);
                for f in &self.faces {
                    let g = clip_polygon(f, a, b, d, eps, &mut cap);
                    if g.len() >= 3 {
                        faces.push(g);
                    }
                }
                if cap.len() >= 3 {
                    faces.push(order_cap(cap, a));
                }
                self.faces = faces;
            }
        }
    }
}

/// Sutherland-Hodgman clip of one polygon; points on the cutting plane are
/// appended to `on_plane`.
fn clip_polygon(poly: &[Coords], a: &Coords, b: f64, d: usize, eps: f64, on_plane: &mut Vec<Coords>) -> Vec<Coords> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let n = poly.len();
    for idx in 0..n {
        let p = &poly[idx];
        let q = &poly[(idx + 1) % n];
        let sp = dot(p, a, d) - b;
        let sq = dot(q, a, d) - b;
        if sp <= eps {
            out.push(*p);
            if sp >= -eps {
                on_plane.push(*p);
            }
        }
        if (sp < -eps && sq > eps) || (sp > eps && sq < -eps) {
            let t = sp / (sp - sq);
            let mut x = [0.0; MAX_DIM];
            for k in 0..d {
                x[k] = p[k] + t * (q[k] - p[k]);
            }
            out.push(x);
            on_plane.push(x);
        }
    }
    out
}

/// Orders coplanar points by angle around their centroid, dropping repeats.
fn order_cap(mut pts: Vec<Coords>, normal: &Coords) -> Vec<Coords> {
    let n = pts.len() as f64;
    let mut c = [0.0; MAX_DIM];
    for p in &pts {
        for t in 0..3 {
            c[t] += p[t] / n;
        }
    }
    // in-plane basis
    let helper = if normal[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cross = |a: &[f64], b: &[f64]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let u = cross(&normal[..3], &helper);
    let w = cross(&normal[..3], &u);
    let angle = |p: &Coords| {
        let v = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        (v[0] * w[0] + v[1] * w[1] + v[2] * w[2]).atan2(v[0] * u[0] + v[1] * u[1] + v[2] * u[2])
    };
    pts.sort_by(|a, b| angle(a).total_cmp(&angle(b)));
    let scale = pts.iter().map(|p| dist2(p, &c, 3)).fold(0.0, f64::max).sqrt();
    let close = |a: &Coords, b: &Coords| dist2(a, b, 3).sqrt() <= 1e-12 * (1.0 + scale);
    let mut out: Vec<Coords> = Vec::with_capacity(pts.len());
    for p in pts {
        if out.last().is_none_or(|l| !close(l, &p)) {
            out.push(p);
        }
    }
    while out.len() > 1 && close(&out[0], out.last().unwrap()) {
        out.pop();
    }
    out
}

/// Tests every subset of up to `top + 1` points directly against the
/// definition, with minimum-image lifting relative to the subset's first point.
fn brute_force(cloud: &PointCloud, r: f64, top: usize) -> Enumeration {
    let n = cloud.len();
    let d = cloud.dim();
    let metric = cloud.metric();
    let mut points = Vec::new();
    let mut diagnostics = Diagnostics::default();
    let mut buf = [0.0; MAX_DIM];
    let lift = |base: &[f64], p: &[f64], buf: &mut [f64; MAX_DIM]| {
        metric.displacement(base, p, &mut buf[..d]);
        let mut row = [0.0; MAX_DIM];
        row[..d].copy_from_slice(&buf[..d]);
        row
    };
    for k in 1..=top {
        for subset in combinations(n, k + 1) {
            let base = cloud.point(subset[0]);
            let rows: Vec<Coords> = subset.iter().map(|&v| lift(base, cloud.point(v), &mut buf)).collect();
            let Ok(frame) = Frame::new(&rows, d, DEFAULT_TOL) else {
                diagnostics.degenerate += 1;
                continue;
            };
            let (center, radius) = frame.circumsphere();
            if radius > r {
                continue;
            }
            let lam = frame.barycentric(&center);
            if !lam[..=k].iter().all(|&l| l > DEFAULT_TOL) {
                continue;
            }
            let tol = tol_for(radius);
            let mut empty = true;
            for v in (0..n).filter(|v| !subset.contains(v)) {
                let p = lift(base, cloud.point(v), &mut buf);
                // distance on the torus from the lifted center
                let mut c = [0.0; MAX_DIM];
                metric.displacement(&center[..d], &p[..d], &mut c[..d]);
                let dist = dot(&c, &c, d).sqrt();
                if dist <= radius + tol {
                    if dist >= radius - tol {
                        diagnostics.boundary += 1;
                    }
                    empty = false;
                    break;
                }
            }
            if empty {
                let mut c: Vec<f64> = (0..d).map(|t| base[t] + center[t]).collect();
                metric.wrap(&mut c);
                points.push(CriticalPoint {
                    index: k,
                    center: c,
                    value: radius,
                    generators: subset.iter().map(|&v| v as u32).collect(),
                });
            }
        }
    }
    Enumeration { points, diagnostics }
}
