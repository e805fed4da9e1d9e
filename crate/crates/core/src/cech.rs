//! Čech complexes of unions of balls.
//!
//! A simplex enters `Č(P, eps)` when the smallest ball enclosing its vertices
//! has radius at most `eps`; that is exactly the condition that the `eps`-balls
//! around the vertices share a point. Edges come from grid neighbor queries and
//! higher simplices from expanding lexicographically ordered cliques of the
//! edge graph.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dist2, miniball_rows, miniball_rows_pinned, Coords, Metric, DEFAULT_TOL, MAX_DIM};
use crate::sampling::PointCloud;
pub use crate::spatial::SpatialGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CechError {
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("periodic metric needs eps < side/4 (eps = {eps}, side = {side})")]
    MetricRange { eps: f64, side: f64 },
    #[error("simplex {0:?} is not strictly increasing or references a missing vertex")]
    BadSimplex(Vec<u32>),
}

/// Where a complex came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CloudRef {
    pub spec: String,
    pub seed: u64,
    pub len: usize,
}

/// Dimension-graded simplices, each a strictly increasing vertex tuple, kept
/// in lexicographic order within every dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplicialComplex {
    pub epsilon: f64,
    pub cloud_ref: CloudRef,
    n_vertices: usize,
    max_dim: usize,
    simplices: Vec<Vec<u32>>,
    values: Vec<Vec<f64>>,
    // children[k][p]..children[k][p+1]: k-simplices whose first k vertices
    // form the (k-1)-simplex p
    children: Vec<Vec<u32>>,
}

#[derive(Serialize)]
struct SimplexRecord<'a> {
    dim: usize,
    vertices: &'a [u32],
}

impl SimplicialComplex {
    /// Closure of the given simplices (each vertex list is sorted first).
    /// `max_dim` records how far the complex counts as built.
    pub fn from_simplices(
        n_vertices: usize,
        simplices: &[Vec<u32>],
        max_dim: usize,
    ) -> Result<SimplicialComplex, CechError> {
        let mut by_dim: Vec<std::collections::BTreeSet<Vec<u32>>> = vec![Default::default(); max_dim + 1];
        for s in simplices {
            let mut s = s.clone();
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) || s.iter().any(|&v| v as usize >= n_vertices) || s.is_empty() {
                return Err(CechError::BadSimplex(s));
            }
            // all nonempty subsets up to max_dim
            let k = s.len();
            for mask in 1u64..(1u64 << k) {
                let face: Vec<u32> = (0..k).filter(|b| mask >> b & 1 == 1).map(|b| s[b]).collect();
                if face.len() <= max_dim + 1 {
                    by_dim[face.len() - 1].insert(face);
                }
            }
        }
        for v in 0..n_vertices as u32 {
            by_dim[0].insert(vec![v]);
        }
        let lists: Vec<Vec<u32>> = by_dim.into_iter().map(|set| set.into_iter().flatten().collect()).collect();
        let values = lists.iter().enumerate().map(|(k, l)| vec![0.0; l.len() / (k + 1)]).collect();
        Ok(SimplicialComplex::assemble(0.0, CloudRef::default(), n_vertices, lists, values))
    }

    fn assemble(
        epsilon: f64,
        cloud_ref: CloudRef,
        n_vertices: usize,
        simplices: Vec<Vec<u32>>,
        values: Vec<Vec<f64>>,
    ) -> SimplicialComplex {
        let max_dim = simplices.len() - 1;
        // k-simplices sharing a (k-1)-prefix are contiguous in lexicographic
        // order; record the range for every prefix
        let mut children = vec![Vec::new()];
        for k in 1..=max_dim {
            let parents = &simplices[k - 1];
            let n_parents = parents.len() / k;
            let mut offsets = Vec::with_capacity(n_parents + 1);
            offsets.push(0u32);
            let mut parent = 0;
            for (i, s) in simplices[k].chunks(k + 1).enumerate() {
                while parents[parent * k..(parent + 1) * k] != s[..k] {
                    parent += 1;
                    offsets.push(i as u32);
                }
            }
            while offsets.len() < n_parents + 1 {
                offsets.push((simplices[k].len() / (k + 1)) as u32);
            }
            children.push(offsets);
        }
        SimplicialComplex { epsilon, cloud_ref, n_vertices, max_dim, simplices, values, children }
    }

    /// Highest dimension the complex was built to (possibly with no simplices).
    pub fn max_dim(&self) -> usize {
        self.max_dim
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn count(&self, k: usize) -> usize {
        self.simplices.get(k).map_or(0, |l| l.len() / (k + 1))
    }

    #[inline]
    pub fn simplex(&self, k: usize, i: usize) -> &[u32] {
        &self.simplices[k][i * (k + 1)..(i + 1) * (k + 1)]
    }

    /// Filtration value (enclosing-ball radius) of a simplex.
    #[inline]
    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.values[k][i]
    }

    pub fn iter(&self, k: usize) -> impl Iterator<Item = &[u32]> + '_ {
        self.simplices[k].chunks(k + 1)
    }

    /// Index of a sorted vertex tuple within its dimension.
    pub fn find(&self, vertices: &[u32]) -> Option<usize> {
        let k = vertices.len().checked_sub(1)?;
        if k > self.max_dim || vertices[0] as usize >= self.n_vertices {
            return None;
        }
        self.descend(0, vertices[0] as usize, &vertices[1..])
    }

    /// Index range of the `level`-simplices extending the (level-1)-simplex `parent`.
    pub(crate) fn child_range(&self, level: usize, parent: usize) -> std::ops::Range<usize> {
        let offsets = &self.children[level];
        offsets[parent] as usize..offsets[parent + 1] as usize
    }

    /// Continues a `find` from the simplex `idx` at `level`, appending `rest`.
    pub(crate) fn descend(&self, mut level: usize, mut idx: usize, rest: &[u32]) -> Option<usize> {
        for &target in rest {
            level += 1;
            let range = self.child_range(level, idx);
            let list = &self.simplices[level];
            let (mut a, mut b) = (range.start, range.end);
            while a < b {
                let mid = (a + b) / 2;
                if list[mid * (level + 1) + level] < target {
                    a = mid + 1;
                } else {
                    b = mid;
                }
            }
            if a == range.end || list[a * (level + 1) + level] != target {
                return None;
            }
            idx = a;
        }
        Some(idx)
    }

    /// Number of simplices per dimension `0..=max_dim`.
    pub fn face_counts(&self) -> Vec<usize> {
        (0..=self.max_dim).map(|k| self.count(k)).collect()
    }

    /// Every facet of every simplex is present.
    pub fn is_face_closed(&self) -> bool {
        let mut face = Vec::with_capacity(self.max_dim + 1);
        for k in 1..=self.max_dim {
            for s in self.iter(k) {
                for skip in 0..=k {
                    face.clear();
                    face.extend(s.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &v)| v));
                    if self.find(&face).is_none() {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Whether `self` is a subcomplex of `other` (same vertex set).
    pub fn is_subcomplex_of(&self, other: &SimplicialComplex) -> bool {
        (0..=self.max_dim.min(other.max_dim)).all(|k| self.iter(k).all(|s| other.find(s).is_some()))
    }

    /// One JSON object per simplex, ordered by dimension then lexicographically.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for k in 0..=self.max_dim {
            for s in self.iter(k) {
                serde_json::to_writer(&mut out, &SimplexRecord { dim: k, vertices: s })?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    /// Simplex lists as nested vectors, for comparisons in tests and tools.
    pub fn to_lists(&self) -> Vec<Vec<Vec<u32>>> {
        (0..=self.max_dim).map(|k| self.iter(k).map(|s| s.to_vec()).collect()).collect()
    }
}

/// Builds `Č(cloud, eps)` up to dimension `max_dim`.
pub fn build_cech(cloud: &PointCloud, eps: f64, max_dim: usize) -> Result<SimplicialComplex, CechError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CechError::InvalidRadius(eps));
    }
    if let Metric::Periodic { side } = cloud.metric() {
        if eps >= side / 4.0 {
            return Err(CechError::MetricRange { eps, side });
        }
    }
    let n = cloud.len();
    let d = cloud.dim();
    let metric = cloud.metric();
    let cloud_ref = CloudRef { spec: cloud.spec.to_string(), seed: cloud.seed, len: n };

    let mut simplices: Vec<Vec<u32>> = vec![(0..n as u32).collect()];
    let mut values: Vec<Vec<f64>> = vec![vec![0.0; n]];
    if max_dim == 0 || n == 0 {
        simplices.resize(max_dim + 1, Vec::new());
        values.resize(max_dim + 1, Vec::new());
        return Ok(SimplicialComplex::assemble(eps, cloud_ref, n, simplices, values));
    }

    // edges
    let grid = SpatialGrid::new(cloud, 2.0 * eps);
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut edges = Vec::new();
    let mut edge_values = Vec::new();
    let mut edge_centers = Vec::new();
    let mut found: Vec<(u32, f64, Coords)> = Vec::new();
    for i in 0..n {
        found.clear();
        grid.for_each_within(cloud.point(i), 2.0 * eps, |j, disp, dd| {
            if j != i {
                found.push((j as u32, dd, *disp));
            }
        });
        found.sort_unstable_by_key(|f| f.0);
        for &(j, dd, disp) in &found {
            adj[i].push(j);
            if j as usize > i {
                edges.push(i as u32);
                edges.push(j);
                edge_values.push(0.5 * dd.sqrt());
                let p = cloud.point(i);
                for t in 0..d {
                    edge_centers.push(p[t] + 0.5 * disp[t]);
                }
            }
        }
    }
    simplices.push(edges);
    values.push(edge_values);

    // clique expansion
    let mut centers = edge_centers;
    let mut rows: Vec<Coords> = Vec::with_capacity(max_dim + 2);
    let mut buf = [0.0; MAX_DIM];
    for k in 1..max_dim {
        let (prev, prev_vals) = (&simplices[k], &values[k]);
        let mut next = Vec::new();
        let mut next_vals = Vec::new();
        let mut next_centers = Vec::new();
        let mut candidates: Vec<u32> = Vec::new();
        // common neighbors of the current (k-1)-prefix; simplices sharing a
        // prefix are consecutive in lexicographic order
        let mut common: Vec<u32> = Vec::new();
        let mut scratch: Vec<u32> = Vec::new();
        let mut prefix: &[u32] = &[];
        let keep_centers = k + 1 < max_dim;
        for (idx, s) in prev.chunks(k + 1).enumerate() {
            if s[..k] != *prefix {
                prefix = &s[..k];
                common.clear();
                common.extend_from_slice(&adj[prefix[0] as usize]);
                for &v in &prefix[1..] {
                    intersect_sorted(&common, &adj[v as usize], &mut scratch);
                    std::mem::swap(&mut common, &mut scratch);
                }
            }
            let last = s[k];
            let from = common.partition_point(|&w| w <= last);
            let nb = &adj[last as usize];
            let nb_from = nb.partition_point(|&w| w <= last);
            intersect_sorted(&common[from..], &nb[nb_from..], &mut candidates);
            if candidates.is_empty() {
                continue;
            }
            let base = cloud.point(s[0] as usize);
            let radius = prev_vals[idx];
            let mut center = [0.0; MAX_DIM];
            center[..d].copy_from_slice(&centers[idx * d..(idx + 1) * d]);
            for &w in &candidates {
                metric.displacement(base, cloud.point(w as usize), &mut buf[..d]);
                let mut pw = [0.0; MAX_DIM];
                for t in 0..d {
                    pw[t] = base[t] + buf[t];
                }
                let (c, r) = if dist2(&center, &pw, d).sqrt() <= radius * (1.0 + 1e-12) {
                    (center, radius)
                } else {
                    rows.clear();
                    // the new vertex lies outside the face's ball, so it is on the new one
                    for &v in s {
                        metric.displacement(base, cloud.point(v as usize), &mut buf[..d]);
                        let mut row = [0.0; MAX_DIM];
                        for t in 0..d {
                            row[t] = base[t] + buf[t];
                        }
                        rows.push(row);
                    }
                    miniball_rows_pinned(&rows, &pw, d, DEFAULT_TOL)
                };
                if r <= eps {
                    next.extend_from_slice(s);
                    next.push(w);
                    next_vals.push(r);
                    if keep_centers {
                        next_centers.extend_from_slice(&c[..d]);
                    }
                }
            }
        }
        simplices.push(next);
        values.push(next_vals);
        centers = next_centers;
    }
    Ok(SimplicialComplex::assemble(eps, cloud_ref, n, simplices, values))
}

fn intersect_sorted(a: &[u32], b: &[u32], out: &mut Vec<u32>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
}

/// Exhaustive construction over all vertex subsets; exponential, for tests
/// and small instances only.
pub fn build_cech_brute_force(cloud: &PointCloud, eps: f64, max_dim: usize) -> SimplicialComplex {
    let n = cloud.len();
    let d = cloud.dim();
    let metric = cloud.metric();
    let mut lists = vec![Vec::new(); max_dim + 1];
    let mut vals = vec![Vec::new(); max_dim + 1];
    let mut buf = [0.0; MAX_DIM];
    for size in 1..=(max_dim + 1).min(n) {
        for subset in combinations(n, size) {
            let base = cloud.point(subset[0]);
            let rows: Vec<Coords> = subset
                .iter()
                .map(|&v| {
                    metric.displacement(base, cloud.point(v), &mut buf[..d]);
                    let mut row = [0.0; MAX_DIM];
                    for t in 0..d {
                        row[t] = base[t] + buf[t];
                    }
                    row
                })
                .collect();
            let (_, r) = miniball_rows(&rows, d, DEFAULT_TOL);
            if r <= eps {
                lists[size - 1].extend(subset.iter().map(|&v| v as u32));
                vals[size - 1].push(r);
            }
        }
    }
    SimplicialComplex::assemble(eps, CloudRef::default(), n, lists, vals)
}

/// All `size`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut current: Option<Vec<usize>> = if size <= n { Some((0..size).collect()) } else { None };
    std::iter::from_fn(move || {
        let out = current.clone()?;
        let mut next = out.clone();
        let mut i = size;
        loop {
            if i == 0 {
                current = None;
                break;
            }
            i -= 1;
            if next[i] < n - size + i {
                next[i] += 1;
                for j in i + 1..size {
                    next[j] = next[j - 1] + 1;
                }
                current = Some(next);
                break;
            }
        }
        Some(out)
    })
}

/// Face counts per dimension.
pub fn face_counts(complex: &SimplicialComplex) -> Vec<usize> {
    complex.face_counts()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample, Density, Manifold, SamplingMode};
    use proptest::prelude::*;

    fn unit_triangle() -> PointCloud {
        let h = 3f64.sqrt() / 2.0;
        PointCloud::euclidean(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]])
    }

    #[test]
    fn hollow_triangle_below_circumradius() {
        let c = build_cech(&unit_triangle(), 0.55, 2).unwrap();
        assert_eq!(c.face_counts(), vec![3, 3, 0]);
    }

    #[test]
    fn filled_triangle_above_circumradius() {
        let c = build_cech(&unit_triangle(), 0.6, 2).unwrap();
        assert_eq!(c.face_counts(), vec![3, 3, 1]);
        assert!((c.value(2, 0) - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn far_apart_points_give_bare_vertices() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![10.0 * i as f64, 0.0]).collect();
        let c = build_cech(&PointCloud::euclidean(&pts), 1.0, 3).unwrap();
        assert_eq!(c.face_counts(), vec![6, 0, 0, 0]);
        let single = build_cech(&PointCloud::euclidean(&[vec![1.0, 2.0]]), 1.0, 0).unwrap();
        assert_eq!(single.face_counts(), vec![1]);
    }

    #[test]
    fn periodic_range_is_enforced() {
        let m = Manifold::FlatTorus { m: 2, side: 1.0 };
        let c = PointCloud::from_points(m, &[vec![0.1, 0.1]]);
        assert!(matches!(build_cech(&c, 0.3, 2), Err(CechError::MetricRange { .. })));
        assert!(matches!(build_cech(&c, 0.0, 2), Err(CechError::InvalidRadius(_))));
    }

    #[test]
    fn periodic_edges_wrap_around() {
        let m = Manifold::FlatTorus { m: 2, side: 1.0 };
        let c = PointCloud::from_points(m, &[vec![0.02, 0.5], vec![0.98, 0.5]]);
        let cx = build_cech(&c, 0.05, 1).unwrap();
        assert_eq!(cx.face_counts(), vec![2, 1]);
    }

    #[test]
    fn matches_brute_force_on_small_clouds() {
        for seed in 0..20 {
            let m = Manifold::FlatTorus { m: 2, side: 1.0 };
            let cloud = sample(&m, &Density::Uniform, SamplingMode::Binomial(11), seed).unwrap();
            let fast = build_cech(&cloud, 0.2, 4).unwrap();
            let slow = build_cech_brute_force(&cloud, 0.2, 4);
            assert_eq!(fast.to_lists(), slow.to_lists(), "seed {seed}");
            assert!(fast.is_face_closed());
        }
    }

    #[test]
    fn jsonl_is_sorted_by_dimension() {
        let c = build_cech(&unit_triangle(), 0.6, 2).unwrap();
        let mut out = Vec::new();
        c.write_jsonl(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], r#"{"dim":0,"vertices":[0]}"#);
        assert_eq!(lines[6], r#"{"dim":2,"vertices":[0,1,2]}"#);
    }

    #[test]
    fn closure_constructor() {
        let c = SimplicialComplex::from_simplices(4, &[vec![0, 1, 2, 3]], 2).unwrap();
        assert_eq!(c.face_counts(), vec![4, 6, 4]);
        assert!(SimplicialComplex::from_simplices(2, &[vec![0, 0]], 1).is_err());
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        let all: Vec<Vec<usize>> = combinations(4, 2).collect();
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(combinations(3, 4).count(), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn monotone_in_radius(seed in 0u64..1000, e1 in 0.02f64..0.2, de in 0.0f64..0.04) {
            let m = Manifold::FlatTorus { m: 2, side: 1.0 };
            let cloud = sample(&m, &Density::Uniform, SamplingMode::Binomial(60), seed).unwrap();
            let small = build_cech(&cloud, e1, 3).unwrap();
            let large = build_cech(&cloud, e1 + de, 3).unwrap();
            prop_assert!(small.is_subcomplex_of(&large));
            prop_assert!(small.is_face_closed());
            prop_assert!(large.is_face_closed());
        }
    }
}
