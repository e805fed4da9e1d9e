//! Uniform grid over a point cloud for fixed-radius neighbor queries.
//!
//! Periodic clouds are handled by enumerating unwrapped cells around the query
//! and reporting each periodic image separately, so a query radius above half
//! the torus side still returns every image exactly once.

use rustc_hash::FxHashMap;

use crate::geometry::{Coords, Metric, MAX_DIM};
use crate::sampling::PointCloud;

type CellKey = [i32; MAX_DIM];

/// Points bucketed by integer lattice cell.
pub struct SpatialGrid<'a> {
    cloud: &'a PointCloud,
    dim: usize,
    cell: f64,
    /// Cells per axis for periodic clouds.
    wrap: Option<i32>,
    side: f64,
    buckets: FxHashMap<CellKey, (u32, u32)>,
    order: Vec<u32>,
}

impl<'a> SpatialGrid<'a> {
    /// Builds a grid whose cells are at least `cell_size` wide.
    pub fn new(cloud: &'a PointCloud, cell_size: f64) -> SpatialGrid<'a> {
        assert!(cell_size > 0.0 && cell_size.is_finite(), "cell size must be positive");
        let dim = cloud.dim().max(1);
        let (cell, wrap, side) = match cloud.metric() {
            Metric::Euclidean => (cell_size, None, 0.0),
            Metric::Periodic { side } => {
                let per_axis = ((side / cell_size).floor() as i32).clamp(1, 1 << 20);
                (side / per_axis as f64, Some(per_axis), side)
            }
        };
        let mut grid = SpatialGrid {
            cloud,
            dim,
            cell,
            wrap,
            side,
            buckets: FxHashMap::default(),
            order: Vec::new(),
        };
        let mut keyed: Vec<(CellKey, u32)> =
            (0..cloud.len()).map(|i| (grid.cell_of(cloud.point(i)), i as u32)).collect();
        keyed.sort_unstable();
        let mut start = 0;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            grid.buckets.insert(key, (start as u32, end as u32));
            start = end;
        }
        grid.order = keyed.into_iter().map(|(_, i)| i).collect();
        grid
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn cloud(&self) -> &'a PointCloud {
        self.cloud
    }

    fn cell_of(&self, p: &[f64]) -> CellKey {
        let mut key = [0i32; MAX_DIM];
        for t in 0..self.dim {
            let mut c = (p[t] / self.cell).floor() as i32;
            if let Some(n) = self.wrap {
                c = c.rem_euclid(n);
            }
            key[t] = c;
        }
        key
    }

    /// Calls `visit(j, disp, dist2)` for every point (or periodic image) within
    /// `radius` of `x`, where `disp` is the displacement from `x` to that image.
    pub fn for_each_within<F: FnMut(usize, &Coords, f64)>(&self, x: &[f64], radius: f64, mut visit: F) {
        let d = self.dim;
        let reach = (radius / self.cell).ceil() as i32;
        let r2 = radius * radius;
        let mut base = [0i32; MAX_DIM];
        for t in 0..d {
            base[t] = (x[t] / self.cell).floor() as i32;
        }
        let mut off = [-reach; MAX_DIM];
        loop {
            let mut key = [0i32; MAX_DIM];
            let mut shift = [0.0f64; MAX_DIM];
            for t in 0..d {
                let c = base[t] + off[t];
                match self.wrap {
                    Some(n) => {
                        let w = c.rem_euclid(n);
                        key[t] = w;
                        shift[t] = ((c - w) / n) as f64 * self.side;
                    }
                    None => key[t] = c,
                }
            }
            if let Some(&(s, e)) = self.buckets.get(&key) {
                for &j in &self.order[s as usize..e as usize] {
                    let p = self.cloud.point(j as usize);
                    let mut disp = [0.0; MAX_DIM];
                    let mut dd = 0.0;
                    for t in 0..d {
                        let v = p[t] + shift[t] - x[t];
                        disp[t] = v;
                        dd += v * v;
                    }
                    if dd <= r2 {
                        visit(j as usize, &disp, dd);
                    }
                }
            }
            // odometer over the offset box
            let mut t = 0;
            loop {
                if t == d {
                    return;
                }
                off[t] += 1;
                if off[t] <= reach {
                    break;
                }
                off[t] = -reach;
                t += 1;
            }
        }
    }

    /// Whether any point lies within `radius` of `x`.
    pub fn any_within(&self, x: &[f64], radius: f64) -> bool {
        let mut found = false;
        // cheap enough: the callback cannot short-circuit the cell walk, but
        // callers use small radii
        self.for_each_within(x, radius, |_, _, _| found = true);
        found
    }

    /// Distance from `x` to the nearest point, searching out to `max_radius`.
    pub fn nearest_distance(&self, x: &[f64], max_radius: f64) -> Option<f64> {
        let mut radius = self.cell.min(max_radius);
        loop {
            let mut best = f64::INFINITY;
            self.for_each_within(x, radius, |_, _, dd| best = best.min(dd));
            if best.is_finite() {
                return Some(best.sqrt());
            }
            if radius >= max_radius {
                return None;
            }
            radius = (radius * 2.0).min(max_radius);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample, Density, Manifold, SamplingMode};

    fn brute(cloud: &PointCloud, x: &[f64], radius: f64) -> Vec<usize> {
        let mut v: Vec<usize> =
            (0..cloud.len()).filter(|&j| cloud.metric().distance(x, cloud.point(j)) <= radius).collect();
        v.sort();
        v
    }

    #[test]
    fn periodic_queries_match_brute_force() {
        let m = Manifold::FlatTorus { m: 2, side: 1.0 };
        let c = sample(&m, &Density::Uniform, SamplingMode::Binomial(300), 1).unwrap();
        let g = SpatialGrid::new(&c, 0.07);
        for i in 0..50 {
            let mut got = Vec::new();
            g.for_each_within(c.point(i), 0.15, |j, _, _| got.push(j));
            got.sort();
            assert_eq!(got, brute(&c, c.point(i), 0.15));
        }
    }

    #[test]
    fn euclidean_queries_match_brute_force() {
        let m = Manifold::Sphere2 { radius: 1.0 };
        let c = sample(&m, &Density::Uniform, SamplingMode::Binomial(400), 2).unwrap();
        let g = SpatialGrid::new(&c, 0.1);
        for i in 0..50 {
            let mut got = Vec::new();
            g.for_each_within(c.point(i), 0.3, |j, _, _| got.push(j));
            got.sort();
            assert_eq!(got, brute(&c, c.point(i), 0.3));
        }
    }

    #[test]
    fn large_periodic_radius_reports_every_image() {
        let m = Manifold::FlatTorus { m: 1, side: 1.0 };
        let c = PointCloud::from_points(m, &[vec![0.5]]);
        let g = SpatialGrid::new(&c, 0.25);
        let mut disps = Vec::new();
        g.for_each_within(&[0.5], 1.2, |_, d, _| disps.push(d[0]));
        disps.sort_by(f64::total_cmp);
        assert_eq!(disps, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn nearest_distance_wraps() {
        let m = Manifold::FlatTorus { m: 2, side: 1.0 };
        let c = PointCloud::from_points(m, &[vec![0.05, 0.05], vec![0.5, 0.5]]);
        let g = SpatialGrid::new(&c, 0.1);
        let d = g.nearest_distance(&[0.95, 0.95], 1.0).unwrap();
        assert!((d - 0.02f64.sqrt()).abs() < 1e-12);
    }
}
