//! Random point clouds on manifolds, Čech complexes of their unions of balls,
//! critical points of the distance function, and the limit constants that
//! describe their counts as the sample grows.

pub mod cech;
pub mod critical_points;
pub mod experiments;
pub mod geometry;
pub mod homology;
pub mod limit_theory;
pub mod sampling;
mod spatial;

pub use cech::{build_cech, face_counts, CechError, SimplicialComplex, SpatialGrid};
pub use critical_points::{critical_counts, enumerate_critical_points, morse_euler, CriticalCounts, CriticalPoint};
pub use experiments::{
    aggregate, coverage_probe, recovery_experiment, run_regime, ExperimentError, ExperimentRecord, Normalization,
    RadiusRule, RegimeConfig, Statistic,
};
pub use geometry::{circumsphere, distance_to_set, in_open_convex_hull, min_enclosing_ball, GeometryError, Metric};
pub use homology::{betti_numbers, euler_characteristic, is_nontrivial_k_cycle, BoundaryMatrix, HomologyError};
pub use sampling::{sample, Density, Manifold, PointCloud, SamplingError, SamplingMode};
