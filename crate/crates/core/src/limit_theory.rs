//! Limit constants: closed forms for the three-dimensional uniform case and
//! Monte Carlo evaluations of the limiting integrals for general `m`.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{Coords, Frame, DEFAULT_TOL, MAX_DIM};
use crate::homology::is_nontrivial_k_cycle;
use crate::sampling::{mix_seed, Density, Manifold};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Volume of the unit ball in `R^m`.
pub fn omega(m: usize) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0,
        _ => omega(m - 2) * 2.0 * PI / m as f64,
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> KahanSum {
        let mut s = KahanSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ClosedForm => "closed_form",
            Method::MonteCarlo => "monte_carlo",
        })
    }
}

/// A limit constant with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitConstants {
    pub m: usize,
    pub k: usize,
    /// `None` for constants that do not depend on λ.
    pub lambda: Option<f64>,
    pub value: f64,
    pub standard_error: f64,
    pub method: Method,
    pub n_mc: usize,
    pub seed: u64,
}

impl LimitConstants {
    pub const CSV_HEADER: &'static str = "m,k,lambda,value,stderr,method,n_mc,seed";

    pub fn csv_row(&self) -> String {
        let lambda = match self.lambda {
            None => String::new(),
            Some(l) if l.is_infinite() => "inf".into(),
            Some(l) => format!("{l}"),
        };
        format!(
            "{},{},{},{:.10},{:.10},{},{},{}",
            self.m, self.k, lambda, self.value, self.standard_error, self.method, self.n_mc, self.seed
        )
    }

    fn closed(m: usize, k: usize, lambda: f64, value: f64) -> LimitConstants {
        LimitConstants {
            m,
            k,
            lambda: Some(lambda),
            value,
            standard_error: 0.0,
            method: Method::ClosedForm,
            n_mc: 0,
            seed: 0,
        }
    }
}

fn check_m3(k: usize, lambda: f64) -> Result<(), LimitError> {
    if !(1..=3).contains(&k) {
        return Err(LimitError::Unsupported(format!("closed forms exist for k = 1..3 only, got k = {k}")));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(LimitError::Unsupported(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(())
}

/// γ_k(λ) for uniform sampling on a unit-volume 3-manifold.
pub fn gamma_closed_form_m3(k: usize, lambda: f64) -> Result<f64, LimitError> {
    check_m3(k, lambda)?;
    let pi2 = PI * PI;
    if lambda.is_infinite() {
        return Ok(match k {
            1 => 4.0,
            2 => 3.0 * (1.0 + pi2 / 16.0),
            _ => 3.0 * pi2 / 16.0,
        });
    }
    let e = (-4.0 / 3.0 * PI * lambda).exp();
    Ok(match k {
        1 => 4.0 * (1.0 - e),
        2 => (1.0 + pi2 / 16.0) * (3.0 - 3.0 * e - 4.0 * PI * lambda * e),
        _ => pi2 / 48.0 * (9.0 - 9.0 * e - 12.0 * PI * lambda * e - 8.0 * pi2 * lambda * lambda * e),
    })
}

/// dγ_k/dλ for the same setting; zero at λ = ∞.
pub fn gamma_rate_m3(k: usize, lambda: f64) -> Result<f64, LimitError> {
    check_m3(k, lambda)?;
    if lambda.is_infinite() {
        return Ok(0.0);
    }
    let pi2 = PI * PI;
    let e = (-4.0 / 3.0 * PI * lambda).exp();
    Ok(match k {
        1 => 16.0 / 3.0 * PI * e,
        2 => (16.0 + pi2) * pi2 / 3.0 * lambda * e,
        _ => 2.0 / 9.0 * pi2 * pi2 * PI * lambda * lambda * e,
    })
}

/// Limiting normalized Euler characteristic `1 - γ_1 + γ_2 - γ_3`.
pub fn euler_limit_m3(lambda: f64) -> f64 {
    let g = |k| gamma_closed_form_m3(k, lambda).expect("valid k");
    1.0 - g(1) + g(2) - g(3)
}

pub fn euler_limit_curve_m3(grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter().map(|&l| (l, euler_limit_m3(l))).collect()
}

/// CSV with columns `lambda,gamma1,gamma2,gamma3,euler`.
pub fn gamma_curves_csv_m3(grid: &[f64]) -> String {
    let mut out = String::from("lambda,gamma1,gamma2,gamma3,euler\n");
    for &l in grid {
        let g = |k| gamma_closed_form_m3(k, l).expect("valid k");
        out.push_str(&format!("{l},{:.10},{:.10},{:.10},{:.10}\n", g(1), g(2), g(3), euler_limit_m3(l)));
    }
    out
}

/// Uniform point in the ball of radius `rho` in `R^m`.
fn uniform_in_ball<R: Rng>(rng: &mut R, m: usize, rho: f64, out: &mut Coords) {
    let mut norm2 = 0.0;
    for t in 0..m {
        let g: f64 = rng.sample(StandardNormal);
        out[t] = g;
        norm2 += g * g;
    }
    let scale = rho * rng.random::<f64>().powf(1.0 / m as f64) / norm2.sqrt();
    for t in 0..m {
        out[t] *= scale;
    }
}

/// For the configuration `rows` (first row at the origin): the circumradius
/// when the circumcenter lies in the open convex hull, else `None`.
pub(crate) fn critical_radius(rows: &[Coords], m: usize) -> Option<f64> {
    let frame = Frame::new(rows, m, DEFAULT_TOL).ok()?;
    let (center, radius) = frame.circumsphere();
    let lam = frame.barycentric(&center);
    lam[..rows.len()].iter().all(|&l| l > DEFAULT_TOL).then_some(radius)
}

const BATCHES: usize = 20;

/// Runs `n_mc` draws split into fixed seeded batches (in parallel) and
/// returns the mean and the standard error from the spread of batch means.
fn batched<F>(n_mc: usize, seed: u64, draw: F) -> (f64, f64)
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    assert!(n_mc >= BATCHES, "need at least {BATCHES} Monte Carlo draws");
    let means: Vec<f64> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let size = n_mc / BATCHES + usize::from(b < n_mc % BATCHES);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, b as u64));
            let sum: KahanSum = (0..size).map(|_| draw(&mut rng)).collect();
            sum.value() / size as f64
        })
        .collect();
    let mean = means.iter().copied().collect::<KahanSum>().value() / BATCHES as f64;
    let var = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    (mean, (var / BATCHES as f64).sqrt())
}

fn check_range(m: usize, k: usize, lo: usize, hi: usize) -> Result<(), LimitError> {
    if m == 0 || m > MAX_DIM {
        return Err(LimitError::Unsupported(format!("dimension m = {m}")));
    }
    if k < lo || k > hi {
        return Err(LimitError::Unsupported(format!("k = {k} outside {lo}..={hi} for m = {m}")));
    }
    Ok(())
}

/// Estimate of `∫ h^c_1(0, y) dy` over `(R^m)^k`; the integrand vanishes
/// unless every `|y_i| <= 2`.
pub fn critical_config_volume(m: usize, k: usize, n_mc: usize, seed: u64) -> Result<(f64, f64), LimitError> {
    check_range(m, k, 1, m)?;
    let box_vol = (omega(m) * 2f64.powi(m as i32)).powi(k as i32);
    let (mean, se) = batched(n_mc, seed, |rng| {
        let mut rows = [[0.0; MAX_DIM]; MAX_DIM + 1];
        for row in rows.iter_mut().skip(1).take(k) {
            uniform_in_ball(rng, m, 2.0, row);
        }
        match critical_radius(&rows[..=k], m) {
            Some(r) if r <= 1.0 => 1.0,
            _ => 0.0,
        }
    });
    Ok((mean * box_vol, se * box_vol))
}

/// μ_k^c for uniform sampling on the unit flat torus `T^m`.
pub fn mu_c_estimate(m: usize, k: usize, n_mc: usize, seed: u64) -> Result<LimitConstants, LimitError> {
    mu_c_estimate_with(&Manifold::FlatTorus { m, side: 1.0 }, &Density::Uniform, k, n_mc, seed)
}

/// μ_k^c = 1/(k+1)! ∫ f^{k+1} ∫ h^c_1(0, y) dy.
pub fn mu_c_estimate_with(
    manifold: &Manifold,
    density: &Density,
    k: usize,
    n_mc: usize,
    seed: u64,
) -> Result<LimitConstants, LimitError> {
    let m = manifold.intrinsic_dim();
    let (vol, vol_se) = critical_config_volume(m, k, n_mc, seed)?;
    let (moment, moment_se) = density.power_integral(manifold, (k + 1) as u32, n_mc, mix_seed(seed, 1 << 32));
    let scale = 1.0 / factorial(k + 1);
    let value = scale * vol * moment;
    let se = scale * ((vol_se * moment).powi(2) + (vol * moment_se).powi(2)).sqrt();
    Ok(LimitConstants { m, k, lambda: None, value, standard_error: se, method: Method::MonteCarlo, n_mc, seed })
}

/// Radius bounding the support of `h^b_1(0, y)` over `k + 1` free points.
pub fn betti_support_radius(k: usize) -> f64 {
    2.0 * (k + 2) as f64
}

/// h^b_1 on the configuration `(0, y_1, ..., y_{k+1})`.
pub fn h_b(points: &[Vec<f64>]) -> bool {
    // a k-cycle on k+2 vertices needs every edge
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 > 4.0 {
                return false;
            }
        }
    }
    is_nontrivial_k_cycle(points, 1.0).expect("unit radius is valid")
}

/// μ_k^b for uniform sampling on the unit flat torus `T^m`.
pub fn mu_b_estimate(m: usize, k: usize, n_mc: usize, seed: u64) -> Result<LimitConstants, LimitError> {
    check_range(m, k, 1, m.saturating_sub(1))?;
    let rho = betti_support_radius(k);
    let box_vol = (omega(m) * rho.powi(m as i32)).powi(k as i32 + 1);
    let (mean, se) = batched(n_mc, seed, |rng| {
        let mut pts = vec![vec![0.0; m]; k + 2];
        let mut row = [0.0; MAX_DIM];
        for p in pts.iter_mut().skip(1) {
            uniform_in_ball(rng, m, rho, &mut row);
            p.copy_from_slice(&row[..m]);
        }
        if h_b(&pts) {
            1.0
        } else {
            0.0
        }
    });
    let scale = box_vol / factorial(k + 2);
    Ok(LimitConstants {
        m,
        k,
        lambda: None,
        value: mean * scale,
        standard_error: se * scale,
        method: Method::MonteCarlo,
        n_mc,
        seed,
    })
}

/// γ_k(λ) by Monte Carlo for uniform sampling on the unit flat torus `T^m`.
pub fn gamma_numeric(m: usize, k: usize, lambda: f64, n_mc: usize, seed: u64) -> Result<LimitConstants, LimitError> {
    gamma_numeric_with(&Manifold::FlatTorus { m, side: 1.0 }, &Density::Uniform, k, lambda, n_mc, seed)
}

/// γ_k(λ) = λ^k/(k+1)! ∫_M ∫ f^{k+1}(x) h^c_1(0, y) e^{-λ ω_m R^m(0, y) f(x)} dy dx.
///
/// At λ = ∞ the integral `1/(k+1)! ∫ h^c(0, y) e^{-ω_m R^m(0, y)} dy` is
/// evaluated through its scaling: the set `{R(0, y) <= t}` has volume
/// `A t^{mk}` with `A = ∫ h^c_1(0, y) dy`, which gives `A / ((k+1) ω_m^k)`
/// independently of the density.
pub fn gamma_numeric_with(
    manifold: &Manifold,
    density: &Density,
    k: usize,
    lambda: f64,
    n_mc: usize,
    seed: u64,
) -> Result<LimitConstants, LimitError> {
    let m = manifold.intrinsic_dim();
    check_range(m, k, 1, m)?;
    if lambda.is_nan() || lambda < 0.0 {
        return Err(LimitError::Unsupported(format!("lambda must be nonnegative, got {lambda}")));
    }
    let w = omega(m);
    let (value, se) = if lambda.is_infinite() {
        let (a, a_se) = critical_config_volume(m, k, n_mc, seed)?;
        let scale = 1.0 / ((k + 1) as f64 * w.powi(k as i32));
        (a * scale, a_se * scale)
    } else if lambda == 0.0 {
        (0.0, 0.0)
    } else {
        let vol = manifold.volume().ok_or_else(|| LimitError::Unsupported("manifold without volume".into()))?;
        let d = manifold.ambient_dim();
        let box_vol = (w * 2f64.powi(m as i32)).powi(k as i32);
        let (mean, se) = batched(n_mc, seed, |rng| {
            let f = match density {
                Density::Uniform => 1.0 / vol,
                _ => {
                    let mut x = [0.0; MAX_DIM];
                    manifold.sample_uniform(rng, &mut x[..d]);
                    density.eval(manifold, &x[..d])
                }
            };
            let mut rows = [[0.0; MAX_DIM]; MAX_DIM + 1];
            for row in rows.iter_mut().skip(1).take(k) {
                uniform_in_ball(rng, m, 2.0, row);
            }
            match critical_radius(&rows[..=k], m) {
                Some(r) if r <= 1.0 => vol * f.powi(k as i32 + 1) * (-lambda * w * r.powi(m as i32) * f).exp(),
                _ => 0.0,
            }
        });
        let scale = lambda.powi(k as i32) / factorial(k + 1) * box_vol;
        (mean * scale, se * scale)
    };
    Ok(LimitConstants {
        m,
        k,
        lambda: Some(lambda),
        value,
        standard_error: se,
        method: Method::MonteCarlo,
        n_mc,
        seed,
    })
}

/// Closed-form γ_k(λ) packaged like a Monte Carlo estimate.
pub fn gamma_closed_constants_m3(k: usize, lambda: f64) -> Result<LimitConstants, LimitError> {
    Ok(LimitConstants::closed(3, k, lambda, gamma_closed_form_m3(k, lambda)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_ball_volumes() {
        assert_relative_eq!(omega(1), 2.0);
        assert_relative_eq!(omega(2), PI);
        assert_relative_eq!(omega(3), 4.0 * PI / 3.0, epsilon = 1e-14);
        assert_relative_eq!(omega(4), PI * PI / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(gamma_closed_form_m3(1, 0.0).unwrap(), 0.0);
        assert_eq!(gamma_closed_form_m3(1, f64::INFINITY).unwrap(), 4.0);
        assert_relative_eq!(gamma_closed_form_m3(3, f64::INFINITY).unwrap(), 1.8505508252, epsilon = 1e-9);
        assert_relative_eq!(gamma_closed_form_m3(1, 1.0).unwrap(), 3.93934, epsilon = 1e-5);
        assert!(gamma_closed_form_m3(4, 1.0).is_err());
        assert!(gamma_closed_form_m3(0, 1.0).is_err());
    }

    #[test]
    fn closed_forms_approach_their_limits() {
        for k in 1..=3 {
            let far = gamma_closed_form_m3(k, 50.0).unwrap();
            assert_relative_eq!(far, gamma_closed_form_m3(k, f64::INFINITY).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn rates() {
        assert_relative_eq!(gamma_rate_m3(1, 0.0).unwrap(), 16.0 * PI / 3.0, epsilon = 1e-12);
        assert_relative_eq!(gamma_rate_m3(1, 0.0).unwrap(), 16.755, epsilon = 1e-3);
        assert_eq!(gamma_rate_m3(3, 0.0).unwrap(), 0.0);
        let h = 1e-4;
        for k in 1..=3 {
            for &l in &[0.3, 1.0, 2.5] {
                let fd = (gamma_closed_form_m3(k, l + h).unwrap() - gamma_closed_form_m3(k, l - h).unwrap()) / (2.0 * h);
                assert!((fd - gamma_rate_m3(k, l).unwrap()).abs() < 1e-6, "k={k} l={l}");
            }
        }
    }

    #[test]
    fn monotone_and_bounded() {
        for k in 1..=3 {
            let cap = gamma_closed_form_m3(k, f64::INFINITY).unwrap();
            let mut prev = 0.0;
            for i in 0..=2000 {
                let v = gamma_closed_form_m3(k, i as f64 * 0.005).unwrap();
                assert!(v >= prev - 1e-15 && v <= cap + 1e-12);
                prev = v;
            }
        }
    }

    #[test]
    fn euler_curve() {
        assert_eq!(euler_limit_m3(0.0), 1.0);
        assert!(euler_limit_m3(f64::INFINITY).abs() < 1e-12);
        let grid: Vec<f64> = (0..400).map(|i| i as f64 * 0.01).collect();
        let curve = euler_limit_curve_m3(&grid);
        assert!(curve.windows(2).any(|w| w[0].1.signum() != w[1].1.signum()));
        let csv = gamma_curves_csv_m3(&[0.0, 1.0]);
        assert!(csv.starts_with("lambda,gamma1,gamma2,gamma3,euler\n0,0.0000000000"));
    }

    #[test]
    fn mu_c_in_one_dimension() {
        // pairs always satisfy CP1 and R = |y|/2 <= 1 exactly on [-2, 2]
        let (a, se) = critical_config_volume(1, 1, 20_000, 3).unwrap();
        assert_relative_eq!(a, 4.0, epsilon = 1e-12);
        assert_eq!(se, 0.0);
        let est = mu_c_estimate(1, 1, 20_000, 3).unwrap();
        assert_relative_eq!(est.value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mu_c_in_two_dimensions() {
        // k = 1: area of B_2 over 2!
        let est = mu_c_estimate(2, 1, 20_000, 4).unwrap();
        assert_relative_eq!(est.value, 2.0 * PI, epsilon = 1e-12);
        let est = mu_c_estimate(2, 2, 1_000_000, 5).unwrap();
        assert!(est.standard_error <= 0.02 * est.value);
    }

    #[test]
    fn standard_error_scales() {
        let a = mu_c_estimate(2, 2, 200_000, 6).unwrap();
        let b = mu_c_estimate(2, 2, 400_000, 7).unwrap();
        let ratio = b.standard_error / a.standard_error;
        // batch-spread errors are themselves noisy (20 batches)
        assert!((0.45..1.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn mu_b_range_and_stability() {
        assert!(mu_b_estimate(1, 1, 100, 1).is_err());
        let a = mu_b_estimate(2, 1, 100_000, 11).unwrap();
        let b = mu_b_estimate(2, 1, 100_000, 12).unwrap();
        let combined = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
        assert!(a.value > 0.0);
        assert!((a.value - b.value).abs() < 3.0 * combined);
    }

    #[test]
    fn h_b_support() {
        // a point beyond the support radius never completes a cycle
        let far = betti_support_radius(1) + 0.1;
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![far, 0.0]];
        assert!(!h_b(&pts));
        let h = 3f64.sqrt() / 2.0;
        let tri = vec![vec![0.0, 0.0], vec![1.9, 0.0], vec![0.95, 1.9 * h]];
        assert!(h_b(&tri));
    }

    #[test]
    fn gamma_numeric_matches_closed_form() {
        let est = gamma_numeric(3, 1, 1.0, 200_000, 21).unwrap();
        let exact = gamma_closed_form_m3(1, 1.0).unwrap();
        assert!((est.value - exact).abs() < 3.0 * est.standard_error.max(1e-3), "{est:?}");
        assert_eq!(gamma_numeric(3, 2, 0.0, 100, 1).unwrap().value, 0.0);
        let inf = gamma_numeric(3, 3, f64::INFINITY, 400_000, 22).unwrap();
        let exact = gamma_closed_form_m3(3, f64::INFINITY).unwrap();
        assert!((inf.value - exact).abs() < 3.0 * inf.standard_error, "{inf:?}");
    }

    #[test]
    fn kahan_beats_naive() {
        let xs: Vec<f64> = std::iter::once(1e16).chain(std::iter::repeat_n(1.0, 1000)).collect();
        let s: KahanSum = xs.iter().copied().collect();
        assert_eq!(s.value(), 1e16 + 1000.0);
    }

    #[test]
    fn csv_rows() {
        let c = gamma_closed_constants_m3(1, f64::INFINITY).unwrap();
        assert_eq!(c.csv_row(), "3,1,inf,4.0000000000,0.0000000000,closed_form,0,0");
    }
}
