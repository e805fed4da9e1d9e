//! Replicated regime sweeps: sample, count critical points, compute Betti
//! numbers, normalize and summarize.
//!
//! Every replicate is a pure function of `(base_seed, n, replicate)`, so runs
//! are reproducible regardless of how many workers execute them.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cech::build_cech;
use crate::critical_points::critical_counts;
use crate::geometry::Metric;
use crate::homology::betti_numbers;
use crate::limit_theory::omega;
use crate::sampling::{mix_seed, sample, Density, Manifold, PointCloud, SamplingError, SamplingMode, GENERATOR_NAME};
use crate::spatial::SpatialGrid;

/// First line of every regime config file.
pub const CONFIG_FORMAT: &str = "manitopo-regime/1";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{analysis} needs {expected} records, found {found}")]
    RegimeMismatch { analysis: String, expected: Regime, found: Regime },
    #[error("records are not homogeneous: {0}")]
    Heterogeneous(String),
    #[error("statistic {0} was not computed in this run")]
    Missing(String),
}

/// Scaling regime of a radius rule, from `n r^m` as `n` grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `n r^m -> 0`.
    Subcritical,
    /// `n r^m -> lambda`.
    Critical,
    /// `n r^m -> infinity`.
    Supercritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Subcritical => "subcritical",
            Regime::Critical => "critical",
            Regime::Supercritical => "supercritical",
        })
    }
}

/// How the radius shrinks with `n` on an `m`-manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RadiusRule {
    /// `r = c n^(-alpha)`.
    PowerLaw { c: f64, alpha: f64 },
    /// `r = (lambda / n)^(1/m)`.
    Lambda { lambda: f64 },
    /// `r = (c log n / n)^(1/m)`.
    Coverage { c: f64 },
}

impl RadiusRule {
    /// Coverage rule with `c` given in units of the threshold `1/(omega_m f_min)`.
    pub fn coverage_units(units: f64, manifold: &Manifold, density: &Density) -> RadiusRule {
        let m = manifold.intrinsic_dim();
        RadiusRule::Coverage { c: units / (omega(m) * density.f_min(manifold)) }
    }

    pub fn radius(&self, n: usize, m: usize) -> f64 {
        let n = n as f64;
        let inv = 1.0 / m as f64;
        match *self {
            RadiusRule::PowerLaw { c, alpha } => c * n.powf(-alpha),
            RadiusRule::Lambda { lambda } => (lambda / n).powf(inv),
            RadiusRule::Coverage { c } => (c * n.ln() / n).powf(inv),
        }
    }

    pub fn regime(&self, m: usize) -> Regime {
        match *self {
            RadiusRule::PowerLaw { alpha, .. } => {
                let critical = 1.0 / m as f64;
                if (alpha - critical).abs() <= 1e-12 {
                    Regime::Critical
                } else if alpha > critical {
                    Regime::Subcritical
                } else {
                    Regime::Supercritical
                }
            }
            RadiusRule::Lambda { .. } => Regime::Critical,
            RadiusRule::Coverage { .. } => Regime::Supercritical,
        }
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let ok = match *self {
            RadiusRule::PowerLaw { c, alpha } => c > 0.0 && c.is_finite() && alpha.is_finite(),
            RadiusRule::Lambda { lambda } => lambda > 0.0 && lambda.is_finite(),
            RadiusRule::Coverage { c } => c > 0.0 && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(ExperimentError::Invalid(format!("radius rule {} has a non-positive parameter", self.canonical())))
        }
    }

    fn canonical(&self) -> String {
        match *self {
            RadiusRule::PowerLaw { c, alpha } => format!("power_law(c={c}, alpha={alpha})"),
            RadiusRule::Lambda { lambda } => format!("lambda(lambda={lambda})"),
            RadiusRule::Coverage { c } => format!("coverage(c={c})"),
        }
    }
}

/// Densities that can be named in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    Uniform,
    /// See [`Density::cosine_wave`].
    Cosine { amplitude: f64 },
}

impl DensitySpec {
    pub fn build(&self, manifold: &Manifold) -> Result<Density, SamplingError> {
        match *self {
            DensitySpec::Uniform => Ok(Density::Uniform),
            DensitySpec::Cosine { amplitude } => Density::cosine_wave(manifold, amplitude),
        }
    }

    fn canonical(&self) -> String {
        match *self {
            DensitySpec::Uniform => "uniform".into(),
            DensitySpec::Cosine { amplitude } => format!("cosine(amplitude={amplitude})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    Binomial,
    Poisson,
}

impl Process {
    pub fn mode(&self, n: usize) -> SamplingMode {
        match self {
            Process::Binomial => SamplingMode::Binomial(n),
            Process::Poisson => SamplingMode::Poisson(n),
        }
    }
}

/// One regime sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub manifold: Manifold,
    pub density: DensitySpec,
    pub process: Process,
    pub n_values: Vec<usize>,
    pub radius_rule: RadiusRule,
    /// Multiplies every radius produced by the rule.
    pub radius_scale: f64,
    pub replicates: usize,
    pub base_seed: u64,
    pub max_index: usize,
    /// Build the Čech complex and compute β_0..β_m. Costly at large `n r^m`.
    pub betti: bool,
}

impl RegimeConfig {
    /// Defaults: uniform density, Poisson process, 20 replicates, seed 0,
    /// critical points of every index, Betti numbers on.
    pub fn new(manifold: Manifold, n_values: Vec<usize>, radius_rule: RadiusRule) -> RegimeConfig {
        RegimeConfig {
            manifold,
            density: DensitySpec::Uniform,
            process: Process::Poisson,
            n_values,
            radius_rule,
            radius_scale: 1.0,
            replicates: 20,
            base_seed: 0,
            max_index: manifold.ambient_dim(),
            betti: true,
        }
    }

    pub fn regime(&self) -> Regime {
        self.radius_rule.regime(self.manifold.intrinsic_dim())
    }

    pub fn radius(&self, n: usize) -> f64 {
        self.radius_scale * self.radius_rule.radius(n, self.manifold.intrinsic_dim())
    }

    pub fn replicate_seed(&self, n: usize, replicate: usize) -> u64 {
        mix_seed(mix_seed(self.base_seed, n as u64), replicate as u64)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |msg: String| Err(ExperimentError::Invalid(msg));
        self.manifold.validate().map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        if matches!(self.manifold, Manifold::Ambient { .. }) {
            return invalid("regime runs need a manifold to sample from".into());
        }
        self.density.build(&self.manifold).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        self.radius_rule.validate()?;
        if !(self.radius_scale > 0.0 && self.radius_scale.is_finite()) {
            return invalid(format!("radius_scale {} must be positive", self.radius_scale));
        }
        if self.n_values.is_empty() {
            return invalid("n must list at least one value".into());
        }
        for &n in &self.n_values {
            if n < 2 {
                return invalid(format!("n = {n} is below 2"));
            }
            let r = self.radius(n);
            if !(r > 0.0 && r.is_finite()) {
                return invalid(format!("radius {r} at n = {n} is not positive"));
            }
            if let Metric::Periodic { side } = self.manifold.metric() {
                if self.betti && r >= side / 4.0 {
                    return invalid(format!("radius {r} at n = {n} must stay below side/4 = {} for Betti numbers", side / 4.0));
                }
                if r >= side / 2.0 {
                    return invalid(format!("radius {r} at n = {n} must stay below side/2 = {}", side / 2.0));
                }
            }
        }
        Ok(())
    }

    /// Canonical config text; parsing it returns an identical config.
    pub fn to_config_string(&self) -> String {
        let n: Vec<String> = self.n_values.iter().map(|n| n.to_string()).collect();
        let mut s = String::new();
        s.push_str(&format!("format = {CONFIG_FORMAT}\n"));
        s.push_str(&format!("manifold = {}\n", manifold_canonical(&self.manifold)));
        s.push_str(&format!("density = {}\n", self.density.canonical()));
        s.push_str(&format!("process = {}\n", match self.process {
            Process::Binomial => "binomial",
            Process::Poisson => "poisson",
        }));
        s.push_str(&format!("n = {}\n", n.join(", ")));
        s.push_str(&format!("radius = {}\n", self.radius_rule.canonical()));
        s.push_str(&format!("radius_scale = {}\n", self.radius_scale));
        s.push_str(&format!("replicates = {}\n", self.replicates));
        s.push_str(&format!("seed = {}\n", self.base_seed));
        s.push_str(&format!("max_index = {}\n", self.max_index));
        s.push_str(&format!("betti = {}\n", self.betti));
        s
    }

    /// Hex SHA-256 of the canonical config text.
    pub fn hash(&self) -> String {
        hash_text(&self.to_config_string())
    }

    /// `{prefix}-{hash prefix}-seed{seed}`, used for output file names.
    pub fn output_stem(&self, prefix: &str) -> String {
        format!("{prefix}-{}-seed{}", &self.hash()[..12], self.base_seed)
    }

    pub fn metadata(&self) -> Metadata {
        Metadata::new(self.hash(), self.base_seed)
    }

    /// Parses the plain-text format:
    ///
    /// ```text
    /// format = manitopo-regime/1
    /// manifold = flat_torus(m=3, side=1)     # circle(radius=..), sphere2(radius=..),
    ///                                        # embedded_torus(major=.., minor=..)
    /// density = uniform                      # or cosine(amplitude=0.5)
    /// process = poisson                      # or binomial
    /// n = 1000, 2000
    /// radius = lambda(1)                     # power_law(c=.., alpha=..), coverage(units=2.5),
    ///                                        # coverage(c=..)
    /// radius_scale = 1
    /// replicates = 20
    /// seed = 7
    /// max_index = 3
    /// betti = true
    /// ```
    ///
    /// `manifold`, `n` and `radius` are required; the rest default as in
    /// [`RegimeConfig::new`]. `coverage(units=u)` means `c = u / (omega_m f_min)`.
    pub fn parse(text: &str) -> Result<RegimeConfig, ExperimentError> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ExperimentError::Parse { line: i + 1, msg: format!("expected key = value, got {line:?}") });
            };
            let key = key.trim().to_string();
            if entries.iter().any(|(_, k, _)| *k == key) {
                return Err(ExperimentError::Parse { line: i + 1, msg: format!("duplicate key {key:?}") });
            }
            entries.push((i + 1, key, value.trim().to_string()));
        }
        let get = |key: &str| entries.iter().find(|(_, k, _)| k == key).map(|(l, _, v)| (*l, v.as_str()));
        let missing = |key: &str| ExperimentError::Parse { line: 0, msg: format!("missing required key {key:?}") };

        match get("format") {
            Some((_, CONFIG_FORMAT)) => {}
            Some((line, other)) => {
                return Err(ExperimentError::Parse { line, msg: format!("unsupported format {other:?}, expected {CONFIG_FORMAT}") })
            }
            None => return Err(missing("format")),
        }
        for (line, key, _) in &entries {
            const KNOWN: [&str; 11] = [
                "format", "manifold", "density", "process", "n", "radius", "radius_scale", "replicates", "seed",
                "max_index", "betti",
            ];
            if !KNOWN.contains(&key.as_str()) {
                return Err(ExperimentError::Parse { line: *line, msg: format!("unknown key {key:?}") });
            }
        }
        let at = |line: usize| move |msg: String| ExperimentError::Parse { line, msg };

        let (line, text) = get("manifold").ok_or_else(|| missing("manifold"))?;
        let manifold = parse_manifold(text).map_err(at(line))?;
        let density = match get("density") {
            Some((line, text)) => parse_density(text).map_err(at(line))?,
            None => DensitySpec::Uniform,
        };
        let (line, text) = get("n").ok_or_else(|| missing("n"))?;
        let n_values = text
            .split(',')
            .map(|t| parse_value::<usize>(t.trim(), "n"))
            .collect::<Result<Vec<_>, _>>()
            .map_err(at(line))?;
        let (line, text) = get("radius").ok_or_else(|| missing("radius"))?;
        let built = density.build(&manifold).map_err(|e| ExperimentError::Parse { line, msg: e.to_string() })?;
        let radius_rule = parse_rule(text, &manifold, &built).map_err(at(line))?;

        let mut config = RegimeConfig::new(manifold, n_values, radius_rule);
        config.density = density;
        if let Some((line, text)) = get("process") {
            config.process = match text {
                "poisson" => Process::Poisson,
                "binomial" => Process::Binomial,
                other => return Err(at(line)(format!("unknown process {other:?}"))),
            };
        }
        if let Some((line, text)) = get("radius_scale") {
            config.radius_scale = parse_value(text, "radius_scale").map_err(at(line))?;
        }
        if let Some((line, text)) = get("replicates") {
            config.replicates = parse_value(text, "replicates").map_err(at(line))?;
        }
        if let Some((line, text)) = get("seed") {
            config.base_seed = parse_value(text, "seed").map_err(at(line))?;
        }
        if let Some((line, text)) = get("max_index") {
            config.max_index = parse_value(text, "max_index").map_err(at(line))?;
        }
        if let Some((line, text)) = get("betti") {
            config.betti = parse_value(text, "betti").map_err(at(line))?;
        }
        Ok(config)
    }
}

fn manifold_canonical(m: &Manifold) -> String {
    match *m {
        Manifold::FlatTorus { m, side } => format!("flat_torus(m={m}, side={side})"),
        Manifold::Circle { radius } => format!("circle(radius={radius})"),
        Manifold::Sphere2 { radius } => format!("sphere2(radius={radius})"),
        Manifold::EmbeddedTorus { major, minor } => format!("embedded_torus(major={major}, minor={minor})"),
        Manifold::Ambient { dim } => format!("ambient(dim={dim})"),
    }
}

fn parse_value<T: FromStr>(text: &str, what: &str) -> Result<T, String> {
    text.parse().map_err(|_| format!("cannot parse {what} from {text:?}"))
}

/// `name(a, key=b, ...)` split into its name and arguments.
struct Call {
    name: String,
    args: Vec<(Option<String>, String)>,
}

impl Call {
    fn parse(text: &str) -> Result<Call, String> {
        let text = text.trim();
        let Some(open) = text.find('(') else {
            return Ok(Call { name: text.to_string(), args: Vec::new() });
        };
        if !text.ends_with(')') {
            return Err(format!("missing ')' in {text:?}"));
        }
        let mut args = Vec::new();
        for part in text[open + 1..text.len() - 1].split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some((k, v)) => args.push((Some(k.trim().to_string()), v.trim().to_string())),
                None => args.push((None, part.to_string())),
            }
        }
        Ok(Call { name: text[..open].trim().to_string(), args })
    }

    /// Keyword `key`, or else the only positional argument when `key` is the
    /// sole parameter.
    fn get<T: FromStr>(&self, key: &str, params: &[&str]) -> Result<T, String> {
        for (k, _) in &self.args {
            match k {
                Some(k) if !params.contains(&k.as_str()) => {
                    return Err(format!("{} takes {:?}, not {k:?}", self.name, params));
                }
                None if params.len() > 1 => {
                    return Err(format!("{} needs keyword arguments {:?}", self.name, params));
                }
                _ => {}
            }
        }
        let found = self
            .args
            .iter()
            .find(|(k, _)| k.as_deref() == Some(key) || (k.is_none() && params.len() == 1))
            .ok_or_else(|| format!("{} is missing {key:?}", self.name))?;
        parse_value(&found.1, key)
    }
}

/// Parses `flat_torus(m=.., side=..)`, `circle(radius=..)`, `sphere2(radius=..)` or
/// `embedded_torus(major=.., minor=..)`.
pub fn parse_manifold(text: &str) -> Result<Manifold, String> {
    let call = Call::parse(text)?;
    match call.name.as_str() {
        "flat_torus" => Ok(Manifold::FlatTorus { m: call.get("m", &["m", "side"])?, side: call.get("side", &["m", "side"])? }),
        "circle" => Ok(Manifold::Circle { radius: call.get("radius", &["radius"])? }),
        "sphere2" => Ok(Manifold::Sphere2 { radius: call.get("radius", &["radius"])? }),
        "embedded_torus" => Ok(Manifold::EmbeddedTorus {
            major: call.get("major", &["major", "minor"])?,
            minor: call.get("minor", &["major", "minor"])?,
        }),
        other => Err(format!("unknown manifold {other:?}")),
    }
}

/// Parses `uniform` or `cosine(amplitude=..)`.
pub fn parse_density(text: &str) -> Result<DensitySpec, String> {
    let call = Call::parse(text)?;
    match call.name.as_str() {
        "uniform" => Ok(DensitySpec::Uniform),
        "cosine" => Ok(DensitySpec::Cosine { amplitude: call.get("amplitude", &["amplitude"])? }),
        other => Err(format!("unknown density {other:?}")),
    }
}

fn parse_rule(text: &str, manifold: &Manifold, density: &Density) -> Result<RadiusRule, String> {
    let call = Call::parse(text)?;
    match call.name.as_str() {
        "lambda" => Ok(RadiusRule::Lambda { lambda: call.get("lambda", &["lambda"])? }),
        "power_law" => {
            Ok(RadiusRule::PowerLaw { c: call.get("c", &["c", "alpha"])?, alpha: call.get("alpha", &["c", "alpha"])? })
        }
        "coverage" => match call.args.first() {
            Some((Some(k), _)) if k == "c" => Ok(RadiusRule::Coverage { c: call.get("c", &["c"])? }),
            _ => Ok(RadiusRule::coverage_units(call.get("units", &["units"])?, manifold, density)),
        },
        other => Err(format!("unknown radius rule {other:?}")),
    }
}

/// Hex SHA-256 of `text`.
pub fn hash_text(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Header carried by every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub generator: String,
}

impl Metadata {
    pub fn new(config_hash: String, seed: u64) -> Metadata {
        Metadata {
            tool: "manitopo".into(),
            version: VERSION.into(),
            config_hash,
            seed,
            generator: GENERATOR_NAME.into(),
        }
    }

    /// `{"meta": {...}}` line for JSON-lines files.
    pub fn json_line(&self) -> String {
        serde_json::json!({ "meta": self }).to_string()
    }

    /// `# key=value` lines for CSV files.
    pub fn csv_comment(&self) -> String {
        format!(
            "# tool={} version={} config_hash={} seed={} generator={}\n",
            self.tool, self.version, self.config_hash, self.seed, self.generator
        )
    }
}

/// One replicate of a regime run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// Intensity parameter.
    pub n: usize,
    /// Realized number of points.
    pub points: usize,
    pub r: f64,
    pub replicate: usize,
    pub seed: u64,
    pub regime: Regime,
    /// `N_0..N_max_index` at radius `r`.
    pub counts: Vec<usize>,
    pub betti: Option<Vec<usize>>,
    pub chi_cech: Option<i64>,
    pub chi_morse: Option<i64>,
    pub coverage_flag: Option<bool>,
    /// Seconds. Not serialized, so output files stay byte-reproducible.
    #[serde(skip)]
    pub wall_time: f64,
    pub error: Option<String>,
}

/// Runs every `(n, replicate)` pair on the current rayon pool. Records come
/// back ordered by `n` (config order), then replicate. Per-record failures,
/// including a Morse–Euler mismatch, are stored in `error`.
pub fn run_regime(config: &RegimeConfig) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    config.validate()?;
    let density = config.density.build(&config.manifold).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    let tasks: Vec<(usize, usize)> =
        config.n_values.iter().flat_map(|&n| (0..config.replicates).map(move |rep| (n, rep))).collect();
    Ok(tasks.par_iter().map(|&(n, rep)| run_replicate(config, &density, n, rep)).collect())
}

fn run_replicate(config: &RegimeConfig, density: &Density, n: usize, replicate: usize) -> ExperimentRecord {
    let start = Instant::now();
    let mut record = ExperimentRecord {
        n,
        points: 0,
        r: config.radius(n),
        replicate,
        seed: config.replicate_seed(n, replicate),
        regime: config.regime(),
        counts: Vec::new(),
        betti: None,
        chi_cech: None,
        chi_morse: None,
        coverage_flag: None,
        wall_time: 0.0,
        error: None,
    };
    if let Err(e) = fill_record(config, density, &mut record) {
        record.error = Some(e);
    }
    record.wall_time = start.elapsed().as_secs_f64();
    record
}

fn fill_record(config: &RegimeConfig, density: &Density, rec: &mut ExperimentRecord) -> Result<(), String> {
    let cloud = sample(&config.manifold, density, config.process.mode(rec.n), rec.seed)
        .map_err(|e| format!("sampling: {e}"))?;
    rec.points = cloud.len();
    let counts = critical_counts(&cloud, rec.r, config.max_index).map_err(|e| format!("critical points: {e}"))?;
    if config.max_index >= cloud.dim() {
        rec.chi_morse = Some(counts.euler());
    }
    rec.counts = counts.counts;
    if config.betti {
        let m = config.manifold.intrinsic_dim();
        let complex = build_cech(&cloud, rec.r, m + 1).map_err(|e| format!("cech: {e}"))?;
        let betti = betti_numbers(&complex, m).map_err(|e| format!("homology: {e}"))?;
        // the union of balls has no homology above m in any supported ambient space
        rec.chi_cech = Some(alternating_sum(&betti));
        rec.betti = Some(betti);
    }
    if matches!(config.radius_rule, RadiusRule::Coverage { .. }) {
        rec.coverage_flag = Some(coverage_probe(&cloud, rec.r, rec.r / 8.0));
    }
    if let (Some(cech), Some(morse)) = (rec.chi_cech, rec.chi_morse) {
        if cech != morse {
            return Err(format!("morse-euler mismatch: cech {cech}, morse {morse}"));
        }
    }
    Ok(())
}

fn alternating_sum(values: &[usize]) -> i64 {
    values.iter().enumerate().map(|(k, &v)| if k % 2 == 0 { v as i64 } else { -(v as i64) }).sum()
}

/// Records whose Morse–Euler cross-check failed.
pub fn morse_euler_violations(records: &[ExperimentRecord]) -> Vec<&ExperimentRecord> {
    records
        .iter()
        .filter(|r| r.error.as_deref().is_some_and(|e| e.starts_with("morse-euler")))
        .collect()
}

/// Writes the metadata line followed by one JSON object per record.
pub fn write_records_jsonl<W: Write>(meta: &Metadata, records: &[ExperimentRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{}", meta.json_line())?;
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).map_err(io::Error::other)?)?;
    }
    Ok(())
}

/// Quantity summarized by [`aggregate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    /// `N_k`.
    Critical(usize),
    /// `β_k`.
    Betti(usize),
    /// χ, from the Čech side when available.
    Euler,
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statistic::Critical(k) => write!(f, "N_{k}"),
            Statistic::Betti(k) => write!(f, "beta_{k}"),
            Statistic::Euler => f.write_str("chi"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Statistic divided by `n`.
    PerN(Statistic),
    /// `N_k / (n^{k+1} r^{mk})`.
    SubcriticalCrit(usize),
    /// `β_k / (n^{k+2} r^{m(k+1)})`.
    SubcriticalBetti(usize),
}

impl Normalization {
    pub fn statistic(&self) -> Statistic {
        match *self {
            Normalization::PerN(s) => s,
            Normalization::SubcriticalCrit(k) => Statistic::Critical(k),
            Normalization::SubcriticalBetti(k) => Statistic::Betti(k),
        }
    }

    pub fn divisor(&self, n: usize, r: f64, m: usize) -> f64 {
        let n = n as f64;
        let rm = r.powi(m as i32);
        match *self {
            Normalization::PerN(_) => n,
            Normalization::SubcriticalCrit(k) => n.powi(k as i32 + 1) * rm.powi(k as i32),
            Normalization::SubcriticalBetti(k) => n.powi(k as i32 + 2) * rm.powi(k as i32 + 1),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Normalization::PerN(_) => "per_n",
            Normalization::SubcriticalCrit(_) => "subcritical_crit",
            Normalization::SubcriticalBetti(_) => "subcritical_betti",
        }
    }
}

/// Sample moments; skewness and excess kurtosis use population moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(values: &[f64]) -> Moments {
    let c = values.len();
    let cf = c as f64;
    let mean = values.iter().sum::<f64>() / cf;
    let central = |p: i32| values.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / cf;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    let variance = if c > 1 { m2 * cf / (cf - 1.0) } else { f64::NAN };
    let (skewness, excess_kurtosis) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) } else { (0.0, 0.0) };
    let se_variance = if c > 3 {
        ((m4 - variance * variance * (cf - 3.0) / (cf - 1.0)) / cf).max(0.0).sqrt()
    } else {
        f64::NAN
    };
    Moments { count: c, mean, variance, se_mean: (variance / cf).sqrt(), se_variance, skewness, excess_kurtosis }
}

/// Summary of one `n` value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub statistic: String,
    pub normalization: String,
    pub n: usize,
    pub r: f64,
    pub replicates: usize,
    pub failed: usize,
    pub divisor: f64,
    /// Moments of the normalized statistic.
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    /// Variance over mean of the raw statistic (1 for Poisson counts).
    pub dispersion: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "statistic,normalization,n,r,replicates,failed,divisor,mean,variance,se_mean,se_variance,dispersion,skewness,excess_kurtosis";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.statistic,
            self.normalization,
            self.n,
            self.r,
            self.replicates,
            self.failed,
            self.divisor,
            self.mean,
            self.variance,
            self.se_mean,
            self.se_variance,
            self.dispersion,
            self.skewness,
            self.excess_kurtosis
        )
    }
}

fn statistic_value(record: &ExperimentRecord, stat: Statistic) -> Option<f64> {
    match stat {
        Statistic::Critical(k) => record.counts.get(k).map(|&v| v as f64),
        Statistic::Betti(k) => record.betti.as_ref().and_then(|b| b.get(k)).map(|&v| v as f64),
        Statistic::Euler => record.chi_cech.or(record.chi_morse).map(|v| v as f64),
    }
}

/// Groups records by `n` (first-appearance order) and summarizes the
/// normalized statistic. Failed records are counted and skipped.
///
/// The sub-critical normalizations refuse records from any other regime;
/// `m` is the intrinsic dimension used in `r^m`.
pub fn aggregate(records: &[ExperimentRecord], normalization: Normalization, m: usize) -> Result<Vec<SummaryRow>, ExperimentError> {
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    if let Some(other) = records.iter().find(|r| r.regime != first.regime) {
        return Err(ExperimentError::Heterogeneous(format!("regimes {} and {}", first.regime, other.regime)));
    }
    if !matches!(normalization, Normalization::PerN(_)) && first.regime != Regime::Subcritical {
        return Err(ExperimentError::RegimeMismatch {
            analysis: normalization.label().into(),
            expected: Regime::Subcritical,
            found: first.regime,
        });
    }
    let stat = normalization.statistic();
    let mut order: Vec<usize> = Vec::new();
    for r in records {
        if !order.contains(&r.n) {
            order.push(r.n);
        }
    }
    let mut rows = Vec::new();
    for n in order {
        let group: Vec<&ExperimentRecord> = records.iter().filter(|r| r.n == n).collect();
        let r = group[0].r;
        if group.iter().any(|g| g.r != r) {
            return Err(ExperimentError::Heterogeneous(format!("several radii at n = {n}")));
        }
        let ok: Vec<&&ExperimentRecord> = group.iter().filter(|g| g.error.is_none()).collect();
        let raw = ok
            .iter()
            .map(|g| statistic_value(g, stat).ok_or_else(|| ExperimentError::Missing(stat.to_string())))
            .collect::<Result<Vec<f64>, _>>()?;
        let divisor = normalization.divisor(n, r, m);
        let normalized: Vec<f64> = raw.iter().map(|v| v / divisor).collect();
        let mo = moments(&normalized);
        let raw_mo = moments(&raw);
        rows.push(SummaryRow {
            statistic: stat.to_string(),
            normalization: normalization.label().into(),
            n,
            r,
            replicates: ok.len(),
            failed: group.len() - ok.len(),
            divisor,
            mean: mo.mean,
            variance: mo.variance,
            se_mean: mo.se_mean,
            se_variance: mo.se_variance,
            dispersion: raw_mo.variance / raw_mo.mean,
            skewness: mo.skewness,
            excess_kurtosis: mo.excess_kurtosis,
        });
    }
    Ok(rows)
}

/// Metadata comment, header and one line per row.
pub fn summary_csv(meta: &Metadata, rows: &[SummaryRow]) -> String {
    let mut s = meta.csv_comment();
    s.push_str(SummaryRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Sufficient test for `M ⊂ U(cloud, r)`: every point of an `eps_net`-dense
/// net on the manifold lies within `r - eps_net` of the cloud. May return
/// false when coverage is marginal.
pub fn coverage_probe(cloud: &PointCloud, r: f64, eps_net: f64) -> bool {
    assert!(eps_net > 0.0 && eps_net < r, "need 0 < eps_net < r");
    if cloud.is_empty() {
        return false;
    }
    let net = cloud.spec.coverage_net(eps_net);
    if net.is_empty() {
        return false;
    }
    let reach = r - eps_net;
    let grid = SpatialGrid::new(cloud, reach);
    net.iter().all(|s| grid.any_within(s, reach))
}

/// One replicate of a recovery experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub r: f64,
    pub betti: Option<Vec<usize>>,
    pub success: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// β_0..β_m of the manifold.
    pub expected: Vec<usize>,
    pub rows: Vec<RecoveryRow>,
    pub success_rate: f64,
}

/// Checks `β_k(Čech(P, r)) = β_k(M)` for every `k <= m` per replicate. Needs
/// a coverage radius rule and a manifold with known Betti numbers; only the
/// Čech complex is built.
pub fn recovery_experiment(config: &RegimeConfig) -> Result<RecoveryReport, ExperimentError> {
    if !matches!(config.radius_rule, RadiusRule::Coverage { .. }) {
        return Err(ExperimentError::RegimeMismatch {
            analysis: "recovery".into(),
            expected: Regime::Supercritical,
            found: config.regime(),
        });
    }
    let mut config = config.clone();
    config.betti = true;
    config.validate()?;
    let expected = config
        .manifold
        .betti_numbers()
        .ok_or_else(|| ExperimentError::Invalid(format!("no reference Betti numbers for {}", config.manifold)))?;
    let density = config.density.build(&config.manifold).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    let m = config.manifold.intrinsic_dim();
    let tasks: Vec<(usize, usize)> =
        config.n_values.iter().flat_map(|&n| (0..config.replicates).map(move |rep| (n, rep))).collect();
    let rows: Vec<RecoveryRow> = tasks
        .par_iter()
        .map(|&(n, replicate)| {
            let start = Instant::now();
            let seed = config.replicate_seed(n, replicate);
            let r = config.radius(n);
            let betti = sample(&config.manifold, &density, config.process.mode(n), seed)
                .map_err(|e| format!("sampling: {e}"))
                .and_then(|cloud| build_cech(&cloud, r, m + 1).map_err(|e| format!("cech: {e}")))
                .and_then(|c| betti_numbers(&c, m).map_err(|e| format!("homology: {e}")));
            let (betti, error) = match betti {
                Ok(b) => (Some(b), None),
                Err(e) => (None, Some(e)),
            };
            RecoveryRow {
                n,
                replicate,
                seed,
                r,
                success: betti.as_ref() == Some(&expected),
                betti,
                error,
                wall_time: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    let success_rate = if rows.is_empty() {
        0.0
    } else {
        rows.iter().filter(|r| r.success).count() as f64 / rows.len() as f64
    };
    Ok(RecoveryReport { expected, rows, success_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::FlatPoints;

    fn torus2(n: Vec<usize>, rule: RadiusRule) -> RegimeConfig {
        RegimeConfig::new(Manifold::FlatTorus { m: 2, side: 1.0 }, n, rule)
    }

    fn fake(n: usize, value: usize) -> ExperimentRecord {
        ExperimentRecord {
            n,
            points: n,
            r: 0.01,
            replicate: 0,
            seed: 0,
            regime: Regime::Subcritical,
            counts: vec![value, value],
            betti: Some(vec![value]),
            chi_cech: None,
            chi_morse: None,
            coverage_flag: None,
            wall_time: 0.0,
            error: None,
        }
    }

    #[test]
    fn radius_rules() {
        let lam = RadiusRule::Lambda { lambda: 2.0 };
        assert!((lam.radius(1000, 3) - 0.002f64.cbrt()).abs() < 1e-15);
        assert_eq!(lam.regime(3), Regime::Critical);
        let pl = RadiusRule::PowerLaw { c: 1.0, alpha: 0.75 };
        assert_eq!(pl.regime(2), Regime::Subcritical);
        assert_eq!(RadiusRule::PowerLaw { c: 1.0, alpha: 0.5 }.regime(2), Regime::Critical);
        assert_eq!(RadiusRule::PowerLaw { c: 1.0, alpha: 0.25 }.regime(2), Regime::Supercritical);
        let cov = RadiusRule::Coverage { c: 5.0 };
        assert!((cov.radius(2000, 3).powi(3) * 2000.0 - 5.0 * 2000f64.ln()).abs() < 1e-9);
        assert_eq!(cov.regime(3), Regime::Supercritical);
        // threshold unit on the unit sphere: omega_2 f_min = pi / (4 pi)
        let s = Manifold::Sphere2 { radius: 1.0 };
        let RadiusRule::Coverage { c } = RadiusRule::coverage_units(2.5, &s, &Density::Uniform) else { panic!() };
        assert!((c - 10.0).abs() < 1e-12);
    }

    #[test]
    fn config_round_trip_and_hash() {
        let text = "format = manitopo-regime/1\n# a comment\nmanifold = flat_torus(m=3, side=1)\nn = 500, 1000\nradius = lambda(0.5)\nseed = 9\nbetti = false\n";
        let c = RegimeConfig::parse(text).unwrap();
        assert_eq!(c.manifold, Manifold::FlatTorus { m: 3, side: 1.0 });
        assert_eq!(c.n_values, vec![500, 1000]);
        assert_eq!(c.radius_rule, RadiusRule::Lambda { lambda: 0.5 });
        assert_eq!(c.base_seed, 9);
        assert_eq!(c.max_index, 3);
        assert!(!c.betti);
        let again = RegimeConfig::parse(&c.to_config_string()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
        let stem = c.output_stem("regime");
        assert!(stem.starts_with("regime-") && stem.ends_with("-seed9"));
        let mut other = c.clone();
        other.base_seed = 10;
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn config_coverage_units() {
        let text = "format = manitopo-regime/1\nmanifold = sphere2(radius=1)\nn = 3000\nradius = coverage(units=2.5)\n";
        let c = RegimeConfig::parse(text).unwrap();
        assert!(matches!(c.radius_rule, RadiusRule::Coverage { c } if (c - 10.0).abs() < 1e-12));
        let c2 = RegimeConfig::parse(&text.replace("units=2.5", "c=10")).unwrap();
        assert_eq!(c2.radius_rule, RadiusRule::Coverage { c: 10.0 });
    }

    #[test]
    fn config_errors_name_the_line() {
        let base = "format = manitopo-regime/1\nmanifold = circle(radius=1)\nn = 100\nradius = lambda(1)\n";
        assert!(RegimeConfig::parse(base).is_ok());
        let cases = [
            (base.replace("manitopo-regime/1", "manitopo-regime/9"), 1),
            (format!("{base}colour = red\n"), 5),
            (base.replace("circle(radius=1)", "klein_bottle"), 2),
            (base.replace("n = 100", "n = many"), 3),
            (base.replace("lambda(1)", "power_law(1, 2)"), 4),
            (format!("{base}n = 5\n"), 5),
            (format!("{base}oops\n"), 5),
        ];
        for (text, line) in cases {
            match RegimeConfig::parse(&text) {
                Err(ExperimentError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("expected a parse error for {text:?}, got {other:?}"),
            }
        }
        assert!(matches!(
            RegimeConfig::parse("manifold = circle(radius=1)\n"),
            Err(ExperimentError::Parse { line: 0, .. })
        ));
    }

    #[test]
    fn validate_checks_periodic_radius() {
        let c = torus2(vec![10], RadiusRule::Lambda { lambda: 1.0 });
        assert!(matches!(c.validate(), Err(ExperimentError::Invalid(_))));
        let mut c = torus2(vec![10], RadiusRule::Lambda { lambda: 0.5 });
        c.betti = false;
        assert!(c.validate().is_ok());
        assert!(torus2(vec![], RadiusRule::Lambda { lambda: 0.5 }).validate().is_err());
    }

    #[test]
    fn zero_replicates_give_no_records() {
        let mut c = torus2(vec![100], RadiusRule::Lambda { lambda: 1.0 });
        c.replicates = 0;
        assert!(run_regime(&c).unwrap().is_empty());
    }

    #[test]
    fn runs_are_deterministic_and_consistent() {
        let mut c = torus2(vec![60, 120], RadiusRule::PowerLaw { c: 0.6, alpha: 0.5 });
        c.replicates = 4;
        c.base_seed = 3;
        let a = run_regime(&c).unwrap();
        let b = run_regime(&c).unwrap();
        assert_eq!(a.len(), 8);
        let json = |rs: &[ExperimentRecord]| -> Vec<String> { rs.iter().map(|r| serde_json::to_string(r).unwrap()).collect() };
        assert_eq!(json(&a), json(&b));
        for (i, r) in a.iter().enumerate() {
            assert_eq!(r.n, if i < 4 { 60 } else { 120 });
            assert_eq!(r.replicate, i % 4);
            assert!(r.error.is_none(), "{:?}", r.error);
            assert_eq!(r.chi_cech, r.chi_morse);
            assert_eq!(r.counts[0], r.points);
            assert_eq!(r.coverage_flag, None);
        }
        assert!(morse_euler_violations(&a).is_empty());
    }

    #[test]
    fn records_carry_no_wall_time_in_json() {
        let mut r = fake(10, 1);
        r.wall_time = 1.5;
        let s = serde_json::to_string(&r).unwrap();
        assert!(!s.contains("wall_time"));
    }

    #[test]
    fn constant_records_have_zero_variance() {
        let records: Vec<_> = (0..5).map(|_| fake(100, 7)).collect();
        let rows = aggregate(&records, Normalization::PerN(Statistic::Critical(1)), 2).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean - 0.07).abs() < 1e-15);
        assert_eq!(rows[0].variance, 0.0);
        assert_eq!(rows[0].replicates, 5);
        assert_eq!(rows[0].dispersion, 0.0);
        let sub = aggregate(&records, Normalization::SubcriticalCrit(1), 2).unwrap();
        assert!((sub[0].divisor - 100f64.powi(2) * 1e-4).abs() < 1e-12);
        assert!((sub[0].mean - 7.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_refuses_mismatched_analyses() {
        let mut records: Vec<_> = (0..3).map(|_| fake(100, 1)).collect();
        for r in &mut records {
            r.regime = Regime::Critical;
        }
        assert!(matches!(
            aggregate(&records, Normalization::SubcriticalBetti(0), 2),
            Err(ExperimentError::RegimeMismatch { .. })
        ));
        assert!(aggregate(&records, Normalization::PerN(Statistic::Betti(0)), 2).is_ok());
        records[1].regime = Regime::Subcritical;
        assert!(matches!(
            aggregate(&records, Normalization::PerN(Statistic::Betti(0)), 2),
            Err(ExperimentError::Heterogeneous(_))
        ));
        let mut records: Vec<_> = (0..3).map(|_| fake(100, 1)).collect();
        records[0].betti = None;
        assert!(matches!(
            aggregate(&records, Normalization::PerN(Statistic::Betti(0)), 2),
            Err(ExperimentError::Missing(_))
        ));
        records[0].error = Some("x".into());
        let rows = aggregate(&records, Normalization::PerN(Statistic::Betti(0)), 2).unwrap();
        assert_eq!((rows[0].replicates, rows[0].failed), (2, 1));
    }

    #[test]
    fn per_n_of_points_is_near_one() {
        let mut c = torus2(vec![400], RadiusRule::PowerLaw { c: 0.5, alpha: 1.0 });
        c.replicates = 30;
        c.betti = false;
        let records = run_regime(&c).unwrap();
        let rows = aggregate(&records, Normalization::PerN(Statistic::Critical(0)), 2).unwrap();
        // N_0 ~ Poisson(400): the mean of N_0/n has SE 0.05/sqrt(30)
        assert!((rows[0].mean - 1.0).abs() < 4.0 * 0.05 / 30f64.sqrt(), "{}", rows[0].mean);
        assert!((0.4..2.0).contains(&rows[0].dispersion));
    }

    #[test]
    fn moments_of_known_data() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.skewness, 0.0);
        // population m2 = 1.25, m4 = 2.5625
        assert!((m.excess_kurtosis - (2.5625 / 1.5625 - 3.0)).abs() < 1e-12);
        let skewed = moments(&[0.0, 0.0, 0.0, 10.0]);
        assert!(skewed.skewness > 1.0);
    }

    #[test]
    fn coverage_of_the_net_itself() {
        let m = Manifold::FlatTorus { m: 2, side: 1.0 };
        let net = m.coverage_net(0.05);
        let cloud = PointCloud::from_points(m, &net);
        assert!(coverage_probe(&cloud, 0.06, 0.05));
        let c = Manifold::Circle { radius: 1.0 };
        let cloud = PointCloud::from_points(c, &c.coverage_net(0.1));
        assert!(coverage_probe(&cloud, 0.3, 0.1));
    }

    #[test]
    fn a_single_point_does_not_cover() {
        let m = Manifold::FlatTorus { m: 2, side: 1.0 };
        let cloud = PointCloud::from_points(m, &[vec![0.5, 0.5]]);
        assert!(!coverage_probe(&cloud, 0.2, 0.05));
        let empty = PointCloud { points: FlatPoints { dim: 2, coords: vec![] }, ..cloud };
        assert!(!coverage_probe(&empty, 0.2, 0.05));
    }

    #[test]
    fn circle_coverage_at_moderate_radius() {
        let c = Manifold::Circle { radius: 1.0 };
        let hits = (0..20)
            .filter(|&s| {
                let cloud = sample(&c, &Density::Uniform, SamplingMode::Binomial(500), s).unwrap();
                coverage_probe(&cloud, 0.2, 0.02)
            })
            .count();
        assert!(hits >= 19, "{hits}");
    }

    #[test]
    fn recovery_on_the_circle() {
        let c = Manifold::Circle { radius: 1.0 };
        let mut config = RegimeConfig::new(c, vec![1000], RadiusRule::coverage_units(4.0, &c, &Density::Uniform));
        config.replicates = 20;
        config.base_seed = 11;
        let report = recovery_experiment(&config).unwrap();
        assert_eq!(report.expected, vec![1, 1]);
        assert!(report.success_rate >= 0.95, "{}", report.success_rate);

        config.radius_scale = 0.1;
        let dust = recovery_experiment(&config).unwrap();
        assert!(dust.success_rate <= 0.05);
        assert!(dust.rows.iter().all(|r| r.betti.as_ref().unwrap()[0] > 20));
    }

    #[test]
    fn recovery_needs_a_coverage_rule() {
        let config = torus2(vec![100], RadiusRule::Lambda { lambda: 0.5 });
        assert!(matches!(recovery_experiment(&config), Err(ExperimentError::RegimeMismatch { .. })));
    }

    #[test]
    fn flat_circle_reference_betti() {
        assert_eq!(Manifold::FlatTorus { m: 1, side: 1.0 }.betti_numbers(), Some(vec![1, 1]));
    }

    #[test]
    fn coverage_runs_set_the_flag() {
        let c = Manifold::Circle { radius: 1.0 };
        let mut config = RegimeConfig::new(c, vec![300], RadiusRule::coverage_units(4.0, &c, &Density::Uniform));
        config.replicates = 3;
        let records = run_regime(&config).unwrap();
        assert!(records.iter().all(|r| r.coverage_flag.is_some() && r.error.is_none()));
        assert!(records.iter().all(|r| r.chi_cech == Some(0)));
    }

    #[test]
    fn jsonl_and_csv_carry_metadata() {
        let meta = Metadata::new("abc".into(), 5);
        let mut buf = Vec::new();
        write_records_jsonl(&meta, &[fake(10, 2)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let head: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(head["meta"]["config_hash"], "abc");
        assert_eq!(head["meta"]["seed"], 5);
        let rec: ExperimentRecord = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(rec.counts, vec![2, 2]);
        let rows = aggregate(&[fake(10, 2), fake(10, 4)], Normalization::PerN(Statistic::Critical(0)), 2).unwrap();
        let csv = summary_csv(&meta, &rows);
        assert!(csv.starts_with("# tool=manitopo"));
        assert_eq!(csv.lines().nth(1).unwrap(), SummaryRow::CSV_HEADER);
        assert!(csv.lines().nth(2).unwrap().starts_with("N_0,per_n,10,"));
    }
}
