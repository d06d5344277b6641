//! Scenario configuration, run orchestration, parameter sweeps and timing.
//!
//! Everything here is `f64`. A run writes its artifacts into the configured
//! output directory when one is set, and always returns a [`RunSummary`].

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cm::{compose_into_fine, global_map_eval, read_checkpoint, write_checkpoint, CmConfig, CmSolver, MapMode, StepRecord};
use crate::error::{Error, Result};
use crate::flow::{track_tracers, Deform3D, MandelbrotField, MosaicField, RigidRotation, Swirl, VelocityField, ZeroField};
use crate::gals::{gals_advect_scalar_run, GalsConfig, StepStats};
use crate::hermite::{Boundary, GridGeometry, HermiteField};
use crate::map::MapField;
use crate::io::{write_pgm, write_polylines};
use crate::scalar::Point;
use crate::sets::{contour_from_samples, metrics_from_samples, sample_grid, surface_from_samples, SetFunction, SetMetrics};

/// Named experiment presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Swirl2D,
    Deform3D,
    Mandelbrot,
    OpenCurves,
    Mosaic,
    /// Field and set chosen by the `field` and `set` keys.
    Custom,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Swirl2D => "swirl2d",
            Scenario::Deform3D => "deform3d",
            Scenario::Mandelbrot => "mandelbrot",
            Scenario::OpenCurves => "open_curves",
            Scenario::Mosaic => "mosaic",
            Scenario::Custom => "custom",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "swirl2d" | "swirl" => Scenario::Swirl2D,
            "deform3d" | "deform" => Scenario::Deform3D,
            "mandelbrot" => Scenario::Mandelbrot,
            "open_curves" | "opencurves" => Scenario::OpenCurves,
            "mosaic" => Scenario::Mosaic,
            "custom" => Scenario::Custom,
            other => return Err(Error::InvalidConfig(format!("unknown scenario `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Cm,
    Gals,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cm => "cm",
            Method::Gals => "gals",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cm" => Ok(Method::Cm),
            "gals" => Ok(Method::Gals),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Velocity fields selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Swirl,
    Deform3D,
    Mandelbrot,
    Mosaic,
    Rotation,
    Zero,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Swirl => "swirl",
            FieldKind::Deform3D => "deform3d",
            FieldKind::Mandelbrot => "mandelbrot",
            FieldKind::Mosaic => "mosaic",
            FieldKind::Rotation => "rotation",
            FieldKind::Zero => "zero",
        }
    }
}

impl FromStr for FieldKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "swirl" => FieldKind::Swirl,
            "deform3d" | "deform" => FieldKind::Deform3D,
            "mandelbrot" => FieldKind::Mandelbrot,
            "mosaic" => FieldKind::Mosaic,
            "rotation" => FieldKind::Rotation,
            "zero" => FieldKind::Zero,
            other => return Err(Error::InvalidConfig(format!("unknown field `{other}`"))),
        })
    }
}

/// Initial sets selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetKind {
    /// Radius 0.15 about (0.5, 0.75).
    Circle,
    /// Radius 0.15 about (0.35, 0.35, 0.35).
    Sphere,
    Mandelbrot,
    /// 3 × 3 tiling with the middle row shifted by half a tile.
    Mosaic,
    /// Three masked branches meeting at a triple point, plus the circle.
    OpenCurves,
}

impl SetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SetKind::Circle => "circle",
            SetKind::Sphere => "sphere",
            SetKind::Mandelbrot => "mandelbrot",
            SetKind::Mosaic => "mosaic",
            SetKind::OpenCurves => "open_curves",
        }
    }

    /// Named set functions; the first is the one metrics are reported for.
    pub fn functions(self, thickness: f64) -> Vec<(String, SetFunction<f64>)> {
        match self {
            SetKind::Circle => vec![("circle".into(), SetFunction::circle([0.5, 0.75], 0.15))],
            SetKind::Sphere => vec![("sphere".into(), SetFunction::sphere([0.35, 0.35, 0.35], 0.15))],
            SetKind::Mandelbrot => vec![("mandelbrot".into(), SetFunction::mandelbrot())],
            SetKind::Mosaic => vec![("mosaic".into(), SetFunction::Mosaic { kx: 3, ky: 3, stagger: true })],
            SetKind::OpenCurves => {
                let mut out = vec![("circle".into(), SetFunction::circle([0.5, 0.75], 0.15))];
                let centre = [0.5, 0.35];
                let len = 0.15;
                for (k, deg) in [90.0f64, 210.0, 330.0].into_iter().enumerate() {
                    let (s, c) = deg.to_radians().sin_cos();
                    let line = SetFunction::HalfSpace { normal: vec![-s, c], offset: -s * centre[0] + c * centre[1] };
                    let mid = [centre[0] + 0.5 * len * c, centre[1] + 0.5 * len * s];
                    let mask = SetFunction::circle(mid, 0.5 * len);
                    out.push((
                        format!("branch{}", k + 1),
                        SetFunction::MaskedLine { line: Box::new(line), mask: Box::new(mask), thickness },
                    ));
                }
                out
            }
        }
    }
}

impl FromStr for SetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "circle" => SetKind::Circle,
            "sphere" => SetKind::Sphere,
            "mandelbrot" => SetKind::Mandelbrot,
            "mosaic" => SetKind::Mosaic,
            "open_curves" => SetKind::OpenCurves,
            other => return Err(Error::InvalidConfig(format!("unknown set `{other}`"))),
        })
    }
}

/// Every parameter of a run. Keys of the text form are the field names, plus
/// `a` for `period`, `t` for `t_end` and `nf` to fix all three fine sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub method: Method,
    pub field: FieldKind,
    pub set: SetKind,
    pub nc: usize,
    pub nf_init: usize,
    pub nf_min: usize,
    pub nf_max: usize,
    pub e1: f64,
    pub e2: f64,
    pub gamma: usize,
    /// `None` picks the scenario default.
    pub dt: Option<f64>,
    pub boundary: Boundary,
    pub dynamic_grid: bool,
    pub epsilon_rel: f64,
    pub keep_ledger: bool,
    /// Reversal period `A` of the velocity field.
    pub period: f64,
    pub t_end: f64,
    pub ng: usize,
    pub output: Option<PathBuf>,
    pub seed: u64,
    /// Shift the metric sample grid by a seeded random sub-cell offset.
    pub jitter: bool,
    /// Samples per axis for contours, rasters and metrics.
    pub resolution: usize,
    pub snapshots: Vec<f64>,
    pub checkpoint_every: usize,
}

const CM_ONLY_KEYS: [&str; 9] = ["nc", "nf", "nf_init", "nf_min", "nf_max", "e1", "e2", "gamma", "keep_ledger"];

impl RunConfig {
    pub fn preset(scenario: Scenario) -> Self {
        let base = RunConfig {
            scenario,
            method: Method::Cm,
            field: FieldKind::Swirl,
            set: SetKind::Circle,
            nc: 32,
            nf_init: 256,
            nf_min: 256,
            nf_max: 256,
            e1: 5e-6,
            e2: 1e-4,
            gamma: 0,
            dt: None,
            boundary: Boundary::Clamped,
            dynamic_grid: false,
            epsilon_rel: 1e-4,
            keep_ledger: false,
            period: 8.0,
            t_end: 16.0,
            ng: 256,
            output: None,
            seed: 0,
            jitter: false,
            resolution: 512,
            snapshots: vec![4.0, 8.0, 12.0, 16.0],
            checkpoint_every: 0,
        };
        match scenario {
            Scenario::Swirl2D | Scenario::Custom => base,
            Scenario::Deform3D => RunConfig {
                field: FieldKind::Deform3D,
                set: SetKind::Sphere,
                nc: 16,
                nf_init: 64,
                nf_min: 64,
                nf_max: 64,
                e1: 1e-4,
                period: 2.0,
                t_end: 2.0,
                ng: 64,
                resolution: 96,
                snapshots: vec![1.0, 2.0],
                ..base
            },
            Scenario::Mandelbrot => RunConfig {
                field: FieldKind::Mandelbrot,
                set: SetKind::Mandelbrot,
                nf_init: 1024,
                nf_min: 1024,
                nf_max: 1024,
                e1: 1e-7,
                period: 16.0,
                t_end: 16.0,
                ng: 1024,
                resolution: 1024,
                ..base
            },
            Scenario::OpenCurves => {
                RunConfig { set: SetKind::OpenCurves, period: 4.0, t_end: 4.0, snapshots: vec![1.0, 2.0, 3.0, 4.0], ..base }
            }
            Scenario::Mosaic => RunConfig {
                field: FieldKind::Mosaic,
                set: SetKind::Mosaic,
                nf_init: 512,
                nf_min: 512,
                nf_max: 512,
                e1: 5e-8,
                dt: Some(1.0 / 1024.0),
                boundary: Boundary::Periodic,
                period: 2.0,
                t_end: 2.0,
                ng: 512,
                snapshots: vec![0.5, 1.0, 1.5, 2.0],
                ..base
            },
        }
    }

    /// Spatial dimension implied by the velocity field.
    pub fn dims(&self) -> usize {
        if self.field == FieldKind::Deform3D {
            3
        } else {
            2
        }
    }

    /// Time step actually used.
    pub fn resolved_dt(&self) -> f64 {
        match (self.dt, self.method) {
            (Some(dt), _) => dt,
            (None, Method::Gals) => 1.0 / self.ng as f64,
            (None, Method::Cm) if self.dims() == 3 => 1.0 / self.nf_max as f64,
            (None, Method::Cm) => 1.0 / self.nc as f64,
        }
    }

    /// Parses `key = value` lines on top of the preset named by `scenario`
    /// (first occurrence wins for the scenario key; default `swirl2d`).
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let scenario = match pairs.iter().find(|(k, _)| k == "scenario") {
            Some((_, v)) => v.parse()?,
            None => Scenario::Swirl2D,
        };
        let mut cfg = Self::preset(scenario);
        cfg.apply(pairs)?;
        Ok(cfg)
    }

    /// Applies overrides in order, then validates.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (k, v) in pairs {
            self.set_key(k, v)?;
            seen.insert(k.as_str());
        }
        if self.method == Method::Gals {
            if let Some(k) = CM_ONLY_KEYS.iter().find(|k| seen.contains(*k)) {
                return Err(Error::InvalidConfig(format!("key `{k}` only applies to method=cm")));
            }
        }
        self.validate()
    }

    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidConfig(format!("bad value `{value}` for key `{key}`"));
        let v = value.trim();
        let num = || v.parse::<f64>().map_err(|_| bad());
        let int = || v.parse::<usize>().map_err(|_| bad());
        let flag = || match v.to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" | "on" => Ok(true),
            "0" | "false" | "no" | "off" => Ok(false),
            _ => Err(bad()),
        };
        match key.trim().to_ascii_lowercase().as_str() {
            "scenario" => {
                let s: Scenario = v.parse()?;
                if s != self.scenario {
                    *self = Self::preset(s);
                }
            }
            "method" => self.method = v.parse()?,
            "field" => self.field = v.parse()?,
            "set" => self.set = v.parse()?,
            "nc" => self.nc = int()?,
            "nf" => {
                let n = int()?;
                (self.nf_init, self.nf_min, self.nf_max) = (n, n, n);
            }
            "nf_init" => self.nf_init = int()?,
            "nf_min" => self.nf_min = int()?,
            "nf_max" => self.nf_max = int()?,
            "e1" => self.e1 = num()?,
            "e2" => self.e2 = num()?,
            "gamma" => self.gamma = int()?,
            "dt" => self.dt = if v == "auto" { None } else { Some(num()?) },
            "boundary" => self.boundary = v.parse()?,
            "dynamic_grid" => self.dynamic_grid = flag()?,
            "epsilon_rel" => self.epsilon_rel = num()?,
            "keep_ledger" => self.keep_ledger = flag()?,
            "a" | "period" => self.period = num()?,
            "t" | "t_end" => self.t_end = num()?,
            "ng" => self.ng = int()?,
            "output" => self.output = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "jitter" => self.jitter = flag()?,
            "resolution" => self.resolution = int()?,
            "snapshots" => {
                self.snapshots = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_>>()?
            }
            "checkpoint_every" => self.checkpoint_every = int()?,
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidConfig("t must be a finite non-negative time".into()));
        }
        if !(self.period > 0.0) {
            return Err(Error::InvalidConfig("a must be positive".into()));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidConfig("resolution must be at least 2".into()));
        }
        let three_d = self.dims() == 3;
        if three_d != (self.set == SetKind::Sphere) {
            return Err(Error::InvalidConfig(format!(
                "set `{}` does not match the dimension of field `{}`",
                self.set.as_str(),
                self.field.as_str()
            )));
        }
        if (self.field == FieldKind::Mosaic) != (self.boundary == Boundary::Periodic) && self.field != FieldKind::Zero {
            return Err(Error::InvalidConfig("the mosaic field needs boundary=periodic, the others clamped".into()));
        }
        match self.method {
            Method::Cm => {
                let cm = self.cm_config();
                if three_d {
                    cm.validate::<3>()
                } else {
                    cm.validate::<2>()
                }
            }
            Method::Gals => {
                if self.ng == 0 {
                    return Err(Error::InvalidConfig("ng must be positive".into()));
                }
                self.gals_config().validate()
            }
        }
    }

    pub fn cm_config(&self) -> CmConfig<f64> {
        CmConfig {
            nc: self.nc,
            nf_init: self.nf_init,
            nf_min: self.nf_min,
            nf_max: self.nf_max,
            e1: self.e1,
            e2: self.e2,
            gamma: self.gamma,
            dt: self.resolved_dt(),
            boundary: self.boundary,
            dynamic_grid: self.dynamic_grid,
            epsilon_rel: self.epsilon_rel,
            keep_ledger: self.keep_ledger,
        }
    }

    pub fn gals_config(&self) -> GalsConfig<f64> {
        GalsConfig { epsilon_rel: self.epsilon_rel, dt: Some(self.resolved_dt()), cfl: 1.0 }
    }

    /// The fully resolved configuration in the text form accepted by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("scenario", self.scenario.as_str().into());
        kv("method", self.method.as_str().into());
        kv("field", self.field.as_str().into());
        kv("set", self.set.as_str().into());
        if self.method == Method::Cm {
            kv("nc", self.nc.to_string());
            kv("nf_init", self.nf_init.to_string());
            kv("nf_min", self.nf_min.to_string());
            kv("nf_max", self.nf_max.to_string());
            kv("e1", format!("{:e}", self.e1));
            kv("e2", format!("{:e}", self.e2));
            kv("gamma", self.gamma.to_string());
            kv("keep_ledger", self.keep_ledger.to_string());
        }
        kv("dt", format!("{:e}", self.resolved_dt()));
        kv("boundary", self.boundary.as_str().into());
        kv("dynamic_grid", self.dynamic_grid.to_string());
        kv("epsilon_rel", format!("{:e}", self.epsilon_rel));
        kv("a", format!("{}", self.period));
        kv("t", format!("{}", self.t_end));
        kv("ng", self.ng.to_string());
        if let Some(o) = &self.output {
            kv("output", o.display().to_string());
        }
        kv("seed", self.seed.to_string());
        kv("jitter", self.jitter.to_string());
        kv("resolution", self.resolution.to_string());
        kv("snapshots", self.snapshots.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","));
        kv("checkpoint_every", self.checkpoint_every.to_string());
        s
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::parse(k + 1, "expected key = value"))?;
        out.push((key.trim().to_ascii_lowercase(), value.trim().to_string()));
    }
    Ok(out)
}

/// Accumulated phase times and the counts they were spent on.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TimingReport {
    pub footpoints: f64,
    pub interpolation: f64,
    pub particles: f64,
    pub remapping: f64,
    pub total: f64,
    pub steps: usize,
    pub remaps: usize,
    /// Steps per remap.
    pub m: f64,
    /// Advected grid nodes per step.
    pub nodes: usize,
    /// Seconds per node and step.
    pub c_footpoint: f64,
    pub c_interp: f64,
}

impl TimingReport {
    fn finish(mut self) -> Self {
        self.m = self.steps as f64 / self.remaps.max(1) as f64;
        let work = (self.steps * self.nodes).max(1) as f64;
        self.c_footpoint = self.footpoints / work;
        self.c_interp = self.interpolation / work;
        self
    }

    pub const CSV_HEADER: [&'static str; 11] = [
        "footpoints_s",
        "interpolation_s",
        "particles_s",
        "remapping_s",
        "total_s",
        "steps",
        "remaps",
        "m",
        "nodes",
        "c_footpoint",
        "c_interp",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            format!("{:e}", self.footpoints),
            format!("{:e}", self.interpolation),
            format!("{:e}", self.particles),
            format!("{:e}", self.remapping),
            format!("{:e}", self.total),
            self.steps.to_string(),
            self.remaps.to_string(),
            format!("{}", self.m),
            self.nodes.to_string(),
            format!("{:e}", self.c_footpoint),
            format!("{:e}", self.c_interp),
        ]
    }
}

/// Metrics of one set at one snapshot time.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotMetrics {
    pub t: f64,
    pub set: String,
    pub metrics: SetMetrics<f64>,
}

/// What a run produced, independent of whether files were written.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub t_end: f64,
    pub snapshots: Vec<SnapshotMetrics>,
    pub timing: TimingReport,
    /// Fine resolution after every step, CM only.
    pub nf_trace: Vec<(f64, usize)>,
    /// Steps where the remap decision disagrees with the tolerance.
    pub trigger_violations: usize,
    pub tracer_return: Option<f64>,
    pub warnings: Vec<String>,
}

impl RunSummary {
    /// Metrics of the primary set at the final time.
    pub fn final_metrics(&self) -> Option<&SetMetrics<f64>> {
        let first = self.snapshots.first()?.set.clone();
        self.snapshots.iter().rev().find(|s| s.set == first && s.t == self.t_end).map(|s| &s.metrics)
    }

    pub fn max_nf(&self) -> Option<(f64, usize)> {
        let max = self.nf_trace.iter().map(|p| p.1).max()?;
        self.nf_trace.iter().find(|p| p.1 == max).copied()
    }

    pub fn final_nf(&self) -> Option<usize> {
        self.nf_trace.last().map(|p| p.1)
    }
}

/// Count of steps where `m1 > e1` disagrees with whether a remap happened.
pub fn trigger_violations(records: &[StepRecord<f64>], e1: f64) -> usize {
    records.iter().filter(|r| r.remapped != (r.m1 > e1)).count()
}

/// Phase junctions of the default mosaic: two triple points and a quadruple point.
pub fn mosaic_junctions() -> Vec<Point<f64, 2>> {
    vec![[1.0 / 3.0, 1.0 / 3.0], [0.5, 2.0 / 3.0], [2.0 / 3.0, 0.0]]
}

fn velocity_2d(cfg: &RunConfig) -> Result<Box<dyn VelocityField<f64, 2> + Send>> {
    Ok(match cfg.field {
        FieldKind::Swirl => Box::new(Swirl { period: cfg.period }),
        FieldKind::Mandelbrot => Box::new(MandelbrotField { period: cfg.period }),
        FieldKind::Mosaic => Box::new(MosaicField),
        FieldKind::Rotation => Box::new(RigidRotation { center: [0.5, 0.5], omega: std::f64::consts::TAU / cfg.period }),
        FieldKind::Zero => Box::new(ZeroField),
        FieldKind::Deform3D => return Err(Error::InvalidConfig("deform3d is a 3D field".into())),
    })
}

fn velocity_3d(cfg: &RunConfig) -> Result<Box<dyn VelocityField<f64, 3> + Send>> {
    Ok(match cfg.field {
        FieldKind::Deform3D => Box::new(Deform3D { period: cfg.period }),
        FieldKind::Zero => Box::new(ZeroField),
        other => return Err(Error::InvalidConfig(format!("{} is a 2D field", other.as_str()))),
    })
}

/// Snapshot times inside `(0, t_end]`, always ending with `t_end`.
fn snapshot_times(cfg: &RunConfig) -> Vec<f64> {
    let mut ts: Vec<f64> = cfg.snapshots.iter().copied().filter(|t| *t > 0.0 && *t < cfg.t_end).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(cfg.t_end);
    ts
}

fn fmt_time(t: f64) -> String {
    format!("{t:.4}").trim_end_matches('0').trim_end_matches('.').replace('.', "p")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidConfig(format!("csv: {other:?}")),
    }
}

const METRICS_HEADER: [&str; 7] = ["t", "set", "l2", "hausdorff", "measure_reference", "measure_computed", "measure_rel_error"];

fn metrics_rows(snaps: &[SnapshotMetrics]) -> Vec<Vec<String>> {
    snaps
        .iter()
        .map(|s| {
            vec![
                format!("{}", s.t),
                s.set.clone(),
                format!("{:e}", s.metrics.l2),
                s.metrics.hausdorff.map(|h| format!("{h:e}")).unwrap_or_default(),
                format!("{:e}", s.metrics.measure_reference),
                format!("{:e}", s.metrics.measure_computed),
                format!("{:e}", s.metrics.measure_rel_error),
            ]
        })
        .collect()
}

/// Sub-cell offset of the metric sample grid.
fn jitter_shift<const D: usize>(cfg: &RunConfig) -> Point<f64, D> {
    if !cfg.jitter {
        return [0.0; D];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = 1.0 / cfg.resolution as f64;
    std::array::from_fn(|_| rng.gen_range(-0.5..0.5) * h)
}

/// Samples, writes and measures every set at one time. `pullback` maps a
/// point to where `S0` must be evaluated; `None` samples `direct` instead.
fn snapshot<const D: usize>(
    cfg: &RunConfig,
    sets: &[(String, SetFunction<f64>)],
    t: f64,
    value: &dyn Fn(usize, &Point<f64, D>) -> f64,
    out: &mut Vec<SnapshotMetrics>,
) -> Result<()> {
    let r = cfg.resolution;
    let shift = jitter_shift::<D>(cfg);
    for (k, (name, set)) in sets.iter().enumerate() {
        let at = |x: &Point<f64, D>| -> Point<f64, D> { std::array::from_fn(|a| x[a] + shift[a]) };
        let computed = sample_grid::<f64, D, _>(|x| value(k, &at(x)), r);
        let reference = sample_grid::<f64, D, _>(|x| set.eval(&at(x)), r);
        let metrics = metrics_from_samples::<f64, D>(&reference, &computed, r, set.is_level_set());
        out.push(SnapshotMetrics { t, set: name.clone(), metrics });
        let Some(dir) = &cfg.output else { continue };
        let stem = format!("{name}_t{}", fmt_time(t));
        let raw = if cfg.jitter { sample_grid::<f64, D, _>(|x| value(k, x), r) } else { computed };
        if D == 2 {
            write_pgm(BufWriter::new(fs::File::create(dir.join(format!("{stem}.pgm")))?), &raw, r, r)?;
        }
        if set.is_level_set() {
            let contour = if D == 2 { contour_from_samples(&raw, 0.0, r) } else { surface_from_samples(&raw, 0.0, r) };
            write_polylines(BufWriter::new(fs::File::create(dir.join(format!("{stem}.txt")))?), &contour)?;
        }
    }
    Ok(())
}

fn prepare_output(cfg: &RunConfig) -> Result<()> {
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.to_text())?;
    }
    Ok(())
}

/// Runs one scenario end to end.
pub fn run_scenario(cfg: &RunConfig) -> Result<RunSummary> {
    run_scenario_from(cfg, None)
}

/// Like [`run_scenario`], continuing a CM run from a checkpoint directory.
/// Snapshot times at or before the checkpoint time are skipped.
pub fn run_scenario_from(cfg: &RunConfig, resume: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    if resume.is_some() && cfg.method != Method::Cm {
        return Err(Error::InvalidConfig("only CM runs can resume from a checkpoint".into()));
    }
    prepare_output(cfg)?;
    let summary = match (cfg.method, cfg.dims()) {
        (Method::Cm, 2) => run_cm::<2>(cfg, velocity_2d(cfg)?, resume)?,
        (Method::Cm, _) => run_cm::<3>(cfg, velocity_3d(cfg)?, resume)?,
        (Method::Gals, 2) => run_gals::<2>(cfg, velocity_2d(cfg)?)?,
        (Method::Gals, _) => run_gals::<3>(cfg, velocity_3d(cfg)?)?,
    };
    if let Some(dir) = &cfg.output {
        write_csv(&dir.join("metrics.csv"), &METRICS_HEADER, &metrics_rows(&summary.snapshots))?;
        write_csv(&dir.join("timing.csv"), &TimingReport::CSV_HEADER, &[summary.timing.csv_row()])?;
    }
    Ok(summary)
}

fn run_cm<const D: usize>(
    cfg: &RunConfig,
    field: Box<dyn VelocityField<f64, D> + Send>,
    resume: Option<&Path>,
) -> Result<RunSummary> {
    let start = Instant::now();
    let sets = cfg.set.functions(1.5 / cfg.resolution as f64);
    let mut solver = match resume {
        Some(dir) => CmSolver::<f64, D, _>::resume(cfg.cm_config(), field, read_checkpoint(dir)?)?,
        None => CmSolver::<f64, D, _>::new(cfg.cm_config(), field)?,
    };
    let t_start = solver.state.t;
    let nf_start = solver.state.nf();
    let (steps_start, remaps_start) = (solver.state.step_count, solver.state.remap_count);
    let mut snaps = Vec::new();
    let mut measure_time = 0.0;
    let value = |s: &CmSolver<f64, D, Box<dyn VelocityField<f64, D> + Send>>| {
        let sets = sets.clone();
        let state = s.state.clone();
        move |k: usize, x: &Point<f64, D>| sets[k].1.eval(&global_map_eval(&state, x, MapMode::Final))
    };
    if resume.is_none() && (cfg.t_end == 0.0 || cfg.snapshots.contains(&0.0)) {
        let m = Instant::now();
        snapshot::<D>(cfg, &sets, 0.0, &value(&solver), &mut snaps)?;
        measure_time += m.elapsed().as_secs_f64();
    }
    let every = cfg.checkpoint_every;
    let out = cfg.output.clone();
    for t in snapshot_times(cfg).into_iter().filter(|t| *t > t_start) {
        solver.run_until_with(t, |s| {
            if every > 0 && s.state.step_count % every == 0 {
                if let Some(dir) = &out {
                    write_checkpoint(&s.state, &dir.join(format!("checkpoint_{:06}", s.state.step_count)))?;
                }
            }
            Ok(())
        })?;
        let m = Instant::now();
        snapshot::<D>(cfg, &sets, t, &value(&solver), &mut snaps)?;
        measure_time += m.elapsed().as_secs_f64();
    }

    let times = solver.times;
    let nodes = GridGeometry::<f64, D>::unit(cfg.nc, cfg.boundary).node_count();
    let timing = TimingReport {
        footpoints: times.footpoints,
        interpolation: times.interpolation,
        particles: times.particles,
        remapping: times.remapping,
        total: start.elapsed().as_secs_f64() - measure_time,
        steps: solver.state.step_count - steps_start,
        remaps: solver.state.remap_count - remaps_start,
        nodes,
        ..TimingReport::default()
    }
    .finish();

    let tracer_return = if cfg.set == SetKind::Mosaic && D == 2 {
        let pts: Vec<Point<f64, D>> = mosaic_junctions().iter().map(|p| std::array::from_fn(|a| p[a])).collect();
        let paths = track_tracers(&pts, &solver.field, 0.0, cfg.t_end, cfg.resolved_dt());
        if let Some(dir) = &cfg.output {
            let rows: Vec<Vec<String>> = paths
                .iter()
                .enumerate()
                .flat_map(|(k, p)| {
                    let dt = cfg.t_end / (p.len().max(2) - 1) as f64;
                    p.iter().enumerate().map(move |(i, x)| {
                        vec![k.to_string(), format!("{}", i as f64 * dt), format!("{:e}", x[0]), format!("{:e}", x[1])]
                    })
                })
                .collect();
            write_csv(&dir.join("tracers.csv"), &["tracer", "t", "x", "y"], &rows)?;
        }
        paths
            .iter()
            .map(|p| {
                let (a, b) = (p[0], p[p.len() - 1]);
                (0..D).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
            })
            .reduce(f64::max)
    } else {
        None
    };

    if let Some(dir) = &cfg.output {
        let rows: Vec<Vec<String>> = solver
            .records
            .iter()
            .map(|r| {
                let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
                vec![
                    r.step.to_string(),
                    format!("{}", r.t),
                    format!("{:e}", r.m1),
                    u8::from(r.remapped).to_string(),
                    r.nf.to_string(),
                    opt(r.m2_temp),
                    opt(r.m2_refined),
                    opt(r.m2_coarse),
                    u8::from(r.saturated).to_string(),
                ]
            })
            .collect();
        let header = ["step", "t", "m1", "remapped", "nf", "m2_temp", "m2_refined", "m2_coarse", "saturated"];
        write_csv(&dir.join("steps.csv"), &header, &rows)?;
        write_checkpoint(&solver.state, &dir.join("checkpoint_final"))?;
        if !solver.state.warnings.is_empty() {
            fs::write(dir.join("warnings.txt"), solver.state.warnings.join("\n") + "\n")?;
        }
    }

    let mut nf_trace = vec![(t_start, nf_start)];
    nf_trace.extend(solver.records.iter().map(|r| (r.t, r.nf)));
    Ok(RunSummary {
        t_end: cfg.t_end,
        snapshots: snaps,
        timing,
        nf_trace,
        trigger_violations: trigger_violations(&solver.records, cfg.e1),
        tracer_return,
        warnings: solver.state.warnings.clone(),
    })
}

fn run_gals<const D: usize>(cfg: &RunConfig, field: Box<dyn VelocityField<f64, D> + Send>) -> Result<RunSummary> {
    let start = Instant::now();
    let sets = cfg.set.functions(1.5 / cfg.resolution as f64);
    let geometry = GridGeometry::<f64, D>::unit(cfg.ng, cfg.boundary);
    let mut fields: Vec<HermiteField<f64, D>> = sets
        .iter()
        .map(|(_, s)| HermiteField::from_fn(geometry.clone(), 1, |x, out| out[0] = s.eval(x)))
        .collect();
    let gals = cfg.gals_config();
    let mut snaps = Vec::new();
    let mut measure_time = 0.0;
    let mut stats = StepStats::default();
    let value = |fields: &[HermiteField<f64, D>]| {
        let fields = fields.to_vec();
        move |k: usize, x: &Point<f64, D>| {
            let mut v = [0.0];
            fields[k].eval_into(x, &mut v).map(|_| v[0]).unwrap_or(f64::NAN)
        }
    };
    if cfg.t_end == 0.0 || cfg.snapshots.contains(&0.0) {
        let m = Instant::now();
        snapshot::<D>(cfg, &sets, 0.0, &value(&fields), &mut snaps)?;
        measure_time += m.elapsed().as_secs_f64();
    }
    let mut t0 = 0.0;
    for t in snapshot_times(cfg).into_iter().filter(|t| *t > 0.0) {
        for f in fields.iter_mut() {
            let (next, s) = gals_advect_scalar_run(f, &field, t0, t, &gals)?;
            stats.accumulate(&s);
            *f = next;
        }
        t0 = t;
        let m = Instant::now();
        snapshot::<D>(cfg, &sets, t, &value(&fields), &mut snaps)?;
        measure_time += m.elapsed().as_secs_f64();
    }
    let timing = TimingReport {
        footpoints: stats.footpoint_seconds,
        interpolation: stats.interpolation_seconds,
        total: start.elapsed().as_secs_f64() - measure_time,
        steps: stats.steps / sets.len().max(1),
        nodes: geometry.node_count(),
        ..TimingReport::default()
    }
    .finish();
    Ok(RunSummary { t_end: cfg.t_end, snapshots: snaps, timing, ..RunSummary::default() })
}

/// One row of an E1 sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub e1: f64,
    pub nf: usize,
    pub result: std::result::Result<(f64, Option<f64>, TimingReport), String>,
}

impl SweepRow {
    pub fn l2(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.0)
    }

    pub fn time(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.2.total)
    }

    pub fn m(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.2.m)
    }
}

/// One CM run per `(e1, nf)` pair with a fixed fine grid and `dt = 1 / nf`.
/// Failures are recorded in the row and the sweep continues.
pub fn sweep_e1(cfg: &RunConfig, e1_values: &[f64], nf_values: &[usize]) -> Result<Vec<SweepRow>> {
    if e1_values.is_empty() || nf_values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one e1 and one nf".into()));
    }
    let mut rows = Vec::new();
    for &nf in nf_values {
        for &e1 in e1_values {
            let mut c = cfg.clone();
            c.method = Method::Cm;
            c.e1 = e1;
            (c.nf_init, c.nf_min, c.nf_max) = (nf, nf, nf);
            c.dynamic_grid = false;
            c.dt = Some(1.0 / nf as f64);
            c.snapshots = Vec::new();
            c.output = None;
            let result = run_scenario(&c)
                .map(|s| {
                    let m = s.final_metrics().copied().unwrap_or(SetMetrics {
                        l2: f64::NAN,
                        hausdorff: None,
                        measure_reference: f64::NAN,
                        measure_computed: f64::NAN,
                        measure_rel_error: f64::NAN,
                    });
                    (m.l2, m.hausdorff, s.timing)
                })
                .map_err(|e| e.to_string());
            rows.push(SweepRow { e1, nf, result });
        }
    }
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.to_text())?;
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut row = vec![format!("{:e}", r.e1), r.nf.to_string()];
                match &r.result {
                    Ok((l2, h, t)) => row.extend([
                        format!("{l2:e}"),
                        h.map(|h| format!("{h:e}")).unwrap_or_default(),
                        format!("{:e}", t.total),
                        format!("{}", t.m),
                        t.remaps.to_string(),
                        String::new(),
                    ]),
                    Err(e) => row.extend([String::new(), String::new(), String::new(), String::new(), String::new(), e.clone()]),
                }
                row
            })
            .collect();
        write_csv(&dir.join("sweep_e1.csv"), &["e1", "nf", "l2", "hausdorff", "time_s", "m", "remaps", "error"], &table)?;
    }
    Ok(rows)
}

/// Cheapest run per E1 whose error is at most `target`; `None` where no run reaches it.
pub fn time_to_error(rows: &[SweepRow], e1_values: &[f64], target: f64) -> Vec<Option<f64>> {
    e1_values
        .iter()
        .map(|&e1| {
            rows.iter()
                .filter(|r| r.e1 == e1 && r.l2().is_some_and(|l| l <= target))
                .filter_map(SweepRow::time)
                .reduce(f64::min)
        })
        .collect()
}

/// One row of a scaling study.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    pub method: Method,
    pub time: f64,
    pub l2: f64,
    pub timing: TimingReport,
}

/// CM with a fixed fine grid of each size against GALS on the same size.
/// CM keeps the configured time step, GALS uses `dt = 1 / n`.
pub fn scaling_study(cfg: &RunConfig, sizes: &[usize], methods: &[Method]) -> Result<Vec<ScalingRow>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes.is_empty() {
        return Err(Error::InvalidConfig("sizes must be ascending and non-empty".into()));
    }
    let mut rows = Vec::new();
    for &n in sizes {
        for &method in methods {
            let mut c = cfg.clone();
            c.method = method;
            c.snapshots = Vec::new();
            c.output = None;
            match method {
                Method::Cm => {
                    (c.nf_init, c.nf_min, c.nf_max) = (n, n, n);
                    c.dynamic_grid = false;
                    c.dt = Some(cfg.resolved_dt());
                }
                Method::Gals => {
                    c.ng = n;
                    c.dt = Some(1.0 / n as f64);
                }
            }
            let s = run_scenario(&c)?;
            let l2 = s.final_metrics().map_or(f64::NAN, |m| m.l2);
            rows.push(ScalingRow { n, method, time: s.timing.total, l2, timing: s.timing });
        }
    }
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.to_text())?;
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.method.as_str().into(),
                    format!("{:e}", r.time),
                    format!("{:e}", r.l2),
                    r.timing.steps.to_string(),
                    r.timing.remaps.to_string(),
                ]
            })
            .collect();
        write_csv(&dir.join("scaling.csv"), &["n", "method", "time_s", "l2", "steps", "remaps"], &table)?;
    }
    Ok(rows)
}

fn header_dims(text: &str, sep: char) -> Option<usize> {
    text.lines().find_map(|l| {
        let (k, v) = l.split_once(sep)?;
        (k.trim() == "dims").then(|| v.trim().parse().ok()).flatten()
    })
}

/// Spatial dimension recorded in a checkpoint manifest.
pub fn checkpoint_dims(dir: &Path) -> Result<usize> {
    let text = fs::read_to_string(dir.join("manifest.txt"))?;
    header_dims(&text, '=').ok_or_else(|| Error::parse(0, "manifest has no dims entry"))
}

/// Spatial dimension recorded in a map dump header.
pub fn dump_dims(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path)?;
    let head: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
    header_dims(&head.replace(' ', "="), '=').ok_or_else(|| Error::parse(2, "dump has no dims line"))
}

fn open_buf(path: &Path) -> Result<std::io::BufReader<fs::File>> {
    Ok(std::io::BufReader::new(fs::File::open(path)?))
}

/// Writes contours (and 2D rasters) of each named set advected by the
/// checkpointed map into `out_dir`. Returns the files written.
pub fn contour_checkpoint(dir: &Path, set: SetKind, resolution: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    match checkpoint_dims(dir)? {
        2 => {
            let state = read_checkpoint::<f64, 2>(dir)?;
            contour_files::<2>(&|x| global_map_eval(&state, x, MapMode::Final), state.t, set, resolution, out_dir)
        }
        3 => {
            let state = read_checkpoint::<f64, 3>(dir)?;
            contour_files::<3>(&|x| global_map_eval(&state, x, MapMode::Final), state.t, set, resolution, out_dir)
        }
        d => Err(Error::InvalidConfig(format!("unsupported dimension {d}"))),
    }
}

fn contour_files<const D: usize>(
    pullback: &dyn Fn(&Point<f64, D>) -> Point<f64, D>,
    t: f64,
    set: SetKind,
    resolution: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if (D == 3) != (set == SetKind::Sphere) {
        return Err(Error::InvalidConfig(format!("set `{}` does not match a {D}D map", set.as_str())));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, f) in set.functions(1.5 / resolution as f64) {
        let values = sample_grid::<f64, D, _>(|x| f.eval(&pullback(x)), resolution);
        let stem = format!("{name}_t{}", fmt_time(t));
        if D == 2 {
            let p = out_dir.join(format!("{stem}.pgm"));
            write_pgm(BufWriter::new(fs::File::create(&p)?), &values, resolution, resolution)?;
            written.push(p);
        }
        if f.is_level_set() {
            let c = if D == 2 { contour_from_samples(&values, 0.0, resolution) } else { surface_from_samples(&values, 0.0, resolution) };
            let p = out_dir.join(format!("{stem}.txt"));
            write_polylines(BufWriter::new(fs::File::create(&p)?), &c)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Composes the checkpointed global map into one map on the fine grid and
/// writes it in the map dump format.
pub fn dump_global_map(dir: &Path, out: &Path) -> Result<()> {
    fn go<const D: usize>(dir: &Path, out: &Path) -> Result<()> {
        let state = read_checkpoint::<f64, D>(dir)?;
        let global = compose_into_fine(&state.chi0, &state.chi, state.chi0.geometry())?;
        global.displacement().write_dump(BufWriter::new(fs::File::create(out)?))
    }
    match checkpoint_dims(dir)? {
        2 => go::<2>(dir, out),
        3 => go::<3>(dir, out),
        d => Err(Error::InvalidConfig(format!("unsupported dimension {d}"))),
    }
}

/// Summary of a loaded map dump.
#[derive(Clone, Debug, PartialEq)]
pub struct MapInfo {
    pub dims: usize,
    pub cells: usize,
    pub boundary: Boundary,
    /// Largest displacement over the grid nodes.
    pub max_displacement: f64,
}

/// Reads a map dump and, when `set` is given, writes contours of that set
/// pulled back through the map into `out_dir`.
pub fn load_map(path: &Path, contour: Option<(SetKind, usize, &Path)>) -> Result<(MapInfo, Vec<PathBuf>)> {
    fn go<const D: usize>(path: &Path, contour: Option<(SetKind, usize, &Path)>) -> Result<(MapInfo, Vec<PathBuf>)> {
        let map = MapField::<f64, D>::from_displacement(HermiteField::read_dump(open_buf(path)?)?)?;
        let g = map.geometry();
        let nodes = g.node_count();
        let max_displacement = (0..nodes)
            .map(|n| {
                let b = map.displacement().node_block(n);
                let stride = b.len() / D;
                (0..D).map(|i| b[i * stride].powi(2)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max);
        let info = MapInfo { dims: D, cells: g.cells(), boundary: g.boundary(), max_displacement };
        let files = match contour {
            Some((set, r, out)) => contour_files::<D>(&|x| map.eval(x), 0.0, set, r, out)?,
            None => Vec::new(),
        };
        Ok((info, files))
    }
    match dump_dims(path)? {
        2 => go::<2>(path, contour),
        3 => go::<3>(path, contour),
        d => Err(Error::InvalidConfig(format!("unsupported dimension {d}"))),
    }
}
