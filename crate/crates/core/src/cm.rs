//! Two-grid characteristic mapping: a coarse working map advected by GALS,
//! composed into a fine global map whenever particle tracers show that the
//! working map has drifted too far from the exact flow.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::flow::{ParticleSet, VelocityField};
use crate::gals::{advect_map_with_stats, GalsConfig};
use crate::hermite::{derivative_slots, Boundary, GridGeometry, HermiteField};
use crate::jet::ChainRule;
use crate::map::MapField;
use crate::scalar::{distance, is_finite_point, Point, Scalar};

/// Parameters of a characteristic-mapping run on the unit cube.
#[derive(Clone, Debug, PartialEq)]
pub struct CmConfig<T> {
    /// Cells per axis of the working-map grid.
    pub nc: usize,
    pub nf_init: usize,
    pub nf_min: usize,
    pub nf_max: usize,
    /// Remap tolerance on the particle discrepancy.
    pub e1: T,
    /// Resize tolerance on the composed-map representation error.
    pub e2: T,
    /// Particles per coarse cell; must be a perfect `D`-th power.
    pub gamma: usize,
    pub dt: T,
    pub boundary: Boundary,
    pub dynamic_grid: bool,
    /// Cluster offset of the GALS step, relative to the coarse cell width.
    pub epsilon_rel: T,
    /// Keep every working map at its remap for later inspection.
    pub keep_ledger: bool,
}

impl<T: Scalar> CmConfig<T> {
    /// Fixed fine grid of `nf` cells.
    pub fn fixed(nc: usize, nf: usize, e1: T, dt: T, boundary: Boundary) -> Self {
        Self {
            nc,
            nf_init: nf,
            nf_min: nf,
            nf_max: nf,
            e1,
            e2: T::infinity(),
            gamma: 0,
            dt,
            boundary,
            dynamic_grid: false,
            epsilon_rel: T::lit(T::DEFAULT_EPSILON_REL),
            keep_ledger: false,
        }
    }

    /// Particles per coarse cell, defaulting to two per axis.
    pub fn gamma_for<const D: usize>(&self) -> usize {
        if self.gamma == 0 {
            1 << D
        } else {
            self.gamma
        }
    }

    pub fn particles_per_axis<const D: usize>(&self) -> Result<usize> {
        let gamma = self.gamma_for::<D>();
        let root = (gamma as f64).powf(1.0 / D as f64).round() as usize;
        if root.max(1).pow(D as u32) != gamma {
            return Err(Error::InvalidConfig(format!("gamma {gamma} is not a perfect power of {D}")));
        }
        Ok(root)
    }

    pub fn validate<const D: usize>(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.nc == 0 {
            return bad("nc must be positive".into());
        }
        if !(self.e1 > T::zero()) {
            return bad(format!("e1 must be positive, got {}", self.e1));
        }
        if !(self.e2 > T::zero()) {
            return bad(format!("e2 must be positive, got {}", self.e2));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return bad("dt must be positive".into());
        }
        if !(self.nf_min >= 1 && self.nf_min <= self.nf_init && self.nf_init <= self.nf_max) {
            return bad(format!(
                "need nf_min <= nf_init <= nf_max, got {} {} {}",
                self.nf_min, self.nf_init, self.nf_max
            ));
        }
        for (name, n) in [("nf_init", self.nf_init), ("nf_max", self.nf_max)] {
            if n % self.nf_min != 0 || !(n / self.nf_min).is_power_of_two() {
                return bad(format!("{name} {n} is not nf_min {} times a power of two", self.nf_min));
            }
        }
        self.particles_per_axis::<D>()?;
        GalsConfig { epsilon_rel: self.epsilon_rel, dt: Some(self.dt), cfl: T::one() }.validate()
    }

    fn gals(&self) -> GalsConfig<T> {
        GalsConfig { epsilon_rel: self.epsilon_rel, dt: Some(self.dt), cfl: T::one() }
    }
}

/// Full state of a run; resumable from any point.
#[derive(Clone, Debug, PartialEq)]
pub struct MapState<T, const D: usize> {
    pub chi: MapField<T, D>,
    pub chi0: MapField<T, D>,
    pub particles: ParticleSet<T, D>,
    pub tau_history: Vec<T>,
    pub t: T,
    pub remap_count: usize,
    pub step_count: usize,
    pub warnings: Vec<String>,
    /// Working maps at each remap, oldest first, when the ledger is kept.
    pub ledger: Option<Vec<MapField<T, D>>>,
}

impl<T: Scalar, const D: usize> MapState<T, D> {
    pub fn new(cfg: &CmConfig<T>) -> Result<Self> {
        cfg.validate::<D>()?;
        let coarse = GridGeometry::unit(cfg.nc, cfg.boundary);
        let fine = GridGeometry::unit(cfg.nf_init, cfg.boundary);
        let per_axis = cfg.particles_per_axis::<D>()?;
        Ok(Self {
            chi: MapField::identity(coarse),
            chi0: MapField::identity(fine),
            particles: ParticleSet::seed_uniform(&[T::zero(); D], T::one(), cfg.nc, per_axis),
            tau_history: Vec::new(),
            t: T::zero(),
            remap_count: 0,
            step_count: 0,
            warnings: Vec::new(),
            ledger: cfg.keep_ledger.then(Vec::new),
        })
    }

    /// Current fine-grid resolution.
    pub fn nf(&self) -> usize {
        self.chi0.cells()
    }

    /// Average number of steps between remaps.
    pub fn steps_per_remap(&self) -> f64 {
        self.step_count as f64 / self.remap_count.max(1) as f64
    }

    /// Nested evaluation of the archived working maps, innermost last.
    pub fn ledger_composition(&self, x: &Point<T, D>) -> Option<Point<T, D>> {
        let ledger = self.ledger.as_ref()?;
        let mut y = self.chi.eval(x);
        for m in ledger.iter().rev() {
            y = m.eval(&y);
        }
        Some(y)
    }
}

/// Evaluation mode of [`global_map_eval`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapMode {
    /// `χ0(χ(x))`: back to the initial time.
    Final,
    /// `χ(x)`: back to the last remap.
    Intermediate,
}

pub fn global_map_eval<T: Scalar, const D: usize>(state: &MapState<T, D>, x: &Point<T, D>, mode: MapMode) -> Point<T, D> {
    let y = state.chi.eval(x);
    match mode {
        MapMode::Final => state.chi0.eval(&y),
        MapMode::Intermediate => y,
    }
}

/// Largest distance between a particle's origin and where the working map sends it.
pub fn m1<T: Scalar, const D: usize>(chi: &MapField<T, D>, particles: &ParticleSet<T, D>) -> Result<T> {
    if particles.is_empty() {
        return Err(Error::EmptyParticles);
    }
    let mut worst = T::zero();
    for (x, x0) in particles.current().iter().zip(particles.initial()) {
        let d = distance(&chi.eval(x), x0);
        if !d.is_finite() {
            return Ok(T::nan());
        }
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Node data of `x ↦ chi0(chi(x))` on `target`, with the full jet by the chain rule.
pub fn compose_into_fine<T: Scalar, const D: usize>(
    chi0: &MapField<T, D>,
    chi: &MapField<T, D>,
    target: &GridGeometry<T, D>,
) -> Result<MapField<T, D>> {
    if !chi0.geometry().same_box(target) || !chi.geometry().same_box(target) {
        return Err(Error::GeometryMismatch("composition needs maps over the same box".into()));
    }
    let nc = 1usize << D;
    let chain = ChainRule::<D>::new();
    let mut out = HermiteField::zeros(target.clone(), D);
    let mut inner = vec![T::zero(); D * nc];
    let mut x_jet = vec![T::zero(); D * nc];
    let mut derivs = vec![T::zero(); D * derivative_slots(D)];
    for node in 0..target.node_count() {
        let x = target.node_position(node);
        chi.displacement().eval_jet_unchecked(&x, &mut inner);
        x_jet.copy_from_slice(&inner);
        for i in 0..D {
            x_jet[i * nc] = x[i] + inner[i * nc];
            x_jet[i * nc + (1 << i)] = x_jet[i * nc + (1 << i)] + T::one();
        }
        let y: Point<T, D> = std::array::from_fn(|i| x_jet[i * nc]);
        chi0.displacement().eval_derivatives_unchecked(&y, D, &mut derivs);
        let block = out.node_block_mut(node);
        chain.compose(&x_jet, &derivs, D, block);
        for (b, d) in block.iter_mut().zip(&inner) {
            *b = *b + *d;
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite { step: None });
    }
    MapField::from_displacement(out)
}

/// Largest mismatch between `candidate` and the nested evaluation
/// `chi0(chi(x))`, sampled at the candidate's cell centres.
pub fn m2<T: Scalar, const D: usize>(candidate: &MapField<T, D>, chi0: &MapField<T, D>, chi: &MapField<T, D>) -> T {
    let mut worst = T::zero();
    for x in candidate.geometry().cell_centers() {
        let d = distance(&candidate.eval(&x), &chi0.eval(&chi.eval(&x)));
        if !d.is_finite() {
            return T::nan();
        }
        worst = worst.max(d);
    }
    worst
}

/// Accumulated wall time per phase, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimes {
    pub footpoints: f64,
    pub interpolation: f64,
    pub particles: f64,
    pub remapping: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.footpoints + self.interpolation + self.particles + self.remapping
    }
}

/// What happened during one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    pub step: usize,
    pub t: T,
    /// Particle discrepancy after the advection, before any remap.
    pub m1: T,
    pub remapped: bool,
    /// Fine resolution after the step.
    pub nf: usize,
    pub m2_temp: Option<T>,
    pub m2_refined: Option<T>,
    pub m2_coarse: Option<T>,
    pub saturated: bool,
}

/// Outcome of one remap.
#[derive(Clone, Debug, PartialEq)]
pub struct RemapOutcome<T> {
    pub nf: usize,
    pub m2_temp: Option<T>,
    pub m2_refined: Option<T>,
    pub m2_coarse: Option<T>,
    pub saturated: bool,
}

/// Composes the working map into the global map, resizes the fine grid when
/// allowed, and restarts the working map and particles.
pub fn remap<T: Scalar, const D: usize>(state: &mut MapState<T, D>, cfg: &CmConfig<T>) -> Result<RemapOutcome<T>> {
    let nf = state.nf();
    let geometry = state.chi0.geometry().clone();
    let temp = compose_into_fine(&state.chi0, &state.chi, &geometry)?;
    let mut outcome = RemapOutcome { nf, m2_temp: None, m2_refined: None, m2_coarse: None, saturated: false };
    let adopted = if cfg.dynamic_grid {
        let m2_temp = m2(&temp, &state.chi0, &state.chi);
        outcome.m2_temp = Some(m2_temp);
        if m2_temp > cfg.e2 {
            if nf < cfg.nf_max {
                let finer = compose_into_fine(&state.chi0, &state.chi, &geometry.with_cells((2 * nf).min(cfg.nf_max)))?;
                outcome.m2_refined = Some(m2(&finer, &state.chi0, &state.chi));
                finer
            } else {
                outcome.saturated = true;
                state.warnings.push(format!(
                    "t={}: fine grid saturated at {nf}, m2 {m2_temp:e} above e2 {:e}",
                    state.t, cfg.e2
                ));
                temp
            }
        } else if nf / 2 >= cfg.nf_min && nf.is_multiple_of(2) {
            let coarse = compose_into_fine(&state.chi0, &state.chi, &geometry.with_cells(nf / 2))?;
            let m2_coarse = m2(&coarse, &state.chi0, &state.chi);
            outcome.m2_coarse = Some(m2_coarse);
            if m2_coarse < cfg.e2 {
                coarse
            } else {
                temp
            }
        } else {
            temp
        }
    } else {
        temp
    };
    outcome.nf = adopted.cells();
    if let Some(ledger) = state.ledger.as_mut() {
        ledger.push(state.chi.clone());
    }
    state.chi0 = adopted;
    state.chi = MapField::identity(state.chi.geometry().clone());
    state.particles.reset();
    state.tau_history.push(state.t);
    state.remap_count += 1;
    Ok(outcome)
}

/// Stepper that owns a run: configuration, velocity, state and records.
pub struct CmSolver<T, const D: usize, V> {
    pub cfg: CmConfig<T>,
    pub field: V,
    pub state: MapState<T, D>,
    pub times: PhaseTimes,
    pub records: Vec<StepRecord<T>>,
}

impl<T: Scalar, const D: usize, V: VelocityField<T, D>> CmSolver<T, D, V> {
    pub fn new(cfg: CmConfig<T>, field: V) -> Result<Self> {
        let state = MapState::new(&cfg)?;
        Ok(Self { cfg, field, state, times: PhaseTimes::default(), records: Vec::new() })
    }

    /// Continues from an existing state, e.g. a loaded checkpoint.
    pub fn resume(cfg: CmConfig<T>, field: V, state: MapState<T, D>) -> Result<Self> {
        cfg.validate::<D>()?;
        if state.chi.cells() != cfg.nc || state.particles.is_empty() {
            return Err(Error::InvalidConfig("state does not match the configuration".into()));
        }
        Ok(Self { cfg, field, state, times: PhaseTimes::default(), records: Vec::new() })
    }

    /// One step of length `dt`, followed by a remap when the working map has drifted.
    pub fn step(&mut self, dt: T) -> Result<&StepRecord<T>> {
        let index = self.state.step_count + 1;
        let nan = |e: Error| match e {
            Error::NonFinite { .. } => Error::NonFinite { step: Some(index as u64) },
            other => other,
        };
        let t = self.state.t;
        let mut gals = self.cfg.gals();
        gals.dt = Some(dt);
        let (chi, stats) = advect_map_with_stats(&self.state.chi, &self.field, t, dt, &gals).map_err(nan)?;
        self.times.footpoints += stats.footpoint_seconds;
        self.times.interpolation += stats.interpolation_seconds;
        self.state.chi = chi;

        let start = Instant::now();
        self.state.particles.advance(&self.field, t, dt);
        if !self.state.particles.current().iter().all(is_finite_point) {
            return Err(Error::NonFinite { step: Some(index as u64) });
        }
        let m1 = m1(&self.state.chi, &self.state.particles)?;
        self.times.particles += start.elapsed().as_secs_f64();
        if !m1.is_finite() {
            return Err(Error::NonFinite { step: Some(index as u64) });
        }
        self.state.t = t + dt;
        self.state.step_count = index;

        let mut record = StepRecord {
            step: index,
            t: self.state.t,
            m1,
            remapped: false,
            nf: self.state.nf(),
            m2_temp: None,
            m2_refined: None,
            m2_coarse: None,
            saturated: false,
        };
        if m1 > self.cfg.e1 {
            let start = Instant::now();
            let outcome = remap(&mut self.state, &self.cfg).map_err(nan)?;
            self.times.remapping += start.elapsed().as_secs_f64();
            record.remapped = true;
            record.nf = outcome.nf;
            record.m2_temp = outcome.m2_temp;
            record.m2_refined = outcome.m2_refined;
            record.m2_coarse = outcome.m2_coarse;
            record.saturated = outcome.saturated;
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    fn next_dt(&self, t_end: T) -> T {
        let rest = t_end - self.state.t;
        // a remainder within roundoff of `dt` is a full step
        if rest < self.cfg.dt * (T::one() - T::lit(1e-9)) {
            rest
        } else {
            self.cfg.dt
        }
    }

    /// Steps of the configured `dt` until `t_end`, shortening the last one if needed.
    pub fn run_until(&mut self, t_end: T) -> Result<()> {
        let tol = self.cfg.dt * T::lit(1e-9);
        while self.state.t < t_end - tol {
            let dt = self.next_dt(t_end);
            self.step(dt)?;
        }
        Ok(())
    }

    /// Like [`run_until`](Self::run_until), calling `hook` after every step.
    pub fn run_until_with<F>(&mut self, t_end: T, mut hook: F) -> Result<()>
    where
        F: FnMut(&Self) -> Result<()>,
    {
        let tol = self.cfg.dt * T::lit(1e-9);
        while self.state.t < t_end - tol {
            let dt = self.next_dt(t_end);
            self.step(dt)?;
            hook(self)?;
        }
        Ok(())
    }

    pub fn eval(&self, x: &Point<T, D>) -> Point<T, D> {
        global_map_eval(&self.state, x, MapMode::Final)
    }
}

/// Runs from the identity up to `t_end` and returns the final state.
pub fn cm_run<T, const D: usize, V>(cfg: &CmConfig<T>, field: V, t_end: T) -> Result<MapState<T, D>>
where
    T: Scalar,
    V: VelocityField<T, D>,
{
    let mut solver = CmSolver::new(cfg.clone(), field)?;
    solver.run_until(t_end)?;
    Ok(solver.state)
}

const CHI_FILE: &str = "chi.map";
const CHI0_FILE: &str = "chi0.map";
const PARTICLES_FILE: &str = "particles.txt";
const MANIFEST_FILE: &str = "manifest.txt";

/// Writes `chi.map`, `chi0.map`, `particles.txt` and `manifest.txt` into `dir`.
pub fn write_checkpoint<T: Scalar, const D: usize>(state: &MapState<T, D>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    state.chi.displacement().write_dump(BufWriter::new(fs::File::create(dir.join(CHI_FILE))?))?;
    state.chi0.displacement().write_dump(BufWriter::new(fs::File::create(dir.join(CHI0_FILE))?))?;
    let mut w = BufWriter::new(fs::File::create(dir.join(PARTICLES_FILE))?);
    for (x0, x) in state.particles.initial().iter().zip(state.particles.current()) {
        let cols: Vec<String> = x0.iter().chain(x.iter()).map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", cols.join(" "))?;
    }
    w.flush()?;
    let mut m = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
    writeln!(m, "dims={D}")?;
    writeln!(m, "t={:e}", state.t)?;
    writeln!(m, "step_count={}", state.step_count)?;
    writeln!(m, "remap_count={}", state.remap_count)?;
    writeln!(m, "nf={}", state.nf())?;
    let taus: Vec<String> = state.tau_history.iter().map(|v| format!("{v:e}")).collect();
    writeln!(m, "tau_history={}", taus.join(","))?;
    m.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`]. Warnings and the ledger are not stored.
pub fn read_checkpoint<T: Scalar, const D: usize>(dir: &Path) -> Result<MapState<T, D>> {
    let open = |name: &str| -> Result<BufReader<fs::File>> { Ok(BufReader::new(fs::File::open(dir.join(name))?)) };
    let chi = MapField::from_displacement(HermiteField::read_dump(open(CHI_FILE)?)?)?;
    let chi0 = MapField::from_displacement(HermiteField::read_dump(open(CHI0_FILE)?)?)?;

    let mut initial = Vec::new();
    let mut current = Vec::new();
    for (k, line) in open(PARTICLES_FILE)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|s| s.parse::<T>().map_err(|_| Error::parse(k + 1, format!("bad number `{s}`"))))
            .collect::<Result<Vec<T>>>()?;
        if vals.len() != 2 * D {
            return Err(Error::parse(k + 1, format!("expected {} columns", 2 * D)));
        }
        initial.push(std::array::from_fn(|a| vals[a]));
        current.push(std::array::from_fn(|a| vals[D + a]));
    }
    let particles = ParticleSet::with_current(initial, current).ok_or(Error::EmptyParticles)?;

    let mut state = MapState {
        chi,
        chi0,
        particles,
        tau_history: Vec::new(),
        t: T::zero(),
        remap_count: 0,
        step_count: 0,
        warnings: Vec::new(),
        ledger: None,
    };
    for (k, line) in open(MANIFEST_FILE)?.lines().enumerate() {
        let line = line?;
        let Some((key, value)) = line.split_once('=') else { continue };
        let num = |v: &str| v.trim().parse::<T>().map_err(|_| Error::parse(k + 1, format!("bad value for {key}")));
        let count = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::parse(k + 1, format!("bad value for {key}")));
        match key.trim() {
            "dims" if count(value)? != D => {
                return Err(Error::GeometryMismatch(format!("checkpoint is {}D, expected {D}D", value.trim())));
            }
            "t" => state.t = num(value)?,
            "step_count" => state.step_count = count(value)?,
            "remap_count" => state.remap_count = count(value)?,
            "tau_history" => {
                state.tau_history =
                    value.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<Vec<T>>>()?
            }
            _ => {}
        }
    }
    Ok(state)
}
