//! Gradient-augmented semi-Lagrangian advection of Hermite node data.
//!
//! Every node carries its full jet, so the update needs the jet of the
//! footpoint map `X` as well as its value. Around each node `x` the cluster
//! `x + ε s`, `s ∈ {±1}^D`, is traced back one step and the footpoint
//! displacements `δ = X − id` are differenced:
//!
//! ```text
//! ∂^m δ(x) ≈ Σ_s (Π_{a∈m} s_a) δ(x + ε s) / (2^D ε^|m|)
//! ```
//!
//! The node value comes from a separate trace of `x`, and the new jet is the
//! chain rule through the exact derivatives of the old interpolant at `X(x)`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::flow::{backward_rk3_displacement, step_count, VelocityField};
use crate::hermite::{derivative_slots, Boundary, GridGeometry, HermiteField};
use crate::jet::ChainRule;
use crate::map::MapField;
use crate::scalar::{is_finite_point, Point, Scalar};

/// Step parameters for GALS advection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GalsConfig<T> {
    /// Cluster offset as a fraction of the cell width.
    pub epsilon_rel: T,
    /// Time step; `None` means `cfl * dx`.
    pub dt: Option<T>,
    pub cfl: T,
}

impl<T: Scalar> Default for GalsConfig<T> {
    fn default() -> Self {
        Self { epsilon_rel: T::lit(T::DEFAULT_EPSILON_REL), dt: None, cfl: T::one() }
    }
}

impl<T: Scalar> GalsConfig<T> {
    pub fn with_dt(dt: T) -> Self {
        Self { dt: Some(dt), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_rel > T::zero() && self.epsilon_rel < T::lit(0.5)) {
            return Err(Error::InvalidConfig(format!("epsilon_rel {} outside (0, 0.5)", self.epsilon_rel)));
        }
        match self.dt {
            Some(dt) if !(dt > T::zero()) => Err(Error::InvalidConfig("dt must be positive".into())),
            None if !(self.cfl > T::zero()) => Err(Error::InvalidConfig("cfl must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn resolve_dt(&self, dx: T) -> T {
        self.dt.unwrap_or(self.cfl * dx)
    }
}

/// Bookkeeping of one or more GALS steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Footpoints that left a clamped box (beyond the cluster offset).
    pub clamped_footpoints: usize,
    pub footpoint_seconds: f64,
    pub interpolation_seconds: f64,
    pub steps: usize,
    pub nodes: usize,
}

impl StepStats {
    pub fn accumulate(&mut self, other: &StepStats) {
        self.clamped_footpoints += other.clamped_footpoints;
        self.footpoint_seconds += other.footpoint_seconds;
        self.interpolation_seconds += other.interpolation_seconds;
        self.steps += other.steps;
        self.nodes = other.nodes;
    }
}

#[inline(always)]
fn bit(v: usize, a: usize) -> usize {
    (v >> a) & 1
}

/// Cluster offset pattern: bit `a` of `s` set means `+ε` along axis `a`.
#[inline(always)]
fn offset_point<T: Scalar, const D: usize>(x: &Point<T, D>, s: usize, eps: T) -> Point<T, D> {
    std::array::from_fn(|a| if bit(s, a) == 1 { x[a] + eps } else { x[a] - eps })
}

/// Differencing weight of cluster member `s` for derivative mask `mask`.
#[inline(always)]
fn cluster_sign<T: Scalar>(s: usize, mask: usize) -> T {
    // the sign is negative for an odd number of `−ε` entries on the masked axes
    if (!s & mask).count_ones() % 2 == 1 {
        -T::one()
    } else {
        T::one()
    }
}

fn outside_box<T: Scalar, const D: usize>(g: &GridGeometry<T, D>, y: &Point<T, D>, slack: T) -> bool {
    if g.boundary() == Boundary::Periodic {
        return false;
    }
    let hi = g.side();
    (0..D).any(|a| {
        let r = y[a] - g.origin()[a];
        r < -slack || r > hi + slack
    })
}

/// Core update shared by scalar fields and map displacements. With
/// `displacement` set, component `c` gains `X_c(p) − p_c` so that a field
/// holding `χ(x) − x` advects as the map `χ`.
fn step_core<T, const D: usize, V>(
    field: &HermiteField<T, D>,
    vfield: &V,
    t: T,
    dt: T,
    eps: T,
    displacement: bool,
) -> Result<(HermiteField<T, D>, StepStats)>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    if !(dt > T::zero()) {
        return Err(Error::InvalidConfig("dt must be positive".into()));
    }
    let geometry = field.geometry();
    let nodes = geometry.node_count();
    let nc = 1usize << D;
    let comps = field.components();
    if displacement && comps != D {
        return Err(Error::GeometryMismatch("map displacement needs D components".into()));
    }
    let mut stats = StepStats { steps: 1, nodes, ..StepStats::default() };

    // phase 1: footpoint displacement jets, `jets[node][i * nc + m] = ∂_m δ_i`
    let start = Instant::now();
    let jet_len = D * nc;
    let mut jets = vec![T::zero(); nodes * jet_len];
    let mut cluster = vec![[T::zero(); D]; nc];
    let denom_base = T::from_usize_lossy(nc);
    let slack = eps + eps;
    for node in 0..nodes {
        let x = geometry.node_position(node);
        let centre = backward_rk3_displacement(vfield, &x, t, dt);
        for (s, d) in cluster.iter_mut().enumerate() {
            *d = backward_rk3_displacement(vfield, &offset_point(&x, s, eps), t, dt);
        }
        let jet = &mut jets[node * jet_len..(node + 1) * jet_len];
        for i in 0..D {
            jet[i * nc] = centre[i];
            for m in 1..nc {
                let mut acc = T::zero();
                for (s, d) in cluster.iter().enumerate() {
                    acc = acc + cluster_sign::<T>(s, m) * d[i];
                }
                jet[i * nc + m] = acc / (denom_base * eps.powi(m.count_ones() as i32));
            }
        }
        if !is_finite_point(&centre) || jet.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: None });
        }
        let y: Point<T, D> = std::array::from_fn(|i| x[i] + centre[i]);
        if outside_box(geometry, &y, slack) {
            stats.clamped_footpoints += 1;
        }
    }
    stats.footpoint_seconds = start.elapsed().as_secs_f64();

    // phase 2: chain rule through the old interpolant at the footpoints
    let start = Instant::now();
    let chain = ChainRule::<D>::new();
    let mut out = HermiteField::zeros(geometry.clone(), comps);
    let mut derivs = vec![T::zero(); comps * derivative_slots(D)];
    let mut x_jet = vec![T::zero(); jet_len];
    for node in 0..nodes {
        let x = geometry.node_position(node);
        let jet = &jets[node * jet_len..(node + 1) * jet_len];
        x_jet.copy_from_slice(jet);
        for i in 0..D {
            x_jet[i * nc] = x[i] + jet[i * nc];
            x_jet[i * nc + (1 << i)] = x_jet[i * nc + (1 << i)] + T::one();
        }
        let y: Point<T, D> = std::array::from_fn(|i| x_jet[i * nc]);
        field.eval_derivatives_unchecked(&y, D, &mut derivs);
        let block = out.node_block_mut(node);
        chain.compose(&x_jet, &derivs, comps, block);
        if displacement {
            for (b, d) in block.iter_mut().zip(jet) {
                *b = *b + *d;
            }
        }
    }
    stats.interpolation_seconds = start.elapsed().as_secs_f64();
    if !out.is_finite() {
        return Err(Error::NonFinite { step: None });
    }
    Ok((out, stats))
}

/// One GALS step of a field from `t` to `t + dt`.
pub fn gals_step<T, const D: usize, V>(
    field: &HermiteField<T, D>,
    vfield: &V,
    t: T,
    dt: T,
    cfg: &GalsConfig<T>,
) -> Result<HermiteField<T, D>>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    gals_step_with_stats(field, vfield, t, dt, cfg).map(|(f, _)| f)
}

pub fn gals_step_with_stats<T, const D: usize, V>(
    field: &HermiteField<T, D>,
    vfield: &V,
    t: T,
    dt: T,
    cfg: &GalsConfig<T>,
) -> Result<(HermiteField<T, D>, StepStats)>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    cfg.validate()?;
    let eps = cfg.epsilon_rel * field.geometry().dx();
    step_core(field, vfield, t, dt, eps, false)
}

/// One GALS step of a flow map; all components share one trace cluster per node.
pub fn advect_map<T, const D: usize, V>(
    map: &MapField<T, D>,
    vfield: &V,
    t: T,
    dt: T,
    cfg: &GalsConfig<T>,
) -> Result<MapField<T, D>>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    advect_map_with_stats(map, vfield, t, dt, cfg).map(|(m, _)| m)
}

pub fn advect_map_with_stats<T, const D: usize, V>(
    map: &MapField<T, D>,
    vfield: &V,
    t: T,
    dt: T,
    cfg: &GalsConfig<T>,
) -> Result<(MapField<T, D>, StepStats)>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    cfg.validate()?;
    let eps = cfg.epsilon_rel * map.geometry().dx();
    let (disp, stats) = step_core(map.displacement(), vfield, t, dt, eps, true)?;
    Ok((MapField::from_displacement(disp)?, stats))
}

/// Plain GALS advection of a field over `[t0, t1]` with uniform steps no
/// longer than the configured `dt`.
pub fn gals_advect_scalar_run<T, const D: usize, V>(
    field: &HermiteField<T, D>,
    vfield: &V,
    t0: T,
    t1: T,
    cfg: &GalsConfig<T>,
) -> Result<(HermiteField<T, D>, StepStats)>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    cfg.validate()?;
    let dt = cfg.resolve_dt(field.geometry().dx());
    let steps = step_count(t0, t1, dt);
    let mut stats = StepStats { nodes: field.geometry().node_count(), ..StepStats::default() };
    let mut current = field.clone();
    if steps == 0 {
        return Ok((current, stats));
    }
    let h = (t1 - t0) / T::from_usize_lossy(steps);
    let eps = cfg.epsilon_rel * field.geometry().dx();
    for k in 0..steps {
        let t = t0 + T::from_usize_lossy(k) * h;
        let (next, s) = step_core(&current, vfield, t, h, eps, false).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite { step: Some(k as u64 + 1) },
            other => other,
        })?;
        stats.accumulate(&s);
        current = next;
    }
    Ok((current, stats))
}
