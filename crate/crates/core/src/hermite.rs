//! Tensor-product cubic Hermite interpolants on regular Cartesian grids.
//!
//! Every node stores, per component, the `2^D` coefficients of the jet
//! `∂^m f` for each subset `m` of the axes. Coefficients are indexed by a
//! bit mask over the axes (bit `a` set means one derivative along axis `a`),
//! so in 2D the block is `[f, f_x, f_y, f_xy]` and in 3D it is
//! `[f, f_x, f_y, f_xy, f_z, f_xz, f_yz, f_xyz]`. Derivatives are stored in
//! domain units; the basis is scaled by the cell width when evaluating.
//!
//! Node data for one node is one contiguous block of
//! `components * 2^D` scalars, component-major.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::{is_finite_point, Point, Scalar};

/// Finite-difference step used by [`HermiteField::from_fn`], relative to the cell width.
pub const FD_STEP_REL: f64 = 1e-4;

/// Boundary treatment of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// `N + 1` nodes per axis. Queries just outside the box are evaluated by
    /// extending the boundary cell's polynomial over a band one cell wide;
    /// anything farther is clamped onto that band.
    Clamped,
    /// `N` nodes per axis, node `N` is node `0`.
    Periodic,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Clamped => "clamped",
            Boundary::Periodic => "periodic",
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clamped" => Ok(Boundary::Clamped),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(Error::InvalidConfig(format!("unknown boundary `{other}`"))),
        }
    }
}

/// Regular grid over an axis-aligned cube `[origin, origin + side]^D`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGeometry<T, const D: usize> {
    cells: usize,
    origin: Point<T, D>,
    side: T,
    boundary: Boundary,
}

/// Cell lookup result: the two node indices per axis and the local coordinate.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CellLocation<T, const D: usize> {
    pub nodes: [[usize; 2]; D],
    pub local: [T; D],
}

impl<T: Scalar, const D: usize> GridGeometry<T, D> {
    /// Grid over the unit cube.
    pub fn unit(cells: usize, boundary: Boundary) -> Self {
        Self::new(cells, [T::zero(); D], T::one(), boundary).expect("valid unit grid")
    }

    pub fn new(cells: usize, origin: Point<T, D>, side: T, boundary: Boundary) -> Result<Self> {
        if !(1..=3).contains(&D) {
            return Err(Error::InvalidConfig(format!("unsupported dimension {D}")));
        }
        if cells == 0 {
            return Err(Error::InvalidConfig("grid needs at least one cell".into()));
        }
        if !(side > T::zero()) || !side.is_finite() || !is_finite_point(&origin) {
            return Err(Error::InvalidConfig("grid box must be finite with positive side".into()));
        }
        Ok(Self { cells, origin, side, boundary })
    }

    /// Same box and boundary with a different resolution.
    pub fn with_cells(&self, cells: usize) -> Self {
        Self { cells: cells.max(1), ..self.clone() }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn origin(&self) -> &Point<T, D> {
        &self.origin
    }

    pub fn side(&self) -> T {
        self.side
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Cell width, identical along every axis.
    pub fn dx(&self) -> T {
        self.side / T::from_usize_lossy(self.cells)
    }

    pub fn nodes_per_axis(&self) -> usize {
        match self.boundary {
            Boundary::Clamped => self.cells + 1,
            Boundary::Periodic => self.cells,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(D as u32)
    }

    pub fn same_box(&self, other: &Self) -> bool {
        self.origin == other.origin && self.side == other.side && self.boundary == other.boundary
    }

    /// Multi-index of a flat node index; axis 0 varies fastest.
    pub fn node_index(&self, mut flat: usize) -> [usize; D] {
        let n = self.nodes_per_axis();
        std::array::from_fn(|_| {
            let i = flat % n;
            flat /= n;
            i
        })
    }

    pub fn flat_index(&self, index: &[usize; D]) -> usize {
        let n = self.nodes_per_axis();
        index.iter().rev().fold(0, |acc, &i| acc * n + i)
    }

    pub fn node_position(&self, flat: usize) -> Point<T, D> {
        let idx = self.node_index(flat);
        let dx = self.dx();
        std::array::from_fn(|a| self.origin[a] + T::from_usize_lossy(idx[a]) * dx)
    }

    /// Centres of all `cells^D` cells.
    pub fn cell_centers(&self) -> impl Iterator<Item = Point<T, D>> + '_ {
        let n = self.cells;
        let dx = self.dx();
        let half = T::lit(0.5);
        (0..n.pow(D as u32)).map(move |mut flat| {
            std::array::from_fn(|a| {
                let i = flat % n;
                flat /= n;
                self.origin[a] + (T::from_usize_lossy(i) + half) * dx
            })
        })
    }

    /// Reduces a point into the box for periodic grids; identity otherwise.
    pub fn wrap(&self, x: &Point<T, D>) -> Point<T, D> {
        match self.boundary {
            Boundary::Clamped => *x,
            Boundary::Periodic => std::array::from_fn(|a| {
                self.origin[a] + wrap_offset(x[a] - self.origin[a], self.side)
            }),
        }
    }

    /// Cell and local coordinates of `x`. Grid coordinates within a few ulps
    /// of an integer are snapped so that node queries return node data exactly.
    #[inline]
    pub(crate) fn locate(&self, x: &Point<T, D>) -> CellLocation<T, D> {
        let n = self.cells;
        let dx = self.dx();
        let mut nodes = [[0usize; 2]; D];
        let mut local = [T::zero(); D];
        for a in 0..D {
            match self.boundary {
                Boundary::Clamped => {
                    let nf = T::from_usize_lossy(n);
                    let s = snap_to_node(((x[a] - self.origin[a]) / dx).max(-T::one()).min(nf + T::one()));
                    let i = s.floor().to_isize().unwrap_or(0).clamp(0, n as isize - 1) as usize;
                    nodes[a] = [i, i + 1];
                    local[a] = s - T::from_usize_lossy(i);
                }
                Boundary::Periodic => {
                    let s = snap_to_node(wrap_offset(x[a] - self.origin[a], self.side) / dx);
                    let i = (s.floor().to_usize().unwrap_or(0)).min(n - 1);
                    nodes[a] = [i, (i + 1) % n];
                    local[a] = s - T::from_usize_lossy(i);
                }
            }
        }
        CellLocation { nodes, local }
    }
}

#[inline]
fn wrap_offset<T: Scalar>(v: T, side: T) -> T {
    let mut r = v % side;
    if r < T::zero() {
        r = r + side;
    }
    if r >= side {
        r = T::zero();
    }
    r
}

/// Hermite basis on the unit interval, `[corner][derivative order]`, with the
/// derivative functions already multiplied by the cell width.
#[inline(always)]
fn basis<T: Scalar>(t: T, dx: T) -> [[T; 2]; 2] {
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let t2 = t * t;
    let t3 = t2 * t;
    [
        [two * t3 - three * t2 + T::one(), (t3 - two * t2 + t) * dx],
        [three * t2 - two * t3, (t3 - t2) * dx],
    ]
}

/// Derivative of [`basis`] with respect to the physical coordinate.
#[inline(always)]
fn basis_derivative<T: Scalar>(t: T, dx: T) -> [[T; 2]; 2] {
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let six = T::lit(6.0);
    let four = T::lit(4.0);
    let t2 = t * t;
    [
        [(six * t2 - six * t) / dx, three * t2 - four * t + T::one()],
        [(six * t - six * t2) / dx, three * t2 - two * t],
    ]
}

/// `order`-th derivative of [`basis`] with respect to the physical coordinate.
#[inline(always)]
fn basis_order<T: Scalar>(t: T, dx: T, order: usize) -> [[T; 2]; 2] {
    match order {
        0 => basis(t, dx),
        1 => basis_derivative(t, dx),
        2 => {
            let six = T::lit(6.0);
            let twelve = T::lit(12.0);
            let dx2 = dx * dx;
            [
                [(twelve * t - six) / dx2, (six * t - T::lit(4.0)) / dx],
                [(six - twelve * t) / dx2, (six * t - T::lit(2.0)) / dx],
            ]
        }
        3 => {
            let dx2 = dx * dx;
            let dx3 = dx2 * dx;
            [[T::lit(12.0) / dx3, T::lit(6.0) / dx2], [T::lit(-12.0) / dx3, T::lit(6.0) / dx2]]
        }
        _ => [[T::zero(); 2]; 2],
    }
}

/// Number of slots in a derivative table: multi-indices with every entry in `0..4`.
pub(crate) const fn derivative_slots(dims: usize) -> usize {
    1 << (2 * dims)
}

/// Slot of the multi-index `alpha` (derivative order per axis) in a derivative table.
#[inline(always)]
pub(crate) fn derivative_slot(alpha: &[usize]) -> usize {
    alpha.iter().rev().fold(0, |acc, &k| acc * 4 + k)
}

#[inline(always)]
fn bit(v: usize, a: usize) -> usize {
    (v >> a) & 1
}

/// Name of the coefficient with derivative mask `mask`, e.g. `f_xz`.
pub fn coefficient_name(mask: usize, dims: usize) -> String {
    const AXES: [char; 3] = ['x', 'y', 'z'];
    if mask == 0 {
        return "f".into();
    }
    let mut s = String::from("f_");
    for (a, c) in AXES.iter().enumerate().take(dims) {
        if bit(mask, a) == 1 {
            s.push(*c);
        }
    }
    s
}

/// Cubic Hermite interpolant with `components` outputs per point.
#[derive(Clone, Debug, PartialEq)]
pub struct HermiteField<T, const D: usize> {
    geometry: GridGeometry<T, D>,
    components: usize,
    data: Vec<T>,
}

impl<T: Scalar, const D: usize> HermiteField<T, D> {
    /// Coefficients per node and component.
    pub const COEFFS: usize = 1 << D;

    pub fn zeros(geometry: GridGeometry<T, D>, components: usize) -> Self {
        assert!(components > 0, "field needs at least one component");
        let len = geometry.node_count() * components * Self::COEFFS;
        Self { geometry, components, data: vec![T::zero(); len] }
    }

    /// Builds a field from raw node data laid out as documented at module level.
    pub fn from_raw(geometry: GridGeometry<T, D>, components: usize, data: Vec<T>) -> Result<Self> {
        let expected = geometry.node_count() * components * Self::COEFFS;
        if components == 0 || data.len() != expected {
            return Err(Error::GeometryMismatch(format!(
                "expected {expected} coefficients, got {}",
                data.len()
            )));
        }
        Ok(Self { geometry, components, data })
    }

    /// The map `x ↦ x`, represented exactly.
    pub fn identity(geometry: GridGeometry<T, D>) -> Self {
        let mut field = Self::zeros(geometry, D);
        for node in 0..field.geometry.node_count() {
            let p = field.geometry.node_position(node);
            let block = field.node_block_mut(node);
            for c in 0..D {
                block[c * Self::COEFFS] = p[c];
                block[c * Self::COEFFS + (1 << c)] = T::one();
            }
        }
        field
    }

    /// Samples `f` at every node; derivatives come from central differences
    /// with step `FD_STEP_REL * dx`.
    pub fn from_fn<F>(geometry: GridGeometry<T, D>, components: usize, f: F) -> Self
    where
        F: Fn(&Point<T, D>, &mut [T]),
    {
        let h = T::lit(FD_STEP_REL) * geometry.dx();
        let mut field = Self::zeros(geometry, components);
        let mut sample = vec![T::zero(); components];
        let mut acc = vec![T::zero(); components];
        for node in 0..field.geometry.node_count() {
            let x = field.geometry.node_position(node);
            for mask in 0..Self::COEFFS {
                acc.iter_mut().for_each(|v| *v = T::zero());
                let order = mask.count_ones();
                // Enumerate sign patterns over the differentiated axes only.
                for signs in 0..(1usize << order) {
                    let mut p = x;
                    let mut weight = T::one();
                    let mut k = 0;
                    for (a, pa) in p.iter_mut().enumerate() {
                        if bit(mask, a) == 1 {
                            if bit(signs, k) == 1 {
                                *pa = *pa + h;
                            } else {
                                *pa = *pa - h;
                                weight = -weight;
                            }
                            k += 1;
                        }
                    }
                    f(&p, &mut sample);
                    for (acc_c, s) in acc.iter_mut().zip(&sample) {
                        *acc_c = *acc_c + weight * *s;
                    }
                }
                let denom = (h + h).powi(order as i32);
                let block = field.node_block_mut(node);
                for c in 0..components {
                    block[c * Self::COEFFS + mask] = acc[c] / denom;
                }
            }
        }
        field
    }

    /// Samples an analytic jet: `f` writes `components * 2^D` coefficients
    /// in node-block layout.
    pub fn from_jet_fn<F>(geometry: GridGeometry<T, D>, components: usize, f: F) -> Self
    where
        F: Fn(&Point<T, D>, &mut [T]),
    {
        let mut field = Self::zeros(geometry, components);
        for node in 0..field.geometry.node_count() {
            let x = field.geometry.node_position(node);
            f(&x, field.node_block_mut(node));
        }
        field
    }

    pub fn geometry(&self) -> &GridGeometry<T, D> {
        &self.geometry
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    fn stride(&self) -> usize {
        self.components * Self::COEFFS
    }

    pub fn node_block(&self, node: usize) -> &[T] {
        let s = self.stride();
        &self.data[node * s..(node + 1) * s]
    }

    pub fn node_block_mut(&mut self, node: usize) -> &mut [T] {
        let s = self.stride();
        &mut self.data[node * s..(node + 1) * s]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_point(x: &Point<T, D>) -> Result<()> {
        if is_finite_point(x) {
            Ok(())
        } else {
            Err(Error::NonFinite { step: None })
        }
    }

    pub fn eval(&self, x: &Point<T, D>) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.components];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, x: &Point<T, D>, out: &mut [T]) -> Result<()> {
        Self::check_point(x)?;
        self.eval_unchecked(x, out);
        Ok(())
    }

    /// Value and gradient per component.
    pub fn eval_with_gradient(&self, x: &Point<T, D>) -> Result<(Vec<T>, Vec<[T; D]>)> {
        Self::check_point(x)?;
        let mut value = vec![T::zero(); self.components];
        let mut grad = vec![[T::zero(); D]; self.components];
        self.eval_gradient_unchecked(x, &mut value, &mut grad);
        Ok((value, grad))
    }

    /// All `2^D` mixed partials per component, in node-block layout.
    pub fn eval_jet(&self, x: &Point<T, D>, out: &mut [T]) -> Result<()> {
        Self::check_point(x)?;
        self.eval_jet_unchecked(x, out);
        Ok(())
    }

    #[inline]
    fn corner_nodes(&self, loc: &CellLocation<T, D>) -> [usize; 8] {
        let n = self.geometry.nodes_per_axis();
        let mut out = [0usize; 8];
        for (corner, slot) in out.iter_mut().enumerate().take(Self::COEFFS) {
            let mut flat = 0;
            for a in (0..D).rev() {
                flat = flat * n + loc.nodes[a][bit(corner, a)];
            }
            *slot = flat;
        }
        out
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &Point<T, D>, out: &mut [T]) {
        let loc = self.geometry.locate(x);
        let dx = self.geometry.dx();
        let b: [[[T; 2]; 2]; D] = std::array::from_fn(|a| basis(loc.local[a], dx));
        let corners = self.corner_nodes(&loc);
        let nc = Self::COEFFS;
        let stride = self.stride();
        out.iter_mut().for_each(|v| *v = T::zero());
        for (corner, &node) in corners.iter().enumerate().take(nc) {
            let block = &self.data[node * stride..(node + 1) * stride];
            for mask in 0..nc {
                let mut w = T::one();
                for (a, ba) in b.iter().enumerate() {
                    w = w * ba[bit(corner, a)][bit(mask, a)];
                }
                for (c, o) in out.iter_mut().enumerate() {
                    *o = *o + w * block[c * nc + mask];
                }
            }
        }
    }

    #[inline]
    pub(crate) fn eval_gradient_unchecked(&self, x: &Point<T, D>, value: &mut [T], grad: &mut [[T; D]]) {
        let loc = self.geometry.locate(x);
        let dx = self.geometry.dx();
        let b: [[[T; 2]; 2]; D] = std::array::from_fn(|a| basis(loc.local[a], dx));
        let db: [[[T; 2]; 2]; D] = std::array::from_fn(|a| basis_derivative(loc.local[a], dx));
        let corners = self.corner_nodes(&loc);
        let nc = Self::COEFFS;
        let stride = self.stride();
        value.iter_mut().for_each(|v| *v = T::zero());
        grad.iter_mut().for_each(|g| *g = [T::zero(); D]);
        for (corner, &node) in corners.iter().enumerate().take(nc) {
            let block = &self.data[node * stride..(node + 1) * stride];
            for mask in 0..nc {
                let mut w = T::one();
                let mut wg = [T::one(); D];
                for a in 0..D {
                    let (cb, mb) = (bit(corner, a), bit(mask, a));
                    w = w * b[a][cb][mb];
                    for (g, wgg) in wg.iter_mut().enumerate() {
                        *wgg = *wgg * if g == a { db[a][cb][mb] } else { b[a][cb][mb] };
                    }
                }
                for c in 0..self.components {
                    let coef = block[c * nc + mask];
                    value[c] = value[c] + w * coef;
                    for g in 0..D {
                        grad[c][g] = grad[c][g] + wg[g] * coef;
                    }
                }
            }
        }
    }

    pub(crate) fn eval_jet_unchecked(&self, x: &Point<T, D>, out: &mut [T]) {
        let loc = self.geometry.locate(x);
        let dx = self.geometry.dx();
        let b: [[[T; 2]; 2]; D] = std::array::from_fn(|a| basis(loc.local[a], dx));
        let db: [[[T; 2]; 2]; D] = std::array::from_fn(|a| basis_derivative(loc.local[a], dx));
        let corners = self.corner_nodes(&loc);
        let nc = Self::COEFFS;
        let stride = self.stride();
        out.iter_mut().for_each(|v| *v = T::zero());
        for (corner, &node) in corners.iter().enumerate().take(nc) {
            let block = &self.data[node * stride..(node + 1) * stride];
            for mask in 0..nc {
                for q in 0..nc {
                    let mut w = T::one();
                    for a in 0..D {
                        let table = if bit(q, a) == 1 { &db[a] } else { &b[a] };
                        w = w * table[bit(corner, a)][bit(mask, a)];
                    }
                    for c in 0..self.components {
                        out[c * nc + q] = out[c * nc + q] + w * block[c * nc + mask];
                    }
                }
            }
        }
    }

    /// Every partial derivative of total order at most `max_order`, per
    /// component, in slots `c * derivative_slots(D) + derivative_slot(alpha)`.
    /// Slots of higher total order are left untouched.
    pub(crate) fn eval_derivatives_unchecked(&self, x: &Point<T, D>, max_order: usize, out: &mut [T]) {
        let loc = self.geometry.locate(x);
        let dx = self.geometry.dx();
        let max_order = max_order.min(3 * D);
        let tables: [[[[T; 2]; 2]; 4]; D] =
            std::array::from_fn(|a| std::array::from_fn(|k| basis_order(loc.local[a], dx, k)));
        let corners = self.corner_nodes(&loc);
        let nc = Self::COEFFS;
        let stride = self.stride();
        let slots = derivative_slots(D);
        for slot in 0..slots {
            let mut alpha = [0usize; D];
            let mut rest = slot;
            for al in alpha.iter_mut() {
                *al = rest % 4;
                rest /= 4;
            }
            if alpha.iter().sum::<usize>() > max_order {
                continue;
            }
            for c in 0..self.components {
                out[c * slots + slot] = T::zero();
            }
            for (corner, &node) in corners.iter().enumerate().take(nc) {
                let block = &self.data[node * stride..(node + 1) * stride];
                for mask in 0..nc {
                    let mut w = T::one();
                    for a in 0..D {
                        w = w * tables[a][alpha[a]][bit(corner, a)][bit(mask, a)];
                    }
                    for c in 0..self.components {
                        out[c * slots + slot] = out[c * slots + slot] + w * block[c * nc + mask];
                    }
                }
            }
        }
    }

    /// Re-expresses the interpolant on another grid over the same box.
    pub fn resample(&self, target: &GridGeometry<T, D>) -> Result<Self> {
        if !self.geometry.same_box(target) {
            return Err(Error::GeometryMismatch("resample target has a different box or boundary".into()));
        }
        let mut out = Self::zeros(target.clone(), self.components);
        let mut jet = vec![T::zero(); self.stride()];
        for node in 0..target.node_count() {
            let x = target.node_position(node);
            self.eval_jet_unchecked(&x, &mut jet);
            out.node_block_mut(node).copy_from_slice(&jet);
        }
        Ok(out)
    }

    /// Largest absolute coefficient difference against a field on the same grid.
    pub fn max_coefficient_difference(&self, other: &Self) -> Result<T> {
        if self.geometry != other.geometry || self.components != other.components {
            return Err(Error::GeometryMismatch("fields live on different grids".into()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())))
    }

    /// Writes the plain-text dump format.
    ///
    /// ```text
    /// charmap-hermite 1
    /// dims 2
    /// cells 32
    /// boundary clamped
    /// components 2
    /// origin 0e0 0e0
    /// side 1e0
    /// order f f_x f_y f_xy
    /// nodes 1089
    /// <i> <j> <component 0 coefficients in order> <component 1 ...>
    /// ```
    ///
    /// Values are printed in shortest round-trip form, so a dump reloads bit-exactly.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.geometry;
        writeln!(w, "charmap-hermite 1")?;
        writeln!(w, "dims {D}")?;
        writeln!(w, "cells {}", g.cells)?;
        writeln!(w, "boundary {}", g.boundary.as_str())?;
        writeln!(w, "components {}", self.components)?;
        write!(w, "origin")?;
        for o in &g.origin {
            write!(w, " {o:e}")?;
        }
        writeln!(w)?;
        writeln!(w, "side {:e}", g.side)?;
        write!(w, "order")?;
        for mask in 0..Self::COEFFS {
            write!(w, " {}", coefficient_name(mask, D))?;
        }
        writeln!(w)?;
        writeln!(w, "nodes {}", g.node_count())?;
        for node in 0..g.node_count() {
            let idx = g.node_index(node);
            let mut line = String::new();
            for (k, i) in idx.iter().enumerate() {
                if k > 0 {
                    line.push(' ');
                }
                line.push_str(&i.to_string());
            }
            for v in self.node_block(node) {
                line.push_str(&format!(" {v:e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`HermiteField::write_dump`].
    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next = |key: &str| -> Result<(usize, Vec<String>)> {
            loop {
                let (n, line) = lines.next().ok_or_else(|| Error::parse(0, format!("missing `{key}`")))?;
                let line = line?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let parts: Vec<String> = trimmed.split_whitespace().map(str::to_owned).collect();
                if !key.is_empty() && parts[0] != key {
                    return Err(Error::parse(n + 1, format!("expected `{key}`, found `{}`", parts[0])));
                }
                return Ok((n + 1, parts));
            }
        };
        fn num<V: std::str::FromStr>(line: usize, s: &str) -> Result<V> {
            s.parse().map_err(|_| Error::parse(line, format!("bad number `{s}`")))
        }

        let (n, magic) = next("charmap-hermite")?;
        if magic.get(1).map(String::as_str) != Some("1") {
            return Err(Error::parse(n, "unsupported dump version"));
        }
        let (n, dims) = next("dims")?;
        if num::<usize>(n, dims.get(1).map_or("", String::as_str))? != D {
            return Err(Error::GeometryMismatch(format!("dump is not {D}-dimensional")));
        }
        let (n, cells) = next("cells")?;
        let cells: usize = num(n, cells.get(1).map_or("", String::as_str))?;
        let (n, boundary) = next("boundary")?;
        let boundary: Boundary = boundary
            .get(1)
            .ok_or_else(|| Error::parse(n, "missing boundary"))?
            .parse()
            .map_err(|_| Error::parse(n, "bad boundary"))?;
        let (n, comps) = next("components")?;
        let components: usize = num(n, comps.get(1).map_or("", String::as_str))?;
        let (n, origin) = next("origin")?;
        if origin.len() != D + 1 {
            return Err(Error::parse(n, "origin has wrong arity"));
        }
        let mut o = [T::zero(); D];
        for a in 0..D {
            o[a] = num(n, &origin[a + 1])?;
        }
        let (n, side) = next("side")?;
        let side: T = num(n, side.get(1).map_or("", String::as_str))?;
        let (n, order) = next("order")?;
        if order.len() != Self::COEFFS + 1 {
            return Err(Error::parse(n, "coefficient order has wrong arity"));
        }
        let (n, nodes) = next("nodes")?;
        let geometry = GridGeometry::new(cells, o, side, boundary)?;
        let count: usize = num(n, nodes.get(1).map_or("", String::as_str))?;
        if count != geometry.node_count() {
            return Err(Error::parse(n, "node count does not match grid"));
        }
        let mut field = Self::zeros(geometry, components);
        let per_line = D + field.stride();
        for _ in 0..count {
            let (n, parts) = next("")?;
            if parts.len() != per_line {
                return Err(Error::parse(n, format!("expected {per_line} fields, got {}", parts.len())));
            }
            let mut idx = [0usize; D];
            for a in 0..D {
                idx[a] = num(n, &parts[a])?;
                if idx[a] >= field.geometry.nodes_per_axis() {
                    return Err(Error::parse(n, "node index out of range"));
                }
            }
            let flat = field.geometry.flat_index(&idx);
            let block = field.node_block_mut(flat);
            for (k, v) in block.iter_mut().enumerate() {
                *v = num(n, &parts[D + k])?;
            }
        }
        Ok(field)
    }
}

fn snap_to_node<T: Scalar>(s: T) -> T {
    let r = s.round();
    if (s - r).abs() <= T::lit(4.0) * T::epsilon() * r.abs().max(T::one()) {
        r
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `x^3 y^3` with its exact jet, independent of the interpolation code.
    fn cubic_jet(p: &[f64; 2], out: &mut [f64]) {
        let (x, y) = (p[0], p[1]);
        out[0] = x.powi(3) * y.powi(3);
        out[1] = 3.0 * x * x * y.powi(3);
        out[2] = 3.0 * x.powi(3) * y * y;
        out[3] = 9.0 * x * x * y * y;
    }

    #[test]
    fn linear_1d_slice() {
        let g = GridGeometry::<f64, 1>::unit(4, Boundary::Clamped);
        let f = HermiteField::identity(g);
        assert_eq!(f.eval(&[0.5]).unwrap()[0], 0.5);
        let (_, grad) = f.eval_with_gradient(&[0.25]).unwrap();
        assert!((grad[0][0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bicubic_product_is_reproduced() {
        let g = GridGeometry::<f64, 2>::unit(8, Boundary::Clamped);
        let f = HermiteField::from_jet_fn(g, 1, cubic_jet);
        let v = f.eval(&[0.3, 0.7]).unwrap()[0];
        assert!((v - 0.009261).abs() < 1e-15, "{v}");
        let (_, grad) = f.eval_with_gradient(&[0.5, 0.5]).unwrap();
        assert!((grad[0][0] - 0.09375).abs() < 1e-14);
        assert!((grad[0][1] - 0.09375).abs() < 1e-14);
    }

    #[test]
    fn identity_map_is_exact() {
        let g = GridGeometry::<f64, 2>::unit(7, Boundary::Clamped);
        let f = HermiteField::identity(g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = [rng.gen::<f64>(), rng.gen::<f64>()];
            let v = f.eval(&p).unwrap();
            assert!((v[0] - p[0]).abs() < 1e-15 && (v[1] - p[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn derivative_table_of_bicubic() {
        let g = GridGeometry::<f64, 2>::unit(8, Boundary::Clamped);
        let f = HermiteField::from_jet_fn(g, 1, cubic_jet);
        let mut out = vec![0.0; derivative_slots(2)];
        let (x, y) = (0.33, 0.61);
        f.eval_derivatives_unchecked(&[x, y], 3, &mut out);
        let d = |a: usize, b: usize| out[derivative_slot(&[a, b])];
        assert!((d(0, 0) - x.powi(3) * y.powi(3)).abs() < 1e-14);
        assert!((d(2, 0) - 6.0 * x * y.powi(3)).abs() < 1e-12);
        assert!((d(1, 1) - 9.0 * x * x * y * y).abs() < 1e-12);
        assert!((d(2, 1) - 18.0 * x * y * y).abs() < 1e-11);
        assert!((d(0, 3) - 6.0 * x.powi(3)).abs() < 1e-11);
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let g = GridGeometry::<f64, 3>::unit(3, Boundary::Periodic);
        let f = HermiteField::from_fn(g, 1, |_, out| out[0] = 2.5);
        let (v, grad) = f.eval_with_gradient(&[0.1, 0.77, 0.4]).unwrap();
        assert!((v[0] - 2.5).abs() < 1e-14);
        assert!(grad[0].iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn nan_query_is_an_error() {
        let f = HermiteField::identity(GridGeometry::<f64, 2>::unit(4, Boundary::Clamped));
        assert!(matches!(f.eval(&[f64::NAN, 0.1]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn clamped_queries_far_outside_are_clamped_onto_the_band() {
        let f = HermiteField::identity(GridGeometry::<f64, 2>::unit(4, Boundary::Clamped));
        // inside the one-cell band the boundary polynomial is extended
        let v = f.eval(&[-0.1, 0.5]).unwrap();
        assert!((v[0] + 0.1).abs() < 1e-15);
        // far away the query is clamped to the band edge
        let v = f.eval(&[7.0, 0.5]).unwrap();
        assert!((v[0] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn fill_identity_by_differences() {
        let g = GridGeometry::<f64, 2>::unit(5, Boundary::Clamped);
        let f = HermiteField::from_fn(g.clone(), 2, |p, out| out.copy_from_slice(p));
        let exact = HermiteField::identity(g);
        assert!(f.max_coefficient_difference(&exact).unwrap() < 1e-9);
    }

    #[test]
    fn fill_zero_is_zero() {
        let g = GridGeometry::<f64, 2>::unit(5, Boundary::Clamped);
        let f = HermiteField::from_fn(g, 1, |_, out| out[0] = 0.0);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn circle_distance_fill_at_center() {
        // 10 cells: node (5, 7.5) does not exist, so use a grid with the center on a node
        let g = GridGeometry::<f64, 2>::unit(20, Boundary::Clamped);
        let f = HermiteField::from_fn(g.clone(), 1, |p, out| {
            out[0] = ((p[0] - 0.5).powi(2) + (p[1] - 0.75).powi(2)).sqrt() - 0.15;
        });
        let node = g.flat_index(&[10, 15]);
        assert!((f.node_block(node)[0] + 0.15).abs() < 1e-15);
    }

    #[test]
    fn resample_identity_and_cubic() {
        let g16 = GridGeometry::<f64, 2>::unit(16, Boundary::Clamped);
        let g32 = g16.with_cells(32);
        let id = HermiteField::identity(g16.clone()).resample(&g32).unwrap();
        assert!(id.max_coefficient_difference(&HermiteField::identity(g32.clone())).unwrap() < 1e-14);

        let cubic = HermiteField::from_jet_fn(g16.clone(), 1, cubic_jet);
        let fine = cubic.resample(&g32).unwrap();
        let direct = HermiteField::from_jet_fn(g32, 1, cubic_jet);
        assert!(fine.max_coefficient_difference(&direct).unwrap() < 1e-13);

        let same = cubic.resample(&g16).unwrap();
        assert!(same.max_coefficient_difference(&cubic).unwrap() < 1e-15);
    }

    #[test]
    fn resample_rejects_other_box() {
        let g = GridGeometry::<f64, 2>::unit(4, Boundary::Clamped);
        let other = GridGeometry::new(8, [0.0, 0.0], 2.0, Boundary::Clamped).unwrap();
        let f = HermiteField::identity(g);
        assert!(matches!(f.resample(&other), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn periodic_wrap_is_exact() {
        let g = GridGeometry::<f64, 2>::unit(8, Boundary::Periodic);
        let f = HermiteField::from_fn(g, 1, |p, out| {
            out[0] = (2.0 * std::f64::consts::PI * p[0]).sin() * (2.0 * std::f64::consts::PI * p[1]).cos();
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            // points representable both as x and x + 1
            let p: [f64; 2] = std::array::from_fn(|_| (rng.gen::<f64>() + 1.0) - 1.0);
            let q = [p[0] + 1.0, p[1] - 1.0];
            assert_eq!(f.eval(&p).unwrap(), f.eval(&q).unwrap());
        }
    }

    #[test]
    fn dump_round_trip_is_bit_exact() {
        let g = GridGeometry::<f64, 3>::unit(3, Boundary::Periodic);
        let f = HermiteField::from_fn(g, 2, |p, out| {
            out[0] = (p[0] * 6.0).sin() + p[1] * p[2];
            out[1] = 1.0 / 3.0 + p[2];
        });
        let mut buf = Vec::new();
        f.write_dump(&mut buf).unwrap();
        let back = HermiteField::<f64, 3>::read_dump(buf.as_slice()).unwrap();
        assert_eq!(f, back);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("order f f_x f_y f_xy f_z f_xz f_yz f_xyz"));
    }

    #[test]
    fn dump_rejects_wrong_dimension() {
        let f = HermiteField::identity(GridGeometry::<f64, 2>::unit(2, Boundary::Clamped));
        let mut buf = Vec::new();
        f.write_dump(&mut buf).unwrap();
        assert!(HermiteField::<f64, 3>::read_dump(buf.as_slice()).is_err());
    }

    #[test]
    fn single_precision_identity() {
        let g = GridGeometry::<f32, 2>::unit(8, Boundary::Clamped);
        let f = HermiteField::identity(g);
        let v = f.eval(&[0.3, 0.6]).unwrap();
        assert!((v[0] - 0.3).abs() < 1e-6 && (v[1] - 0.6).abs() < 1e-6);
    }
}
