//! Initial set functions, their pullback through a map state, contour
//! extraction and comparison metrics.
//!
//! Sampling for contours and metrics is on cell centres of an `R^D` grid
//! over the unit box.

use std::collections::HashMap;

use crate::cm::{global_map_eval, MapMode, MapState};
use crate::scalar::{Point, Scalar};

/// Initial set function `S0`.
#[derive(Clone, Debug, PartialEq)]
pub enum SetFunction<T> {
    /// Signed distance to a circle or sphere, negative inside.
    Ball { center: Vec<T>, radius: T },
    /// `normal · x − offset`; a signed distance when `normal` has unit length.
    HalfSpace { normal: Vec<T>, offset: T },
    /// Smooth escape value in `[0, 1]` of the quadratic map, `1` when bounded.
    /// The unit square is mapped affinely onto `re × im`.
    Mandelbrot { re: (T, T), im: (T, T), max_iter: usize, escape_radius: T },
    /// Band of half-width `thickness` around the zero set of `line`, cut to
    /// where `mask` is negative: `max(|line| − thickness, mask)`.
    MaskedLine { line: Box<SetFunction<T>>, mask: Box<SetFunction<T>>, thickness: T },
    /// Phase index `col + kx * row` of a periodic tiling of the unit square.
    /// With `stagger`, odd rows are shifted by half a tile.
    Mosaic { kx: usize, ky: usize, stagger: bool },
    /// Minimum of the members.
    Composite(Vec<SetFunction<T>>),
}

impl<T: Scalar> SetFunction<T> {
    pub fn circle(center: [T; 2], radius: T) -> Self {
        SetFunction::Ball { center: center.to_vec(), radius }
    }

    pub fn sphere(center: [T; 3], radius: T) -> Self {
        SetFunction::Ball { center: center.to_vec(), radius }
    }

    pub fn mandelbrot() -> Self {
        SetFunction::Mandelbrot {
            re: (T::lit(-2.2), T::lit(0.8)),
            im: (T::lit(-1.5), T::lit(1.5)),
            max_iter: 300,
            escape_radius: T::lit(2.0),
        }
    }

    pub fn mosaic(kx: usize, ky: usize) -> Self {
        SetFunction::Mosaic { kx, ky, stagger: false }
    }

    /// True for kinds whose zero level set is the boundary of the set.
    pub fn is_level_set(&self) -> bool {
        match self {
            SetFunction::Ball { .. } | SetFunction::HalfSpace { .. } | SetFunction::MaskedLine { .. } => true,
            SetFunction::Composite(parts) => parts.iter().all(|p| p.is_level_set()),
            SetFunction::Mandelbrot { .. } | SetFunction::Mosaic { .. } => false,
        }
    }

    pub fn eval(&self, x: &[T]) -> T {
        match self {
            SetFunction::Ball { center, radius } => {
                let r2 = x.iter().zip(center).fold(T::zero(), |acc, (a, c)| acc + (*a - *c) * (*a - *c));
                r2.sqrt() - *radius
            }
            SetFunction::HalfSpace { normal, offset } => {
                x.iter().zip(normal).fold(T::zero(), |acc, (a, n)| acc + *a * *n) - *offset
            }
            SetFunction::Mandelbrot { re, im, max_iter, escape_radius } => {
                mandelbrot_value(x, *re, *im, *max_iter, *escape_radius)
            }
            SetFunction::MaskedLine { line, mask, thickness } => {
                (line.eval(x).abs() - *thickness).max(mask.eval(x))
            }
            SetFunction::Mosaic { kx, ky, stagger } => mosaic_phase(x, *kx, *ky, *stagger),
            SetFunction::Composite(parts) => {
                parts.iter().map(|p| p.eval(x)).fold(T::infinity(), |a, b| a.min(b))
            }
        }
    }
}

fn mandelbrot_value<T: Scalar>(x: &[T], re: (T, T), im: (T, T), max_iter: usize, escape: T) -> T {
    let cr = re.0 + x[0] * (re.1 - re.0);
    let ci = im.0 + x[1] * (im.1 - im.0);
    if !(cr.is_finite() && ci.is_finite()) {
        return T::nan();
    }
    let (mut zr, mut zi) = (T::zero(), T::zero());
    let e2 = escape * escape;
    for n in 0..max_iter {
        let r2 = zr * zr + zi * zi;
        if r2 > e2 {
            // continuous escape count
            let nu = T::from_usize_lossy(n) + T::one() - (r2.ln() * T::lit(0.5)).ln() / T::LN_2();
            return (nu / T::from_usize_lossy(max_iter)).max(T::zero()).min(T::one());
        }
        let t = zr * zr - zi * zi + cr;
        zi = T::lit(2.0) * zr * zi + ci;
        zr = t;
    }
    T::one()
}

fn mosaic_phase<T: Scalar>(x: &[T], kx: usize, ky: usize, stagger: bool) -> T {
    let kx = kx.max(1);
    let ky = ky.max(1);
    let frac = |v: T| v - v.floor();
    let fy = frac(x[1]);
    if !fy.is_finite() || !x[0].is_finite() {
        return T::nan();
    }
    let row = (fy * T::from_usize_lossy(ky)).floor().to_usize().unwrap_or(0).min(ky - 1);
    let mut sx = x[0];
    if stagger && row % 2 == 1 {
        sx = sx + T::lit(0.5) / T::from_usize_lossy(kx);
    }
    let col = (frac(sx) * T::from_usize_lossy(kx)).floor().to_usize().unwrap_or(0).min(kx - 1);
    T::from_usize_lossy(col + kx * row)
}

/// `S0(χ0(χ(x)))` for the current state of a run.
pub fn advected_set_eval<T: Scalar, const D: usize>(set: &SetFunction<T>, state: &MapState<T, D>, x: &Point<T, D>) -> T {
    set.eval(&global_map_eval(state, x, MapMode::Final))
}

/// Cell-centre sample coordinate `i` of an `r`-sample axis over `[0, 1]`.
#[inline]
pub fn sample_coord<T: Scalar>(i: usize, r: usize) -> T {
    (T::from_usize_lossy(i) + T::lit(0.5)) / T::from_usize_lossy(r)
}

/// Samples `f` on the `r^D` cell-centre grid, axis 0 fastest.
pub fn sample_grid<T: Scalar, const D: usize, F>(f: F, r: usize) -> Vec<T>
where
    F: Fn(&Point<T, D>) -> T,
{
    (0..r.pow(D as u32))
        .map(|mut flat| {
            let p: Point<T, D> = std::array::from_fn(|_| {
                let i = flat % r;
                flat /= r;
                sample_coord(i, r)
            });
            f(&p)
        })
        .collect()
}

/// Extracted iso-lines (2D) or iso-surface (3D).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContourSet<T> {
    pub polylines: Vec<Vec<[T; 2]>>,
    pub triangles: Vec<[[T; 3]; 3]>,
    /// Samples per axis the contour was extracted from.
    pub resolution: usize,
}

impl<T: Scalar> ContourSet<T> {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty() && self.triangles.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.polylines.iter().map(Vec::len).sum::<usize>() + 3 * self.triangles.len()
    }

    /// Line segments of all polylines.
    pub fn segments(&self) -> Vec<[[T; 2]; 2]> {
        self.polylines.iter().flat_map(|p| p.windows(2).map(|w| [w[0], w[1]])).collect()
    }
}

#[inline]
fn crossing<T: Scalar>(va: T, vb: T, iso: T) -> T {
    let d = vb - va;
    if d == T::zero() {
        T::lit(0.5)
    } else {
        ((iso - va) / d).max(T::zero()).min(T::one())
    }
}

/// Segments of one square face: corners in counter-clockwise order, edge `k`
/// joins corner `k` and `k + 1`. Returns pairs of edge indices.
fn square_segments<T: Scalar>(v: [T; 4], iso: T) -> Vec<(usize, usize)> {
    let inside: [bool; 4] = std::array::from_fn(|k| v[k] < iso);
    let cut: Vec<usize> = (0..4).filter(|&k| inside[k] != inside[(k + 1) % 4]).collect();
    match cut.len() {
        2 => vec![(cut[0], cut[1])],
        4 => {
            // saddle: the centre average decides whether corner 0 connects to corner 2
            let centre = (v[0] + v[1] + v[2] + v[3]) / T::lit(4.0);
            if (centre < iso) == inside[0] {
                vec![(0, 1), (2, 3)]
            } else {
                vec![(3, 0), (1, 2)]
            }
        }
        _ => Vec::new(),
    }
}

/// Marching squares on the `r × r` cell-centre grid of the unit square.
pub fn extract_contour<T: Scalar, F>(f: F, iso: T, r: usize) -> ContourSet<T>
where
    F: Fn(&[T; 2]) -> T,
{
    let r = r.max(2);
    let values = sample_grid::<T, 2, _>(&f, r);
    contour_from_samples(&values, iso, r)
}

/// Marching squares on precomputed samples (`values[j * r + i]`).
pub fn contour_from_samples<T: Scalar>(values: &[T], iso: T, r: usize) -> ContourSet<T> {
    let val = |i: usize, j: usize| values[j * r + i];
    // edge ids: 2 * (j * r + i) horizontal from (i, j), + 1 vertical from (i, j)
    let mut points: HashMap<usize, [T; 2]> = HashMap::new();
    let mut links: HashMap<usize, Vec<usize>> = HashMap::new();
    for j in 0..r - 1 {
        for i in 0..r - 1 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let v: [T; 4] = std::array::from_fn(|k| val(corners[k].0, corners[k].1));
            if v.iter().any(|x| !x.is_finite()) {
                continue;
            }
            for (ea, eb) in square_segments(v, iso) {
                let ids = [ea, eb].map(|e| {
                    let (a, b) = (corners[e], corners[(e + 1) % 4]);
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    let id = 2 * (lo.1 * r + lo.0) + usize::from(hi.0 == lo.0);
                    points.entry(id).or_insert_with(|| {
                        let t = crossing(val(lo.0, lo.1), val(hi.0, hi.1), iso);
                        let pa = [sample_coord::<T>(lo.0, r), sample_coord::<T>(lo.1, r)];
                        let pb = [sample_coord::<T>(hi.0, r), sample_coord::<T>(hi.1, r)];
                        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
                    });
                    id
                });
                links.entry(ids[0]).or_default().push(ids[1]);
                links.entry(ids[1]).or_default().push(ids[0]);
            }
        }
    }
    let polylines = stitch(&mut links).into_iter().map(|ids| ids.iter().map(|id| points[id]).collect()).collect();
    ContourSet { polylines, triangles: Vec::new(), resolution: r }
}

/// Chains an undirected graph of degree ≤ 2 into paths; closed loops repeat their first id.
fn stitch(links: &mut HashMap<usize, Vec<usize>>) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut starts: Vec<usize> = links.iter().filter(|(_, n)| n.len() == 1).map(|(k, _)| *k).collect();
    starts.sort_unstable();
    let mut rest: Vec<usize> = links.keys().copied().collect();
    rest.sort_unstable();
    starts.extend(rest);
    for start in starts {
        if links.get(&start).is_none_or(|n| n.is_empty()) {
            continue;
        }
        let mut path = vec![start];
        let mut cur = start;
        while let Some(next) = links.get_mut(&cur).and_then(|n| n.pop()) {
            if let Some(back) = links.get_mut(&next) {
                if let Some(pos) = back.iter().position(|&x| x == cur) {
                    back.swap_remove(pos);
                }
            }
            path.push(next);
            cur = next;
        }
        if path.len() > 1 {
            out.push(path);
        }
    }
    out
}

/// Cube edges as corner pairs; corner bit `a` is the offset along axis `a`.
const CUBE_EDGES: [(usize, usize); 12] =
    [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)];

/// Cube faces as counter-clockwise corner loops.
const CUBE_FACES: [[usize; 4]; 6] =
    [[0, 2, 6, 4], [1, 3, 7, 5], [0, 1, 5, 4], [2, 3, 7, 6], [0, 1, 3, 2], [4, 5, 7, 6]];

fn cube_edge(a: usize, b: usize) -> usize {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    CUBE_EDGES.iter().position(|&e| e == (a, b)).expect("adjacent corners")
}

/// Iso-surface on the `r^3` cell-centre grid of the unit cube: each cube's face
/// segments are chained into loops and fan-triangulated.
pub fn extract_surface<T: Scalar, F>(f: F, iso: T, r: usize) -> ContourSet<T>
where
    F: Fn(&[T; 3]) -> T,
{
    let r = r.max(2);
    let values = sample_grid::<T, 3, _>(&f, r);
    surface_from_samples(&values, iso, r)
}

pub fn surface_from_samples<T: Scalar>(values: &[T], iso: T, r: usize) -> ContourSet<T> {
    let idx = |i: usize, j: usize, k: usize| (k * r + j) * r + i;
    let mut triangles = Vec::new();
    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let pos: [[usize; 3]; 8] = std::array::from_fn(|c| [i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)]);
                let v: [T; 8] = std::array::from_fn(|c| values[idx(pos[c][0], pos[c][1], pos[c][2])]);
                if v.iter().any(|x| !x.is_finite()) {
                    continue;
                }
                let inside = v.iter().filter(|x| **x < iso).count();
                if inside == 0 || inside == 8 {
                    continue;
                }
                let mut links: HashMap<usize, Vec<usize>> = HashMap::new();
                for face in CUBE_FACES {
                    let fv = face.map(|c| v[c]);
                    for (ea, eb) in square_segments(fv, iso) {
                        let a = cube_edge(face[ea], face[(ea + 1) % 4]);
                        let b = cube_edge(face[eb], face[(eb + 1) % 4]);
                        links.entry(a).or_default().push(b);
                        links.entry(b).or_default().push(a);
                    }
                }
                let point = |e: usize| -> [T; 3] {
                    let (a, b) = CUBE_EDGES[e];
                    let t = crossing(v[a], v[b], iso);
                    std::array::from_fn(|ax| {
                        let pa = sample_coord::<T>(pos[a][ax], r);
                        let pb = sample_coord::<T>(pos[b][ax], r);
                        pa + t * (pb - pa)
                    })
                };
                for lp in stitch(&mut links) {
                    let pts: Vec<[T; 3]> = lp.iter().take(lp.len() - 1).map(|&e| point(e)).collect();
                    for w in 1..pts.len().saturating_sub(1) {
                        triangles.push([pts[0], pts[w], pts[w + 1]]);
                    }
                }
            }
        }
    }
    ContourSet { polylines: Vec::new(), triangles, resolution: r }
}

fn point_segment_distance<T: Scalar>(p: &[T; 2], s: &[[T; 2]; 2]) -> T {
    let d = [s[1][0] - s[0][0], s[1][1] - s[0][1]];
    let w = [p[0] - s[0][0], p[1] - s[0][1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > T::zero() { ((w[0] * d[0] + w[1] * d[1]) / len2).max(T::zero()).min(T::one()) } else { T::zero() };
    let q = [w[0] - t * d[0], w[1] - t * d[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

/// Uniform bucket grid of segments for nearest-distance queries.
struct SegmentIndex<T> {
    segments: Vec<[[T; 2]; 2]>,
    buckets: Vec<Vec<usize>>,
    n: usize,
    lo: [T; 2],
    h: T,
}

impl<T: Scalar> SegmentIndex<T> {
    fn new(segments: Vec<[[T; 2]; 2]>, n: usize) -> Self {
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for s in &segments {
            for p in s {
                for a in 0..2 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
        let n = n.max(1);
        let h = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / T::from_usize_lossy(n)).max(T::lit(1e-12));
        let mut buckets = vec![Vec::new(); n * n];
        let cell = |v: T, a: usize| ((v - lo[a]) / h).floor().to_usize().unwrap_or(0).min(n - 1);
        for (k, s) in segments.iter().enumerate() {
            let (i0, i1) = (cell(s[0][0].min(s[1][0]), 0), cell(s[0][0].max(s[1][0]), 0));
            let (j0, j1) = (cell(s[0][1].min(s[1][1]), 1), cell(s[0][1].max(s[1][1]), 1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * n + i].push(k);
                }
            }
        }
        Self { segments, buckets, n, lo, h }
    }

    fn distance(&self, p: &[T; 2]) -> T {
        let n = self.n as isize;
        let cell = |v: T, a: usize| ((v - self.lo[a]) / self.h).floor().to_isize().unwrap_or(0).clamp(0, n - 1);
        let (ci, cj) = (cell(p[0], 0), cell(p[1], 1));
        let mut best = T::infinity();
        for ring in 0..=n {
            // anything outside this ring is at least `ring * h` away from p's bucket
            if best <= T::from_usize_lossy(ring as usize).max(T::one()) * self.h - self.h && ring > 0 {
                break;
            }
            for j in (cj - ring).max(0)..=(cj + ring).min(n - 1) {
                for i in (ci - ring).max(0)..=(ci + ring).min(n - 1) {
                    if (i - ci).abs() != ring && (j - cj).abs() != ring {
                        continue;
                    }
                    for &k in &self.buckets[(j * n + i) as usize] {
                        best = best.min(point_segment_distance(p, &self.segments[k]));
                    }
                }
            }
        }
        best
    }
}

/// Hausdorff distance between two sets of 2D polylines, `None` if either is empty.
pub fn hausdorff<T: Scalar>(a: &ContourSet<T>, b: &ContourSet<T>) -> Option<T> {
    let (sa, sb) = (a.segments(), b.segments());
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let buckets = |s: usize| ((s as f64).sqrt() as usize).clamp(1, 512);
    let one_sided = |from: &ContourSet<T>, to: Vec<[[T; 2]; 2]>| {
        let index = SegmentIndex::new(to, buckets(from.vertex_count()));
        from.polylines.iter().flatten().map(|p| index.distance(p)).fold(T::zero(), |m, d| m.max(d))
    };
    Some(one_sided(a, sb).max(one_sided(b, sa)))
}

/// Comparison of a computed set against a reference on an `R^D` sample grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetMetrics<T> {
    /// RMS of the value difference over the samples.
    pub l2: T,
    /// Between zero contours, 2D level-set kinds only.
    pub hausdorff: Option<T>,
    /// Enclosed area or volume (negative values are inside).
    pub measure_reference: T,
    pub measure_computed: T,
    pub measure_rel_error: T,
}

/// Smoothed occupancy of a sample with value `v`, for signed distances on spacing `h`.
#[inline]
fn occupancy<T: Scalar>(v: T, h: T) -> T {
    (T::lit(0.5) - v / h).max(T::zero()).min(T::one())
}

pub fn set_metrics<T: Scalar, const D: usize, F>(reference: &SetFunction<T>, computed: F, r: usize) -> SetMetrics<T>
where
    F: Fn(&Point<T, D>) -> T,
{
    let r = r.max(2);
    let reference_values = sample_grid::<T, D, _>(|x| reference.eval(x), r);
    let computed_values = sample_grid::<T, D, _>(&computed, r);
    metrics_from_samples::<T, D>(&reference_values, &computed_values, r, reference.is_level_set())
}

pub fn metrics_from_samples<T: Scalar, const D: usize>(
    reference: &[T],
    computed: &[T],
    r: usize,
    level_set: bool,
) -> SetMetrics<T> {
    let n = T::from_usize_lossy(reference.len().max(1));
    let sq = reference.iter().zip(computed).fold(T::zero(), |acc, (a, b)| acc + (*a - *b) * (*a - *b));
    let h = T::one() / T::from_usize_lossy(r);
    let cell = h.powi(D as i32);
    let measure = |v: &[T]| v.iter().fold(T::zero(), |acc, x| acc + occupancy(*x, h)) * cell;
    let (mr, mc) = (measure(reference), measure(computed));
    let rel = if mr > T::zero() { (mc - mr).abs() / mr } else { (mc - mr).abs() };
    let hausdorff = if level_set && D == 2 {
        hausdorff(&contour_from_samples(reference, T::zero(), r), &contour_from_samples(computed, T::zero(), r))
    } else {
        None
    };
    SetMetrics { l2: (sq / n).sqrt(), hausdorff, measure_reference: mr, measure_computed: mc, measure_rel_error: rel }
}
