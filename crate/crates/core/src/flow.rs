//! Prescribed velocity fields and RK3 characteristic tracing.

use crate::scalar::{axpy, Point, Scalar};

/// A time-dependent velocity field `v(x, t)` in `D` dimensions.
pub trait VelocityField<T: Scalar, const D: usize>: Sync {
    fn velocity(&self, x: &Point<T, D>, t: T) -> Point<T, D>;
}

impl<T: Scalar, const D: usize, V: VelocityField<T, D> + ?Sized> VelocityField<T, D> for &V {
    fn velocity(&self, x: &Point<T, D>, t: T) -> Point<T, D> {
        (**self).velocity(x, t)
    }
}

impl<T: Scalar, const D: usize, V: VelocityField<T, D> + ?Sized + Send> VelocityField<T, D> for Box<V> {
    fn velocity(&self, x: &Point<T, D>, t: T) -> Point<T, D> {
        (**self).velocity(x, t)
    }
}

/// Wraps a closure as a velocity field.
#[derive(Clone, Copy)]
pub struct FnField<F>(pub F);

impl<T, const D: usize, F> VelocityField<T, D> for FnField<F>
where
    T: Scalar,
    F: Fn(&Point<T, D>, T) -> Point<T, D> + Sync,
{
    fn velocity(&self, x: &Point<T, D>, t: T) -> Point<T, D> {
        (self.0)(x, t)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroField;

impl<T: Scalar, const D: usize> VelocityField<T, D> for ZeroField {
    fn velocity(&self, _: &Point<T, D>, _: T) -> Point<T, D> {
        [T::zero(); D]
    }
}

/// Spatially and temporally constant velocity.
#[derive(Clone, Copy, Debug)]
pub struct UniformField<T, const D: usize>(pub Point<T, D>);

impl<T: Scalar, const D: usize> VelocityField<T, D> for UniformField<T, D> {
    fn velocity(&self, _: &Point<T, D>, _: T) -> Point<T, D> {
        self.0
    }
}

/// Rigid counter-clockwise rotation with angular speed `omega` about `center`.
#[derive(Clone, Copy, Debug)]
pub struct RigidRotation<T> {
    pub center: Point<T, 2>,
    pub omega: T,
}

impl<T: Scalar> VelocityField<T, 2> for RigidRotation<T> {
    fn velocity(&self, x: &Point<T, 2>, _: T) -> Point<T, 2> {
        [-self.omega * (x[1] - self.center[1]), self.omega * (x[0] - self.center[0])]
    }
}

/// Single-vortex swirl on the unit square, reversed at `t = period / 2`.
///
/// `u = cos(πt/A) sin²(πx) sin(2πy)`, `v = -cos(πt/A) sin²(πy) sin(2πx)`.
#[derive(Clone, Copy, Debug)]
pub struct Swirl<T> {
    pub period: T,
}

impl<T: Scalar> VelocityField<T, 2> for Swirl<T> {
    #[inline]
    fn velocity(&self, x: &Point<T, 2>, t: T) -> Point<T, 2> {
        let pi = T::PI();
        let two = T::lit(2.0);
        let c = (pi * t / self.period).cos();
        let (sx, cx) = (pi * x[0]).sin_cos();
        let (sy, cy) = (pi * x[1]).sin_cos();
        // sin(2πx) = 2 sin(πx) cos(πx)
        [c * sx * sx * two * sy * cy, -c * sy * sy * two * sx * cx]
    }
}

/// Three-dimensional deformation field on the unit cube, reversed at `t = period / 2`.
#[derive(Clone, Copy, Debug)]
pub struct Deform3D<T> {
    pub period: T,
}

impl<T: Scalar> VelocityField<T, 3> for Deform3D<T> {
    #[inline]
    fn velocity(&self, x: &Point<T, 3>, t: T) -> Point<T, 3> {
        let pi = T::PI();
        let two = T::lit(2.0);
        let c = (pi * t / self.period).cos();
        let (sx, cx) = (pi * x[0]).sin_cos();
        let (sy, cy) = (pi * x[1]).sin_cos();
        let (sz, cz) = (pi * x[2]).sin_cos();
        let (s2x, s2y, s2z) = (two * sx * cx, two * sy * cy, two * sz * cz);
        [
            two * c * sx * sx * s2y * s2z,
            -c * s2x * sy * sy * s2z,
            -c * s2x * s2y * sz * sz,
        ]
    }
}

/// Two-vortex / expansion field used to deform the Mandelbrot set.
///
/// Left weight `L` and right weight `R` blend a pair of vortices on the left
/// with a radial expansion about the centre.
#[derive(Clone, Copy, Debug)]
pub struct MandelbrotField<T> {
    pub period: T,
}

impl<T: Scalar> VelocityField<T, 2> for MandelbrotField<T> {
    fn velocity(&self, p: &Point<T, 2>, t: T) -> Point<T, 2> {
        let pi = T::PI();
        let (x, y) = (p[0], p[1]);
        let half = T::lit(0.5);
        let quarter = T::lit(0.25);
        let three_quarters = T::lit(0.75);
        let c = (pi * t / self.period).cos();
        let sin_pi_y = (pi * y).sin();
        let sin_2pi_y = (T::lit(2.0) * pi * y).sin();
        let sin_32_pi_x = (T::lit(1.5) * pi * x).sin();
        let x2 = x * x;
        let r = (pi * (T::lit(4.0) * x2 - T::lit(5.0) * x2 * x + T::lit(2.0) * x2 * x2)).sin() * sin_pi_y;
        let one_minus = T::one() - x;
        let l = (pi * one_minus * one_minus * one_minus).sin() * sin_pi_y * sin_32_pi_x * sin_2pi_y * sin_2pi_y;
        let u = -quarter * l * sin_32_pi_x * sin_32_pi_x * (T::lit(4.0) * pi * y).sin()
            + three_quarters * r * (x - half);
        let v = quarter * l * sin_2pi_y * sin_2pi_y * (T::lit(3.0) * pi * x).sin()
            + three_quarters * r * (y - half);
        [c * u, c * v]
    }
}

/// Periodic shear field used for the multiphase mosaic; reverses at `t = 1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct MosaicField;

impl<T: Scalar> VelocityField<T, 2> for MosaicField {
    fn velocity(&self, p: &Point<T, 2>, t: T) -> Point<T, 2> {
        let pi = T::PI();
        let two = T::lit(2.0);
        let c = (pi * t / two).cos();
        let c2 = c * c;
        let u = c * (two * pi * p[1] + two * (two * c2).sin()).cos();
        let v = c * (two * pi * p[0] + two * c2.sin()).sin();
        [u, v]
    }
}

/// Backward RK3 (Kutta) trace: the point at time `t` on the characteristic
/// that reaches `x` at time `t + dt`.
#[inline]
pub fn trace_backward_rk3<T, const D: usize, V>(field: &V, x: &Point<T, D>, t: T, dt: T) -> Point<T, D>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    let d = backward_rk3_displacement(field, x, t, dt);
    std::array::from_fn(|i| x[i] + d[i])
}

/// `trace_backward_rk3(x) − x`, without the cancellation of forming the difference.
#[inline]
pub fn backward_rk3_displacement<T, const D: usize, V>(field: &V, x: &Point<T, D>, t: T, dt: T) -> Point<T, D>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let k1 = field.velocity(x, t + dt);
    let k2 = field.velocity(&axpy(-half * dt, &k1, x), t + half * dt);
    let mid: Point<T, D> = std::array::from_fn(|i| two * k2[i] - k1[i]);
    let k3 = field.velocity(&axpy(-dt, &mid, x), t);
    let sixth = dt / T::lit(6.0);
    std::array::from_fn(|i| -sixth * (k1[i] + T::lit(4.0) * k2[i] + k3[i]))
}

/// Forward RK3 step with the same tableau as [`trace_backward_rk3`].
#[inline]
pub fn step_forward_rk3<T, const D: usize, V>(field: &V, x: &Point<T, D>, t: T, dt: T) -> Point<T, D>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let k1 = field.velocity(x, t);
    let k2 = field.velocity(&axpy(half * dt, &k1, x), t + half * dt);
    let mid: Point<T, D> = std::array::from_fn(|i| two * k2[i] - k1[i]);
    let k3 = field.velocity(&axpy(dt, &mid, x), t + dt);
    let sixth = dt / T::lit(6.0);
    std::array::from_fn(|i| x[i] + sixth * (k1[i] + T::lit(4.0) * k2[i] + k3[i]))
}

/// Error-estimation tracers with their seeding positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet<T, const D: usize> {
    initial: Vec<Point<T, D>>,
    current: Vec<Point<T, D>>,
}

impl<T: Scalar, const D: usize> ParticleSet<T, D> {
    pub fn new(initial: Vec<Point<T, D>>) -> Self {
        Self { current: initial.clone(), initial }
    }

    /// Restores a set mid-evolution; both lists must have the same length.
    pub fn with_current(initial: Vec<Point<T, D>>, current: Vec<Point<T, D>>) -> Option<Self> {
        (initial.len() == current.len()).then_some(Self { initial, current })
    }

    /// Uniform seeding: `per_axis^D` particles on a regular sub-lattice of
    /// every cell of a `cells^D` grid over `[origin, origin + side]^D`.
    pub fn seed_uniform(origin: &Point<T, D>, side: T, cells: usize, per_axis: usize) -> Self {
        let per_axis = per_axis.max(1);
        let n = cells * per_axis;
        let h = side / T::from_usize_lossy(n);
        let half = T::lit(0.5);
        let pts = (0..n.pow(D as u32))
            .map(|mut flat| {
                std::array::from_fn(|a| {
                    let i = flat % n;
                    flat /= n;
                    origin[a] + (T::from_usize_lossy(i) + half) * h
                })
            })
            .collect();
        Self::new(pts)
    }

    pub fn len(&self) -> usize {
        self.initial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial.is_empty()
    }

    pub fn initial(&self) -> &[Point<T, D>] {
        &self.initial
    }

    pub fn current(&self) -> &[Point<T, D>] {
        &self.current
    }

    /// Advances every particle by one forward RK3 step.
    pub fn advance<V: VelocityField<T, D> + ?Sized>(&mut self, field: &V, t: T, dt: T) {
        for p in &mut self.current {
            *p = step_forward_rk3(field, p, t, dt);
        }
    }

    /// Puts every particle back on its seeding position.
    pub fn reset(&mut self) {
        self.current.copy_from_slice(&self.initial);
    }
}

/// Functional form of [`ParticleSet::advance`].
pub fn advance_particles<T, const D: usize, V>(mut particles: ParticleSet<T, D>, field: &V, t: T, dt: T) -> ParticleSet<T, D>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    particles.advance(field, t, dt);
    particles
}

pub fn reset_particles<T: Scalar, const D: usize>(mut particles: ParticleSet<T, D>) -> ParticleSet<T, D> {
    particles.reset();
    particles
}

/// Forward RK3 trajectories of passive markers, including the start point.
pub fn track_tracers<T, const D: usize, V>(points: &[Point<T, D>], field: &V, t0: T, t1: T, dt: T) -> Vec<Vec<Point<T, D>>>
where
    T: Scalar,
    V: VelocityField<T, D> + ?Sized,
{
    let steps = step_count(t0, t1, dt);
    let h = if steps == 0 { T::zero() } else { (t1 - t0) / T::from_usize_lossy(steps) };
    points
        .iter()
        .map(|p| {
            let mut traj = Vec::with_capacity(steps + 1);
            let mut x = *p;
            traj.push(x);
            for k in 0..steps {
                x = step_forward_rk3(field, &x, t0 + T::from_usize_lossy(k) * h, h);
                traj.push(x);
            }
            traj
        })
        .collect()
}

/// Number of uniform steps of size at most `dt` covering `[t0, t1]`.
pub fn step_count<T: Scalar>(t0: T, t1: T, dt: T) -> usize {
    if t1 <= t0 {
        return 0;
    }
    let n = ((t1 - t0) / dt).to_f64_lossy();
    // tolerate roundoff in the quotient before rounding up
    (n - 1e-9).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn swirl_values() {
        let s = Swirl { period: 16.0f64 };
        let v = s.velocity(&[0.3, 0.6], 8.0);
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
        let v = Swirl { period: 3.0f64 }.velocity(&[0.5, 0.75], 0.0);
        assert!((v[0] + 1.0).abs() < 1e-14 && v[1].abs() < 1e-14);
    }

    #[test]
    fn deform_vanishes_at_t1() {
        let v = Deform3D { period: 2.0f64 }.velocity(&[0.2, 0.4, 0.7], 1.0);
        assert!(v.iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn swirl_time_reversal_and_boundary() {
        let s = Swirl { period: 8.0 };
        let d = Deform3D { period: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let t = rng.gen::<f64>() * 8.0;
            let a = s.velocity(&x, 8.0 - t);
            let b = s.velocity(&x, t);
            assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
            let edge = [[0.0, x[1]], [1.0, x[1]], [x[0], 0.0], [x[0], 1.0]];
            for e in edge {
                let v = s.velocity(&e, t);
                assert!(v[0].hypot(v[1]) < 1e-12);
            }
            let e3 = [x[0], 1.0, x[1]];
            let v3 = d.velocity(&e3, t);
            assert!(v3.iter().map(|c| c * c).sum::<f64>().sqrt() < 1e-12);
        }
    }

    #[test]
    fn mandelbrot_field_vanishes_on_boundary() {
        let f = MandelbrotField { period: 16.0 };
        for k in 0..=20 {
            let s = k as f64 / 20.0;
            for p in [[0.0, s], [1.0, s], [s, 0.0], [s, 1.0]] {
                let v = f.velocity(&p, 0.3);
                assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12, "{p:?} {v:?}");
            }
        }
    }

    #[test]
    fn constant_field_trace_is_exact() {
        let f = UniformField([0.3f64, 0.0]);
        let y = trace_backward_rk3(&f, &[0.5, 0.5], 0.0, 0.1);
        assert!((y[0] - 0.47).abs() < 1e-15 && y[1] == 0.5);
        let x = step_forward_rk3(&f, &[0.5, 0.5], 0.0, 0.1);
        assert!((x[0] - 0.53).abs() < 1e-15);
    }

    #[test]
    fn rotation_trace_order() {
        let rot = RigidRotation { center: [0.5, 0.5], omega: 1.0 };
        let x = [0.8, 0.6];
        let exact = |dt: f64| {
            let (s, c) = (-dt).sin_cos();
            let (dx, dy) = (x[0] - 0.5, x[1] - 0.5);
            [0.5 + c * dx - s * dy, 0.5 + s * dx + c * dy]
        };
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&dt| {
                let y = trace_backward_rk3(&rot, &x, 0.0, dt);
                let e = exact(dt);
                (y[0] - e[0]).hypot(y[1] - e[1])
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 3.8, "order {order}");
        }
        assert!(errs[0] < 0.1f64.powi(4));
    }

    #[test]
    fn trace_stays_within_speed_bound() {
        let s = Swirl { period: 4.0f64 };
        let x = [0.31, 0.62];
        for dt in [1e-2, 1e-4, 1e-6] {
            let y = trace_backward_rk3(&s, &x, 0.5, dt);
            assert!((y[0] - x[0]).hypot(y[1] - x[1]) <= 1.0 * dt + 1e-15);
        }
    }

    #[test]
    fn particles_zero_field_and_reset() {
        let mut p = ParticleSet::<f64, 2>::seed_uniform(&[0.0, 0.0], 1.0, 4, 1);
        let before = p.clone();
        p.advance(&ZeroField, 0.0, 0.1);
        assert_eq!(p, before);
        p.advance(&Swirl { period: 4.0 }, 0.0, 0.1);
        assert_ne!(p.current(), p.initial());
        p.reset();
        assert_eq!(p.current(), p.initial());
        p.reset();
        assert_eq!(p.current(), p.initial());
    }

    #[test]
    fn swirl_full_period_returns_particles() {
        let a = 4.0;
        let dt = a / 2048.0;
        let mut p = ParticleSet::<f64, 2>::seed_uniform(&[0.0, 0.0], 1.0, 8, 1);
        for k in 0..2048 {
            p.advance(&Swirl { period: a }, k as f64 * dt, dt);
        }
        for (c, i) in p.current().iter().zip(p.initial()) {
            assert!((c[0] - i[0]).hypot(c[1] - i[1]) < 1e-4);
        }
    }

    #[test]
    fn tracers_single_step_matches_particles() {
        let f = Swirl { period: 8.0 };
        let traj = track_tracers(&[[0.4, 0.3]], &f, 0.0, 0.1, 0.1);
        let p = advance_particles(ParticleSet::new(vec![[0.4, 0.3]]), &f, 0.0, 0.1);
        assert_eq!(traj[0].len(), 2);
        assert_eq!(traj[0][1], p.current()[0]);
        let still = track_tracers(&[[0.4, 0.3]], &ZeroField, 0.0, 1.0, 0.1);
        assert!(still[0].iter().all(|q| *q == [0.4, 0.3]));
    }

    #[test]
    fn step_count_rounds_up() {
        assert_eq!(step_count(0.0, 16.0, 1.0 / 256.0), 4096);
        assert_eq!(step_count(0.0, 1.0, 0.3), 4);
        assert_eq!(step_count(1.0, 1.0, 0.1), 0);
    }
}
