//! Flow maps stored as identity plus a Hermite displacement field.
//!
//! The displacement `χ(x) − x` is periodic whenever the flow is, which a
//! map stored directly is not. The identity itself is exact in this form.

use crate::error::{Error, Result};
use crate::hermite::{GridGeometry, HermiteField};
use crate::scalar::{is_finite_point, Point, Scalar};

/// A map `χ: R^D → R^D`, `χ(x) = x + d(x)` with `d` a `D`-component interpolant.
#[derive(Clone, Debug, PartialEq)]
pub struct MapField<T, const D: usize> {
    displacement: HermiteField<T, D>,
}

impl<T: Scalar, const D: usize> MapField<T, D> {
    pub fn identity(geometry: GridGeometry<T, D>) -> Self {
        Self { displacement: HermiteField::zeros(geometry, D) }
    }

    pub fn from_displacement(displacement: HermiteField<T, D>) -> Result<Self> {
        if displacement.components() != D {
            return Err(Error::GeometryMismatch(format!(
                "map displacement needs {D} components, got {}",
                displacement.components()
            )));
        }
        Ok(Self { displacement })
    }

    /// Samples an arbitrary map, with finite-difference node derivatives.
    pub fn from_fn<F>(geometry: GridGeometry<T, D>, f: F) -> Self
    where
        F: Fn(&Point<T, D>) -> Point<T, D>,
    {
        let displacement = HermiteField::from_fn(geometry, D, |x, out| {
            let y = f(x);
            for a in 0..D {
                out[a] = y[a] - x[a];
            }
        });
        Self { displacement }
    }

    pub fn displacement(&self) -> &HermiteField<T, D> {
        &self.displacement
    }

    pub fn into_displacement(self) -> HermiteField<T, D> {
        self.displacement
    }

    pub fn geometry(&self) -> &GridGeometry<T, D> {
        self.displacement.geometry()
    }

    pub fn cells(&self) -> usize {
        self.geometry().cells()
    }

    /// True when every displacement coefficient is exactly zero.
    pub fn is_identity(&self) -> bool {
        self.displacement.data().iter().all(|v| *v == T::zero())
    }

    pub fn try_eval(&self, x: &Point<T, D>) -> Result<Point<T, D>> {
        if !is_finite_point(x) {
            return Err(Error::NonFinite { step: None });
        }
        Ok(self.eval(x))
    }

    /// `χ(x)`. Non-finite input propagates as non-finite output.
    #[inline]
    pub fn eval(&self, x: &Point<T, D>) -> Point<T, D> {
        if !is_finite_point(x) {
            return [T::nan(); D];
        }
        let mut d = [T::zero(); D];
        self.displacement.eval_unchecked(x, &mut d);
        std::array::from_fn(|a| x[a] + d[a])
    }

    /// `χ(x)` and its Jacobian, `jac[i][j] = ∂χ_i / ∂x_j`.
    #[inline]
    pub fn eval_with_jacobian(&self, x: &Point<T, D>) -> (Point<T, D>, [[T; D]; D]) {
        if !is_finite_point(x) {
            return ([T::nan(); D], [[T::nan(); D]; D]);
        }
        let mut d = [T::zero(); D];
        let mut jac = [[T::zero(); D]; D];
        self.displacement.eval_gradient_unchecked(x, &mut d, &mut jac);
        for (a, row) in jac.iter_mut().enumerate() {
            row[a] = row[a] + T::one();
        }
        (std::array::from_fn(|a| x[a] + d[a]), jac)
    }

    /// Re-expresses the map on another grid over the same box.
    pub fn resample(&self, target: &GridGeometry<T, D>) -> Result<Self> {
        Ok(Self { displacement: self.displacement.resample(target)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::Boundary;

    #[test]
    fn identity_evaluates_exactly() {
        let m = MapField::<f64, 2>::identity(GridGeometry::unit(8, Boundary::Periodic));
        assert!(m.is_identity());
        let p = [1.37, -0.21];
        assert_eq!(m.eval(&p), p);
        let (_, j) = m.eval_with_jacobian(&p);
        assert_eq!(j, [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn sampled_translation_on_periodic_grid() {
        let g = GridGeometry::<f64, 2>::unit(8, Boundary::Periodic);
        let m = MapField::from_fn(g, |x| [x[0] - 0.1, x[1] + 0.05]);
        let y = m.eval(&[0.95, 0.99]);
        assert!((y[0] - 0.85).abs() < 1e-12 && (y[1] - 1.04).abs() < 1e-12);
    }

    #[test]
    fn nan_propagates() {
        let m = MapField::<f64, 2>::identity(GridGeometry::unit(4, Boundary::Clamped));
        assert!(m.eval(&[f64::NAN, 0.0])[0].is_nan());
        assert!(m.try_eval(&[f64::NAN, 0.0]).is_err());
    }
}
