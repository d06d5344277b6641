//! Mixed-partial jets of compositions `f ∘ X`.
//!
//! A jet here holds, per component, `∂^m g` for every subset `m` of the axes,
//! indexed by bit mask exactly like a Hermite node block. Composition uses the
//! set-partition form of the multivariate chain rule:
//!
//! ```text
//! ∂_m (f ∘ X) = Σ_{π ∈ Π(m)} Σ_{i_1..i_k} (∂_{i_1}..∂_{i_k} f)(X) Π_j ∂_{B_j} X_{i_j}
//! ```

use crate::hermite::{derivative_slot, derivative_slots};
use crate::scalar::Scalar;

/// All set partitions of the bits in `mask`, each block a bit mask.
pub(crate) fn set_partitions(mask: usize) -> Vec<Vec<usize>> {
    if mask == 0 {
        return vec![Vec::new()];
    }
    let low = mask & mask.wrapping_neg();
    let rest = mask & !low;
    let mut out = Vec::new();
    // every subset of `rest` joins the lowest bit in its block
    let mut sub = rest;
    loop {
        for mut tail in set_partitions(rest & !sub) {
            tail.insert(0, low | sub);
            out.push(tail);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    out
}

/// Precomputed partitions of every mask in `D` dimensions.
#[derive(Clone, Debug)]
pub(crate) struct ChainRule<const D: usize> {
    partitions: Vec<Vec<Vec<usize>>>,
}

impl<const D: usize> Default for ChainRule<D> {
    fn default() -> Self {
        Self::new()
    }
}

impl<const D: usize> ChainRule<D> {
    pub const COEFFS: usize = 1 << D;

    pub fn new() -> Self {
        Self { partitions: (0..Self::COEFFS).map(set_partitions).collect() }
    }

    /// Jet of `f ∘ X`.
    ///
    /// `x_jet[i * 2^D + m]` is `∂_m X_i`, `derivs[c * 4^D + slot]` the
    /// derivative table of `f_c` at `X(x)`, and `out[c * 2^D + m]` receives the
    /// composed jet. Only slots of total order up to `D` are read.
    pub fn compose<T: Scalar>(&self, x_jet: &[T], derivs: &[T], components: usize, out: &mut [T]) {
        let nc = Self::COEFFS;
        let slots = derivative_slots(D);
        for c in 0..components {
            let table = &derivs[c * slots..(c + 1) * slots];
            out[c * nc] = table[0];
            for m in 1..nc {
                let mut acc = T::zero();
                for blocks in &self.partitions[m] {
                    let k = blocks.len();
                    let combos = D.pow(k as u32);
                    for mut code in 0..combos {
                        let mut alpha = [0usize; D];
                        let mut w = T::one();
                        for &b in blocks {
                            let i = code % D;
                            code /= D;
                            alpha[i] += 1;
                            w = w * x_jet[i * nc + b];
                        }
                        if w != T::zero() {
                            acc = acc + w * table[derivative_slot(&alpha)];
                        }
                    }
                }
                out[c * nc + m] = acc;
            }
        }
    }
}
