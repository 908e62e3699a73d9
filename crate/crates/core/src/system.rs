//! The common interface shared by affine families and fiber systems.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::param::ParamBox;
use crate::symbolic::{Alphabet, Letter};

/// A coded point `π(α)` at finite truncation depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedPoint {
    pub value: Vec<f64>,
    pub error_bound: f64,
    pub depth: usize,
}

/// A parameterized family of contractions of `X = [-1,1]^N` indexed by
/// letters, possibly reading a forward fiber address.
///
/// Words are backward words stored as written, `(a_{-n}, .., a_{-1})`. The
/// stage applied to `a_{-k}` reads the forward address
/// `a_{-k} .. a_{-1} 𝔞`, so the innermost map is applied first.
pub trait CodedSystem: Send + Sync {
    fn alphabet(&self) -> Alphabet;
    fn fiber_dim(&self) -> usize;
    fn param_box(&self) -> &ParamBox;
    /// Number of address letters a single map may read (1 = letter only).
    fn address_depth(&self) -> usize;
    /// `(γ', γ)` with `γ' < λ < γ` for every single-letter map.
    fn gamma_bounds(&self) -> (f64, f64);
    /// One stage: `x ↦ f_{p, address}(x)`; `address[0]` is the letter.
    fn step(&self, p: &[f64], address: &[Letter], x: &[f64], out: &mut [f64]) -> Result<()>;
    /// `Λ_{p,𝔞,α}`, the sup over the cube of the contraction rate of `ψ^α`.
    fn contraction_rate(&self, p: &[f64], fiber: &[Letter], word: &[Letter]) -> Result<f64>;
    /// Inflation of `X` defining `X'`.
    fn domain_margin(&self) -> f64 {
        CUBE_MARGIN
    }

    /// `(slope, offset)` of the letter map when it is affine on an interval
    /// fiber and reads no further address letters.
    fn affine_letter_map(&self, _p: &[f64], _letter: Letter) -> Option<(f64, f64)> {
        None
    }

    /// `ψ^α_{p,𝔞}(0)` for a finite word.
    fn code(&self, p: &[f64], fiber: &[Letter], word: &[Letter]) -> Result<Vec<f64>> {
        let origin = vec![0.0; self.fiber_dim()];
        self.compose_apply(p, fiber, word, &origin)
    }

    /// Applies `ψ^α_{p,𝔞}` to `x`, checking that intermediate points stay in
    /// the inflated cube.
    fn compose_apply(&self, p: &[f64], fiber: &[Letter], word: &[Letter], x: &[f64]) -> Result<Vec<f64>> {
        let addr = full_address(word, fiber, self.address_depth());
        let mut cur = x.to_vec();
        let mut next = vec![0.0; cur.len()];
        for i in 0..word.len() {
            self.step(p, &addr[i..], &cur, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
            if !in_cube(&cur, 1.0 + self.domain_margin()) {
                return Err(LabError::Domain {
                    stage: i,
                    msg: format!("orbit left the inflated cube: {cur:?}"),
                });
            }
        }
        Ok(cur)
    }
}

/// Inflation of `X` used for `X'` unless a system says otherwise.
pub const CUBE_MARGIN: f64 = 0.05;

pub fn in_cube(x: &[f64], half_width: f64) -> bool {
    x.iter().all(|v| v.abs() <= half_width)
}

/// `word ++ fiber`, padded with letter 0 so that every stage can read
/// `depth` address letters.
pub fn full_address(word: &[Letter], fiber: &[Letter], depth: usize) -> Vec<Letter> {
    let mut addr = Vec::with_capacity(word.len() + fiber.len().max(depth));
    addr.extend_from_slice(word);
    addr.extend_from_slice(fiber);
    let need = word.len() + depth.saturating_sub(1);
    while addr.len() < need {
        addr.push(0);
    }
    addr
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_is_padded_for_the_outermost_stage() {
        let a = full_address(&[2, 1], &[], 3);
        // outermost stage reads a[1..] and needs 3 letters
        assert_eq!(a, vec![2, 1, 0, 0]);
        let a = full_address(&[2, 1], &[5, 6, 7], 1);
        assert_eq!(a, vec![2, 1, 5, 6, 7]);
    }
}
