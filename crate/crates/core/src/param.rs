//! Closed parameter boxes and their inflated neighbourhoods.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Default inflation of the parameter box, as a fraction of each side.
pub const DEFAULT_PARAM_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
    margin: f64,
}

impl ParamBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(LabError::Config(format!(
                "parameter box bounds have mismatched dimensions {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(LabError::Config("parameter box needs finite lo <= hi".into()));
        }
        Ok(ParamBox { lo, hi, margin: DEFAULT_PARAM_MARGIN })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        ParamBox::new(vec![lo], vec![hi])
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin.max(0.0);
        self
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (a, b))| *a <= *x && *x <= *b)
    }

    /// Membership in the open neighbourhood on which maps stay defined.
    pub fn contains_extended(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (a, b))| {
                let m = self.margin * (b - a);
                *a - m <= *x && *x <= *b + m
            })
    }

    pub fn check_extended(&self, p: &[f64]) -> Result<()> {
        if self.contains_extended(p) {
            Ok(())
        } else {
            Err(LabError::Domain { stage: 0, msg: format!("parameter {p:?} outside the extended box") })
        }
    }

    /// Sub-box `B(p0, delta)` in the sup norm, clipped to this box.
    pub fn ball(&self, p0: &[f64], delta: f64) -> Result<ParamBox> {
        if !self.contains(p0) {
            return Err(LabError::Contract(format!("ball centre {p0:?} outside the parameter box")));
        }
        let lo = p0.iter().zip(&self.lo).map(|(c, a)| (c - delta).max(*a)).collect();
        let hi = p0.iter().zip(&self.hi).map(|(c, b)| (c + delta).min(*b)).collect();
        Ok(ParamBox { lo, hi, margin: self.margin })
    }

    /// Midpoint grid with `count` points along a one-dimensional box.
    pub fn grid_1d(&self, count: usize) -> Vec<f64> {
        let (a, b) = (self.lo[0], self.hi[0]);
        (0..count).map(|i| a + (b - a) * (i as f64 + 0.5) / count as f64).collect()
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lo.iter().zip(&self.hi)).map(|(t, (a, b))| a + t * (b - a)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extended_box_inflates_by_margin() {
        let b = ParamBox::interval(0.0, 1.0).unwrap();
        assert!(b.contains_extended(&[1.04]));
        assert!(!b.contains_extended(&[1.06]));
        assert!(!b.contains(&[1.04]));
        assert_eq!(b.volume(), 1.0);
        let ball = b.ball(&[0.9], 0.2).unwrap();
        assert_eq!(ball.lo(), &[0.7]);
        assert_eq!(ball.hi(), &[1.0]);
        assert!(ParamBox::interval(1.0, 0.0).is_err());
    }
}
