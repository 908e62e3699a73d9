//! Truncated multivariate Taylor arithmetic.
//!
//! Coefficients are normalized: `c[m] = ∂^m f / m!`. The raw-partial
//! convention used by [`super::JetVector`] is converted at the boundary.

use std::collections::HashMap;
use std::sync::Arc;

use crate::expr::Scalar;

/// Multi-indices `(i_1, .., i_d)` with total degree at most `s`, in graded
/// order: by total degree, then descending lexicographic within a degree.
#[derive(Debug, Clone, PartialEq)]
pub struct JetIndexSet {
    d: usize,
    s: usize,
    indices: Vec<Vec<u32>>,
    lookup: HashMap<Vec<u32>, usize>,
    mul_table: Vec<(usize, usize, usize)>,
}

impl JetIndexSet {
    pub fn new(d: usize, s: usize) -> Arc<JetIndexSet> {
        assert!(d >= 1, "jet index set needs at least one variable");
        let mut indices = Vec::new();
        for deg in 0..=s as u32 {
            let mut level = Vec::new();
            compositions(d, deg, &mut Vec::with_capacity(d), &mut level);
            // compositions yields descending lexicographic order already
            indices.extend(level);
        }
        let lookup: HashMap<Vec<u32>, usize> =
            indices.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        let mut mul_table = Vec::new();
        for (i, a) in indices.iter().enumerate() {
            for (j, b) in indices.iter().enumerate() {
                let sum: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                if let Some(&k) = lookup.get(&sum) {
                    mul_table.push((i, j, k));
                }
            }
        }
        Arc::new(JetIndexSet { d, s, indices, lookup, mul_table })
    }

    pub fn vars(&self) -> usize {
        self.d
    }

    pub fn order(&self) -> usize {
        self.s
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    pub fn position(&self, m: &[u32]) -> Option<usize> {
        self.lookup.get(m).copied()
    }

    pub fn degree(&self, i: usize) -> u32 {
        self.indices[i].iter().sum()
    }

    /// `m! = Π m_k!`
    pub fn factorial(&self, i: usize) -> f64 {
        self.indices[i].iter().map(|&k| (1..=k).map(f64::from).product::<f64>()).product()
    }
}

fn compositions(d: usize, deg: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == d {
        let mut m = prefix.clone();
        m.push(deg);
        out.push(m);
        return;
    }
    for first in (0..=deg).rev() {
        prefix.push(first);
        compositions(d, deg - first, prefix, out);
        prefix.pop();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taylor {
    set: Arc<JetIndexSet>,
    coeffs: Vec<f64>,
}

impl Taylor {
    pub fn constant(set: &Arc<JetIndexSet>, v: f64) -> Taylor {
        let mut coeffs = vec![0.0; set.len()];
        coeffs[0] = v;
        Taylor { set: set.clone(), coeffs }
    }

    /// `v + t_i`, the `i`-th coordinate variable expanded at `v`.
    pub fn variable(set: &Arc<JetIndexSet>, i: usize, v: f64) -> Taylor {
        let mut t = Taylor::constant(set, v);
        if set.order() >= 1 {
            let mut m = vec![0u32; set.vars()];
            m[i] = 1;
            let k = set.position(&m).expect("degree-one index present");
            t.coeffs[k] = 1.0;
        }
        t
    }

    pub fn from_coeffs(set: &Arc<JetIndexSet>, coeffs: Vec<f64>) -> Taylor {
        assert_eq!(coeffs.len(), set.len());
        Taylor { set: set.clone(), coeffs }
    }

    pub fn set(&self) -> &Arc<JetIndexSet> {
        &self.set
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, m: &[u32]) -> f64 {
        self.set.position(m).map_or(0.0, |k| self.coeffs[k])
    }

    fn zip(&self, o: &Taylor, f: impl Fn(f64, f64) -> f64) -> Taylor {
        debug_assert!(Arc::ptr_eq(&self.set, &o.set) || *self.set == *o.set);
        let coeffs = self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| f(*a, *b)).collect();
        Taylor { set: self.set.clone(), coeffs }
    }

    /// Applies a univariate function given its derivatives at the constant
    /// term: `Σ_k f^{(k)}(a_0)/k! · h^k` with `h` the nilpotent part.
    fn compose_univariate(&self, derivs: &[f64]) -> Taylor {
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let mut out = Taylor::constant(&self.set, derivs[0]);
        let mut power = Taylor::constant(&self.set, 1.0);
        let mut fact = 1.0;
        for (k, dk) in derivs.iter().enumerate().skip(1) {
            power = power.mul(&h);
            fact *= k as f64;
            let w = dk / fact;
            for (o, p) in out.coeffs.iter_mut().zip(&power.coeffs) {
                *o += w * p;
            }
        }
        out
    }
}

impl Scalar for Taylor {
    fn lift(&self, v: f64) -> Taylor {
        Taylor::constant(&self.set, v)
    }

    fn value(&self) -> f64 {
        self.coeffs[0]
    }

    fn add(&self, o: &Taylor) -> Taylor {
        self.zip(o, |a, b| a + b)
    }

    fn sub(&self, o: &Taylor) -> Taylor {
        self.zip(o, |a, b| a - b)
    }

    fn mul(&self, o: &Taylor) -> Taylor {
        let mut coeffs = vec![0.0; self.set.len()];
        for &(i, j, k) in &self.set.mul_table {
            coeffs[k] += self.coeffs[i] * o.coeffs[j];
        }
        Taylor { set: self.set.clone(), coeffs }
    }

    fn neg(&self) -> Taylor {
        self.scale(-1.0)
    }

    fn scale(&self, k: f64) -> Taylor {
        Taylor { set: self.set.clone(), coeffs: self.coeffs.iter().map(|c| c * k).collect() }
    }

    fn sin(&self) -> Taylor {
        let (s, c) = self.coeffs[0].sin_cos();
        let cycle = [s, c, -s, -c];
        let derivs: Vec<f64> = (0..=self.set.order()).map(|k| cycle[k % 4]).collect();
        self.compose_univariate(&derivs)
    }

    fn cos(&self) -> Taylor {
        let (s, c) = self.coeffs[0].sin_cos();
        let cycle = [c, -s, -c, s];
        let derivs: Vec<f64> = (0..=self.set.order()).map(|k| cycle[k % 4]).collect();
        self.compose_univariate(&derivs)
    }

    fn exp(&self) -> Taylor {
        let e = self.coeffs[0].exp();
        self.compose_univariate(&vec![e; self.set.order() + 1])
    }
}
