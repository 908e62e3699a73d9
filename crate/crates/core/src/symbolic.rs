//! Words over a finite alphabet, shifts, cylinders and the sequence metric.
//!
//! Storage convention: letters are stored in index order as written.
//! A forward word `(a_0, a_1, ..)` keeps its origin letter first; a backward
//! word `(a_{-n}, .., a_{-1})` keeps the letter adjacent to the origin last.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type Letter = u16;

/// Default cap on the number of words a single enumeration may produce.
pub const DEFAULT_ENUMERATION_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alphabet {
    size: usize,
}

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(LabError::Invariant(format!(
                "alphabet must have at least 2 letters, got {size}"
            )));
        }
        if size > Letter::MAX as usize {
            return Err(LabError::Range(format!("alphabet size {size} too large")));
        }
        Ok(Alphabet { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn letters(&self) -> impl Iterator<Item = Letter> {
        (0..self.size).map(|a| a as Letter)
    }

    /// Number of words of length `n`, as a float so that overflow is visible.
    pub fn word_count(&self, n: usize) -> f64 {
        (self.size as f64).powi(n as i32)
    }

    /// Errors with a resource error when `size^n` exceeds `cap`.
    pub fn check_cap(&self, n: usize, cap: u64) -> Result<usize> {
        let count = self.word_count(n);
        if count > cap as f64 {
            return Err(LabError::Resource { requested: count, cap });
        }
        Ok(count as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FiniteWord {
    letters: Vec<Letter>,
    orientation: Orientation,
}

impl FiniteWord {
    pub fn forward(letters: Vec<Letter>) -> Self {
        FiniteWord { letters, orientation: Orientation::Forward }
    }

    pub fn backward(letters: Vec<Letter>) -> Self {
        FiniteWord { letters, orientation: Orientation::Backward }
    }

    pub fn empty(orientation: Orientation) -> Self {
        FiniteWord { letters: Vec::new(), orientation }
    }

    /// Builds a word and checks every letter against the alphabet.
    pub fn checked(letters: Vec<Letter>, orientation: Orientation, alphabet: Alphabet) -> Result<Self> {
        if let Some(bad) = letters.iter().find(|&&l| l as usize >= alphabet.size()) {
            return Err(LabError::Range(format!(
                "letter {bad} outside alphabet of size {}",
                alphabet.size()
            )));
        }
        Ok(FiniteWord { letters, orientation })
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    pub fn into_letters(self) -> Vec<Letter> {
        self.letters
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    /// Letter at distance `i` from the origin (`i = 0` is `a_0` for forward
    /// words and `a_{-1}` for backward words).
    pub fn from_origin(&self, i: usize) -> Option<Letter> {
        match self.orientation {
            Orientation::Forward => self.letters.get(i).copied(),
            Orientation::Backward => {
                let n = self.letters.len();
                if i < n {
                    Some(self.letters[n - 1 - i])
                } else {
                    None
                }
            }
        }
    }

    /// The `n` letters closest to the origin (`α|n`).
    pub fn truncate_to(&self, n: usize) -> FiniteWord {
        let n = n.min(self.len());
        let letters = match self.orientation {
            Orientation::Forward => self.letters[..n].to_vec(),
            Orientation::Backward => self.letters[self.len() - n..].to_vec(),
        };
        FiniteWord { letters, orientation: self.orientation }
    }

    /// Concatenation `self other` as written: for backward words `other`
    /// ends up adjacent to the origin.
    pub fn concat(&self, other: &FiniteWord) -> FiniteWord {
        let mut letters = self.letters.clone();
        letters.extend_from_slice(&other.letters);
        FiniteWord { letters, orientation: self.orientation }
    }
}

/// How a backward-infinite sequence continues beyond its explicit head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Constant(Letter),
    /// Repeats the pattern as written, so the pattern's last letter sits
    /// next to the head.
    Periodic(Vec<Letter>),
}

/// A backward-infinite word: explicit letters nearest the origin plus a tail
/// convention for everything further out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackwardSeq {
    pub head: Vec<Letter>,
    pub tail: Tail,
}

impl BackwardSeq {
    pub fn new(head: Vec<Letter>, tail: Tail) -> Self {
        if let Tail::Periodic(pattern) = &tail {
            assert!(!pattern.is_empty(), "periodic tail needs a nonempty pattern");
        }
        BackwardSeq { head, tail }
    }

    pub fn constant(letter: Letter) -> Self {
        BackwardSeq { head: Vec::new(), tail: Tail::Constant(letter) }
    }

    pub fn periodic(pattern: Vec<Letter>) -> Self {
        BackwardSeq::new(Vec::new(), Tail::Periodic(pattern))
    }

    /// Letter at distance `i` from the origin (`i = 0` is `a_{-1}`).
    pub fn from_origin(&self, i: usize) -> Letter {
        let n = self.head.len();
        if i < n {
            return self.head[n - 1 - i];
        }
        match &self.tail {
            Tail::Constant(l) => *l,
            Tail::Periodic(pattern) => {
                let j = (i - n) % pattern.len();
                pattern[pattern.len() - 1 - j]
            }
        }
    }

    /// The truncation `α|depth`, stored as written.
    pub fn prefix(&self, depth: usize) -> Vec<Letter> {
        (0..depth).rev().map(|i| self.from_origin(i)).collect()
    }
}

/// Which sequence space a cylinder lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceSpace {
    Forward,
    Backward,
    Bilateral,
}

/// Cylinder `[α]` of all sequences whose letters at the word's positions
/// agree with the word. The empty word gives the whole space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CylinderSpec {
    pub word: FiniteWord,
    pub space: SequenceSpace,
}

impl CylinderSpec {
    pub fn is_whole_space(&self) -> bool {
        self.word.is_empty()
    }

    /// Membership of a finite representative (same orientation as the
    /// cylinder word) given as letters near the origin.
    pub fn contains(&self, seq: &FiniteWord) -> bool {
        (0..self.word.len()).all(|i| self.word.from_origin(i) == seq.from_origin(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetricParams {
    base: f64,
}

impl Default for SequenceMetricParams {
    fn default() -> Self {
        SequenceMetricParams { base: 0.5 }
    }
}

impl SequenceMetricParams {
    pub fn new(base: f64) -> Result<Self> {
        if !(base > 0.0 && base < 1.0) {
            return Err(LabError::Invariant(format!("metric base must lie in (0,1), got {base}")));
        }
        Ok(SequenceMetricParams { base })
    }

    pub fn base(&self) -> f64 {
        self.base
    }
}

/// `σ^k` on a finite representative: drops the `k` letters nearest the origin.
pub fn shift(word: &FiniteWord, k: usize) -> Result<FiniteWord> {
    if k > word.len() {
        return Err(LabError::Range(format!("shift by {k} on a word of length {}", word.len())));
    }
    let letters = match word.orientation {
        Orientation::Forward => word.letters[k..].to_vec(),
        Orientation::Backward => word.letters[..word.len() - k].to_vec(),
    };
    Ok(FiniteWord { letters, orientation: word.orientation })
}

/// `D^q` where `q` counts agreeing letters from the origin, compared over the
/// common defined indices only; 0 when all compared letters agree.
pub fn sequence_distance(a: &FiniteWord, b: &FiniteWord, params: SequenceMetricParams) -> Result<f64> {
    if a.orientation != b.orientation {
        return Err(LabError::Contract("sequence_distance on words of different orientation".into()));
    }
    let common = a.len().min(b.len());
    match (0..common).find(|&i| a.from_origin(i) != b.from_origin(i)) {
        Some(q) => Ok(params.base.powi(q as i32)),
        None => Ok(0.0),
    }
}

/// Longest common suffix of two backward words and whether the pair falls
/// in the split stratum `C_ρ` (next letters differ).
pub fn pair_stratum(alpha: &FiniteWord, beta: &FiniteWord) -> Result<(FiniteWord, bool)> {
    if alpha.orientation != Orientation::Backward || beta.orientation != Orientation::Backward {
        return Err(LabError::Contract("pair_stratum expects backward words".into()));
    }
    if alpha.len() != beta.len() || alpha.is_empty() {
        return Err(LabError::Contract(format!(
            "pair_stratum expects equal nonzero lengths, got {} and {}",
            alpha.len(),
            beta.len()
        )));
    }
    let n = alpha.len();
    let m = (0..n).take_while(|&i| alpha.from_origin(i) == beta.from_origin(i)).count();
    let rho = alpha.truncate_to(m);
    Ok((rho, m < n))
}

/// Lexicographic enumeration of all words of a fixed length.
#[derive(Debug, Clone)]
pub struct WordEnumerator {
    k: Letter,
    current: Option<Vec<Letter>>,
    orientation: Orientation,
}

impl Iterator for WordEnumerator {
    type Item = FiniteWord;

    fn next(&mut self) -> Option<FiniteWord> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().unwrap();
        let mut i = cur.len();
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if cur[i] + 1 < self.k {
                cur[i] += 1;
                break;
            }
            cur[i] = 0;
        }
        Some(FiniteWord { letters: out, orientation: self.orientation })
    }
}

pub fn enumerate_words(alphabet: Alphabet, n: usize, orientation: Orientation) -> Result<WordEnumerator> {
    enumerate_words_capped(alphabet, n, orientation, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_words_capped(
    alphabet: Alphabet,
    n: usize,
    orientation: Orientation,
    cap: u64,
) -> Result<WordEnumerator> {
    alphabet.check_cap(n, cap)?;
    Ok(WordEnumerator { k: alphabet.size() as Letter, current: Some(vec![0; n]), orientation })
}

/// Word of length `n` at lexicographic position `index` (as written).
pub fn word_at(alphabet: Alphabet, n: usize, mut index: usize) -> Vec<Letter> {
    let k = alphabet.size();
    let mut letters = vec![0 as Letter; n];
    for slot in letters.iter_mut().rev() {
        *slot = (index % k) as Letter;
        index /= k;
    }
    letters
}

/// Lexicographic position of a word (inverse of [`word_at`]).
pub fn word_index(alphabet: Alphabet, letters: &[Letter]) -> usize {
    letters.iter().fold(0usize, |acc, &l| acc * alphabet.size() + l as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fw(l: &[Letter]) -> FiniteWord {
        FiniteWord::forward(l.to_vec())
    }

    fn bw(l: &[Letter]) -> FiniteWord {
        FiniteWord::backward(l.to_vec())
    }

    #[test]
    fn alphabet_needs_two_letters() {
        assert!(Alphabet::new(1).is_err());
        assert!(Alphabet::new(2).is_ok());
    }

    #[test]
    fn shift_examples() {
        assert_eq!(shift(&fw(&[1, 2, 3]), 1).unwrap(), fw(&[2, 3]));
        assert_eq!(shift(&bw(&[4, 5, 6]), 0).unwrap(), bw(&[4, 5, 6]));
        assert!(shift(&bw(&[4, 5, 6]), 3).unwrap().is_empty());
        assert_eq!(shift(&bw(&[4, 5, 6]), 1).unwrap(), bw(&[4, 5]));
        assert!(matches!(shift(&fw(&[1]), 2), Err(LabError::Range(_))));
    }

    #[test]
    fn distance_examples() {
        let d = SequenceMetricParams::new(0.5).unwrap();
        assert_eq!(sequence_distance(&fw(&[1, 2, 3]), &fw(&[1, 2, 3]), d).unwrap(), 0.0);
        assert_eq!(sequence_distance(&fw(&[1, 2]), &fw(&[1, 3]), d).unwrap(), 0.5);
        assert_eq!(sequence_distance(&fw(&[2, 2]), &fw(&[1, 2]), d).unwrap(), 1.0);
        assert!(matches!(
            sequence_distance(&fw(&[1]), &bw(&[1]), d),
            Err(LabError::Contract(_))
        ));
        assert!(SequenceMetricParams::new(1.0).is_err());
    }

    #[test]
    fn stratum_examples() {
        let (rho, split) = pair_stratum(&bw(&[7, 3, 5]), &bw(&[2, 3, 5])).unwrap();
        assert_eq!(rho, bw(&[3, 5]));
        assert!(split);
        let (rho, split) = pair_stratum(&bw(&[1, 1, 1]), &bw(&[1, 1, 1])).unwrap();
        assert_eq!(rho, bw(&[1, 1, 1]));
        assert!(!split);
        let (rho, split) = pair_stratum(&bw(&[2, 9]), &bw(&[4, 9])).unwrap();
        assert_eq!(rho, bw(&[9]));
        assert!(split);
    }

    #[test]
    fn enumeration_examples() {
        let a2 = Alphabet::new(2).unwrap();
        let a3 = Alphabet::new(3).unwrap();
        let w: Vec<_> = enumerate_words(a2, 1, Orientation::Forward).unwrap().collect();
        assert_eq!(w, vec![fw(&[0]), fw(&[1])]);
        let w: Vec<_> = enumerate_words(a3, 0, Orientation::Forward).unwrap().collect();
        assert_eq!(w, vec![fw(&[])]);
        let w: Vec<_> = enumerate_words(a2, 3, Orientation::Forward).unwrap().collect();
        assert_eq!(w.len(), 8);
        assert_eq!(w[0], fw(&[0, 0, 0]));
        assert_eq!(w[7], fw(&[1, 1, 1]));
        for (i, word) in w.iter().enumerate() {
            assert_eq!(word_at(a2, 3, i), word.letters());
            assert_eq!(word_index(a2, word.letters()), i);
        }
        assert!(matches!(
            enumerate_words_capped(a2, 20, Orientation::Forward, 1000),
            Err(LabError::Resource { .. })
        ));
    }

    #[test]
    fn backward_sequences_extend_by_tail() {
        let s = BackwardSeq::new(vec![3, 4], Tail::Periodic(vec![0, 1, 2]));
        assert_eq!(s.prefix(7), vec![0, 1, 2, 0, 1, 2, 3, 4][1..].to_vec());
        assert_eq!(s.from_origin(0), 4);
        assert_eq!(s.from_origin(2), 2);
        let c = BackwardSeq::constant(1);
        assert_eq!(c.prefix(3), vec![1, 1, 1]);
    }

    #[test]
    fn cylinder_of_empty_word_is_everything() {
        let c = CylinderSpec { word: bw(&[]), space: SequenceSpace::Backward };
        assert!(c.is_whole_space());
        assert!(c.contains(&bw(&[1, 0, 1])));
        let c = CylinderSpec { word: bw(&[0, 1]), space: SequenceSpace::Backward };
        assert!(c.contains(&bw(&[1, 0, 1])));
        assert!(!c.contains(&bw(&[0, 0])));
    }

    /// Strata plus the diagonal partition all ordered pairs of length-n words.
    #[test]
    fn strata_partition_pairs_exhaustively() {
        for k in 2..=3usize {
            let a = Alphabet::new(k).unwrap();
            for n in 1..=5usize {
                let words: Vec<_> = enumerate_words(a, n, Orientation::Backward).unwrap().collect();
                let mut split_count = vec![0u64; n];
                let mut diagonal = 0u64;
                for x in &words {
                    for y in &words {
                        let (rho, split) = pair_stratum(x, y).unwrap();
                        if split {
                            split_count[rho.len()] += 1;
                        } else {
                            assert_eq!(x, y);
                            diagonal += 1;
                        }
                    }
                }
                assert_eq!(diagonal, (k as u64).pow(n as u32));
                let total: u64 = split_count.iter().sum::<u64>() + diagonal;
                assert_eq!(total, (k as u64).pow(2 * n as u32));
                // each stratum of length m holds k^m (k^2 - k) k^{2(n-m-1)} pairs
                for (m, &c) in split_count.iter().enumerate() {
                    let expect = (k as u64).pow(m as u32)
                        * (k as u64 * k as u64 - k as u64)
                        * (k as u64).pow(2 * (n - m - 1) as u32);
                    assert_eq!(c, expect);
                }
            }
        }
    }

    fn word_strategy(len: usize) -> impl Strategy<Value = Vec<Letter>> {
        proptest::collection::vec(0u16..3, len)
    }

    proptest! {
        #[test]
        fn shift_composes(w in proptest::collection::vec(0u16..4, 0..12), j in 0usize..12, k in 0usize..12) {
            for word in [fw(&w), bw(&w)] {
                if j + k <= word.len() {
                    let lhs = shift(&shift(&word, j).unwrap(), k).unwrap();
                    prop_assert_eq!(lhs, shift(&word, j + k).unwrap());
                }
            }
        }

        #[test]
        fn distance_is_an_ultrametric(a in word_strategy(8), b in word_strategy(8), c in word_strategy(8)) {
            let d = SequenceMetricParams::default();
            for (x, y, z) in [(fw(&a), fw(&b), fw(&c)), (bw(&a), bw(&b), bw(&c))] {
                let dxy = sequence_distance(&x, &y, d).unwrap();
                let dyx = sequence_distance(&y, &x, d).unwrap();
                let dyz = sequence_distance(&y, &z, d).unwrap();
                let dxz = sequence_distance(&x, &z, d).unwrap();
                prop_assert!(dxy >= 0.0);
                prop_assert_eq!(dxy, dyx);
                prop_assert!(dxz <= dxy.max(dyz));
            }
        }
    }
}
