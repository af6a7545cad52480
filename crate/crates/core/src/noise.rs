//! Synthetic label corruption with Flip, Flip2 and Flip3 transition matrices.
//!
//! A class is corrupted with probability `p`; the corrupted label is spread
//! evenly over the class's `k` designated targets (`k = 1, 2, 3`), so the
//! observed label differs from the true one with probability exactly `p`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Flip,
    Flip2,
    Flip3,
}

impl NoiseKind {
    /// Number of corruption targets per class.
    pub fn targets(self) -> usize {
        match self {
            NoiseKind::None => 0,
            NoiseKind::Flip => 1,
            NoiseKind::Flip2 => 2,
            NoiseKind::Flip3 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Flip => "flip",
            NoiseKind::Flip2 => "flip2",
            NoiseKind::Flip3 => "flip3",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "flip" => Ok(NoiseKind::Flip),
            "flip2" => Ok(NoiseKind::Flip2),
            "flip3" => Ok(NoiseKind::Flip3),
            other => Err(Error::Spec(format!("unknown noise kind {other:?}"))),
        }
    }
}

/// Per-class target lists; `targets[i]` are the classes `i` may be flipped to.
pub type Pairing = Vec<Vec<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub p: f64,
    /// `None` selects [`default_pairing`].
    pub pairing: Option<Pairing>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        Self {
            kind: NoiseKind::None,
            p: 0.0,
            pairing: None,
            seed: 0,
        }
    }
}

/// Cyclic successors: class `i` targets `i+1, …, i+k (mod c)`.
pub fn default_pairing(c: usize, kind: NoiseKind) -> Result<Pairing> {
    let k = kind.targets();
    if k > 0 && c < k + 1 {
        return Err(Error::Spec(format!(
            "{} needs at least {} classes, got {c}",
            kind.name(),
            k + 1
        )));
    }
    Ok((0..c)
        .map(|i| (1..=k).map(|j| (i + j) % c).collect())
        .collect())
}

fn validate_pairing(pairing: &Pairing, c: usize, kind: NoiseKind) -> Result<()> {
    let k = kind.targets();
    if pairing.len() != c {
        return Err(Error::Spec(format!(
            "pairing lists {} classes, dataset has {c}",
            pairing.len()
        )));
    }
    for (i, targets) in pairing.iter().enumerate() {
        if targets.len() != k {
            return Err(Error::Spec(format!(
                "class {i} has {} targets, {} needs {k}",
                targets.len(),
                kind.name()
            )));
        }
        for (j, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::Spec(format!("class {i} target {t} out of range")));
            }
            if t == i {
                return Err(Error::Spec(format!("class {i} targets itself")));
            }
            if targets[..j].contains(&t) {
                return Err(Error::Spec(format!("class {i} repeats target {t}")));
            }
        }
    }
    Ok(())
}

/// Row-stochastic `c×c` matrix, `T[i][j] = Pr(observed = j | true = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    c: usize,
    rows: Vec<f64>,
}

impl TransitionMatrix {
    pub fn identity(c: usize) -> Self {
        let mut rows = vec![0.0; c * c];
        for i in 0..c {
            rows[i * c + i] = 1.0;
        }
        Self { c, rows }
    }

    pub fn num_classes(&self) -> usize {
        self.c
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.c..(i + 1) * self.c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i * self.c + j]
    }
}

pub fn build_transition_matrix(spec: &NoiseSpec, c: usize) -> Result<TransitionMatrix> {
    if !(0.0..=1.0).contains(&spec.p) {
        return Err(Error::Spec(format!("p = {} outside [0, 1]", spec.p)));
    }
    if c == 0 {
        return Err(Error::Spec("zero classes".into()));
    }
    let mut t = TransitionMatrix::identity(c);
    if spec.kind == NoiseKind::None {
        return Ok(t);
    }
    let pairing = match &spec.pairing {
        Some(p) => {
            validate_pairing(p, c, spec.kind)?;
            p.clone()
        }
        None => default_pairing(c, spec.kind)?,
    };
    let k = spec.kind.targets() as f64;
    for (i, targets) in pairing.iter().enumerate() {
        t.rows[i * c + i] = 1.0 - spec.p;
        for &j in targets {
            t.rows[i * c + j] = spec.p / k;
        }
    }
    Ok(t)
}

/// Resamples every label from its row of `t`. Returns the observed labels and
/// the mask of positions where observed ≠ true.
pub fn corrupt_labels(
    true_labels: &[usize],
    t: &TransitionMatrix,
    seed: u64,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let c = t.num_classes();
    if let Some(&bad) = true_labels.iter().find(|&&y| y >= c) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observed: Vec<usize> = true_labels
        .iter()
        .map(|&y| sample_row(t.row(y), y, rng.random::<f64>()))
        .collect();
    let mask = observed
        .iter()
        .zip(true_labels)
        .map(|(o, y)| o != y)
        .collect();
    Ok((observed, mask))
}

/// Inverse-CDF draw; falls back to `fallback` if rounding leaves `u` past the
/// final cumulative sum.
fn sample_row(row: &[f64], fallback: usize, u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &pj) in row.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        acc += pj;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|&pj| pj > 0.0).unwrap_or(fallback)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: NoiseKind, p: f64) -> NoiseSpec {
        NoiseSpec {
            kind,
            p,
            pairing: None,
            seed: 7,
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        for kind in [
            NoiseKind::None,
            NoiseKind::Flip,
            NoiseKind::Flip2,
            NoiseKind::Flip3,
        ] {
            let t = build_transition_matrix(&spec(kind, 0.0), 6).unwrap();
            assert_eq!(t, TransitionMatrix::identity(6));
        }
    }

    #[test]
    fn full_flip_is_permutation() {
        let t = build_transition_matrix(&spec(NoiseKind::Flip, 1.0), 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if j == (i + 1) % 5 { 1.0 } else { 0.0 };
                assert_eq!(t.get(i, j), expected);
            }
        }
    }

    #[test]
    fn flip2_row_arithmetic() {
        let t = build_transition_matrix(&spec(NoiseKind::Flip2, 0.4), 4).unwrap();
        assert_eq!(t.row(0), &[0.6, 0.2, 0.2, 0.0]);
    }

    #[test]
    fn default_pairings_wrap() {
        assert_eq!(default_pairing(10, NoiseKind::Flip).unwrap()[9], vec![0]);
        assert_eq!(default_pairing(4, NoiseKind::Flip2).unwrap()[3], vec![0, 1]);
        for kind in [NoiseKind::Flip, NoiseKind::Flip2, NoiseKind::Flip3] {
            let p = default_pairing(7, kind).unwrap();
            for (i, targets) in p.iter().enumerate() {
                assert_eq!(targets.len(), kind.targets());
                assert!(!targets.contains(&i));
            }
        }
        assert!(matches!(
            default_pairing(3, NoiseKind::Flip3),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn custom_pairing_is_validated() {
        let mut s = spec(NoiseKind::Flip, 0.3);
        s.pairing = Some(vec![vec![1], vec![0], vec![2]]);
        assert!(matches!(
            build_transition_matrix(&s, 3),
            Err(Error::Spec(_))
        ));
        s.pairing = Some(vec![vec![1], vec![0]]);
        assert!(build_transition_matrix(&s, 3).is_err());
        s.pairing = Some(vec![vec![1], vec![0], vec![0]]);
        let t = build_transition_matrix(&s, 3).unwrap();
        assert_eq!(t.row(2), &[0.3, 0.0, 0.7]);
    }

    #[test]
    fn identity_matrix_leaves_labels_alone() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let (obs, mask) = corrupt_labels(&labels, &TransitionMatrix::identity(5), 3).unwrap();
        assert_eq!(obs, labels);
        assert!(mask.iter().all(|m| !m));
    }

    #[test]
    fn full_flip_moves_every_label() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let t = build_transition_matrix(&spec(NoiseKind::Flip, 1.0), 5).unwrap();
        let (obs, mask) = corrupt_labels(&labels, &t, 3).unwrap();
        assert!(obs.iter().zip(&labels).all(|(o, y)| *o == (y + 1) % 5));
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn out_of_range_p_rejected() {
        assert!(build_transition_matrix(&spec(NoiseKind::Flip, 1.3), 4).is_err());
    }
}
