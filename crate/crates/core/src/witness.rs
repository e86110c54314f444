//! Witness observables on the bipartite space `C^d (x) C^d`.
//!
//! Basis index map: `|i,j>` lives at `i * d + j`. The error witness `W0` is the
//! projector onto `i != j`; the coherence witness `W_k` couples `|i,i>` and
//! `|i+k,i+k>` with unit weight for `0 <= i <= d-1-k` (non-cyclic offsets).

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg;

/// One witness observable, kept in structured form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Witness {
    Error { dim: usize },
    Coherence { dim: usize, offset: usize },
}

impl Witness {
    pub fn dim(&self) -> usize {
        match *self {
            Witness::Error { dim } | Witness::Coherence { dim, .. } => dim,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Witness::Error { .. } => "W0".to_string(),
            Witness::Coherence { offset, .. } => format!("W{offset}"),
        }
    }

    /// Nonzero entries `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        match *self {
            Witness::Error { dim } => (0..dim * dim)
                .filter(|idx| idx / dim != idx % dim)
                .map(|idx| (idx, idx, 1.0))
                .collect(),
            Witness::Coherence { dim, offset } => {
                let mut t = Vec::with_capacity(2 * (dim - offset));
                for i in 0..dim - offset {
                    let a = i * dim + i;
                    let b = (i + offset) * dim + (i + offset);
                    t.push((a, b, 1.0));
                    t.push((b, a, 1.0));
                }
                t.sort_by_key(|&(r, c, _)| (r, c));
                t
            }
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.dim() * self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// Restriction to the correlated subspace `span{|i,i>}` as a `d x d` matrix.
    /// `W0` vanishes there.
    pub fn correlated_block(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        if let Witness::Coherence { offset, .. } = *self {
            for i in 0..d - offset {
                m[(i, i + offset)] = 1.0;
                m[(i + offset, i)] = 1.0;
            }
        }
        m
    }

    /// Exact spectral norm from the block structure.
    ///
    /// `W_k` splits into `k` disjoint path graphs (one per residue class mod k);
    /// a path on `L` vertices has top eigenvalue `2 cos(pi / (L + 1))`, and the
    /// longest path has `L = ceil(d / k)` vertices.
    pub fn inf_norm(&self) -> f64 {
        match *self {
            Witness::Error { .. } => 1.0,
            Witness::Coherence { dim, offset } => {
                let longest = dim.div_ceil(offset);
                2.0 * (std::f64::consts::PI / (longest as f64 + 1.0)).cos()
            }
        }
    }

    /// Smallest eigenvalue; every witness spectrum is symmetric or nonnegative.
    pub fn spectral_min(&self) -> f64 {
        match self {
            Witness::Error { .. } => 0.0,
            Witness::Coherence { .. } => -self.inf_norm(),
        }
    }

    pub fn spectral_max(&self) -> f64 {
        self.inf_norm()
    }

    /// Expectation under `rho = v |Psi><Psi| + (1 - v) 1 / d^2`.
    pub fn expected_isotropic(&self, v: f64) -> f64 {
        let d = self.dim() as f64;
        match *self {
            Witness::Error { .. } => (1.0 - v) * (d * d - d) / (d * d),
            Witness::Coherence { offset, .. } => 2.0 * (d - offset as f64) * v / d,
        }
    }
}

pub fn build_w0(d: usize) -> Result<DMatrix<f64>> {
    if d < 2 {
        return Err(invalid("d", "dimension must be >= 2"));
    }
    Ok(Witness::Error { dim: d }.dense())
}

pub fn build_wk(d: usize, k: usize) -> Result<DMatrix<f64>> {
    if d < 2 {
        return Err(invalid("d", "dimension must be >= 2"));
    }
    if k == 0 || k >= d {
        return Err(invalid("k", format!("offset must lie in 1..={}, got {k}", d - 1)));
    }
    Ok(Witness::Coherence { dim: d, offset: k }.dense())
}

/// `[<W0>, <W1>, ..., <W_{d-1}>]` under the isotropic model.
pub fn expected_isotropic(d: usize, v: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid("v", format!("visibility must lie in [0, 1], got {v}")));
    }
    Ok(WitnessSet::new(d)?.expected_isotropic(v))
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn infinity_norm(w: &DMatrix<f64>) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    let (lo, hi) = linalg::extreme_eigenvalues(w);
    lo.abs().max(hi.abs())
}

/// The full witness family `W0, W1, ..., W_{d-1}` of one protocol dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessSet {
    pub dim: usize,
    pub witnesses: Vec<Witness>,
    pub inf_norm: Vec<f64>,
}

impl WitnessSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("d", "dimension must be >= 2"));
        }
        let witnesses: Vec<Witness> = std::iter::once(Witness::Error { dim })
            .chain((1..dim).map(|offset| Witness::Coherence { dim, offset }))
            .collect();
        let inf_norm = witnesses.iter().map(Witness::inf_norm).collect();
        Ok(Self {
            dim,
            witnesses,
            inf_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.witnesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.witnesses.is_empty()
    }

    pub fn expected_isotropic(&self, v: f64) -> Vec<f64> {
        self.witnesses.iter().map(|w| w.expected_isotropic(v)).collect()
    }

    /// Writes every witness as `row col value` triplets, one block per witness.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.dim * self.dim;
        for (j, w) in self.witnesses.iter().enumerate() {
            writeln!(out, "# witness {j} {} size {n} inf_norm {:.17e}", w.label(), self.inf_norm[j])?;
            for (r, c, v) in w.triplets() {
                writeln!(out, "{r} {c} {v}")?;
            }
        }
        Ok(())
    }
}

/// Dense isotropic state `v |Psi><Psi| + (1 - v) 1 / d^2`.
pub fn isotropic_state(d: usize, v: f64) -> DMatrix<f64> {
    let n = d * d;
    let mut rho = DMatrix::identity(n, n) * ((1.0 - v) / n as f64);
    for i in 0..d {
        for j in 0..d {
            rho[(i * d + i, j * d + j)] += v / d as f64;
        }
    }
    rho
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w0_small_dims() {
        let w = build_w0(2).unwrap();
        let diag: Vec<f64> = w.diagonal().iter().copied().collect();
        assert_eq!(diag, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(w.iter().filter(|&&x| x != 0.0).count(), 2);

        let w = build_w0(3).unwrap();
        assert_eq!(w.trace(), 6.0);
        assert_eq!(w.iter().filter(|&&x| x != 0.0).count(), 6);
    }

    #[test]
    fn w0_vanishes_on_maximally_entangled() {
        let rho = isotropic_state(2, 1.0);
        let w = build_w0(2).unwrap();
        assert_eq!((&rho * &w).trace(), 0.0);
    }

    #[test]
    fn wk_structure() {
        let w = build_wk(2, 1).unwrap();
        let mut expected = DMatrix::zeros(4, 4);
        expected[(0, 3)] = 1.0;
        expected[(3, 0)] = 1.0;
        assert_eq!(w, expected);

        assert_eq!(build_wk(4, 3).unwrap().iter().filter(|&&x| x != 0.0).count(), 2);
        assert_eq!(build_wk(16, 1).unwrap().iter().filter(|&&x| x != 0.0).count(), 30);
        assert!(build_wk(4, 0).is_err());
        assert!(build_wk(4, 4).is_err());
    }

    #[test]
    fn isotropic_expectations() {
        let e = expected_isotropic(16, 1.0).unwrap();
        assert_eq!(e[0], 0.0);
        assert!((e[1] - 30.0 / 16.0).abs() < 1e-15);

        let e = expected_isotropic(2, 0.0).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-15);
        assert_eq!(e[1], 0.0);

        let e = expected_isotropic(4, 0.5).unwrap();
        assert!((e[0] - 0.375).abs() < 1e-15);
        assert!((e[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn norms_match_numerics() {
        assert_eq!(infinity_norm(&build_w0(3).unwrap()), 1.0);
        assert_eq!(infinity_norm(&DMatrix::zeros(4, 4)), 0.0);
        for d in 2..=7 {
            let set = WitnessSet::new(d).unwrap();
            for (w, &x) in set.witnesses.iter().zip(&set.inf_norm) {
                let numeric = infinity_norm(&w.dense());
                assert!((numeric - x).abs() < 1e-12, "d={d} {} {numeric} vs {x}", w.label());
            }
        }
    }

    #[test]
    fn disjoint_offsets_have_unit_norm() {
        // offsets k >= d/2 give disjoint 2x2 blocks
        for d in 2usize..=16 {
            for k in d.div_ceil(2)..d {
                let w = Witness::Coherence { dim: d, offset: k };
                assert!((w.inf_norm() - 1.0).abs() < 1e-15);
            }
        }
        let w = Witness::Coherence { dim: 16, offset: 1 };
        assert!((w.inf_norm() - 2.0 * (std::f64::consts::PI / 17.0).cos()).abs() < 1e-15);
    }

    #[test]
    fn triplet_export_lists_every_entry() {
        let set = WitnessSet::new(3).unwrap();
        let mut buf = Vec::new();
        set.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let data_lines = text.lines().filter(|l| !l.starts_with('#')).count();
        // W0: 6 entries, W1: 4, W2: 2
        assert_eq!(data_lines, 12);
        assert_eq!(text.lines().filter(|l| l.starts_with('#')).count(), 3);
    }
}
