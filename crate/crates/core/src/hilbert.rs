//! Truncated Fock and two-level mode operators on a composite space.
//!
//! Basis ordering is the occupation basis, lexicographic over modes in
//! declaration order (mode 0 is the most significant digit). Bosonic index is
//! the occupation number; for a two-level mode index 0 is ground and 1 is
//! excited. Operators on distinct modes commute (no Jordan-Wigner strings).

use crate::error::{Error, Result};
use crate::operator::{Operator, C64};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModeKind {
    /// Bosonic mode truncated at `cutoff` quanta.
    Boson { cutoff: usize },
    TwoLevel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeSpec {
    pub label: String,
    pub kind: ModeKind,
}

impl ModeSpec {
    pub fn boson(label: impl Into<String>, cutoff: usize) -> Self {
        Self { label: label.into(), kind: ModeKind::Boson { cutoff } }
    }

    pub fn two_level(label: impl Into<String>) -> Self {
        Self { label: label.into(), kind: ModeKind::TwoLevel }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ModeKind::Boson { cutoff } => cutoff + 1,
            ModeKind::TwoLevel => 2,
        }
    }

    pub fn is_boson(&self) -> bool {
        matches!(self.kind, ModeKind::Boson { .. })
    }

    pub fn cutoff(&self) -> Option<usize> {
        match self.kind {
            ModeKind::Boson { cutoff } => Some(cutoff),
            ModeKind::TwoLevel => None,
        }
    }

    /// Lowering operator on this mode alone: `a` or `σ⁻`.
    pub fn lowering(&self) -> Operator {
        match self.kind {
            ModeKind::Boson { cutoff } => annihilation_matrix(cutoff),
            ModeKind::TwoLevel => sigma_minus(),
        }
    }

    /// Local number operator `a†a` or `σ⁺σ⁻`.
    pub fn number(&self) -> Operator {
        let c = self.lowering();
        &c.adjoint() * &c
    }
}

/// Tensor-product space of an ordered list of modes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HilbertSpace {
    modes: Vec<ModeSpec>,
    dim: usize,
}

impl HilbertSpace {
    pub fn new(modes: Vec<ModeSpec>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidModel("at least one mode is required".into()));
        }
        for (i, m) in modes.iter().enumerate() {
            if modes[..i].iter().any(|o| o.label == m.label) {
                return Err(Error::InvalidModel(format!("duplicate mode label `{}`", m.label)));
            }
        }
        let dim = modes.iter().map(ModeSpec::dim).product();
        Ok(Self { modes, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, index: usize) -> Result<&ModeSpec> {
        self.modes.get(index).ok_or(Error::ModeIndex { index, count: self.modes.len() })
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.label == label)
    }

    /// Occupations of every mode for a basis index.
    pub fn occupations(&self, mut index: usize) -> Vec<usize> {
        let mut occ = vec![0; self.modes.len()];
        for (k, m) in self.modes.iter().enumerate().rev() {
            occ[k] = index % m.dim();
            index /= m.dim();
        }
        occ
    }

    pub fn basis_index(&self, occupations: &[usize]) -> Result<usize> {
        if occupations.len() != self.modes.len() {
            return Err(Error::DimensionMismatch { expected: self.modes.len(), actual: occupations.len() });
        }
        let mut idx = 0;
        for (m, &n) in self.modes.iter().zip(occupations) {
            if n >= m.dim() {
                return Err(Error::InvalidArgument(format!("occupation {n} outside mode `{}`", m.label)));
            }
            idx = idx * m.dim() + n;
        }
        Ok(idx)
    }

    /// Lowering operator of mode `index` embedded in the full space.
    pub fn lowering(&self, index: usize) -> Result<Operator> {
        embed(&self.mode(index)?.lowering(), index, self)
    }

    pub fn number(&self, index: usize) -> Result<Operator> {
        embed(&self.mode(index)?.number(), index, self)
    }
}

/// Truncated bosonic annihilation matrix: `A[n−1, n] = √n` for `1 ≤ n ≤ cutoff`.
pub fn annihilation_matrix(cutoff: usize) -> Operator {
    Operator::from_triplets(
        cutoff + 1,
        (1..=cutoff).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))),
    )
}

/// Two-level lowering operator, `S[0, 1] = 1` (excited → ground).
pub fn sigma_minus() -> Operator {
    Operator::from_triplets(2, [(0, 1, C64::new(1.0, 0.0))])
}

/// `I ⊗ … ⊗ op ⊗ … ⊗ I` with `op` on factor `mode_index`.
pub fn embed(op: &Operator, mode_index: usize, space: &HilbertSpace) -> Result<Operator> {
    let mode = space.mode(mode_index)?;
    op.check_dim(mode.dim())?;
    let left: usize = space.modes[..mode_index].iter().map(ModeSpec::dim).product();
    let right: usize = space.modes[mode_index + 1..].iter().map(ModeSpec::dim).product();
    Ok(op.kron_identity(left, right))
}

/// `N = Σᵢ nᵢ`, diagonal in the occupation basis.
pub fn total_number_operator(space: &HilbertSpace) -> Operator {
    let diag: Vec<C64> = (0..space.dim())
        .map(|b| C64::new(space.occupations(b).iter().sum::<usize>() as f64, 0.0))
        .collect();
    Operator::diagonal(&diag)
}
