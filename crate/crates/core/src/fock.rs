//! Fermionic operators on the augmented Fock space.
//!
//! Modes are ordered system-first, pseudo-modes after, and the Jordan-Wigner
//! string follows that order with mode 0 on the least significant bit. Because
//! system modes come first, a system operator embeds into the full space as a
//! plain Kronecker factor even when odd, and tracing out the pseudo modes is a
//! contiguous block sum along the diagonal.
//!
//! Superoperators act on column-stacked density operators: vec(A rho B) =
//! (B^T (x) A) vec(rho).

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PfError, Result};
use crate::sparse::CsMat;

/// Hard cap on the augmented mode count (Fock dimension 2^N).
pub const DEFAULT_MODE_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeLabel {
    System { index: usize },
    Pseudo { lead: usize, spin: usize, index: usize },
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeLabel::System { index } => write!(f, "sys{index}"),
            ModeLabel::Pseudo { lead, spin, index } => write!(f, "pf{lead}.{spin}.{index}"),
        }
    }
}

/// Ordered mode list fixing the Jordan-Wigner string and bit layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FockSpaceLayout {
    labels: Vec<ModeLabel>,
    n_system: usize,
}

impl FockSpaceLayout {
    pub fn new(n_system: usize, pseudo: Vec<ModeLabel>) -> Result<Self> {
        Self::with_cap(n_system, pseudo, DEFAULT_MODE_CAP)
    }

    pub fn with_cap(n_system: usize, pseudo: Vec<ModeLabel>, cap: usize) -> Result<Self> {
        let mut labels: Vec<ModeLabel> = (0..n_system).map(|index| ModeLabel::System { index }).collect();
        labels.extend(pseudo);
        let n = labels.len();
        if n == 0 {
            return Err(PfError::LayoutMismatch("layout needs at least one mode".into()));
        }
        if n > cap {
            return Err(PfError::LayoutMismatch(format!(
                "{n} modes exceed the cap of {cap} (Fock dimension 2^{n})"
            )));
        }
        for (i, a) in labels.iter().enumerate() {
            for b in labels.iter().skip(i + 1) {
                if a == b {
                    return Err(PfError::LayoutMismatch(format!("duplicate mode label {a}")));
                }
            }
        }
        Ok(FockSpaceLayout { labels, n_system })
    }

    pub fn n_modes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_system(&self) -> usize {
        self.n_system
    }

    pub fn dim(&self) -> usize {
        1 << self.labels.len()
    }

    pub fn labels(&self) -> &[ModeLabel] {
        &self.labels
    }

    pub fn index_of(&self, label: ModeLabel) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }
}

/// Parity of an operator under conjugation with the total parity operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorParity {
    Even,
    Odd,
    Mixed,
}

impl OperatorParity {
    fn combine_product(self, other: OperatorParity) -> OperatorParity {
        use OperatorParity::*;
        match (self, other) {
            (Even, Even) | (Odd, Odd) => Even,
            (Even, Odd) | (Odd, Even) => Odd,
            _ => Mixed,
        }
    }

    fn combine_sum(self, other: OperatorParity) -> OperatorParity {
        if self == other {
            self
        } else {
            OperatorParity::Mixed
        }
    }
}

/// Sparse operator on the 2^N Fock space with a parity tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    pub mat: CsMat,
    pub parity: OperatorParity,
}

impl FockOperator {
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn adjoint(&self) -> FockOperator {
        FockOperator {
            mat: self.mat.adjoint(),
            parity: self.parity,
        }
    }

    pub fn scaled(&self, alpha: Complex64) -> FockOperator {
        FockOperator {
            mat: self.mat.scaled(alpha),
            parity: self.parity,
        }
    }

    pub fn mul(&self, other: &FockOperator) -> Result<FockOperator> {
        Ok(FockOperator {
            mat: self.mat.matmul(&other.mat)?,
            parity: self.parity.combine_product(other.parity),
        })
    }

    pub fn add(&self, other: &FockOperator) -> Result<FockOperator> {
        Ok(FockOperator {
            mat: self.mat.add(&other.mat)?,
            parity: self.parity.combine_sum(other.parity),
        })
    }
}

/// Annihilation operator c_i with the Jordan-Wigner sign string over modes
/// j < i: for every basis state with bit i set,
/// c_i |n> = (-1)^{popcount(n & (2^i - 1))} |n - 2^i>. Exactly 2^{N-1} entries.
pub fn annihilation(layout: &FockSpaceLayout, i: usize) -> Result<FockOperator> {
    let n = layout.n_modes();
    if i >= n {
        return Err(PfError::IndexOutOfRange { index: i, n_modes: n });
    }
    let dim = layout.dim();
    let bit = 1usize << i;
    let mask = bit - 1;
    let mut triplets = Vec::with_capacity(dim / 2);
    for state in 0..dim {
        if state & bit != 0 {
            let sign = if ((state & mask).count_ones() & 1) == 0 {
                1.0
            } else {
                -1.0
            };
            triplets.push((state ^ bit, state, Complex64::new(sign, 0.0)));
        }
    }
    Ok(FockOperator {
        mat: CsMat::from_triplets(dim, dim, triplets),
        parity: OperatorParity::Odd,
    })
}

pub fn creation(layout: &FockSpaceLayout, i: usize) -> Result<FockOperator> {
    Ok(annihilation(layout, i)?.adjoint())
}

/// Number operator c_i^dag c_i (diagonal).
pub fn number(layout: &FockSpaceLayout, i: usize) -> Result<FockOperator> {
    let n = layout.n_modes();
    if i >= n {
        return Err(PfError::IndexOutOfRange { index: i, n_modes: n });
    }
    let dim = layout.dim();
    let bit = 1usize << i;
    let diag: Vec<Complex64> = (0..dim)
        .map(|s| Complex64::new(if s & bit != 0 { 1.0 } else { 0.0 }, 0.0))
        .collect();
    Ok(FockOperator {
        mat: CsMat::from_diagonal(&diag),
        parity: OperatorParity::Even,
    })
}

pub fn identity_op(layout: &FockSpaceLayout) -> FockOperator {
    FockOperator {
        mat: CsMat::identity(layout.dim()),
        parity: OperatorParity::Even,
    }
}

/// Total parity (-1)^{occupation}, diagonal with entries +-1.
pub fn parity_operator(layout: &FockSpaceLayout) -> FockOperator {
    let dim = layout.dim();
    let diag: Vec<Complex64> = (0..dim)
        .map(|s: usize| Complex64::new(if s.count_ones() & 1 == 0 { 1.0 } else { -1.0 }, 0.0))
        .collect();
    FockOperator {
        mat: CsMat::from_diagonal(&diag),
        parity: OperatorParity::Even,
    }
}

/// rho -> A rho as a 4^N superoperator: I (x) A under column stacking.
pub fn superop_left(op: &FockOperator) -> CsMat {
    CsMat::identity(op.dim()).kron(&op.mat)
}

/// rho -> rho B: B^T (x) I.
pub fn superop_right(op: &FockOperator) -> CsMat {
    op.mat.transpose().kron(&CsMat::identity(op.dim()))
}

/// rho -> O (P rho P) O^dag: the jump term of the parity-resolved dissipator.
/// P is diagonal, so this is the plain two-sided factor of (OP, P O^dag).
pub fn superop_parity_sandwich(op: &FockOperator, layout: &FockSpaceLayout) -> Result<CsMat> {
    if op.dim() != layout.dim() {
        return Err(PfError::DimensionMismatch(format!(
            "operator dim {} vs layout dim {}",
            op.dim(),
            layout.dim()
        )));
    }
    let p = parity_operator(layout);
    let left = op.mat.matmul(&p.mat)?;
    let right = p.mat.matmul(&op.mat.adjoint())?;
    Ok(right.transpose().kron(&left))
}

/// Parity components (O + r P O P)/2 of an operator.
pub fn parity_split(op: &FockOperator, layout: &FockSpaceLayout) -> Result<(CsMat, CsMat)> {
    let p = parity_operator(layout);
    let pop = p.mat.matmul(&op.mat)?.matmul(&p.mat)?;
    let even = op.mat.add(&pop)?.scaled(Complex64::new(0.5, 0.0));
    let odd = op.mat.add(&pop.scaled(Complex64::new(-1.0, 0.0)))?.scaled(Complex64::new(0.5, 0.0));
    Ok((even, odd))
}

/// Measured parity of a concrete matrix: P O P compared against +-O.
pub fn classify_parity(mat: &CsMat, layout: &FockSpaceLayout) -> OperatorParity {
    let p = parity_operator(layout);
    let pop = p.mat.matmul(mat).unwrap().matmul(&p.mat).unwrap();
    let diff_even = pop.add(&mat.scaled(Complex64::new(-1.0, 0.0))).unwrap().max_abs();
    let diff_odd = pop.add(mat).unwrap().max_abs();
    let scale = mat.max_abs().max(1e-300);
    if diff_even <= 1e-14 * scale {
        OperatorParity::Even
    } else if diff_odd <= 1e-14 * scale {
        OperatorParity::Odd
    } else {
        OperatorParity::Mixed
    }
}
