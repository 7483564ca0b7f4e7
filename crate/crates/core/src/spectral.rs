//! Diagonal standard form, equi-blocks and degeneracy classification.
//!
//! An equi-block groups every eigenvalue of `A` sharing one magnitude,
//! together with the matching columns of `C V`. A block is degenerate when
//! those columns are not full column rank, i.e. a single received
//! measurement cannot separate the modes it contains.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, arg_positive, frobenius, numerical_rank, singular_values, to_complex, CMatrix};
use crate::system::{LinearSystem, DEFAULT_RANK_TOL};

/// Default relative tolerance for magnitude ties and the unit-circle band.
pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// Reconstruction residual allowed for `V diag(lambda) V^-1`, relative to `||A||_F`.
pub const RESIDUAL_REL_TOL: f64 = 1e-8;

/// Largest eigenvector condition number accepted as diagonalizable.
pub const MAX_EIGVEC_COND: f64 = 1e12;

/// `A = V diag(eigenvalues) V^-1` with eigenvalues sorted by descending
/// magnitude (ties by ascending argument in `[0, 2pi)`), and `C V`.
#[derive(Debug, Clone)]
pub struct SpectralForm {
    eigenvalues: Vec<Complex64>,
    v: CMatrix,
    v_inv: CMatrix,
    c_tilde: CMatrix,
}

impl SpectralForm {
    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    pub fn v(&self) -> &CMatrix {
        &self.v
    }

    pub fn v_inv(&self) -> &CMatrix {
        &self.v_inv
    }

    pub fn c_tilde(&self) -> &CMatrix {
        &self.c_tilde
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `||V diag(lambda) V^-1 - A||_F`.
    pub fn reconstruction_residual(&self, a: &DMatrix<f64>) -> f64 {
        frobenius(&(reconstruct(&self.v, &self.eigenvalues, &self.v_inv) - to_complex(a)))
    }

    /// Columns of `C V` selected by `indices`.
    pub fn columns(&self, indices: &[usize]) -> CMatrix {
        self.c_tilde.select_columns(indices)
    }
}

fn reconstruct(v: &CMatrix, eig: &[Complex64], v_inv: &CMatrix) -> CMatrix {
    let mut scaled = v.clone();
    for (j, lambda) in eig.iter().enumerate() {
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= lambda;
        }
    }
    scaled * v_inv
}

/// Sorts eigenvalues by descending magnitude; magnitudes within
/// [`DEFAULT_REL_TOL`] of a group's leader are ordered by argument.
fn sort_spectrum(eig: &mut [Complex64]) {
    eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let mut start = 0;
    while start < eig.len() {
        let lead = eig[start].norm();
        let mut end = start + 1;
        while end < eig.len() && magnitudes_tie(lead, eig[end].norm(), DEFAULT_REL_TOL) {
            end += 1;
        }
        eig[start..end].sort_by(|a, b| arg_positive(*a).total_cmp(&arg_positive(*b)));
        start = end;
    }
}

fn magnitudes_tie(lead: f64, other: f64, rel_tol: f64) -> bool {
    (lead - other).abs() <= rel_tol * lead.max(1.0)
}

/// Unit-norm eigenvector with its largest component made real and positive.
fn normalize_phase(mut x: nalgebra::DVector<Complex64>) -> nalgebra::DVector<Complex64> {
    let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return x;
    }
    let biggest = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let pivot = x
        .iter()
        .position(|z| z.norm() >= biggest * (1.0 - 1e-12))
        .unwrap_or(0);
    let phase = x[pivot] / x[pivot].norm();
    x.apply(|z| *z = *z / (phase * norm));
    x
}

/// Diagonalizes a real square matrix.
///
/// Eigenvalues come from the real Schur form; each cluster of (numerically)
/// repeated eigenvalues gets an orthonormal basis of the null space of
/// `A - lambda I`. A defective matrix shows up as a singular or badly
/// conditioned eigenvector matrix and is rejected.
pub fn decompose(a: &DMatrix<f64>) -> Result<(Vec<Complex64>, CMatrix, CMatrix)> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Dimension("A must be square and non-empty".into()));
    }
    if !linalg::all_finite(a) {
        return Err(Error::Numeric("A has non-finite entries".into()));
    }
    let mut eig: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
    sort_spectrum(&mut eig);

    // Cluster numerically equal eigenvalues and replace each by its cluster mean.
    let mut cluster_of = vec![usize::MAX; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if cluster_of[i] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![i];
        cluster_of[i] = id;
        for j in (i + 1)..n {
            let scale = eig[i].norm().max(1.0);
            if cluster_of[j] == usize::MAX && (eig[j] - eig[i]).norm() <= DEFAULT_REL_TOL * scale {
                cluster_of[j] = id;
                members.push(j);
            }
        }
        clusters.push(members);
    }

    let ac = to_complex(a);
    let mut v = CMatrix::zeros(n, n);
    for members in &clusters {
        let mean = members.iter().map(|&i| eig[i]).sum::<Complex64>() / members.len() as f64;
        for &i in members {
            eig[i] = mean;
        }
        let mut shifted = ac.clone();
        for i in 0..n {
            shifted[(i, i)] -= mean;
        }
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
        for (slot, &col) in members.iter().zip(order.iter()) {
            let x = v_t.row(col).transpose().map(|z| z.conj());
            v.set_column(*slot, &normalize_phase(x));
        }
    }

    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotDiagonalizable("eigenvector matrix is singular".into()))?;
    let s = singular_values(&v);
    let cond = s[0] / s[n - 1];
    if !cond.is_finite() || cond > MAX_EIGVEC_COND {
        return Err(Error::NotDiagonalizable(format!(
            "eigenvector matrix condition number {cond:.3e} exceeds {MAX_EIGVEC_COND:.0e}"
        )));
    }
    let residual = frobenius(&(reconstruct(&v, &eig, &v_inv) - &ac));
    let scale = frobenius(&ac);
    if residual > RESIDUAL_REL_TOL * scale {
        return Err(Error::NotDiagonalizable(format!(
            "reconstruction residual {residual:.3e} exceeds {:.1e} * ||A||_F",
            RESIDUAL_REL_TOL
        )));
    }
    Ok((eig, v, v_inv))
}

/// Transforms the system into its diagonal standard form.
pub fn diagonalize(sys: &LinearSystem) -> Result<SpectralForm> {
    diagonalize_matrices(sys.a(), sys.c())
}

pub fn diagonalize_matrices(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<SpectralForm> {
    let (eigenvalues, v, v_inv) = decompose(a)?;
    let c_tilde = to_complex(c) * &v;
    Ok(SpectralForm {
        eigenvalues,
        v,
        v_inv,
        c_tilde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Unstable,
    CriticallyStable,
    Stable,
}

impl Stability {
    pub fn classify(magnitude: f64, rel_tol: f64) -> Self {
        if (magnitude - 1.0).abs() <= rel_tol {
            Stability::CriticallyStable
        } else if magnitude > 1.0 {
            Stability::Unstable
        } else {
            Stability::Stable
        }
    }
}

/// A maximal group of equal-magnitude eigenvalues.
#[derive(Debug, Clone, Serialize)]
pub struct EquiBlock {
    /// Zero-based indices into [`SpectralForm::eigenvalues`].
    pub indices: Vec<usize>,
    pub magnitude: f64,
    #[serde(skip)]
    pub c_block: CMatrix,
    pub rank: usize,
    pub degenerate: bool,
    pub stability_class: Stability,
}

impl EquiBlock {
    pub fn dim(&self) -> usize {
        self.indices.len()
    }
}

/// A grouping decision whose magnitude gap was within 10x of the tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalGrouping {
    pub left: usize,
    pub right: usize,
    pub relative_gap: f64,
    pub merged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DegeneracyReport {
    pub blocks: Vec<EquiBlock>,
    pub max_equiblock_dim: usize,
    pub system_degenerate: bool,
    pub unstable_part_degenerate: bool,
    pub marginal_groupings: Vec<MarginalGrouping>,
}

/// Partitions the spectrum into equi-blocks and classifies each.
pub fn equi_blocks(sf: &SpectralForm, rel_tol: f64) -> DegeneracyReport {
    equi_blocks_with_rank_tol(sf, rel_tol, DEFAULT_RANK_TOL)
}

pub fn equi_blocks_with_rank_tol(sf: &SpectralForm, rel_tol: f64, rank_tol: f64) -> DegeneracyReport {
    let mags: Vec<f64> = sf.eigenvalues.iter().map(|z| z.norm()).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut marginal = Vec::new();
    for i in 0..mags.len() {
        match groups.last_mut() {
            Some(g) if magnitudes_tie(mags[g[0]], mags[i], rel_tol) => {
                let gap = (mags[g[0]] - mags[i]).abs() / mags[g[0]].max(1.0);
                if gap * 10.0 >= rel_tol && gap > 0.0 {
                    marginal.push(MarginalGrouping {
                        left: g[0],
                        right: i,
                        relative_gap: gap,
                        merged: true,
                    });
                }
                g.push(i);
            }
            Some(g) => {
                let lead = g[0];
                let gap = (mags[lead] - mags[i]).abs() / mags[lead].max(1.0);
                if gap <= 10.0 * rel_tol {
                    marginal.push(MarginalGrouping {
                        left: lead,
                        right: i,
                        relative_gap: gap,
                        merged: false,
                    });
                }
                groups.push(vec![i]);
            }
            None => groups.push(vec![i]),
        }
    }

    let blocks: Vec<EquiBlock> = groups
        .into_iter()
        .map(|indices| {
            let magnitude = indices.iter().map(|&i| mags[i]).sum::<f64>() / indices.len() as f64;
            let c_block = sf.columns(&indices);
            let rank = numerical_rank(&c_block, rank_tol);
            EquiBlock {
                degenerate: rank < indices.len(),
                stability_class: Stability::classify(magnitude, rel_tol),
                indices,
                magnitude,
                c_block,
                rank,
            }
        })
        .collect();

    DegeneracyReport {
        max_equiblock_dim: blocks.iter().map(EquiBlock::dim).max().unwrap_or(0),
        system_degenerate: blocks.iter().any(|b| b.degenerate),
        unstable_part_degenerate: blocks
            .iter()
            .any(|b| b.degenerate && b.stability_class != Stability::Stable),
        blocks,
        marginal_groupings: marginal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn diagonal_input_keeps_identity_basis() {
        let sf = diagonalize_matrices(&diag(&[3.0, 2.0]), &DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        assert_eq!(sf.eigenvalues(), &[c(3.0), c(2.0)]);
        assert!((sf.v() - CMatrix::identity(2, 2)).norm() < 1e-14);
        assert!((sf.c_tilde()[(0, 0)] - c(1.0)).norm() < 1e-14);
        assert!((sf.c_tilde()[(0, 1)] - c(1.0)).norm() < 1e-14);
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        let sf = diagonalize_matrices(&a, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        for z in sf.eigenvalues() {
            assert!((z.norm() - 2.0).abs() < 1e-12);
            assert!(z.re.abs() < 1e-12);
        }
        // lambda^2 + 4 = 0
        assert!((sf.eigenvalues()[0] - Complex64::new(0.0, 2.0)).norm() < 1e-12);
        assert!(sf.reconstruction_residual(&a) < 1e-8 * a.norm());
    }

    #[test]
    fn ties_are_ordered_by_argument() {
        let c_mat = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let sf = diagonalize_matrices(&diag(&[2.0, -2.0, 3.0, -3.0]), &c_mat).unwrap();
        assert_eq!(sf.eigenvalues(), &[c(3.0), c(-3.0), c(2.0), c(-2.0)]);
        // Column of C V for eigenvalue 3 is the third column of C.
        assert!((sf.c_tilde().column(0) - to_complex(&c_mat).column(2)).norm() < 1e-14);
        assert!((sf.c_tilde().column(3) - to_complex(&c_mat).column(1)).norm() < 1e-14);
    }

    #[test]
    fn repeated_eigenvalue_gets_full_basis() {
        let sf = diagonalize_matrices(&diag(&[2.0, 2.0, 0.5]), &DMatrix::identity(3, 3)).unwrap();
        assert!(sf.reconstruction_residual(&diag(&[2.0, 2.0, 0.5])) < 1e-12);
    }

    #[test]
    fn defective_matrix_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(decompose(&a), Err(Error::NotDiagonalizable(_))));
    }

    #[test]
    fn degenerate_pair_block() {
        let sf = diagonalize_matrices(&diag(&[2.0, -2.0]), &DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        let rep = equi_blocks(&sf, DEFAULT_REL_TOL);
        assert_eq!(rep.blocks.len(), 1);
        assert_eq!(rep.blocks[0].indices, vec![0, 1]);
        assert!(rep.blocks[0].degenerate);
        assert_eq!(rep.blocks[0].stability_class, Stability::Unstable);
        assert!(rep.system_degenerate && rep.unstable_part_degenerate);
        assert_eq!(rep.max_equiblock_dim, 2);
    }

    #[test]
    fn two_observable_blocks() {
        let c_mat = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let sf = diagonalize_matrices(&diag(&[2.0, -2.0, 3.0, -3.0]), &c_mat).unwrap();
        let rep = equi_blocks(&sf, DEFAULT_REL_TOL);
        assert_eq!(rep.blocks.len(), 2);
        assert!(rep.blocks.iter().all(|b| b.dim() == 2 && !b.degenerate));
        assert_eq!(rep.max_equiblock_dim, 2);
        assert!(!rep.system_degenerate);
    }

    #[test]
    fn distinct_magnitudes_are_singletons() {
        let sf = diagonalize_matrices(&diag(&[3.0, 2.0]), &DMatrix::from_row_slice(1, 2, &[0.3, -4.0])).unwrap();
        let rep = equi_blocks(&sf, DEFAULT_REL_TOL);
        assert_eq!(rep.blocks.len(), 2);
        assert!(rep.blocks.iter().all(|b| !b.degenerate));
        assert_eq!(rep.max_equiblock_dim, 1);
    }

    #[test]
    fn stability_band() {
        assert_eq!(Stability::classify(1.0 + 1e-12, 1e-9), Stability::CriticallyStable);
        assert_eq!(Stability::classify(1.1, 1e-9), Stability::Unstable);
        assert_eq!(Stability::classify(0.9, 1e-9), Stability::Stable);
    }

    #[test]
    fn near_ties_are_reported() {
        let sf = diagonalize_matrices(&diag(&[2.0, 2.0 - 5e-9]), &DMatrix::identity(2, 2)).unwrap();
        let rep = equi_blocks(&sf, 1e-9);
        assert_eq!(rep.blocks.len(), 2);
        assert_eq!(rep.marginal_groupings.len(), 1);
        assert!(!rep.marginal_groupings[0].merged);
    }
}
