//! Boundary matrices, Hodge Laplacians, their degree normalizations and the
//! normalized adjacency matrices consumed by the convolution layers.
//!
//! Every product is evaluated in the order it is written. Several of the
//! normalized matrices are not symmetric; that is intentional.

use crate::complex::{triangle_edges, SimplicialComplex2};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Signed incidence matrix of `∂_k`, `n_{k-1} × n_k`, for `k ∈ {1, 2}`.
///
/// Removing the `i`-th vertex of a face contributes `(-1)^i`: an edge
/// `(i, j)` maps to `-i + j`, a triangle `(i, j, k)` to
/// `(j, k) - (i, k) + (i, j)`.
pub fn boundary_matrix(complex: &SimplicialComplex2, k: usize) -> Result<SparseMatrix> {
    match k {
        1 => Ok(SparseMatrix::from_triplets(
            complex.n_vertices(),
            complex.n_edges(),
            complex
                .edges()
                .iter()
                .enumerate()
                .flat_map(|(col, &[a, b])| [(a, col, -1.0), (b, col, 1.0)]),
        )),
        2 => {
            let mut triplets = Vec::with_capacity(3 * complex.n_triangles());
            for (col, tri) in complex.triangles().iter().enumerate() {
                let [ij, ik, jk] = triangle_edges(tri);
                for (edge, sign) in [(jk, 1.0), (ik, -1.0), (ij, 1.0)] {
                    let row = complex
                        .edge_index(edge[0], edge[1])
                        .ok_or(Error::MissingBoundary { triangle: *tri, edge })?;
                    triplets.push((row, col, sign));
                }
            }
            Ok(SparseMatrix::from_triplets(
                complex.n_edges(),
                complex.n_triangles(),
                triplets,
            ))
        }
        other => Err(Error::UnsupportedDimension(other)),
    }
}

/// The `k`-th combinatorial Laplacian `B_kᵀB_k + B_{k+1}B_{k+1}ᵀ`, with
/// `B_0` and `B_3` zero.
pub fn hodge_laplacian(complex: &SimplicialComplex2, k: usize) -> Result<SparseMatrix> {
    let b1 = boundary_matrix(complex, 1)?;
    let b2 = boundary_matrix(complex, 2)?;
    match k {
        0 => Ok(b1.matmul(&b1.transpose())),
        1 => Ok(b1.transpose().matmul(&b1).add(&b2.matmul(&b2.transpose()))),
        2 => Ok(b2.transpose().matmul(&b2)),
        other => Err(Error::UnsupportedDimension(other)),
    }
}

/// Diagonal normalization factors, each stored as its diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationSet {
    /// `max(diag(|B₁|𝟙), I)`, per vertex.
    pub dtilde2: Vec<f64>,
    /// Identity, per edge.
    pub dtilde3: Vec<f64>,
    /// `2·diag(|B₁|D₂𝟙)`, per vertex. Isolated vertices get 1 instead of 0.
    pub d1: Vec<f64>,
    /// `max(diag(|B₂|𝟙), I)`, per edge.
    pub d2: Vec<f64>,
    /// `⅓I`, per triangle.
    pub d3: Vec<f64>,
    /// Identity, per triangle.
    pub d4: Vec<f64>,
    /// `diag(|B₂|𝟙)`, per edge: zero on edges that bound no triangle.
    pub d5: Vec<f64>,
}

/// Computes the degree normalizations from the boundary matrices.
pub fn degree_matrices(complex: &SimplicialComplex2, b1: &SparseMatrix, b2: &SparseMatrix) -> Result<NormalizationSet> {
    let [n0, n1, n2] = complex.counts();
    if b1.shape() != (n0, n1) {
        return Err(Error::shape("B1", format!("{n0}x{n1}"), format!("{:?}", b1.shape())));
    }
    if b2.shape() != (n1, n2) {
        return Err(Error::shape("B2", format!("{n1}x{n2}"), format!("{:?}", b2.shape())));
    }
    let abs_b1 = b1.abs();
    let abs_b2 = b2.abs();
    let vertex_degree = abs_b1.row_sums();
    let edge_cofaces = abs_b2.row_sums();

    let dtilde2 = vertex_degree.iter().map(|&d| d.max(1.0)).collect();
    let d2: Vec<f64> = edge_cofaces.iter().map(|&d| d.max(1.0)).collect();
    let d1 = abs_b1
        .mul_vec(&d2)
        .into_iter()
        // an isolated vertex has no incident edge; keep D₁ invertible
        .map(|s| if s == 0.0 { 1.0 } else { 2.0 * s })
        .collect();

    Ok(NormalizationSet {
        dtilde2,
        dtilde3: vec![1.0; n1],
        d1,
        d2,
        d3: vec![1.0 / 3.0; n2],
        d4: vec![1.0; n2],
        d5: edge_cofaces,
    })
}

fn inverse(d: &[f64]) -> Vec<f64> {
    d.iter().map(|&x| 1.0 / x).collect()
}

/// Diagonal pseudo-inverse: zeros stay zero.
fn pseudo_inverse(d: &[f64]) -> Vec<f64> {
    d.iter().map(|&x| if x == 0.0 { 0.0 } else { 1.0 / x }).collect()
}

fn shifted(d: &[f64], by: f64) -> Vec<f64> {
    d.iter().map(|&x| x + by).collect()
}

/// Normalized up and down Laplacians.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedLaplacians {
    /// `B₁D̃₃B₁ᵀD̃₂⁻¹`
    pub l0_up: SparseMatrix,
    /// `D₂B₁ᵀD₁⁻¹B₁`
    pub l1_up: SparseMatrix,
    /// `B₂D₃B₂ᵀD₂⁻¹`
    pub l1_down: SparseMatrix,
    /// `D₄B₂ᵀD₅⁺B₂`
    pub l2_down: SparseMatrix,
}

pub fn normalized_laplacians(b1: &SparseMatrix, b2: &SparseMatrix, norms: &NormalizationSet) -> NormalizedLaplacians {
    let b1t = b1.transpose();
    let b2t = b2.transpose();
    NormalizedLaplacians {
        l0_up: b1
            .scale_cols(&norms.dtilde3)
            .matmul(&b1t)
            .scale_cols(&inverse(&norms.dtilde2)),
        l1_up: b1t.scale_rows(&norms.d2).scale_cols(&inverse(&norms.d1)).matmul(b1),
        l1_down: b2.scale_cols(&norms.d3).matmul(&b2t).scale_cols(&inverse(&norms.d2)),
        l2_down: b2t
            .scale_rows(&norms.d4)
            .scale_cols(&pseudo_inverse(&norms.d5))
            .matmul(b2),
    }
}

/// Normalized adjacency matrices, before and after adding self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencySet {
    pub a0_up: SparseMatrix,
    pub a1_up: SparseMatrix,
    pub a1_down: SparseMatrix,
    pub a2_down: SparseMatrix,
    /// `(A₀ᵘ + I)(D̃₂ + I)⁻¹`
    pub a0_up_tilde: SparseMatrix,
    /// `(A₁ᵘ + I)(D₂ + I)⁻¹`
    pub a1_up_tilde: SparseMatrix,
    /// `(D₂ + I)(A₁ᵈ + I)`
    pub a1_down_tilde: SparseMatrix,
    /// `(D₄ + I)(A₂ᵈ + I)`
    pub a2_down_tilde: SparseMatrix,
}

pub fn adjacency_matrices(norms: &NormalizationSet, laps: &NormalizedLaplacians) -> AdjacencySet {
    let diag = SparseMatrix::from_diagonal;
    let n0 = norms.dtilde2.len();
    let n1 = norms.d2.len();
    let n2 = norms.d4.len();

    let a0_up = diag(&norms.dtilde2).sub(&laps.l0_up.scale_cols(&norms.dtilde2));
    let a1_up = diag(&norms.d2).sub(&laps.l1_up.scale_cols(&norms.d2));
    let d2_inv = inverse(&norms.d2);
    let a1_down = diag(&d2_inv).sub(&laps.l1_down.scale_rows(&d2_inv));
    let d4_inv = inverse(&norms.d4);
    let a2_down = diag(&d4_inv).sub(&laps.l2_down.scale_rows(&d4_inv));

    let a0_up_tilde = a0_up
        .add(&SparseMatrix::identity(n0))
        .scale_cols(&inverse(&shifted(&norms.dtilde2, 1.0)));
    let a1_up_tilde = a1_up
        .add(&SparseMatrix::identity(n1))
        .scale_cols(&inverse(&shifted(&norms.d2, 1.0)));
    let a1_down_tilde = a1_down
        .add(&SparseMatrix::identity(n1))
        .scale_rows(&shifted(&norms.d2, 1.0));
    let a2_down_tilde = a2_down
        .add(&SparseMatrix::identity(n2))
        .scale_rows(&shifted(&norms.d4, 1.0));

    AdjacencySet {
        a0_up,
        a1_up,
        a1_down,
        a2_down,
        a0_up_tilde,
        a1_up_tilde,
        a1_down_tilde,
        a2_down_tilde,
    }
}

/// Everything a forward pass on one complex needs, computed once.
///
/// All samples on the same complex share a single `OperatorSet`.
#[derive(Clone, Debug)]
pub struct OperatorSet {
    pub counts: [usize; 3],
    pub b1: SparseMatrix,
    pub b2: SparseMatrix,
    pub b1t: SparseMatrix,
    pub b2t: SparseMatrix,
    pub norms: NormalizationSet,
    pub laplacians: NormalizedLaplacians,
    pub adjacency: AdjacencySet,
    /// `Ã₁ᵈ + Ã₁ᵘ`, the edge-to-edge propagation.
    pub a1_sum: SparseMatrix,
    /// `D₁⁻¹B₁`: edges to vertices.
    pub p10: SparseMatrix,
    /// `D₂B₁ᵀD₁⁻¹`: vertices to edges.
    pub p01: SparseMatrix,
    /// `B₂D₃`: triangles to edges.
    pub p21: SparseMatrix,
    /// `D₄B₂ᵀD₅⁺`: edges to triangles.
    pub p12: SparseMatrix,
}

impl OperatorSet {
    pub fn new(complex: &SimplicialComplex2) -> Result<Self> {
        let b1 = boundary_matrix(complex, 1)?;
        let b2 = boundary_matrix(complex, 2)?;
        let b1t = b1.transpose();
        let b2t = b2.transpose();
        let norms = degree_matrices(complex, &b1, &b2)?;
        let laplacians = normalized_laplacians(&b1, &b2, &norms);
        let adjacency = adjacency_matrices(&norms, &laplacians);
        let a1_sum = adjacency.a1_down_tilde.add(&adjacency.a1_up_tilde);
        let d1_inv = inverse(&norms.d1);
        let p10 = b1.scale_rows(&d1_inv);
        let p01 = b1t.scale_rows(&norms.d2).scale_cols(&d1_inv);
        let p21 = b2.scale_cols(&norms.d3);
        let p12 = b2t.scale_rows(&norms.d4).scale_cols(&pseudo_inverse(&norms.d5));
        Ok(Self {
            counts: complex.counts(),
            b1,
            b2,
            b1t,
            b2t,
            norms,
            laplacians,
            adjacency,
            a1_sum,
            p10,
            p01,
            p21,
            p12,
        })
    }

    /// Looks up a matrix by its short name, as used by the CLI.
    pub fn named(&self, name: &str) -> Option<SparseMatrix> {
        let d = SparseMatrix::from_diagonal;
        let m = match name {
            "b1" => self.b1.clone(),
            "b2" => self.b2.clone(),
            "b1t" => self.b1t.clone(),
            "b2t" => self.b2t.clone(),
            "dtilde2" => d(&self.norms.dtilde2),
            "dtilde3" => d(&self.norms.dtilde3),
            "d1" => d(&self.norms.d1),
            "d2" => d(&self.norms.d2),
            "d3" => d(&self.norms.d3),
            "d4" => d(&self.norms.d4),
            "d5" => d(&self.norms.d5),
            "l0" => self.b1.matmul(&self.b1t),
            "l1" => self.b1t.matmul(&self.b1).add(&self.b2.matmul(&self.b2t)),
            "l2" => self.b2t.matmul(&self.b2),
            "l0u" => self.laplacians.l0_up.clone(),
            "l1u" => self.laplacians.l1_up.clone(),
            "l1d" => self.laplacians.l1_down.clone(),
            "l2d" => self.laplacians.l2_down.clone(),
            "a0u" => self.adjacency.a0_up.clone(),
            "a1u" => self.adjacency.a1_up.clone(),
            "a1d" => self.adjacency.a1_down.clone(),
            "a2d" => self.adjacency.a2_down.clone(),
            "atilde0u" => self.adjacency.a0_up_tilde.clone(),
            "atilde1u" => self.adjacency.a1_up_tilde.clone(),
            "atilde1d" => self.adjacency.a1_down_tilde.clone(),
            "atilde2d" => self.adjacency.a2_down_tilde.clone(),
            "a1sum" => self.a1_sum.clone(),
            "p10" => self.p10.clone(),
            "p01" => self.p01.clone(),
            "p21" => self.p21.clone(),
            "p12" => self.p12.clone(),
            _ => return None,
        };
        Some(m)
    }

    pub const NAMES: [&'static str; 31] = [
        "b1", "b2", "b1t", "b2t", "dtilde2", "dtilde3", "d1", "d2", "d3", "d4", "d5", "l0", "l1", "l2", "l0u", "l1u",
        "l1d", "l2d", "a0u", "a1u", "a1d", "a2d", "atilde0u", "atilde1u", "atilde1d", "atilde2d", "a1sum", "p10",
        "p01", "p21", "p12",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::{build_complex, grid_complex};
    use crate::dense::Matrix;

    fn triangle() -> SimplicialComplex2 {
        build_complex(&[[0, 1, 2]], &[], &[]).unwrap()
    }

    fn path() -> SimplicialComplex2 {
        build_complex(&[], &[[0, 1], [1, 2]], &[]).unwrap()
    }

    #[test]
    fn triangle_boundaries() {
        let c = triangle();
        let b1 = boundary_matrix(&c, 1).unwrap().to_dense();
        assert_eq!(
            b1,
            Matrix::from_rows(&[[-1.0, -1.0, 0.0], [1.0, 0.0, -1.0], [0.0, 1.0, 1.0]])
        );
        let b2 = boundary_matrix(&c, 2).unwrap().to_dense();
        assert_eq!(b2, Matrix::from_rows(&[[1.0], [-1.0], [1.0]]));
        assert!(boundary_matrix(&c, 3).is_err());
    }

    #[test]
    fn no_triangles_means_empty_b2() {
        let b2 = boundary_matrix(&path(), 2).unwrap();
        assert_eq!(b2.shape(), (2, 0));
    }

    #[test]
    fn laplacians_of_small_complexes() {
        assert_eq!(
            hodge_laplacian(&triangle(), 0).unwrap().to_dense(),
            Matrix::from_rows(&[[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]])
        );
        assert_eq!(
            hodge_laplacian(&path(), 0).unwrap().to_dense(),
            Matrix::from_rows(&[[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
        );
        let point = build_complex(&[], &[], &[0]).unwrap();
        assert_eq!(hodge_laplacian(&point, 0).unwrap().to_dense(), Matrix::zeros(1, 1));
        assert_eq!(
            hodge_laplacian(&triangle(), 2).unwrap().to_dense(),
            Matrix::from_rows(&[[3.0]])
        );
    }

    #[test]
    fn triangle_normalizations() {
        let c = triangle();
        let ops = OperatorSet::new(&c).unwrap();
        assert_eq!(ops.norms.dtilde2, vec![2.0; 3]);
        assert_eq!(ops.norms.d2, vec![1.0; 3]);
        assert_eq!(ops.norms.d1, vec![4.0; 3]);
        assert_eq!(ops.norms.d5, vec![1.0; 3]);
        assert_eq!(ops.norms.d3, vec![1.0 / 3.0]);
    }

    #[test]
    fn path_normalizations() {
        let ops = OperatorSet::new(&path()).unwrap();
        assert_eq!(ops.norms.d2, vec![1.0, 1.0]);
        assert_eq!(ops.norms.d5, vec![0.0, 0.0]);
        assert_eq!(ops.norms.d1, vec![2.0, 4.0, 2.0]);
        assert_eq!(ops.laplacians.l1_down.nnz(), 0);
        assert_eq!(ops.laplacians.l2_down.shape(), (0, 0));
        assert_eq!(ops.adjacency.a2_down.shape(), (0, 0));
        assert_eq!(ops.adjacency.a2_down_tilde.shape(), (0, 0));
    }

    #[test]
    fn isolated_vertex_is_clamped() {
        let c = build_complex(&[[0, 1, 2]], &[], &[3]).unwrap();
        let ops = OperatorSet::new(&c).unwrap();
        assert_eq!(ops.norms.dtilde2[3], 1.0);
        assert_eq!(ops.norms.d1[3], 1.0);
        assert_eq!(ops.adjacency.a0_up_tilde.get(3, 3), 1.0);
        assert!(ops.adjacency.a0_up_tilde.is_finite());
    }

    #[test]
    fn triangle_normalized_operators() {
        let ops = OperatorSet::new(&triangle()).unwrap();
        assert_eq!(
            ops.laplacians.l0_up.to_dense(),
            Matrix::from_rows(&[[1.0, -0.5, -0.5], [-0.5, 1.0, -0.5], [-0.5, -0.5, 1.0]])
        );
        assert_eq!(ops.laplacians.l2_down.to_dense(), Matrix::from_rows(&[[3.0]]));
        assert_eq!(
            ops.adjacency.a0_up.to_dense(),
            Matrix::from_rows(&[[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        );
        assert_eq!(ops.adjacency.a0_up_tilde.to_dense(), Matrix::filled(3, 3, 1.0 / 3.0));
        let b2 = ops.b2.to_dense();
        assert_eq!(ops.p21.to_dense(), b2.map(|v| v / 3.0));
    }

    #[test]
    fn mnist_grid_operator_shapes() {
        let (c, _) = grid_complex(28, 28, 4, 4).unwrap();
        let ops = OperatorSet::new(&c).unwrap();
        assert_eq!(ops.adjacency.a0_up_tilde.shape(), (49, 49));
        assert_eq!(ops.adjacency.a1_up_tilde.shape(), (156, 156));
        assert_eq!(ops.adjacency.a1_down_tilde.shape(), (156, 156));
        assert_eq!(ops.adjacency.a2_down_tilde.shape(), (144, 144));
        assert_eq!(ops.p10.shape(), (49, 156));
        assert_eq!(ops.p01.shape(), (156, 49));
        assert_eq!(ops.p21.shape(), (156, 144));
        assert_eq!(ops.p12.shape(), (144, 156));
        for name in OperatorSet::NAMES {
            assert!(ops.named(name).unwrap().is_finite(), "{name}");
        }
        for (k, name) in ["l0", "l1", "l2"].into_iter().enumerate() {
            assert_eq!(ops.named(name), Some(hodge_laplacian(&c, k).unwrap()));
        }
    }

    #[test]
    fn single_vertex_operators() {
        let c = build_complex(&[], &[], &[0]).unwrap();
        let ops = OperatorSet::new(&c).unwrap();
        assert_eq!(ops.b1.shape(), (1, 0));
        assert_eq!(ops.b2.shape(), (0, 0));
        assert_eq!(ops.adjacency.a0_up.to_dense(), Matrix::identity(1));
        assert_eq!(ops.adjacency.a0_up_tilde.to_dense(), Matrix::identity(1));
        assert_eq!(ops.p10.shape(), (1, 0));
    }
}
