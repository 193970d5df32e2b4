//! Convolutional neural network layers on simplicial 2-complexes.
//!
//! The crate is organized bottom-up:
//!
//! - [`complex`]: simplicial 2-complexes, including the grid complex laid over
//!   an image, and the face-list text format.
//! - [`operators`]: boundary matrices, Hodge Laplacians, degree normalizations
//!   and the normalized adjacency matrices, bundled in an [`OperatorSet`].
//! - [`nn`]: the SCCONV and GCONV layers, a reverse-mode tape, the three
//!   classifier variants, Adam and finite-difference gradient checks.
//! - [`data`]: the MNIST IDX container and stratified sampling.
//!
//! Sparse matrices ([`sparse::SparseMatrix`]) carry every operator; feature
//! matrices are dense ([`dense::Matrix`]). All arithmetic is `f64`.

pub mod complex;
pub mod data;
pub mod dense;
pub mod error;
pub mod nn;
pub mod operators;
pub mod sparse;

pub use complex::{build_complex, grid_complex, image_features, GridGeometry, SimplicialComplex2};
pub use dense::Matrix;
pub use error::{Error, Result};
pub use nn::FeatureSet;
pub use operators::{boundary_matrix, hodge_laplacian, NormalizationSet, OperatorSet};
pub use sparse::SparseMatrix;
