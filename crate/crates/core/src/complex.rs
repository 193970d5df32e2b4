//! Simplicial 2-complexes and the image grid complex.

use std::collections::{BTreeSet, HashMap};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::nn::FeatureSet;

/// A simplicial complex of dimension at most two.
///
/// Vertices are the ids `0..n_vertices`. Every edge and triangle stores its
/// vertices in strictly increasing order, and every edge of a triangle is
/// itself present in `edges`. The order of the face lists is the basis order
/// used by every operator built from the complex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimplicialComplex2 {
    n_vertices: usize,
    edges: Vec<[usize; 2]>,
    triangles: Vec<[usize; 3]>,
    edge_lookup: HashMap<[usize; 2], usize>,
}

impl SimplicialComplex2 {
    /// Validates explicitly ordered face lists without reordering them.
    ///
    /// Use [`build_complex`] to get the canonical closure of arbitrary faces.
    pub fn new(n_vertices: usize, edges: Vec<[usize; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut edge_lookup = HashMap::with_capacity(edges.len());
        for (idx, e) in edges.iter().enumerate() {
            check_face(e, n_vertices)?;
            if edge_lookup.insert(*e, idx).is_some() {
                return Err(Error::DuplicateFace(e.to_vec()));
            }
        }
        let mut seen = BTreeSet::new();
        for t in &triangles {
            check_face(t, n_vertices)?;
            if !seen.insert(*t) {
                return Err(Error::DuplicateFace(t.to_vec()));
            }
            for edge in triangle_edges(t) {
                if !edge_lookup.contains_key(&edge) {
                    return Err(Error::MissingBoundary { triangle: *t, edge });
                }
            }
        }
        Ok(Self {
            n_vertices,
            edges,
            triangles,
            edge_lookup,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Number of faces of dimension `dim` (`n_k`); zero above dimension two.
    pub fn count(&self, dim: usize) -> usize {
        match dim {
            0 => self.n_vertices,
            1 => self.edges.len(),
            2 => self.triangles.len(),
            _ => 0,
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.n_vertices, self.edges.len(), self.triangles.len()]
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Position of the edge `{a, b}` in the edge list.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { [a, b] } else { [b, a] };
        self.edge_lookup.get(&key).copied()
    }

    /// Largest face dimension present (0 for a bare vertex set).
    pub fn dimension(&self) -> usize {
        if !self.triangles.is_empty() {
            2
        } else if !self.edges.is_empty() {
            1
        } else {
            0
        }
    }

    /// True when both face lists are strictly lexicographically increasing.
    pub fn is_canonical(&self) -> bool {
        self.edges.windows(2).all(|w| w[0] < w[1]) && self.triangles.windows(2).all(|w| w[0] < w[1])
    }

    /// The subcomplex of faces with dimension at most `dim`.
    pub fn skeleton(&self, dim: usize) -> SimplicialComplex2 {
        let edges = if dim >= 1 { self.edges.clone() } else { Vec::new() };
        let triangles = if dim >= 2 { self.triangles.clone() } else { Vec::new() };
        let edge_lookup = if dim >= 1 {
            self.edge_lookup.clone()
        } else {
            HashMap::new()
        };
        SimplicialComplex2 {
            n_vertices: self.n_vertices,
            edges,
            triangles,
            edge_lookup,
        }
    }

    /// Reorders the edge and triangle lists: new position `i` holds old face
    /// `perm[i]`. Vertex labels are untouched, so orientations are preserved.
    pub fn with_face_order(&self, edge_perm: &[usize], triangle_perm: &[usize]) -> Result<Self> {
        check_permutation(edge_perm, self.edges.len(), "edge permutation")?;
        check_permutation(triangle_perm, self.triangles.len(), "triangle permutation")?;
        Self::new(
            self.n_vertices,
            edge_perm.iter().map(|&i| self.edges[i]).collect(),
            triangle_perm.iter().map(|&i| self.triangles[i]).collect(),
        )
    }

    /// Serializes every face, one per line, vertices first.
    pub fn to_face_list(&self) -> String {
        let mut out = format!(
            "# simplicial 2-complex: {} vertices, {} edges, {} triangles\n",
            self.n_vertices,
            self.edges.len(),
            self.triangles.len()
        );
        for v in 0..self.n_vertices {
            out.push_str(&format!("{v}\n"));
        }
        for [a, b] in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        for [a, b, c] in &self.triangles {
            out.push_str(&format!("{a} {b} {c}\n"));
        }
        out
    }

    /// Parses the face-list text format and returns the canonical closure.
    pub fn from_face_list(text: &str) -> Result<Self> {
        let faces = parse_face_list(text)?;
        build_complex(&faces.triangles, &faces.edges, &faces.vertices)
    }
}

fn check_face<const N: usize>(face: &[usize; N], n_vertices: usize) -> Result<()> {
    if let Some(&v) = face.iter().find(|&&v| v >= n_vertices) {
        return Err(Error::VertexOutOfRange {
            face: face.to_vec(),
            vertex: v,
            n_vertices,
        });
    }
    if face.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DegenerateFace(face.to_vec()));
    }
    if face.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::UnsortedFace(face.to_vec()));
    }
    Ok(())
}

fn check_permutation(perm: &[usize], n: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::shape(what, n, perm.len()));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::shape(what, "a permutation", format!("{perm:?}")));
        }
    }
    Ok(())
}

/// Boundary edges of a sorted triangle, in the order `(i,j), (i,k), (j,k)`.
pub(crate) fn triangle_edges(&[i, j, k]: &[usize; 3]) -> [[usize; 2]; 3] {
    [[i, j], [i, k], [j, k]]
}

fn canonical<const N: usize>(face: [usize; N]) -> Result<[usize; N]> {
    let mut f = face;
    f.sort_unstable();
    if f.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DegenerateFace(face.to_vec()));
    }
    Ok(f)
}

/// Builds the smallest simplicial complex containing the given faces.
///
/// Faces are sorted internally and the lists are sorted lexicographically;
/// duplicates merge. The vertex count is one more than the largest id seen.
pub fn build_complex(
    triangles: &[[usize; 3]],
    extra_edges: &[[usize; 2]],
    extra_vertices: &[usize],
) -> Result<SimplicialComplex2> {
    let mut tris = BTreeSet::new();
    let mut edges = BTreeSet::new();
    let mut n_vertices = 0;
    for &t in triangles {
        let t = canonical(t)?;
        edges.extend(triangle_edges(&t));
        n_vertices = n_vertices.max(t[2] + 1);
        tris.insert(t);
    }
    for &e in extra_edges {
        let e = canonical(e)?;
        n_vertices = n_vertices.max(e[1] + 1);
        edges.insert(e);
    }
    for &v in extra_vertices {
        n_vertices = n_vertices.max(v + 1);
    }
    SimplicialComplex2::new(n_vertices, edges.into_iter().collect(), tris.into_iter().collect())
}

/// Faces read from the face-list text format, grouped by dimension.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaceList {
    pub vertices: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    pub triangles: Vec<[usize; 3]>,
}

/// Parses one face per line: whitespace-separated vertex ids, `#` starts a
/// comment, blank lines are skipped. One id is a vertex, two an edge, three a
/// triangle.
pub fn parse_face_list(text: &str) -> Result<FaceList> {
    let mut faces = FaceList::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ids = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<usize>().map_err(|_| Error::FaceList {
                    line: lineno + 1,
                    message: format!("invalid vertex id {tok:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match ids[..] {
            [v] => faces.vertices.push(v),
            [a, b] => faces.edges.push([a, b]),
            [a, b, c] => faces.triangles.push([a, b, c]),
            _ => {
                return Err(Error::FaceList {
                    line: lineno + 1,
                    message: format!("faces have 1 to 3 vertices, got {}", ids.len()),
                })
            }
        }
    }
    Ok(faces)
}

/// Layout of the grid complex over an image: which pixels each vertex covers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub kernel: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    /// Top-left pixel `(row, col)` of each vertex's patch, by vertex id.
    pub patch_origins: Vec<(usize, usize)>,
}

impl GridGeometry {
    pub fn n_vertices(&self) -> usize {
        self.rows * self.cols
    }

    pub fn vertex(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Patch features: row `v` is the row-major flattening of vertex `v`'s
    /// `kernel × kernel` patch.
    pub fn patch_matrix(&self, image: &Matrix) -> Result<Matrix> {
        if image.shape() != (self.height, self.width) {
            return Err(Error::shape(
                "image_features",
                format!("{}x{} image", self.height, self.width),
                format!("{}x{}", image.rows(), image.cols()),
            ));
        }
        let k = self.kernel;
        let mut x0 = Matrix::zeros(self.n_vertices(), k * k);
        for (v, &(r0, c0)) in self.patch_origins.iter().enumerate() {
            let row = x0.row_mut(v);
            for dr in 0..k {
                row[dr * k..(dr + 1) * k].copy_from_slice(&image.row(r0 + dr)[c0..c0 + k]);
            }
        }
        Ok(x0)
    }
}

/// Builds the grid complex of an `height × width` image for patch size
/// `kernel` and step `stride`.
///
/// Vertices are patches in row-major order. Vertices that are horizontally,
/// vertically or diagonally adjacent share an edge (both diagonals of every
/// cell), and every triple of pairwise-adjacent vertices spans a triangle.
pub fn grid_complex(
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
) -> Result<(SimplicialComplex2, GridGeometry)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidGrid(format!(
            "kernel ({kernel}) and stride ({stride}) must be positive"
        )));
    }
    if kernel > height || kernel > width {
        return Err(Error::InvalidGrid(format!(
            "kernel {kernel} does not fit a {height}x{width} image"
        )));
    }
    let rows = (height - kernel) / stride + 1;
    let cols = (width - kernel) / stride + 1;
    let n = rows * cols;
    let patch_origins = (0..n).map(|v| ((v / cols) * stride, (v % cols) * stride)).collect();

    let adjacent = |a: usize, b: usize| {
        let (ra, ca) = (a / cols, a % cols);
        let (rb, cb) = (b / cols, b % cols);
        a != b && ra.abs_diff(rb) <= 1 && ca.abs_diff(cb) <= 1
    };

    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut edges = Vec::new();
    for (a, adj) in neighbors.iter_mut().enumerate() {
        let (ra, ca) = (a / cols, a % cols);
        for rb in ra.saturating_sub(1)..=(ra + 1).min(rows - 1) {
            for cb in ca.saturating_sub(1)..=(ca + 1).min(cols - 1) {
                let b = rb * cols + cb;
                if b > a && adjacent(a, b) {
                    edges.push([a, b]);
                    adj.push(b);
                }
            }
        }
    }
    edges.sort_unstable();

    let mut triangles = Vec::new();
    for &[a, b] in &edges {
        for &c in &neighbors[a] {
            if c > b && adjacent(b, c) {
                triangles.push([a, b, c]);
            }
        }
    }
    triangles.sort_unstable();

    let complex = SimplicialComplex2::new(n, edges, triangles)?;
    let geometry = GridGeometry {
        rows,
        cols,
        kernel,
        stride,
        height,
        width,
        patch_origins,
    };
    Ok((complex, geometry))
}

/// Input features for an image on its grid complex: flattened patches on
/// vertices, a single constant `1` on every edge and triangle.
pub fn image_features(image: &Matrix, geom: &GridGeometry, complex: &SimplicialComplex2) -> Result<FeatureSet> {
    if complex.n_vertices() != geom.n_vertices() {
        return Err(Error::shape(
            "image_features",
            format!("{} grid vertices", geom.n_vertices()),
            complex.n_vertices(),
        ));
    }
    let x0 = geom.patch_matrix(image)?;
    Ok(FeatureSet::new(
        x0,
        Some(Matrix::filled(complex.n_edges(), 1, 1.0)),
        Some(Matrix::filled(complex.n_triangles(), 1, 1.0)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closure_of_single_triangle() {
        let c = build_complex(&[[0, 1, 2]], &[], &[]).unwrap();
        assert_eq!(c.n_vertices(), 3);
        assert_eq!(c.edges(), &[[0, 1], [0, 2], [1, 2]]);
        assert_eq!(c.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn extra_edge_is_canonicalized() {
        let c = build_complex(&[], &[[1, 0]], &[]).unwrap();
        assert_eq!(c.edges(), &[[0, 1]]);
        assert_eq!(c.n_triangles(), 0);
    }

    #[test]
    fn two_triangles_sharing_an_edge() {
        let c = build_complex(&[[0, 1, 2], [2, 1, 3]], &[], &[]).unwrap();
        assert_eq!(c.counts(), [4, 5, 2]);
        assert_eq!(c.triangles(), &[[0, 1, 2], [1, 2, 3]]);
        assert!(c.is_canonical());
    }

    #[test]
    fn degenerate_face_is_rejected() {
        match build_complex(&[[0, 1, 1]], &[], &[]) {
            Err(Error::DegenerateFace(f)) => assert_eq!(f, vec![0, 1, 1]),
            other => panic!("expected degenerate face error, got {other:?}"),
        }
        assert!(matches!(
            build_complex(&[], &[[3, 3]], &[]),
            Err(Error::DegenerateFace(_))
        ));
    }

    #[test]
    fn new_rejects_missing_boundary() {
        let err = SimplicialComplex2::new(3, vec![[0, 1], [1, 2]], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, Error::MissingBoundary { edge: [0, 2], .. }));
    }

    #[test]
    fn extra_vertices_extend_the_vertex_set() {
        let c = build_complex(&[[0, 1, 2]], &[], &[4]).unwrap();
        assert_eq!(c.n_vertices(), 5);
    }

    #[test]
    fn skeletons() {
        let c = build_complex(&[[0, 1, 2]], &[], &[]).unwrap();
        assert_eq!(c.skeleton(1).counts(), [3, 3, 0]);
        assert_eq!(c.skeleton(0).counts(), [3, 0, 0]);
        let (g, _) = grid_complex(28, 28, 4, 4).unwrap();
        assert_eq!(g.skeleton(1).counts(), [49, 156, 0]);
    }

    #[test]
    fn mnist_grid_counts() {
        let (c, geom) = grid_complex(28, 28, 4, 4).unwrap();
        assert_eq!((geom.rows, geom.cols), (7, 7));
        assert_eq!(c.counts(), [49, 156, 144]);
        assert!(c.is_canonical());
        for &(r, col) in &geom.patch_origins {
            assert!(r + 4 <= 28 && col + 4 <= 28);
        }
    }

    #[test]
    fn single_cell_grid() {
        let (c, _) = grid_complex(4, 4, 4, 4).unwrap();
        assert_eq!(c.counts(), [1, 0, 0]);
    }

    #[test]
    fn invalid_grids() {
        assert!(grid_complex(3, 28, 4, 4).is_err());
        assert!(grid_complex(28, 28, 4, 0).is_err());
        assert!(grid_complex(28, 28, 0, 1).is_err());
    }

    #[test]
    fn features_of_constant_images() {
        let (c, geom) = grid_complex(8, 8, 4, 4).unwrap();
        let zeros = image_features(&Matrix::zeros(8, 8), &geom, &c).unwrap();
        assert!(zeros.x0().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(zeros.x1().unwrap(), &Matrix::filled(c.n_edges(), 1, 1.0));
        assert_eq!(zeros.x2().unwrap(), &Matrix::filled(c.n_triangles(), 1, 1.0));
        let grey = image_features(&Matrix::filled(8, 8, 0.25), &geom, &c).unwrap();
        assert!(grey.x0().as_slice().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn patch_rows_follow_row_major_pixels() {
        let (c, geom) = grid_complex(8, 8, 4, 4).unwrap();
        let image = Matrix::from_fn(8, 8, |r, col| (r * 8 + col) as f64);
        let f = image_features(&image, &geom, &c).unwrap();
        assert_eq!(f.x0().shape(), (4, 16));
        let expected: Vec<f64> = (0..4)
            .flat_map(|r| (0..4).map(move |col| (r * 8 + col) as f64))
            .collect();
        assert_eq!(f.x0().row(0), &expected[..]);
        // vertex 3 is the bottom-right patch at pixel (4, 4)
        assert_eq!(f.x0()[(3, 0)], 36.0);
        assert!(image_features(&Matrix::zeros(7, 8), &geom, &c).is_err());
    }

    #[test]
    fn face_list_round_trip() {
        let text = "# two triangles\n2 1 3\n0 1 2  # trailing comment\n\n5\n";
        let c = SimplicialComplex2::from_face_list(text).unwrap();
        assert_eq!(c.counts(), [6, 5, 2]);
        assert_eq!(SimplicialComplex2::from_face_list(&c.to_face_list()).unwrap(), c);
        assert!(parse_face_list("0 1 2 3").is_err());
        assert!(parse_face_list("0 x").is_err());
    }

    #[test]
    fn reordering_faces_keeps_validity() {
        let c = build_complex(&[[0, 1, 2], [1, 2, 3]], &[], &[]).unwrap();
        let p = c.with_face_order(&[4, 3, 2, 1, 0], &[1, 0]).unwrap();
        assert_eq!(p.edges()[0], [2, 3]);
        assert_eq!(p.edge_index(2, 3), Some(0));
        assert!(!p.is_canonical());
        assert!(c.with_face_order(&[0, 0, 1, 2, 3], &[0, 1]).is_err());
    }
}
