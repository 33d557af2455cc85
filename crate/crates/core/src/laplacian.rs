//! Sparse Laplacian assembly for grids, triangle meshes and
//! anisotropic diffusion tensors.
//!
//! All builders produce a symmetric matrix whose rows sum to zero: the
//! diagonal is always the exact negation of the accumulated off-diagonal row
//! sum. Off-diagonal entries are nonnegative for grid assemblies; cotangent
//! weights may turn negative on obtuse triangles and anisotropic weights may
//! turn negative beyond the monotone regime |Txy| <= min(Txx, Tyy). Those
//! cases are caught later by the positivity check on kernel outputs.

use sprs::{CsMat, TriMat};

use crate::domain::{neumaier_sum, GridDomain, MeshDomain};
use crate::error::{Error, Result};

/// Symmetric sparse Laplacian with zero row sums.
#[derive(Debug, Clone)]
pub struct LaplacianMatrix {
    mat: CsMat<f64>,
}

impl LaplacianMatrix {
    /// Assemble from undirected links `(i, j, weight)`. Duplicate links
    /// accumulate. Each link contributes `weight` to entries (i,j) and (j,i);
    /// diagonals are the exact negated row sums.
    pub fn from_links(n: usize, links: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
        for &(i, j, w) in links {
            if i >= n || j >= n {
                return Err(Error::Domain(format!(
                    "link ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::Domain(format!("self link at node {i}")));
            }
            if !w.is_finite() {
                return Err(Error::Domain(format!("link ({i}, {j}) has non-finite weight {w}")));
            }
            *rows[i].entry(j).or_insert(0.0) += w;
            *rows[j].entry(i).or_insert(0.0) += w;
        }
        let mut tri = TriMat::new((n, n));
        for (i, row) in rows.iter().enumerate() {
            let weights: Vec<f64> = row.values().copied().collect();
            tri.add_triplet(i, i, -neumaier_sum(&weights));
            for (&j, &w) in row {
                tri.add_triplet(i, j, w);
            }
        }
        Ok(LaplacianMatrix {
            mat: tri.to_csr(),
        })
    }

    pub fn n(&self) -> usize {
        self.mat.rows()
    }

    /// Entry (i, j), zero when structurally absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn csr(&self) -> &CsMat<f64> {
        &self.mat
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n());
        let mut out = vec![0.0; self.n()];
        for (row, vec) in self.mat.outer_iterator().enumerate() {
            let mut acc = 0.0;
            for (col, &w) in vec.iter() {
                acc += w * v[col];
            }
            out[row] = acc;
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                let row = self.mat.outer_view(i).unwrap();
                neumaier_sum(&row.iter().map(|(_, &w)| w).collect::<Vec<_>>())
            })
            .collect()
    }
}

/// 5-point Laplacian on the active cells of a grid. Links crossing the mask
/// are dropped, so masked boundaries behave as zero-flux walls.
pub fn grid_laplacian(grid: &GridDomain) -> Result<LaplacianMatrix> {
    let w_link = 1.0 / (grid.spacing * grid.spacing);
    let mut links = Vec::new();
    for node in 0..grid.node_count() {
        let (x, y) = grid.cell_of(node);
        if let Some(right) = grid.index_of(x + 1, y) {
            links.push((node, right, w_link));
        }
        if let Some(up) = grid.index_of(x, y + 1) {
            links.push((node, up, w_link));
        }
    }
    LaplacianMatrix::from_links(grid.node_count(), &links)
}

/// Cotangent Laplacian of a triangle mesh: the weight of edge (i, j) is half
/// the sum of the cotangents of the angles opposite it. Weights are not
/// clamped; obtuse triangles yield negative entries.
pub fn cotangent_laplacian(mesh: &MeshDomain) -> Result<LaplacianMatrix> {
    let pos = mesh.positions();
    let mut links = Vec::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        // Angle at vertex tri[k] is opposite the edge (tri[k+1], tri[k+2]).
        for k in 0..3 {
            let apex = tri[k];
            let i = tri[(k + 1) % 3];
            let j = tri[(k + 2) % 3];
            let e1 = sub(pos[i], pos[apex]);
            let e2 = sub(pos[j], pos[apex]);
            let cross_norm = norm(cross(e1, e2));
            let scale = norm(e1) * norm(e2);
            // Non-finite coordinates surface here as a NaN cross product.
            if cross_norm.is_nan() || cross_norm <= 1e-12 * scale {
                return Err(Error::Domain(format!(
                    "triangle {t} ({:?}) is degenerate", tri
                )));
            }
            let cot = dot(e1, e2) / cross_norm;
            links.push((i, j, 0.5 * cot));
        }
    }
    LaplacianMatrix::from_links(mesh.node_count(), &links)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Per-cell symmetric positive definite 2x2 diffusion tensors on a grid,
/// indexed by node index.
#[derive(Debug, Clone)]
pub struct AnisotropyField {
    txx: Vec<f64>,
    txy: Vec<f64>,
    tyy: Vec<f64>,
}

impl AnisotropyField {
    pub fn new(txx: Vec<f64>, txy: Vec<f64>, tyy: Vec<f64>) -> Result<Self> {
        if txx.len() != txy.len() || txx.len() != tyy.len() {
            return Err(Error::Domain("tensor component lengths differ".into()));
        }
        for i in 0..txx.len() {
            let (a, b, c) = (txx[i], txy[i], tyy[i]);
            if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                return Err(Error::Domain(format!("tensor at node {i} is not finite")));
            }
            if a <= 0.0 || c <= 0.0 || a * c - b * b <= 0.0 {
                return Err(Error::Domain(format!(
                    "tensor at node {i} is not positive definite: txx={a}, txy={b}, tyy={c}"
                )));
            }
        }
        Ok(AnisotropyField { txx, txy, tyy })
    }

    pub fn isotropic(n: usize) -> Self {
        AnisotropyField {
            txx: vec![1.0; n],
            txy: vec![0.0; n],
            tyy: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.txx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txx.is_empty()
    }

    pub fn tensor(&self, node: usize) -> (f64, f64, f64) {
        (self.txx[node], self.txy[node], self.tyy[node])
    }

    /// Largest eigenvalue ratio over all cells.
    pub fn max_ratio(&self) -> f64 {
        let mut worst: f64 = 1.0;
        for i in 0..self.len() {
            let (a, b, c) = (self.txx[i], self.txy[i], self.tyy[i]);
            let mean = 0.5 * (a + c);
            let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            worst = worst.max((mean + d) / (mean - d));
        }
        worst
    }
}

/// Laplacian for div(T grad u) with spatially varying SPD tensors.
///
/// The mixed term is folded into diagonal links so that all weights stay
/// nonnegative while |Txy| <= min(Txx, Tyy); tensors are averaged
/// arithmetically between the two cells of each link. Accuracy degrades with
/// anisotropy; usable up to eigenvalue ratios around ten.
pub fn anisotropic_laplacian(
    grid: &GridDomain,
    field: &AnisotropyField,
) -> Result<LaplacianMatrix> {
    if field.len() != grid.node_count() {
        return Err(Error::Domain(format!(
            "anisotropy field covers {} nodes, domain has {}",
            field.len(),
            grid.node_count()
        )));
    }
    let inv_h2 = 1.0 / (grid.spacing * grid.spacing);
    let mut links = Vec::new();
    let avg = |a: usize, b: usize| -> (f64, f64, f64) {
        let (axx, axy, ayy) = field.tensor(a);
        let (bxx, bxy, byy) = field.tensor(b);
        (0.5 * (axx + bxx), 0.5 * (axy + bxy), 0.5 * (ayy + byy))
    };
    for node in 0..grid.node_count() {
        let (x, y) = grid.cell_of(node);
        if let Some(right) = grid.index_of(x + 1, y) {
            let (txx, txy, _) = avg(node, right);
            links.push((node, right, (txx - txy.abs()) * inv_h2));
        }
        if let Some(up) = grid.index_of(x, y + 1) {
            let (_, txy, tyy) = avg(node, up);
            links.push((node, up, (tyy - txy.abs()) * inv_h2));
        }
        // Mixed term: couple along the diagonal matching the sign of Txy.
        if let Some(diag) = grid.index_of(x + 1, y + 1) {
            let (_, txy, _) = avg(node, diag);
            if txy > 0.0 {
                links.push((node, diag, txy * inv_h2));
            }
        }
        if x > 0 {
            if let Some(anti) = grid.index_of(x - 1, y + 1) {
                let (_, txy, _) = avg(node, anti);
                if txy < 0.0 {
                    links.push((node, anti, -txy * inv_h2));
                }
            }
        }
    }
    LaplacianMatrix::from_links(grid.node_count(), &links)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_grid_domain, parse_off};

    fn grid(w: usize, h: usize, spacing: f64, mask: Option<&[bool]>) -> GridDomain {
        make_grid_domain(w, h, spacing, mask)
            .unwrap()
            .as_grid()
            .unwrap()
            .clone()
    }

    #[test]
    fn path_graph_second_difference() {
        let g = grid(3, 1, 1.0, None);
        let lap = grid_laplacian(&g).unwrap();
        assert_eq!(lap.apply(&[0.0, 1.0, 0.0]), vec![1.0, -2.0, 1.0]);
    }

    #[test]
    fn masked_middle_cell_isolates_neighbors() {
        let mask = [true, false, true];
        let g = grid(3, 1, 1.0, Some(&mask));
        let lap = grid_laplacian(&g).unwrap();
        assert_eq!(lap.n(), 2);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(lap.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn grid_laplacian_is_symmetric_with_zero_row_sums() {
        let mut mask = vec![true; 7 * 5];
        mask[8] = false;
        mask[9] = false;
        mask[22] = false;
        let g = grid(7, 5, 0.25, Some(&mask));
        let lap = grid_laplacian(&g).unwrap();
        for i in 0..lap.n() {
            for j in (i + 1)..lap.n() {
                assert_eq!(lap.get(i, j), lap.get(j, i));
                assert!(lap.get(i, j) >= 0.0);
            }
        }
        for s in lap.row_sums() {
            assert!(s.abs() <= 1e-12, "row sum {s}");
        }
    }

    #[test]
    fn interior_cell_counts_active_neighbors() {
        let g = grid(3, 3, 0.5, None);
        let lap = grid_laplacian(&g).unwrap();
        let center = g.index_of(1, 1).unwrap();
        assert_eq!(lap.get(center, center), -4.0 * 4.0);
        let corner = g.index_of(0, 0).unwrap();
        assert_eq!(lap.get(corner, corner), -2.0 * 4.0);
    }

    #[test]
    fn equilateral_cotangent_weights() {
        // Unit-edge equilateral triangle: every angle 60 degrees, each edge
        // opposite a single angle, so w = cot(60)/2 = 1/(2 sqrt 3).
        let h = (3.0f64).sqrt() / 2.0;
        let text = format!("OFF\n3 1 3\n0 0 0\n1 0 0\n0.5 {h} 0\n3 0 1 2\n");
        let mesh = parse_off(&text, "eq.off").unwrap();
        let lap = cotangent_laplacian(mesh.as_mesh().unwrap()).unwrap();
        let expect = 1.0 / (2.0 * 3.0f64.sqrt());
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((lap.get(i, j) - expect).abs() < 1e-12);
        }
        for s in lap.row_sums() {
            assert!(s.abs() <= 1e-12);
        }
    }

    #[test]
    fn obtuse_triangle_gives_negative_weight() {
        // Angle at vertex 2 is obtuse; the edge (0, 1) opposite it gets a
        // negative cotangent weight.
        let text = "OFF\n3 1 3\n0 0 0\n1 0 0\n0.5 0.1 0\n3 0 1 2\n";
        let mesh = parse_off(text, "obtuse.off").unwrap();
        let lap = cotangent_laplacian(mesh.as_mesh().unwrap()).unwrap();
        assert!(lap.get(0, 1) < 0.0);
        assert!(lap.get(0, 2) > 0.0);
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let text = "OFF\n3 1 3\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n";
        let mesh = parse_off(text, "deg.off").unwrap();
        let e = cotangent_laplacian(mesh.as_mesh().unwrap()).unwrap_err();
        assert!(e.to_string().contains("triangle 0"), "{e}");
    }

    #[test]
    fn identity_tensor_reproduces_grid_laplacian() {
        let mut mask = vec![true; 16];
        mask[5] = false;
        let g = grid(4, 4, 0.5, Some(&mask));
        let iso = anisotropic_laplacian(&g, &AnisotropyField::isotropic(g.node_count())).unwrap();
        let plain = grid_laplacian(&g).unwrap();
        for i in 0..g.node_count() {
            for j in 0..g.node_count() {
                assert_eq!(iso.get(i, j), plain.get(i, j));
            }
        }
    }

    #[test]
    fn diagonal_tensor_matches_weighted_five_point_stencil() {
        let g = grid(4, 4, 1.0, None);
        let n = g.node_count();
        let field = AnisotropyField::new(vec![2.0; n], vec![0.0; n], vec![1.0; n]).unwrap();
        let lap = anisotropic_laplacian(&g, &field).unwrap();
        // Hand-assembled: weight 2 on x links, 1 on y links, no diagonals.
        for node in 0..n {
            let (x, y) = g.cell_of(node);
            let mut expected_diag = 0.0;
            if let Some(r) = g.index_of(x + 1, y) {
                assert_eq!(lap.get(node, r), 2.0);
            }
            if x > 0 {
                assert_eq!(lap.get(node, g.index_of(x - 1, y).unwrap()), 2.0);
            }
            if let Some(u) = g.index_of(x, y + 1) {
                assert_eq!(lap.get(node, u), 1.0);
            }
            for (dx, dy, w) in [(1i64, 0i64, 2.0), (-1, 0, 2.0), (0, 1, 1.0), (0, -1, 1.0)] {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx >= 0 && ny >= 0 && g.index_of(nx as usize, ny as usize).is_some() {
                    expected_diag -= w;
                }
            }
            assert_eq!(lap.get(node, node), expected_diag);
            if let Some(d) = g.index_of(x + 1, y + 1) {
                assert_eq!(lap.get(node, d), 0.0);
            }
        }
    }

    #[test]
    fn rotated_tensor_stays_monotone_and_balanced() {
        // 45-degree principal axis, ratio 4: Txx = Tyy = 2.5, Txy = 1.5.
        let g = grid(5, 5, 1.0, None);
        let n = g.node_count();
        let field = AnisotropyField::new(vec![2.5; n], vec![1.5; n], vec![2.5; n]).unwrap();
        let lap = anisotropic_laplacian(&g, &field).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    assert!(lap.get(i, j) >= 0.0);
                    assert_eq!(lap.get(i, j), lap.get(j, i));
                }
            }
        }
        for s in lap.row_sums() {
            assert!(s.abs() <= 1e-12);
        }
    }

    #[test]
    fn tensor_validation_rejects_indefinite() {
        assert!(AnisotropyField::new(vec![1.0], vec![2.0], vec![1.0]).is_err());
        assert!(AnisotropyField::new(vec![-1.0], vec![0.0], vec![1.0]).is_err());
        let f = AnisotropyField::new(vec![5.5], vec![4.5], vec![5.5]).unwrap();
        assert!((f.max_ratio() - 10.0).abs() < 1e-9);
    }
}
