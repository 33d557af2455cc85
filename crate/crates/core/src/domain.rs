//! Discrete domains (masked grids and triangle meshes) and the densities and
//! potentials living on them.
//!
//! All fields are stored as flat vectors indexed by a contiguous node index
//! `0..N`. On grids the index enumerates *active* cells in row-major order;
//! masked-out cells have no index at all, so downstream code never needs to
//! special-case holes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A discrete domain: either a rectangular grid with an activity mask or a
/// triangulated surface mesh.
#[derive(Debug, Clone)]
pub enum DomainSpec {
    Grid(GridDomain),
    Mesh(MeshDomain),
}

impl DomainSpec {
    pub fn node_count(&self) -> usize {
        match self {
            DomainSpec::Grid(g) => g.node_count(),
            DomainSpec::Mesh(m) => m.node_count(),
        }
    }

    /// Header dimensions for frame files: `(width, height)` for grids,
    /// `(node_count, 0)` for meshes.
    pub fn frame_dims(&self) -> (u32, u32) {
        match self {
            DomainSpec::Grid(g) => (g.width as u32, g.height as u32),
            DomainSpec::Mesh(m) => (m.node_count() as u32, 0),
        }
    }

    pub fn as_grid(&self) -> Option<&GridDomain> {
        match self {
            DomainSpec::Grid(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_mesh(&self) -> Option<&MeshDomain> {
        match self {
            DomainSpec::Mesh(m) => Some(m),
            _ => None,
        }
    }
}

/// Rectangular grid with uniform spacing and a per-cell activity mask.
/// Inactive cells are removed from the index space entirely.
#[derive(Debug, Clone)]
pub struct GridDomain {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    mask: Vec<bool>,
    /// cell (row-major) -> node index, `usize::MAX` when inactive.
    index: Vec<usize>,
    /// node index -> (x, y) cell coordinates.
    cells: Vec<(usize, usize)>,
}

impl GridDomain {
    pub fn new(
        width: usize,
        height: usize,
        spacing: f64,
        mask: Option<&[bool]>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Domain(format!("grid spacing must be positive, got {spacing}")));
        }
        let mask = match mask {
            Some(m) => {
                if m.len() != width * height {
                    return Err(Error::Domain(format!(
                        "mask has {} entries, expected {}x{} = {}",
                        m.len(),
                        width,
                        height,
                        width * height
                    )));
                }
                m.to_vec()
            }
            None => vec![true; width * height],
        };
        let mut index = vec![usize::MAX; width * height];
        let mut cells = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let c = y * width + x;
                if mask[c] {
                    index[c] = cells.len();
                    cells.push((x, y));
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Domain("mask leaves no active cell".into()));
        }
        Ok(GridDomain {
            width,
            height,
            spacing,
            mask,
            index,
            cells,
        })
    }

    pub fn node_count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_full(&self) -> bool {
        self.cells.len() == self.width * self.height
    }

    /// Node index of cell (x, y), if active.
    pub fn index_of(&self, x: usize, y: usize) -> Option<usize> {
        if x >= self.width || y >= self.height {
            return None;
        }
        match self.index[y * self.width + x] {
            usize::MAX => None,
            i => Some(i),
        }
    }

    /// Cell coordinates of a node index.
    pub fn cell_of(&self, node: usize) -> (usize, usize) {
        self.cells[node]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Physical position of a node (cell corner convention; only differences
    /// matter to any kernel built on top).
    pub fn position(&self, node: usize) -> [f64; 2] {
        let (x, y) = self.cells[node];
        [x as f64 * self.spacing, y as f64 * self.spacing]
    }
}

/// Triangulated mesh. Every vertex must belong to at least one triangle.
#[derive(Debug, Clone)]
pub struct MeshDomain {
    positions: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

impl MeshDomain {
    pub fn new(positions: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Domain("mesh has no vertices".into()));
        }
        if triangles.is_empty() {
            return Err(Error::Domain("mesh has no triangles".into()));
        }
        let n = positions.len();
        let mut referenced = vec![false; n];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::Domain(format!(
                        "triangle {t} references vertex {v}, but the mesh has {n} vertices"
                    )));
                }
                referenced[v] = true;
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Domain(format!(
                    "triangle {t} repeats a vertex: {tri:?}"
                )));
            }
        }
        if let Some(v) = referenced.iter().position(|r| !r) {
            return Err(Error::Domain(format!(
                "vertex {v} has no incident triangle"
            )));
        }
        for (v, p) in positions.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Domain(format!("vertex {v} has non-finite coordinates")));
            }
        }
        Ok(MeshDomain {
            positions,
            triangles,
        })
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
}

/// Build a grid domain. `mask` is row-major with `true` marking active cells;
/// `None` means all cells are active.
pub fn make_grid_domain(
    width: usize,
    height: usize,
    spacing: f64,
    mask: Option<&[bool]>,
) -> Result<DomainSpec> {
    Ok(DomainSpec::Grid(GridDomain::new(width, height, spacing, mask)?))
}

/// Load a triangle mesh from an ASCII OFF file.
pub fn load_mesh_off(path: &Path) -> Result<DomainSpec> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_off(&text, &path.display().to_string())
}

/// Parse ASCII OFF text. `label` names the source in error messages.
pub fn parse_off(text: &str, label: &str) -> Result<DomainSpec> {
    let err = |line: usize, message: String| Error::Parse {
        path: label.to_string(),
        line,
        message,
    };
    // (1-based line number, significant content) with comments stripped.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (ln, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty file, expected OFF header".into()))?;
    if header != "OFF" {
        return Err(err(ln, format!("expected OFF header, found {header:?}")));
    }
    let (ln, counts) = lines
        .next()
        .ok_or_else(|| err(ln, "missing vertex/face counts".into()))?;
    let counts: Vec<&str> = counts.split_whitespace().collect();
    if counts.len() < 2 {
        return Err(err(ln, "expected vertex, face and edge counts".into()));
    }
    let nv: usize = counts[0]
        .parse()
        .map_err(|_| err(ln, format!("bad vertex count {:?}", counts[0])))?;
    let nf: usize = counts[1]
        .parse()
        .map_err(|_| err(ln, format!("bad face count {:?}", counts[1])))?;

    let mut positions = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(ln, format!("expected {nv} vertex lines, file ended early")))?;
        let coords: Vec<&str> = l.split_whitespace().collect();
        if coords.len() < 3 {
            return Err(err(ln, format!("expected 3 coordinates, found {}", coords.len())));
        }
        let mut p = [0.0; 3];
        for (k, c) in coords[..3].iter().enumerate() {
            p[k] = c
                .parse()
                .map_err(|_| err(ln, format!("bad coordinate {c:?}")))?;
        }
        positions.push(p);
    }

    let mut triangles = Vec::with_capacity(nf);
    let mut last_ln = 0;
    for _ in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(last_ln, format!("expected {nf} face lines, file ended early")))?;
        last_ln = ln;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let arity: usize = toks[0]
            .parse()
            .map_err(|_| err(ln, format!("bad face arity {:?}", toks[0])))?;
        if arity != 3 {
            return Err(err(ln, format!("only triangle faces are supported, found a face with {arity} vertices")));
        }
        if toks.len() < 4 {
            return Err(err(ln, "face line too short".into()));
        }
        let mut tri = [0usize; 3];
        for (k, t) in toks[1..4].iter().enumerate() {
            let v: usize = t
                .parse()
                .map_err(|_| err(ln, format!("bad vertex index {t:?}")))?;
            if v >= nv {
                return Err(err(ln, format!("vertex index {v} out of range (mesh has {nv} vertices)")));
            }
            tri[k] = v;
        }
        triangles.push(tri);
    }

    MeshDomain::new(positions, triangles)
        .map(DomainSpec::Mesh)
        .map_err(|e| err(last_ln.max(2), e.to_string()))
}

/// Nonnegative density over domain nodes, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    values: Vec<f64>,
}

impl Density {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        neumaier_sum(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Compensated (Neumaier) summation; error stays below one ulp of the result
/// for the vector lengths used here.
pub(crate) fn neumaier_sum(v: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &x in v {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Normalize raw nonnegative values to unit mass.
///
/// After scaling, the largest entry is nudged by the remaining rounding
/// residual until the compensated sum is exactly 1.0. A second call then
/// finds total mass exactly 1 and returns its input unchanged, so
/// normalization is idempotent bit for bit.
pub fn normalize_density(raw: &[f64]) -> Result<Density> {
    if raw.is_empty() {
        return Err(Error::Density("cannot normalize an empty vector".into()));
    }
    for (i, &x) in raw.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::Density(format!("entry {i} is not finite: {x}")));
        }
        if x < 0.0 {
            return Err(Error::Density(format!("entry {i} is negative: {x}")));
        }
    }
    let total = neumaier_sum(raw);
    if total <= 0.0 {
        return Err(Error::Density("total mass is zero".into()));
    }
    let mut values: Vec<f64> = if total == 1.0 {
        return Ok(Density { values: raw.to_vec() });
    } else {
        raw.iter().map(|&x| x / total).collect()
    };
    // Residual fix-up: push the rounding leftover into the largest entry.
    let k = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    for _ in 0..64 {
        let s = neumaier_sum(&values);
        if s == 1.0 {
            return Ok(Density { values });
        }
        values[k] -= s - 1.0;
    }
    Err(Error::Density("normalization failed to reach unit mass".into()))
}

/// Per-node real values: potentials w, congestion weights, entropy weights b
/// or exponents m. Finite, but otherwise unconstrained here; each consumer
/// checks its own range requirements.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    values: Vec<f64>,
}

impl PotentialField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &x) in values.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Domain(format!(
                    "potential entry {i} is not finite: {x}"
                )));
            }
        }
        Ok(PotentialField { values })
    }

    pub fn constant(value: f64, n: usize) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
