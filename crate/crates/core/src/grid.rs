//! Structured box meshes, cell-centered fields and the finite-difference
//! operators used by the scheme.
//!
//! All fields live at cell centers. Derivatives that enter energies are taken
//! per cell *quadrant*: in a quadrant the derivative along each axis is the
//! one-sided difference towards that quadrant's side. Every face difference of
//! the mesh therefore enters with positive weight, so the discrete Dirichlet
//! energies have no checkerboard or hourglass null modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A face of the box domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    Left,
    Right,
    Bottom,
    Top,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::Left, Face::Right, Face::Bottom, Face::Top];

    pub fn axis(self) -> usize {
        match self {
            Face::Left | Face::Right => 0,
            Face::Bottom | Face::Top => 1,
        }
    }

    pub fn is_upper(self) -> bool {
        matches!(self, Face::Right | Face::Top)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_axis(axis: usize, upper: bool) -> Face {
        match (axis, upper) {
            (0, false) => Face::Left,
            (0, true) => Face::Right,
            (_, false) => Face::Bottom,
            (_, true) => Face::Top,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Face::Left => "left",
            Face::Right => "right",
            Face::Bottom => "bottom",
            Face::Top => "top",
        }
    }
}

impl std::str::FromStr for Face {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Face::Left),
            "right" => Ok(Face::Right),
            "bottom" => Ok(Face::Bottom),
            "top" => Ok(Face::Top),
            other => Err(Error::Grid(format!("unknown face `{other}`"))),
        }
    }
}

/// Uniform box mesh in one or two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: [usize; 2],
    extent: [f64; 2],
    spacing: [f64; 2],
    dirichlet: [bool; 4],
}

impl Grid {
    /// Builds a grid with `cells[a]` cells of width `extent[a] / cells[a]`
    /// along each axis. `dirichlet` lists the faces carrying displacement data.
    pub fn new(dim: usize, cells: &[usize], extent: &[f64], dirichlet: &[Face]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Grid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if cells.len() != dim || extent.len() != dim {
            return Err(Error::Grid(format!(
                "expected {dim} cell counts and extents, got {} and {}",
                cells.len(),
                extent.len()
            )));
        }
        let mut c = [1usize; 2];
        let mut e = [1.0f64; 2];
        let mut h = [1.0f64; 2];
        for a in 0..dim {
            if cells[a] < 2 {
                return Err(Error::Grid(format!("axis {a}: need at least 2 cells, got {}", cells[a])));
            }
            if !(extent[a] > 0.0 && extent[a].is_finite()) {
                return Err(Error::Grid(format!("axis {a}: extent must be positive, got {}", extent[a])));
            }
            c[a] = cells[a];
            e[a] = extent[a];
            h[a] = extent[a] / cells[a] as f64;
        }
        let mut mask = [false; 4];
        for &f in dirichlet {
            if f.axis() >= dim {
                return Err(Error::Grid(format!("face `{}` does not exist in {dim}D", f.name())));
            }
            mask[f.index()] = true;
        }
        Ok(Self { dim, cells: c, extent: e, spacing: h, dirichlet: mask })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extent[axis]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    /// |Ω|
    pub fn volume(&self) -> f64 {
        self.extent[..self.dim].iter().product()
    }

    pub fn faces(&self) -> impl Iterator<Item = Face> + '_ {
        Face::ALL.into_iter().filter(move |f| f.axis() < self.dim)
    }

    pub fn is_dirichlet(&self, face: Face) -> bool {
        face.axis() < self.dim && self.dirichlet[face.index()]
    }

    pub fn dirichlet_faces(&self) -> Vec<Face> {
        self.faces().filter(|f| self.is_dirichlet(*f)).collect()
    }

    pub fn all_dirichlet(&self) -> bool {
        self.faces().all(|f| self.is_dirichlet(f))
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.cells[0] && j < self.cells[1]);
        j * self.cells[0] + i
    }

    #[inline]
    pub fn coords(&self, cell: usize) -> [usize; 2] {
        [cell % self.cells[0], cell / self.cells[0]]
    }

    pub fn center(&self, cell: usize) -> [f64; 2] {
        let [i, j] = self.coords(cell);
        let y = if self.dim == 2 { (j as f64 + 0.5) * self.spacing[1] } else { 0.0 };
        [(i as f64 + 0.5) * self.spacing[0], y]
    }

    /// Neighbor across the face on `upper`/lower side along `axis`.
    pub fn neighbor(&self, cell: usize, axis: usize, upper: bool) -> Option<usize> {
        let mut ij = self.coords(cell);
        if upper {
            if ij[axis] + 1 >= self.cells[axis] {
                return None;
            }
            ij[axis] += 1;
        } else {
            if ij[axis] == 0 {
                return None;
            }
            ij[axis] -= 1;
        }
        Some(self.index(ij[0], ij[1]))
    }

    /// Number of boundary cells along a face.
    pub fn face_len(&self, face: Face) -> usize {
        if face.axis() >= self.dim {
            return 0;
        }
        if self.dim == 1 {
            1
        } else {
            self.cells[1 - face.axis()]
        }
    }

    pub fn face_cell(&self, face: Face, slot: usize) -> usize {
        let axis = face.axis();
        let fixed = if face.is_upper() { self.cells[axis] - 1 } else { 0 };
        match axis {
            0 => self.index(fixed, slot),
            _ => self.index(slot, fixed),
        }
    }

    /// Slot of a boundary cell along `face`.
    pub fn face_slot(&self, cell: usize, face: Face) -> usize {
        let [i, j] = self.coords(cell);
        if face.axis() == 0 {
            j
        } else {
            i
        }
    }

    /// Midpoint of the boundary face segment of `slot`.
    pub fn face_point(&self, face: Face, slot: usize) -> [f64; 2] {
        let mut p = self.center(self.face_cell(face, slot));
        let a = face.axis();
        p[a] = if face.is_upper() { self.extent[a] } else { 0.0 };
        p
    }

    pub fn centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.n_cells()).map(move |c| self.center(c))
    }

    /// Σ f·|cell| per component.
    pub fn integrate(&self, f: &Field) -> Result<Vec<f64>> {
        f.check_cells(self.n_cells())?;
        let vol = self.cell_volume();
        let mut out = vec![0.0; f.ncomp()];
        for cell in f.cells() {
            for (o, v) in out.iter_mut().zip(cell) {
                *o += v * vol;
            }
        }
        Ok(out)
    }

    pub fn mean(&self, f: &Field) -> Result<Vec<f64>> {
        let vol = self.volume();
        Ok(self.integrate(f)?.into_iter().map(|s| s / vol).collect())
    }

    pub fn integrate_scalar(&self, f: &Field) -> Result<f64> {
        if f.ncomp() != 1 {
            return Err(Error::shape(format!("expected a scalar field, got {} components", f.ncomp())));
        }
        Ok(self.integrate(f)?[0])
    }
}

/// Cell-centered field with `ncomp` values per cell, stored cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    ncomp: usize,
    data: Vec<f64>,
}

/// z, and scalar outputs of operators.
pub type ScalarField = Field;
/// u, with `dim` components.
pub type VectorField = Field;
/// c and w, with one component per phase.
pub type ConcentrationField = Field;
/// Symmetric tensors: `[xx]` in 1D, `[xx, yy, xy]` in 2D.
pub type SymTensorField = Field;

impl Field {
    pub fn zeros(n_cells: usize, ncomp: usize) -> Self {
        Self { ncomp, data: vec![0.0; n_cells * ncomp] }
    }

    pub fn constant(n_cells: usize, value: &[f64]) -> Self {
        let mut data = Vec::with_capacity(n_cells * value.len());
        for _ in 0..n_cells {
            data.extend_from_slice(value);
        }
        Self { ncomp: value.len(), data }
    }

    pub fn from_vec(ncomp: usize, data: Vec<f64>) -> Result<Self> {
        if ncomp == 0 || data.len() % ncomp != 0 {
            return Err(Error::shape(format!("{} values do not split into {ncomp} components", data.len())));
        }
        Ok(Self { ncomp, data })
    }

    pub fn from_fn(grid: &Grid, ncomp: usize, mut f: impl FnMut([f64; 2]) -> Vec<f64>) -> Self {
        let mut data = Vec::with_capacity(grid.n_cells() * ncomp);
        for x in grid.centers() {
            let v = f(x);
            assert_eq!(v.len(), ncomp, "field initializer returned wrong component count");
            data.extend(v);
        }
        Self { ncomp, data }
    }

    pub fn scalar_from_fn(grid: &Grid, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        Self { ncomp: 1, data: grid.centers().map(|x| f(x)).collect() }
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn n_cells(&self) -> usize {
        self.data.len() / self.ncomp
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncomp..(i + 1) * self.ncomp]
    }

    #[inline]
    pub fn cell_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncomp..(i + 1) * self.ncomp]
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.ncomp + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, v: f64) {
        self.data[i * self.ncomp + k] = v;
    }

    pub fn cells(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.ncomp)
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.cells().map(|c| c[k]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_cells(&self, n_cells: usize) -> Result<()> {
        if self.data.len() != n_cells * self.ncomp {
            return Err(Error::shape(format!(
                "field has {} cells, grid has {n_cells}",
                self.data.len() / self.ncomp
            )));
        }
        Ok(())
    }

    pub fn check(&self, grid: &Grid, ncomp: usize) -> Result<()> {
        if self.ncomp != ncomp {
            return Err(Error::shape(format!("expected {ncomp} components, got {}", self.ncomp)));
        }
        self.check_cells(grid.n_cells())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// self + s·other
    pub fn axpy(&mut self, s: f64, other: &Field) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field { ncomp: self.ncomp, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn sub(&self, other: &Field) -> Field {
        Field { ncomp: self.ncomp, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    /// β·self + (1−β)·other
    pub fn lerp(&self, other: &Field, beta: f64) -> Field {
        Field {
            ncomp: self.ncomp,
            data: self.data.iter().zip(&other.data).map(|(a, b)| beta * a + (1.0 - beta) * b).collect(),
        }
    }
}

/// Displacement data on the Dirichlet faces, one vector per boundary segment.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryValues {
    ncomp: usize,
    faces: [Vec<f64>; 4],
}

impl BoundaryValues {
    pub fn zeros(grid: &Grid, ncomp: usize) -> Self {
        Self::from_fn(grid, ncomp, |_, _| vec![0.0; ncomp])
    }

    /// Same vector on every Dirichlet face.
    pub fn uniform(grid: &Grid, value: &[f64]) -> Self {
        Self::from_fn(grid, value.len(), |_, _| value.to_vec())
    }

    pub fn from_fn(grid: &Grid, ncomp: usize, mut f: impl FnMut(Face, [f64; 2]) -> Vec<f64>) -> Self {
        let mut faces: [Vec<f64>; 4] = Default::default();
        for face in grid.dirichlet_faces() {
            let v = &mut faces[face.index()];
            for slot in 0..grid.face_len(face) {
                let b = f(face, grid.face_point(face, slot));
                assert_eq!(b.len(), ncomp, "boundary initializer returned wrong component count");
                v.extend(b);
            }
        }
        Self { ncomp, faces }
    }

    /// Data without any faces; only useful for grids without Dirichlet faces.
    pub fn empty(ncomp: usize) -> Self {
        Self { ncomp, faces: Default::default() }
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    #[inline]
    pub fn get(&self, face: Face, slot: usize) -> &[f64] {
        &self.faces[face.index()][slot * self.ncomp..(slot + 1) * self.ncomp]
    }

    pub fn face_values(&self, face: Face) -> &[f64] {
        &self.faces[face.index()]
    }

    pub fn validate(&self, grid: &Grid, ncomp: usize) -> Result<()> {
        if self.ncomp != ncomp {
            return Err(Error::shape(format!("boundary data has {} components, expected {ncomp}", self.ncomp)));
        }
        for face in grid.dirichlet_faces() {
            let have = self.faces[face.index()].len();
            let want = grid.face_len(face) * ncomp;
            if have != want {
                return Err(Error::shape(format!(
                    "Dirichlet face `{}` needs {want} boundary values, got {have}",
                    face.name()
                )));
            }
        }
        Ok(())
    }

    /// β·self + (1−β)·other
    pub fn lerp(&self, other: &BoundaryValues, beta: f64) -> BoundaryValues {
        let mut out = self.clone();
        for (f, o) in out.faces.iter_mut().zip(&other.faces) {
            for (a, b) in f.iter_mut().zip(o) {
                *a = beta * *a + (1.0 - beta) * b;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &BoundaryValues) -> f64 {
        self.faces
            .iter()
            .zip(&other.faces)
            .flat_map(|(a, b)| a.iter().zip(b))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Ghost-value rule on a domain face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRule {
    /// Even reflection; the face difference vanishes (zero flux).
    Reflect,
    /// Ghost value `2b − u`, so the face difference sees the boundary data.
    Dirichlet,
    /// Linear extrapolation; the face difference copies the interior one.
    Extrapolate,
}

/// One-sided difference as a linear combination of at most two cells plus a
/// boundary datum.
#[derive(Debug, Clone, Copy, Default)]
struct Diff {
    terms: [(usize, f64); 2],
    len: u8,
    boundary: Option<(Face, usize, f64)>,
}

impl Diff {
    fn two(a: usize, wa: f64, b: usize, wb: f64) -> Self {
        Self { terms: [(a, wa), (b, wb)], len: 2, boundary: None }
    }

    #[inline]
    fn eval(&self, f: &[f64], ncomp: usize, k: usize, bnd: Option<&BoundaryValues>) -> f64 {
        let mut s = 0.0;
        for &(c, w) in &self.terms[..self.len as usize] {
            s += w * f[c * ncomp + k];
        }
        if let (Some((face, slot, w)), Some(b)) = (self.boundary, bnd) {
            s += w * b.get(face, slot)[k];
        }
        s
    }
}

/// Quadrant-wise gradients of cell fields and their adjoint.
///
/// Gradient entries are laid out `[cell][quadrant][component][axis]`; a
/// quadrant carries the weight `|cell| / 2^dim` in every integral.
#[derive(Debug, Clone)]
pub struct QuadrantOperator {
    dim: usize,
    n_cells: usize,
    cell_volume: f64,
    stencils: Vec<Diff>,
}

impl QuadrantOperator {
    pub fn new(grid: &Grid, rules: [EdgeRule; 4]) -> Self {
        let dim = grid.dim();
        let mut stencils = Vec::with_capacity(grid.n_cells() * dim * 2);
        for cell in 0..grid.n_cells() {
            for axis in 0..dim {
                let inv_h = 1.0 / grid.spacing(axis);
                let lower = grid.neighbor(cell, axis, false);
                let upper = grid.neighbor(cell, axis, true);
                for up in [false, true] {
                    let d = match (up, lower, upper) {
                        (false, Some(l), _) => Diff::two(cell, inv_h, l, -inv_h),
                        (true, _, Some(r)) => Diff::two(r, inv_h, cell, -inv_h),
                        _ => {
                            let face = Face::from_axis(axis, up);
                            let sign = if up { 1.0 } else { -1.0 };
                            match rules[face.index()] {
                                EdgeRule::Reflect => Diff::default(),
                                EdgeRule::Dirichlet => Diff {
                                    terms: [(cell, -2.0 * sign * inv_h), (0, 0.0)],
                                    len: 1,
                                    boundary: Some((face, grid.face_slot(cell, face), 2.0 * sign * inv_h)),
                                },
                                EdgeRule::Extrapolate => {
                                    // cells ≥ 2 guarantees the opposite neighbor exists
                                    if up {
                                        Diff::two(cell, inv_h, lower.unwrap(), -inv_h)
                                    } else {
                                        Diff::two(upper.unwrap(), inv_h, cell, -inv_h)
                                    }
                                }
                            }
                        }
                    };
                    stencils.push(d);
                }
            }
        }
        Self { dim, n_cells: grid.n_cells(), cell_volume: grid.cell_volume(), stencils }
    }

    /// Zero-flux operator for c, w and z.
    pub fn neumann(grid: &Grid) -> Self {
        Self::new(grid, [EdgeRule::Reflect; 4])
    }

    /// Displacement operator: boundary data on Dirichlet faces, traction-free
    /// faces extrapolate.
    pub fn displacement(grid: &Grid) -> Self {
        let mut rules = [EdgeRule::Extrapolate; 4];
        for f in grid.dirichlet_faces() {
            rules[f.index()] = EdgeRule::Dirichlet;
        }
        Self::new(grid, rules)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn quadrants(&self) -> usize {
        1 << self.dim
    }

    /// Quadrature weight of one quadrant.
    pub fn weight(&self) -> f64 {
        self.cell_volume / self.quadrants() as f64
    }

    #[inline]
    fn stencil(&self, cell: usize, axis: usize, up: bool) -> &Diff {
        &self.stencils[(cell * self.dim + axis) * 2 + up as usize]
    }

    /// Gradients of `f`; `bnd = None` means homogeneous boundary data.
    pub fn gradients(&self, f: &Field, bnd: Option<&BoundaryValues>) -> Vec<f64> {
        let nc = f.ncomp();
        let q = self.quadrants();
        let stride = nc * self.dim;
        let mut out = vec![0.0; self.n_cells * q * stride];
        let data = f.as_slice();
        for cell in 0..self.n_cells {
            for axis in 0..self.dim {
                for up in [false, true] {
                    let st = self.stencil(cell, axis, up);
                    for k in 0..nc {
                        let d = st.eval(data, nc, k, bnd);
                        for quad in 0..q {
                            if ((quad >> axis) & 1 == 1) == up {
                                out[(cell * q + quad) * stride + k * self.dim + axis] = d;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of the linear part of [`gradients`](Self::gradients):
    /// returns Σ dG·∂G/∂f for every cell value.
    pub fn scatter(&self, dg: &[f64], ncomp: usize) -> Field {
        let q = self.quadrants();
        let stride = ncomp * self.dim;
        assert_eq!(dg.len(), self.n_cells * q * stride);
        let mut out = Field::zeros(self.n_cells, ncomp);
        let acc = out.as_mut_slice();
        for cell in 0..self.n_cells {
            for axis in 0..self.dim {
                for up in [false, true] {
                    let st = *self.stencil(cell, axis, up);
                    for k in 0..ncomp {
                        let mut s = 0.0;
                        for quad in 0..q {
                            if ((quad >> axis) & 1 == 1) == up {
                                s += dg[(cell * q + quad) * stride + k * self.dim + axis];
                            }
                        }
                        if s != 0.0 {
                            for &(c, w) in &st.terms[..st.len as usize] {
                                acc[c * ncomp + k] += w * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Σ_quadrants weight·|∇f|² for a field with homogeneous boundary data.
    pub fn dirichlet_form(&self, f: &Field) -> f64 {
        self.gradients(f, None).iter().map(|g| g * g).sum::<f64>() * self.weight()
    }
}

/// Cell-centered central-difference gradient of a scalar field, with even
/// ghost reflection at every face.
pub fn gradient(f: &ScalarField, grid: &Grid) -> Result<VectorField> {
    f.check(grid, 1)?;
    let dim = grid.dim();
    let mut out = Field::zeros(grid.n_cells(), dim);
    for cell in 0..grid.n_cells() {
        for a in 0..dim {
            let fp = grid.neighbor(cell, a, true).map_or(f.get(cell, 0), |n| f.get(n, 0));
            let fm = grid.neighbor(cell, a, false).map_or(f.get(cell, 0), |n| f.get(n, 0));
            out.set(cell, a, (fp - fm) / (2.0 * grid.spacing(a)));
        }
    }
    Ok(out)
}

/// Central-difference divergence with odd ghost reflection of the normal
/// component; the negative adjoint of [`gradient`] in the cell inner product.
pub fn divergence(v: &VectorField, grid: &Grid) -> Result<ScalarField> {
    v.check(grid, grid.dim())?;
    let mut out = Field::zeros(grid.n_cells(), 1);
    for cell in 0..grid.n_cells() {
        let mut s = 0.0;
        for a in 0..grid.dim() {
            let own = v.get(cell, a);
            let vp = grid.neighbor(cell, a, true).map_or(-own, |n| v.get(n, a));
            let vm = grid.neighbor(cell, a, false).map_or(-own, |n| v.get(n, a));
            s += (vp - vm) / (2.0 * grid.spacing(a));
        }
        out.set(cell, 0, s);
    }
    Ok(out)
}

/// Number of independent components of a symmetric tensor.
pub fn sym_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Symmetric part of a `dim × dim` gradient stored row-major `[comp][axis]`,
/// as `[xx]` or `[xx, yy, xy]`.
#[inline]
pub fn sym_part(g: &[f64], dim: usize) -> [f64; 3] {
    if dim == 1 {
        [g[0], 0.0, 0.0]
    } else {
        [g[0], g[3], 0.5 * (g[1] + g[2])]
    }
}

/// Linearized strain e(u) = ½(∇u + ∇uᵀ) at cell centers (quadrant average).
pub fn sym_gradient(u: &VectorField, grid: &Grid, bnd: &BoundaryValues) -> Result<SymTensorField> {
    let dim = grid.dim();
    u.check(grid, dim)?;
    bnd.validate(grid, dim)?;
    let op = QuadrantOperator::displacement(grid);
    let g = op.gradients(u, Some(bnd));
    let q = op.quadrants();
    let m = sym_len(dim);
    let stride = dim * dim;
    let mut out = Field::zeros(grid.n_cells(), m);
    for cell in 0..grid.n_cells() {
        let mut acc = [0.0; 3];
        for quad in 0..q {
            let e = sym_part(&g[(cell * q + quad) * stride..][..stride], dim);
            for (a, v) in acc.iter_mut().zip(e) {
                *a += v / q as f64;
            }
        }
        out.cell_mut(cell).copy_from_slice(&acc[..m]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_1d(n: usize) -> Grid {
        Grid::new(1, &[n], &[1.0], &[Face::Left, Face::Right]).unwrap()
    }

    #[test]
    fn spacing_and_cell_count() {
        let g = unit_1d(8);
        assert_eq!(g.spacing(0), 0.125);
        let g2 = Grid::new(2, &[4, 4], &[1.0, 1.0], &Face::ALL).unwrap();
        assert_eq!(g2.n_cells(), 16);
        assert!(g2.all_dirichlet());
    }

    #[test]
    fn degenerate_grids_rejected() {
        assert!(Grid::new(1, &[1], &[1.0], &[]).is_err());
        assert!(Grid::new(1, &[4], &[0.0], &[]).is_err());
        assert!(Grid::new(1, &[4], &[-1.0], &[]).is_err());
        assert!(Grid::new(3, &[4, 4, 4], &[1.0; 3], &[]).is_err());
        assert!(Grid::new(1, &[4], &[1.0], &[Face::Top]).is_err());
    }

    #[test]
    fn gradient_of_constant_and_linear() {
        let g = unit_1d(8);
        let c = Field::scalar_from_fn(&g, |_| 3.0);
        assert!(gradient(&c, &g).unwrap().max_abs() == 0.0);
        let x = Field::scalar_from_fn(&g, |p| p[0]);
        let gx = gradient(&x, &g).unwrap();
        for cell in 1..7 {
            assert!((gx.get(cell, 0) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn summation_by_parts_neumann() {
        for grid in [unit_1d(8), Grid::new(2, &[5, 3], &[1.0, 0.7], &[]).unwrap()] {
            let f = Field::scalar_from_fn(&grid, |p| (3.0 * p[0]).sin() + p[1] * p[1]);
            let v = Field::from_fn(&grid, grid.dim(), |p| {
                (0..grid.dim()).map(|a| (p[a] * 2.0 + a as f64).cos()).collect()
            });
            let gf = gradient(&f, &grid).unwrap();
            let dv = divergence(&v, &grid).unwrap();
            let vol = grid.cell_volume();
            let lhs: f64 = gf.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a * b).sum::<f64>() * vol
                + f.as_slice().iter().zip(dv.as_slice()).map(|(a, b)| a * b).sum::<f64>() * vol;
            assert!(lhs.abs() < 1e-12, "residual {lhs}");
        }
    }

    #[test]
    fn sym_gradient_affine_exact() {
        let grid = Grid::new(2, &[5, 4], &[1.0, 1.0], &[Face::Left, Face::Bottom]).unwrap();
        let a = [[0.3, 0.1], [0.1, -0.2]];
        let w = [[0.0, 0.4], [-0.4, 0.0]];
        let lin = |p: [f64; 2], m: [[f64; 2]; 2]| vec![m[0][0] * p[0] + m[0][1] * p[1], m[1][0] * p[0] + m[1][1] * p[1]];
        let u = Field::from_fn(&grid, 2, |p| lin(p, a));
        let b = BoundaryValues::from_fn(&grid, 2, |_, p| lin(p, a));
        let e = sym_gradient(&u, &grid, &b).unwrap();
        for cell in e.cells() {
            assert!((cell[0] - 0.3).abs() < 1e-13 && (cell[1] + 0.2).abs() < 1e-13 && (cell[2] - 0.1).abs() < 1e-13);
        }
        let u = Field::from_fn(&grid, 2, |p| lin(p, w));
        let b = BoundaryValues::from_fn(&grid, 2, |_, p| lin(p, w));
        assert!(sym_gradient(&u, &grid, &b).unwrap().max_abs() < 1e-13);
        let zero = Field::zeros(grid.n_cells(), 2);
        assert_eq!(sym_gradient(&zero, &grid, &BoundaryValues::zeros(&grid, 2)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn sym_gradient_requires_boundary_data() {
        let grid = unit_1d(4);
        let u = Field::zeros(4, 1);
        assert!(sym_gradient(&u, &grid, &BoundaryValues::empty(1)).is_err());
    }

    #[test]
    fn integrate_and_mean() {
        let sq = Grid::new(2, &[4, 4], &[1.0, 1.0], &[]).unwrap();
        let two = Field::constant(16, &[2.0]);
        assert!((sq.integrate_scalar(&two).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(sq.integrate_scalar(&Field::zeros(16, 1)).unwrap(), 0.0);
        let g = unit_1d(64);
        let x = Field::scalar_from_fn(&g, |p| p[0]);
        assert!((g.integrate_scalar(&x).unwrap() - 0.5).abs() < 1e-12);
        assert!((g.mean(&x).unwrap()[0] - 0.5).abs() < 1e-12);
        assert!(g.integrate(&Field::zeros(3, 1)).is_err());
    }

    #[test]
    fn scatter_is_adjoint_of_gradients() {
        let grid = Grid::new(2, &[4, 3], &[1.0, 2.0], &[Face::Left, Face::Top]).unwrap();
        for op in [QuadrantOperator::neumann(&grid), QuadrantOperator::displacement(&grid)] {
            let f = Field::from_fn(&grid, 2, |p| vec![p[0].sin(), p[0] * p[1]]);
            let g = op.gradients(&f, None);
            let dg: Vec<f64> = (0..g.len()).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
            let lhs: f64 = g.iter().zip(&dg).map(|(a, b)| a * b).sum();
            let back = op.scatter(&dg, 2);
            let rhs: f64 = back.as_slice().iter().zip(f.as_slice()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn displacement_operator_is_full_rank_1d() {
        // the discrete Dirichlet form vanishes only for u = 0 when one end is clamped
        let grid = Grid::new(1, &[6], &[1.0], &[Face::Left]).unwrap();
        let op = QuadrantOperator::displacement(&grid);
        let checker = Field::from_vec(1, (0..6).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()).unwrap();
        assert!(op.dirichlet_form(&checker) > 1.0);
    }
}
