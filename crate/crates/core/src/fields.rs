//! Scalar fields, tangent fields in per-vertex frames, sections of
//! `E = TM ⊕ ℝe`, normalized norms and inner products, and per-edge
//! Levi-Civita parallel transport.
//!
//! Tangent planes are intrinsic: the vertex star is flattened with its
//! corner angles rescaled to total 2π, which works identically for embedded
//! meshes and purely intrinsic ones like the flat torus. Frames are fixed at
//! construction (the zero direction points along the edge to the
//! smallest-index neighbor) and never re-gauged.

use crate::error::{Error, Result};
use crate::mesh::SimplicialSurface;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Per-vertex real values bound to a surface by fingerprint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionField {
    surface: u64,
    pub values: Vec<f64>,
}

impl FunctionField {
    pub fn new(m: &SimplicialSurface, values: Vec<f64>) -> Result<Self> {
        if values.len() != m.vertex_count() {
            return Err(Error::Field(format!(
                "value count {} does not match vertex count {}",
                values.len(),
                m.vertex_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Field("non-finite entry in function field".into()));
        }
        Ok(Self { surface: m.fingerprint(), values })
    }

    pub fn constant(m: &SimplicialSurface, c: f64) -> Self {
        Self { surface: m.fingerprint(), values: vec![c; m.vertex_count()] }
    }

    pub fn from_fn(m: &SimplicialSurface, f: impl FnMut(usize) -> f64) -> Self {
        Self { surface: m.fingerprint(), values: (0..m.vertex_count()).map(f).collect() }
    }

    /// Height-style field sampled from embedding coordinates.
    pub fn from_coords(m: &SimplicialSurface, f: impl Fn(&[f64; 3]) -> f64) -> Result<Self> {
        let coords = m
            .embedding()
            .ok_or_else(|| Error::Field("coordinate field needs an embedded mesh".into()))?;
        Ok(Self { surface: m.fingerprint(), values: coords.iter().map(f).collect() })
    }

    pub fn surface_fingerprint(&self) -> u64 {
        self.surface
    }

    pub fn matches(&self, m: &SimplicialSurface) -> bool {
        self.surface == m.fingerprint() && self.values.len() == m.vertex_count()
    }

    pub fn check(&self, m: &SimplicialSurface) -> Result<()> {
        if self.matches(m) {
            Ok(())
        } else {
            Err(Error::SurfaceMismatch)
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { surface: self.surface, values: self.values.iter().map(|v| a * v).collect() }
    }

    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        if self.surface != other.surface {
            return Err(Error::SurfaceMismatch);
        }
        Ok(Self {
            surface: self.surface,
            values: self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpExponent {
    One,
    Two,
    Infinity,
}

/// Normalized L^p norm: `((1/Vol) Σ_v |f(v)|^p area(v))^(1/p)`, sup for p=∞.
pub fn lp_norm(m: &SimplicialSurface, f: &FunctionField, p: LpExponent) -> f64 {
    debug_assert!(f.matches(m));
    let vol = m.total_volume();
    match p {
        LpExponent::One => {
            f.values.iter().zip(m.vertex_areas()).map(|(v, a)| v.abs() * a).sum::<f64>() / vol
        }
        LpExponent::Two => {
            (f.values.iter().zip(m.vertex_areas()).map(|(v, a)| v * v * a).sum::<f64>() / vol)
                .sqrt()
        }
        LpExponent::Infinity => f.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs())),
    }
}

/// Normalized L² inner product of two scalar fields.
pub fn l2_inner(m: &SimplicialSurface, f: &FunctionField, g: &FunctionField) -> f64 {
    debug_assert!(f.matches(m) && g.matches(m));
    f.values
        .iter()
        .zip(&g.values)
        .zip(m.vertex_areas())
        .map(|((x, y), a)| x * y * a)
        .sum::<f64>()
        / m.total_volume()
}

/// Mean value in the normalized measure.
pub fn mean_value(m: &SimplicialSurface, f: &FunctionField) -> f64 {
    f.values.iter().zip(m.vertex_areas()).map(|(v, a)| v * a).sum::<f64>() / m.total_volume()
}

/// Per-vertex 2-vectors expressed in the fixed per-vertex tangent frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangentField {
    surface: u64,
    pub components: Vec<[f64; 2]>,
}

impl TangentField {
    pub fn zero(m: &SimplicialSurface) -> Self {
        Self { surface: m.fingerprint(), components: vec![[0.0, 0.0]; m.vertex_count()] }
    }

    pub fn new(m: &SimplicialSurface, components: Vec<[f64; 2]>) -> Result<Self> {
        if components.len() != m.vertex_count() {
            return Err(Error::Field("component count mismatch".into()));
        }
        Ok(Self { surface: m.fingerprint(), components })
    }

    pub fn matches(&self, m: &SimplicialSurface) -> bool {
        self.surface == m.fingerprint() && self.components.len() == m.vertex_count()
    }

    pub fn surface_fingerprint(&self) -> u64 {
        self.surface
    }
}

/// Normalized L² norm of a tangent field.
pub fn tangent_l2_norm(m: &SimplicialSurface, x: &TangentField) -> f64 {
    debug_assert!(x.matches(m));
    (x.components
        .iter()
        .zip(m.vertex_areas())
        .map(|(c, a)| (c[0] * c[0] + c[1] * c[1]) * a)
        .sum::<f64>()
        / m.total_volume())
    .sqrt()
}

/// A section `α + f·e` of `E = TM ⊕ ℝe`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ESection {
    pub tangent: TangentField,
    pub scalar: FunctionField,
}

impl ESection {
    pub fn new(tangent: TangentField, scalar: FunctionField) -> Result<Self> {
        if tangent.surface != scalar.surface {
            return Err(Error::SurfaceMismatch);
        }
        Ok(Self { tangent, scalar })
    }

    /// The unit section `e = (0, 1)`.
    pub fn unit_e(m: &SimplicialSurface) -> Self {
        Self { tangent: TangentField::zero(m), scalar: FunctionField::constant(m, 1.0) }
    }

    pub fn matches(&self, m: &SimplicialSurface) -> bool {
        self.tangent.matches(m) && self.scalar.matches(m)
    }

    /// Flat coefficient vector in (a1, a2, f) vertex blocks.
    pub fn to_coeffs(&self) -> Vec<f64> {
        let n = self.scalar.values.len();
        let mut out = Vec::with_capacity(3 * n);
        for v in 0..n {
            out.push(self.tangent.components[v][0]);
            out.push(self.tangent.components[v][1]);
            out.push(self.scalar.values[v]);
        }
        out
    }

    pub fn from_coeffs(m: &SimplicialSurface, coeffs: &[f64]) -> Result<Self> {
        let n = m.vertex_count();
        if coeffs.len() != 3 * n {
            return Err(Error::Field("coefficient length must be 3V".into()));
        }
        let mut tangent = Vec::with_capacity(n);
        let mut scalar = Vec::with_capacity(n);
        for v in 0..n {
            tangent.push([coeffs[3 * v], coeffs[3 * v + 1]]);
            scalar.push(coeffs[3 * v + 2]);
        }
        Ok(Self {
            tangent: TangentField::new(m, tangent)?,
            scalar: FunctionField::new(m, scalar)?,
        })
    }
}

/// Volume-normalized L² pairing on sections:
/// `(1/Vol) Σ_v (⟨X_v, Y_v⟩ + f_v h_v) area(v)`.
pub fn e_inner(m: &SimplicialSurface, s: &ESection, t: &ESection) -> Result<f64> {
    if !s.matches(m) || !t.matches(m) {
        return Err(Error::SurfaceMismatch);
    }
    let mut acc = 0.0;
    for v in 0..m.vertex_count() {
        let a = s.tangent.components[v];
        let b = t.tangent.components[v];
        let dot = a[0] * b[0] + a[1] * b[1] + s.scalar.values[v] * t.scalar.values[v];
        acc += dot * m.vertex_areas()[v];
    }
    Ok(acc / m.total_volume())
}

pub fn e_norm(m: &SimplicialSurface, s: &ESection) -> Result<f64> {
    Ok(e_inner(m, s, s)?.sqrt())
}

/// `S_f = ∇f + f·e` from a function and its discrete gradient.
pub fn s_of_f(f: &FunctionField, gradient: &TangentField) -> Result<ESection> {
    ESection::new(gradient.clone(), f.clone())
}

// ---------------------------------------------------------------------------
// Transport atlas
// ---------------------------------------------------------------------------

/// Fixed per-vertex tangent frames plus per-directed-edge rotations realizing
/// Levi-Civita parallel transport by intrinsic unfolding.
///
/// At a vertex the outgoing edge directions sit at the cumulative corner
/// angles rescaled by `2π / (total angle)`. The transport along `i→j` maps
/// the direction of `i→j` at `i` onto the reversed direction of `j→i` at
/// `j`; in frame coordinates that is the rotation by
/// `π + θ_j(j→i) − θ_i(i→j)`.
#[derive(Debug, Clone)]
pub struct TransportAtlas {
    surface: u64,
    /// Per vertex: neighbors in ccw order and the frame angle of each edge.
    star_dirs: Vec<Vec<(usize, f64)>>,
    /// Per vertex: 2π / angle-sum.
    scales: Vec<f64>,
}

impl TransportAtlas {
    pub fn build(m: &SimplicialSurface) -> Result<Self> {
        let n = m.vertex_count();
        let mut star_dirs = Vec::with_capacity(n);
        let mut scales = Vec::with_capacity(n);
        for v in 0..n {
            let star = m.star(v);
            let total = m.angle_sum(v);
            if !(total > 1e-9) {
                return Err(Error::Field(format!("vertex {v} has degenerate total angle")));
            }
            let scale = 2.0 * PI / total;
            let mut dirs = Vec::with_capacity(star.neighbors.len());
            let mut acc = 0.0;
            for (k, &nbr) in star.neighbors.iter().enumerate() {
                dirs.push((nbr, acc * scale));
                acc += m.angle_at(star.faces[k], v);
            }
            star_dirs.push(dirs);
            scales.push(scale);
        }
        Ok(Self { surface: m.fingerprint(), star_dirs, scales })
    }

    pub fn matches(&self, m: &SimplicialSurface) -> bool {
        self.surface == m.fingerprint()
    }

    /// Frame angle of the outgoing edge `v → nbr`.
    pub fn edge_angle(&self, v: usize, nbr: usize) -> f64 {
        for &(w, theta) in &self.star_dirs[v] {
            if w == nbr {
                return theta;
            }
        }
        panic!("({v},{nbr}) is not an edge");
    }

    /// Unit vector of the outgoing edge direction in the frame at `v`.
    pub fn edge_direction(&self, v: usize, nbr: usize) -> [f64; 2] {
        let t = self.edge_angle(v, nbr);
        [t.cos(), t.sin()]
    }

    /// Rotation angle of parallel transport along the directed edge `i→j`
    /// (frame at `i` to frame at `j`).
    pub fn transport_angle(&self, i: usize, j: usize) -> f64 {
        PI + self.edge_angle(j, i) - self.edge_angle(i, j)
    }

    /// Apply transport along `i→j` to a vector in the frame at `i`.
    pub fn transport(&self, i: usize, j: usize, v: [f64; 2]) -> [f64; 2] {
        rot(self.transport_angle(i, j), v)
    }

    /// Rescaled interior angle sum of a face minus π: the curvature carried
    /// by the face loop of the discrete connection. Summed over all faces
    /// this is exactly 2πχ.
    pub fn face_curvature(&self, m: &SimplicialSurface, fi: usize) -> f64 {
        let f = m.faces()[fi];
        let mut acc = 0.0;
        for c in 0..3 {
            acc += self.scales[f[c]] * m.corner_angles()[fi][c];
        }
        acc - PI
    }

    /// Composed transport angle around an oriented cycle of vertices,
    /// reduced to (-π, π].
    pub fn loop_holonomy(&self, cycle: &[usize]) -> f64 {
        let mut acc = 0.0;
        for k in 0..cycle.len() {
            let i = cycle[k];
            let j = cycle[(k + 1) % cycle.len()];
            acc += self.transport_angle(i, j);
        }
        wrap_angle(acc)
    }

    pub fn vertex_count(&self) -> usize {
        self.star_dirs.len()
    }
}

pub fn rot(angle: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Reduce an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}
