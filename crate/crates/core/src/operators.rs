//! Operator pencils: the cotangent Laplace–Beltrami form with lumped mass,
//! and the connection Dirichlet form on `E = TM ⊕ ℝe`.
//!
//! Both stiffness forms are kept in two synchronized representations: a list
//! of squared linear functionals (used to evaluate quadratic forms, exact on
//! kernels) and a CSR matrix derived from it (used by solvers). The bundle
//! form discretizes `|∇α + f g|² + |df − α|²` per edge with the cotangent
//! edge weights `w_e = (cot γ₁ + cot γ₂)/2`; the multiplier `w_e ℓ_e²`
//! satisfies `Σ_e w_e ℓ_e² = 2 Vol(M)` exactly (per face,
//! `Σ a² cot A = 4 · area`), which pins the Rayleigh quotient of the unit
//! section `e` at n = 2 on every mesh.

use crate::error::{Error, Result};
use crate::fields::{FunctionField, TangentField, TransportAtlas};
use crate::mesh::{CurvatureField, SimplicialSurface};
use crate::sparse::{CsrMatrix, Triplets};
use std::io::Write;
use std::path::Path;

/// Which field space a pencil acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Function,
    Section,
}

/// One squared linear functional `coeff · (Σ_k a_k x_{i_k})²`.
#[derive(Debug, Clone)]
struct QuadTerm {
    coeff: f64,
    entries: Vec<(usize, f64)>,
}

/// Symmetric PSD stiffness form plus diagonal positive mass form.
#[derive(Debug)]
pub struct OperatorPencil {
    pub domain: Domain,
    pub dim: usize,
    pub stiffness: CsrMatrix,
    mass: Vec<f64>,
    terms: Vec<QuadTerm>,
    pub negative_weight_edges: usize,
    surface: u64,
    total_volume: f64,
}

impl OperatorPencil {
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn surface_fingerprint(&self) -> u64 {
        self.surface
    }

    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    /// Stiffness quadratic form evaluated term-wise; exactly zero on fields
    /// each term annihilates (e.g. constants for the function Laplacian).
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut acc = 0.0;
        for t in &self.terms {
            let mut s = 0.0;
            for &(i, a) in &t.entries {
                s += a * x[i];
            }
            acc += t.coeff * s * s;
        }
        acc
    }

    /// Stiffness bilinear form via the CSR matrix.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut ky = vec![0.0; self.dim];
        self.stiffness.matvec(y, &mut ky);
        crate::sparse::dot(x, &ky)
    }

    pub fn mass_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).zip(&self.mass).map(|((a, b), m)| a * b * m).sum()
    }

    /// Normalized mass inner product `(1/Vol) x^T M y`.
    pub fn mass_inner_normalized(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mass_inner(x, y) / self.total_volume
    }

    /// Weak Laplacian `M⁻¹ K x`; the single definition of Δ used everywhere.
    pub fn apply_weak_laplacian(&self, x: &[f64]) -> Vec<f64> {
        let mut kx = vec![0.0; self.dim];
        self.stiffness.matvec(x, &mut kx);
        kx.iter_mut().zip(&self.mass).for_each(|(v, m)| *v /= m);
        kx
    }

    /// Generalized Rayleigh quotient `x^T K x / x^T M x`.
    pub fn rayleigh(&self, x: &[f64]) -> f64 {
        self.quadratic_form(x) / self.mass_inner(x, x)
    }

    /// Scale estimate used for relative residuals: `max_i K_ii / M_ii`.
    pub fn norm_scale(&self) -> f64 {
        let d = self.stiffness.diagonal();
        d.iter().zip(&self.mass).map(|(k, m)| (k / m).abs()).fold(1e-300, f64::max)
    }

    /// Export stiffness and mass to Matrix Market files.
    pub fn export_matrix_market<P: AsRef<Path>>(&self, stiffness: P, mass: P) -> Result<()> {
        let mut ws = std::io::BufWriter::new(std::fs::File::create(stiffness)?);
        self.stiffness.write_matrix_market(&mut ws)?;
        let mut wm = std::io::BufWriter::new(std::fs::File::create(mass)?);
        writeln!(wm, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(wm, "{} {} {}", self.dim, self.dim, self.dim)?;
        for (i, m) in self.mass.iter().enumerate() {
            writeln!(wm, "{} {} {:e}", i + 1, i + 1, m)?;
        }
        Ok(())
    }

    fn from_terms(
        domain: Domain,
        dim: usize,
        terms: Vec<QuadTerm>,
        mass: Vec<f64>,
        negative_weight_edges: usize,
        m: &SimplicialSurface,
    ) -> Self {
        let mut trip = Triplets::new(dim);
        for t in &terms {
            for &(i, a) in &t.entries {
                for &(j, b) in &t.entries {
                    trip.push(i, j, t.coeff * a * b);
                }
            }
        }
        OperatorPencil {
            domain,
            dim,
            stiffness: trip.to_csr(),
            mass,
            terms,
            negative_weight_edges,
            surface: m.fingerprint(),
            total_volume: m.total_volume(),
        }
    }
}

/// Cotangent-weight stiffness with lumped (one-third barycentric) mass.
pub fn assemble_laplacian(m: &SimplicialSurface) -> Result<OperatorPencil> {
    let weights = cotan_edge_weights(m);
    let negative = count_negative_weights(&weights);
    let mut terms = Vec::with_capacity(m.edge_count());
    for (e, &(i, j)) in m.edges().iter().enumerate() {
        terms.push(QuadTerm { coeff: weights[e], entries: vec![(i, 1.0), (j, -1.0)] });
    }
    Ok(OperatorPencil::from_terms(
        Domain::Function,
        m.vertex_count(),
        terms,
        m.vertex_areas().to_vec(),
        negative,
        m,
    ))
}

/// Genuinely negative weights; right angles produce ±1e-16 noise around 0.
fn count_negative_weights(weights: &[f64]) -> usize {
    let scale = weights.iter().fold(0.0f64, |m, w| m.max(w.abs())).max(1e-300);
    weights.iter().filter(|&&w| w < -1e-12 * scale).count()
}

/// Per-edge `(cot γ₁ + cot γ₂)/2` over the two opposite corners.
fn cotan_edge_weights(m: &SimplicialSurface) -> Vec<f64> {
    let mut weights = vec![0.0; m.edge_count()];
    let mut edge_pos = std::collections::HashMap::new();
    for (e, &(i, j)) in m.edges().iter().enumerate() {
        edge_pos.insert((i, j), e);
    }
    for (fi, f) in m.faces().iter().enumerate() {
        for c in 0..3 {
            let opp = m.corner_angles()[fi][c];
            let (a, b) = crate::mesh::canon(f[(c + 1) % 3], f[(c + 2) % 3]);
            let cot = opp.cos() / opp.sin();
            weights[edge_pos[&(a, b)]] += 0.5 * cot;
        }
    }
    weights
}

/// Discrete gradient: per-face affine gradients averaged to vertices with
/// one-third area weights, expressed in the vertex frames.
pub fn gradient(
    m: &SimplicialSurface,
    atlas: &TransportAtlas,
    f: &FunctionField,
) -> Result<TangentField> {
    f.check(m)?;
    if !atlas.matches(m) {
        return Err(Error::SurfaceMismatch);
    }
    let mut acc = vec![[0.0f64; 2]; m.vertex_count()];
    for (fi, face) in m.faces().iter().enumerate() {
        let layout = face_layout(m, fi);
        let area = m.face_areas()[fi];
        let g =
            face_gradient(&layout, [f.values[face[0]], f.values[face[1]], f.values[face[2]]]);
        for c in 0..3 {
            let v = face[c];
            let w = face[(c + 1) % 3];
            // chart angle of edge v -> w, vs its angle in the vertex frame
            let d = [
                layout[(c + 1) % 3][0] - layout[c][0],
                layout[(c + 1) % 3][1] - layout[c][1],
            ];
            let chart_angle = d[1].atan2(d[0]);
            let delta = atlas.edge_angle(v, w) - chart_angle;
            let gr = crate::fields::rot(delta, g);
            acc[v][0] += gr[0] * area / 3.0;
            acc[v][1] += gr[1] * area / 3.0;
        }
    }
    for (v, a) in acc.iter_mut().enumerate() {
        a[0] /= m.vertex_areas()[v];
        a[1] /= m.vertex_areas()[v];
    }
    TangentField::new(m, acc)
}

/// Planar layout of a face from its edge lengths:
/// P0 at the origin, P1 on the x-axis, P2 above.
pub(crate) fn face_layout(m: &SimplicialSurface, fi: usize) -> [[f64; 2]; 3] {
    let f = m.faces()[fi];
    let c = m.edge_length(f[0], f[1]);
    let b = m.edge_length(f[0], f[2]);
    let a = m.edge_length(f[1], f[2]);
    let x = (c * c + b * b - a * a) / (2.0 * c);
    let y = (b * b - x * x).max(0.0).sqrt();
    [[0.0, 0.0], [c, 0.0], [x, y]]
}

/// Constant gradient of the affine interpolant on a laid-out triangle.
fn face_gradient(p: &[[f64; 2]; 3], u: [f64; 3]) -> [f64; 2] {
    let det =
        (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [0.0f64; 2];
    for c in 0..3 {
        let e = [
            p[(c + 2) % 3][0] - p[(c + 1) % 3][0],
            p[(c + 2) % 3][1] - p[(c + 1) % 3][1],
        ];
        // rotate edge by +90°: (-e_y, e_x)
        g[0] += u[c] * -e[1];
        g[1] += u[c] * e[0];
    }
    [g[0] / det, g[1] / det]
}

/// Connection Dirichlet form on sections of `E`, assembled per edge as
/// `w_e ℓ² ( |(P_{j→i} α_j − α_i)/ℓ + ½(f_i + f_j) u|² + ((f_j − f_i)/ℓ − ⟨ᾱ, u⟩)² )`
/// with `ᾱ = ½(α_i + P_{j→i} α_j)` and `u` the edge direction at `i`.
pub fn assemble_bundle_laplacian(
    m: &SimplicialSurface,
    atlas: &TransportAtlas,
) -> Result<OperatorPencil> {
    if !atlas.matches(m) {
        return Err(Error::SurfaceMismatch);
    }
    let weights = cotan_edge_weights(m);
    let negative = count_negative_weights(&weights);
    let n = m.vertex_count();
    let mut terms = Vec::with_capacity(3 * m.edge_count());
    for (e, &(i, j)) in m.edges().iter().enumerate() {
        let l = m.edge_lengths()[e];
        let coeff = weights[e] * l * l;
        let u = atlas.edge_direction(i, j);
        let rho = atlas.transport_angle(j, i);
        let (s, c) = rho.sin_cos();
        // transport matrix Q of P_{j→i} in column-vector convention
        let (q00, q01, q10, q11) = (c, -s, s, c);
        let (ai1, ai2, fi) = (3 * i, 3 * i + 1, 3 * i + 2);
        let (aj1, aj2, fj) = (3 * j, 3 * j + 1, 3 * j + 2);
        let inv_l = 1.0 / l;
        // V_x = (Q α_j − α_i)_x / ℓ + ½ (f_i + f_j) u_x
        terms.push(QuadTerm {
            coeff,
            entries: vec![
                (aj1, q00 * inv_l),
                (aj2, q01 * inv_l),
                (ai1, -inv_l),
                (fi, 0.5 * u[0]),
                (fj, 0.5 * u[0]),
            ],
        });
        // V_y
        terms.push(QuadTerm {
            coeff,
            entries: vec![
                (aj1, q10 * inv_l),
                (aj2, q11 * inv_l),
                (ai2, -inv_l),
                (fi, 0.5 * u[1]),
                (fj, 0.5 * u[1]),
            ],
        });
        // s = (f_j − f_i)/ℓ − ⟨(α_i + Q α_j)/2, u⟩
        terms.push(QuadTerm {
            coeff,
            entries: vec![
                (fj, inv_l),
                (fi, -inv_l),
                (ai1, -0.5 * u[0]),
                (ai2, -0.5 * u[1]),
                (aj1, -0.5 * (q00 * u[0] + q10 * u[1])),
                (aj2, -0.5 * (q01 * u[0] + q11 * u[1])),
            ],
        });
    }
    let mut mass = Vec::with_capacity(3 * n);
    for v in 0..n {
        let a = m.vertex_areas()[v];
        mass.extend_from_slice(&[a, a, a]);
    }
    Ok(OperatorPencil::from_terms(Domain::Section, 3 * n, terms, mass, negative, m))
}

/// Result of the Bochner-route pinching norm with clamp diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct BochnerPinch {
    pub value: f64,
    /// Magnitude clamped away below zero; values above `1e-6 ‖f‖₂²`
    /// deserve a warning in reports.
    pub clamp: f64,
}

/// `‖∇²f + f g‖₂` through the Bochner identity (n = 2):
/// `‖Δf‖₂² − (1/Vol)∫ K |∇f|² − 2(1/Vol)∫ f Δf + n ‖f‖₂²`, clamped at zero.
pub fn pinching_norm_bochner(
    m: &SimplicialSurface,
    atlas: &TransportAtlas,
    laplace: &OperatorPencil,
    k: &CurvatureField,
    f: &FunctionField,
) -> Result<BochnerPinch> {
    f.check(m)?;
    if laplace.domain != Domain::Function || laplace.surface != m.fingerprint() {
        return Err(Error::SurfaceMismatch);
    }
    let sq = pinching_square_bochner(m, atlas, laplace, k, &f.values)?;
    Ok(BochnerPinch { value: sq.max(0.0).sqrt(), clamp: (-sq).max(0.0) })
}

/// The (possibly slightly negative) squared Bochner-route pinching norm.
pub(crate) fn pinching_square_bochner(
    m: &SimplicialSurface,
    atlas: &TransportAtlas,
    laplace: &OperatorPencil,
    k: &CurvatureField,
    values: &[f64],
) -> Result<f64> {
    let lap = laplace.apply_weak_laplacian(values);
    let lap_sq = laplace.mass_inner_normalized(&lap, &lap);
    let f_lap = laplace.mass_inner_normalized(values, &lap);
    let f_sq = laplace.mass_inner_normalized(values, values);
    let f_field = FunctionField::new(m, values.to_vec())?;
    let ric_term = ric_gradient_integral(m, atlas, k, &f_field)?;
    let n = 2.0;
    Ok(lap_sq - ric_term - 2.0 * f_lap + n * f_sq)
}

/// `‖∇^E S‖₂` evaluated directly from the bundle quadratic form.
pub fn pinching_norm_bundle(
    m: &SimplicialSurface,
    bundle: &OperatorPencil,
    s: &crate::fields::ESection,
) -> Result<f64> {
    if bundle.domain != Domain::Section || !s.matches(m) {
        return Err(Error::SurfaceMismatch);
    }
    let coeffs = s.to_coeffs();
    Ok((bundle.quadratic_form(&coeffs) / m.total_volume()).max(0.0).sqrt())
}

/// `(1/Vol) ∫ K |∇f|²` with the vertex-averaged gradient.
pub fn ric_gradient_integral(
    m: &SimplicialSurface,
    atlas: &TransportAtlas,
    k: &CurvatureField,
    f: &FunctionField,
) -> Result<f64> {
    let grad = gradient(m, atlas, f)?;
    Ok(grad
        .components
        .iter()
        .zip(&k.values)
        .zip(m.vertex_areas())
        .map(|((g, kv), a)| kv * (g[0] * g[0] + g[1] * g[1]) * a)
        .sum::<f64>()
        / m.total_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{lp_norm, tangent_l2_norm, ESection, LpExponent};
    use crate::mesh::{gaussian_curvature, generate_flat_torus, generate_icosphere};

    #[test]
    fn constant_field_is_in_the_kernel_exactly() {
        let m = generate_icosphere(1.0, 2).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        let ones = vec![1.0; m.vertex_count()];
        assert_eq!(p.quadratic_form(&ones), 0.0);
    }

    #[test]
    fn stiffness_is_symmetric_and_nonnegative() {
        let m = generate_icosphere(1.0, 2).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        assert!(p.stiffness.asymmetry() < 1e-14);
        let mut s = crate::rng::SeedStream::new(4);
        for _ in 0..100 {
            let x: Vec<f64> = (0..p.dim).map(|_| s.next_sym()).collect();
            let q_terms = p.quadratic_form(&x);
            assert!(q_terms >= -1e-12);
            let q_csr = p.bilinear(&x, &x);
            assert!((q_terms - q_csr).abs() <= 1e-10 * q_terms.abs().max(1.0));
        }
    }

    #[test]
    fn sphere_dirichlet_energy_of_height_function() {
        // ∫ |∇z|² over S² is (2/3)·4π, i.e. 2/3 after normalization.
        let m = generate_icosphere(1.0, 4).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        let z = FunctionField::from_coords(&m, |c| c[2]).unwrap();
        let dirichlet = p.quadratic_form(&z.values) / m.total_volume();
        assert!((dirichlet - 2.0 / 3.0).abs() < 0.02 * (2.0 / 3.0), "{dirichlet}");
    }

    #[test]
    fn gradient_of_constant_is_zero_and_linear() {
        let m = generate_icosphere(1.0, 2).unwrap();
        let atlas = TransportAtlas::build(&m).unwrap();
        let c = FunctionField::constant(&m, 5.0);
        let g = gradient(&m, &atlas, &c).unwrap();
        assert!(g.components.iter().all(|v| v[0].abs() < 1e-12 && v[1].abs() < 1e-12));

        let x = FunctionField::from_coords(&m, |c| c[0]).unwrap();
        let y = FunctionField::from_coords(&m, |c| c[1]).unwrap();
        let combo = x.scaled(2.0).axpy(-3.0, &y).unwrap();
        let gx = gradient(&m, &atlas, &x).unwrap();
        let gy = gradient(&m, &atlas, &y).unwrap();
        let gc = gradient(&m, &atlas, &combo).unwrap();
        for v in 0..m.vertex_count() {
            for k in 0..2 {
                let expect = 2.0 * gx.components[v][k] - 3.0 * gy.components[v][k];
                assert!((gc.components[v][k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_norm_of_height_function() {
        let m = generate_icosphere(1.0, 4).unwrap();
        let atlas = TransportAtlas::build(&m).unwrap();
        let z = FunctionField::from_coords(&m, |c| c[2]).unwrap();
        let g = gradient(&m, &atlas, &z).unwrap();
        let norm_sq = tangent_l2_norm(&m, &g).powi(2);
        assert!((norm_sq - 2.0 / 3.0).abs() < 0.03 * (2.0 / 3.0), "{norm_sq}");
    }

    #[test]
    fn gradient_dirichlet_consistency() {
        let m = generate_icosphere(1.0, 4).unwrap();
        let atlas = TransportAtlas::build(&m).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        let z = FunctionField::from_coords(&m, |c| c[2]).unwrap();
        let g = gradient(&m, &atlas, &z).unwrap();
        let avg = tangent_l2_norm(&m, &g).powi(2);
        let stiff = p.quadratic_form(&z.values) / m.total_volume();
        assert!((avg - stiff).abs() < 0.03 * stiff, "{avg} vs {stiff}");
    }

    #[test]
    fn bundle_rayleigh_of_e_is_exactly_n() {
        for m in [
            generate_icosphere(1.0, 2).unwrap(),
            generate_icosphere(2.0, 3).unwrap(),
            generate_flat_torus(2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI, 8, 8)
                .unwrap(),
            crate::mesh::generate_ellipsoid(1.0, 1.0, 1.5, 2).unwrap(),
        ] {
            let atlas = TransportAtlas::build(&m).unwrap();
            let b = assemble_bundle_laplacian(&m, &atlas).unwrap();
            let e = ESection::unit_e(&m);
            let r = b.rayleigh(&e.to_coeffs());
            assert!((r - 2.0).abs() < 1e-9, "rayleigh(e) = {r}");
        }
    }

    #[test]
    fn bundle_form_is_symmetric_psd() {
        let m = generate_icosphere(1.0, 2).unwrap();
        let atlas = TransportAtlas::build(&m).unwrap();
        let b = assemble_bundle_laplacian(&m, &atlas).unwrap();
        assert!(b.stiffness.asymmetry() < 1e-14);
        let mut s = crate::rng::SeedStream::new(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..b.dim).map(|_| s.next_sym()).collect();
            assert!(b.quadratic_form(&x) >= -1e-12);
        }
    }

    #[test]
    fn bundle_energy_of_obata_section_is_small() {
        // S_z with z a unit-sphere height function solves ∇^E S = 0 in the
        // continuum; the discrete energy must shrink with the mesh size.
        let m = generate_icosphere(1.0, 4).unwrap();
        let atlas = TransportAtlas::build(&m).unwrap();
        let b = assemble_bundle_laplacian(&m, &atlas).unwrap();
        let z = FunctionField::from_coords(&m, |c| c[2]).unwrap();
        let g = gradient(&m, &atlas, &z).unwrap();
        let s = ESection::new(g, z).unwrap();
        let norm = pinching_norm_bundle(&m, &b, &s).unwrap();
        assert!(norm < 0.08, "‖∇^E S_z‖ = {norm}");
    }

    #[test]
    fn bochner_pinching_on_sphere_and_torus() {
        let m = generate_icosphere(1.0, 4).unwrap();
        let atlas = TransportAtlas::build(&m).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        let k = gaussian_curvature(&m).unwrap();
        let z = FunctionField::from_coords(&m, |c| c[2]).unwrap();
        let r = pinching_norm_bochner(&m, &atlas, &p, &k, &z).unwrap();
        let z_norm = lp_norm(&m, &z, LpExponent::Two);
        assert!(r.value <= 0.08 * z_norm, "pinch {} vs {}", r.value, z_norm);

        let t =
            generate_flat_torus(2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI, 32, 32)
                .unwrap();
        let atlas_t = TransportAtlas::build(&t).unwrap();
        let pt = assemble_laplacian(&t).unwrap();
        let kt = gaussian_curvature(&t).unwrap();
        let cosx = FunctionField::from_fn(&t, |v| {
            let i = v / 32;
            (2.0 * std::f64::consts::PI * i as f64 / 32.0).cos()
        });
        let r = pinching_norm_bochner(&t, &atlas_t, &pt, &kt, &cosx).unwrap();
        // ‖∇²f + fg‖² = ‖Δf‖² − 2∫fΔf + 2‖f‖² = 1/2 − 1 + 1 = 1/2
        assert!((r.value * r.value - 0.5).abs() < 0.03 * 0.5, "{}", r.value * r.value);
    }

    #[test]
    fn torus_has_no_negative_cotan_weights() {
        let t = generate_flat_torus(2.0, 1.0, 8, 4).unwrap();
        let p = assemble_laplacian(&t).unwrap();
        assert_eq!(p.negative_weight_edges, 0);
    }
}
