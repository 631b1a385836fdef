//! Generalized symmetric eigensolves for operator pencils, eigenpair
//! bookkeeping, and the band projection onto eigenfunctions with eigenvalue
//! in `[n − √δ, n + √δ]`.
//!
//! The sparse path is shift-invert Lanczos with full reorthogonalization:
//! with diagonal mass the pencil reduces to `Ã = M^{-1/2} K M^{-1/2}`, the
//! shifted SPD system `(Ã − σI) y = x` (σ < 0) is solved by IC(0)-
//! preconditioned CG, and Ritz pairs of the inverse map back through
//! `λ = σ + 1/μ`. A dense solver on the same reduction serves as the
//! mandatory oracle for small pencils and is exercised against the sparse
//! path in tests before the latter is trusted.

use crate::error::{Error, Result};
use crate::fields::{ESection, FunctionField};
use crate::mesh::SimplicialSurface;
use crate::operators::{Domain, OperatorPencil};
use crate::rng::{mix2, SeedStream};
use crate::sparse::{dot, norm2, pcg, CsrMatrix, IncompleteCholesky};
use serde::Serialize;

/// Ordered eigenpairs of a pencil, mass-orthonormal in the normalized
/// measure: `(1/Vol) u_i^T M u_j = δ_ij`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub domain: Domain,
    pub eigenvalues: Vec<f64>,
    /// Raw coefficient vectors (V values, or 3V in (a1, a2, f) blocks).
    pub eigenvectors: Vec<Vec<f64>>,
    /// `‖K u − λ M u‖ / (scale · ‖M u‖)` per pair, with `scale = max K_ii/M_ii`.
    pub residuals: Vec<f64>,
    pub meta: SolveMeta,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveMeta {
    pub method: String,
    pub dim: usize,
    pub iterations: usize,
    pub shift: f64,
    pub inner_iterations: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn function_field(&self, m: &SimplicialSurface, i: usize) -> Result<FunctionField> {
        if self.domain != Domain::Function {
            return Err(Error::Field("spectrum is not over functions".into()));
        }
        FunctionField::new(m, self.eigenvectors[i].clone())
    }

    pub fn esection(&self, m: &SimplicialSurface, i: usize) -> Result<ESection> {
        if self.domain != Domain::Section {
            return Err(Error::Field("spectrum is not over sections".into()));
        }
        ESection::from_coeffs(m, &self.eigenvectors[i])
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "eigenvalues": self.eigenvalues,
            "residuals": self.residuals,
            "meta": {
                "method": self.meta.method,
                "dim": self.meta.dim,
                "iterations": self.meta.iterations,
                "shift": self.meta.shift,
                "inner_iterations": self.meta.inner_iterations,
            },
        })
    }
}

/// Reduction of a diagonal-mass pencil to standard form.
struct StandardForm {
    a_tilde: CsrMatrix,
    inv_sqrt_m: Vec<f64>,
}

fn standard_form(p: &OperatorPencil) -> StandardForm {
    let inv_sqrt_m: Vec<f64> = p.mass().iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut a = p.stiffness.clone();
    for i in 0..a.n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            let j = a.col[k];
            a.val[k] *= inv_sqrt_m[i] * inv_sqrt_m[j];
        }
    }
    StandardForm { a_tilde: a, inv_sqrt_m }
}

/// Residuals and normalization against the original pencil; vectors are
/// mass-orthonormalized (modified Gram-Schmidt) and sign-canonicalized.
fn finalize_pairs(
    p: &OperatorPencil,
    mut pairs: Vec<(f64, Vec<f64>)>,
    meta: SolveMeta,
) -> Result<Spectrum> {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let vol = p.total_volume();
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(pairs.len());
    let mut values = Vec::with_capacity(pairs.len());
    for (lam, mut v) in pairs {
        // MGS in the normalized mass inner product
        for u in &vectors {
            let c = p.mass_inner(&v, u) / vol;
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= c * ui;
            }
        }
        let n = (p.mass_inner(&v, &v) / vol).sqrt();
        if n < 1e-10 {
            return Err(Error::Solver {
                msg: "eigenvector collapsed during orthonormalization".into(),
                best_residuals: vec![],
            });
        }
        for vi in v.iter_mut() {
            *vi /= n;
        }
        canonical_sign(&mut v);
        vectors.push(v);
        values.push(lam);
    }

    // deterministic order inside numerically degenerate clusters
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (values[a], values[b]);
        if (la - lb).abs() <= 1e-7 * la.abs().max(lb.abs()).max(1.0) {
            vectors[a][0].total_cmp(&vectors[b][0]).then(a.cmp(&b))
        } else {
            la.total_cmp(&lb)
        }
    });
    let values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let vectors: Vec<Vec<f64>> = order.iter().map(|&i| vectors[i].clone()).collect();

    let mut residuals = Vec::with_capacity(values.len());
    for (lam, v) in values.iter().zip(&vectors) {
        residuals.push(pair_residual(p, *lam, v));
    }
    Ok(Spectrum { domain: p.domain, eigenvalues: values, eigenvectors: vectors, residuals, meta })
}

fn pair_residual(p: &OperatorPencil, lam: f64, v: &[f64]) -> f64 {
    let mut kv = vec![0.0; p.dim];
    p.stiffness.matvec(v, &mut kv);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..p.dim {
        let mv = p.mass()[i] * v[i];
        let r = kv[i] - lam * mv;
        num += r * r;
        den += mv * mv;
    }
    (num / den).sqrt() / p.norm_scale()
}

fn canonical_sign(v: &mut [f64]) {
    for &x in v.iter() {
        if x.abs() > 1e-8 {
            if x < 0.0 {
                v.iter_mut().for_each(|y| *y = -*y);
            }
            return;
        }
    }
}

/// Dense oracle: full symmetric eigensolve of the standard-form reduction.
/// Intended for pencils with at most a few thousand unknowns.
pub fn solve_dense(p: &OperatorPencil, k: usize) -> Result<Spectrum> {
    if k == 0 || k > p.dim {
        return Err(Error::Solver {
            msg: format!("requested {k} pairs from a dim-{} pencil", p.dim),
            best_residuals: vec![],
        });
    }
    let sf = standard_form(p);
    let dense = sf.a_tilde.to_dense();
    let sym = nalgebra::SymmetricEigen::new(dense);
    let mut idx: Vec<usize> = (0..p.dim).collect();
    idx.sort_by(|&a, &b| sym.eigenvalues[a].total_cmp(&sym.eigenvalues[b]));
    let vol = p.total_volume();
    let mut pairs = Vec::with_capacity(k);
    for &i in idx.iter().take(k) {
        let lam = sym.eigenvalues[i];
        let col = sym.eigenvectors.column(i);
        let v: Vec<f64> = (0..p.dim)
            .map(|r| col[r] * sf.inv_sqrt_m[r] * vol.sqrt())
            .collect();
        pairs.push((lam, v));
    }
    finalize_pairs(
        p,
        pairs,
        SolveMeta {
            method: "dense".into(),
            dim: p.dim,
            iterations: 1,
            shift: 0.0,
            inner_iterations: 0,
        },
    )
}

/// The k smallest generalized eigenpairs by shift-invert Lanczos with full
/// reorthogonalization. Deterministic: the start vector is a SplitMix64
/// stream keyed by the mesh fingerprint and the pencil domain.
pub fn solve_smallest(p: &OperatorPencil, k: usize, tol: f64) -> Result<Spectrum> {
    if k == 0 {
        return Err(Error::Solver { msg: "k must be positive".into(), best_residuals: vec![] });
    }
    if 10 * k > p.dim {
        return Err(Error::Solver {
            msg: format!("k = {k} exceeds 0.1 · dim = {}", p.dim / 10),
            best_residuals: vec![],
        });
    }
    let tol = tol.max(1e-12);
    let sf = standard_form(p);
    let diag = sf.a_tilde.diagonal();
    let mean_diag = diag.iter().sum::<f64>() / diag.len() as f64;
    let mut shift = -1e-3 * mean_diag;

    let mut last_err = None;
    for attempt in 0..3 {
        match lanczos_shift_invert(p, &sf, k, tol, shift) {
            Ok(spec) => return Ok(spec),
            Err(e) => {
                last_err = Some(e);
                shift *= 10.0_f64.powi(attempt + 1);
            }
        }
    }
    Err(last_err.unwrap())
}

/// One Lanczos sweep against the shift-inverted operator with locking
/// against already-converged vectors. Degenerate eigenvalues are invisible
/// to a single Krylov space, so `solve` runs sweeps repeatedly, deflating
/// what converged, until k pairs are collected.
fn lanczos_shift_invert(
    p: &OperatorPencil,
    sf: &StandardForm,
    k: usize,
    tol: f64,
    shift: f64,
) -> Result<Spectrum> {
    let n = p.dim;
    let shifted = sf.a_tilde.shifted(-shift);
    let ic = IncompleteCholesky::factor(&shifted)?;
    let mut inner_total = 0usize;
    let mut lanczos_total = 0usize;

    // converged pairs in tilde coordinates: (μ of the inverse, unit vector)
    let mut locked: Vec<(f64, Vec<f64>)> = Vec::new();
    let seed = mix2(
        p.surface_fingerprint(),
        match p.domain {
            Domain::Function => 0xF1,
            Domain::Section => 0x5EC,
        },
    );

    // Each round runs a deflated Lanczos sweep and locks the converged
    // prefix of its top Ritz pairs (largest μ of the inverse = smallest λ).
    // Once k pairs are held, confirmation rounds with one wanted pair keep
    // running until a fresh sweep's best new value no longer undercuts the
    // current k-th smallest: only then can no copy be missing below λ_k.
    let max_rounds = 3 * k + 8;
    let mut round = 0usize;
    loop {
        if round >= max_rounds {
            break;
        }
        let have = locked.len();
        let confirming = have >= k;
        let kth_mu = if confirming {
            let mut mus: Vec<f64> = locked.iter().map(|(mu, _)| *mu).collect();
            mus.sort_by(|a, b| b.total_cmp(a));
            mus[k - 1]
        } else {
            f64::INFINITY
        };
        let want = if confirming { 1 } else { (k - have).min(6) };

        let mut stream = SeedStream::new(mix2(seed, round as u64));
        round += 1;
        let mut v: Vec<f64> = (0..n).map(|_| stream.next_sym()).collect();
        for _ in 0..2 {
            orthogonalize_against(&mut v, locked.iter().map(|(_, y)| y));
        }
        let nv = norm2(&v);
        if nv < 1e-12 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nv);

        let room = n - locked.len();
        if room == 0 {
            break;
        }
        let max_steps = (8 * want + 60).min(room);
        let mut basis: Vec<Vec<f64>> = vec![v];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut w = vec![0.0; n];
        let mut round_new: Vec<(f64, Vec<f64>)> = Vec::new();

        'steps: for step in 0..max_steps {
            w.iter_mut().for_each(|x| *x = 0.0);
            let iters = pcg(
                &shifted,
                &ic,
                &basis[step],
                &mut w,
                1e-13,
                30 * (n as f64).sqrt() as usize + 3000,
            )?;
            inner_total += iters;
            lanczos_total += 1;
            let alpha = dot(&w, &basis[step]);
            alphas.push(alpha);
            // locking + full reorthogonalization, two passes
            for _ in 0..2 {
                orthogonalize_against(&mut w, locked.iter().map(|(_, y)| y));
                orthogonalize_against(&mut w, basis.iter());
            }
            let beta = norm2(&w);
            let m = alphas.len();
            let exhausted = beta < 1e-13 || step + 1 == max_steps;

            if m % 4 == 0 || exhausted {
                let (ritz_vals, ritz_vecs) = tridiag_eigen(&alphas, &betas);
                let mut idx: Vec<usize> = (0..m).collect();
                idx.sort_by(|&a, &b| ritz_vals[b].total_cmp(&ritz_vals[a]));
                // converged prefix of the sorted Ritz pairs
                let mut prefix = Vec::new();
                for &i in &idx {
                    let mu = ritz_vals[i];
                    if mu <= 0.0 {
                        break;
                    }
                    let est = (beta * ritz_vecs[(m - 1, i)]).abs();
                    if est <= 0.05 * tol.max(1e-11) * mu {
                        prefix.push(i);
                    } else {
                        break;
                    }
                }
                if prefix.len() >= want || (exhausted && !prefix.is_empty()) {
                    for &i in prefix.iter().take(want.max(prefix.len().min(6))) {
                        let mu = ritz_vals[i];
                        let mut y = vec![0.0; n];
                        for (j, b) in basis.iter().enumerate().take(m) {
                            let c = ritz_vecs[(j, i)];
                            y.iter_mut().zip(b).for_each(|(yi, bi)| *yi += c * bi);
                        }
                        for _ in 0..2 {
                            orthogonalize_against(&mut y, locked.iter().map(|(_, q)| q));
                            orthogonalize_against(&mut y, round_new.iter().map(|(_, q)| q));
                        }
                        let ny = norm2(&y);
                        if ny < 1e-8 {
                            continue;
                        }
                        y.iter_mut().for_each(|x| *x /= ny);
                        round_new.push((mu, y));
                    }
                    break 'steps;
                }
                if exhausted {
                    break 'steps;
                }
            }
            if beta < 1e-13 {
                break 'steps;
            }
            betas.push(beta);
            let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
            basis.push(next);
        }

        if round_new.is_empty() {
            if confirming {
                // deflated spectrum exhausted below reach; accept the set
                break;
            }
            continue;
        }
        let best_new_mu = round_new.iter().map(|(mu, _)| *mu).fold(f64::NEG_INFINITY, f64::max);
        locked.extend(round_new);
        if confirming && best_new_mu <= kth_mu * (1.0 + 1e-9) {
            // nothing new undercuts λ_k: the k smallest are in hand
            break;
        }
    }

    if locked.len() < k {
        return Err(Error::Solver {
            msg: format!(
                "shift-invert Lanczos collected only {} of {k} pairs in {max_rounds} rounds",
                locked.len()
            ),
            best_residuals: vec![],
        });
    }

    // keep the k smallest λ among the collected pairs
    locked.sort_by(|a, b| b.0.total_cmp(&a.0));
    locked.truncate(k);
    let vol = p.total_volume();
    let mut pairs = Vec::with_capacity(k);
    for (mu, y) in locked {
        let lam = shift + 1.0 / mu;
        let v: Vec<f64> =
            y.iter().enumerate().map(|(r, x)| x * sf.inv_sqrt_m[r] * vol.sqrt()).collect();
        pairs.push((lam, v));
    }
    let meta = SolveMeta {
        method: "shift-invert-lanczos".into(),
        dim: n,
        iterations: lanczos_total,
        shift,
        inner_iterations: inner_total,
    };
    let spectrum = finalize_pairs(p, pairs, meta)?;
    let worst = spectrum.residuals.iter().fold(0.0f64, |a, &b| a.max(b));
    if worst > tol.max(1e-8) {
        return Err(Error::Solver {
            msg: format!("converged pairs exceed residual tolerance: worst {worst:e}"),
            best_residuals: spectrum.residuals,
        });
    }
    Ok(spectrum)
}

fn orthogonalize_against<'a>(w: &mut [f64], others: impl Iterator<Item = &'a Vec<f64>>) {
    for b in others {
        let c = dot(w, b);
        w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
    }
}

/// Eigen-decomposition of the symmetric tridiagonal Lanczos matrix.
fn tridiag_eigen(alphas: &[f64], betas: &[f64]) -> (Vec<f64>, nalgebra::DMatrix<f64>) {
    let m = alphas.len();
    let mut t = nalgebra::DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let sym = nalgebra::SymmetricEigen::new(t);
    let vals: Vec<f64> = sym.eigenvalues.iter().copied().collect();
    (vals, sym.eigenvectors)
}

// ---------------------------------------------------------------------------
// Band projection
// ---------------------------------------------------------------------------

/// The `(n, δ)`-projection band `[n − √δ, n + √δ]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProjectionSpec {
    pub n: u32,
    pub delta: f64,
}

/// Closed-interval membership slack absorbing residual-level eigenvalue error.
pub const BAND_SLACK: f64 = 1e-9;

impl ProjectionSpec {
    pub fn new(n: u32, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Field(format!("delta must be positive, got {delta}")));
        }
        Ok(Self { n, delta })
    }

    pub fn band(&self) -> (f64, f64) {
        let half = self.delta.sqrt();
        (self.n as f64 - half, self.n as f64 + half)
    }

    /// Indices of spectrum members inside the closed band, after checking
    /// that the spectrum reaches past the upper band edge.
    pub fn band_members(&self, spectrum: &Spectrum) -> Result<Vec<usize>> {
        let (lo, hi) = self.band();
        let max = spectrum.eigenvalues.last().copied().unwrap_or(f64::NEG_INFINITY);
        if max < hi + BAND_SLACK {
            return Err(Error::BandCoverage { lo, hi, max_computed: max });
        }
        Ok(spectrum
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &l)| l >= lo - BAND_SLACK && l <= hi + BAND_SLACK)
            .map(|(i, _)| i)
            .collect())
    }
}

/// Mass-orthogonal projection of `f` onto the band subspace.
pub fn project_band(
    spec: &ProjectionSpec,
    m: &SimplicialSurface,
    spectrum: &Spectrum,
    f: &FunctionField,
) -> Result<FunctionField> {
    f.check(m)?;
    if spectrum.domain != Domain::Function {
        return Err(Error::Field("band projection needs a function spectrum".into()));
    }
    let members = spec.band_members(spectrum)?;
    let mut out = vec![0.0; m.vertex_count()];
    for idx in members {
        let phi = &spectrum.eigenvectors[idx];
        let coeff = f
            .values
            .iter()
            .zip(phi)
            .zip(m.vertex_areas())
            .map(|((a, b), w)| a * b * w)
            .sum::<f64>()
            / m.total_volume();
        for (o, p) in out.iter_mut().zip(phi) {
            *o += coeff * p;
        }
    }
    FunctionField::new(m, out)
}

/// λ_k plus an independent Rayleigh certificate recomputed from raw forms.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertifiedValue {
    pub value: f64,
    pub certificate: f64,
}

/// Returns the k-th smallest eigenvalue (1-indexed) together with the
/// largest Rayleigh quotient over the span of the first k eigenfields,
/// recomputed from the assembled forms. Errors if the two disagree beyond
/// 1e-6 relative, which flags a solver or assembly bug.
pub fn certify_lambda_k(
    p: &OperatorPencil,
    spectrum: &Spectrum,
    k: usize,
) -> Result<CertifiedValue> {
    if k == 0 || k > spectrum.len() {
        return Err(Error::Solver {
            msg: format!("k = {k} out of range for spectrum of {} pairs", spectrum.len()),
            best_residuals: vec![],
        });
    }
    let value = spectrum.eigenvalues[k - 1];
    let mut kr = nalgebra::DMatrix::zeros(k, k);
    let mut mr = nalgebra::DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            kr[(i, j)] = p.bilinear(&spectrum.eigenvectors[i], &spectrum.eigenvectors[j]);
            mr[(i, j)] = p.mass_inner(&spectrum.eigenvectors[i], &spectrum.eigenvectors[j]);
        }
    }
    let certificate = generalized_symmetric_eigenvalues(&kr, &mr)?
        .last()
        .copied()
        .unwrap_or(f64::NAN);
    let scale = value.abs().max(certificate.abs()).max(p.norm_scale() * 1e-9);
    if (certificate - value).abs() > 1e-6 * scale {
        return Err(Error::Solver {
            msg: format!(
                "certificate {certificate} disagrees with eigenvalue {value} beyond 1e-6"
            ),
            best_residuals: vec![(certificate - value).abs() / scale],
        });
    }
    Ok(CertifiedValue { value, certificate })
}

/// Eigenvalues (ascending) of the dense symmetric pencil (A, B), B positive
/// definite, via Cholesky reduction.
pub fn generalized_symmetric_eigenvalues(
    a: &nalgebra::DMatrix<f64>,
    b: &nalgebra::DMatrix<f64>,
) -> Result<Vec<f64>> {
    let chol = b.clone().cholesky().ok_or_else(|| Error::Solver {
        msg: "restricted mass matrix is not positive definite".into(),
        best_residuals: vec![],
    })?;
    let l_inv = chol.l().try_inverse().ok_or_else(|| Error::Solver {
        msg: "Cholesky factor is singular".into(),
        best_residuals: vec![],
    })?;
    let std = &l_inv * a * l_inv.transpose();
    let sym = nalgebra::SymmetricEigen::new((std.clone() + std.transpose()) * 0.5);
    let mut vals: Vec<f64> = sym.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Eigenpairs (ascending) of the dense symmetric pencil (A, B).
pub fn generalized_symmetric_eigenpairs(
    a: &nalgebra::DMatrix<f64>,
    b: &nalgebra::DMatrix<f64>,
) -> Result<(Vec<f64>, nalgebra::DMatrix<f64>)> {
    let chol = b.clone().cholesky().ok_or_else(|| Error::Solver {
        msg: "restricted mass matrix is not positive definite".into(),
        best_residuals: vec![],
    })?;
    let l_inv = chol.l().try_inverse().ok_or_else(|| Error::Solver {
        msg: "Cholesky factor is singular".into(),
        best_residuals: vec![],
    })?;
    let std = &l_inv * a * l_inv.transpose();
    let sym = nalgebra::SymmetricEigen::new((std.clone() + std.transpose()) * 0.5);
    let mut idx: Vec<usize> = (0..a.nrows()).collect();
    idx.sort_by(|&x, &y| sym.eigenvalues[x].total_cmp(&sym.eigenvalues[y]));
    let vals: Vec<f64> = idx.iter().map(|&i| sym.eigenvalues[i]).collect();
    // columns back in B-coordinates: x = L^{-T} y
    let lt_inv = l_inv.transpose();
    let mut vecs = nalgebra::DMatrix::zeros(a.nrows(), a.nrows());
    for (out_c, &i) in idx.iter().enumerate() {
        let y = sym.eigenvectors.column(i);
        let x = &lt_inv * y;
        vecs.set_column(out_c, &x);
    }
    Ok((vals, vecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::TransportAtlas;
    use crate::mesh::{generate_flat_torus, generate_icosphere};
    use crate::operators::{assemble_bundle_laplacian, assemble_laplacian};

    #[test]
    fn sparse_matches_dense_oracle_on_small_pencils() {
        // Required before the sparse path is trusted: every reported
        // eigenvalue matches a full dense solve to 1e-8 on small meshes.
        let sphere = generate_icosphere(1.0, 2).unwrap();
        let torus = generate_flat_torus(2.0, 1.5, 10, 9).unwrap();
        for m in [sphere, torus] {
            let atlas = TransportAtlas::build(&m).unwrap();
            for p in
                [assemble_laplacian(&m).unwrap(), assemble_bundle_laplacian(&m, &atlas).unwrap()]
            {
                let k = 8;
                let dense = solve_dense(&p, k).unwrap();
                let sparse = solve_smallest(&p, k, 1e-10).unwrap();
                for i in 0..k {
                    let scale = dense.eigenvalues[i].abs().max(1.0);
                    assert!(
                        (dense.eigenvalues[i] - sparse.eigenvalues[i]).abs() <= 1e-8 * scale,
                        "pair {i}: dense {} vs sparse {}",
                        dense.eigenvalues[i],
                        sparse.eigenvalues[i]
                    );
                }
                for r in &sparse.residuals {
                    assert!(*r <= 1e-8, "residual {r}");
                }
            }
        }
    }

    #[test]
    fn eigenvalues_are_sorted_and_orthonormal() {
        let m = generate_icosphere(1.0, 2).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        let s = solve_smallest(&p, 10, 1e-10).unwrap();
        for w in s.eigenvalues.windows(2) {
            assert!(w[0] <= w[1] + 1e-12);
        }
        let vol = p.total_volume();
        for i in 0..s.len() {
            for j in 0..s.len() {
                let g = p.mass_inner(&s.eigenvectors[i], &s.eigenvectors[j]) / vol;
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-9, "gram[{i}][{j}] = {g}");
            }
        }
    }

    #[test]
    fn sphere_function_spectrum_has_harmonic_bands() {
        let m = generate_icosphere(1.0, 3).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        let s = solve_smallest(&p, 10, 1e-10).unwrap();
        let expect = [0.0, 2.0, 2.0, 2.0, 6.0, 6.0, 6.0, 6.0, 6.0, 12.0];
        for (got, want) in s.eigenvalues.iter().zip(expect) {
            assert!((got - want).abs() <= 0.02 * want.max(0.05), "{got} vs {want}");
        }
    }

    #[test]
    fn band_projection_is_idempotent_and_selective() {
        let m = generate_icosphere(1.0, 3).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        let s = solve_smallest(&p, 12, 1e-10).unwrap();
        let spec = ProjectionSpec::new(2, 0.01).unwrap();

        // in-band member is fixed
        let phi1 = s.function_field(&m, 1).unwrap();
        let proj = project_band(&spec, &m, &s, &phi1).unwrap();
        let diff: f64 = phi1.values.iter().zip(&proj.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");

        // out-of-band member goes to zero
        let phi5 = s.function_field(&m, 5).unwrap();
        let proj5 = project_band(&spec, &m, &s, &phi5).unwrap();
        let max5 = proj5.values.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max5 < 1e-6, "{max5}");

        // idempotent + self-adjoint on deterministic fields
        let mut stream = SeedStream::new(17);
        let f = FunctionField::from_fn(&m, |_| stream.next_sym());
        let g = FunctionField::from_fn(&m, |_| stream.next_sym());
        let tf = project_band(&spec, &m, &s, &f).unwrap();
        let ttf = project_band(&spec, &m, &s, &tf).unwrap();
        let dd: f64 = tf.values.iter().zip(&ttf.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dd < 1e-10);
        let tg = project_band(&spec, &m, &s, &g).unwrap();
        let lhs = crate::fields::l2_inner(&m, &tf, &g);
        let rhs = crate::fields::l2_inner(&m, &f, &tg);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn band_coverage_error_demands_more_pairs() {
        let m = generate_icosphere(1.0, 2).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        let s = solve_smallest(&p, 3, 1e-10).unwrap(); // max λ ≈ 2 < 2 + √δ
        let spec = ProjectionSpec::new(2, 0.25).unwrap();
        let f = FunctionField::constant(&m, 1.0);
        assert!(matches!(
            project_band(&spec, &m, &s, &f),
            Err(Error::BandCoverage { .. })
        ));
    }

    #[test]
    fn certify_lambda_k_monotone_and_consistent() {
        let m = generate_icosphere(1.0, 2).unwrap();
        let atlas = TransportAtlas::build(&m).unwrap();
        let b = assemble_bundle_laplacian(&m, &atlas).unwrap();
        let s = solve_smallest(&b, 6, 1e-10).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=6 {
            let c = certify_lambda_k(&b, &s, k).unwrap();
            assert!(c.value >= prev - 1e-12);
            prev = c.value;
        }
    }

    #[test]
    fn eigenvalues_invariant_under_vertex_relabeling() {
        let m = generate_icosphere(1.0, 1).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        let s = solve_dense(&p, 6).unwrap();

        // relabel vertices by a deterministic permutation
        let n = m.vertex_count();
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        let mut inv = vec![0usize; n];
        for (i, &pi) in perm.iter().enumerate() {
            inv[pi] = i;
        }
        let coords = m.embedding().unwrap();
        let mut new_coords = vec![[0.0; 3]; n];
        for i in 0..n {
            new_coords[perm[i]] = coords[i];
        }
        let new_faces: Vec<[usize; 3]> =
            m.faces().iter().map(|f| [perm[f[0]], perm[f[1]], perm[f[2]]]).collect();
        let m2 = crate::mesh::SimplicialSurface::from_embedded(new_coords, new_faces).unwrap();
        let p2 = assemble_laplacian(&m2).unwrap();
        let s2 = solve_dense(&p2, 6).unwrap();
        for i in 0..6 {
            assert!((s.eigenvalues[i] - s2.eigenvalues[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let m = generate_icosphere(1.0, 2).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        let a = solve_smallest(&p, 5, 1e-10).unwrap();
        let b = solve_smallest(&p, 5, 1e-10).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.eigenvectors, b.eigenvectors);
    }

    #[test]
    fn oversized_k_is_rejected() {
        let m = generate_icosphere(1.0, 1).unwrap();
        let p = assemble_laplacian(&m).unwrap();
        assert!(solve_smallest(&p, p.dim / 2, 1e-10).is_err());
    }
}
