//! Triangulated closed surfaces, embedded or intrinsic.
//!
//! A surface always carries edge lengths; an embedding is optional and only
//! required by the hypersurface module. The measure is the lumped one-third
//! barycentric vertex area, so mass matrices downstream are diagonal.

use crate::error::{Error, Result};
use crate::rng::{mix2, splitmix64, SeedStream};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// Counterclockwise one-ring of a vertex on a closed oriented surface.
#[derive(Debug, Clone)]
pub struct Star {
    /// Neighbors in ccw cyclic order, starting from the smallest index.
    pub neighbors: Vec<usize>,
    /// `faces[m]` is the face spanned by the vertex, `neighbors[m]` and
    /// `neighbors[(m + 1) % d]`.
    pub faces: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SimplicialSurface {
    embedding: Option<Vec<[f64; 3]>>,
    faces: Vec<[usize; 3]>,
    edges: Vec<(usize, usize)>,
    edge_lengths: Vec<f64>,
    edge_lookup: HashMap<(usize, usize), usize>,
    corner_angles: Vec<[f64; 3]>,
    face_areas: Vec<f64>,
    vertex_areas: Vec<f64>,
    angle_sums: Vec<f64>,
    stars: Vec<Star>,
    total_volume: f64,
    fingerprint: u64,
}

impl SimplicialSurface {
    pub fn from_embedded(coords: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = coords.len();
        let mut lengths = Vec::new();
        let mut seen = HashMap::new();
        for f in &faces {
            for (a, b) in face_edges(f) {
                let key = canon(a, b);
                if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(key) {
                    e.insert(());
                    lengths.push((key.0, key.1, dist3(&coords[key.0], &coords[key.1])));
                }
            }
        }
        Self::build(Some(coords), n, faces, &lengths)
    }

    pub fn from_intrinsic(
        n_vertices: usize,
        faces: Vec<[usize; 3]>,
        edge_lengths: &[(usize, usize, f64)],
    ) -> Result<Self> {
        Self::build(None, n_vertices, faces, edge_lengths)
    }

    fn build(
        embedding: Option<Vec<[f64; 3]>>,
        n: usize,
        faces: Vec<[usize; 3]>,
        lengths_in: &[(usize, usize, f64)],
    ) -> Result<Self> {
        if n < 3 {
            return Err(Error::Mesh(format!("need at least 3 vertices, got {n}")));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Mesh(format!("face {fi} has repeated vertices")));
            }
            for &v in f {
                if v >= n {
                    return Err(Error::Mesh(format!("face {fi} references vertex {v} >= {n}")));
                }
            }
        }

        // Canonical sorted edge list with lengths.
        let mut pairs: Vec<(usize, usize, f64)> = lengths_in
            .iter()
            .map(|&(i, j, l)| {
                let (a, b) = canon(i, j);
                (a, b, l)
            })
            .collect();
        pairs.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        pairs.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1) && a.2 == b.2);
        let mut edges = Vec::with_capacity(pairs.len());
        let mut edge_lengths = Vec::with_capacity(pairs.len());
        let mut edge_lookup = HashMap::with_capacity(pairs.len());
        for &(i, j, l) in &pairs {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::Mesh(format!("edge ({i},{j}) has non-positive length {l}")));
            }
            if edge_lookup.insert((i, j), edges.len()).is_some() {
                return Err(Error::Mesh(format!("edge ({i},{j}) given conflicting lengths")));
            }
            edges.push((i, j));
            edge_lengths.push(l);
        }

        // Closedness and consistent orientation: every undirected edge must
        // appear in exactly two faces, once per direction.
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &faces {
            for (a, b) in face_edges(f) {
                *directed.entry((a, b)).or_insert(0) += 1;
                if !edge_lookup.contains_key(&canon(a, b)) {
                    return Err(Error::Mesh(format!("edge ({a},{b}) has no length entry")));
                }
            }
        }
        for &(i, j) in &edges {
            let fwd = directed.get(&(i, j)).copied().unwrap_or(0);
            let bwd = directed.get(&(j, i)).copied().unwrap_or(0);
            if fwd != 1 || bwd != 1 {
                return Err(Error::Mesh(format!(
                    "edge ({i},{j}) is used {fwd}+{bwd} times; closed oriented surfaces need 1+1"
                )));
            }
        }

        // Per-face geometry from edge lengths.
        let get_len = |a: usize, b: usize| -> f64 {
            let (x, y) = canon(a, b);
            edge_lengths[edge_lookup[&(x, y)]]
        };
        let mut corner_angles = Vec::with_capacity(faces.len());
        let mut face_areas = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            let la = get_len(f[1], f[2]);
            let lb = get_len(f[0], f[2]);
            let lc = get_len(f[0], f[1]);
            let area = heron(la, lb, lc);
            if !(area > 0.0) {
                return Err(Error::Mesh(format!(
                    "face {fi} violates the strict triangle inequality ({la}, {lb}, {lc})"
                )));
            }
            corner_angles.push([
                corner_angle(lb, lc, la),
                corner_angle(lc, la, lb),
                corner_angle(la, lb, lc),
            ]);
            face_areas.push(area);
        }

        let mut vertex_areas = vec![0.0; n];
        let mut angle_sums = vec![0.0; n];
        for (fi, f) in faces.iter().enumerate() {
            for c in 0..3 {
                vertex_areas[f[c]] += face_areas[fi] / 3.0;
                angle_sums[f[c]] += corner_angles[fi][c];
            }
        }
        if let Some(v) = vertex_areas.iter().position(|&a| !(a > 0.0)) {
            return Err(Error::Mesh(format!("vertex {v} has non-positive lumped area")));
        }
        let total_volume: f64 = face_areas.iter().sum();

        let stars = build_stars(n, &faces)?;

        let fingerprint = {
            let mut h = splitmix64(0x6D65_7368); // "mesh"
            for f in &faces {
                for &v in f {
                    h = mix2(h, v as u64);
                }
            }
            for (k, &(i, j)) in edges.iter().enumerate() {
                h = mix2(h, ((i as u64) << 32) | j as u64);
                h = mix2(h, edge_lengths[k].to_bits());
            }
            if let Some(coords) = &embedding {
                for c in coords {
                    for &x in c {
                        h = mix2(h, x.to_bits());
                    }
                }
            }
            h
        };

        Ok(Self {
            embedding,
            faces,
            edges,
            edge_lengths,
            edge_lookup,
            corner_angles,
            face_areas,
            vertex_areas,
            angle_sums,
            stars,
            total_volume,
            fingerprint,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_areas.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.face_count() as i64
    }

    pub fn embedding(&self) -> Option<&[[f64; 3]]> {
        self.embedding.as_deref()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_length(&self, i: usize, j: usize) -> f64 {
        self.edge_lengths[self.edge_lookup[&canon(i, j)]]
    }

    pub fn edge_lengths(&self) -> &[f64] {
        &self.edge_lengths
    }

    pub fn mean_edge_length(&self) -> f64 {
        self.edge_lengths.iter().sum::<f64>() / self.edge_lengths.len() as f64
    }

    /// Per-face corner angles, aligned with the face's vertex order.
    pub fn corner_angles(&self) -> &[[f64; 3]] {
        &self.corner_angles
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn vertex_areas(&self) -> &[f64] {
        &self.vertex_areas
    }

    /// Sum of interior angles incident to `v`.
    pub fn angle_sum(&self, v: usize) -> f64 {
        self.angle_sums[v]
    }

    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    pub fn star(&self, v: usize) -> &Star {
        &self.stars[v]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn is_connected(&self) -> bool {
        let n = self.vertex_count();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &self.stars[v].neighbors {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }

    /// Interior angle at corner `v` of face `fi`.
    pub fn angle_at(&self, fi: usize, v: usize) -> f64 {
        let f = self.faces[fi];
        let c = f.iter().position(|&x| x == v).expect("vertex not in face");
        self.corner_angles[fi][c]
    }

    pub fn save_off<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let coords = self
            .embedding
            .as_ref()
            .ok_or_else(|| Error::Mesh("cannot write an intrinsic mesh to OFF".into()))?;
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "OFF")?;
        writeln!(w, "{} {} {}", self.vertex_count(), self.face_count(), self.edge_count())?;
        for c in coords {
            writeln!(w, "{} {} {}", c[0], c[1], c[2])?;
        }
        for f in &self.faces {
            writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
        }
        Ok(())
    }

    pub fn load_off<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let header = next_line(&mut lines)?;
        if header.1.trim() != "OFF" {
            return Err(Error::Format { line: header.0, msg: "expected OFF header".into() });
        }
        let counts = next_line(&mut lines)?;
        let parts: Vec<&str> = counts.1.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Format {
                line: counts.0,
                msg: "expected \"V F E\" counts".into(),
            });
        }
        let nv: usize = parse_tok(parts[0], counts.0)?;
        let nf: usize = parse_tok(parts[1], counts.0)?;
        let mut coords = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, text) = next_line(&mut lines)?;
            let toks: Vec<&str> = text.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(Error::Format { line: ln, msg: "expected 3 coordinates".into() });
            }
            coords.push([
                parse_tok::<f64>(toks[0], ln)?,
                parse_tok::<f64>(toks[1], ln)?,
                parse_tok::<f64>(toks[2], ln)?,
            ]);
        }
        let mut faces = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (ln, text) = next_line(&mut lines)?;
            let toks: Vec<&str> = text.split_whitespace().collect();
            if toks.is_empty() {
                return Err(Error::Format { line: ln, msg: "empty face line".into() });
            }
            let arity: usize = parse_tok(toks[0], ln)?;
            if arity != 3 || toks.len() != 4 {
                return Err(Error::Format {
                    line: ln,
                    msg: format!("non-triangle face at line {ln}"),
                });
            }
            let mut f = [0usize; 3];
            for (slot, tok) in f.iter_mut().zip(&toks[1..]) {
                let idx: usize = parse_tok(tok, ln)?;
                if idx >= nv {
                    return Err(Error::Format {
                        line: ln,
                        msg: format!("vertex index {idx} out of range (V = {nv})"),
                    });
                }
                *slot = idx;
            }
            faces.push(f);
        }
        Self::from_embedded(coords, faces)
    }

    pub fn save_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let doc = IntrinsicMeshDoc {
            faces: self.faces.clone(),
            edge_lengths: self
                .edges
                .iter()
                .zip(&self.edge_lengths)
                .map(|(&(i, j), &l)| (i, j, l))
                .collect(),
        };
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &doc)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let doc: IntrinsicMeshDoc = serde_json::from_str(&text)?;
        let n = doc
            .faces
            .iter()
            .flat_map(|f| f.iter().copied())
            .max()
            .map(|m| m + 1)
            .unwrap_or(0);
        Self::from_intrinsic(n, doc.faces, &doc.edge_lengths)
    }

    /// Dispatch on extension: `.off` embedded, `.json` intrinsic.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let p = path.as_ref();
        match p.extension().and_then(|e| e.to_str()) {
            Some("off") | Some("OFF") => Self::load_off(p),
            Some("json") => Self::load_json(p),
            other => Err(Error::Mesh(format!("unknown mesh extension {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct IntrinsicMeshDoc {
    faces: Vec<[usize; 3]>,
    edge_lengths: Vec<(usize, usize, f64)>,
}

/// Per-vertex Gaussian curvature, angle defect over lumped area.
#[derive(Debug, Clone)]
pub struct CurvatureField {
    pub values: Vec<f64>,
    surface: u64,
}

impl CurvatureField {
    pub fn surface_fingerprint(&self) -> u64 {
        self.surface
    }
}

pub fn gaussian_curvature(m: &SimplicialSurface) -> Result<CurvatureField> {
    let values = (0..m.vertex_count())
        .map(|v| (2.0 * PI - m.angle_sum(v)) / m.vertex_areas()[v])
        .collect();
    Ok(CurvatureField { values, surface: m.fingerprint() })
}

/// Integral of K over the surface; equals 2πχ for any closed mesh.
pub fn gauss_bonnet_total(m: &SimplicialSurface, k: &CurvatureField) -> f64 {
    k.values
        .iter()
        .zip(m.vertex_areas())
        .map(|(kv, av)| kv * av)
        .sum()
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

const MAX_SUBDIVISIONS: u32 = 8;

fn icosahedron_unit() -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let verts = raw.iter().map(|v| normalize3(*v)).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (verts, faces)
}

/// Unit-sphere directions of the subdivided icosahedron. Deterministic in
/// vertex order: the 12 base vertices first, then midpoints in face order.
fn icosphere_directions(subdivisions: u32) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let (mut verts, mut faces) = icosahedron_unit();
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for (c, m) in mid.iter_mut().enumerate() {
                let (a, b) = canon(f[c], f[(c + 1) % 3]);
                *m = *midpoint.entry((a, b)).or_insert_with(|| {
                    let p = normalize3([
                        0.5 * (verts[a][0] + verts[b][0]),
                        0.5 * (verts[a][1] + verts[b][1]),
                        0.5 * (verts[a][2] + verts[b][2]),
                    ]);
                    verts.push(p);
                    verts.len() - 1
                });
            }
            new_faces.push([f[0], mid[0], mid[2]]);
            new_faces.push([f[1], mid[1], mid[0]]);
            new_faces.push([f[2], mid[2], mid[1]]);
            new_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = new_faces;
    }
    (verts, faces)
}

pub fn generate_icosphere(radius: f64, subdivisions: u32) -> Result<SimplicialSurface> {
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(Error::Mesh(format!(
            "subdivision overflow: {subdivisions} > {MAX_SUBDIVISIONS}"
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::Mesh(format!("radius must be positive, got {radius}")));
    }
    let (dirs, faces) = icosphere_directions(subdivisions);
    let coords = dirs
        .into_iter()
        .map(|u| [u[0] * radius, u[1] * radius, u[2] * radius])
        .collect();
    SimplicialSurface::from_embedded(coords, faces)
}

pub fn generate_ellipsoid(a: f64, b: f64, c: f64, subdivisions: u32) -> Result<SimplicialSurface> {
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::Mesh(format!("semi-axes must be positive, got ({a}, {b}, {c})")));
    }
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(Error::Mesh(format!(
            "subdivision overflow: {subdivisions} > {MAX_SUBDIVISIONS}"
        )));
    }
    let (dirs, faces) = icosphere_directions(subdivisions);
    let coords = dirs.into_iter().map(|u| [u[0] * a, u[1] * b, u[2] * c]).collect();
    SimplicialSurface::from_embedded(coords, faces)
}

pub fn generate_flat_torus(l1: f64, l2: f64, n1: usize, n2: usize) -> Result<SimplicialSurface> {
    if n1 < 3 || n2 < 3 {
        return Err(Error::Mesh(format!("grid counts must be >= 3, got ({n1}, {n2})")));
    }
    if !(l1 > 0.0 && l2 > 0.0) {
        return Err(Error::Mesh(format!("periods must be positive, got ({l1}, {l2})")));
    }
    let dx = l1 / n1 as f64;
    let dy = l2 / n2 as f64;
    let diag = (dx * dx + dy * dy).sqrt();
    let id = |i: usize, j: usize| (i % n1) * n2 + (j % n2);
    let mut faces = Vec::with_capacity(2 * n1 * n2);
    let mut lengths = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            let v00 = id(i, j);
            let v10 = id(i + 1, j);
            let v01 = id(i, j + 1);
            let v11 = id(i + 1, j + 1);
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
            lengths.push((v00, v10, dx));
            lengths.push((v00, v01, dy));
            lengths.push((v00, v11, diag));
        }
    }
    SimplicialSurface::from_intrinsic(n1 * n2, faces, &lengths)
}

/// Radial band-limited perturbation of the unit icosphere. The radius at a
/// unit direction `u` is `1 + amplitude * f(u)` with
/// `f(u) = Σ_m w_m cos(frequency (u · d_m) + φ_m) / Σ_m |w_m|` over six modes
/// whose weights, directions and phases come from SplitMix64 streams keyed by
/// `seed`, so `|f| <= 1` and the mesh is a pure function of the arguments.
pub fn generate_perturbed_sphere(
    amplitude: f64,
    frequency: u32,
    seed: u64,
    subdivisions: u32,
) -> Result<SimplicialSurface> {
    if !(0.0..=0.5).contains(&amplitude) {
        return Err(Error::Mesh(format!("amplitude must be in [0, 0.5], got {amplitude}")));
    }
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(Error::Mesh(format!(
            "subdivision overflow: {subdivisions} > {MAX_SUBDIVISIONS}"
        )));
    }
    let (dirs, faces) = icosphere_directions(subdivisions);
    let mut stream = SeedStream::new(mix2(seed, 0xA11CE));
    const MODES: usize = 6;
    let mut weights = [0.0; MODES];
    let mut axes = [[0.0; 3]; MODES];
    let mut phases = [0.0; MODES];
    let mut weight_sum = 0.0;
    for m in 0..MODES {
        weights[m] = stream.next_sym();
        axes[m] = stream.next_unit3();
        phases[m] = 2.0 * PI * stream.next_f64();
        weight_sum += weights[m].abs();
    }
    let freq = frequency.max(1) as f64;
    let coords = dirs
        .into_iter()
        .map(|u| {
            let mut f = 0.0;
            for m in 0..MODES {
                let x = u[0] * axes[m][0] + u[1] * axes[m][1] + u[2] * axes[m][2];
                f += weights[m] * (freq * x + phases[m]).cos();
            }
            let r = 1.0 + amplitude * (f / weight_sum);
            [u[0] * r, u[1] * r, u[2] * r]
        })
        .collect();
    SimplicialSurface::from_embedded(coords, faces)
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

fn face_edges(f: &[usize; 3]) -> [(usize, usize); 3] {
    [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
}

pub(crate) fn canon(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Kahan's numerically stable Heron formula.
fn heron(mut a: f64, mut b: f64, mut c: f64) -> f64 {
    // sort a >= b >= c
    if a < b {
        std::mem::swap(&mut a, &mut b);
    }
    if b < c {
        std::mem::swap(&mut b, &mut c);
    }
    if a < b {
        std::mem::swap(&mut a, &mut b);
    }
    let t = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c));
    if t <= 0.0 {
        return 0.0;
    }
    0.25 * t.sqrt()
}

/// Angle opposite to side `c` in a triangle with sides `a`, `b`, `c`:
/// here returns the angle between the sides of lengths `a` and `b`.
fn corner_angle(a: f64, b: f64, c: f64) -> f64 {
    let cosv = ((a * a + b * b - c * c) / (2.0 * a * b)).clamp(-1.0, 1.0);
    cosv.acos()
}

fn build_stars(n: usize, faces: &[[usize; 3]]) -> Result<Vec<Star>> {
    // successor[v]: neighbor -> (next ccw neighbor, face index)
    let mut succ: Vec<HashMap<usize, (usize, usize)>> = vec![HashMap::new(); n];
    for (fi, f) in faces.iter().enumerate() {
        for c in 0..3 {
            let v = f[c];
            let a = f[(c + 1) % 3];
            let b = f[(c + 2) % 3];
            if succ[v].insert(a, (b, fi)).is_some() {
                return Err(Error::Mesh(format!(
                    "vertex {v} has a non-manifold corner (duplicate wedge from {a})"
                )));
            }
        }
    }
    let mut stars = Vec::with_capacity(n);
    for (v, map) in succ.iter().enumerate() {
        if map.is_empty() {
            return Err(Error::Mesh(format!("vertex {v} is isolated")));
        }
        let start = *map.keys().min().unwrap();
        let mut neighbors = vec![start];
        let mut faces_cyc = Vec::new();
        let mut cur = start;
        loop {
            let &(next, fi) = map.get(&cur).ok_or_else(|| {
                Error::Mesh(format!("vertex {v} has an open or inconsistent star"))
            })?;
            faces_cyc.push(fi);
            if next == start {
                break;
            }
            neighbors.push(next);
            cur = next;
            if neighbors.len() > map.len() {
                return Err(Error::Mesh(format!("vertex {v} star does not close up")));
            }
        }
        if neighbors.len() != map.len() {
            return Err(Error::Mesh(format!(
                "vertex {v} star splits into multiple cycles (non-disk link)"
            )));
        }
        stars.push(Star { neighbors, faces: faces_cyc });
    }
    Ok(stars)
}

fn next_line(
    lines: &mut impl Iterator<Item = (usize, std::io::Result<String>)>,
) -> Result<(usize, String)> {
    for (idx, line) in lines.by_ref() {
        let line = line?;
        if !line.trim().is_empty() {
            return Ok((idx + 1, line));
        }
    }
    Err(Error::Format { line: 0, msg: "unexpected end of file".into() })
}

fn parse_tok<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| Error::Format { line, msg: format!("cannot parse {tok:?}") })
}
