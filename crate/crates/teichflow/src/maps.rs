//! Maps from the domain surface into a target: discrete Dirichlet energy,
//! tension field, harmonic-map solver (damped tension flow), and map-distance
//! / energy-concentration diagnostics.
//!
//! A map is stored per vertex. For the hyperbolic-quotient target the stored
//! points are lifts to the disk and every edge difference is taken
//! equivariantly: the head vertex is moved by ρ(w_h) for the halfedge's
//! equivariance word before comparing. For the flat torus an optional
//! per-halfedge integer winding pair fixes the homotopy class.

use crate::surface::mesh::Mesh;
use crate::surface::metric::{self, HypMetric};
use crate::targets::{wrap_angle, CurvatureClass, Tangent, Target, TargetError, TargetPoint};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error("harmonic solve did not converge in {iters} iterations (tension norm {residual:.3e})")]
    MaxIterExceeded { iters: usize, residual: f64 },
    #[error("harmonic solve requires a nonpositively curved target")]
    CurvatureClassViolation,
    #[error("map states are not comparable (different targets or sizes)")]
    Incomparable,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MapState {
    pub points: Vec<TargetPoint>,
    /// Per-halfedge winding pair for flat-torus targets (None = trivial
    /// class); antisymmetric across twins, zero-sum around faces.
    pub winding: Option<Vec<[i32; 2]>>,
}

impl MapState {
    pub fn constant(p: TargetPoint, num_vertices: usize) -> MapState {
        MapState {
            points: vec![p; num_vertices],
            winding: None,
        }
    }
}

/// Per-edge cotangent weight ½(cot α + cot β) from hyperbolic corner angles.
pub fn cotan_weights(mesh: &Mesh, g: &HypMetric) -> Vec<f64> {
    let ang = metric::corner_angles(mesh, g);
    let mut w = vec![0.0; mesh.num_edges()];
    for f in 0..mesh.num_faces() {
        for c in 0..3 {
            // halfedge c is opposite corner (c+2)%3
            w[mesh.edge_of_h[3 * f + c] as usize] += 0.5 / ang[f][(c + 2) % 3].tan();
        }
    }
    w
}

/// Barycentric vertex areas A_i = ⅓ Σ adjacent face areas.
pub fn vertex_areas(mesh: &Mesh, g: &HypMetric) -> Vec<f64> {
    let fa = metric::face_areas(mesh, g);
    let mut a = vec![0.0; mesh.num_vertices];
    for f in 0..mesh.num_faces() {
        for c in 0..3 {
            a[mesh.faces[f][c] as usize] += fa[f] / 3.0;
        }
    }
    a
}

/// Head point of halfedge h as seen from the tail's frame (deck-transformed
/// for the hyperbolic quotient, verbatim otherwise).
fn head_point(mesh: &Mesh, target: &Target, u: &MapState, h: usize) -> Result<TargetPoint, MapError> {
    let j = mesh.head(h) as usize;
    match (target, &u.points[j]) {
        (Target::HyperbolicQuotient { rep }, TargetPoint::Hyp(z)) => Ok(TargetPoint::Hyp(
            rep.rho(&mesh.eqv_word[h]).apply(*z),
        )),
        _ => Ok(u.points[j]),
    }
}

/// Squared distance across halfedge h in the energy's sense: geodesic for the
/// hyperbolic quotient, intrinsic with winding for the torus, chord for the
/// sphere.
fn edge_dist2(mesh: &Mesh, target: &Target, u: &MapState, h: usize) -> Result<f64, MapError> {
    let i = mesh.origin(h) as usize;
    match target {
        Target::FlatTorus { r1, r2 } => {
            let (TargetPoint::Torus(x), TargetPoint::Torus(y)) =
                (&u.points[i], &u.points[mesh.head(h) as usize])
            else {
                return Err(TargetError::WrongVariant.into());
            };
            let n = winding_of(u, h);
            let mut s = 0.0;
            for (f, r) in [(0usize, r1), (1, r2)] {
                let dth = wrap_angle(
                    y[2 * f + 1].atan2(y[2 * f]) - x[2 * f + 1].atan2(x[2 * f]),
                ) + 2.0 * std::f64::consts::PI * n[f] as f64;
                s += (r * dth) * (r * dth);
            }
            Ok(s)
        }
        Target::RoundSphere { .. } => {
            Ok(target.chord_dist2(&u.points[i], &u.points[mesh.head(h) as usize])?)
        }
        Target::HyperbolicQuotient { .. } => {
            let q = head_point(mesh, target, u, h)?;
            let d = target.distance(&u.points[i], &q)?;
            Ok(d * d)
        }
    }
}

/// The energy's edge gradient direction at the tail of h: the exact negative
/// gradient of ½·edge_dist2 with respect to the tail point.
fn edge_log(mesh: &Mesh, target: &Target, u: &MapState, h: usize) -> Result<Tangent, MapError> {
    let i = mesh.origin(h) as usize;
    match target {
        Target::FlatTorus { r1, r2 } => {
            let (TargetPoint::Torus(x), TargetPoint::Torus(y)) =
                (&u.points[i], &u.points[mesh.head(h) as usize])
            else {
                return Err(TargetError::WrongVariant.into());
            };
            let n = winding_of(u, h);
            let mut out = [0.0; 4];
            for (f, r) in [(0usize, r1), (1, r2)] {
                let (a, b) = (x[2 * f], x[2 * f + 1]);
                let dth = wrap_angle(
                    y[2 * f + 1].atan2(y[2 * f]) - b.atan2(a),
                ) + 2.0 * std::f64::consts::PI * n[f] as f64;
                let nn = a.hypot(b);
                out[2 * f] = -b / nn * r * dth;
                out[2 * f + 1] = a / nn * r * dth;
            }
            Ok(out)
        }
        Target::RoundSphere { .. } => {
            let (TargetPoint::Sphere(x), TargetPoint::Sphere(y)) =
                (&u.points[i], &u.points[mesh.head(h) as usize])
            else {
                return Err(TargetError::WrongVariant.into());
            };
            let diff = [y[0] - x[0], y[1] - x[1], y[2] - x[2], 0.0];
            Ok(target.project_tangent(&u.points[i], &diff)?)
        }
        Target::HyperbolicQuotient { .. } => {
            let q = head_point(mesh, target, u, h)?;
            Ok(target.log_map(&u.points[i], &q)?)
        }
    }
}

fn winding_of(u: &MapState, h: usize) -> [i32; 2] {
    u.winding.as_ref().map_or([0, 0], |w| w[h])
}

#[derive(Clone, Debug)]
pub struct EnergyReport {
    pub total: f64,
    /// Per-face energy density e_f with total = Σ_f area_f · e_f exactly.
    pub face_density: Vec<f64>,
    pub face_area: Vec<f64>,
    pub vertex_area: Vec<f64>,
    /// Set when negative cotangent weights drove the total negative
    /// (mesh-quality failure).
    pub negative: bool,
}

pub fn dirichlet_energy(
    mesh: &Mesh,
    g: &HypMetric,
    target: &Target,
    u: &MapState,
) -> Result<EnergyReport, MapError> {
    let ang = metric::corner_angles(mesh, g);
    let face_area = metric::face_areas(mesh, g);
    let vertex_area = vertex_areas(mesh, g);
    let mut d2 = vec![0.0; mesh.num_edges()];
    for e in 0..mesh.num_edges() {
        d2[e] = edge_dist2(mesh, target, u, mesh.edge_he[e] as usize)?;
    }
    // split each edge's weight between its two faces so the per-face
    // densities sum exactly to the total
    let mut face_density = vec![0.0; mesh.num_faces()];
    let mut total = 0.0;
    for f in 0..mesh.num_faces() {
        let mut s = 0.0;
        for c in 0..3 {
            let e = mesh.edge_of_h[3 * f + c] as usize;
            s += 0.25 / ang[f][(c + 2) % 3].tan() * d2[e];
        }
        total += s;
        face_density[f] = s / face_area[f];
    }
    Ok(EnergyReport {
        total,
        face_density,
        face_area,
        vertex_area,
        negative: total < 0.0,
    })
}

/// Tension field τ_i = (1/A_i) Σ_{h: i→j} w_e(h) · edge_log(h); exactly
/// −(1/A_i) times the energy gradient at vertex i.
pub fn tension(
    mesh: &Mesh,
    g: &HypMetric,
    target: &Target,
    u: &MapState,
) -> Result<Vec<Tangent>, MapError> {
    let w = cotan_weights(mesh, g);
    let a = vertex_areas(mesh, g);
    let mut tau = vec![[0.0; 4]; mesh.num_vertices];
    for h in 0..mesh.num_halfedges() {
        let i = mesh.origin(h) as usize;
        let we = w[mesh.edge_of_h[h] as usize];
        let v = edge_log(mesh, target, u, h)?;
        for k in 0..4 {
            tau[i][k] += we * v[k];
        }
    }
    for (i, t) in tau.iter_mut().enumerate() {
        for k in 0..4 {
            t[k] /= a[i];
        }
    }
    Ok(tau)
}

pub fn tension_l2sq(
    mesh: &Mesh,
    g: &HypMetric,
    target: &Target,
    u: &MapState,
) -> Result<f64, MapError> {
    let tau = tension(mesh, g, target, u)?;
    let a = vertex_areas(mesh, g);
    Ok((0..mesh.num_vertices)
        .map(|i| a[i] * tau[i].iter().map(|x| x * x).sum::<f64>())
        .sum())
}

pub struct HarmonicStats {
    pub iters: usize,
    pub residual: f64,
    pub energy: f64,
}

/// Step-size safety factor against the explicit graph-Laplacian stability
/// limit dt < min_i A_i / Σ_j w_ij.
const HARMONIC_CFL: f64 = 0.9;

/// Damped tension flow with adaptive step (double on energy decrease, halve
/// and retry on increase) until sqrt(Σ A_i|τ_i|²) ≤ tol.
pub fn harmonic_solve(
    mesh: &Mesh,
    g: &HypMetric,
    target: &Target,
    u_init: &MapState,
    tol: f64,
    max_iter: usize,
) -> Result<(MapState, HarmonicStats), MapError> {
    if target.curvature_class() == CurvatureClass::Positive {
        return Err(MapError::CurvatureClassViolation);
    }
    let w = cotan_weights(mesh, g);
    let a = vertex_areas(mesh, g);
    let mut wsum = vec![0.0; mesh.num_vertices];
    for h in 0..mesh.num_halfedges() {
        wsum[mesh.origin(h) as usize] += w[mesh.edge_of_h[h] as usize].abs();
    }
    let dt_max = (0..mesh.num_vertices)
        .map(|i| a[i] / wsum[i].max(1e-300))
        .fold(f64::INFINITY, f64::min);
    let mut dt = HARMONIC_CFL * dt_max;
    let mut u = u_init.clone();
    let mut energy = dirichlet_energy(mesh, g, target, &u)?.total;
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let tau = tension(mesh, g, target, &u)?;
        residual = (0..mesh.num_vertices)
            .map(|i| a[i] * tau[i].iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if residual <= tol {
            return Ok((
                u,
                HarmonicStats {
                    iters: it,
                    residual,
                    energy,
                },
            ));
        }
        // try a step; halve until the energy does not increase
        loop {
            let mut trial = u.clone();
            for i in 0..mesh.num_vertices {
                let step: Tangent = std::array::from_fn(|k| dt * tau[i][k]);
                trial.points[i] = target.retract(&u.points[i], &step)?;
            }
            let e2 = dirichlet_energy(mesh, g, target, &trial)?.total;
            if e2 <= energy + 1e-15 * energy.abs() {
                u = trial;
                energy = e2;
                dt = (dt * 2.0).min(HARMONIC_CFL * dt_max);
                break;
            }
            dt /= 2.0;
            if dt < 1e-12 * dt_max {
                return Err(MapError::MaxIterExceeded {
                    iters: it,
                    residual,
                });
            }
        }
    }
    Err(MapError::MaxIterExceeded {
        iters: max_iter,
        residual,
    })
}

pub fn map_distance_l2(
    mesh: &Mesh,
    g: &HypMetric,
    target: &Target,
    u1: &MapState,
    u2: &MapState,
) -> Result<f64, MapError> {
    if u1.points.len() != u2.points.len() {
        return Err(MapError::Incomparable);
    }
    let a = vertex_areas(mesh, g);
    let mut s = 0.0;
    for i in 0..u1.points.len() {
        let d = target.distance(&u1.points[i], &u2.points[i])?;
        s += a[i] * d * d;
    }
    Ok(s.sqrt())
}

pub fn map_distance_c0(
    target: &Target,
    u1: &MapState,
    u2: &MapState,
) -> Result<f64, MapError> {
    if u1.points.len() != u2.points.len() {
        return Err(MapError::Incomparable);
    }
    let mut m = 0.0f64;
    for i in 0..u1.points.len() {
        m = m.max(target.distance(&u1.points[i], &u2.points[i])?);
    }
    Ok(m)
}

/// Max over vertices of the energy in the graph-metric ball of radius r:
/// faces count when their nearest corner is within r.
pub fn local_energy_concentration(
    mesh: &Mesh,
    g: &HypMetric,
    report: &EnergyReport,
    r: f64,
) -> f64 {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let nv = mesh.num_vertices;
    let mut out_h = vec![Vec::new(); nv];
    for h in 0..mesh.num_halfedges() {
        out_h[mesh.origin(h) as usize].push(h);
    }
    let mut worst = 0.0f64;
    let mut dist = vec![f64::INFINITY; nv];
    let mut touched: Vec<usize> = Vec::new();
    for v0 in 0..nv {
        // truncated Dijkstra
        let mut heap: BinaryHeap<Reverse<(u64, u32)>> = BinaryHeap::new();
        dist[v0] = 0.0;
        touched.push(v0);
        heap.push(Reverse((0u64, v0 as u32)));
        while let Some(Reverse((dbits, v))) = heap.pop() {
            let d = f64::from_bits(dbits);
            if d > dist[v as usize] {
                continue;
            }
            for &h in &out_h[v as usize] {
                let wv = mesh.head(h) as usize;
                let d2 = d + g.edge_length[mesh.edge_of_h[h] as usize];
                if d2 <= r && d2 < dist[wv] {
                    dist[wv] = d2;
                    touched.push(wv);
                    heap.push(Reverse((d2.to_bits(), wv as u32)));
                }
            }
        }
        let mut s = 0.0;
        for f in 0..mesh.num_faces() {
            let near = (0..3).any(|c| dist[mesh.faces[f][c] as usize] <= r);
            if near {
                s += report.face_area[f] * report.face_density[f];
            }
        }
        worst = worst.max(s);
        for &v in &touched {
            dist[v] = f64::INFINITY;
        }
        touched.clear();
    }
    worst
}

/// Initial torus map in the homotopy class of the integer cocycle `class`:
/// per circle factor, solves the weighted graph Laplacian L·x = b with
/// b_i = 2π Σ_{h out of i} w_e(h) n_h, so that d_h = 2π n_h + x_j − x_i is
/// the discrete harmonic 1-form in the class. The lifts are integrated over
/// a spanning tree and the returned per-halfedge winding is re-derived so it
/// is consistent with the wrapped angle differences of the stored points
/// (a class-dependent but cohomologous representative of `class`).
pub fn torus_harmonic_init(
    mesh: &Mesh,
    g: &HypMetric,
    r1: f64,
    r2: f64,
    class: &[[i32; 2]],
) -> Result<MapState, MapError> {
    use crate::sparse::Triplets;
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = cotan_weights(mesh, g);
    let nv = mesh.num_vertices;
    let nh = mesh.num_halfedges();
    let mut trip = Triplets::new(nv);
    let mut b = [vec![0.0; nv], vec![0.0; nv]];
    for h in 0..nh {
        let i = mesh.origin(h) as usize;
        let j = mesh.head(h) as usize;
        let we = w[mesh.edge_of_h[h] as usize];
        trip.push(i, i, we);
        trip.push(i, j, -we);
        for f in 0..2 {
            b[f][i] += two_pi * we * class[h][f] as f64;
        }
    }
    // regularize the constant nullspace; b is orthogonal to constants
    // (the class cocycle is antisymmetric across twins) so the harmonic
    // part of the solution is unchanged
    for i in 0..nv {
        trip.push(i, i, 1e-8);
    }
    let lap = trip.to_csr();
    let mut x = [vec![0.0; nv], vec![0.0; nv]];
    for f in 0..2 {
        crate::sparse::cg_solve(&lap, &b[f], &mut x[f], 1e-12, 20 * nv).map_err(|_| {
            MapError::MaxIterExceeded {
                iters: 20 * nv,
                residual: f64::NAN,
            }
        })?;
    }
    let form = |f: usize, h: usize| {
        two_pi * class[h][f] as f64 + x[f][mesh.head(h) as usize]
            - x[f][mesh.origin(h) as usize]
    };
    // integrate the form over a BFS tree to get angle lifts
    let mut theta = [vec![f64::NAN; nv], vec![f64::NAN; nv]];
    let mut out_h = vec![Vec::new(); nv];
    for h in 0..nh {
        out_h[mesh.origin(h) as usize].push(h);
    }
    let mut queue = std::collections::VecDeque::new();
    theta[0][0] = 0.0;
    theta[1][0] = 0.0;
    queue.push_back(0usize);
    while let Some(v) = queue.pop_front() {
        for &h in &out_h[v] {
            let j = mesh.head(h) as usize;
            if theta[0][j].is_nan() {
                theta[0][j] = theta[0][v] + form(0, h);
                theta[1][j] = theta[1][v] + form(1, h);
                queue.push_back(j);
            }
        }
    }
    let points: Vec<TargetPoint> = (0..nv)
        .map(|i| {
            TargetPoint::Torus([
                r1 * theta[0][i].cos(),
                r1 * theta[0][i].sin(),
                r2 * theta[1][i].cos(),
                r2 * theta[1][i].sin(),
            ])
        })
        .collect();
    // winding consistent with the stored (wrapped) positions
    let winding: Vec<[i32; 2]> = (0..nh)
        .map(|h| {
            std::array::from_fn(|f| {
                let raw = wrap_angle(
                    theta[f][mesh.head(h) as usize] - theta[f][mesh.origin(h) as usize],
                );
                ((form(f, h) - raw) / two_pi).round() as i32
            })
        })
        .collect();
    Ok(MapState {
        points,
        winding: Some(winding),
    })
}

/// Torus winding data from the abelianized equivariance words: factor 1
/// winds with generator a, factor 2 with generator c. This is a valid
/// integer cocycle (faces sum to zero, twins negate) representing a
/// primitive cohomology class.
pub fn torus_winding_from_words(mesh: &Mesh) -> Vec<[i32; 2]> {
    (0..mesh.num_halfedges())
        .map(|h| {
            let mut n = [0i32; 2];
            for &l in &mesh.eqv_word[h] {
                match l {
                    1 => n[0] += 1,
                    -1 => n[0] -= 1,
                    3 => n[1] += 1,
                    -3 => n[1] -= 1,
                    _ => {}
                }
            }
            n
        })
        .collect()
}
