//! Discrete hyperbolic metrics: per-edge lengths, curvature (vertex defects),
//! Euclidean face charts, metric distances, and discrete conformal
//! uniformization to zero defect (the discrete form of K = −1).

use super::mesh::{Mesh, MeshError};
use crate::geom::{self, C};
use crate::sparse::{cg_solve, Triplets};
use thiserror::Error;

/// Relative CG tolerance for the Newton direction; tight so the Newton
/// iteration count is reproducible across platforms.
const NEWTON_CG_TOL: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 50;
/// Line-search floor: below this step fraction a Newton step that keeps
/// breaking triangle inequalities is reported as an error.
const LINE_SEARCH_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("uniformize did not converge in {iters} Newton steps (defect {defect:.3e})")]
    NonConvergence { iters: usize, defect: f64 },
    #[error("Newton step kept violating triangle inequalities below the step floor")]
    StepFloor,
    #[error("non-finite edge length at edge {0}")]
    NonFinite(usize),
    #[error("metric matrix is not positive definite in face {0}")]
    NotSpd(usize),
    #[error(transparent)]
    Sparse(#[from] crate::sparse::SparseError),
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct HypMetric {
    pub edge_length: Vec<f64>,
}

/// Per-vertex conformal factors (zero = identity).
#[derive(Clone, Debug)]
pub struct VertexScale(pub Vec<f64>);

/// Per-face symmetric 2×2 tensor in the face chart, stored as (xx, xy, yy).
#[derive(Clone, Debug)]
pub struct Sym2Field(pub Vec<[f64; 3]>);

impl HypMetric {
    pub fn face_lengths(&self, mesh: &Mesh, f: usize) -> [f64; 3] {
        [
            self.edge_length[mesh.edge_of_h[3 * f] as usize],
            self.edge_length[mesh.edge_of_h[3 * f + 1] as usize],
            self.edge_length[mesh.edge_of_h[3 * f + 2] as usize],
        ]
    }

    pub fn check_triangles(&self, mesh: &Mesh) -> Result<(), MetricError> {
        for (e, &l) in self.edge_length.iter().enumerate() {
            if !l.is_finite() || l <= 0.0 {
                return Err(MetricError::NonFinite(e));
            }
        }
        for f in 0..mesh.num_faces() {
            let ls = self.face_lengths(mesh, f);
            if !triangle_ok(&ls) {
                return Err(MeshError::DegenerateTriangle { face: f, lens: ls }.into());
            }
        }
        Ok(())
    }
}

pub fn triangle_ok(ls: &[f64; 3]) -> bool {
    ls[0] + ls[1] > ls[2] && ls[1] + ls[2] > ls[0] && ls[2] + ls[0] > ls[1]
}

/// Corner angles per face (corner c is at vertex faces[f][c]).
pub fn corner_angles(mesh: &Mesh, g: &HypMetric) -> Vec<[f64; 3]> {
    (0..mesh.num_faces())
        .map(|f| {
            let ls = self::HypMetric::face_lengths(g, mesh, f);
            let mut out = [0.0; 3];
            for c in 0..3 {
                // angle at corner c: between sides c (to c+1) and c+2 (to c+2's
                // origin), opposite side c+1
                out[c] = geom::corner_angle(ls[(c + 1) % 3], ls[c], ls[(c + 2) % 3]);
            }
            out
        })
        .collect()
}

pub fn face_areas(mesh: &Mesh, g: &HypMetric) -> Vec<f64> {
    corner_angles(mesh, g)
        .iter()
        .map(|a| std::f64::consts::PI - a[0] - a[1] - a[2])
        .collect()
}

pub fn total_area(mesh: &Mesh, g: &HypMetric) -> f64 {
    face_areas(mesh, g).iter().sum()
}

pub fn vertex_defects(mesh: &Mesh, g: &HypMetric) -> Vec<f64> {
    let ang = corner_angles(mesh, g);
    let mut d = vec![2.0 * std::f64::consts::PI; mesh.num_vertices];
    for f in 0..mesh.num_faces() {
        for c in 0..3 {
            d[mesh.faces[f][c] as usize] -= ang[f][c];
        }
    }
    d
}

pub fn vertex_defect(mesh: &Mesh, g: &HypMetric, v: usize) -> f64 {
    vertex_defects(mesh, g)[v]
}

/// Euclidean layout of each face realizing its hyperbolic edge lengths:
/// corner 0 at the origin, corner 1 on the positive x-axis.
#[derive(Clone, Debug)]
pub struct FaceCharts {
    pub corners: Vec<[C; 3]>,
}

impl FaceCharts {
    pub fn build(mesh: &Mesh, g: &HypMetric) -> FaceCharts {
        let corners = (0..mesh.num_faces())
            .map(|f| {
                let [l0, l1, l2] = g.face_lengths(mesh, f);
                let x = (l0 * l0 + l2 * l2 - l1 * l1) / (2.0 * l0);
                let y = (l2 * l2 - x * x).max(0.0).sqrt();
                [C::new(0.0, 0.0), C::new(l0, 0.0), C::new(x, y)]
            })
            .collect();
        FaceCharts { corners }
    }

    /// Edge vector of halfedge h in its own face chart.
    pub fn edge_vec(&self, h: usize) -> C {
        let f = h / 3;
        self.corners[f][(h % 3 + 1) % 3] - self.corners[f][h % 3]
    }

    /// Transition derivative a_e across edge e: the similarity taking the
    /// canonical halfedge's face chart to the twin's face chart (|a| = 1).
    pub fn transition(&self, mesh: &Mesh, e: usize) -> C {
        let h = mesh.edge_he[e] as usize;
        let t = mesh.twin[h] as usize;
        // h: i->j in f1, twin: j->i in f2; map f1 -> f2 sends the shared edge
        // onto itself with reversed traversal.
        -self.edge_vec(t) / self.edge_vec(h)
    }

    /// Euclidean area of the layout triangle.
    pub fn flat_area(&self, f: usize) -> f64 {
        let [z0, z1, z2] = self.corners[f];
        0.5 * ((z1 - z0).conj() * (z2 - z0)).im.abs()
    }
}

/// Express a metric as a 2×2 SPD matrix in each face chart of `charts`
/// (solves e_kᵀ G e_k = l_k² for the three chart edge vectors).
pub fn metric_in_charts(
    mesh: &Mesh,
    g: &HypMetric,
    charts: &FaceCharts,
) -> Result<Sym2Field, MetricError> {
    let mut out = Vec::with_capacity(mesh.num_faces());
    for f in 0..mesh.num_faces() {
        let mut m = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for c in 0..3 {
            let ev = charts.edge_vec(3 * f + c);
            let (x, y) = (ev.re, ev.im);
            m[c] = [x * x, 2.0 * x * y, y * y];
            let l = g.edge_length[mesh.edge_of_h[3 * f + c] as usize];
            rhs[c] = l * l;
        }
        let s = solve3(&m, &rhs).ok_or(MetricError::NotSpd(f))?;
        if s[0] <= 0.0 || s[2] <= 0.0 || s[0] * s[2] - s[1] * s[1] <= 0.0 {
            return Err(MetricError::NotSpd(f));
        }
        out.push(s);
    }
    Ok(Sym2Field(out))
}

fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for k in 0..3 {
        let mut mk = *m;
        for r in 0..3 {
            mk[r][k] = b[r];
        }
        out[k] = det(&mk) / d;
    }
    Some(out)
}

/// C⁰ distance: max over faces of the operator norm of
/// G_ref^{-1/2} (G1 − G2) G_ref^{-1/2}, all expressed in the ref face charts.
pub fn metric_distance_c0(
    mesh: &Mesh,
    g1: &HypMetric,
    g2: &HypMetric,
    g_ref: &HypMetric,
) -> Result<f64, MetricError> {
    let charts = FaceCharts::build(mesh, g_ref);
    let m1 = metric_in_charts(mesh, g1, &charts)?;
    let m2 = metric_in_charts(mesh, g2, &charts)?;
    let mref = metric_in_charts(mesh, g_ref, &charts)?;
    let mut worst: f64 = 0.0;
    for f in 0..mesh.num_faces() {
        let d = [
            m1.0[f][0] - m2.0[f][0],
            m1.0[f][1] - m2.0[f][1],
            m1.0[f][2] - m2.0[f][2],
        ];
        worst = worst.max(rel_opnorm(&d, &mref.0[f]));
    }
    Ok(worst)
}

/// Operator norm of R^{-1/2} D R^{-1/2} for symmetric D, SPD R (2×2, packed).
fn rel_opnorm(d: &[f64; 3], r: &[f64; 3]) -> f64 {
    // eigenvalues of R^{-1} D: roots of λ² − tr λ + det, with
    // tr = tr(R⁻¹D), det = det(D)/det(R); symmetric pencil → real roots.
    let det_r = r[0] * r[2] - r[1] * r[1];
    let inv = [r[2] / det_r, -r[1] / det_r, r[0] / det_r];
    let tr = inv[0] * d[0] + 2.0 * inv[1] * d[1] + inv[2] * d[2];
    let det = (d[0] * d[2] - d[1] * d[1]) / det_r;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 + disc).abs().max((tr / 2.0 - disc).abs())
}

/// L² norm of a symmetric 2-tensor field against g: sqrt(Σ_f area_f |h|²_g),
/// |h|²_g = tr(G⁻¹ H G⁻¹ H), with H in the g face charts (where G = I).
pub fn metric_l2_norm(mesh: &Mesh, h: &Sym2Field, g: &HypMetric) -> f64 {
    let areas = face_areas(mesh, g);
    let mut s = 0.0;
    for f in 0..mesh.num_faces() {
        let [a, b, c] = h.0[f];
        s += areas[f] * (a * a + 2.0 * b * b + c * c);
    }
    s.sqrt()
}

/// Lengths rescaled by per-vertex conformal factors:
/// sinh(l̃/2) = e^{(u_i+u_j)/2} sinh(l/2).
pub fn scaled_lengths(mesh: &Mesh, g: &HypMetric, u: &[f64]) -> HypMetric {
    let edge_length = (0..mesh.num_edges())
        .map(|e| {
            let h = mesh.edge_he[e] as usize;
            let (i, j) = (mesh.origin(h) as usize, mesh.head(h) as usize);
            let s = ((u[i] + u[j]) / 2.0).exp() * (g.edge_length[e] / 2.0).sinh();
            2.0 * s.asinh()
        })
        .collect();
    HypMetric { edge_length }
}

pub struct UniformizeResult {
    pub metric: HypMetric,
    pub scale: VertexScale,
    pub newton_iters: usize,
    pub max_defect: f64,
}

/// Newton iteration on the vertex defects over per-vertex conformal scales,
/// with a line search that halves the step while a triangle inequality
/// breaks or the defect norm fails to decrease.
pub fn uniformize(mesh: &Mesh, g: &HypMetric, tol: f64) -> Result<UniformizeResult, MetricError> {
    g.check_triangles(mesh)?;
    let nv = mesh.num_vertices;
    let mut u = vec![0.0; nv];
    let mut du = vec![0.0; nv];
    for it in 0..NEWTON_MAX_ITER {
        let gl = scaled_lengths(mesh, g, &u);
        let defect = vertex_defects(mesh, &gl);
        let norm = defect.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if norm <= tol {
            return Ok(UniformizeResult {
                metric: gl,
                scale: VertexScale(u),
                newton_iters: it,
                max_defect: norm,
            });
        }
        let jac = defect_jacobian(mesh, &gl);
        let rhs: Vec<f64> = defect.iter().map(|d| -d).collect();
        du.fill(0.0);
        cg_solve(&jac, &rhs, &mut du, NEWTON_CG_TOL, 20 * nv)?;
        // line search
        let mut s = 1.0;
        loop {
            let trial: Vec<f64> = (0..nv).map(|i| u[i] + s * du[i]).collect();
            let gt = scaled_lengths(mesh, g, &trial);
            let ok_tri = (0..mesh.num_faces()).all(|f| triangle_ok(&gt.face_lengths(mesh, f)));
            if ok_tri {
                let nt = vertex_defects(mesh, &gt)
                    .iter()
                    .fold(0.0f64, |m, d| m.max(d.abs()));
                if nt < norm || s < 1.0 {
                    u = trial;
                    break;
                }
            }
            s /= 2.0;
            if s < LINE_SEARCH_FLOOR {
                return Err(MetricError::StepFloor);
            }
        }
    }
    let gl = scaled_lengths(mesh, g, &u);
    let norm = vertex_defects(mesh, &gl)
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
    if norm <= tol {
        Ok(UniformizeResult {
            metric: gl,
            scale: VertexScale(u),
            newton_iters: NEWTON_MAX_ITER,
            max_defect: norm,
        })
    } else {
        Err(MetricError::NonConvergence {
            iters: NEWTON_MAX_ITER,
            defect: norm,
        })
    }
}

/// Jacobian of the defect vector with respect to the vertex scales, at the
/// current scaled metric (analytic; symmetric positive definite in practice).
fn defect_jacobian(mesh: &Mesh, gl: &HypMetric) -> crate::sparse::Csr {
    let nv = mesh.num_vertices;
    let mut t = Triplets::new(nv);
    // dl_e/du_v = tanh(l_e/2) for each endpoint v of e
    let dl: Vec<f64> = gl.edge_length.iter().map(|l| (l / 2.0).tanh()).collect();
    for f in 0..mesh.num_faces() {
        let ls = gl.face_lengths(mesh, f);
        let es = [
            mesh.edge_of_h[3 * f] as usize,
            mesh.edge_of_h[3 * f + 1] as usize,
            mesh.edge_of_h[3 * f + 2] as usize,
        ];
        for c in 0..3 {
            // angle at corner c: opposite side (c+1), adjacent sides c and c+2
            let v = mesh.faces[f][c] as usize;
            let (da, db, dc) =
                geom::corner_angle_grad(ls[(c + 1) % 3], ls[c], ls[(c + 2) % 3]);
            // defect_v -= angle; chain through each side's endpoints
            for (side, dang) in [((c + 1) % 3, da), (c, db), ((c + 2) % 3, dc)] {
                let e = es[side];
                let h = 3 * f + side;
                for w in [mesh.origin(h) as usize, mesh.head(h) as usize] {
                    t.push(v, w, -dang * dl[e]);
                }
            }
        }
    }
    t.to_csr()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_opnorm_scalar_case() {
        // D = s·I against R = I → |s|
        assert!((rel_opnorm(&[0.3, 0.0, 0.3], &[1.0, 0.0, 1.0]) - 0.3).abs() < 1e-14);
        // D = diag(1,-2) → 2
        assert!((rel_opnorm(&[1.0, 0.0, -2.0], &[1.0, 0.0, 1.0]) - 2.0).abs() < 1e-14);
    }
}
