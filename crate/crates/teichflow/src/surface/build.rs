//! Construction of the genus-2 domain: a regular hyperbolic octagon with all
//! interior angles π/4 and sides identified by the pattern aba⁻¹b⁻¹cdc⁻¹d⁻¹,
//! triangulated by repeated geodesic midpoint subdivision, quotiented to a
//! closed surface, and post-processed with intrinsic Delaunay edge flips so
//! that all cotangent weights are nonnegative.

use super::mesh::{word_inv, word_mul, Mesh, MeshError, Word};
use super::metric::{self, triangle_ok, HypMetric, MetricError};
use crate::geom::{self, Mobius, C};
use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use thiserror::Error;

/// Octagon circumradius: cosh R = cot²(π/8), which makes every interior
/// angle π/4 so the eight corners glue to a smooth (zero-defect) point.
fn octagon_circumradius() -> f64 {
    let c = 1.0 / (PI / 8.0).tan();
    (c * c).acosh()
}

/// Corners of the regular octagon in the Poincaré disk, counterclockwise.
pub fn octagon_corners() -> [C; 8] {
    let r = (octagon_circumradius() / 2.0).tanh();
    std::array::from_fn(|k| C::from_polar(r, 2.0 * PI * k as f64 / 8.0))
}

/// Images of the four π₁ generators (a, b, c, d) as disk isometries: the
/// side-pairing maps of the octagon. Generator a maps side 2 onto side 0
/// (reversing orientation of traversal), and so on per the gluing pattern.
pub fn octagon_generators() -> [Mobius; 4] {
    let v = octagon_corners();
    [
        geom::isometry_two_points(v[3], v[2], v[0], v[1]),
        geom::isometry_two_points(v[4], v[3], v[1], v[2]),
        geom::isometry_two_points(v[7], v[6], v[4], v[5]),
        geom::isometry_two_points(v[0], v[7], v[5], v[6]),
    ]
}

/// Evaluate a word in the generators as a Möbius transformation
/// (letter k > 0 ↦ gens[k−1], negative ↦ inverse; empty word ↦ identity).
pub fn rho(gens: &[Mobius; 4], w: &[i8]) -> Mobius {
    let mut m = Mobius::IDENTITY;
    for &l in w {
        let g = if l > 0 {
            gens[(l - 1) as usize]
        } else {
            gens[(-l - 1) as usize].inverse()
        };
        m = m.compose(&g);
    }
    m
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("subdivision level {0} exceeds the face budget (max {MAX_SUBDIV_LEVEL})")]
    LevelTooLarge(u32),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// 8·4⁶ = 32768 faces, comfortably under the ~10⁵ face budget.
pub const MAX_SUBDIV_LEVEL: u32 = 6;

pub struct OctagonSurface {
    pub mesh: Mesh,
    pub metric: HypMetric,
    /// Canonical lift of each vertex into the Poincaré disk; with the
    /// equivariance words these realize every edge length:
    /// d(lift_i, ρ(w_h)·lift_j) = length(e) for halfedge h: i → j.
    pub lift: Vec<C>,
    /// The side-pairing generators (a, b, c, d).
    pub generators: [Mobius; 4],
}

/// Build the triangulated genus-2 octagon surface at the given midpoint
/// subdivision level.
pub fn build_genus2_octagon(subdiv_level: u32) -> Result<OctagonSurface, BuildError> {
    if subdiv_level > MAX_SUBDIV_LEVEL {
        return Err(BuildError::LevelTooLarge(subdiv_level));
    }
    let mut cm = CutMesh::new();
    for _ in 0..subdiv_level {
        cm.subdivide();
    }
    let (mut work, lift, mut loops) = quotient(&cm);
    work.delaunay(&mut loops);
    let (mesh, metric) = work.into_mesh(lift.len(), loops);
    mesh.validate()?;
    metric.check_triangles(&mesh)?;
    // Zero-defect correction; midpoint subdivision already leaves defects at
    // roundoff, so this converges immediately and fixes the invariant.
    let uni = metric::uniformize(&mesh, &metric, 1e-10)?;
    Ok(OctagonSurface {
        mesh,
        metric: uni.metric,
        lift,
        generators: octagon_generators(),
    })
}

// ---------------------------------------------------------------------------
// Cut mesh: triangulated octagon in the disk, boundary sides glued in pairs.
// ---------------------------------------------------------------------------

/// Partner side of each octagon side under the gluing pattern.
const SIGMA: [usize; 8] = [2, 3, 0, 1, 6, 7, 4, 5];
/// Generator letter crossing INTO each side from its partner.
const GLUE_LETTER: [i8; 8] = [1, 2, -1, -2, 3, 4, -3, -4];
/// The sides whose vertex chains become the four generator loops.
const GEN_SIDE: [usize; 4] = [0, 1, 4, 5];

struct CutMesh {
    coords: Vec<C>,
    faces: Vec<[u32; 3]>,
    /// Per-halfedge boundary gluing: (partner halfedge, crossing word). The
    /// crossing word w satisfies coords(tail h) = ρ(w)(coords(head partner)).
    glue: Vec<Option<(u32, Word)>>,
    /// Ordered boundary halfedges along the generator sides a, b, c, d.
    side_hes: [Vec<u32>; 4],
}

impl CutMesh {
    fn new() -> CutMesh {
        let corners = octagon_corners();
        let mut coords = vec![C::new(0.0, 0.0)];
        coords.extend_from_slice(&corners);
        let faces: Vec<[u32; 3]> = (0..8)
            .map(|i| [0, 1 + i as u32, 1 + ((i + 1) % 8) as u32])
            .collect();
        let mut glue = vec![None; 24];
        for s in 0..8 {
            glue[3 * s + 1] = Some((3 * SIGMA[s] as u32 + 1, vec![GLUE_LETTER[s]]));
        }
        let side_hes = GEN_SIDE.map(|s| vec![3 * s as u32 + 1]);
        CutMesh {
            coords,
            faces,
            glue,
            side_hes,
        }
    }

    fn num_halfedges(&self) -> usize {
        3 * self.faces.len()
    }

    fn he_vts(&self, h: usize) -> (u32, u32) {
        let f = self.faces[h / 3];
        (f[h % 3], f[(h % 3 + 1) % 3])
    }

    /// Interior twin per halfedge (None on the glued boundary).
    fn interior_twins(&self) -> Vec<Option<u32>> {
        let mut pair2h: HashMap<(u32, u32), u32> = HashMap::new();
        let mut twin = vec![None; self.num_halfedges()];
        for h in 0..self.num_halfedges() {
            let (a, b) = self.he_vts(h);
            if let Some(&t) = pair2h.get(&(b, a)) {
                twin[h] = Some(t);
                twin[t as usize] = Some(h as u32);
            } else {
                pair2h.insert((a, b), h as u32);
            }
        }
        twin
    }

    /// One level of geodesic midpoint subdivision (1:4 per face). Midpoints
    /// on glued sides are taken independently per copy; the glue maps are
    /// isometries, so the two copies stay exactly identified.
    fn subdivide(&mut self) {
        let nh = self.num_halfedges();
        let twin = self.interior_twins();
        let mut h2mid = vec![u32::MAX; nh];
        for h in 0..nh {
            if h2mid[h] != u32::MAX {
                continue;
            }
            let (a, b) = self.he_vts(h);
            let m = geom::midpoint(self.coords[a as usize], self.coords[b as usize]);
            let idx = self.coords.len() as u32;
            self.coords.push(m);
            h2mid[h] = idx;
            if let Some(t) = twin[h] {
                h2mid[t as usize] = idx;
            }
        }
        let mut newfaces: Vec<[u32; 3]> = Vec::with_capacity(4 * self.faces.len());
        // children of each old halfedge, in traversal order
        let mut childmap = vec![[0u32; 2]; nh];
        for (fi, &[a, b, c]) in self.faces.iter().enumerate() {
            let (mab, mbc, mca) = (h2mid[3 * fi], h2mid[3 * fi + 1], h2mid[3 * fi + 2]);
            let base = newfaces.len() as u32;
            newfaces.push([a, mab, mca]);
            newfaces.push([b, mbc, mab]);
            newfaces.push([c, mca, mbc]);
            newfaces.push([mab, mbc, mca]);
            childmap[3 * fi] = [3 * base, 3 * (base + 1) + 2];
            childmap[3 * fi + 1] = [3 * (base + 1), 3 * (base + 2) + 2];
            childmap[3 * fi + 2] = [3 * (base + 2), 3 * base + 2];
        }
        let mut newglue = vec![None; 3 * newfaces.len()];
        for h in 0..nh {
            if let Some((h2, w)) = &self.glue[h] {
                let [c1, c2] = childmap[h];
                let [d1, d2] = childmap[*h2 as usize];
                // h runs x→y glued against h2 running in reverse, so the
                // first child of h pairs with the second child of h2.
                newglue[c1 as usize] = Some((d2, w.clone()));
                newglue[c2 as usize] = Some((d1, w.clone()));
            }
        }
        for side in self.side_hes.iter_mut() {
            *side = side
                .iter()
                .flat_map(|&h| childmap[h as usize])
                .collect();
        }
        self.faces = newfaces;
        self.glue = newglue;
    }
}

// ---------------------------------------------------------------------------
// Quotient: identify glued boundary, compute lifts and equivariance words.
// ---------------------------------------------------------------------------

/// Mutable mesh arrays used during construction (before freezing into Mesh).
struct Working {
    faces: Vec<[u32; 3]>,
    twin: Vec<u32>,
    edge_of_h: Vec<u32>,
    edge_he: Vec<u32>,
    eqv_word: Vec<Word>,
    elen: Vec<f64>,
}

fn quotient(cm: &CutMesh) -> (Working, Vec<C>, Vec<Vec<u32>>) {
    let nh = cm.num_halfedges();
    // twins: interior pairs plus the boundary glue
    let interior = cm.interior_twins();
    let mut twin = vec![u32::MAX; nh];
    for h in 0..nh {
        twin[h] = match (&interior[h], &cm.glue[h]) {
            (Some(t), _) => *t,
            (None, Some((h2, _))) => *h2,
            (None, None) => unreachable!("open boundary halfedge {h}"),
        };
    }
    // union-find over cut vertices through the glue identifications
    let ncv = cm.coords.len();
    let mut parent: Vec<u32> = (0..ncv as u32).collect();
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }
    for h in 0..nh {
        if let Some((h2, _)) = &cm.glue[h] {
            let (a, b) = cm.he_vts(h);
            let (a2, b2) = cm.he_vts(*h2 as usize);
            for (x, y) in [(a, b2), (b, a2)] {
                let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
                if rx != ry {
                    parent[rx.max(ry) as usize] = rx.min(ry);
                }
            }
        }
    }
    let mut class_of_root: HashMap<u32, u32> = HashMap::new();
    let mut v_of_cut = vec![0u32; ncv];
    let mut lift: Vec<C> = Vec::new();
    for i in 0..ncv {
        let r = find(&mut parent, i as u32);
        let v = *class_of_root.entry(r).or_insert_with(|| {
            lift.push(cm.coords[i]);
            (lift.len() - 1) as u32
        });
        v_of_cut[i] = v;
    }
    // ω word per cut vertex: coords(i) = ρ(ω_i)(lift of its class). The
    // canonical (first) copy of each class has the empty word; glued
    // halfedges propagate ω(tail h) = w · ω(head h2), ω(head h) = w · ω(tail h2).
    let mut adj: Vec<Vec<(u32, Word)>> = vec![Vec::new(); ncv];
    for h in 0..nh {
        if let Some((h2, w)) = &cm.glue[h] {
            let (a, b) = cm.he_vts(h);
            let (a2, b2) = cm.he_vts(*h2 as usize);
            for (x, y) in [(a, b2), (b, a2)] {
                adj[x as usize].push((y, w.clone()));
                adj[y as usize].push((x, word_inv(w)));
            }
        }
    }
    let mut omega: Vec<Option<Word>> = vec![None; ncv];
    let mut queue = VecDeque::new();
    for i in 0..ncv {
        // canonical copy = union-find root = lowest index in its class,
        // which is also the copy whose coordinates became the lift
        if find(&mut parent, i as u32) == i as u32 {
            omega[i] = Some(Vec::new());
            queue.push_back(i as u32);
        }
    }
    while let Some(x) = queue.pop_front() {
        let wx = omega[x as usize].clone().unwrap();
        for (y, w) in &adj[x as usize] {
            if omega[*y as usize].is_none() {
                // ω_x = w_{x←y} · ω_y with w stored as (y, x) pairs both ways
                omega[*y as usize] = Some(word_mul(&word_inv(w), &wx));
                queue.push_back(*y);
            }
        }
    }
    let omega: Vec<Word> = omega
        .into_iter()
        .map(|o| o.expect("cut vertex not reached by the glue identification walk"))
        .collect();
    // quotient faces, equivariance words, edge table, lengths
    let faces: Vec<[u32; 3]> = cm
        .faces
        .iter()
        .map(|f| f.map(|x| v_of_cut[x as usize]))
        .collect();
    let mut eqv_word = Vec::with_capacity(nh);
    for h in 0..nh {
        let (a, b) = cm.he_vts(h);
        eqv_word.push(word_mul(&word_inv(&omega[a as usize]), &omega[b as usize]));
    }
    let mut edge_of_h = vec![u32::MAX; nh];
    let mut edge_he = Vec::new();
    for h in 0..nh {
        if edge_of_h[h] == u32::MAX {
            let e = edge_he.len() as u32;
            edge_of_h[h] = e;
            edge_of_h[twin[h] as usize] = e;
            edge_he.push(h as u32);
        }
    }
    let elen: Vec<f64> = edge_he
        .iter()
        .map(|&h| {
            let (a, b) = cm.he_vts(h as usize);
            geom::dist(cm.coords[a as usize], cm.coords[b as usize])
        })
        .collect();
    let loops: Vec<Vec<u32>> = cm
        .side_hes
        .iter()
        .map(|side| {
            side.iter()
                .map(|&h| v_of_cut[cm.he_vts(h as usize).0 as usize])
                .collect()
        })
        .collect();
    (
        Working {
            faces,
            twin,
            edge_of_h,
            edge_he,
            eqv_word,
            elen,
        },
        lift,
        loops,
    )
}

// ---------------------------------------------------------------------------
// Intrinsic Delaunay flips.
// ---------------------------------------------------------------------------

/// Threshold below which a cotangent weight triggers a flip; slightly
/// negative so exactly-zero weights (right angles) are left alone.
const FLIP_TOL: f64 = -1e-12;

impl Working {
    fn corner_angle(&self, f: usize, c: usize) -> f64 {
        let ls: [f64; 3] =
            std::array::from_fn(|i| self.elen[self.edge_of_h[3 * f + i] as usize]);
        geom::corner_angle(ls[(c + 1) % 3], ls[c], ls[(c + 2) % 3])
    }

    fn cotan_weight(&self, e: usize) -> f64 {
        let h = self.edge_he[e] as usize;
        let t = self.twin[h] as usize;
        let a1 = self.corner_angle(h / 3, (h % 3 + 2) % 3);
        let a2 = self.corner_angle(t / 3, (t % 3 + 2) % 3);
        0.5 * (1.0 / a1.tan() + 1.0 / a2.tan())
    }

    /// Flip edge e inside its quad i-l-j-k (diagonal i-j → l-k), preserving
    /// the metric: the new diagonal length comes from developing the quad.
    /// Returns false if the quad is not strictly convex (flip would leave
    /// the surface) or a new triangle would be degenerate.
    fn flip(&mut self, e: usize, loops: &mut [Vec<u32>]) -> bool {
        let h = self.edge_he[e] as usize;
        let t = self.twin[h] as usize;
        let (f1, c1) = (h / 3, h % 3);
        let (f2, c2) = (t / 3, t % 3);
        if f1 == f2 {
            return false;
        }
        let i = self.faces[f1][c1];
        let j = self.faces[f1][(c1 + 1) % 3];
        let k = self.faces[f1][(c1 + 2) % 3];
        let l = self.faces[f2][(c2 + 2) % 3];
        let len = |h: usize| self.elen[self.edge_of_h[h] as usize];
        let (l_il, l_lj) = (len(3 * f2 + (c2 + 1) % 3), len(3 * f2 + (c2 + 2) % 3));
        let (l_jk, l_ki) = (len(3 * f1 + (c1 + 1) % 3), len(3 * f1 + (c1 + 2) % 3));
        let th_i = self.corner_angle(f2, (c2 + 1) % 3) + self.corner_angle(f1, c1);
        let th_j = self.corner_angle(f1, (c1 + 1) % 3) + self.corner_angle(f2, c2);
        if th_i >= PI || th_j >= PI {
            return false;
        }
        let cosh_lk =
            l_il.cosh() * l_ki.cosh() - l_il.sinh() * l_ki.sinh() * th_i.cos();
        let l_lk = cosh_lk.max(1.0).acosh();
        if !triangle_ok(&[l_il, l_lk, l_ki]) || !triangle_ok(&[l_lj, l_jk, l_lk]) {
            return false;
        }
        // quad boundary halfedges (old ids) and their replacements
        let olds = [
            3 * f2 + (c2 + 1) % 3, // i→l
            3 * f1 + (c1 + 2) % 3, // k→i
            3 * f2 + (c2 + 2) % 3, // l→j
            3 * f1 + (c1 + 1) % 3, // j→k
        ];
        let news = [3 * f1, 3 * f1 + 2, 3 * f2, 3 * f2 + 1];
        let saved: Vec<(u32, u32, Word)> = olds
            .iter()
            .map(|&o| (self.twin[o], self.edge_of_h[o], self.eqv_word[o].clone()))
            .collect();
        let w_lk = word_mul(&word_inv(&saved[0].2), &word_inv(&saved[1].2));
        // new faces: f1 = (i, l, k) with diagonal at slot 1, f2 = (l, j, k)
        // with diagonal at slot 2
        self.faces[f1] = [i, l, k];
        self.faces[f2] = [l, j, k];
        for (idx, &new) in news.iter().enumerate() {
            let (tw, ee, ref w) = saved[idx];
            // the twin may itself be a quad boundary edge (coarse meshes)
            let tw2 = match olds.iter().position(|&o| o == tw as usize) {
                Some(p) => news[p] as u32,
                None => {
                    self.twin[tw as usize] = new as u32;
                    tw
                }
            };
            self.twin[new] = tw2;
            self.edge_of_h[new] = ee;
            self.edge_he[ee as usize] = new as u32;
            self.eqv_word[new] = w.clone();
        }
        self.twin[3 * f1 + 1] = (3 * f2 + 2) as u32;
        self.twin[3 * f2 + 2] = (3 * f1 + 1) as u32;
        self.edge_of_h[3 * f1 + 1] = e as u32;
        self.edge_of_h[3 * f2 + 2] = e as u32;
        self.edge_he[e] = (3 * f1 + 1) as u32;
        self.elen[e] = l_lk;
        self.eqv_word[3 * f2 + 2] = word_inv(&w_lk);
        self.eqv_word[3 * f1 + 1] = w_lk;
        // reroute generator loops that used the removed diagonal i-j
        for lp in loops.iter_mut() {
            let n = lp.len();
            let mut out = Vec::with_capacity(n + 2);
            for p in 0..n {
                let (x, y) = (lp[p], lp[(p + 1) % n]);
                out.push(x);
                if (x, y) == (i, j) || (x, y) == (j, i) {
                    out.push(l);
                }
            }
            *lp = out;
        }
        true
    }

    /// Flip to the intrinsic Delaunay triangulation (all cotangent weights
    /// nonnegative); returns the number of flips performed.
    fn delaunay(&mut self, loops: &mut [Vec<u32>]) -> usize {
        let ne = self.edge_he.len();
        let mut queue: VecDeque<usize> = (0..ne).collect();
        let mut inq = vec![true; ne];
        let mut nflips = 0;
        while let Some(e) = queue.pop_front() {
            inq[e] = false;
            if self.cotan_weight(e) < FLIP_TOL && self.flip(e, loops) {
                nflips += 1;
                let h = self.edge_he[e] as usize;
                let t = self.twin[h] as usize;
                for b in [
                    3 * (h / 3) + (h % 3 + 1) % 3,
                    3 * (h / 3) + (h % 3 + 2) % 3,
                    3 * (t / 3) + (t % 3 + 1) % 3,
                    3 * (t / 3) + (t % 3 + 2) % 3,
                ] {
                    let ee = self.edge_of_h[b] as usize;
                    if !inq[ee] {
                        inq[ee] = true;
                        queue.push_back(ee);
                    }
                }
            }
        }
        nflips
    }

    /// Freeze into an immutable Mesh + HypMetric with deterministically
    /// renumbered edges (lowest-halfedge order).
    fn into_mesh(self, num_vertices: usize, loops: Vec<Vec<u32>>) -> (Mesh, HypMetric) {
        let old_edge_of_h = self.edge_of_h.clone();
        let old_elen = self.elen;
        let mut mesh = Mesh {
            genus: 2,
            num_vertices,
            faces: self.faces,
            twin: self.twin,
            edge_of_h: self.edge_of_h,
            edge_he: self.edge_he,
            eqv_word: self.eqv_word,
            generator_loops: loops,
        };
        mesh.rebuild_edges();
        let edge_length = mesh
            .edge_he
            .iter()
            .map(|&h| old_elen[old_edge_of_h[h as usize] as usize])
            .collect();
        (mesh, HypMetric { edge_length })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::metric::{
        corner_angles, total_area, vertex_defects,
    };
    use approx::assert_abs_diff_eq;

    #[test]
    fn generators_satisfy_relator() {
        let [a, b, c, d] = octagon_generators();
        let comm = |x: &Mobius, y: &Mobius| {
            x.compose(y).compose(&x.inverse()).compose(&y.inverse())
        };
        let rel = comm(&a, &b.inverse()).compose(&comm(&c, &d.inverse()));
        assert!(rel.proj_dist(&Mobius::IDENTITY) < 1e-10);
    }

    #[test]
    fn level0_single_corner_class() {
        let s = build_genus2_octagon(0).unwrap();
        assert_eq!(s.mesh.num_vertices, 2);
        assert_eq!(s.mesh.euler_characteristic(), -2);
        s.mesh.validate().unwrap();
        // the identified corner class has angle sum 2π, i.e. zero defect
        let d = vertex_defects(&s.mesh, &s.metric);
        for v in d {
            assert!(v.abs() < 1e-10, "defect {v}");
        }
    }

    #[test]
    fn octagon_surface_invariants() {
        for level in [1u32, 2, 3] {
            let s = build_genus2_octagon(level).unwrap();
            s.mesh.validate().unwrap();
            assert_eq!(s.mesh.euler_characteristic(), -2);
            let defects = vertex_defects(&s.mesh, &s.metric);
            let dmax = defects.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            assert!(dmax < 1e-10, "level {level}: max defect {dmax}");
            let area = total_area(&s.mesh, &s.metric);
            assert_abs_diff_eq!(area, 4.0 * PI, epsilon = 1e-8);
            // Gauss–Bonnet identity to machine precision
            let sumd: f64 = defects.iter().sum();
            assert_abs_diff_eq!(
                sumd - area,
                2.0 * PI * (-2.0),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn delaunay_weights_nonnegative() {
        let s = build_genus2_octagon(3).unwrap();
        let ang = corner_angles(&s.mesh, &s.metric);
        let mut w = vec![0.0f64; s.mesh.num_edges()];
        for f in 0..s.mesh.num_faces() {
            for c in 0..3 {
                w[s.mesh.edge_of_h[3 * f + c] as usize] += 0.5 / ang[f][(c + 2) % 3].tan();
            }
        }
        let neg = w.iter().filter(|&&x| x < -1e-10).count();
        assert_eq!(neg, 0, "negative cotan weights: {neg}/{}", w.len());
    }

    #[test]
    fn equivariance_words_realize_lengths() {
        // d(lift_i, ρ(w_h)·lift_j) equals the edge length for every edge,
        // including flipped diagonals whose words were composed.
        let s = build_genus2_octagon(2).unwrap();
        let mut worst = 0.0f64;
        for e in 0..s.mesh.num_edges() {
            let h = s.mesh.edge_he[e] as usize;
            let (i, j) = (s.mesh.origin(h) as usize, s.mesh.head(h) as usize);
            let pj = rho(&s.generators, &s.mesh.eqv_word[h]).apply(s.lift[j]);
            worst = worst.max((geom::dist(s.lift[i], pj) - s.metric.edge_length[e]).abs());
        }
        assert!(worst < 1e-8, "lift/word length mismatch {worst}");
    }

    #[test]
    fn words_are_consistent() {
        // Twin words are mutually inverse and face cocycles are trivial as
        // group elements (not as free words — loops around the cone point
        // pick up the surface-group relator, which the representation kills).
        let s = build_genus2_octagon(2).unwrap();
        for h in 0..s.mesh.num_halfedges() {
            let t = s.mesh.twin[h] as usize;
            let w = word_mul(&s.mesh.eqv_word[h], &s.mesh.eqv_word[t]);
            let m = rho(&s.generators, &w);
            assert!(m.proj_dist(&Mobius::IDENTITY) < 1e-8, "halfedge {h}");
        }
        for f in 0..s.mesh.num_faces() {
            let w = word_mul(
                &word_mul(&s.mesh.eqv_word[3 * f], &s.mesh.eqv_word[3 * f + 1]),
                &s.mesh.eqv_word[3 * f + 2],
            );
            let m = rho(&s.generators, &w);
            assert!(m.proj_dist(&Mobius::IDENTITY) < 1e-8, "face {f}");
        }
    }

    #[test]
    fn identity_energy_close_to_area() {
        // Dirichlet energy of the identity map approximates the area 4π;
        // first-order convergence in mesh size.
        let mut errs = Vec::new();
        for level in [2u32, 3] {
            let s = build_genus2_octagon(level).unwrap();
            let ang = corner_angles(&s.mesh, &s.metric);
            let mut w = vec![0.0f64; s.mesh.num_edges()];
            for f in 0..s.mesh.num_faces() {
                for c in 0..3 {
                    w[s.mesh.edge_of_h[3 * f + c] as usize] +=
                        0.5 / ang[f][(c + 2) % 3].tan();
                }
            }
            let e: f64 = (0..s.mesh.num_edges())
                .map(|e| 0.5 * w[e] * s.metric.edge_length[e].powi(2))
                .sum();
            errs.push((e / (4.0 * PI) - 1.0).abs());
        }
        assert!(errs[1] < errs[0], "no refinement improvement: {errs:?}");
        assert!(errs[1] < 0.05, "identity energy off by {}", errs[1]);
    }

    #[test]
    fn level_budget_enforced() {
        assert!(build_genus2_octagon(MAX_SUBDIV_LEVEL + 1).is_err());
    }
}

