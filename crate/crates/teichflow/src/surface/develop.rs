//! Developing map: lay every face out in the Poincaré disk along a BFS
//! spanning tree of the face adjacency graph, recording for each halfedge the
//! Möbius transformation relating the two incident faces' developed charts.
//! For a zero-defect metric these charts are exact hyperbolic isometric
//! coordinates, so vertex-star holonomies are trivial up to roundoff.

use super::mesh::Mesh;
use super::metric::HypMetric;
use crate::geom::{self, Mobius, C};
use std::collections::VecDeque;

pub struct Developed {
    /// Disk coordinates of each face's three corners.
    pub corners: Vec<[C; 3]>,
    /// Per halfedge h: coords in face(h) = cross(h) ∘ coords in face(twin h)
    /// on the shared edge; identity on spanning-tree edges.
    pub cross: Vec<Mobius>,
    /// Whether the halfedge's edge is in the BFS face tree.
    pub tree: Vec<bool>,
}

pub fn develop(mesh: &Mesh, g: &HypMetric) -> Developed {
    let nf = mesh.num_faces();
    let mut corners = vec![[C::new(0.0, 0.0); 3]; nf];
    let mut placed = vec![false; nf];
    let mut tree = vec![false; mesh.num_halfedges()];
    let [l0, l1, l2] = g.face_lengths(mesh, 0);
    corners[0][1] = C::new((l0 / 2.0).tanh(), 0.0);
    corners[0][2] = geom::third_vertex(corners[0][0], corners[0][1], l2, l1);
    placed[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(f) = queue.pop_front() {
        for c in 0..3 {
            let h = 3 * f + c;
            let t = mesh.twin[h] as usize;
            let f2 = t / 3;
            if placed[f2] {
                continue;
            }
            let c2 = t % 3;
            // shared edge: h runs p→q in f, the twin runs q→p in f2
            let p = corners[f][(c + 1) % 3];
            let q = corners[f][c];
            corners[f2][c2] = p;
            corners[f2][(c2 + 1) % 3] = q;
            let lb = g.edge_length[mesh.edge_of_h[3 * f2 + (c2 + 2) % 3] as usize];
            let la = g.edge_length[mesh.edge_of_h[3 * f2 + (c2 + 1) % 3] as usize];
            corners[f2][(c2 + 2) % 3] = geom::third_vertex(p, q, lb, la);
            placed[f2] = true;
            tree[h] = true;
            tree[t] = true;
            queue.push_back(f2);
        }
    }
    let mut cross = vec![Mobius::IDENTITY; mesh.num_halfedges()];
    for h in 0..mesh.num_halfedges() {
        if tree[h] {
            continue;
        }
        let t = mesh.twin[h] as usize;
        let (f, c) = (h / 3, h % 3);
        let (f2, c2) = (t / 3, t % 3);
        let (p1, q1) = (corners[f][c], corners[f][(c + 1) % 3]);
        let (q2, p2) = (corners[f2][c2], corners[f2][(c2 + 1) % 3]);
        cross[h] = geom::isometry_two_points(p2, q2, p1, q1);
    }
    Developed {
        corners,
        cross,
        tree,
    }
}

impl Developed {
    /// Holonomy around the origin vertex of h0: product of the crossings of
    /// a full counterclockwise star walk. Trivial (up to roundoff) iff the
    /// vertex has zero angle defect.
    pub fn vertex_holonomy(&self, mesh: &Mesh, h0: usize) -> Mobius {
        let mut m = Mobius::IDENTITY;
        let mut h = h0;
        loop {
            m = self.cross[h].inverse().compose(&m);
            h = mesh.next(mesh.twin[h] as usize);
            if h == h0 {
                return m;
            }
        }
    }
}
