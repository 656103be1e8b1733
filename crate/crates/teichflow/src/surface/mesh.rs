//! Halfedge mesh for a closed oriented triangulated surface.
//!
//! Halfedge `h` lives in face `h/3` and runs from corner `h%3` to corner
//! `(h%3 + 1) % 3`. Faces are CCW vertex triples. Each halfedge carries an
//! equivariance word over the π₁ generators: for a map lifted to the
//! universal cover, the head vertex's lift seen from the tail's wedge is
//! ρ(word) applied to the head's canonical lift.

use thiserror::Error;

/// A word in the surface-group generators: letters 1..=2γ, negative = inverse.
pub type Word = Vec<i8>;

/// Concatenate and freely reduce two words.
pub fn word_mul(a: &[i8], b: &[i8]) -> Word {
    let mut out: Word = a.to_vec();
    for &l in b {
        if out.last() == Some(&-l) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    out
}

pub fn word_inv(a: &[i8]) -> Word {
    a.iter().rev().map(|&l| -l).collect()
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("halfedge twin structure is inconsistent at halfedge {0}")]
    BadTwin(usize),
    #[error("Euler characteristic {got} does not match genus {genus} (expected {want})")]
    BadEuler { got: i64, genus: u32, want: i64 },
    #[error("mesh is not edge-connected")]
    Disconnected,
    #[error("generator loop {0} is not a closed edge path")]
    BadLoop(usize),
    #[error("degenerate triangle in face {face}: lengths {lens:?} violate the triangle inequality")]
    DegenerateTriangle { face: usize, lens: [f64; 3] },
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub genus: u32,
    pub num_vertices: usize,
    /// CCW vertex triples.
    pub faces: Vec<[u32; 3]>,
    /// Twin halfedge per halfedge.
    pub twin: Vec<u32>,
    /// Edge id per halfedge.
    pub edge_of_h: Vec<u32>,
    /// Canonical (lowest-index) halfedge per edge.
    pub edge_he: Vec<u32>,
    /// Equivariance word per halfedge; inverse pairs across twins.
    pub eqv_word: Vec<Word>,
    /// 2γ closed vertex cycles representing the standard π₁ generators.
    pub generator_loops: Vec<Vec<u32>>,
}

impl Mesh {
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_halfedges(&self) -> usize {
        3 * self.faces.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_he.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices as i64 - self.num_edges() as i64 + self.num_faces() as i64
    }

    #[inline]
    pub fn face_of(&self, h: usize) -> usize {
        h / 3
    }

    #[inline]
    pub fn next(&self, h: usize) -> usize {
        h - h % 3 + (h % 3 + 1) % 3
    }

    #[inline]
    pub fn prev(&self, h: usize) -> usize {
        h - h % 3 + (h % 3 + 2) % 3
    }

    #[inline]
    pub fn origin(&self, h: usize) -> u32 {
        self.faces[h / 3][h % 3]
    }

    #[inline]
    pub fn head(&self, h: usize) -> u32 {
        self.faces[h / 3][(h % 3 + 1) % 3]
    }

    /// Rebuild edge ids from the twin table (deterministic: edges numbered in
    /// order of their lowest halfedge).
    pub fn rebuild_edges(&mut self) {
        let nh = self.num_halfedges();
        self.edge_of_h = vec![u32::MAX; nh];
        self.edge_he.clear();
        for h in 0..nh {
            if self.edge_of_h[h] == u32::MAX {
                let e = self.edge_he.len() as u32;
                self.edge_of_h[h] = e;
                self.edge_of_h[self.twin[h] as usize] = e;
                self.edge_he.push(h as u32);
            }
        }
    }

    /// Outgoing halfedges around the origin of `h0`, in star order.
    pub fn vertex_star(&self, h0: usize) -> Vec<usize> {
        let mut out = vec![h0];
        let mut h = self.next(self.twin[h0] as usize);
        while h != h0 {
            out.push(h);
            h = self.next(self.twin[h] as usize);
        }
        out
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let nh = self.num_halfedges();
        for h in 0..nh {
            let t = self.twin[h] as usize;
            if t >= nh || self.twin[t] as usize != h || t == h {
                return Err(MeshError::BadTwin(h));
            }
            if self.origin(h) != self.head(t) || self.head(h) != self.origin(t) {
                return Err(MeshError::BadTwin(h));
            }
        }
        let want = 2 - 2 * self.genus as i64;
        let got = self.euler_characteristic();
        if got != want {
            return Err(MeshError::BadEuler {
                got,
                genus: self.genus,
                want,
            });
        }
        // connectivity over faces
        let mut seen = vec![false; self.num_faces()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(f) = stack.pop() {
            for c in 0..3 {
                let g = self.twin[3 * f + c] as usize / 3;
                if !seen[g] {
                    seen[g] = true;
                    stack.push(g);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(MeshError::Disconnected);
        }
        // generator loops are closed edge paths
        for (k, lp) in self.generator_loops.iter().enumerate() {
            if lp.is_empty() {
                return Err(MeshError::BadLoop(k));
            }
            for i in 0..lp.len() {
                let (a, b) = (lp[i], lp[(i + 1) % lp.len()]);
                if self.find_halfedge(a, b).is_none() {
                    return Err(MeshError::BadLoop(k));
                }
            }
        }
        Ok(())
    }

    /// Lowest-index halfedge from a to b, if any.
    pub fn find_halfedge(&self, a: u32, b: u32) -> Option<usize> {
        (0..self.num_halfedges()).find(|&h| self.origin(h) == a && self.head(h) == b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_reduction() {
        assert_eq!(word_mul(&[1, 2], &[-2, -1]), Vec::<i8>::new());
        assert_eq!(word_mul(&[1, 2], &[3]), vec![1, 2, 3]);
        assert_eq!(word_inv(&[1, -2, 3]), vec![-3, 2, -1]);
    }
}
