//! Versioned text serialization for a surface (mesh + metric + vertex lifts).
//! The format is line-oriented; floats are written with Rust's shortest
//! round-trip formatting, so save → load → save is bit-exact.

use super::build::OctagonSurface;
use super::mesh::{Mesh, Word};
use super::metric::HypMetric;
use crate::geom::{Mobius, C};
use std::fmt::Write as _;
use thiserror::Error;

pub const FORMAT_HEADER: &str = "teichflow-surface v1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("bad header: expected {FORMAT_HEADER:?}")]
    BadHeader,
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("file truncated: missing {0}")]
    Truncated(&'static str),
}

pub fn write_surface(s: &OctagonSurface) -> String {
    let mut out = String::new();
    let mesh = &s.mesh;
    writeln!(out, "{FORMAT_HEADER}").unwrap();
    writeln!(out, "genus {}", mesh.genus).unwrap();
    writeln!(
        out,
        "counts {} {} {}",
        mesh.num_vertices,
        mesh.num_edges(),
        mesh.num_faces()
    )
    .unwrap();
    for l in &s.lift {
        writeln!(out, "v {} {}", l.re, l.im).unwrap();
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    for h in 0..mesh.num_halfedges() {
        let w: Vec<String> = mesh.eqv_word[h].iter().map(|l| l.to_string()).collect();
        writeln!(out, "h {} {}", mesh.twin[h], w.join(" ")).unwrap();
    }
    for l in &s.metric.edge_length {
        writeln!(out, "e {l}").unwrap();
    }
    for lp in &mesh.generator_loops {
        let vs: Vec<String> = lp.iter().map(|v| v.to_string()).collect();
        writeln!(out, "loop {}", vs.join(" ")).unwrap();
    }
    for g in &s.generators {
        writeln!(
            out,
            "gen {} {} {} {} {} {} {} {}",
            g.a.re, g.a.im, g.b.re, g.b.im, g.c.re, g.c.im, g.d.re, g.d.im
        )
        .unwrap();
    }
    out
}

pub fn read_surface(text: &str) -> Result<OctagonSurface, IoError> {
    let mut lines = text.lines().enumerate();
    let perr = |n: usize, m: &str| IoError::Parse(n + 1, m.to_string());
    let (_, header) = lines.next().ok_or(IoError::BadHeader)?;
    if header.trim() != FORMAT_HEADER {
        return Err(IoError::BadHeader);
    }
    let mut genus = 2u32;
    let (mut nv, mut ne, mut nf) = (0usize, 0usize, 0usize);
    let mut lift: Vec<C> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut twin: Vec<u32> = Vec::new();
    let mut eqv_word: Vec<Word> = Vec::new();
    let mut edge_length: Vec<f64> = Vec::new();
    let mut loops: Vec<Vec<u32>> = Vec::new();
    let mut gens: Vec<Mobius> = Vec::new();
    for (n, line) in lines {
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let rest: Vec<&str> = it.collect();
        let f64s = |r: &[&str]| -> Result<Vec<f64>, IoError> {
            r.iter()
                .map(|t| t.parse().map_err(|_| perr(n, "bad float")))
                .collect()
        };
        match tag {
            "genus" => {
                genus = rest
                    .first()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| perr(n, "bad genus"))?;
            }
            "counts" => {
                let c: Vec<usize> = rest
                    .iter()
                    .map(|t| t.parse().map_err(|_| perr(n, "bad count")))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(perr(n, "counts needs 3 fields"));
                }
                (nv, ne, nf) = (c[0], c[1], c[2]);
            }
            "v" => {
                let x = f64s(&rest)?;
                if x.len() != 2 {
                    return Err(perr(n, "vertex needs 2 coords"));
                }
                lift.push(C::new(x[0], x[1]));
            }
            "f" => {
                let c: Vec<u32> = rest
                    .iter()
                    .map(|t| t.parse().map_err(|_| perr(n, "bad face index")))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(perr(n, "face needs 3 vertices"));
                }
                faces.push([c[0], c[1], c[2]]);
            }
            "h" => {
                let t: u32 = rest
                    .first()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| perr(n, "bad twin"))?;
                let w: Word = rest[1..]
                    .iter()
                    .map(|t| t.parse().map_err(|_| perr(n, "bad word letter")))
                    .collect::<Result<_, _>>()?;
                twin.push(t);
                eqv_word.push(w);
            }
            "e" => {
                let x = f64s(&rest)?;
                if x.len() != 1 {
                    return Err(perr(n, "edge needs 1 length"));
                }
                edge_length.push(x[0]);
            }
            "loop" => {
                let c: Vec<u32> = rest
                    .iter()
                    .map(|t| t.parse().map_err(|_| perr(n, "bad loop vertex")))
                    .collect::<Result<_, _>>()?;
                loops.push(c);
            }
            "gen" => {
                let x = f64s(&rest)?;
                if x.len() != 8 {
                    return Err(perr(n, "generator needs 8 floats"));
                }
                gens.push(Mobius {
                    a: C::new(x[0], x[1]),
                    b: C::new(x[2], x[3]),
                    c: C::new(x[4], x[5]),
                    d: C::new(x[6], x[7]),
                });
            }
            _ => return Err(perr(n, "unknown record tag")),
        }
    }
    if lift.len() != nv {
        return Err(IoError::Truncated("vertices"));
    }
    if faces.len() != nf {
        return Err(IoError::Truncated("faces"));
    }
    if twin.len() != 3 * nf {
        return Err(IoError::Truncated("halfedges"));
    }
    if edge_length.len() != ne {
        return Err(IoError::Truncated("edge lengths"));
    }
    if gens.len() != 4 {
        return Err(IoError::Truncated("generators"));
    }
    let mut mesh = Mesh {
        genus,
        num_vertices: nv,
        faces,
        twin,
        edge_of_h: Vec::new(),
        edge_he: Vec::new(),
        eqv_word,
        generator_loops: loops,
    };
    mesh.rebuild_edges();
    Ok(OctagonSurface {
        mesh,
        metric: HypMetric { edge_length },
        lift,
        generators: [gens[0], gens[1], gens[2], gens[3]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::build::build_genus2_octagon;

    #[test]
    fn round_trip_is_bit_exact() {
        let s = build_genus2_octagon(2).unwrap();
        let text = write_surface(&s);
        let s2 = read_surface(&text).unwrap();
        s2.mesh.validate().unwrap();
        assert_eq!(s.mesh.faces, s2.mesh.faces);
        assert_eq!(s.mesh.twin, s2.mesh.twin);
        assert_eq!(s.mesh.edge_of_h, s2.mesh.edge_of_h);
        assert_eq!(s.mesh.eqv_word, s2.mesh.eqv_word);
        assert_eq!(s.metric.edge_length, s2.metric.edge_length);
        assert_eq!(s.lift, s2.lift);
        let text2 = write_surface(&s2);
        assert_eq!(text, text2);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_surface("nonsense").is_err());
        let s = build_genus2_octagon(1).unwrap();
        let text = write_surface(&s);
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(read_surface(&truncated).is_err());
    }
}
