//! Hyperbolic plane primitives in the Poincaré disk model, plus Möbius maps.
//!
//! Points are complex numbers with |z| < 1; orientation-preserving isometries
//! are Möbius transformations z ↦ (az + b)/(cz + d) with the SU(1,1) shape
//! preserved only up to scale (we never rely on it, all maps are used
//! projectively).

use num_complex::Complex64;

pub type C = Complex64;

/// A Möbius transformation of the disk, stored as an unnormalized 2×2
/// complex matrix acting projectively.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mobius {
    pub a: C,
    pub b: C,
    pub c: C,
    pub d: C,
}

impl Mobius {
    pub const IDENTITY: Mobius = Mobius {
        a: C::new(1.0, 0.0),
        b: C::new(0.0, 0.0),
        c: C::new(0.0, 0.0),
        d: C::new(1.0, 0.0),
    };

    pub fn apply(&self, z: C) -> C {
        (self.a * z + self.b) / (self.c * z + self.d)
    }

    /// Complex derivative at z.
    pub fn deriv(&self, z: C) -> C {
        let den = self.c * z + self.d;
        (self.a * self.d - self.b * self.c) / (den * den)
    }

    /// self ∘ other (apply `other` first).
    pub fn compose(&self, other: &Mobius) -> Mobius {
        Mobius {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
        }
    }

    pub fn inverse(&self) -> Mobius {
        Mobius {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    /// Translation taking p to the origin: z ↦ (z − p)/(1 − p̄ z).
    pub fn to_origin(p: C) -> Mobius {
        Mobius {
            a: C::new(1.0, 0.0),
            b: -p,
            c: -p.conj(),
            d: C::new(1.0, 0.0),
        }
    }

    /// Rotation by angle θ about the origin.
    pub fn rotation(theta: f64) -> Mobius {
        Mobius {
            a: C::from_polar(1.0, theta),
            b: C::new(0.0, 0.0),
            c: C::new(0.0, 0.0),
            d: C::new(1.0, 0.0),
        }
    }

    /// Rescale so det = 1 and the trace has nonnegative real part (fixes the
    /// ±M ambiguity of the projective action; used for hashing group elements).
    pub fn normalized(&self) -> Mobius {
        let det = self.a * self.d - self.b * self.c;
        let s = det.sqrt();
        let mut m = Mobius {
            a: self.a / s,
            b: self.b / s,
            c: self.c / s,
            d: self.d / s,
        };
        let tr = m.a + m.d;
        if tr.re < 0.0 || (tr.re == 0.0 && tr.im < 0.0) {
            m = Mobius {
                a: -m.a,
                b: -m.b,
                c: -m.c,
                d: -m.d,
            };
        }
        m
    }

    /// Max entrywise distance between the normalized forms.
    pub fn proj_dist(&self, other: &Mobius) -> f64 {
        let m = self.normalized();
        let n = other.normalized();
        [(m.a - n.a), (m.b - n.b), (m.c - n.c), (m.d - n.d)]
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Hyperbolic distance between disk points.
pub fn dist(p: C, q: C) -> f64 {
    let num = 2.0 * (p - q).norm_sqr();
    let den = (1.0 - p.norm_sqr()) * (1.0 - q.norm_sqr());
    (1.0 + num / den).acosh()
}

/// Geodesic midpoint of p and q.
pub fn midpoint(p: C, q: C) -> C {
    let t = Mobius::to_origin(p);
    let z = t.apply(q);
    let d = 2.0 * z.norm().atanh();
    if z.norm() == 0.0 {
        return p;
    }
    let zm = (d / 4.0).tanh() * z / z.norm();
    t.inverse().apply(zm)
}

/// The unique orientation-preserving isometry taking p → p2 and q → q2
/// (requires dist(p,q) = dist(p2,q2); the mismatch is absorbed radially).
pub fn isometry_two_points(p: C, q: C, p2: C, q2: C) -> Mobius {
    let t1 = Mobius::to_origin(p);
    let t2 = Mobius::to_origin(p2);
    let z1 = t1.apply(q);
    let z2 = t2.apply(q2);
    let theta = z2.arg() - z1.arg();
    t2.inverse()
        .compose(&Mobius::rotation(theta))
        .compose(&t1)
}

/// Exponential map at p: v is a tangent vector in the normal chart at p
/// (|v| = geodesic step length).
pub fn exp_map(p: C, v: C) -> C {
    let n = v.norm();
    if n == 0.0 {
        return p;
    }
    let z = (n / 2.0).tanh() * v / n;
    Mobius::to_origin(p).inverse().apply(z)
}

/// Log map at p: returns v with exp_map(p, v) = q and |v| = dist(p, q).
pub fn log_map(p: C, q: C) -> C {
    let z = Mobius::to_origin(p).apply(q);
    let n = z.norm();
    if n == 0.0 {
        return C::new(0.0, 0.0);
    }
    2.0 * n.atanh() * z / n
}

/// Corner angle opposite side `a` in a hyperbolic triangle with sides a, b, c
/// (the angle between the sides of lengths b and c).
pub fn corner_angle(a: f64, b: f64, c: f64) -> f64 {
    let ca = (b.cosh() * c.cosh() - a.cosh()) / (b.sinh() * c.sinh());
    ca.clamp(-1.0, 1.0).acos()
}

/// d(angle)/d(a), d(angle)/d(b), d(angle)/d(c) for `corner_angle(a, b, c)`.
pub fn corner_angle_grad(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    let alpha = corner_angle(a, b, c);
    let s = alpha.sin();
    let (sb, cb) = (b.sinh(), b.cosh());
    let (sc, cc) = (c.sinh(), c.cosh());
    let cos_a = alpha.cos();
    let da = a.sinh() / (s * sb * sc);
    // d(cos α)/db = cosh c / sinh c ... obtained by differentiating the law
    // of cosines and substituting cos α back in.
    let dcos_db = cc / sc - cos_a * cb / sb;
    let dcos_dc = cb / sb - cos_a * cc / sc;
    (da, -dcos_db / s, -dcos_dc / s)
}

/// Hyperbolic triangle area (angle defect).
pub fn triangle_area(a: f64, b: f64, c: f64) -> f64 {
    std::f64::consts::PI - corner_angle(a, b, c) - corner_angle(b, c, a) - corner_angle(c, a, b)
}

/// Third vertex of a triangle: the point at distance `b` from p and `a` from
/// q, to the left of the oriented segment p → q.
pub fn third_vertex(p: C, q: C, b: f64, a: f64) -> C {
    let t = Mobius::to_origin(p);
    let q0 = t.apply(q);
    let phi = q0.arg();
    let c = dist(p, q);
    let theta = corner_angle(a, b, c);
    let z = (b / 2.0).tanh() * C::from_polar(1.0, phi + theta);
    t.inverse().apply(z)
}

/// Distance from the third vertex to the midpoint of the side of length `c`
/// (hyperbolic median): cosh m = (cosh a + cosh b)/(2 cosh(c/2)).
pub fn median_length(a: f64, b: f64, c: f64) -> f64 {
    ((a.cosh() + b.cosh()) / (2.0 * (c / 2.0).cosh())).acosh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn distance_closed_forms() {
        let p = C::new(0.0, 0.0);
        let s = 1.3_f64;
        let q = C::new((s / 2.0).tanh(), 0.0);
        assert_abs_diff_eq!(dist(p, q), s, epsilon = 1e-12);
    }

    #[test]
    fn exp_log_roundtrip() {
        let p = C::new(0.3, -0.4);
        let v = C::new(0.7, 0.2);
        let q = exp_map(p, v);
        let w = log_map(p, q);
        assert_abs_diff_eq!(w.re, v.re, epsilon = 1e-12);
        assert_abs_diff_eq!(w.im, v.im, epsilon = 1e-12);
        assert_abs_diff_eq!(dist(p, q), v.norm(), epsilon = 1e-12);
    }

    #[test]
    fn midpoint_is_equidistant() {
        let p = C::new(0.5, 0.1);
        let q = C::new(-0.2, 0.6);
        let m = midpoint(p, q);
        assert_abs_diff_eq!(dist(p, m), dist(q, m), epsilon = 1e-12);
        assert_abs_diff_eq!(dist(p, m) + dist(m, q), dist(p, q), epsilon = 1e-12);
    }

    #[test]
    fn isometry_matches_endpoints() {
        let (p, q) = (C::new(0.1, 0.2), C::new(-0.3, 0.4));
        let m0 = Mobius::to_origin(C::new(0.35, -0.1)).compose(&Mobius::rotation(0.9));
        let (p2, q2) = (m0.apply(p), m0.apply(q));
        let m = isometry_two_points(p, q, p2, q2);
        assert!((m.apply(p) - p2).norm() < 1e-13);
        assert!((m.apply(q) - q2).norm() < 1e-13);
        // agrees with m0 everywhere, not just at the two points
        let z = C::new(-0.5, -0.2);
        assert!((m.apply(z) - m0.apply(z)).norm() < 1e-12);
    }

    #[test]
    fn corner_angle_equilateral() {
        // cosh l = 3 → cos α = cosh l / (cosh l + 1) = 3/4
        let l = 3.0_f64.acosh();
        assert_abs_diff_eq!(corner_angle(l, l, l), (0.75_f64).acos(), epsilon = 1e-12);
        // Euclidean limit (tolerance limited by cancellation in cosh−1)
        assert_abs_diff_eq!(
            corner_angle(1e-3, 1e-3, 1e-3),
            std::f64::consts::FRAC_PI_3,
            epsilon = 1e-6
        );
    }

    #[test]
    fn corner_angle_grad_matches_fd() {
        let (a, b, c) = (1.1, 0.9, 1.4);
        let (da, db, dc) = corner_angle_grad(a, b, c);
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64, f64, f64) -> f64, wa: f64, wb: f64, wc: f64| {
            (f(a + h * wa, b + h * wb, c + h * wc) - f(a - h * wa, b - h * wb, c - h * wc))
                / (2.0 * h)
        };
        assert_abs_diff_eq!(da, fd(&corner_angle, 1.0, 0.0, 0.0), epsilon = 1e-6);
        assert_abs_diff_eq!(db, fd(&corner_angle, 0.0, 1.0, 0.0), epsilon = 1e-6);
        assert_abs_diff_eq!(dc, fd(&corner_angle, 0.0, 0.0, 1.0), epsilon = 1e-6);
    }

    #[test]
    fn third_vertex_realizes_lengths() {
        let p = C::new(0.1, 0.0);
        let q = C::new(0.4, 0.2);
        let (a, b) = (0.8, 0.9);
        let r = third_vertex(p, q, b, a);
        assert_abs_diff_eq!(dist(p, r), b, epsilon = 1e-12);
        assert_abs_diff_eq!(dist(q, r), a, epsilon = 1e-12);
        // left of p -> q: positive cross product in the chart at p
        let t = Mobius::to_origin(p);
        let (zq, zr) = (t.apply(q), t.apply(r));
        assert!((zq.conj() * zr).im > 0.0);
    }

    #[test]
    fn median_matches_midpoint() {
        let p = C::new(0.05, -0.1);
        let q = C::new(0.5, 0.3);
        let r = C::new(-0.3, 0.45);
        let m = midpoint(p, q);
        let med = median_length(dist(r, p), dist(r, q), dist(p, q));
        assert_abs_diff_eq!(dist(r, m), med, epsilon = 1e-12);
    }
}
