//! Target manifolds: a flat torus (product of two circles in 4-space), the
//! round sphere (positive-curvature control only), and a hyperbolic surface
//! presented as H²/ρ for a Fuchsian representation ρ, with maps stored
//! equivariantly in the universal cover (the unit disk).
//!
//! Tangent vectors are plain 4-vectors: ambient coordinates for the embedded
//! targets (unused slots zero), normal-chart coordinates at the base point
//! for the disk model. In all cases the Euclidean norm of the tangent equals
//! the Riemannian norm.

use crate::geom::{self, Mobius, C};
use crate::surface::build::rho;
use crate::surface::Word;
use thiserror::Error;

pub type Tangent = [f64; 4];

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("point does not satisfy the on-manifold constraint (residual {0:.3e})")]
    OffManifold(f64),
    #[error("log map is ambiguous (antipodal or conjugate pair)")]
    AmbiguousLog,
    #[error("retraction step leaves the numerical range of the disk model")]
    StepTooLarge,
    #[error("point variant does not match the target")]
    WrongVariant,
    #[error("Fuchsian representation invalid: {0}")]
    BadRep(String),
}

/// A Fuchsian surface-group representation, stored as the images of the four
/// standard generators a, b, c, d (disk-model Möbius transformations). The
/// genus-2 relator is satisfied in the arrangement [a, b⁻¹][c, d⁻¹] = ±I,
/// matching the octagon gluing pattern aba⁻¹b⁻¹cdc⁻¹d⁻¹.
#[derive(Clone, Copy, Debug)]
pub struct FuchsianRep {
    pub gens: [Mobius; 4],
}

/// Relator / determinant tolerance from the representation contract.
const REP_RELATOR_TOL: f64 = 1e-8;

impl FuchsianRep {
    pub fn new(gens: [Mobius; 4]) -> Result<FuchsianRep, TargetError> {
        let rep = FuchsianRep { gens };
        rep.validate()?;
        Ok(rep)
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        for (k, g) in self.gens.iter().enumerate() {
            let n = g.normalized();
            let det = n.a * n.d - n.b * n.c;
            if (det - C::new(1.0, 0.0)).norm() > 1e-12 {
                return Err(TargetError::BadRep(format!("generator {k}: det != 1")));
            }
            let tr = (n.a + n.d).norm();
            if tr <= 2.0 {
                return Err(TargetError::BadRep(format!(
                    "generator {k} is not hyperbolic (|trace| = {tr})"
                )));
            }
        }
        let comm = |x: &Mobius, y: &Mobius| {
            x.compose(y).compose(&x.inverse()).compose(&y.inverse())
        };
        let [a, b, c, d] = &self.gens;
        let rel = comm(a, &b.inverse()).compose(&comm(c, &d.inverse()));
        let dev = rel.proj_dist(&Mobius::IDENTITY);
        if dev > REP_RELATOR_TOL {
            return Err(TargetError::BadRep(format!("relator deviation {dev:.3e}")));
        }
        Ok(())
    }

    /// Möbius image of a word in the generators.
    pub fn rho(&self, word: &[i8]) -> Mobius {
        rho(&self.gens, word)
    }

    /// Row-major decimal text, one generator per line (a b c d entries as
    /// re im pairs).
    pub fn to_text(&self) -> String {
        self.gens
            .iter()
            .map(|g| {
                format!(
                    "{} {} {} {} {} {} {} {}\n",
                    g.a.re, g.a.im, g.b.re, g.b.im, g.c.re, g.c.im, g.d.re, g.d.im
                )
            })
            .collect()
    }

    pub fn from_text(text: &str) -> Result<FuchsianRep, TargetError> {
        let mut gens = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let x: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| TargetError::BadRep("bad float".into())))
                .collect::<Result<_, _>>()?;
            if x.len() != 8 {
                return Err(TargetError::BadRep("need 8 numbers per generator".into()));
            }
            gens.push(Mobius {
                a: C::new(x[0], x[1]),
                b: C::new(x[2], x[3]),
                c: C::new(x[4], x[5]),
                d: C::new(x[6], x[7]),
            });
        }
        let gens: [Mobius; 4] = gens
            .try_into()
            .map_err(|_| TargetError::BadRep("need exactly 4 generators".into()))?;
        FuchsianRep::new(gens)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurvatureClass {
    StrictlyNegative,
    NonPositive,
    Positive,
}

#[derive(Clone, Debug)]
pub enum Target {
    FlatTorus { r1: f64, r2: f64 },
    RoundSphere { radius: f64 },
    HyperbolicQuotient { rep: FuchsianRep },
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum TargetPoint {
    Torus([f64; 4]),
    Sphere([f64; 3]),
    Hyp(C),
}

impl Target {
    pub fn curvature_class(&self) -> CurvatureClass {
        match self {
            Target::FlatTorus { .. } => CurvatureClass::NonPositive,
            Target::RoundSphere { .. } => CurvatureClass::Positive,
            Target::HyperbolicQuotient { .. } => CurvatureClass::StrictlyNegative,
        }
    }

    /// On-manifold constraint residual (0 = exactly on the target).
    pub fn constraint_residual(&self, p: &TargetPoint) -> Result<f64, TargetError> {
        match (self, p) {
            (Target::FlatTorus { r1, r2 }, TargetPoint::Torus(x)) => {
                let d1 = (x[0].hypot(x[1]) - r1).abs();
                let d2 = (x[2].hypot(x[3]) - r2).abs();
                Ok(d1.max(d2))
            }
            (Target::RoundSphere { radius }, TargetPoint::Sphere(x)) => {
                Ok(((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() - radius).abs())
            }
            (Target::HyperbolicQuotient { .. }, TargetPoint::Hyp(z)) => {
                if z.norm() < 1.0 - 1e-12 {
                    Ok(0.0)
                } else {
                    Ok(z.norm() - (1.0 - 1e-12))
                }
            }
            _ => Err(TargetError::WrongVariant),
        }
    }

    /// Project an arbitrary 4-vector onto the tangent space at p.
    pub fn project_tangent(&self, p: &TargetPoint, v: &Tangent) -> Result<Tangent, TargetError> {
        match (self, p) {
            (Target::FlatTorus { .. }, TargetPoint::Torus(x)) => {
                let mut out = *v;
                for f in 0..2 {
                    let (a, b) = (x[2 * f], x[2 * f + 1]);
                    let n2 = a * a + b * b;
                    let r = (v[2 * f] * a + v[2 * f + 1] * b) / n2;
                    out[2 * f] -= r * a;
                    out[2 * f + 1] -= r * b;
                }
                Ok(out)
            }
            (Target::RoundSphere { .. }, TargetPoint::Sphere(x)) => {
                let n2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                let r = (v[0] * x[0] + v[1] * x[1] + v[2] * x[2]) / n2;
                Ok([v[0] - r * x[0], v[1] - r * x[1], v[2] - r * x[2], 0.0])
            }
            (Target::HyperbolicQuotient { .. }, TargetPoint::Hyp(_)) => {
                Ok([v[0], v[1], 0.0, 0.0])
            }
            _ => Err(TargetError::WrongVariant),
        }
    }

    /// Geodesic step: the exact exponential map on every target (circle
    /// factors rotate by arc length, great circles on the sphere, disk-model
    /// exponential). Agrees with ambient step-then-project to O(|v|²).
    pub fn retract(&self, p: &TargetPoint, v: &Tangent) -> Result<TargetPoint, TargetError> {
        let v = self.project_tangent(p, v)?;
        match (self, p) {
            (Target::FlatTorus { r1, r2 }, TargetPoint::Torus(x)) => {
                let mut out = [0.0; 4];
                for (f, r) in [(0usize, r1), (1, r2)] {
                    let (a, b) = (x[2 * f], x[2 * f + 1]);
                    let n = a.hypot(b);
                    // signed arc length along the factor's unit tangent (−b, a)/n
                    let s = (-b * v[2 * f] + a * v[2 * f + 1]) / n;
                    let th = angle(a, b) + s / r;
                    out[2 * f] = r * th.cos();
                    out[2 * f + 1] = r * th.sin();
                }
                Ok(TargetPoint::Torus(out))
            }
            (Target::RoundSphere { radius }, TargetPoint::Sphere(x)) => {
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n < 1e-300 {
                    return Ok(*p);
                }
                let (c, s) = ((n / radius).cos(), (n / radius).sin());
                Ok(TargetPoint::Sphere(std::array::from_fn(|i| {
                    c * x[i] + s * radius * v[i] / n
                })))
            }
            (Target::HyperbolicQuotient { .. }, TargetPoint::Hyp(z)) => {
                let q = geom::exp_map(*z, C::new(v[0], v[1]));
                if q.norm() > 1.0 - 1e-12 {
                    return Err(TargetError::StepTooLarge);
                }
                Ok(TargetPoint::Hyp(q))
            }
            _ => Err(TargetError::WrongVariant),
        }
    }

    /// Geodesic distance on the target.
    pub fn distance(&self, p: &TargetPoint, q: &TargetPoint) -> Result<f64, TargetError> {
        match (self, p, q) {
            (Target::FlatTorus { r1, r2 }, TargetPoint::Torus(x), TargetPoint::Torus(y)) => {
                let d1 = r1 * wrap_angle(angle(y[0], y[1]) - angle(x[0], x[1]));
                let d2 = r2 * wrap_angle(angle(y[2], y[3]) - angle(x[2], x[3]));
                Ok(d1.hypot(d2))
            }
            (Target::RoundSphere { radius }, TargetPoint::Sphere(x), TargetPoint::Sphere(y)) => {
                let dot = (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]) / (radius * radius);
                Ok(radius * dot.clamp(-1.0, 1.0).acos())
            }
            (Target::HyperbolicQuotient { .. }, TargetPoint::Hyp(z), TargetPoint::Hyp(w)) => {
                Ok(geom::dist(*z, *w))
            }
            _ => Err(TargetError::WrongVariant),
        }
    }

    /// Squared chord distance used by the Dirichlet energy: ambient for the
    /// embedded targets, geodesic for the disk model.
    pub fn chord_dist2(&self, p: &TargetPoint, q: &TargetPoint) -> Result<f64, TargetError> {
        match (self, p, q) {
            (Target::FlatTorus { .. }, TargetPoint::Torus(x), TargetPoint::Torus(y)) => {
                Ok((0..4).map(|i| (x[i] - y[i]) * (x[i] - y[i])).sum())
            }
            (Target::RoundSphere { .. }, TargetPoint::Sphere(x), TargetPoint::Sphere(y)) => {
                Ok((0..3).map(|i| (x[i] - y[i]) * (x[i] - y[i])).sum())
            }
            (Target::HyperbolicQuotient { .. }, _, _) => {
                let d = self.distance(p, q)?;
                Ok(d * d)
            }
            _ => Err(TargetError::WrongVariant),
        }
    }

    /// Tangent vector at p pointing to q with |v| = distance(p, q) and
    /// retract(p, v) = q (principal branch on the circle factors).
    pub fn log_map(&self, p: &TargetPoint, q: &TargetPoint) -> Result<Tangent, TargetError> {
        match (self, p, q) {
            (Target::FlatTorus { r1, r2 }, TargetPoint::Torus(x), TargetPoint::Torus(y)) => {
                let mut out = [0.0; 4];
                for (f, r) in [(0usize, r1), (1, r2)] {
                    let (a, b) = (x[2 * f], x[2 * f + 1]);
                    let th = wrap_angle(
                        angle(y[2 * f], y[2 * f + 1]) - angle(a, b),
                    );
                    let n = a.hypot(b);
                    // unit tangent of the circle factor at p
                    out[2 * f] = -b / n * r * th;
                    out[2 * f + 1] = a / n * r * th;
                }
                Ok(out)
            }
            (Target::RoundSphere { radius }, TargetPoint::Sphere(x), TargetPoint::Sphere(y)) => {
                let r2 = radius * radius;
                let dot = (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]) / r2;
                let c = dot.clamp(-1.0, 1.0);
                if c < -1.0 + 1e-12 {
                    return Err(TargetError::AmbiguousLog);
                }
                let mut perp = [0.0; 3];
                for i in 0..3 {
                    perp[i] = y[i] - c * x[i];
                }
                let pn = (perp[0] * perp[0] + perp[1] * perp[1] + perp[2] * perp[2]).sqrt();
                if pn < 1e-300 {
                    return Ok([0.0; 4]);
                }
                let s = radius * c.acos() / pn;
                Ok([perp[0] * s, perp[1] * s, perp[2] * s, 0.0])
            }
            (Target::HyperbolicQuotient { .. }, TargetPoint::Hyp(z), TargetPoint::Hyp(w)) => {
                let v = geom::log_map(*z, *w);
                Ok([v.re, v.im, 0.0, 0.0])
            }
            _ => Err(TargetError::WrongVariant),
        }
    }

    /// Deck transformation by a word in the generators (hyperbolic quotient
    /// only; the other targets have trivial equivariance).
    pub fn deck_transform(&self, word: &Word, p: &TargetPoint) -> Result<TargetPoint, TargetError> {
        match (self, p) {
            (Target::HyperbolicQuotient { rep }, TargetPoint::Hyp(z)) => {
                Ok(TargetPoint::Hyp(rep.rho(word).apply(*z)))
            }
            (_, _) if !matches!(self, Target::HyperbolicQuotient { .. }) => Ok(*p),
            _ => Err(TargetError::WrongVariant),
        }
    }
}

fn angle(x: f64, y: f64) -> f64 {
    y.atan2(x)
}

/// Wrap to (−π, π].
pub fn wrap_angle(t: f64) -> f64 {
    let mut t = t % (2.0 * std::f64::consts::PI);
    if t > std::f64::consts::PI {
        t -= 2.0 * std::f64::consts::PI;
    } else if t <= -std::f64::consts::PI {
        t += 2.0 * std::f64::consts::PI;
    }
    t
}
