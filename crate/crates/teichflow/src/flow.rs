//! Time-stepping engines for the coupled map/metric flow, its κ-rescaled
//! variant, and the limit flow through harmonic maps, with per-step
//! diagnostics: energy identity residual, accumulated L²-length of the metric
//! path, tension decay, metric drift, and systole monitoring.
//!
//! The coupled step is simultaneous (Jacobi-style): from the state at time t
//! the map moves by dt·a·τ and the metric by dt·b·Re(P_g Φ), after which the
//! metric is re-uniformized. The energy identity then holds to O(dt):
//! dE/dt = −a·Τ − (b/4)·‖Re P_g Φ‖²_{L²}.

use crate::maps::{self, MapError, MapState};
use crate::qdiff::{self, HqdBasis, QdiffError, QuadDiff};
use crate::surface::metric::{self, FaceCharts, HypMetric, MetricError, Sym2Field};
use crate::surface::mesh::Mesh;
use crate::surface::systole::systole_upper;
use crate::targets::{Tangent, Target, TargetError};
use crate::geom::Mobius;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("CFL violation: dt·a_map = {got:.3e} exceeds {limit:.3e} (= cfl·h_min²)")]
    Cfl { got: f64, limit: f64 },
    #[error("systole degeneration alarm at t = {t:.4}: {systole:.4} < half of initial {initial:.4}")]
    DegenerationAlarm { t: f64, systole: f64, initial: f64 },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Qdiff(#[from] QdiffError),
    #[error(transparent)]
    Target(#[from] TargetError),
}

/// A failed run, carrying the last good state for snapshot/resume.
#[derive(Debug, Error)]
#[error("flow aborted at t = {t:.6}: {error}")]
pub struct FlowAbort {
    pub error: FlowError,
    pub t: f64,
    pub state: Box<FlowState>,
    pub rows: Vec<DiagnosticsRow>,
}

#[derive(Clone, Debug)]
pub struct FlowParams {
    /// Map speed: 1 for the η-flow, κ for the rescaled flow.
    pub a_map: f64,
    /// Metric speed: η²/4 for the η-flow, 1 for the rescaled flow.
    pub b_metric: f64,
    pub dt: f64,
    pub t_end: f64,
    pub uniformize_tol: f64,
    /// Recompute the HQD basis when the metric has drifted this far (C⁰)
    /// from the basis metric.
    pub basis_refresh_threshold: f64,
    /// Kernel/gap separation demanded of the HQD eigensolve; coarse meshes
    /// (below subdivision level 3) need a looser threshold.
    pub hqd_min_separation: f64,
    /// Constraint budget for the limit flow's inner harmonic solves.
    pub harmonic_tol: f64,
    pub harmonic_max_iter: usize,
    /// Explicit-Euler stability bound: dt·a_map ≤ cfl·h_min².
    pub cfl: f64,
    /// Recompute the systole every this many steps (carried forward between).
    pub systole_every: usize,
    /// Ball radius for the energy-concentration diagnostic.
    pub probe_radius: f64,
    /// Keep a full state snapshot every this many steps (in memory).
    pub record_every: usize,
    /// Split each metric increment into this many uniformized substeps (the
    /// projection bias of re-uniformization scales with the substep size).
    pub metric_substeps: usize,
}

impl Default for FlowParams {
    fn default() -> FlowParams {
        FlowParams {
            a_map: 1.0,
            b_metric: 0.0025, // η²/4 at η = 0.1
            dt: 5e-3,
            t_end: 1.0,
            uniformize_tol: 1e-10,
            basis_refresh_threshold: 5e-3,
            hqd_min_separation: qdiff::MIN_SPECTRAL_SEPARATION,
            harmonic_tol: 1e-6,
            harmonic_max_iter: 100_000,
            cfl: 0.2,
            systole_every: 10,
            probe_radius: 0.5,
            record_every: usize::MAX,
            metric_substeps: 1,
        }
    }
}

impl FlowParams {
    pub fn eta_flow(eta: f64) -> FlowParams {
        FlowParams {
            a_map: 1.0,
            b_metric: eta * eta / 4.0,
            ..FlowParams::default()
        }
    }

    pub fn kappa_flow(kappa: f64) -> FlowParams {
        FlowParams {
            a_map: kappa,
            b_metric: 1.0,
            ..FlowParams::default()
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct FlowState {
    pub t: f64,
    pub u: MapState,
    pub g: HypMetric,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub e: f64,
    pub t2: f64,
    pub pphi_l2: f64,
    pub l2len: f64,
    pub systole: f64,
    pub dc0: f64,
    pub eires: f64,
    pub dbar_l1: f64,
    pub conc: f64,
}

impl DiagnosticsRow {
    pub const CSV_HEADER: &'static str =
        "t,E,T2,PPhi_l2,L2len,systole,dC0,eires,dbar_l1,conc";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.e,
            self.t2,
            self.pphi_l2,
            self.l2len,
            self.systole,
            self.dc0,
            self.eires,
            self.dbar_l1,
            self.conc
        )
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub rows: Vec<DiagnosticsRow>,
    pub final_state: FlowState,
    /// States recorded every `record_every` steps (time-stamped).
    pub snapshots: Vec<FlowState>,
    /// Limit flow only: max relative L² mismatch between the realized
    /// edge-length-squared velocity and the paired quadratic form of
    /// Re(P_g Φ), i.e. the discrete "∂g/∂t = Re Φ" statement (NaN for
    /// coupled runs, whose metric speed is b·Re(P_g Φ) by construction).
    pub dgdt_rel_err: f64,
}

/// Shortest edge of the metric (CFL length scale).
pub fn min_edge(g: &HypMetric) -> f64 {
    g.edge_length.iter().fold(f64::INFINITY, |m, &l| m.min(l))
}

/// Apply dt·h to the metric through the face charts: each squared edge
/// length gains the mean of the quadratic form increments seen from its two
/// incident faces, then the result is re-uniformized.
pub fn metric_step(
    mesh: &Mesh,
    g: &HypMetric,
    h: &Sym2Field,
    s: f64,
    uniformize_tol: f64,
    substeps: usize,
) -> Result<HypMetric, MetricError> {
    // The re-uniformization after each increment is a projection whose
    // quadratic response biases the path by O(s²) per application; splitting
    // the increment shrinks that bias by the substep count, and trajectories
    // integrated with equal substep sizes share it, so it cancels when they
    // are compared.
    let m = substeps.max(1);
    let mut cur = g.clone();
    for _ in 0..m {
        let charts = FaceCharts::build(mesh, &cur);
        let quad = |hh: usize| -> f64 {
            let v = charts.edge_vec(hh);
            let mm = &h.0[hh / 3];
            mm[0] * v.re * v.re + 2.0 * mm[1] * v.re * v.im + mm[2] * v.im * v.im
        };
        let mut edge_length = Vec::with_capacity(mesh.num_edges());
        for e in 0..mesh.num_edges() {
            let he = mesh.edge_he[e] as usize;
            let tw = mesh.twin[he] as usize;
            let l2 = cur.edge_length[e] * cur.edge_length[e]
                + (s / m as f64) * (quad(he) + quad(tw)) / 2.0;
            if l2 <= 0.0 {
                return Err(MetricError::NonFinite(e));
            }
            edge_length.push(l2.sqrt());
        }
        let stepped = HypMetric { edge_length };
        cur = metric::uniformize(mesh, &stepped, uniformize_tol)?.metric;
    }
    Ok(cur)
}

/// One simultaneous explicit step of the coupled flow from `state`,
/// projecting the Hopf differential with the supplied basis.
pub fn step(
    mesh: &Mesh,
    state: &FlowState,
    params: &FlowParams,
    target: &Target,
    basis: &HqdBasis,
) -> Result<FlowState, FlowError> {
    let tau = maps::tension(mesh, &state.g, target, &state.u)?;
    let phi = qdiff::hopf(mesh, &state.g, target, &state.u)?;
    let pphi = qdiff::project(&phi, basis, mesh, &state.g);
    let mut u = state.u.clone();
    for (i, p) in u.points.iter_mut().enumerate() {
        let v: Tangent = std::array::from_fn(|k| params.dt * params.a_map * tau[i][k]);
        *p = target.retract(p, &v)?;
    }
    let g = if params.b_metric != 0.0 {
        metric_step(
            mesh,
            &state.g,
            &qdiff::re_part(&pphi),
            params.dt * params.b_metric,
            params.uniformize_tol,
            params.metric_substeps,
        )?
    } else {
        state.g.clone()
    };
    Ok(FlowState {
        t: state.t + params.dt,
        u,
        g,
    })
}

struct BasisCache {
    basis: HqdBasis,
    g_at: HypMetric,
}

impl BasisCache {
    fn fresh(mesh: &Mesh, g: &HypMetric, min_sep: f64) -> Result<BasisCache, QdiffError> {
        Ok(BasisCache {
            basis: qdiff::hqd_basis_min_sep(mesh, g, min_sep)?,
            g_at: g.clone(),
        })
    }

    fn refresh_if_stale(
        &mut self,
        mesh: &Mesh,
        g: &HypMetric,
        threshold: f64,
        min_sep: f64,
    ) -> Result<(), FlowError> {
        if metric::metric_distance_c0(mesh, g, &self.g_at, &self.g_at)? > threshold {
            *self = BasisCache::fresh(mesh, g, min_sep)?;
        }
        Ok(())
    }
}

fn diagnostics(
    mesh: &Mesh,
    state: &FlowState,
    target: &Target,
    basis: &HqdBasis,
    g0: &HypMetric,
    probe_radius: f64,
) -> Result<(DiagnosticsRow, f64), FlowError> {
    let report = maps::dirichlet_energy(mesh, &state.g, target, &state.u)?;
    let t2 = maps::tension_l2sq(mesh, &state.g, target, &state.u)?;
    let phi = qdiff::hopf(mesh, &state.g, target, &state.u)?;
    let pphi = qdiff::project(&phi, basis, mesh, &state.g);
    let pphi_l2 = metric::metric_l2_norm(mesh, &qdiff::re_part(&pphi), &state.g);
    let dbar = qdiff::dbar_l1(&phi, mesh, &state.g);
    let conc = maps::local_energy_concentration(mesh, &state.g, &report, probe_radius);
    let dc0 = metric::metric_distance_c0(mesh, &state.g, g0, g0)?;
    Ok((
        DiagnosticsRow {
            t: state.t,
            e: report.total,
            t2,
            pphi_l2,
            l2len: 0.0,
            systole: 0.0,
            dc0,
            eires: 0.0,
            dbar_l1: dbar,
            conc,
        },
        report.total,
    ))
}

/// Run the coupled flow from `init` until t_end, recording one diagnostics
/// row per step. `gens` is needed for the systole monitor. The reference
/// metric for the dC0 column is the initial one.
pub fn run(
    mesh: &Mesh,
    gens: &[Mobius; 4],
    init: &FlowState,
    params: &FlowParams,
    target: &Target,
) -> Result<RunResult, Box<FlowAbort>> {
    let abort = |error: FlowError, state: &FlowState, rows: &[DiagnosticsRow]| {
        Box::new(FlowAbort {
            error,
            t: state.t,
            state: Box::new(state.clone()),
            rows: rows.to_vec(),
        })
    };
    let mut rows: Vec<DiagnosticsRow> = Vec::new();
    let limit = params.cfl * min_edge(&init.g).powi(2);
    if params.dt * params.a_map > limit {
        return Err(abort(
            FlowError::Cfl {
                got: params.dt * params.a_map,
                limit,
            },
            init,
            &rows,
        ));
    }
    let g0 = init.g.clone();
    let nsteps = ((params.t_end - init.t) / params.dt).round() as usize;
    let mut cache = match BasisCache::fresh(mesh, &init.g, params.hqd_min_separation) {
        Ok(c) => c,
        Err(e) => return Err(abort(e.into(), init, &rows)),
    };
    let mut state = init.clone();
    let mut snapshots = Vec::new();
    let mut l2len = 0.0;
    let mut systole = f64::NAN;
    let mut systole0 = f64::NAN;
    for n in 0..nsteps {
        if let Err(e) = cache.refresh_if_stale(
            mesh,
            &state.g,
            params.basis_refresh_threshold,
            params.hqd_min_separation,
        ) {
            return Err(abort(e, &state, &rows));
        }
        if n % params.systole_every.max(1) == 0 {
            systole = systole_upper(mesh, &state.g, gens);
            if n == 0 {
                systole0 = systole;
            }
            if systole < systole0 / 2.0 {
                return Err(abort(
                    FlowError::DegenerationAlarm {
                        t: state.t,
                        systole,
                        initial: systole0,
                    },
                    &state,
                    &rows,
                ));
            }
        }
        let (mut row, _e) =
            match diagnostics(mesh, &state, target, &cache.basis, &g0, params.probe_radius) {
                Ok(r) => r,
                Err(e) => return Err(abort(e, &state, &rows)),
            };
        row.systole = systole;
        row.l2len = l2len;
        if params.record_every != usize::MAX && n % params.record_every.max(1) == 0 {
            snapshots.push(state.clone());
        }
        let next = match step(mesh, &state, params, target, &cache.basis) {
            Ok(s) => s,
            Err(e) => return Err(abort(e, &state, &rows)),
        };
        // energy identity residual against the realized energy change
        let e_next = match maps::dirichlet_energy(mesh, &next.g, target, &next.u) {
            Ok(r) => r.total,
            Err(e) => return Err(abort(e.into(), &state, &rows)),
        };
        row.eires = ((e_next - row.e) / params.dt
            + params.a_map * row.t2
            + params.b_metric / 4.0 * row.pphi_l2 * row.pphi_l2)
            .abs();
        l2len += params.dt * params.b_metric * row.pphi_l2;
        rows.push(row);
        state = next;
    }
    Ok(RunResult {
        rows,
        final_state: state,
        snapshots,
        dgdt_rel_err: f64::NAN,
    })
}

/// The limit flow: alternate an inner harmonic solve (to `harmonic_tol`)
/// with an explicit metric step along Re(P_g Φ). The dbar_l1 column records
/// ‖Φ − P_g Φ‖_{L¹}, the discarded non-holomorphic component — a
/// discretization health metric, since Φ of a harmonic map is holomorphic.
pub fn run_limit_flow(
    mesh: &Mesh,
    gens: &[Mobius; 4],
    init: &FlowState,
    params: &FlowParams,
    target: &Target,
) -> Result<RunResult, Box<FlowAbort>> {
    let abort = |error: FlowError, state: &FlowState, rows: &[DiagnosticsRow]| {
        Box::new(FlowAbort {
            error,
            t: state.t,
            state: Box::new(state.clone()),
            rows: rows.to_vec(),
        })
    };
    let mut rows: Vec<DiagnosticsRow> = Vec::new();
    let g0 = init.g.clone();
    let nsteps = ((params.t_end - init.t) / params.dt).round() as usize;
    let mut cache = match BasisCache::fresh(mesh, &init.g, params.hqd_min_separation) {
        Ok(c) => c,
        Err(e) => return Err(abort(e.into(), init, &rows)),
    };
    let mut state = init.clone();
    let mut snapshots = Vec::new();
    let mut l2len = 0.0;
    let mut dgdt_rel_err = 0.0f64;
    let mut systole = f64::NAN;
    let mut systole0 = f64::NAN;
    for n in 0..nsteps {
        if let Err(e) = cache.refresh_if_stale(
            mesh,
            &state.g,
            params.basis_refresh_threshold,
            params.hqd_min_separation,
        ) {
            return Err(abort(e, &state, &rows));
        }
        if n % params.systole_every.max(1) == 0 {
            systole = systole_upper(mesh, &state.g, gens);
            if n == 0 {
                systole0 = systole;
            }
            if systole < systole0 / 2.0 {
                return Err(abort(
                    FlowError::DegenerationAlarm {
                        t: state.t,
                        systole,
                        initial: systole0,
                    },
                    &state,
                    &rows,
                ));
            }
        }
        // inner solve: τ_g(u) = 0 within the constraint budget
        let (u, stats) = match maps::harmonic_solve(
            mesh,
            &state.g,
            target,
            &state.u,
            params.harmonic_tol,
            params.harmonic_max_iter,
        ) {
            Ok(r) => r,
            Err(e) => return Err(abort(e.into(), &state, &rows)),
        };
        state.u = u;
        let phi = match qdiff::hopf(mesh, &state.g, target, &state.u) {
            Ok(p) => p,
            Err(e) => return Err(abort(e.into(), &state, &rows)),
        };
        let pphi = qdiff::project(&phi, &cache.basis, mesh, &state.g);
        let resid = QuadDiff {
            coeff: (0..mesh.num_faces())
                .map(|f| phi.coeff[f] - pphi.coeff[f])
                .collect(),
        };
        let (discarded_l1, _, _) = qdiff::qd_norms(&resid, mesh, &state.g);
        let re = qdiff::re_part(&pphi);
        let pphi_l2 = metric::metric_l2_norm(mesh, &re, &state.g);
        let report = match maps::dirichlet_energy(mesh, &state.g, target, &state.u) {
            Ok(r) => r,
            Err(e) => return Err(abort(e.into(), &state, &rows)),
        };
        let dc0 = match metric::metric_distance_c0(mesh, &state.g, &g0, &g0) {
            Ok(d) => d,
            Err(e) => return Err(abort(e.into(), &state, &rows)),
        };
        let row = DiagnosticsRow {
            t: state.t,
            e: report.total,
            t2: stats.residual * stats.residual,
            pphi_l2,
            l2len,
            systole,
            dc0,
            eires: 0.0,
            dbar_l1: discarded_l1,
            conc: maps::local_energy_concentration(mesh, &state.g, &report, params.probe_radius),
        };
        if params.record_every != usize::MAX && n % params.record_every.max(1) == 0 {
            snapshots.push(state.clone());
        }
        // Heun (trapezoidal) step: the limit flow is an ODE on the metric
        // alone, and a first-order integrator's error is a κ-independent
        // offset that can mask the O(1/κ) convergence of the rescaled flows
        // toward this trajectory. Predict with an Euler step, re-solve the
        // map, and average the two slopes (the predictor slope congruence-
        // transformed back into the base metric's face charts).
        let g_pred = match metric_step(
            mesh,
            &state.g,
            &re,
            params.dt,
            params.uniformize_tol,
            params.metric_substeps,
        ) {
            Ok(g) => g,
            Err(e) => return Err(abort(e.into(), &state, &rows)),
        };
        let re_avg = {
            let (u2, _) = match maps::harmonic_solve(
                mesh,
                &g_pred,
                target,
                &state.u,
                params.harmonic_tol,
                params.harmonic_max_iter,
            ) {
                Ok(r) => r,
                Err(e) => return Err(abort(e.into(), &state, &rows)),
            };
            let phi2 = match qdiff::hopf(mesh, &g_pred, target, &u2) {
                Ok(p) => p,
                Err(e) => return Err(abort(e.into(), &state, &rows)),
            };
            let pphi2 = qdiff::project(&phi2, &cache.basis, mesh, &g_pred);
            let re2 = qdiff::re_part(&pphi2);
            let charts_base = FaceCharts::build(mesh, &state.g);
            let charts_pred = FaceCharts::build(mesh, &g_pred);
            let mut avg = re.clone();
            for f in 0..mesh.num_faces() {
                // J maps the base chart onto the predictor chart; pull the
                // predictor-chart tensor back by congruence S ← JᵀSJ
                let (b1, b2) = (charts_base.edge_vec(3 * f), -charts_base.edge_vec(3 * f + 2));
                let (p1, p2) = (charts_pred.edge_vec(3 * f), -charts_pred.edge_vec(3 * f + 2));
                let det = b1.re * b2.im - b1.im * b2.re;
                // columns of J = [p1 p2]·[b1 b2]⁻¹
                let j11 = (p1.re * b2.im - p2.re * b1.im) / det;
                let j12 = (-p1.re * b2.re + p2.re * b1.re) / det;
                let j21 = (p1.im * b2.im - p2.im * b1.im) / det;
                let j22 = (-p1.im * b2.re + p2.im * b1.re) / det;
                let [s11, s12, s22] = re2.0[f];
                let t11 = j11 * (s11 * j11 + s12 * j21) + j21 * (s12 * j11 + s22 * j21);
                let t12 = j11 * (s11 * j12 + s12 * j22) + j21 * (s12 * j12 + s22 * j22);
                let t22 = j12 * (s11 * j12 + s12 * j22) + j22 * (s12 * j12 + s22 * j22);
                avg.0[f] = [
                    0.5 * (re.0[f][0] + t11),
                    0.5 * (re.0[f][1] + t12),
                    0.5 * (re.0[f][2] + t22),
                ];
            }
            avg
        };
        let g = match metric_step(
            mesh,
            &state.g,
            &re_avg,
            params.dt,
            params.uniformize_tol,
            params.metric_substeps,
        ) {
            Ok(g) => g,
            Err(e) => return Err(abort(e.into(), &state, &rows)),
        };
        // realized dl²/dt against the paired quadratic form of the Heun
        // slope (the time-centered Re(P_g Φ)): the residual is exactly the
        // re-uniformization correction
        {
            let charts = FaceCharts::build(mesh, &state.g);
            let quad = |hh: usize| {
                let v = charts.edge_vec(hh);
                let m = &re_avg.0[hh / 3];
                m[0] * v.re * v.re + 2.0 * m[1] * v.re * v.im + m[2] * v.im * v.im
            };
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for e in 0..mesh.num_edges() {
                let he = mesh.edge_he[e] as usize;
                let tw = mesh.twin[he] as usize;
                let pred = (quad(he) + quad(tw)) / 2.0;
                let real = (g.edge_length[e].powi(2) - state.g.edge_length[e].powi(2))
                    / params.dt;
                num += (real - pred).powi(2);
                den += pred.powi(2);
            }
            dgdt_rel_err = dgdt_rel_err.max((num / den.max(1e-300)).sqrt());
        }
        l2len += params.dt * pphi_l2;
        rows.push(row);
        state = FlowState {
            t: state.t + params.dt,
            u: state.u,
            g,
        };
    }
    // energy identity of the limit flow: u stays harmonic through the inner
    // solves, so dE/dt = −(1/4)‖Re P_g Φ‖²_{L²}
    let e_final = match maps::dirichlet_energy(mesh, &state.g, target, &state.u) {
        Ok(r) => r.total,
        Err(e) => return Err(abort(e.into(), &state, &rows)),
    };
    for n in 0..rows.len() {
        let e_next = if n + 1 < rows.len() { rows[n + 1].e } else { e_final };
        rows[n].eires = ((e_next - rows[n].e) / params.dt
            + rows[n].pphi_l2 * rows[n].pphi_l2 / 4.0)
            .abs();
    }
    Ok(RunResult {
        rows,
        final_state: state,
        snapshots,
        dgdt_rel_err,
    })
}

/// Least-squares slope of ln(y) against ln(x).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub struct EtaSweepEntry {
    pub eta: f64,
    pub sup_dc0: f64,
    pub sup_map_l2: f64,
}

pub struct EtaSweepReport {
    pub entries: Vec<EtaSweepEntry>,
    /// log-log slope of sup_t dC0 against η.
    pub dc0_slope: f64,
    /// Whether the map distance to the reference flow is nonincreasing in η.
    pub map_dist_monotone: bool,
}

/// Sweep over metric couplings η with a fixed map speed, comparing each run
/// against the pure harmonic map flow (b = 0) from the same initial data.
pub fn eta_sweep(
    mesh: &Mesh,
    gens: &[Mobius; 4],
    init: &FlowState,
    etas: &[f64],
    base: &FlowParams,
    target: &Target,
) -> Result<EtaSweepReport, Box<FlowAbort>> {
    use rayon::prelude::*;
    let mut params_ref = base.clone();
    params_ref.a_map = 1.0;
    params_ref.b_metric = 0.0;
    params_ref.record_every = 1;
    let reference = run(mesh, gens, init, &params_ref, target)?;
    let results: Vec<Result<RunResult, Box<FlowAbort>>> = etas
        .par_iter()
        .map(|&eta| {
            let mut p = base.clone();
            p.a_map = 1.0;
            p.b_metric = eta * eta / 4.0;
            p.record_every = 1;
            run(mesh, gens, init, &p, target)
        })
        .collect();
    let mut entries = Vec::new();
    for (&eta, res) in etas.iter().zip(results) {
        let res = res?;
        let sup_dc0 = res.rows.iter().map(|r| r.dc0).fold(0.0f64, f64::max);
        let mut sup_map = 0.0f64;
        for (a, b) in res.snapshots.iter().zip(&reference.snapshots) {
            let d = maps::map_distance_l2(mesh, &init.g, target, &a.u, &b.u)
                .map_err(|e| {
                    Box::new(FlowAbort {
                        error: e.into(),
                        t: a.t,
                        state: Box::new(a.clone()),
                        rows: res.rows.clone(),
                    })
                })?;
            sup_map = sup_map.max(d);
        }
        entries.push(EtaSweepEntry {
            eta,
            sup_dc0,
            sup_map_l2: sup_map,
        });
    }
    let pts: Vec<(f64, f64)> = entries.iter().map(|e| (e.eta, e.sup_dc0)).collect();
    let dc0_slope = loglog_slope(&pts);
    // monotone nonincreasing in η means: smaller η → smaller or equal distance
    let mut sorted = entries.iter().map(|e| (e.eta, e.sup_map_l2)).collect::<Vec<_>>();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let map_dist_monotone = sorted.windows(2).all(|w| w[0].1 <= w[1].1 * (1.0 + 1e-9));
    Ok(EtaSweepReport {
        entries,
        dc0_slope,
        map_dist_monotone,
    })
}

pub struct KappaSweepEntry {
    pub kappa: f64,
    /// max_{t ≥ eps} Τ_κ(t)
    pub max_tension_after_eps: f64,
    /// sup over the comparison grid of dC0(g_κ, g_{2κ}) (NaN for the last κ).
    pub sup_dc0_to_next: f64,
    /// sup_{t ≥ eps} dC0(g_κ, g_limit)
    pub sup_dc0_to_limit: f64,
    /// sup_{t ≥ eps} C⁰ map distance to the limit-flow trajectory.
    pub sup_map_c0_to_limit: f64,
}

pub struct KappaSweepReport {
    pub entries: Vec<KappaSweepEntry>,
    /// log-log slope of max_{t≥eps} Τ against κ.
    pub tension_slope: f64,
    /// Max realized-vs-predicted metric-velocity mismatch of the limit run
    /// (see [`RunResult::dgdt_rel_err`]).
    pub limit_dgdt_rel_err: f64,
}

/// Sweep over κ for the rescaled flow (a = κ, b = 1), with dt scaled as
/// dt_base/κ to keep the CFL margin fixed. States are compared, pairwise and
/// against the limit flow, on the common time grid of every `grid_stride`
/// steps of the coarsest run; the limit flow (implicit in the map) steps at
/// the base dt and is sampled on the same grid.
pub fn kappa_sweep(
    mesh: &Mesh,
    gens: &[Mobius; 4],
    init: &FlowState,
    kappas: &[f64],
    eps: f64,
    grid_stride: usize,
    base: &FlowParams,
    target: &Target,
) -> Result<KappaSweepReport, Box<FlowAbort>> {
    use rayon::prelude::*;
    let stride = grid_stride.max(1);
    let kmin = kappas.iter().fold(f64::INFINITY, |m, &k| m.min(k));
    let kmax = kappas.iter().fold(0.0f64, |m, &k| m.max(k));
    let results: Vec<Result<RunResult, Box<FlowAbort>>> = kappas
        .par_iter()
        .map(|&kappa| {
            let mut p = base.clone();
            p.a_map = kappa;
            p.b_metric = 1.0;
            p.dt = base.dt * kmin / kappa;
            p.record_every = stride * (kappa / kmin).round() as usize;
            // equalize the metric substep size across the sweep so the
            // uniformization projection bias cancels in the comparisons
            p.metric_substeps = (kmax / kappa).round() as usize;
            run(mesh, gens, init, &p, target)
        })
        .collect();
    let mut runs = Vec::new();
    for r in results {
        runs.push(r?);
    }
    // Limit flow recorded on the same comparison grid. It integrates at the
    // base dt (not the grid spacing): its forward-Euler error must stay well
    // below the O(1/κ) distances being measured, or it shows up as a common
    // offset that can mask the decrease of dC0(g_κ, g_limit) in κ.
    let mut p_lim = base.clone();
    p_lim.dt = base.dt;
    p_lim.record_every = stride;
    p_lim.metric_substeps = (kmax / kmin).round() as usize;
    let limit = run_limit_flow(mesh, gens, init, &p_lim, target)?;
    let limit_dgdt_rel_err = limit.dgdt_rel_err;
    let wrap = |e: FlowError, rows: &[DiagnosticsRow]| {
        Box::new(FlowAbort {
            error: e,
            t: 0.0,
            state: Box::new(init.clone()),
            rows: rows.to_vec(),
        })
    };
    let mut entries = Vec::new();
    for (i, (&kappa, res)) in kappas.iter().zip(&runs).enumerate() {
        let max_tension = res
            .rows
            .iter()
            .filter(|r| r.t >= eps)
            .map(|r| r.t2)
            .fold(0.0f64, f64::max);
        let mut sup_next = f64::NAN;
        if i + 1 < runs.len() {
            let mut s = 0.0f64;
            for (a, b) in res.snapshots.iter().zip(&runs[i + 1].snapshots) {
                let d = metric::metric_distance_c0(mesh, &a.g, &b.g, &init.g)
                    .map_err(|e| wrap(e.into(), &res.rows))?;
                s = s.max(d);
            }
            sup_next = s;
        }
        let mut sup_lim = 0.0f64;
        let mut sup_map = 0.0f64;
        for (a, b) in res.snapshots.iter().zip(&limit.snapshots) {
            if a.t < eps {
                continue;
            }
            let d = metric::metric_distance_c0(mesh, &a.g, &b.g, &init.g)
                .map_err(|e| wrap(e.into(), &res.rows))?;
            sup_lim = sup_lim.max(d);
            let dm = maps::map_distance_c0(target, &a.u, &b.u)
                .map_err(|e| wrap(e.into(), &res.rows))?;
            sup_map = sup_map.max(dm);
        }
        entries.push(KappaSweepEntry {
            kappa,
            max_tension_after_eps: max_tension,
            sup_dc0_to_next: sup_next,
            sup_dc0_to_limit: sup_lim,
            sup_map_c0_to_limit: sup_map,
        });
    }
    let pts: Vec<(f64, f64)> = entries
        .iter()
        .map(|e| (e.kappa, e.max_tension_after_eps))
        .collect();
    let tension_slope = loglog_slope(&pts);
    Ok(KappaSweepReport {
        entries,
        tension_slope,
        limit_dgdt_rel_err,
    })
}

pub struct TensionGrowthReport {
    /// Max over steps of the positive part of (Τ_{n+1} − Τ_n)/dt.
    pub max_positive_growth: f64,
    /// Implied constant against E₀³ δ⁻² η⁴ (δ = half the smallest systole).
    pub implied_constant: f64,
}

/// Tension-growth bound diagnostic for an η-flow trajectory.
pub fn tension_growth_check(rows: &[DiagnosticsRow], dt: f64, eta: f64) -> TensionGrowthReport {
    let mut max_growth = 0.0f64;
    for w in rows.windows(2) {
        max_growth = max_growth.max((w[1].t2 - w[0].t2) / dt);
    }
    let e0 = rows.first().map_or(0.0, |r| r.e);
    let min_sys = rows
        .iter()
        .map(|r| r.systole)
        .fold(f64::INFINITY, f64::min);
    let delta = min_sys / 2.0;
    let denom = e0.powi(3) * eta.powi(4) / (delta * delta);
    TensionGrowthReport {
        max_positive_growth: max_growth,
        implied_constant: max_growth / denom.max(1e-300),
    }
}
