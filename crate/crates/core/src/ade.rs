//! Viscous advection-diffusion `df/dt + u.grad f = nu lap f` on the torus.
//!
//! Each stationary piece of a flow program is integrated with Strang
//! splitting: a half heat step, an advection step along the exact
//! characteristics of the piece, and another half heat step. The heat step
//! is spectral and exact, so its `L^2` loss gives the dissipation term of
//! the energy identity without any quadrature. Advection is semi-Lagrangian
//! with tensor-product cubic interpolation, optionally limited to the range
//! of the four surrounding nodes, followed by a bounded mass fix.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::{Primitive, TorusPoint};
use crate::grid::{stable_sum, GridField, Norm};
use crate::spectral::{signed_freq, Fft2};
use crate::transport::{FlowProgram, Segment};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("non-finite value at t = {t}; last healthy state kept")]
    NonFinite { t: f64, last_state: Box<GridField> },
    #[error("grid size {got} does not match the solver's {want}")]
    GridMismatch { want: usize, got: usize },
    #[error("final time {t_end} outside the program horizon {horizon}")]
    TimeOutOfRange { t_end: f64, horizon: f64 },
    #[error("viscosity must be non-negative and finite, got {0}")]
    BadViscosity(f64),
    #[error("trace has no recorded fields; enable record_fields")]
    NoRecords,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    Linear,
    Cubic,
    /// Cubic clipped to the range of the surrounding 2 x 2 nodes.
    MonotoneCubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n: usize,
    pub nu: f64,
    /// Global cap on the advection substep.
    pub dt_max: Option<f64>,
    /// Substeps on a level-`k` piece are at most `2^-(k + level_shift)`.
    pub level_shift: i32,
    pub interpolation: Interpolation,
    /// Keep the field after every substep (needed by [`trace_residual`]).
    pub record_fields: bool,
}

impl SolverConfig {
    pub fn new(n: usize, nu: f64) -> Self {
        SolverConfig {
            n,
            nu,
            dt_max: None,
            level_shift: 2,
            interpolation: Interpolation::MonotoneCubic,
            record_fields: false,
        }
    }

    pub fn substep(&self, level: u32) -> f64 {
        let d = 2f64.powi(-(level as i32 + self.level_shift));
        match self.dt_max {
            Some(c) => d.min(c),
            None => d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub mass: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    /// `2 nu int_0^t ||grad f||^2`.
    pub dissipation: f64,
}

/// Field after a substep together with the piece that produced it.
#[derive(Clone, Debug)]
pub struct Record {
    pub t: f64,
    pub field: GridField,
    pub piece: Option<(Primitive, i8)>,
}

#[derive(Clone, Debug)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
    pub records: Vec<Record>,
    pub config: SolverConfig,
    /// Extremes of the initial datum, for maximum-principle checks.
    pub initial_range: (f64, f64),
    pub max_substep: f64,
}

impl SolveTrace {
    /// `| ||f(T)||^2 + 2 nu int ||grad f||^2 - ||f0||^2 | / ||f0||^2`.
    pub fn energy_residual(&self) -> f64 {
        let first = self.rows.first().expect("trace has an initial row");
        let last = self.rows.last().expect("trace has a final row");
        let e0 = first.l2 * first.l2;
        ((last.l2 * last.l2 + last.dissipation) - e0).abs() / e0.max(f64::MIN_POSITIVE)
    }

    /// Largest mass drift from the initial row.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.rows[0].mass;
        self.rows.iter().fold(0.0, |m, r| m.max((r.mass - m0).abs()))
    }

    /// Largest increase of the `L^2` norm between consecutive rows.
    pub fn max_l2_increase(&self) -> f64 {
        self.rows
            .windows(2)
            .fold(0.0f64, |m, w| m.max(w[1].l2 - w[0].l2))
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mass,l1,l2,linf,cumulative_dissipation")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.t, r.mass, r.l1, r.l2, r.linf, r.dissipation
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub final_field: GridField,
    pub snapshots: Vec<(f64, GridField)>,
    pub trace: SolveTrace,
}

impl SolveOutput {
    pub fn snapshot_at(&self, t: f64) -> Option<&GridField> {
        self.snapshots
            .iter()
            .find(|(s, _)| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .map(|(_, g)| g)
    }
}

/// Exact heat semigroup on the grid's trigonometric interpolant.
pub struct HeatKernel {
    fft: Fft2,
    lambda: Vec<f64>,
}

impl HeatKernel {
    pub fn new(n: usize) -> Self {
        let mut lambda = vec![0.0; n * n];
        for b in 0..n {
            let k2 = signed_freq(b, n) as f64;
            for a in 0..n {
                let k1 = signed_freq(a, n) as f64;
                lambda[b * n + a] = 4.0 * PI * PI * (k1 * k1 + k2 * k2);
            }
        }
        HeatKernel {
            fft: Fft2::new(n),
            lambda,
        }
    }

    /// Advances `f` by time `dt`; returns the `L^2`-squared loss, which
    /// equals `2 nu int ||grad f||^2` over the step.
    pub fn step(&self, f: &mut GridField, nu: f64, dt: f64) -> f64 {
        if nu == 0.0 || dt == 0.0 {
            return 0.0;
        }
        let n = f.n();
        let mut spec = self.fft.forward(f.values());
        let norm = 1.0 / ((n * n) as f64 * (n * n) as f64);
        let losses: Vec<f64> = spec
            .par_iter_mut()
            .zip(self.lambda.par_iter())
            .map(|(c, &lam)| {
                if lam == 0.0 {
                    return 0.0;
                }
                let g = (-nu * lam * dt).exp();
                let loss = c.norm_sqr() * (1.0 - g * g) * norm;
                *c *= g;
                loss
            })
            .collect();
        let back = self.fft.inverse_real(spec);
        f.values_mut().copy_from_slice(&back);
        stable_sum(losses)
    }
}

/// One heat step on a copy of `f`.
pub fn heat_step(f: &GridField, nu: f64, dt: f64) -> (GridField, f64) {
    let k = HeatKernel::new(f.n());
    let mut g = f.clone();
    let loss = k.step(&mut g, nu, dt);
    (g, loss)
}

fn lagrange_weights(s: f64) -> [f64; 4] {
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

/// Periodic interpolation of cell-centred data at `(x1, x2)`.
pub fn interpolate(f: &GridField, x1: f64, x2: f64, mode: Interpolation) -> f64 {
    let n = f.n();
    let vals = f.values();
    let nf = n as f64;
    let u = x1 * nf - 0.5;
    let v = x2 * nf - 0.5;
    let i0 = u.floor();
    let j0 = v.floor();
    let (s, t) = (u - i0, v - j0);
    let (i0, j0) = (i0 as i64, j0 as i64);
    let at = |i: i64, j: i64| vals[(j.rem_euclid(n as i64) as usize) * n + i.rem_euclid(n as i64) as usize];
    match mode {
        Interpolation::Linear => {
            let a = at(i0, j0) * (1.0 - s) + at(i0 + 1, j0) * s;
            let b = at(i0, j0 + 1) * (1.0 - s) + at(i0 + 1, j0 + 1) * s;
            a * (1.0 - t) + b * t
        }
        Interpolation::Cubic | Interpolation::MonotoneCubic => {
            let wx = lagrange_weights(s);
            let wy = lagrange_weights(t);
            let mut acc = 0.0;
            for (dj, wyj) in wy.iter().enumerate() {
                if *wyj == 0.0 {
                    continue;
                }
                let j = j0 - 1 + dj as i64;
                let mut row = 0.0;
                for (di, wxi) in wx.iter().enumerate() {
                    if *wxi != 0.0 {
                        row += wxi * at(i0 - 1 + di as i64, j);
                    }
                }
                acc += wyj * row;
            }
            if mode == Interpolation::MonotoneCubic {
                let c = [at(i0, j0), at(i0 + 1, j0), at(i0, j0 + 1), at(i0 + 1, j0 + 1)];
                let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                acc.clamp(lo, hi)
            } else {
                acc
            }
        }
    }
}

/// Restores the mean after advection by moving values toward the bound
/// that has room, so the range of the data is not exceeded.
fn fix_mass(f: &mut GridField, target_sum: f64, lo: f64, hi: f64) {
    let cur = stable_sum(f.values().iter().copied());
    let delta = target_sum - cur;
    let len = f.values().len() as f64;
    if delta.abs() <= 1e-15 * len.max(cur.abs()) {
        return;
    }
    let room: Vec<f64> = f
        .values()
        .iter()
        .map(|&v| if delta > 0.0 { (hi - v).max(0.0) } else { (v - lo).max(0.0) })
        .collect();
    let total = stable_sum(room.iter().copied());
    if total > delta.abs() {
        let scale = delta / total;
        for (v, r) in f.values_mut().iter_mut().zip(&room) {
            *v += scale * r;
        }
    } else {
        let c = delta / len;
        for v in f.values_mut() {
            *v += c;
        }
    }
}

type DepartureKey = (Primitive, i8, u64);

pub struct Solver {
    config: SolverConfig,
    heat: HeatKernel,
    departures: HashMap<DepartureKey, Arc<Vec<[f64; 2]>>>,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Result<Self, SolveError> {
        if !(config.nu >= 0.0 && config.nu.is_finite()) {
            return Err(SolveError::BadViscosity(config.nu));
        }
        Ok(Solver {
            heat: HeatKernel::new(config.n),
            config,
            departures: HashMap::new(),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    fn departure_points(&mut self, seg: &Segment, h: f64) -> Arc<Vec<[f64; 2]>> {
        let key = (seg.field, seg.sign, h.to_bits());
        if let Some(d) = self.departures.get(&key) {
            return d.clone();
        }
        if self.departures.len() > 256 {
            self.departures.clear();
        }
        let n = self.config.n;
        let back = -(seg.sign as f64) * h;
        let field = seg.field;
        let pts: Vec<[f64; 2]> = (0..n * n)
            .into_par_iter()
            .map(|id| {
                let (x1, x2) = GridField::cell_center(n, id % n, id / n);
                let p = field.map(back, &TorusPoint::new(x1, x2));
                [p.x1, p.x2]
            })
            .collect();
        let d = Arc::new(pts);
        self.departures.insert(key, d.clone());
        d
    }

    fn advect(&mut self, f: &GridField, seg: &Segment, h: f64) -> GridField {
        let dep = self.departure_points(seg, h);
        let mode = self.config.interpolation;
        let values: Vec<f64> = dep
            .par_iter()
            .map(|p| interpolate(f, p[0], p[1], mode))
            .collect();
        let mut g = GridField::from_values(f.n(), values).expect("same grid");
        let (lo, hi) = f.min_max();
        let target = stable_sum(f.values().iter().copied());
        fix_mass(&mut g, target, lo, hi);
        g
    }

    fn row(t: f64, f: &GridField, dissipation: f64) -> TraceRow {
        TraceRow {
            t,
            mass: f.mass(),
            l1: f.norm(Norm::L1),
            l2: f.norm(Norm::L2),
            linf: f.norm(Norm::Linf),
            dissipation,
        }
    }

    /// Integrates from `t = 0` to `t_end`, returning snapshots at the
    /// requested times (clipped to `[0, t_end]`).
    pub fn solve(
        &mut self,
        f0: &GridField,
        prog: &FlowProgram,
        t_end: f64,
        snapshot_times: &[f64],
    ) -> Result<SolveOutput, SolveError> {
        self.solve_observed(f0, prog, t_end, snapshot_times, |_, _| true)
    }

    /// Like [`Solver::solve`], calling `observe` at every snapshot time.
    /// Integration stops early once `observe` returns `false`; the output
    /// then ends at that time.
    pub fn solve_observed<F: FnMut(f64, &GridField) -> bool>(
        &mut self,
        f0: &GridField,
        prog: &FlowProgram,
        t_end: f64,
        snapshot_times: &[f64],
        mut observe: F,
    ) -> Result<SolveOutput, SolveError> {
        if f0.n() != self.config.n {
            return Err(SolveError::GridMismatch {
                want: self.config.n,
                got: f0.n(),
            });
        }
        if !(0.0..=prog.horizon_f() * (1.0 + 1e-15)).contains(&t_end) {
            return Err(SolveError::TimeOutOfRange {
                t_end,
                horizon: prog.horizon_f(),
            });
        }
        let nu = self.config.nu;
        let mut stops: Vec<f64> = prog
            .breakpoints()
            .into_iter()
            .chain(snapshot_times.iter().copied())
            .filter(|&t| t > 0.0 && t < t_end)
            .collect();
        stops.push(t_end);
        stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
        stops.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));

        let mut snaps_wanted: Vec<f64> = snapshot_times
            .iter()
            .copied()
            .filter(|&t| (0.0..=t_end).contains(&t))
            .collect();
        snaps_wanted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut snapshots = Vec::new();
        let take_snap = |t: f64, f: &GridField, snaps: &mut Vec<(f64, GridField)>| {
            for &s in &snaps_wanted {
                if (s - t).abs() <= 1e-14 * t.abs().max(1.0) && !snaps.iter().any(|x: &(f64, GridField)| x.0 == s) {
                    snaps.push((s, f.clone()));
                }
            }
        };

        let mut f = f0.clone();
        let mut diss = 0.0;
        let mut rows = vec![Self::row(0.0, &f, 0.0)];
        let mut records = Vec::new();
        if self.config.record_fields {
            records.push(Record {
                t: 0.0,
                field: f.clone(),
                piece: None,
            });
        }
        take_snap(0.0, &f, &mut snapshots);
        let mut max_substep: f64 = 0.0;
        let mut t = 0.0;
        if snapshots.len() == 1 && !observe(0.0, &f) {
            return Ok(self.output(f0, f, snapshots, rows, records, max_substep));
        }
        for &b in &stops {
            let a = t;
            let len = b - a;
            if len <= 0.0 {
                continue;
            }
            let mid = 0.5 * (a + b);
            match prog.segment_at(mid).cloned() {
                None if self.config.record_fields => {
                    let count = ((len / self.config.substep(0)) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                    let h = len / count as f64;
                    max_substep = max_substep.max(h);
                    for step in 0..count {
                        diss += self.heat.step(&mut f, nu, h);
                        records.push(Record {
                            t: a + (step + 1) as f64 * h,
                            field: f.clone(),
                            piece: None,
                        });
                    }
                }
                None => {
                    diss += self.heat.step(&mut f, nu, len);
                    max_substep = max_substep.max(len);
                }
                Some(seg) => {
                    let dt = self.config.substep(seg.level);
                    let count = ((len / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                    let h = len / count as f64;
                    max_substep = max_substep.max(h);
                    let mut pending = 0.5 * h;
                    for step in 0..count {
                        diss += self.heat.step(&mut f, nu, pending);
                        let last_state = f.clone();
                        f = self.advect(&f, &seg, h);
                        if f.values().iter().any(|v| !v.is_finite()) {
                            return Err(SolveError::NonFinite {
                                t: a + (step as f64 + 1.0) * h,
                                last_state: Box::new(last_state),
                            });
                        }
                        if self.config.record_fields {
                            diss += self.heat.step(&mut f, nu, 0.5 * h);
                            pending = 0.5 * h;
                            records.push(Record {
                                t: a + (step + 1) as f64 * h,
                                field: f.clone(),
                                piece: Some((seg.field, seg.sign)),
                            });
                        } else {
                            pending = if step + 1 == count { 0.5 * h } else { h };
                        }
                    }
                    if !self.config.record_fields {
                        diss += self.heat.step(&mut f, nu, pending);
                    }
                }
            }
            t = b;
            if f.values().iter().any(|v| !v.is_finite()) {
                return Err(SolveError::NonFinite {
                    t,
                    last_state: Box::new(f),
                });
            }
            rows.push(Self::row(t, &f, diss));
            let before = snapshots.len();
            take_snap(t, &f, &mut snapshots);
            if snapshots.len() > before && !observe(t, &f) {
                break;
            }
        }
        Ok(self.output(f0, f, snapshots, rows, records, max_substep))
    }

    fn output(
        &self,
        f0: &GridField,
        f: GridField,
        mut snapshots: Vec<(f64, GridField)>,
        rows: Vec<TraceRow>,
        records: Vec<Record>,
        max_substep: f64,
    ) -> SolveOutput {
        snapshots.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        SolveOutput {
            final_field: f,
            snapshots,
            trace: SolveTrace {
                rows,
                records,
                initial_range: f0.min_max(),
                config: self.config.clone(),
                max_substep,
            },
        }
    }
}

/// One-shot convenience wrapper around [`Solver`].
pub fn solve(
    f0: &GridField,
    prog: &FlowProgram,
    t_end: f64,
    snapshot_times: &[f64],
    config: &SolverConfig,
) -> Result<SolveOutput, SolveError> {
    Solver::new(config.clone())?.solve(f0, prog, t_end, snapshot_times)
}

/// Smooth space-time test function: a sum of terms
/// `p(t) * trig(2 pi (j1 x1 + j2 x2))` with polynomial `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub terms: Vec<TestTerm>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestTerm {
    pub j1: i64,
    pub j2: i64,
    /// `cos` when false, `sin` when true.
    pub sine: bool,
    /// Coefficients of `p`, lowest degree first.
    pub poly: Vec<f64>,
}

impl TestTerm {
    fn poly_at(&self, t: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for c in self.poly.iter().rev() {
            dp = dp * t + p;
            p = p * t + c;
        }
        (p, dp)
    }
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        TestFunction {
            terms: vec![TestTerm {
                j1: 0,
                j2: 0,
                sine: false,
                poly: vec![c],
            }],
        }
    }

    /// `(phi, d_t phi, grad phi, lap phi)` at `(x, t)`.
    pub fn eval(&self, x1: f64, x2: f64, t: f64) -> (f64, f64, [f64; 2], f64) {
        let mut out = (0.0, 0.0, [0.0, 0.0], 0.0);
        for term in &self.terms {
            let w = 2.0 * PI;
            let arg = w * (term.j1 as f64 * x1 + term.j2 as f64 * x2);
            let (s, c) = arg.sin_cos();
            let (val, dval) = if term.sine { (s, c) } else { (c, -s) };
            let (p, dp) = term.poly_at(t);
            let lam = w * w * ((term.j1 * term.j1 + term.j2 * term.j2) as f64);
            out.0 += p * val;
            out.1 += dp * val;
            out.2[0] += p * dval * w * term.j1 as f64;
            out.2[1] += p * dval * w * term.j2 as f64;
            out.3 -= p * lam * val;
        }
        out
    }
}

/// `| int f(T) phi(T) - int f0 phi(0) - int_0^T int f (d_t phi + u.grad phi
/// + nu lap phi) |`, with the time integral taken by the trapezoid rule
/// over the recorded substeps.
pub fn trace_residual(trace: &SolveTrace, phi: &TestFunction) -> Result<f64, SolveError> {
    let recs = &trace.records;
    if recs.len() < 2 {
        return Err(SolveError::NoRecords);
    }
    let nu = trace.config.nu;
    let n = trace.config.n;
    let pair = |f: &GridField, t: f64, piece: Option<(Primitive, i8)>| -> (f64, f64) {
        let vals = f.values();
        let parts: Vec<(f64, f64)> = (0..n * n)
            .into_par_iter()
            .map(|id| {
                let (x1, x2) = GridField::cell_center(n, id % n, id / n);
                let (p, pt, g, lap) = phi.eval(x1, x2, t);
                let u = match piece {
                    Some((prim, sign)) => {
                        let v = prim.velocity(&TorusPoint::new(x1, x2));
                        [sign as f64 * v[0], sign as f64 * v[1]]
                    }
                    None => [0.0, 0.0],
                };
                let fv = vals[id];
                (fv * p, fv * (pt + u[0] * g[0] + u[1] * g[1] + nu * lap))
            })
            .collect();
        let len = (n * n) as f64;
        (
            stable_sum(parts.iter().map(|p| p.0)) / len,
            stable_sum(parts.iter().map(|p| p.1)) / len,
        )
    };
    let first = &recs[0];
    let last = recs.last().unwrap();
    let (start_pair, _) = pair(&first.field, first.t, None);
    let (end_pair, _) = pair(&last.field, last.t, None);
    let mut integral = 0.0;
    for w in recs.windows(2) {
        let piece = w[1].piece;
        let (_, ga) = pair(&w[0].field, w[0].t, piece);
        let (_, gb) = pair(&w[1].field, w[1].t, piece);
        integral += 0.5 * (ga + gb) * (w[1].t - w[0].t);
    }
    Ok((end_pair - start_pair - integral).abs())
}
