//! Exact Lagrangian transport: flow programs, pullback of initial data and
//! gridded snapshots of `f0 . X_t^{-1}`.

use std::sync::Arc;

use num_traits::{One, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::composite::{validate_fractal, CompositeError, FieldSpec, FractalSpec, MixSpec};
use crate::coord::{exact_from_rational, rational_f64, Coord, Exact};
use crate::flows::{digit_shift, Primitive, ShearSpec, SwapPhase, SwapSpec, TorusPoint};
use crate::grid::GridField;
use crate::schedule::{generate_schedule, pow2, ratio, swap_start_time, Payload, Rational, ScheduleFamily};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("time {t} outside the program horizon [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("horizon {horizon} exceeds the field's domain end {end}")]
    HorizonTooLong { horizon: String, end: String },
    #[error("schedule time {0} does not fit exact coordinates")]
    ExactOverflow(String),
    #[error("fractal spec is not valid: {0}")]
    InvalidSpec(String),
    #[error("spec has {have} levels, {need} requested")]
    TooShallow { have: usize, need: usize },
    #[error(transparent)]
    Composite(#[from] CompositeError),
}

/// One stationary piece `[start, end)` of a program, flowing along
/// `sign * field`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: Rational,
    pub end: Rational,
    pub start_x: Exact,
    pub end_x: Exact,
    pub start_f: f64,
    pub end_f: f64,
    pub field: Primitive,
    pub sign: i8,
    /// Level `k` of the primitive, used for step-size control.
    pub level: u32,
}

impl Segment {
    fn new(start: Rational, end: Rational, field: Primitive, sign: i8, level: u32) -> Result<Self, TransportError> {
        let sx = exact_from_rational(&start).ok_or_else(|| TransportError::ExactOverflow(start.to_string()))?;
        let ex = exact_from_rational(&end).ok_or_else(|| TransportError::ExactOverflow(end.to_string()))?;
        Ok(Segment {
            start_f: rational_f64(&start),
            end_f: rational_f64(&end),
            start,
            end,
            start_x: sx,
            end_x: ex,
            field,
            sign,
            level,
        })
    }

    pub fn velocity(&self, x: &TorusPoint<f64>) -> [f64; 2] {
        let v = self.field.velocity(x);
        let s = self.sign as f64;
        [s * v[0], s * v[1]]
    }

    /// Flow over local time `tau` measured from the segment start.
    pub fn map<C: Coord>(&self, tau: C, x: &TorusPoint<C>) -> TorusPoint<C> {
        let t = if self.sign > 0 { tau } else { -tau };
        self.field.map(t, x)
    }
}

/// Piecewise-stationary description of a velocity field on `[0, horizon]`.
/// Only active pieces are stored; the field vanishes between them.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowProgram {
    segments: Vec<Segment>,
    horizon: Rational,
    horizon_f: f64,
}

impl FlowProgram {
    pub fn new(mut segments: Vec<Segment>, horizon: Rational) -> Self {
        segments.sort_by(|a, b| a.start.cmp(&b.start));
        FlowProgram {
            horizon_f: rational_f64(&horizon),
            segments,
            horizon,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn horizon(&self) -> &Rational {
        &self.horizon
    }

    pub fn horizon_f(&self) -> f64 {
        self.horizon_f
    }

    /// Segment with `start <= t < end`.
    pub fn segment_at(&self, t: f64) -> Option<&Segment> {
        let idx = self.segments.partition_point(|s| s.start_f <= t);
        if idx == 0 {
            return None;
        }
        let s = &self.segments[idx - 1];
        (t < s.end_f).then_some(s)
    }

    pub fn velocity(&self, x: &TorusPoint<f64>, t: f64) -> [f64; 2] {
        match self.segment_at(t) {
            Some(s) => s.velocity(x),
            None => [0.0, 0.0],
        }
    }

    /// Every segment boundary plus `0` and the horizon, increasing.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![0.0, self.horizon_f];
        for s in &self.segments {
            out.push(s.start_f);
            out.push(s.end_f);
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }

    fn check_time<C: Coord>(&self, t: C) -> Result<(), TransportError> {
        let tf = t.to_f64();
        if tf < 0.0 || tf > self.horizon_f * (1.0 + 1e-15) {
            return Err(TransportError::TimeOutOfRange {
                t: tf,
                horizon: self.horizon_f,
            });
        }
        Ok(())
    }

    fn elapsed<C: Coord>(seg: &Segment, t: C) -> Option<C> {
        let start = C::from_exact(&seg.start_x);
        if t <= start {
            return None;
        }
        let end = C::from_exact(&seg.end_x);
        Some(if t < end { t - start } else { end - start })
    }

    /// `X_t(x)`.
    pub fn forward_point<C: Coord>(&self, t: C, x: &TorusPoint<C>) -> Result<TorusPoint<C>, TransportError> {
        self.check_time(t)?;
        let mut p = *x;
        for seg in &self.segments {
            match Self::elapsed(seg, t) {
                Some(tau) => p = seg.map(tau, &p),
                None => break,
            }
        }
        Ok(p)
    }

    /// `X_t^{-1}(x)`.
    pub fn inverse_point<C: Coord>(&self, t: C, x: &TorusPoint<C>) -> Result<TorusPoint<C>, TransportError> {
        self.check_time(t)?;
        let mut p = *x;
        let active = self.segments.partition_point(|s| C::from_exact(&s.start_x) < t);
        for seg in self.segments[..active].iter().rev() {
            if let Some(tau) = Self::elapsed(seg, t) {
                p = seg.map(-tau, &p);
            }
        }
        Ok(p)
    }
}

pub fn inverse_flow_point<C: Coord>(
    prog: &FlowProgram,
    t: C,
    x: &TorusPoint<C>,
) -> Result<TorusPoint<C>, TransportError> {
    prog.inverse_point(t, x)
}

fn check_horizon(spec: &FieldSpec, horizon: &Rational) -> Result<(), TransportError> {
    let end = spec.domain_end();
    if *horizon > end || *horizon < Rational::zero() {
        return Err(TransportError::HorizonTooLong {
            horizon: horizon.to_string(),
            end: end.to_string(),
        });
    }
    Ok(())
}

fn mix_segments(spec: &MixSpec) -> Result<Vec<Segment>, TransportError> {
    let mut out = Vec::new();
    for &(q, l) in spec.entries() {
        let s = SwapSpec { i: q.i, k: q.k, n: q.n, l };
        let start = swap_start_time(q).map_err(CompositeError::from)?;
        let w = pow2(-(q.k as i32));
        let mid = &start + &w * ratio(2, 1);
        let end = &start + &w * ratio(3, 1);
        out.push(Segment::new(start, mid.clone(), Primitive::Swap(s, SwapPhase::Whole), 1, q.k)?);
        out.push(Segment::new(mid, end, Primitive::Swap(s, SwapPhase::Halves), 1, q.k)?);
    }
    Ok(out)
}

/// Compiles a field into its program on `[0, horizon]`.
pub fn compile_flow(spec: &FieldSpec, horizon: &Rational) -> Result<FlowProgram, TransportError> {
    check_horizon(spec, horizon)?;
    let mut segs = match spec {
        FieldSpec::Still { .. } => Vec::new(),
        FieldSpec::Fractal(f) => {
            let sched = generate_schedule(&ScheduleFamily::Dyadic { taus: f.taus() })
                .map_err(CompositeError::from)?;
            let mut out = Vec::with_capacity(sched.len());
            for e in sched {
                if let Payload::Dyadic(p) = e.payload {
                    let lv = &f.levels[p.k as usize - 1];
                    let sh = ShearSpec::new(lv.axis, lv.l).map_err(CompositeError::from)?;
                    let end = e.end();
                    out.push(Segment::new(e.start, end, Primitive::Shear(sh), 1, p.k)?);
                }
            }
            out
        }
        FieldSpec::Mix(m) => mix_segments(m)?,
        FieldSpec::Mirrored(m) => {
            let fwd = mix_segments(m)?;
            let hundred = ratio(100, 1);
            let mut out = fwd.clone();
            for s in fwd {
                out.push(Segment::new(&hundred - &s.end, &hundred - &s.start, s.field, -1, s.level)?);
            }
            out
        }
    };
    let mut clipped = Vec::with_capacity(segs.len());
    for s in segs.drain(..) {
        if s.start >= *horizon {
            continue;
        }
        if s.end > *horizon {
            clipped.push(Segment::new(s.start, horizon.clone(), s.field, s.sign, s.level)?);
        } else {
            clipped.push(s);
        }
    }
    Ok(FlowProgram::new(clipped, horizon.clone()))
}

/// Initial datum evaluated pointwise on the torus.
pub trait ScalarSampler: Send + Sync {
    fn value(&self, x: &TorusPoint<f64>) -> f64;
    /// Upper bound on `|f0|`.
    fn sup_bound(&self) -> f64;
}

/// Built-in initial data.
#[derive(Clone, Debug, PartialEq)]
pub enum Datum {
    Constant(f64),
    /// `sin(2 pi x1)`.
    SinX1,
    /// `cos(2 pi (j1 x1 + j2 x2))`.
    Mode { j1: i64, j2: i64 },
    /// `sign(x1 - 1/2)` smoothed at scale `eps`; periodic.
    SmoothSign { eps: f64 },
    /// `(-1)^(floor(c x1) + floor(c x2))`.
    Checkerboard { cells: u32 },
    /// Periodic Gaussian bump of width `sigma` centred at `(c1, c2)`.
    Bump { c1: f64, c2: f64, sigma: f64 },
}

impl ScalarSampler for Datum {
    fn value(&self, x: &TorusPoint<f64>) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Datum::Constant(c) => c,
            Datum::SinX1 => (2.0 * PI * x.x1).sin(),
            Datum::Mode { j1, j2 } => (2.0 * PI * (j1 as f64 * x.x1 + j2 as f64 * x.x2)).cos(),
            Datum::SmoothSign { eps } => -((2.0 * PI * x.x1).sin() / (2.0 * PI * eps)).tanh(),
            Datum::Checkerboard { cells } => {
                let c = cells as f64;
                let s = (x.x1 * c).floor() as i64 + (x.x2 * c).floor() as i64;
                if s.rem_euclid(2) == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Datum::Bump { c1, c2, sigma } => {
                let d = |a: f64, b: f64| {
                    let t = (a - b).rem_euclid(1.0);
                    t.min(1.0 - t)
                };
                let r2 = d(x.x1, c1).powi(2) + d(x.x2, c2).powi(2);
                (-r2 / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    fn sup_bound(&self) -> f64 {
        match *self {
            Datum::Constant(c) => c.abs(),
            _ => 1.0,
        }
    }
}

/// `beta . f0` for a scalar map `beta` with known sup bound.
pub struct Renormalized<S> {
    pub inner: S,
    pub beta: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub bound: f64,
}

impl<S: ScalarSampler> ScalarSampler for Renormalized<S> {
    fn value(&self, x: &TorusPoint<f64>) -> f64 {
        (self.beta)(self.inner.value(x))
    }
    fn sup_bound(&self) -> f64 {
        self.bound
    }
}

impl<S: ScalarSampler + ?Sized> ScalarSampler for &S {
    fn value(&self, x: &TorusPoint<f64>) -> f64 {
        (**self).value(x)
    }
    fn sup_bound(&self) -> f64 {
        (**self).sup_bound()
    }
}

impl<S: ScalarSampler + ?Sized> ScalarSampler for Box<S> {
    fn value(&self, x: &TorusPoint<f64>) -> f64 {
        (**self).value(x)
    }
    fn sup_bound(&self) -> f64 {
        (**self).sup_bound()
    }
}

/// `f0(X_t^{-1}(x))`.
pub fn lagrangian_value<S: ScalarSampler + ?Sized>(
    f0: &S,
    prog: &FlowProgram,
    x: &TorusPoint<f64>,
    t: f64,
) -> Result<f64, TransportError> {
    Ok(f0.value(&prog.inverse_point(t, x)?))
}

/// Exact solution at time `t` sampled at the cell centres of an `n x n` grid.
pub fn snapshot<S: ScalarSampler + ?Sized>(
    prog: &FlowProgram,
    f0: &S,
    t: f64,
    n: usize,
) -> Result<GridField, TransportError> {
    prog.check_time(t)?;
    Ok(GridField::from_fn(n, |x1, x2| {
        let p = prog
            .inverse_point(t, &TorusPoint::new(x1, x2))
            .expect("time checked above");
        f0.value(&p)
    }))
}

/// Exact solutions at `t = 1` along the depth-`k_even` and depth-`k_odd`
/// truncations of `spec`.
pub fn even_odd_endpoints<S: ScalarSampler + ?Sized>(
    f0: &S,
    spec: &FractalSpec,
    k_even: usize,
    k_odd: usize,
    n: usize,
) -> Result<(GridField, GridField), TransportError> {
    let need = k_even.max(k_odd);
    if spec.depth() < need {
        return Err(TransportError::TooShallow {
            have: spec.depth(),
            need,
        });
    }
    let v = validate_fractal(&spec.truncated(need));
    if !v.is_valid() {
        return Err(TransportError::InvalidSpec(format!("{:?}", v.levels)));
    }
    let one = Rational::one();
    let even = compile_flow(&FieldSpec::Fractal(spec.truncated(k_even)), &one)?;
    let odd = compile_flow(&FieldSpec::Fractal(spec.truncated(k_odd)), &one)?;
    Ok((snapshot(&even, f0, 1.0, n)?, snapshot(&odd, f0, 1.0, n)?))
}

/// Limits of the even and odd endpoints in closed form: `f0` and
/// `f0 . y^{(i1; L1)}_{-2 tau1}`.
pub fn parity_targets<S: ScalarSampler + ?Sized>(
    f0: &S,
    spec: &FractalSpec,
    n: usize,
) -> Result<(GridField, GridField), TransportError> {
    if spec.depth() == 0 {
        return Err(TransportError::TooShallow { have: 0, need: 1 });
    }
    let sh = spec.shear(1).map_err(CompositeError::from)?;
    let back = -2.0 * rational_f64(&spec.levels[0].tau);
    let even = GridField::from_fn(n, |a, b| f0.value(&TorusPoint::new(a, b)));
    let odd = GridField::from_fn(n, |a, b| {
        f0.value(&crate::flows::shear_map(&sh, back, &TorusPoint::new(a, b)))
    });
    Ok((even, odd))
}

/// `f0 . z_m` with `z_m(x) = 2^m x mod 1`.
pub fn mixing_snapshot<S: ScalarSampler + ?Sized>(f0: &S, m: u32, n: usize) -> GridField {
    GridField::from_fn(n, |a, b| f0.value(&digit_shift(m, &TorusPoint::new(a, b))))
}

/// Exact solution along a finite-depth mixing field at time `t`.
pub fn finite_depth_snapshot<S: ScalarSampler + ?Sized>(
    f0: &S,
    spec: &MixSpec,
    t: f64,
    n: usize,
) -> Result<GridField, TransportError> {
    let prog = compile_flow(&FieldSpec::Mix(spec.clone()), &ratio(50, 1))?;
    snapshot(&prog, f0, t, n)
}

/// Pullbacks of a whole grid of exact points, in parallel.
pub fn inverse_points_exact(
    prog: &FlowProgram,
    t: Exact,
    pts: &[TorusPoint<Exact>],
) -> Result<Vec<TorusPoint<Exact>>, TransportError> {
    pts.par_iter().map(|p| prog.inverse_point(t, p)).collect()
}
