//! Space-time velocity fields assembled from the primitive flows: fractal
//! shear fields on `[0, 1]`, binary-swap mixing fields on `[0, 50]` and
//! their time-mirrored extension to `[0, 100]`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_traits::{One, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::coord::rational_f64;
use crate::flows::{check_cancellation, FlowError, Primitive, ShearSpec, SwapSpec, TorusPoint};
use crate::schedule::{
    self, generate_schedule, pow2, ratio, swap_start_time, DyadicPair, QuadIndex, Rational,
    ScheduleEntry, ScheduleError, ScheduleFamily,
};
use crate::spectral::{Complex, Fft2};
use crate::transport::{compile_flow, FlowProgram};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositeError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("time {t} outside the field's domain [0, {end}]")]
    TimeOutOfDomain { t: f64, end: f64 },
    #[error("level {level}: no M up to {cap} brings the weak-* distance below {eps} (best {best})")]
    ProximityUnattainable { level: usize, eps: f64, best: f64, cap: u64 },
    #[error("swap entries must form a lex prefix: {0}")]
    NotPrefix(String),
    #[error("level {k}: L = {l} must be at least k + 1")]
    SwapWavenumber { k: u32, l: u32 },
    #[error("cannot parse field spec: {0}")]
    Parse(String),
    #[error("need {need} epsilon values, got {got}")]
    EpsilonCount { need: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShearLevel {
    pub axis: u8,
    pub l: u64,
    pub tau: Rational,
}

/// Parameters `(i_k, L_k, tau_k)` for levels `k = 1..=K`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FractalSpec {
    pub levels: Vec<ShearLevel>,
}

impl FractalSpec {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn truncated(&self, depth: usize) -> FractalSpec {
        FractalSpec {
            levels: self.levels[..depth.min(self.levels.len())].to_vec(),
        }
    }

    pub fn shear(&self, k: usize) -> Result<ShearSpec, FlowError> {
        let lv = &self.levels[k - 1];
        ShearSpec::new(lv.axis, lv.l)
    }

    pub fn taus(&self) -> Vec<Rational> {
        self.levels.iter().map(|l| l.tau.clone()).collect()
    }

    pub fn schedule(&self) -> Result<Vec<ScheduleEntry>, ScheduleError> {
        generate_schedule(&ScheduleFamily::Dyadic { taus: self.taus() })
    }

    /// Depth-`K` parameters with the smallest admissible wavenumber at each
    /// level and no proximity constraint.
    pub fn canonical(depth: usize) -> FractalSpec {
        let mut levels: Vec<ShearLevel> = Vec::with_capacity(depth);
        for n in 0..depth {
            if n == 0 {
                levels.push(FractalSpec::base_level());
                continue;
            }
            let prev_l = if n >= 2 { levels[n - 2].l } else { 1 };
            let cur = &levels[n - 1];
            let min_l = 1u64 << (2 * n + 2);
            let mut m = 0u64;
            while 2 * prev_l * (2 * m + 1) < min_l {
                m += 1;
            }
            levels.push(ShearLevel {
                axis: 3 - cur.axis,
                l: 2 * prev_l * (2 * m + 1),
                tau: Rational::one() / ratio(4 * cur.l as i64, 1),
            });
        }
        FractalSpec { levels }
    }

    /// The first level shared by every construction: `(1, 4, 1/4)`.
    pub fn base_level() -> ShearLevel {
        ShearLevel {
            axis: 1,
            l: 4,
            tau: ratio(1, 4),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelCheck {
    pub k: usize,
    /// `tau_k < 2^{-2k}`.
    pub finiteness_strict: bool,
    /// `tau_k <= 2^{-2k}`.
    pub finiteness: bool,
    /// Cancellation of level `k - 1` against level `k`, for `k >= 2`.
    pub cancellation: Option<Result<(), FlowError>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FractalValidation {
    pub levels: Vec<LevelCheck>,
}

impl FractalValidation {
    /// Every level fits its time budget.
    pub fn finite(&self) -> bool {
        self.levels.iter().all(|l| l.finiteness)
    }

    /// Every consecutive pair of levels cancels.
    pub fn cancels(&self) -> bool {
        self.levels
            .iter()
            .all(|l| !matches!(l.cancellation, Some(Err(_))))
    }

    pub fn is_valid(&self) -> bool {
        self.finite() && self.cancels()
    }
}

pub fn validate_fractal(spec: &FractalSpec) -> FractalValidation {
    let mut levels = Vec::new();
    for (idx, lv) in spec.levels.iter().enumerate() {
        let k = idx + 1;
        let budget = pow2(-2 * k as i32);
        let positive = lv.tau > Rational::zero();
        let cancellation = if k >= 2 {
            let prev = &spec.levels[idx - 1];
            Some(
                ShearSpec::new(prev.axis, prev.l)
                    .and_then(|a| ShearSpec::new(lv.axis, lv.l).map(|b| (a, b)))
                    .and_then(|(a, b)| check_cancellation(&a, &prev.tau, &b, &lv.tau)),
            )
        } else {
            None
        };
        levels.push(LevelCheck {
            k,
            finiteness_strict: positive && lv.tau < budget,
            finiteness: positive && lv.tau <= budget,
            cancellation,
        });
    }
    FractalValidation { levels }
}

/// `t_{k,m}` in floating point.
fn shear_start_f64(k: u32, m: u64) -> f64 {
    let mut t = m as f64 * 2f64.powi(1 - 2 * k as i32);
    for kp in 1..k {
        t += ((m >> (k - kp)) + 1) as f64 * 2f64.powi(-2 * kp as i32);
    }
    t
}

/// Velocity of the depth-`K` fractal field at `(x, t)`, `t` in `[0, 1]`.
pub fn fractal_velocity(spec: &FractalSpec, x: &TorusPoint<f64>, t: f64) -> Result<[f64; 2], CompositeError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(CompositeError::TimeOutOfDomain { t, end: 1.0 });
    }
    for (idx, lv) in spec.levels.iter().enumerate() {
        let k = idx as u32 + 1;
        let tau = rational_f64(&lv.tau);
        // t_{k,m} increases with m, so the last start not after t is the
        // only candidate at this level
        let (mut lo, mut hi) = (0u64, 1u64 << k);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if shear_start_f64(k, mid) <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = shear_start_f64(k, lo);
        if s <= t && t <= s + tau {
            return Ok(crate::flows::shear_velocity(&ShearSpec::new(lv.axis, lv.l)?, x));
        }
    }
    Ok([0.0, 0.0])
}

/// Binary swaps for every quadruple in a lex prefix, each with its own `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixSpec {
    entries: Vec<(QuadIndex, u32)>,
    timeline: Vec<(f64, f64, SwapSpec)>,
}

impl MixSpec {
    pub fn new(entries: Vec<(QuadIndex, u32)>) -> Result<Self, CompositeError> {
        let bound = entries.last().map(|e| e.0);
        let expected = match bound {
            None => Vec::new(),
            Some(b) => schedule::quad_prefix(b)?,
        };
        if expected.len() != entries.len() || expected.iter().zip(&entries).any(|(a, b)| *a != b.0) {
            return Err(CompositeError::NotPrefix(format!(
                "{} entries do not enumerate the prefix up to {}",
                entries.len(),
                bound.map(|b| b.to_string()).unwrap_or_default()
            )));
        }
        let mut timeline = Vec::with_capacity(entries.len());
        for &(q, l) in &entries {
            if l < q.k + 1 {
                return Err(CompositeError::SwapWavenumber { k: q.k, l });
            }
            let s = SwapSpec::new(q.i, q.k, q.n, l)?;
            timeline.push((rational_f64(&swap_start_time(q)?), rational_f64(&q.duration()), s));
        }
        timeline.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(MixSpec { entries, timeline })
    }

    /// Every quadruple with `k <= depth`, using `L = l_of(q)`.
    pub fn with_depth<F: Fn(QuadIndex) -> u32>(depth: u32, l_of: F) -> Result<Self, CompositeError> {
        if depth == 0 {
            return MixSpec::new(Vec::new());
        }
        let qs = schedule::quad_prefix(QuadIndex::depth_bound(depth))?;
        MixSpec::new(qs.into_iter().map(|q| (q, l_of(q))).collect())
    }

    /// Depth-`K` field with the smallest admissible `L = k + 1` everywhere.
    pub fn minimal(depth: u32) -> Result<Self, CompositeError> {
        MixSpec::with_depth(depth, |q| q.k + 1)
    }

    pub fn entries(&self) -> &[(QuadIndex, u32)] {
        &self.entries
    }

    pub fn max_level(&self) -> u32 {
        self.entries.iter().map(|e| e.0.k).max().unwrap_or(0)
    }

    pub fn max_l(&self) -> u32 {
        self.entries.iter().map(|e| e.1).max().unwrap_or(0)
    }

    pub fn swap(&self, q: QuadIndex) -> Option<SwapSpec> {
        self.entries
            .iter()
            .find(|e| e.0 == q)
            .map(|&(q, l)| SwapSpec { i: q.i, k: q.k, n: q.n, l })
    }

    fn active(&self, t: f64) -> Option<(f64, SwapSpec)> {
        let idx = self.timeline.partition_point(|e| e.0 <= t);
        if idx == 0 {
            return None;
        }
        let (start, dur, s) = self.timeline[idx - 1];
        if t < start + dur {
            Some((t - start, s))
        } else {
            None
        }
    }
}

/// Mixing field on `[0, 50]`; zero from `t = 42` on.
pub fn mixing_velocity(spec: &MixSpec, x: &TorusPoint<f64>, t: f64) -> Result<[f64; 2], CompositeError> {
    if !(0.0..=50.0).contains(&t) {
        return Err(CompositeError::TimeOutOfDomain { t, end: 50.0 });
    }
    match spec.active(t) {
        None => Ok([0.0, 0.0]),
        Some((local, s)) => Ok(crate::flows::swap_velocity(&s, local, x)?),
    }
}

/// `u(x, t)` on `[0, 50]` and `-u(x, 100 - t)` on `[50, 100]`.
pub fn mirrored_velocity(spec: &MixSpec, x: &TorusPoint<f64>, t: f64) -> Result<[f64; 2], CompositeError> {
    if !(0.0..=100.0).contains(&t) {
        return Err(CompositeError::TimeOutOfDomain { t, end: 100.0 });
    }
    if t <= 50.0 {
        mixing_velocity(spec, x, t)
    } else {
        let v = mixing_velocity(spec, x, 100.0 - t)?;
        Ok([-v[0], -v[1]])
    }
}

/// Any velocity field the library can transport along.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldSpec {
    /// Zero velocity on `[0, horizon]`.
    Still { horizon: Rational },
    Fractal(FractalSpec),
    Mix(MixSpec),
    Mirrored(MixSpec),
}

impl FieldSpec {
    pub fn domain_end(&self) -> Rational {
        match self {
            FieldSpec::Still { horizon } => horizon.clone(),
            FieldSpec::Fractal(_) => Rational::one(),
            FieldSpec::Mix(_) => ratio(50, 1),
            FieldSpec::Mirrored(_) => ratio(100, 1),
        }
    }

    pub fn velocity(&self, x: &TorusPoint<f64>, t: f64) -> Result<[f64; 2], CompositeError> {
        match self {
            FieldSpec::Still { horizon } => {
                let end = rational_f64(horizon);
                if (0.0..=end).contains(&t) {
                    Ok([0.0, 0.0])
                } else {
                    Err(CompositeError::TimeOutOfDomain { t, end })
                }
            }
            FieldSpec::Fractal(s) => fractal_velocity(s, x, t),
            FieldSpec::Mix(s) => mixing_velocity(s, x, t),
            FieldSpec::Mirrored(s) => mirrored_velocity(s, x, t),
        }
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSpec::Still { horizon } => {
                writeln!(f, "kind = still")?;
                writeln!(f, "horizon = {horizon}")
            }
            FieldSpec::Fractal(s) => {
                writeln!(f, "kind = fractal")?;
                for (idx, lv) in s.levels.iter().enumerate() {
                    writeln!(f, "level.{} = {} {} {}", idx + 1, lv.axis, lv.l, lv.tau)?;
                }
                Ok(())
            }
            FieldSpec::Mix(s) | FieldSpec::Mirrored(s) => {
                let kind = if matches!(self, FieldSpec::Mix(_)) { "mix" } else { "mirrored" };
                writeln!(f, "kind = {kind}")?;
                for (q, l) in &s.entries {
                    writeln!(f, "swap = {} {} {} {} {}", q.k, q.m, q.i, q.n, l)?;
                }
                Ok(())
            }
        }
    }
}

fn parse_rational(s: &str) -> Result<Rational, CompositeError> {
    let bad = || CompositeError::Parse(format!("bad rational {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            Ok(ratio(n, d))
        }
        None => Ok(ratio(s.trim().parse().map_err(|_| bad())?, 1)),
    }
}

impl FromStr for FieldSpec {
    type Err = CompositeError;

    /// Inverse of `Display`: `key = value` lines, `#` comments allowed.
    fn from_str(text: &str) -> Result<Self, CompositeError> {
        let mut kind = None;
        let mut horizon = None;
        let mut levels: Vec<(usize, ShearLevel)> = Vec::new();
        let mut swaps = Vec::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CompositeError::Parse(format!("expected key = value: {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let nums: Vec<&str> = value.split_whitespace().collect();
            let int = |s: &str| -> Result<u64, CompositeError> {
                s.parse().map_err(|_| CompositeError::Parse(format!("bad integer {s:?}")))
            };
            if key == "kind" {
                kind = Some(value.to_string());
            } else if key == "horizon" {
                horizon = Some(parse_rational(value)?);
            } else if let Some(k) = key.strip_prefix("level.") {
                if nums.len() != 3 {
                    return Err(CompositeError::Parse(format!("level needs 'axis L tau': {line:?}")));
                }
                let k: usize = k.parse().map_err(|_| CompositeError::Parse(key.into()))?;
                levels.push((
                    k,
                    ShearLevel {
                        axis: int(nums[0])? as u8,
                        l: int(nums[1])?,
                        tau: parse_rational(nums[2])?,
                    },
                ));
            } else if key == "swap" {
                if nums.len() != 5 {
                    return Err(CompositeError::Parse(format!("swap needs 'k m i n L': {line:?}")));
                }
                let q = QuadIndex::new(
                    int(nums[0])? as u32,
                    int(nums[1])? as u32,
                    int(nums[2])? as u8,
                    int(nums[3])?,
                )?;
                swaps.push((q, int(nums[4])? as u32));
            } else {
                return Err(CompositeError::Parse(format!("unknown key {key:?}")));
            }
        }
        match kind.as_deref() {
            Some("still") => Ok(FieldSpec::Still {
                horizon: horizon.ok_or_else(|| CompositeError::Parse("missing horizon".into()))?,
            }),
            Some("fractal") => {
                levels.sort_by_key(|l| l.0);
                if levels.iter().enumerate().any(|(i, l)| l.0 != i + 1) {
                    return Err(CompositeError::Parse("levels must be numbered 1..K".into()));
                }
                Ok(FieldSpec::Fractal(FractalSpec {
                    levels: levels.into_iter().map(|l| l.1).collect(),
                }))
            }
            Some("mix") => Ok(FieldSpec::Mix(MixSpec::new(swaps)?)),
            Some("mirrored") => Ok(FieldSpec::Mirrored(MixSpec::new(swaps)?)),
            other => Err(CompositeError::Parse(format!("unknown kind {other:?}"))),
        }
    }
}

/// Test functions `e^{2 pi i j.x} h_{q,r}(t)` with `|j|_inf <= j_max` and
/// tent functions `h_{q,r}` on the dyadic subintervals of `[0, horizon]` of
/// level `q <= q_max`, weighted by `2^{-(|j|_1 + q)} / radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFamily {
    pub j_max: i64,
    pub q_max: u32,
    pub horizon: f64,
    pub radius: f64,
    /// Largest quadrature grid for fields without closed-form coefficients.
    pub max_quad_n: usize,
}

impl TestFamily {
    pub fn new(horizon: f64) -> Self {
        TestFamily {
            j_max: 32,
            q_max: 6,
            horizon,
            radius: 1.0,
            max_quad_n: 1024,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakStarDistance {
    pub value: f64,
    /// Some field had structure finer than the quadrature grid.
    pub under_resolved: bool,
}

/// Fourier coefficients `int u_c e^{-2 pi i j.x} dx` for `|j|_inf <= j_max`,
/// indexed `(j2 + j_max) * (2 j_max + 1) + (j1 + j_max)`.
fn primitive_coefficients(p: &Primitive, fam: &TestFamily) -> (Vec<[Complex; 2]>, bool) {
    let side = (2 * fam.j_max + 1) as usize;
    let zero = Complex::new(0.0, 0.0);
    let mut out = vec![[zero, zero]; side * side];
    let idx = |j1: i64, j2: i64| ((j2 + fam.j_max) as usize) * side + (j1 + fam.j_max) as usize;
    match p {
        Primitive::Still => (out, false),
        Primitive::Shear(s) => {
            // square wave of period 1/L: only odd multiples of L survive
            let l = s.l as i64;
            let mut q = -(fam.j_max / l);
            while q * l <= fam.j_max {
                if q % 2 != 0 {
                    let c = Complex::new(0.0, -2.0 / (std::f64::consts::PI * q as f64));
                    let (j1, j2) = if s.i == 1 { (0, q * l) } else { (q * l, 0) };
                    out[idx(j1, j2)][(s.i - 1) as usize] = c;
                }
                q += 1;
            }
            (out, false)
        }
        Primitive::Swap(s, _) => {
            let need = 1usize << (s.l + 2).max(s.k + 3);
            let n = need.clamp(4 * fam.j_max as usize, fam.max_quad_n.max(4 * fam.j_max as usize));
            let under = n < need;
            let fft = Fft2::new(n);
            let h = 1.0 / n as f64;
            let samples: Vec<[f64; 2]> = (0..n * n)
                .into_par_iter()
                .map(|id| {
                    let x = TorusPoint::new(((id % n) as f64 + 0.5) * h, ((id / n) as f64 + 0.5) * h);
                    p.velocity(&x)
                })
                .collect();
            let norm = 1.0 / (n * n) as f64;
            for c in 0..2 {
                let comp: Vec<f64> = samples.iter().map(|v| v[c]).collect();
                let spec = fft.forward(&comp);
                for j2 in -fam.j_max..=fam.j_max {
                    for j1 in -fam.j_max..=fam.j_max {
                        let a = j1.rem_euclid(n as i64) as usize;
                        let b = j2.rem_euclid(n as i64) as usize;
                        // undo the half-cell offset of the sample points
                        let phase = std::f64::consts::PI * (j1 + j2) as f64 * h;
                        let shift = Complex::new(phase.cos(), -phase.sin());
                        out[idx(j1, j2)][c] = spec[b * n + a] * norm * shift;
                    }
                }
            }
            (out, under)
        }
    }
}

/// `int_a^b` of the tent with apex 1 at `c` and half-width `h`.
fn tent_integral(c: f64, h: f64, a: f64, b: f64) -> f64 {
    // antiderivative of max(0, 1 - |t - c| / h)
    let anti = |t: f64| {
        let s = ((t - c) / h).clamp(-1.0, 1.0);
        h * if s <= 0.0 {
            0.5 * (1.0 + s) * (1.0 + s)
        } else {
            1.0 - 0.5 * (1.0 - s) * (1.0 - s)
        }
    };
    anti(b) - anti(a)
}

/// Weak-* distance between two programs over `[0, family.horizon]`.
pub fn weak_star_distance(a: &FlowProgram, b: &FlowProgram, fam: &TestFamily) -> WeakStarDistance {
    let mut cuts = vec![0.0, fam.horizon];
    for p in [a, b] {
        for s in p.segments() {
            for t in [s.start_f, s.end_f] {
                if t > 0.0 && t < fam.horizon {
                    cuts.push(t);
                }
            }
        }
    }
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();

    let mut cache: HashMap<Primitive, (Vec<[Complex; 2]>, bool)> = HashMap::new();
    let mut under = false;
    // per elementary interval: list of (coefficient key, sign)
    let mut pieces: Vec<(f64, f64, Vec<(Primitive, f64)>)> = Vec::new();
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let mut terms = Vec::new();
        for (prog, sgn) in [(a, 1.0), (b, -1.0)] {
            if let Some(seg) = prog.segment_at(mid) {
                if seg.field.is_still() {
                    continue;
                }
                let key = seg.field;
                if !cache.contains_key(&key) {
                    let c = primitive_coefficients(&key, fam);
                    under |= c.1;
                    cache.insert(key, c);
                }
                terms.push((key, sgn * seg.sign as f64));
            }
        }
        if !terms.is_empty() {
            pieces.push((w[0], w[1], terms));
        }
    }

    let side = (2 * fam.j_max + 1) as usize;
    let mut total = 0.0;
    for q in 0..=fam.q_max {
        let count = 1usize << q;
        let width = fam.horizon / count as f64;
        let partial: f64 = (0..count)
            .into_par_iter()
            .map(|r| {
                let c = (r as f64 + 0.5) * width;
                let zero = Complex::new(0.0, 0.0);
                let mut acc = vec![[zero, zero]; side * side];
                let mut touched = false;
                for (lo, hi, terms) in &pieces {
                    let wgt = tent_integral(c, 0.5 * width, *lo, *hi);
                    if wgt == 0.0 {
                        continue;
                    }
                    touched = true;
                    for (key, sgn) in terms {
                        let coeffs = &cache[key].0;
                        for (dst, src) in acc.iter_mut().zip(coeffs) {
                            dst[0] += src[0] * (wgt * sgn);
                            dst[1] += src[1] * (wgt * sgn);
                        }
                    }
                }
                if !touched {
                    return 0.0;
                }
                let mut s = 0.0;
                for j2 in -fam.j_max..=fam.j_max {
                    for j1 in -fam.j_max..=fam.j_max {
                        let v = acc[((j2 + fam.j_max) as usize) * side + (j1 + fam.j_max) as usize];
                        let mag = v[0].norm() + v[1].norm();
                        if mag > 0.0 {
                            s += mag * 2f64.powi(-((j1.abs() + j2.abs()) as i32));
                        }
                    }
                }
                s
            })
            .sum();
        total += partial * 2f64.powi(-(q as i32));
    }
    WeakStarDistance {
        value: total / fam.radius,
        under_resolved: under,
    }
}

/// Search controls for [`build_vv_params`].
#[derive(Clone, Debug)]
pub struct VvSearch {
    pub family: TestFamily,
    pub m_cap: u64,
}

impl Default for VvSearch {
    fn default() -> Self {
        VvSearch {
            family: TestFamily::new(1.0),
            m_cap: 1 << 20,
        }
    }
}

/// Extends `spec` by one level: alternate axis, `tau = 1 / (4 L_n)` and
/// `L = 2 L_{n-1} (2M + 1)` with `M` the smallest value meeting the size
/// bound and the proximity budget `eps`. Returns the distance achieved.
pub fn extend_vv(spec: &FractalSpec, eps: f64, search: &VvSearch) -> Result<(FractalSpec, f64), CompositeError> {
    let n = spec.depth();
    if n == 0 {
        return Ok((
            FractalSpec {
                levels: vec![FractalSpec::base_level()],
            },
            0.0,
        ));
    }
    let cur = &spec.levels[n - 1];
    let prev_l = if n >= 2 { spec.levels[n - 2].l } else { 1 };
    let axis = 3 - cur.axis;
    let tau = Rational::one() / ratio(4 * cur.l as i64, 1);
    let min_l = 1u64 << (2 * n + 2);
    let base = compile_flow(&FieldSpec::Fractal(spec.clone()), &Rational::one())
        .map_err(|e| CompositeError::Parse(e.to_string()))?;
    // smallest M with 2 L_{n-1} (2M + 1) >= 2^{2n+2}
    let mut m = (min_l.div_ceil(2 * prev_l)).saturating_sub(1) / 2;
    while 2 * prev_l * (2 * m + 1) < min_l {
        m += 1;
    }
    let mut best = f64::INFINITY;
    while m <= search.m_cap {
        let l = 2 * prev_l * (2 * m + 1);
        let mut next = spec.clone();
        next.levels.push(ShearLevel { axis, l, tau: tau.clone() });
        let prog = compile_flow(&FieldSpec::Fractal(next.clone()), &Rational::one())
            .map_err(|e| CompositeError::Parse(e.to_string()))?;
        let d = weak_star_distance(&prog, &base, &search.family).value;
        best = best.min(d);
        if d <= eps {
            return Ok((next, d));
        }
        m += 1;
    }
    Err(CompositeError::ProximityUnattainable {
        level: n + 1,
        eps,
        best,
        cap: search.m_cap,
    })
}

/// Full parameter construction from the base tuple: `eps[n - 1]` bounds the
/// distance between the depth-`n` and depth-`n + 1` fields.
pub fn build_vv_params(depth: usize, eps: &[f64], search: &VvSearch) -> Result<FractalSpec, CompositeError> {
    if depth > 0 && eps.len() + 1 < depth {
        return Err(CompositeError::EpsilonCount {
            need: depth - 1,
            got: eps.len(),
        });
    }
    let mut spec = FractalSpec::default();
    for n in 0..depth {
        let e = if n == 0 { f64::INFINITY } else { eps[n - 1] };
        spec = extend_vv(&spec, e, search)?.0;
    }
    Ok(spec)
}

/// Indices `(k, m)` whose shear is active at `t`, for diagnostics.
pub fn active_shear(spec: &FractalSpec, t: f64) -> Option<DyadicPair> {
    for (idx, lv) in spec.levels.iter().enumerate() {
        let k = idx as u32 + 1;
        let tau = rational_f64(&lv.tau);
        for m in 0..(1u64 << k) {
            let s = shear_start_f64(k, m);
            if s <= t && t <= s + tau {
                return Some(DyadicPair { k, m });
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_levels() {
        let s = FractalSpec::canonical(3);
        let ls: Vec<u64> = s.levels.iter().map(|l| l.l).collect();
        assert_eq!(ls, vec![4, 18, 72]);
        assert_eq!(s.levels[1].tau, ratio(1, 16));
        assert_eq!(s.levels[2].tau, ratio(1, 72));
        assert!(validate_fractal(&s).is_valid());
    }

    #[test]
    fn base_tuple_validates() {
        let spec = FractalSpec {
            levels: vec![FractalSpec::base_level()],
        };
        let v = validate_fractal(&spec);
        assert!(v.is_valid());
        assert!(!v.levels[0].finiteness_strict);
    }

    #[test]
    fn tent_integral_total() {
        assert!((tent_integral(0.5, 0.5, 0.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((tent_integral(0.5, 0.5, 0.0, 0.5) - 0.25).abs() < 1e-15);
        assert_eq!(tent_integral(0.5, 0.25, 0.8, 1.0), 0.0);
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = FieldSpec::Fractal(FractalSpec {
            levels: vec![
                FractalSpec::base_level(),
                ShearLevel { axis: 2, l: 18, tau: ratio(1, 16) },
            ],
        });
        let text = spec.to_string();
        assert_eq!(text.parse::<FieldSpec>().unwrap(), spec);
        let mix = FieldSpec::Mirrored(MixSpec::minimal(2).unwrap());
        assert_eq!(mix.to_string().parse::<FieldSpec>().unwrap(), mix);
    }

    #[test]
    fn mix_spec_requires_prefix() {
        let q = QuadIndex::new(1, 1, 2, 1).unwrap();
        assert!(MixSpec::new(vec![(q, 2)]).is_err());
        let p = QuadIndex::new(1, 1, 1, 1).unwrap();
        assert!(MixSpec::new(vec![(p, 1)]).is_err());
        assert!(MixSpec::new(vec![(p, 2), (q, 2)]).is_ok());
    }
}
