//! Primitive incompressible flows on the torus and their exact flow maps.
//!
//! Every map here is available in `f64` and in exact rational arithmetic
//! (see [`Coord`]). Velocities are only needed by the PDE solver and are
//! `f64`-valued.

use std::fmt;

use thiserror::Error;

use crate::coord::Coord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("axis must be 1 or 2, got {0}")]
    BadAxis(u8),
    #[error("shear wavenumber must be positive")]
    BadWavenumber,
    #[error("cancellation hypothesis failed: {0}")]
    Cancellation(&'static str),
    #[error("point lies outside the open rectangle")]
    OutsideRectangle,
    #[error("rectangle sides must be positive")]
    DegenerateRectangle,
    #[error("swap requires k >= 1, 1 <= n <= 2^floor(k/2) and L >= k + 1")]
    BadSwap,
    #[error("time {0} outside the swap window [0, 3 * 2^-k]")]
    SwapTime(f64),
}

/// Point of the torus, stored as its representative in `[0, 1)^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusPoint<C> {
    pub x1: C,
    pub x2: C,
}

impl<C: Coord> TorusPoint<C> {
    pub fn new(x1: C, x2: C) -> Self {
        TorusPoint {
            x1: x1.frac(),
            x2: x2.frac(),
        }
    }

    pub fn coord(&self, axis: u8) -> C {
        if axis == 1 {
            self.x1
        } else {
            self.x2
        }
    }

    pub fn with_coord(&self, axis: u8, v: C) -> Self {
        if axis == 1 {
            TorusPoint::new(v, self.x2)
        } else {
            TorusPoint::new(self.x1, v)
        }
    }

    /// Coordinate swap `(x1, x2) -> (x2, x1)`.
    pub fn swapped(&self) -> Self {
        TorusPoint {
            x1: self.x2,
            x2: self.x1,
        }
    }

    pub fn to_f64(&self) -> TorusPoint<f64> {
        TorusPoint {
            x1: self.x1.to_f64(),
            x2: self.x2.to_f64(),
        }
    }
}

/// Distance on the torus in the max-norm of the wrapped difference.
pub fn torus_distance(a: &TorusPoint<f64>, b: &TorusPoint<f64>) -> f64 {
    let wrap = |d: f64| {
        let d = d.rem_euclid(1.0);
        d.min(1.0 - d)
    };
    wrap(a.x1 - b.x1).max(wrap(a.x2 - b.x2))
}

fn check_axis(i: u8) -> Result<(), FlowError> {
    if i == 1 || i == 2 {
        Ok(())
    } else {
        Err(FlowError::BadAxis(i))
    }
}

fn other_axis(i: u8) -> u8 {
    3 - i
}

/// Shear along `e_i` whose direction alternates across strips of width
/// `1 / 2L` in the other coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ShearSpec {
    pub i: u8,
    pub l: u64,
}

impl ShearSpec {
    pub fn new(i: u8, l: u64) -> Result<Self, FlowError> {
        check_axis(i)?;
        if l == 0 {
            return Err(FlowError::BadWavenumber);
        }
        Ok(ShearSpec { i, l })
    }

    /// `+1` on even strips, `-1` on odd strips.
    pub fn sign_at<C: Coord>(&self, x: &TorusPoint<C>) -> i64 {
        let s = x.coord(other_axis(self.i)) * C::from_i64(2 * self.l as i64);
        if s.floor_i64().rem_euclid(2) == 0 {
            1
        } else {
            -1
        }
    }
}

impl fmt::Display for ShearSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "shear(i={}, L={})", self.i, self.l)
    }
}

pub fn shear_velocity(s: &ShearSpec, x: &TorusPoint<f64>) -> [f64; 2] {
    let v = s.sign_at(x) as f64;
    if s.i == 1 {
        [v, 0.0]
    } else {
        [0.0, v]
    }
}

/// Flow map of the shear over signed time `t`; the inverse is `t -> -t`.
pub fn shear_map<C: Coord>(s: &ShearSpec, t: C, x: &TorusPoint<C>) -> TorusPoint<C> {
    let sign = C::from_i64(s.sign_at(x));
    x.with_coord(s.i, x.coord(s.i) + sign * t)
}

/// `y2_{tau2}^2 . y1_{tau1} . y2_{tau2}^2 . y1_{tau1}` without checking
/// any hypotheses.
pub fn shear_cycle<C: Coord>(
    first: &ShearSpec,
    tau1: C,
    second: &ShearSpec,
    tau2: C,
    x: &TorusPoint<C>,
) -> TorusPoint<C> {
    let mut p = *x;
    for _ in 0..2 {
        p = shear_map(first, tau1, &p);
        p = shear_map(second, tau2, &p);
        p = shear_map(second, tau2, &p);
    }
    p
}

/// Hypotheses under which [`shear_cycle`] is the identity.
pub fn check_cancellation(
    first: &ShearSpec,
    tau1: &crate::schedule::Rational,
    second: &ShearSpec,
    tau2: &crate::schedule::Rational,
) -> Result<(), FlowError> {
    use crate::schedule::Rational;
    use num_integer::Integer;
    use num_traits::One;
    if first.i == second.i {
        return Err(FlowError::Cancellation("the two shears act on the same axis"));
    }
    let two = Rational::from_integer(2.into());
    let lhs = &two * tau2;
    let rhs = Rational::one() / Rational::from_integer((2 * first.l).into());
    if lhs != rhs {
        return Err(FlowError::Cancellation("2 tau2 must equal 1 / (2 L1)"));
    }
    let prod = Rational::from_integer((2 * second.l).into()) * tau1;
    if !prod.is_integer() || prod.to_integer().is_even() {
        return Err(FlowError::Cancellation("2 L2 tau1 must be an odd integer"));
    }
    Ok(())
}

/// The four-fold composition, after checking that it cancels.
pub fn cancellation_compose<C: Coord>(
    first: &ShearSpec,
    tau1: &crate::schedule::Rational,
    second: &ShearSpec,
    tau2: &crate::schedule::Rational,
    x: &TorusPoint<C>,
) -> Result<TorusPoint<C>, FlowError> {
    check_cancellation(first, tau1, second, tau2)?;
    let t1 = C::from_rational(tau1);
    let t2 = C::from_rational(tau2);
    Ok(shear_cycle(first, t1, second, t2, x))
}

/// Open axis-aligned rectangle of width `w` and height `h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect<C> {
    pub center: [C; 2],
    pub w: C,
    pub h: C,
}

impl<C: Coord> Rect<C> {
    pub fn new(center: [C; 2], w: C, h: C) -> Result<Self, FlowError> {
        if !(w > C::zero() && h > C::zero()) {
            return Err(FlowError::DegenerateRectangle);
        }
        Ok(Rect { center, w, h })
    }

    fn local(&self, x: [C; 2]) -> Result<(C, C), FlowError> {
        let a = x[0] - self.center[0];
        let b = x[1] - self.center[1];
        let half = C::from_ratio(1, 2);
        if a.abs() < half * self.w && b.abs() < half * self.h {
            Ok((a, b))
        } else {
            Err(FlowError::OutsideRectangle)
        }
    }

    /// Time for one side of any closed orbit.
    pub fn side_time(&self) -> C {
        self.w.max(self.h)
    }
}

/// Counterclockwise rotation field `grad-perp psi` with
/// `psi = min(W, H) * max((a / W)^2, (b / H)^2)`.
pub fn rect_rotation_velocity(r: &Rect<f64>, x: [f64; 2]) -> Result<[f64; 2], FlowError> {
    let (a, b) = r.local(x)?;
    let m = r.w.min(r.h);
    if (a / r.w).abs() > (b / r.h).abs() {
        Ok([0.0, 2.0 * m * a / (r.w * r.w)])
    } else {
        Ok([-2.0 * m * b / (r.h * r.h), 0.0])
    }
}

/// Orbit coordinates `(level, phase)`. The phase runs over `[0, 4)` with one
/// unit per side: top, left, bottom, right. Diagonal points belong to the
/// horizontal sides.
fn rect_phase<C: Coord>(r: &Rect<C>, a: C, b: C) -> (C, C) {
    let half = C::from_ratio(1, 2);
    let one = C::one();
    let ra = a.abs() / r.w;
    let rb = b.abs() / r.h;
    let rho = ra.max(rb);
    if rho == C::zero() {
        return (rho, C::zero());
    }
    let p = if rb >= ra {
        if b > C::zero() {
            (one - a / (rho * r.w)) * half
        } else {
            C::from_i64(2) + (one + a / (rho * r.w)) * half
        }
    } else if a < C::zero() {
        one + (one - b / (rho * r.h)) * half
    } else {
        C::from_i64(3) + (one + b / (rho * r.h)) * half
    };
    (rho, p)
}

fn rect_point<C: Coord>(r: &Rect<C>, rho: C, p: C) -> (C, C) {
    let one = C::one();
    let two = C::from_i64(2);
    let four = C::from_i64(4);
    let q = p / four;
    let p = p - four * C::from_i64(q.floor_i64());
    let seg = p.floor_i64().clamp(0, 3);
    let u = p - C::from_i64(seg);
    let (rw, rh) = (rho * r.w, rho * r.h);
    match seg {
        0 => (rw * (one - two * u), rh),
        1 => (-rw, rh * (one - two * u)),
        2 => (rw * (two * u - one), -rh),
        _ => (rw, rh * (two * u - one)),
    }
}

/// Flow map of [`rect_rotation_velocity`] over signed time `t`. At
/// `t = 2 max(W, H)` it is exactly the half rotation about the centre.
pub fn rect_rotation_map<C: Coord>(r: &Rect<C>, t: C, x: [C; 2]) -> Result<[C; 2], FlowError> {
    let (a, b) = r.local(x)?;
    let (rho, p) = rect_phase(r, a, b);
    if rho == C::zero() {
        return Ok(x);
    }
    let (a2, b2) = rect_point(r, rho, p + t / r.side_time());
    Ok([r.center[0] + a2, r.center[1] + b2])
}

/// Binary swap `(i, k, n; L)` exchanging digits `k` and `k + 1` of `x_i`
/// on `J_{k,n}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SwapSpec {
    pub i: u8,
    pub k: u32,
    pub n: u64,
    pub l: u32,
}

/// The two stationary stages of a swap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SwapPhase {
    /// Full-width rotations on `[0, 2W)`.
    Whole,
    /// Half-width rotations on `[2W, 3W]`.
    Halves,
}

impl SwapSpec {
    pub fn new(i: u8, k: u32, n: u64, l: u32) -> Result<Self, FlowError> {
        check_axis(i)?;
        if k == 0 || k > 60 || n == 0 || n > (1u64 << (k / 2)) || l < k + 1 || l > 60 {
            return Err(FlowError::BadSwap);
        }
        Ok(SwapSpec { i, k, n, l })
    }

    /// `W = 2^-k`.
    pub fn width<C: Coord>(&self) -> C {
        C::pow2(-(self.k as i32))
    }

    pub fn duration<C: Coord>(&self) -> C {
        C::from_i64(3) * self.width::<C>()
    }

    /// Whether `s` lies in the half-open window `J_{k,n}`.
    pub fn in_window<C: Coord>(&self, s: C) -> bool {
        let scale = C::pow2((self.k / 2) as i32);
        (s * scale).floor_i64() + 1 == self.n as i64
    }

    /// Rectangle and orientation acting on `x` (given in the `i = 1` frame)
    /// during `phase`, or `None` where the field vanishes.
    pub fn locate<C: Coord>(&self, phase: SwapPhase, x: &TorusPoint<C>) -> Option<(Rect<C>, i64)> {
        if !self.in_window(x.x1) {
            return None;
        }
        let k = self.k as i32;
        let cell = (x.x1 * C::pow2(k - 1)).floor_i64();
        let origin = C::from_i64(cell) * C::pow2(1 - k);
        let off = x.x1 - origin;
        let q = C::pow2(-k - 1);
        if !(off > q && off < C::from_i64(3) * q) {
            return None;
        }
        let (c1, w) = match phase {
            SwapPhase::Whole => (origin + C::pow2(-k), C::pow2(-k)),
            SwapPhase::Halves => {
                let mid = C::pow2(-k);
                if off < mid {
                    (origin + C::from_i64(3) * C::pow2(-k - 2), q)
                } else if off > mid {
                    (origin + C::from_i64(5) * C::pow2(-k - 2), q)
                } else {
                    return None;
                }
            }
        };
        let l = self.l as i32;
        let row_f = x.x2 * C::pow2(l);
        let row = row_f.floor_i64();
        if row_f == C::from_i64(row) {
            return None;
        }
        let h = C::pow2(-l);
        let c2 = (C::from_i64(row) + C::from_ratio(1, 2)) * h;
        let orient = if row.rem_euclid(2) == 0 { 1 } else { -1 };
        Some((Rect { center: [c1, c2], w, h }, orient))
    }

    /// Stationary velocity of one stage.
    pub fn phase_velocity(&self, phase: SwapPhase, x: &TorusPoint<f64>) -> [f64; 2] {
        let y = if self.i == 1 { *x } else { x.swapped() };
        let v = match self.locate(phase, &y) {
            None => [0.0, 0.0],
            Some((r, o)) => match rect_rotation_velocity(&r, [y.x1, y.x2]) {
                Ok(v) => [o as f64 * v[0], o as f64 * v[1]],
                Err(_) => [0.0, 0.0],
            },
        };
        if self.i == 1 {
            v
        } else {
            [v[1], v[0]]
        }
    }

    /// Flow map of one stage over signed time `t`.
    pub fn phase_map<C: Coord>(&self, phase: SwapPhase, t: C, x: &TorusPoint<C>) -> TorusPoint<C> {
        let y = if self.i == 1 { *x } else { x.swapped() };
        let z = match self.locate(phase, &y) {
            None => y,
            Some((r, o)) => {
                let s = if o > 0 { t } else { -t };
                match rect_rotation_map(&r, s, [y.x1, y.x2]) {
                    Ok(p) => TorusPoint::new(p[0], p[1]),
                    Err(_) => y,
                }
            }
        };
        if self.i == 1 {
            z
        } else {
            z.swapped()
        }
    }
}

impl fmt::Display for SwapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "swap(i={}, k={}, n={}, L={})", self.i, self.k, self.n, self.l)
    }
}

fn check_swap_time(s: &SwapSpec, t: f64) -> Result<(), FlowError> {
    if !(0.0..=s.duration::<f64>()).contains(&t) {
        return Err(FlowError::SwapTime(t));
    }
    Ok(())
}

pub fn swap_velocity(s: &SwapSpec, t: f64, x: &TorusPoint<f64>) -> Result<[f64; 2], FlowError> {
    check_swap_time(s, t)?;
    let phase = if t < 2.0 * s.width::<f64>() {
        SwapPhase::Whole
    } else {
        SwapPhase::Halves
    };
    Ok(s.phase_velocity(phase, x))
}

/// Swap flow map `y_t` for `t` in `[0, 3W]`.
pub fn swap_map<C: Coord>(s: &SwapSpec, t: C, x: &TorusPoint<C>) -> Result<TorusPoint<C>, FlowError> {
    check_swap_time(s, t.to_f64())?;
    let w2 = C::from_i64(2) * s.width::<C>();
    if t <= w2 {
        Ok(s.phase_map(SwapPhase::Whole, t, x))
    } else {
        let p = s.phase_map(SwapPhase::Whole, w2, x);
        Ok(s.phase_map(SwapPhase::Halves, t - w2, &p))
    }
}

/// Binary digit `k` (1-based) of a coordinate in `[0, 1)`.
pub fn digit<C: Coord>(s: C, k: u32) -> i64 {
    (s * C::pow2(k as i32)).floor_i64().rem_euclid(2)
}

/// Exact endpoint of a swap: digits `k` and `k + 1` of `x_i` exchanged
/// inside the window, identity elsewhere.
pub fn swap_endpoint<C: Coord>(s: &SwapSpec, x: &TorusPoint<C>) -> TorusPoint<C> {
    let xi = x.coord(s.i);
    if !s.in_window(xi) {
        return *x;
    }
    let dk = digit(xi, s.k);
    let dk1 = digit(xi, s.k + 1);
    let shift = C::from_i64(dk1 - dk) * C::pow2(-(s.k as i32) - 1);
    x.with_coord(s.i, xi + shift)
}

/// Doubling map applied `m` times to each coordinate.
pub fn digit_shift<C: Coord>(m: u32, x: &TorusPoint<C>) -> TorusPoint<C> {
    let f = C::pow2(m as i32);
    TorusPoint::new(x.x1 * f, x.x2 * f)
}

/// Stationary velocity field used as one piece of a flow program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Still,
    Shear(ShearSpec),
    Swap(SwapSpec, SwapPhase),
}

impl Primitive {
    pub fn velocity(&self, x: &TorusPoint<f64>) -> [f64; 2] {
        match self {
            Primitive::Still => [0.0, 0.0],
            Primitive::Shear(s) => shear_velocity(s, x),
            Primitive::Swap(s, p) => s.phase_velocity(*p, x),
        }
    }

    /// Flow over signed time `t`.
    pub fn map<C: Coord>(&self, t: C, x: &TorusPoint<C>) -> TorusPoint<C> {
        match self {
            Primitive::Still => *x,
            Primitive::Shear(s) => shear_map(s, t, x),
            Primitive::Swap(s, p) => s.phase_map(*p, t, x),
        }
    }

    pub fn is_still(&self) -> bool {
        matches!(self, Primitive::Still)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coord::Exact;
    use crate::schedule::ratio;

    fn ex(n: i64, d: i64) -> Exact {
        Exact::new(n as i128, d as i128)
    }

    #[test]
    fn shear_example() {
        let s = ShearSpec::new(1, 4).unwrap();
        let x = TorusPoint::new(0.3, 0.05);
        assert_eq!(shear_velocity(&s, &x), [1.0, 0.0]);
        let y = shear_map(&s, 0.25, &x);
        assert!((y.x1 - 0.55).abs() < 1e-15 && y.x2 == 0.05);
    }

    #[test]
    fn strip_edges_are_half_open() {
        let s = ShearSpec::new(1, 1).unwrap();
        let x = TorusPoint::new(ex(0, 1), ex(1, 2));
        assert_eq!(s.sign_at(&x), -1);
        assert_eq!(s.sign_at(&TorusPoint::new(ex(0, 1), ex(0, 1))), 1);
    }

    #[test]
    fn cancellation_base_case() {
        let a = ShearSpec::new(1, 4).unwrap();
        let b = ShearSpec::new(2, 18).unwrap();
        for (p, q) in [(1, 7), (3, 5), (1, 2), (0, 1)] {
            let x = TorusPoint::new(ex(p, 13), ex(q, 11));
            let y = cancellation_compose(&a, &ratio(1, 4), &b, &ratio(1, 16), &x).unwrap();
            assert_eq!(x, y);
        }
        let e = cancellation_compose(&a, &ratio(1, 4), &b, &ratio(1, 15), &TorusPoint::new(0.1, 0.2));
        assert!(e.is_err());
    }

    #[test]
    fn rotation_half_turn() {
        let r = Rect::new([ex(1, 2), ex(1, 2)], ex(1, 1), ex(1, 4)).unwrap();
        let x = [ex(3, 10), ex(9, 16)];
        let y = rect_rotation_map(&r, ex(2, 1), x).unwrap();
        assert_eq!(y, [ex(7, 10), ex(7, 16)]);
        let z = rect_rotation_map(&r, ex(4, 1), x).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn rotation_is_counterclockwise() {
        let r = Rect::new([0.0, 0.0], 2.0, 1.0).unwrap();
        let v = rect_rotation_velocity(&r, [0.0, 0.3]).unwrap();
        assert!(v[0] < 0.0 && v[1] == 0.0);
        assert!(rect_rotation_velocity(&r, [1.0, 0.0]).is_err());
    }

    #[test]
    fn swap_moves_quarter() {
        let s = SwapSpec::new(1, 1, 1, 2).unwrap();
        let x = TorusPoint::new(ex(5, 16), ex(1, 3));
        let y = swap_map(&s, ex(3, 2), &x).unwrap();
        assert_eq!(y, TorusPoint::new(ex(9, 16), ex(1, 3)));
        assert_eq!(swap_endpoint(&s, &x), y);
    }

    #[test]
    fn swap_rejects_small_l() {
        assert!(SwapSpec::new(1, 3, 1, 3).is_err());
        assert!(SwapSpec::new(1, 3, 3, 4).is_err());
    }

    #[test]
    fn doubling() {
        let x = TorusPoint::new(ex(3, 8), ex(7, 8));
        assert_eq!(digit_shift(2, &x), TorusPoint::new(ex(1, 2), ex(1, 2)));
    }
}
