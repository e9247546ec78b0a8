//! Outward-rounded interval arithmetic.
//!
//! Every elementary operation widens its result by one unit in the last place
//! on each side instead of switching the FPU rounding mode. That keeps results
//! sound on any IEEE-754 platform and costs nothing measurable at the scale
//! this crate works at. Exact constructions (`point`, `new`) do not widen.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        debug_assert!(lo <= hi, "interval bounds out of order");
        Interval { lo, hi }
    }

    pub fn point(v: T) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn mid(self) -> T {
        (self.lo + self.hi) * T::of(0.5)
    }

    /// Half-width measured from the midpoint; covers the box even when the
    /// midpoint rounded off-center.
    pub fn rad(self) -> T {
        let m = self.mid();
        (self.hi - m).max(m - self.lo)
    }

    pub fn width(self) -> T {
        self.hi - self.lo
    }

    /// Largest absolute value over the interval.
    pub fn mag(self) -> T {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(self, v: T) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn is_finite(self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    fn widen(lo: T, hi: T) -> Self {
        Interval { lo: lo.ulp_down(), hi: hi.ulp_up() }
    }

    pub fn add(self, o: Self) -> Self {
        Self::widen(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn sub(self, o: Self) -> Self {
        Self::widen(self.lo - o.hi, self.hi - o.lo)
    }

    pub fn neg(self) -> Self {
        Interval { lo: -self.hi, hi: -self.lo }
    }

    pub fn mul(self, o: Self) -> Self {
        let c = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let mut lo = c[0];
        let mut hi = c[0];
        for &v in &c[1..] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Self::widen(lo, hi)
    }

    /// Multiplication by an exact scalar.
    pub fn scale(self, s: T) -> Self {
        let (a, b) = (self.lo * s, self.hi * s);
        if s >= T::zero() {
            Self::widen(a, b)
        } else {
            Self::widen(b, a)
        }
    }

    /// Division; `None` when the divisor straddles zero.
    pub fn div(self, o: Self) -> Option<Self> {
        if o.lo <= T::zero() && o.hi >= T::zero() {
            return None;
        }
        let c = [self.lo / o.lo, self.lo / o.hi, self.hi / o.lo, self.hi / o.hi];
        let mut lo = c[0];
        let mut hi = c[0];
        for &v in &c[1..] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Some(Self::widen(lo, hi))
    }

    /// Integer power with the dependency handled exactly: even powers of a
    /// straddling interval start at zero instead of going negative.
    pub fn powi(self, n: u32) -> Self {
        if n == 0 {
            return Interval::point(T::one());
        }
        if n == 1 {
            return self;
        }
        let even = n % 2 == 0;
        if even {
            let m = self.mag();
            let lo = if self.contains(T::zero()) {
                T::zero()
            } else {
                pow_down(self.lo.abs().min(self.hi.abs()), n)
            };
            Interval { lo, hi: pow_up(m, n) }
        } else {
            Interval { lo: pow_down(self.lo, n), hi: pow_up(self.hi, n) }
        }
    }

    pub fn exp(self) -> Self {
        let lo = self.lo.exp().ulp_down().max(T::zero());
        Interval { lo, hi: self.hi.exp().ulp_up() }
    }

    /// Natural log; `None` unless the interval is strictly positive.
    pub fn ln(self) -> Option<Self> {
        if self.lo <= T::zero() {
            return None;
        }
        Some(Self::widen(self.lo.ln(), self.hi.ln()))
    }

    /// Square root; `None` when the interval dips below zero.
    pub fn sqrt(self) -> Option<Self> {
        if self.lo < T::zero() {
            return None;
        }
        let lo = self.lo.sqrt().ulp_down().max(T::zero());
        Some(Interval { lo, hi: self.hi.sqrt().ulp_up() })
    }

    pub fn tanh(self) -> Self {
        let lo = self.lo.tanh().ulp_down().max(-T::one());
        let hi = self.hi.tanh().ulp_up().min(T::one());
        Interval { lo, hi }
    }

    pub fn abs(self) -> Self {
        if self.lo >= T::zero() {
            self
        } else if self.hi <= T::zero() {
            self.neg()
        } else {
            Interval { lo: T::zero(), hi: self.mag() }
        }
    }

    pub fn sin(self) -> Self {
        let one = T::one();
        if self.width() >= T::of(7.0) {
            return Interval { lo: -one, hi: one };
        }
        let mut lo = self.lo.sin().min(self.hi.sin()).ulp_down().max(-one);
        let mut hi = self.lo.sin().max(self.hi.sin()).ulp_up().min(one);
        // sin peaks at π/2 + 2kπ, bottoms at −π/2 + 2kπ
        if contains_odd_multiple_of_half_pi(self.lo, self.hi, 1) {
            hi = one;
        }
        if contains_odd_multiple_of_half_pi(self.lo, self.hi, 3) {
            lo = -one;
        }
        Interval { lo, hi }
    }

    pub fn cos(self) -> Self {
        let one = T::one();
        if self.width() >= T::of(7.0) {
            return Interval { lo: -one, hi: one };
        }
        let mut lo = self.lo.cos().min(self.hi.cos()).ulp_down().max(-one);
        let mut hi = self.lo.cos().max(self.hi.cos()).ulp_up().min(one);
        // cos peaks at 2kπ, bottoms at π + 2kπ
        if contains_even_multiple_of_pi(self.lo, self.hi) {
            hi = one;
        }
        if contains_odd_multiple_of_pi(self.lo, self.hi) {
            lo = -one;
        }
        Interval { lo, hi }
    }
}

/// t^n rounded down at every multiplication.
fn pow_down<T: Real>(t: T, n: u32) -> T {
    let mut acc = t;
    for _ in 1..n {
        acc = (acc * t).ulp_down();
    }
    acc
}

/// t^n rounded up at every multiplication.
fn pow_up<T: Real>(t: T, n: u32) -> T {
    let mut acc = t;
    for _ in 1..n {
        acc = (acc * t).ulp_up();
    }
    acc
}

/// Does `[a,b]` contain a point `(4k + r)·π/2` for some integer k? Used with
/// r = 1 (sine maxima) and r = 3 (sine minima). The test is widened by a small
/// slack so a critical point can only be included spuriously, never missed;
/// spurious inclusion merely returns the always-valid bound ±1.
fn contains_odd_multiple_of_half_pi<T: Real>(a: T, b: T, r: u32) -> bool {
    let half_pi = T::of(std::f64::consts::FRAC_PI_2);
    let four = T::of(4.0);
    let rr = T::of(r as f64);
    let slack = T::of(1e-9).max(T::epsilon() * T::of(64.0) * a.abs().max(b.abs()));
    // solve a ≤ (4k + r)·π/2 ≤ b for integer k
    let klo = ((a - slack) / half_pi - rr) / four;
    let khi = ((b + slack) / half_pi - rr) / four;
    klo.ceil() <= khi.floor()
}

fn contains_even_multiple_of_pi<T: Real>(a: T, b: T) -> bool {
    let two_pi = T::of(std::f64::consts::TAU);
    let slack = T::of(1e-9).max(T::epsilon() * T::of(64.0) * a.abs().max(b.abs()));
    (((a - slack) / two_pi).ceil()) <= (((b + slack) / two_pi).floor())
}

fn contains_odd_multiple_of_pi<T: Real>(a: T, b: T) -> bool {
    let pi = T::of(std::f64::consts::PI);
    let two = T::of(2.0);
    let slack = T::of(1e-9).max(T::epsilon() * T::of(64.0) * a.abs().max(b.abs()));
    let klo = (((a - slack) / pi) - T::one()) / two;
    let khi = (((b + slack) / pi) - T::one()) / two;
    klo.ceil() <= khi.floor()
}

#[cfg(test)]
mod tests {
    use super::Interval;

    type I = Interval<f64>;

    #[test]
    fn add_encloses_and_widens() {
        let a = I::new(1.0, 2.0).add(I::new(0.5, 0.5));
        assert!(a.lo < 1.5 && a.hi > 2.5);
        assert!(a.hi - 2.5 < 1e-15);
    }

    #[test]
    fn mul_sign_cases() {
        let a = I::new(-2.0, 3.0).mul(I::new(-1.0, 4.0));
        assert!(a.lo <= -8.0 && a.hi >= 12.0);
        let b = I::new(-2.0, -1.0).mul(I::new(-3.0, -2.0));
        assert!(b.lo <= 2.0 && b.hi >= 6.0);
    }

    #[test]
    fn even_power_of_straddling_interval_starts_at_zero() {
        let a = I::new(-1.0, 1.0).powi(2);
        assert_eq!(a.lo, 0.0);
        assert!(a.hi >= 1.0 && a.hi < 1.0 + 1e-14);
        let b = I::new(-2.0, 1.0).powi(3);
        assert!(b.lo <= -8.0 && b.hi >= 1.0);
    }

    #[test]
    fn division_by_straddling_interval_is_refused() {
        assert!(I::new(1.0, 2.0).div(I::new(-1.0, 1.0)).is_none());
        let q = I::new(1.0, 2.0).div(I::new(2.0, 4.0)).unwrap();
        assert!(q.lo <= 0.25 && q.hi >= 1.0);
    }

    #[test]
    fn sine_extrema_are_caught() {
        let s = I::new(1.0, 2.0).sin(); // contains π/2
        assert_eq!(s.hi, 1.0);
        assert!(s.lo <= (1.0f64).sin().min((2.0f64).sin()));
        let t = I::new(4.0, 5.0).sin(); // contains 3π/2
        assert_eq!(t.lo, -1.0);
        let c = I::new(-0.5, 0.5).cos(); // contains 0
        assert_eq!(c.hi, 1.0);
        let d = I::new(3.0, 3.3).cos(); // contains π
        assert_eq!(d.lo, -1.0);
    }

    #[test]
    fn point_interval_is_exact() {
        let p = I::point(3.5);
        assert_eq!(p.lo, 3.5);
        assert_eq!(p.hi, 3.5);
        assert_eq!(p.rad(), 0.0);
    }

    #[test]
    fn sampled_values_stay_inside_products() {
        // x*x - x over [0,1] has true range [-0.25, 0]
        let x = I::new(0.0, 1.0);
        let e = x.mul(x).sub(x);
        assert!(e.lo <= -0.25 && e.hi >= 0.0);
        for i in 0..=100 {
            let v = i as f64 / 100.0;
            let fv = v * v - v;
            assert!(e.contains(fv));
        }
    }

    #[test]
    fn works_in_single_precision() {
        let x = Interval::<f32>::new(-1.0, 2.0);
        let y = x.powi(2).add(Interval::point(1.0));
        assert!(y.lo <= 1.0 && y.hi >= 5.0);
        assert!(y.ln().unwrap().contains(1.0f32.ln()));
    }
}
