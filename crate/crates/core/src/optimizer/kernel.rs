//! General adaptive robust loss with learnable scale `p` and shape `alpha`.
//!
//! `κ(r) = |α−2|/α · (((r/p)²/|α−2| + 1)^{α/2} − 1)`, with the quadratic
//! limit at `α = 2` and the logarithmic limit at `α = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SCALE: f64 = 1e-4;
pub const MIN_SHAPE: f64 = -10.0;
pub const MAX_SHAPE: f64 = 2.0;

/// `b` used for the α-derivative when α sits exactly on 2, where the true
/// derivative diverges logarithmically.
const SHAPE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub p: f64,
    pub alpha: f64,
}

impl KernelParams {
    pub fn new(p: f64, alpha: f64) -> Result<Self> {
        let k = KernelParams { p, alpha };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::input(format!("kernel scale must be positive, got {}", self.p)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::input("kernel shape must be finite"));
        }
        Ok(())
    }

    pub fn clamped(self) -> Self {
        KernelParams {
            p: self.p.max(MIN_SCALE),
            alpha: self.alpha.clamp(MIN_SHAPE, MAX_SHAPE),
        }
    }
}

/// Kernel value and its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    pub d_r: f64,
    pub d_p: f64,
    pub d_alpha: f64,
}

/// `expm1(v)/v` and its derivative, with series near zero.
fn h_and_dh(v: f64) -> (f64, f64) {
    if v.abs() < 0.1 {
        // h = Σ vⁿ/(n+1)!,  h' = Σ n·vⁿ⁻¹/(n+1)!
        let mut h = 0.0;
        let mut dh = 0.0;
        let mut fact = 1.0; // (n+1)!
        let mut pow = 1.0; // vⁿ
        for n in 0..14 {
            fact *= (n + 1) as f64;
            h += pow / fact;
            if n + 1 < 14 {
                dh += (n + 1) as f64 * pow / (fact * (n + 2) as f64);
            }
            pow *= v;
        }
        (h, dh)
    } else {
        let e = v.exp();
        (v.exp_m1() / v, (e * (v - 1.0) + 1.0) / (v * v))
    }
}

/// Kernel value for a residual `r` (sign ignored).
pub fn kernel(r: f64, k: &KernelParams) -> Result<f64> {
    k.validate()?;
    Ok(kernel_eval(r, k.p, k.alpha).value)
}

/// Value and derivatives; `r` may be signed (κ is even in `r`).
pub fn kernel_eval(r: f64, p: f64, alpha: f64) -> KernelEval {
    let x = (r / p) * (r / p);
    let dx_dr = 2.0 * r / (p * p);
    let dx_dp = -2.0 * x / p;
    let (value, dk_dx) = if alpha == 2.0 {
        (0.5 * x, 0.5)
    } else {
        let b = (alpha - 2.0).abs();
        let l = (x / b).ln_1p();
        let (h, _) = h_and_dh(alpha * l / 2.0);
        (0.5 * b * l * h, 0.5 * ((alpha / 2.0 - 1.0) * l).exp())
    };
    KernelEval {
        value,
        d_r: dk_dx * dx_dr,
        d_p: dk_dx * dx_dp,
        d_alpha: d_alpha(x, alpha),
    }
}

fn d_alpha(x: f64, alpha: f64) -> f64 {
    let (b, sb) = if alpha == 2.0 {
        (SHAPE_EPS, -1.0)
    } else {
        ((alpha - 2.0).abs(), (alpha - 2.0).signum())
    };
    let a = if alpha == 2.0 { 2.0 - SHAPE_EPS } else { alpha };
    let u = x / b;
    let l = u.ln_1p();
    let v = a * l / 2.0;
    let (h, dh) = h_and_dh(v);
    let dl = -(x / (b * b)) * sb / (1.0 + u);
    let dv = l / 2.0 + a / 2.0 * dl;
    0.5 * sb * l * h + 0.5 * b * dl * h + 0.5 * b * l * dh * dv
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct transcription of the closed form, for α away from 0 and 2.
    fn closed_form(r: f64, p: f64, a: f64) -> f64 {
        let b = (a - 2.0).abs();
        b / a * (((r / p).powi(2) / b + 1.0).powf(a / 2.0) - 1.0)
    }

    #[test]
    fn zero_residual_is_zero() {
        for a in [-10.0, -2.0, 0.0, 0.5, 1.0, 2.0] {
            assert_eq!(kernel(0.0, &KernelParams::new(0.3, a).unwrap()).unwrap(), 0.0);
        }
    }

    #[test]
    fn quadratic_limit() {
        assert_eq!(kernel(1.0, &KernelParams::new(1.0, 2.0).unwrap()).unwrap(), 0.5);
    }

    #[test]
    fn log_limit() {
        let v = kernel(1.5, &KernelParams::new(1.0, 0.0).unwrap()).unwrap();
        assert!((v - (0.5 * 1.5f64 * 1.5 + 1.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn negative_shape_saturates() {
        let robust = kernel(10.0, &KernelParams::new(1.0, -2.0).unwrap()).unwrap();
        let quad = kernel(10.0, &KernelParams::new(1.0, 2.0).unwrap()).unwrap();
        assert!(robust < quad);
        assert!((robust - closed_form(10.0, 1.0, -2.0)).abs() < 1e-12);
    }

    #[test]
    fn non_positive_scale_rejected() {
        assert!(KernelParams::new(0.0, 1.0).is_err());
        assert!(kernel(1.0, &KernelParams { p: -1.0, alpha: 1.0 }).is_err());
    }

    #[test]
    fn clamps() {
        let k = KernelParams { p: 1e-9, alpha: 5.0 }.clamped();
        assert_eq!((k.p, k.alpha), (MIN_SCALE, MAX_SHAPE));
        assert_eq!(KernelParams { p: 1.0, alpha: -50.0 }.clamped().alpha, MIN_SHAPE);
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn matches_closed_form(r in -3.0..3.0f64, p in 0.05..2.0f64, a in -10.0..1.95f64) {
            prop_assume!(a.abs() > 1e-3);
            let v = kernel_eval(r, p, a).value;
            let c = closed_form(r, p, a);
            prop_assert!((v - c).abs() <= 1e-9 * (1.0 + c.abs()), "{} vs {}", v, c);
        }

        #[test]
        fn nondecreasing_in_magnitude(r in 0.0..5.0f64, dr in 0.0..1.0f64, p in 0.05..2.0f64, a in -10.0..2.0f64) {
            prop_assert!(kernel_eval(r + dr, p, a).value >= kernel_eval(r, p, a).value);
        }

        #[test]
        fn derivatives_match_finite_differences(r in -2.0..2.0f64, p in 0.1..1.5f64, a in -9.0..1.9f64) {
            let e = kernel_eval(r, p, a);
            let tol = |g: f64, n: f64| (g - n).abs() <= 1e-6 * (1.0 + n.abs());
            prop_assert!(tol(e.d_r, fd(|x| kernel_eval(x, p, a).value, r, 1e-6)));
            prop_assert!(tol(e.d_p, fd(|x| kernel_eval(r, x, a).value, p, 1e-6)));
            prop_assert!(tol(e.d_alpha, fd(|x| kernel_eval(r, p, x).value, a, 1e-6)), "{} vs {}", e.d_alpha, fd(|x| kernel_eval(r, p, x).value, a, 1e-6));
        }
    }

    /// Near α = 2 the shape derivative grows like `x/4·(ln(x/b) − 2)` with
    /// `b = 2 − α`, so the value at 2 is that asymptote at `b = SHAPE_EPS`.
    #[test]
    fn shape_derivative_at_two_follows_asymptote() {
        let x: f64 = (0.7f64 / 0.5).powi(2);
        let asym = |b: f64| x / 4.0 * ((x / b).ln() - 2.0);
        let at = kernel_eval(0.7, 0.5, 2.0).d_alpha;
        assert!(at.is_finite() && at > 0.0);
        assert!((at - asym(SHAPE_EPS)).abs() < 1e-5 * at, "{at} vs {}", asym(SHAPE_EPS));
        let near = kernel_eval(0.7, 0.5, 2.0 - 1e-6).d_alpha;
        assert!((near - asym(1e-6)).abs() < 1e-4 * near);
    }

    #[test]
    fn shape_derivative_smooth_through_zero() {
        let left = kernel_eval(0.9, 0.4, -1e-7).d_alpha;
        let right = kernel_eval(0.9, 0.4, 1e-7).d_alpha;
        let mid = kernel_eval(0.9, 0.4, 0.0).d_alpha;
        assert!((left - mid).abs() < 1e-6 && (right - mid).abs() < 1e-6);
    }
}
