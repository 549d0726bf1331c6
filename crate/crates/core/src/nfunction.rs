//! The regularized power-law kernel, its natural distance maps, and the
//! associated scalar convex (N-) functions.
//!
//! For an exponent `q > 1` and regularization `delta >= 0` the flux kernel is
//!
//! ```text
//! A(a) = (delta + |a|)^(q-2) a,
//! ```
//!
//! the energy density is `phi(|a|)` with `phi'(t) = (delta + t)^(q-2) t`, and
//! the natural-distance maps are
//!
//! ```text
//! F(a)  = (delta + |a|)^((q-2)/2) a,
//! F*(a) = (delta^(q-1) + |a|)^((q'-2)/2) a,     q' = q / (q - 1).
//! ```
//!
//! Squared differences of `F` (resp. `F*`) are equivalent to the quantities
//! controlled by the monotonicity of `A`, which is what every error notion in
//! this crate is measured in. Shifted versions of `phi` (shift the
//! regularization by a gradient magnitude) and Fenchel conjugates are provided
//! for the convex-duality audits; the conjugate is evaluated by inverting the
//! strictly increasing derivative `phi'` with a safeguarded Newton iteration.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{MeshMetrics, Pt2, Vec2};

/// Evaluator for the kernel and N-functions at one fixed exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiKit {
    q: f64,
    delta: f64,
    q_conj: f64,
}

impl PhiKit {
    /// Creates an evaluator; requires `q > 1` and `delta >= 0`, both finite.
    pub fn new(q: f64, delta: f64) -> Result<Self> {
        if !(q.is_finite() && q > 1.0) {
            return Err(Error::ExponentOutOfRange { q });
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidRegularization { delta });
        }
        Ok(PhiKit { q, delta, q_conj: q / (q - 1.0) })
    }

    /// The exponent `q`.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// The regularization parameter `delta`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// The conjugate exponent `q' = q / (q - 1)`.
    pub fn conjugate_exponent(&self) -> f64 {
        self.q_conj
    }

    /// The flux kernel `A(a) = (delta + |a|)^(q-2) a`, extended by zero at
    /// the origin (its continuous limit).
    pub fn eval_a(&self, a: Vec2) -> Vec2 {
        let r = a.norm();
        if r == 0.0 {
            return Vec2::zeros();
        }
        (self.delta + r).powf(self.q - 2.0) * a
    }

    /// The Jacobian of the flux kernel,
    /// `DA(a) = (delta+r)^(q-2) I + (q-2) (delta+r)^(q-3) r (a/r) (a/r)^T`
    /// with `r = |a|`. Fails when `delta = 0`, `q < 2` and `a = 0`, where the
    /// Jacobian is unbounded.
    pub fn eval_da(&self, a: Vec2) -> Result<Matrix2<f64>> {
        let r = a.norm();
        if r == 0.0 {
            if self.delta == 0.0 && self.q < 2.0 {
                return Err(Error::SingularKernelJacobian { q: self.q });
            }
            // delta^(q-2) I; for delta = 0 this is the zero matrix (q > 2)
            // or the identity (q = 2).
            return Ok(Matrix2::identity() * self.delta.powf(self.q - 2.0));
        }
        let shifted = self.delta + r;
        let iso = shifted.powf(self.q - 2.0);
        let aniso = (self.q - 2.0) * shifted.powf(self.q - 3.0) * r;
        let unit = a / r;
        Ok(Matrix2::identity() * iso + (unit * unit.transpose()) * aniso)
    }

    /// The natural-distance map `F(a) = (delta + |a|)^((q-2)/2) a`, extended
    /// by zero at the origin.
    pub fn eval_f(&self, a: Vec2) -> Vec2 {
        let r = a.norm();
        if r == 0.0 {
            return Vec2::zeros();
        }
        (self.delta + r).powf(0.5 * (self.q - 2.0)) * a
    }

    /// The conjugate natural-distance map
    /// `F*(a) = (delta^(q-1) + |a|)^((q'-2)/2) a`, extended by zero at the
    /// origin. Composed with the kernel it satisfies `|F*(A(a))| = |F(a)|`.
    pub fn eval_fstar(&self, a: Vec2) -> Vec2 {
        let r = a.norm();
        if r == 0.0 {
            return Vec2::zeros();
        }
        let delta_conj = self.delta.powf(self.q - 1.0);
        (delta_conj + r).powf(0.5 * (self.q_conj - 2.0)) * a
    }

    /// The energy density `phi(t) = integral of (delta + s)^(q-2) s`.
    pub fn eval_phi(&self, t: f64) -> f64 {
        phi_with_shift(self.q, self.delta, t.abs())
    }

    /// `phi'(t) = (delta + t)^(q-2) t`.
    pub fn eval_phi_prime(&self, t: f64) -> f64 {
        let t = t.abs();
        if t == 0.0 {
            return 0.0;
        }
        (self.delta + t).powf(self.q - 2.0) * t
    }

    /// `phi''(t) = (delta + t)^(q-3) (delta + (q-1) t)`, for `t > 0`.
    pub fn eval_phi_second(&self, t: f64) -> f64 {
        (self.delta + t).powf(self.q - 3.0) * (self.delta + (self.q - 1.0) * t)
    }

    /// The Fenchel conjugate `phi*(s) = sup_t (s t - phi(t))`.
    pub fn eval_phi_conjugate(&self, s: f64) -> Result<f64> {
        conjugate_with_shift(self.q, self.delta, s.abs())
    }

    /// Inverts `phi'`: the unique `t >= 0` with `phi'(t) = s`.
    pub fn phi_prime_inverse(&self, s: f64) -> Result<f64> {
        invert_phi_prime(self.q, self.delta, s.abs())
    }

    /// The shifted density `phi_shift(t)` whose derivative is
    /// `(delta + shift + t)^(q-2) t`; shifting by a gradient magnitude is how
    /// the natural distance linearizes around a state.
    pub fn eval_phi_shifted(&self, shift: f64, t: f64) -> f64 {
        phi_with_shift(self.q, self.delta + shift.abs(), t.abs())
    }

    /// Fenchel conjugate of the shifted density.
    pub fn eval_phi_shifted_conjugate(&self, shift: f64, s: f64) -> Result<f64> {
        conjugate_with_shift(self.q, self.delta + shift.abs(), s.abs())
    }
}

/// `phi(t)` for derivative `(shift + s)^(q-2) s`. Uses the closed form
/// antiderivative for `t >= shift / 2` and a binomial series for smaller `t`,
/// where the closed form loses all significant digits to cancellation.
fn phi_with_shift(q: f64, shift: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    if shift == 0.0 {
        return t.powf(q) / q;
    }
    if t < 0.5 * shift {
        // phi = shift^(q-2) t^2 sum_k C(q-2, k) (t/shift)^k / (k+2); the
        // ratio t/shift < 1/2 makes the tail geometric.
        let x = t / shift;
        let alpha = q - 2.0;
        let mut coeff = 1.0;
        let mut power = 1.0;
        let mut sum = 0.0;
        for k in 0..200u32 {
            let term = coeff * power / (k as f64 + 2.0);
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
            coeff *= (alpha - k as f64) / (k as f64 + 1.0);
            power *= x;
        }
        shift.powf(q - 2.0) * t * t * sum
    } else {
        let u = shift + t;
        u.powf(q) / q - shift * u.powf(q - 1.0) / (q - 1.0)
            + shift.powf(q) / (q * (q - 1.0))
    }
}

/// Solves `(shift + t)^(q-2) t = s` for `t >= 0` by bracketing plus
/// safeguarded Newton (bisection fallback whenever the Newton step leaves
/// the bracket).
fn invert_phi_prime(q: f64, shift: f64, s: f64) -> Result<f64> {
    debug_assert!(s >= 0.0);
    if s == 0.0 {
        return Ok(0.0);
    }
    let g = |t: f64| (shift + t).powf(q - 2.0) * t - s;
    let dg = |t: f64| (shift + t).powf(q - 3.0) * (shift + (q - 1.0) * t);

    // Initial guess from the two asymptotic regimes of phi', then double
    // until the root is bracketed.
    let mut hi = s.powf(1.0 / (q - 1.0));
    if shift > 0.0 {
        hi = hi.max(s * shift.powf(2.0 - q));
    }
    hi = hi.max(f64::MIN_POSITIVE);
    let mut lo = 0.0;
    let mut grow = 0;
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 2100 || !hi.is_finite() {
            return Err(Error::RootSolveFailed {
                reason: format!("could not bracket phi'(t) = {s} for q = {q}, shift = {shift}"),
            });
        }
    }

    let mut t = hi;
    for _ in 0..200 {
        let gt = g(t);
        if gt > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let mut next = t - gt / dg(t);
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-14 * next.abs() {
            t = next;
            break;
        }
        t = next;
    }

    let residual = g(t).abs();
    if residual <= 1e-9 * s {
        Ok(t)
    } else {
        Err(Error::RootSolveFailed {
            reason: format!(
                "residual {residual:.3e} after 200 iterations for s = {s}, q = {q}, shift = {shift}"
            ),
        })
    }
}

/// `phi*(s)` for the density with derivative `(shift + t)^(q-2) t`. The
/// supremum is attained where `phi'(t) = s`, so the first-order condition
/// makes the value insensitive to the root tolerance.
fn conjugate_with_shift(q: f64, shift: f64, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(0.0);
    }
    if shift == 0.0 {
        let q_conj = q / (q - 1.0);
        return Ok(s.powf(q_conj) / q_conj);
    }
    let t = invert_phi_prime(q, shift, s)?;
    Ok(s * t - phi_with_shift(q, shift, t))
}

/// The variable exponent `p(x) = p_min + eps |x - center|^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentField {
    /// Minimum exponent, attained at the center; must exceed 1.
    pub p_min: f64,
    /// Amplitude of the spatial variation; non-negative.
    pub eps: f64,
    /// Radial growth exponent; positive.
    pub alpha: f64,
    /// Center of the radial profile.
    pub center: [f64; 2],
}

impl ExponentField {
    /// Radial exponent profile centered at the origin.
    pub fn new(p_min: f64, eps: f64, alpha: f64) -> Result<Self> {
        let field = ExponentField { p_min, eps, alpha, center: [0.0, 0.0] };
        field.validate()?;
        Ok(field)
    }

    /// Checks the parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.p_min.is_finite() && self.p_min > 1.0) {
            return Err(Error::ExponentOutOfRange { q: self.p_min });
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::InvalidExponentField {
                reason: format!("amplitude eps = {} must be finite and >= 0", self.eps),
            });
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidExponentField {
                reason: format!("growth exponent alpha = {} must be finite and > 0", self.alpha),
            });
        }
        if !(self.center[0].is_finite() && self.center[1].is_finite()) {
            return Err(Error::InvalidExponentField {
                reason: format!("center {:?} must be finite", self.center),
            });
        }
        Ok(())
    }

    /// Point value `p(x)`.
    pub fn eval(&self, x: Pt2) -> f64 {
        let dx = x.x - self.center[0];
        let dy = x.y - self.center[1];
        let r = dx.hypot(dy);
        self.p_min + self.eps * r.powf(self.alpha)
    }
}

/// One frozen exponent value per element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementExponents {
    /// Exponent at the barycenter of each element.
    pub q: Vec<f64>,
}

impl ElementExponents {
    /// Smallest and largest element exponent.
    pub fn range(&self) -> (f64, f64) {
        let min = self.q.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    }
}

/// Freezes the exponent field element-wise by sampling it at barycenters.
pub fn discretize_exponent(metrics: &MeshMetrics, field: &ExponentField) -> ElementExponents {
    ElementExponents {
        q: metrics.barycenter.iter().map(|&b| field.eval(b)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn kit(q: f64, delta: f64) -> PhiKit {
        PhiKit::new(q, delta).unwrap()
    }

    /// Adaptive Simpson quadrature, used as an independent oracle for phi.
    fn simpson_integral(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let simpson = |a: f64, b: f64| {
            let m = 0.5 * (a + b);
            (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
        };
        fn recurse(
            f: &impl Fn(f64) -> f64,
            a: f64,
            b: f64,
            whole: f64,
            tol: f64,
            depth: u32,
            simpson: &impl Fn(f64, f64) -> f64,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(a, m);
            let right = simpson(m, b);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                recurse(f, a, m, left, 0.5 * tol, depth - 1, simpson)
                    + recurse(f, m, b, right, 0.5 * tol, depth - 1, simpson)
            }
        }
        recurse(f, a, b, simpson(a, b), tol, depth, &simpson)
    }

    fn phi_oracle(q: f64, shift: f64, t: f64) -> f64 {
        let f = move |s: f64| if s == 0.0 { 0.0 } else { (shift + s).powf(q - 2.0) * s };
        // Scale the absolute tolerance to the expected magnitude.
        let scale = phi_with_shift(q, shift, t).abs().max(1e-300);
        simpson_integral(&f, 0.0, t, 1e-13 * scale, 60)
    }

    #[test]
    fn constructor_validates_parameters() {
        assert!(matches!(PhiKit::new(1.0, 0.1), Err(Error::ExponentOutOfRange { .. })));
        assert!(matches!(PhiKit::new(0.5, 0.1), Err(Error::ExponentOutOfRange { .. })));
        assert!(matches!(PhiKit::new(f64::NAN, 0.1), Err(Error::ExponentOutOfRange { .. })));
        assert!(matches!(PhiKit::new(2.0, -1.0), Err(Error::InvalidRegularization { .. })));
        assert!(PhiKit::new(1.1, 0.0).is_ok());
    }

    #[test]
    fn kernel_matches_hand_computed_values() {
        // q = 3, delta = 0: A(a) = |a| a.
        let k = kit(3.0, 0.0);
        let a = Vector2::new(3.0, 4.0);
        let out = k.eval_a(a);
        assert!((out.x - 15.0).abs() < 1e-12 && (out.y - 20.0).abs() < 1e-12);
        // q = 2 reduces to the identity for any delta.
        let k2 = kit(2.0, 0.7);
        let out2 = k2.eval_a(a);
        assert!((out2 - a).norm() < 1e-15);
        assert_eq!(k.eval_a(Vec2::zeros()), Vec2::zeros());
    }

    #[test]
    fn jacobian_at_origin_and_singularity() {
        // delta^(q-2) I with q = 1.5, delta = 1e-4: (1e-4)^(-1/2) = 100.
        let k = kit(1.5, 1e-4);
        let da = k.eval_da(Vec2::zeros()).unwrap();
        assert!((da - Matrix2::identity() * 100.0).norm() < 1e-10);
        assert!(matches!(
            kit(1.5, 0.0).eval_da(Vec2::zeros()),
            Err(Error::SingularKernelJacobian { .. })
        ));
        // q = 2, delta = 0 stays regular (identity kernel).
        let da2 = kit(2.0, 0.0).eval_da(Vec2::zeros()).unwrap();
        assert!((da2 - Matrix2::identity()).norm() < 1e-15);
    }

    #[test]
    fn jacobian_eigenvalues_are_positive() {
        for q in [1.2, 1.5, 2.0, 2.5, 3.5] {
            for delta in [0.0, 1e-4, 1.0] {
                let k = kit(q, delta);
                for r in [1e-6, 1e-2, 1.0, 1e3] {
                    let a = Vector2::new(r * 0.6, r * 0.8);
                    let da = k.eval_da(a).unwrap();
                    // Eigenvalues: (delta+r)^(q-2) tangentially and
                    // (delta+r)^(q-3) (delta + (q-1) r) radially.
                    let shifted = delta + r;
                    let tangential = shifted.powf(q - 2.0);
                    let radial = shifted.powf(q - 3.0) * (delta + (q - 1.0) * r);
                    let unit = a / r;
                    let perp = Vector2::new(-unit.y, unit.x);
                    assert!(((da * unit).dot(&unit) - radial).abs() < 1e-10 * radial);
                    assert!(((da * perp).dot(&perp) - tangential).abs() < 1e-10 * tangential);
                    assert!(tangential > 0.0 && radial > 0.0);
                }
            }
        }
    }

    #[test]
    fn jacobian_is_symmetric_and_matches_directional_derivative() {
        let k = kit(2.7, 1e-3);
        let a = Vector2::new(0.4, -1.2);
        let da = k.eval_da(a).unwrap();
        assert!((da[(0, 1)] - da[(1, 0)]).abs() < 1e-14);
        let h = 1e-6;
        let dir = Vector2::new(0.3, 0.9);
        let fd = (k.eval_a(a + h * dir) - k.eval_a(a - h * dir)) / (2.0 * h);
        assert!((da * dir - fd).norm() < 1e-7 * (da * dir).norm());
    }

    #[test]
    fn phi_closed_forms() {
        // q = 2: phi(t) = t^2 / 2 for every delta.
        for delta in [0.0, 1e-4, 1.0] {
            let k = kit(2.0, delta);
            for t in [1e-12, 1e-3, 1.0, 50.0] {
                assert!(
                    (k.eval_phi(t) - 0.5 * t * t).abs() <= 1e-15 * t * t,
                    "delta = {delta}, t = {t}"
                );
            }
        }
        // delta = 0: phi(t) = t^q / q.
        let k = kit(3.5, 0.0);
        let t = 2.0;
        assert!((k.eval_phi(t) - t.powf(3.5) / 3.5).abs() < 1e-14 * t.powf(3.5));
    }

    #[test]
    fn phi_matches_quadrature_oracle() {
        // Includes t far below delta, where the naive antiderivative loses
        // every significant digit.
        for q in [1.2, 1.5, 2.5, 3.5] {
            for delta in [1e-4, 1.0] {
                let k = kit(q, delta);
                for t in [1e-8, 1e-5, 0.49 * delta, 0.51 * delta, 1.0, 100.0] {
                    let value = k.eval_phi(t);
                    let oracle = phi_oracle(q, delta, t);
                    assert!(
                        (value - oracle).abs() <= 1e-10 * oracle.abs(),
                        "q = {q}, delta = {delta}, t = {t}: {value} vs oracle {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn phi_series_and_closed_form_agree_at_the_switch() {
        for q in [1.3, 2.0, 3.2] {
            for shift in [1e-4, 0.3, 2.0] {
                let below = phi_with_shift(q, shift, 0.4999 * shift);
                let above = phi_with_shift(q, shift, 0.5001 * shift);
                // Continuity across the branch switch, to rounding accuracy.
                let slope = (shift + 0.5 * shift).powf(q - 2.0) * 0.5 * shift;
                let gap = (above - below) - slope * 0.0002 * shift;
                assert!(gap.abs() < 1e-10 * above.abs() + 1e-13 * slope * shift);
            }
        }
    }

    #[test]
    fn phi_is_convex_and_increasing() {
        let k = kit(1.7, 1e-4);
        let mut last = 0.0;
        let mut last_slope = 0.0;
        for i in 1..60 {
            let t = 10f64.powf(-6.0 + 0.2 * i as f64);
            let v = k.eval_phi(t);
            let s = k.eval_phi_prime(t);
            assert!(v > last && s >= last_slope);
            assert!(k.eval_phi_second(t) > 0.0);
            last = v;
            last_slope = s;
        }
    }

    #[test]
    fn conjugate_inverts_the_derivative() {
        for q in [1.2, 1.5, 2.0, 2.5, 3.5] {
            for delta in [0.0, 1e-4, 1.0] {
                let k = kit(q, delta);
                for t in [1e-6, 1e-2, 1.0, 1e3] {
                    let s = k.eval_phi_prime(t);
                    let t_back = k.phi_prime_inverse(s).unwrap();
                    assert!(
                        (t_back - t).abs() <= 1e-10 * t,
                        "q = {q}, delta = {delta}, t = {t} -> {t_back}"
                    );
                }
            }
        }
    }

    #[test]
    fn fenchel_young_is_an_identity_along_the_graph() {
        // phi(t) + phi*(phi'(t)) = t phi'(t) characterizes the conjugate.
        for q in [1.2, 2.0, 3.5] {
            for delta in [0.0, 1e-4, 1.0] {
                let k = kit(q, delta);
                for t in [1e-5, 0.3, 7.0] {
                    let s = k.eval_phi_prime(t);
                    let lhs = k.eval_phi(t) + k.eval_phi_conjugate(s).unwrap();
                    let rhs = s * t;
                    assert!(
                        (lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300),
                        "q = {q}, delta = {delta}, t = {t}"
                    );
                }
            }
        }
    }

    #[test]
    fn young_inequality_off_the_graph() {
        let k = kit(2.5, 1e-2);
        for t in [0.1, 1.0, 4.0] {
            for s in [0.05, 0.8, 3.0] {
                let lhs = s * t;
                let rhs = k.eval_phi(t) + k.eval_phi_conjugate(s).unwrap();
                assert!(lhs <= rhs + 1e-12 * rhs.abs());
            }
        }
    }

    #[test]
    fn conjugate_closed_form_without_regularization() {
        let k = kit(3.0, 0.0);
        let q_conj = 1.5;
        for s in [0.2f64, 1.0, 9.0] {
            let expected = s.powf(q_conj) / q_conj;
            assert!((k.eval_phi_conjugate(s).unwrap() - expected).abs() < 1e-13 * expected);
        }
        // q = 2: phi* = s^2 / 2 for every delta.
        let k2 = kit(2.0, 0.3);
        assert!((k2.eval_phi_conjugate(4.0).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn natural_distance_norms_match_energy() {
        // For delta = 0: |F(a)|^2 = |a|^q = q phi(|a|).
        let k = kit(2.8, 0.0);
        let a = Vector2::new(1.1, -0.3);
        let f = k.eval_f(a);
        let r = a.norm();
        assert!((f.norm_squared() - r.powf(2.8)).abs() < 1e-13 * r.powf(2.8));
        assert!((f.norm_squared() - 2.8 * k.eval_phi(r)).abs() < 1e-13 * f.norm_squared());
    }

    #[test]
    fn conjugate_distance_composed_with_kernel() {
        // |F*(A(a))| = |F(a)| holds exactly for delta = 0 and to leading
        // order for small delta.
        let k = kit(2.6, 0.0);
        for a in [Vector2::new(0.3, 0.4), Vector2::new(-2.0, 1.0)] {
            let lhs = k.eval_fstar(k.eval_a(a)).norm();
            let rhs = k.eval_f(a).norm();
            assert!((lhs - rhs).abs() < 1e-12 * rhs);
        }
        assert_eq!(k.eval_fstar(Vec2::zeros()), Vec2::zeros());
        assert_eq!(k.eval_f(Vec2::zeros()), Vec2::zeros());
    }

    #[test]
    fn shifted_density_reduces_to_plain_at_zero_shift() {
        let k = kit(1.8, 1e-4);
        for t in [1e-6, 0.2, 3.0] {
            assert_eq!(k.eval_phi_shifted(0.0, t), k.eval_phi(t));
        }
        // Shifting by `a` equals using regularization delta + a.
        let shifted = kit(1.8, 1e-4 + 0.7);
        for t in [1e-6, 0.2, 3.0] {
            assert_eq!(k.eval_phi_shifted(0.7, t), shifted.eval_phi(t));
            assert_eq!(
                k.eval_phi_shifted_conjugate(0.7, t).unwrap(),
                shifted.eval_phi_conjugate(t).unwrap()
            );
        }
    }

    #[test]
    fn exponent_field_profile() {
        let field = ExponentField::new(1.5, 1.0, 0.5).unwrap();
        assert_eq!(field.eval(Pt2::new(0.0, 0.0)), 1.5);
        assert!((field.eval(Pt2::new(1.0, 0.0)) - 2.5).abs() < 1e-15);
        assert!((field.eval(Pt2::new(0.0, -0.25)) - 2.0).abs() < 1e-15);
        assert!(ExponentField::new(1.0, 1.0, 0.5).is_err());
        assert!(ExponentField::new(1.5, -0.1, 0.5).is_err());
        assert!(ExponentField::new(1.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn discretized_exponents_sample_barycenters() {
        use crate::mesh::{build_criss_cross, compute_metrics, DirichletSelector, Rect};
        let mesh = build_criss_cross(2, Rect::symmetric_unit(), DirichletSelector::All).unwrap();
        let metrics = compute_metrics(&mesh);
        let field = ExponentField::new(2.0, 1.0, 1.0).unwrap();
        let elem_q = discretize_exponent(&metrics, &field);
        assert_eq!(elem_q.q.len(), mesh.n_elements());
        for (t, &q) in elem_q.q.iter().enumerate() {
            assert_eq!(q, field.eval(metrics.barycenter[t]));
            assert!(q > 2.0, "barycenters avoid the center for this mesh");
        }
        let (lo, hi) = elem_q.range();
        assert!(lo > 2.0 && hi < 3.5);
    }
}
