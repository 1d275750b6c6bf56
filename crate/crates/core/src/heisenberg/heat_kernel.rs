//! Heat kernel of the Heisenberg group by numerical quadrature of
//!
//! ```text
//! p_t(q) = 4/(2πt)^{k+1} ∫ (2λ/sinh 2λ)^k exp(4iλz/t − 2λ coth(2λ) r²/(2t)) dλ,   r² = |x|² + |y|²
//! ```
//!
//! On the real axis the integrand oscillates with frequency `4z/t` and the
//! result cancels down to `exp(−π|z|/t)` or so, which is far below double
//! precision round-off for small `t`. The default rule therefore moves the
//! contour to `Im λ = μ*`, the saddle of the integrand on the imaginary axis,
//! where it is positive and non-oscillating near the peak.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use super::HeisPoint;
use crate::error::{Error, Result};

/// How to evaluate the λ-integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Quadrature {
    /// Steepest-descent contour with automatic step and width.
    Contour,
    /// Trapezoid rule over `[−λ_max, λ_max]` on the real axis.
    RealAxis { lambda_max: f64, n_quad: usize },
}

impl Quadrature {
    /// Real-axis rule with `λ_max = min(40/t, 400)` and 2001 nodes.
    pub fn real_axis_default(t: f64) -> Self {
        Quadrature::RealAxis {
            lambda_max: (40.0 / t).min(400.0),
            n_quad: 2001,
        }
    }
}

/// `log` of the integrand at complex `λ`.
fn log_integrand(lambda: Complex64, k: usize, z: f64, r2: f64, t: f64) -> Complex64 {
    let (ratio, lcoth) = if lambda.norm() < 1e-6 {
        // removable singularity: 2λ/sinh 2λ → 1, λ coth 2λ → ½
        let l2 = lambda * lambda;
        (Complex64::new(1.0, 0.0) - l2 * (2.0 / 3.0), Complex64::new(0.5, 0.0) + l2 * (2.0 / 3.0))
    } else {
        let two = lambda * 2.0;
        (two / two.sinh(), lambda * two.cosh() / two.sinh())
    };
    ratio.ln() * k as f64 + Complex64::new(0.0, 4.0 * z / t) * lambda - lcoth * (r2 / t)
}

/// `ψ(μ) = log` of the integrand at `λ = iμ`, real for `0 ≤ μ < π/2`.
fn psi(mu: f64, k: usize, z: f64, r2: f64, t: f64) -> f64 {
    if mu < 1e-6 {
        let m2 = mu * mu;
        return k as f64 * (2.0 / 3.0 * m2) - 4.0 * mu * z / t - (0.5 - 2.0 / 3.0 * m2) * r2 / t;
    }
    let s = (2.0 * mu).sin();
    k as f64 * (2.0 * mu / s).ln() - 4.0 * mu * z / t - mu * (2.0 * mu).cos() / s * r2 / t
}

/// Minimise the convex `ψ` on `[0, π/2)` by golden-section search.
fn saddle(k: usize, z: f64, r2: f64, t: f64) -> f64 {
    let f = |m: f64| psi(m, k, z, r2, t);
    // ψ'(0) = −4z/t ≥ 0 only if z = 0; then the saddle sits on the real axis
    if z <= 0.0 {
        return 0.0;
    }
    let mut a = 0.0;
    let mut b = FRAC_PI_2 * (1.0 - 1e-12);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..300 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if (b - a) < 1e-14 * (FRAC_PI_2 - a).max(1e-300) {
            break;
        }
    }
    0.5 * (a + b)
}

fn check(q: &HeisPoint, t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("heat kernel time must be positive, got {t}")));
    }
    if !q.z.is_finite() || !q.x.iter().chain(&q.y).all(|v| v.is_finite()) {
        return Err(Error::Evaluation("heat kernel argument".into()));
    }
    Ok(())
}

fn log_prefactor(k: usize, t: f64) -> f64 {
    4f64.ln() - (k as f64 + 1.0) * (2.0 * PI * t).ln()
}

/// `log p_t(q)` by the contour rule; accurate far into the tails.
pub fn log_heat_kernel(q: &HeisPoint, t: f64) -> Result<f64> {
    check(q, t)?;
    let k = q.k();
    let z = q.z.abs();
    let r2 = q.horizontal_norm_squared();
    let mu = saddle(k, z, r2, t);
    let psi0 = psi(mu, k, z, r2, t);

    // curvature of ψ sets the peak width along the shifted line
    let hh = 1e-4 * (FRAC_PI_2 - mu).min(1.0);
    let lo = (mu - hh).max(0.0);
    let hi = mu + hh;
    let curv = if mu - hh < 0.0 {
        // one-sided at the real axis; ψ is even in μ there
        2.0 * (psi(hh, k, z, r2, t) - psi(0.0, k, z, r2, t)) / (hh * hh)
    } else {
        (psi(hi, k, z, r2, t) - 2.0 * psi0 + psi(lo, k, z, r2, t)) / (hh * hh)
    };
    let width = if curv > 0.0 { 1.0 / curv.sqrt() } else { 1.0 };
    let eps = FRAC_PI_2 - mu;
    let h = (eps.min(0.5) / 8.0).min(width / 4.0);
    let half = 30f64.max(40.0 * width);
    let n = (half / h).ceil() as usize;

    let mut sum = 0.0;
    for i in 0..=n {
        let s = i as f64 * h;
        let lf = log_integrand(Complex64::new(s, mu), k, z, r2, t);
        let w = if i == 0 { 0.5 } else { 1.0 };
        let re = lf.re - psi0;
        if re < -745.0 {
            continue;
        }
        sum += w * re.exp() * lf.im.cos();
    }
    let integral = 2.0 * h * sum;
    if !(integral > 0.0) {
        return Err(Error::Evaluation(format!(
            "heat kernel quadrature gave {integral:e}"
        )));
    }
    Ok(log_prefactor(k, t) + psi0 + integral.ln())
}

/// `p_t(q)` by the contour rule.
pub fn heat_kernel(q: &HeisPoint, t: f64) -> Result<f64> {
    Ok(log_heat_kernel(q, t)?.exp())
}

/// `p_t(q)` with an explicit quadrature rule. The real-axis rule is clamped at 0.
pub fn heat_kernel_with(q: &HeisPoint, t: f64, rule: Quadrature) -> Result<f64> {
    match rule {
        Quadrature::Contour => heat_kernel(q, t),
        Quadrature::RealAxis { lambda_max, n_quad } => {
            check(q, t)?;
            if n_quad < 8 {
                return Err(Error::Domain(format!("n_quad must be at least 8, got {n_quad}")));
            }
            if !(lambda_max > 0.0) {
                return Err(Error::Domain(format!("lambda_max must be positive, got {lambda_max}")));
            }
            let k = q.k();
            let r2 = q.horizontal_norm_squared();
            let h = 2.0 * lambda_max / (n_quad - 1) as f64;
            let mut sum = 0.0;
            for i in 0..n_quad {
                let l = -lambda_max + i as f64 * h;
                let lf = log_integrand(Complex64::new(l, 0.0), k, q.z, r2, t);
                let w = if i == 0 || i == n_quad - 1 { 0.5 } else { 1.0 };
                sum += w * lf.re.exp() * lf.im.cos();
            }
            Ok((log_prefactor(k, t).exp() * h * sum).max(0.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1(x: f64, y: f64, z: f64) -> HeisPoint {
        HeisPoint::new(vec![x], vec![y], z).unwrap()
    }

    /// On the z-axis with k = 1 the integral has the closed form
    /// `∫ 2λ/sinh(2λ) cos(aλ) dλ = (π²/4) sech²(πa/4)`, `a = 4z/t`.
    fn axis_oracle(z: f64, t: f64) -> f64 {
        let a = 4.0 * z / t;
        let sech = 1.0 / (PI * a / 4.0).cosh();
        4.0 / (2.0 * PI * t).powi(2) * PI * PI / 4.0 * sech * sech
    }

    #[test]
    fn matches_closed_form_on_vertical_axis() {
        for &(z, t) in &[(0.0, 1.0), (0.1, 0.5), (0.25, 0.01), (1.0, 0.2), (-0.7, 1.3)] {
            let p = heat_kernel(&p1(0.0, 0.0, z), t).unwrap();
            let o = axis_oracle(z, t);
            assert!(((p - o) / o).abs() < 1e-8, "z={z} t={t}: {p:e} vs {o:e}");
        }
    }

    #[test]
    fn contour_and_real_axis_agree_where_both_work() {
        for &(x, y, z, t) in &[(0.3, -0.2, 0.1, 1.0), (1.0, 0.5, -0.4, 0.5), (0.0, 0.9, 0.0, 0.3)] {
            let a = heat_kernel(&p1(x, y, z), t).unwrap();
            let b = heat_kernel_with(&p1(x, y, z), t, Quadrature::real_axis_default(t)).unwrap();
            assert!(((a - b) / a).abs() < 1e-6, "{a:e} vs {b:e}");
        }
    }

    #[test]
    fn even_in_z_and_positive_on_grid() {
        for &t in &[0.1, 0.5, 1.0] {
            for i in 0..5 {
                for j in 0..5 {
                    let r = i as f64 * 0.25;
                    let z = j as f64 * 0.25;
                    let a = heat_kernel(&p1(r, r * 0.5, z), t).unwrap();
                    let b = heat_kernel(&p1(r, r * 0.5, -z), t).unwrap();
                    assert!(a > 0.0);
                    assert!(((a - b) / a).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn higher_rank_axis_value() {
        let q = HeisPoint::identity(2);
        let a = heat_kernel(&q, 0.7).unwrap();
        let b = heat_kernel_with(&q, 0.7, Quadrature::RealAxis { lambda_max: 40.0, n_quad: 40001 }).unwrap();
        assert!(((a - b) / a).abs() < 1e-9);
    }

    #[test]
    fn argument_errors() {
        assert!(heat_kernel(&p1(0.0, 0.0, 0.0), 0.0).is_err());
        assert!(heat_kernel_with(&p1(0.0, 0.0, 0.0), 1.0, Quadrature::RealAxis { lambda_max: 1.0, n_quad: 7 }).is_err());
    }
}
