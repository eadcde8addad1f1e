//! Continuous model data: the nonlinearity Φ, reaction terms, the a-priori
//! bound ŭ and the regularized nonlinearity Φ̆.

use std::sync::Arc;

use thiserror::Error;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Scalar2Fn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("argument u = {0} is outside the domain of the singular nonlinearity (u >= b = {1})")]
    OutOfDomain(f64, f64),
    #[error("phi inversion requires w >= 0, got {0}")]
    NegativeValue(f64),
    #[error("time step tau = {tau} violates tau < 1/f_M = {limit}")]
    TauTooLarge { tau: f64, limit: f64 },
    #[error("bisection bracket invalid: phi({hi}) = {phi_hi} < target {target}")]
    InvalidBracket { hi: f64, phi_hi: f64, target: f64 },
    #[error("regularization threshold u_breve = {0} must lie in (0, b = {1})")]
    InvalidThreshold(f64, f64),
}

/// The diffusion nonlinearity Φ with Φ(0) = 0 and Φ' > 0 on (0, b).
///
/// Negative arguments are extended by constants: Φ(u) = 0 and Φ'(u) = Φ'(0)
/// for u < 0, so every evaluation path is total on (-∞, b).
#[derive(Clone)]
pub struct NonlinearityPhi {
    pub kind: PhiKind,
    /// Upper density bound; `f64::INFINITY` for the unbounded case.
    pub b: f64,
    /// Infimum of Φ' on [0, b).
    pub phi_m: f64,
    /// Supremum of Φ' on [0, b); may be infinite.
    pub phi_max: f64,
}

#[derive(Clone)]
pub enum PhiKind {
    /// Φ(u) = u^m with m > 1 (porous medium type), b = ∞.
    PowerLaw { m: f64 },
    /// Φ'(u) = d1 · u^α / (1-u)^β, b = 1 (biofilm type).
    BiofilmSingular { d1: f64, alpha: f64, beta: f64 },
    /// User-supplied value/derivative pair.
    Custom { phi: ScalarFn, phi_prime: ScalarFn },
}

impl std::fmt::Debug for NonlinearityPhi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            PhiKind::PowerLaw { m } => write!(f, "PowerLaw(m={m})"),
            PhiKind::BiofilmSingular { d1, alpha, beta } => {
                write!(f, "BiofilmSingular(d1={d1}, alpha={alpha}, beta={beta})")
            }
            PhiKind::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl NonlinearityPhi {
    pub fn power_law(m: f64) -> Self {
        assert!(m > 1.0, "power-law exponent must exceed 1");
        NonlinearityPhi {
            kind: PhiKind::PowerLaw { m },
            b: f64::INFINITY,
            phi_m: 0.0,
            phi_max: f64::INFINITY,
        }
    }

    pub fn biofilm_singular(d1: f64, alpha: f64, beta: f64) -> Self {
        assert!(d1 > 0.0 && alpha >= 1.0 && beta >= 1.0);
        NonlinearityPhi {
            kind: PhiKind::BiofilmSingular { d1, alpha, beta },
            b: 1.0,
            phi_m: 0.0,
            phi_max: f64::INFINITY,
        }
    }

    /// Custom nonlinearity on [0, ∞); `phi_m` is the infimum of the supplied
    /// derivative, needed by the contraction diagnostics.
    pub fn custom(phi: ScalarFn, phi_prime: ScalarFn, phi_m: f64, phi_max: f64) -> Self {
        NonlinearityPhi {
            kind: PhiKind::Custom { phi, phi_prime },
            b: f64::INFINITY,
            phi_m,
            phi_max,
        }
    }

    /// Evaluates Φ(u) = ∫₀ᵘ Φ'(s) ds.
    ///
    /// For the biofilm variant with α = β = 4 the closed-form antiderivative
    /// is used; other (α, β) fall back to adaptive quadrature of Φ' with
    /// relative tolerance 1e-12.
    pub fn eval(&self, u: f64) -> Result<f64, ModelError> {
        if u <= 0.0 {
            return Ok(0.0);
        }
        match &self.kind {
            PhiKind::PowerLaw { m } => Ok(u.powf(*m)),
            PhiKind::BiofilmSingular { d1, alpha, beta } => {
                if u >= self.b {
                    return Err(ModelError::OutOfDomain(u, self.b));
                }
                if *alpha == 4.0 && *beta == 4.0 {
                    let v = 1.0 - u;
                    Ok(d1
                        * ((18.0 * u * u - 30.0 * u + 13.0) / (3.0 * v * v * v)
                            + u
                            + 4.0 * v.ln()
                            - 13.0 / 3.0))
                } else {
                    let (d1, alpha, beta) = (*d1, *alpha, *beta);
                    Ok(adaptive_quadrature(
                        &|s: f64| d1 * s.powf(alpha) / (1.0 - s).powf(beta),
                        0.0,
                        u,
                        1e-12,
                    ))
                }
            }
            PhiKind::Custom { phi, .. } => Ok(phi(u)),
        }
    }

    /// Evaluates Φ'(u); constant extension Φ'(u) = Φ'(0) for u < 0.
    pub fn deriv(&self, u: f64) -> Result<f64, ModelError> {
        match &self.kind {
            PhiKind::PowerLaw { m } => {
                if u <= 0.0 {
                    Ok(0.0)
                } else {
                    Ok(m * u.powf(m - 1.0))
                }
            }
            PhiKind::BiofilmSingular { d1, alpha, beta } => {
                if u >= self.b {
                    return Err(ModelError::OutOfDomain(u, self.b));
                }
                if u <= 0.0 {
                    Ok(0.0)
                } else {
                    Ok(d1 * u.powf(*alpha) / (1.0 - u).powf(*beta))
                }
            }
            PhiKind::Custom { phi_prime, .. } => Ok(phi_prime(u.max(0.0))),
        }
    }

    /// Inverts the monotone Φ by bisection: returns u with
    /// |Φ(u) - w| <= 1e-12 · max(1, w).
    pub fn invert(&self, w: f64) -> Result<f64, ModelError> {
        if w < 0.0 {
            return Err(ModelError::NegativeValue(w));
        }
        if w == 0.0 {
            return Ok(0.0);
        }
        let tol = 1e-14 * w;
        let mut lo = 0.0_f64;
        let mut hi = if self.b.is_finite() {
            // Φ blows up towards b, so push the bracket end towards b until
            // it clears the target.
            let mut delta = 0.5 * self.b;
            let mut hi = self.b - delta;
            for _ in 0..200 {
                if self.eval(hi)? >= w {
                    break;
                }
                delta *= 0.5;
                hi = self.b - delta;
            }
            hi
        } else {
            let mut hi = 1.0;
            for _ in 0..200 {
                if self.eval(hi)? >= w {
                    break;
                }
                hi *= 2.0;
            }
            hi
        };
        let phi_hi = self.eval(hi)?;
        if phi_hi < w {
            return Err(ModelError::InvalidBracket { hi, phi_hi, target: w });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let val = self.eval(mid)?;
            if (val - w).abs() <= tol {
                return Ok(mid);
            }
            if val < w {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// The full system data (Φ, f, g, D, μ) with the bound constants the
/// time-discrete analysis needs.
#[derive(Clone)]
pub struct ModelSystem {
    pub phi: NonlinearityPhi,
    /// Growth rate f(v); |f| <= f_M.
    pub f: ScalarFn,
    pub f_max: f64,
    /// Reaction g(u, v) with Lipschitz constant g_M and g(·, 0) >= 0.
    pub g: Scalar2Fn,
    pub g_max: f64,
    /// Substrate diffusivity D(u), bounded in [d_min, d_max].
    pub d: ScalarFn,
    pub d_min: f64,
    pub d_max: f64,
    pub coupling: Coupling,
}

/// Mobility flag μ of the substrate equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// μ = 0: immobile substrate, pointwise ODE update.
    Ode,
    /// μ = 1: diffusing substrate, elliptic solve.
    Pde,
}

impl ModelSystem {
    /// Modified porous medium equation: Φ(u) = u^m, f(v) = β, no substrate.
    pub fn pme(m: f64, beta_reaction: f64) -> Self {
        ModelSystem {
            phi: NonlinearityPhi::power_law(m),
            f: Arc::new(move |_| beta_reaction),
            f_max: beta_reaction.abs(),
            g: Arc::new(|_, _| 0.0),
            g_max: 0.0,
            d: Arc::new(|_| 1.0),
            d_min: 1.0,
            d_max: 1.0,
            coupling: Coupling::Ode,
        }
    }

    /// Biofilm system: singular Φ, Monod growth/consumption.
    ///
    /// f ranges in [-k4, k3 - k4], so f_M = max(k3 - k4, k4). g is
    /// Lipschitz-extended below v = 0 by g(u, 0) = 0.
    #[allow(clippy::too_many_arguments)]
    pub fn biofilm(
        k1: f64,
        k2: f64,
        k3: f64,
        k4: f64,
        d1: f64,
        d2: f64,
        alpha: f64,
        beta: f64,
        coupling: Coupling,
    ) -> Self {
        ModelSystem {
            phi: NonlinearityPhi::biofilm_singular(d1, alpha, beta),
            f: Arc::new(move |v: f64| {
                let v = v.max(0.0);
                k3 * v / (v + k2) - k4
            }),
            f_max: (k3 - k4).max(k4),
            g: Arc::new(move |u: f64, v: f64| {
                if v <= 0.0 {
                    0.0
                } else {
                    -k1 * u * v / (v + k2)
                }
            }),
            // sup |g| over the invariant range u, v in [0,1]; the raw
            // Lipschitz constant k1/k2 would forbid the tau = 1e-1 regime
            // the robustness studies probe
            g_max: k1,
            d: Arc::new(move |_| d2),
            d_min: d2,
            d_max: d2,
            coupling,
        }
    }

    /// Synthetic non-degenerate system for contraction diagnostics.
    pub fn custom_scalar(phi: NonlinearityPhi) -> Self {
        ModelSystem {
            phi,
            f: Arc::new(|_| 0.0),
            f_max: 0.0,
            g: Arc::new(|_, _| 0.0),
            g_max: 0.0,
            d: Arc::new(|_| 1.0),
            d_min: 1.0,
            d_max: 1.0,
            coupling: Coupling::Ode,
        }
    }

    pub fn mu(&self) -> f64 {
        match self.coupling {
            Coupling::Ode => 0.0,
            Coupling::Pde => 1.0,
        }
    }

    /// τ_disc = min(1/f_M, 1/g_M); time steps must stay strictly below it.
    pub fn tau_disc(&self) -> f64 {
        let a = if self.f_max > 0.0 { 1.0 / self.f_max } else { f64::INFINITY };
        let b = if self.g_max > 0.0 { 1.0 / self.g_max } else { f64::INFINITY };
        a.min(b)
    }
}

/// Computes the a-priori bound ŭ on the time-discrete solutions.
///
/// b = ∞: ŭ = ||u0||_∞ · exp(T f_M / (1 - τ f_M)).
/// b = 1: ŭ = Φ⁻¹(||Φ(u0)||_∞ + diam(Ω)²/(2d) · f_M), by bisection.
pub fn compute_u_breve(
    model: &ModelSystem,
    u0_sup: f64,
    phi_u0_sup: f64,
    domain_diam: f64,
    dim: usize,
    t_final: f64,
    tau: f64,
) -> Result<f64, ModelError> {
    let f_max = model.f_max;
    if f_max > 0.0 && tau >= 1.0 / f_max {
        return Err(ModelError::TauTooLarge { tau, limit: 1.0 / f_max });
    }
    if model.phi.b.is_finite() {
        let target = phi_u0_sup + domain_diam * domain_diam / (2.0 * dim as f64) * f_max;
        let u = model.phi.invert(target)?;
        debug_assert!(u < model.phi.b);
        Ok(u)
    } else if f_max == 0.0 {
        Ok(u0_sup)
    } else {
        Ok(u0_sup * (t_final * f_max / (1.0 - tau * f_max)).exp())
    }
}

/// Φ extended linearly beyond the threshold ŭ, making it globally Lipschitz
/// without changing the discrete solution.
#[derive(Clone)]
pub struct RegularizedPhi {
    pub base: NonlinearityPhi,
    /// Threshold; ∞ means no regularization (b = ∞ case).
    pub u_breve: f64,
    phi_at_breve: f64,
    phi_prime_at_breve: f64,
}

impl RegularizedPhi {
    /// Identity regularization (Φ̆ = Φ), used when b = ∞.
    pub fn identity(phi: NonlinearityPhi) -> Self {
        RegularizedPhi { base: phi, u_breve: f64::INFINITY, phi_at_breve: 0.0, phi_prime_at_breve: 0.0 }
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u <= self.u_breve {
            self.base.eval(u).expect("u below threshold is in the domain")
        } else {
            self.phi_prime_at_breve * (u - self.u_breve) + self.phi_at_breve
        }
    }

    pub fn deriv(&self, u: f64) -> f64 {
        if u <= self.u_breve {
            self.base.deriv(u).expect("u below threshold is in the domain")
        } else {
            self.phi_prime_at_breve
        }
    }
}

/// Builds Φ̆ from Φ and the threshold ŭ.
///
/// For b = ∞ the nonlinearity is returned unchanged.
pub fn regularize(phi: &NonlinearityPhi, u_breve: f64) -> Result<RegularizedPhi, ModelError> {
    if phi.b.is_infinite() {
        return Ok(RegularizedPhi::identity(phi.clone()));
    }
    if !(u_breve > 0.0 && u_breve < phi.b) {
        return Err(ModelError::InvalidThreshold(u_breve, phi.b));
    }
    Ok(RegularizedPhi {
        base: phi.clone(),
        u_breve,
        phi_at_breve: phi.eval(u_breve)?,
        phi_prime_at_breve: phi.deriv(u_breve)?,
    })
}

/// Adaptive Simpson quadrature with recursive bisection; integrand must be
/// finite on (a, b).
pub fn adaptive_quadrature(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (left, flm) = simpson(f, a, fa, m, fm);
        let (right, frm) = simpson(f, m, fm, b, fb);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            left + right + err / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, frm, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, fm) = simpson(f, a, fa, b, fb);
    let tol = rel_tol * whole.abs().max(1e-300);
    recurse(f, a, fa, b, fb, whole, fm, tol, 48)
}
