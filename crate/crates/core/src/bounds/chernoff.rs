//! Chernoff coefficient: closed form at `p = 0`, exact value by quadrature,
//! and the two Gaussian-CDF upper bounds.
//!
//! Everything is evaluated in units where the `f0` standard deviation
//! `√(ν²/λ)` is one, so that `f0 = N(0, 1)` and `f1 = N(√(s x), 1 + x)` with
//! `x = rλ`.

use serde::Serialize;

use super::ChernoffInputs;
use crate::error::{Error, Result};
use crate::numerics::{normal, quadrature};

/// `C_0^γ = ∫ f1^γ f0^{1−γ}`, the coefficient between two Gaussians.
pub fn chernoff_closed_form_c0(inputs: &ChernoffInputs) -> f64 {
    c0(inputs.snr(), inputs.s, inputs.gamma)
}

pub(crate) fn c0(x: f64, s: f64, gamma: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let g = 1.0 + (1.0 - gamma) * x;
    let ln = 0.5 * ((1.0 - gamma) * x.ln_1p() - ((1.0 - gamma) * x).ln_1p())
        - gamma * (1.0 - gamma) * s * x / (2.0 * g);
    ln.exp().min(1.0)
}

/// Exact `C_p^γ` by adaptive Gauss–Kronrod quadrature over ±12 standard
/// deviations of the wider component, with the integrand formed in log space.
pub fn chernoff_exact(inputs: &ChernoffInputs, rel_tol: f64) -> Result<f64> {
    if !(rel_tol > 0.0 && rel_tol <= 1e-3) {
        return Err(Error::domain("rel_tol", format!("must lie in (0, 1e-3], got {rel_tol}")));
    }
    let (p, x, s, gamma) = (inputs.p, inputs.snr(), inputs.s, inputs.gamma);
    if p == 1.0 || x == 0.0 || gamma == 1.0 {
        return Ok(1.0);
    }
    let m = (s * x).sqrt();
    let v1 = 1.0 + x;
    let sd1 = v1.sqrt();
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    let integrand = |y: f64| {
        let l1 = normal::ln_pdf(y, m, v1);
        let l0 = normal::ln_pdf(y, 0.0, 1.0);
        let lp = normal::log_add_exp(ln_p + l1, ln_q + l0);
        (gamma * l1 + (1.0 - gamma) * lp).exp()
    };

    // Breakpoints at the features of the integrand: both component bulks,
    // the bulk of f1^γ f0^{1−γ}, and the decision boundaries.
    let g = 1.0 + (1.0 - gamma) * x;
    let m01 = gamma * m / g;
    let sd01 = (v1 / g).sqrt();
    let mut breaks = Vec::with_capacity(32);
    for k in [-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0] {
        breaks.push(k);
        breaks.push(m + k * sd1);
        breaks.push(m01 + k * sd01);
    }
    if let Some((lo, hi)) = boundary_points(x, s, inputs.eta()) {
        breaks.push(lo);
        breaks.push(hi);
    }
    let lo = (-12.0f64).min(m - 12.0 * sd1);
    let hi = 12.0f64.max(m + 12.0 * sd1);
    let value = quadrature::integrate(integrand, lo, hi, &breaks, 1e-300, rel_tol, 4000)
        .map_err(|e| match e {
            Error::Numerical { message, .. } => Error::numerical(
                "chernoff_exact",
                format!("p={p}, rλ={x}, s={s}, γ={gamma}: {message}"),
            ),
            other => other,
        })?
        .value;
    Ok(value.min(1.0))
}

/// Decision boundaries `y± = (−√s ± √((1+x)B))/√x`, `B = s + 2η + log(1+x)`,
/// where `p·f1 = (1−p)·f0`; `None` when `B < 0` or `x = 0`.
fn boundary_points(x: f64, s: f64, eta: f64) -> Option<(f64, f64)> {
    if !(x > 0.0) || !eta.is_finite() {
        return None;
    }
    let b = s + 2.0 * eta + x.ln_1p();
    if b < 0.0 {
        return None;
    }
    let root = ((1.0 + x) * b).sqrt();
    let sx = x.sqrt();
    let ss = s.sqrt();
    let lo = -(ss + root) / sx;
    // (−√s + root)/√x = ((1+x)B − s)/((√s + root)√x) avoids cancellation.
    let hi = if ss + root > 0.0 {
        ((1.0 + x) * b - s) / ((ss + root) * sx)
    } else {
        0.0
    };
    Some((lo, hi))
}

/// Standardized region boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZValues {
    pub z1_plus: f64,
    pub z1_minus: f64,
    pub z01_plus: f64,
    pub z01_minus: f64,
    pub z0_plus: f64,
    pub z0_minus: f64,
}

/// `P1(Y1)`, `P01(Y0)` and `P0(Y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionProbs {
    pub p1: f64,
    pub p01: f64,
    pub p0: f64,
}

/// Decision regions `Y1 = {p f1 > (1−p) f0}` and `Y0` (its complement).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regions {
    /// `(y−, y+)` in units of the `f0` standard deviation; `None` when there
    /// is no real boundary (`Y1` is empty or the whole line).
    pub boundary: Option<(f64, f64)>,
    pub z: ZValues,
    pub probs: RegionProbs,
}

impl Regions {
    fn constant(y1_everywhere: bool) -> Self {
        let (inf, ninf) = (f64::INFINITY, f64::NEG_INFINITY);
        if y1_everywhere {
            Regions {
                boundary: None,
                z: ZValues {
                    z1_plus: inf,
                    z1_minus: ninf,
                    z01_plus: ninf,
                    z01_minus: ninf,
                    z0_plus: inf,
                    z0_minus: ninf,
                },
                probs: RegionProbs {
                    p1: 1.0,
                    p01: 0.0,
                    p0: 1.0,
                },
            }
        } else {
            Regions {
                boundary: None,
                z: ZValues {
                    z1_plus: ninf,
                    z1_minus: ninf,
                    z01_plus: inf,
                    z01_minus: ninf,
                    z0_plus: ninf,
                    z0_minus: ninf,
                },
                probs: RegionProbs {
                    p1: 0.0,
                    p01: 1.0,
                    p0: 0.0,
                },
            }
        }
    }
}

/// Region boundaries and probabilities for the inputs' own `η`.
pub fn region_boundaries(inputs: &ChernoffInputs) -> Regions {
    match inputs.p {
        p if p == 0.0 => Regions::constant(false),
        p if p == 1.0 => Regions::constant(true),
        _ => regions(inputs.snr(), inputs.s, inputs.eta(), inputs.gamma),
    }
}

/// Region quantities for an arbitrary threshold `η` and exponent `γ`.
pub(crate) fn regions(x: f64, s: f64, eta: f64, gamma: f64) -> Regions {
    if x == 0.0 {
        // f1 = f0: the sign of η alone decides; η = 0 is the symmetric limit.
        if eta > 0.0 {
            return Regions::constant(false);
        }
        if eta < 0.0 {
            return Regions::constant(true);
        }
        let (ninf, half) = (f64::NEG_INFINITY, 0.5);
        return Regions {
            boundary: None,
            z: ZValues {
                z1_plus: 0.0,
                z1_minus: ninf,
                z01_plus: 0.0,
                z01_minus: ninf,
                z0_plus: 0.0,
                z0_minus: ninf,
            },
            probs: RegionProbs {
                p1: half,
                p01: half,
                p0: half,
            },
        };
    }
    let l = x.ln_1p();
    let b = s + 2.0 * eta + l;
    if b < 0.0 {
        return Regions::constant(true);
    }
    let sqb = b.sqrt();
    let sx = x.sqrt();
    let ss = s.sqrt();
    let a = (s * (1.0 + x)).sqrt();

    // z1± = (±√(s(1+x)) − √B)/√x
    let z1_minus = -(a + sqb) / sx;
    let z1_plus = ratio(s * x - 2.0 * eta - l, (a + sqb) * sx);

    // z0± = (±√s − √((1+x)B))/√x
    let root = ((1.0 + x) * b).sqrt();
    let z0_minus = -(ss + root) / sx;
    let z0_plus = ratio(-(x * s) - (1.0 + x) * (2.0 * eta + l), (ss + root) * sx);

    // z01± = √(g/x)·(−√(s(1+x))/g ± √B), g = 1 + (1−γ)x
    let g = 1.0 + (1.0 - gamma) * x;
    let pre = (g / x).sqrt();
    let c = a / g;
    let z01_minus = -pre * (c + sqb);
    // B − c² = s·x·((1−2γ) + (1−γ)²x)/g² + 2η + log(1+x)
    let diff = s * x * ((1.0 - 2.0 * gamma) + (1.0 - gamma).powi(2) * x) / (g * g) + 2.0 * eta + l;
    let z01_plus = pre * ratio(diff, sqb + c);

    let y_lo = z0_minus;
    let y_hi = -z0_plus;
    Regions {
        boundary: Some((y_lo, y_hi)),
        z: ZValues {
            z1_plus,
            z1_minus,
            z01_plus,
            z01_minus,
            z0_plus,
            z0_minus,
        },
        probs: RegionProbs {
            p1: (normal::cdf(z1_plus) + normal::cdf(z1_minus)).min(1.0),
            p01: normal::interval(z01_minus, z01_plus),
            p0: (normal::cdf(z0_plus) + normal::cdf(z0_minus)).min(1.0),
        },
    }
}

/// `num/den`, with the `0/0` case (both roots vanish) sent to zero.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Strong and weak analytic upper bounds for general γ, clipped at 1 and raw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop1Bound {
    pub strong: f64,
    pub weak: f64,
    pub strong_raw: f64,
    pub weak_raw: f64,
    pub regions: Regions,
}

/// `C_p^γ ≤ p^{1−γ}(1−γ+γP1) + (1−p)^{1−γ}(P01·C0 + (1−γ)((1−p)/p)^γ P0)
/// ≤ p^{1−γ} + (1−p)^{1−γ} C0`.
pub fn prop1_upper(inputs: &ChernoffInputs) -> Result<Prop1Bound> {
    let p = inputs.p;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("p", format!("bound needs 0 < p < 1, got {p}")));
    }
    let gamma = inputs.gamma;
    let regions = region_boundaries(inputs);
    let RegionProbs { p1, p01, p0 } = regions.probs;
    let c0 = chernoff_closed_form_c0(inputs);
    let q = 1.0 - p;
    let odds = (q / p).powf(gamma);
    let lead = p.powf(1.0 - gamma);
    let rest = q.powf(1.0 - gamma);
    let strong_raw = lead * (1.0 - gamma + gamma * p1) + rest * (p01 * c0 + (1.0 - gamma) * odds * p0);
    let weak_raw = lead + rest * c0;
    Ok(Prop1Bound {
        strong: strong_raw.min(1.0),
        weak: weak_raw.min(1.0),
        strong_raw,
        weak_raw,
        regions,
    })
}

/// Bhattacharyya-coefficient bound (`γ = 1/2`), clipped at 1 and raw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop2Bound {
    pub value: f64,
    pub raw: f64,
    /// Regions with threshold `f1 = f0` (η = 0).
    pub regions: Regions,
}

pub fn prop2_upper(inputs: &ChernoffInputs) -> Result<Prop2Bound> {
    if (inputs.gamma - 0.5).abs() > 1e-12 {
        return Err(Error::Usage(format!(
            "the Bhattacharyya bound requires gamma = 1/2 (q = 2), got gamma = {}",
            inputs.gamma
        )));
    }
    let p = inputs.p;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("p", format!("bound needs 0 < p < 1, got {p}")));
    }
    let regions = regions(inputs.snr(), inputs.s, 0.0, 0.5);
    let c0 = chernoff_closed_form_c0(inputs);
    let (sp, sq) = (p.sqrt(), (1.0 - p).sqrt());
    let d = sp + sq;
    let cross = sp * sq / d;
    let raw = p / d + cross * regions.probs.p1 + c0 * ((1.0 - p) / d + cross * regions.probs.p01);
    Ok(Prop2Bound {
        value: raw.min(1.0),
        raw,
        regions,
    })
}
