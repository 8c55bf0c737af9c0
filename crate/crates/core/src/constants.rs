//! Closed-form constants of the fractional Faber-Krahn stability estimate.
//!
//! Every quantity here reduces to ratios of Gamma functions, which are
//! evaluated in log space through [`crate::special`].

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::special::{beta as beta_fn, gamma_ratio, ln_gamma};

/// Spatial dimension, fractional order and Lebesgue exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FracParams {
    pub n: usize,
    pub s: f64,
    pub q: f64,
}

impl FracParams {
    pub fn new(n: usize, s: f64, q: f64) -> Result<Self> {
        let p = Self { n, s, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!(
                "dimension must satisfy N >= 2 (got N = {})",
                self.n
            )));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "fractional order must satisfy 0 < s < 1 (got s = {})",
                self.s
            )));
        }
        let crit = self.two_star_s();
        if !(self.q >= 1.0 && self.q < crit) {
            return Err(Error::InvalidParameter(format!(
                "exponent must satisfy 1 <= q < 2*_s = {crit} (got q = {})",
                self.q
            )));
        }
        Ok(())
    }

    /// Fractional Sobolev exponent 2N/(N-2s).
    pub fn two_star_s(&self) -> f64 {
        let n = self.n as f64;
        2.0 * n / (n - 2.0 * self.s)
    }

    /// Local Sobolev exponent, the s -> 1 value of `two_star_s`; infinite for N = 2.
    pub fn two_star(&self) -> f64 {
        if self.n == 2 {
            f64::INFINITY
        } else {
            let n = self.n as f64;
            2.0 * n / (n - 2.0)
        }
    }

    /// Exponent of |Ω| in the scale-invariant combination |Ω|^e λ_{s,q}(Ω).
    pub fn measure_exponent(&self) -> f64 {
        2.0 / self.q - 1.0 + 2.0 * self.s / self.n as f64
    }

    pub fn with_q(&self, q: f64) -> Self {
        Self { q, ..*self }
    }

    pub fn with_s(&self, s: f64) -> Self {
        Self { s, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRecord {
    /// Volume of the unit ball.
    pub omega_n: f64,
    pub two_star_s: f64,
    /// Normalization of the Poisson kernel P_1.
    pub beta: f64,
    pub d_s: f64,
    pub c_ns: f64,
    /// Extension-energy constant, 2 d_s / C_{N,s}.
    pub gamma: f64,
    /// Quantitative isoperimetric constant.
    pub theta: f64,
    pub c1: f64,
    pub c2: f64,
    /// ∫ P_1(w) |w|^s dw.
    pub holder_tail: f64,
}

/// Volume of the unit ball in dimension `n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let nf = n as f64;
    (0.5 * nf * PI.ln() - ln_gamma(0.5 * nf + 1.0)).exp()
}

pub fn eval_constants(params: &FracParams) -> Result<ConstantsRecord> {
    params.validate()?;
    let n = params.n as f64;
    let s = params.s;
    let q = params.q;

    let omega_n = unit_ball_volume(params.n);
    let pi_pow = PI.powf(-0.5 * n);
    let beta = pi_pow * gamma_ratio(0.5 * (n + 2.0 * s), s);
    let d_s = 2f64.powf(2.0 * s - 1.0) * gamma_ratio(s, 1.0 - s);
    let c_ns = pi_pow * 2f64.powf(2.0 * s) * gamma_ratio(0.5 * (n + 2.0 * s), 2.0 - s) * s * (1.0 - s);
    let gamma = 2.0 * d_s / c_ns;
    let theta = isoperimetric_theta(params.n);
    let c1 = 2.0 * n * omega_n.powf(1.0 / n) * theta * gamma;
    let c2 = (2.0 / q + 2.0 * s / n - 1.0) / 9.0;
    let holder_tail = beta * n * omega_n * 0.5 * beta_fn(0.5 * (n + s), 0.5 * s);

    Ok(ConstantsRecord {
        omega_n,
        two_star_s: params.two_star_s(),
        beta,
        d_s,
        c_ns,
        gamma,
        theta,
        c1,
        c2,
        holder_tail,
    })
}

/// Explicit constant of the sharp quantitative isoperimetric inequality.
pub fn isoperimetric_theta(n: usize) -> f64 {
    let nf = n as f64;
    let omega = unit_ball_volume(n);
    omega.powf(1.0 / nf) * (2.0 - 2f64.powf((nf - 1.0) / nf)).powi(3) / (181.0f64.powi(2) * nf.powi(13))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma1Branch {
    /// Level T below the threshold T_0; no extension needed.
    Easy,
    /// Level T above T_0; bound obtained through the extension.
    Main,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub sigma1: f64,
    pub sigma1_easy: f64,
    pub sigma1_main: f64,
    pub sigma1_branch: Sigma1Branch,
    pub sigma2: f64,
    /// σ₁ at q = 1, which is the one entering σ₂.
    pub sigma1_torsion: f64,
    pub lambda_ball: f64,
    pub torsion_ball: f64,
    /// Where the ball values came from (solver, grid).
    pub provenance: String,
}

fn sigma1_branches(record: &ConstantsRecord, n: usize, s: f64, c2: f64, lambda_ball: f64) -> (f64, f64) {
    let nf = n as f64;
    let easy = c2 / (1.0 + c2) * (1.0 - s) * lambda_ball / 2f64.powf(3.0 / s);
    let main = 3.0 / 256.0
        * (record.c1 / 25.0)
        * (1.0f64 / 9.0).powf((nf - 1.0) / nf)
        * (c2 / (4.0 * (1.0 + c2))).powf(2.0 / s)
        * (1.0 / (2.0 * 576.0 * record.beta * lambda_ball)).powf((1.0 - s) / s);
    (easy, main)
}

/// σ₁ and σ₂ from the ball values λ_{s,q}(B) and T_s(B), both for |B| = 1.
///
/// σ₂ always uses the q = 1 value of σ₁ with λ_{s,1}(B) = 1/T_s(B).
pub fn stability_constants(
    record: &ConstantsRecord,
    params: &FracParams,
    lambda_ball: f64,
    torsion_ball: f64,
) -> Result<StabilityConstants> {
    stability_constants_with_provenance(record, params, lambda_ball, torsion_ball, "caller-supplied")
}

pub fn stability_constants_with_provenance(
    record: &ConstantsRecord,
    params: &FracParams,
    lambda_ball: f64,
    torsion_ball: f64,
    provenance: &str,
) -> Result<StabilityConstants> {
    params.validate()?;
    if !(lambda_ball > 0.0 && lambda_ball.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda_ball must be positive and finite (got {lambda_ball})"
        )));
    }
    if !(torsion_ball > 0.0 && torsion_ball.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "torsion_ball must be positive and finite (got {torsion_ball})"
        )));
    }
    let s = params.s;
    let (easy, main) = sigma1_branches(record, params.n, s, record.c2, lambda_ball);
    let (sigma1, sigma1_branch) = if easy <= main {
        (easy, Sigma1Branch::Easy)
    } else {
        (main, Sigma1Branch::Main)
    };

    let c2_torsion = (2.0 + 2.0 * s / params.n as f64 - 1.0) / 9.0;
    let (te, tm) = sigma1_branches(record, params.n, s, c2_torsion, 1.0 / torsion_ball);
    let sigma1_torsion = te.min(tm);
    let ratio = torsion_ball / (1.0 - s);
    let sigma2 = (ratio / 2f64.powf((3.0 + s) / s)).min(0.5 * sigma1_torsion * ratio * ratio);

    Ok(StabilityConstants {
        sigma1,
        sigma1_easy: easy,
        sigma1_main: main,
        sigma1_branch,
        sigma2,
        sigma1_torsion,
        lambda_ball,
        torsion_ball,
        provenance: provenance.to_string(),
    })
}
