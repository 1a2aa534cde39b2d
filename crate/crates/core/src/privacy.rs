//! Gradient sanitization and privacy accounting.
//!
//! Per-example gradients are clipped per parameter group (user rows, item
//! rows, extra parameters) and the per-group sums receive one Gaussian draw
//! per coordinate with sigma_g = z * C_g. Accounting treats the jointly
//! released, group-rescaled gradient as a sensitivity-1 Gaussian mechanism
//! with effective multiplier z / sqrt(#groups), composed over steps under
//! Poisson subsampling, and converts Renyi divergences to (epsilon, delta)
//! over integer orders 2..=512.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::{l2_norm, PerExampleGrad};
use crate::{Error, Result};

/// Highest Renyi order scanned during conversion.
pub const MAX_ORDER: u32 = 512;

/// Per-group clip norms. `f64::INFINITY` disables clipping for a group
/// (legal only with zero noise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBounds {
    pub user: f64,
    pub item: f64,
    pub extra: f64,
}

impl ClipBounds {
    pub fn uniform(c: f64) -> Self {
        ClipBounds {
            user: c,
            item: c,
            extra: c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("user", self.user),
            ("item", self.item),
            ("extra", self.extra),
        ] {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!(
                    "clip bound {name} must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.user.is_finite() && self.item.is_finite() && self.extra.is_finite()
    }
}

// Infinity is a legal sentinel, so round-trip bounds through strings.
impl Serialize for ClipBounds {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ClipBounds", 3)?;
        let enc = |c: f64| {
            if c.is_finite() {
                c.to_string()
            } else {
                "inf".to_string()
            }
        };
        st.serialize_field("user", &enc(self.user))?;
        st.serialize_field("item", &enc(self.item))?;
        st.serialize_field("extra", &enc(self.extra))?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for ClipBounds {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            user: String,
            item: String,
            extra: String,
        }
        let raw = Raw::deserialize(d)?;
        let dec = |s: &str| -> std::result::Result<f64, D::Error> {
            if s == "inf" {
                Ok(f64::INFINITY)
            } else {
                s.parse().map_err(serde::de::Error::custom)
            }
        };
        Ok(ClipBounds {
            user: dec(&raw.user)?,
            item: dec(&raw.item)?,
            extra: dec(&raw.extra)?,
        })
    }
}

/// Serde adapter for floats that may legitimately be infinite (epsilon of a
/// non-private run): JSON has no infinity literal, so encode as a string.
pub mod float_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_str(&x.to_string())
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let raw = String::deserialize(d)?;
        match raw.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => other.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// The realized privacy parameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    #[serde(with = "float_as_string")]
    pub epsilon: f64,
    pub delta: f64,
    /// Mechanism noise multiplier: sigma_g = noise_multiplier * C_g.
    pub noise_multiplier: f64,
    /// Effective sensitivity-1 multiplier charged to the accountant
    /// (noise_multiplier / sqrt(#groups)).
    pub accountant_multiplier: f64,
    pub sampling_rate: f64,
    pub steps: usize,
}

/// Norm-clip a vector to bound `c`: g / max(1, ||g|| / c). Direction is
/// preserved; vectors already within the ball are untouched.
pub fn clip(g: &[f64], c: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c);
    out
}

pub fn clip_in_place(g: &mut [f64], c: f64) {
    debug_assert!(c > 0.0);
    let norm = l2_norm(g);
    if norm > c {
        let scale = c / norm;
        for x in g.iter_mut() {
            *x *= scale;
        }
    }
}

/// Add i.i.d. Gaussian noise with standard deviation `sigma` per coordinate.
/// With sigma = 0 the input passes through and the RNG is not consumed.
pub fn add_noise(g: &[f64], sigma: f64, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let mut out = g.to_vec();
    add_noise_in_place(&mut out, sigma, rng);
    out
}

pub fn add_noise_in_place(g: &mut [f64], sigma: f64, rng: &mut ChaCha20Rng) {
    debug_assert!(sigma >= 0.0);
    if sigma == 0.0 {
        return;
    }
    for x in g.iter_mut() {
        let eta: f64 = rng.sample(StandardNormal);
        *x += sigma * eta;
    }
}

/// Clip each group of a per-example gradient to its own bound. The item
/// group is the two touched item rows jointly.
pub fn clip_grad(grad: &mut PerExampleGrad, bounds: &ClipBounds) {
    clip_in_place(&mut grad.user_grad, bounds.user);
    let norm = grad.item_norm();
    if norm > bounds.item {
        let scale = bounds.item / norm;
        for x in grad
            .pos_item_grad
            .iter_mut()
            .chain(grad.neg_item_grad.iter_mut())
        {
            *x *= scale;
        }
    }
    clip_in_place(&mut grad.w_grad, bounds.extra);
}

/// Clip per group, then noise each group independently with
/// sigma_g = z * C_g. Groups never mix: noise drawn for one group touches
/// no coordinate of another. In the training loop noise is instead added
/// once per batch to the per-group sums; this per-example form serves
/// batch-of-one use and direct auditing.
pub fn sanitize(
    grad: &PerExampleGrad,
    bounds: &ClipBounds,
    z: f64,
    rng: &mut ChaCha20Rng,
) -> PerExampleGrad {
    let mut out = grad.clone();
    clip_grad(&mut out, bounds);
    if z > 0.0 {
        add_noise_in_place(&mut out.user_grad, z * bounds.user, rng);
        add_noise_in_place(&mut out.pos_item_grad, z * bounds.item, rng);
        add_noise_in_place(&mut out.neg_item_grad, z * bounds.item, rng);
        add_noise_in_place(&mut out.w_grad, z * bounds.extra, rng);
    }
    out
}

/// Renyi divergence bound rho(alpha) of one step of the Poisson-subsampled
/// Gaussian mechanism with sampling rate q and sensitivity-1 multiplier z.
///
/// For integer alpha >= 2 this is
///   rho = log( sum_{j=0..alpha} C(alpha,j) (1-q)^(alpha-j) q^j
///              exp(j(j-1)/(2 z^2)) ) / (alpha - 1),
/// evaluated in log space. With q = 1 it reduces to alpha / (2 z^2).
fn rdp_step(alpha: u32, q: f64, z: f64) -> f64 {
    debug_assert!(alpha >= 2);
    debug_assert!(z > 0.0);
    if q >= 1.0 {
        return alpha as f64 / (2.0 * z * z);
    }
    let a = alpha as f64;
    let log_q = q.ln();
    let log_1q = (1.0 - q).ln();
    // log binomial via cumulative log-factorials
    let mut log_fact = vec![0.0; alpha as usize + 1];
    for i in 1..=alpha as usize {
        log_fact[i] = log_fact[i - 1] + (i as f64).ln();
    }
    let terms: Vec<f64> = (0..=alpha)
        .map(|j| {
            let jf = j as f64;
            let log_binom =
                log_fact[alpha as usize] - log_fact[j as usize] - log_fact[(alpha - j) as usize];
            log_binom + (a - jf) * log_1q + jf * log_q + jf * (jf - 1.0) / (2.0 * z * z)
        })
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()) / (a - 1.0)
}

/// Privacy loss after T steps: the minimum over integer orders
/// alpha in 2..=512 of T * rho(alpha) + log(1/delta) / (alpha - 1).
/// Also returns the minimizing order.
pub fn rdp_epsilon_with_order(z: f64, q: f64, t: usize, delta: f64) -> Result<(f64, u32)> {
    if z <= 0.0 {
        return Err(Error::NonPrivate);
    }
    if !(0.0 < q && q <= 1.0) {
        return Err(Error::Config(format!("sampling rate {q} outside (0, 1]")));
    }
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::Config(format!("delta {delta} outside (0, 1)")));
    }
    if t == 0 {
        return Err(Error::Config("step count must be at least 1".into()));
    }
    let log_inv_delta = -delta.ln();
    let mut best = (f64::INFINITY, 2u32);
    for alpha in 2..=MAX_ORDER {
        let eps = t as f64 * rdp_step(alpha, q, z) + log_inv_delta / (alpha as f64 - 1.0);
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    Ok(best)
}

/// Privacy loss after T steps of the subsampled Gaussian mechanism.
pub fn rdp_epsilon(z: f64, q: f64, t: usize, delta: f64) -> Result<f64> {
    rdp_epsilon_with_order(z, q, t, delta).map(|(eps, _)| eps)
}

/// Accountant entry point for the per-group mechanism: the group-rescaled
/// concatenation of `groups` clipped groups has sensitivity sqrt(groups), so
/// the certified loss is that of a sensitivity-1 Gaussian with multiplier
/// z / sqrt(groups).
pub fn accounted_epsilon(z: f64, groups: usize, q: f64, t: usize, delta: f64) -> Result<f64> {
    rdp_epsilon(effective_multiplier(z, groups), q, t, delta)
}

/// z / sqrt(#groups): the sensitivity-1 multiplier the accountant charges.
pub fn effective_multiplier(z: f64, groups: usize) -> f64 {
    z / (groups as f64).sqrt()
}

/// Search bracket for noise calibration.
pub const CALIBRATE_LO: f64 = 0.1;
pub const CALIBRATE_HI: f64 = 1e4;

/// Smallest sensitivity-1 multiplier z (to 1e-3) whose certified epsilon is
/// at most the target. Errors when the bracket cannot reach the target.
pub fn calibrate_noise(epsilon_target: f64, delta: f64, q: f64, t: usize) -> Result<f64> {
    if epsilon_target <= 0.0 {
        return Err(Error::Config(format!(
            "epsilon target must be positive, got {epsilon_target}"
        )));
    }
    let eps_at = |z: f64| rdp_epsilon(z, q, t, delta);
    if eps_at(CALIBRATE_HI)? > epsilon_target {
        return Err(Error::CalibrationUnreachable {
            target: epsilon_target,
            lo: CALIBRATE_LO,
            hi: CALIBRATE_HI,
        });
    }
    if eps_at(CALIBRATE_LO)? <= epsilon_target {
        return Ok(CALIBRATE_LO);
    }
    let (mut lo, mut hi) = (CALIBRATE_LO, CALIBRATE_HI);
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? <= epsilon_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
