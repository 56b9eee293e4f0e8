//! Gumbel-sigmoid relaxation of Bernoulli node gates.

use rand::Rng;

use crate::error::{PgibError, Result};

/// Keep probabilities are clamped to `[PROB_MARGIN, 1 - PROB_MARGIN]`.
pub const PROB_MARGIN: f64 = 1e-6;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Largest logit magnitude allowed by the probability clamp.
pub fn logit_bound() -> f64 {
    logit(1.0 - PROB_MARGIN)
}

/// One standard Gumbel draw.
pub fn gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// `g1 - g0` for independent standard Gumbels, one per gate.
pub fn gate_noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| gumbel(rng) - gumbel(rng)).collect()
}

/// Relaxed gate from a pre-sigmoid score and a frozen noise draw.
/// The score is clamped to the logit bound.
pub fn relaxed_gate(score: f64, noise: f64, temperature: f64) -> f64 {
    let b = logit_bound();
    sigmoid((score.clamp(-b, b) + noise) / temperature)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateSample {
    /// Relaxed values in (0, 1); these carry the gradient.
    pub soft: Vec<f64>,
    /// Values used in the forward computation: `soft` in soft mode,
    /// `soft` thresholded at 0.5 in hard mode (straight-through).
    pub value: Vec<f64>,
}

pub fn gumbel_sigmoid(p: &[f64], temperature: f64, rng: &mut impl Rng, hard: bool) -> Result<GateSample> {
    if !(temperature > 0.0) {
        return Err(PgibError::Argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let noise = gate_noise(p.len(), rng);
    let soft: Vec<f64> = p
        .iter()
        .zip(&noise)
        .map(|(&pi, &n)| {
            let pc = pi.clamp(PROB_MARGIN, 1.0 - PROB_MARGIN);
            relaxed_gate(logit(pc), n, temperature)
        })
        .collect();
    let value = if hard {
        soft.iter().map(|&s| if s > 0.5 { 1.0 } else { 0.0 }).collect()
    } else {
        soft.clone()
    };
    Ok(GateSample { soft, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn high_temperature_flattens_to_half() {
        let mut rng = RngStream::new(0);
        let s = gumbel_sigmoid(&[0.5; 64], 1e9, &mut rng, false).unwrap();
        assert!(s.soft.iter().all(|&x| (x - 0.5).abs() < 1e-6));
    }

    #[test]
    fn hard_samples_are_bernoulli() {
        let mut rng = RngStream::new(42);
        let n = 100_000;
        let s = gumbel_sigmoid(&vec![0.8; n], 1.0, &mut rng, true).unwrap();
        let mean = s.value.iter().sum::<f64>() / n as f64;
        assert!((0.79..=0.81).contains(&mean), "mean {mean}");
        assert!(s.value.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn deterministic_per_stream() {
        let p = [0.1, 0.4, 0.9];
        let a = gumbel_sigmoid(&p, 1.0, &mut RngStream::at(3, 1), false).unwrap();
        let b = gumbel_sigmoid(&p, 1.0, &mut RngStream::at(3, 1), false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_temperature() {
        let mut rng = RngStream::new(0);
        assert!(gumbel_sigmoid(&[0.5], 0.0, &mut rng, false).is_err());
        assert!(gumbel_sigmoid(&[0.5], -1.0, &mut rng, false).is_err());
    }

    #[test]
    fn monotone_in_probability() {
        let noise = 0.37;
        let mut prev = 0.0;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let g = relaxed_gate(logit(p), noise, 1.0);
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn extreme_probabilities_stay_open() {
        let mut rng = RngStream::new(9);
        let s = gumbel_sigmoid(&[0.0, 1.0], 1.0, &mut rng, false).unwrap();
        assert!(s.soft.iter().all(|&x| x > 0.0 && x < 1.0));
    }
}
