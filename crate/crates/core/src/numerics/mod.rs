//! Dense numerical kernels shared by the encoder, decoder and trainer.

mod adam;
mod gradcheck;
mod rng;
pub(crate) mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use rng::SeededRng;
pub use tensor::Tensor;

use alloc::vec::Vec;
use core::fmt::Debug;
use num_traits::{Float, FloatConst};

use crate::{Error, Result};

/// Floating-point scalar used throughout the model.
///
/// Training runs in `f32`; the gradient checker and the reference oracles in
/// the test-suite instantiate the same code with `f64`.
pub trait Real: Float + FloatConst + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Norms below this are treated as zero.
pub const NORM_FLOOR: f64 = 1e-12;

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Temperature softmax, `exp((x - max) / gamma)` normalised.
pub fn softmax_temp<F: Real>(logits: &[F], gamma: F) -> Result<Vec<F>> {
    if !(gamma > F::zero()) {
        return Err(Error::Domain("softmax temperature must be positive"));
    }
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax logits"));
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = logits.iter().map(|&x| ((x - max) / gamma).exp()).collect();
    let total = out.iter().fold(0.0f64, |acc, v| acc + v.f64());
    let total = F::of(total);
    for v in &mut out {
        *v = *v / total;
    }
    Ok(out)
}

/// Cosine similarity; zero when either vector is (numerically) zero.
pub fn cosine<F: Real>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(cosine_unchecked(a, b))
}

#[inline]
pub(crate) fn cosine_unchecked<F: Real>(a: &[F], b: &[F]) -> F {
    let na = norm(a);
    let nb = norm(b);
    if na.f64() < NORM_FLOOR || nb.f64() < NORM_FLOOR {
        return F::zero();
    }
    dot(a, b) / (na * nb)
}

/// KL divergence of `N(mu, diag(sigma^2))` from the standard normal.
pub fn gaussian_kl<F: Real>(mu: &[F], sigma: &[F]) -> Result<F> {
    if mu.len() != sigma.len() {
        return Err(Error::Shape {
            expected: mu.len(),
            found: sigma.len(),
        });
    }
    if sigma.iter().any(|&s| !(s > F::zero())) {
        return Err(Error::Domain("standard deviation must be positive"));
    }
    Ok(gaussian_kl_unchecked(mu, sigma))
}

#[inline]
pub(crate) fn gaussian_kl_unchecked<F: Real>(mu: &[F], sigma: &[F]) -> F {
    let half = F::of(0.5);
    let two = F::of(2.0);
    mu.iter().zip(sigma).fold(F::zero(), |acc, (&m, &s)| {
        acc + half * (m * m + s * s - F::one() - two * s.ln())
    })
}

/// Reparameterised draw `mu + sigma * eps`, `eps ~ N(0, I)`.
pub fn reparam_sample<F: Real>(mu: &[F], sigma: &[F], rng: &mut SeededRng) -> Result<Vec<F>> {
    if mu.len() != sigma.len() {
        return Err(Error::Shape {
            expected: mu.len(),
            found: sigma.len(),
        });
    }
    if sigma.iter().any(|&s| !(s > F::zero())) {
        return Err(Error::Domain("standard deviation must be positive"));
    }
    let eps: Vec<F> = (0..mu.len()).map(|_| rng.standard_normal()).collect();
    Ok(reparam_with_noise(mu, sigma, &eps))
}

pub fn reparam_with_noise<F: Real>(mu: &[F], sigma: &[F], eps: &[F]) -> Vec<F> {
    mu.iter()
        .zip(sigma)
        .zip(eps)
        .map(|((&m, &s), &e)| m + s * e)
        .collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform_logits() {
        let p = softmax_temp(&[0.5f32, 0.5, 0.5, 0.5], 0.1).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_sharpened() {
        // exp(0) / (1 + 3 exp(-5)) and exp(-5) / (1 + 3 exp(-5))
        let p = softmax_temp(&[1.0f64, 0.5, 0.5, 0.5], 0.1).unwrap();
        let z = 1.0 + 3.0 * (-5.0f64).exp();
        assert!((p[0] - 1.0 / z).abs() < 1e-12);
        assert!((p[0] - 0.9802).abs() < 1e-4);
        assert!((p[1] - 0.0066).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert_eq!(
            softmax_temp(&[1.0f32], 0.0),
            Err(Error::Domain("softmax temperature must be positive"))
        );
        assert!(softmax_temp(&[1.0f32], -1.0).is_err());
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0f64, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0f64, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine(&[1.0f32], &[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn kl_values() {
        assert_eq!(gaussian_kl(&[0.0f64; 3], &[1.0; 3]).unwrap(), 0.0);
        assert!((gaussian_kl(&[1.0f64], &[1.0]).unwrap() - 0.5).abs() < 1e-12);
        let expected = 0.5 * (4.0 - 1.0 - 2.0 * 2.0f64.ln());
        let kl = gaussian_kl(&[0.0f64], &[2.0]).unwrap();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.8069).abs() < 1e-4);
        assert!(gaussian_kl(&[0.0f64], &[0.0]).is_err());
        assert!(gaussian_kl(&[0.0f64], &[-1.0]).is_err());
    }

    #[test]
    fn reparam_zero_noise_and_determinism() {
        let mu = vec![0.3f32, -1.0];
        assert_eq!(reparam_with_noise(&mu, &[2.0, 2.0], &[0.0, 0.0]), mu);

        let a = reparam_sample(&mu, &[1.0, 1.0], &mut SeededRng::new(9)).unwrap();
        let b = reparam_sample(&mu, &[1.0, 1.0], &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);

        let mut rng = SeededRng::new(1);
        for _ in 0..1000 {
            let s = reparam_sample(&mu, &[1e-5, 1e-5], &mut rng).unwrap();
            assert!((s[0] - mu[0]).abs() < 1e-3 && (s[1] - mu[1]).abs() < 1e-3);
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in prop::collection::vec(-5.0f32..5.0, 1..12),
            shift in -10.0f32..10.0,
            gamma in 0.05f32..2.0,
        ) {
            let p = softmax_temp(&logits, gamma).unwrap();
            let total: f32 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            let shifted: Vec<f32> = logits.iter().map(|x| x + shift).collect();
            let q = softmax_temp(&shifted, gamma).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-4);
            }
        }

        #[test]
        fn cosine_scale_invariant(
            a in prop::collection::vec(-3.0f64..3.0, 4),
            b in prop::collection::vec(-3.0f64..3.0, 4),
            s in 0.01f64..100.0,
        ) {
            let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
            let c1 = cosine(&a, &b).unwrap();
            let c2 = cosine(&scaled, &b).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-9);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c1));
        }

        #[test]
        fn kl_nonnegative(
            mu in prop::collection::vec(-3.0f64..3.0, 1..6),
            log_sigma in prop::collection::vec(-3.0f64..3.0, 6),
        ) {
            let sigma: Vec<f64> = log_sigma[..mu.len()].iter().map(|l| l.exp()).collect();
            let kl = gaussian_kl(&mu, &sigma).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert!(kl.is_finite());
        }
    }
}
