//! Transfer functions: power-law gamma, μ-law tone mapping and exposure alignment.

use crate::error::{ensure, Result};
use crate::image::{Domain, NormalizedImage, RadianceImage};

pub const DEFAULT_GAMMA: f64 = 2.4;
pub const DEFAULT_MU: f64 = 5000.0;

#[inline]
pub fn gamma_decode_value(v: f64, gamma: f64) -> f64 {
    v.powf(gamma)
}

#[inline]
pub fn gamma_encode_value(v: f64, gamma: f64) -> f64 {
    v.powf(1.0 / gamma)
}

#[inline]
pub fn mu_law_value(x: f64, mu: f64) -> f64 {
    (mu * x).ln_1p() / mu.ln_1p()
}

fn check_gamma(gamma: f64) -> Result<()> {
    ensure!(gamma.is_finite() && gamma > 0.0, "gamma must be positive, got {gamma}");
    Ok(())
}

fn map(img: &NormalizedImage, domain: Domain, f: impl Fn(f64) -> f64) -> NormalizedImage {
    NormalizedImage::from_raw(
        img.width(),
        img.height(),
        img.channels(),
        domain,
        img.data().iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
    )
}

/// `v ↦ v^gamma`: gamma-encoded samples to linear light.
pub fn gamma_decode(img: &NormalizedImage, gamma: f64) -> Result<NormalizedImage> {
    img.expect_domain(Domain::GammaEncoded)?;
    check_gamma(gamma)?;
    Ok(map(img, Domain::Linear, |v| gamma_decode_value(v, gamma)))
}

/// `v ↦ v^(1/gamma)`.
pub fn gamma_encode(img: &NormalizedImage, gamma: f64) -> Result<NormalizedImage> {
    img.expect_domain(Domain::Linear)?;
    check_gamma(gamma)?;
    Ok(map(img, Domain::GammaEncoded, |v| gamma_encode_value(v, gamma)))
}

fn check_mu(mu: f64) -> Result<()> {
    ensure!(mu.is_finite() && mu > 0.0, "mu must be positive, got {mu}");
    Ok(())
}

/// `x ↦ ln(1 + μx) / ln(1 + μ)` on radiance already normalized to `[0, 1]`.
pub fn mu_law(img: &RadianceImage, mu: f64) -> Result<NormalizedImage> {
    check_mu(mu)?;
    if let Some(i) = img.data().iter().position(|&v| v > 1.0) {
        return Err(crate::Error::Validation(format!(
            "radiance sample {i} = {} exceeds 1; normalize by a peak before tone mapping",
            img.data()[i]
        )));
    }
    let data = img
        .data()
        .iter()
        .map(|&v| mu_law_value(v as f64, mu).clamp(0.0, 1.0))
        .collect();
    Ok(NormalizedImage::from_raw(
        img.width(),
        img.height(),
        img.channels(),
        Domain::MuLaw,
        data,
    ))
}

/// μ-law on a linear normalized image (already range-checked by construction).
pub fn mu_law_linear(img: &NormalizedImage, mu: f64) -> Result<NormalizedImage> {
    img.expect_domain(Domain::Linear)?;
    check_mu(mu)?;
    Ok(map(img, Domain::MuLaw, |v| mu_law_value(v, mu)))
}

/// Simulate `img` (captured with `tau_ref`) as if exposed for `tau_n`:
/// decode, scale by `tau_n / tau_ref`, clip to `[0, 1]`, re-encode.
pub fn exposure_align(
    img: &NormalizedImage,
    tau_n: f64,
    tau_ref: f64,
    gamma: f64,
) -> Result<NormalizedImage> {
    img.expect_domain(Domain::GammaEncoded)?;
    check_gamma(gamma)?;
    ensure!(
        tau_n.is_finite() && tau_n > 0.0 && tau_ref.is_finite() && tau_ref > 0.0,
        "exposure times must be positive, got {tau_n} and {tau_ref}"
    );
    if tau_n == tau_ref {
        return Ok(img.clone());
    }
    let ratio = tau_n / tau_ref;
    Ok(map(img, Domain::GammaEncoded, |v| {
        let lin = (gamma_decode_value(v, gamma) * ratio).clamp(0.0, 1.0);
        gamma_encode_value(lin, gamma)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(v: f64, domain: Domain) -> NormalizedImage {
        NormalizedImage::new(1, 1, 1, domain, vec![v]).unwrap()
    }

    #[test]
    fn gamma_endpoints_and_midpoint() {
        for (v, want) in [(0.0, 0.0), (1.0, 1.0)] {
            let d = gamma_decode(&single(v, Domain::GammaEncoded), 2.4).unwrap();
            assert_eq!(d.data()[0], want);
            let e = gamma_encode(&single(v, Domain::Linear), 2.4).unwrap();
            assert_eq!(e.data()[0], want);
        }
        // 0.5^2.4 = 2^-2.4 = exp(-2.4 ln 2)
        let want = (-2.4 * std::f64::consts::LN_2).exp();
        let got = gamma_decode(&single(0.5, Domain::GammaEncoded), 2.4).unwrap().data()[0];
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.189_465).abs() < 1e-6);
    }

    #[test]
    fn wrong_domain_is_rejected() {
        let lin = single(0.5, Domain::Linear);
        assert!(matches!(
            gamma_decode(&lin, 2.4),
            Err(crate::Error::DomainMismatch { .. })
        ));
        let enc = single(0.5, Domain::GammaEncoded);
        assert!(gamma_encode(&enc, 2.4).is_err());
        assert!(exposure_align(&lin, 1.0, 1.0, 2.4).is_err());
        assert!(gamma_decode(&enc, 0.0).is_err());
    }

    #[test]
    fn mu_law_values() {
        let img = RadianceImage::new(3, 1, 1, vec![0.0, 1.0, 0.01]).unwrap();
        let t = mu_law(&img, 5000.0).unwrap();
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 1.0);
        let want = 51f64.ln() / 5001f64.ln();
        // 0.01 is stored as f32
        assert!((t.data()[2] - want).abs() < 1e-7);
        assert!((t.data()[2] - 0.461623).abs() < 1e-6);
        assert!(mu_law(&RadianceImage::new(1, 1, 1, vec![1.5]).unwrap(), 5000.0).is_err());
    }

    #[test]
    fn exposure_align_examples() {
        let img = single(0.5, Domain::GammaEncoded);
        assert_eq!(exposure_align(&img, 1.0, 1.0, 2.4).unwrap(), img);
        assert_eq!(exposure_align(&img, 8.0, 1.0, 2.4).unwrap().data()[0], 1.0);
        let down = exposure_align(&img, 1.0, 8.0, 2.4).unwrap().data()[0];
        let want = (0.5f64.powf(2.4) / 8.0).powf(1.0 / 2.4);
        assert!((down - want).abs() < 1e-15);
        assert!((down - 0.210224).abs() < 1e-6);
        assert!(exposure_align(&img, 0.0, 1.0, 2.4).is_err());
        assert!(exposure_align(&img, 1.0, -1.0, 2.4).is_err());
    }

    #[test]
    fn gamma_round_trip_1024() {
        let data: Vec<f64> = (0..1024).map(|i| i as f64 / 1023.0).collect();
        let img = NormalizedImage::new(1024, 1, 1, Domain::Linear, data.clone()).unwrap();
        let back = gamma_decode(&gamma_encode(&img, 2.4).unwrap(), 2.4).unwrap();
        for (a, b) in data.iter().zip(back.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn mu_law_strictly_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, mu in 1e-3f64..1e6) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(mu_law_value(lo, mu) < mu_law_value(hi, mu));
        }

        #[test]
        fn exposure_align_inverts_without_clipping(v in 0.0f64..1.0, log_r in -4.0f64..4.0) {
            let r = log_r.exp2();
            let lin = v.powf(2.4);
            prop_assume!(lin * r <= 1.0);
            let img = single(v, Domain::GammaEncoded);
            let there = exposure_align(&img, r, 1.0, 2.4).unwrap();
            let back = exposure_align(&there, 1.0, r, 2.4).unwrap();
            prop_assert!((back.data()[0] - v).abs() < 1e-12);
        }

        #[test]
        fn gamma_decode_encode_identity(v in 0.0f64..=1.0, g in 0.5f64..4.0) {
            let img = single(v, Domain::GammaEncoded);
            let back = gamma_encode(&gamma_decode(&img, g).unwrap(), g).unwrap();
            prop_assert!((back.data()[0] - v).abs() <= 1e-12);
        }
    }
}
