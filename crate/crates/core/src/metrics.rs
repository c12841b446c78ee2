use crate::error::{shape_err, Error, Result};

/// Value reported when the residual vanishes.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-distortion ratio in dB, capped at
/// [`SI_SDR_CAP_DB`].
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(shape_err(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(Error::Silent("reference"));
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let target: f64 = alpha * alpha * ref_energy;
    let residual: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    // Residuals at rounding level count as a perfect match.
    if residual <= target * 1e-20 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).min(SI_SDR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn perfect_and_scaled_estimates_hit_the_cap() {
        let r = noise(1000, 1);
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&doubled, &r).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn orthogonal_noise_at_one_tenth_power_is_ten_db() {
        let r = noise(2000, 2);
        let mut n = noise(2000, 3);
        let rr: f64 = r.iter().map(|v| v * v).sum();
        let proj: f64 = n.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
        n.iter_mut().zip(&r).for_each(|(a, b)| *a -= proj * b);
        let nn: f64 = n.iter().map(|v| v * v).sum();
        let g = (rr / 10.0 / nn).sqrt();
        let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        assert!((si_sdr(&est, &r).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn scale_invariance() {
        let r = noise(500, 4);
        let e = noise(500, 5);
        let base = si_sdr(&e, &r).unwrap();
        for c in [-3.0, 0.01, 7.5] {
            let scaled: Vec<f64> = e.iter().map(|v| c * v).collect();
            assert!((si_sdr(&scaled, &r).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(si_sdr(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::Silent(_))));
        assert!(si_sdr(&[1.0], &[1.0, 2.0]).is_err());
    }
}
