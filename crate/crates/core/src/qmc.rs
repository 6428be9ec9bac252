//! Digitally shifted Sobol points mapped to standard normals.

use std::sync::OnceLock;

use rand::Rng;
use sobol::params::JoeKuoD6;
use sobol::Sobol;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};

const STANDARD_DIMS: usize = 1000;

static STANDARD: OnceLock<JoeKuoD6> = OnceLock::new();
static EXTENDED: OnceLock<JoeKuoD6> = OnceLock::new();

/// `n` points of a `dims`-dimensional Sobol sequence, each coordinate XORed
/// with a random 64-bit shift, returned as uniforms in `(0, 1)`.
pub fn shifted_sobol<R: Rng + ?Sized>(dims: usize, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if dims == 0 {
        return Err(invalid("Sobol dimension must be >= 1"));
    }
    let params = if dims <= STANDARD_DIMS {
        STANDARD.get_or_init(JoeKuoD6::standard)
    } else {
        EXTENDED.get_or_init(JoeKuoD6::extended)
    };
    if dims > params.max_dims {
        return Err(invalid(format!("Sobol dimension {dims} above {}", params.max_dims)));
    }
    let shifts: Vec<u64> = (0..dims).map(|_| rng.gen()).collect();
    let scale = 1.0 / (1u64 << 53) as f64;
    Ok(Sobol::<u64>::new(dims, params)
        .take(n)
        .map(|p| {
            p.iter()
                .zip(&shifts)
                .map(|(v, s)| (((v ^ s) >> 11) as f64 + 0.5) * scale)
                .collect()
        })
        .collect())
}

/// Shifted Sobol points pushed through the standard normal quantile.
pub fn sobol_normals<R: Rng + ?Sized>(dims: usize, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(shifted_sobol(dims, n, rng)?
        .into_iter()
        .map(|p| p.into_iter().map(|u| normal.inverse_cdf(u)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn points_are_in_open_unit_cube_and_stratified() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = shifted_sobol(3, 256, &mut rng).unwrap();
        assert!(pts.iter().flatten().all(|&u| u > 0.0 && u < 1.0));
        // a digital shift keeps one point per dyadic interval of width 1/256
        for d in 0..3 {
            let mut bins = vec![0; 256];
            for p in &pts {
                bins[(p[d] * 256.0) as usize] += 1;
            }
            assert!(bins.iter().all(|&b| b == 1));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sobol_normals(2, 1024, &mut rng).unwrap();
        for d in 0..2 {
            let m = z.iter().map(|p| p[d]).sum::<f64>() / 1024.0;
            let v = z.iter().map(|p| (p[d] - m).powi(2)).sum::<f64>() / 1024.0;
            assert!(m.abs() < 0.01 && (v - 1.0).abs() < 0.02, "{m} {v}");
        }
    }

    #[test]
    fn high_dimensions_use_extended_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = sobol_normals(1152, 4, &mut rng).unwrap();
        assert_eq!(z[0].len(), 1152);
        assert!(z.iter().flatten().all(|x| x.is_finite()));
    }
}
