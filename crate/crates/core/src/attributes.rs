//! Embedding-vector calculus shared by the losses and NMS.
//!
//! The norm of an attribute embedding carries crowd density; the angle
//! between two embeddings carries identity. `dist` is the ℓ₂ distance of the
//! unit-normalized vectors, which satisfies `dist² = 2 − 2·cos θ`.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

/// Default embedding length.
pub const DEFAULT_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wrap a vector of length `m >= 2` with finite components.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::EmbeddingTooShort(v.len()));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteEmbedding);
        }
        Ok(Embedding(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn density(&self) -> f64 {
        density_of(&self.0)
    }

    pub fn normalized(&self) -> Result<Embedding> {
        normalize(&self.0).map(Embedding)
    }

    pub fn dist(&self, other: &Embedding) -> Result<f64> {
        dist(&self.0, &other.0)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Euclidean norm; the predicted density of a box.
pub fn density_of(e: &[f64]) -> f64 {
    libm::sqrt(e.iter().map(|c| c * c).sum())
}

pub fn normalize(e: &[f64]) -> Result<Vec<f64>> {
    let norm = density_of(e);
    if norm <= MIN_NORM {
        return Err(Error::DegenerateEmbedding { norm });
    }
    Ok(e.iter().map(|c| c / norm).collect())
}

pub(crate) fn normalize_into(e: &[f64], out: &mut [f64]) -> Result<()> {
    let norm = density_of(e);
    if norm <= MIN_NORM {
        return Err(Error::DegenerateEmbedding { norm });
    }
    for (o, c) in out.iter_mut().zip(e) {
        *o = c / norm;
    }
    Ok(())
}

/// ℓ₂ distance between the normalized vectors, in `[0, 2]`.
pub fn dist(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = density_of(a);
    let nb = density_of(b);
    if na <= MIN_NORM {
        return Err(Error::DegenerateEmbedding { norm: na });
    }
    if nb <= MIN_NORM {
        return Err(Error::DegenerateEmbedding { norm: nb });
    }
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x / na - y / nb;
            d * d
        })
        .sum();
    Ok(libm::sqrt(sq).min(2.0))
}

/// Cosine of the angle between two nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = density_of(a);
    let nb = density_of(b);
    if na <= MIN_NORM || nb <= MIN_NORM {
        return Err(Error::DegenerateEmbedding { norm: na.min(nb) });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn density_fixtures() {
        assert_eq!(density_of(&[0.0; 4]), 0.0);
        assert!((density_of(&[0.6, 0.0, 0.8, 0.0]) - 1.0).abs() < EPS);
        assert!((density_of(&[0.3, 0.0, 0.0, 0.0]) - 0.3).abs() < EPS);
    }

    #[test]
    fn normalize_fixtures() {
        assert_eq!(normalize(&[2.0, 0.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let h = normalize(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!((h[0] - s).abs() < EPS && (h[1] - s).abs() < EPS);
        let u = [0.0, 0.6, 0.0, 0.8];
        let n = normalize(&u).unwrap();
        for (a, b) in n.iter().zip(u.iter()) {
            assert!((a - b).abs() < EPS);
        }
        assert!(matches!(normalize(&[0.0; 4]), Err(Error::DegenerateEmbedding { .. })));
    }

    #[test]
    fn dist_fixtures() {
        let a = [0.3, 0.1, -0.2, 0.5];
        assert!(dist(&a, &a).unwrap().abs() < 1e-7);
        let d = dist(&[1.0, 0.0, 0.0, 0.0], &[0.0, 5.0, 0.0, 0.0]).unwrap();
        assert!((d - core::f64::consts::SQRT_2).abs() < EPS);
        assert!((dist(&a, &[-0.3, -0.1, 0.2, -0.5]).unwrap() - 2.0).abs() < EPS);
        assert!(dist(&[1.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn embedding_validation() {
        assert_eq!(Embedding::new(vec![1.0]), Err(Error::EmbeddingTooShort(1)));
        assert_eq!(Embedding::new(vec![1.0, f64::NAN]), Err(Error::NonFiniteEmbedding));
        // norms above one are kept as-is
        let e = Embedding::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(e.density(), 5.0);
    }

    fn nonzero_vec(m: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, m).prop_filter("nonzero", |v| density_of(v) > 1e-3)
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        prop_oneof![Just(2usize), Just(3), Just(4), Just(8)].prop_flat_map(|m| (nonzero_vec(m), nonzero_vec(m)))
    }

    proptest! {
        #[test]
        fn dist_squared_is_two_minus_two_cos((a, b) in pair()) {
            let d = dist(&a, &b).unwrap();
            let c = cosine(&a, &b).unwrap();
            prop_assert!((d * d - (2.0 - 2.0 * c)).abs() < 1e-9);
        }

        #[test]
        fn dist_scale_invariant((a, b) in pair(), s in 0.01f64..50.0, t in 0.01f64..50.0) {
            let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
            let tb: Vec<f64> = b.iter().map(|x| x * t).collect();
            prop_assert!((dist(&a, &b).unwrap() - dist(&sa, &tb).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn density_is_homogeneous(a in nonzero_vec(4), s in 0.0f64..10.0) {
            let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
            prop_assert!((density_of(&sa) - s * density_of(&a)).abs() < 1e-9);
        }

        /// Density and angle can be chosen independently once m >= 2.
        #[test]
        fn density_and_angle_are_independent(
            d1 in 0.01f64..1.0, d2 in 0.01f64..1.0, theta in 0.0f64..core::f64::consts::PI, m in 2usize..9,
        ) {
            let mut a = vec![0.0; m];
            let mut b = vec![0.0; m];
            a[0] = d1;
            b[0] = d2 * libm::cos(theta);
            b[1] = d2 * libm::sin(theta);
            prop_assert!((density_of(&a) - d1).abs() < 1e-12);
            prop_assert!((density_of(&b) - d2).abs() < 1e-12);
            prop_assert!((cosine(&a, &b).unwrap() - libm::cos(theta)).abs() < 1e-9);
        }
    }
}
