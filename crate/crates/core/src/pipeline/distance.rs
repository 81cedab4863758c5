//! Distance metrics between feature vectors. Euclidean is the
//! squared sum without the root; argmin classification is unaffected
//! and the convention matches the original implementation.

use super::features::FeatureVector;
use super::PipelineError;

pub const DEFAULT_MINKOWSKI_P: f64 = 3.0;
pub const DEFAULT_HAMMING_TOLERANCE: f64 = 0.0;
pub const DEFAULT_DIFF_TOLERANCE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    /// Sum of squared differences (no square root).
    Euclidean,
    Chebyshev,
    Minkowski { p: f64 },
    /// (u-v)^T C^-1 (u-v); identity covariance when none is given.
    Mahalanobis { covariance: Option<Vec<Vec<f64>>> },
    /// Count of positions differing by more than the tolerance.
    Hamming { tolerance: f64 },
    /// Sum of |u_i - v_i| over positions where it exceeds the
    /// allowed tolerance.
    Diff { tolerance: f64 },
    /// 1 - cos(u, v).
    Cosine,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Chebyshev => "chebyshev",
            Metric::Minkowski { .. } => "minkowski",
            Metric::Mahalanobis { .. } => "mahalanobis",
            Metric::Hamming { .. } => "hamming",
            Metric::Diff { .. } => "diff",
            Metric::Cosine => "cosine",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, PipelineError> {
        Ok(match name {
            "euclidean" => Metric::Euclidean,
            "chebyshev" | "manhattan" | "cityblock" => Metric::Chebyshev,
            "minkowski" => Metric::Minkowski { p: DEFAULT_MINKOWSKI_P },
            "mahalanobis" => Metric::Mahalanobis { covariance: None },
            "hamming" => Metric::Hamming { tolerance: DEFAULT_HAMMING_TOLERANCE },
            "diff" => Metric::Diff { tolerance: DEFAULT_DIFF_TOLERANCE },
            "cosine" => Metric::Cosine,
            other => {
                return Err(PipelineError::MalformedFile(format!("unknown metric {other:?}")))
            }
        })
    }

    /// Numeric classification-module IDs. 504 maps to Chebyshev (the
    /// original table also bound Manhattan and city-block to it).
    pub fn from_id(id: i64) -> Result<Self, PipelineError> {
        use super::*;
        Ok(match id {
            EUCLIDEAN_DISTANCE => Metric::Euclidean,
            CHEBYSHEV_DISTANCE => Metric::Chebyshev,
            MINKOWSKI_DISTANCE => Metric::Minkowski { p: DEFAULT_MINKOWSKI_P },
            MAHALANOBIS_DISTANCE => Metric::Mahalanobis { covariance: None },
            DIFF_DISTANCE => Metric::Diff { tolerance: DEFAULT_DIFF_TOLERANCE },
            HAMMING_DISTANCE => Metric::Hamming { tolerance: DEFAULT_HAMMING_TOLERANCE },
            COSINE_SIMILARITY_MEASURE => Metric::Cosine,
            other => return Err(PipelineError::UnsupportedMethod(other)),
        })
    }
}

/// Gauss-Jordan inverse for the Mahalanobis covariance.
fn invert(matrix: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = matrix.len();
    let mut aug: Vec<Vec<f64>> = matrix
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.resize(2 * n, 0.0);
            r[n + i] = 1.0;
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| {
            aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap()
        })?;
        if aug[pivot][col].abs() < 1e-12 {
            return None;
        }
        aug.swap(col, pivot);
        let p = aug[col][col];
        for v in &mut aug[col] {
            *v /= p;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = aug[row][col];
            for k in 0..2 * n {
                aug[row][k] -= factor * aug[col][k];
            }
        }
    }
    Some(aug.into_iter().map(|row| row[n..].to_vec()).collect())
}

pub fn distance(metric: &Metric, u: &FeatureVector, v: &FeatureVector) -> Result<f64, PipelineError> {
    if u.len() != v.len() {
        return Err(PipelineError::DimensionMismatch { a: u.len(), b: v.len() });
    }
    let diffs = u.values.iter().zip(&v.values).map(|(a, b)| a - b);
    let d = match metric {
        Metric::Euclidean => diffs.map(|d| d * d).sum(),
        Metric::Chebyshev => diffs.map(f64::abs).fold(0.0, f64::max),
        Metric::Minkowski { p } => diffs.map(|d| d.abs().powf(*p)).sum::<f64>().powf(1.0 / p),
        Metric::Mahalanobis { covariance } => {
            let delta: Vec<f64> = diffs.collect();
            match covariance {
                None => delta.iter().map(|d| d * d).sum(),
                Some(cov) => {
                    if cov.len() != delta.len() {
                        return Err(PipelineError::DimensionMismatch {
                            a: cov.len(),
                            b: delta.len(),
                        });
                    }
                    let inv = invert(cov).ok_or_else(|| {
                        PipelineError::MalformedFile("singular covariance".into())
                    })?;
                    let mut acc = 0.0;
                    for (i, row) in inv.iter().enumerate() {
                        for (j, c) in row.iter().enumerate() {
                            acc += delta[i] * c * delta[j];
                        }
                    }
                    acc
                }
            }
        }
        Metric::Hamming { tolerance } => {
            diffs.filter(|d| d.abs() > *tolerance).count() as f64
        }
        Metric::Diff { tolerance } => {
            diffs.map(f64::abs).filter(|d| d > tolerance).sum()
        }
        Metric::Cosine => {
            let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
            let nu: f64 = u.values.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv: f64 = v.values.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(PipelineError::ZeroVector);
            }
            1.0 - dot / (nu * nv)
        }
    };
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec())
    }

    fn all_metrics() -> Vec<Metric> {
        vec![
            Metric::Euclidean,
            Metric::Chebyshev,
            Metric::Minkowski { p: DEFAULT_MINKOWSKI_P },
            Metric::Mahalanobis { covariance: None },
            Metric::Hamming { tolerance: 0.0 },
            Metric::Diff { tolerance: 0.0 },
            Metric::Cosine,
        ]
    }

    /// Direct-formula oracle, written independently of the
    /// implementation above.
    fn oracle(metric: &Metric, u: &[f64], v: &[f64]) -> f64 {
        match metric {
            Metric::Euclidean | Metric::Mahalanobis { covariance: None } => {
                let mut acc = 0.0;
                for i in 0..u.len() {
                    acc += (u[i] - v[i]) * (u[i] - v[i]);
                }
                acc
            }
            Metric::Chebyshev => {
                let mut m = 0.0f64;
                for i in 0..u.len() {
                    m = m.max((u[i] - v[i]).abs());
                }
                m
            }
            Metric::Minkowski { p } => {
                let mut acc = 0.0;
                for i in 0..u.len() {
                    acc += (u[i] - v[i]).abs().powf(*p);
                }
                acc.powf(1.0 / p)
            }
            Metric::Hamming { tolerance } => {
                let mut n = 0.0;
                for i in 0..u.len() {
                    if (u[i] - v[i]).abs() > *tolerance {
                        n += 1.0;
                    }
                }
                n
            }
            Metric::Diff { tolerance } => {
                let mut acc = 0.0;
                for i in 0..u.len() {
                    let d = (u[i] - v[i]).abs();
                    if d > *tolerance {
                        acc += d;
                    }
                }
                acc
            }
            Metric::Cosine => {
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                1.0 - dot / (nu * nv)
            }
            Metric::Mahalanobis { .. } => unreachable!("oracle covers identity fallback"),
        }
    }

    #[test]
    fn euclidean_is_squared_sum() {
        let d = distance(&Metric::Euclidean, &fv(&[0.0, 0.0]), &fv(&[3.0, 4.0])).unwrap();
        assert_eq!(d, 25.0);
    }

    #[test]
    fn identical_vectors_are_zero() {
        let v = fv(&[0.3, -0.7, 2.0]);
        for metric in all_metrics() {
            let d = distance(&metric, &v, &v).unwrap();
            assert!(d.abs() < 1e-12, "{}: {d}", metric.name());
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(matches!(
            distance(&Metric::Euclidean, &fv(&[1.0]), &fv(&[1.0, 2.0])),
            Err(PipelineError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_zero_vector_rejected() {
        assert!(matches!(
            distance(&Metric::Cosine, &fv(&[0.0, 0.0]), &fv(&[1.0, 2.0])),
            Err(PipelineError::ZeroVector)
        ));
    }

    #[test]
    fn all_metrics_match_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let n = rng.gen_range(1..16);
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            for metric in all_metrics() {
                let got = distance(&metric, &fv(&u), &fv(&v)).unwrap();
                let want = oracle(&metric, &u, &v);
                assert!(
                    (got - want).abs() < 1e-12,
                    "{}: {got} vs {want}",
                    metric.name()
                );
            }
        }
    }

    #[test]
    fn metrics_are_symmetric_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..200 {
            let u: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            for metric in all_metrics() {
                let a = distance(&metric, &fv(&u), &fv(&v)).unwrap();
                let b = distance(&metric, &fv(&v), &fv(&u)).unwrap();
                assert!((a - b).abs() < 1e-12, "{} asymmetric", metric.name());
                assert!(a >= 0.0 || matches!(metric, Metric::Cosine));
            }
        }
    }

    #[test]
    fn mahalanobis_with_explicit_covariance() {
        let cov = vec![vec![4.0, 0.0], vec![0.0, 1.0]];
        let metric = Metric::Mahalanobis { covariance: Some(cov) };
        let d = distance(&metric, &fv(&[2.0, 1.0]), &fv(&[0.0, 0.0])).unwrap();
        // (2,1) under C^-1 = diag(0.25, 1): 4*0.25 + 1*1 = 2.
        assert!((d - 2.0).abs() < 1e-12);
    }
}
