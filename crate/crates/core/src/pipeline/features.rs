//! Feature extractors: FFT spectrum folding, LPC via Levinson-Durbin,
//! and min/max amplitudes.

use super::dsp;
use super::sample::Sample;
use super::PipelineError;

pub const FFT_WINDOW: usize = 1024;
pub const DEFAULT_FFT_FEATURES: usize = 128;
pub const DEFAULT_LPC_ORDER: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.values.len() * 8);
        out.extend_from_slice(&(self.values.len() as u32).to_be_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PipelineError> {
        if bytes.len() < 4 {
            return Err(PipelineError::Codec("feature vector truncated".into()));
        }
        let n = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as usize;
        if bytes.len() != 4 + n * 8 {
            return Err(PipelineError::Codec("feature vector length mismatch".into()));
        }
        let values = bytes[4..]
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_be_bytes(c.try_into().unwrap())))
            .collect();
        Ok(Self { values })
    }
}

fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Per half-overlapping Hamming window of 1024 samples: magnitude
/// spectrum, first 512 bins folded into `len` equal groups by
/// averaging. Window vectors are averaged and log1p-compressed.
pub fn extract_fft_features(s: &Sample, len: usize) -> Result<FeatureVector, PipelineError> {
    if s.data.is_empty() {
        return Err(PipelineError::EmptySample);
    }
    assert!(len > 0 && len <= FFT_WINDOW / 2, "feature length out of range");
    let window = hamming(FFT_WINDOW);
    let hop = FFT_WINDOW / 2;
    let mut padded = s.data.clone();
    if padded.len() < FFT_WINDOW {
        padded.resize(FFT_WINDOW, 0.0);
    }
    let mut acc = vec![0.0f64; len];
    let mut windows = 0usize;
    let mut start = 0usize;
    while start + FFT_WINDOW <= padded.len() {
        let frame: Vec<f64> = padded[start..start + FFT_WINDOW]
            .iter()
            .zip(&window)
            .map(|(v, w)| v * w)
            .collect();
        let spectrum = dsp::fft(&frame);
        let half = FFT_WINDOW / 2;
        let group = half / len;
        for (g, slot) in acc.iter_mut().enumerate() {
            let sum: f64 = spectrum[g * group..(g + 1) * group]
                .iter()
                .map(|c| c.norm())
                .sum();
            *slot += sum / group as f64;
        }
        windows += 1;
        start += hop;
    }
    let values = acc
        .into_iter()
        .map(|v| (v / windows as f64).ln_1p())
        .collect();
    Ok(FeatureVector::new(values))
}

/// Biased autocorrelation r[0..=order].
pub fn autocorrelation(data: &[f64], order: usize) -> Vec<f64> {
    let n = data.len();
    (0..=order)
        .map(|lag| {
            data[..n - lag]
                .iter()
                .zip(&data[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// Levinson-Durbin recursion over the autocorrelation sequence.
/// Returns predictor coefficients a[1..=order] in the convention
/// x[t] ~ sum a_i x[t-i].
pub fn levinson_durbin(r: &[f64]) -> Result<Vec<f64>, PipelineError> {
    let order = r.len() - 1;
    if r[0] == 0.0 {
        return Err(PipelineError::SingularAutocorrelation);
    }
    let mut a = vec![0.0f64; order + 1];
    let mut err = r[0];
    for m in 1..=order {
        let mut acc = r[m];
        for i in 1..m {
            acc -= a[i] * r[m - i];
        }
        let k = if err.abs() > 0.0 { acc / err } else { 0.0 };
        let prev = a.clone();
        a[m] = k;
        for i in 1..m {
            a[i] = prev[i] - k * prev[m - i];
        }
        err *= 1.0 - k * k;
    }
    Ok(a[1..].to_vec())
}

pub fn extract_lpc_features(s: &Sample, order: usize) -> Result<FeatureVector, PipelineError> {
    if s.data.len() <= order {
        return Err(PipelineError::TooShort { need: order + 1, have: s.data.len() });
    }
    let r = autocorrelation(&s.data, order);
    let coeffs = levinson_durbin(&r)?;
    Ok(FeatureVector::new(coeffs))
}

/// The len/2 largest amplitudes sorted descending, then the len/2
/// smallest sorted ascending.
pub fn extract_minmax_features(s: &Sample, len: usize) -> Result<FeatureVector, PipelineError> {
    if s.data.len() < len {
        return Err(PipelineError::TooShort { need: len, have: s.data.len() });
    }
    let mut sorted = s.data.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let half = len / 2;
    let top = len - half;
    let mut values = Vec::with_capacity(len);
    // Largest, descending.
    values.extend(sorted.iter().rev().take(top));
    // Smallest, ascending.
    values.extend(sorted.iter().take(half));
    Ok(FeatureVector::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::sample::{load_sine, SampleSource};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raw(data: Vec<f64>) -> Sample {
        Sample { rate_hz: 8000, data, source: SampleSource::Raw }
    }

    #[test]
    fn pure_tone_peaks_in_right_group() {
        let s = load_sine("rate=8000;dur=1;tones=1000").unwrap();
        let fv = extract_fft_features(&s, 128).unwrap();
        let argmax = (0..fv.len())
            .max_by(|&a, &b| fv.values[a].partial_cmp(&fv.values[b]).unwrap())
            .unwrap();
        // 1000 Hz lands in bin 128 of a 1024-point window; groups of
        // 4 bins put it in group 32.
        assert_eq!(argmax, 32);
    }

    #[test]
    fn zero_signal_gives_zero_features() {
        let fv = extract_fft_features(&raw(vec![0.0; 2048]), 128).unwrap();
        assert!(fv.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn period_shift_leaves_features_unchanged() {
        // 8000/400 = 20 samples per period.
        let long = load_sine("rate=8000;dur=2;tones=400").unwrap();
        let a = raw(long.data[..8000].to_vec());
        let b = raw(long.data[20..8020].to_vec());
        let fa = extract_fft_features(&a, 128).unwrap();
        let fb = extract_fft_features(&b, 128).unwrap();
        for (x, y) in fa.values.iter().zip(&fb.values) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn ar1_coefficient_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = vec![0.0f64; 10_000];
        for t in 1..x.len() {
            x[t] = 0.9 * x[t - 1] + rng.gen_range(-0.5..0.5);
        }
        let fv = extract_lpc_features(&raw(x), 1).unwrap();
        assert!((fv.values[0] - 0.9).abs() < 0.05, "got {}", fv.values[0]);
    }

    #[test]
    fn zero_signal_singular() {
        assert!(matches!(
            extract_lpc_features(&raw(vec![0.0; 64]), 4),
            Err(PipelineError::SingularAutocorrelation)
        ));
    }

    /// Direct solution of the Toeplitz normal equations by Gaussian
    /// elimination, the independent oracle for Levinson-Durbin.
    fn toeplitz_solve(r: &[f64], order: usize) -> Vec<f64> {
        let mut m: Vec<Vec<f64>> = (0..order)
            .map(|i| {
                let mut row: Vec<f64> =
                    (0..order).map(|j| r[(i as isize - j as isize).unsigned_abs()]).collect();
                row.push(r[i + 1]);
                row
            })
            .collect();
        for col in 0..order {
            let pivot = (col..order)
                .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
                .unwrap();
            m.swap(col, pivot);
            let p = m[col][col];
            for row in col + 1..order {
                let factor = m[row][col] / p;
                for k in col..=order {
                    m[row][k] -= factor * m[col][k];
                }
            }
        }
        let mut a = vec![0.0f64; order];
        for row in (0..order).rev() {
            let mut acc = m[row][order];
            for k in row + 1..order {
                acc -= m[row][k] * a[k];
            }
            a[row] = acc / m[row][row];
        }
        a
    }

    #[test]
    fn levinson_durbin_matches_toeplitz_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut x = vec![0.0f64; 4096];
        for t in 2..x.len() {
            x[t] = 0.6 * x[t - 1] - 0.2 * x[t - 2] + rng.gen_range(-0.5..0.5);
        }
        for order in 1..=8 {
            let r = autocorrelation(&x, order);
            let fast = levinson_durbin(&r).unwrap();
            let direct = toeplitz_solve(&r, order);
            for (a, b) in fast.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-8, "order {order}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn minmax_example() {
        let fv = extract_minmax_features(&raw(vec![0.1, -0.9, 0.5, 0.3]), 2).unwrap();
        assert_eq!(fv.values, vec![0.5, -0.9]);
    }

    #[test]
    fn minmax_constant_signal() {
        let fv = extract_minmax_features(&raw(vec![0.2; 8]), 4).unwrap();
        assert_eq!(fv.values, vec![0.2; 4]);
    }

    #[test]
    fn minmax_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let data: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fv = extract_minmax_features(&raw(data.clone()), 10).unwrap();
            let mut sorted = data;
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut expect: Vec<f64> = sorted.iter().rev().take(5).copied().collect();
            expect.extend(sorted.iter().take(5));
            assert_eq!(fv.values, expect);
        }
    }

    #[test]
    fn feature_vector_codec_round_trip() {
        let fv = FeatureVector::new(vec![1.5, -2.25, 0.0]);
        assert_eq!(FeatureVector::decode(&fv.encode()).unwrap(), fv);
    }
}
