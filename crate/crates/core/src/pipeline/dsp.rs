//! Radix-2 FFT and the frequency-domain filters built on it.

use num_complex::Complex64;

use super::PipelineError;
use crate::demand::{ParamValue, Params};

/// In-place iterative radix-2 Cooley-Tukey. `data.len()` must be a
/// power of two; public entry points zero-pad first.
fn fft_in_place(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i as u32).reverse_bits() >> (32 - bits);
        let j = j as usize;
        if i < j {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let angle = sign * 2.0 * std::f64::consts::PI / len as f64;
        let w_len = Complex64::from_polar(1.0, angle);
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = data[start + k];
                let b = data[start + k + len / 2] * w;
                data[start + k] = a + b;
                data[start + k + len / 2] = a - b;
                w *= w_len;
            }
        }
        len <<= 1;
    }
}

fn next_power_of_two(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// DFT values X[k] = sum x[t] e^(-2 pi i k t / n). Inputs whose length
/// is not a power of two are zero-padded.
pub fn fft(x: &[f64]) -> Vec<Complex64> {
    let n = next_power_of_two(x.len());
    let mut data: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    data.resize(n, Complex64::new(0.0, 0.0));
    fft_in_place(&mut data, false);
    data
}

pub fn fft_complex(x: &[Complex64]) -> Vec<Complex64> {
    let n = next_power_of_two(x.len());
    let mut data = x.to_vec();
    data.resize(n, Complex64::new(0.0, 0.0));
    fft_in_place(&mut data, false);
    data
}

/// Inverse transform with 1/n normalization.
pub fn ifft(spectrum: &[Complex64]) -> Vec<Complex64> {
    let n = next_power_of_two(spectrum.len());
    let mut data = spectrum.to_vec();
    data.resize(n, Complex64::new(0.0, 0.0));
    fft_in_place(&mut data, true);
    let scale = 1.0 / n as f64;
    for v in &mut data {
        *v *= scale;
    }
    data
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    LowPass,
    HighPass,
    BandPass,
    BandStop,
    HighFrequencyBoost,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::LowPass => "low_pass",
            FilterKind::HighPass => "high_pass",
            FilterKind::BandPass => "band_pass",
            FilterKind::BandStop => "band_stop",
            FilterKind::HighFrequencyBoost => "hf_boost",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "low_pass" => FilterKind::LowPass,
            "high_pass" => FilterKind::HighPass,
            "band_pass" => FilterKind::BandPass,
            "band_stop" => FilterKind::BandStop,
            "hf_boost" => FilterKind::HighFrequencyBoost,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub low_hz: f64,
    pub high_hz: f64,
    /// Gain applied above the cutoff by the high-frequency boost.
    pub boost_gain: f64,
}

pub const DEFAULT_BOOST_GAIN: f64 = 10.0;
pub const FILTER_BLOCK: usize = 1024;

impl FilterSpec {
    pub fn new(kind: FilterKind, low_hz: f64, high_hz: f64) -> Self {
        Self { kind, low_hz, high_hz, boost_gain: DEFAULT_BOOST_GAIN }
    }

    pub fn validate(&self, rate_hz: u32) -> Result<(), PipelineError> {
        let nyquist = rate_hz as f64 / 2.0;
        let in_range = |f: f64| f > 0.0 && f < nyquist;
        let ok = match self.kind {
            FilterKind::LowPass | FilterKind::HighPass | FilterKind::HighFrequencyBoost => {
                in_range(self.low_hz)
            }
            FilterKind::BandPass | FilterKind::BandStop => {
                in_range(self.low_hz) && in_range(self.high_hz) && self.low_hz < self.high_hz
            }
        };
        if ok {
            Ok(())
        } else {
            Err(PipelineError::BadCutoff {
                low: self.low_hz,
                high: self.high_hz,
                nyquist,
            })
        }
    }

    pub fn to_params(&self) -> Params {
        let mut p = Params::new();
        p.insert("filter".into(), ParamValue::Str(self.kind.name().into()));
        p.insert("low_hz".into(), ParamValue::Float(self.low_hz));
        p.insert("high_hz".into(), ParamValue::Float(self.high_hz));
        p.insert("boost_gain".into(), ParamValue::Float(self.boost_gain));
        p
    }

    /// Multiplier applied to a spectrum bin at frequency `f`. Band
    /// pass and band stop use complementary masks so their outputs sum
    /// back to the original signal.
    fn gain_at(&self, f: f64) -> f64 {
        let in_band = self.low_hz <= f && f <= self.high_hz;
        match self.kind {
            FilterKind::LowPass => {
                if f <= self.low_hz {
                    1.0
                } else {
                    0.0
                }
            }
            FilterKind::HighPass => {
                if f >= self.low_hz {
                    1.0
                } else {
                    0.0
                }
            }
            FilterKind::BandPass => {
                if in_band {
                    1.0
                } else {
                    0.0
                }
            }
            FilterKind::BandStop => {
                if in_band {
                    0.0
                } else {
                    1.0
                }
            }
            FilterKind::HighFrequencyBoost => {
                if f >= self.low_hz {
                    self.boost_gain
                } else {
                    1.0
                }
            }
        }
    }
}

/// Block-wise frequency-domain filter: forward transform per
/// 1024-sample block, scale bins, inverse transform. Output length
/// equals input length and is real.
pub fn fft_filter(data: &[f64], rate_hz: u32, spec: &FilterSpec) -> Result<Vec<f64>, PipelineError> {
    spec.validate(rate_hz)?;
    let mut out = Vec::with_capacity(data.len());
    for block in data.chunks(FILTER_BLOCK) {
        let n = next_power_of_two(block.len().max(2));
        let mut spectrum = fft(block);
        debug_assert_eq!(spectrum.len(), n);
        for (k, bin) in spectrum.iter_mut().enumerate() {
            // Mirror bins share the frequency of their conjugate pair.
            let idx = k.min(n - k);
            let f = idx as f64 * rate_hz as f64 / n as f64;
            *bin *= spec.gain_at(f);
        }
        let time = ifft(&spectrum);
        out.extend(time.iter().take(block.len()).map(|c| c.re));
    }
    Ok(out)
}
