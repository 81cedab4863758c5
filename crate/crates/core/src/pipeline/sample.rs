//! Samples and their loaders (WAV, SINE, TEXT, RAW), plus the
//! amplitude-domain preprocessing operations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PipelineError;

pub const DEFAULT_SILENCE_THRESHOLD: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    Wav,
    Sine,
    Text,
    Raw,
}

impl SampleSource {
    pub fn code(self) -> u8 {
        match self {
            SampleSource::Wav => 0,
            SampleSource::Sine => 1,
            SampleSource::Text => 2,
            SampleSource::Raw => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => SampleSource::Wav,
            1 => SampleSource::Sine,
            2 => SampleSource::Text,
            3 => SampleSource::Raw,
            _ => return None,
        })
    }

    pub fn from_name(name: &str) -> Result<Self, PipelineError> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "wav" => SampleSource::Wav,
            "sine" => SampleSource::Sine,
            "text" | "txt" => SampleSource::Text,
            "raw" => SampleSource::Raw,
            other => return Err(PipelineError::UnsupportedFormat(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rate_hz: u32,
    pub data: Vec<f64>,
    pub source: SampleSource,
}

impl Sample {
    /// Stage-to-stage byte encoding: rate u32 BE, source u8, count
    /// u64 BE, amplitudes f64-bits BE.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.data.len() * 8);
        out.extend_from_slice(&self.rate_hz.to_be_bytes());
        out.push(self.source.code());
        out.extend_from_slice(&(self.data.len() as u64).to_be_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PipelineError> {
        if bytes.len() < 13 {
            return Err(PipelineError::Codec("sample header truncated".into()));
        }
        let rate_hz = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let source = SampleSource::from_code(bytes[4])
            .ok_or_else(|| PipelineError::Codec("bad sample source".into()))?;
        let count = u64::from_be_bytes(bytes[5..13].try_into().unwrap()) as usize;
        if bytes.len() != 13 + count * 8 {
            return Err(PipelineError::Codec("sample body length mismatch".into()));
        }
        let data = bytes[13..]
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_be_bytes(c.try_into().unwrap())))
            .collect();
        Ok(Self { rate_hz, data, source })
    }
}

/// Loads a sample from raw file bytes (WAV/TEXT/RAW) or from a SINE
/// spec string. Integer PCM amplitudes normalize into [-1, 1].
pub fn load_sample(format: SampleSource, bytes: &[u8]) -> Result<Sample, PipelineError> {
    match format {
        SampleSource::Wav => load_wav(bytes),
        SampleSource::Sine => {
            let spec = std::str::from_utf8(bytes)
                .map_err(|_| PipelineError::MalformedFile("sine spec not utf8".into()))?;
            load_sine(spec)
        }
        SampleSource::Text => load_text(bytes),
        SampleSource::Raw => load_raw(bytes),
    }
}

/// RIFF/WAVE, PCM16 mono little-endian only.
fn load_wav(bytes: &[u8]) -> Result<Sample, PipelineError> {
    let bad = |m: &str| PipelineError::MalformedFile(format!("wav: {m}"));
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }
    let mut pos = 12usize;
    let mut rate_hz = None;
    let mut data = None;
    while pos + 8 <= bytes.len() {
        let chunk_id = &bytes[pos..pos + 4];
        let chunk_len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        if body_start + chunk_len > bytes.len() {
            return Err(bad("chunk overruns file"));
        }
        let body = &bytes[body_start..body_start + chunk_len];
        match chunk_id {
            b"fmt " => {
                if chunk_len < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let audio_format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if audio_format != 1 || bits != 16 {
                    return Err(PipelineError::UnsupportedFormat(format!(
                        "wav format {audio_format}/{bits}-bit (PCM16 only)"
                    )));
                }
                if channels != 1 {
                    return Err(PipelineError::UnsupportedFormat(format!(
                        "wav {channels} channels (mono only)"
                    )));
                }
                rate_hz = Some(rate);
            }
            b"data" => {
                let samples: Vec<f64> = body
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes(c.try_into().unwrap()) as f64 / 32768.0)
                    .collect();
                data = Some(samples);
            }
            _ => {}
        }
        pos = body_start + chunk_len + (chunk_len & 1);
    }
    match (rate_hz, data) {
        (Some(rate_hz), Some(data)) => Ok(Sample { rate_hz, data, source: SampleSource::Wav }),
        _ => Err(bad("missing fmt or data chunk")),
    }
}

/// Writes a PCM16 mono WAV file; amplitudes clamp to [-1, 1].
pub fn write_wav_pcm16(rate_hz: u32, data: &[f64]) -> Vec<u8> {
    let n = data.len() as u32;
    let data_len = n * 2;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&rate_hz.to_le_bytes());
    out.extend_from_slice(&(rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &v in data {
        let q = (v.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// SINE spec: semicolon-separated `key=value` settings.
/// `rate` (Hz, default 8000), `dur` (seconds, default 1.0),
/// `tones` (comma list of `freq` or `freq:amp`), `noise` (uniform
/// noise amplitude, default 0), `seed` (noise RNG seed, default 0).
/// Example: `rate=8000;dur=1;tones=440:1,1200:0.5;noise=0.01;seed=3`.
pub fn load_sine(spec: &str) -> Result<Sample, PipelineError> {
    let bad = |m: String| PipelineError::MalformedFile(format!("sine spec: {m}"));
    let mut rate_hz = 8000u32;
    let mut dur = 1.0f64;
    let mut tones: Vec<(f64, f64)> = Vec::new();
    let mut noise = 0.0f64;
    let mut seed = 0u64;
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
        match key.trim() {
            "rate" => rate_hz = value.trim().parse().map_err(|e| bad(format!("rate: {e}")))?,
            "dur" => dur = value.trim().parse().map_err(|e| bad(format!("dur: {e}")))?,
            "noise" => noise = value.trim().parse().map_err(|e| bad(format!("noise: {e}")))?,
            "seed" => seed = value.trim().parse().map_err(|e| bad(format!("seed: {e}")))?,
            "tones" => {
                for tone in value.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                    let (freq, amp) = match tone.split_once(':') {
                        Some((f, a)) => (
                            f.parse().map_err(|e| bad(format!("tone freq: {e}")))?,
                            a.parse().map_err(|e| bad(format!("tone amp: {e}")))?,
                        ),
                        None => (tone.parse().map_err(|e| bad(format!("tone: {e}")))?, 1.0),
                    };
                    tones.push((freq, amp));
                }
            }
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    if tones.is_empty() {
        return Err(bad("no tones given".into()));
    }
    let n = (dur * rate_hz as f64).round() as usize;
    if n == 0 {
        return Err(bad("zero duration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let peak: f64 = tones.iter().map(|(_, a)| a.abs()).sum::<f64>() + noise;
    let data = (0..n)
        .map(|t| {
            let ts = t as f64 / rate_hz as f64;
            let mut v: f64 = tones
                .iter()
                .map(|(f, a)| a * (2.0 * std::f64::consts::PI * f * ts).sin())
                .sum();
            if noise > 0.0 {
                v += rng.gen_range(-noise..noise);
            }
            v / peak.max(1.0)
        })
        .collect();
    Ok(Sample { rate_hz, data, source: SampleSource::Sine })
}

/// Whitespace-separated real amplitudes. First token may be
/// `rate=<hz>`; default 8000.
fn load_text(bytes: &[u8]) -> Result<Sample, PipelineError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| PipelineError::MalformedFile("text sample not utf8".into()))?;
    let mut rate_hz = 8000u32;
    let mut data = Vec::new();
    for token in text.split_whitespace() {
        if let Some(rate) = token.strip_prefix("rate=") {
            rate_hz = rate
                .parse()
                .map_err(|e| PipelineError::MalformedFile(format!("text rate: {e}")))?;
            continue;
        }
        let v: f64 = token
            .parse()
            .map_err(|e| PipelineError::MalformedFile(format!("text value {token:?}: {e}")))?;
        data.push(v);
    }
    Ok(Sample { rate_hz, data, source: SampleSource::Text })
}

/// Raw f64 little-endian amplitudes at 8 kHz.
fn load_raw(bytes: &[u8]) -> Result<Sample, PipelineError> {
    if bytes.len() % 8 != 0 {
        return Err(PipelineError::MalformedFile("raw length not multiple of 8".into()));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Sample { rate_hz: 8000, data, source: SampleSource::Raw })
}

/// Scales the whole signal so its peak magnitude is 1.
pub fn normalize(s: &Sample) -> Result<Sample, PipelineError> {
    normalize_range(s, 0, s.data.len())
}

/// Scales `[from, to)` so that range's peak magnitude is 1; the rest
/// is untouched.
pub fn normalize_range(s: &Sample, from: usize, to: usize) -> Result<Sample, PipelineError> {
    let to = to.min(s.data.len());
    let max = s.data[from..to]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Err(PipelineError::AllZeroRange);
    }
    let mut out = s.clone();
    for v in &mut out.data[from..to] {
        *v /= max;
    }
    Ok(out)
}

/// Drops every sample whose magnitude is below the threshold.
pub fn remove_silence(s: &Sample, threshold: f64) -> Result<Sample, PipelineError> {
    let data: Vec<f64> = s.data.iter().copied().filter(|v| v.abs() >= threshold).collect();
    if data.is_empty() && !s.data.is_empty() && threshold > 0.0 {
        return Err(PipelineError::EmptyAfterSilence);
    }
    Ok(Sample { data, ..*s })
}

/// Trims leading and trailing runs below the silence threshold.
pub fn endpoint(s: &Sample, threshold: f64) -> Result<Sample, PipelineError> {
    let first = s.data.iter().position(|v| v.abs() >= threshold);
    let last = s.data.iter().rposition(|v| v.abs() >= threshold);
    match (first, last) {
        (Some(a), Some(b)) => Ok(Sample { data: s.data[a..=b].to_vec(), ..*s }),
        _ => Err(PipelineError::EmptyAfterSilence),
    }
}
