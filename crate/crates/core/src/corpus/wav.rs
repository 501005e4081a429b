//! 16-bit PCM RIFF/WAVE reading and writing.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV codec: format code {0} (only PCM, code 1)")]
    UnsupportedCodec(u16),
    #[error("unsupported bit depth: {0} bits (only 16-bit PCM)")]
    UnsupportedBitDepth(u16),
    #[error("truncated data chunk: header declares {declared} bytes, {available} present")]
    TruncatedData { declared: usize, available: usize },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A PCM signal, stored channel-major (`channels[c][n]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Waveform {
    channels: Vec<Vec<i16>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<i16>>, sample_rate: u32) -> Result<Self, WavError> {
        if sample_rate == 0 {
            return Err(WavError::InvalidWaveform("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(WavError::InvalidWaveform("at least one channel required".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(WavError::InvalidWaveform("channels differ in length".into()));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn mono(samples: Vec<i16>, sample_rate: u32) -> Result<Self, WavError> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn channel(&self, index: usize) -> Option<&[i16]> {
        self.channels.get(index).map(Vec::as_slice)
    }

    pub fn channels(&self) -> &[Vec<i16>] {
        &self.channels
    }

    /// The first channel; the whole signal for mono audio.
    pub fn samples(&self) -> &[i16] {
        &self.channels[0]
    }

    pub fn is_mono(&self) -> bool {
        self.channels.len() == 1
    }

    /// A mono waveform holding one channel of this one.
    pub fn extract_channel(&self, index: usize) -> Result<Waveform, WavError> {
        let ch = self.channel(index).ok_or_else(|| {
            WavError::InvalidWaveform(format!(
                "channel {index} requested from a {}-channel waveform",
                self.num_channels()
            ))
        })?;
        Waveform::mono(ch.to_vec(), self.sample_rate)
    }

    pub fn into_channels(self) -> Vec<Vec<i16>> {
        self.channels
    }
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decode a RIFF/WAVE byte stream holding 16-bit integer PCM.
///
/// Chunks other than `fmt ` and `data` are skipped. Multi-channel audio is
/// de-interleaved.
pub fn read_wav(bytes: &[u8]) -> Result<Waveform, WavError> {
    if bytes.len() < 12 {
        return Err(WavError::MalformedHeader("shorter than a RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(WavError::MalformedHeader("missing RIFF tag".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::MalformedHeader("missing WAVE tag".into()));
    }

    let mut pos = 12;
    let mut format: Option<(u16, u32)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(WavError::MalformedHeader("fmt chunk too short".into()));
                }
                let code = le_u16(bytes, body);
                let channels = le_u16(bytes, body + 2);
                let rate = le_u32(bytes, body + 4);
                let bits = le_u16(bytes, body + 14);
                // WAVE_FORMAT_EXTENSIBLE carries the real codec in its sub-format GUID.
                let code = if code == 0xfffe && size >= 40 && body + 26 <= bytes.len() {
                    le_u16(bytes, body + 24)
                } else {
                    code
                };
                if code != 1 {
                    return Err(WavError::UnsupportedCodec(code));
                }
                if bits != 16 {
                    return Err(WavError::UnsupportedBitDepth(bits));
                }
                if channels == 0 {
                    return Err(WavError::MalformedHeader("zero channels".into()));
                }
                if rate == 0 {
                    return Err(WavError::MalformedHeader("zero sample rate".into()));
                }
                format = Some((channels, rate));
            }
            b"data" => {
                let (channels, rate) =
                    format.ok_or_else(|| WavError::MalformedHeader("data chunk precedes fmt chunk".into()))?;
                let available = bytes.len() - body;
                if size > available {
                    return Err(WavError::TruncatedData { declared: size, available });
                }
                let block = 2 * channels as usize;
                if !size.is_multiple_of(block) {
                    return Err(WavError::TruncatedData { declared: size, available: size - size % block });
                }
                let frames = size / block;
                let mut out = vec![Vec::with_capacity(frames); channels as usize];
                for (i, chunk) in bytes[body..body + size].chunks_exact(2).enumerate() {
                    out[i % channels as usize].push(i16::from_le_bytes([chunk[0], chunk[1]]));
                }
                return Waveform::new(out, rate);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    if format.is_none() {
        Err(WavError::MalformedHeader("no fmt chunk".into()))
    } else {
        Err(WavError::MalformedHeader("no data chunk".into()))
    }
}

/// Encode as a canonical 44-byte-header PCM WAVE file.
pub fn write_wav(w: &Waveform) -> Vec<u8> {
    let channels = w.num_channels() as u16;
    let data_len = w.len() * 2 * channels as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2 * u32::from(channels)).to_le_bytes());
    out.extend_from_slice(&(2 * channels).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for n in 0..w.len() {
        for ch in &w.channels {
            out.extend_from_slice(&ch[n].to_le_bytes());
        }
    }
    out
}

pub fn read_wav_file(path: &Path) -> Result<Waveform, WavError> {
    let bytes = std::fs::read(path).map_err(|source| WavError::Io { path: path.display().to_string(), source })?;
    read_wav(&bytes)
}

pub fn write_wav_file(path: &Path, w: &Waveform) -> Result<(), WavError> {
    std::fs::write(path, write_wav(w)).map_err(|source| WavError::Io { path: path.display().to_string(), source })
}
