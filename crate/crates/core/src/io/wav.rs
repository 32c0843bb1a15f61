//! RIFF/WAVE reading and writing for 16-bit PCM and 32-bit float.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Signal;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    Pcm16,
    #[default]
    Float32,
}

fn wav_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Wav {
        offset: offset as u64,
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(wav_err(self.pos, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

struct Format {
    codec: SampleFormat,
    channels: usize,
    sample_rate: u32,
}

fn parse_fmt(r: &mut Reader, size: usize) -> Result<Format> {
    let start = r.pos;
    if size < 16 {
        return Err(wav_err(start, "fmt chunk shorter than 16 bytes"));
    }
    let mut tag = r.u16("format tag")?;
    let channels = r.u16("channel count")? as usize;
    let sample_rate = r.u32("sample rate")?;
    r.u32("byte rate")?;
    let align = r.u16("block align")? as usize;
    let bits = r.u16("bits per sample")?;
    if tag == FORMAT_EXTENSIBLE {
        if size < 40 {
            return Err(wav_err(start, "extensible fmt chunk shorter than 40 bytes"));
        }
        r.take(8, "extension")?;
        tag = r.u16("sub-format")?;
    }
    r.pos = start;
    r.take(size + (size & 1), "fmt chunk")?;
    if channels == 0 {
        return Err(wav_err(start + 2, "zero channels"));
    }
    if sample_rate == 0 {
        return Err(wav_err(start + 4, "zero sample rate"));
    }
    let codec = match (tag, bits) {
        (FORMAT_PCM, 16) => SampleFormat::Pcm16,
        (FORMAT_FLOAT, 32) => SampleFormat::Float32,
        _ => return Err(wav_err(start, format!("unsupported codec: tag {tag}, {bits} bits"))),
    };
    let width = if codec == SampleFormat::Pcm16 { 2 } else { 4 };
    if align != width * channels {
        return Err(wav_err(start + 12, format!("block align {align} does not match {channels} channels")));
    }
    Ok(Format {
        codec,
        channels,
        sample_rate,
    })
}

/// Parses a complete WAV file held in memory.
pub fn decode_wav(bytes: &[u8]) -> Result<Signal> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "RIFF header")? != b"RIFF" {
        return Err(wav_err(0, "missing RIFF tag"));
    }
    r.u32("RIFF size")?;
    if r.take(4, "WAVE tag")? != b"WAVE" {
        return Err(wav_err(8, "missing WAVE tag"));
    }
    let mut format = None;
    loop {
        let at = r.pos;
        let id = r.take(4, "chunk header")?;
        let size = r.u32("chunk size")? as usize;
        match id {
            b"fmt " => format = Some(parse_fmt(&mut r, size)?),
            b"data" => {
                let f = format.ok_or_else(|| wav_err(at, "data chunk before fmt chunk"))?;
                let data = r.take(size, "data chunk")?;
                return Ok(decode_samples(data, &f));
            }
            _ => {
                r.take(size + (size & 1), "chunk")?;
            }
        }
    }
}

fn decode_samples(data: &[u8], f: &Format) -> Signal {
    let width = if f.codec == SampleFormat::Pcm16 { 2 } else { 4 };
    let frames = data.len() / (width * f.channels);
    let mut channels = vec![Vec::with_capacity(frames); f.channels];
    for (i, chunk) in data.chunks_exact(width).take(frames * f.channels).enumerate() {
        let v = match f.codec {
            SampleFormat::Pcm16 => i16::from_le_bytes([chunk[0], chunk[1]]) as f64 / 32768.0,
            SampleFormat::Float32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
        };
        channels[i % f.channels].push(v);
    }
    Signal {
        sample_rate: f.sample_rate,
        channels,
    }
}

/// Serializes a signal. PCM16 samples are `round(x·32768)` clamped to the
/// 16-bit range.
pub fn encode_wav(signal: &Signal, format: SampleFormat) -> Vec<u8> {
    let m = signal.num_channels();
    let (tag, width) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 2usize),
        SampleFormat::Float32 => (FORMAT_FLOAT, 4usize),
    };
    let data_len = signal.len() * m * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&(m as u16).to_le_bytes());
    out.extend_from_slice(&signal.sample_rate.to_le_bytes());
    out.extend_from_slice(&(signal.sample_rate * (m * width) as u32).to_le_bytes());
    out.extend_from_slice(&((m * width) as u16).to_le_bytes());
    out.extend_from_slice(&((width * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for t in 0..signal.len() {
        for c in &signal.channels {
            match format {
                SampleFormat::Pcm16 => {
                    let v = (c[t] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&v.to_le_bytes());
                }
                SampleFormat::Float32 => out.extend_from_slice(&(c[t] as f32).to_le_bytes()),
            }
        }
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    decode_wav(&std::fs::read(path)?)
}

pub fn write_wav(path: impl AsRef<Path>, signal: &Signal, format: SampleFormat) -> Result<()> {
    std::fs::write(path, encode_wav(signal, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Signal {
        Signal::new(
            16000,
            vec![vec![0.1, -0.25, 0.3333, 1e-7], vec![-1.0, 0.5, 0.0, 0.999]],
        )
        .unwrap()
    }

    #[test]
    fn float_round_trip_is_exact_in_f32() {
        let s = sample();
        let back = decode_wav(&encode_wav(&s, SampleFormat::Float32)).unwrap();
        assert_eq!(back.sample_rate, 16000);
        for (a, b) in s.channels.iter().flatten().zip(back.channels.iter().flatten()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        let again = decode_wav(&encode_wav(&back, SampleFormat::Float32)).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn pcm_scaling() {
        let s = Signal::new(8000, vec![vec![-1.0, 0.5, 1.0]]).unwrap();
        let back = decode_wav(&encode_wav(&s, SampleFormat::Pcm16)).unwrap();
        assert_eq!(back.channels[0], vec![-1.0, 0.5, 32767.0 / 32768.0]);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_wav(&sample(), SampleFormat::Pcm16);
        for cut in [0, 3, 10, 30, 43, bytes.len() - 1] {
            match decode_wav(&bytes[..cut]) {
                Err(Error::Wav { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn unsupported_codec() {
        let mut bytes = encode_wav(&sample(), SampleFormat::Pcm16);
        bytes[20] = 2; // ADPCM
        match decode_wav(&bytes) {
            Err(Error::Wav { offset: 20, message }) => assert!(message.contains("unsupported")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn skips_unknown_chunks() {
        let bytes = encode_wav(&sample(), SampleFormat::Float32);
        let mut with_list = bytes[..12].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&bytes[12..]);
        assert_eq!(decode_wav(&with_list).unwrap(), decode_wav(&bytes).unwrap());
    }
}
