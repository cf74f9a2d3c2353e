//! Minimal RIFF/WAVE codec for PCM16 and IEEE float32 files.

const PCM: u16 = 1;
const IEEE_FLOAT: u16 = 3;
const EXTENSIBLE: u16 = 0xFFFE;

pub(crate) struct Wav {
    pub channels: u16,
    pub sample_rate: u32,
    /// Interleaved samples scaled to [-1, 1].
    pub samples: Vec<f32>,
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Wav, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body.checked_add(len).filter(|&e| e <= bytes.len()).ok_or("truncated chunk")?;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err("fmt chunk too short".into());
                }
                let mut format = u16_at(bytes, body);
                if format == EXTENSIBLE && len >= 26 {
                    format = u16_at(bytes, body + 24);
                }
                fmt = Some((format, u16_at(bytes, body + 2), u32_at(bytes, body + 4), u16_at(bytes, body + 14)));
            }
            b"data" => {
                let (format, channels, sample_rate, bits) = fmt.ok_or("data chunk before fmt chunk")?;
                let data = &bytes[body..end];
                let samples = match (format, bits) {
                    (PCM, 16) => data
                        .chunks_exact(2)
                        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                        .collect(),
                    (IEEE_FLOAT, 32) => data
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                    _ => return Err(format!("unsupported sample format {format} with {bits} bits")),
                };
                return Ok(Wav {
                    channels,
                    sample_rate,
                    samples,
                });
            }
            _ => {}
        }
        pos = end + (len & 1);
    }
    Err("no data chunk".into())
}

pub(crate) fn encode_pcm16(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() as u32 * 2;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        out.extend_from_slice(&((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_roundtrip_within_quantization() {
        let samples: Vec<f32> = (0..100).map(|i| (i as f32 * 0.1).sin() * 0.9).collect();
        let wav = decode(&encode_pcm16(&samples, 22050)).unwrap();
        assert_eq!((wav.channels, wav.sample_rate), (1, 22050));
        for (a, b) in samples.iter().zip(&wav.samples) {
            assert!((a - b).abs() < 1.0 / 16384.0);
        }
    }

    #[test]
    fn float_and_stereo_headers() {
        let mut bytes = encode_pcm16(&[0.0; 4], 44100);
        // rewrite as 2-channel float32
        bytes[20..22].copy_from_slice(&IEEE_FLOAT.to_le_bytes());
        bytes[22..24].copy_from_slice(&2u16.to_le_bytes());
        bytes[34..36].copy_from_slice(&32u16.to_le_bytes());
        let wav = decode(&bytes).unwrap();
        assert_eq!((wav.channels, wav.sample_rate, wav.samples.len()), (2, 44100, 2));
    }

    #[test]
    fn garbage_rejected() {
        assert!(decode(b"hello").is_err());
        let mut bytes = encode_pcm16(&[0.0; 4], 22050);
        bytes[34..36].copy_from_slice(&24u16.to_le_bytes());
        assert!(decode(&bytes).is_err());
        assert!(decode(&bytes[..30]).is_err());
    }
}
