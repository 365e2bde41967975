//! WAV input/output, coordinate datasets, batching and synthetic signals.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a RIFF/WAVE file")]
    NotWave,
    #[error("missing `{0}` chunk")]
    MissingChunk(&'static str),
    #[error("malformed `{0}` chunk")]
    Malformed(&'static str),
    #[error("unsupported WAV encoding: format tag {tag:#06x} with {bits} bits per sample")]
    UnsupportedFormat { tag: u16, bits: u16 },
    #[error("{channels}-channel input; enable downmix to average it to mono")]
    MultiChannel { channels: u16 },
    #[error("data chunk holds no samples")]
    EmptyData,
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("synthetic signal peaks at {0}, above 1; rescale the components")]
    PeakTooHigh(f64),
    #[error("duration must be positive and finite, got {0}")]
    BadDuration(f64),
}

/// A mono waveform. Samples loaded from disk lie in `[-1, 1]`; rendered
/// clips may exceed that until they are written out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Scales so the largest magnitude is exactly 1. Silent clips are
    /// returned unchanged.
    pub fn normalize_peak(mut self) -> Self {
        let peak = self.peak();
        if peak > 0.0 {
            self.samples.iter_mut().for_each(|s| *s /= peak);
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;

pub fn load_wav(path: impl AsRef<Path>, downmix: bool) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_wav(&bytes, downmix)
}

pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<(), AudioError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip, encoding)).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses an in-memory RIFF/WAVE file. Chunks other than `fmt ` and `data`
/// are skipped.
pub fn decode_wav(bytes: &[u8], downmix: bool) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotWave);
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        // A truncated final chunk is read as far as it goes.
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(AudioError::Malformed("fmt "));
                }
                fmt = Some((u16_at(body, 0), u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are padded to even length.
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }
    let (tag, channels, sample_rate, bits) = fmt.ok_or(AudioError::MissingChunk("fmt "))?;
    let data = data.ok_or(AudioError::MissingChunk("data"))?;

    let width = match (tag, bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_FLOAT, 32) => 4,
        _ => return Err(AudioError::UnsupportedFormat { tag, bits }),
    };
    if channels == 0 {
        return Err(AudioError::Malformed("fmt "));
    }
    if channels > 1 && !downmix {
        return Err(AudioError::MultiChannel { channels });
    }
    let raw: Vec<f64> = data
        .chunks_exact(width)
        .map(|c| match width {
            2 => i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0,
            _ => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
        })
        .collect();
    let frame = channels as usize;
    let frames = raw.len() / frame;
    if frames == 0 {
        return Err(AudioError::EmptyData);
    }
    let mut samples = Vec::with_capacity(frames);
    for (i, f) in raw.chunks_exact(frame).enumerate() {
        let mean = f.iter().sum::<f64>() / frame as f64;
        if !mean.is_finite() {
            return Err(AudioError::NonFinite { index: i });
        }
        samples.push(mean.clamp(-1.0, 1.0));
    }
    AudioClip::new(samples, sample_rate)
}

/// Serializes a mono clip as RIFF/WAVE, clamping samples to `[-1, 1]`.
pub fn encode_wav(clip: &AudioClip, encoding: WavEncoding) -> Vec<u8> {
    let (tag, bits) = match encoding {
        WavEncoding::Pcm16 => (FORMAT_PCM, 16u16),
        WavEncoding::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let block = bits / 8;
    let data_len = clip.samples.len() * block as usize;
    let mut out = Vec::with_capacity(44 + data_len + 1);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len + (data_len & 1)) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * block as u32).to_le_bytes());
    out.extend_from_slice(&block.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let s = s.clamp(-1.0, 1.0);
        match encoding {
            WavEncoding::Pcm16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            WavEncoding::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    if data_len & 1 == 1 {
        out.push(0);
    }
    out
}

/// `(t, a(t))` pairs with `t` spread uniformly over `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateDataset {
    pub coords: Vec<f64>,
    pub targets: Vec<f64>,
}

impl CoordinateDataset {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// `n` uniformly spaced points from 0 to 1 inclusive.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let step = (n - 1) as f64;
            (0..n).map(|i| i as f64 / step).collect()
        }
    }
}

pub fn to_dataset(clip: &AudioClip) -> Result<CoordinateDataset, AudioError> {
    let n = clip.samples.len();
    if n < 2 {
        return Err(AudioError::TooShort(n));
    }
    Ok(CoordinateDataset {
        coords: unit_grid(n),
        targets: clip.samples.clone(),
    })
}

/// Shuffled index batches for one epoch. The permutation is a pure function
/// of `(seed, epoch)`.
pub fn batch_iter(dataset: &CoordinateDataset, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    batch_indices(dataset.len(), batch_size, seed, epoch)
}

pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneComponent {
    pub amp: f64,
    pub freq: f64,
    #[serde(default)]
    pub phase: f64,
}

/// A sum of sinusoids; the JSON form of synthetic inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sample_rate: u32,
    pub duration: f64,
    #[serde(default)]
    pub components: Vec<ToneComponent>,
}

/// Number of samples covering `duration` seconds at `sample_rate`.
pub fn sample_count(duration: f64, sample_rate: u32) -> usize {
    (duration * sample_rate as f64 + 1e-9).floor() as usize
}

/// `samples[i] = Σ A·sin(2π f i / sr + φ)`.
pub fn synth_signal(spec: &SynthSpec) -> Result<AudioClip, AudioError> {
    if spec.sample_rate == 0 {
        return Err(AudioError::ZeroSampleRate);
    }
    if !(spec.duration > 0.0 && spec.duration.is_finite()) {
        return Err(AudioError::BadDuration(spec.duration));
    }
    let sr = spec.sample_rate as f64;
    let n = sample_count(spec.duration, spec.sample_rate);
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            spec.components
                .iter()
                .map(|c| c.amp * (2.0 * PI * c.freq * t + c.phase).sin())
                .sum()
        })
        .collect();
    let clip = AudioClip::new(samples, spec.sample_rate)?;
    let peak = clip.peak();
    if peak > 1.0 + 1e-12 {
        return Err(AudioError::PeakTooHigh(peak));
    }
    Ok(clip)
}

/// A deterministic polyphonic excerpt: a plucked-string arpeggio over a
/// sustained bass line, with decaying harmonics. Used as a stand-in music
/// clip when no recording is supplied. Peak is 0.9.
pub fn music_clip(sample_rate: u32, duration: f64) -> AudioClip {
    // MIDI note numbers; an A-minor figure over a descending bass.
    const MELODY: [u8; 16] = [69, 72, 76, 81, 76, 72, 71, 74, 77, 83, 77, 74, 72, 76, 79, 84];
    const BASS: [u8; 4] = [45, 43, 41, 40];
    const NOTE_SECONDS: f64 = 0.125;
    const BASS_SECONDS: f64 = 0.5;
    let sr = sample_rate as f64;
    let hz = |midi: u8| 440.0 * 2f64.powf((midi as f64 - 69.0) / 12.0);

    let voice = |t: f64, onset: f64, f0: f64, decay: f64, harmonics: usize| -> f64 {
        let age = t - onset;
        if age < 0.0 {
            return 0.0;
        }
        let attack = (age / 0.004).min(1.0);
        let envelope = attack * (-age / decay).exp();
        (1..=harmonics)
            .map(|h| {
                let h = h as f64;
                0.55f64.powf(h - 1.0) * (2.0 * PI * h * f0 * age).sin() * (-age * 0.8 * h / decay).exp()
            })
            .sum::<f64>()
            * envelope
    };

    let n = sample_count(duration, sample_rate);
    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let k = (t / NOTE_SECONDS).floor() as usize;
            let mut s = 0.0;
            // The previous note rings into the current one.
            for note in k.saturating_sub(1)..=k {
                let onset = note as f64 * NOTE_SECONDS;
                s += 0.6 * voice(t, onset, hz(MELODY[note % MELODY.len()]), 0.18, 5);
            }
            let b = (t / BASS_SECONDS).floor() as usize;
            s += 0.8 * voice(t, b as f64 * BASS_SECONDS, hz(BASS[b % BASS.len()]), 0.6, 4);
            s
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|s| *s *= 0.9 / peak);
    }
    AudioClip {
        samples,
        sample_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wav_bytes(tag: u16, channels: u16, bits: u16, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((4 + 8 + 16 + 8 + 6 + 8 + payload.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&8000u32.to_le_bytes());
        out.extend_from_slice(&(8000 * (bits / 8 * channels) as u32).to_le_bytes());
        out.extend_from_slice(&(bits / 8 * channels).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        // An odd-sized chunk that must be skipped, with its pad byte.
        out.extend_from_slice(b"LIST");
        out.extend_from_slice(&5u32.to_le_bytes());
        out.extend_from_slice(b"abcde\0");
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn pcm16_scaling() {
        let payload: Vec<u8> = [0i16, 16384, -32768].iter().flat_map(|v| v.to_le_bytes()).collect();
        let clip = decode_wav(&wav_bytes(1, 1, 16, &payload), false).unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.5, -1.0]);
        assert_eq!(clip.sample_rate, 8000);
    }

    #[test]
    fn float32_verbatim_and_clamped() {
        let payload: Vec<u8> = [0.25f32, 1.5, -3.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let clip = decode_wav(&wav_bytes(3, 1, 32, &payload), false).unwrap();
        assert_eq!(clip.samples, vec![0.25, 1.0, -1.0]);
    }

    #[test]
    fn stereo_downmix() {
        let payload: Vec<u8> = [1.0f32, 0.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let bytes = wav_bytes(3, 2, 32, &payload);
        assert!(matches!(
            decode_wav(&bytes, false),
            Err(AudioError::MultiChannel { channels: 2 })
        ));
        assert_eq!(decode_wav(&bytes, true).unwrap().samples, vec![0.5]);
    }

    #[test]
    fn rejects_unsupported_and_empty() {
        let err = decode_wav(&wav_bytes(2, 1, 4, &[0, 0]), false).unwrap_err();
        assert!(err.to_string().contains("0x0002"), "{err}");
        let err = decode_wav(&wav_bytes(1, 1, 24, &[0, 0, 0]), false).unwrap_err();
        assert!(matches!(err, AudioError::UnsupportedFormat { tag: 1, bits: 24 }));
        assert!(matches!(decode_wav(&wav_bytes(1, 1, 16, &[]), false), Err(AudioError::EmptyData)));
        assert!(matches!(decode_wav(b"RIFX....WAVE", false), Err(AudioError::NotWave)));
    }

    #[test]
    fn file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let clip = AudioClip::new(vec![0.5, -0.123456, 0.999, 1.7], 16000).unwrap();

        let p = dir.path().join("f.wav");
        save_wav(&clip, &p, WavEncoding::Float32).unwrap();
        let back = load_wav(&p, false).unwrap();
        let expected: Vec<f64> = clip.samples.iter().map(|s| s.clamp(-1.0, 1.0) as f32 as f64).collect();
        assert_eq!(back.samples, expected);
        assert_eq!(back.samples[3], 1.0);

        let p = dir.path().join("i.wav");
        save_wav(&clip, &p, WavEncoding::Pcm16).unwrap();
        let back = load_wav(&p, false).unwrap();
        assert_eq!(back.samples[0], 0.5);
        for (a, b) in back.samples.iter().zip(&clip.samples) {
            assert!((a - b.clamp(-1.0, 1.0)).abs() <= 1.0 / 32768.0);
        }
        assert!(matches!(load_wav(dir.path().join("missing.wav"), false), Err(AudioError::Io { .. })));
    }

    #[test]
    fn dataset_coordinates() {
        let clip = AudioClip::new(vec![0.1, 0.2, 0.3, 0.4, 0.5], 10).unwrap();
        let ds = to_dataset(&clip).unwrap();
        assert_eq!(ds.coords, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(ds.targets, clip.samples);
        let three = to_dataset(&AudioClip::new(vec![0.0; 3], 10).unwrap()).unwrap();
        assert_eq!(three.coords, vec![0.0, 0.5, 1.0]);
        assert!(matches!(
            to_dataset(&AudioClip::new(vec![0.0], 10).unwrap()),
            Err(AudioError::TooShort(1))
        ));
    }

    #[test]
    fn batches_partition_indices() {
        let b = batch_indices(4, 2, 7, 0);
        assert_eq!(b.len(), 2);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(batch_indices(4, 2, 7, 0), b);
        assert_eq!(batch_indices(5, 10, 7, 3).len(), 1);
        assert_ne!(batch_indices(100, 100, 7, 0), batch_indices(100, 100, 7, 1));
    }

    #[test]
    fn synth_quarter_rate_tone() {
        let spec = SynthSpec {
            sample_rate: 8,
            duration: 1.0,
            components: vec![ToneComponent {
                amp: 1.0,
                freq: 2.0,
                phase: 0.0,
            }],
        };
        let clip = synth_signal(&spec).unwrap();
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0];
        for (a, b) in clip.samples.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let silent = synth_signal(&SynthSpec {
            components: vec![],
            ..spec.clone()
        })
        .unwrap();
        assert!(silent.samples.iter().all(|&s| s == 0.0));
        let loud = SynthSpec {
            components: vec![spec.components[0].clone(), spec.components[0].clone()],
            ..spec
        };
        assert!(matches!(synth_signal(&loud), Err(AudioError::PeakTooHigh(_))));
    }

    #[test]
    fn synth_spec_json() {
        let spec: SynthSpec = serde_json::from_str(
            r#"{"sample_rate":16000,"duration":0.5,"components":[{"amp":0.5,"freq":100,"phase":0.1}]}"#,
        )
        .unwrap();
        assert_eq!(synth_signal(&spec).unwrap().len(), 8000);
    }

    #[test]
    fn music_clip_is_bounded_and_deterministic() {
        let a = music_clip(16000, 2.0);
        assert_eq!(a.len(), 32000);
        assert!((a.peak() - 0.9).abs() < 1e-12);
        assert_eq!(a, music_clip(16000, 2.0));
    }

    proptest! {
        #[test]
        fn synth_superposes(f1 in 1.0f64..500.0, f2 in 1.0f64..500.0, p in 0.0f64..6.0) {
            let one = |c: ToneComponent| synth_signal(&SynthSpec { sample_rate: 2000, duration: 0.05, components: vec![c] }).unwrap();
            let a = ToneComponent { amp: 0.4, freq: f1, phase: p };
            let b = ToneComponent { amp: 0.3, freq: f2, phase: 0.0 };
            let both = synth_signal(&SynthSpec { sample_rate: 2000, duration: 0.05, components: vec![a.clone(), b.clone()] }).unwrap();
            let (sa, sb) = (one(a), one(b));
            for i in 0..both.len() {
                prop_assert!((both.samples[i] - sa.samples[i] - sb.samples[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn one_epoch_visits_each_index_once(n in 1usize..300, bs in 1usize..64, seed in any::<u64>(), epoch in 0u64..50) {
            let batches = batch_indices(n, bs, seed, epoch);
            prop_assert_eq!(batches.len(), n.div_ceil(bs));
            let mut all = batches.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn coords_uniform(n in 2usize..2000) {
            let c = unit_grid(n);
            prop_assert_eq!(c[0], 0.0);
            prop_assert_eq!(c[n - 1], 1.0);
            let h = 1.0 / (n - 1) as f64;
            for w in c.windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!((w[1] - w[0] - h).abs() < 1e-12);
            }
        }
    }
}
