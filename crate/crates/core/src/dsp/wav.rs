use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
const SCALE: f64 = 32768.0;

/// Mono signal with amplitudes nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn pcm16_spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

/// Reads a 16 kHz mono PCM16 file, scaling samples by `1/32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::AudioFormat(format!(
            "expected 1 channel, file has {}",
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::AudioFormat(format!(
            "expected {SAMPLE_RATE} Hz, file is {} Hz",
            spec.sample_rate
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::AudioFormat(format!(
            "expected 16-bit integer PCM, file is {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Waveform::new(samples))
}

/// Quantizes one sample to PCM16, saturating out-of-range values.
pub fn quantize(x: f64) -> (i16, bool) {
    let v = (x * SCALE).round();
    if v > i16::MAX as f64 {
        (i16::MAX, true)
    } else if v < i16::MIN as f64 {
        (i16::MIN, true)
    } else if v.is_nan() {
        (0, true)
    } else {
        (v as i16, false)
    }
}

/// Writes 16 kHz mono PCM16. Returns the number of clipped samples.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<usize> {
    if wave.sample_rate != SAMPLE_RATE {
        return Err(Error::AudioFormat(format!(
            "only {SAMPLE_RATE} Hz output is supported, got {}",
            wave.sample_rate
        )));
    }
    let mut writer = WavWriter::create(path.as_ref(), pcm16_spec())?;
    let mut clipped = 0;
    for &x in &wave.samples {
        let (q, clip) = quantize(x);
        clipped += clip as usize;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(clipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_scale_reads_as_half() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.wav");
        let mut w = WavWriter::create(&path, pcm16_spec()).unwrap();
        for _ in 0..16 {
            w.write_sample(0x4000i16).unwrap();
        }
        w.finalize().unwrap();
        let wave = read_wav(&path).unwrap();
        assert_eq!(wave.samples, vec![0.5; 16]);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        let mut w = WavWriter::create(&a, pcm16_spec()).unwrap();
        for v in [-32768i16, -1, 0, 1, 1234, 32767] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let clipped = write_wav(&b, &read_wav(&a).unwrap()).unwrap();
        assert_eq!(clipped, 0);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = WavSpec {
            channels: 2,
            ..pcm16_spec()
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("channel"), "{err}");
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("48k.wav");
        let spec = WavSpec {
            sample_rate: 48_000,
            ..pcm16_spec()
        };
        WavWriter::create(&path, spec).unwrap().finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::AudioFormat(_))));
    }

    #[test]
    fn clipping_saturates_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let clipped = write_wav(&path, &Waveform::new(vec![1.5, -2.0, 0.25])).unwrap();
        assert_eq!(clipped, 2);
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples, vec![32767.0 / 32768.0, -1.0, 0.25]);
    }
}
