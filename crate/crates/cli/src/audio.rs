//! Single-channel waveform input and output: WAV through `hound`, or a
//! plain text list of samples.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

/// Samples scaled to [-1, 1] plus the source format.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub spec: WavSpec,
}

fn is_wav(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Reads a mono WAV file, or whitespace/comma separated samples from any
/// other file (taken to be at `default_rate` Hz).
pub fn read_waveform(path: &Path, default_rate: u32) -> Result<Waveform> {
    if !is_wav(path) {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let samples = text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().with_context(|| format!("bad sample {t:?}")))
            .collect::<Result<Vec<_>>>()?;
        return Ok(Waveform {
            samples,
            spec: WavSpec {
                channels: 1,
                sample_rate: default_rate,
                bits_per_sample: 32,
                sample_format: SampleFormat::Float,
            },
        });
    }
    let mut reader = WavReader::open(path).with_context(|| format!("opening {}", path.display()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        bail!("{}: expected a single channel, found {}", path.display(), spec.channels);
    }
    let samples = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<Vec<_>, _>>()?,
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok(Waveform { samples, spec })
}

/// Writes with the format of `spec`; integer formats clip to full scale.
/// Non-WAV paths get one sample per line.
pub fn write_waveform(path: &Path, samples: &[f64], spec: WavSpec) -> Result<()> {
    if !is_wav(path) {
        let text: String = samples.iter().map(|s| format!("{s}\n")).collect();
        fs::write(path, text)?;
        return Ok(());
    }
    let mut w = WavWriter::create(path, spec).with_context(|| format!("creating {}", path.display()))?;
    match spec.sample_format {
        SampleFormat::Float => {
            for &s in samples {
                w.write_sample(s as f32)?;
            }
        }
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            for &s in samples {
                let v = (s * scale).round().clamp(-scale, scale - 1.0) as i32;
                w.write_sample(v)?;
            }
        }
    }
    w.finalize()?;
    Ok(())
}
