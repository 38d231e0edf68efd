//! File formats: WAV audio in and out, detection and label CSVs, and the
//! JSON Lines event stream.
//!
//! WAV ingestion accepts 16/24-bit PCM and 32-bit float, either one
//! multichannel file or one mono file per channel. Integer samples are
//! normalized by their type's magnitude (a full-scale positive 16-bit
//! sample maps to 32767/32768); float samples are clamped into [-1, 1].

use super::{ClassifiedLocatedEvent, PipelineError};
use crate::classify::ClassLabel;
use crate::detect::{Detection, DetectorMethod};
use crate::geometry::{MicArray, Vec3};
use crate::pipeline::config::InputSpec;
use crate::signal::AudioBlock;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn ingest(spec: &InputSpec, array: &MicArray) -> Result<AudioBlock, PipelineError> {
    match spec {
        InputSpec::Multichannel(path) => ingest_wav(path, array),
        InputSpec::PerChannel(paths) => ingest_mono_set(paths, array),
    }
}

/// Reads one multichannel WAV whose layout must match the array.
pub fn ingest_wav(path: &Path, array: &MicArray) -> Result<AudioBlock, PipelineError> {
    let mut reader = open_wav(path)?;
    let spec = reader.spec();
    check_rate(spec.sample_rate, array, path)?;
    let channels = spec.channels as usize;
    if channels != array.len() {
        return Err(PipelineError::Ingest {
            field: "channels".into(),
            detail: format!(
                "{} has {channels} channels, array expects {}",
                path.display(),
                array.len()
            ),
        });
    }
    let interleaved = decode_samples(&mut reader, path)?;
    let frames = interleaved.len() / channels;
    let mut out = vec![Vec::with_capacity(frames); channels];
    for (i, s) in interleaved.into_iter().enumerate() {
        out[i % channels].push(s);
    }
    Ok(AudioBlock::new(f64::from(spec.sample_rate), 0, out)?)
}

/// Reads one mono WAV per channel, in channel order.
pub fn ingest_mono_set(paths: &[PathBuf], array: &MicArray) -> Result<AudioBlock, PipelineError> {
    if paths.len() != array.len() {
        return Err(PipelineError::Ingest {
            field: "channels".into(),
            detail: format!("{} files for {} channels", paths.len(), array.len()),
        });
    }
    let mut out = Vec::with_capacity(paths.len());
    let mut rate = None;
    for path in paths {
        let mut reader = open_wav(path)?;
        let spec = reader.spec();
        check_rate(spec.sample_rate, array, path)?;
        if spec.channels != 1 {
            return Err(PipelineError::Ingest {
                field: "channels".into(),
                detail: format!("{} is not mono ({} channels)", path.display(), spec.channels),
            });
        }
        rate.get_or_insert(spec.sample_rate);
        let data = decode_samples(&mut reader, path)?;
        if let Some(first) = out.first().map(Vec::len) {
            if first != data.len() {
                return Err(PipelineError::Ingest {
                    field: "length".into(),
                    detail: format!(
                        "{} has {} samples, first channel has {first}",
                        path.display(),
                        data.len()
                    ),
                });
            }
        }
        out.push(data);
    }
    Ok(AudioBlock::new(f64::from(rate.unwrap_or(0)), 0, out)?)
}

fn open_wav(path: &Path) -> Result<WavReader<std::io::BufReader<std::fs::File>>, PipelineError> {
    WavReader::open(path)
        .map_err(|e| PipelineError::Wav(format!("{}: {e}", path.display())))
}

fn check_rate(rate: u32, array: &MicArray, path: &Path) -> Result<(), PipelineError> {
    if (f64::from(rate) - array.sample_rate).abs() > 0.5 {
        return Err(PipelineError::Ingest {
            field: "sample_rate".into(),
            detail: format!(
                "{} is {rate} Hz, array expects {} Hz",
                path.display(),
                array.sample_rate
            ),
        });
    }
    Ok(())
}

fn decode_samples(
    reader: &mut WavReader<std::io::BufReader<std::fs::File>>,
    path: &Path,
) -> Result<Vec<f64>, PipelineError> {
    let spec = reader.spec();
    let bad = |e: hound::Error| PipelineError::Wav(format!("{}: {e}", path.display()));
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|x| f64::from(x).clamp(-1.0, 1.0)).map_err(bad))
            .collect(),
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|x| (f64::from(x) / scale).clamp(-1.0, 1.0)).map_err(bad))
                .collect()
        }
        (format, bits) => Err(PipelineError::Ingest {
            field: "sample_format".into(),
            detail: format!("{}: unsupported {bits}-bit {format:?}", path.display()),
        }),
    }
}

/// Writes a block as a 32-bit float multichannel WAV.
pub fn write_wav(path: &Path, block: &AudioBlock) -> Result<(), PipelineError> {
    let spec = WavSpec {
        channels: block.channels() as u16,
        sample_rate: block.sample_rate as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)
        .map_err(|e| PipelineError::Wav(format!("{}: {e}", path.display())))?;
    for frame in 0..block.len() {
        for ch in 0..block.channels() {
            writer
                .write_sample(block.channel(ch)[frame] as f32)
                .map_err(|e| PipelineError::Wav(format!("{}: {e}", path.display())))?;
        }
    }
    writer.finalize().map_err(|e| PipelineError::Wav(format!("{}: {e}", path.display())))
}

fn method_name(method: DetectorMethod) -> &'static str {
    match method {
        DetectorMethod::GaussianThreshold => "gaussian_threshold",
        DetectorMethod::Surprise => "surprise",
    }
}

fn parse_method(s: &str) -> Option<DetectorMethod> {
    match s {
        "gaussian_threshold" => Some(DetectorMethod::GaussianThreshold),
        "surprise" => Some(DetectorMethod::Surprise),
        _ => None,
    }
}

pub fn detections_to_csv(detections: &[Detection]) -> String {
    let mut out = String::from("channel,sample_index,score,method\n");
    for d in detections {
        out.push_str(&format!(
            "{},{},{},{}\n",
            d.channel,
            d.sample_index,
            d.score,
            method_name(d.method)
        ));
    }
    out
}

pub fn write_detections_csv(path: &Path, detections: &[Detection]) -> Result<(), PipelineError> {
    Ok(std::fs::write(path, detections_to_csv(detections))?)
}

pub fn read_detections_csv(path: &Path) -> Result<Vec<Detection>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (number, line) in text.lines().enumerate() {
        if number == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| PipelineError::Malformed {
            path: path.display().to_string(),
            line: number + 1,
            detail,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", fields.len())));
        }
        out.push(Detection {
            channel: fields[0].trim().parse().map_err(|e| bad(format!("channel: {e}")))?,
            sample_index: fields[1]
                .trim()
                .parse()
                .map_err(|e| bad(format!("sample_index: {e}")))?,
            score: fields[2].trim().parse().map_err(|e| bad(format!("score: {e}")))?,
            method: parse_method(fields[3].trim())
                .ok_or_else(|| bad(format!("unknown method {}", fields[3])))?,
        });
    }
    Ok(out)
}

/// One manually labeled detection, as produced by a human pass over the
/// detector output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRecord {
    pub channel: usize,
    pub sample_index: u64,
    pub class: ClassLabel,
}

pub fn labels_to_csv(labels: &[LabelRecord]) -> String {
    let mut out = String::from("channel,sample_index,class\n");
    for l in labels {
        out.push_str(&format!("{},{},{}\n", l.channel, l.sample_index, l.class.as_str()));
    }
    out
}

pub fn write_labels_csv(path: &Path, labels: &[LabelRecord]) -> Result<(), PipelineError> {
    Ok(std::fs::write(path, labels_to_csv(labels))?)
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<LabelRecord>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (number, line) in text.lines().enumerate() {
        if number == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| PipelineError::Malformed {
            path: path.display().to_string(),
            line: number + 1,
            detail,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", fields.len())));
        }
        out.push(LabelRecord {
            channel: fields[0].trim().parse().map_err(|e| bad(format!("channel: {e}")))?,
            sample_index: fields[1]
                .trim()
                .parse()
                .map_err(|e| bad(format!("sample_index: {e}")))?,
            class: ClassLabel::parse(fields[2].trim())
                .ok_or_else(|| bad(format!("unknown class {}", fields[2])))?,
        });
    }
    Ok(out)
}

/// Rounds to 9 significant digits; the event stream's float convention.
pub fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("scientific notation round-trips")
}

fn sig9_value(x: f64) -> Value {
    serde_json::Number::from_f64(sig9(x)).map_or(Value::Null, Value::Number)
}

fn event_json(event: &ClassifiedLocatedEvent) -> Value {
    let mut obj = Map::new();
    obj.insert("event_id".into(), Value::String(event.event_id.clone()));
    obj.insert("class".into(), Value::String(event.class.as_str().into()));
    let (x, y, z) = match event.position {
        Some(p) => (sig9_value(p.x), sig9_value(p.y), sig9_value(p.z)),
        None => (Value::Null, Value::Null, Value::Null),
    };
    obj.insert("x_m".into(), x);
    obj.insert("y_m".into(), y);
    obj.insert("z_m".into(), z);
    obj.insert("t_s".into(), sig9_value(event.event_time));
    obj.insert("residual".into(), event.residual.map_or(Value::Null, sig9_value));
    let confidences: Map<String, Value> = event
        .confidences
        .iter()
        .map(|(class, &c)| (class.as_str().to_string(), sig9_value(c)))
        .collect();
    obj.insert("confidences".into(), Value::Object(confidences));
    let detections: Vec<Value> = event
        .detections
        .iter()
        .map(|d| {
            json!({
                "channel": d.channel,
                "sample_index": d.sample_index,
                "score": sig9_value(d.score),
                "method": method_name(d.method),
            })
        })
        .collect();
    obj.insert("detections".into(), Value::Array(detections));
    Value::Object(obj)
}

/// One JSON object per line, in input order.
pub fn events_to_jsonl(events: &[ClassifiedLocatedEvent]) -> String {
    let mut out = String::new();
    for event in events {
        out.push_str(&event_json(event).to_string());
        out.push('\n');
    }
    out
}

pub fn write_events_jsonl(
    path: &Path,
    events: &[ClassifiedLocatedEvent],
) -> Result<(), PipelineError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(events_to_jsonl(events).as_bytes())?;
    Ok(())
}

/// Parses an event stream written by `write_events_jsonl`. The fixed fields
/// must be present and well typed; extra keys are ignored.
pub fn read_events_jsonl(path: &Path) -> Result<Vec<ClassifiedLocatedEvent>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| PipelineError::Malformed {
            path: path.display().to_string(),
            line: number + 1,
            detail,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        out.push(event_from_json(&value).map_err(bad)?);
    }
    Ok(out)
}

fn event_from_json(value: &Value) -> Result<ClassifiedLocatedEvent, String> {
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let field = |name: &str| obj.get(name).ok_or(format!("missing field {name}"));
    let event_id = field("event_id")?.as_str().ok_or("event_id: expected a string")?.to_string();
    let class_str = field("class")?.as_str().ok_or("class: expected a string")?;
    let class = ClassLabel::parse(class_str).ok_or(format!("unknown class {class_str}"))?;
    let nullable = |name: &str| -> Result<Option<f64>, String> {
        match field(name)? {
            Value::Null => Ok(None),
            v => v.as_f64().map(Some).ok_or(format!("{name}: expected a number or null")),
        }
    };
    let position = match (nullable("x_m")?, nullable("y_m")?, nullable("z_m")?) {
        (Some(x), Some(y), Some(z)) => Some(Vec3::new(x, y, z)),
        (None, None, None) => None,
        _ => return Err("x_m, y_m, z_m must be all numbers or all null".into()),
    };
    let event_time = field("t_s")?.as_f64().ok_or("t_s: expected a number")?;
    let residual = nullable("residual")?;
    let mut confidences = BTreeMap::new();
    for (key, v) in field("confidences")?.as_object().ok_or("confidences: expected an object")? {
        let class = ClassLabel::parse(key).ok_or(format!("unknown class {key}"))?;
        let score = v.as_f64().ok_or(format!("confidences.{key}: expected a number"))?;
        confidences.insert(class, score);
    }
    let mut detections = Vec::new();
    for d in field("detections")?.as_array().ok_or("detections: expected an array")? {
        let detection: Detection =
            serde_json::from_value(d.clone()).map_err(|e| format!("detections: {e}"))?;
        detections.push(detection);
    }
    Ok(ClassifiedLocatedEvent {
        event_id,
        class,
        position,
        event_time,
        residual,
        confidences,
        detections,
    })
}
