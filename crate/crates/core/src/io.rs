//! File formats.
//!
//! * Stream: JSON lines. The first line is a header
//!   `{"format":"mindelay-stream","version":1,"n_classes":N,"units":"normalized"|"pixel"}`,
//!   then one object per frame:
//!   `{"frame":t,"width":W,"height":H,"detections":[{"box":[x,y,lx,ly],"probs":[v0,..,vn],"mu":m}]}`.
//!   Pixel boxes are divided by the frame's width/height at read time.
//! * Ground truth: one JSON document (see [`GroundTruth`]).
//! * Declarations: JSON lines, one [`Declaration`] per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::model::{ClassProbs, Declaration, Detection, FrameData};
use crate::synth::{GroundTruth, ScenarioSpec};

pub const STREAM_FORMAT: &str = "mindelay-stream";
pub const STREAM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Normalized,
    Pixel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub format: String,
    pub version: u32,
    pub n_classes: usize,
    pub units: Units,
}

impl StreamHeader {
    pub fn normalized(n_classes: usize) -> Self {
        Self {
            format: STREAM_FORMAT.into(),
            version: STREAM_VERSION,
            n_classes,
            units: Units::Normalized,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawDetection {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    probs: Vec<f64>,
    mu: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct RawFrame {
    frame: u64,
    #[serde(default = "one")]
    width: f64,
    #[serde(default = "one")]
    height: f64,
    detections: Vec<RawDetection>,
}

fn format_err(line: usize, message: impl ToString) -> Error {
    Error::Format {
        line,
        message: message.to_string(),
    }
}

/// Reads frames lazily, validating as it goes.
pub struct StreamReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    header: StreamHeader,
    next_frame: Option<u64>,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines.next().ok_or_else(|| format_err(1, "missing stream header"))??;
        let header: StreamHeader = serde_json::from_str(&first).map_err(|e| format_err(1, e))?;
        if header.format != STREAM_FORMAT || header.version != STREAM_VERSION {
            return Err(format_err(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        if header.n_classes == 0 {
            return Err(format_err(1, "n_classes must be at least 1"));
        }
        Ok(Self {
            lines,
            line_no: 1,
            header,
            next_frame: None,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn parse(&mut self, text: &str) -> Result<FrameData> {
        let line = self.line_no;
        let raw: RawFrame = serde_json::from_str(text).map_err(|e| format_err(line, e))?;
        if let Some(expected) = self.next_frame {
            if raw.frame != expected {
                return Err(Error::FrameGap {
                    expected,
                    found: raw.frame,
                });
            }
        }
        let (sx, sy) = match self.header.units {
            Units::Normalized => (1.0, 1.0),
            Units::Pixel => {
                if !(raw.width > 0.0 && raw.height > 0.0) {
                    return Err(format_err(line, "pixel units need positive width and height"));
                }
                (raw.width, raw.height)
            }
        };
        let expected = self.header.n_classes + 1;
        let mut detections = Vec::with_capacity(raw.detections.len());
        for d in raw.detections {
            if d.probs.len() != expected {
                return Err(Error::ClassCountMismatch {
                    frame: raw.frame,
                    expected,
                    found: d.probs.len(),
                });
            }
            let [x, y, lx, ly] = d.bbox;
            let bbox = BoundingBox::new(x / sx, y / sy, lx / sx, ly / sy)?;
            detections.push(Detection::new(bbox, ClassProbs::new(d.probs)?, d.mu)?);
        }
        self.next_frame = Some(raw.frame + 1);
        Ok(FrameData::new(raw.frame, detections))
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<FrameData>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if !text.trim().is_empty() {
                return Some(self.parse(&text));
            }
        }
    }
}

/// Reads a whole stream into memory.
pub fn read_stream(reader: impl BufRead) -> Result<(StreamHeader, Vec<FrameData>)> {
    let r = StreamReader::new(reader)?;
    let header = r.header().clone();
    let frames = r.collect::<Result<Vec<_>>>()?;
    Ok((header, frames))
}

/// Writes a normalized-unit stream.
pub fn write_stream(mut w: impl Write, n_classes: usize, frames: &[FrameData]) -> Result<()> {
    writeln!(w, "{}", to_json(&StreamHeader::normalized(n_classes))?)?;
    for f in frames {
        let raw = RawFrame {
            frame: f.frame,
            width: 1.0,
            height: 1.0,
            detections: f
                .detections
                .iter()
                .map(|d| RawDetection {
                    bbox: d.bbox.as_array(),
                    probs: d.probs.as_slice().to_vec(),
                    mu: d.mu,
                })
                .collect(),
        };
        writeln!(w, "{}", to_json(&raw)?)?;
    }
    w.flush()?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Io(e.to_string()))
}

pub fn read_ground_truth(reader: impl std::io::Read) -> Result<GroundTruth> {
    let truth: GroundTruth = serde_json::from_reader(reader).map_err(|e| format_err(e.line(), e))?;
    for o in &truth.objects {
        if o.appear_frame > o.disappear_frame {
            return Err(format_err(0, format!("object {}: appear_frame after disappear_frame", o.id)));
        }
        if o.boxes.iter().any(|b| b.frame < o.appear_frame || b.frame > o.disappear_frame) {
            return Err(format_err(0, format!("object {}: box outside its visible span", o.id)));
        }
        if o.boxes.windows(2).any(|w| w[0].frame >= w[1].frame) {
            return Err(format_err(0, format!("object {}: boxes must be in increasing frame order", o.id)));
        }
    }
    Ok(truth)
}

pub fn write_ground_truth(mut w: impl Write, truth: &GroundTruth) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, truth).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

pub fn read_declarations(reader: impl BufRead) -> Result<Vec<Declaration>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format_err(k + 1, e))?);
    }
    Ok(out)
}

pub fn write_declarations(mut w: impl Write, decls: &[Declaration]) -> Result<()> {
    for d in decls {
        writeln!(w, "{}", to_json(d)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spec(reader: impl std::io::Read) -> Result<ScenarioSpec> {
    let spec: ScenarioSpec = serde_json::from_reader(reader).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}
