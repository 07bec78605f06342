//! Newline-delimited replay streams, one [`FrameBundle`] per line.
//!
//! Depth maps are stored inline (`values`, row-major) or in a sidecar file of
//! little-endian `f32` values named by `sidecar`, resolved relative to the
//! replay file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::FrameBundle;
use crate::geometry::{DepthMap, DepthMode, Detection};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: invalid frame: {message}")]
    Validation { line: usize, message: String },
    #[error("line {line}: frame index {got} does not follow {prev}")]
    NonMonotonic { line: usize, prev: u64, got: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct DepthRecord {
    width_px: u32,
    height_px: u32,
    mode: DepthMode,
    frame_index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    frame_index: u64,
    wall_dt: f64,
    detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth: Option<DepthRecord>,
}

fn validate_bundle(b: &FrameBundle) -> Result<(), String> {
    if !(b.wall_dt >= 0.0 && b.wall_dt.is_finite()) {
        return Err(format!("wall_dt {} must be finite and >= 0", b.wall_dt));
    }
    for (i, d) in b.detections.iter().enumerate() {
        d.validate().map_err(|e| format!("detection {i}: {e}"))?;
        if d.frame_index != b.frame_index {
            return Err(format!(
                "detection {i} has frame_index {} in frame {}",
                d.frame_index, b.frame_index
            ));
        }
    }
    if let Some(depth) = &b.depth {
        depth.validate().map_err(|e| format!("depth: {e}"))?;
    }
    Ok(())
}

fn read_sidecar(path: &Path) -> std::io::Result<Vec<f32>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Streaming reader over a replay file.
pub struct ReplayReader<R> {
    lines: std::io::Lines<R>,
    base_dir: PathBuf,
    line_no: usize,
    prev: Option<u64>,
}

impl<R: BufRead> Iterator for ReplayReader<R> {
    type Item = Result<FrameBundle, ReplayError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&line));
        }
    }
}

impl<R: BufRead> ReplayReader<R> {
    fn parse(&mut self, line: &str) -> Result<FrameBundle, ReplayError> {
        let line_no = self.line_no;
        let rec: FrameRecord =
            serde_json::from_str(line).map_err(|source| ReplayError::Parse { line: line_no, source })?;
        let invalid = |message: String| ReplayError::Validation { line: line_no, message };
        let depth = match rec.depth {
            None => None,
            Some(d) => {
                let values = match (d.values, d.sidecar) {
                    (Some(v), None) => v,
                    (None, Some(name)) => read_sidecar(&self.base_dir.join(&name))
                        .map_err(|e| invalid(format!("sidecar {name}: {e}")))?,
                    _ => return Err(invalid("depth needs exactly one of values or sidecar".into())),
                };
                Some(DepthMap {
                    width_px: d.width_px,
                    height_px: d.height_px,
                    mode: d.mode,
                    values,
                    frame_index: d.frame_index,
                })
            }
        };
        let bundle = FrameBundle {
            frame_index: rec.frame_index,
            detections: rec.detections,
            depth,
            wall_dt: rec.wall_dt,
        };
        validate_bundle(&bundle).map_err(invalid)?;
        if let Some(prev) = self.prev {
            if bundle.frame_index <= prev {
                return Err(ReplayError::NonMonotonic {
                    line: line_no,
                    prev,
                    got: bundle.frame_index,
                });
            }
        }
        self.prev = Some(bundle.frame_index);
        Ok(bundle)
    }
}

/// Reads frames from `reader`; sidecar paths resolve against `base_dir`.
pub fn read_replay<R: BufRead>(reader: R, base_dir: impl Into<PathBuf>) -> ReplayReader<R> {
    ReplayReader {
        lines: reader.lines(),
        base_dir: base_dir.into(),
        line_no: 0,
        prev: None,
    }
}

/// Loads a whole replay file, failing on the first invalid line.
pub fn load_replay(path: impl AsRef<Path>) -> Result<Vec<FrameBundle>, ReplayError> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    read_replay(BufReader::new(File::open(path)?), base).collect()
}

/// Writes frames as replay lines. With a sidecar directory set, depth maps go
/// to binary files next to the replay instead of inline arrays.
pub struct ReplayWriter<W: Write> {
    out: BufWriter<W>,
    sidecar: Option<(PathBuf, String)>,
}

impl<W: Write> ReplayWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out: BufWriter::new(out),
            sidecar: None,
        }
    }

    /// Depth maps are written to `dir/<prefix>_<frame>.f32`.
    pub fn with_sidecars(mut self, dir: impl Into<PathBuf>, prefix: impl Into<String>) -> Self {
        self.sidecar = Some((dir.into(), prefix.into()));
        self
    }

    pub fn write(&mut self, bundle: &FrameBundle) -> Result<(), ReplayError> {
        let depth = match &bundle.depth {
            None => None,
            Some(d) => {
                let (values, sidecar) = match &self.sidecar {
                    None => (Some(d.values.clone()), None),
                    Some((dir, prefix)) => {
                        let name = format!("{prefix}_{:06}.f32", bundle.frame_index);
                        let mut f = BufWriter::new(File::create(dir.join(&name))?);
                        for v in &d.values {
                            f.write_all(&v.to_le_bytes())?;
                        }
                        f.flush()?;
                        (None, Some(name))
                    }
                };
                Some(DepthRecord {
                    width_px: d.width_px,
                    height_px: d.height_px,
                    mode: d.mode,
                    frame_index: d.frame_index,
                    values,
                    sidecar,
                })
            }
        };
        let rec = FrameRecord {
            frame_index: bundle.frame_index,
            wall_dt: bundle.wall_dt,
            detections: bundle.detections.clone(),
            depth,
        };
        serde_json::to_writer(&mut self.out, &rec).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, ReplayError> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| ReplayError::Io(e.into_error()))
    }
}

/// Serializes frames into one replay document.
pub fn write_replay<'a>(frames: impl IntoIterator<Item = &'a FrameBundle>) -> Result<Vec<u8>, ReplayError> {
    let mut w = ReplayWriter::new(Vec::new());
    for f in frames {
        w.write(f)?;
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Category, PixelBox};

    fn det(frame: u64, confidence: f64) -> Detection {
        Detection {
            category: Category::object("bottle"),
            bbox: PixelBox::new(100.0, 100.0, 20.0, 40.0).unwrap(),
            confidence,
            feature: None,
            frame_index: frame,
            source_id: None,
        }
    }

    fn bundle(frame: u64) -> FrameBundle {
        FrameBundle {
            frame_index: frame,
            detections: vec![det(frame, 0.9)],
            depth: None,
            wall_dt: 1.0 / 30.0,
        }
    }

    fn read(text: &str) -> Result<Vec<FrameBundle>, ReplayError> {
        read_replay(text.as_bytes(), ".").collect()
    }

    #[test]
    fn empty_file_is_empty_stream() {
        assert!(read("").unwrap().is_empty());
    }

    #[test]
    fn three_frames_round_trip() {
        let frames: Vec<_> = (0..3).map(bundle).collect();
        let text = String::from_utf8(write_replay(&frames).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 3);
        let back = read(&text).unwrap();
        assert_eq!(back, frames);
        assert!(back.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
    }

    #[test]
    fn bad_confidence_is_rejected_with_line() {
        let mut frames: Vec<_> = (0..2).map(bundle).collect();
        frames[1].detections[0].confidence = 1.2;
        let text = String::from_utf8(write_replay(&frames).unwrap()).unwrap();
        match read(&text) {
            Err(ReplayError::Validation { line: 2, message }) => assert!(message.contains("confidence")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let good = String::from_utf8(write_replay(&[bundle(0)]).unwrap()).unwrap();
        let text = format!("{good}{{not json\n");
        assert!(matches!(read(&text), Err(ReplayError::Parse { line: 2, .. })));
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let frames = vec![bundle(4), bundle(4)];
        let text = String::from_utf8(write_replay(&frames).unwrap()).unwrap();
        assert!(matches!(
            read(&text),
            Err(ReplayError::NonMonotonic { line: 2, prev: 4, got: 4 })
        ));
    }

    #[test]
    fn depth_inline_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = bundle(0);
        f.depth = Some(DepthMap::new(3, 2, DepthMode::Metric, vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0], 0).unwrap());
        let inline = String::from_utf8(write_replay([&f]).unwrap()).unwrap();
        assert_eq!(read(&inline).unwrap(), vec![f.clone()]);

        let path = dir.path().join("stream.ndjson");
        let mut w = ReplayWriter::new(File::create(&path).unwrap()).with_sidecars(dir.path(), "depth");
        w.write(&f).unwrap();
        w.finish().unwrap();
        assert!(dir.path().join("depth_000000.f32").exists());
        assert_eq!(load_replay(&path).unwrap(), vec![f]);
    }
}
