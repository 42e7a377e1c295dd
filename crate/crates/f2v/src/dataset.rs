//! Clip dataset loading and writing.
//!
//! On-disk layout:
//!
//! ```text
//! root/palette.json                              class_id/name/color (0-255)
//! root/{train|test}/<clip_id>/semantic/%06d.png  palette-colored 8-bit RGB
//! root/{train|test}/<clip_id>/flow/%06d.flo      flow %06d maps frame %06d -> %06d+1
//! root/test/<clip_id>/labels.csv                 frame_index,label
//! ```
//!
//! Frames resize with nearest-neighbor (palette colors stay exact); flow
//! resizes bilinearly with the vectors rescaled by the resize ratio.

use crate::flow::{compute_direction_map, DirectionMap, FlowField, EPS_MOTION};
use crate::frame::{ClassPalette, FrameError, PaletteEntry, SemanticFrame, VideoTensor};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("flow file {path} malformed at byte {offset}: {detail}")]
    FloFormat {
        path: PathBuf,
        offset: u64,
        detail: String,
    },
    #[error("clip {clip}: {detail} (file {file})")]
    Layout {
        clip: String,
        file: String,
        detail: String,
    },
    #[error("palette file {path}: {detail}")]
    Palette { path: PathBuf, detail: String },
    #[error("labels file {path}: {detail}")]
    Labels { path: PathBuf, detail: String },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("image error at {path}: {detail}")]
    Image { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One video clip: contiguous semantic frames, the flow between each
/// consecutive pair, and (for test clips) per-frame binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub frames: Vec<SemanticFrame>,
    pub flows: Vec<FlowField>,
    pub labels: Option<Vec<u8>>,
}

impl Clip {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.frames.len();
        let fail = |detail: String| DatasetError::Layout {
            clip: self.clip_id.clone(),
            file: String::new(),
            detail,
        };
        for (i, f) in self.frames.iter().enumerate() {
            if f.frame_index != i {
                return Err(fail(format!(
                    "frame {i} carries index {}, expected contiguous from 0",
                    f.frame_index
                )));
            }
        }
        if self.flows.len() + 1 != n {
            return Err(fail(format!(
                "{} flow fields for {} frames, expected {}",
                self.flows.len(),
                n,
                n.saturating_sub(1)
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(fail(format!("{} labels for {} frames", labels.len(), n)));
            }
        }
        let (h, w) = (self.frames[0].height(), self.frames[0].width());
        for f in &self.flows {
            if (f.height(), f.width()) != (h, w) {
                return Err(fail(format!(
                    "flow size {}x{} does not match frames {}x{}",
                    f.height(),
                    f.width(),
                    h,
                    w
                )));
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

/// All clips of one split plus the palette they were rendered with.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipDataset {
    pub split: Split,
    pub clips: Vec<Clip>,
    pub palette: ClassPalette,
}

/// One training example: the initial frame with its motion cues and the
/// future frames it should predict.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub initial: SemanticFrame,
    pub direction: DirectionMap,
    pub flow: FlowField,
    pub target: VideoTensor,
}

// ---------------------------------------------------------------------------
// Middlebury .flo

const FLO_MAGIC: &[u8; 4] = b"PIEH";

/// Read a Middlebury-format flow file: "PIEH", little-endian i32 width and
/// height, then row-major interleaved float32 (u, v).
pub fn read_flo(path: &Path) -> Result<FlowField, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let fail = |offset: u64, detail: String| DatasetError::FloFormat {
        path: path.to_path_buf(),
        offset,
        detail,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| fail(0, "truncated magic".into()))?;
    if &magic != FLO_MAGIC {
        return Err(fail(0, format!("bad magic {magic:?}, expected \"PIEH\"")));
    }
    let w = r
        .read_i32::<LittleEndian>()
        .map_err(|_| fail(4, "truncated width".into()))?;
    let h = r
        .read_i32::<LittleEndian>()
        .map_err(|_| fail(8, "truncated height".into()))?;
    if w <= 0 || h <= 0 || w > 1 << 20 || h > 1 << 20 {
        return Err(fail(4, format!("implausible dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0f32; w * h * 2];
    r.read_f32_into::<LittleEndian>(&mut data).map_err(|_| {
        fail(
            12,
            format!("truncated payload, expected {} floats", w * h * 2),
        )
    })?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io_err(path))? != 0 {
        return Err(fail(
            12 + (w * h * 2 * 4) as u64,
            "trailing bytes after payload".into(),
        ));
    }
    let mut u = Array2::<f32>::zeros((h, w));
    let mut v = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            u[(y, x)] = data[2 * (y * w + x)];
            v[(y, x)] = data[2 * (y * w + x) + 1];
        }
    }
    Ok(FlowField { u, v })
}

/// Inverse of [`read_flo`].
pub fn write_flo(path: &Path, flow: &FlowField) -> Result<(), DatasetError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(FLO_MAGIC).map_err(io_err(path))?;
    w.write_i32::<LittleEndian>(flow.width() as i32)
        .map_err(io_err(path))?;
    w.write_i32::<LittleEndian>(flow.height() as i32)
        .map_err(io_err(path))?;
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            w.write_f32::<LittleEndian>(flow.u[(y, x)])
                .map_err(io_err(path))?;
            w.write_f32::<LittleEndian>(flow.v[(y, x)])
                .map_err(io_err(path))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PNG frames

pub fn read_frame_png(path: &Path, frame_index: usize) -> Result<SemanticFrame, DatasetError> {
    let img = image::open(path)
        .map_err(|e| DatasetError::Image {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Array3::<f32>::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c, y as usize, x as usize)] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(SemanticFrame::new(data, frame_index)?)
}

pub fn write_frame_png(path: &Path, frame: &SemanticFrame) -> Result<(), DatasetError> {
    let (h, w) = (frame.height(), frame.width());
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (frame.data()[(c, y as usize, x as usize)] * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|e| DatasetError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Palette and labels

#[derive(Serialize, Deserialize)]
struct PaletteFileEntry {
    class_id: u8,
    class_name: String,
    color: [u8; 3],
}

pub fn read_palette(path: &Path) -> Result<ClassPalette, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let entries: Vec<PaletteFileEntry> =
        serde_json::from_str(&text).map_err(|e| DatasetError::Palette {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let entries = entries
        .into_iter()
        .map(|e| PaletteEntry {
            class_id: e.class_id,
            class_name: e.class_name,
            color: [
                e.color[0] as f32 / 255.0,
                e.color[1] as f32 / 255.0,
                e.color[2] as f32 / 255.0,
            ],
        })
        .collect();
    ClassPalette::new(entries).map_err(|e| DatasetError::Palette {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn write_palette(path: &Path, palette: &ClassPalette) -> Result<(), DatasetError> {
    let entries: Vec<PaletteFileEntry> = palette
        .entries()
        .iter()
        .map(|e| PaletteFileEntry {
            class_id: e.class_id,
            class_name: e.class_name.clone(),
            color: palette.color_u8(e.class_id).unwrap(),
        })
        .collect();
    let text = serde_json::to_string_pretty(&entries).expect("palette serializes");
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>, DatasetError> {
    let fail = |detail: String| DatasetError::Labels {
        path: path.to_path_buf(),
        detail,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| fail(e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "frame_index" || &headers[1] != "label" {
        return Err(fail(format!(
            "expected header frame_index,label got {headers:?}"
        )));
    }
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        let idx: usize = record[0]
            .parse()
            .map_err(|_| fail(format!("row {i}: bad frame_index {:?}", &record[0])))?;
        if idx != i {
            return Err(fail(format!("row {i}: non-contiguous frame_index {idx}")));
        }
        let label: u8 = record[1]
            .parse()
            .map_err(|_| fail(format!("row {i}: bad label {:?}", &record[1])))?;
        if label > 1 {
            return Err(fail(format!("row {i}: label {label} not in {{0,1}}")));
        }
        labels.push(label);
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<(), DatasetError> {
    let fail = |detail: String| DatasetError::Labels {
        path: path.to_path_buf(),
        detail,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| fail(e.to_string()))?;
    w.write_record(["frame_index", "label"])
        .map_err(|e| fail(e.to_string()))?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])
            .map_err(|e| fail(e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Resizing

/// Nearest-neighbor resize; keeps palette colors exact.
pub fn resize_frame_nearest(frame: &SemanticFrame, target: usize) -> SemanticFrame {
    let (h, w) = (frame.height(), frame.width());
    if h == target && w == target {
        return frame.clone();
    }
    let mut out = Array3::<f32>::zeros((3, target, target));
    for y in 0..target {
        let sy = (((y as f64 + 0.5) * h as f64 / target as f64).floor() as usize).min(h - 1);
        for x in 0..target {
            let sx = (((x as f64 + 0.5) * w as f64 / target as f64).floor() as usize).min(w - 1);
            for c in 0..3 {
                out[(c, y, x)] = frame.data()[(c, sy, sx)];
            }
        }
    }
    SemanticFrame::new(out, frame.frame_index).expect("values preserved")
}

/// Bilinear resize with the vectors rescaled by the spatial ratio.
pub fn resize_flow_bilinear(flow: &FlowField, target: usize) -> FlowField {
    let (h, w) = (flow.height(), flow.width());
    if h == target && w == target {
        return flow.clone();
    }
    let scale_x = target as f32 / w as f32;
    let scale_y = target as f32 / h as f32;
    let sample = |grid: &Array2<f32>, sy: f64, sx: f64| -> f32 {
        let y0 = sy.floor().clamp(0.0, (h - 1) as f64) as usize;
        let x0 = sx.floor().clamp(0.0, (w - 1) as f64) as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = (sy - y0 as f64).clamp(0.0, 1.0) as f32;
        let fx = (sx - x0 as f64).clamp(0.0, 1.0) as f32;
        let top = grid[(y0, x0)] * (1.0 - fx) + grid[(y0, x1)] * fx;
        let bot = grid[(y1, x0)] * (1.0 - fx) + grid[(y1, x1)] * fx;
        top * (1.0 - fy) + bot * fy
    };
    let mut u = Array2::<f32>::zeros((target, target));
    let mut v = Array2::<f32>::zeros((target, target));
    for y in 0..target {
        let sy = (y as f64 + 0.5) * h as f64 / target as f64 - 0.5;
        for x in 0..target {
            let sx = (x as f64 + 0.5) * w as f64 / target as f64 - 0.5;
            u[(y, x)] = sample(&flow.u, sy, sx) * scale_x;
            v[(y, x)] = sample(&flow.v, sy, sx) * scale_y;
        }
    }
    FlowField { u, v }
}

// ---------------------------------------------------------------------------
// Dataset loading

fn sorted_files_with_ext(dir: &Path, ext: &str) -> Result<Vec<String>, DatasetError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(ext) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn load_clip(
    clip_dir: &Path,
    clip_id: &str,
    split: Split,
    target_size: usize,
) -> Result<Clip, DatasetError> {
    let layout_err = |file: &str, detail: String| DatasetError::Layout {
        clip: clip_id.to_string(),
        file: file.to_string(),
        detail,
    };
    let semantic_dir = clip_dir.join("semantic");
    let frame_names = sorted_files_with_ext(&semantic_dir, ".png")?;
    if frame_names.is_empty() {
        return Err(layout_err("semantic/", "no PNG frames".into()));
    }
    let mut frames = Vec::with_capacity(frame_names.len());
    for (i, name) in frame_names.iter().enumerate() {
        let expect = format!("{i:06}.png");
        if name != &expect {
            return Err(layout_err(
                name,
                format!("expected zero-padded contiguous frame name {expect}"),
            ));
        }
        let frame = read_frame_png(&semantic_dir.join(name), i)?;
        frames.push(resize_frame_nearest(&frame, target_size));
    }
    let flow_dir = clip_dir.join("flow");
    let mut flows = Vec::with_capacity(frames.len() - 1);
    for i in 0..frames.len() - 1 {
        let name = format!("{i:06}.flo");
        let path = flow_dir.join(&name);
        if !path.exists() {
            return Err(layout_err(
                &name,
                format!("missing flow file for frame pair {i}->{}", i + 1),
            ));
        }
        flows.push(resize_flow_bilinear(&read_flo(&path)?, target_size));
    }
    let extra = sorted_files_with_ext(&flow_dir, ".flo")?;
    if extra.len() != frames.len() - 1 {
        return Err(layout_err(
            "flow/",
            format!(
                "{} flow files for {} frames, expected {}",
                extra.len(),
                frames.len(),
                frames.len() - 1
            ),
        ));
    }
    let labels = match split {
        Split::Train => None,
        Split::Test => {
            let path = clip_dir.join("labels.csv");
            if !path.exists() {
                return Err(layout_err(
                    "labels.csv",
                    "missing labels for test clip".into(),
                ));
            }
            let labels = read_labels(&path)?;
            if labels.len() != frames.len() {
                return Err(layout_err(
                    "labels.csv",
                    format!("{} labels for {} frames", labels.len(), frames.len()),
                ));
            }
            Some(labels)
        }
    };
    let clip = Clip {
        clip_id: clip_id.to_string(),
        frames,
        flows,
        labels,
    };
    clip.validate()?;
    Ok(clip)
}

/// Load one split of a dataset, resizing everything to
/// `target_size x target_size`. Clip order is lexicographic by directory
/// name; frame order is lexicographic by zero-padded file name.
pub fn load_dataset(
    root: &Path,
    split: Split,
    target_size: usize,
) -> Result<ClipDataset, DatasetError> {
    let palette = read_palette(&root.join("palette.json"))?;
    let split_dir = root.join(split.as_str());
    let mut clip_ids = Vec::new();
    for entry in fs::read_dir(&split_dir).map_err(io_err(&split_dir))? {
        let entry = entry.map_err(io_err(&split_dir))?;
        if entry.path().is_dir() {
            clip_ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    clip_ids.sort();
    let mut clips = Vec::with_capacity(clip_ids.len());
    for clip_id in &clip_ids {
        clips.push(load_clip(
            &split_dir.join(clip_id),
            clip_id,
            split,
            target_size,
        )?);
    }
    Ok(ClipDataset {
        split,
        clips,
        palette,
    })
}

// ---------------------------------------------------------------------------
// Training samples

/// Valid initial-frame indices for prediction windows of `horizon` frames.
/// The initial frame is never frame 0 because its direction map needs the
/// preceding flow.
pub fn sample_indices(clip: &Clip, horizon: usize) -> Vec<usize> {
    let n = clip.num_frames();
    if n < horizon + 2 {
        return Vec::new();
    }
    (1..=n - horizon - 1).collect()
}

/// Build the sample whose initial frame is `t`: motion cues come from
/// `flows[t-1]` (frames t-1 -> t) and the target is frames t+1 ..= t+horizon.
pub fn sample_at(clip: &Clip, t: usize, horizon: usize) -> TrainingSample {
    let flow = clip.flows[t - 1].clone();
    let direction = compute_direction_map(&flow, EPS_MOTION).expect("finite dataset flow");
    let target = VideoTensor::new(clip.frames[t + 1..=t + horizon].to_vec())
        .expect("contiguous target frames");
    TrainingSample {
        initial: clip.frames[t].clone(),
        direction,
        flow,
        target,
    }
}

/// Materialize every training sample of a clip. Short clips yield an empty
/// list rather than an error.
pub fn make_training_samples(clip: &Clip, horizon: usize) -> Vec<TrainingSample> {
    sample_indices(clip, horizon)
        .into_iter()
        .map(|t| sample_at(clip, t, horizon))
        .collect()
}
