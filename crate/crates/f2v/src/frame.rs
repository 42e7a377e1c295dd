//! Semantic frames, class palettes, and short video tensors.
//!
//! A semantic frame is a palette-colored class image stored as three
//! channels in `[0, 1]`. Ground-truth frames only contain palette colors;
//! predicted frames hold arbitrary continuous values in the same range.

use ndarray::{Array2, Array3, Array4, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame values out of range: {count} entries outside [0,1] or non-finite")]
    OutOfRange { count: usize },
    #[error("class id {id} not present in palette")]
    PaletteMiss { id: u8 },
    #[error("palette invalid: {0}")]
    BadPalette(String),
    #[error("video tensor invalid: {0}")]
    BadVideo(String),
}

/// One palette entry: a class id, a human-readable name, and an RGB color
/// with components in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PaletteEntry {
    pub class_id: u8,
    pub class_name: String,
    pub color: [f32; 3],
}

/// Ordered mapping from class ids to display colors. Class 0 is the
/// background and must be black; all colors are pairwise distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPalette {
    entries: Vec<PaletteEntry>,
}

impl ClassPalette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self, FrameError> {
        if entries.len() < 2 {
            return Err(FrameError::BadPalette(format!(
                "need at least 2 entries, got {}",
                entries.len()
            )));
        }
        let bg = entries
            .iter()
            .find(|e| e.class_id == 0)
            .ok_or_else(|| FrameError::BadPalette("missing background class 0".into()))?;
        if bg.color != [0.0, 0.0, 0.0] {
            return Err(FrameError::BadPalette(format!(
                "class 0 must map to (0,0,0), got {:?}",
                bg.color
            )));
        }
        for (i, a) in entries.iter().enumerate() {
            if a.color.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
                return Err(FrameError::BadPalette(format!(
                    "color of class {} out of [0,1]: {:?}",
                    a.class_id, a.color
                )));
            }
            for b in entries.iter().skip(i + 1) {
                if a.class_id == b.class_id {
                    return Err(FrameError::BadPalette(format!(
                        "duplicate class id {}",
                        a.class_id
                    )));
                }
                if a.color == b.color {
                    return Err(FrameError::BadPalette(format!(
                        "classes {} and {} share color {:?}",
                        a.class_id, b.class_id, a.color
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    /// Eight classes: background plus seven agent classes. Colors are
    /// saturated so nearest-color decoding is unambiguous.
    pub fn default_palette() -> Self {
        let mk = |class_id: u8, name: &str, rgb: [u8; 3]| PaletteEntry {
            class_id,
            class_name: name.to_string(),
            color: [
                rgb[0] as f32 / 255.0,
                rgb[1] as f32 / 255.0,
                rgb[2] as f32 / 255.0,
            ],
        };
        Self::new(vec![
            mk(0, "background", [0, 0, 0]),
            mk(1, "person", [0, 255, 0]),
            mk(2, "bicycle", [255, 255, 0]),
            mk(3, "car", [0, 0, 255]),
            mk(4, "blob_a", [255, 0, 255]),
            mk(5, "blob_b", [0, 255, 255]),
            mk(6, "blob_c", [255, 128, 0]),
            mk(7, "blob_d", [255, 0, 0]),
        ])
        .expect("default palette is valid")
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn color_of(&self, class_id: u8) -> Option<[f32; 3]> {
        self.entries
            .iter()
            .find(|e| e.class_id == class_id)
            .map(|e| e.color)
    }

    /// Color as 8-bit RGB, the on-disk representation.
    pub fn color_u8(&self, class_id: u8) -> Option<[u8; 3]> {
        self.color_of(class_id).map(|c| {
            [
                (c[0] * 255.0).round() as u8,
                (c[1] * 255.0).round() as u8,
                (c[2] * 255.0).round() as u8,
            ]
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A palette-colored class image: three channels in `[0, 1]`, stored
/// channels-first as `(3, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFrame {
    data: Array3<f32>,
    pub frame_index: usize,
}

impl SemanticFrame {
    pub fn new(data: Array3<f32>, frame_index: usize) -> Result<Self, FrameError> {
        if data.dim().0 != 3 {
            return Err(FrameError::BadVideo(format!(
                "semantic frame needs 3 channels, got {}",
                data.dim().0
            )));
        }
        let bad = data
            .iter()
            .filter(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
            .count();
        if bad > 0 {
            return Err(FrameError::OutOfRange { count: bad });
        }
        Ok(Self { data, frame_index })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}

/// A fixed-length sequence of semantic frames with uniform spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    frames: Vec<SemanticFrame>,
}

impl VideoTensor {
    pub fn new(frames: Vec<SemanticFrame>) -> Result<Self, FrameError> {
        if frames.is_empty() {
            return Err(FrameError::BadVideo("need at least one frame".into()));
        }
        let (h, w) = (frames[0].height(), frames[0].width());
        for f in &frames {
            if f.height() != h || f.width() != w {
                return Err(FrameError::BadVideo(format!(
                    "frame {} is {}x{}, expected {}x{}",
                    f.frame_index,
                    f.height(),
                    f.width(),
                    h,
                    w
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[SemanticFrame] {
        &self.frames
    }

    /// Stack into `(num_frames, 3, h, w)`.
    pub fn as_array4(&self) -> Array4<f32> {
        let views: Vec<_> = self.frames.iter().map(|f| f.data().view()).collect();
        ndarray::stack(Axis(0), &views).expect("uniform frame shapes")
    }

    /// Inverse of [`VideoTensor::as_array4`]; frame indices start at
    /// `first_index` and run contiguously.
    pub fn from_array4(data: &Array4<f32>, first_index: usize) -> Result<Self, FrameError> {
        let frames = data
            .outer_iter()
            .enumerate()
            .map(|(i, f)| SemanticFrame::new(f.to_owned(), first_index + i))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(frames)
    }
}

/// Replace each class id with its palette color.
pub fn colorize(
    class_map: &Array2<u8>,
    palette: &ClassPalette,
    frame_index: usize,
) -> Result<SemanticFrame, FrameError> {
    let (h, w) = class_map.dim();
    let mut data = Array3::<f32>::zeros((3, h, w));
    // Resolve each distinct id once; class maps contain few classes.
    let mut lut: [Option<[f32; 3]>; 256] = [None; 256];
    for &id in class_map.iter() {
        if lut[id as usize].is_none() {
            let color = palette
                .color_of(id)
                .ok_or(FrameError::PaletteMiss { id })?;
            lut[id as usize] = Some(color);
        }
    }
    for ((y, x), &id) in class_map.indexed_iter() {
        let c = lut[id as usize].unwrap();
        data[(0, y, x)] = c[0];
        data[(1, y, x)] = c[1];
        data[(2, y, x)] = c[2];
    }
    SemanticFrame::new(data, frame_index)
}
