//! Sky-video sequences: synthetic generation, oracle predictors and on-disk
//! storage.

pub mod advect;
pub mod archive;
pub mod io;
pub mod pnm;
pub mod synth;

use tlf_tensor::Tensor;

use crate::error::{input_err, Result};

pub const SKY: u8 = 0;
pub const CLOUD: u8 = 1;
pub const SUN: u8 = 2;
pub const TRACKER: u8 = 3;
pub const CLASS_NAMES: [&str; 4] = ["sky", "cloud", "sun", "tracker"];

/// Frame spacing of every sequence, in minutes.
pub const FRAME_INTERVAL_MIN: u32 = 10;

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(input_err(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    /// `[H, W, 3]` tensor scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[self.height, self.width, 3],
            self.data.iter().map(|&v| v as f64 / 255.0).collect(),
        )
        .expect("image extents are non-zero")
    }
}

/// Per-pixel class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(input_err(format!(
                "{width}x{height} mask needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(Mask { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        Mask {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn fraction(&self, label: u8) -> f64 {
        self.labels.iter().filter(|&&l| l == label).count() as f64 / self.labels.len() as f64
    }

    /// One-hot `[H, W, classes]` tensor.
    pub fn one_hot(&self, classes: usize) -> Tensor {
        let mut t = Tensor::zeros(&[self.height, self.width, classes]);
        for (i, &l) in self.labels.iter().enumerate() {
            t.data_mut()[i * classes + l as usize] = 1.0;
        }
        t
    }

    /// Labels from the class-axis argmax of `[H, W, c]` probabilities.
    pub fn from_probs(probs: &Tensor) -> Result<Self> {
        let s = probs.shape();
        if s.len() != 3 {
            return Err(input_err(format!("expected [H,W,c] probabilities, got {s:?}")));
        }
        let labels = probs.argmax_axis(2)?.into_iter().map(|l| l as u8).collect();
        Mask::new(s[1], s[0], labels)
    }
}

/// Ordered frames with their masks, scalar irradiance and timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub frames: Vec<RgbImage>,
    pub masks: Vec<Mask>,
    /// Irradiance in normalized units (1.0 = clear-sky peak).
    pub irradiance: Vec<f64>,
    pub timestamps: Vec<u32>,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if self.masks.len() != n || self.irradiance.len() != n || self.timestamps.len() != n {
            return Err(input_err("sequence components differ in length"));
        }
        for w in self.timestamps.windows(2) {
            if w[1] != w[0] + FRAME_INTERVAL_MIN {
                return Err(input_err(format!(
                    "timestamps {} -> {} are not {FRAME_INTERVAL_MIN} minutes apart",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// Frames `[start, start+len)` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<VideoSequence> {
        if start + len > self.len() || len == 0 {
            return Err(input_err(format!(
                "window {start}..{} outside sequence of {}",
                start + len,
                self.len()
            )));
        }
        Ok(VideoSequence {
            frames: self.frames[start..start + len].to_vec(),
            masks: self.masks[start..start + len].to_vec(),
            irradiance: self.irradiance[start..start + len].to_vec(),
            timestamps: self.timestamps[start..start + len].to_vec(),
        })
    }
}

/// Stack frames into a `[B, H, W, 3]` batch.
pub fn frames_to_batch(frames: &[&RgbImage]) -> Tensor {
    let parts: Vec<Tensor> = frames.iter().map(|f| f.to_tensor()).collect();
    let h = frames[0].height;
    let w = frames[0].width;
    let mut data = Vec::with_capacity(parts.len() * h * w * 3);
    for p in &parts {
        data.extend_from_slice(p.data());
    }
    Tensor::new(&[parts.len(), h, w, 3], data).expect("batch extents")
}

/// Stack masks into a one-hot `[B, H, W, classes]` batch.
pub fn masks_to_one_hot(masks: &[&Mask], classes: usize) -> Tensor {
    let h = masks[0].height;
    let w = masks[0].width;
    let mut data = vec![0.0; masks.len() * h * w * classes];
    for (b, m) in masks.iter().enumerate() {
        for (i, &l) in m.labels.iter().enumerate() {
            data[(b * h * w + i) * classes + l as usize] = 1.0;
        }
    }
    Tensor::new(&[masks.len(), h, w, classes], data).expect("batch extents")
}
