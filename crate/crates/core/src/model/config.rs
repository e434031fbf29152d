use std::fmt;
use std::str::FromStr;

use crate::data::CLOUD;
use crate::error::{config_err, Result};
use crate::kv::KeyValues;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionVariant {
    None,
    Mean,
    SpatialConv,
    SpatialConvLstm,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 4] = [
        AttentionVariant::None,
        AttentionVariant::Mean,
        AttentionVariant::SpatialConv,
        AttentionVariant::SpatialConvLstm,
    ];
}

impl FromStr for AttentionVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace('_', "-").as_str() {
            "none" => Ok(AttentionVariant::None),
            "mean" => Ok(AttentionVariant::Mean),
            "spatial-conv" => Ok(AttentionVariant::SpatialConv),
            "spatial-convlstm" => Ok(AttentionVariant::SpatialConvLstm),
            _ => Err(format!(
                "unknown attention variant `{s}` (none, mean, spatial-conv, spatial-convlstm)"
            )),
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionVariant::None => "none",
            AttentionVariant::Mean => "mean",
            AttentionVariant::SpatialConv => "spatial-conv",
            AttentionVariant::SpatialConvLstm => "spatial-convlstm",
        })
    }
}

/// Architecture hyperparameters shared by the now and future models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub frame_size: usize,
    pub classes: usize,
    pub repr_size: usize,
    pub look_back: usize,
    pub convlstm_filters: Vec<usize>,
    pub convlstm_kernel: usize,
    pub attention: AttentionVariant,
    /// Attend on every class channel instead of the cloud channel alone.
    pub attention_all_channels: bool,
    pub attention_filters: usize,
    pub attention_kernel: usize,
    /// One stride-2 block per halving of the frame, then one dilated
    /// stride-1 block; so `len = log2(frame_size / repr_size) + 1`.
    pub encoder_channels: Vec<usize>,
    pub encoder_dilation: usize,
    pub measure_filters: usize,
    pub measure_dropout: f64,
    pub cloud_class: usize,
    /// Past representations consumed by the autoregressive baseline.
    pub ar_context: usize,
    pub ar_filters: usize,
    /// Keep encoder weights fixed while training the future model.
    pub freeze_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frame_size: 64,
            classes: 4,
            repr_size: 8,
            look_back: 6,
            convlstm_filters: vec![128, 64, 64],
            convlstm_kernel: 5,
            attention: AttentionVariant::SpatialConv,
            attention_all_channels: false,
            attention_filters: 64,
            attention_kernel: 5,
            encoder_channels: vec![16, 32, 64, 64],
            encoder_dilation: 2,
            measure_filters: 128,
            measure_dropout: 0.5,
            cloud_class: CLOUD as usize,
            ar_context: 2,
            ar_filters: 32,
            freeze_encoder: true,
        }
    }
}

impl ModelConfig {
    /// Downsampling factor from frame to representation.
    pub fn factor(&self) -> usize {
        self.frame_size / self.repr_size.max(1)
    }

    /// Number of stride-2 encoder blocks.
    pub fn halvings(&self) -> usize {
        self.factor().trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.repr_size == 0 || !self.frame_size.is_multiple_of(self.repr_size) {
            return Err(config_err(format!(
                "frame size {} is not divisible by representation size {}",
                self.frame_size, self.repr_size
            )));
        }
        let f = self.factor();
        if !f.is_power_of_two() {
            return Err(config_err(format!("downsample factor {f} is not a power of two")));
        }
        if self.encoder_channels.len() != self.halvings() + 1 {
            return Err(config_err(format!(
                "factor {f} needs {} encoder channel entries (stride-2 blocks plus the dilated block), got {}",
                self.halvings() + 1,
                self.encoder_channels.len()
            )));
        }
        if self.look_back == 0 {
            return Err(config_err("look_back must be >= 1"));
        }
        if self.classes < 2 || self.cloud_class >= self.classes {
            return Err(config_err("need at least two classes and a valid cloud class"));
        }
        if self.convlstm_filters.is_empty() || self.convlstm_filters.contains(&0) {
            return Err(config_err("convlstm_filters must be non-empty and positive"));
        }
        for (name, k) in [("convlstm_kernel", self.convlstm_kernel), ("attention_kernel", self.attention_kernel)] {
            if k % 2 == 0 {
                return Err(config_err(format!("{name} must be odd")));
            }
        }
        if self.encoder_dilation == 0 || self.encoder_channels.contains(&0) {
            return Err(config_err("encoder channels and dilation must be positive"));
        }
        if !(0.0..1.0).contains(&self.measure_dropout) {
            return Err(config_err("measure_dropout must lie in [0, 1)"));
        }
        if self.ar_context == 0 || self.ar_filters == 0 || self.attention_filters == 0 || self.measure_filters == 0 {
            return Err(config_err("filter counts and ar_context must be positive"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("frame_size", self.frame_size);
        kv.set("classes", self.classes);
        kv.set("repr_size", self.repr_size);
        kv.set("look_back", self.look_back);
        kv.set_list("convlstm_filters", &self.convlstm_filters);
        kv.set("convlstm_kernel", self.convlstm_kernel);
        kv.set("attention", self.attention);
        kv.set("attention_all_channels", self.attention_all_channels);
        kv.set("attention_filters", self.attention_filters);
        kv.set("attention_kernel", self.attention_kernel);
        kv.set_list("encoder_channels", &self.encoder_channels);
        kv.set("encoder_dilation", self.encoder_dilation);
        kv.set("measure_filters", self.measure_filters);
        kv.set("measure_dropout", self.measure_dropout);
        kv.set("cloud_class", self.cloud_class);
        kv.set("ar_context", self.ar_context);
        kv.set("ar_filters", self.ar_filters);
        kv.set("freeze_encoder", self.freeze_encoder);
        kv
    }

    pub fn apply_kv(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read("frame_size", &mut self.frame_size)?;
        kv.read("classes", &mut self.classes)?;
        kv.read("repr_size", &mut self.repr_size)?;
        kv.read("look_back", &mut self.look_back)?;
        kv.read_list("convlstm_filters", &mut self.convlstm_filters)?;
        kv.read("convlstm_kernel", &mut self.convlstm_kernel)?;
        kv.read("attention", &mut self.attention)?;
        kv.read("attention_all_channels", &mut self.attention_all_channels)?;
        kv.read("attention_filters", &mut self.attention_filters)?;
        kv.read("attention_kernel", &mut self.attention_kernel)?;
        kv.read_list("encoder_channels", &mut self.encoder_channels)?;
        kv.read("encoder_dilation", &mut self.encoder_dilation)?;
        kv.read("measure_filters", &mut self.measure_filters)?;
        kv.read("measure_dropout", &mut self.measure_dropout)?;
        kv.read("cloud_class", &mut self.cloud_class)?;
        kv.read("ar_context", &mut self.ar_context)?;
        kv.read("ar_filters", &mut self.ar_filters)?;
        kv.read("freeze_encoder", &mut self.freeze_encoder)?;
        self.validate()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = ModelConfig::default();
        c.apply_kv(kv)?;
        Ok(c)
    }
}
