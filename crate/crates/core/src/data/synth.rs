//! Synthetic time-lapse sky videos: Gaussian cloud blobs advected across the
//! frame, a sun moving along an arc, a tracker band shading the sun, and an
//! irradiance series coupled to cloud cover.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{config_err, Result};
use crate::kv::KeyValues;

use super::{Mask, RgbImage, VideoSequence, CLOUD, FRAME_INTERVAL_MIN, SKY, SUN, TRACKER};

/// Blob centres are drawn on this sub-pixel grid so integer-velocity
/// advection is exact in floating point.
const CENTRE_GRID: f64 = 64.0;

/// Base colour per class (sky, cloud, sun, tracker), RGB in [0, 1].
const BASE_COLOURS: [[f64; 3]; 4] = [
    [0.25, 0.45, 0.85],
    [0.85, 0.85, 0.88],
    [1.0, 0.97, 0.80],
    [0.10, 0.10, 0.12],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub frame_size: usize,
    pub steps: usize,
    /// Pixels per step, (x, y).
    pub velocity: (f64, f64),
    /// Blob radius growth in pixels per step.
    pub growth: f64,
    pub blob_count_min: usize,
    pub blob_count_max: usize,
    /// Blob radii are uniform in `blob_radius ± blob_radius_spread`.
    pub blob_radius: f64,
    pub blob_radius_spread: f64,
    /// Advected blobs wrap around the frame edges; otherwise they leave it.
    pub wrap: bool,
    pub sun_radius: f64,
    /// Arc half-width and vertical offset, as fractions of the frame size.
    pub sun_arc_radius: f64,
    pub sun_arc_offset: f64,
    /// Fraction of the half-circle arc traversed over the sequence; 0 pins
    /// the sun at the zenith of the arc.
    pub sun_arc_span: f64,
    pub sun_enabled: bool,
    pub tracker_width: f64,
    pub tracker_enabled: bool,
    /// Irradiance reduction per unit cloud cover.
    pub kappa: f64,
    pub irradiance_noise: f64,
    pub pixel_noise: f64,
    pub start_min: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frame_size: 64,
            steps: 12,
            velocity: (3.0, 0.0),
            growth: 0.0,
            blob_count_min: 3,
            blob_count_max: 8,
            blob_radius: 6.0,
            blob_radius_spread: 3.0,
            wrap: true,
            sun_radius: 6.0,
            sun_arc_radius: 0.33,
            sun_arc_offset: 0.15,
            sun_arc_span: 1.0,
            sun_enabled: true,
            tracker_width: 8.0,
            tracker_enabled: true,
            kappa: 0.8,
            irradiance_noise: 0.01,
            pixel_noise: 0.02,
            start_min: 480,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 || self.steps == 0 {
            return Err(config_err("frame_size and steps must be positive"));
        }
        if self.blob_count_min > self.blob_count_max {
            return Err(config_err("blob_count_min exceeds blob_count_max"));
        }
        if self.blob_radius_spread < 0.0 || self.blob_radius - self.blob_radius_spread <= 0.0 {
            return Err(config_err("blob radii must stay positive"));
        }
        let max_radius = self.blob_radius + self.blob_radius_spread + self.growth.max(0.0) * self.steps as f64;
        if max_radius >= self.frame_size as f64 {
            return Err(config_err(format!(
                "blob radius {max_radius} reaches frame size {}",
                self.frame_size
            )));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(config_err("kappa must lie in (0, 1]"));
        }
        if self.irradiance_noise < 0.0 || self.pixel_noise < 0.0 || self.sun_radius < 0.0 || self.tracker_width < 0.0 {
            return Err(config_err("noise levels and geometry must be non-negative"));
        }
        let finite = [
            self.velocity.0,
            self.velocity.1,
            self.growth,
            self.sun_arc_radius,
            self.sun_arc_offset,
            self.sun_arc_span,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(config_err("non-finite synth parameter"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("frame_size", self.frame_size);
        kv.set("steps", self.steps);
        kv.set_list("velocity", &[self.velocity.0, self.velocity.1]);
        kv.set("growth", self.growth);
        kv.set("blob_count_min", self.blob_count_min);
        kv.set("blob_count_max", self.blob_count_max);
        kv.set("blob_radius", self.blob_radius);
        kv.set("blob_radius_spread", self.blob_radius_spread);
        kv.set("wrap", self.wrap);
        kv.set("sun_radius", self.sun_radius);
        kv.set("sun_arc_radius", self.sun_arc_radius);
        kv.set("sun_arc_offset", self.sun_arc_offset);
        kv.set("sun_arc_span", self.sun_arc_span);
        kv.set("sun_enabled", self.sun_enabled);
        kv.set("tracker_width", self.tracker_width);
        kv.set("tracker_enabled", self.tracker_enabled);
        kv.set("kappa", self.kappa);
        kv.set("irradiance_noise", self.irradiance_noise);
        kv.set("pixel_noise", self.pixel_noise);
        kv.set("start_min", self.start_min);
        kv.set("seed", self.seed);
        kv
    }

    /// Defaults overridden by whatever keys `kv` carries.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = SynthConfig::default();
        let known = c.to_kv();
        let unknown = kv.unknown_keys(&known);
        if !unknown.is_empty() {
            return Err(config_err(format!("unknown synth keys: {}", unknown.join(", "))));
        }
        kv.read("frame_size", &mut c.frame_size)?;
        kv.read("steps", &mut c.steps)?;
        let mut v = vec![c.velocity.0, c.velocity.1];
        kv.read_list("velocity", &mut v)?;
        if v.len() != 2 {
            return Err(config_err("velocity needs two components"));
        }
        c.velocity = (v[0], v[1]);
        kv.read("growth", &mut c.growth)?;
        kv.read("blob_count_min", &mut c.blob_count_min)?;
        kv.read("blob_count_max", &mut c.blob_count_max)?;
        kv.read("blob_radius", &mut c.blob_radius)?;
        kv.read("blob_radius_spread", &mut c.blob_radius_spread)?;
        kv.read("wrap", &mut c.wrap)?;
        kv.read("sun_radius", &mut c.sun_radius)?;
        kv.read("sun_arc_radius", &mut c.sun_arc_radius)?;
        kv.read("sun_arc_offset", &mut c.sun_arc_offset)?;
        kv.read("sun_arc_span", &mut c.sun_arc_span)?;
        kv.read("sun_enabled", &mut c.sun_enabled)?;
        kv.read("tracker_width", &mut c.tracker_width)?;
        kv.read("tracker_enabled", &mut c.tracker_enabled)?;
        kv.read("kappa", &mut c.kappa)?;
        kv.read("irradiance_noise", &mut c.irradiance_noise)?;
        kv.read("pixel_noise", &mut c.pixel_noise)?;
        kv.read("start_min", &mut c.start_min)?;
        kv.read("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }

    /// Clear-sky irradiance at step `k`: a half-sine over the sequence.
    pub fn clearsky(&self, k: usize) -> f64 {
        (PI * (k as f64 + 0.5) / self.steps as f64).sin()
    }

    /// Sun centre `(x, y)` in pixel coordinates at step `k`.
    pub fn sun_centre(&self, k: usize) -> (f64, f64) {
        let w = self.frame_size as f64;
        let phase = (k as f64 + 0.5) / self.steps as f64 - 0.5;
        let theta = PI / 2.0 + self.sun_arc_span * PI * phase;
        (
            w / 2.0 - self.sun_arc_radius * w * theta.cos(),
            w / 2.0 - self.sun_arc_radius * w * theta.sin() + self.sun_arc_offset * w,
        )
    }

    /// Paint the sun disc and tracker band for step `k` over `mask`.
    pub fn paint_occluders(&self, mask: &mut Mask, k: usize) {
        let w = self.frame_size as f64;
        let (sx, sy) = self.sun_centre(k);
        let (dx, dy) = (sx - w / 2.0, sy - w / 2.0);
        let len = dx.hypot(dy);
        let (ux, uy) = if len > 0.0 { (dx / len, dy / len) } else { (0.0, -1.0) };
        for y in 0..mask.height {
            for x in 0..mask.width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if self.sun_enabled {
                    let (ex, ey) = (px - sx, py - sy);
                    if ex * ex + ey * ey <= self.sun_radius * self.sun_radius {
                        mask.set(x, y, SUN);
                    }
                }
                if self.tracker_enabled {
                    let (cx, cy) = (px - w / 2.0, py - w / 2.0);
                    let along = cx * ux + cy * uy;
                    let across = (cx * uy - cy * ux).abs();
                    if along >= 0.0 && across <= self.tracker_width / 2.0 {
                        mask.set(x, y, TRACKER);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    radius: f64,
}

/// Generated sequence plus the unoccluded cloud layer of every frame
/// (labels `SKY`/`CLOUD` only).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub sequence: VideoSequence,
    pub cloud_layers: Vec<Mask>,
}

fn axis_distance(a: f64, b: f64, size: f64, wrap: bool) -> f64 {
    let d = (a - b).abs();
    if wrap {
        d.min(size - d)
    } else {
        d
    }
}

fn cloud_layer(cfg: &SynthConfig, blobs: &[Blob], k: usize) -> Mask {
    let n = cfg.frame_size;
    let w = n as f64;
    let kf = k as f64;
    // Blob shape: exp(−d²/2σ²) with σ chosen so the 0.5 level sits at the radius.
    let centres: Vec<(f64, f64, f64)> = blobs
        .iter()
        .map(|b| {
            let (mut x, mut y) = (b.x + cfg.velocity.0 * kf, b.y + cfg.velocity.1 * kf);
            if cfg.wrap {
                x = x.rem_euclid(w);
                y = y.rem_euclid(w);
            }
            let r = b.radius + cfg.growth * kf;
            (x, y, 1.0 / (2.0 * r * r / (2.0 * 2f64.ln())))
        })
        .collect();
    let mut mask = Mask::filled(n, n, SKY);
    for y in 0..n {
        let py = y as f64 + 0.5;
        for x in 0..n {
            let px = x as f64 + 0.5;
            let field: f64 = centres
                .iter()
                .map(|&(bx, by, inv)| {
                    let dx = axis_distance(px, bx, w, cfg.wrap);
                    let dy = axis_distance(py, by, w, cfg.wrap);
                    (-(dx * dx + dy * dy) * inv).exp()
                })
                .sum();
            if field >= 0.5 {
                mask.set(x, y, CLOUD);
            }
        }
    }
    mask
}

fn render(mask: &Mask, noise: &[f64]) -> RgbImage {
    let data = mask
        .labels
        .iter()
        .zip(noise.chunks_exact(3))
        .flat_map(|(&l, nz)| {
            let base = BASE_COLOURS[l as usize];
            [0, 1, 2].map(|ch| ((base[ch] + nz[ch]).clamp(0.0, 1.0) * 255.0).round() as u8)
        })
        .collect();
    RgbImage {
        width: mask.width,
        height: mask.height,
        data,
    }
}

/// Generate a sequence and its unoccluded cloud layers.
pub fn synth_with_layers(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.frame_size;
    let grid = (n as f64 * CENTRE_GRID) as u64;
    let count = rng.gen_range(cfg.blob_count_min..=cfg.blob_count_max);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| {
            let x = rng.gen_range(0..grid) as f64 / CENTRE_GRID;
            let y = rng.gen_range(0..grid) as f64 / CENTRE_GRID;
            let lo = cfg.blob_radius - cfg.blob_radius_spread;
            let radius = lo + 2.0 * cfg.blob_radius_spread * rng.gen::<f64>();
            Blob { x, y, radius }
        })
        .collect();

    let mut seq = VideoSequence {
        frames: Vec::with_capacity(cfg.steps),
        masks: Vec::with_capacity(cfg.steps),
        irradiance: Vec::with_capacity(cfg.steps),
        timestamps: Vec::with_capacity(cfg.steps),
    };
    let mut layers = Vec::with_capacity(cfg.steps);
    let mut noise = vec![0.0; n * n * 3];
    for k in 0..cfg.steps {
        let layer = cloud_layer(cfg, &blobs, k);
        let mut mask = layer.clone();
        cfg.paint_occluders(&mut mask, k);
        for v in noise.iter_mut() {
            *v = cfg.pixel_noise * rng.sample::<f64, _>(StandardNormal);
        }
        let bound = 3.0 * cfg.irradiance_noise;
        let eps = (cfg.irradiance_noise * rng.sample::<f64, _>(StandardNormal)).clamp(-bound, bound);
        let cover = mask.fraction(CLOUD);
        seq.frames.push(render(&mask, &noise));
        seq.irradiance.push(cfg.clearsky(k) * (1.0 - cfg.kappa * cover) + eps);
        seq.timestamps.push(cfg.start_min + FRAME_INTERVAL_MIN * k as u32);
        seq.masks.push(mask);
        layers.push(layer);
    }
    Ok(SynthOutput {
        sequence: seq,
        cloud_layers: layers,
    })
}

pub fn synth_sequence(cfg: &SynthConfig) -> Result<VideoSequence> {
    Ok(synth_with_layers(cfg)?.sequence)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_partition_and_use_all_classes() {
        let seq = synth_sequence(&SynthConfig::default()).unwrap();
        assert_eq!(seq.len(), 12);
        seq.validate().unwrap();
        for m in &seq.masks {
            assert!(m.labels.iter().all(|&l| l < 4));
        }
        let all: Vec<u8> = seq.masks.iter().flat_map(|m| m.labels.clone()).collect();
        for class in 0..4u8 {
            assert!(all.contains(&class), "class {class} missing");
        }
    }

    #[test]
    fn static_scene_without_noise_repeats() {
        let cfg = SynthConfig {
            velocity: (0.0, 0.0),
            sun_arc_span: 0.0,
            pixel_noise: 0.0,
            irradiance_noise: 0.0,
            seed: 3,
            ..SynthConfig::default()
        };
        let seq = synth_sequence(&cfg).unwrap();
        assert!(seq.frames.windows(2).all(|w| w[0] == w[1]));
        assert!(seq.masks.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn seed_determinism() {
        let cfg = SynthConfig {
            seed: 11,
            ..SynthConfig::default()
        };
        assert_eq!(synth_with_layers(&cfg).unwrap(), synth_with_layers(&cfg).unwrap());
        let other = SynthConfig { seed: 12, ..cfg };
        assert_ne!(synth_sequence(&other).unwrap(), synth_sequence(&SynthConfig { seed: 11, ..other.clone() }).unwrap());
    }

    #[test]
    fn oversize_blobs_rejected() {
        let cfg = SynthConfig {
            frame_size: 8,
            blob_radius: 6.0,
            blob_radius_spread: 3.0,
            ..SynthConfig::default()
        };
        assert!(synth_sequence(&cfg).is_err());
    }

    #[test]
    fn config_text_roundtrip() {
        let cfg = SynthConfig {
            velocity: (2.0, -1.0),
            seed: 99,
            wrap: false,
            ..SynthConfig::default()
        };
        let kv = KeyValues::parse(&cfg.to_kv().to_text()).unwrap();
        assert_eq!(SynthConfig::from_kv(&kv).unwrap(), cfg);
        let mut bad = kv.clone();
        bad.set("frobnicate", 1);
        assert!(SynthConfig::from_kv(&bad).is_err());
    }
}
