//! On-disk sequence layout: `frame_%05d.ppm`, `mask_%05d.pgm` and
//! `meta.csv` (`index,timestamp_min,irradiance`) in one directory per
//! sequence, with an optional `synth.cfg` describing how it was generated.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{io_err, Error, Result};
use crate::kv::KeyValues;

use super::pnm;
use super::synth::SynthConfig;
use super::VideoSequence;

pub const META_HEADER: &str = "index,timestamp_min,irradiance";
pub const SYNTH_CONFIG_FILE: &str = "synth.cfg";

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:05}.ppm"))
}

pub fn mask_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("mask_{index:05}.pgm"))
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn meta_csv(seq: &VideoSequence) -> String {
    let mut out = String::from(META_HEADER);
    out.push('\n');
    for (i, (t, r)) in seq.timestamps.iter().zip(&seq.irradiance).enumerate() {
        out.push_str(&format!("{i},{t},{r}\n"));
    }
    out
}

/// Parse `meta.csv` into (timestamps, irradiance).
pub fn parse_meta(text: &str, path: &Path) -> Result<(Vec<u32>, Vec<f64>)> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(META_HEADER) {
        return Err(format_err(path, format!("expected header `{META_HEADER}`")));
    }
    let mut ts = Vec::new();
    let mut irr = Vec::new();
    for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || format_err(path, format!("malformed row {row}: `{line}`"));
        if cols.len() != 3 {
            return Err(bad());
        }
        let idx: usize = cols[0].parse().map_err(|_| bad())?;
        if idx != row {
            return Err(format_err(path, format!("row {row} carries index {idx}")));
        }
        ts.push(cols[1].parse().map_err(|_| bad())?);
        irr.push(cols[2].parse().map_err(|_| bad())?);
    }
    Ok((ts, irr))
}

/// Write one sequence into `dir`, creating it if needed.
pub fn write_dataset(seq: &VideoSequence, dir: &Path, synth: Option<&SynthConfig>) -> Result<()> {
    seq.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, (f, m)) in seq.frames.iter().zip(&seq.masks).enumerate() {
        write_file(&frame_path(dir, i), &pnm::encode_ppm(f))?;
        write_file(&mask_path(dir, i), &pnm::encode_pgm(m.width, m.height, &m.labels))?;
    }
    write_file(&dir.join("meta.csv"), meta_csv(seq).as_bytes())?;
    if let Some(cfg) = synth {
        write_file(&dir.join(SYNTH_CONFIG_FILE), cfg.to_kv().to_text().as_bytes())?;
    }
    Ok(())
}

fn count_frames(dir: &Path) -> Result<usize> {
    let mut n = 0;
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let name = entry.map_err(io_err(dir))?.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("frame_") && name.ends_with(".ppm") {
            n += 1;
        }
    }
    Ok(n)
}

/// Read frames, masks and metadata without enforcing regular spacing;
/// timestamps must still increase strictly.
pub(crate) fn read_frames(dir: &Path, classes: usize) -> Result<VideoSequence> {
    let meta = dir.join("meta.csv");
    let text = String::from_utf8(read_file(&meta)?).map_err(|_| format_err(&meta, "not UTF-8"))?;
    let (timestamps, irradiance) = parse_meta(&text, &meta)?;
    if timestamps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(format_err(&meta, "timestamps are not strictly increasing"));
    }
    let frames_on_disk = count_frames(dir)?;
    if frames_on_disk != timestamps.len() {
        return Err(format_err(
            &meta,
            format!("{} rows but {frames_on_disk} frame files", timestamps.len()),
        ));
    }
    let mut frames = Vec::with_capacity(frames_on_disk);
    let mut masks = Vec::with_capacity(frames_on_disk);
    for i in 0..frames_on_disk {
        let fp = frame_path(dir, i);
        let mp = mask_path(dir, i);
        if !mp.exists() {
            return Err(format_err(&mp, "missing mask for frame"));
        }
        let f = pnm::decode_ppm(&read_file(&fp)?, &fp.display().to_string())?;
        let m = pnm::decode_mask(&read_file(&mp)?, classes, &mp.display().to_string())?;
        if (m.width, m.height) != (f.width, f.height) {
            return Err(format_err(&mp, "mask and frame extents differ"));
        }
        frames.push(f);
        masks.push(m);
    }
    Ok(VideoSequence {
        frames,
        masks,
        irradiance,
        timestamps,
    })
}

/// Read the sequence stored in `dir`; mask labels must be below `classes`.
pub fn read_dataset(dir: &Path, classes: usize) -> Result<VideoSequence> {
    let seq = read_frames(dir, classes)?;
    seq.validate().map_err(|e| format_err(dir, e.to_string()))?;
    Ok(seq)
}

pub fn read_synth_config(dir: &Path) -> Result<Option<SynthConfig>> {
    let p = dir.join(SYNTH_CONFIG_FILE);
    if !p.exists() {
        return Ok(None);
    }
    let text = String::from_utf8(read_file(&p)?).map_err(|_| format_err(&p, "not UTF-8"))?;
    Ok(Some(SynthConfig::from_kv(&KeyValues::parse(&text)?)?))
}

/// Sequence subdirectories of a dataset root, sorted by name.
pub fn sequence_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let p = entry.map_err(io_err(root))?.path();
        if p.is_dir() && p.join("meta.csv").exists() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Every sequence under `root`, in directory-name order.
pub fn read_root(root: &Path, classes: usize) -> Result<Vec<VideoSequence>> {
    sequence_dirs(root)?.iter().map(|d| read_dataset(d, classes)).collect()
}
