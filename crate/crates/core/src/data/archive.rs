//! Loader for a converted mirror of a real sky-imager archive: one
//! subdirectory per day (named `YYYY-MM-DD`), each in the sequence layout of
//! [`super::io`], with timestamps in minutes since midnight.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::io::{read_frames, sequence_dirs};
use super::{VideoSequence, FRAME_INTERVAL_MIN};

/// Years up to and including this one are training data.
pub const LAST_TRAIN_YEAR: u32 = 2012;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn of_year(year: u32) -> Split {
        if year <= LAST_TRAIN_YEAR {
            Split::Train
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveWindow {
    pub day: String,
    pub year: u32,
    pub split: Split,
    /// Index of the window's first frame within its day.
    pub start: usize,
    /// `2·look_back` consecutive frames: inputs then targets.
    pub sequence: VideoSequence,
}

/// Lazily walks the day directories and yields every window of
/// `2·look_back` frames with exact 10-minute spacing.
pub struct ArchiveWindows {
    days: std::vec::IntoIter<PathBuf>,
    look_back: usize,
    classes: usize,
    daylight_only: bool,
    pending: std::vec::IntoIter<ArchiveWindow>,
}

/// Stream windows from `dir`. With `daylight_only`, windows containing a
/// frame with non-positive irradiance are skipped.
pub fn load_real_archive(dir: &Path, look_back: usize, classes: usize, daylight_only: bool) -> Result<ArchiveWindows> {
    if look_back == 0 {
        return Err(crate::error::config_err("look_back must be positive"));
    }
    Ok(ArchiveWindows {
        days: sequence_dirs(dir)?.into_iter(),
        look_back,
        classes,
        daylight_only,
        pending: Vec::new().into_iter(),
    })
}

fn parse_year(day: &str) -> Option<u32> {
    day.get(..4)?.parse().ok()
}

/// Start indices of all gap-free runs of `len` frames.
pub fn window_starts(timestamps: &[u32], len: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut run_start = 0;
    for i in 0..timestamps.len() {
        if i > 0 && timestamps[i] != timestamps[i - 1] + FRAME_INTERVAL_MIN {
            run_start = i;
        }
        if i + 1 >= run_start + len {
            starts.push(i + 1 - len);
        }
    }
    starts
}

impl ArchiveWindows {
    fn load_day(&self, dir: &Path) -> Result<Vec<ArchiveWindow>> {
        let day = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let year = parse_year(&day).ok_or_else(|| Error::Format {
            path: dir.display().to_string(),
            detail: "day directory must start with a four-digit year".into(),
        })?;
        let seq = read_frames(dir, self.classes)?;
        let len = 2 * self.look_back;
        let mut out = Vec::new();
        for start in window_starts(&seq.timestamps, len) {
            if self.daylight_only && seq.irradiance[start..start + len].iter().any(|&r| r <= 0.0) {
                continue;
            }
            out.push(ArchiveWindow {
                day: day.clone(),
                year,
                split: Split::of_year(year),
                start,
                sequence: seq.window(start, len)?,
            });
        }
        Ok(out)
    }
}

impl Iterator for ArchiveWindows {
    type Item = Result<ArchiveWindow>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(w) = self.pending.next() {
                return Some(Ok(w));
            }
            let dir = self.days.next()?;
            match self.load_day(&dir) {
                Ok(ws) => self.pending = ws.into_iter(),
                Err(e) => return Some(Err(e)),
            }
        }
    }
}
