//! Ground-truth future for pure translation.

use super::synth::SynthConfig;
use super::{Mask, CLOUD, SKY};

/// Cyclically shift the cloud pixels of `mask` by `velocity·steps`.
///
/// Every non-cloud pixel becomes sky; when `occluders` names a generator
/// config and target step, the sun and tracker are re-rendered for that step
/// on top of the shifted clouds.
pub fn advect_oracle(
    mask: &Mask,
    velocity: (i64, i64),
    steps: usize,
    occluders: Option<(&SynthConfig, usize)>,
) -> Mask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let sx = velocity.0 * steps as i64;
    let sy = velocity.1 * steps as i64;
    let mut out = Mask::filled(mask.width, mask.height, SKY);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x as usize, y as usize) == CLOUD {
                let nx = (x + sx).rem_euclid(w) as usize;
                let ny = (y + sy).rem_euclid(h) as usize;
                out.set(nx, ny, CLOUD);
            }
        }
    }
    if let Some((cfg, k)) = occluders {
        cfg.paint_occluders(&mut out, k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_mask() -> Mask {
        let mut m = Mask::filled(5, 4, SKY);
        for y in 0..4 {
            m.set(1, y, CLOUD);
        }
        m.set(4, 0, CLOUD);
        m
    }

    #[test]
    fn zero_velocity_is_identity() {
        let m = column_mask();
        assert_eq!(advect_oracle(&m, (0, 0), 5, None), m);
    }

    #[test]
    fn unit_shift_moves_one_column() {
        let m = column_mask();
        let s = advect_oracle(&m, (1, 0), 1, None);
        for y in 0..4 {
            assert_eq!(s.get(2, y), CLOUD);
            assert_eq!(s.get(1, y), SKY);
        }
        assert_eq!(s.get(0, 0), CLOUD); // wrapped
    }

    #[test]
    fn shifts_compose() {
        let m = column_mask();
        let twice = advect_oracle(&advect_oracle(&m, (2, 3), 1, None), (2, 3), 1, None);
        assert_eq!(twice, advect_oracle(&m, (4, 6), 1, None));
        assert_eq!(twice, advect_oracle(&m, (2, 3), 2, None));
    }
}
