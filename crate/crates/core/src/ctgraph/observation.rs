use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rand::Rng as _;

use crate::rng::Rng;

/// Side length of an observation image.
pub const OBS_SIDE: usize = 12;
/// Number of pixels in a flattened observation.
pub const OBS_LEN: usize = OBS_SIDE * OBS_SIDE;
/// Side length of the base checker pattern.
pub const BASE_SIDE: usize = 4;
/// Upscale factor from base pattern to image.
pub const UPSCALE: usize = OBS_SIDE / BASE_SIDE;
/// The three pixel intensities used by every pattern.
pub const LEVELS: [f64; 3] = [0.0, 0.5, 1.0];

/// A 12×12 single-channel image, row-major. Clones share the pixel buffer.
#[derive(Clone)]
pub struct Observation(Arc<[f64]>);

impl Observation {
    pub fn pixels(&self) -> &[f64] {
        &self.0
    }

    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.0[row * OBS_SIDE + col]
    }

    /// Recovers the 4×4 level-index grid if the image is a block upscale of
    /// one, i.e. every 3×3 block is constant and uses one of [`LEVELS`].
    pub fn base_pattern(&self) -> Option<[[u8; BASE_SIDE]; BASE_SIDE]> {
        let mut base = [[0u8; BASE_SIDE]; BASE_SIDE];
        for (br, row) in base.iter_mut().enumerate() {
            for (bc, cell) in row.iter_mut().enumerate() {
                let v = self.pixel(br * UPSCALE, bc * UPSCALE);
                *cell = LEVELS.iter().position(|&l| l == v)? as u8;
                for r in 0..UPSCALE {
                    for c in 0..UPSCALE {
                        if self.pixel(br * UPSCALE + r, bc * UPSCALE + c) != v {
                            return None;
                        }
                    }
                }
            }
        }
        Some(base)
    }

    fn key(&self) -> Vec<u8> {
        self.0.iter().map(|v| LEVELS.iter().position(|l| l == v).unwrap_or(255) as u8).collect()
    }
}

impl PartialEq for Observation {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

impl fmt::Debug for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Observation[")?;
        for row in self.0.chunks(OBS_SIDE) {
            for v in row {
                let c = match LEVELS.iter().position(|l| l == v) {
                    Some(0) => '.',
                    Some(1) => '+',
                    Some(2) => '#',
                    _ => '?',
                };
                write!(f, "{c}")?;
            }
            f.write_str("/")?;
        }
        f.write_str("]")
    }
}

/// Builds the 12×12 image for a base pattern rotated by `quarter_turns`·90°
/// counter-clockwise.
pub fn render_pattern(base: &[[u8; BASE_SIDE]; BASE_SIDE], quarter_turns: u8) -> Observation {
    let rotated = rotate(base, quarter_turns % 4);
    let mut pixels = vec![0.0; OBS_LEN];
    for (r, px_row) in pixels.chunks_mut(OBS_SIDE).enumerate() {
        for (c, px) in px_row.iter_mut().enumerate() {
            *px = LEVELS[rotated[r / UPSCALE][c / UPSCALE] as usize];
        }
    }
    Observation(pixels.into())
}

fn rotate(base: &[[u8; BASE_SIDE]; BASE_SIDE], quarter_turns: u8) -> [[u8; BASE_SIDE]; BASE_SIDE] {
    let mut out = *base;
    for _ in 0..quarter_turns {
        let prev = out;
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = prev[c][BASE_SIDE - 1 - r];
            }
        }
    }
    out
}

/// Draws pairwise-distinct observations from a seeded stream.
pub(crate) struct PatternSource<'a> {
    rng: &'a mut Rng,
    seen: HashSet<Vec<u8>>,
}

impl<'a> PatternSource<'a> {
    pub(crate) fn new(rng: &'a mut Rng) -> Self {
        Self { rng, seen: HashSet::new() }
    }

    pub(crate) fn next_unique(&mut self) -> Observation {
        loop {
            let mut base = [[0u8; BASE_SIDE]; BASE_SIDE];
            for cell in base.iter_mut().flatten() {
                *cell = self.rng.random_range(0..LEVELS.len() as u8);
            }
            let turns = self.rng.random_range(0..4u8);
            let obs = render_pattern(&base, turns);
            if self.seen.insert(obs.key()) {
                return obs;
            }
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Vec<Observation> {
        (0..n).map(|_| self.next_unique()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn render_is_block_upscale() {
        let base = [[0, 1, 2, 0], [1, 2, 0, 1], [2, 0, 1, 2], [0, 0, 0, 1]];
        let obs = render_pattern(&base, 0);
        assert_eq!(obs.base_pattern(), Some(base));
        assert_eq!(obs.pixel(0, 3), 0.5);
        assert_eq!(obs.pixel(11, 11), 0.5);
    }

    #[test]
    fn four_rotations_return_to_start() {
        let base = [[0, 1, 2, 0], [1, 2, 0, 1], [2, 0, 1, 2], [0, 0, 0, 1]];
        assert_eq!(rotate(&rotate(&base, 3), 1), base);
        let once = rotate(&base, 1);
        assert_eq!(once[0][0], base[0][3]);
    }

    #[test]
    fn pattern_source_never_repeats() {
        let mut rng = stream_rng(3, 1);
        let obs = PatternSource::new(&mut rng).take(500);
        for (i, a) in obs.iter().enumerate() {
            assert!(a.base_pattern().is_some());
            for b in &obs[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }
}
