//! Shared fixtures for the benchmarks.

use gazefocus::motion::GrayImage;
use gazefocus::synth::{generate_session, texture, Rng, SynthScript, SynthSession};
use gazefocus::GazeSample;

/// A default four-student session of the given length.
pub fn session(seed: u64, duration_s: f64) -> SynthSession {
    let script = SynthScript::with_shares(seed, &[0.4, 0.3, 0.2, 0.1], 0.3, duration_s).expect("feasible script");
    generate_session(&script).expect("script generates")
}

pub fn random_features(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
}

/// Two textured frames, the second shifted by `(dx, dy)`.
pub fn frame_pair(seed: u64, width: usize, height: usize, dx: i64, dy: i64) -> (GrayImage, GrayImage) {
    let a = GrayImage::from_fn(width, height, |x, y| texture(seed, x as i64, y as i64));
    let b = GrayImage::from_fn(width, height, |x, y| texture(seed, x as i64 - dx, y as i64 - dy));
    (a, b)
}

pub fn gaze(session: &SynthSession) -> &[GazeSample] {
    &session.gaze
}
