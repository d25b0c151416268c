//! Motion beats and beat-alignment kernels.

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Kernel width in frames for both alignment scores.
pub const SIGMA_FRAMES: f64 = 3.0;
pub const SMOOTHING_FRAMES: usize = 5;

/// Mean joint speed per frame from central differences (one-sided at the ends).
pub fn mean_joint_speed(positions: &[Vec<Vec3>], fps: f64) -> Vec<f64> {
    let t = positions.len();
    if t < 2 {
        return vec![0.0; t];
    }
    (0..t)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == t - 1 {
                (t - 2, t - 1)
            } else {
                (i - 1, i + 1)
            };
            let dt = (b - a) as f64 / fps;
            let js = &positions[i];
            js.iter()
                .enumerate()
                .map(|(j, _)| {
                    let p = positions[b][j];
                    let q = positions[a][j];
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt() / dt
                })
                .sum::<f64>()
                / js.len().max(1) as f64
        })
        .collect()
}

/// Centered moving average; windows are truncated at the ends.
pub fn smooth(x: &[f64], window: usize) -> Vec<f64> {
    let h = window / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Indices of strict local minima; a flat run bounded by larger values on both
/// sides counts once, at its middle. Runs touching either end are ignored.
/// Values within `1e-9` of the largest magnitude compare equal.
pub fn local_minima(x: &[f64]) -> Vec<usize> {
    let tol = 1e-9 * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < x.len() {
        if x[i] < x[i - 1] - tol {
            let mut j = i;
            while j + 1 < x.len() && (x[j + 1] - x[i]).abs() <= tol {
                j += 1;
            }
            if j + 1 < x.len() && x[j + 1] > x[i] + tol {
                out.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Beat times (seconds): local minima of the smoothed mean joint speed.
pub fn motion_beats(positions: &[Vec<Vec3>], fps: f64) -> Vec<f64> {
    if positions.len() < 3 {
        return Vec::new();
    }
    let s = smooth(&mean_joint_speed(positions, fps), SMOOTHING_FRAMES);
    local_minima(&s).into_iter().map(|i| i as f64 / fps).collect()
}

/// `1/|R| * sum_r exp(-min_c (r - c)^2 / (2 sigma^2))` over reference beats `R`
/// and comparison beats `C`; 0 when `C` is empty.
pub fn kernel_alignment(reference: &[f64], compare: &[f64], sigma: f64) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("the reference beat set is empty"));
    }
    if compare.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = reference
        .iter()
        .map(|r| {
            let d = compare.iter().map(|c| (r - c).abs()).fold(f64::INFINITY, f64::min);
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / reference.len() as f64)
}

/// Beat alignment score of motion beats against music beats.
pub fn bas(motion: &[f64], music: &[f64], sigma: f64) -> Result<f64> {
    kernel_alignment(music, motion, sigma)
}

/// Leader-follower beat synchrony, with the leader's beats as reference.
pub fn bed(leader: &[f64], follower: &[f64], sigma: f64) -> Result<f64> {
    kernel_alignment(leader, follower, sigma)
}
