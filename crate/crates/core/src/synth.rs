//! Procedural beat-locked partner-dance corpus.
//!
//! Each sequence has its own tempo, beat phase, style and leader-follower
//! relation. The leader performs 4-beat moves (basic, side, turn, travel,
//! hold, lead_turn); every displacement eases in and out between beats, so
//! joints come to rest on the beat. The follower tracks the leader through a
//! per-sequence relation offset with mirrored footwork, keeps stepping while
//! the leader holds, and spins during a lead_turn.

use crate::audio::{synthesize_beat_track_with_offset, BeatTrack};
use crate::duet::DuetSequence;
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform2D, Vec3};
use crate::motion::{compute_features, follower_pose_from_relation, RelationFrame, RootPose};
use crate::skeleton::Skeleton;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const STYLES: [&str; 3] = ["on1", "on2", "cuban"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Move {
    Basic,
    Side,
    Turn,
    Travel,
    Hold,
    LeadTurn,
}

pub const MOVES: [Move; 6] = [Move::Basic, Move::Side, Move::Turn, Move::Travel, Move::Hold, Move::LeadTurn];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sequences: usize,
    pub duration: f64,
    pub fps: f64,
    pub bpm_min: f64,
    pub bpm_max: f64,
    /// Bar-to-bar move transition probabilities, rows and columns in [`MOVES`] order.
    pub transitions: [[f64; 6]; 6],
    /// Follower delay behind the leader, in frames.
    pub lag_frames: usize,
    pub noise: f64,
}

fn normalized(w: [f64; 6]) -> [f64; 6] {
    let s: f64 = w.iter().sum();
    w.map(|x| x / s)
}

impl SynthConfig {
    pub fn desk() -> Self {
        let base = [3.0, 2.0, 1.5, 1.5, 2.0, 1.0];
        let mut transitions = [normalized(base); 6];
        // holds and lead turns rarely repeat back to back
        transitions[4] = normalized([3.0, 2.0, 1.5, 1.5, 0.5, 1.0]);
        transitions[5] = normalized([3.0, 2.0, 1.5, 1.5, 2.0, 0.2]);
        Self {
            sequences: 64,
            duration: 60.0,
            fps: 20.0,
            bpm_min: 96.0,
            bpm_max: 132.0,
            transitions,
            lag_frames: 1,
            noise: 1.0,
        }
    }

    pub fn smoke() -> Self {
        Self { sequences: 8, duration: 30.0, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.transitions {
            if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("move transition rows must be probabilities summing to 1"));
            }
        }
        if !(self.fps > 0.0 && self.duration > 0.0 && self.bpm_min > 0.0 && self.bpm_min <= self.bpm_max) {
            return Err(Error::invalid("frame rate, duration and tempo range must be positive"));
        }
        if self.noise < 0.0 {
            return Err(Error::invalid("noise amplitude must be non-negative"));
        }
        Ok(())
    }
}

/// Per-sequence draw of the generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub bpm: f64,
    pub beat_offset: f64,
    pub style: String,
    pub relation: [f64; 3],
    pub lag: f64,
    pub start: [f64; 3],
    pub moves: Vec<Move>,
    pub travel_dirs: Vec<f64>,
    pub turn_signs: Vec<f64>,
    noise_phases: Vec<f64>,
    noise_freqs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub id: String,
    pub duet: DuetSequence,
    pub beats: BeatTrack,
    pub params: SequenceParams,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn accents(style: &str) -> [u8; 4] {
    match style {
        "on2" => [1, 3, 1, 2],
        "cuban" => [2, 1, 3, 1],
        _ => [3, 1, 2, 1],
    }
}

fn arm_amplitude(style: &str) -> f64 {
    match style {
        "on2" => 0.25,
        "cuban" => 0.1,
        _ => 0.15,
    }
}

/// Lateral trunk bend amplitude in radians.
fn hip_sway(style: &str) -> f64 {
    if style == "cuban" {
        0.12
    } else {
        0.04
    }
}

pub fn sample_params(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> SequenceParams {
    let bpm = rng.random_range(cfg.bpm_min..=cfg.bpm_max);
    let period = 60.0 / bpm;
    let beat_offset = rng.random_range(0.0..period);
    let style = STYLES[rng.random_range(0..STYLES.len())].to_string();
    let d = rng.random_range(0.55..1.0);
    let phi: f64 = rng.random_range(-0.6..0.6);
    let relation = [d * phi.sin(), d * phi.cos(), PI + rng.random_range(-0.5..0.5)];
    let lag = cfg.lag_frames as f64 / cfg.fps;
    let start = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-PI..PI)];
    let bars = (cfg.duration / (4.0 * period)).ceil() as usize + 3;
    let mut moves = Vec::with_capacity(bars);
    let mut prev = 0;
    for b in 0..bars {
        let next = if b == 0 {
            0
        } else {
            let mut u = rng.random_range(0.0..1.0);
            let row = cfg.transitions[prev];
            let mut k = 0;
            while k + 1 < row.len() && u >= row[k] {
                u -= row[k];
                k += 1;
            }
            k
        };
        moves.push(MOVES[next]);
        prev = next;
    }
    let travel_dirs = (0..bars).map(|_| rng.random_range(0..4) as f64 * PI / 2.0).collect();
    let turn_signs = (0..bars).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let noise_phases = (0..12).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let noise_freqs = (0..12).map(|_| rng.random_range(0.1..0.5)).collect();
    SequenceParams {
        bpm,
        beat_offset,
        style,
        relation,
        lag,
        start,
        moves,
        travel_dirs,
        turn_signs,
        noise_phases,
        noise_freqs,
    }
}

/// Beat clock: bar index, beat in bar, and phase within the beat at time `s`.
struct Clock {
    period: f64,
    offset: f64,
}

impl Clock {
    /// Beats are counted from one bar before the first onset so indices stay non-negative.
    fn at(&self, s: f64) -> (usize, usize, f64) {
        let b = (s - self.offset) / self.period + 4.0;
        let k = b.floor().max(0.0);
        let phase = b - k;
        let k = k as usize;
        (k / 4, k % 4, phase)
    }

    fn beat_index(&self, s: f64) -> usize {
        let (bar, j, _) = self.at(s);
        bar * 4 + j
    }
}

/// Leader root offsets at the five beat boundaries of a bar, as `(x, z, yaw)`
/// in the bar's starting frame. The basic step moves forward through even bars
/// and back through odd ones.
fn bar_offsets(m: Move, bar: usize, dir: f64, sign: f64) -> [[f64; 3]; 5] {
    let heading = if bar.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut o = [[0.0; 3]; 5];
    for (j, item) in o.iter_mut().enumerate() {
        let jf = j as f64;
        *item = match m {
            Move::Basic => [0.0, heading * 0.06 * jf, 0.0],
            Move::Side => [[0.0, 0.2, 0.0, -0.2, 0.0][j], 0.0, 0.0],
            Move::Turn => [0.0, 0.0, sign * jf * PI / 8.0],
            Move::Travel => [0.15 * jf * dir.sin(), 0.15 * jf * dir.cos(), 0.0],
            Move::Hold => [0.0, 0.0, 0.0],
            Move::LeadTurn => [0.0, [0.0, 0.05, 0.0, -0.05, 0.0][j], 0.0],
        };
    }
    o
}

fn compose(base: RootPose, off: [f64; 3]) -> RootPose {
    let t = RigidTransform2D::from_pose(base.x, base.z, base.yaw);
    let p = t.apply_point(&[off[0], 0.0, off[1]]);
    RootPose { x: p[0], z: p[2], yaw: base.yaw + off[2] }
}

/// Leader root pose at every bar start.
fn bar_starts(p: &SequenceParams) -> Vec<RootPose> {
    let mut out = Vec::with_capacity(p.moves.len() + 1);
    let mut pose = RootPose { x: p.start[0], z: p.start[1], yaw: p.start[2] };
    out.push(pose);
    for (i, &m) in p.moves.iter().enumerate() {
        let mut dir = p.travel_dirs[i];
        if m == Move::Travel && pose.x.hypot(pose.z) > 2.5 {
            // head back towards the origin
            let to_origin = (-pose.x).atan2(-pose.z);
            dir = to_origin - pose.yaw;
        }
        pose = compose(pose, bar_offsets(m, i, dir, p.turn_signs[i])[4]);
        out.push(pose);
    }
    out
}

fn leader_root(p: &SequenceParams, starts: &[RootPose], clock: &Clock, s: f64) -> RootPose {
    let (bar, j, phase) = clock.at(s);
    let bar = bar.min(p.moves.len() - 1);
    let base = starts[bar];
    let m = p.moves[bar];
    let mut dir = p.travel_dirs[bar];
    if m == Move::Travel && base.x.hypot(base.z) > 2.5 {
        dir = (-base.x).atan2(-base.z) - base.yaw;
    }
    let o = bar_offsets(m, bar, dir, p.turn_signs[bar]);
    let w = smoothstep(phase);
    let a = o[j];
    let b = o[j + 1];
    let off = [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2])];
    compose(base, off)
}

#[derive(Debug, Clone, Copy, Default)]
struct PoseParams {
    sway: f64,
    bob: f64,
    pitch: f64,
    hip: [f64; 2],
    knee: [f64; 2],
    down: [f64; 2],
    fwd: [f64; 2],
    elbow: [f64; 2],
}

fn rx(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::x_axis(), a).matrix()
}

fn ry(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::y_axis(), a).matrix()
}

fn rz(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), a).matrix()
}

/// Body-frame joint positions by forward kinematics (root at the origin, height applied by caller).
fn body_pose(skel: &Skeleton, q: &PoseParams) -> Vec<Vec3> {
    let n = skel.joint_count();
    let mut local = vec![Matrix3::identity(); n];
    local[3] = rx(q.pitch) * rz(q.sway);
    for (side, (hip, knee, ankle)) in [(1, 4, 7), (2, 5, 8)].into_iter().enumerate() {
        local[hip] = rx(-q.hip[side]);
        local[knee] = rx(q.knee[side]);
        local[ankle] = rx(q.hip[side] - q.knee[side]);
    }
    local[16] = ry(-q.fwd[0]) * rz(-q.down[0]);
    local[17] = ry(q.fwd[1]) * rz(q.down[1]);
    local[18] = ry(-q.elbow[0]);
    local[19] = ry(q.elbow[1]);
    let mut rot = vec![Matrix3::identity(); n];
    let mut pos = vec![[0.0; 3]; n];
    for j in 0..n {
        match skel.parents[j] {
            None => {
                rot[j] = local[j];
                pos[j] = [0.0, q.bob, 0.0];
            }
            Some(p) => {
                let o = rot[p] * Vector3::from(skel.offsets[j]);
                pos[j] = [pos[p][0] + o[0], pos[p][1] + o[1], pos[p][2] + o[2]];
                rot[j] = rot[p] * local[j];
            }
        }
    }
    pos
}

fn noise(p: &SequenceParams, channel: usize, s: f64) -> f64 {
    (0..3)
        .map(|i| {
            let k = (channel * 3 + i) % p.noise_phases.len();
            (2.0 * PI * p.noise_freqs[k] * s + p.noise_phases[k]).sin() / 3.0
        })
        .sum()
}

/// Limb pose for one dancer. `stepping` selects footwork; `mirror` swaps the stepping foot.
fn limb_params(p: &SequenceParams, clock: &Clock, s: f64, stepping: bool, mirror: bool, amp: f64) -> PoseParams {
    let (_, _, phase) = clock.at(s);
    let k = clock.beat_index(s);
    let lift = if stepping { (PI * phase).sin().powi(2) } else { 0.0 };
    let foot = (k + usize::from(mirror)) % 2;
    let mut q = PoseParams { pitch: 0.05 + 0.03 * amp * noise(p, 7, s), ..Default::default() };
    q.hip[foot] = 0.35 * lift;
    q.knee[foot] = 0.7 * lift;
    q.bob = -0.02 * lift;
    let alt = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    let w = smoothstep(phase);
    let swing = if stepping { alt(k) + w * (alt(k + 1) - alt(k)) } else { 0.0 };
    q.sway = hip_sway(&p.style) * swing * if mirror { -1.0 } else { 1.0 };
    let a = arm_amplitude(&p.style);
    for side in 0..2 {
        let sgn = if (side == 0) ^ mirror { 1.0 } else { -1.0 };
        q.down[side] = 1.1 + a * swing * sgn + 0.05 * amp * noise(p, 1 + side, s);
        q.fwd[side] = 0.5 + 0.5 * a * swing + 0.05 * amp * noise(p, 3 + side, s);
        q.elbow[side] = 0.6 + 0.05 * amp * noise(p, 5 + side, s);
    }
    q
}

fn place(skel: &Skeleton, q: &PoseParams, pose: RootPose, height: f64) -> Vec<Vec3> {
    let t = RigidTransform2D::from_pose(pose.x, pose.z, pose.yaw);
    body_pose(skel, q)
        .into_iter()
        .map(|p| {
            let w = t.apply_point(&p);
            [w[0], w[1] + height, w[2]]
        })
        .collect()
}

/// Generates one duet from drawn parameters.
pub fn generate_duet(p: &SequenceParams, skel: &Skeleton, cfg: &SynthConfig) -> Result<(DuetSequence, BeatTrack)> {
    cfg.validate()?;
    let period = 60.0 / p.bpm;
    let clock = Clock { period, offset: p.beat_offset };
    let starts = bar_starts(p);
    let frames = (cfg.duration * cfg.fps).round() as usize;
    let height = skel.rest_root_height();
    let rel = RelationFrame { x: p.relation[0], z: p.relation[1], theta: p.relation[2] };
    let amp = cfg.noise;
    let mut leader = Vec::with_capacity(frames);
    let mut follower = Vec::with_capacity(frames);
    for f in 0..frames {
        let s = f as f64 / cfg.fps;
        let (bar, _, _) = clock.at(s);
        let m = p.moves[bar.min(p.moves.len() - 1)];
        let mut lpose = leader_root(p, &starts, &clock, s);
        lpose.x += 0.01 * amp * noise(p, 8, s);
        lpose.z += 0.01 * amp * noise(p, 9, s);
        let lq = limb_params(p, &clock, s, m != Move::Hold, false, amp);
        leader.push(place(skel, &lq, lpose, height));

        let sf = s - p.lag;
        let (fbar, fj, fphase) = clock.at(sf.max(0.0));
        let fm = p.moves[fbar.min(p.moves.len() - 1)];
        let anchor = leader_root(p, &starts, &clock, sf.max(0.0));
        let mut fpose = follower_pose_from_relation(anchor, rel);
        if fm == Move::LeadTurn {
            fpose.yaw += 2.0 * PI * (fj as f64 + smoothstep(fphase)) / 4.0;
        }
        if fm == Move::Hold {
            // the follower keeps a small basic of its own
            let w = smoothstep(fphase);
            let o = [0.0, 0.1, 0.0, -0.1, 0.0];
            let dz = o[fj] + w * (o[fj + 1] - o[fj]);
            fpose = compose(fpose, [0.0, dz, 0.0]);
        }
        fpose.x += 0.01 * amp * noise(p, 10, s);
        fpose.z += 0.01 * amp * noise(p, 11, s);
        let fq = limb_params(p, &clock, sf.max(0.0), true, true, amp);
        follower.push(place(skel, &fq, fpose, height));
    }
    let leader = compute_features(&leader, skel, cfg.fps)?;
    let follower = compute_features(&follower, skel, cfg.fps)?;
    let beats = synthesize_beat_track_with_offset(p.bpm, cfg.duration, &accents(&p.style), p.beat_offset)?;
    let duet = DuetSequence::new(cfg.fps, leader, follower, Some(p.style.clone()), Some(beats.onsets.clone()))?;
    Ok((duet, beats))
}

/// Generates the whole corpus; sequence `i` gets id `seq_{i:03}`.
pub fn generate_corpus(cfg: &SynthConfig, skel: &Skeleton, rng: &mut ChaCha8Rng) -> Result<Vec<SynthSample>> {
    (0..cfg.sequences)
        .map(|i| {
            let params = sample_params(cfg, rng);
            let (duet, beats) = generate_duet(&params, skel, cfg)?;
            Ok(SynthSample { id: format!("seq_{i:03}"), duet, beats, params })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{bas, motion_beats};
    use crate::motion::positions_of;
    use rand::SeedableRng;

    #[test]
    fn corpus_is_deterministic() {
        let cfg = SynthConfig { sequences: 2, duration: 4.0, ..SynthConfig::desk() };
        let skel = Skeleton::smpl22();
        let a = generate_corpus(&cfg, &skel, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = generate_corpus(&cfg, &skel, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a[1].duet.follower, b[1].duet.follower);
        assert_eq!(a[0].duet.len(), 80);
        a[0].duet.validate().unwrap();
    }

    #[test]
    fn fk_preserves_bone_lengths() {
        let skel = Skeleton::smpl22();
        let q = PoseParams { hip: [0.3, 0.0], knee: [0.6, 0.0], down: [1.0, 1.0], fwd: [0.4, 0.4], elbow: [0.5, 0.5], ..Default::default() };
        let p = body_pose(&skel, &q);
        for j in 1..22 {
            let par = skel.parents[j].unwrap();
            let d = ((p[j][0] - p[par][0]).powi(2) + (p[j][1] - p[par][1]).powi(2) + (p[j][2] - p[par][2]).powi(2)).sqrt();
            let o = skel.offsets[j];
            let l = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
            assert!((d - l).abs() < 1e-12);
        }
    }

    #[test]
    fn follower_steps_on_the_beat() {
        let cfg = SynthConfig { sequences: 1, duration: 20.0, noise: 0.0, ..SynthConfig::desk() };
        let skel = Skeleton::smpl22();
        let mut p = sample_params(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        p.lag = 0.0;
        let (duet, beats) = generate_duet(&p, &skel, &cfg).unwrap();
        let mb = motion_beats(&positions_of(&duet.follower), cfg.fps);
        let score = bas(&mb, &beats.onsets, 3.0 / cfg.fps).unwrap();
        assert!(score > 0.8, "BAS {score}");
    }

    #[test]
    fn noiseless_follower_keeps_the_drawn_relation() {
        let cfg = SynthConfig { sequences: 1, duration: 10.0, noise: 0.0, lag_frames: 0, ..SynthConfig::desk() };
        let skel = Skeleton::smpl22();
        let mut p = sample_params(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        for (i, m) in p.moves.iter_mut().enumerate() {
            *m = [Move::Basic, Move::Side, Move::Turn, Move::Travel][i % 4];
        }
        let (duet, _) = generate_duet(&p, &skel, &cfg).unwrap();
        let want = RelationFrame::from_array(p.relation);
        for r in &duet.relation {
            assert!((r.x - want.x).abs() < 1e-9 && (r.z - want.z).abs() < 1e-9);
            assert!(crate::geometry::wrap_angle(r.theta - want.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn basic_step_reverses_every_four_beats() {
        let cfg = SynthConfig { sequences: 1, duration: 8.0, noise: 0.0, bpm_min: 120.0, bpm_max: 120.0, ..SynthConfig::desk() };
        let skel = Skeleton::smpl22();
        let mut p = sample_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        p.beat_offset = 0.0;
        p.start = [0.0, 0.0, 0.0];
        p.moves.iter_mut().for_each(|m| *m = Move::Basic);
        let (duet, _) = generate_duet(&p, &skel, &cfg).unwrap();
        let z: Vec<f64> = crate::motion::root_poses(&duet.leader).iter().map(|r| r.z).collect();
        // 120 BPM at 20 fps: 10 frames per beat, 40 per bar
        let dz: Vec<f64> = (0..4).map(|bar| z[bar * 40 + 35] - z[bar * 40 + 5]).collect();
        for w in dz.windows(2) {
            assert!(w[0].abs() > 0.1 && w[0] * w[1] < 0.0, "{dz:?}");
        }
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let cfg = SynthConfig { sequences: 1, duration: 3.0, ..SynthConfig::desk() };
        let skel = Skeleton::smpl22();
        let enc = |seed| {
            let c = generate_corpus(&cfg, &skel, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            crate::duet::encode_duet(&c[0].duet, &skel, true).unwrap()
        };
        assert_eq!(enc(9), enc(9));
        assert_ne!(enc(9), enc(10));
    }

    #[test]
    fn transition_rows_must_be_distributions() {
        let mut cfg = SynthConfig::desk();
        cfg.validate().unwrap();
        cfg.transitions[2][0] += 0.1;
        assert!(cfg.validate().is_err());
    }
}
