//! Rule-based captions of skeleton dynamics inside a canonical window.
//!
//! Each rule reduces the window to one scalar measure and fires when the
//! measure crosses its threshold, so pushing a displacement further past the
//! threshold never removes the phrase. Thresholds: 0.2 m for displacements,
//! 30 degrees for turns, 1.5 m/s for "quickly". Positive yaw (a turn from +Z
//! towards +X, i.e. towards the body's left) is reported as counterclockwise.

use crate::geometry::Vec3;
use crate::motion::{root_poses, MotionFrame};
use crate::skeleton::Skeleton;
use crate::window::MotionWindow;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const HOLDS_POSITION: &str = "holds position";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Scalar summaries of a window that rules compare against thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Measure {
    /// Wrist height change; requires the wrist to end above (`above = true`) or below the shoulder.
    WristRise { side: Side, above: bool },
    /// Change of the wrist's root-relative forward coordinate.
    WristForward(Side),
    /// Change of the wrist's root-relative outward coordinate (positive = away from the body).
    WristOutward(Side),
    /// Peak knee height relative to the root, minus its initial value.
    KneeLift(Side),
    /// Peak toe forward coordinate relative to the root, minus its initial value.
    FootKick(Side),
    /// Root displacement along canonical +Z.
    RootForward,
    /// Root displacement along canonical +X (the body's left).
    RootLeft,
    /// Net unwrapped yaw change (degrees).
    YawChange,
    /// Absolute net yaw change (degrees).
    YawMagnitude,
    /// Initial root height minus the lowest root height.
    RootDrop,
    /// Final root height minus initial root height.
    RootRise,
    /// Change in distance between the wrists.
    HandGap,
    /// Change in trunk pitch towards +Z (degrees).
    TrunkPitch,
    /// Mean joint speed (m/s).
    MeanSpeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Trigger {
    Above(f64),
    Below(f64),
    Between(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRule {
    pub id: usize,
    pub measure: Measure,
    pub trigger: Trigger,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub phrases: Vec<String>,
    pub window: usize,
}

impl Caption {
    pub fn text(&self) -> String {
        self.phrases.join(" , ")
    }
}

pub const DISPLACEMENT: f64 = 0.2;
pub const TURN_DEGREES: f64 = 30.0;
pub const FAST_SPEED: f64 = 1.5;

/// The closed rule set; ids are positions in the returned list.
pub fn default_rules() -> Vec<CaptionRule> {
    use Measure::*;
    use Side::*;
    use Trigger::*;
    let d = DISPLACEMENT;
    let spec: Vec<(Measure, Trigger, &str)> = vec![
        (WristRise { side: Left, above: true }, Above(d), "left hand raises above the shoulder"),
        (WristRise { side: Right, above: true }, Above(d), "right hand raises above the shoulder"),
        (WristRise { side: Left, above: false }, Below(-d), "left hand lowers below the shoulder"),
        (WristRise { side: Right, above: false }, Below(-d), "right hand lowers below the shoulder"),
        (WristForward(Left), Above(d), "left hand reaches forward"),
        (WristForward(Right), Above(d), "right hand reaches forward"),
        (WristForward(Left), Below(-d), "left hand pulls back"),
        (WristForward(Right), Below(-d), "right hand pulls back"),
        (WristOutward(Left), Above(d), "left hand moves outward"),
        (WristOutward(Right), Above(d), "right hand moves outward"),
        (KneeLift(Left), Above(0.15), "left knee lifts"),
        (KneeLift(Right), Above(0.15), "right knee lifts"),
        (FootKick(Left), Above(0.3), "left foot kicks forward"),
        (FootKick(Right), Above(0.3), "right foot kicks forward"),
        (RootForward, Above(d), "steps forward"),
        (RootForward, Below(-d), "steps backward"),
        (RootLeft, Above(d), "steps to the left"),
        (RootLeft, Below(-d), "steps to the right"),
        (YawChange, Above(TURN_DEGREES), "turns counterclockwise"),
        (YawChange, Below(-TURN_DEGREES), "turns clockwise"),
        (YawMagnitude, Above(180.0), "spins around"),
        (RootDrop, Above(0.1), "crouches down"),
        (RootRise, Above(0.1), "rises up"),
        (HandGap, Below(-d), "brings the hands together"),
        (HandGap, Above(d), "spreads the hands apart"),
        (TrunkPitch, Above(15.0), "leans forward"),
        (TrunkPitch, Below(-15.0), "leans back"),
        (MeanSpeed, Above(FAST_SPEED), "quickly"),
        (MeanSpeed, Between(0.05, 0.3), "slowly"),
    ];
    spec.into_iter()
        .enumerate()
        .map(|(id, (measure, trigger, phrase))| CaptionRule {
            id,
            measure,
            trigger,
            phrase: phrase.to_string(),
        })
        .collect()
}

/// Every phrase a rule set can emit, plus the fallback.
pub fn phrase_set(rules: &[CaptionRule]) -> Vec<String> {
    let mut out: Vec<String> = rules.iter().map(|r| r.phrase.clone()).collect();
    out.push(HOLDS_POSITION.to_string());
    out
}

struct WindowView<'a> {
    frames: &'a [MotionFrame],
    skel: &'a Skeleton,
}

impl WindowView<'_> {
    fn pos(&self, t: usize, j: usize) -> Vec3 {
        self.frames[t].positions[j]
    }

    fn rel(&self, t: usize, j: usize) -> Vec3 {
        let p = self.pos(t, j);
        let r = self.pos(t, self.skel.root);
        [p[0] - r[0], p[1] - r[1], p[2] - r[2]]
    }

    fn last(&self) -> usize {
        self.frames.len() - 1
    }

    fn wrist(&self, s: Side) -> usize {
        match s {
            Side::Left => self.skel.left_wrist,
            Side::Right => self.skel.right_wrist,
        }
    }

    fn measure(&self, m: Measure) -> f64 {
        let last = self.last();
        let sk = self.skel;
        match m {
            Measure::WristRise { side, above } => {
                let w = self.wrist(side);
                let sh = match side {
                    Side::Left => sk.left_shoulder,
                    Side::Right => sk.right_shoulder,
                };
                let rise = self.pos(last, w)[1] - self.pos(0, w)[1];
                let end_above = self.pos(last, w)[1] > self.pos(last, sh)[1];
                if end_above == above {
                    rise
                } else {
                    0.0
                }
            }
            Measure::WristForward(side) => {
                let w = self.wrist(side);
                self.rel(last, w)[2] - self.rel(0, w)[2]
            }
            Measure::WristOutward(side) => {
                let w = self.wrist(side);
                let sign = if side == Side::Left { 1.0 } else { -1.0 };
                sign * (self.rel(last, w)[0] - self.rel(0, w)[0])
            }
            Measure::KneeLift(side) => {
                let k = if side == Side::Left { sk.left_knee } else { sk.right_knee };
                let peak = (0..=last).map(|t| self.rel(t, k)[1]).fold(f64::MIN, f64::max);
                peak - self.rel(0, k)[1]
            }
            Measure::FootKick(side) => {
                let k = if side == Side::Left { sk.left_toe } else { sk.right_toe };
                let peak = (0..=last).map(|t| self.rel(t, k)[2]).fold(f64::MIN, f64::max);
                peak - self.rel(0, k)[2]
            }
            Measure::RootForward => self.pos(last, sk.root)[2] - self.pos(0, sk.root)[2],
            Measure::RootLeft => self.pos(last, sk.root)[0] - self.pos(0, sk.root)[0],
            Measure::YawChange | Measure::YawMagnitude => {
                let poses = root_poses(self.frames);
                let mut total = 0.0;
                for w in poses.windows(2) {
                    total += crate::geometry::wrap_angle(w[1].yaw - w[0].yaw);
                }
                let deg = total.to_degrees();
                if matches!(m, Measure::YawMagnitude) {
                    deg.abs()
                } else {
                    deg
                }
            }
            Measure::RootDrop => {
                let lo = (0..=last).map(|t| self.pos(t, sk.root)[1]).fold(f64::MAX, f64::min);
                self.pos(0, sk.root)[1] - lo
            }
            Measure::RootRise => self.pos(last, sk.root)[1] - self.pos(0, sk.root)[1],
            Measure::HandGap => {
                let gap = |t: usize| {
                    let a = self.pos(t, sk.left_wrist);
                    let b = self.pos(t, sk.right_wrist);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                };
                gap(last) - gap(0)
            }
            Measure::TrunkPitch => {
                let pitch = |t: usize| {
                    let v = self.rel(t, sk.spine);
                    v[2].atan2(v[1]).to_degrees()
                };
                pitch(last) - pitch(0)
            }
            Measure::MeanSpeed => mean_joint_speed(self.frames),
        }
    }
}

/// Mean joint speed over a window from position differences (the frame rate is
/// taken from stored velocities of the second frame when available, else 20 fps).
fn mean_joint_speed(frames: &[MotionFrame]) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let fps = crate::motion::DEFAULT_FPS;
    let mut sum = 0.0;
    let mut n = 0.0;
    for w in frames.windows(2) {
        for (a, b) in w[0].positions.iter().zip(&w[1].positions) {
            let d = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
            sum += d * fps;
            n += 1.0;
        }
    }
    sum / n
}

fn fires(trigger: Trigger, v: f64) -> bool {
    match trigger {
        Trigger::Above(t) => v > t,
        Trigger::Below(t) => v < t,
        Trigger::Between(lo, hi) => v > lo && v < hi,
    }
}

/// Evaluates every rule on a canonical window, in rule-id order.
pub fn describe_window(window: &MotionWindow, skel: &Skeleton, rules: &[CaptionRule], index: usize) -> Caption {
    describe_frames(&window.frames, skel, rules, index)
}

pub fn describe_frames(frames: &[MotionFrame], skel: &Skeleton, rules: &[CaptionRule], index: usize) -> Caption {
    let mut phrases = Vec::new();
    if !frames.is_empty() {
        let view = WindowView { frames, skel };
        let mut sorted: Vec<&CaptionRule> = rules.iter().collect();
        sorted.sort_by_key(|r| r.id);
        for r in sorted {
            if fires(r.trigger, view.measure(r.measure)) {
                phrases.push(r.phrase.clone());
            }
        }
    }
    if phrases.is_empty() {
        phrases.push(HOLDS_POSITION.to_string());
    }
    Caption { phrases, window: index }
}

/// One line of the caption corpus: `<sequence id>\t<role>\t<window index>\t<caption text>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub sequence: String,
    pub role: String,
    pub window: usize,
    pub text: String,
}

pub fn write_caption_corpus(path: &Path, records: &[CaptionRecord]) -> crate::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.sequence, r.role, r.window, r.text));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_caption_corpus(path: &Path) -> crate::Result<Vec<CaptionRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let parts: Vec<&str> = line.splitn(4, '\t').collect();
            if parts.len() != 4 {
                return Err(crate::Error::Format(format!("caption line {} is malformed", i + 1)));
            }
            Ok(CaptionRecord {
                sequence: parts[0].to_string(),
                role: parts[1].to_string(),
                window: parts[2]
                    .parse()
                    .map_err(|_| crate::Error::Format(format!("bad window index on line {}", i + 1)))?,
                text: parts[3].to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform2D;
    use crate::motion::compute_features;
    use crate::window::{canonicalize_window, transform_frames};

    fn window_from(positions: Vec<Vec<Vec3>>) -> MotionWindow {
        let skel = Skeleton::smpl22();
        let frames = compute_features(&positions, &skel, 20.0).unwrap();
        canonicalize_window(&frames, 0).unwrap()
    }

    fn rest(t: usize) -> Vec<Vec<Vec3>> {
        vec![Skeleton::smpl22().rest_positions([0.0, 0.92, 0.0]); t]
    }

    #[test]
    fn rule_count() {
        assert!(default_rules().len() >= 24);
    }

    #[test]
    fn static_window_holds_position() {
        let skel = Skeleton::smpl22();
        let c = describe_window(&window_from(rest(20)), &skel, &default_rules(), 0);
        assert_eq!(c.phrases, vec![HOLDS_POSITION.to_string()]);
    }

    #[test]
    fn raised_left_hand() {
        let skel = Skeleton::smpl22();
        let mut pos = rest(20);
        for (t, frame) in pos.iter_mut().enumerate() {
            frame[skel.left_wrist][1] += 0.5 * t as f64 / 19.0;
        }
        let c = describe_window(&window_from(pos), &skel, &default_rules(), 0);
        assert!(c.phrases.contains(&"left hand raises above the shoulder".to_string()), "{c:?}");
    }

    #[test]
    fn forward_step() {
        let skel = Skeleton::smpl22();
        let pos: Vec<_> = (0..20)
            .map(|t| skel.rest_positions([0.0, 0.92, 0.5 * t as f64 / 19.0]))
            .collect();
        let c = describe_window(&window_from(pos), &skel, &default_rules(), 0);
        assert!(c.phrases.contains(&"steps forward".to_string()), "{c:?}");
    }

    #[test]
    fn positive_yaw_is_counterclockwise() {
        let skel = Skeleton::smpl22();
        let base = compute_features(&rest(20), &skel, 20.0).unwrap();
        let frames: Vec<MotionFrame> = base
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let yaw = (45.0f64).to_radians() * t as f64 / 19.0;
                transform_frames(std::slice::from_ref(f), &RigidTransform2D::new(0.0, 0.0, yaw))
                    .remove(0)
            })
            .collect();
        let w = canonicalize_window(&frames, 0).unwrap();
        let c = describe_window(&w, &skel, &default_rules(), 0);
        assert!(c.phrases.contains(&"turns counterclockwise".to_string()), "{c:?}");
        assert!(!c.phrases.contains(&"turns clockwise".to_string()));
    }

    #[test]
    fn fast_motion_adds_quickly() {
        let skel = Skeleton::smpl22();
        // 2 m/s forward travel
        let pos: Vec<_> = (0..20)
            .map(|t| skel.rest_positions([0.0, 0.92, 0.1 * t as f64]))
            .collect();
        let c = describe_window(&window_from(pos), &skel, &default_rules(), 0);
        assert!(c.phrases.contains(&"quickly".to_string()), "{c:?}");
    }
}
