//! Two-person sequences and the duet motion file.
//!
//! # File layout
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | content |
//! |---|---|---|
//! | 0 | 4 | magic `DUET` |
//! | 4 | 4 | `u32` format version (1) |
//! | 8 | 4 | `u32` header length `H` in bytes |
//! | 12 | H | UTF-8 JSON header ([`DuetHeader`]) |
//! | 12+H | 4·T·N·3 | leader global joint positions, `f32`, row-major `[T][N][3]` |
//! | … | 4·T·N·3 | follower global joint positions |
//! | … | 4·T·D | leader flat features `[T][D]`, only if `has_features` |
//! | … | 4·T·D | follower flat features, only if `has_features` |
//!
//! `D = 12·N + 4`. Without stored features, frames are rebuilt from positions.
//! The relation track is always recomputed on load.

use crate::error::{Error, Result};
use crate::motion::{compute_features, feature_dim, relation_track, MotionFrame, RelationFrame};
use crate::skeleton::Skeleton;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const DUET_MAGIC: &[u8; 4] = b"DUET";
pub const DUET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DuetSequence {
    pub fps: f64,
    pub leader: Vec<MotionFrame>,
    pub follower: Vec<MotionFrame>,
    pub relation: Vec<RelationFrame>,
    pub style: Option<String>,
    /// Music beat times in seconds.
    pub beats: Option<Vec<f64>>,
}

impl DuetSequence {
    /// Builds a sequence and derives its relation track.
    pub fn new(
        fps: f64,
        leader: Vec<MotionFrame>,
        follower: Vec<MotionFrame>,
        style: Option<String>,
        beats: Option<Vec<f64>>,
    ) -> Result<Self> {
        if leader.len() != follower.len() {
            return Err(Error::LengthMismatch(format!(
                "leader has {} frames, follower {}",
                leader.len(),
                follower.len()
            )));
        }
        let relation = relation_track(&leader, &follower);
        Ok(Self {
            fps,
            leader,
            follower,
            relation,
            style,
            beats,
        })
    }

    pub fn len(&self) -> usize {
        self.leader.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leader.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fps
    }

    /// Checks track lengths and that the stored relation matches the motion tracks.
    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if self.follower.len() != t || self.relation.len() != t {
            return Err(Error::LengthMismatch(format!(
                "tracks have lengths {}, {}, {}",
                t,
                self.follower.len(),
                self.relation.len()
            )));
        }
        let recomputed = relation_track(&self.leader, &self.follower);
        for (i, (a, b)) in recomputed.iter().zip(&self.relation).enumerate() {
            let dt = crate::geometry::wrap_angle(a.theta - b.theta);
            if (a.x - b.x).abs() > 1e-6 || (a.z - b.z).abs() > 1e-6 || dt.abs() > 1e-6 {
                return Err(Error::invalid(format!("relation track disagrees with poses at frame {i}")));
            }
        }
        Ok(())
    }

    /// Frames `[start, start + len)` as a new sequence; beats are shifted and clipped.
    pub fn slice(&self, start: usize, len: usize) -> DuetSequence {
        let end = (start + len).min(self.len());
        let t0 = start as f64 / self.fps;
        let t1 = end as f64 / self.fps;
        DuetSequence {
            fps: self.fps,
            leader: self.leader[start..end].to_vec(),
            follower: self.follower[start..end].to_vec(),
            relation: self.relation[start..end].to_vec(),
            style: self.style.clone(),
            beats: self.beats.as_ref().map(|b| {
                b.iter()
                    .filter(|&&x| x >= t0 && x < t1)
                    .map(|x| x - t0)
                    .collect()
            }),
        }
    }

    /// Replaces the follower track, recomputing the relation.
    pub fn with_follower(&self, follower: Vec<MotionFrame>) -> Result<DuetSequence> {
        let t = follower.len().min(self.len());
        let mut out = DuetSequence::new(
            self.fps,
            self.leader[..t].to_vec(),
            follower[..t].to_vec(),
            self.style.clone(),
            None,
        )?;
        out.beats = self.beats.as_ref().map(|b| {
            b.iter()
                .copied()
                .filter(|&x| x < t as f64 / self.fps)
                .collect()
        });
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuetHeader {
    pub fps: f64,
    pub joint_count: usize,
    pub joint_names: Vec<String>,
    /// Parent index per joint, -1 for the root.
    pub parents: Vec<i64>,
    pub frames: usize,
    pub style: Option<String>,
    /// Music beat times in seconds.
    pub beats: Option<Vec<f64>>,
    pub has_features: bool,
    pub feature_dim: usize,
}

fn push_f32(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn encode_duet(seq: &DuetSequence, skel: &Skeleton, with_features: bool) -> Result<Vec<u8>> {
    let n = skel.joint_count();
    if seq.leader.iter().chain(&seq.follower).any(|f| f.joint_count() != n) {
        return Err(Error::invalid("frame joint count differs from skeleton"));
    }
    let header = DuetHeader {
        fps: seq.fps,
        joint_count: n,
        joint_names: skel.names.clone(),
        parents: skel
            .parents
            .iter()
            .map(|p| p.map(|p| p as i64).unwrap_or(-1))
            .collect(),
        frames: seq.len(),
        style: seq.style.clone(),
        beats: seq.beats.clone(),
        has_features: with_features,
        feature_dim: feature_dim(n),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + seq.len() * n * 3 * 8);
    buf.extend_from_slice(DUET_MAGIC);
    buf.extend_from_slice(&DUET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for track in [&seq.leader, &seq.follower] {
        for f in track.iter() {
            for v in f.positions.iter().flatten() {
                push_f32(&mut buf, *v);
            }
        }
    }
    if with_features {
        for track in [&seq.leader, &seq.follower] {
            for f in track.iter() {
                for v in f.to_flat() {
                    push_f32(&mut buf, v);
                }
            }
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("duet file is truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(4 * n)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode_duet(data: &[u8], skel: &Skeleton) -> Result<(DuetSequence, DuetHeader)> {
    let mut cur = Cursor { data, pos: 0 };
    if cur.take(4)? != DUET_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != DUET_VERSION {
        return Err(Error::Format(format!("unsupported duet version {version}")));
    }
    let hlen = cur.u32()? as usize;
    let header: DuetHeader = serde_json::from_slice(cur.take(hlen)?)?;
    let n = header.joint_count;
    if n != skel.joint_count() {
        return Err(Error::Format(format!(
            "file has {n} joints, skeleton has {}",
            skel.joint_count()
        )));
    }
    let t = header.frames;
    let mut read_positions = || -> Result<Vec<Vec<[f64; 3]>>> {
        let flat = cur.f32s(t * n * 3)?;
        Ok(flat
            .chunks_exact(n * 3)
            .map(|fr| fr.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
            .collect())
    };
    let lp = read_positions()?;
    let fp = read_positions()?;
    let (leader, follower) = if header.has_features {
        let d = feature_dim(n);
        let mut read_frames = || -> Result<Vec<MotionFrame>> {
            cur.f32s(t * d)?
                .chunks_exact(d)
                .map(|fr| MotionFrame::from_flat(fr, n))
                .collect()
        };
        (read_frames()?, read_frames()?)
    } else {
        (
            compute_features(&lp, skel, header.fps)?,
            compute_features(&fp, skel, header.fps)?,
        )
    };
    if cur.pos != data.len() {
        return Err(Error::Format("trailing bytes after duet payload".into()));
    }
    let seq = DuetSequence::new(
        header.fps,
        leader,
        follower,
        header.style.clone(),
        header.beats.clone(),
    )?;
    Ok((seq, header))
}

pub fn write_duet(path: &Path, seq: &DuetSequence, skel: &Skeleton, with_features: bool) -> Result<()> {
    let bytes = encode_duet(seq, skel, with_features)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_duet(path: &Path, skel: &Skeleton) -> Result<DuetSequence> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(decode_duet(&bytes, skel)?.0)
}
