//! Evaluation: solo FID/diversity in kinematic and graphical feature spaces,
//! interactive FID/diversity over leader-follower cross-distances, and beat
//! alignment (BAS against music, BED against the leader).
//!
//! Feature sets are z-normalized with the reference set's statistics before
//! the Fréchet distance and diversity are computed.

pub mod beats;
pub mod features;
pub mod fid;

pub use beats::{bas, bed, motion_beats, SIGMA_FRAMES};
pub use features::{crossdist_features, graphical_features, kinematic_features};
pub use fid::{diversity, fid};

use crate::duet::DuetSequence;
use crate::error::{Error, Result};
use crate::motion::positions_of;
use crate::skeleton::Skeleton;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSpace {
    Kinematic,
    Graphical,
    CrossDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVectorSet {
    pub space: FeatureSpace,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid_k: f64,
    pub fid_g: f64,
    pub div_k: f64,
    pub div_g: f64,
    pub fid_cd: f64,
    pub div_cd: f64,
    pub bed: f64,
    pub bas: f64,
    pub generated_samples: usize,
    pub reference_samples: usize,
    pub config_hash: String,
}

/// One evaluated duet with the music beats of its segment (seconds).
pub struct EvalSample<'a> {
    pub duet: &'a DuetSequence,
    pub music_beats: &'a [f64],
}

pub struct FeatureSets {
    pub kinematic: FeatureVectorSet,
    pub graphical: FeatureVectorSet,
    pub cross: FeatureVectorSet,
}

pub fn feature_sets(duets: &[&DuetSequence], skel: &Skeleton) -> FeatureSets {
    let mut k = Vec::with_capacity(duets.len());
    let mut g = Vec::with_capacity(duets.len());
    let mut c = Vec::with_capacity(duets.len());
    for d in duets {
        k.push(kinematic_features(&positions_of(&d.follower), d.fps));
        g.push(graphical_features(&d.follower, skel, d.fps));
        c.push(crossdist_features(&d.leader, &d.follower, skel));
    }
    FeatureSets {
        kinematic: FeatureVectorSet { space: FeatureSpace::Kinematic, vectors: k },
        graphical: FeatureVectorSet { space: FeatureSpace::Graphical, vectors: g },
        cross: FeatureVectorSet { space: FeatureSpace::CrossDistance, vectors: c },
    }
}

fn fid_div(reference: &[Vec<f64>], generated: &[Vec<f64>], seed: u64) -> Result<(f64, f64)> {
    let normed = fid::normalize_by(reference, &[reference, generated]);
    let f = fid(&normed[0], &normed[1])?;
    let d = diversity(&normed[1], generated.len() / 2, seed)?;
    Ok((f, d))
}

/// Scores generated followers against reference duets. Rhythm scores use each
/// generated sample's music beats and its leader's motion beats.
pub fn evaluate(
    generated: &[EvalSample],
    reference: &[&DuetSequence],
    skel: &Skeleton,
    seed: u64,
    config_hash: &str,
) -> Result<MetricReport> {
    if generated.len() < 2 || reference.len() < 2 {
        return Err(Error::invalid("evaluation needs at least two generated and two reference samples"));
    }
    let gen_duets: Vec<&DuetSequence> = generated.iter().map(|s| s.duet).collect();
    let g = feature_sets(&gen_duets, skel);
    let r = feature_sets(reference, skel);
    let (fid_k, div_k) = fid_div(&r.kinematic.vectors, &g.kinematic.vectors, seed)?;
    let (fid_g, div_g) = fid_div(&r.graphical.vectors, &g.graphical.vectors, seed)?;
    let (fid_cd, div_cd) = fid_div(&r.cross.vectors, &g.cross.vectors, seed)?;
    let mut bas_sum = 0.0;
    let mut bas_n = 0;
    let mut bed_sum = 0.0;
    let mut bed_n = 0;
    for s in generated {
        let fps = s.duet.fps;
        let sigma = SIGMA_FRAMES / fps;
        let fb = motion_beats(&positions_of(&s.duet.follower), fps);
        if !s.music_beats.is_empty() {
            bas_sum += bas(&fb, s.music_beats, sigma)?;
            bas_n += 1;
        }
        let lb = motion_beats(&positions_of(&s.duet.leader), fps);
        if !lb.is_empty() {
            bed_sum += bed(&lb, &fb, sigma)?;
            bed_n += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(MetricReport {
        fid_k,
        fid_g,
        div_k,
        div_g,
        fid_cd,
        div_cd,
        bed: mean(bed_sum, bed_n),
        bas: mean(bas_sum, bas_n),
        generated_samples: generated.len(),
        reference_samples: reference.len(),
        config_hash: config_hash.to_string(),
    })
}

impl MetricReport {
    const COLUMNS: [&'static str; 8] = ["FID_k", "FID_g", "Div_k", "Div_g", "FID_cd", "Div_cd", "BED", "BAS"];

    pub fn values(&self) -> [f64; 8] {
        [self.fid_k, self.fid_g, self.div_k, self.div_g, self.fid_cd, self.div_cd, self.bed, self.bas]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned table grouped as solo, interactive and rhythmic columns.
    pub fn table(rows: &[(&str, &MetricReport)]) -> String {
        let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:name_w$} | {:^35} | {:^17} | {:^17}",
            "", "Solo", "Interactive", "Rhythmic"
        );
        let _ = write!(s, "{:name_w$} |", "Method");
        for (i, c) in Self::COLUMNS.iter().enumerate() {
            let _ = write!(s, " {c:>8}");
            if i == 3 || i == 5 {
                let _ = write!(s, " |");
            }
        }
        s.push('\n');
        for (name, r) in rows {
            let _ = write!(s, "{name:name_w$} |");
            for (i, v) in r.values().iter().enumerate() {
                let _ = write!(s, " {v:>8.4}");
                if i == 3 || i == 5 {
                    let _ = write!(s, " |");
                }
            }
            s.push('\n');
        }
        s
    }

    /// `method,metric,value` rows for plotting.
    pub fn csv(rows: &[(&str, &MetricReport)]) -> String {
        let mut s = String::from("method,metric,value\n");
        for (name, r) in rows {
            for (c, v) in Self::COLUMNS.iter().zip(r.values()) {
                let _ = writeln!(s, "{name},{c},{v}");
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
