//! On-disk formats: skeleton topology (JSON), poses (JSON Lines, one frame
//! per line), oracle datasets (JSON Lines, one sequence per line) and frame
//! label tables (CSV).

use std::path::Path;

use lagdyn_core::kinematics::{FrameJoints, PoseSequence, SkeletonTopology, SpatialDim};
use lagdyn_core::oracle::{LabeledSequence, LinkChain};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_file, AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub joints: Vec<String>,
    /// Parent index per joint, `-1` for the root.
    pub parents: Vec<i64>,
    /// Names of the root, spine-mid, right-hip and left-hip joints.
    pub frame_joints: [String; 4],
    pub dim: usize,
}

impl TopologyFile {
    pub fn to_topology(&self) -> AppResult<SkeletonTopology> {
        if self.joints.len() != self.parents.len() {
            return Err(AppError::Data("joints and parents differ in length".into()));
        }
        let parents = self
            .parents
            .iter()
            .map(|&p| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                _ => Err(AppError::Data(format!("invalid parent index {p}"))),
            })
            .collect::<AppResult<Vec<_>>>()?;
        let find = |name: &str| {
            self.joints
                .iter()
                .position(|j| j == name)
                .ok_or_else(|| AppError::Data(format!("unknown frame joint {name}")))
        };
        let fj = FrameJoints {
            root: find(&self.frame_joints[0])?,
            spine_mid: find(&self.frame_joints[1])?,
            right_hip: find(&self.frame_joints[2])?,
            left_hip: find(&self.frame_joints[3])?,
        };
        Ok(SkeletonTopology::new(parents, fj, SpatialDim::from_usize(self.dim)?)?)
    }
}

pub fn read_topology(path: &Path) -> AppResult<SkeletonTopology> {
    let file: TopologyFile = serde_json::from_str(&read_to_string(path)?).map_err(|e| AppError::io(path, e))?;
    file.to_topology()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseLine {
    pub t: i64,
    pub xyz: Vec<Vec<f64>>,
}

pub fn parse_poses(text: &str, dim: SpatialDim) -> AppResult<PoseSequence> {
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: PoseLine = serde_json::from_str(line).map_err(|e| AppError::Data(format!("pose line {}: {e}", i + 1)))?;
        frames.push(p);
    }
    frames.sort_by_key(|p| p.t);
    let joints = frames.first().map_or(0, |f| f.xyz.len());
    let mut positions = Vec::with_capacity(frames.len() * joints * dim.as_usize());
    for f in &frames {
        if f.xyz.len() != joints || f.xyz.iter().any(|p| p.len() != dim.as_usize()) {
            return Err(AppError::Data(format!("frame {} has inconsistent joint coordinates", f.t)));
        }
        positions.extend(f.xyz.iter().flatten());
    }
    Ok(PoseSequence::new(frames.len(), joints, dim, positions)?)
}

pub fn read_poses(path: &Path, dim: SpatialDim) -> AppResult<PoseSequence> {
    parse_poses(&read_to_string(path)?, dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    pub gravity: f64,
    pub friction: Vec<f64>,
}

impl ChainRecord {
    pub fn from_chain(c: &LinkChain) -> Self {
        Self {
            masses: c.masses().to_vec(),
            lengths: c.lengths().to_vec(),
            gravity: c.gravity(),
            friction: c.friction().to_vec(),
        }
    }

    pub fn to_chain(&self) -> AppResult<LinkChain> {
        Ok(LinkChain::new(
            self.masses.clone(),
            self.lengths.clone(),
            self.gravity,
            self.friction.clone(),
        )?)
    }
}

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub chain: ChainRecord,
    pub dt: f64,
    pub q: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub boundaries: Vec<usize>,
}

impl SequenceRecord {
    pub fn new(chain: &LinkChain, seq: &LabeledSequence) -> Self {
        let rows = |v: &[f64]| v.chunks(seq.dof).map(|r| r.to_vec()).collect();
        Self {
            chain: ChainRecord::from_chain(chain),
            dt: seq.dt,
            q: rows(&seq.q),
            tau: rows(&seq.tau),
            labels: seq.labels.clone(),
            boundaries: seq.boundaries.clone(),
        }
    }

    pub fn to_sequence(&self) -> AppResult<(LinkChain, LabeledSequence)> {
        let chain = self.chain.to_chain()?;
        let dof = chain.links();
        let t = self.labels.len();
        if self.q.len() != t || self.tau.len() != t || self.q.iter().chain(&self.tau).any(|r| r.len() != dof) {
            return Err(AppError::Data("sequence arrays disagree with labels or chain size".into()));
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) || self.boundaries.iter().any(|&b| b >= t) {
            return Err(AppError::Data("boundaries must be increasing frame indices".into()));
        }
        if !(self.dt > 0.0) {
            return Err(AppError::Data("dt must be positive".into()));
        }
        Ok((
            chain,
            LabeledSequence {
                dt: self.dt,
                dof,
                q: self.q.concat(),
                tau: self.tau.concat(),
                labels: self.labels.clone(),
                boundaries: self.boundaries.clone(),
            },
        ))
    }
}

pub fn write_dataset(path: &Path, chain: &LinkChain, data: &[LabeledSequence]) -> AppResult<()> {
    let mut out = String::new();
    for s in data {
        out.push_str(&serde_json::to_string(&SequenceRecord::new(chain, s)).map_err(|e| AppError::Data(e.to_string()))?);
        out.push('\n');
    }
    write_file(path, out)
}

pub fn parse_dataset(text: &str) -> AppResult<Vec<(LinkChain, LabeledSequence)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let r: SequenceRecord = serde_json::from_str(line).map_err(|e| AppError::Data(format!("dataset line {}: {e}", i + 1)))?;
            r.to_sequence()
        })
        .collect()
}

pub fn read_dataset(path: &Path) -> AppResult<Vec<(LinkChain, LabeledSequence)>> {
    parse_dataset(&read_to_string(path)?).map_err(|e| match e {
        AppError::Data(m) => AppError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Deserialize, Serialize)]
struct LabelRow {
    frame: usize,
    label: usize,
}

/// `frame,label` table; rows may come in any order but must cover
/// `0..T` exactly once.
pub fn parse_labels(text: &str) -> AppResult<Vec<usize>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows: Vec<LabelRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| AppError::Data(format!("label table: {e}")))?;
    rows.sort_by_key(|r| r.frame);
    if rows.iter().enumerate().any(|(i, r)| r.frame != i) {
        return Err(AppError::Data("label frames must cover 0..T exactly once".into()));
    }
    Ok(rows.into_iter().map(|r| r.label).collect())
}

pub fn read_labels(path: &Path) -> AppResult<Vec<usize>> {
    parse_labels(&read_to_string(path)?).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

pub fn labels_csv(labels: &[usize]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (frame, &label) in labels.iter().enumerate() {
        w.serialize(LabelRow { frame, label }).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}
