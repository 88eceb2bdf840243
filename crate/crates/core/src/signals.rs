//! Salient dynamic signals, hierarchical temporal gating, spatial fusion and
//! boundary proposal from signal valleys.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::nn::{sigmoid, DenseLayer, GateStageParams, Matrix};

/// Per-frame power, torque-magnitude and torque-change signals.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSignals {
    pub power: Vec<f64>,
    pub torque: Vec<f64>,
    pub torque_change: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Power,
    Torque,
    TorqueChange,
    /// Mean of the three signals, each divided by its maximum.
    NormalizedAverage,
}

impl GateSignals {
    pub fn frames(&self) -> usize {
        self.power.len()
    }

    pub fn channels(&self) -> [&[f64]; 3] {
        [&self.power, &self.torque, &self.torque_change]
    }

    /// `3 x T`, rows in the order power, torque, torque change.
    pub fn to_matrix(&self) -> Matrix {
        let t = self.frames();
        let mut data = Vec::with_capacity(3 * t);
        for c in self.channels() {
            data.extend_from_slice(c);
        }
        Matrix::from_vec(3, t, data).expect("three equal-length channels")
    }

    pub fn select(&self, kind: SignalKind) -> Vec<f64> {
        match kind {
            SignalKind::Power => self.power.clone(),
            SignalKind::Torque => self.torque.clone(),
            SignalKind::TorqueChange => self.torque_change.clone(),
            SignalKind::NormalizedAverage => {
                let scaled: Vec<Vec<f64>> = self
                    .channels()
                    .iter()
                    .map(|c| {
                        let max = c.iter().copied().fold(0.0, f64::max);
                        if max > 0.0 {
                            c.iter().map(|x| x / max).collect()
                        } else {
                            c.to_vec()
                        }
                    })
                    .collect();
                (0..self.frames())
                    .map(|t| (scaled[0][t] + scaled[1][t] + scaled[2][t]) / 3.0)
                    .collect()
            }
        }
    }
}

/// `τ` and `q̇` are `T x D` row-major.
pub fn salient_signals(tau: &[f64], qd: &[f64], frames: usize, dof: usize) -> Result<GateSignals> {
    check_len("torque sequence", frames * dof, tau.len())?;
    check_len("velocity sequence", frames * dof, qd.len())?;
    let row = |t: usize| &tau[t * dof..(t + 1) * dof];
    let power = (0..frames)
        .map(|t| row(t).iter().zip(&qd[t * dof..(t + 1) * dof]).map(|(a, b)| (a * b).abs()).sum())
        .collect();
    let torque = (0..frames).map(|t| norm(row(t).iter().copied())).collect();
    let torque_change = (0..frames)
        .map(|t| {
            if t == 0 {
                0.0
            } else {
                norm(row(t).iter().zip(row(t - 1)).map(|(a, b)| a - b))
            }
        })
        .collect();
    Ok(GateSignals {
        power,
        torque,
        torque_change,
    })
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    libm::sqrt(v.map(|x| x * x).sum())
}

/// Channel-major feature tensor, `C x T` or `C x T x V`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    frames: usize,
    joints: Option<usize>,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn temporal(channels: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        Self::build(channels, frames, None, data)
    }

    pub fn spatial(channels: usize, frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        Self::build(channels, frames, Some(joints), data)
    }

    fn build(channels: usize, frames: usize, joints: Option<usize>, data: Vec<f64>) -> Result<Self> {
        check_len("feature map size", channels * frames * joints.unwrap_or(1), data.len())?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("feature map values must be finite"));
        }
        Ok(Self {
            channels,
            frames,
            joints,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> Option<usize> {
        self.joints
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, t: usize, v: usize) -> f64 {
        let j = self.joints.unwrap_or(1);
        self.data[(c * self.frames + t) * j + v]
    }

    /// Temporal map as a `T x C` matrix.
    fn frame_rows(&self) -> Matrix {
        Matrix::from_fn(self.frames, self.channels, |t, c| self.data[c * self.frames + t])
    }
}

/// One gating stage: each gate channel passes through its own convolution
/// and a sigmoid, the feature map is modulated by each refined gate, and the
/// three modulated copies are projected back to `C` channels with a residual.
///
/// `gates_in` is `3 x T`. Returns the refined features and the `3 x T` gates.
pub fn gate_stage(h: &FeatureMap, gates_in: &Matrix, params: &GateStageParams) -> Result<(FeatureMap, Matrix)> {
    if h.joints.is_some() {
        return Err(Error::InvalidArgument("gating expects a temporal feature map"));
    }
    let (c, t) = (h.channels, h.frames);
    check_len("gate channels", 3, gates_in.rows())?;
    check_len("gate frames", t, gates_in.cols())?;
    check_len("fuse input width", 3 * c, params.fuse.inputs())?;
    check_len("fuse output width", c, params.fuse.outputs())?;

    let mut gates_out = Matrix::zeros(3, t);
    for (k, conv) in params.convs.iter().enumerate() {
        let y = conv.apply(gates_in.row(k))?;
        for (o, v) in gates_out.row_mut(k).iter_mut().zip(y) {
            *o = sigmoid(v);
        }
    }
    let rows = h.frame_rows();
    let modulated = Matrix::from_fn(t, 3 * c, |f, j| rows.get(f, j % c) * gates_out.get(j / c, f));
    let fused = params.fuse.apply_batch(&modulated)?;
    let mut data = h.data.clone();
    for ch in 0..c {
        for f in 0..t {
            data[ch * t + f] += fused.get(f, ch);
        }
    }
    Ok((FeatureMap::temporal(c, t, data)?, gates_out))
}

/// Runs the stages in order; stage 0 is fed the raw signals and stage `l`
/// the refined gates of stage `l - 1`. Returns the final features and the
/// gates of every stage.
pub fn gate_hierarchy(h: &FeatureMap, signals: &GateSignals, stages: &[GateStageParams]) -> Result<(FeatureMap, Vec<Matrix>)> {
    let mut features = h.clone();
    let mut gates = signals.to_matrix();
    let mut all = Vec::with_capacity(stages.len());
    for stage in stages {
        let (f, g) = gate_stage(&features, &gates, stage)?;
        features = f;
        all.push(g.clone());
        gates = g;
    }
    Ok((features, all))
}

/// Concatenates kinematic features (`C x T x V`) with a per-frame projection
/// of `τ` (`T x D`, projected to `C`) broadcast over the joints.
pub fn spatial_fuse(kinematic: &FeatureMap, tau: &[f64], projection: &DenseLayer) -> Result<FeatureMap> {
    let v = kinematic
        .joints
        .ok_or(Error::InvalidArgument("spatial fusion expects a joint axis"))?;
    let (c, t) = (kinematic.channels, kinematic.frames);
    check_len("projection output width", c, projection.outputs())?;
    let d = projection.inputs();
    let dynamic = projection.apply_batch(&Matrix::from_vec(t, d, tau.to_vec())?)?;
    let mut data = kinematic.data.clone();
    data.reserve(c * t * v);
    for ch in 0..c {
        for f in 0..t {
            let x = dynamic.get(f, ch);
            data.extend(core::iter::repeat_n(x, v));
        }
    }
    FeatureMap::spatial(2 * c, t, v, data)
}

/// Which extrema of the signal mark boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    #[default]
    Troughs,
    /// Maxima; detected as troughs of the negated signal.
    Peaks,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProminenceThreshold {
    Absolute(f64),
    /// Fraction of the inter-quartile range of the smoothed signal.
    IqrFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryDetector {
    pub window: usize,
    pub threshold: ProminenceThreshold,
    pub min_separation: usize,
    pub polarity: Polarity,
}

impl Default for BoundaryDetector {
    fn default() -> Self {
        Self {
            window: 9,
            threshold: ProminenceThreshold::IqrFraction(0.5),
            min_separation: 10,
            polarity: Polarity::Troughs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary {
    pub frame: usize,
    pub prominence: f64,
}

/// Boundaries ordered by frame.
pub type BoundarySet = Vec<Boundary>;

/// Centered moving average; the window shrinks at the edges.
pub fn moving_average(signal: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let (left, right) = ((w - 1) / 2, w / 2);
    let n = signal.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, x) in signal.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
    }
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(left), (i + right + 1).min(n));
            if w == 1 {
                signal[i]
            } else {
                (prefix[b] - prefix[a]) / (b - a) as f64
            }
        })
        .collect()
}

/// Linear-interpolation quantile of unsorted data, `p` in `[0, 1]`.
pub fn quantile(data: &[f64], p: f64) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut s = data.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

pub fn interquartile_range(data: &[f64]) -> f64 {
    quantile(data, 0.75) - quantile(data, 0.25)
}

/// Interior local minima (flat valleys report their middle frame) with
/// their prominence: the smaller of the highest values reached on each side
/// before the signal drops below the minimum, minus the minimum.
pub fn trough_prominences(signal: &[f64]) -> Vec<Boundary> {
    let n = signal.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if signal[i] < signal[i - 1] {
            let mut j = i;
            while j + 1 < n && signal[j + 1] == signal[i] {
                j += 1;
            }
            if j + 1 < n && signal[j + 1] > signal[i] {
                let mid = (i + j) / 2;
                let v = signal[mid];
                let mut left = v;
                for k in (0..i).rev() {
                    if signal[k] < v {
                        break;
                    }
                    left = left.max(signal[k]);
                }
                let mut right = v;
                for &x in &signal[j + 1..] {
                    if x < v {
                        break;
                    }
                    right = right.max(x);
                }
                out.push(Boundary {
                    frame: mid,
                    prominence: left.min(right) - v,
                });
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Smooths, finds valleys (or peaks) and keeps the most prominent ones that
/// clear the threshold and are at least `min_separation` frames apart.
pub fn propose_boundaries(signal: &[f64], detector: &BoundaryDetector) -> BoundarySet {
    if signal.len() < 3 {
        return Vec::new();
    }
    let mut smooth = moving_average(signal, detector.window);
    if detector.polarity == Polarity::Peaks {
        smooth.iter_mut().for_each(|x| *x = -*x);
    }
    let threshold = match detector.threshold {
        ProminenceThreshold::Absolute(v) => v,
        ProminenceThreshold::IqrFraction(f) => f * interquartile_range(&smooth),
    };
    let mut candidates: Vec<Boundary> = trough_prominences(&smooth)
        .into_iter()
        .filter(|b| b.prominence >= threshold && b.prominence > 0.0)
        .collect();
    candidates.sort_by(|a, b| b.prominence.total_cmp(&a.prominence).then(a.frame.cmp(&b.frame)));
    let mut kept: Vec<Boundary> = Vec::new();
    for b in candidates {
        if kept.iter().all(|k| k.frame.abs_diff(b.frame) >= detector.min_separation) {
            kept.push(b);
        }
    }
    kept.sort_by_key(|b| b.frame);
    kept
}
