//! Frame accuracy, segmental edit score and segment F1 at IoU thresholds.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Maximal run of one class over frames `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn iou(&self, other: &Segment) -> f64 {
        let inter = self.end.min(other.end).saturating_sub(self.start.max(other.start));
        let union = self.len() + other.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

pub fn segments(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (t, &c) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.class == c => s.end = t + 1,
            _ => out.push(Segment {
                class: c,
                start: t,
                end: t + 1,
            }),
        }
    }
    out
}

/// Labels from boundary frames: the frames before the first boundary get
/// class 0, the next run class 1, and so on.
pub fn labels_from_boundaries(frames: usize, boundaries: &[usize]) -> Vec<usize> {
    let mut labels = vec![0; frames];
    let mut class = 0;
    let mut next = boundaries.iter().peekable();
    for (t, l) in labels.iter_mut().enumerate() {
        while next.peek().is_some_and(|&&b| b <= t) {
            next.next();
            class += 1;
        }
        *l = class;
    }
    labels
}

fn check_pair(pred: &[usize], gt: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

/// Percentage of frames with matching labels.
pub fn frame_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    check_pair(pred, gt)?;
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

/// `100 (1 - lev / max(#segments))` over the segment class strings.
pub fn segmental_edit(pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptySequence);
    }
    let p: Vec<usize> = segments(pred).iter().map(|s| s.class).collect();
    let g: Vec<usize> = segments(gt).iter().map(|s| s.class).collect();
    Ok(100.0 * (1.0 - levenshtein(&p, &g) as f64 / p.len().max(g.len()) as f64))
}

/// Segment F1 (percentage) where a prediction is a true positive when it is
/// matched one-to-one with a same-class ground-truth segment of IoU above
/// `threshold`. Pairs are matched greedily by decreasing IoU, ties going to
/// the earlier ground-truth segment.
pub fn f1_at_k(pred: &[usize], gt: &[usize], threshold: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument("IoU threshold must lie in (0, 1)"));
    }
    let (ps, gs) = (segments(pred), segments(gt));
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in ps.iter().enumerate() {
        for (j, g) in gs.iter().enumerate() {
            if p.class == g.class {
                let iou = p.iou(g);
                if iou > threshold {
                    pairs.push((iou, j, i));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_p, mut used_g) = (vec![false; ps.len()], vec![false; gs.len()]);
    let mut tp = 0usize;
    for (_, j, i) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            tp += 1;
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / ps.len() as f64;
    let recall = tp as f64 / gs.len() as f64;
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Boundary recall: fraction of true boundaries with a proposal within
/// `tolerance` frames, each proposal used at most once (nearest first).
pub fn boundary_recall(proposed: &[usize], truth: &[usize], tolerance: usize) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (j, &b) in truth.iter().enumerate() {
        for (i, &p) in proposed.iter().enumerate() {
            let d = p.abs_diff(b);
            if d <= tolerance {
                pairs.push((d, j, i));
            }
        }
    }
    pairs.sort_unstable();
    let (mut used_p, mut used_t) = (vec![false; proposed.len()], vec![false; truth.len()]);
    let mut hits = 0;
    for (_, j, i) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            hits += 1;
        }
    }
    Some(hits as f64 / truth.len() as f64)
}
