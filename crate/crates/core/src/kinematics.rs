//! Cartesian joint positions to generalized coordinates on an open kinematic chain.
//!
//! The generalized coordinate vector of a frame is the root orientation
//! followed by one local rotation per joint of the rotation set (all joints
//! with both a parent and a grandparent, in increasing joint order). In 3-D
//! each entry is an axis-angle 3-vector; in 2-D each is a signed angle.
//! Velocities and accelerations are first-order backward differences with
//! `Δt = 1` frame.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::linalg::{cross3, dot3, from_columns, matrix_to_axis_angle, normalize3, scale3, sub3, Mat3, Vec3};

/// Norm below which a bone or frame axis is considered zero.
pub const GEOMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialDim {
    Two,
    Three,
}

impl SpatialDim {
    pub fn from_usize(dim: usize) -> Result<Self> {
        match dim {
            2 => Ok(SpatialDim::Two),
            3 => Ok(SpatialDim::Three),
            _ => Err(Error::InvalidTopology("spatial dimension must be 2 or 3")),
        }
    }

    pub fn as_usize(self) -> usize {
        match self {
            SpatialDim::Two => 2,
            SpatialDim::Three => 3,
        }
    }

    /// Coordinates contributed by one rotation.
    fn rotation_width(self) -> usize {
        match self {
            SpatialDim::Two => 1,
            SpatialDim::Three => 3,
        }
    }
}

/// Which joints drive the root frame: root, spine-mid, right hip, left hip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameJoints {
    pub root: usize,
    pub spine_mid: usize,
    pub right_hip: usize,
    pub left_hip: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    parents: Vec<Option<usize>>,
    root: usize,
    frame_joints: FrameJoints,
    rotation_set: Vec<usize>,
    dim: SpatialDim,
}

impl SkeletonTopology {
    /// Validates that `parents` is a single tree and derives the rotation set.
    pub fn new(parents: Vec<Option<usize>>, frame_joints: FrameJoints, dim: SpatialDim) -> Result<Self> {
        let v = parents.len();
        if v == 0 {
            return Err(Error::InvalidTopology("no joints"));
        }
        let mut roots = parents.iter().enumerate().filter(|(_, p)| p.is_none());
        let root = match (roots.next(), roots.next()) {
            (Some((r, _)), None) => r,
            (None, _) => return Err(Error::InvalidTopology("no root joint")),
            (Some(_), Some(_)) => return Err(Error::InvalidTopology("more than one root joint")),
        };
        if parents.iter().flatten().any(|&p| p >= v) {
            return Err(Error::InvalidTopology("parent index out of range"));
        }
        let mut depth = vec![usize::MAX; v];
        depth[root] = 0;
        for j in 0..v {
            // walk up to a joint with known depth; a walk longer than V means a cycle
            let mut path = Vec::new();
            let mut cur = j;
            while depth[cur] == usize::MAX {
                path.push(cur);
                if path.len() > v {
                    return Err(Error::InvalidTopology("parent array contains a cycle"));
                }
                cur = parents[cur].ok_or(Error::InvalidTopology("joint not reachable from root"))?;
            }
            let mut d = depth[cur];
            for &p in path.iter().rev() {
                d += 1;
                depth[p] = d;
            }
        }
        let fj = [
            frame_joints.root,
            frame_joints.spine_mid,
            frame_joints.right_hip,
            frame_joints.left_hip,
        ];
        if fj.iter().any(|&j| j >= v) {
            return Err(Error::InvalidTopology("frame joint index out of range"));
        }
        if frame_joints.root != root {
            return Err(Error::InvalidTopology("first frame joint must be the root"));
        }
        let rotation_set = (0..v).filter(|&j| depth[j] >= 2).collect();
        Ok(Self {
            parents,
            root,
            frame_joints,
            rotation_set,
            dim,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn frame_joints(&self) -> FrameJoints {
        self.frame_joints
    }

    pub fn rotation_set(&self) -> &[usize] {
        &self.rotation_set
    }

    pub fn dim(&self) -> SpatialDim {
        self.dim
    }

    /// Degrees of freedom `D` of the generalized coordinate vector.
    pub fn dof(&self) -> usize {
        let w = self.dim.rotation_width();
        w + w * self.rotation_set.len()
    }
}

/// `T x V x dim` joint positions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: usize,
    joints: usize,
    dim: SpatialDim,
    positions: Vec<f64>,
}

impl PoseSequence {
    pub fn new(frames: usize, joints: usize, dim: SpatialDim, positions: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::DegenerateLength { len: 0, min: 1 });
        }
        check_len("pose positions", frames * joints * dim.as_usize(), positions.len())?;
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("pose coordinates must be finite"));
        }
        Ok(Self {
            frames,
            joints,
            dim,
            positions,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn dim(&self) -> SpatialDim {
        self.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// All joints of frame `t`, `V x dim`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let stride = self.joints * self.dim.as_usize();
        &self.positions[t * stride..(t + 1) * stride]
    }
}

/// How the frame before the first one is filled when differencing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryPadding {
    /// `q(-1) = 0` and `q̇(-1) = 0`.
    #[default]
    Zero,
    /// `q(-1) = q(0)`, so `q̇(0) = 0`.
    Replicate,
}

/// Per-frame `q`, `q̇`, `q̈`, each `T x D` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedState {
    pub frames: usize,
    pub dof: usize,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

impl GeneralizedState {
    /// Differences a `T x D` coordinate track into velocities and accelerations.
    pub fn from_coordinates(q: Vec<f64>, frames: usize, dof: usize, padding: BoundaryPadding) -> Result<Self> {
        if frames == 0 {
            return Err(Error::DegenerateLength { len: 0, min: 1 });
        }
        check_len("coordinate track", frames * dof, q.len())?;
        let mut qd = vec![0.0; q.len()];
        let mut qdd = vec![0.0; q.len()];
        for t in 0..frames {
            for i in 0..dof {
                let k = t * dof + i;
                let prev_q = match (t, padding) {
                    (0, BoundaryPadding::Zero) => 0.0,
                    (0, BoundaryPadding::Replicate) => q[k],
                    _ => q[k - dof],
                };
                qd[k] = q[k] - prev_q;
                let prev_qd = if t == 0 { 0.0 } else { qd[k - dof] };
                qdd[k] = qd[k] - prev_qd;
            }
        }
        Ok(Self { frames, dof, q, qd, qdd })
    }

    pub fn q_at(&self, t: usize) -> &[f64] {
        &self.q[t * self.dof..(t + 1) * self.dof]
    }

    pub fn qd_at(&self, t: usize) -> &[f64] {
        &self.qd[t * self.dof..(t + 1) * self.dof]
    }

    pub fn qdd_at(&self, t: usize) -> &[f64] {
        &self.qdd[t * self.dof..(t + 1) * self.dof]
    }
}

/// Gram-Schmidt body frame `[x | y | z]` at the root.
pub fn root_frame(root: Vec3, spine_mid: Vec3, right_hip: Vec3, left_hip: Vec3) -> Result<Mat3> {
    let v_y = sub3(spine_mid, root);
    let v_x_raw = sub3(right_hip, left_hip);
    let y_axis = normalize3(v_y, GEOMETRY_TOL).ok_or(Error::DegenerateFrame)?;
    let z_axis = normalize3(cross3(v_x_raw, y_axis), GEOMETRY_TOL).ok_or(Error::DegenerateFrame)?;
    let x_axis = normalize3(cross3(y_axis, z_axis), GEOMETRY_TOL).ok_or(Error::DegenerateFrame)?;
    Ok(from_columns(x_axis, y_axis, z_axis))
}

/// Axis-angle of the root body frame.
pub fn compute_root_orientation(root: Vec3, spine_mid: Vec3, right_hip: Vec3, left_hip: Vec3) -> Result<Vec3> {
    root_frame(root, spine_mid, right_hip, left_hip).map(|r| matrix_to_axis_angle(&r))
}

/// Signed angle of the 2-D spine vector from the world up axis `(0, 1)`.
pub fn compute_root_angle_2d(root: [f64; 2], spine_mid: [f64; 2]) -> Result<f64> {
    let v = [spine_mid[0] - root[0], spine_mid[1] - root[1]];
    if libm::hypot(v[0], v[1]) < GEOMETRY_TOL {
        return Err(Error::DegenerateFrame);
    }
    Ok(wrap_signed_angle(libm::atan2(-v[0], v[1])))
}

/// Axis-angle that rotates the direction of `parent_bone` onto `child_bone`.
///
/// The axis is normalized only when the cross product exceeds the geometry
/// tolerance; otherwise the rotation collapses to zero.
pub fn bone_rotation_3d(parent_bone: Vec3, child_bone: Vec3) -> Option<Vec3> {
    let a = normalize3(parent_bone, GEOMETRY_TOL)?;
    let b = normalize3(child_bone, GEOMETRY_TOL)?;
    let theta = libm::acos(dot3(a, b).clamp(-1.0, 1.0));
    let cross = cross3(a, b);
    Some(match normalize3(cross, GEOMETRY_TOL) {
        Some(axis) => scale3(axis, theta),
        None => [0.0; 3],
    })
}

/// Signed angle in `(-π, π]` from `parent_bone` to `child_bone`.
pub fn bone_rotation_2d(parent_bone: [f64; 2], child_bone: [f64; 2]) -> Option<f64> {
    if libm::hypot(parent_bone[0], parent_bone[1]) < GEOMETRY_TOL || libm::hypot(child_bone[0], child_bone[1]) < GEOMETRY_TOL {
        return None;
    }
    let cross = parent_bone[0] * child_bone[1] - parent_bone[1] * child_bone[0];
    let dot = parent_bone[0] * child_bone[0] + parent_bone[1] * child_bone[1];
    Some(wrap_signed_angle(libm::atan2(cross, dot)))
}

fn wrap_signed_angle(a: f64) -> f64 {
    if a <= -core::f64::consts::PI {
        core::f64::consts::PI
    } else {
        a
    }
}

fn joint3(frame: &[f64], j: usize) -> Vec3 {
    [frame[3 * j], frame[3 * j + 1], frame[3 * j + 2]]
}

fn joint2(frame: &[f64], j: usize) -> [f64; 2] {
    [frame[2 * j], frame[2 * j + 1]]
}

/// Local rotations of every joint in the rotation set, flattened
/// (3 entries per joint in 3-D, 1 in 2-D).
pub fn compute_local_rotations(frame: &[f64], topology: &SkeletonTopology) -> Result<Vec<f64>> {
    let dim = topology.dim();
    check_len("pose frame", topology.joint_count() * dim.as_usize(), frame.len())?;
    let mut out = Vec::with_capacity(topology.rotation_set().len() * dim.rotation_width());
    for &j in topology.rotation_set() {
        let p = topology.parent(j).ok_or(Error::InvalidTopology("rotation joint without parent"))?;
        let gp = topology
            .parent(p)
            .ok_or(Error::InvalidTopology("rotation joint without grandparent"))?;
        match dim {
            SpatialDim::Three => {
                let v_pa = sub3(joint3(frame, p), joint3(frame, gp));
                let v_child = sub3(joint3(frame, j), joint3(frame, p));
                let r = bone_rotation_3d(v_pa, v_child).ok_or(Error::ZeroBone { joint: j })?;
                out.extend_from_slice(&r);
            }
            SpatialDim::Two => {
                let (jp, jg, jj) = (joint2(frame, p), joint2(frame, gp), joint2(frame, j));
                let v_pa = [jp[0] - jg[0], jp[1] - jg[1]];
                let v_child = [jj[0] - jp[0], jj[1] - jp[1]];
                out.push(bone_rotation_2d(v_pa, v_child).ok_or(Error::ZeroBone { joint: j })?);
            }
        }
    }
    Ok(out)
}

fn root_coordinates(frame: &[f64], topology: &SkeletonTopology) -> Result<Vec<f64>> {
    let fj = topology.frame_joints();
    match topology.dim() {
        SpatialDim::Three => compute_root_orientation(
            joint3(frame, fj.root),
            joint3(frame, fj.spine_mid),
            joint3(frame, fj.right_hip),
            joint3(frame, fj.left_hip),
        )
        .map(|r| r.to_vec()),
        SpatialDim::Two => compute_root_angle_2d(joint2(frame, fj.root), joint2(frame, fj.spine_mid)).map(|a| vec![a]),
    }
}

/// Generalized coordinates of every frame, `T x D` row-major.
///
/// A degenerate root frame reuses the previous frame's root orientation
/// (zero at the first frame); zero-length bones are errors.
pub fn extract_coordinates(pose: &PoseSequence, topology: &SkeletonTopology) -> Result<Vec<f64>> {
    if pose.dim() != topology.dim() {
        return Err(Error::InvalidArgument("pose and topology spatial dimensions differ"));
    }
    check_len("pose joints", topology.joint_count(), pose.joints())?;
    let dof = topology.dof();
    let root_width = topology.dim().rotation_width();
    let mut q = Vec::with_capacity(pose.frames() * dof);
    let mut prev_root = vec![0.0; root_width];
    for t in 0..pose.frames() {
        let frame = pose.frame(t);
        let root = match root_coordinates(frame, topology) {
            Ok(r) => r,
            Err(Error::DegenerateFrame) => prev_root.clone(),
            Err(e) => return Err(e),
        };
        q.extend_from_slice(&root);
        q.extend(compute_local_rotations(frame, topology)?);
        prev_root = root;
    }
    Ok(q)
}

pub fn assemble_state(pose: &PoseSequence, topology: &SkeletonTopology, padding: BoundaryPadding) -> Result<GeneralizedState> {
    let q = extract_coordinates(pose, topology)?;
    GeneralizedState::from_coordinates(q, pose.frames(), topology.dof(), padding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{axis_angle_to_matrix, mat3_vec};
    use core::f64::consts::{FRAC_PI_2, PI};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    /// root(0) - spine(1) - neck(2) - head(3); root - rhip(4) - rknee(5); root - lhip(6)
    fn toy_topology(dim: SpatialDim) -> SkeletonTopology {
        let parents = vec![None, Some(0), Some(1), Some(2), Some(0), Some(4), Some(0)];
        let fj = FrameJoints {
            root: 0,
            spine_mid: 1,
            right_hip: 4,
            left_hip: 6,
        };
        SkeletonTopology::new(parents, fj, dim).unwrap()
    }

    #[test]
    fn canonical_pose_is_identity() {
        let r = compute_root_orientation([0.0; 3], [0.0, 1.0, 0.0], [0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]).unwrap();
        assert_eq!(r, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn quarter_turn_about_y() {
        // independent oracle: rotate the canonical joints, then read the angle
        // back from the trace and the antisymmetric part directly
        let rot = axis_angle_to_matrix([0.0, FRAC_PI_2, 0.0]);
        let p = |v: Vec3| mat3_vec(&rot, v);
        let got = compute_root_orientation(p([0.0; 3]), p([0.0, 1.0, 0.0]), p([0.5, 0.0, 0.0]), p([-0.5, 0.0, 0.0])).unwrap();
        let frame = root_frame(p([0.0; 3]), p([0.0, 1.0, 0.0]), p([0.5, 0.0, 0.0]), p([-0.5, 0.0, 0.0])).unwrap();
        let trace = frame[0][0] + frame[1][1] + frame[2][2];
        let theta = libm::acos((trace - 1.0) / 2.0);
        let axis_y = (frame[0][2] - frame[2][0]) / (2.0 * libm::sin(theta));
        assert!((theta - FRAC_PI_2).abs() < 1e-12 && (axis_y - 1.0).abs() < 1e-12);
        assert!(close(&got, &[0.0, FRAC_PI_2, 0.0], 1e-12), "{got:?}");
    }

    #[test]
    fn zero_spine_is_degenerate() {
        let err = compute_root_orientation([1.0; 3], [1.0; 3], [0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]);
        assert_eq!(err, Err(Error::DegenerateFrame));
        let collinear = compute_root_orientation([0.0; 3], [0.0, 1.0, 0.0], [0.0, 2.0, 0.0], [0.0, -1.0, 0.0]);
        assert_eq!(collinear, Err(Error::DegenerateFrame));
    }

    #[test]
    fn local_rotation_examples() {
        assert_eq!(bone_rotation_3d([0.0, 1.0, 0.0], [0.0, 2.0, 0.0]), Some([0.0; 3]));
        let r = bone_rotation_3d([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap();
        assert!(close(&r, &[0.0, 0.0, FRAC_PI_2], 1e-15));
        // antiparallel: axis undefined, collapses to zero
        assert_eq!(bone_rotation_3d([1.0, 0.0, 0.0], [-3.0, 0.0, 0.0]), Some([0.0; 3]));
        assert_eq!(bone_rotation_3d([0.0; 3], [1.0, 0.0, 0.0]), None);
    }

    #[test]
    fn signed_angle_2d() {
        // oracle: atan2(cross, dot) written out for these vectors
        let (pa, ch) = ([1.0, 0.0], [0.0, -1.0]);
        let oracle = libm::atan2(pa[0] * ch[1] - pa[1] * ch[0], pa[0] * ch[0] + pa[1] * ch[1]);
        assert_eq!(oracle, -FRAC_PI_2);
        assert_eq!(bone_rotation_2d(pa, ch), Some(oracle));
        assert_eq!(bone_rotation_2d([1.0, 0.0], [-1.0, -0.0]), Some(PI));
        assert_eq!(bone_rotation_2d([1.0, 0.0], [0.0, 0.0]), None);
    }

    #[test]
    fn topology_validation() {
        let fj = FrameJoints {
            root: 0,
            spine_mid: 1,
            right_hip: 1,
            left_hip: 1,
        };
        let two_roots = SkeletonTopology::new(vec![None, None], fj, SpatialDim::Three);
        assert!(matches!(two_roots, Err(Error::InvalidTopology(_))));
        let cycle = SkeletonTopology::new(vec![None, Some(2), Some(1)], fj, SpatialDim::Three);
        assert!(matches!(cycle, Err(Error::InvalidTopology(_))));
        let t = toy_topology(SpatialDim::Three);
        assert_eq!(t.rotation_set(), &[2, 3, 5]);
        assert_eq!(t.dof(), 3 + 9);
        assert_eq!(toy_topology(SpatialDim::Two).dof(), 1 + 3);
    }

    #[test]
    fn differences_of_scalar_track() {
        let s = GeneralizedState::from_coordinates(vec![0.0, 1.0, 3.0], 3, 1, BoundaryPadding::Zero).unwrap();
        assert_eq!(s.qd, vec![0.0, 1.0, 2.0]);
        assert_eq!(s.qdd, vec![0.0, 1.0, 1.0]);
        let r = GeneralizedState::from_coordinates(vec![2.0, 1.0, 3.0], 3, 1, BoundaryPadding::Replicate).unwrap();
        assert_eq!(r.qd, vec![0.0, -1.0, 2.0]);
        assert_eq!(r.qdd, vec![0.0, -1.0, 3.0]);
    }

    fn toy_frame() -> Vec<f64> {
        vec![
            0.0, 0.0, 0.0, // root
            0.0, 1.0, 0.1, // spine
            0.1, 1.8, 0.0, // neck
            0.0, 2.2, 0.3, // head
            0.4, 0.0, 0.0, // rhip
            0.45, -0.9, 0.1, // rknee
            -0.4, 0.0, 0.0, // lhip
        ]
    }

    #[test]
    fn static_pose_has_zero_motion_after_transient() {
        let topo = toy_topology(SpatialDim::Three);
        let frame = toy_frame();
        let positions: Vec<f64> = (0..5).flat_map(|_| frame.iter().copied()).collect();
        let pose = PoseSequence::new(5, 7, SpatialDim::Three, positions).unwrap();
        let s = assemble_state(&pose, &topo, BoundaryPadding::Zero).unwrap();
        let d = s.dof;
        for t in 1..5 {
            assert_eq!(s.q_at(t), s.q_at(0));
            assert!(s.qd_at(t).iter().all(|&x| x == 0.0));
        }
        for t in 2..5 {
            assert!(s.qdd_at(t).iter().all(|&x| x == 0.0));
        }
        assert_eq!(s.q.len(), 5 * d);
    }

    #[test]
    fn degenerate_root_reuses_previous_frame() {
        let topo = toy_topology(SpatialDim::Three);
        let good = toy_frame();
        let mut bad = good.clone();
        bad[3..6].copy_from_slice(&[0.0, 0.0, 0.0]); // spine collapses onto root
        bad[6..9].copy_from_slice(&[0.0, 0.8, 0.0]); // keep the neck bone nonzero
        let positions: Vec<f64> = good.iter().chain(bad.iter()).copied().collect();
        let pose = PoseSequence::new(2, 7, SpatialDim::Three, positions).unwrap();
        let s = assemble_state(&pose, &topo, BoundaryPadding::Zero);
        // the neck's parent bone (spine - root) is now zero, so this is a ZeroBone
        assert_eq!(s, Err(Error::ZeroBone { joint: 2 }));

        let first_bad: Vec<f64> = {
            let mut f = good.clone();
            // hips along the spine direction: no lateral axis
            f[12..15].copy_from_slice(&[0.0, 0.5, 0.05]);
            f[18..21].copy_from_slice(&[0.0, -0.5, -0.05]);
            f
        };
        let positions: Vec<f64> = first_bad.iter().chain(good.iter()).chain(first_bad.iter()).copied().collect();
        let pose = PoseSequence::new(3, 7, SpatialDim::Three, positions).unwrap();
        let s = assemble_state(&pose, &topo, BoundaryPadding::Zero).unwrap();
        assert_eq!(&s.q_at(0)[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&s.q_at(2)[..3], &s.q_at(1)[..3]);
    }
}
