//! Kinematic chains parsed from URDF, forward kinematics and keypoint extraction.
//!
//! Only the kinematic subset of URDF is read: `revolute` (and `continuous`,
//! treated as an unlimited revolute joint), `prismatic` and `fixed` joints.
//! Visual, collision and inertial tags are ignored.
//!
//! A chain holds one or two arms. The joint tree may branch once (the
//! left/right split of a bimanual robot); every other link has at most one
//! non-gripper child. Gripper joints are recognized by name and must hang off
//! the terminal link of an arm.

use std::collections::{HashMap, HashSet};
use std::fmt;

use nalgebra::Vector3;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::{axis_angle, Rigid};

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("URDF parse error at line {line}, column {column}: {message}")]
    Parse { line: u32, column: u32, message: String },
    #[error("URDF structure error: {0}")]
    Structure(String),
    #[error("URDF validation error at line {line}: {message}")]
    Validation { line: u32, message: String },
    #[error("joint vector has {got} values, arm {arm} expects {expected}")]
    Dimension { arm: Arm, expected: usize, got: usize },
    #[error("chain has no {0} arm")]
    MissingArm(Arm),
    #[error("invalid chain document: {0}")]
    Document(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Left, Arm::Right];

    pub fn index(self) -> usize {
        match self {
            Arm::Left => 0,
            Arm::Right => 1,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Left => "left",
            Arm::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    /// Static transform from the parent link frame to the joint frame.
    pub origin: Rigid,
    /// Unit motion axis in the joint frame.
    pub axis: Vector3<f64>,
    pub limits: Option<(f64, f64)>,
    pub parent_link: String,
    pub child_link: String,
}

impl JointSpec {
    pub fn is_movable(&self) -> bool {
        self.kind != JointKind::Fixed
    }

    /// Transform induced by joint value `q`.
    pub fn motion(&self, q: f64) -> Rigid {
        match self.kind {
            JointKind::Revolute => Rigid::from_rotation(axis_angle(&self.axis, q)),
            JointKind::Prismatic => Rigid::from_translation(self.axis * q),
            JointKind::Fixed => Rigid::identity(),
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.is_movable() && (self.axis.norm() - 1.0).abs() > 1e-9 {
            return Err(format!("joint '{}' axis is not unit length", self.name));
        }
        if !self.origin.is_valid(1e-9) {
            return Err(format!("joint '{}' origin is not a rigid transform", self.name));
        }
        if let Some((lo, hi)) = self.limits {
            if !(lo <= hi) {
                return Err(format!("joint '{}' has lower limit above upper", self.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperJoint {
    pub joint: JointSpec,
    /// Maximum finger displacement in meters.
    pub d_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmChain {
    pub arm: Arm,
    pub base_transform: Rigid,
    /// Base-to-tip order, fixed joints included.
    pub joints: Vec<JointSpec>,
    pub grippers: Vec<GripperJoint>,
}

impl ArmChain {
    /// Number of joint values consumed by forward kinematics.
    pub fn dof(&self) -> usize {
        self.joints.iter().filter(|j| j.is_movable()).count()
    }

    pub fn movable_joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.joints.iter().filter(|j| j.is_movable())
    }

    pub fn terminal_link(&self) -> Option<&str> {
        self.joints.last().map(|j| j.child_link.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub arms: Vec<ArmChain>,
}

impl KinematicChain {
    pub fn arm(&self, arm: Arm) -> Result<&ArmChain, KinematicsError> {
        self.arms.iter().find(|a| a.arm == arm).ok_or(KinematicsError::MissingArm(arm))
    }

    /// Canonical JSON serialization (stable key order).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let chain: KinematicChain = serde_json::from_str(text).map_err(|e| KinematicsError::Document(e.to_string()))?;
        for arm in &chain.arms {
            for j in arm.joints.iter().chain(arm.grippers.iter().map(|g| &g.joint)) {
                j.check().map_err(KinematicsError::Document)?;
            }
        }
        Ok(chain)
    }
}

/// Options controlling how a URDF joint tree is split into arms.
#[derive(Debug, Clone)]
pub struct UrdfOptions {
    pub gripper_pattern: Regex,
    pub left_pattern: Regex,
    pub right_pattern: Regex,
}

impl Default for UrdfOptions {
    fn default() -> Self {
        Self {
            gripper_pattern: Regex::new("(?i)gripper|finger").unwrap(),
            left_pattern: Regex::new(r"(?i)left|(^|_)l_").unwrap(),
            right_pattern: Regex::new(r"(?i)right|(^|_)r_").unwrap(),
        }
    }
}

pub fn parse_urdf(xml_text: &str) -> Result<KinematicChain, KinematicsError> {
    parse_urdf_with(xml_text, &UrdfOptions::default())
}

struct RawJoint {
    spec: JointSpec,
    line: u32,
}

pub fn parse_urdf_with(xml_text: &str, opts: &UrdfOptions) -> Result<KinematicChain, KinematicsError> {
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| {
        let pos = e.pos();
        KinematicsError::Parse {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;

    let mut joints = Vec::new();
    for node in doc.root_element().children().filter(|n| n.has_tag_name("joint")) {
        let line = doc.text_pos_at(node.range().start).row;
        joints.push(RawJoint {
            spec: read_joint(&node, line)?,
            line,
        });
    }
    if joints.is_empty() {
        return Err(KinematicsError::Structure("URDF contains no joints".into()));
    }
    build_chain(joints, opts)
}

fn invalid(line: u32, message: impl Into<String>) -> KinematicsError {
    KinematicsError::Validation {
        line,
        message: message.into(),
    }
}

fn parse_triplet(text: &str, line: u32, what: &str) -> Result<[f64; 3], KinematicsError> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| invalid(line, format!("cannot parse {what} '{text}'")))?;
    match vals.as_slice() {
        [a, b, c] if vals.iter().all(|v| v.is_finite()) => Ok([*a, *b, *c]),
        _ => Err(invalid(line, format!("{what} needs three finite numbers, got '{text}'"))),
    }
}

fn read_joint(node: &roxmltree::Node, line: u32) -> Result<JointSpec, KinematicsError> {
    let name = node
        .attribute("name")
        .ok_or_else(|| invalid(line, "joint without name"))?
        .to_string();
    let kind = match node.attribute("type") {
        Some("revolute") | Some("continuous") => JointKind::Revolute,
        Some("prismatic") => JointKind::Prismatic,
        Some("fixed") => JointKind::Fixed,
        Some(other) => return Err(invalid(line, format!("joint '{name}': unsupported type '{other}'"))),
        None => return Err(invalid(line, format!("joint '{name}' has no type"))),
    };
    let continuous = node.attribute("type") == Some("continuous");

    let child_attr = |tag: &str| -> Result<String, KinematicsError> {
        node.children()
            .find(|c| c.has_tag_name(tag))
            .and_then(|c| c.attribute("link"))
            .map(str::to_string)
            .ok_or_else(|| invalid(line, format!("joint '{name}' has no {tag} link")))
    };
    let parent_link = child_attr("parent")?;
    let child_link = child_attr("child")?;

    let origin = match node.children().find(|c| c.has_tag_name("origin")) {
        Some(o) => {
            let xyz = o.attribute("xyz").map(|t| parse_triplet(t, line, "xyz")).transpose()?;
            let rpy = o.attribute("rpy").map(|t| parse_triplet(t, line, "rpy")).transpose()?;
            Rigid::from_urdf_origin(xyz.unwrap_or([0.0; 3]), rpy.unwrap_or([0.0; 3]))
        }
        None => Rigid::identity(),
    };

    let axis = match node.children().find(|c| c.has_tag_name("axis")) {
        Some(a) => {
            let xyz = a
                .attribute("xyz")
                .ok_or_else(|| invalid(line, format!("joint '{name}' axis has no xyz")))?;
            let v = Vector3::from(parse_triplet(xyz, line, "axis")?);
            let n = v.norm();
            if n < 1e-12 {
                return Err(invalid(line, format!("joint '{name}' has a zero axis")));
            }
            v / n
        }
        None if kind == JointKind::Fixed => Vector3::x(),
        None => return Err(invalid(line, format!("non-fixed joint '{name}' is missing <axis>"))),
    };

    let limits = if continuous {
        None
    } else {
        match node.children().find(|c| c.has_tag_name("limit")) {
            Some(l) => {
                let read = |attr: &str| -> Result<Option<f64>, KinematicsError> {
                    l.attribute(attr)
                        .map(|t| {
                            t.trim()
                                .parse::<f64>()
                                .map_err(|_| invalid(line, format!("joint '{name}': bad {attr} '{t}'")))
                        })
                        .transpose()
                };
                match (read("lower")?, read("upper")?) {
                    (None, None) => None,
                    (lo, hi) => Some((lo.unwrap_or(0.0), hi.unwrap_or(0.0))),
                }
            }
            None => None,
        }
    };

    let spec = JointSpec {
        name,
        kind,
        origin,
        axis,
        limits,
        parent_link,
        child_link,
    };
    spec.check().map_err(|m| invalid(line, m))?;
    Ok(spec)
}

fn build_chain(joints: Vec<RawJoint>, opts: &UrdfOptions) -> Result<KinematicChain, KinematicsError> {
    let mut seen_child = HashSet::new();
    for j in &joints {
        if !seen_child.insert(j.spec.child_link.as_str()) {
            return Err(KinematicsError::Structure(format!(
                "link '{}' is the child of more than one joint",
                j.spec.child_link
            )));
        }
    }
    let roots: Vec<&str> = joints
        .iter()
        .map(|j| j.spec.parent_link.as_str())
        .filter(|p| !seen_child.contains(p))
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    let root = match roots.as_slice() {
        [r] => r.to_string(),
        [] => return Err(KinematicsError::Structure("joint graph is cyclic (no root link)".into())),
        many => {
            let mut many = many.to_vec();
            many.sort_unstable();
            return Err(KinematicsError::Structure(format!("multiple root links: {many:?}")));
        }
    };

    let is_gripper = |j: &RawJoint| opts.gripper_pattern.is_match(&j.spec.name);
    let mut children: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut gripper_children: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, j) in joints.iter().enumerate() {
        let map = if is_gripper(j) { &mut gripper_children } else { &mut children };
        map.entry(j.spec.parent_link.as_str()).or_default().push(i);
    }

    let (trunk, split) = walk(&joints, &children, &root, true)?;
    let mut branches: Vec<Vec<usize>> = Vec::new();
    match split {
        None => branches.push(trunk.clone()),
        Some(heads) => {
            for head in heads {
                let (rest, _) = walk(&joints, &children, &joints[head].spec.child_link, false)?;
                let mut b = trunk.clone();
                b.push(head);
                b.extend(rest);
                branches.push(b);
            }
        }
    }

    let sides = assign_sides(&branches, &trunk, &joints, opts);
    let mut arms = Vec::new();
    let mut used_grippers = HashSet::new();
    for (branch, side) in branches.iter().zip(sides) {
        let terminal = branch
            .last()
            .map(|&i| joints[i].spec.child_link.clone())
            .unwrap_or_else(|| root.clone());
        let grippers = gripper_children
            .get(terminal.as_str())
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(|&i| {
                used_grippers.insert(i);
                let joint = joints[i].spec.clone();
                let d_max = joint.limits.map(|(_, hi)| hi.max(0.0)).unwrap_or(0.0);
                GripperJoint { joint, d_max }
            })
            .collect();
        arms.push(ArmChain {
            arm: side,
            base_transform: Rigid::identity(),
            joints: branch.iter().map(|&i| joints[i].spec.clone()).collect(),
            grippers,
        });
    }

    // Gripper joints must sit on an arm tip; finger sub-trees below them are ignored.
    let arm_links: HashSet<&str> = arms
        .iter()
        .flat_map(|a| a.joints.iter().map(|j| j.child_link.as_str()))
        .chain(std::iter::once(root.as_str()))
        .collect();
    for (i, j) in joints.iter().enumerate() {
        if is_gripper(j) && !used_grippers.contains(&i) && arm_links.contains(j.spec.parent_link.as_str()) {
            return Err(KinematicsError::Structure(format!(
                "gripper joint '{}' (line {}) is not attached to an arm tip",
                j.spec.name, j.line
            )));
        }
    }

    arms.sort_by_key(|a| a.arm.index());
    Ok(KinematicChain { arms })
}

/// Walks an unbranched run starting at `link`, returning its joint indices
/// and, when `allow_split`, the two joints where the run forks.
fn walk<'a>(
    joints: &'a [RawJoint],
    children: &HashMap<&'a str, Vec<usize>>,
    mut link: &'a str,
    allow_split: bool,
) -> Result<(Vec<usize>, Option<Vec<usize>>), KinematicsError> {
    let mut run = Vec::new();
    for _ in 0..=joints.len() {
        match children.get(link).map(Vec::as_slice).unwrap_or(&[]) {
            [] => return Ok((run, None)),
            [only] => {
                run.push(*only);
                link = &joints[*only].spec.child_link;
            }
            [a, b] if allow_split => return Ok((run, Some(vec![*a, *b]))),
            _ => {
                return Err(KinematicsError::Structure(format!(
                    "link '{link}' branches into several non-gripper joints"
                )))
            }
        }
    }
    Err(KinematicsError::Structure("joint graph is cyclic".into()))
}

fn assign_sides(branches: &[Vec<usize>], trunk: &[usize], joints: &[RawJoint], opts: &UrdfOptions) -> Vec<Arm> {
    let score = |branch: &[usize], re: &Regex| {
        branch[trunk.len()..]
            .iter()
            .filter(|&&i| re.is_match(&joints[i].spec.name) || re.is_match(&joints[i].spec.child_link))
            .count()
    };
    match branches {
        [single] => {
            if score(single, &opts.right_pattern) > score(single, &opts.left_pattern) {
                vec![Arm::Right]
            } else {
                vec![Arm::Left]
            }
        }
        [a, b] => {
            let a_left = score(a, &opts.left_pattern) as isize - score(a, &opts.right_pattern) as isize;
            let b_left = score(b, &opts.left_pattern) as isize - score(b, &opts.right_pattern) as isize;
            if b_left > a_left {
                vec![Arm::Right, Arm::Left]
            } else {
                vec![Arm::Left, Arm::Right]
            }
        }
        _ => unreachable!("at most two branches"),
    }
}

/// World-frame link poses for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPoseSet {
    pub base: Rigid,
    /// `poses[k]` is the pose of the child link of joint `k`.
    pub poses: Vec<Rigid>,
}

impl LinkPoseSet {
    pub fn terminal(&self) -> Rigid {
        self.poses.last().copied().unwrap_or(self.base)
    }
}

/// Composes `T_k = T_{k−1} · T_orig_k · T_mot_k(q_k)` from `base` over `joints`,
/// consuming one value of `q` per movable joint.
pub fn chain_poses(joints: &[JointSpec], base: Rigid, q: &[f64]) -> Vec<Rigid> {
    let mut values = q.iter();
    let mut pose = base;
    joints
        .iter()
        .map(|j| {
            let value = if j.is_movable() {
                *values.next().expect("joint vector length checked by caller")
            } else {
                0.0
            };
            pose = pose * j.origin * j.motion(value);
            pose
        })
        .collect()
}

pub fn forward_kinematics(chain: &KinematicChain, q: &[f64], arm: Arm) -> Result<LinkPoseSet, KinematicsError> {
    let arm_chain = chain.arm(arm)?;
    forward_kinematics_arm(arm_chain, q)
}

pub fn forward_kinematics_arm(arm: &ArmChain, q: &[f64]) -> Result<LinkPoseSet, KinematicsError> {
    let dof = arm.dof();
    if q.len() != dof {
        return Err(KinematicsError::Dimension {
            arm: arm.arm,
            expected: dof,
            got: q.len(),
        });
    }
    for (j, &v) in arm.movable_joints().zip(q) {
        if let Some((lo, hi)) = j.limits {
            if v < lo || v > hi {
                log::warn!("joint '{}' value {v} outside limits [{lo}, {hi}]", j.name);
            }
        }
    }
    Ok(LinkPoseSet {
        base: arm.base_transform,
        poses: chain_poses(&arm.joints, arm.base_transform, q),
    })
}

/// `clip(g, 0, 1) · d_max`.
pub fn gripper_displacement(g: f64, d_max: f64) -> f64 {
    g.clamp(0.0, 1.0) * d_max
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerPoints {
    /// Finger position at zero displacement.
    pub root: Vector3<f64>,
    /// Finger position at the current displacement.
    pub tip: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub arm: Arm,
    /// Skeleton points in chain order.
    pub arm_points: Vec<Vector3<f64>>,
    /// Child-link origins of movable joints, labeled by joint name.
    pub joint_points: Vec<(String, Vector3<f64>)>,
    pub fingers: Vec<FingerPoints>,
    pub ee_point: Vector3<f64>,
}

impl KeypointSet {
    pub fn empty(arm: Arm) -> Self {
        Self {
            arm,
            arm_points: Vec::new(),
            joint_points: Vec::new(),
            fingers: Vec::new(),
            ee_point: Vector3::zeros(),
        }
    }

    /// Every 3D point the renderer may draw.
    pub fn all_points(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.arm_points
            .iter()
            .chain(self.joint_points.iter().map(|(_, p)| p))
            .chain(self.fingers.iter().flat_map(|f| [&f.root, &f.tip]))
            .chain(std::iter::once(&self.ee_point))
    }
}

/// Which links contribute skeleton points. Defaults to every link origin.
#[derive(Debug, Clone, Default)]
pub struct SkeletonMask {
    /// Indexed like [`LinkPoseSet::poses`]; `None` keeps every link.
    pub links: Option<Vec<bool>>,
}

pub fn extract_keypoints(poses: &LinkPoseSet, arm: &ArmChain, g: f64) -> KeypointSet {
    extract_keypoints_masked(poses, arm, g, &SkeletonMask::default())
}

/// The skeleton starts at the arm base and follows link origins in chain
/// order; consecutive coincident points (zero-length links) are merged.
pub fn extract_keypoints_masked(poses: &LinkPoseSet, arm: &ArmChain, g: f64, mask: &SkeletonMask) -> KeypointSet {
    let mut arm_points: Vec<Vector3<f64>> = Vec::with_capacity(poses.poses.len() + 1);
    let keep = |k: usize| mask.links.as_ref().is_none_or(|m| m.get(k).copied().unwrap_or(true));
    let candidates =
        std::iter::once(poses.base.translation).chain(poses.poses.iter().enumerate().filter(|(k, _)| keep(*k)).map(|(_, p)| p.translation));
    for p in candidates {
        if arm_points.last().is_none_or(|last| (last - p).norm() > 1e-12) {
            arm_points.push(p);
        }
    }

    let joint_points = arm
        .joints
        .iter()
        .zip(&poses.poses)
        .filter(|(j, _)| j.is_movable())
        .map(|(j, p)| (j.name.clone(), p.translation))
        .collect();

    let terminal = poses.terminal();
    let fingers = arm
        .grippers
        .iter()
        .map(|gj| {
            let frame = terminal * gj.joint.origin;
            let d = gripper_displacement(g, gj.d_max);
            let root = frame.translation;
            FingerPoints {
                root,
                tip: root + frame.rotation * gj.joint.axis * d,
            }
        })
        .collect();

    KeypointSet {
        arm: arm.arm,
        arm_points,
        joint_points,
        fingers,
        ee_point: terminal.translation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    const MINIMAL: &str = r#"<robot name="m">
  <link name="base"/><link name="l1"/>
  <joint name="j1" type="revolute">
    <parent link="base"/><child link="l1"/>
    <axis xyz="0 0 1"/>
  </joint>
</robot>"#;

    #[test]
    fn minimal_single_revolute() {
        let chain = parse_urdf(MINIMAL).unwrap();
        assert_eq!(chain.arms.len(), 1);
        let arm = &chain.arms[0];
        assert_eq!(arm.joints.len(), 1);
        assert_eq!(arm.joints[0].kind, JointKind::Revolute);
        assert_eq!(arm.joints[0].origin, Rigid::identity());
        assert_eq!(arm.joints[0].axis, Vector3::z());
    }

    #[test]
    fn unclosed_tag_names_the_element() {
        let bad = r#"<robot name="m"><link name="a"><joint name="j" type="fixed"></robot>"#;
        match parse_urdf(bad) {
            Err(KinematicsError::Parse { message, line, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("joint"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_axis_is_validation_error() {
        let text = MINIMAL.replace(r#"<axis xyz="0 0 1"/>"#, "");
        match parse_urdf(&text) {
            Err(KinematicsError::Validation { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("axis"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn branching_arm_is_structure_error() {
        let text = r#"<robot name="b">
  <joint name="a" type="fixed"><parent link="base"/><child link="x"/></joint>
  <joint name="b1" type="revolute"><parent link="x"/><child link="y1"/><axis xyz="0 0 1"/></joint>
  <joint name="b2" type="revolute"><parent link="x"/><child link="y2"/><axis xyz="0 0 1"/></joint>
  <joint name="c1" type="revolute"><parent link="y1"/><child link="z1"/><axis xyz="0 0 1"/></joint>
  <joint name="c2" type="revolute"><parent link="y1"/><child link="z2"/><axis xyz="0 0 1"/></joint>
</robot>"#;
        assert!(matches!(parse_urdf(text), Err(KinematicsError::Structure(_))));
    }

    #[test]
    fn cycle_is_structure_error() {
        let text = r#"<robot name="c">
  <joint name="a" type="fixed"><parent link="p"/><child link="q"/></joint>
  <joint name="b" type="fixed"><parent link="q"/><child link="p"/></joint>
</robot>"#;
        assert!(matches!(parse_urdf(text), Err(KinematicsError::Structure(_))));
    }

    #[test]
    fn reversed_limits_rejected() {
        let text = MINIMAL.replace("<axis", r#"<limit lower="1" upper="-1"/><axis"#);
        assert!(matches!(parse_urdf(&text), Err(KinematicsError::Validation { .. })));
    }

    #[test]
    fn gripper_display() {
        assert_eq!(gripper_displacement(0.5, 0.08), 0.04);
        assert_eq!(gripper_displacement(-0.2, 0.08), 0.0);
        assert_eq!(gripper_displacement(1.7, 0.08), 0.08);
    }

    #[test]
    fn zero_motion_is_product_of_origins() {
        let chain = parse_urdf(fixtures::BIMANUAL_URDF).unwrap();
        let arm = chain.arm(Arm::Left).unwrap();
        let poses = forward_kinematics_arm(arm, &vec![0.0; arm.dof()]).unwrap();
        let mut acc = arm.base_transform;
        for (j, p) in arm.joints.iter().zip(&poses.poses) {
            acc = acc * j.origin;
            assert_relative_eq!(p.translation, acc.translation, epsilon = 1e-15);
            assert_relative_eq!(p.rotation, acc.rotation, epsilon = 1e-15);
        }
    }

    #[test]
    fn planar_two_link_closed_form() {
        let chain = parse_urdf(fixtures::PLANAR_TWO_LINK_URDF).unwrap();
        let poses = forward_kinematics(&chain, &[FRAC_PI_2, 0.0], Arm::Left).unwrap();
        assert_relative_eq!(poses.terminal().translation, Vector3::new(0.0, 2.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let chain = parse_urdf(fixtures::PLANAR_TWO_LINK_URDF).unwrap();
        assert!(matches!(
            forward_kinematics(&chain, &[0.0], Arm::Left),
            Err(KinematicsError::Dimension { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn out_of_limit_values_only_warn() {
        let chain = parse_urdf(fixtures::BIMANUAL_URDF).unwrap();
        let arm = chain.arm(Arm::Right).unwrap();
        assert!(forward_kinematics_arm(arm, &vec![10.0; arm.dof()]).is_ok());
    }

    #[test]
    fn two_link_keypoints_at_rest() {
        let chain = parse_urdf(fixtures::PLANAR_TWO_LINK_URDF).unwrap();
        let arm = chain.arm(Arm::Left).unwrap();
        let poses = forward_kinematics_arm(arm, &[0.0, 0.0]).unwrap();
        let kp = extract_keypoints(&poses, arm, 0.0);
        assert_eq!(
            kp.arm_points,
            vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)]
        );
        assert_eq!(kp.ee_point, Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(kp.joint_points.len(), 2);
    }

    #[test]
    fn fingers_collapse_at_zero_and_separate_by_two_d() {
        let chain = parse_urdf(fixtures::BIMANUAL_URDF).unwrap();
        let arm = chain.arm(Arm::Left).unwrap();
        let poses = forward_kinematics_arm(arm, &vec![0.1; arm.dof()]).unwrap();
        let closed = extract_keypoints(&poses, arm, 0.0);
        for f in &closed.fingers {
            assert_eq!(f.root, f.tip);
        }
        let open = extract_keypoints(&poses, arm, 0.5);
        let d = gripper_displacement(0.5, arm.grippers[0].d_max);
        let [a, b] = [&open.fingers[0], &open.fingers[1]];
        let sep = (a.tip - b.tip).norm() - (a.root - b.root).norm();
        assert_relative_eq!(sep, 2.0 * d, epsilon = 1e-12);
    }

    #[test]
    fn bimanual_fixture_sides_and_grippers() {
        let chain = parse_urdf(fixtures::BIMANUAL_URDF).unwrap();
        assert_eq!(chain.arms.len(), 2);
        for arm in &chain.arms {
            assert_eq!(arm.dof(), 5);
            assert_eq!(arm.grippers.len(), 2);
            assert!(arm.grippers.iter().all(|g| g.d_max == 0.04));
            let prefix = match arm.arm {
                Arm::Left => "left",
                Arm::Right => "right",
            };
            assert!(arm.joints.last().unwrap().name.starts_with(prefix));
        }
    }

    #[test]
    fn json_round_trip_is_fixpoint() {
        let chain = parse_urdf(fixtures::BIMANUAL_URDF).unwrap();
        let json = chain.to_json();
        let back = KinematicChain::from_json(&json).unwrap();
        assert_eq!(back, chain);
        assert_eq!(back.to_json(), json);
    }
}
