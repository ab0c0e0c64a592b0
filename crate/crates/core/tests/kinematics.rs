//! Forward kinematics against an independent 4×4 matrix-product oracle, plus
//! structural properties of parsed chains.

use std::collections::HashMap;

use kvaf_core::fixtures::{BIMANUAL_URDF, PLANAR_TWO_LINK_URDF};
use kvaf_core::kinematics::*;
use kvaf_core::transform::{rpy_to_matrix, Rigid};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M4 = [[f64; 4]; 4];

fn mul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn eye() -> M4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn rot3(axis: usize, a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    let mut m = eye();
    let (i, j) = [(1, 2), (2, 0), (0, 1)][axis];
    m[i][i] = c;
    m[j][j] = c;
    m[i][j] = -s;
    m[j][i] = s;
    m
}

fn rodrigues(k: [f64; 3], a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    let v = 1.0 - c;
    let [x, y, z] = k;
    [
        [c + x * x * v, x * y * v - z * s, x * z * v + y * s, 0.0],
        [y * x * v + z * s, c + y * y * v, y * z * v - x * s, 0.0],
        [z * x * v - y * s, z * y * v + x * s, c + z * z * v, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn translate(t: [f64; 3]) -> M4 {
    let mut m = eye();
    for i in 0..3 {
        m[i][3] = t[i];
    }
    m
}

struct OracleJoint {
    kind: String,
    parent: String,
    child: String,
    origin: M4,
    axis: [f64; 3],
}

fn triple(s: Option<&str>) -> [f64; 3] {
    let v: Vec<f64> = s.unwrap_or("0 0 0").split_whitespace().map(|x| x.parse().unwrap()).collect();
    [v[0], v[1], v[2]]
}

/// Reads joints straight from the XML, without the crate's parser.
fn oracle_joints(xml: &str) -> HashMap<String, OracleJoint> {
    let doc = roxmltree::Document::parse(xml).unwrap();
    doc.descendants()
        .filter(|n| n.has_tag_name("joint"))
        .map(|n| {
            let child_attr = |tag: &str, attr: &str| {
                n.children()
                    .find(|c| c.has_tag_name(tag))
                    .and_then(|c| c.attribute(attr))
                    .map(str::to_string)
            };
            let xyz = triple(child_attr("origin", "xyz").as_deref());
            let rpy = triple(child_attr("origin", "rpy").as_deref());
            let origin = mul(&translate(xyz), &mul(&rot3(2, rpy[2]), &mul(&rot3(1, rpy[1]), &rot3(0, rpy[0]))));
            let mut axis = triple(child_attr("axis", "xyz").as_deref().or(Some("1 0 0")));
            let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
            axis.iter_mut().for_each(|v| *v /= norm);
            (
                n.attribute("name").unwrap().to_string(),
                OracleJoint {
                    kind: n.attribute("type").unwrap().to_string(),
                    parent: child_attr("parent", "link").unwrap(),
                    child: child_attr("child", "link").unwrap(),
                    origin,
                    axis,
                },
            )
        })
        .collect()
}

fn oracle_fk(table: &HashMap<String, OracleJoint>, names: &[String], q: &[f64]) -> Vec<M4> {
    let mut pose = eye();
    let mut qi = q.iter();
    let mut out = Vec::new();
    let mut prev_child: Option<&str> = None;
    for name in names {
        let j = &table[name];
        if let Some(pc) = prev_child {
            assert_eq!(pc, j.parent, "oracle: chain is not connected at {name}");
        }
        prev_child = Some(&j.child);
        let motion = match j.kind.as_str() {
            "revolute" | "continuous" => rodrigues(j.axis, *qi.next().unwrap()),
            "prismatic" => {
                let d = *qi.next().unwrap();
                translate(j.axis.map(|a| a * d))
            }
            _ => eye(),
        };
        pose = mul(&pose, &mul(&j.origin, &motion));
        out.push(pose);
    }
    out
}

fn max_diff(a: &Rigid, b: &M4) -> f64 {
    let h = a.to_homogeneous();
    let mut m: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            m = m.max((h[(i, j)] - b[i][j]).abs());
        }
    }
    m
}

fn random_q(arm: &ArmChain, rng: &mut ChaCha8Rng) -> Vec<f64> {
    arm.movable_joints()
        .map(|j| {
            let (lo, hi) = j.limits.unwrap_or((-3.0, 3.0));
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        })
        .collect()
}

#[test]
fn fk_matches_matrix_product_oracle_on_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for xml in [PLANAR_TWO_LINK_URDF, BIMANUAL_URDF] {
        let chain = parse_urdf(xml).unwrap();
        let table = oracle_joints(xml);
        for _ in 0..1000 {
            for arm in &chain.arms {
                let q = random_q(arm, &mut rng);
                let names: Vec<String> = arm.joints.iter().map(|j| j.name.clone()).collect();
                let oracle = oracle_fk(&table, &names, &q);
                let fk = forward_kinematics(&chain, &q, arm.arm).unwrap();
                for (p, o) in fk.poses.iter().zip(&oracle) {
                    assert!(max_diff(p, o) < 1e-12, "{}", max_diff(p, o));
                }
            }
        }
    }
}

#[test]
fn planar_two_link_closed_form() {
    let chain = parse_urdf(PLANAR_TWO_LINK_URDF).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let q = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let fk = forward_kinematics(&chain, &q, Arm::Left).unwrap();
        let expect = Vector3::new(q[0].cos() + (q[0] + q[1]).cos(), q[0].sin() + (q[0] + q[1]).sin(), 0.0);
        assert!((fk.terminal().translation - expect).norm() < 1e-12);
    }
}

#[test]
fn planar_fixture_parse_matches_xml_walk() {
    let chain = parse_urdf(PLANAR_TWO_LINK_URDF).unwrap();
    let table = oracle_joints(PLANAR_TWO_LINK_URDF);
    let arm = &chain.arms[0];
    let revolute: Vec<_> = arm.joints.iter().filter(|j| j.kind == JointKind::Revolute).collect();
    assert_eq!(revolute.len(), 2);
    assert_eq!(revolute[1].origin.translation, Vector3::new(1.0, 0.0, 0.0));
    for j in &arm.joints {
        let o = &table[&j.name];
        assert_eq!(
            (o.parent.as_str(), o.child.as_str()),
            (j.parent_link.as_str(), j.child_link.as_str())
        );
        assert!(max_diff(&j.origin, &o.origin) < 1e-15);
    }
}

fn random_chain_xml(depth: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xml = String::from("<robot name=\"r\">\n<link name=\"l0\"/>\n");
    for k in 0..depth {
        let kind = ["revolute", "prismatic", "fixed"][rng.random_range(0..3)];
        let xyz: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        let rpy: [f64; 3] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let axis: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        xml += &format!(
            "<link name=\"l{n}\"/>\n<joint name=\"j{k}\" type=\"{kind}\"><parent link=\"l{k}\"/><child link=\"l{n}\"/>\
             <origin xyz=\"{} {} {}\" rpy=\"{} {} {}\"/><axis xyz=\"{} {} {}\"/><limit lower=\"-2\" upper=\"2\"/></joint>\n",
            xyz[0],
            xyz[1],
            xyz[2],
            rpy[0],
            rpy[1],
            rpy[2],
            axis[0] + 1.5,
            axis[1],
            axis[2],
            n = k + 1
        );
    }
    xml + "</robot>"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fk_splits_at_any_index(seed in 0u64..10_000, depth in 2usize..12, split_frac in 0.0f64..1.0) {
        let chain = parse_urdf(&random_chain_xml(depth, seed)).unwrap();
        let arm = &chain.arms[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let q = random_q(arm, &mut rng);
        let full = forward_kinematics_arm(arm, &q).unwrap();
        let m = ((depth - 1) as f64 * split_frac) as usize + 1;
        let q_prefix = arm.joints[..m].iter().filter(|j| j.is_movable()).count();
        let prefix = chain_poses(&arm.joints[..m], arm.base_transform, &q[..q_prefix]);
        let suffix = chain_poses(&arm.joints[m..], *prefix.last().unwrap(), &q[q_prefix..]);
        for (a, b) in full.poses.iter().zip(prefix.iter().chain(&suffix)) {
            prop_assert!((a.to_homogeneous() - b.to_homogeneous()).amax() < 1e-10);
        }
    }

    #[test]
    fn rotations_stay_orthonormal_to_depth_32(seed in 0u64..10_000) {
        let chain = parse_urdf(&random_chain_xml(32, seed)).unwrap();
        let arm = &chain.arms[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_q(arm, &mut rng);
        for p in forward_kinematics_arm(arm, &q).unwrap().poses {
            prop_assert!((p.rotation.transpose() * p.rotation - nalgebra::Matrix3::identity()).amax() < 1e-9);
            prop_assert!(p.rotation.determinant() > 0.0);
        }
    }

    #[test]
    fn json_round_trip_is_a_fixpoint(seed in 0u64..10_000, depth in 1usize..10) {
        let chain = parse_urdf(&random_chain_xml(depth, seed)).unwrap();
        let text = chain.to_json();
        let back = KinematicChain::from_json(&text).unwrap();
        prop_assert_eq!(&back, &chain);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn gripper_displacement_is_monotone_and_lipschitz(a in -1.0f64..2.0, b in -1.0f64..2.0, d in 0.0f64..0.2) {
        let (ga, gb) = (gripper_displacement(a, d), gripper_displacement(b, d));
        prop_assert!((0.0..=d).contains(&ga));
        if a <= b {
            prop_assert!(ga <= gb);
        }
        prop_assert!((ga - gb).abs() <= d * (a - b).abs() + 1e-15);
    }
}

#[test]
fn rpy_helper_matches_oracle_convention() {
    let rpy = [0.3, -0.2, 1.1];
    let m = mul(&rot3(2, rpy[2]), &mul(&rot3(1, rpy[1]), &rot3(0, rpy[0])));
    let ours = Rigid::from_urdf_origin([0.0; 3], rpy);
    assert!(max_diff(&ours, &m) < 1e-15);
    // URDF fixed-axis rpy equals the intrinsic x-y-z rotation applied in reverse order
    assert!((rpy_to_matrix(rpy) - ours.rotation).amax() > 1e-3);
}
