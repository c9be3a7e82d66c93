use egopose::anim::{read_bvh, write_bvh, MotionFile};
use egopose::kinematics::{forward_kinematics, Quaternion, Skeleton};
use egopose::synth::{default_limits, interpolate_clip, sample_pose, MotionClip, PoseLimits};
use egopose::Error;

fn clip(skel: &Skeleton) -> MotionClip {
    let limits = PoseLimits::new(skel, &default_limits()).unwrap();
    let keys: Vec<_> = (0..4).map(|s| sample_pose(s, &limits, skel)).collect();
    let mut clip = interpolate_clip(&keys, 5).unwrap();
    clip.root_positions = (0..clip.len()).map(|i| [0.01 * i as f64, -0.1, 0.05]).collect();
    clip
}

#[test]
fn bvh_round_trip_reproduces_fk_poses() {
    let skel = Skeleton::egocentric();
    let clip = clip(&skel);
    let text = write_bvh(&clip, &skel).unwrap();
    assert!(text.starts_with("HIERARCHY\nROOT "));
    let back = read_bvh(&text, &skel).unwrap();
    assert_eq!(back.clip.len(), clip.len());
    assert!((back.clip.fps - clip.fps).abs() < 1e-6);
    for (i, (a, b)) in clip.frames.iter().zip(&back.clip.frames).enumerate() {
        assert!(b.iter().all(|q| q.is_unit(1e-9)));
        let pa = forward_kinematics(a, &skel, clip.root_positions[i]);
        let pb = forward_kinematics(b, &back.skeleton, back.clip.root_positions[i]);
        for (x, y) in pa.iter().zip(&pb) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-4, "frame {i}: {x:?} vs {y:?}");
            }
        }
    }
    // the text itself is reproducible
    assert_eq!(write_bvh(&back.clip, &back.skeleton).unwrap().lines().count(), text.lines().count());
}

#[test]
fn motion_file_round_trip_is_exact() {
    let skel = Skeleton::egocentric();
    let clip = clip(&skel);
    let m = MotionFile::from_clip(&clip, &skel).unwrap();
    assert_eq!(m.frames.len(), clip.len());
    let back = MotionFile::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_clip(), clip);
    assert!(back.frames.iter().flat_map(|f| &f.rotations).all(|&q| Quaternion::from_array(q).is_unit(1e-9)));
    assert!(matches!(MotionFile::from_json("{\"fps\": 1}"), Err(Error::Format(_))));
}

#[test]
fn malformed_bvh_is_rejected() {
    let skel = Skeleton::egocentric();
    let clip = clip(&skel);
    let text = write_bvh(&clip, &skel).unwrap();
    for bad in [
        text.replacen("HIERARCHY", "HIER", 1),
        text.replacen("LeftHand", "Claw", 1),
        text.replacen("Zrotation Xrotation Yrotation", "Xrotation Yrotation Zrotation", 1),
        text[..text.len() - 20].to_string(),
        format!("{text} 1.0"),
    ] {
        assert!(matches!(read_bvh(&bad, &skel), Err(Error::Format(_))), "accepted: {}", &bad[..40]);
    }
    let mut short = clip.clone();
    short.root_positions.pop();
    assert!(write_bvh(&short, &skel).is_err());
}
