use nbvlab_core::render::*;
use nbvlab_core::scene::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn triangle_count_grows_twelve_per_cuboid() {
    for k in 1..=K_MAX {
        let m = object(k).unwrap();
        assert_eq!(m.triangles.len(), 12 * k as usize, "object {k}");
        assert_eq!(m.complexity, k);
    }
    assert!(object(0).is_err() && object(K_MAX + 1).is_err());
}

#[test]
fn gripper_never_adds_object_pixels() {
    let g = GripperSpec::default();
    let cam = Camera { width: 32, height: 32, ..Camera::default() };
    let bx = WorkspaceBox::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut occluded = 0;
    for i in 0..60 {
        let mesh = object(1 + i % 6).unwrap();
        let robot = scene_for_mode(&mesh, Mode::Robot, &g);
        let bare = scene_for_mode(&mesh, Mode::Objects, &g);
        let pose = sample_random_pose(&mut rng, &bx);
        let fr = render_frame(&robot, &pose, &cam);
        let fb = render_frame(&bare, &pose, &cam);
        let with = fr.count_part(&robot, Part::Object);
        let without = fb.count_part(&bare, Part::Object);
        assert!(with <= without);
        let covers = fr
            .ids
            .iter()
            .zip(&fb.ids)
            .any(|(&r, &b)| r != u32::MAX && robot.parts[r as usize] == Part::Gripper && b != u32::MAX);
        if covers {
            occluded += 1;
            assert!(with < without);
        }
    }
    assert!(occluded > 0);
}

#[test]
fn dataset_generation_is_reproducible() {
    let objs: Vec<_> = (1..=2).map(|i| (i, object(i).unwrap())).collect();
    let cam = Camera { width: 16, height: 16, ..Camera::default() };
    let make = || generate_image_set(&objs, Mode::Robot, 20, &cam, &GripperSpec::default(), &WorkspaceBox::default(), 12).unwrap();
    let (a, b) = (make(), make());
    assert_eq!(a.manifest.to_text(), b.manifest.to_text());
    assert_eq!(a.images, b.images);
    assert_eq!(split_counts(20), (16, 2, 2));
    assert_eq!(a.manifest.count(Split::Train), 2 * 16);
}

#[test]
fn octants_of_a_768_view_sphere_are_balanced() {
    let views = fibonacci_sphere(768);
    let mut counts = [0usize; 8];
    for v in &views {
        counts[octant_of(v)] += 1;
    }
    for c in counts {
        assert!((86..=106).contains(&c), "{counts:?}");
    }
}

#[test]
fn binned_occlusion_agrees_with_brute_force_on_complex_objects() {
    for id in [5, 9] {
        let s = OcclusionSampler::new(&object(id).unwrap(), 1500, 3);
        for v in fibonacci_sphere(6) {
            let p = v * s.bound_radius() * 10.0;
            assert_eq!(s.ratio(&p).unwrap(), s.ratio_brute_force(&p).unwrap());
        }
    }
}

#[test]
fn sweep_reports_every_view_in_one_octant() {
    let r = occlusion_sweep(&object(4).unwrap(), 64).unwrap();
    assert_eq!(r.ratios.len(), 64);
    assert_eq!(r.per_octant.iter().map(|o| o.count).sum::<usize>(), 64);
    assert!(r.ratios.iter().all(|x| (0.0..=1.0).contains(x)));
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 65);
}

fn quat() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-2.0f64..2.0)
}

proptest! {
    #[test]
    fn reachable_clamp_lands_in_box_and_reach(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0, q in quat()) {
        let bx = WorkspaceBox::default();
        prop_assert!(bx.validate().is_ok());
        let p = clamp_to_reachable(&Pose::raw(Vec3::new(x, y, z), q), &bx).unwrap();
        prop_assert!(bx.contains(&p.position));
        prop_assert!(p.position.norm() <= bx.max_reach + 1e-12);
        prop_assert!(p.is_normalized(1e-12));
        let again = clamp_to_reachable(&p, &bx).unwrap();
        prop_assert!((again.position - p.position).norm() < 1e-12);
    }

    #[test]
    fn box_clamp_is_identity_inside(t in prop::array::uniform3(0.0f64..1.0), q in quat()) {
        let bx = WorkspaceBox::default();
        let pos = Vec3::from_fn(|i, _| bx.min_corner[i] + t[i] * (bx.max_corner[i] - bx.min_corner[i]));
        let p = clamp_to_box(&Pose::raw(pos, q), &bx).unwrap();
        prop_assert_eq!(p.position, pos);
    }

    #[test]
    fn pose_array_roundtrip(x in -1.0f64..1.0, q in quat()) {
        let p = Pose::new(Vec3::new(x, -x, 0.5), q);
        prop_assert_eq!(Pose::from_array(&p.to_array()), p);
    }
}
