use std::fs;
use std::path::Path;

use semvox::fusion::{coverage_mask, fuse_ground_truth, splat_view, FUSION_EPS};
use semvox::synth::teacher::cosine;
use semvox::synth::{
    analytic_tsdf, build_sample_from_views, fibonacci_cameras, generate_dataset, render_teacher_view, Part, Primitive,
    ShapeProgram, SynthConfig, TeacherOracle,
};

fn two_part() -> ShapeProgram {
    ShapeProgram::new(vec![
        Part {
            primitive: Primitive::Box {
                center: [0.0, -0.18, 0.0],
                half_extents: [0.3, 0.18, 0.25],
            },
            label: 0,
        },
        Part {
            primitive: Primitive::Sphere {
                center: [0.0, 0.2, 0.0],
                radius: 0.2,
            },
            label: 3,
        },
    ])
    .unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push((
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

#[test]
fn datasets_are_bitwise_reproducible() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    let cfg = SynthConfig::default();
    generate_dataset(a.path(), 5, 7, &cfg, |_, _, _| Ok(())).unwrap();
    generate_dataset(b.path(), 5, 7, &cfg, |_, _, _| Ok(())).unwrap();
    generate_dataset(c.path(), 5, 8, &cfg, |_, _, _| Ok(())).unwrap();
    let (fa, fb, fc) = (files(a.path()), files(b.path()), files(c.path()));
    assert_eq!(fa.len(), 5 * 5 + 1);
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
}

#[test]
fn fused_features_classify_parts() {
    let cfg = SynthConfig::default();
    let spec = cfg.spec().unwrap();
    let prog = two_part();
    let oracle = TeacherOracle::new(5, cfg.feat_dim).unwrap();
    let cams = fibonacci_cameras(cfg.views, &cfg, 0.3).unwrap();
    let rec = build_sample_from_views(&prog, &cams, 0, &oracle, &cfg).unwrap();
    let (body, head) = (oracle.embedding(0), oracle.embedding(3));
    let (mut right, mut total) = (0, 0);
    for v in 0..spec.voxel_count() {
        if rec.mask.values()[v] < 0.5 {
            continue;
        }
        let [x, y, z] = spec.coords(v);
        let label = prog.distance_and_label(spec.voxel_center(x, y, z)).1;
        let f: Vec<f64> = rec.dino_gt.voxel(v).iter().map(|&x| x as f64).collect();
        let closer_to_body = cosine(&f, body) > cosine(&f, head);
        right += (closer_to_body == (label == 0)) as usize;
        total += 1;
    }
    assert!(total > 100);
    let acc = right as f64 / total as f64;
    assert!(acc >= 0.95, "{right}/{total}");
}

#[test]
fn single_part_patches_carry_its_embedding() {
    let cfg = SynthConfig::default();
    let prog = ShapeProgram::new(vec![Part {
        primitive: Primitive::Sphere {
            center: [0.0; 3],
            radius: 0.3,
        },
        label: 2,
    }])
    .unwrap();
    let oracle = TeacherOracle::new(0, cfg.feat_dim).unwrap();
    let cam = fibonacci_cameras(1, &cfg, 0.0).unwrap().remove(0);
    let view = render_teacher_view(&prog, &cam, &oracle, cfg.width, cfg.height, cfg.patch_size).unwrap();
    let want = oracle.embedding(2);
    let mut hit_patches = 0;
    for p in 0..view.patch_count() {
        let f = view.patch_feature(p);
        if f.iter().all(|&x| x == 0.0) {
            continue;
        }
        hit_patches += 1;
        assert!(f.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-6));
    }
    assert!(hit_patches > 0);
}

#[test]
fn one_view_incomplete_equals_ground_truth() {
    let cfg = SynthConfig {
        views: 1,
        ..SynthConfig::default()
    };
    let cams = fibonacci_cameras(1, &cfg, 1.1).unwrap();
    let oracle = TeacherOracle::new(3, cfg.feat_dim).unwrap();
    let rec = build_sample_from_views(&two_part(), &cams, 0, &oracle, &cfg).unwrap();
    assert_eq!(rec.dino_inc, rec.dino_gt);
}

#[test]
fn duplicated_view_changes_nothing() {
    let cfg = SynthConfig::default();
    let spec = cfg.spec().unwrap();
    let prog = two_part();
    let gt = analytic_tsdf(&prog, &spec).unwrap();
    let oracle = TeacherOracle::new(1, cfg.feat_dim).unwrap();
    let cam = fibonacci_cameras(3, &cfg, 0.0).unwrap().remove(1);
    let view = render_teacher_view(&prog, &cam, &oracle, cfg.width, cfg.height, cfg.patch_size).unwrap();
    let (one, w1) = fuse_ground_truth(std::slice::from_ref(&view), &gt, FUSION_EPS).unwrap();
    let (two, w2) = fuse_ground_truth(&[view.clone(), view.clone()], &gt, FUSION_EPS).unwrap();
    assert!(one.values().iter().zip(two.values()).all(|(a, b)| (a - b).abs() < 1e-5));
    assert!(w1.iter().zip(&w2).all(|(a, b)| (2.0 * a - b).abs() < 1e-12));
    assert!(coverage_mask(&splat_view(&view, &spec)).count_set() > 0);
}
