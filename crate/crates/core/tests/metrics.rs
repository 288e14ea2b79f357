use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semvox::eval::{chamfer, iou, l1_error, metrics, pca_colorize, PcaBasis};
use semvox::oracle;
use semvox::volume::{FeatureVolume, GridSpec, MaskVolume, TsdfVolume};

fn spec(g: usize) -> GridSpec {
    GridSpec::with_edge(g).unwrap()
}

fn from_points(g: usize, pts: &[usize]) -> TsdfVolume {
    let mut v = vec![1.0f32; g * g * g];
    for &p in pts {
        v[p] = -1.0;
    }
    TsdfVolume::new(spec(g), v).unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, g: usize, n: usize) -> Vec<usize> {
    let mut pts: Vec<usize> = (0..g * g * g).collect();
    for i in 0..n {
        let j = rng.gen_range(i..pts.len());
        pts.swap(i, j);
    }
    pts.truncate(n);
    pts
}

#[test]
fn chamfer_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let g = [8, 16, 32][trial % 3];
        let (n, m) = if trial < 10 {
            (50, 50)
        } else {
            (rng.gen_range(1..=200), rng.gen_range(1..=200))
        };
        let a = from_points(g, &random_points(&mut rng, g, n));
        let b = from_points(g, &random_points(&mut rng, g, m));
        let fast = chamfer(&a, &b).unwrap();
        let slow = oracle::chamfer(&a, &b).unwrap();
        assert!((fast - slow).abs() < 1e-9, "trial {trial}: {fast} vs {slow}");
    }
}

#[test]
fn chamfer_hand_values() {
    let s = spec(8);
    let a = from_points(8, &[s.index(1, 1, 1)]);
    let b = from_points(8, &[s.index(1, 3, 1)]);
    assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
    assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    let empty = from_points(8, &[]);
    assert!(chamfer(&a, &empty).is_err());
    assert_eq!(metrics(&a, &empty).unwrap().cd, None);
}

#[test]
fn iou_counts() {
    let a = from_points(4, &[0, 1]);
    let b = from_points(4, &[0, 1, 2, 3]);
    assert_eq!(iou(&a, &b).unwrap(), 0.5);
    assert_eq!(iou(&a, &from_points(4, &[5, 6])).unwrap(), 0.0);
    assert_eq!(iou(&from_points(4, &[]), &from_points(4, &[])).unwrap(), 1.0);
}

#[test]
fn l1_against_direct_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = spec(8);
    let a: Vec<f32> = (0..512).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let b: Vec<f32> = (0..512).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let want = a
        .iter()
        .zip(&b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs() / 3.0)
        .sum::<f64>()
        / 512.0;
    let got = l1_error(&TsdfVolume::new(s, a.clone()).unwrap(), &TsdfVolume::new(s, b).unwrap()).unwrap();
    assert!((got - want).abs() < 1e-12);
    // shifted by one truncation before clamping
    let lo: Vec<f32> = a.iter().map(|x| x.clamp(-3.0, 0.0)).collect();
    let hi: Vec<f32> = lo.iter().map(|x| x + 3.0).collect();
    let got = l1_error(&TsdfVolume::new(s, hi).unwrap(), &TsdfVolume::new(s, lo).unwrap()).unwrap();
    assert!((got - 1.0).abs() < 1e-6);
}

fn random_features(rng: &mut ChaCha8Rng, s: GridSpec, scales: &[f64]) -> FeatureVolume {
    let n = s.voxel_count();
    let c = scales.len();
    let mut v = vec![0.0f32; c * n];
    for vox in 0..n {
        for ch in 0..c {
            v[ch * n + vox] = (rng.gen_range(-1.0..1.0) * scales[ch]) as f32;
        }
    }
    FeatureVolume::new(s, c, v).unwrap()
}

fn full_mask(s: GridSpec) -> MaskVolume {
    MaskVolume::new(s, vec![1.0; s.voxel_count()]).unwrap()
}

#[test]
fn pca_recovers_axes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = spec(8);
    let f = random_features(&mut rng, s, &[0.2, 3.0, 1.0]);
    let basis = PcaBasis::fit(&[(&f, &full_mask(s))]).unwrap();
    // strongest first: axis 1, then 2, then 0
    for (k, axis) in [1usize, 2, 0].into_iter().enumerate() {
        assert!(
            (basis.components[k][axis].abs() - 1.0).abs() < 1e-3,
            "{:?}",
            basis.components
        );
    }
}

#[test]
fn pca_constant_features_are_uniform() {
    let s = spec(4);
    let f = FeatureVolume::new(s, 5, vec![0.7; 5 * 64]).unwrap();
    let rgb = pca_colorize(&f, &full_mask(s)).unwrap();
    assert!(rgb.values().iter().all(|&v| v == 0.5));
}

#[test]
fn pca_shared_fit_equals_joint_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = spec(4);
    let a = random_features(&mut rng, s, &[1.0, 2.0, 0.5, 0.1]);
    let b = random_features(&mut rng, s, &[0.3, 1.0, 2.0, 0.4]);
    let m = full_mask(s);
    let joint = PcaBasis::fit(&[(&a, &m), (&b, &m)]).unwrap();
    let again = PcaBasis::fit(&[(&a, &m), (&b, &m)]).unwrap();
    assert_eq!(joint.colorize(&a, &m).unwrap(), again.colorize(&a, &m).unwrap());
    // unmasked voxels are black
    let half = MaskVolume::from_bools(s, (0..64).map(|i| i % 2 == 0)).unwrap();
    let rgb = joint.colorize(&a, &half).unwrap();
    assert!((0..64)
        .filter(|i| i % 2 == 1)
        .all(|v| (0..3).all(|c| rgb.get(c, v) == 0.0)));
}

#[test]
fn pca_invariant_under_rotation_up_to_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let s = spec(8);
    let f = random_features(&mut rng, s, &[3.0, 1.5, 0.6]);
    // rotation about a skew axis
    let r = nalgebra::Rotation3::from_axis_angle(
        &nalgebra::Unit::new_normalize(nalgebra::Vector3::new(1.0, 2.0, -0.5)),
        0.9,
    );
    let n = s.voxel_count();
    let mut rot = vec![0.0f32; 3 * n];
    for v in 0..n {
        let x = nalgebra::Vector3::from_fn(|i, _| f.get(i, v) as f64);
        let y = r * x;
        for c in 0..3 {
            rot[c * n + v] = y[c] as f32;
        }
    }
    let rot = FeatureVolume::new(s, 3, rot).unwrap();
    let m = full_mask(s);
    let (p, q) = (pca_colorize(&f, &m).unwrap(), pca_colorize(&rot, &m).unwrap());
    for c in 0..3 {
        let same = (0..n).all(|v| (p.get(c, v) - q.get(c, v)).abs() < 1e-4);
        let flipped = (0..n).all(|v| (p.get(c, v) + q.get(c, v) - 1.0).abs() < 1e-4);
        assert!(same || flipped, "channel {c}");
    }
}

fn tsdf_strategy() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    (
        prop::collection::vec(-3.0f32..3.0, 64),
        prop::collection::vec(-3.0f32..3.0, 64),
    )
}

proptest! {
    #[test]
    fn iou_and_chamfer_symmetric((a, b) in tsdf_strategy()) {
        let (a, b) = (TsdfVolume::new(spec(4), a).unwrap(), TsdfVolume::new(spec(4), b).unwrap());
        let m = metrics(&a, &b).unwrap();
        let r = metrics(&b, &a).unwrap();
        prop_assert_eq!(m.iou, r.iou);
        prop_assert_eq!(m.cd, r.cd);
        prop_assert!((0.0..=1.0).contains(&m.iou) && m.l1 >= 0.0);
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        if let Some(cd) = m.cd {
            prop_assert!(cd >= 0.0);
            prop_assert!((cd - oracle::chamfer(&a, &b).unwrap()).abs() < 1e-9);
            prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        }
    }
}
