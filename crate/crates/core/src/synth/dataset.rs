use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scan::{render_teacher_view, scan_from_depth};
use super::shapes::{analytic_tsdf, Part, Primitive, ShapeProgram, LABEL_BODY, LABEL_HEAD, LABEL_LEG, LABEL_TOP};
use super::teacher::TeacherOracle;
use crate::error::{Error, Result};
use crate::fusion::{
    coverage_mask, fuse_ground_truth, incomplete_target, splat_view, CameraParams, ViewObservation, FUSION_EPS,
};
use crate::model::TrainingSample;
use crate::volume::{FeatureVolume, GridSpec, MaskVolume, TsdfVolume};
use crate::vxl;

pub const MANIFEST_FILE: &str = "manifest.json";
const FLOOR: f64 = -0.42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    ValSeen,
    ValUnseen,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::ValSeen, Split::ValUnseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValSeen => "val-seen",
            Split::ValUnseen => "val-unseen",
        }
    }

    pub fn is_held_out(self) -> bool {
        self != Split::Train
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Procedural object families. Training and the seen validation split draw
/// from [`Category::SEEN`]; [`Category::UNSEEN`] build the same part kinds
/// out of primitive combinations never used in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Table,
    Lamp,
    Snowman,
    Cabinet,
    Stool,
    Robot,
}

impl Category {
    pub const SEEN: [Category; 4] = [Category::Table, Category::Lamp, Category::Snowman, Category::Cabinet];
    pub const UNSEEN: [Category; 2] = [Category::Stool, Category::Robot];

    pub fn name(self) -> &'static str {
        match self {
            Category::Table => "table",
            Category::Lamp => "lamp",
            Category::Snowman => "snowman",
            Category::Cabinet => "cabinet",
            Category::Stool => "stool",
            Category::Robot => "robot",
        }
    }

    pub fn is_seen(self) -> bool {
        Category::SEEN.contains(&self)
    }

    pub fn generate(self, rng: &mut impl Rng) -> ShapeProgram {
        let parts = match self {
            Category::Table => table(rng),
            Category::Lamp => lamp(rng),
            Category::Snowman => snowman(rng),
            Category::Cabinet => cabinet(rng),
            Category::Stool => stool(rng),
            Category::Robot => robot(rng),
        };
        ShapeProgram::new(parts).expect("category generators stay inside the canonical box")
    }
}

fn part(primitive: Primitive, label: u8) -> Part {
    Part { primitive, label }
}

fn upright(center: [f64; 3], radius: f64, half_height: f64) -> Primitive {
    Primitive::Cylinder {
        axis: 1,
        center,
        radius,
        half_height,
    }
}

fn cuboid(center: [f64; 3], half_extents: [f64; 3]) -> Primitive {
    Primitive::Box { center, half_extents }
}

fn corners(hx: f64, hz: f64) -> [[f64; 2]; 4] {
    [[-hx, -hz], [hx, -hz], [-hx, hz], [hx, hz]]
}

fn table(rng: &mut impl Rng) -> Vec<Part> {
    let (w, d) = (rng.gen_range(0.25..0.4), rng.gen_range(0.2..0.35));
    let th = rng.gen_range(0.03..0.05);
    let ty = rng.gen_range(0.0..0.2);
    let r = rng.gen_range(0.03..0.05);
    let hh = (ty - th - FLOOR) / 2.0;
    let mut parts = vec![part(cuboid([0.0, ty, 0.0], [w, th, d]), LABEL_TOP)];
    for [x, z] in corners(w - r - 0.02, d - r - 0.02) {
        parts.push(part(upright([x, FLOOR + hh, z], r, hh), LABEL_LEG));
    }
    parts
}

fn lamp(rng: &mut impl Rng) -> Vec<Part> {
    let (br, bh) = (rng.gen_range(0.15..0.25), rng.gen_range(0.03..0.05));
    let sr = rng.gen_range(0.025..0.04);
    let hr = rng.gen_range(0.1..0.16);
    let hy = rng.gen_range(0.1..0.25);
    let base_top = FLOOR + 2.0 * bh;
    let sh = (hy - base_top) / 2.0;
    vec![
        part(upright([0.0, FLOOR + bh, 0.0], br, bh), LABEL_BODY),
        part(upright([0.0, base_top + sh, 0.0], sr, sh), LABEL_LEG),
        part(
            Primitive::Sphere {
                center: [0.0, hy, 0.0],
                radius: hr,
            },
            LABEL_HEAD,
        ),
    ]
}

fn snowman(rng: &mut impl Rng) -> Vec<Part> {
    let r = rng.gen_range(0.2..0.28);
    let hr = rng.gen_range(0.1..0.15);
    let by = FLOOR + r;
    vec![
        part(
            Primitive::Sphere {
                center: [0.0, by, 0.0],
                radius: r,
            },
            LABEL_BODY,
        ),
        part(
            Primitive::Sphere {
                center: [0.0, by + r + 0.7 * hr, 0.0],
                radius: hr,
            },
            LABEL_HEAD,
        ),
    ]
}

fn cabinet(rng: &mut impl Rng) -> Vec<Part> {
    let h = [
        rng.gen_range(0.2..0.3),
        rng.gen_range(0.2..0.3),
        rng.gen_range(0.15..0.25),
    ];
    let t = rng.gen_range(0.02..0.035);
    let top_y = FLOOR + 2.0 * h[1] + t;
    vec![
        part(cuboid([0.0, FLOOR + h[1], 0.0], h), LABEL_BODY),
        part(cuboid([0.0, top_y, 0.0], [h[0] + 0.03, t, h[2] + 0.03]), LABEL_TOP),
    ]
}

fn stool(rng: &mut impl Rng) -> Vec<Part> {
    let r = rng.gen_range(0.2..0.3);
    let th = rng.gen_range(0.025..0.04);
    let ty = rng.gen_range(-0.05..0.1);
    let lw = rng.gen_range(0.025..0.04);
    let hh = (ty - th - FLOOR) / 2.0;
    let off = (r - lw) * std::f64::consts::FRAC_1_SQRT_2 - 0.01;
    let mut parts = vec![part(upright([0.0, ty, 0.0], r, th), LABEL_TOP)];
    for [x, z] in corners(off, off) {
        parts.push(part(cuboid([x, FLOOR + hh, z], [lw, hh, lw]), LABEL_LEG));
    }
    parts
}

fn robot(rng: &mut impl Rng) -> Vec<Part> {
    let h = [
        rng.gen_range(0.14..0.2),
        rng.gen_range(0.12..0.16),
        rng.gen_range(0.1..0.14),
    ];
    let leg_h = rng.gen_range(0.08..0.12);
    let lw = rng.gen_range(0.04..0.06);
    let body_y = FLOOR + 2.0 * leg_h + h[1];
    let hr = rng.gen_range(0.08..0.12);
    let mut parts = vec![
        part(cuboid([0.0, body_y, 0.0], h), LABEL_BODY),
        part(
            Primitive::Sphere {
                center: [0.0, body_y + h[1] + 0.8 * hr, 0.0],
                radius: hr,
            },
            LABEL_HEAD,
        ),
    ];
    for x in [-h[0] + lw, h[0] - lw] {
        parts.push(part(cuboid([x, FLOOR + leg_h, 0.0], [lw, leg_h, lw]), LABEL_LEG));
    }
    parts
}

/// Rendering and fusion settings shared by every sample of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub edge: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub patch_size: usize,
    pub feat_dim: usize,
    pub camera_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            edge: 32,
            views: 8,
            width: 64,
            height: 64,
            focal: 48.0,
            patch_size: 8,
            feat_dim: 16,
            camera_radius: 1.6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(Error::Config("need at least one view".into()));
        }
        if self.patch_size == 0
            || !self.width.is_multiple_of(self.patch_size)
            || !self.height.is_multiple_of(self.patch_size)
        {
            return Err(Error::Config(format!(
                "raster {}x{} does not tile into {}-pixel patches",
                self.width, self.height, self.patch_size
            )));
        }
        if !(self.focal > 0.0) || !(self.camera_radius > 0.0) {
            return Err(Error::Config("focal length and camera radius must be positive".into()));
        }
        GridSpec::with_edge(self.edge)?;
        Ok(())
    }

    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::with_edge(self.edge)
    }
}

/// `n` cameras on a Fibonacci sphere looking at the origin, rotated by
/// `yaw` radians about the vertical axis.
pub fn fibonacci_cameras(n: usize, cfg: &SynthConfig, yaw: f64) -> Result<Vec<CameraParams>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let k = CameraParams::pinhole(cfg.focal, cfg.width, cfg.height);
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64 + yaw;
            let eye = [r * phi.cos(), y, r * phi.sin()].map(|c| c * cfg.camera_radius);
            CameraParams::look_at(k, eye, [0.0; 3], [0.0, 1.0, 0.0])
        })
        .collect()
}

/// The five volumes of one sample plus the views they were fused from.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub partial: TsdfVolume,
    pub gt: TsdfVolume,
    pub dino_gt: FeatureVolume,
    pub dino_inc: FeatureVolume,
    /// Voxels with positive fused weight inside the surface.
    pub mask: MaskVolume,
    pub views: Vec<ViewObservation>,
    pub scan_view: usize,
}

/// Renders `cams`, fuses the teacher features and scans from `cams[scan_view]`.
pub fn build_sample_from_views(
    prog: &ShapeProgram,
    cams: &[CameraParams],
    scan_view: usize,
    oracle: &TeacherOracle,
    cfg: &SynthConfig,
) -> Result<SampleRecord> {
    if scan_view >= cams.len() {
        return Err(Error::Config(format!(
            "scanner view {scan_view} of {} views",
            cams.len()
        )));
    }
    let spec = cfg.spec()?;
    let gt = analytic_tsdf(prog, &spec)?;
    let views = cams
        .iter()
        .map(|c| render_teacher_view(prog, c, oracle, cfg.width, cfg.height, cfg.patch_size))
        .collect::<Result<Vec<_>>>()?;
    let (dino_gt, weights) = fuse_ground_truth(&views, &gt, FUSION_EPS)?;
    let scan = &views[scan_view];
    let partial = scan_from_depth(&scan.depth, scan.width, scan.height, &scan.camera, &spec)?;
    let cov = coverage_mask(&splat_view(scan, &spec));
    let dino_inc = incomplete_target(&dino_gt, &cov)?;
    let mask = MaskVolume::from_bools(spec, weights.iter().map(|&w| w > 0.0))?;
    Ok(SampleRecord {
        partial,
        gt,
        dino_gt,
        dino_inc,
        mask,
        views,
        scan_view,
    })
}

/// Draws the camera yaw and scanner view from `seed` and builds the sample.
pub fn build_sample(prog: &ShapeProgram, oracle: &TeacherOracle, cfg: &SynthConfig, seed: u64) -> Result<SampleRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
    let scan_view = rng.gen_range(0..cfg.views);
    let cams = fibonacci_cameras(cfg.views, cfg, yaw)?;
    build_sample_from_views(prog, &cams, scan_view, oracle, cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub partial: String,
    pub gt: String,
    pub dino_gt: String,
    pub dino_inc: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub files: SampleFiles,
    pub split: Split,
    pub category: Category,
}

/// Manifest entries with file paths relative to `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let entries = serde_json::from_str(&text)?;
        Ok(Manifest { root, entries })
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.entries)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Reads one sample; the feature target is `dino_gt` when `complete_target`
    /// is set and `dino_inc` otherwise.
    pub fn load_sample(&self, entry: &ManifestEntry, complete_target: bool) -> Result<TrainingSample> {
        let partial = vxl::read_tsdf(self.path(&entry.files.partial))?;
        let gt = vxl::read_tsdf(self.path(&entry.files.gt))?;
        let feats = if complete_target {
            &entry.files.dino_gt
        } else {
            &entry.files.dino_inc
        };
        let target = vxl::read_features(self.path(feats))?;
        let mask = vxl::read_mask(self.path(&entry.files.mask))?;
        TrainingSample::new(
            &entry.id,
            entry.split,
            entry.category.name(),
            partial,
            gt,
            &target,
            &mask,
        )
    }

    pub fn load_all(&self) -> Result<Vec<TrainingSample>> {
        self.entries.iter().map(|e| self.load_sample(e, true)).collect()
    }
}

/// Sizes of the `(train, val-seen, val-unseen)` splits for `n` samples.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let held = (n / 10).max(1);
    (n - 2 * held, held, held)
}

pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Split and category of sample `index` out of `n`.
pub fn assignment(n: usize, index: usize) -> (Split, Category) {
    let (train, seen, _) = split_sizes(n);
    if index < train {
        (Split::Train, Category::SEEN[index % Category::SEEN.len()])
    } else if index < train + seen {
        (Split::ValSeen, Category::SEEN[(index - train) % Category::SEEN.len()])
    } else {
        let k = index - train - seen;
        (Split::ValUnseen, Category::UNSEEN[k % Category::UNSEEN.len()])
    }
}

/// Writes the five volumes into `root/id/` and returns their relative paths.
pub fn write_record(root: &Path, id: &str, record: &SampleRecord) -> Result<SampleFiles> {
    let dir = root.join(id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = |f: &str| format!("{id}/{f}");
    vxl::write_tsdf(dir.join("partial.vxl"), &record.partial)?;
    vxl::write_tsdf(dir.join("gt.vxl"), &record.gt)?;
    vxl::write_features(dir.join("dino_gt.vxl"), &record.dino_gt)?;
    vxl::write_features(dir.join("dino_inc.vxl"), &record.dino_inc)?;
    vxl::write_mask(dir.join("mask.vxl"), &record.mask)?;
    Ok(SampleFiles {
        partial: rel("partial.vxl"),
        gt: rel("gt.vxl"),
        dino_gt: rel("dino_gt.vxl"),
        dino_inc: rel("dino_inc.vxl"),
        mask: rel("mask.vxl"),
    })
}

/// Saves every view of `record` as `view_NN` under `dir`; see
/// [`ViewObservation::save`].
pub fn write_views(dir: &Path, record: &SampleRecord) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, view) in record.views.iter().enumerate() {
        view.save(dir, &view_stem(k))?;
    }
    Ok(())
}

pub fn view_stem(k: usize) -> String {
    format!("view_{k:02}")
}

/// Generates `n` samples under `out` and writes the manifest. The teacher
/// is seeded with `seed`; sample `i` draws from [`sample_seed`].
pub fn generate_dataset(
    out: impl AsRef<Path>,
    n: usize,
    seed: u64,
    cfg: &SynthConfig,
    mut on_sample: impl FnMut(usize, &ManifestEntry, &SampleRecord) -> Result<()>,
) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::Empty("dataset needs at least one sample".into()));
    }
    cfg.validate()?;
    let root = out.as_ref().to_path_buf();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let oracle = TeacherOracle::new(seed, cfg.feat_dim)?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let (split, category) = assignment(n, i);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, i));
        let prog = category.generate(&mut rng);
        let record = build_sample(&prog, &oracle, cfg, rng.gen())?;
        let id = format!("{i:04}_{}", category.name());
        let files = write_record(&root, &id, &record)?;
        let entry = ManifestEntry {
            id,
            files,
            split,
            category,
        };
        on_sample(i, &entry, &record)?;
        entries.push(entry);
    }
    let manifest = Manifest { root, entries };
    manifest.save()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_cover_everything() {
        assert_eq!(split_sizes(1), (1, 0, 0));
        assert_eq!(split_sizes(8), (6, 1, 1));
        assert_eq!(split_sizes(200), (160, 20, 20));
        for n in 1..40 {
            let (a, b, c) = split_sizes(n);
            assert_eq!(a + b + c, n);
            assert!(a >= 1);
        }
    }

    #[test]
    fn unseen_split_uses_unseen_categories() {
        for i in 0..50 {
            let (split, cat) = assignment(50, i);
            assert_eq!(split == Split::ValUnseen, !cat.is_seen());
        }
    }

    #[test]
    fn every_category_generates_valid_programs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = GridSpec::default();
        for cat in Category::SEEN.iter().chain(&Category::UNSEEN) {
            for _ in 0..20 {
                let prog = cat.generate(&mut rng);
                prog.validate(&spec).unwrap();
                for p in &prog.parts {
                    let (lo, hi) = p.primitive.bounds();
                    assert!(lo.iter().chain(&hi).all(|c| c.abs() < 0.47), "{cat:?} {p:?}");
                }
            }
        }
    }

    #[test]
    fn split_serializes_kebab_case() {
        assert_eq!(serde_json::to_string(&Split::ValUnseen).unwrap(), "\"val-unseen\"");
        assert_eq!(serde_json::from_str::<Split>("\"val-seen\"").unwrap(), Split::ValSeen);
    }

    #[test]
    fn cameras_sit_on_the_sphere() {
        let cfg = SynthConfig::default();
        for c in fibonacci_cameras(8, &cfg, 0.3).unwrap() {
            let e = c.center();
            assert!(((e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt() - 1.6).abs() < 1e-9);
            assert!(c.project([0.0; 3]).is_some());
        }
    }
}
