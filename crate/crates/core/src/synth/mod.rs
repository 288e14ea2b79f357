//! Procedural shapes, a virtual depth scanner and a part-semantic teacher.

pub mod dataset;
pub mod scan;
pub mod shapes;
pub mod teacher;

pub use dataset::{
    build_sample, build_sample_from_views, fibonacci_cameras, generate_dataset, sample_seed, split_sizes, view_stem,
    write_record, write_views, Category, Manifest, ManifestEntry, SampleFiles, SampleRecord, Split, SynthConfig,
};
pub use scan::{raymarch, render_depth, render_teacher_view, scan_from_depth, virtual_scan};
pub use shapes::{analytic_tsdf, Part, Primitive, ShapeProgram, NUM_LABELS};
pub use teacher::TeacherOracle;
