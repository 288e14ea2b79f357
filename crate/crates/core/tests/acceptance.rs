//! Acceptance suite: one PASS/FAIL line per criterion. Runs the full
//! desk-scale training (200 samples), so expect several minutes on one core.
//! Failed criteria are reported in the summary; the process exits nonzero on
//! any failure only when `SEMVOX_ACCEPTANCE_STRICT=1`.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use semvox::check::{self, CheckResult};
use semvox::eval::iou;
use semvox::model::{
    masked_cosine_similarity, train_completion, train_student, Checkpoint, ModelKind, TrainConfig, TrainingSample,
};
use semvox::synth::{generate_dataset, Split, SynthConfig};

const N_SAMPLES: usize = 200;
const SEED: u64 = 0;
const STUDENT_EPOCHS: usize = 20;
const COMPLETION_EPOCHS: usize = 8;

struct Line {
    criterion: u8,
    passed: bool,
    text: String,
}

fn report(lines: &mut Vec<Line>, criterion: u8, passed: bool, text: String) {
    println!(
        "criterion {criterion}: {}  {text}",
        if passed { "PASS" } else { "FAIL" }
    );
    lines.push(Line {
        criterion,
        passed,
        text,
    });
}

fn fold(lines: &mut Vec<Line>, criterion: u8, rows: &[CheckResult]) {
    let rows: Vec<&CheckResult> = rows.iter().filter(|r| r.criterion == criterion).collect();
    for r in &rows {
        println!(
            "    [{}] {}: {}",
            if r.passed { "pass" } else { "fail" },
            r.name,
            r.detail
        );
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let text = if failed.is_empty() {
        format!("{} checks", rows.len())
    } else {
        format!(
            "{} of {} checks failed: {}",
            failed.len(),
            rows.len(),
            failed.join(", ")
        )
    };
    report(lines, criterion, failed.is_empty() && !rows.is_empty(), text);
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn held_out_iou(samples: &[TrainingSample], f: impl Fn(&TrainingSample) -> f64) -> (f64, f64) {
    let by = |split| mean(&samples.iter().filter(|s| s.split == split).map(&f).collect::<Vec<_>>());
    (by(Split::ValSeen), by(Split::ValUnseen))
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(
                tree(&p)
                    .into_iter()
                    .map(|(n, b)| (format!("{}/{n}", p.file_name().unwrap().to_string_lossy()), b)),
            );
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

fn completion_config(base: &TrainConfig, student: bool, multiscale: bool) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.epochs = COMPLETION_EPOCHS;
    cfg.model.use_student = student;
    cfg.model.use_multiscale = multiscale;
    cfg
}

fn main() -> ExitCode {
    let mut lines = Vec::new();
    let start = Instant::now();

    println!("== criteria 1-6: oracle, identity and gradient checks");
    let rows = check::run_all();
    for c in 1..=6 {
        fold(&mut lines, c, &rows);
    }
    println!("   ({:.1} s)", start.elapsed().as_secs_f64());

    println!("== criterion 7: desk-scale learning ({N_SAMPLES} samples, seed {SEED})");
    let work = tempfile::tempdir().unwrap();
    let t7 = Instant::now();
    let data = work.path().join("run1");
    let manifest = generate_dataset(&data, N_SAMPLES, SEED, &SynthConfig::default(), |_, _, _| Ok(())).unwrap();
    let samples = manifest.load_all().unwrap();
    println!("   dataset generated in {:.1} s", t7.elapsed().as_secs_f64());

    let base = TrainConfig {
        seed: SEED,
        ..TrainConfig::default()
    };
    let student_cfg = TrainConfig {
        epochs: STUDENT_EPOCHS,
        ..base.clone()
    };
    let t = Instant::now();
    let (student, student_store, srep) = train_student(&samples, &student_cfg, |l| {
        println!("   student epoch {:2}  L_distill {:.4}", l.epoch, l.loss)
    })
    .unwrap();
    println!("   student trained in {:.1} s", t.elapsed().as_secs_f64());
    let cos_of = |split| {
        mean(
            &samples
                .iter()
                .filter(|s| s.split == split)
                .filter_map(|s| masked_cosine_similarity(&student.predict(&student_store, &s.partial).unwrap().0, s))
                .collect::<Vec<_>>(),
        )
    };
    let (cos_seen, cos_unseen) = (cos_of(Split::ValSeen), cos_of(Split::ValUnseen));
    let cos_held = mean(
        &samples
            .iter()
            .filter(|s| s.split.is_held_out())
            .filter_map(|s| masked_cosine_similarity(&student.predict(&student_store, &s.partial).unwrap().0, s))
            .collect::<Vec<_>>(),
    );
    let distill_drop = 1.0 - srep.last_loss() / srep.first_loss();
    let ck = Checkpoint::from_store(ModelKind::Student, 3.0, &student_cfg, &student_store);

    let t = Instant::now();
    let full_cfg = completion_config(&base, true, true);
    let (full, full_store, crep) = train_completion(&samples, &full_cfg, Some(&ck), |l| {
        println!("   completion epoch {}  L_tsdf {:.4}", l.epoch, l.loss)
    })
    .unwrap();
    println!("   completion trained in {:.1} s", t.elapsed().as_secs_f64());
    let tsdf_drop = 1.0 - crep.last_loss() / crep.first_loss();
    let copy = held_out_iou(&samples, |s| iou(&s.partial, &s.gt).unwrap());
    let full_iou = held_out_iou(&samples, |s| {
        iou(&full.predict(&full_store, &s.partial).unwrap(), &s.gt).unwrap()
    });
    let both = |p: (f64, f64)| (p.0 + p.1) / 2.0;
    let minutes = t7.elapsed().as_secs_f64() / 60.0;
    println!(
        "   L_distill {:.4} -> {:.4} ({:.1}% lower); masked cosine val-seen {cos_seen:.3}, val-unseen {cos_unseen:.3}, held-out {cos_held:.3}",
        srep.first_loss(),
        srep.last_loss(),
        100.0 * distill_drop
    );
    println!(
        "   L_tsdf {:.4} -> {:.4} ({:.1}% lower); held-out IoU model {:.3} (seen {:.3}, unseen {:.3}) vs copy-input {:.3} (seen {:.3}, unseen {:.3})",
        crep.first_loss(),
        crep.last_loss(),
        100.0 * tsdf_drop,
        both(full_iou),
        full_iou.0,
        full_iou.1,
        both(copy),
        copy.0,
        copy.1
    );
    let ok7a = distill_drop >= 0.5 && cos_held >= 0.80;
    let ok7b = tsdf_drop >= 0.5 && both(full_iou) >= both(copy) + 0.05;
    report(
        &mut lines,
        7,
        ok7a && ok7b && minutes < 30.0,
        format!(
            "(a) distill -{:.1}%, held-out cosine {cos_held:.3} [{}]; (b) tsdf -{:.1}%, IoU {:.3} vs copy {:.3} [{}]; wall {minutes:.1} min on this machine",
            100.0 * distill_drop,
            if ok7a { "ok" } else { "miss" },
            100.0 * tsdf_drop,
            both(full_iou),
            both(copy),
            if ok7b { "ok" } else { "miss" },
        ),
    );

    println!("== criterion 8: ablation (held-out IoU, {COMPLETION_EPOCHS} epochs each)");
    let mut table = vec![];
    for (name, s, m) in [("tsdf", false, false), ("tsdf+student", true, false)] {
        let t = Instant::now();
        let (net, store, _) = train_completion(&samples, &completion_config(&base, s, m), Some(&ck), |_| {}).unwrap();
        let r = held_out_iou(&samples, |x| {
            iou(&net.predict(&store, &x.partial).unwrap(), &x.gt).unwrap()
        });
        println!("   trained {name} in {:.1} s", t.elapsed().as_secs_f64());
        table.push((name, r));
    }
    table.push(("full", full_iou));
    println!(
        "   {:<13} {:>8} {:>9} {:>10}",
        "variant", "held-out", "val-seen", "val-unseen"
    );
    println!(
        "   {:<13} {:>8.3} {:>9.3} {:>10.3}",
        "copy-input",
        both(copy),
        copy.0,
        copy.1
    );
    for (name, r) in &table {
        println!("   {name:<13} {:>8.3} {:>9.3} {:>10.3}", both(*r), r.0, r.1);
    }
    let mut order: Vec<(&str, f64)> = table.iter().map(|(n, r)| (*n, both(*r))).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let ordering = order
        .iter()
        .map(|(n, v)| format!("{n} {v:.3}"))
        .collect::<Vec<_>>()
        .join(" > ");
    report(
        &mut lines,
        8,
        both(full_iou) >= both(table[0].1),
        format!("full >= tsdf-only; ordering {ordering}"),
    );

    println!("== criterion 9: determinism");
    let data2 = work.path().join("run2");
    generate_dataset(&data2, N_SAMPLES, SEED, &SynthConfig::default(), |_, _, _| Ok(())).unwrap();
    let (a, b) = (tree(&data), tree(&data2));
    let datasets_equal = a == b;
    println!("   dataset: {} files, identical across runs: {datasets_equal}", a.len());
    let short = TrainConfig {
        epochs: 2,
        max_train_samples: Some(24),
        ..base.clone()
    };
    let curve = |cfg: &TrainConfig| {
        let (_, s1, r1) = train_student(&samples, cfg, |_| {}).unwrap();
        let c = Checkpoint::from_store(ModelKind::Student, 3.0, cfg, &s1);
        let (_, s2, r2) = train_completion(&samples, &completion_config(cfg, true, true), Some(&c), |_| {}).unwrap();
        let losses: Vec<u64> = r1.epochs.iter().chain(&r2.epochs).map(|e| e.loss.to_bits()).collect();
        let bytes = Checkpoint::from_store(ModelKind::Completion, 3.0, cfg, &s2)
            .encode()
            .unwrap();
        (losses, bytes)
    };
    let (l1, w1) = curve(&short);
    let (l2, w2) = curve(&short);
    let curves_equal = l1 == l2 && w1 == w2;
    let full_curve_equal = {
        // the full student run above, repeated for its first two epochs
        let cfg = TrainConfig {
            epochs: 2,
            ..student_cfg.clone()
        };
        let (_, _, r) = train_student(&samples, &cfg, |_| {}).unwrap();
        r.epochs
            .iter()
            .zip(&srep.epochs)
            .all(|(x, y)| x.loss.to_bits() == y.loss.to_bits())
    };
    println!("   reduced student+completion runs: loss curves and weights identical: {curves_equal}");
    println!("   first two epochs of the 200-sample student run reproduced bitwise: {full_curve_equal}");
    report(
        &mut lines,
        9,
        datasets_equal && curves_equal && full_curve_equal,
        format!("datasets {datasets_equal}, loss curves {curves_equal}, full-run prefix {full_curve_equal}"),
    );

    println!("== summary ({:.1} min total)", start.elapsed().as_secs_f64() / 60.0);
    for l in &lines {
        println!(
            "criterion {}: {}  {}",
            l.criterion,
            if l.passed { "PASS" } else { "FAIL" },
            l.text
        );
    }
    let failed: Vec<u8> = lines.iter().filter(|l| !l.passed).map(|l| l.criterion).collect();
    if failed.is_empty() {
        return ExitCode::SUCCESS;
    }
    println!("failed criteria: {failed:?}");
    if std::env::var("SEMVOX_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
