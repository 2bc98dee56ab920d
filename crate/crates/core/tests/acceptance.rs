//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints its own PASS/FAIL line even when nothing fails; the process exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Vector2, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use parsfm::geometry::ba::{residual_and_jacobians, retract_pose, BaOptions};
use parsfm::geometry::{exp_so3, project, rotation_angle, umeyama_similarity};
use parsfm::graphalgo::extract_wcds;
use parsfm::merge::{ransac_similarity, CommonPair, CommonPointSet, SimilarityRansacOptions};
use parsfm::pipeline::{generate_synthetic, run_monolithic, run_on, PipelineConfig, PipelineOutput, SynthConfig};
use parsfm::sfm::{bundle_adjust, Observation};
use parsfm::{ImageId, Intrinsics, Point3, Pose, Reconstruction, Similarity, Vec3};

/// Per-axis bound on the check-point residual std.dev. (metres), frozen from
/// the `derive_check_point_bound` run over noise seeds 1000..1020: mean plus
/// three sample standard deviations of the per-seed values.
const CHECK_STD_BOUND: [f64; 3] = [0.017251, 0.022148, 0.061261];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn standard_config(workers: usize) -> PipelineConfig {
    PipelineConfig { cluster_max_size: 30, worker_count: workers, ..Default::default() }
}

fn wcds_validity() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut failures = 0;
    let mut runs = 0;
    for _ in 0..200 {
        let n = rng.gen_range(10..=300);
        let g = common::random_connected(&mut rng, n);
        let graph = g.to_graph();
        for r in [0.0, 0.25, 0.5, 0.75, 1.0] {
            runs += 1;
            let sel: BTreeSet<usize> = extract_wcds(&graph, r).unwrap().selected_vertices.iter().map(|&v| v as usize).collect();
            if !g.dominates(&sel) || !g.induced_connected(&sel) {
                failures += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(failures == 0 && secs < 30.0, format!("{}/{runs} valid in {secs:.1} s", runs - failures))
}

fn mcds_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut equal = 0;
    for _ in 0..200 {
        let n = rng.gen_range(10..=300);
        let g = common::random_connected(&mut rng, n);
        let ours: Vec<usize> = extract_wcds(&g.to_graph(), 1.0).unwrap().selected_vertices.iter().map(|&v| v as usize).collect();
        if ours == common::greedy_cds(&g) {
            equal += 1;
        }
    }
    outcome(equal == 200, format!("{equal}/200 identical to the neighbour-count greedy"))
}

fn selection_trend() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let ratios = [0.0, 0.5, 1.0];
    let mut samples: [Vec<f64>; 3] = Default::default();
    for _ in 0..50 {
        let g = common::random_geometric(&mut rng, 150, 0.18);
        let graph = g.to_graph();
        for (k, &r) in ratios.iter().enumerate() {
            samples[k].push(extract_wcds(&graph, r).unwrap().selected_vertices.len() as f64 / 150.0);
        }
    }
    let stats: Vec<(f64, f64)> = samples.iter().map(|s| common::mean_and_stderr(s)).collect();
    let monotone = stats.windows(2).all(|w| w[1].0 <= w[0].0 + w[1].1.max(w[0].1));
    let shown: Vec<String> = stats.iter().zip(ratios).map(|((m, se), r)| format!("r_vw={r}: {:.3}±{:.3}", m, se)).collect();
    outcome(monotone, shown.join(", "))
}

fn random_similarity(rng: &mut ChaCha8Rng) -> Similarity {
    let w = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let t = Vec3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
    Similarity::new(rng.gen_range(0.1..10.0), exp_so3(&w), t).unwrap()
}

/// Reference model in the world frame, source model in the frame `t⁻¹(world)`;
/// 30% of the common pairs point at a wrong source point.
fn two_models(rng: &mut ChaCha8Rng, t: &Similarity) -> (Reconstruction, Reconstruction, CommonPointSet, Vec<bool>) {
    let k = Intrinsics::simple(1000.0, 500.0, 375.0, 1000, 750).unwrap();
    let px_noise = Normal::new(0.0, 0.5).unwrap();
    let pos_noise = Normal::new(0.0, 0.01).unwrap();
    let inv = t.inverse();
    let mut reference = Reconstruction::new(0);
    let mut source = Reconstruction::new(1);
    let mut next: ImageId = 0;
    for (model, offset) in [(&mut reference, -8.0), (&mut source, 8.0)] {
        for i in 0..6 {
            let eye = Point3::new(offset + rng.gen_range(-2.0..2.0), -15.0 + 6.0 * i as f64, 60.0);
            let pose = Pose::look_at(&eye, &Point3::new(eye.x, eye.y, 0.0), &-Vec3::y());
            let pose = if model.id == 1 { inv.transform_pose(&pose) } else { pose };
            model.register(next, k, pose);
            next += 1;
        }
    }
    let jitter = |rng: &mut ChaCha8Rng| Vec3::new(pos_noise.sample(rng), pos_noise.sample(rng), pos_noise.sample(rng));
    let mut ids = Vec::new();
    for _ in 0..300 {
        let x = Point3::new(rng.gen_range(-18.0..18.0), rng.gen_range(-18.0..18.0), rng.gen_range(-3.0..3.0));
        let mut pid = [0u64; 2];
        for (slot, model) in [&mut reference, &mut source].into_iter().enumerate() {
            let local = if slot == 1 { inv.apply(&x) } else { x };
            let obs: Vec<Observation> = model
                .cameras
                .iter()
                .filter_map(|(&id, c)| {
                    let px = project(&c.intrinsics, &c.pose, &local).ok()?;
                    Some(Observation { image_id: id, keypoint: 0, pixel: px + Vector2::new(px_noise.sample(rng), px_noise.sample(rng)) })
                })
                .collect();
            let noisy = Point3::from(local.coords + jitter(rng) * if slot == 1 { inv.scale } else { 1.0 });
            pid[slot] = model.add_point(noisy, obs);
        }
        ids.push(pid);
    }
    let mut labels = vec![true; ids.len()];
    let mut pairs = Vec::new();
    for (i, &[r, s]) in ids.iter().enumerate() {
        let s = if rng.gen_bool(0.3) {
            labels[i] = false;
            let j = (i + rng.gen_range(1..ids.len())) % ids.len();
            ids[j][1]
        } else {
            s
        };
        let m = reference.points[&r].observations.len();
        let l = source.points[&s].observations.len();
        pairs.push(CommonPair { source: s, reference: r, links: 1, m, l });
    }
    (source, reference, CommonPointSet { pairs }, labels)
}

fn similarity_estimation() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = random_similarity(&mut rng);
        let src: Vec<Point3> = (0..12).map(|_| Point3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0))).collect();
        let dst: Vec<Point3> = src.iter().map(|p| t.apply(p)).collect();
        let est = umeyama_similarity(&src, &dst).unwrap().transform;
        let err = ((est.scale - t.scale) / t.scale)
            .abs()
            .max((est.rotation - t.rotation).abs().max())
            .max((est.translation - t.translation).abs().max() / t.translation.norm().max(1.0));
        worst = worst.max(err);
    }

    let mut min_accuracy = 1.0f64;
    let mut max_rot = 0.0f64;
    for trial in 0..5 {
        let t = random_similarity(&mut rng);
        let (source, reference, common, labels) = two_models(&mut rng, &t);
        let opts = SimilarityRansacOptions { threshold_px: 1.8, seed: trial, ..Default::default() };
        let fit = ransac_similarity(&common, &source, &reference, &opts).unwrap();
        let correct = fit.inliers.iter().zip(&labels).filter(|(a, b)| a == b).count();
        min_accuracy = min_accuracy.min(correct as f64 / labels.len() as f64);
        max_rot = max_rot.max(rotation_angle(&fit.transform.rotation, &t.rotation).to_degrees());
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst < 1e-9 && min_accuracy >= 0.95 && max_rot < 0.1 && secs < 60.0,
        format!("noiseless worst {worst:.2e}; inlier accuracy {:.1}%, rotation {max_rot:.4}°, {secs:.1} s", 100.0 * min_accuracy),
    )
}

fn bundle_adjustment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let k = Intrinsics::simple(rng.gen_range(400.0..1500.0), rng.gen_range(300.0..500.0), rng.gen_range(200.0..400.0), 1000, 800).unwrap();
        let w = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let pose = Pose::from_center(exp_so3(&w), &Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)));
        let in_cam = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(2.0..20.0));
        let x = Point3::from(pose.rotation.transpose() * (in_cam - pose.translation));
        let px = Vector2::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..800.0));
        let (_, jc, jp) = residual_and_jacobians(&k, &pose, &x, &px).unwrap();
        let res = |p: &Pose, x: &Point3| residual_and_jacobians(&k, p, x, &px).unwrap().0;
        let h = 1e-6;
        let mut num_c = nalgebra::SMatrix::<f64, 2, 6>::zeros();
        for c in 0..6 {
            let mut d = Vector6::zeros();
            d[c] = h;
            num_c.set_column(c, &((res(&retract_pose(&pose, &d), &x) - res(&retract_pose(&pose, &-d), &x)) / (2.0 * h)));
        }
        let mut num_p = nalgebra::Matrix2x3::<f64>::zeros();
        for c in 0..3 {
            let hp = h * x.coords.norm().max(1.0);
            let (mut a, mut b) = (x, x);
            a[c] += hp;
            b[c] -= hp;
            num_p.set_column(c, &((res(&pose, &a) - res(&pose, &b)) / (2.0 * hp)));
        }
        worst = worst.max((num_c - jc).norm() / jc.norm()).max((num_p - jp).norm() / jp.norm());
    }

    let ds = generate_synthetic(&SynthConfig { image_count: 20, point_count: 800, pixel_noise: 0.0, ..SynthConfig::standard() });
    let mut recon = ds.truth.clone();
    let first = recon.registered_order[0];
    for (id, c) in recon.cameras.iter_mut() {
        if *id != first {
            let d = Vector6::from_fn(|i, _| if i < 3 { rng.gen_range(-2e-3..2e-3) } else { rng.gen_range(-0.2..0.2) });
            c.pose = retract_pose(&c.pose, &d);
        }
    }
    for p in recon.points.values_mut() {
        p.position += Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
    }
    let before = recon.mean_reprojection_error();
    let report = bundle_adjust(&mut recon, &BaOptions::default().with_max_iterations(200));
    let after = recon.mean_reprojection_error();
    outcome(
        worst < 1e-5 && after < 1e-6,
        format!("jacobian max rel err {worst:.2e}; perturbation {before:.2} px -> {after:.2e} px in {} iterations", report.iterations),
    )
}

fn parallel_matches_monolithic(run: &PipelineOutput, mono: &parsfm::pipeline::MonolithicOutput) -> Outcome {
    let (p, m) = (&run.metrics, &mono.metrics);
    let reg_ok = p.registered_images as f64 >= 0.95 * m.registered_images as f64;
    let err_ok = p.mean_reprojection_error <= 1.2 * m.mean_reprojection_error;
    let (pr, mr) = (p.position_rmse.unwrap_or(f64::INFINITY), m.position_rmse.unwrap_or(f64::INFINITY));
    let rmse_ok = pr <= 1.5 * mr;
    outcome(
        reg_ok && err_ok && rmse_ok,
        format!(
            "registered {}/{} vs {}; error {:.3} vs {:.3} px; position rmse {:.4} vs {:.4}",
            p.registered_images, p.total_images, m.registered_images, p.mean_reprojection_error, m.mean_reprojection_error, pr, mr
        ),
    )
}

fn efficiency() -> Outcome {
    let ds = generate_synthetic(&SynthConfig { image_count: 200, point_count: 6667, ..SynthConfig::standard() });
    let cfg = standard_config(4);
    let mono = run_monolithic(&ds.scene, Some(&ds.truth), &cfg).unwrap();
    let run = run_on(&ds.scene, Some(&ds.truth), &[], &cfg).unwrap();
    let pipe = run.metrics.timings["reconstruction"] + run.metrics.timings["merge"];
    let single = mono.metrics.timings["reconstruction"];
    outcome(
        pipe < single,
        format!(
            "reconstruction+merge {pipe:.2} s vs monolithic {single:.2} s ({} of 200 registered, {} available cores)",
            run.metrics.registered_images,
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    )
}

fn strategy_trend(run: &PipelineOutput) -> Outcome {
    let steps = &run.report.steps;
    let ordered = steps.iter().all(|s| s.loaded.on_demand <= s.loaded.pairwise && s.loaded.pairwise <= s.loaded.all);
    let strict = steps.iter().any(|s| s.loaded.on_demand < s.loaded.pairwise || s.loaded.pairwise < s.loaded.all);
    let shown: Vec<String> = steps.iter().map(|s| format!("{}/{}/{}", s.loaded.on_demand, s.loaded.pairwise, s.loaded.all)).collect();
    outcome(!steps.is_empty() && ordered && strict, format!("on-demand/pairwise/all per step: {}", shown.join(" ")))
}

fn georeferencing() -> Outcome {
    let ds = generate_synthetic(&SynthConfig { gcp_count: 10, pixel_noise: 0.5, ..SynthConfig::standard() });
    let run = run_on(&ds.scene, Some(&ds.truth), &ds.gcps, &standard_config(4)).unwrap();
    let Some((_, table)) = &run.georeferenced else { return outcome(false, "no geo-referenced model") };
    let below = (0..3).all(|a| table.std[a] < CHECK_STD_BOUND[a]);
    let text = table.to_string();
    let lines: Vec<&str> = text.lines().collect();
    let layout = lines.iter().any(|l| l.contains("Max (m)") && l.contains("Mean (m)") && l.contains("Std.dev. (m)"))
        && lines.iter().any(|l| l.matches("|X|").count() == 3 && l.matches("|Y|").count() == 3 && l.matches("|Z|").count() == 3);
    let stats_ok = (0..3).all(|a| {
        let v: Vec<f64> = table.rows.iter().map(|r| r.abs[a]).collect();
        let max = v.iter().cloned().fold(0.0, f64::max);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (max - table.max[a]).abs() < 1e-12 && (mean - table.mean[a]).abs() < 1e-12 && (common::sample_std(&v) - table.std[a]).abs() < 1e-12
    });
    outcome(
        below && layout && stats_ok && table.rows.len() == 7,
        format!("{} check points, std {:.4?} vs bound {:?}", table.rows.len(), table.std, CHECK_STD_BOUND),
    )
}

fn reconstruction_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            name == "merged.txt" || name == "skeleton.txt" || name.starts_with("cluster_")
        })
        .map(|p| (p.file_name().unwrap().to_string_lossy().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let ds = generate_synthetic(&SynthConfig::standard());
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig { output: Some(dir.path().to_path_buf()), ..standard_config(1) };
        run_on(&ds.scene, Some(&ds.truth), &[], &cfg).unwrap();
        outputs.push(reconstruction_files(dir.path()));
    }
    let same = outputs[0] == outputs[1] && !outputs[0].is_empty();
    outcome(same, format!("{} reconstruction files compared", outputs[0].len()))
}

fn main() {
    let t = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "WCDS validity", wcds_validity()),
        (2, "MCDS reduction", mcds_reduction()),
        (3, "selection-ratio trend", selection_trend()),
        (4, "similarity estimation", similarity_estimation()),
        (5, "bundle adjustment", bundle_adjustment()),
    ];

    let ds = generate_synthetic(&SynthConfig::standard());
    let cfg = standard_config(4);
    let mono = run_monolithic(&ds.scene, Some(&ds.truth), &cfg).unwrap();
    let run = run_on(&ds.scene, Some(&ds.truth), &[], &cfg).unwrap();
    results.push((6, "parallel vs monolithic", parallel_matches_monolithic(&run, &mono)));
    results.push((7, "efficiency direction", efficiency()));
    results.push((8, "correspondence strategies", strategy_trend(&run)));
    results.push((9, "geo-referencing", georeferencing()));
    results.push((10, "determinism", determinism()));

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n:>2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {}/{} passed in {:.1} s", results.len() - failed, results.len(), t.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
