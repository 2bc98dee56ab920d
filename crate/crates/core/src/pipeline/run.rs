use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::{evaluate, load_dataset, EvalMetrics, MatchingMode, PipelineConfig, PipelineError, Stage};
use crate::graphalgo::{extract_wcds, normalized_cut, Clustering, WcdsResult};
use crate::io::{self, IoError};
use crate::matchgraph::{build_match_graph, retrieve_pairs, verify_matches, MatchGraph, MatchPair, MatchStore, VerifyOptions, VocabularyTree};
use crate::merge::{georeference, merge_all, CheckResidualTable, GcpRecord, GeoreferenceOptions, MergeOptions, MergeReport, SimilarityRansacOptions};
use crate::sfm::{incremental_reconstruct, EngineOptions, Reconstruction, SceneData};
use crate::ImageId;

/// Descriptor rows per image used to train the vocabulary.
const VOCAB_SAMPLES_PER_IMAGE: usize = 200;

/// Match graph plus the verified pairs that survived the match-count filter.
#[derive(Debug, Clone)]
pub struct Tcn {
    pub graph: MatchGraph,
    pub store: MatchStore,
    pub mode: MatchingMode,
    /// Pairs proposed by retrieval, or all supplied pairs.
    pub candidate_pairs: usize,
}

/// Engine settings used for every subset reconstruction.
pub fn engine_options(cfg: &PipelineConfig) -> EngineOptions {
    EngineOptions { seed: cfg.rng_seed, ..EngineOptions::default() }
}

pub fn merge_options(cfg: &PipelineConfig) -> MergeOptions {
    MergeOptions {
        ransac: SimilarityRansacOptions { threshold_px: cfg.merge_threshold_px, seed: cfg.rng_seed, ..Default::default() },
        ..Default::default()
    }
}

fn retrieval_pairs(scene: &SceneData, cfg: &PipelineConfig) -> Result<(Vec<MatchPair>, usize), PipelineError> {
    let tcn = |e: &dyn std::fmt::Display| PipelineError::at(Stage::TcnConstruction, e);
    let dim = scene.features.values().find(|f| f.has_descriptors()).map(|f| f.dim).ok_or_else(|| tcn(&"dataset has neither matches nor descriptors"))?;
    let mut samples = Vec::new();
    for f in scene.features.values() {
        if !f.has_descriptors() || f.dim != dim {
            return Err(tcn(&format!("image {} lacks {dim}-d descriptors", f.image_id)));
        }
        for i in f.top_scale(VOCAB_SAMPLES_PER_IMAGE) {
            samples.extend_from_slice(f.descriptor(i));
        }
    }
    let vocab = VocabularyTree::build(&samples, dim, cfg.vocab_branching, cfg.vocab_depth, cfg.rng_seed).map_err(|e| tcn(&e))?;
    let candidates = retrieve_pairs(&scene.features, &vocab, cfg.index_features, cfg.top_k);
    let mut vopts = VerifyOptions::default();
    vopts.two_view.seed = cfg.rng_seed;
    let pairs = verify_matches(&candidates, &scene.features, &scene.intrinsics, &vopts);
    Ok((pairs, candidates.len()))
}

/// Builds the weighted match graph. Pairs below `min_matches` are discarded
/// here and never reach reconstruction or merging.
pub fn build_tcn(scene: &SceneData, cfg: &PipelineConfig) -> Result<Tcn, PipelineError> {
    if scene.metas.is_empty() {
        return Err(PipelineError::at(Stage::TcnConstruction, "empty dataset"));
    }
    let mode = match cfg.matching {
        MatchingMode::Auto if !scene.matches.is_empty() => MatchingMode::Supplied,
        MatchingMode::Auto => MatchingMode::Retrieval,
        m => m,
    };
    let (pairs, candidate_pairs) = match mode {
        MatchingMode::Supplied => {
            let p: Vec<MatchPair> = scene.matches.pairs().cloned().collect();
            let n = p.len();
            (p, n)
        }
        _ => retrieval_pairs(scene, cfg)?,
    };
    let graph = build_match_graph(&pairs, &scene.metas, &scene.features, cfg.min_matches, cfg.r_ew)
        .map_err(|e| PipelineError::at(Stage::TcnConstruction, e))?;
    let store = MatchStore::new(pairs.into_iter().filter(|p| graph.edge(p.image_a, p.image_b).is_some()));
    if store.is_empty() {
        return Err(PipelineError::at(Stage::TcnConstruction, format!("no pair reaches {} matches", cfg.min_matches)));
    }
    Ok(Tcn { graph, store, mode, candidate_pairs })
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterRun {
    /// Cluster index, or `None` for the skeleton.
    pub cluster: Option<usize>,
    pub images: usize,
    pub registered: usize,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub reconstruction: Reconstruction,
    pub metrics: EvalMetrics,
    pub report: MergeReport,
    pub tcn: Tcn,
    pub wcds: WcdsResult,
    pub clustering: Clustering,
    pub skeleton: Option<Reconstruction>,
    pub skeleton_run: ClusterRun,
    /// One entry per cluster; failed clusters are `None`.
    pub cluster_models: Vec<Option<Reconstruction>>,
    pub cluster_runs: Vec<ClusterRun>,
    pub georeferenced: Option<(Reconstruction, CheckResidualTable)>,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Runs every stage on an in-memory dataset. `truth` enables the accuracy
/// metrics; GCPs with at least one control enable geo-referencing.
pub fn run_on(
    scene: &SceneData,
    truth: Option<&Reconstruction>,
    gcps: &[GcpRecord],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let start = Instant::now();

    let t = Instant::now();
    let tcn = build_tcn(scene, cfg)?;
    timings.insert("tcn".to_string(), secs(t));
    info!("match graph: {} images, {} edges", tcn.graph.vertex_count(), tcn.graph.edge_count());

    let t = Instant::now();
    let wcds = extract_wcds(&tcn.graph, cfg.r_vw).map_err(|e| PipelineError::at(Stage::WcdsExtraction, e))?;
    timings.insert("wcds".to_string(), secs(t));
    let t = Instant::now();
    let clustering = normalized_cut(&tcn.graph, cfg.cluster_max_size).map_err(|e| PipelineError::at(Stage::Clustering, e))?;
    timings.insert("clustering".to_string(), secs(t));
    info!("skeleton {} images, {} clusters", wcds.selected_vertices.len(), clustering.clusters.len());

    // skeleton first, then clusters; only intra-subset pairs are visible to each task
    let t = Instant::now();
    let work = SceneData { matches: tcn.store.clone(), ..scene.clone() };
    let mut subsets: Vec<BTreeSet<ImageId>> = vec![wcds.selected_vertices.iter().copied().collect()];
    subsets.extend(clustering.clusters.iter().cloned());
    let opts = engine_options(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count)
        .build()
        .map_err(|e| PipelineError::at(Stage::ParallelReconstruction, e))?;
    let results: Vec<(Result<Reconstruction, String>, f64)> = pool.install(|| {
        subsets
            .par_iter()
            .map(|s| {
                let t = Instant::now();
                let r = incremental_reconstruct(s, &work, &opts).map(|r| r.reconstruction).map_err(|e| e.to_string());
                (r, secs(t))
            })
            .collect()
    });
    timings.insert("reconstruction".to_string(), secs(t));

    let mut runs = Vec::new();
    let mut models = Vec::new();
    for (i, ((res, seconds), s)) in results.into_iter().zip(&subsets).enumerate() {
        let cluster = i.checked_sub(1);
        let run = ClusterRun {
            cluster,
            images: s.len(),
            registered: res.as_ref().map_or(0, |r| r.camera_count()),
            seconds,
            error: res.as_ref().err().cloned(),
        };
        if let Err(e) = &res {
            warn!("{} failed: {e}", cluster.map_or("skeleton".to_string(), |c| format!("cluster {c}")));
        }
        runs.push(run);
        models.push(res.ok().map(|mut r| {
            r.id = i as u32;
            r
        }));
    }
    let skeleton_run = runs.remove(0);
    let skeleton = models.remove(0);

    let t = Instant::now();
    // without a skeleton the largest cluster model takes its place
    let (global, anchor) = match &skeleton {
        Some(s) => (s.clone(), None),
        None => {
            let best = models
                .iter()
                .enumerate()
                .filter_map(|(i, m)| m.as_ref().map(|m| (i, m.camera_count())))
                .fold(None, |b: Option<(usize, usize)>, (i, n)| if b.is_none_or(|(_, bn)| n > bn) { Some((i, n)) } else { b })
                .ok_or_else(|| PipelineError::at(Stage::ParallelReconstruction, "no subset could be reconstructed"))?;
            (models[best.0].clone().unwrap(), Some(best.0))
        }
    };
    let index: Vec<usize> = (0..models.len()).filter(|&i| models[i].is_some() && Some(i) != anchor).collect();
    let inputs: Vec<Reconstruction> = index.iter().map(|&i| models[i].clone().unwrap()).collect();
    let mopts = merge_options(cfg);
    let (merged, mut report) = merge_all(global, &inputs, &tcn.store, &mopts);
    for s in &mut report.steps {
        s.cluster = index[s.cluster];
    }
    for (c, _) in &mut report.failed_attempts {
        *c = index[*c];
    }
    for c in &mut report.dropped {
        *c = index[*c];
    }
    timings.insert("merge".to_string(), secs(t));

    let georeferenced = if gcps.is_empty() {
        None
    } else {
        let t = Instant::now();
        let g = georeference(&merged, gcps, &GeoreferenceOptions::default()).map_err(|e| PipelineError::at(Stage::Georeferencing, e))?;
        timings.insert("georeference".to_string(), secs(t));
        Some(g)
    };
    timings.insert("total".to_string(), secs(start));

    let mut metrics = match truth {
        Some(tr) => evaluate(&merged, tr),
        None => basic_metrics(&merged, scene.metas.len()),
    };
    metrics.timings = timings;
    let out = PipelineOutput {
        reconstruction: merged,
        metrics,
        report,
        tcn,
        wcds,
        clustering,
        skeleton,
        skeleton_run,
        cluster_models: models,
        cluster_runs: runs,
        georeferenced,
    };
    if let Some(dir) = &cfg.output {
        write_artifacts(&out, dir)?;
    }
    Ok(out)
}

fn basic_metrics(recon: &Reconstruction, total: usize) -> EvalMetrics {
    EvalMetrics {
        mean_reprojection_error: recon.mean_reprojection_error(),
        registered_images: recon.camera_count(),
        total_images: total,
        point_count: recon.point_count(),
        observation_count: recon.observation_count(),
        ..Default::default()
    }
}

/// Loads `cfg.dataset` (see [`load_dataset`]) and runs every stage.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let dir = cfg.dataset.as_ref().ok_or_else(|| PipelineError::Config("no dataset path".into()))?;
    let data = load_dataset(dir).map_err(|e| PipelineError::at(Stage::TcnConstruction, e))?;
    run_on(&data.scene, data.truth.as_ref(), &data.gcps, cfg)
}

#[derive(Debug, Clone)]
pub struct MonolithicOutput {
    pub reconstruction: Reconstruction,
    pub metrics: EvalMetrics,
}

/// Single incremental run over every image of the match graph.
pub fn run_monolithic(scene: &SceneData, truth: Option<&Reconstruction>, cfg: &PipelineConfig) -> Result<MonolithicOutput, PipelineError> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let start = Instant::now();
    let t = Instant::now();
    let tcn = build_tcn(scene, cfg)?;
    timings.insert("tcn".to_string(), secs(t));
    let t = Instant::now();
    let work = SceneData { matches: tcn.store, ..scene.clone() };
    let all: BTreeSet<ImageId> = tcn.graph.vertices().clone();
    let recon = incremental_reconstruct(&all, &work, &engine_options(cfg))
        .map_err(|e| PipelineError::at(Stage::ParallelReconstruction, e))?
        .reconstruction;
    timings.insert("reconstruction".to_string(), secs(t));
    timings.insert("total".to_string(), secs(start));
    let mut metrics = match truth {
        Some(tr) => evaluate(&recon, tr),
        None => basic_metrics(&recon, scene.metas.len()),
    };
    metrics.timings = timings;
    Ok(MonolithicOutput { reconstruction: recon, metrics })
}

fn report_text(out: &PipelineOutput) -> String {
    let mut s = String::new();
    let m = &out.metrics;
    writeln!(s, "images registered: {} / {}", m.registered_images, m.total_images).unwrap();
    writeln!(s, "points: {}  observations: {}", m.point_count, m.observation_count).unwrap();
    writeln!(s, "mean reprojection error: {:.4} px", m.mean_reprojection_error).unwrap();
    if let Some(r) = m.position_rmse {
        writeln!(s, "camera position rmse: {r:.6}").unwrap();
    }
    for (k, v) in &m.timings {
        writeln!(s, "time {k}: {v:.3} s").unwrap();
    }
    writeln!(s, "skeleton: {} images, {} registered", out.skeleton_run.images, out.skeleton_run.registered).unwrap();
    for r in &out.cluster_runs {
        let c = r.cluster.unwrap_or(0);
        match &r.error {
            None => writeln!(s, "cluster {c}: {} images, {} registered, {:.3} s", r.images, r.registered, r.seconds),
            Some(e) => writeln!(s, "cluster {c}: {} images, failed: {e}", r.images),
        }
        .unwrap();
    }
    writeln!(s, "merge order:").unwrap();
    for (i, st) in out.report.steps.iter().enumerate() {
        writeln!(
            s,
            "  {i}: cluster {} common {} inliers {} ratio {:.3} mse {:.4} added {} cameras",
            st.cluster, st.common_points, st.inliers, st.inlier_ratio, st.mse, st.cameras_added
        )
        .unwrap();
    }
    writeln!(s, "dropped clusters: {:?}", out.report.dropped).unwrap();
    writeln!(
        s,
        "final BA: {:.4} px -> {:.4} px",
        out.report.mean_error_before_final_ba, out.report.mean_error_after_final_ba
    )
    .unwrap();
    if let Some((_, table)) = &out.georeferenced {
        writeln!(s, "\ncheck point residuals\n{table}").unwrap();
    }
    s
}

/// Per merge step: match records each correspondence strategy would load.
pub fn strategy_csv(report: &MergeReport) -> String {
    let mut s = String::from("step,cluster,on_demand,pairwise,all\n");
    for (i, st) in report.steps.iter().enumerate() {
        writeln!(s, "{i},{},{},{},{}", st.cluster, st.loaded.on_demand, st.loaded.pairwise, st.loaded.all).unwrap();
    }
    s
}

fn write_artifacts(out: &PipelineOutput, dir: &Path) -> Result<(), IoError> {
    io::write_file(&dir.join("graph.txt"), &io::write_graph(&out.tcn.graph))?;
    io::write_file(&dir.join("wcds.txt"), &io::write_wcds(&out.wcds.selected_vertices))?;
    io::write_file(&dir.join("clusters.txt"), &io::write_clusters(&out.clustering))?;
    if let Some(s) = &out.skeleton {
        io::write_file(&dir.join("skeleton.txt"), &io::write_reconstruction(s))?;
    }
    for (i, m) in out.cluster_models.iter().enumerate() {
        if let Some(m) = m {
            io::write_file(&dir.join(format!("cluster_{i}.txt")), &io::write_reconstruction(m))?;
        }
    }
    io::write_file(&dir.join("merged.txt"), &io::write_reconstruction(&out.reconstruction))?;
    io::write_file(&dir.join("report.json"), &serde_json::to_string_pretty(&out.report).expect("report serializes"))?;
    io::write_file(&dir.join("report.txt"), &report_text(out))?;
    io::write_file(&dir.join("strategies.csv"), &strategy_csv(&out.report))?;
    io::write_file(&dir.join("metrics.json"), &out.metrics.to_json())?;
    if let Some((g, table)) = &out.georeferenced {
        io::write_file(&dir.join("georeferenced.txt"), &io::write_reconstruction(g))?;
        io::write_file(&dir.join("check_residuals.txt"), &table.to_string())?;
        io::write_file(&dir.join("check_residuals.json"), &table.to_json())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{generate_synthetic, SynthConfig};

    fn small() -> crate::pipeline::SyntheticDataset {
        generate_synthetic(&SynthConfig { image_count: 40, point_count: 1500, ..SynthConfig::standard() })
    }

    #[test]
    fn empty_dataset_fails_at_tcn() {
        let err = run_on(&SceneData::default(), None, &[], &PipelineConfig::default()).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::TcnConstruction));
    }

    #[test]
    fn unmatched_dataset_fails_at_tcn() {
        let mut ds = small();
        ds.scene.matches = MatchStore::default();
        let cfg = PipelineConfig { matching: MatchingMode::Supplied, ..Default::default() };
        let err = run_on(&ds.scene, None, &[], &cfg).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::TcnConstruction));
    }

    #[test]
    fn small_run_writes_artifacts() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig { cluster_max_size: 15, worker_count: 2, output: Some(dir.path().to_path_buf()), ..Default::default() };
        let out = run_on(&ds.scene, Some(&ds.truth), &[], &cfg).unwrap();
        assert_eq!(out.metrics.registered_images, 40);
        assert!(out.metrics.position_rmse.unwrap() < 0.2);
        for f in ["graph.txt", "wcds.txt", "clusters.txt", "merged.txt", "report.json", "report.txt", "strategies.csv", "metrics.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let csv = std::fs::read_to_string(dir.path().join("strategies.csv")).unwrap();
        assert_eq!(csv.lines().count(), out.report.steps.len() + 1);
    }

    #[test]
    fn worker_count_does_not_change_the_model() {
        let ds = small();
        let run = |w| {
            let cfg = PipelineConfig { cluster_max_size: 15, worker_count: w, ..Default::default() };
            run_on(&ds.scene, None, &[], &cfg).unwrap()
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(io::write_reconstruction(&a.reconstruction), io::write_reconstruction(&b.reconstruction));
        assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    }
}
