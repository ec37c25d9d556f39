//! One function per subcommand; each wires library calls to artifacts.
//!
//! Expensive work happens inside the `run_command` body so a failure at
//! any point still sweeps this run's partial outputs. Random streams are
//! all derived from the root seed by name (`synth`, `split`, `train`,
//! `baseline`), keeping commands independently reproducible.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use vecprobe::attribution::{
    aggregate_by_feature_group, aggregate_by_polyline_type, aggregate_by_vector, baseline_sweep,
    feature_means, integrated_gradients, write_attribution_csv_multi, AttributionDump,
    AttributionResult, BaselineSpec, GroupShare, SweepReport, TypeShare,
};
use vecprobe::ingest::{
    build_cases, parse_map, parse_tracks, split_dataset, write_map, write_tracks, DatasetSplit,
};
use vecprobe::metrics::{
    cross_scenario, evaluate_model, write_matrix_csv, write_matrix_json, MetricsReport,
};
use vecprobe::model::{self, load_checkpoint, save_checkpoint, train, ModelParams};
use vecprobe::render::{render_scene_svg, RenderOptions};
use vecprobe::scene::{build_graph_input, FeatureSchema, GraphInput, PredictionCase};
use vecprobe::seeding::seed_stream;
use vecprobe::synth::generate;

use crate::artifacts::run_command;
use crate::config::RunConfig;
use crate::error::CliError;

fn load_dataset(cfg: &RunConfig) -> Result<DatasetSplit, CliError> {
    let path = cfg.dataset_path();
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("reading dataset {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("parsing dataset {}: {e}", path.display())))
}

fn load_model(cfg: &RunConfig) -> Result<ModelParams, CliError> {
    let path = cfg.checkpoint_path();
    let (params, _) = load_checkpoint(&path)?;
    Ok(params)
}

/// Per-column node means pooled over the whole training split.
fn train_feature_means(
    train_cases: &[PredictionCase],
    params: &ModelParams,
    schema: &FeatureSchema,
) -> Result<Vec<f64>, CliError> {
    if train_cases.is_empty() {
        return Err(CliError::Data(
            "training split is empty; cannot pool baseline feature means".into(),
        ));
    }
    let graphs: Vec<GraphInput> = train_cases
        .iter()
        .map(|c| build_graph_input(c, schema, params.hp.max_seg_len))
        .collect::<Result<_, _>>()?;
    Ok(feature_means(&graphs)?)
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    run_command("synth", cfg, |set| {
        let spec = cfg.synth_spec();
        let output = generate(&spec)?;
        log::info!(
            "synth: {} rows, {} tracks, {} polylines",
            output.manifest.track_row_count,
            output.manifest.agent_track_count,
            output.manifest.polyline_count
        );
        write_tracks(&set.stage("tracks.csv"), &output.tracks)?;
        set.commit("tracks.csv")?;
        write_map(&set.stage("map.json"), &output.map)?;
        set.commit("map.json")?;
        set.write_json("synth_manifest.json", &output.manifest)?;
        Ok(())
    })
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let tracks_path = cfg
        .tracks
        .clone()
        .ok_or_else(|| CliError::Config("data.tracks is required for ingest".into()))?;
    let map_path = cfg
        .map
        .clone()
        .ok_or_else(|| CliError::Config("data.map is required for ingest".into()))?;
    run_command("ingest", cfg, |set| {
        let tracks = parse_tracks(&tracks_path)?;
        let map = parse_map(&map_path)?;
        let cases = build_cases(&tracks, &map, cfg.t_h, cfg.t_f, cfg.stride)?;
        let split = split_dataset(
            cases,
            cfg.split_fraction,
            seed_stream(cfg.seed, "split"),
            &cfg.scenario_name(),
        )?;
        log::info!(
            "ingest: {} train / {} test cases for scenario {:?}",
            split.train.len(),
            split.test.len(),
            split.scenario_name
        );
        set.write_json("dataset.json", &split)?;
        Ok(())
    })
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    run_command("train", cfg, |set| {
        let split = load_dataset(cfg)?;
        let tc = cfg.train_config();
        let outcome = train(&split.train, cfg.hyper_params(), &tc)?;
        if let Some(last) = outcome.loss_history.last() {
            log::info!(
                "train: {} epochs on {} cases, final loss {last:.6}",
                outcome.loss_history.len(),
                split.train.len()
            );
        }
        save_checkpoint(&set.stage("checkpoint.json"), &outcome.params, tc.seed)?;
        set.commit("checkpoint.json")?;
        set.write_json("loss_history.json", &outcome.loss_history)?;
        Ok(())
    })
}

#[derive(Serialize)]
struct MetricsArtifact {
    scenario: String,
    train: MetricsReport,
    test: MetricsReport,
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    run_command("evaluate", cfg, |set| {
        let split = load_dataset(cfg)?;
        let params = load_model(cfg)?;
        let artifact = MetricsArtifact {
            scenario: split.scenario_name.clone(),
            train: evaluate_model(&params, &split.train)?,
            test: evaluate_model(&params, &split.test)?,
        };
        log::info!(
            "evaluate: test minADE {:.3} m, minFDE {:.3} m, MR {:.3}",
            artifact.test.min_ade,
            artifact.test.min_fde,
            artifact.test.miss_rate
        );
        set.write_json("metrics.json", &artifact)?;
        Ok(())
    })
}

pub fn cross(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.cross_scenarios.len() < 2 {
        return Err(CliError::Config(format!(
            "cross.scenarios needs at least 2 directories, got {}",
            cfg.cross_scenarios.len()
        )));
    }
    if cfg.cross_seeds.is_empty() {
        return Err(CliError::Config(
            "cross.seeds must list at least one seed".into(),
        ));
    }
    run_command("cross", cfg, |set| {
        let mut scenarios = BTreeMap::new();
        for dir in &cfg.cross_scenarios {
            let name = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "cross scenario path {} has no directory name",
                        dir.display()
                    ))
                })?;
            if scenarios.contains_key(&name) {
                return Err(CliError::Config(format!(
                    "cross scenario name {name:?} appears twice; rename one directory"
                )));
            }
            let tracks = parse_tracks(&dir.join("tracks.csv"))?;
            let map = parse_map(&dir.join("map.json"))?;
            let cases = build_cases(&tracks, &map, cfg.t_h, cfg.t_f, cfg.stride)?;
            let split = split_dataset(
                cases,
                cfg.split_fraction,
                seed_stream(cfg.seed, &format!("split:{name}")),
                &name,
            )?;
            scenarios.insert(name, split);
        }
        let matrix = cross_scenario(
            &scenarios,
            &cfg.hyper_params(),
            &cfg.train_config(),
            &cfg.cross_seeds,
        )?;
        for (name, err) in matrix.scenarios.iter().zip(&matrix.row_errors) {
            if let Some(err) = err {
                log::warn!("cross: training row {name:?} failed: {err}");
            }
        }
        write_matrix_json(&set.stage("cross_matrix.json"), &matrix)?;
        set.commit("cross_matrix.json")?;
        write_matrix_csv(&set.stage("cross_matrix.csv"), &matrix)?;
        set.commit("cross_matrix.csv")?;
        Ok(())
    })
}

#[derive(Serialize)]
struct CaseSummary {
    case_key: String,
    steps: usize,
    score_input: f64,
    score_baseline: f64,
    completeness_gap: f64,
    relevance_normalizer: f64,
    type_share: TypeShare,
    group_shares: Vec<GroupShare>,
}

/// Baseline recipe for one case; noise streams fan out per case key so
/// every case sees an independent but reproducible draw.
fn case_baseline(
    cfg: &RunConfig,
    means: &[f64],
    schema: &FeatureSchema,
    case: &PredictionCase,
) -> BaselineSpec {
    let root = seed_stream(cfg.seed, "baseline");
    BaselineSpec {
        sigma: cfg.sigma,
        feature_means: means.to_vec(),
        seed: seed_stream(root, &case.key()),
        schema: schema.clone(),
    }
}

fn attribute_case(
    cfg: &RunConfig,
    params: &ModelParams,
    means: &[f64],
    schema: &FeatureSchema,
    case: &PredictionCase,
) -> Result<(GraphInput, AttributionResult), CliError> {
    let spec = case_baseline(cfg, means, schema, case);
    let graph = build_graph_input(case, schema, params.hp.max_seg_len)?;
    let result = integrated_gradients(params, case, &spec, cfg.steps)?;
    Ok((graph, result))
}

pub fn attribute(cfg: &RunConfig) -> Result<(), CliError> {
    run_command("attribute", cfg, |set| {
        let split = load_dataset(cfg)?;
        let params = load_model(cfg)?;
        let schema = FeatureSchema::standard();
        let means = train_feature_means(&split.train, &params, &schema)?;
        if split.test.is_empty() {
            return Err(CliError::Data(
                "test split is empty; nothing to attribute".into(),
            ));
        }
        let picked = &split.test[..cfg.attribution_cases.min(split.test.len())];
        let attributed: Vec<(String, GraphInput, AttributionResult)> = picked
            .par_iter()
            .map(|case| {
                attribute_case(cfg, &params, &means, &schema, case)
                    .map(|(graph, result)| (case.key(), graph, result))
            })
            .collect::<Result<_, _>>()?;
        let summaries: Vec<CaseSummary> = attributed
            .iter()
            .map(|(key, graph, result)| CaseSummary {
                case_key: key.clone(),
                steps: result.steps,
                score_input: result.score_input,
                score_baseline: result.score_baseline,
                completeness_gap: result.completeness_gap,
                relevance_normalizer: aggregate_by_vector(result).normalizer,
                type_share: aggregate_by_polyline_type(result, graph),
                group_shares: aggregate_by_feature_group(result, &schema),
            })
            .collect();
        log::info!(
            "attribute: {} cases, {} steps each",
            attributed.len(),
            cfg.steps
        );
        let dumps: Vec<AttributionDump> = attributed
            .iter()
            .map(|(key, graph, result)| AttributionDump {
                case_key: key.clone(),
                graph,
                result,
            })
            .collect();
        write_attribution_csv_multi(&set.stage("attribution.csv"), &dumps)?;
        set.commit("attribution.csv")?;
        set.write_json("attribution_summary.json", &summaries)?;
        Ok(())
    })
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Data(format!("writing {}: {e}", path.display()))
}

fn write_sweep_csv(path: &Path, report: &SweepReport) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["sigma", "actual", "proposed", "all_zero", "all_gaussian"])
        .map_err(|e| csv_err(path, e))?;
    for (i, sigma) in report.sigmas.iter().enumerate() {
        writer
            .write_record([
                sigma.to_string(),
                report.actual[i].to_string(),
                report.proposed[i].to_string(),
                report.all_zero[i].to_string(),
                report.all_gaussian[i].to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    run_command("sweep", cfg, |set| {
        let split = load_dataset(cfg)?;
        let params = load_model(cfg)?;
        let schema = FeatureSchema::standard();
        let means = train_feature_means(&split.train, &params, &schema)?;
        if split.test.is_empty() {
            return Err(CliError::Data(
                "test split is empty; nothing to sweep".into(),
            ));
        }
        let picked = &split.test[..cfg.sweep_cases.min(split.test.len())];
        let report = baseline_sweep(
            &params,
            picked,
            &cfg.sweep_sigmas,
            &means,
            seed_stream(cfg.seed, "baseline"),
            &schema,
        )?;
        log::info!(
            "sweep: {} sigma points over {} cases",
            report.sigmas.len(),
            picked.len()
        );
        set.write_json("sweep.json", &report)?;
        write_sweep_csv(&set.stage("sweep.csv"), &report)?;
        set.commit("sweep.csv")?;
        Ok(())
    })
}

pub fn render(cfg: &RunConfig) -> Result<(), CliError> {
    run_command("render", cfg, |set| {
        let split = load_dataset(cfg)?;
        let params = load_model(cfg)?;
        let schema = FeatureSchema::standard();
        let means = train_feature_means(&split.train, &params, &schema)?;
        for &idx in &cfg.render_cases {
            let case = split.test.get(idx).ok_or_else(|| {
                CliError::Config(format!(
                    "render.cases index {idx} out of range ({} test cases)",
                    split.test.len()
                ))
            })?;
            let (graph, result) = attribute_case(cfg, &params, &means, &schema, case)?;
            let relevance = aggregate_by_vector(&result);
            let prediction = model::predict(case, &params)?;
            let svg = render_scene_svg(
                case,
                &graph,
                &relevance,
                Some(&prediction),
                &RenderOptions::default(),
            );
            set.write_bytes(&format!("scene_{idx:03}.svg"), svg.as_bytes())?;
        }
        log::info!("render: {} scene(s)", cfg.render_cases.len());
        Ok(())
    })
}
