//! End-to-end orchestration: ingest -> treatment -> metric/matching CV ->
//! estimation -> density -> heterogeneity, emitting audit CSVs per stage and
//! a single report.json with every summary number.

use crate::config::{RunConfig, StructureInput};
use crate::csvio::Skip;
use crate::density::{density_analysis, DensityCurve, DensityParams};
use crate::error::{Error, Result};
use crate::estimate::{
    ate, cate, cate_variance, heterogeneity_scan, rank_by_ate, CateEstimate, HeterogeneityRow,
    RankedAte,
};
use crate::geo::PointIndex;
use crate::ingest::{
    build_table, filter_violent, load_events, load_structures, load_tracts, AnalysisTable,
    CovariateSchema, EventPoint, Period, StructurePoint,
};
use crate::matching::{
    build_folds, consensus_match, diameter_and_prune, groups_to_csv, match_fold, Consensus,
    MatchedGroup,
};
use crate::metric::{learn_metric, LearnedMetric, Standardizer, TrainingSet};
use crate::rng::derive_seed;
use crate::synth::{generate, SynthPaths};
use crate::treatment::{
    classify_dense, classify_sparse, Label, StructureKind, TreatmentAssignment,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CateRow {
    pub geoid: String,
    pub cate: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldRunReport {
    pub repeat: usize,
    pub fold: usize,
    pub final_objective: Option<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureReport {
    pub kind: StructureKind,
    pub threshold: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub n_dropped: usize,
    pub naive_diff_means: f64,
    pub ate: f64,
    pub ate_sd: f64,
    pub n_consensus_groups: usize,
    pub n_dropped_empty_arm: usize,
    pub n_pruned: usize,
    pub n_retained: usize,
    pub prune_cutoff: f64,
    pub variance_clamped: usize,
    pub fold_runs: Vec<FoldRunReport>,
    pub mean_metric_weights: BTreeMap<String, f64>,
    pub cates: Vec<CateRow>,
    pub heterogeneity: Vec<HeterogeneityRow>,
    pub density: DensityCurve,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub analysis_period: String,
    pub n_tracts: usize,
    pub unassigned_crimes: BTreeMap<String, u64>,
    pub structures: BTreeMap<String, StructureReport>,
    pub ranking: Vec<RankedAte>,
    pub config: serde_json::Value,
}

impl Report {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Report> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Everything loaded from the raw input files.
pub struct PipelineState {
    pub table: AnalysisTable,
    pub violent_events: Vec<EventPoint>,
    pub structures: BTreeMap<String, Vec<StructurePoint>>,
    pub skips: Vec<Skip>,
}

impl PipelineState {
    pub fn load(config: &RunConfig) -> Result<PipelineState> {
        let schema = CovariateSchema::new(config.covariates.clone());
        let (tracts, mut skips) =
            load_tracts(&config.inputs.tracts, &config.inputs.boundaries, &schema)?;
        if tracts.is_empty() {
            return Err(Error::Data("no tracts survived ingestion".into()));
        }
        let events = load_events(&config.inputs.crimes)?;
        skips.extend(events.skips);
        let violent = filter_violent(&events.points, &config.violent_categories);
        let mut structures = BTreeMap::new();
        for input in &config.inputs.structures {
            let load = load_structures(&input.path)?;
            skips.extend(load.skips);
            structures.insert(input.name.clone(), load.points);
        }
        let table = build_table(
            tracts,
            config.covariates.clone(),
            &violent,
            &structures,
            &config.periods,
        )?;
        Ok(PipelineState {
            table,
            violent_events: violent,
            structures,
            skips,
        })
    }

    pub fn period<'c>(&self, config: &'c RunConfig) -> Result<&'c Period> {
        config
            .periods
            .iter()
            .find(|p| p.id == config.analysis_period)
            .ok_or_else(|| Error::Config(format!("unknown period `{}`", config.analysis_period)))
    }

    /// Treatment labels for one structure dataset in the analysis period.
    pub fn assignment_for(
        &self,
        config: &RunConfig,
        input: &StructureInput,
    ) -> Result<TreatmentAssignment> {
        let counts_by_geoid = self
            .table
            .structure_counts
            .get(&input.name)
            .ok_or_else(|| Error::Data(format!("no structure counts for `{}`", input.name)))?;
        let counts: BTreeMap<String, f64> = counts_by_geoid
            .iter()
            .map(|(geoid, per_period)| {
                (
                    geoid.clone(),
                    *per_period.get(&config.analysis_period).unwrap_or(&0) as f64,
                )
            })
            .collect();
        match input.kind {
            StructureKind::Sparse => Ok(classify_sparse(&counts)),
            StructureKind::Dense => classify_dense(&counts, config.treatment.drop_band),
        }
    }

    /// Treated and control tracts as matching units, with the analysis
    /// period's crime rate as the outcome.
    pub fn units_for(
        &self,
        config: &RunConfig,
        assignment: &TreatmentAssignment,
    ) -> Result<TrainingSet> {
        let mut ids = Vec::new();
        let mut covariates = Vec::new();
        let mut outcomes = Vec::new();
        let mut treated = Vec::new();
        for tract in &self.table.tracts {
            let label = match assignment.labels.get(&tract.geoid) {
                Some(l) => *l,
                None => continue,
            };
            if label == Label::Dropped {
                continue;
            }
            let outcome = tract
                .period_outcomes
                .get(&config.analysis_period)
                .ok_or_else(|| {
                    Error::Data(format!(
                        "tract `{}` has no outcome for period `{}`",
                        tract.geoid, config.analysis_period
                    ))
                })?;
            ids.push(tract.geoid.clone());
            covariates.push(tract.covariates.clone());
            outcomes.push(*outcome);
            treated.push(label == Label::Treated);
        }
        TrainingSet::new(ids, covariates, outcomes, treated)
    }

    /// Index over violent crimes inside the analysis period.
    pub fn crime_index(&self, config: &RunConfig) -> Result<PointIndex> {
        let period = self.period(config)?;
        let max_radius = config
            .density
            .radii_m
            .max_radius()
            .max(config.density.sample_radius_m);
        Ok(PointIndex::build(
            self.violent_events
                .iter()
                .enumerate()
                .filter(|(_, e)| period.contains(e.timestamp))
                .map(|(i, e)| (e.location, i)),
            max_radius,
        ))
    }

    /// Structures of one dataset present during the analysis period.
    pub fn structures_in_period(
        &self,
        config: &RunConfig,
        name: &str,
    ) -> Result<Vec<StructurePoint>> {
        let period = self.period(config)?;
        Ok(self
            .structures
            .get(name)
            .ok_or_else(|| Error::Data(format!("no structures dataset named `{name}`")))?
            .iter()
            .filter(|s| s.opened.is_none_or(|d| d <= period.end))
            .cloned()
            .collect())
    }
}

pub struct MatchStage {
    pub fold_runs: Vec<FoldRunReport>,
    pub consensus: Consensus,
    pub retained: Vec<MatchedGroup>,
    pub n_pruned: usize,
    pub prune_cutoff: f64,
    pub mean_weights: Vec<f64>,
    pub metric_csvs: Vec<(String, String)>,
}

enum RunOutcome {
    Done {
        metric: LearnedMetric,
        groups: Vec<MatchedGroup>,
    },
    Skipped(String),
}

/// Repeated cross-validated matching for one structure dataset: per (repeat,
/// fold) run, the metric is learned on the other folds and groups are formed
/// among the held-out fold's units; consensus and diameter pruning follow.
pub fn match_structure(
    config: &RunConfig,
    units: &TrainingSet,
    structure_name: &str,
) -> Result<MatchStage> {
    let m = &config.matching;
    let plan = build_folds(
        &units.ids,
        m.repeats,
        m.folds,
        derive_seed(config.seed, &format!("folds:{structure_name}")),
    )?;
    let run_keys: Vec<(usize, usize)> = (0..m.repeats)
        .flat_map(|r| (0..m.folds).map(move |f| (r, f)))
        .collect();

    let outcomes: Vec<Result<RunOutcome>> = run_keys
        .par_iter()
        .map(|&(repeat, fold)| {
            let estimation_ids = plan.fold_members(repeat, fold);
            let estimation_set: BTreeSet<&str> =
                estimation_ids.iter().map(String::as_str).collect();
            let mut train_idx = Vec::new();
            let mut est_idx = Vec::new();
            for (i, id) in units.ids.iter().enumerate() {
                if estimation_set.contains(id.as_str()) {
                    est_idx.push(i);
                } else {
                    train_idx.push(i);
                }
            }
            let training = units.subset(&train_idx);
            let seed = derive_seed(
                config.seed,
                &format!("metric:{structure_name}:{repeat}:{fold}"),
            );
            let metric = match learn_metric(&training, &config.metric, seed) {
                Ok(metric) => metric,
                Err(Error::Data(reason)) => return Ok(RunOutcome::Skipped(reason)),
                Err(e) => return Err(e),
            };
            let estimation = units.subset(&est_idx);
            match match_fold(&metric, &estimation, m.neighbors) {
                Ok(groups) => Ok(RunOutcome::Done { metric, groups }),
                Err(Error::Data(reason)) => Ok(RunOutcome::Skipped(reason)),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut fold_runs = Vec::new();
    let mut run_groups = Vec::new();
    let mut run_weights: Vec<Vec<f64>> = Vec::new();
    let mut metric_csvs = Vec::new();
    for (&(repeat, fold), outcome) in run_keys.iter().zip(outcomes) {
        match outcome? {
            RunOutcome::Done { metric, groups } => {
                fold_runs.push(FoldRunReport {
                    repeat,
                    fold,
                    final_objective: metric.objective_trace.last().copied(),
                    skipped: None,
                });
                let seed = derive_seed(
                    config.seed,
                    &format!("metric:{structure_name}:{repeat}:{fold}"),
                );
                metric_csvs.push((
                    format!("metric_r{repeat}_f{fold}.csv"),
                    metric.to_csv(&config.covariates, &config.metric, seed),
                ));
                run_weights.push(metric.weights.clone());
                run_groups.push(groups);
            }
            RunOutcome::Skipped(reason) => {
                eprintln!("warning: {structure_name} run ({repeat},{fold}) skipped: {reason}");
                fold_runs.push(FoldRunReport {
                    repeat,
                    fold,
                    final_objective: None,
                    skipped: Some(reason),
                });
            }
        }
    }
    if run_groups.is_empty() {
        return Err(Error::Data(format!(
            "every cross-validation run for `{structure_name}` was skipped"
        )));
    }

    let consensus = consensus_match(&run_groups, m.min_co_match)?;

    // Pruning metric: per-covariate mean of the run weights, in a
    // standardization fit on all units.
    let p = units.width();
    let mut mean_weights = vec![0.0; p];
    for weights in &run_weights {
        for (acc, w) in mean_weights.iter_mut().zip(weights) {
            *acc += w / run_weights.len() as f64;
        }
    }
    let prune_metric =
        LearnedMetric::new(mean_weights.clone(), Standardizer::fit(&units.covariates));
    let prune = diameter_and_prune(&consensus.groups, &prune_metric, units, m.prune_percentile)?;

    Ok(MatchStage {
        fold_runs,
        consensus,
        retained: prune.retained,
        n_pruned: prune.pruned.len(),
        prune_cutoff: prune.cutoff,
        mean_weights,
        metric_csvs,
    })
}

pub struct EstimateStage {
    pub estimates: Vec<CateEstimate>,
    pub ate: f64,
    pub ate_sd: f64,
    pub variance_clamped: usize,
}

/// CATEs over the retained groups, the ATE, and quantile-regression CATE
/// variances.
pub fn estimate_structure(
    config: &RunConfig,
    units: &TrainingSet,
    retained: &[MatchedGroup],
    structure_name: &str,
) -> Result<EstimateStage> {
    let outcomes: BTreeMap<String, f64> = units
        .ids
        .iter()
        .zip(&units.outcomes)
        .map(|(id, y)| (id.clone(), *y))
        .collect();
    let mut estimates = Vec::with_capacity(retained.len());
    for group in retained {
        let value = cate(group, &outcomes)?;
        let qi = units
            .index_of(&group.query)
            .ok_or_else(|| Error::Data(format!("unknown query geoid `{}`", group.query)))?;
        estimates.push(CateEstimate {
            geoid: group.query.clone(),
            value,
            variance: 0.0,
            covariates: units.covariates[qi].clone(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::Data(format!(
            "no retained matched groups for `{structure_name}`"
        )));
    }
    let mut variance_clamped = 0;
    if estimates.len() >= 20 {
        let mut gbqr = config.estimation.gbqr.clone();
        gbqr.seed = derive_seed(config.seed, &format!("gbqr:{structure_name}"));
        let report = cate_variance(
            &mut estimates,
            config.estimation.q_lo,
            config.estimation.q_hi,
            &gbqr,
        )?;
        variance_clamped = report.clamped;
        if variance_clamped > 0 {
            eprintln!(
                "warning: {structure_name}: {variance_clamped} units had crossing quantile fits; spread clamped to zero"
            );
        }
    } else {
        eprintln!(
            "warning: {structure_name}: only {} estimates; skipping variance fit",
            estimates.len()
        );
    }
    let point = ate(&estimates)?;
    let n = estimates.len() as f64;
    let ate_sd = (estimates.iter().map(|e| e.variance).sum::<f64>()).sqrt() / n;
    Ok(EstimateStage {
        estimates,
        ate: point,
        ate_sd,
        variance_clamped,
    })
}

/// Unmatched difference of arm outcome means, for bias diagnostics.
pub fn naive_diff_means(units: &TrainingSet) -> f64 {
    let mut t_sum = 0.0;
    let mut t_n = 0.0;
    let mut c_sum = 0.0;
    let mut c_n = 0.0;
    for i in 0..units.len() {
        if units.treated[i] {
            t_sum += units.outcomes[i];
            t_n += 1.0;
        } else {
            c_sum += units.outcomes[i];
            c_n += 1.0;
        }
    }
    t_sum / t_n - c_sum / c_n
}

pub fn estimates_to_csv(estimates: &[CateEstimate]) -> String {
    let mut out = String::from("geoid,cate,variance\n");
    for e in estimates {
        out.push_str(&format!("{},{},{}\n", e.geoid, e.value, e.variance));
    }
    out
}

pub fn heterogeneity_to_csv(rows: &[HeterogeneityRow]) -> String {
    let mut out = String::from("covariate,slope,r2,substantial\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.covariate, r.slope, r.r2, r.substantial
        ));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn structure_dir(config: &RunConfig, name: &str) -> PathBuf {
    config.out_dir.join(name)
}

/// The whole pipeline for every configured structure dataset, writing stage
/// artifacts and report.json under the output directory.
pub fn run_pipeline(config: &RunConfig) -> Result<Report> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let state = PipelineState::load(config)?;
    let skip_lines: String = state.skips.iter().map(|s| format!("{s}\n")).collect();
    write_file(&config.out_dir.join("skips.txt"), &skip_lines)?;
    state
        .table
        .save(&config.out_dir.join("analysis_table.json"))?;

    let crime_index = state.crime_index(config)?;
    let mut structures = BTreeMap::new();
    let mut ate_entries: BTreeMap<String, (f64, f64)> = BTreeMap::new();

    for input in &config.inputs.structures {
        let dir = structure_dir(config, &input.name);
        let assignment = state.assignment_for(config, input)?;
        write_file(&dir.join("treatment.csv"), &assignment.to_csv())?;

        let units = state.units_for(config, &assignment)?;
        let matched = match_structure(config, &units, &input.name)?;
        for (name, csv) in &matched.metric_csvs {
            write_file(&dir.join(name), csv)?;
        }
        write_file(
            &dir.join("matched_groups.csv"),
            &groups_to_csv(&matched.retained, &matched.consensus),
        )?;
        let pruned_groups: Vec<MatchedGroup> = matched
            .consensus
            .groups
            .iter()
            .filter(|g| !matched.retained.iter().any(|r| r.query == g.query))
            .cloned()
            .collect();
        write_file(
            &dir.join("matched_groups_pruned.csv"),
            &groups_to_csv(&pruned_groups, &matched.consensus),
        )?;

        let estimated = estimate_structure(config, &units, &matched.retained, &input.name)?;
        write_file(
            &dir.join("estimates.csv"),
            &estimates_to_csv(&estimated.estimates),
        )?;

        let heterogeneity = heterogeneity_scan(
            &estimated.estimates,
            &config.covariates,
            config.estimation.heterogeneity_r2,
        )?;
        write_file(
            &dir.join("heterogeneity.csv"),
            &heterogeneity_to_csv(&heterogeneity),
        )?;

        let density = density_analysis(
            &assignment,
            &matched.retained,
            &state.structures_in_period(config, &input.name)?,
            &crime_index,
            &state.table.tracts,
            &DensityParams {
                grid: config.density.radii_m.clone(),
                n_samples: config.density.n_samples,
                sample_radius_m: config.density.sample_radius_m,
                seed: derive_seed(config.seed, &format!("density:{}", input.name)),
                mode: config.density.mode,
                restrict_to_tract: config.density.restrict_to_tract,
            },
        )?;
        write_file(&dir.join("density.csv"), &density.to_csv())?;

        ate_entries.insert(input.name.clone(), (estimated.ate, estimated.ate_sd));
        structures.insert(
            input.name.clone(),
            StructureReport {
                kind: input.kind,
                threshold: assignment.threshold,
                n_treated: assignment.n_with(Label::Treated),
                n_control: assignment.n_with(Label::Control),
                n_dropped: assignment.n_with(Label::Dropped),
                naive_diff_means: naive_diff_means(&units),
                ate: estimated.ate,
                ate_sd: estimated.ate_sd,
                n_consensus_groups: matched.consensus.groups.len(),
                n_dropped_empty_arm: matched.consensus.dropped.len(),
                n_pruned: matched.n_pruned,
                n_retained: matched.retained.len(),
                prune_cutoff: matched.prune_cutoff,
                variance_clamped: estimated.variance_clamped,
                fold_runs: matched.fold_runs,
                mean_metric_weights: config
                    .covariates
                    .iter()
                    .cloned()
                    .zip(matched.mean_weights.iter().copied())
                    .collect(),
                cates: estimated
                    .estimates
                    .iter()
                    .map(|e| CateRow {
                        geoid: e.geoid.clone(),
                        cate: e.value,
                        variance: e.variance,
                    })
                    .collect(),
                heterogeneity,
                density,
            },
        );
    }

    let report = Report {
        seed: config.seed,
        analysis_period: config.analysis_period.clone(),
        n_tracts: state.table.tracts.len(),
        unassigned_crimes: state.table.unassigned_crimes.clone(),
        structures,
        ranking: rank_by_ate(&ate_entries),
        config: config.to_value(),
    };
    report.save(&config.out_dir.join("report.json"))?;
    Ok(report)
}

/// Generate the configured synthetic dataset under `<out_dir>/synth/`.
pub fn run_synth(config: &RunConfig) -> Result<SynthPaths> {
    let spec = config
        .synth
        .as_ref()
        .ok_or_else(|| Error::Config("config has no `synth` section".into()))?;
    let data = generate(spec)?;
    data.write_to(&config.out_dir.join("synth"))
}

pub fn run_ingest(config: &RunConfig) -> Result<AnalysisTable> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let state = PipelineState::load(config)?;
    let skip_lines: String = state.skips.iter().map(|s| format!("{s}\n")).collect();
    write_file(&config.out_dir.join("skips.txt"), &skip_lines)?;
    state
        .table
        .save(&config.out_dir.join("analysis_table.json"))?;
    Ok(state.table)
}

pub fn run_treat(config: &RunConfig) -> Result<()> {
    let state = PipelineState::load(config)?;
    for input in &config.inputs.structures {
        let assignment = state.assignment_for(config, input)?;
        write_file(
            &structure_dir(config, &input.name).join("treatment.csv"),
            &assignment.to_csv(),
        )?;
    }
    Ok(())
}

pub fn run_match(config: &RunConfig) -> Result<()> {
    let state = PipelineState::load(config)?;
    for input in &config.inputs.structures {
        let dir = structure_dir(config, &input.name);
        let assignment = state.assignment_for(config, input)?;
        let units = state.units_for(config, &assignment)?;
        let matched = match_structure(config, &units, &input.name)?;
        for (name, csv) in &matched.metric_csvs {
            write_file(&dir.join(name), csv)?;
        }
        write_file(
            &dir.join("matched_groups.csv"),
            &groups_to_csv(&matched.retained, &matched.consensus),
        )?;
    }
    Ok(())
}

/// Parse a matched-groups CSV back into groups (one per query geoid).
pub fn parse_groups_csv(path: &Path) -> Result<Vec<MatchedGroup>> {
    let table = crate::csvio::Table::read(path)?;
    let q = table.column("query_geoid")?;
    let n = table.column("neighbor_geoid")?;
    let a = table.column("arm")?;
    let d = table.column("diameter")?;
    let mut by_query: BTreeMap<String, MatchedGroup> = BTreeMap::new();
    for row in &table.rows {
        let query = table.field(row, q)?.to_string();
        let neighbor = table.field(row, n)?.to_string();
        let arm = table.field(row, a)?;
        let diameter: f64 = table
            .field(row, d)?
            .parse()
            .map_err(|_| table.malformed(row.0, "bad diameter"))?;
        let group = by_query
            .entry(query.clone())
            .or_insert_with(|| MatchedGroup {
                query,
                treated_neighbors: BTreeSet::new(),
                control_neighbors: BTreeSet::new(),
                diameter,
            });
        match arm {
            "treated" => {
                group.treated_neighbors.insert(neighbor);
            }
            "control" => {
                group.control_neighbors.insert(neighbor);
            }
            other => return Err(table.malformed(row.0, format!("unknown arm `{other}`"))),
        }
    }
    Ok(by_query.into_values().collect())
}

pub fn run_estimate(config: &RunConfig) -> Result<()> {
    let state = PipelineState::load(config)?;
    for input in &config.inputs.structures {
        let dir = structure_dir(config, &input.name);
        let assignment = state.assignment_for(config, input)?;
        let units = state.units_for(config, &assignment)?;
        let retained = parse_groups_csv(&dir.join("matched_groups.csv"))?;
        let estimated = estimate_structure(config, &units, &retained, &input.name)?;
        write_file(
            &dir.join("estimates.csv"),
            &estimates_to_csv(&estimated.estimates),
        )?;
    }
    Ok(())
}

/// Parse an estimates CSV, rebuilding covariates from the analysis table.
fn parse_estimates_csv(path: &Path, table: &AnalysisTable) -> Result<Vec<CateEstimate>> {
    let parsed = crate::csvio::Table::read(path)?;
    let g = parsed.column("geoid")?;
    let c = parsed.column("cate")?;
    let v = parsed.column("variance")?;
    let mut estimates = Vec::new();
    for row in &parsed.rows {
        let geoid = parsed.field(row, g)?.to_string();
        let value: f64 = parsed
            .field(row, c)?
            .parse()
            .map_err(|_| parsed.malformed(row.0, "bad cate"))?;
        let variance: f64 = parsed
            .field(row, v)?
            .parse()
            .map_err(|_| parsed.malformed(row.0, "bad variance"))?;
        let tract = table
            .tract(&geoid)
            .ok_or_else(|| Error::Data(format!("estimate for unknown geoid `{geoid}`")))?;
        estimates.push(CateEstimate {
            geoid,
            value,
            variance,
            covariates: tract.covariates.clone(),
        });
    }
    Ok(estimates)
}

pub fn run_heterogeneity(config: &RunConfig) -> Result<()> {
    let state = PipelineState::load(config)?;
    for input in &config.inputs.structures {
        let dir = structure_dir(config, &input.name);
        let estimates = parse_estimates_csv(&dir.join("estimates.csv"), &state.table)?;
        let rows = heterogeneity_scan(
            &estimates,
            &config.covariates,
            config.estimation.heterogeneity_r2,
        )?;
        write_file(&dir.join("heterogeneity.csv"), &heterogeneity_to_csv(&rows))?;
    }
    Ok(())
}

pub fn run_density(config: &RunConfig) -> Result<()> {
    let state = PipelineState::load(config)?;
    let crime_index = state.crime_index(config)?;
    for input in &config.inputs.structures {
        let dir = structure_dir(config, &input.name);
        let assignment = state.assignment_for(config, input)?;
        let retained = parse_groups_csv(&dir.join("matched_groups.csv"))?;
        let density = density_analysis(
            &assignment,
            &retained,
            &state.structures_in_period(config, &input.name)?,
            &crime_index,
            &state.table.tracts,
            &DensityParams {
                grid: config.density.radii_m.clone(),
                n_samples: config.density.n_samples,
                sample_radius_m: config.density.sample_radius_m,
                seed: derive_seed(config.seed, &format!("density:{}", input.name)),
                mode: config.density.mode,
                restrict_to_tract: config.density.restrict_to_tract,
            },
        )?;
        write_file(&dir.join("density.csv"), &density.to_csv())?;
    }
    Ok(())
}
