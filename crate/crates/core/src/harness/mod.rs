// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment orchestration: build or load a model, generate or load the
//! evaluation datasets, run every intervention over every prompt and collect
//! metrics into an [`EvalReport`].
//!
//! Prompts are evaluated in parallel on a pool of `jobs` threads; results are
//! merged in prompt order, so reports do not depend on the thread count.

mod attn;
mod config;
mod report;

use rayon::prelude::*;

pub use attn::{decode_attention, dump_attention, encode_attention, load_attention, AttentionRecord};
pub use config::{
    DatasetSection, ExperimentConfig, InterventionEntry, KindName, ModelSection, SweepSection, TrainSection,
};
pub use report::{CellResult, DatasetResult, EvalReport, ReportMeta};

use crate::benchgen::{self, Dataset, TaskFamily};
use crate::decoder::{self, Answer, DecoderParams};
use crate::error::{Error, Result};
use crate::intervention::{InterventionKind, InterventionSpec, LayerScope, RowRewriteStats};
use crate::metrics::{MetricBlock, ResponseRecord};
use crate::modality::{modality_mass, ModalityMass};
use crate::trainer::{self, TrainReport};

/// Name of the no-intervention column every report starts with.
pub const BASELINE_NAME: &str = "baseline";

/// Global transfer fractions added by a graduated sweep.
pub const GRADUATED_FRACTIONS: [f64; 3] = [0.1, 0.2, 0.3];

/// A model ready for evaluation.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub params: DecoderParams,
    /// Present when the model was trained rather than loaded.
    pub train_report: Option<TrainReport>,
}

/// Seed for the generated training set.
pub fn training_data_seed(config: &ExperimentConfig) -> u64 {
    config
        .train
        .as_ref()
        .and_then(|t| t.data_seed)
        .unwrap_or(config.seed.wrapping_add(1))
}

/// The training set: loaded from `train.path` or generated.
pub fn build_training_set(config: &ExperimentConfig) -> Result<Dataset> {
    let train = config
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("no [train] section".into()))?;
    let data = match &train.path {
        Some(path) => benchgen::load_dataset(config.resolve(path))?,
        None => benchgen::generate_training_set(&config.schema, &train.set_spec(), training_data_seed(config))?,
    };
    if data.schema != config.schema {
        return Err(Error::Config("training set schema differs from the configured schema".into()));
    }
    Ok(data)
}

/// Loads the configured checkpoint, or initialises and trains a model.
pub fn prepare_model(config: &ExperimentConfig) -> Result<PreparedModel> {
    config.validate()?;
    let expected = config.decoder_config();
    if let Some(path) = &config.model.checkpoint {
        let params = decoder::load_checkpoint(config.resolve(path))?;
        if *params.config() != expected {
            return Err(Error::Config(format!(
                "checkpoint shape {:?} does not match the configured model {:?}",
                params.config(),
                expected
            )));
        }
        return Ok(PreparedModel {
            params,
            train_report: None,
        });
    }
    let train = config.train.as_ref().expect("validated");
    let data = build_training_set(config)?;
    let init = trainer::init_params(&expected, config.seed)?;
    let (params, report) = trainer::train(init, &data, &train.train_config(config.seed))?;
    Ok(PreparedModel {
        params,
        train_report: Some(report),
    })
}

/// Evaluation datasets in config order.
pub fn build_datasets(config: &ExperimentConfig) -> Result<Vec<(String, Dataset)>> {
    config
        .datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let data = match &d.path {
                Some(path) => benchgen::load_dataset(config.resolve(path))?,
                None => {
                    let family = d.family.expect("validated");
                    let pairs = d.pairs.expect("validated");
                    let image_len = d.image_len.unwrap_or(benchgen::DEFAULT_IMAGE_LEN);
                    let seed = d.seed.unwrap_or(config.seed.wrapping_add(1000 + i as u64));
                    match family {
                        TaskFamily::Fine => benchgen::generate_fine_task_with(
                            &config.schema,
                            pairs,
                            image_len,
                            d.distractor.unwrap_or_default(),
                            seed,
                        )?,
                        TaskFamily::Coarse => benchgen::generate_coarse_task(&config.schema, pairs, image_len, seed)?,
                    }
                }
            };
            if data.is_empty() {
                return Err(Error::EmptyInput);
            }
            Ok((d.name.clone(), data))
        })
        .collect()
}

/// Baseline first, then the configured interventions. Entries of kind
/// `none` merge into the baseline instead of running twice.
pub fn intervention_grid(entries: &[InterventionEntry]) -> Result<Vec<(String, InterventionSpec)>> {
    let mut grid = vec![(BASELINE_NAME.to_string(), InterventionSpec::none())];
    for e in entries {
        let spec = e.to_spec()?;
        if spec.kind == InterventionKind::None {
            continue;
        }
        if e.name == BASELINE_NAME {
            return Err(Error::Config(format!("`{BASELINE_NAME}` is reserved for the no-intervention run")));
        }
        grid.push((e.name.clone(), spec));
    }
    Ok(grid)
}

/// Expands a scope-less template into per-quarter entries and, optionally,
/// graduated global transfers.
pub fn sweep_entries(sweep: &SweepSection) -> Result<Vec<InterventionEntry>> {
    let t = &sweep.template;
    if t.scope.is_some() {
        return Err(Error::SweepTemplate(format!("template `{}` already has a scope", t.name)));
    }
    let kind = t.to_kind()?;
    if kind == InterventionKind::None {
        return Err(Error::SweepTemplate("cannot sweep kind `none`".into()));
    }
    let mut out = Vec::new();
    if sweep.quarters {
        for q in 1..=4u8 {
            out.push(InterventionEntry {
                name: format!("{}_q{q}", t.name),
                scope: Some(LayerScope::quarter(q).layers.to_string()),
                ..t.clone()
            });
        }
    }
    if sweep.graduated {
        if !matches!(kind, InterventionKind::Proportional { .. } | InterventionKind::Pairwise { .. }) {
            return Err(Error::SweepTemplate(format!(
                "graduated sweeps need a transfer kind, got {}",
                kind.name()
            )));
        }
        for f in GRADUATED_FRACTIONS {
            out.push(InterventionEntry {
                name: format!("{}_global_{}", t.name, (f * 100.0).round()),
                scope: Some("global".into()),
                fraction: Some(f),
                ..t.clone()
            });
        }
    }
    if out.is_empty() {
        return Err(Error::SweepTemplate("sweep expands to nothing".into()));
    }
    Ok(out)
}

struct PromptOutcome {
    answers: Vec<Answer>,
    stats: Vec<RowRewriteStats>,
    masses: [ModalityMass; 4],
}

fn evaluate_prompt(
    params: &DecoderParams,
    prompt: &benchgen::Prompt,
    grid: &[(String, InterventionSpec)],
) -> Result<PromptOutcome> {
    let config = params.config();
    let mut answers = Vec::with_capacity(grid.len());
    let mut stats = Vec::with_capacity(grid.len());
    let mut masses = [ModalityMass::default(); 4];
    for (i, (_, spec)) in grid.iter().enumerate() {
        // The baseline pass doubles as the attention capture.
        let out = decoder::forward(params, &prompt.tokens, &prompt.layout, spec, i == 0)?;
        if let Some(attn) = &out.captured_attention {
            for (q, slot) in masses.iter_mut().enumerate() {
                *slot = modality_mass(attn, &prompt.layout, &LayerScope::quarter(q as u8 + 1))?;
            }
        }
        answers.push(decoder::answer(&out, config));
        stats.push(out.rewrite_stats);
    }
    Ok(PromptOutcome { answers, stats, masses })
}

fn family_label(data: &Dataset) -> &'static str {
    let fine = data.prompts.iter().any(|p| p.family == TaskFamily::Fine);
    let coarse = data.prompts.iter().any(|p| p.family == TaskFamily::Coarse);
    match (fine, coarse) {
        (true, true) => "mixed",
        (false, true) => "coarse",
        _ => "fine",
    }
}

fn evaluate_dataset(
    params: &DecoderParams,
    name: &str,
    data: &Dataset,
    grid: &[(String, InterventionSpec)],
    pool: &rayon::ThreadPool,
) -> Result<DatasetResult> {
    let outcomes: Vec<PromptOutcome> = pool.install(|| {
        data.prompts
            .par_iter()
            .map(|p| evaluate_prompt(params, p, grid))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut quarter_masses = [ModalityMass::default(); 4];
    for o in &outcomes {
        for (acc, m) in quarter_masses.iter_mut().zip(&o.masses) {
            acc.system += m.system;
            acc.image += m.image;
            acc.text += m.text;
        }
    }
    let n = outcomes.len() as f64;
    for m in &mut quarter_masses {
        m.system /= n;
        m.image /= n;
        m.text /= n;
    }

    let mut cells = Vec::with_capacity(grid.len());
    for (i, (label, spec)) in grid.iter().enumerate() {
        let records: Vec<ResponseRecord> = data
            .prompts
            .iter()
            .zip(&outcomes)
            .map(|(p, o)| ResponseRecord {
                pair_id: p.pair_id,
                prompt_id: p.id,
                ground_truth: p.label,
                model_answer: o.answers[i],
            })
            .collect();
        let mut stats = RowRewriteStats::default();
        for o in &outcomes {
            stats += o.stats[i];
        }
        cells.push(CellResult {
            intervention: label.clone(),
            description: describe(spec),
            metrics: MetricBlock::from_records(&records)?,
            stats,
        });
    }
    Ok(DatasetResult {
        name: name.to_string(),
        family: family_label(data).to_string(),
        quarter_masses,
        cells,
    })
}

fn describe(spec: &InterventionSpec) -> String {
    match spec.kind {
        InterventionKind::None => "none".into(),
        _ => format!("{} @ {}", spec.kind, spec.scope.layers),
    }
}

/// Evaluates `params` under every configured intervention.
pub fn evaluate(config: &ExperimentConfig, params: &DecoderParams) -> Result<EvalReport> {
    config.validate()?;
    let grid = intervention_grid(&config.interventions)?;
    for (_, spec) in &grid {
        spec.scope
            .resolve(params.config().layer_count, params.config().head_count)?;
    }
    let datasets = build_datasets(config)?;
    if datasets.is_empty() {
        return Err(Error::Config("no [[dataset]] entries".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results = datasets
        .iter()
        .map(|(name, data)| evaluate_dataset(params, name, data, &grid, &pool))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        meta: ReportMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash()?,
            seed: config.seed,
            model_checksum: params.checksum(),
        },
        datasets: results,
    })
}

/// Prepares the model and evaluates it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport> {
    let model = prepare_model(config)?;
    evaluate(config, &model.params)
}

/// Runs the template over Q1..Q4 (and graduated global fractions if asked)
/// in place of the configured intervention list.
pub fn sweep_quarters(config: &ExperimentConfig, sweep: &SweepSection) -> Result<EvalReport> {
    let mut expanded = config.clone();
    expanded.interventions = sweep_entries(sweep)?;
    expanded.sweep = Some(sweep.clone());
    run_experiment(&expanded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modality::Modality;

    fn template() -> InterventionEntry {
        InterventionEntry {
            name: "sys".into(),
            kind: Some(KindName::Proportional),
            source: Some(Modality::System),
            ..Default::default()
        }
    }

    #[test]
    fn sweep_expansion_counts() {
        let quarters = SweepSection {
            template: template(),
            quarters: true,
            graduated: false,
        };
        let e = sweep_entries(&quarters).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!(intervention_grid(&e).unwrap().len(), 5);

        let graduated = SweepSection {
            quarters: false,
            graduated: true,
            ..quarters.clone()
        };
        let e = sweep_entries(&graduated).unwrap();
        let fractions: Vec<f64> = e.iter().map(|x| x.fraction.unwrap()).collect();
        assert_eq!(fractions, GRADUATED_FRACTIONS);
        assert!(e.iter().all(|x| x.scope.as_deref() == Some("global")));
    }

    #[test]
    fn scoped_template_is_rejected() {
        let mut t = template();
        t.scope = Some("q4".into());
        let s = SweepSection {
            template: t,
            quarters: true,
            graduated: false,
        };
        assert!(matches!(sweep_entries(&s), Err(Error::SweepTemplate(_))));
    }

    #[test]
    fn none_entries_merge_into_baseline() {
        let entries = vec![
            InterventionEntry {
                name: "plain".into(),
                kind: Some(KindName::None),
                ..Default::default()
            },
            InterventionEntry {
                scope: Some("q4".into()),
                ..template()
            },
        ];
        let grid = intervention_grid(&entries).unwrap();
        assert_eq!(grid.len(), 2);
        assert_eq!(grid[0].0, BASELINE_NAME);
    }
}
