//! Ablation harnesses: stage count, preprocessing choice, and context
//! regions. Each emits a CSV table with per-region Dice columns in
//! canonical order plus an average and a timing column, mirroring the
//! layout of the evaluation tables.

use std::time::Instant;

use super::{evaluate, train, TrainConfig, TrainError};
use crate::pen::{apply_algorithms, PenConfig};
use crate::region::{Region, ALL_REGIONS, NUM_REGIONS};
use crate::Tensor32;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl Table {
    fn new(extra: &str) -> Self {
        let mut columns: Vec<String> = ALL_REGIONS.iter().map(|r| r.name().to_string()).collect();
        columns.push("average".into());
        columns.push(extra.into());
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("config,{}\n", self.columns.join(","));
        for (label, vals) in &self.rows {
            let cells: Vec<String> = vals.iter().map(|v| format!("{v:.4}")).collect();
            out.push_str(&format!("{label},{}\n", cells.join(",")));
        }
        out
    }
}

struct RunOutcome {
    per_region: [f64; NUM_REGIONS],
    average: f64,
    /// Mean per-image inference wall time, milliseconds.
    infer_ms: f64,
}

fn run_once(
    cfg: &TrainConfig,
    train_set: &[crate::data::Sample],
    val_set: &[crate::data::Sample],
    test_set: &[crate::data::Sample],
) -> Result<RunOutcome, TrainError> {
    let mut result = train(cfg, train_set, val_set, None)?;
    let table = evaluate(&mut result.model, test_set, cfg.theta)?;
    let start = Instant::now();
    for s in test_set {
        result.model.predict(&s.image, cfg.theta)?;
    }
    let infer_ms = start.elapsed().as_secs_f64() * 1000.0 / test_set.len() as f64;
    Ok(RunOutcome {
        per_region: table.per_region,
        average: table.average,
        infer_ms,
    })
}

fn averaged_row(outcomes: &[RunOutcome]) -> Vec<f64> {
    let n = outcomes.len() as f64;
    let mut row = vec![0.0; NUM_REGIONS + 2];
    for o in outcomes {
        for (acc, v) in row.iter_mut().zip(
            o.per_region
                .iter()
                .chain([&o.average, &o.infer_ms]),
        ) {
            *acc += v / n;
        }
    }
    row
}

/// Train and evaluate once per stage count (averaged over seeds).
/// Rows follow `s_list` order; the final column is mean per-image
/// inference time in milliseconds.
pub fn ablate_stages(
    base: &TrainConfig,
    s_list: &[usize],
    seeds: &[u64],
    train_set: &[crate::data::Sample],
    val_set: &[crate::data::Sample],
    test_set: &[crate::data::Sample],
) -> Result<Table, TrainError> {
    let mut table = Table::new("infer_ms");
    for &s in s_list {
        let mut outcomes = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.model.stages = s;
            cfg.model.contexts = vec![crate::region::default_context(); s.saturating_sub(1)];
            cfg.model.seed = seed;
            cfg.seed = seed;
            outcomes.push(run_once(&cfg, train_set, val_set, test_set)?);
        }
        table.rows.push((format!("S={s}"), averaged_row(&outcomes)));
    }
    Ok(table)
}

/// The standard preprocessing ablation rows: no-PEN identity
/// replication, each single-pipeline PEN, and the full 5-pipeline
/// ensemble.
pub fn preprocessing_variants() -> Vec<(String, PenConfig)> {
    let mut rows = vec![("identity_cin".to_string(), PenConfig::replicate())];
    for spec in ["identity", "sharpen", "clahe", "clahe,clahe", "clahe,sharpen"] {
        rows.push((
            spec.replace(',', "_"),
            PenConfig {
                pipelines: vec![spec.parse().unwrap()],
                learned: true,
            },
        ));
    }
    rows.push(("ensemble5".to_string(), PenConfig::default()));
    rows
}

/// Train and evaluate once per preprocessing variant; the final column
/// is the mean per-image preprocessing time in milliseconds.
pub fn ablate_preprocessing(
    base: &TrainConfig,
    variants: &[(String, PenConfig)],
    train_set: &[crate::data::Sample],
    val_set: &[crate::data::Sample],
    test_set: &[crate::data::Sample],
) -> Result<Table, TrainError> {
    let mut table = Table::new("prep_ms");
    for (label, pen) in variants {
        let mut cfg = base.clone();
        cfg.model.pen = pen.clone();
        let outcome = run_once(&cfg, train_set, val_set, test_set)?;
        let start = Instant::now();
        for s in test_set {
            let _: Tensor32 = apply_algorithms(&s.image, pen).map_err(crate::data::DataError::from)?;
        }
        let prep_ms = start.elapsed().as_secs_f64() * 1000.0 / test_set.len() as f64;
        let mut row: Vec<f64> = outcome.per_region.to_vec();
        row.push(outcome.average);
        row.push(prep_ms);
        table.rows.push((label.clone(), row));
    }
    Ok(table)
}

/// Train and evaluate once per context-set choice (applied to every
/// stage boundary). Empty context sets are rejected by config
/// validation.
pub fn ablate_context(
    base: &TrainConfig,
    choices: &[Vec<Region>],
    train_set: &[crate::data::Sample],
    val_set: &[crate::data::Sample],
    test_set: &[crate::data::Sample],
) -> Result<Table, TrainError> {
    let mut table = Table::new("infer_ms");
    for choice in choices {
        let mut cfg = base.clone();
        cfg.model.contexts = vec![choice.clone(); cfg.model.stages.saturating_sub(1)];
        let label = if choice.len() == NUM_REGIONS {
            "all".to_string()
        } else {
            choice
                .iter()
                .map(|r| r.name())
                .collect::<Vec<_>>()
                .join("+")
        };
        let outcome = run_once(&cfg, train_set, val_set, test_set)?;
        let mut row: Vec<f64> = outcome.per_region.to_vec();
        row.push(outcome.average);
        row.push(outcome.infer_ms);
        table.rows.push((label, row));
    }
    Ok(table)
}

/// Context-set choices from the published comparison: all six regions,
/// spine+mandible, hyoid+vocal fold, and hyoid+vocal fold+soft tissue.
pub fn context_choices() -> Vec<Vec<Region>> {
    vec![
        ALL_REGIONS.to_vec(),
        vec![Region::CervicalSpine, Region::Mandible],
        vec![Region::HyoidBone, Region::VocalFold],
        vec![Region::HyoidBone, Region::VocalFold, Region::SoftTissue],
    ]
}

#[cfg(test)]
mod tests {
    use super::super::tests_support::tiny16;
    use super::*;
    use crate::cin::CinConfig;

    fn base_cfg() -> TrainConfig {
        TrainConfig {
            model: CinConfig {
                resolution: 16,
                seed: 1,
                ..CinConfig::mini()
            },
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn stage_table_shape() {
        let data = tiny16();
        let t = ablate_stages(&base_cfg(), &[1, 2], &[0], &data, &[], &data).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].0, "S=1");
        assert_eq!(t.rows[1].0, "S=2");
        assert_eq!(t.columns.len(), NUM_REGIONS + 2);
        let csv = t.to_csv();
        assert!(csv.starts_with("config,bolus,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn preprocessing_variant_list() {
        let v = preprocessing_variants();
        assert_eq!(v.len(), 7);
        assert!(!v[0].1.learned);
        assert_eq!(v.last().unwrap().1.pipelines.len(), 5);
    }

    #[test]
    fn context_table_and_empty_rejection() {
        let data = tiny16();
        let t = ablate_context(
            &base_cfg(),
            &[vec![Region::CervicalSpine, Region::Mandible]],
            &data,
            &[],
            &data,
        )
        .unwrap();
        assert_eq!(t.rows[0].0, "cervical_spine+mandible");
        assert!(ablate_context(&base_cfg(), &[vec![]], &data, &[], &data).is_err());
    }

    #[test]
    fn standard_context_choices() {
        let c = context_choices();
        assert_eq!(c[0].len(), NUM_REGIONS);
        assert_eq!(c[1], vec![Region::CervicalSpine, Region::Mandible]);
    }
}
