//! The ablation harness: trains every variant under one seed and config,
//! evaluates each on the same test list, and renders the comparison
//! artifacts.

use std::path::Path;

use crate::backbone::ToyBackboneConfig;
use crate::checkpoint::write_json;
use crate::corpus::CorpusSplit;
use crate::error::{Error, Result};
use crate::eval::{evaluate, AblationVariant, EvaluationReport};
use crate::float::Float;
use crate::model::build_toy_model;
use crate::template::TemplateConfig;
use crate::train::{train, write_training_log, TrainingConfig};

/// Trains and evaluates all nine variants. Per-variant artifacts are
/// written as soon as each finishes, so a failing variant leaves the
/// completed rows on disk.
pub fn run_ablation_matrix<F: Float>(
    split: &CorpusSplit,
    base_cfg: &TrainingConfig,
    toy_cfg: &ToyBackboneConfig,
    template: &TemplateConfig,
    config_hash: &str,
    out_dir: Option<&Path>,
) -> Result<Vec<EvaluationReport>> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut reports = Vec::with_capacity(AblationVariant::ALL.len());
    for variant in AblationVariant::ALL {
        let cfg = TrainingConfig {
            variant,
            ..base_cfg.clone()
        };
        log::info!("ablation: training {variant}");
        let model = build_toy_model::<F>(
            &split.train,
            toy_cfg,
            template,
            variant,
            config_hash.to_string(),
        )?;
        let outcome = train(split, &cfg, model)?;
        let report = evaluate(&split.test, &outcome.model, variant)?;
        if let Some(dir) = out_dir {
            write_json(&dir.join(format!("report_{}.json", variant.name())), &report)?;
            write_training_log(
                &dir.join(format!("training_{}.jsonl", variant.name())),
                &outcome.records,
            )?;
        }
        reports.push(report);
    }
    if let Some(dir) = out_dir {
        write_json(&dir.join("ablation_reports.json"), &reports)?;
        std::fs::write(dir.join("ablation_table.txt"), render_table(&reports))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        std::fs::write(dir.join("fig_auxiliary.csv"), render_auxiliary_csv(&reports)?)
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    Ok(reports)
}

fn find(
    reports: &[EvaluationReport],
    variant: AblationVariant,
) -> Result<&EvaluationReport> {
    reports
        .iter()
        .find(|r| r.variant == variant)
        .ok_or_else(|| Error::Other(format!("missing report for {variant}")))
}

/// Plain-text comparison table over all variants, with the headline gap
/// between the full model and the bare relation prompt.
pub fn render_table(reports: &[EvaluationReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:>8} {:>9}  {:>7} {:>7} {:>7} {:>7}\n",
        "variant", "acc", "macro F1", "Comp", "Cont", "Expa", "Temp"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<20} {:>8.4} {:>9.4}  {:>7.4} {:>7.4} {:>7.4} {:>7.4}\n",
            r.variant.name(),
            r.accuracy,
            r.macro_f1,
            r.per_class_f1[0],
            r.per_class_f1[1],
            r.per_class_f1[2],
            r.per_class_f1[3],
        ));
    }
    let full = reports.iter().find(|r| r.variant == AblationVariant::TePrompt);
    let bare = reports.iter().find(|r| r.variant == AblationVariant::DrrOnly);
    if let (Some(full), Some(bare)) = (full, bare) {
        out.push_str(&format!(
            "\nteprompt vs drr-only: macro F1 {:+.4}, accuracy {:+.4}\n",
            full.macro_f1 - bare.macro_f1,
            full.accuracy - bare.accuracy,
        ));
    }
    out
}

/// Grouped auxiliary-task comparison (relation prompt alone, plus one
/// auxiliary, plus both), as columnar data for plotting.
pub fn render_auxiliary_csv(reports: &[EvaluationReport]) -> Result<String> {
    let groups = [
        ("DRR", AblationVariant::DrrOnly),
        ("DRR+SSC", AblationVariant::DrrPlusSsc),
        ("DRR+ACP", AblationVariant::DrrPlusAcp),
        ("DRR+SSC+ACP", AblationVariant::TePrompt),
    ];
    let mut out = String::from("group,accuracy,macro_f1\n");
    for (name, variant) in groups {
        let r = find(reports, variant)?;
        out.push_str(&format!("{name},{:.6},{:.6}\n", r.accuracy, r.macro_f1));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::corpus::ALL_SENSES;

    fn fake_report(variant: AblationVariant, f1: f64) -> EvaluationReport {
        EvaluationReport {
            variant,
            seed: 1,
            config_hash: "h".into(),
            test_size: 10,
            accuracy: f1,
            macro_f1: f1,
            per_class_f1: [f1; 4],
            confusion: [[0; 4]; 4],
            macro_classes: ALL_SENSES.to_vec(),
        }
    }

    #[test]
    fn table_reports_signed_gap() {
        let reports = vec![
            fake_report(AblationVariant::TePrompt, 0.9),
            fake_report(AblationVariant::DrrOnly, 0.8),
        ];
        let table = render_table(&reports);
        assert!(table.contains("+0.1000"), "{table}");

        let reports = vec![
            fake_report(AblationVariant::TePrompt, 0.7),
            fake_report(AblationVariant::DrrOnly, 0.8),
        ];
        let table = render_table(&reports);
        assert!(table.contains("-0.1000"), "{table}");
    }

    #[test]
    fn auxiliary_csv_has_four_groups() {
        let reports: Vec<EvaluationReport> = AblationVariant::ALL
            .into_iter()
            .map(|v| fake_report(v, 0.5))
            .collect();
        let csv = render_auxiliary_csv(&reports).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("DRR,"));
        assert!(lines[4].starts_with("DRR+SSC+ACP,"));
    }
}
