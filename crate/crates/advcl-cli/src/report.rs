//! Report files on disk and the comparison table over them.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use advcl_core::evalsuite::RobustnessReport;

use crate::manifest::read_verified;

const REPORT_FORMAT: &str = "advcl-robustness-report";
const REPORT_VERSION: u32 = 1;

/// A robustness report plus the identity needed to compare it with others:
/// which setting produced it and under which seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub setting: String,
    pub seed: u64,
    pub report: RobustnessReport,
}

impl ReportFile {
    pub fn new(setting: &str, seed: u64, report: RobustnessReport) -> Self {
        ReportFile {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            setting: setting.to_string(),
            seed,
            report,
        }
    }

    pub fn load(path: &Path) -> Result<ReportFile> {
        let bytes = read_verified(path)?;
        let file: ReportFile = serde_json::from_slice(&bytes)
            .with_context(|| format!("malformed report file {}", path.display()))?;
        if file.format != REPORT_FORMAT || file.version != REPORT_VERSION {
            bail!(
                "report {} has format {}/{}, expected {REPORT_FORMAT}/{REPORT_VERSION}",
                path.display(),
                file.format,
                file.version
            );
        }
        Ok(file)
    }
}

struct SettingRow {
    setting: String,
    n: usize,
    accuracy: Stat,
    success: Stat,
    replacement: Stat,
}

#[derive(Clone, Copy)]
struct Stat {
    mean: Option<f64>,
    sd: Option<f64>,
}

fn stat(values: &[f64], n_expected: usize) -> Stat {
    // A rate that was undefined in any contributing report leaves the
    // aggregate undefined rather than silently shrinking the sample.
    if values.len() != n_expected || values.is_empty() {
        return Stat {
            mean: None,
            sd: None,
        };
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sd = (values.len() > 1).then(|| {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    });
    Stat {
        mean: Some(mean),
        sd,
    }
}

fn format_stat(s: Stat, bold: bool) -> String {
    let Some(mean) = s.mean else {
        return "n/a".to_string();
    };
    let core = match s.sd {
        Some(sd) => format!("{mean:.3} ± {sd:.3}"),
        None => format!("{mean:.3}"),
    };
    if bold {
        format!("**{core}**")
    } else {
        core
    }
}

/// Render the comparison table for a set of report files.
///
/// All reports must share one dataset and one attack budget — comparing
/// attack success across different budgets is meaningless, so that case is
/// refused rather than footnoted. Reports from one setting across several
/// seeds aggregate into mean ± sample standard deviation; the best value
/// per column (highest accuracy, lowest success rate, highest replacement
/// rate) is bold-marked.
pub fn compare_reports(files: &[ReportFile]) -> Result<String> {
    if files.is_empty() {
        bail!("no reports to compare");
    }
    let dataset = &files[0].report.dataset;
    let budget = files[0].report.budget;
    for f in &files[1..] {
        if &f.report.dataset != dataset {
            bail!(
                "refusing to compare: reports evaluate different datasets \
                 ({}… vs {}…); rerun them on one shared test set",
                &dataset[..12.min(dataset.len())],
                &f.report.dataset[..12.min(f.report.dataset.len())]
            );
        }
        if f.report.budget != budget {
            bail!(
                "refusing to compare: attack budgets differ (fraction {} cap {} \
                 vs fraction {} cap {}); success rates are only comparable \
                 under one shared budget",
                budget.fraction,
                budget.cap,
                f.report.budget.fraction,
                f.report.budget.cap
            );
        }
    }

    // Group by setting, preserving first-appearance order.
    let mut order: Vec<String> = Vec::new();
    for f in files {
        if !order.contains(&f.setting) {
            order.push(f.setting.clone());
        }
    }
    let mut rows = Vec::new();
    for setting in &order {
        let group: Vec<&ReportFile> = files.iter().filter(|f| &f.setting == setting).collect();
        let n = group.len();
        let acc: Vec<f64> = group.iter().map(|f| f.report.clean_accuracy).collect();
        let succ: Vec<f64> = group
            .iter()
            .filter_map(|f| f.report.success_rate)
            .collect();
        let repl: Vec<f64> = group
            .iter()
            .filter_map(|f| f.report.replacement_rate)
            .collect();
        rows.push(SettingRow {
            setting: setting.clone(),
            n,
            accuracy: stat(&acc, n),
            success: stat(&succ, n),
            replacement: stat(&repl, n),
        });
    }

    // Ties for the best value are all marked.
    let best = |pick: fn(&SettingRow) -> Option<f64>, highest: bool| -> Vec<bool> {
        let extreme = rows
            .iter()
            .filter_map(pick)
            .reduce(|a, b| if (b > a) == highest { b } else { a });
        rows.iter()
            .map(|r| extreme.is_some() && pick(r) == extreme)
            .collect()
    };
    let best_acc = best(|r| r.accuracy.mean, true);
    let best_succ = best(|r| r.success.mean, false);
    let best_repl = best(|r| r.replacement.mean, true);

    let header = [
        "setting".to_string(),
        "runs".to_string(),
        "clean accuracy".to_string(),
        "attack success".to_string(),
        "replacement rate".to_string(),
    ];
    let mut table: Vec<[String; 5]> = vec![header];
    for (i, row) in rows.iter().enumerate() {
        table.push([
            row.setting.clone(),
            row.n.to_string(),
            format_stat(row.accuracy, best_acc[i]),
            format_stat(row.success, best_succ[i]),
            format_stat(row.replacement, best_repl[i]),
        ]);
    }

    let mut widths = [0usize; 5];
    for row in &table {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    out.push_str(&format!(
        "dataset {}…  budget fraction {} cap {}\n\n",
        &dataset[..12.min(dataset.len())],
        budget.fraction,
        budget.cap
    ));
    for (r, row) in table.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            out.push_str(&format!("{cell:<width$}", width = widths[c] + 2));
        }
        out.push('\n');
        if r == 0 {
            for w in widths {
                out.push_str(&"-".repeat(w));
                out.push_str("  ");
            }
            out.push('\n');
        }
    }
    out.push_str("\n(best per column in **bold**: highest accuracy, lowest success, highest replacement)\n");
    Ok(out)
}
