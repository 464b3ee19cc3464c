// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation reports: long-format CSV plus a fixed-width text rendering.
//!
//! The CSV has columns `dataset,intervention,metric,value` preceded by
//! `# key=value` metadata lines. Floats are written in shortest round-trip
//! form, so parsing a CSV gives back the exact report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::intervention::RowRewriteStats;
use crate::metrics::{percent, MetricBlock};
use crate::modality::{Modality, ModalityMass};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportMeta {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub model_checksum: String,
}

/// One intervention on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub intervention: String,
    pub description: String,
    pub metrics: MetricBlock,
    pub stats: RowRewriteStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetResult {
    pub name: String,
    pub family: String,
    /// Baseline (pre-intervention) modality mass per layer quarter.
    pub quarter_masses: [ModalityMass; 4],
    /// Baseline first.
    pub cells: Vec<CellResult>,
}

impl DatasetResult {
    pub fn cell(&self, intervention: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.intervention == intervention)
    }

    pub fn baseline(&self) -> &CellResult {
        &self.cells[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub datasets: Vec<DatasetResult>,
}

const NO_INTERVENTION: &str = "-";

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("report csv: {e}"))
}

impl EvalReport {
    pub fn dataset(&self, name: &str) -> Option<&DatasetResult> {
        self.datasets.iter().find(|d| d.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let m = &self.meta;
        let _ = writeln!(out, "# version={}", m.version);
        let _ = writeln!(out, "# config_hash={}", m.config_hash);
        let _ = writeln!(out, "# seed={}", m.seed);
        let _ = writeln!(out, "# model_checksum={}", m.model_checksum);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut row = |d: &str, i: &str, k: &str, v: String| {
            w.write_record([d, i, k, v.as_str()]).expect("in-memory write");
        };
        row("dataset", "intervention", "metric", "value".into());
        for d in &self.datasets {
            row(&d.name, NO_INTERVENTION, "family", d.family.clone());
            for (q, mass) in d.quarter_masses.iter().enumerate() {
                for modality in Modality::ALL {
                    row(
                        &d.name,
                        NO_INTERVENTION,
                        &format!("mass_q{}_{}", q + 1, modality.as_str()),
                        mass.get(modality).to_string(),
                    );
                }
            }
            for c in &d.cells {
                let b = &c.metrics;
                let i = c.intervention.as_str();
                row(&d.name, i, "spec", c.description.clone());
                row(&d.name, i, "simple_accuracy", b.simple_accuracy.to_string());
                if let Some(p) = b.paired_accuracy {
                    row(&d.name, i, "paired_accuracy", p.to_string());
                }
                row(&d.name, i, "yes_rate", b.yes_rate.to_string());
                row(&d.name, i, "ground_truth_yes_fraction", b.ground_truth_yes_fraction.to_string());
                row(&d.name, i, "yes_rate_delta_pp", b.yes_rate_delta_pp.to_string());
                row(&d.name, i, "yes_rate_delta_rel", b.yes_rate_delta_rel.to_string());
                row(&d.name, i, "n_prompts", b.n_prompts.to_string());
                row(&d.name, i, "n_pairs", b.n_pairs.to_string());
                row(&d.name, i, "rows_modified", c.stats.rows_modified.to_string());
                row(&d.name, i, "rows_skipped_zero_recipient", c.stats.rows_skipped_zero_recipient.to_string());
                row(&d.name, i, "rows_skipped_zero_source", c.stats.rows_skipped_zero_source.to_string());
            }
        }
        let body = w.into_inner().expect("in-memory flush");
        out.push_str(std::str::from_utf8(&body).expect("utf-8 fields"));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = ReportMeta {
            version: String::new(),
            config_hash: String::new(),
            seed: 0,
            model_checksum: String::new(),
        };
        let mut body = String::new();
        for line in text.lines() {
            if let Some(kv) = line.strip_prefix("# ") {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Format(format!("bad metadata line `{line}`")))?;
                match k {
                    "version" => meta.version = v.into(),
                    "config_hash" => meta.config_hash = v.into(),
                    "seed" => meta.seed = parse(v)?,
                    "model_checksum" => meta.model_checksum = v.into(),
                    _ => return Err(Error::Format(format!("unknown metadata key `{k}`"))),
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }

        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let mut datasets: Vec<DatasetResult> = Vec::new();
        for record in reader.records() {
            let r = record.map_err(csv_err)?;
            let [d, i, k, v] = [&r[0], &r[1], &r[2], &r[3]];
            if datasets.last().map_or(true, |x| x.name != d) {
                datasets.push(DatasetResult {
                    name: d.into(),
                    family: String::new(),
                    quarter_masses: [ModalityMass::default(); 4],
                    cells: Vec::new(),
                });
            }
            let ds = datasets.last_mut().expect("pushed above");
            if i == NO_INTERVENTION {
                if k == "family" {
                    ds.family = v.into();
                } else {
                    let (q, modality) = parse_mass_key(k)?;
                    let m = &mut ds.quarter_masses[q];
                    let value = parse(v)?;
                    match modality {
                        Modality::System => m.system = value,
                        Modality::Image => m.image = value,
                        Modality::Text => m.text = value,
                    }
                }
                continue;
            }
            if ds.cells.last().map_or(true, |c| c.intervention != i) {
                ds.cells.push(CellResult {
                    intervention: i.into(),
                    description: String::new(),
                    metrics: MetricBlock {
                        simple_accuracy: 0.0,
                        paired_accuracy: None,
                        yes_rate: 0.0,
                        ground_truth_yes_fraction: 0.0,
                        yes_rate_delta_pp: 0.0,
                        yes_rate_delta_rel: 0.0,
                        n_prompts: 0,
                        n_pairs: 0,
                    },
                    stats: RowRewriteStats::default(),
                });
            }
            let c = ds.cells.last_mut().expect("pushed above");
            let b = &mut c.metrics;
            match k {
                "spec" => c.description = v.into(),
                "simple_accuracy" => b.simple_accuracy = parse(v)?,
                "paired_accuracy" => b.paired_accuracy = Some(parse(v)?),
                "yes_rate" => b.yes_rate = parse(v)?,
                "ground_truth_yes_fraction" => b.ground_truth_yes_fraction = parse(v)?,
                "yes_rate_delta_pp" => b.yes_rate_delta_pp = parse(v)?,
                "yes_rate_delta_rel" => b.yes_rate_delta_rel = parse(v)?,
                "n_prompts" => b.n_prompts = parse(v)?,
                "n_pairs" => b.n_pairs = parse(v)?,
                "rows_modified" => c.stats.rows_modified = parse(v)?,
                "rows_skipped_zero_recipient" => c.stats.rows_skipped_zero_recipient = parse(v)?,
                "rows_skipped_zero_source" => c.stats.rows_skipped_zero_source = parse(v)?,
                _ => return Err(Error::Format(format!("unknown metric `{k}`"))),
            }
        }
        if datasets.iter().any(|d| d.cells.is_empty()) {
            return Err(Error::Format("dataset without intervention rows".into()));
        }
        Ok(Self { meta, datasets })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    /// Fixed-width tables, one per dataset. Accuracy cells carry the
    /// relative change from the baseline in brackets; yes-rate cells carry
    /// the relative deviation from the ground-truth yes fraction.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let m = &self.meta;
        let _ = writeln!(
            out,
            "modality-lab {}  config {}  seed {}  model {}",
            m.version,
            m.config_hash,
            m.seed,
            &m.model_checksum[..m.model_checksum.len().min(16)]
        );
        for d in &self.datasets {
            render_dataset(&mut out, d);
        }
        out
    }
}

fn parse<T: std::str::FromStr>(v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Format(format!("cannot parse value `{v}`")))
}

fn parse_mass_key(key: &str) -> Result<(usize, Modality)> {
    let bad = || Error::Format(format!("unknown metric `{key}`"));
    let rest = key.strip_prefix("mass_q").ok_or_else(bad)?;
    let (q, modality) = rest.split_once('_').ok_or_else(bad)?;
    let q: usize = q.parse().map_err(|_| bad())?;
    if !(1..=4).contains(&q) {
        return Err(bad());
    }
    Ok((q - 1, modality.parse().map_err(|_| bad())?))
}

fn signed(value: f64) -> String {
    format!("{:+.2}", value)
}

fn relative(value: f64, base: f64) -> String {
    if base == 0.0 {
        String::new()
    } else {
        format!(" ({})", signed(100.0 * (value / base - 1.0)))
    }
}

fn render_dataset(out: &mut String, d: &DatasetResult) {
    let base = &d.baseline().metrics;
    let _ = writeln!(
        out,
        "\n{} [{}]  {} prompts, {} pairs, {}% ground-truth yes",
        d.name,
        d.family,
        base.n_prompts,
        base.n_pairs,
        percent(base.ground_truth_yes_fraction)
    );
    let width = d.cells.iter().map(|c| c.intervention.len()).max().unwrap_or(0).max(12);
    let _ = writeln!(
        out,
        "{:<width$}  {:<18}  {:<18}  {:<18}  {}",
        "intervention", "simple acc", "paired acc", "yes-rate", "rows modified"
    );
    for c in &d.cells {
        let b = &c.metrics;
        let is_base = std::ptr::eq(c, d.baseline());
        let simple = format!(
            "{}{}",
            percent(b.simple_accuracy),
            if is_base { String::new() } else { relative(b.simple_accuracy, base.simple_accuracy) }
        );
        let paired = match (b.paired_accuracy, base.paired_accuracy) {
            (Some(p), Some(bp)) => format!("{}{}", percent(p), if is_base { String::new() } else { relative(p, bp) }),
            _ => "n/a".into(),
        };
        let yes = format!("{} ({})", percent(b.yes_rate), signed(b.yes_rate_delta_rel));
        let _ = writeln!(
            out,
            "{:<width$}  {:<18}  {:<18}  {:<18}  {}",
            c.intervention, simple, paired, yes, c.stats.rows_modified
        );
    }
    let _ = writeln!(out, "baseline attention mass by quarter (system / image / text):");
    for (q, m) in d.quarter_masses.iter().enumerate() {
        let _ = writeln!(out, "  Q{}  {:.4} / {:.4} / {:.4}", q + 1, m.system, m.image, m.text);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(acc: f64, yes: f64) -> MetricBlock {
        MetricBlock {
            simple_accuracy: acc,
            paired_accuracy: Some(acc / 3.0),
            yes_rate: yes,
            ground_truth_yes_fraction: 0.5,
            yes_rate_delta_pp: 100.0 * (yes - 0.5),
            yes_rate_delta_rel: 100.0 * (yes / 0.5 - 1.0),
            n_prompts: 200,
            n_pairs: 100,
        }
    }

    fn sample() -> EvalReport {
        let masses = [ModalityMass {
            system: 0.1 + 1e-17,
            image: 0.7,
            text: 0.2,
        }; 4];
        EvalReport {
            meta: ReportMeta {
                version: "0.1.0".into(),
                config_hash: "00ff".into(),
                seed: 7,
                model_checksum: "abc".into(),
            },
            datasets: vec![DatasetResult {
                name: "fine".into(),
                family: "fine".into(),
                quarter_masses: masses,
                cells: vec![
                    CellResult {
                        intervention: "baseline".into(),
                        description: "none".into(),
                        metrics: block(0.6, 0.8),
                        stats: RowRewriteStats::default(),
                    },
                    CellResult {
                        intervention: "pai".into(),
                        description: "pai(alpha=0.5, image x1.5) @ global".into(),
                        metrics: block(0.1 / 3.0, 0.55),
                        stats: RowRewriteStats {
                            rows_modified: 3,
                            rows_skipped_zero_recipient: 1,
                            rows_skipped_zero_source: 2,
                        },
                    },
                ],
            }],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let r = sample();
        let text = r.to_csv();
        assert_eq!(EvalReport::from_csv(&text).unwrap(), r);
        assert!(text.contains("\"pai(alpha=0.5, image x1.5) @ global\""));
    }

    #[test]
    fn render_shows_relative_changes() {
        let text = sample().render();
        assert!(text.contains("80.00 (+60.00)"), "{text}");
        assert!(text.contains("3.33 (-94.44)"), "{text}");
    }

    #[test]
    fn unknown_metric_is_a_format_error() {
        let text = sample().to_csv().replace("n_pairs", "n_pears");
        assert!(matches!(EvalReport::from_csv(&text), Err(Error::Format(_))));
    }
}
