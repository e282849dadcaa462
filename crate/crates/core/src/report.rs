//! Tabular outputs: feature, attribution and LOOCV CSVs, the attribution
//! summary table, per-point attribution data with an SVG strip plot, and the
//! run manifest written next to every output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::eval::{HistogramBin, LoocvResult};
use crate::features::{Feature, FeatureTable, FeatureVector, FEATURE_COUNT};
use crate::io::{fmt_sig, sha256_file};
use crate::shapley::{Attribution, ShapSummary};

/// Significant digits in the features CSV.
pub const FEATURE_DIGITS: usize = 9;

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

fn parse_f64(s: &str, line: usize, column: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column `{column}`: invalid number `{s}`"),
    })
}

fn task_from_str(s: &str) -> Option<Task> {
    [Task::AttentiveListening, Task::JobInterview, Task::FirstMeeting, Task::Other]
        .into_iter()
        .find(|t| t.as_str() == s)
}

fn feature_header() -> Vec<String> {
    let mut h = vec!["id".to_string(), "task".to_string(), "score".to_string()];
    h.extend(Feature::ALL.iter().map(|f| f.key()));
    h.push("no_transition_flag".to_string());
    h
}

pub fn write_features_csv<W: Write>(table: &FeatureTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_header()).map_err(csv_err)?;
    for i in 0..table.len() {
        let mut rec = vec![
            table.ids[i].clone(),
            table.tasks[i].as_str().to_string(),
            fmt_sig(table.targets[i], FEATURE_DIGITS),
        ];
        rec.extend(table.rows[i].0.iter().map(|v| fmt_sig(*v, FEATURE_DIGITS)));
        rec.push(table.no_transition[i].to_string());
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn read_features_csv<R: Read>(input: R) -> Result<FeatureTable> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != feature_header() {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected features header: {}", header.join(",")),
        });
    }
    let mut table = FeatureTable::default();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(csv_err)?;
        let task = task_from_str(&rec[1]).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown task `{}`", &rec[1]),
        })?;
        let mut fv = FeatureVector::default();
        for f in Feature::ALL {
            fv.0[f.index()] = parse_f64(&rec[3 + f.index()], line, &f.key())?;
        }
        let flag = match &rec[3 + FEATURE_COUNT] {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("invalid no_transition_flag `{other}`"),
                })
            }
        };
        table.ids.push(rec[0].to_string());
        table.tasks.push(task);
        table.participants.push(None);
        table.targets.push(parse_f64(&rec[2], line, "score")?);
        table.rows.push(fv);
        table.no_transition.push(flag);
    }
    Ok(table)
}

fn shap_header() -> Vec<String> {
    let mut h = vec!["id".to_string(), "base".to_string(), "prediction".to_string()];
    h.extend(Feature::ALL.iter().map(|f| format!("phi_{}", f.key())));
    h
}

/// Attribution CSV; values use the shortest round-trip representation.
pub fn write_shap_csv<W: Write>(attributions: &[Attribution], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(shap_header()).map_err(csv_err)?;
    for a in attributions {
        let mut rec = vec![a.dialogue_id.clone(), a.base.to_string(), a.prediction.to_string()];
        rec.extend(a.phi.iter().map(|v| v.to_string()));
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn read_shap_csv<R: Read>(input: R) -> Result<Vec<Attribution>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = match r.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(e) => return Err(csv_err(e)),
    };
    if header.is_empty() || header == [""] {
        return Ok(Vec::new());
    }
    if header != shap_header() {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected attribution header: {}", header.join(",")),
        });
    }
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(csv_err)?;
        let phi = (0..FEATURE_COUNT)
            .map(|j| parse_f64(&rec[3 + j], line, &format!("phi_f{}", j + 1)))
            .collect::<Result<_>>()?;
        out.push(Attribution {
            dialogue_id: rec[0].to_string(),
            base: parse_f64(&rec[1], line, "base")?,
            prediction: parse_f64(&rec[2], line, "prediction")?,
            phi,
        });
    }
    Ok(out)
}

pub fn write_loocv_csv<W: Write>(result: &LoocvResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "truth", "prediction", "abs_error"]).map_err(csv_err)?;
    for h in &result.per_dialogue {
        w.write_record([
            h.id.clone(),
            h.truth.to_string(),
            h.prediction.to_string(),
            h.abs_error.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_low", "bin_high", "count"]).map_err(csv_err)?;
    for b in bins {
        w.write_record([b.low.to_string(), b.high.to_string(), b.count.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Tsv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "tsv" => Ok(TableFormat::Tsv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            _ => Err(format!("unknown table format `{s}` (csv, tsv, markdown)")),
        }
    }
}

/// Summary table rows: feature label, mean |phi| (3 dp), percent (2 dp), bold flag.
pub fn summary_rows(summary: &ShapSummary) -> Vec<[String; 4]> {
    summary
        .rows
        .iter()
        .map(|r| {
            [
                r.feature.label().to_string(),
                format!("{:.3}", r.mean_abs_shap),
                format!("{:.2}", r.percent),
                r.bold.to_string(),
            ]
        })
        .collect()
}

pub fn emit_summary_table<W: Write>(summary: &ShapSummary, format: TableFormat, mut out: W) -> Result<()> {
    if summary.rows.is_empty() {
        return Err(Error::Degenerate("empty summary".into()));
    }
    let header = ["feature", "mean_abs_shap", "percent", "bold_flag"];
    let rows = summary_rows(summary);
    let io = |e: std::io::Error| Error::Csv(e.to_string());
    match format {
        TableFormat::Csv | TableFormat::Tsv => {
            let delim = if format == TableFormat::Csv { b',' } else { b'\t' };
            let mut w = csv::WriterBuilder::new().delimiter(delim).from_writer(out);
            w.write_record(header).map_err(csv_err)?;
            for r in &rows {
                w.write_record(r).map_err(csv_err)?;
            }
            w.flush().map_err(io)?;
        }
        TableFormat::Markdown => {
            let mut s = String::new();
            let _ = writeln!(s, "| {} |", header.join(" | "));
            let _ = writeln!(s, "|---|---:|---:|:---:|");
            for r in &rows {
                let _ = writeln!(s, "| {} |", r.join(" | "));
            }
            if summary.all_zero {
                let _ = writeln!(s, "\nAll attributions are zero; percentages are undefined and shown as 0.");
            }
            out.write_all(s.as_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Maps a column to [0, 1] by its minimum and maximum; a constant column maps to 0.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

fn check_alignment(attributions: &[Attribution], table: &FeatureTable) -> Result<()> {
    if attributions.len() != table.len() {
        return Err(Error::Dimension {
            expected: table.len(),
            got: attributions.len(),
        });
    }
    for (a, id) in attributions.iter().zip(&table.ids) {
        if &a.dialogue_id != id {
            return Err(Error::Csv(format!(
                "attribution id `{}` does not match feature row id `{id}`",
                a.dialogue_id
            )));
        }
    }
    Ok(())
}

/// Long-format point data: one row per (dialogue, feature).
pub fn emit_beeswarm_data<W: Write>(attributions: &[Attribution], table: &FeatureTable, out: W) -> Result<()> {
    check_alignment(attributions, table)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "feature", "feature_value", "shap_value"]).map_err(csv_err)?;
    for (a, row) in attributions.iter().zip(&table.rows) {
        for f in Feature::ALL {
            w.write_record([
                a.dialogue_id.clone(),
                f.key(),
                row.get(f).to_string(),
                a.phi[f.index()].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

/// Strip plot: one row per feature, points placed by attribution and shaded
/// from blue (low feature value) to red (high).
pub fn beeswarm_svg(attributions: &[Attribution], table: &FeatureTable) -> Result<String> {
    check_alignment(attributions, table)?;
    const LABEL_W: f64 = 300.0;
    const PLOT_W: f64 = 500.0;
    const ROW_H: f64 = 28.0;
    const TOP: f64 = 20.0;
    let width = LABEL_W + PLOT_W + 20.0;
    let height = TOP * 2.0 + ROW_H * FEATURE_COUNT as f64 + 20.0;
    let max_abs = attributions
        .iter()
        .flat_map(|a| a.phi.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let x_of = |phi: f64| LABEL_W + PLOT_W / 2.0 + phi / max_abs * (PLOT_W / 2.0 - 10.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let zero = x_of(0.0);
    let _ = writeln!(
        s,
        r##"<line x1="{zero:.2}" y1="{TOP}" x2="{zero:.2}" y2="{:.2}" stroke="#888"/>"##,
        TOP + ROW_H * FEATURE_COUNT as f64
    );
    for f in Feature::ALL {
        let y = TOP + ROW_H * (f.index() as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LABEL_W - 10.0,
            y + 4.0,
            f.label().replace('&', "&amp;").replace('<', "&lt;")
        );
        let shade = min_max_normalize(&table.column(f));
        for (k, (a, t)) in attributions.iter().zip(shade).enumerate() {
            let red = (255.0 * t).round() as u8;
            let blue = (255.0 * (1.0 - t)).round() as u8;
            // Deterministic vertical jitter so coincident points stay visible.
            let jitter = ((k * 7919) % 17) as f64 / 16.0 - 0.5;
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="rgb({red},40,{blue})" fill-opacity="0.8"/>"#,
                x_of(a.phi[f.index()]),
                y + jitter * ROW_H * 0.6
            );
        }
    }
    let axis_y = TOP + ROW_H * FEATURE_COUNT as f64 + 15.0;
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{axis_y:.2}" text-anchor="middle">SHAP value (max |phi| = {})</text>"#,
        LABEL_W + PLOT_W / 2.0,
        fmt_sig(max_abs, 3)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Provenance written next to each output.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub format_version: u64,
    pub command_line: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp_unix_s: Option<u64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new(command_line: String, with_timestamp: bool) -> Self {
        RunManifest {
            tool_version: crate::TOOL_VERSION.to_string(),
            format_version: crate::corpus::FORMAT_VERSION,
            command_line,
            seeds: BTreeMap::new(),
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
            timestamp_unix_s: with_timestamp.then(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            }),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Sidecar path: `<output>.manifest.json`.
    pub fn path_for(output: &Path) -> std::path::PathBuf {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attribution(id: &str, phi0: f64) -> Attribution {
        let mut phi = vec![0.0; FEATURE_COUNT];
        phi[0] = phi0;
        phi[10] = -0.5 * phi0;
        Attribution {
            dialogue_id: id.into(),
            phi,
            base: 4.0,
            prediction: 4.0 + 0.5 * phi0,
        }
    }

    fn table() -> FeatureTable {
        let mut t = FeatureTable::default();
        for (i, id) in ["a", "b", "c"].iter().enumerate() {
            t.ids.push(id.to_string());
            t.tasks.push(Task::JobInterview);
            t.participants.push(None);
            t.rows.push(FeatureVector([i as f64 / 3.0; FEATURE_COUNT]));
            t.targets.push(4.0 + i as f64);
            t.no_transition.push(i == 1);
        }
        t
    }

    #[test]
    fn features_csv_round_trip_at_nine_digits() {
        let t = table();
        let mut buf = Vec::new();
        write_features_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,task,score,f1,f2,f3,f4,f5,f6,f7,f8,f9,f10,f11,no_transition_flag\n"));
        assert!(text.contains("0.333333333"));
        let back = read_features_csv(&buf[..]).unwrap();
        assert_eq!(back.ids, t.ids);
        assert_eq!(back.no_transition, t.no_transition);
        assert!((back.rows[1].0[0] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn shap_csv_round_trip_exact() {
        let attrs = vec![attribution("a", 0.1234567890123), attribution("b", -2.0 / 3.0)];
        let mut buf = Vec::new();
        write_shap_csv(&attrs, &mut buf).unwrap();
        assert_eq!(read_shap_csv(&buf[..]).unwrap(), attrs);
        assert!(read_shap_csv(&b""[..]).unwrap().is_empty());
        assert!(read_shap_csv(&b"x,y\n1,2\n"[..]).is_err());
    }

    #[test]
    fn summary_table_formats() {
        let mean_abs = [0.098, 0.199, 0.162, 0.242, 0.048, 0.066, 0.050, 0.111, 0.093, 0.129, 0.078];
        let s = ShapSummary::from_mean_abs(&mean_abs).unwrap();
        let mut buf = Vec::new();
        emit_summary_table(&s, TableFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# unique utterance words / min.,0.242,18.97,true\n"), "{text}");
        let mut buf = Vec::new();
        emit_summary_table(&s, TableFormat::Tsv, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("Utterance time / min.\t0.098\t7.68\tfalse"));
        let mut buf = Vec::new();
        emit_summary_table(&s, TableFormat::Markdown, &mut buf).unwrap();
        let md = String::from_utf8(buf).unwrap();
        assert_eq!(md.lines().count(), 13);
    }

    #[test]
    fn all_zero_summary_table() {
        let s = ShapSummary::from_mean_abs(&[0.0; FEATURE_COUNT]).unwrap();
        let rows = summary_rows(&s);
        assert!(rows.iter().all(|r| r[2] == "0.00" && r[3] == "false"));
        let mut buf = Vec::new();
        emit_summary_table(&s, TableFormat::Markdown, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("undefined"));
    }

    #[test]
    fn beeswarm_cardinality_and_alignment() {
        let t = table();
        let attrs = vec![attribution("a", 1.0), attribution("b", 0.0), attribution("c", -1.0)];
        let mut buf = Vec::new();
        emit_beeswarm_data(&attrs, &t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * FEATURE_COUNT);
        let svg = beeswarm_svg(&attrs, &t).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3 * FEATURE_COUNT);
        let mut swapped = attrs.clone();
        swapped.swap(0, 1);
        assert!(emit_beeswarm_data(&swapped, &t, Vec::new()).is_err());
        assert!(emit_beeswarm_data(&attrs[..2], &t, Vec::new()).is_err());
    }

    #[test]
    fn normalization_endpoints() {
        let n = min_max_normalize(&[3.0, 1.0, 2.0, 5.0]);
        assert_eq!(n, vec![0.5, 0.0, 0.25, 1.0]);
        assert_eq!(min_max_normalize(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn manifest_sidecar_path() {
        let p = RunManifest::path_for(Path::new("/tmp/x/model.gbt"));
        assert_eq!(p, Path::new("/tmp/x/model.gbt.manifest.json"));
        let m = RunManifest::new("dialeval train".into(), false);
        assert!(!m.to_json().contains("timestamp"));
    }
}
