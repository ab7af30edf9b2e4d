//! `dalton hhi`: score recorded readings offline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use dalton_core::hhi::{category_shares, compute_iaqi, score_matrices, window_matrices, CalibrationTable, Category, HhiPoint};
use dalton_core::model::{PollutantKind, Reading};
use dalton_core::store::{Collection, Store, StoreOptions};
use serde::Serialize;

use crate::Failure;

pub type Streams = BTreeMap<String, Vec<Reading>>;

/// Reads an NDJSON emission log, a folder of `*.ndjson` logs, or a store root.
pub fn load_input(path: &Path) -> Result<Streams, Failure> {
    let mut streams = Streams::new();
    if path.is_dir() && path.join(Collection::Data.dir_name()).is_dir() {
        let store = Store::open(path, StoreOptions::default()).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
        let devices: Vec<String> = store.devices().into_keys().collect();
        streams = store.query_site(&devices, i64::MIN, i64::MAX);
    } else if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect();
        files.sort();
        for f in files {
            read_log(&f, &mut streams)?;
        }
    } else {
        read_log(path, &mut streams)?;
    }
    for v in streams.values_mut() {
        v.sort_by_key(|r| (r.ts_ms, r.seq));
        v.dedup_by_key(|r| r.seq);
    }
    streams.retain(|_, v| !v.is_empty());
    if streams.is_empty() {
        return Err(Failure::config(format!("{}: no device series", path.display())));
    }
    Ok(streams)
}

fn read_log(path: &Path, streams: &mut Streams) -> Result<(), Failure> {
    let file = std::fs::File::open(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = Reading::from_json(line.as_bytes()).map_err(|e| Failure::config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        streams.entry(r.device_id.clone()).or_default().push(r);
    }
    Ok(())
}

/// Every scored kind must be present in the calibration, and at least one of
/// them must occur in the data.
pub fn check_coverage(streams: &Streams, cal: &CalibrationTable) -> Result<(), Failure> {
    cal.validate().map_err(|e| Failure::config(e.to_string()))?;
    let recorded: std::collections::BTreeSet<PollutantKind> =
        streams.values().flatten().flat_map(|r| r.values.keys().copied()).collect();
    if !cal.pollutants.iter().any(|k| recorded.contains(k)) {
        let names: Vec<&str> = recorded.iter().map(|k| k.key()).collect();
        return Err(Failure::config(format!(
            "missing calibration entries: none of the recorded kinds ({}) is calibrated",
            names.join(", ")
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub point: HhiPoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iaqi: Option<f64>,
}

/// HHI points for `streams`, with an IAQI value per window when there is a
/// single device.
pub fn score(streams: &Streams, cal: &CalibrationTable) -> Result<Vec<ReportRow>, Failure> {
    let matrices = window_matrices(streams, cal).map_err(|e| Failure::config(e.to_string()))?;
    let points = score_matrices(&matrices, cal).map_err(|e| Failure::runtime(e.to_string()))?;
    let single = streams.len() == 1;
    Ok(points
        .into_iter()
        .zip(&matrices)
        .map(|(point, m)| ReportRow {
            point,
            iaqi: if single { compute_iaqi(m, &cal.iaqi).ok() } else { None },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub points: usize,
    pub mean_hhi: Option<f64>,
    pub shares: BTreeMap<Category, f64>,
    pub mean_iaqi: Option<f64>,
}

pub fn summarize(label: &str, rows: &[ReportRow]) -> Summary {
    let points: Vec<HhiPoint> = rows.iter().map(|r| r.point).collect();
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Summary {
        label: label.to_string(),
        points: rows.len(),
        mean_hhi: mean(points.iter().map(|p| p.hhi()).collect()),
        shares: category_shares(&points),
        mean_iaqi: mean(rows.iter().filter_map(|r| r.iaqi).collect()),
    }
}

pub fn table(summaries: &[Summary]) -> String {
    let width = summaries.iter().map(|s| s.label.len()).max().unwrap_or(5).max(5);
    let with_iaqi = summaries.iter().any(|s| s.mean_iaqi.is_some());
    let mut t = format!("{:<width$}  {:>6}  {:>8}", "input", "points", "mean_hhi");
    for c in Category::ALL {
        let _ = write!(t, "  {:>10}", c.as_str());
    }
    if with_iaqi {
        let _ = write!(t, "  {:>9}", "mean_iaqi");
    }
    t.push('\n');
    let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
    for s in summaries {
        let _ = write!(t, "{:<width$}  {:>6}  {:>8}", s.label, s.points, num(s.mean_hhi));
        for c in Category::ALL {
            let _ = write!(t, "  {:>9.1}%", 100.0 * s.shares.get(&c).copied().unwrap_or(0.0));
        }
        if with_iaqi {
            let _ = write!(t, "  {:>9}", num(s.mean_iaqi));
        }
        t.push('\n');
    }
    t
}

#[derive(Serialize)]
struct CsvRow<'a> {
    input: &'a str,
    ts_ms: i64,
    hhi: f64,
    c1: f64,
    c2: f64,
    category: &'static str,
    device_count: usize,
    iaqi: Option<f64>,
}

/// Writes NDJSON records, or CSV when `csv` is set. With several inputs each
/// record carries its input label.
pub fn write_rows(out: &mut dyn Write, runs: &[(String, Vec<ReportRow>)], csv: bool) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::runtime(e.to_string());
    let tagged = runs.len() > 1;
    if csv {
        let mut w = csv::Writer::from_writer(out);
        for (label, rows) in runs {
            for r in rows {
                w.serialize(CsvRow {
                    input: label,
                    ts_ms: r.point.ts_ms,
                    hhi: r.point.hhi(),
                    c1: r.point.score.c1,
                    c2: r.point.score.c2,
                    category: r.point.category().as_str(),
                    device_count: r.point.device_count,
                    iaqi: r.iaqi,
                })
                .map_err(|e| Failure::runtime(e.to_string()))?;
            }
        }
        return w.flush().map_err(io);
    }
    for (label, rows) in runs {
        for r in rows {
            let mut v = serde_json::to_value(r).map_err(|e| Failure::runtime(e.to_string()))?;
            if tagged {
                v["input"] = serde_json::Value::from(label.as_str());
            }
            writeln!(out, "{v}").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}
