//! Multi-seed batches of independent worlds, aggregation, and report diffs.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::config::ScenarioConfig;
use crate::metrics::{write_report, CSV_HEADER};
use crate::sim::{run_scenario, RunOutcome, SimError};

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}: no report.csv or aggregate.csv")]
    NoReport(PathBuf),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |source| BatchError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> BatchError + '_ {
    move |source| BatchError::Csv { path: path.to_path_buf(), source }
}

fn with_seed(cfg: &ScenarioConfig, seed: u64) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.world.seed = seed;
    c
}

/// Runs one world per seed, one after another.
pub fn run_seeds_sequential(cfg: &ScenarioConfig, seeds: Range<u64>, trace: bool) -> Result<Vec<RunOutcome>, SimError> {
    seeds.map(|s| run_scenario(&with_seed(cfg, s), trace)).collect()
}

/// Runs one world per seed. Worlds share nothing, so with the `parallel`
/// feature they run on the rayon pool; results come back in seed order
/// either way.
pub fn run_seeds(cfg: &ScenarioConfig, seeds: Range<u64>, trace: bool) -> Result<Vec<RunOutcome>, SimError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds
            .into_par_iter()
            .map(|s| run_scenario(&with_seed(cfg, s), trace))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_seeds_sequential(cfg, seeds, trace)
    }
}

/// One parsed row of a report or aggregate CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub scenario: String,
    pub seed: String,
    pub kind: String,
    pub stratum: String,
    pub values: [Option<f64>; 5],
}

pub const METRICS: [&str; 5] = ["created", "delivered", "ratio", "latency_mean", "latency_median"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>, BatchError> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(BatchError::Schema(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let mut values = [None; 5];
        for (i, v) in values.iter_mut().enumerate() {
            let raw = &rec[4 + i];
            *v = match raw {
                "NA" => None,
                s => Some(s.parse::<f64>().map_err(|_| {
                    BatchError::Schema(format!("{}: bad number {s:?} in {}", path.display(), METRICS[i]))
                })?),
            };
        }
        rows.push(Row {
            scenario: rec[0].to_string(),
            seed: rec[1].to_string(),
            kind: rec[2].to_string(),
            stratum: rec[3].to_string(),
            values,
        });
    }
    Ok(rows)
}

fn write_rows(rows: &[Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory csv");
    for r in rows {
        let mut rec = vec![r.scenario.clone(), r.seed.clone(), r.kind.clone(), r.stratum.clone()];
        rec.extend(r.values.iter().map(|v| fmt_opt(*v)));
        w.write_record(&rec).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("ascii csv")
}

/// Mean over seeds of every metric, same columns as a single report. NA
/// entries are skipped; a cell that is NA for every seed stays NA.
pub fn aggregate(outcomes: &[RunOutcome]) -> String {
    let parsed: Vec<Vec<Row>> = outcomes.iter().map(|o| parse_rows(&o.report.to_csv())).collect();
    let Some(first) = parsed.first() else {
        return write_rows(&[]);
    };
    let rows: Vec<Row> = first
        .iter()
        .enumerate()
        .map(|(i, proto)| {
            let mut values = [None; 5];
            for (m, v) in values.iter_mut().enumerate() {
                let present: Vec<f64> = parsed.iter().filter_map(|rows| rows[i].values[m]).collect();
                *v = crate::metrics::mean(&present);
            }
            Row { seed: "mean".into(), values, ..proto.clone() }
        })
        .collect();
    write_rows(&rows)
}

fn parse_rows(text: &str) -> Vec<Row> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.records()
        .map(|rec| {
            let rec = rec.expect("report csv is well formed");
            let mut values = [None; 5];
            for (i, v) in values.iter_mut().enumerate() {
                *v = rec[4 + i].parse().ok();
            }
            Row {
                scenario: rec[0].to_string(),
                seed: rec[1].to_string(),
                kind: rec[2].to_string(),
                stratum: rec[3].to_string(),
                values,
            }
        })
        .collect()
}

/// Writes `out/seed-N/report.{csv,txt}` (plus `trace.csv` when traced) for
/// every run and `out/aggregate.csv` over all of them.
pub fn write_batch(out: &Path, outcomes: &[RunOutcome]) -> Result<(), BatchError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    for o in outcomes {
        let dir = out.join(format!("seed-{}", o.report.seed));
        write_report(&o.report, &dir).map_err(io_err(&dir))?;
        if let Some(trace) = &o.trace {
            let p = dir.join("trace.csv");
            fs::write(&p, trace).map_err(io_err(&p))?;
        }
    }
    let p = out.join("aggregate.csv");
    fs::write(&p, aggregate(outcomes)).map_err(io_err(&p))
}

/// Resolves a report location: a CSV file as is, or a directory holding
/// `report.csv` (single run) or `aggregate.csv` (batch).
pub fn locate(path: &Path) -> Result<PathBuf, BatchError> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    for name in ["report.csv", "aggregate.csv"] {
        let p = path.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(BatchError::NoReport(path.to_path_buf()))
}

pub const COMPARE_HEADER: [&str; 7] = ["kind", "stratum", "metric", "a", "b", "delta", "ratio"];

/// Diffs two reports row by row. `delta = b - a`, `ratio = b / a`; both are NA
/// when an operand is missing (and ratio when `a` is zero).
pub fn compare(a: &Path, b: &Path) -> Result<String, BatchError> {
    let pa = locate(a)?;
    let pb = locate(b)?;
    let ra = read_rows(&pa)?;
    let rb = read_rows(&pb)?;
    let key = |r: &Row| (r.kind.clone(), r.stratum.clone());
    let ia: BTreeMap<_, _> = ra.iter().map(|r| (key(r), r)).collect();
    let ib: BTreeMap<_, _> = rb.iter().map(|r| (key(r), r)).collect();
    if ia.len() != ra.len() || ib.len() != rb.len() {
        return Err(BatchError::Schema("duplicate (kind, stratum) rows".into()));
    }
    if ia.keys().ne(ib.keys()) {
        return Err(BatchError::Schema(format!(
            "{} and {} cover different (kind, stratum) rows",
            pa.display(),
            pb.display()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COMPARE_HEADER).expect("in-memory csv");
    // keep the file order of the first report
    for row in &ra {
        let other = ib[&key(row)];
        for (m, name) in METRICS.iter().enumerate() {
            let (x, y) = (row.values[m], other.values[m]);
            let delta = x.zip(y).map(|(x, y)| y - x);
            let ratio = x.zip(y).and_then(|(x, y)| (x != 0.0).then(|| y / x));
            w.write_record([
                row.kind.as_str(),
                row.stratum.as_str(),
                name,
                &fmt_opt(x),
                &fmt_opt(y),
                &fmt_opt(delta),
                &fmt_opt(ratio),
            ])
            .expect("in-memory csv");
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory csv")).expect("ascii csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: &str, stratum: &str, v: [Option<f64>; 5]) -> Row {
        Row { scenario: "s".into(), seed: "1".into(), kind: kind.into(), stratum: stratum.into(), values: v }
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![
            row("WRITE", "0", [Some(2.0), Some(1.0), Some(0.5), Some(3.25), None]),
            row("READ", "total", [Some(0.0), Some(0.0), None, None, None]),
        ];
        let text = write_rows(&rows);
        assert_eq!(parse_rows(&text), rows);
        assert!(text.lines().nth(2).unwrap().ends_with(",NA,NA,NA"));
    }

    #[test]
    fn compare_deltas_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        fs::write(&a, write_rows(&[row("WRITE", "0", [Some(2.0), Some(1.0), Some(0.5), Some(10.0), None])])).unwrap();
        fs::write(&b, write_rows(&[row("WRITE", "0", [Some(4.0), Some(1.0), Some(0.25), Some(5.0), Some(1.0)])]))
            .unwrap();
        let out = compare(&a, &b).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "kind,stratum,metric,a,b,delta,ratio");
        assert_eq!(lines[1], "WRITE,0,created,2.000000,4.000000,2.000000,2.000000");
        assert_eq!(lines[4], "WRITE,0,latency_mean,10.000000,5.000000,-5.000000,0.500000");
        assert_eq!(lines[5], "WRITE,0,latency_median,NA,1.000000,NA,NA");

        fs::write(&b, write_rows(&[row("READ", "0", [None; 5])])).unwrap();
        assert!(matches!(compare(&a, &b), Err(BatchError::Schema(_))));
        fs::write(&b, "x,y\n1,2\n").unwrap();
        assert!(matches!(compare(&a, &b), Err(BatchError::Schema(_))));
    }

    #[test]
    fn locate_prefers_report_over_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(locate(dir.path()), Err(BatchError::NoReport(_))));
        fs::write(dir.path().join("aggregate.csv"), "").unwrap();
        assert_eq!(locate(dir.path()).unwrap(), dir.path().join("aggregate.csv"));
        fs::write(dir.path().join("report.csv"), "").unwrap();
        assert_eq!(locate(dir.path()).unwrap(), dir.path().join("report.csv"));
    }
}
