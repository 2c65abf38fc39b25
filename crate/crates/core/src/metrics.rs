//! Per-message lifecycle log and the stratified delivery/latency report.
//!
//! Messages are stratified by how many mixers their path used (0 to 3). A kind's
//! total delivery ratio is the mean of its stratum ratios; strata with no
//! traffic are left out of that mean. Latency statistics only look at
//! delivered messages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const STRATA: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Write,
    Read,
    Response,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Write, Kind::Read, Kind::Response];

    pub fn prefix(self) -> &'static str {
        match self {
            Kind::Write => "WRITE",
            Kind::Read => "READ",
            Kind::Response => "RESPONSE",
        }
    }

    pub fn from_prefix(s: &str) -> Option<Self> {
        Kind::ALL.into_iter().find(|k| k.prefix() == s)
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.prefix())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryRecord {
    pub uid: u64,
    pub kind: Kind,
    pub mixers_used: u8,
    pub created_at: f64,
    pub delivered_at: Option<f64>,
}

impl DeliveryRecord {
    pub fn latency(&self) -> Option<f64> {
        self.delivered_at.map(|d| d - self.created_at)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("uid {0} recorded twice")]
    DuplicateUid(u64),
    #[error("uid {0} was never created")]
    UnknownUid(u64),
    #[error("uid {0} delivered twice")]
    DuplicateDelivery(u64),
    #[error("uid {uid} delivered at {at} before its creation")]
    BeforeCreation { uid: u64, at: f64 },
    #[error("mixer count {0} outside 0..=3")]
    BadStratum(u8),
}

/// Append-only record log.
#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    records: Vec<DeliveryRecord>,
    by_uid: BTreeMap<u64, usize>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_created(&mut self, uid: u64, kind: Kind, mixers_used: u8, created_at: f64) -> Result<(), MetricsError> {
        if mixers_used as usize >= STRATA {
            return Err(MetricsError::BadStratum(mixers_used));
        }
        if self.by_uid.contains_key(&uid) {
            return Err(MetricsError::DuplicateUid(uid));
        }
        self.by_uid.insert(uid, self.records.len());
        self.records.push(DeliveryRecord { uid, kind, mixers_used, created_at, delivered_at: None });
        Ok(())
    }

    pub fn record_delivered(&mut self, uid: u64, at: f64) -> Result<(), MetricsError> {
        let idx = *self.by_uid.get(&uid).ok_or(MetricsError::UnknownUid(uid))?;
        let rec = &mut self.records[idx];
        if rec.delivered_at.is_some() {
            return Err(MetricsError::DuplicateDelivery(uid));
        }
        if at < rec.created_at {
            return Err(MetricsError::BeforeCreation { uid, at });
        }
        rec.delivered_at = Some(at);
        Ok(())
    }

    pub fn get(&self, uid: u64) -> Option<&DeliveryRecord> {
        self.by_uid.get(&uid).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[DeliveryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StratumStats {
    pub created: u64,
    pub delivered: u64,
    /// `None` when nothing was created.
    pub ratio: Option<f64>,
    pub latency_mean: Option<f64>,
    pub latency_median: Option<f64>,
}

impl StratumStats {
    fn from_latencies(created: u64, mut latencies: Vec<f64>) -> Self {
        let delivered = latencies.len() as u64;
        let ratio = (created > 0).then(|| delivered as f64 / created as f64);
        Self {
            created,
            delivered,
            ratio,
            latency_mean: mean(&latencies),
            latency_median: median(&mut latencies),
        }
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Midpoint median; sorts `values` in place.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KindStats {
    pub strata: [StratumStats; STRATA],
    pub total: StratumStats,
}

impl KindStats {
    pub fn compute<'a>(records: impl IntoIterator<Item = &'a DeliveryRecord>) -> Self {
        let mut created = [0u64; STRATA];
        let mut latencies: [Vec<f64>; STRATA] = Default::default();
        for r in records {
            let s = r.mixers_used as usize;
            created[s] += 1;
            if let Some(l) = r.latency() {
                latencies[s].push(l);
            }
        }
        let all: Vec<f64> = latencies.iter().flatten().copied().collect();
        let strata: [StratumStats; STRATA] =
            std::array::from_fn(|s| StratumStats::from_latencies(created[s], std::mem::take(&mut latencies[s])));
        let mut total = StratumStats::from_latencies(created.iter().sum(), all);
        let present: Vec<f64> = strata.iter().filter_map(|s| s.ratio).collect();
        total.ratio = mean(&present);
        Self { strata, total }
    }

    /// Rows in CSV order: strata 0..=3, then the total.
    pub fn rows(&self) -> impl Iterator<Item = (String, &StratumStats)> {
        self.strata
            .iter()
            .enumerate()
            .map(|(i, s)| (i.to_string(), s))
            .chain(std::iter::once(("total".to_string(), &self.total)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub config_digest: String,
    pub write: KindStats,
    /// Read requests, measured at arrival at the board.
    pub read: KindStats,
    /// Replies, stratified by the reply path. Latency runs from the creation of
    /// the read that fetched the value to the reader's receipt.
    pub response: KindStats,
}

pub const CSV_HEADER: [&str; 9] =
    ["scenario", "seed", "kind", "stratum", "created", "delivered", "ratio", "latency_mean", "latency_median"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn compute_report(log: &MetricsLog, scenario: &str, seed: u64, config_digest: &str) -> Report {
    let of = |kind| KindStats::compute(log.records().iter().filter(move |r| r.kind == kind));
    Report {
        scenario: scenario.to_string(),
        seed,
        config_digest: config_digest.to_string(),
        write: of(Kind::Write),
        read: of(Kind::Read),
        response: of(Kind::Response),
    }
}

impl Report {
    pub fn kind(&self, kind: Kind) -> &KindStats {
        match kind {
            Kind::Write => &self.write,
            Kind::Read => &self.read,
            Kind::Response => &self.response,
        }
    }

    /// Ten rows: WRITE and READ, each with four strata and a total.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory csv");
        let seed = self.seed.to_string();
        for kind in [Kind::Write, Kind::Read] {
            for (stratum, s) in self.kind(kind).rows() {
                w.write_record([
                    self.scenario.as_str(),
                    &seed,
                    kind.prefix(),
                    &stratum,
                    &s.created.to_string(),
                    &s.delivered.to_string(),
                    &fmt_opt(s.ratio),
                    &fmt_opt(s.latency_mean),
                    &fmt_opt(s.latency_median),
                ])
                .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("ascii csv")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario       {}", self.scenario);
        let _ = writeln!(out, "seed           {}", self.seed);
        let _ = writeln!(out, "config digest  {}", self.config_digest);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "WRITE is measured at the board (write applied), READ at the board (request arrived)."
        );
        let _ = writeln!(out, "Total ratio = mean of the stratum ratios; strata with no traffic (NA) are excluded.");
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<9} {:<8} {:>8} {:>9} {:>9} {:>13} {:>15}",
            "kind", "stratum", "created", "delivered", "ratio", "latency_mean", "latency_median"
        );
        let table = |out: &mut String, kind: Kind, stats: &KindStats| {
            for (stratum, s) in stats.rows() {
                let _ = writeln!(
                    out,
                    "{:<9} {:<8} {:>8} {:>9} {:>9} {:>13} {:>15}",
                    kind.prefix(),
                    stratum,
                    s.created,
                    s.delivered,
                    s.ratio.map_or("NA".into(), |r| format!("{r:.4}")),
                    s.latency_mean.map_or("NA".into(), |l| format!("{l:.1}")),
                    s.latency_median.map_or("NA".into(), |l| format!("{l:.1}")),
                );
            }
        };
        table(&mut out, Kind::Write, &self.write);
        table(&mut out, Kind::Read, &self.read);
        let _ = writeln!(out);
        let _ = writeln!(out, "Supplementary: end-to-end reads (read created -> reply received), by reply path");
        table(&mut out, Kind::Response, &self.response);
        out
    }
}

pub fn write_report(report: &Report, out_dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.csv"), report.to_csv())?;
    fs::write(out_dir.join("report.txt"), report.to_text())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with(entries: &[(Kind, u8, f64, Option<f64>)]) -> MetricsLog {
        let mut log = MetricsLog::new();
        for (uid, &(kind, m, c, d)) in entries.iter().enumerate() {
            log.record_created(uid as u64, kind, m, c).unwrap();
            if let Some(d) = d {
                log.record_delivered(uid as u64, d).unwrap();
            }
        }
        log
    }

    #[test]
    fn latency_is_delta() {
        let log = log_with(&[(Kind::Write, 0, 10.0, Some(12.5))]);
        assert_eq!(log.get(0).unwrap().latency(), Some(2.5));
    }

    #[test]
    fn misuse_is_reported() {
        let mut log = MetricsLog::new();
        assert_eq!(log.record_delivered(7, 1.0), Err(MetricsError::UnknownUid(7)));
        log.record_created(7, Kind::Read, 1, 5.0).unwrap();
        assert_eq!(log.record_created(7, Kind::Read, 1, 5.0), Err(MetricsError::DuplicateUid(7)));
        assert!(matches!(log.record_delivered(7, 4.0), Err(MetricsError::BeforeCreation { .. })));
        log.record_delivered(7, 6.0).unwrap();
        assert_eq!(log.record_delivered(7, 8.0), Err(MetricsError::DuplicateDelivery(7)));
        assert_eq!(log.record_created(8, Kind::Read, 4, 0.0), Err(MetricsError::BadStratum(4)));
    }

    #[test]
    fn four_way_mean() {
        // ratios 1, 1, 0.5, 0.5
        let log = log_with(&[
            (Kind::Write, 0, 0.0, Some(1.0)),
            (Kind::Write, 1, 0.0, Some(1.0)),
            (Kind::Write, 2, 0.0, Some(1.0)),
            (Kind::Write, 2, 0.0, None),
            (Kind::Write, 3, 0.0, Some(1.0)),
            (Kind::Write, 3, 0.0, None),
        ]);
        let r = compute_report(&log, "s", 1, "d");
        assert_eq!(r.write.total.ratio, Some(0.75));
        // pooled ratio would be 4/6; the reported total is the stratum mean
        assert_eq!(r.write.total.delivered, 4);
        assert_eq!(r.write.total.created, 6);
    }

    #[test]
    fn median_and_mean_over_delivered_only() {
        let log = log_with(&[
            (Kind::Read, 0, 0.0, Some(2.0)),
            (Kind::Read, 0, 0.0, Some(4.0)),
            (Kind::Read, 0, 0.0, Some(10.0)),
            (Kind::Read, 0, 0.0, None),
        ]);
        let r = compute_report(&log, "s", 1, "d");
        let s = &r.read.strata[0];
        assert_eq!(s.latency_median, Some(4.0));
        assert!((s.latency_mean.unwrap() - 16.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.ratio, Some(0.75));
        assert_eq!(median(&mut [1.0, 3.0]), Some(2.0));
    }

    #[test]
    fn empty_strata_are_excluded() {
        let log = log_with(&[(Kind::Write, 1, 0.0, Some(1.0)), (Kind::Write, 3, 0.0, None)]);
        let r = compute_report(&log, "s", 1, "d");
        assert_eq!(r.write.strata[0].ratio, None);
        assert_eq!(r.write.total.ratio, Some(0.5));
    }

    #[test]
    fn empty_log_does_not_crash() {
        let r = compute_report(&MetricsLog::new(), "s", 1, "d");
        assert_eq!(r.write.total, StratumStats::default());
        assert!(r.read.strata.iter().all(|s| s.ratio.is_none() && s.latency_median.is_none()));
        assert_eq!(r.to_csv().lines().count(), 11);
    }

    #[test]
    fn csv_schema() {
        let log = log_with(&[(Kind::Write, 2, 1.0, Some(3.0))]);
        let r = compute_report(&log, "park", 9, "abc");
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(lines[3], "park,9,WRITE,2,1,1,1.000000,2.000000,2.000000");
        assert_eq!(lines[5], "park,9,WRITE,total,1,1,1.000000,2.000000,2.000000");
        assert_eq!(lines[10], "park,9,READ,total,0,0,NA,NA,NA");
        let text = r.to_text();
        assert!(text.contains("abc"));
        assert!(text.contains("park"));
    }

    #[test]
    fn adding_a_delivery_never_lowers_a_ratio() {
        let mut log = log_with(&[(Kind::Write, 1, 0.0, None), (Kind::Write, 1, 0.0, None), (Kind::Write, 1, 0.0, Some(3.0))]);
        let before = compute_report(&log, "s", 1, "d").write.strata[1].ratio.unwrap();
        log.record_delivered(0, 5.0).unwrap();
        let after = compute_report(&log, "s", 1, "d").write.strata[1].ratio.unwrap();
        assert!(after >= before);
    }
}
