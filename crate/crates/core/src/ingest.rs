//! Access-log ingestion, fixed-interval binning, and the counts CSV format.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, NaiveDateTime, TimeZone, Utc};
use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Count;

/// Five-minute bins.
pub const DEFAULT_INTERVAL_SECONDS: u32 = 300;

const CLF_TIME_FORMAT: &str = "%d/%b/%Y:%H:%M:%S %z";
const CSV_TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// Fields pulled from one access-log line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogRecord {
    pub timestamp: DateTime<FixedOffset>,
    pub status: Option<u16>,
}

/// Parses one NCSA Common or Combined Log Format line. Returns `None` for
/// lines that do not carry a well-formed bracketed timestamp.
pub fn parse_clf_line(line: &str) -> Option<LogRecord> {
    let open = line.find('[')?;
    let close = open + line[open..].find(']')?;
    let timestamp = DateTime::parse_from_str(&line[open + 1..close], CLF_TIME_FORMAT).ok()?;
    // `"request" status bytes ...` follows the timestamp.
    let rest = &line[close + 1..];
    let status = rest
        .find('"')
        .and_then(|q| {
            let after = &rest[q + 1..];
            after.find('"').map(|e| &after[e + 1..])
        })
        .and_then(|tail| tail.split_whitespace().next())
        .and_then(|s| s.parse().ok());
    Some(LogRecord { timestamp, status })
}

/// Which requests count as arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusFilter {
    /// Every parsed line.
    #[default]
    All,
    /// Only 2xx responses.
    Success,
}

impl StatusFilter {
    fn accepts(self, rec: &LogRecord) -> bool {
        match self {
            StatusFilter::All => true,
            StatusFilter::Success => matches!(rec.status, Some(200..=299)),
        }
    }
}

/// Result of scanning one or more logs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogScan {
    pub timestamps: Vec<DateTime<Utc>>,
    pub lines: u64,
    pub malformed: u64,
    /// Lines parsed but rejected by the status filter.
    pub filtered: u64,
    /// UTC offset of the first parsed timestamp.
    pub offset: Option<FixedOffset>,
}

impl LogScan {
    pub fn merge(&mut self, other: LogScan) {
        self.timestamps.extend(other.timestamps);
        self.lines += other.lines;
        self.malformed += other.malformed;
        self.filtered += other.filtered;
        self.offset = self.offset.or(other.offset);
    }
}

/// Streams a log, skipping and counting malformed lines. Fails only on read errors.
pub fn scan_log<R: BufRead>(reader: R, filter: StatusFilter) -> Result<LogScan> {
    let mut scan = LogScan::default();
    for line in reader.lines() {
        let line = line?;
        scan.lines += 1;
        match parse_clf_line(&line) {
            Some(rec) if filter.accepts(&rec) => {
                scan.offset.get_or_insert(*rec.timestamp.offset());
                scan.timestamps.push(rec.timestamp.with_timezone(&Utc));
            }
            Some(_) => scan.filtered += 1,
            None => scan.malformed += 1,
        }
    }
    Ok(scan)
}

/// Opens a log file, transparently decompressing `.gz`.
pub fn scan_log_file(path: &Path, filter: StatusFilter) -> Result<LogScan> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    scan_log(BufReader::new(reader), filter)
}

/// Half-open time range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if end <= start {
            return Err(Error::InvalidParameter(format!("empty time window {start} .. {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }

    fn overlaps(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> bool {
        self.start < end && start < self.end
    }
}

/// Dense fixed-interval arrival counts. `None` marks an interval excluded
/// from analysis (for example a maintenance window).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficSeries {
    pub start: DateTime<Utc>,
    pub interval_seconds: u32,
    pub counts: Vec<Option<Count>>,
    pub source: String,
}

impl TrafficSeries {
    pub fn new(
        start: DateTime<Utc>,
        interval_seconds: u32,
        counts: Vec<Option<Count>>,
        source: impl Into<String>,
    ) -> Result<Self> {
        if interval_seconds == 0 {
            return Err(Error::InvalidParameter("interval must be positive".into()));
        }
        Ok(Self {
            start,
            interval_seconds,
            counts,
            source: source.into(),
        })
    }

    /// A fully observed series.
    pub fn from_counts(
        start: DateTime<Utc>,
        interval_seconds: u32,
        counts: &[Count],
        source: impl Into<String>,
    ) -> Result<Self> {
        Self::new(
            start,
            interval_seconds,
            counts.iter().copied().map(Some).collect(),
            source,
        )
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Present counts in order, missing intervals dropped.
    pub fn observed(&self) -> Vec<Count> {
        self.counts.iter().flatten().copied().collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn missing(&self) -> usize {
        self.counts.iter().filter(|c| c.is_none()).count()
    }

    pub fn interval_start(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(i as i64 * self.interval_seconds as i64)
    }

    /// End of the last interval.
    pub fn end(&self) -> DateTime<Utc> {
        self.interval_start(self.counts.len())
    }

    pub fn day_label(&self) -> String {
        self.start.format(CSV_TIME_FORMAT).to_string()
    }

    /// Splits at local midnights of `offset`. Each piece keeps the source label.
    pub fn split_days(&self, offset: FixedOffset) -> Vec<TrafficSeries> {
        let mut days: Vec<TrafficSeries> = Vec::new();
        let mut current_date = None;
        for (i, &c) in self.counts.iter().enumerate() {
            let t = self.interval_start(i);
            let date = t.with_timezone(&offset).date_naive();
            if current_date != Some(date) {
                current_date = Some(date);
                days.push(TrafficSeries {
                    start: t,
                    interval_seconds: self.interval_seconds,
                    counts: Vec::new(),
                    source: self.source.clone(),
                });
            }
            days.last_mut().expect("pushed above").counts.push(c);
        }
        days
    }
}

/// Output of [`bin_counts`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binned {
    pub series: TrafficSeries,
    /// Timestamps inside the binned range.
    pub in_window: u64,
    /// Arrivals that fell in intervals flagged missing.
    pub excluded: u64,
}

/// Counts arrivals per right-open interval.
///
/// Without a window the bins are aligned to multiples of `interval_seconds`
/// since the Unix epoch and span `[min, max]` of the timestamps. Intervals
/// that overlap a maintenance window are flagged missing.
pub fn bin_counts(
    timestamps: &[DateTime<Utc>],
    interval_seconds: u32,
    window: Option<TimeWindow>,
    maintenance: &[TimeWindow],
) -> Result<Binned> {
    if interval_seconds == 0 {
        return Err(Error::InvalidParameter("interval must be positive".into()));
    }
    let step = interval_seconds as i64;
    let (start, n_bins) = match window {
        Some(w) => {
            let span = (w.end - w.start).num_seconds();
            (w.start, ((span + step - 1) / step) as usize)
        }
        None => match (timestamps.iter().min(), timestamps.iter().max()) {
            (Some(lo), Some(hi)) => {
                let first = lo.timestamp().div_euclid(step) * step;
                let last = hi.timestamp().div_euclid(step) * step;
                let start = Utc.timestamp_opt(first, 0).single().expect("in range");
                (start, ((last - first) / step + 1) as usize)
            }
            _ => {
                return Ok(Binned {
                    series: TrafficSeries::new(Utc.timestamp_opt(0, 0).unwrap(), interval_seconds, vec![], "")?,
                    in_window: 0,
                    excluded: 0,
                })
            }
        },
    };
    let range_end = window.map(|w| w.end);
    let mut raw = vec![0u64; n_bins];
    let mut in_window = 0;
    for &t in timestamps {
        if t < start || range_end.is_some_and(|e| t >= e) {
            continue;
        }
        let idx = ((t - start).num_seconds() / step) as usize;
        if idx < n_bins {
            raw[idx] += 1;
            in_window += 1;
        }
    }
    let mut excluded = 0;
    let counts = raw
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let a = start + Duration::seconds(i as i64 * step);
            let b = a + Duration::seconds(step);
            if maintenance.iter().any(|m| m.overlaps(a, b)) {
                excluded += c;
                None
            } else {
                Some(c)
            }
        })
        .collect();
    Ok(Binned {
        series: TrafficSeries::new(start, interval_seconds, counts, "")?,
        in_window,
        excluded,
    })
}

/// Writes the `timestamp,count` CSV. Missing intervals have an empty count.
pub fn write_counts_to<W: Write>(series: &TrafficSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "count"])?;
    for (i, c) in series.counts.iter().enumerate() {
        let ts = series.interval_start(i).format(CSV_TIME_FORMAT).to_string();
        let count = c.map(|c| c.to_string()).unwrap_or_default();
        w.write_record([ts, count])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_counts(path: &Path, series: &TrafficSeries) -> Result<()> {
    write_counts_to(series, std::io::BufWriter::new(File::create(path)?))
}

/// Reads the counts CSV. The interval is inferred from the first two rows;
/// a single-row file uses `fallback_interval`.
pub fn read_counts_from<R: Read>(input: R, name: &str, fallback_interval: u32) -> Result<TrafficSeries> {
    let schema = |line: u64, message: String| Error::Schema {
        path: name.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = rdr.records();
    match rows.next() {
        Some(Ok(h)) if h.len() == 2 && &h[0] == "timestamp" && &h[1] == "count" => {}
        Some(Ok(h)) => {
            return Err(schema(
                1,
                format!(
                    "expected header `timestamp,count`, got `{}`",
                    h.iter().collect::<Vec<_>>().join(",")
                ),
            ))
        }
        Some(Err(e)) => return Err(schema(1, e.to_string())),
        None => return Err(schema(1, "missing header".into())),
    }
    let mut times: Vec<DateTime<Utc>> = Vec::new();
    let mut counts = Vec::new();
    let mut interval: Option<i64> = None;
    for (i, row) in rows.enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| schema(line, e.to_string()))?;
        if row.len() != 2 {
            return Err(schema(line, format!("expected 2 fields, got {}", row.len())));
        }
        let t = NaiveDateTime::parse_from_str(&row[0], CSV_TIME_FORMAT)
            .map_err(|e| schema(line, format!("bad timestamp `{}`: {e}", &row[0])))?
            .and_utc();
        let c = if row[1].is_empty() {
            None
        } else {
            Some(
                row[1]
                    .parse::<Count>()
                    .map_err(|e| schema(line, format!("bad count `{}`: {e}", &row[1])))?,
            )
        };
        if let Some(&prev) = times.last() {
            let gap = (t - prev).num_seconds();
            if gap <= 0 {
                return Err(schema(line, format!("timestamp {} out of order", &row[0])));
            }
            match interval {
                None => interval = Some(gap),
                Some(step) if step != gap => {
                    return Err(schema(
                        line,
                        format!("irregular spacing: {gap} s after previous row, expected {step} s"),
                    ))
                }
                _ => {}
            }
        }
        times.push(t);
        counts.push(c);
    }
    let interval = match interval {
        Some(s) => u32::try_from(s).map_err(|_| schema(3, format!("interval {s} s too large")))?,
        None => fallback_interval,
    };
    let start = times
        .first()
        .copied()
        .unwrap_or_else(|| Utc.timestamp_opt(0, 0).unwrap());
    TrafficSeries::new(start, interval, counts, name)
}

pub fn read_counts(path: &Path) -> Result<TrafficSeries> {
    read_counts_from(File::open(path)?, &path.display().to_string(), DEFAULT_INTERVAL_SECONDS)
}

/// Declarative ingestion config (TOML).
///
/// ```toml
/// timezone = "+09:00"
/// status = "success"
///
/// [[maintenance]]
/// start = "2005-03-20T01:00:00Z"
/// end = "2005-03-20T03:00:00Z"
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default)]
    pub timezone: Option<String>,
    #[serde(default)]
    pub status: StatusFilter,
    #[serde(default)]
    pub maintenance: Vec<TimeWindow>,
}

impl IngestConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for m in &cfg.maintenance {
            TimeWindow::new(m.start, m.end).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(tz) = &cfg.timezone {
            parse_offset(tz)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn offset(&self) -> Result<Option<FixedOffset>> {
        self.timezone.as_deref().map(parse_offset).transpose()
    }
}

/// Parses `Z`, `UTC`, `+09:00`, or `-0500`.
pub fn parse_offset(text: &str) -> Result<FixedOffset> {
    let bad = || Error::Config(format!("bad UTC offset `{text}`"));
    if text.eq_ignore_ascii_case("z") || text.eq_ignore_ascii_case("utc") {
        return Ok(FixedOffset::east_opt(0).expect("zero offset"));
    }
    let (sign, rest) = match text.as_bytes().first() {
        Some(b'+') => (1, &text[1..]),
        Some(b'-') => (-1, &text[1..]),
        _ => return Err(bad()),
    };
    let digits: String = rest.chars().filter(|c| *c != ':').collect();
    if digits.len() != 4 || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let hours: i32 = digits[..2].parse().map_err(|_| bad())?;
    let minutes: i32 = digits[2..].parse().map_err(|_| bad())?;
    FixedOffset::east_opt(sign * (hours * 3600 + minutes * 60)).ok_or_else(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utc(s: &str) -> DateTime<Utc> {
        s.parse().unwrap()
    }

    #[test]
    fn parses_common_log_line() {
        let rec = parse_clf_line(r#"127.0.0.1 - - [18/Mar/2005:00:00:07 +0900] "GET / HTTP/1.0" 200 1043"#).unwrap();
        assert_eq!(rec.timestamp.with_timezone(&Utc), utc("2005-03-17T15:00:07Z"));
        assert_eq!(rec.status, Some(200));
    }

    #[test]
    fn parses_combined_log_line() {
        let line =
            r#"10.1.2.3 - frank [10/Oct/2000:13:55:36 -0700] "GET /a.gif HTTP/1.0" 404 - "http://x/" "Mozilla/4.08""#;
        let rec = parse_clf_line(line).unwrap();
        assert_eq!(rec.timestamp.with_timezone(&Utc), utc("2000-10-10T20:55:36Z"));
        assert_eq!(rec.status, Some(404));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_clf_line("").is_none());
        assert!(parse_clf_line("no brackets here").is_none());
        assert!(parse_clf_line("x [32/Mar/2005:00:00:07 +0900] \"GET /\" 200 1").is_none());
        assert!(parse_clf_line("x [18/Mar/2005:00:00:07] \"GET /\" 200 1").is_none());
    }

    #[test]
    fn scan_counts_malformed_and_filtered() {
        let log = "\
a - - [18/Mar/2005:00:00:07 +0900] \"GET / HTTP/1.0\" 200 1
\n\
b - - [18/Mar/2005:00:01:07 +0900] \"GET /x HTTP/1.0\" 500 1
garbage
";
        let all = scan_log(log.as_bytes(), StatusFilter::All).unwrap();
        assert_eq!((all.timestamps.len(), all.malformed, all.lines), (2, 2, 4));
        assert_eq!(all.offset, FixedOffset::east_opt(9 * 3600));
        let ok = scan_log(log.as_bytes(), StatusFilter::Success).unwrap();
        assert_eq!((ok.timestamps.len(), ok.filtered), (1, 1));
    }

    #[test]
    fn bins_are_right_open() {
        let b = bin_counts(
            &[utc("2005-03-18T00:00:00Z"), utc("2005-03-18T00:05:00Z")],
            300,
            None,
            &[],
        )
        .unwrap();
        assert_eq!(b.series.counts, vec![Some(1), Some(1)]);
        let b = bin_counts(
            &[
                utc("2005-03-18T00:00:01Z"),
                utc("2005-03-18T00:02:00Z"),
                utc("2005-03-18T00:04:59Z"),
            ],
            300,
            None,
            &[],
        )
        .unwrap();
        assert_eq!(b.series.counts, vec![Some(3)]);
        assert_eq!(b.series.start, utc("2005-03-18T00:00:00Z"));
    }

    #[test]
    fn empty_input_empty_series() {
        let b = bin_counts(&[], 300, None, &[]).unwrap();
        assert!(b.series.is_empty());
        assert!(bin_counts(&[], 0, None, &[]).is_err());
    }

    #[test]
    fn window_and_maintenance() {
        let ts: Vec<_> = (0..30)
            .map(|m| utc("2005-03-18T00:00:30Z") + Duration::minutes(m))
            .collect();
        let window = TimeWindow::new(utc("2005-03-18T00:05:00Z"), utc("2005-03-18T00:20:00Z")).unwrap();
        let maint = TimeWindow::new(utc("2005-03-18T00:11:00Z"), utc("2005-03-18T00:12:00Z")).unwrap();
        let b = bin_counts(&ts, 300, Some(window), &[maint]).unwrap();
        assert_eq!(b.series.counts, vec![Some(5), None, Some(5)]);
        assert_eq!((b.in_window, b.excluded), (15, 5));
        assert_eq!(b.in_window, b.series.total() + b.excluded);
    }

    #[test]
    fn csv_gap_row_is_missing() {
        let text = "timestamp,count\n2005-03-18T00:00:00Z,4\n2005-03-18T00:05:00Z,\n2005-03-18T00:10:00Z,7\n";
        let s = read_counts_from(text.as_bytes(), "gap.csv", 300).unwrap();
        assert_eq!(s.counts, vec![Some(4), None, Some(7)]);
        assert_eq!(s.interval_seconds, 300);
        assert_eq!(s.observed(), vec![4, 7]);
        assert_eq!(s.missing(), 1);
    }

    #[test]
    fn csv_out_of_order_names_line() {
        let text = "timestamp,count\n2005-03-18T00:05:00Z,4\n2005-03-18T00:10:00Z,1\n2005-03-18T00:00:00Z,7\n";
        match read_counts_from(text.as_bytes(), "bad.csv", 300) {
            Err(Error::Schema { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("out of order"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_schema_errors() {
        let cases = [
            ("time,count\n", 1),
            ("timestamp,count\n2005-03-18T00:00:00Z,abc\n", 2),
            ("timestamp,count\n2005-03-18 00:00,1\n", 2),
            (
                "timestamp,count\n2005-03-18T00:00:00Z,1\n2005-03-18T00:05:00Z,1\n2005-03-18T00:15:00Z,1\n",
                4,
            ),
            ("timestamp,count\n2005-03-18T00:00:00Z,1,2\n", 2),
        ];
        for (text, want) in cases {
            match read_counts_from(text.as_bytes(), "x.csv", 300) {
                Err(Error::Schema { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn split_days_local_midnight() {
        // 21:00Z on the 17th is 06:00 on the 18th in +09:00; local midnight falls at 15:00Z.
        let s = TrafficSeries::from_counts(utc("2005-03-17T12:00:00Z"), 3600, &[1, 2, 3, 4, 5], "t").unwrap();
        let days = s.split_days(parse_offset("+09:00").unwrap());
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].counts, vec![Some(1), Some(2), Some(3)]);
        assert_eq!(days[1].start, utc("2005-03-17T15:00:00Z"));
        let utc_days = s.split_days(parse_offset("Z").unwrap());
        assert_eq!(utc_days.len(), 1);
    }

    #[test]
    fn offsets_and_config() {
        assert_eq!(parse_offset("-0500").unwrap().local_minus_utc(), -5 * 3600);
        assert_eq!(parse_offset("+09:30").unwrap().local_minus_utc(), 9 * 3600 + 1800);
        assert!(parse_offset("09:00").is_err());
        let cfg = IngestConfig::from_toml(
            "timezone = \"+09:00\"\nstatus = \"success\"\n[[maintenance]]\nstart = \"2005-03-20T01:00:00Z\"\nend = \"2005-03-20T03:00:00Z\"\n",
        )
        .unwrap();
        assert_eq!(cfg.status, StatusFilter::Success);
        assert_eq!(cfg.maintenance.len(), 1);
        assert!(IngestConfig::from_toml("bogus = 1").is_err());
        assert!(IngestConfig::from_toml(
            "[[maintenance]]\nstart = \"2005-03-20T03:00:00Z\"\nend = \"2005-03-20T01:00:00Z\"\n"
        )
        .is_err());
    }
}
