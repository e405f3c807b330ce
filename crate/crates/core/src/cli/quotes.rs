//! Quote CSV files: `quote_date,nearby,price,spread`, one row per quote.
//!
//! Dates map to year fractions with ACT/365.25, anchored at January 1 of the
//! first quote's year.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::qkf::{GridPoint, Quote, QuoteDate, QuoteSeries, DEFAULT_MAX_NEARBY};

pub const HEADER: [&str; 4] = ["quote_date", "nearby", "price", "spread"];

const DAYS_PER_YEAR: f64 = 365.25;

/// A quote series together with the calendar dates it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct DatedQuotes {
    pub dates: Vec<NaiveDate>,
    pub series: QuoteSeries,
}

fn year_start(d: NaiveDate) -> NaiveDate {
    NaiveDate::from_ymd_opt(d.year(), 1, 1).expect("January 1 exists")
}

/// Years since `origin` and position within the calendar year.
pub fn grid_point(origin: NaiveDate, d: NaiveDate) -> GridPoint {
    let time = (d - origin).num_days() as f64 / DAYS_PER_YEAR;
    let year_frac = (d - year_start(d)).num_days() as f64 / DAYS_PER_YEAR;
    GridPoint { time, year_frac }
}

pub fn grid(dates: &[NaiveDate]) -> Vec<GridPoint> {
    match dates.first() {
        None => Vec::new(),
        Some(&first) => {
            let origin = year_start(first);
            dates.iter().map(|&d| grid_point(origin, d)).collect()
        }
    }
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, line: u64) -> Result<&'a str> {
    rec.get(i)
        .map(str::trim)
        .ok_or_else(|| Error::Data(format!("line {line}: expected 4 fields, got {}", rec.len())))
}

/// Parses quote rows from any reader.
pub fn read_quotes<R: std::io::Read>(reader: R) -> Result<DatedQuotes> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Data(format!("line 1: {e}")))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != HEADER {
        return Err(Error::Data(format!(
            "line 1: header must be {}, got {}",
            HEADER.join(","),
            names.join(",")
        )));
    }
    let mut rows: BTreeMap<NaiveDate, BTreeMap<u32, Quote>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data(format!("malformed row: {e}")))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(Error::Data(format!("line {line}: expected 4 fields, got {}", rec.len())));
        }
        let date = NaiveDate::parse_from_str(field(&rec, 0, line)?, "%Y-%m-%d")
            .map_err(|e| Error::Data(format!("line {line}: bad quote_date: {e}")))?;
        let nearby: u32 = field(&rec, 1, line)?
            .parse()
            .map_err(|e| Error::Data(format!("line {line}: bad nearby: {e}")))?;
        if !(1..=DEFAULT_MAX_NEARBY).contains(&nearby) {
            return Err(Error::Data(format!("line {line}: nearby {nearby} outside 1..={DEFAULT_MAX_NEARBY}")));
        }
        let price: f64 = field(&rec, 2, line)?
            .parse()
            .map_err(|e| Error::Data(format!("line {line}: bad price: {e}")))?;
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::Data(format!("line {line}: price must be positive, got {price}")));
        }
        let spread_text = field(&rec, 3, line)?;
        let spread = if spread_text.is_empty() {
            None
        } else {
            let s: f64 = spread_text
                .parse()
                .map_err(|e| Error::Data(format!("line {line}: bad spread: {e}")))?;
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Data(format!("line {line}: spread must be nonnegative, got {s}")));
            }
            Some(s)
        };
        let day = rows.entry(date).or_default();
        if day.insert(nearby, Quote { price, spread }).is_some() {
            return Err(Error::Data(format!("line {line}: duplicate quote for {date} nearby {nearby}")));
        }
    }
    let dates: Vec<NaiveDate> = rows.keys().copied().collect();
    let points = grid(&dates);
    let series = QuoteSeries::new(
        rows.into_values()
            .zip(points)
            .map(|(quotes, g)| QuoteDate {
                time: g.time,
                year_frac: g.year_frac,
                quotes,
            })
            .collect(),
    )?;
    Ok(DatedQuotes { dates, series })
}

pub fn ingest_quotes(path: &Path) -> Result<DatedQuotes> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_quotes(file)
}

/// Renders quotes in the ingestion format.
pub fn quotes_csv(quotes: &DatedQuotes) -> String {
    let mut out = HEADER.join(",");
    out.push('\n');
    for (d, q) in quotes.dates.iter().zip(quotes.series.dates()) {
        for (j, quote) in &q.quotes {
            let spread = quote.spread.map(|s| format!("{s:.16e}")).unwrap_or_default();
            out.push_str(&format!("{d},{j},{:.16e},{spread}\n", quote.price));
        }
    }
    out
}

/// First day of `n` consecutive months starting at `start`'s month.
pub fn monthly_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let first = NaiveDate::from_ymd_opt(start.year(), start.month(), 1).expect("valid month");
    (0..n as u32)
        .map(|k| first.checked_add_months(chrono::Months::new(k)).expect("date in range"))
        .collect()
}
