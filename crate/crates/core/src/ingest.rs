//! Loading, parsing and cleaning of listing and calendar snapshot CSVs.
//!
//! Cleaning is by exclusion: a row that violates a hard invariant is dropped
//! and counted in a [`DropReport`], never repaired or silently kept, so
//! `input rows == records + dropped` always holds. Optional fees are kept as
//! absent here; imputation is the feature encoder's decision.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One cleaned listing snapshot row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ListingRecord {
    pub listing_id: u64,
    /// Nightly price in USD.
    pub price: f64,
    pub bedrooms: u32,
    /// May be half-steps (1.5 baths).
    pub bathrooms: f64,
    pub accommodates: u32,
    pub cleaning_fee: Option<f64>,
    pub security_deposit: Option<f64>,
    pub extra_people: Option<f64>,
    pub room_type: String,
    pub zipcode: String,
    pub neighborhood: Option<String>,
    pub latitude: f64,
    pub longitude: f64,
    pub availability_30: u32,
    pub availability_60: u32,
    pub availability_90: u32,
    pub availability_365: u32,
    pub snapshot_date: Option<NaiveDate>,
    pub city: Option<String>,
}

/// One calendar snapshot row: is the listing bookable on `date`, and at what
/// advertised price.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalendarEntry {
    pub listing_id: u64,
    pub date: NaiveDate,
    pub available: bool,
    pub price: Option<f64>,
}

/// Per-reason counts of dropped rows, with the first offending location kept
/// per reason for diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    counts: BTreeMap<String, u64>,
    first_examples: BTreeMap<String, String>,
}

impl DropReport {
    pub fn record(&mut self, reason: &str, detail: String) {
        *self.counts.entry(reason.to_string()).or_insert(0) += 1;
        self.first_examples
            .entry(reason.to_string())
            .or_insert(detail);
    }

    pub fn count(&self, reason: &str) -> u64 {
        self.counts.get(reason).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    /// First offending location recorded for a reason, e.g.
    /// `"row 5, column price: cannot parse money token \"abc\""`.
    pub fn first_example(&self, reason: &str) -> Option<&str> {
        self.first_examples.get(reason).map(|s| s.as_str())
    }
}

/// Maps canonical column names to the headers actually present in a file.
/// Unmapped names default to themselves.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Schema {
    remap: BTreeMap<String, String>,
}

impl Schema {
    pub fn with_column(mut self, canonical: &str, actual: &str) -> Self {
        self.remap.insert(canonical.to_string(), actual.to_string());
        self
    }

    fn actual<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.remap
            .get(canonical)
            .map(|s| s.as_str())
            .unwrap_or(canonical)
    }
}

/// Listing columns that must be present in the header.
pub const REQUIRED_LISTING_COLUMNS: [&str; 16] = [
    "id",
    "price",
    "bedrooms",
    "bathrooms",
    "accommodates",
    "cleaning_fee",
    "security_deposit",
    "extra_people",
    "room_type",
    "zipcode",
    "latitude",
    "longitude",
    "availability_30",
    "availability_60",
    "availability_90",
    "availability_365",
];

/// Optional listing columns picked up when present.
pub const OPTIONAL_LISTING_COLUMNS: [&str; 3] = ["neighborhood", "snapshot_date", "city"];

/// Strip a leading `$` and thousands separators and parse a USD amount.
/// Blank input is an absent value, not zero.
pub fn parse_money(text: &str) -> Result<Option<f64>> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    let cleaned: String = trimmed
        .strip_prefix('$')
        .unwrap_or(trimmed)
        .replace(',', "");
    cleaned
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::MoneyParse {
            token: text.to_string(),
        })
}

struct HeaderIndex {
    by_name: BTreeMap<String, usize>,
}

impl HeaderIndex {
    fn get(&self, record: &csv::StringRecord, name: &str) -> Option<String> {
        self.by_name
            .get(name)
            .and_then(|&i| record.get(i))
            .map(|s| s.trim().to_string())
    }

    fn has(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            },
        })
}

fn header_index(
    reader: &mut csv::Reader<std::fs::File>,
    path: &Path,
    schema: &Schema,
    required: &[&str],
) -> Result<HeaderIndex> {
    let headers = reader.headers().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut by_actual: BTreeMap<String, usize> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        by_actual.entry(h.trim().to_string()).or_insert(i);
    }
    let mut by_name = BTreeMap::new();
    let mut missing = Vec::new();
    for &canonical in required {
        match by_actual.get(schema.actual(canonical)) {
            Some(&i) => {
                by_name.insert(canonical.to_string(), i);
            }
            None => missing.push(canonical.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingColumns { missing });
    }
    for &canonical in OPTIONAL_LISTING_COLUMNS.iter() {
        if let Some(&i) = by_actual.get(schema.actual(canonical)) {
            by_name.insert(canonical.to_string(), i);
        }
    }
    Ok(HeaderIndex { by_name })
}

/// Controls for [`load_listings_with`].
#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// When false, a blank or absent price parses as 0 instead of dropping
    /// the row. Used when scoring new listings that have no price yet.
    pub price_required: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            price_required: true,
        }
    }
}

/// Load and clean a listings CSV. Rows violating hard invariants are dropped
/// and counted; load order is preserved.
pub fn load_listings(path: &Path, schema: &Schema) -> Result<(Vec<ListingRecord>, DropReport)> {
    load_listings_with(path, schema, LoadOptions::default())
}

pub fn load_listings_with(
    path: &Path,
    schema: &Schema,
    options: LoadOptions,
) -> Result<(Vec<ListingRecord>, DropReport)> {
    let mut reader = open_reader(path)?;
    let idx = header_index(&mut reader, path, schema, &REQUIRED_LISTING_COLUMNS)?;

    let mut records = Vec::new();
    let mut report = DropReport::default();
    for (row_no, row) in reader.records().enumerate() {
        let row_no = row_no + 1; // 1-based data row
        let row = row.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        match parse_listing_row(&idx, &row, row_no, options, &mut report) {
            Some(record) => records.push(record),
            None => {}
        }
    }
    Ok((records, report))
}

fn record_drop(report: &mut DropReport, reason: &str, row_no: usize, column: &str, detail: &str) {
    report.record(reason, format!("row {row_no}, column {column}: {detail}"));
}

fn parse_count(
    idx: &HeaderIndex,
    row: &csv::StringRecord,
    row_no: usize,
    name: &str,
    report: &mut DropReport,
) -> Option<u32> {
    let text = idx.get(row, name).unwrap_or_default();
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => {
            Some(v as u32)
        }
        _ => {
            record_drop(report, "bad_number", row_no, name, &format!("token {text:?}"));
            None
        }
    }
}

fn parse_fee(
    idx: &HeaderIndex,
    row: &csv::StringRecord,
    row_no: usize,
    name: &str,
    report: &mut DropReport,
) -> Option<Option<f64>> {
    match parse_money(&idx.get(row, name).unwrap_or_default()) {
        Ok(v) => Some(v),
        Err(e) => {
            record_drop(report, "bad_money", row_no, name, &e.to_string());
            None
        }
    }
}

fn parse_availability(
    idx: &HeaderIndex,
    row: &csv::StringRecord,
    row_no: usize,
    name: &str,
    window: u32,
    report: &mut DropReport,
) -> Option<u32> {
    let text = idx.get(row, name).unwrap_or_default();
    match text.parse::<u32>() {
        Ok(v) if v <= window => Some(v),
        _ => {
            record_drop(
                report,
                "availability_range",
                row_no,
                name,
                &format!("token {text:?} outside 0..={window}"),
            );
            None
        }
    }
}

fn parse_listing_row(
    idx: &HeaderIndex,
    row: &csv::StringRecord,
    row_no: usize,
    options: LoadOptions,
    report: &mut DropReport,
) -> Option<ListingRecord> {
    let field = |name: &str| idx.get(row, name).unwrap_or_default();

    let listing_id = match field("id").parse::<u64>() {
        Ok(v) => v,
        Err(_) => {
            record_drop(report, "bad_id", row_no, "id", &format!("token {:?}", field("id")));
            return None;
        }
    };

    let price = match parse_money(&field("price")) {
        Ok(Some(v)) => v,
        Ok(None) if !options.price_required => 0.0,
        Ok(None) => {
            record_drop(report, "bad_price", row_no, "price", "value is empty");
            return None;
        }
        Err(e) => {
            record_drop(report, "bad_price", row_no, "price", &e.to_string());
            return None;
        }
    };
    if price < 0.0 {
        record_drop(report, "price_range", row_no, "price", &format!("{price} < 0"));
        return None;
    }

    let bedrooms = parse_count(idx, row, row_no, "bedrooms", report)?;
    let accommodates = parse_count(idx, row, row_no, "accommodates", report)?;

    let bathrooms = match field("bathrooms").parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => v,
        _ => {
            record_drop(
                report,
                "bad_number",
                row_no,
                "bathrooms",
                &format!("token {:?}", field("bathrooms")),
            );
            return None;
        }
    };

    let cleaning_fee = parse_fee(idx, row, row_no, "cleaning_fee", report)?;
    let security_deposit = parse_fee(idx, row, row_no, "security_deposit", report)?;
    let extra_people = parse_fee(idx, row, row_no, "extra_people", report)?;

    let latitude = field("latitude").parse::<f64>().unwrap_or(f64::NAN);
    if !(-90.0..=90.0).contains(&latitude) {
        record_drop(
            report,
            "lat_range",
            row_no,
            "latitude",
            &format!("token {:?}", field("latitude")),
        );
        return None;
    }
    let longitude = field("longitude").parse::<f64>().unwrap_or(f64::NAN);
    if !(-180.0..=180.0).contains(&longitude) {
        record_drop(
            report,
            "lon_range",
            row_no,
            "longitude",
            &format!("token {:?}", field("longitude")),
        );
        return None;
    }

    let availability_30 = parse_availability(idx, row, row_no, "availability_30", 30, report)?;
    let availability_60 = parse_availability(idx, row, row_no, "availability_60", 60, report)?;
    let availability_90 = parse_availability(idx, row, row_no, "availability_90", 90, report)?;
    let availability_365 = parse_availability(idx, row, row_no, "availability_365", 365, report)?;

    let snapshot_date = if idx.has("snapshot_date") {
        let text = field("snapshot_date");
        if text.is_empty() {
            None
        } else {
            match NaiveDate::parse_from_str(&text, "%Y-%m-%d") {
                Ok(d) => Some(d),
                Err(_) => {
                    record_drop(
                        report,
                        "bad_date",
                        row_no,
                        "snapshot_date",
                        &format!("token {text:?}"),
                    );
                    return None;
                }
            }
        }
    } else {
        None
    };

    let optional_string = |name: &str| -> Option<String> {
        if idx.has(name) {
            let text = field(name);
            if text.is_empty() {
                None
            } else {
                Some(text)
            }
        } else {
            None
        }
    };

    Some(ListingRecord {
        listing_id,
        price,
        bedrooms,
        bathrooms,
        accommodates,
        cleaning_fee,
        security_deposit,
        extra_people,
        room_type: field("room_type"),
        zipcode: normalize_zipcode(&field("zipcode")),
        neighborhood: optional_string("neighborhood"),
        latitude,
        longitude,
        availability_30,
        availability_60,
        availability_90,
        availability_365,
        snapshot_date,
        city: optional_string("city"),
    })
}

/// Zipcodes stay strings (leading zeros, "94103-1234" forms); anything longer
/// than 5 characters is trimmed to its first 5.
fn normalize_zipcode(raw: &str) -> String {
    let trimmed = raw.trim();
    if trimmed.len() > 5 {
        trimmed.chars().take(5).collect()
    } else {
        trimmed.to_string()
    }
}

/// Load a calendar CSV. `available` is parsed strictly from the tokens
/// `t` / `f`; anything else drops the row.
pub fn load_calendar(path: &Path) -> Result<(Vec<CalendarEntry>, DropReport)> {
    let mut reader = open_reader(path)?;
    let idx = header_index(
        &mut reader,
        path,
        &Schema::default(),
        &["listing_id", "date", "available", "price"],
    )?;

    let mut entries = Vec::new();
    let mut report = DropReport::default();
    for (row_no, row) in reader.records().enumerate() {
        let row_no = row_no + 1;
        let row = row.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;

        let listing_id = match idx.get(&row, "listing_id").unwrap_or_default().parse() {
            Ok(v) => v,
            Err(_) => {
                report.record("bad_id", format!("row {row_no}, column listing_id"));
                continue;
            }
        };
        let date_text = idx.get(&row, "date").unwrap_or_default();
        let date = match NaiveDate::parse_from_str(&date_text, "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) => {
                report.record(
                    "bad_date",
                    format!("row {row_no}, column date: token {date_text:?}"),
                );
                continue;
            }
        };
        let flag = idx.get(&row, "available").unwrap_or_default();
        let available = match flag.as_str() {
            "t" => true,
            "f" => false,
            other => {
                report.record(
                    "bad_flag",
                    format!("row {row_no}, column available: token {other:?}"),
                );
                continue;
            }
        };
        let price = match parse_money(&idx.get(&row, "price").unwrap_or_default()) {
            Ok(v) => v,
            Err(e) => {
                report.record("bad_money", format!("row {row_no}, column price: {e}"));
                continue;
            }
        };
        entries.push(CalendarEntry {
            listing_id,
            date,
            available,
            price,
        });
    }
    Ok((entries, report))
}

/// Emit cleaned records back to CSV in the canonical column order.
/// Loading the emitted file yields the same records (round-trip).
pub fn write_listings(path: &Path, records: &[ListingRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut header: Vec<&str> = REQUIRED_LISTING_COLUMNS.to_vec();
    header.extend(OPTIONAL_LISTING_COLUMNS);
    writer.write_record(&header).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;

    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let row = vec![
            r.listing_id.to_string(),
            r.price.to_string(),
            r.bedrooms.to_string(),
            r.bathrooms.to_string(),
            r.accommodates.to_string(),
            fmt_opt(r.cleaning_fee),
            fmt_opt(r.security_deposit),
            fmt_opt(r.extra_people),
            r.room_type.clone(),
            r.zipcode.clone(),
            r.latitude.to_string(),
            r.longitude.to_string(),
            r.availability_30.to_string(),
            r.availability_60.to_string(),
            r.availability_90.to_string(),
            r.availability_365.to_string(),
            r.neighborhood.clone().unwrap_or_default(),
            r.snapshot_date
                .map(|d| d.format("%Y-%m-%d").to_string())
                .unwrap_or_default(),
            r.city.clone().unwrap_or_default(),
        ];
        writer.write_record(&row).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
