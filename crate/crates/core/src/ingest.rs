//! CoinGecko-style daily CSV ingestion and per-asset preprocessing.
//!
//! Raw exports carry `price`, `market_cap` and `total_volume` per day. From
//! those we derive token supply `M = MC / price`, daily velocity
//! `V = T / MC` and holding time `H = MC / T` (days), then drop the lowest
//! 10% of days by velocity.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_TICKER_LEN: usize = 12;
/// Fraction of lowest-velocity rows removed per asset.
pub const VELOCITY_TRIM_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unrecognised CSV header {0:?}")]
    MalformedHeader(String),
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("{asset}: date {date} appears more than once")]
    DuplicateDate { asset: String, date: NaiveDate },
    #[error("{0}: no records to preprocess")]
    EmptyInput(String),
    #[error("{0}: every row was dropped by the positivity filter")]
    EmptyAfterFilter(String),
    #[error("invalid ticker {0:?}")]
    InvalidTicker(String),
    #[error("unknown asset class {0:?}")]
    UnknownAssetClass(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetClass {
    Cryptocurrency,
    ExchangeToken,
    DefiToken,
    SmartContractToken,
    OracleToken,
    Stablecoin,
}

impl FromStr for AssetClass {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cryptocurrency" => AssetClass::Cryptocurrency,
            "exchange_token" => AssetClass::ExchangeToken,
            "defi_token" => AssetClass::DefiToken,
            "smart_contract_token" => AssetClass::SmartContractToken,
            "oracle_token" => AssetClass::OracleToken,
            "stablecoin" => AssetClass::Stablecoin,
            _ => return Err(IngestError::UnknownAssetClass(s.to_string())),
        })
    }
}

/// An asset's ticker plus the taxonomy label that decides whether it takes
/// part in the velocity regressions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssetId {
    pub ticker: String,
    pub asset_class: AssetClass,
    pub is_medium_of_exchange: bool,
}

impl AssetId {
    /// Stablecoins are stores of value and never media of exchange; every
    /// other class is.
    pub fn new(ticker: &str, asset_class: AssetClass) -> Result<Self, IngestError> {
        let ticker = ticker.trim().to_ascii_uppercase();
        if ticker.is_empty() || ticker.len() > MAX_TICKER_LEN {
            return Err(IngestError::InvalidTicker(ticker));
        }
        Ok(AssetId {
            ticker,
            asset_class,
            is_medium_of_exchange: asset_class != AssetClass::Stablecoin,
        })
    }

    /// Class for the eight reference assets; anything else is treated as a
    /// cryptocurrency.
    pub fn from_ticker(ticker: &str) -> Result<Self, IngestError> {
        let class = match ticker.trim().to_ascii_uppercase().as_str() {
            "BTC" | "ETH" => AssetClass::Cryptocurrency,
            "BNB" => AssetClass::ExchangeToken,
            "CRV" | "UNI" => AssetClass::DefiToken,
            "DOT" => AssetClass::SmartContractToken,
            "LINK" => AssetClass::OracleToken,
            "USDT" | "USDC" | "DAI" | "BUSD" => AssetClass::Stablecoin,
            _ => AssetClass::Cryptocurrency,
        };
        AssetId::new(ticker, class)
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.ticker)
    }
}

/// One day of a raw export. Empty numeric fields are read as NaN and
/// removed by [`preprocess`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub date: NaiveDate,
    pub price: f64,
    pub market_cap: f64,
    pub total_volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub date: NaiveDate,
    pub price: f64,
    /// Market capitalisation, USD.
    pub mc: f64,
    /// Daily transaction volume, USD.
    pub t: f64,
    /// Supply in tokens.
    pub m: f64,
    /// Velocity per day.
    pub v: f64,
    /// Holding time in days.
    pub h: f64,
}

impl SeriesRow {
    pub fn derive(date: NaiveDate, price: f64, mc: f64, t: f64) -> Self {
        SeriesRow {
            date,
            price,
            mc,
            t,
            m: mc / price,
            v: t / mc,
            h: mc / t,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub raw_rows: usize,
    pub dropped_nonpositive: usize,
    pub trimmed_low_velocity: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSeries {
    pub asset: AssetId,
    pub rows: Vec<SeriesRow>,
    #[serde(default)]
    pub summary: PreprocessSummary,
}

impl AssetSeries {
    pub fn velocities(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.v).collect()
    }

    pub fn holding_times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.h).collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let pick: fn(&SeriesRow) -> f64 = match name {
            "price" => |r| r.price,
            "MC" => |r| r.mc,
            "T" => |r| r.t,
            "M" => |r| r.m,
            "V" => |r| r.v,
            "H" => |r| r.h,
            _ => return None,
        };
        Some(self.rows.iter().map(pick).collect())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum DateColumn {
    SnappedAt,
    Date,
}

fn parse_header(header: &csv::StringRecord) -> Result<DateColumn, IngestError> {
    let cols: Vec<String> = header.iter().map(|c| c.trim().to_ascii_lowercase()).collect();
    let tail = ["price", "market_cap", "total_volume"];
    if cols.len() == 4 && cols[1..] == tail {
        match cols[0].as_str() {
            "snapped_at" => return Ok(DateColumn::SnappedAt),
            "date" => return Ok(DateColumn::Date),
            _ => {}
        }
    }
    Err(IngestError::MalformedHeader(
        header.iter().collect::<Vec<_>>().join(","),
    ))
}

fn parse_date(field: &str) -> Option<NaiveDate> {
    let field = field.trim();
    if let Ok(d) = NaiveDate::parse_from_str(field, "%Y-%m-%d") {
        return Some(d);
    }
    chrono::NaiveDateTime::parse_from_str(field, "%Y-%m-%d %H:%M:%S UTC")
        .ok()
        .map(|dt| dt.date())
}

fn parse_number(field: &str, name: &str, line: u64) -> Result<f64, IngestError> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(f64::NAN);
    }
    field.parse::<f64>().map_err(|_| IngestError::MalformedRow {
        line,
        reason: format!("{name} is not a number: {field:?}"),
    })
}

/// Parse a daily export with header `snapped_at|date,price,market_cap,total_volume`.
/// Records come back sorted by date.
pub fn parse_asset_csv<R: Read>(input: R, asset: &AssetId) -> Result<Vec<RawRecord>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    parse_header(reader.headers()?)?;

    let mut records = Vec::new();
    for result in reader.records() {
        let row = result?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 4 {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected 4 fields, found {}", row.len()),
            });
        }
        let date = parse_date(&row[0]).ok_or_else(|| IngestError::MalformedRow {
            line,
            reason: format!("unparseable date {:?}", &row[0]),
        })?;
        records.push(RawRecord {
            date,
            price: parse_number(&row[1], "price", line)?,
            market_cap: parse_number(&row[2], "market_cap", line)?,
            total_volume: parse_number(&row[3], "total_volume", line)?,
        });
    }
    records.sort_by_key(|r| r.date);
    if let Some(w) = records.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(IngestError::DuplicateDate {
            asset: asset.ticker.clone(),
            date: w[0].date,
        });
    }
    Ok(records)
}

/// Drop non-positive rows, derive `M`, `V`, `H`, remove the lowest
/// `floor(0.10 n)` rows by velocity (on ties the earlier date goes first)
/// and return the rest in date order.
pub fn preprocess(records: &[RawRecord], asset: &AssetId) -> Result<AssetSeries, IngestError> {
    if records.is_empty() {
        return Err(IngestError::EmptyInput(asset.ticker.clone()));
    }
    let mut rows: Vec<SeriesRow> = records
        .iter()
        .filter(|r| r.price > 0.0 && r.market_cap > 0.0 && r.total_volume > 0.0)
        .filter(|r| r.price.is_finite() && r.market_cap.is_finite() && r.total_volume.is_finite())
        .map(|r| SeriesRow::derive(r.date, r.price, r.market_cap, r.total_volume))
        .collect();
    let dropped_nonpositive = records.len() - rows.len();
    if rows.is_empty() {
        return Err(IngestError::EmptyAfterFilter(asset.ticker.clone()));
    }

    // floor(0.10 n) without going through floating point
    let trim = rows.len() / 10;
    rows.sort_by(|a, b| a.v.total_cmp(&b.v).then(a.date.cmp(&b.date)));
    rows.drain(..trim);
    rows.sort_by_key(|r| r.date);

    Ok(AssetSeries {
        asset: asset.clone(),
        summary: PreprocessSummary {
            raw_rows: records.len(),
            dropped_nonpositive,
            trimmed_low_velocity: trim,
            kept: rows.len(),
        },
        rows,
    })
}

/// Read and preprocess one export from disk.
pub fn load_asset(path: &Path, asset: &AssetId) -> Result<AssetSeries, IngestError> {
    let file = std::fs::File::open(path)?;
    let records = parse_asset_csv(std::io::BufReader::new(file), asset)?;
    preprocess(&records, asset)
}

/// Normalised `date,price,MC,T,M,V,H` CSV, numbers in shortest round-trip form.
pub fn write_series_csv(series: &AssetSeries) -> String {
    let mut out = String::from("date,price,MC,T,M,V,H\n");
    for r in &series.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.date.format("%Y-%m-%d"),
            r.price,
            r.mc,
            r.t,
            r.m,
            r.v,
            r.h
        ));
    }
    out
}

/// Inverse of [`write_series_csv`].
pub fn read_series_csv<R: Read>(input: R, asset: &AssetId) -> Result<AssetSeries, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["date", "price", "MC", "T", "M", "V", "H"] {
        return Err(IngestError::MalformedHeader(header.join(",")));
    }
    let mut rows = Vec::new();
    for result in reader.records() {
        let row = result?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let date = parse_date(&row[0]).ok_or_else(|| IngestError::MalformedRow {
            line,
            reason: format!("unparseable date {:?}", &row[0]),
        })?;
        let mut vals = [0.0; 6];
        for (i, name) in ["price", "MC", "T", "M", "V", "H"].iter().enumerate() {
            vals[i] = parse_number(&row[i + 1], name, line)?;
        }
        rows.push(SeriesRow {
            date,
            price: vals[0],
            mc: vals[1],
            t: vals[2],
            m: vals[3],
            v: vals[4],
            h: vals[5],
        });
    }
    let kept = rows.len();
    Ok(AssetSeries {
        asset: asset.clone(),
        rows,
        summary: PreprocessSummary {
            raw_rows: kept,
            kept,
            ..Default::default()
        },
    })
}

/// Counts of rows per asset, handy for reports.
pub fn row_counts(series: &[AssetSeries]) -> BTreeMap<String, usize> {
    series
        .iter()
        .map(|s| (s.asset.ticker.clone(), s.rows.len()))
        .collect()
}
