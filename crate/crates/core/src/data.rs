//! Market data: hourly candles, CSV ingestion, trade resampling and a seeded GBM
//! generator.
//!
//! Candle CSV header: `timestamp,open,high,low,close[,volume]`. Trade CSV header:
//! `timestamp,price[,volume]`. Timestamps are integer epoch seconds or ISO-8601 UTC.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HOUR: i64 = 3600;

/// One hour of OHLC market data. `timestamp` is the epoch second at which the hour opens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candle {
    pub timestamp: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: Option<f64>,
}

impl Candle {
    pub fn flat(timestamp: i64, price: f64) -> Self {
        Self {
            timestamp,
            open: price,
            high: price,
            low: price,
            close: price,
            volume: None,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(format!("non-positive or non-finite price in {prices:?}"));
        }
        let (lo_body, hi_body) = (self.open.min(self.close), self.open.max(self.close));
        if !(self.low <= lo_body && hi_body <= self.high) {
            return Err(format!(
                "inconsistent OHLC: open {} high {} low {} close {}",
                self.open, self.high, self.low, self.close
            ));
        }
        Ok(())
    }
}

/// A validated, gap-free hourly candle series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    candles: Vec<Candle>,
}

impl PriceSeries {
    pub fn new(candles: Vec<Candle>) -> Result<Self> {
        if candles.is_empty() {
            return Err(Error::Validation("price series is empty".into()));
        }
        for (i, c) in candles.iter().enumerate() {
            c.check()
                .map_err(|m| Error::Validation(format!("candle {i}: {m}")))?;
        }
        let missing = missing_hours(&candles)?;
        if !missing.is_empty() {
            return Err(Error::Gap { missing });
        }
        Ok(Self { candles })
    }

    pub fn candles(&self) -> &[Candle] {
        &self.candles
    }

    pub fn closes(&self) -> Vec<f64> {
        self.candles.iter().map(|c| c.close).collect()
    }

    pub fn len(&self) -> usize {
        self.candles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candles.is_empty()
    }

    pub fn into_candles(self) -> Vec<Candle> {
        self.candles
    }
}

fn missing_hours(candles: &[Candle]) -> Result<Vec<String>> {
    let mut missing = Vec::new();
    for pair in candles.windows(2) {
        let (a, b) = (pair[0].timestamp, pair[1].timestamp);
        let step = b - a;
        if step <= 0 || step % HOUR != 0 {
            return Err(Error::Validation(format!(
                "timestamps {} -> {} are not increasing on an hourly grid",
                format_timestamp(a),
                format_timestamp(b)
            )));
        }
        let mut t = a + HOUR;
        while t < b {
            missing.push(format_timestamp(t));
            t += HOUR;
        }
    }
    Ok(missing)
}

/// ISO-8601 UTC rendering, `YYYY-MM-DDTHH:MM:SSZ`.
pub fn format_timestamp(ts: i64) -> String {
    match Utc.timestamp_opt(ts, 0).single() {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => ts.to_string(),
    }
}

pub fn parse_timestamp(raw: &str) -> std::result::Result<i64, String> {
    let s = raw.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(format!("unrecognised timestamp `{s}`"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Fill missing hours with flat candles at the previous close instead of failing.
    pub fill_gaps: bool,
}

struct Columns {
    names: Vec<String>,
}

impl Columns {
    fn new(headers: &csv::StringRecord, required: &[&str]) -> Result<Self> {
        let names: Vec<String> = headers
            .iter()
            .map(|h| h.trim().to_ascii_lowercase())
            .collect();
        for r in required {
            if !names.iter().any(|n| n == r) {
                return Err(Error::Parse {
                    row: 1,
                    column: (*r).to_string(),
                    message: "missing required column".into(),
                });
            }
        }
        Ok(Self { names })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
        let idx = self.names.iter().position(|n| n == name)?;
        rec.get(idx).map(str::trim).filter(|s| !s.is_empty())
    }

    fn timestamp(&self, rec: &csv::StringRecord, row: usize) -> Result<i64> {
        let raw = self.required(rec, "timestamp", row)?;
        parse_timestamp(raw).map_err(|message| Error::Parse {
            row,
            column: "timestamp".into(),
            message,
        })
    }

    fn required<'r>(&self, rec: &'r csv::StringRecord, name: &str, row: usize) -> Result<&'r str> {
        self.get(rec, name).ok_or_else(|| Error::Parse {
            row,
            column: name.into(),
            message: "empty field".into(),
        })
    }

    fn number(&self, rec: &csv::StringRecord, name: &str, row: usize) -> Result<f64> {
        let raw = self.required(rec, name, row)?;
        raw.parse::<f64>().map_err(|e| Error::Parse {
            row,
            column: name.into(),
            message: format!("`{raw}`: {e}"),
        })
    }

    fn price(&self, rec: &csv::StringRecord, name: &str, row: usize) -> Result<f64> {
        let v = self.number(rec, name, row)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Parse {
                row,
                column: name.into(),
                message: format!("price must be positive, got {v}"),
            });
        }
        Ok(v)
    }

    fn optional(&self, rec: &csv::StringRecord, name: &str, row: usize) -> Result<Option<f64>> {
        match self.get(rec, name) {
            None => Ok(None),
            Some(_) => self.number(rec, name, row).map(Some),
        }
    }
}

// Rows are reported by file line: the header is line 1.
fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn load_candles(path: impl AsRef<Path>, opts: LoadOptions) -> Result<PriceSeries> {
    let path = path.as_ref();
    read_candles(open(path)?, opts)
}

pub fn read_candles<R: Read>(reader: R, opts: LoadOptions) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let cols = Columns::new(
        rdr.headers()?,
        &["timestamp", "open", "high", "low", "close"],
    )?;
    let mut candles: Vec<Candle> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line_of(&rec, i + 2);
        let candle = Candle {
            timestamp: cols.timestamp(&rec, row)?,
            open: cols.price(&rec, "open", row)?,
            high: cols.price(&rec, "high", row)?,
            low: cols.price(&rec, "low", row)?,
            close: cols.price(&rec, "close", row)?,
            volume: cols.optional(&rec, "volume", row)?,
        };
        candle.check().map_err(|message| Error::Parse {
            row,
            column: "open/high/low/close".into(),
            message,
        })?;
        if let Some(prev) = candles.last() {
            let step = candle.timestamp - prev.timestamp;
            if step <= 0 || step % HOUR != 0 {
                return Err(Error::Parse {
                    row,
                    column: "timestamp".into(),
                    message: format!(
                        "{} does not follow {} on the hourly grid",
                        format_timestamp(candle.timestamp),
                        format_timestamp(prev.timestamp)
                    ),
                });
            }
            if opts.fill_gaps {
                let mut t = prev.timestamp + HOUR;
                let fill = prev.close;
                while t < candle.timestamp {
                    candles.push(Candle::flat(t, fill));
                    t += HOUR;
                }
            }
        }
        candles.push(candle);
    }
    PriceSeries::new(candles)
}

pub fn write_candles(path: impl AsRef<Path>, series: &PriceSeries) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_candles_to(file, series)
}

/// Writes the candle CSV with integer timestamps and shortest round-trip floats,
/// so reading the output back reproduces `series` exactly.
pub fn write_candles_to<W: Write>(writer: W, series: &PriceSeries) -> Result<()> {
    let with_volume = series.candles.iter().any(|c| c.volume.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp", "open", "high", "low", "close"];
    if with_volume {
        header.push("volume");
    }
    w.write_record(&header)?;
    for c in &series.candles {
        let mut row = vec![
            c.timestamp.to_string(),
            c.open.to_string(),
            c.high.to_string(),
            c.low.to_string(),
            c.close.to_string(),
        ];
        if with_volume {
            row.push(c.volume.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<candle writer>", e))?;
    Ok(())
}

/// A single swap observation from an exported trade log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawTradeRecord {
    pub timestamp: i64,
    pub price: f64,
    pub volume: Option<f64>,
}

pub fn load_trades(path: impl AsRef<Path>) -> Result<Vec<RawTradeRecord>> {
    let path = path.as_ref();
    read_trades(open(path)?)
}

pub fn read_trades<R: Read>(reader: R) -> Result<Vec<RawTradeRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let cols = Columns::new(rdr.headers()?, &["timestamp", "price"])?;
    let mut out: Vec<RawTradeRecord> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line_of(&rec, i + 2);
        let trade = RawTradeRecord {
            timestamp: cols.timestamp(&rec, row)?,
            price: cols.price(&rec, "price", row)?,
            volume: cols.optional(&rec, "volume", row)?,
        };
        if let Some(prev) = out.last() {
            if trade.timestamp < prev.timestamp {
                return Err(Error::Parse {
                    row,
                    column: "timestamp".into(),
                    message: "trades must be sorted by time".into(),
                });
            }
        }
        out.push(trade);
    }
    Ok(out)
}

/// Buckets trades into hours: open is the first trade, close the last, high/low the
/// extrema. Hours without trades repeat the previous close as a flat candle, since
/// an AMM price does not move without swaps.
pub fn resample_hourly(records: &[RawTradeRecord]) -> Result<PriceSeries> {
    let Some(first) = records.first() else {
        return Err(Error::Validation("no trades to resample".into()));
    };
    if let Some(w) = records.windows(2).find(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Validation(format!(
            "trades are not sorted: {} after {}",
            w[1].timestamp, w[0].timestamp
        )));
    }
    if let Some(bad) = records.iter().find(|r| !(r.price > 0.0)) {
        return Err(Error::Domain(format!(
            "non-positive trade price {}",
            bad.price
        )));
    }

    let bucket = |ts: i64| ts.div_euclid(HOUR) * HOUR;
    let mut candles: Vec<Candle> = Vec::new();
    let mut current = Candle::flat(bucket(first.timestamp), first.price);
    current.volume = first.volume;
    for r in &records[1..] {
        let b = bucket(r.timestamp);
        if b == current.timestamp {
            current.high = current.high.max(r.price);
            current.low = current.low.min(r.price);
            current.close = r.price;
            current.volume = match (current.volume, r.volume) {
                (Some(a), Some(v)) => Some(a + v),
                (a, v) => a.or(v),
            };
            continue;
        }
        let prev_close = current.close;
        candles.push(current);
        let mut t = candles.last().map(|c| c.timestamp).unwrap_or(b) + HOUR;
        while t < b {
            candles.push(Candle::flat(t, prev_close));
            t += HOUR;
        }
        current = Candle::flat(b, r.price);
        current.volume = r.volume;
    }
    candles.push(current);
    PriceSeries::new(candles)
}

/// Parameters of the synthetic hourly GBM series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmParams {
    pub seed: u64,
    pub n_hours: usize,
    pub p_start: f64,
    /// Hourly log drift μ.
    pub drift: f64,
    /// Hourly volatility σ_h.
    pub volatility: f64,
    pub start_timestamp: i64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            seed: 0,
            n_hours: 24 * 30,
            p_start: 2000.0,
            drift: 0.0,
            volatility: 0.006,
            // 2021-05-05T01:00:00Z
            start_timestamp: 1_620_176_400,
        }
    }
}

const GBM_SUBSTEPS: usize = 4;

/// Hourly GBM closes `p_{t+1} = p_t exp((μ − σ²/2) + σ z_t)`. Each hour is built from
/// four equal sub-steps whose path gives the OHLC; the first candle is flat at `p_start`.
pub fn gbm_generate(params: &GbmParams) -> Result<PriceSeries> {
    let GbmParams {
        seed,
        n_hours,
        p_start,
        drift,
        volatility,
        start_timestamp,
    } = *params;
    if n_hours == 0 {
        return Err(Error::Validation("n_hours must be >= 1".into()));
    }
    if !(volatility >= 0.0) || !(p_start > 0.0) {
        return Err(Error::Validation(format!(
            "need volatility >= 0 and p_start > 0, got {volatility} and {p_start}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sub = GBM_SUBSTEPS as f64;
    let sub_drift = (drift - 0.5 * volatility * volatility) / sub;
    let sub_vol = volatility / sub.sqrt();

    let mut candles = Vec::with_capacity(n_hours);
    candles.push(Candle::flat(start_timestamp, p_start));
    // cumulative log return, so a flat path reproduces `p_start` exactly
    let mut log_ret = 0.0f64;
    let price = |r: f64| p_start * r.exp();
    for t in 1..n_hours {
        let open = price(log_ret);
        let (mut high, mut low) = (open, open);
        for _ in 0..GBM_SUBSTEPS {
            let z: f64 = StandardNormal.sample(&mut rng);
            log_ret += sub_drift + sub_vol * z;
            let p = price(log_ret);
            high = high.max(p);
            low = low.min(p);
        }
        candles.push(Candle {
            timestamp: start_timestamp + t as i64 * HOUR,
            open,
            high,
            low,
            close: price(log_ret),
            volume: None,
        });
    }
    PriceSeries::new(candles)
}
