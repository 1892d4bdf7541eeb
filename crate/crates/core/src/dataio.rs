//! Price-series ingestion, the stratified split, synthetic GBM data,
//! checkpoints and report files.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::permutation;

/// One stock: strictly increasing dates with positive adjusted prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub ticker: String,
    pub dates: Vec<NaiveDate>,
    pub adjprc: Vec<f64>,
}

impl PriceSeries {
    pub fn new(ticker: impl Into<String>, dates: Vec<NaiveDate>, adjprc: Vec<f64>) -> Result<Self> {
        let ticker = ticker.into();
        if dates.len() != adjprc.len() {
            return Err(Error::Contract(format!(
                "{ticker}: {} dates but {} prices",
                dates.len(),
                adjprc.len()
            )));
        }
        if let Some(w) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Contract(format!(
                "{ticker}: dates not strictly increasing at {}",
                dates[w + 1]
            )));
        }
        if let Some(i) = adjprc.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::domain("price_series", format!("{ticker}: adjprc[{i}] = {} is not positive", adjprc[i])));
        }
        Ok(Self { ticker, dates, adjprc })
    }

    pub fn len(&self) -> usize {
        self.adjprc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjprc.is_empty()
    }

    /// First `n` days (or the whole series if shorter).
    pub fn head(&self, n: usize) -> PriceSeries {
        let n = n.min(self.len());
        PriceSeries { ticker: self.ticker.clone(), dates: self.dates[..n].to_vec(), adjprc: self.adjprc[..n].to_vec() }
    }

    pub fn with_prices(&self, adjprc: Vec<f64>) -> PriceSeries {
        PriceSeries { ticker: self.ticker.clone(), dates: self.dates.clone(), adjprc }
    }

    pub fn median_price(&self) -> f64 {
        median(&self.adjprc)
    }
}

/// Median with the mean-of-middle-two convention for even lengths.
pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Read a `ticker,date,adjprc` CSV. Series come out in order of first
/// appearance, each sorted by date.
pub fn load_csv(path: &Path) -> Result<Vec<PriceSeries>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Vec<PriceSeries>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, detail: e.to_string() })?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != ["ticker", "date", "adjprc"] {
        return Err(Error::Parse { line: 1, detail: format!("expected header ticker,date,adjprc, found {}", cols.join(",")) });
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(NaiveDate, f64, usize)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { line, detail: e.to_string() }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 3 {
            return Err(Error::Parse { line, detail: format!("expected 3 fields, found {}", rec.len()) });
        }
        let ticker = rec[0].trim().to_string();
        if ticker.is_empty() {
            return Err(Error::Parse { line, detail: "empty ticker".into() });
        }
        let date = NaiveDate::parse_from_str(rec[1].trim(), "%Y-%m-%d")
            .map_err(|e| Error::Parse { line, detail: format!("bad date {:?}: {e}", &rec[1]) })?;
        let price: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|e| Error::Parse { line, detail: format!("bad adjprc {:?}: {e}", &rec[2]) })?;
        if !price.is_finite() {
            return Err(Error::Parse { line, detail: format!("non-finite adjprc {price}") });
        }
        if price <= 0.0 {
            return Err(Error::domain("load_csv", format!("line {line}: non-positive adjprc {price} for {ticker}")));
        }
        if !rows.contains_key(&ticker) {
            order.push(ticker.clone());
        }
        rows.entry(ticker).or_default().push((date, price, line));
    }
    let mut out = Vec::with_capacity(order.len());
    for ticker in order {
        let mut r = rows.remove(&ticker).expect("ticker recorded");
        r.sort_by_key(|x| x.0);
        if let Some(w) = r.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Parse {
                line: w[1].2,
                detail: format!("duplicate row for {ticker} on {}", w[1].0),
            });
        }
        let (dates, prices) = r.into_iter().map(|(d, p, _)| (d, p)).unzip();
        out.push(PriceSeries::new(ticker, dates, prices)?);
    }
    Ok(out)
}

pub fn write_csv(path: &Path, series: &[PriceSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["ticker", "date", "adjprc"]).map_err(|e| csv_io(path, e))?;
    for s in series {
        for (d, p) in s.dates.iter().zip(&s.adjprc) {
            w.write_record([s.ticker.as_str(), &d.format("%Y-%m-%d").to_string(), &format!("{p}")])
                .map_err(|e| csv_io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Binning and allocation settings for [`stratified_split`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub n_bins: usize,
    pub fractions: [f64; 3],
    pub min_length: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { n_bins: 8, fractions: [0.75, 0.10, 0.15], min_length: 600 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(Error::Contract("n_bins must be at least 1".into()));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.fractions.iter().any(|f| *f < 0.0) {
            return Err(Error::Contract(format!("split fractions {:?} must be non-negative and sum to 1", self.fractions)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<PriceSeries>,
    pub val: Vec<PriceSeries>,
    pub test: Vec<PriceSeries>,
    /// Series dropped for being shorter than `min_length`.
    pub filtered: Vec<String>,
    /// Bins with fewer than 3 members, allocated through the global pool.
    pub pooled_bins: Vec<usize>,
}

/// Bin index for value `m` over equal-width bins on `[lo, hi]`; a value on an
/// edge belongs to the lower bin.
pub fn bin_index(m: f64, lo: f64, hi: f64, n_bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let width = (hi - lo) / n_bins as f64;
    let k = ((m - lo) / width).ceil() as isize - 1;
    k.clamp(0, n_bins as isize - 1) as usize
}

/// Allocate `items` into three groups. Counts follow cumulative rounding of
/// `fractions` starting from the running totals, so per-bin rounding errors do
/// not pile up across bins.
fn allocate(items: &[usize], fractions: &[f64; 3], totals: &mut [f64; 2], out: &mut [Vec<usize>; 3]) {
    let n = items.len() as f64;
    let before = [totals[0].round() as usize, totals[1].round() as usize];
    totals[0] += n * fractions[0];
    totals[1] += n * (fractions[0] + fractions[1]);
    let n_train = (totals[0].round() as usize).saturating_sub(before[0]).min(items.len());
    let cut_val = (totals[1].round() as usize).saturating_sub(before[1]).min(items.len()).max(n_train);
    out[0].extend_from_slice(&items[..n_train]);
    out[1].extend_from_slice(&items[n_train..cut_val]);
    out[2].extend_from_slice(&items[cut_val..]);
}

/// Filter short series, bin the rest by median price and allocate each bin
/// into train/val/test by the configured fractions.
pub fn stratified_split(series: &[PriceSeries], spec: &SplitSpec, seed: u64) -> Result<Split> {
    spec.validate()?;
    if series.is_empty() {
        return Err(Error::Contract("stratified_split on empty input".into()));
    }
    let mut split = Split::default();
    let kept: Vec<&PriceSeries> = series
        .iter()
        .filter(|s| {
            let keep = s.len() >= spec.min_length;
            if !keep {
                log::warn!("dropping {}: {} days < {}", s.ticker, s.len(), spec.min_length);
                split.filtered.push(s.ticker.clone());
            }
            keep
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Contract(format!("no series with at least {} days", spec.min_length)));
    }
    let medians: Vec<f64> = kept.iter().map(|s| s.median_price()).collect();
    let lo = medians.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = medians.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); spec.n_bins];
    for (i, m) in medians.iter().enumerate() {
        bins[bin_index(*m, lo, hi, spec.n_bins)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: [Vec<usize>; 3] = Default::default();
    let mut totals = [0.0; 2];
    let mut pool = Vec::new();
    for (b, members) in bins.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let order: Vec<usize> = permutation(members.len(), &mut rng).into_iter().map(|j| members[j]).collect();
        if members.len() < 3 {
            log::info!("bin {b} has {} member(s); allocating through the global pool", members.len());
            split.pooled_bins.push(b);
            pool.extend(order);
        } else {
            allocate(&order, &spec.fractions, &mut totals, &mut groups);
        }
    }
    if !pool.is_empty() {
        let order: Vec<usize> = permutation(pool.len(), &mut rng).into_iter().map(|j| pool[j]).collect();
        allocate(&order, &spec.fractions, &mut totals, &mut groups);
    }
    let take = |g: &Vec<usize>| g.iter().map(|&i| kept[i].clone()).collect::<Vec<_>>();
    split.train = take(&groups[0]);
    split.val = take(&groups[1]);
    split.test = take(&groups[2]);
    Ok(split)
}

/// Business days (Mon-Fri) starting at `start` (rolled forward off weekends).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.checked_add_days(Days::new(1)).expect("date in range");
    }
    out
}

/// Geometric Brownian motion paths with `p_0 = s0`.
pub fn synth_gbm(n_series: usize, n_days: usize, s0: f64, mu: f64, sigma: f64, seed: u64) -> Result<Vec<PriceSeries>> {
    if !(s0 > 0.0) {
        return Err(Error::domain("synth_gbm", format!("s0 = {s0} must be positive")));
    }
    if n_days < 120 {
        return Err(Error::Contract(format!("n_days = {n_days} is below 120")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Contract(format!("sigma = {sigma} must be non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dates = business_days(NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"), n_days);
    let drift = mu - sigma * sigma / 2.0;
    (0..n_series)
        .map(|k| {
            let mut p = Vec::with_capacity(n_days);
            p.push(s0);
            for t in 1..n_days {
                let z: f64 = StandardNormal.sample(&mut rng);
                p.push(p[t - 1] * (drift + sigma * z).exp());
            }
            PriceSeries::new(format!("SYN{k:03}"), dates.clone(), p)
        })
        .collect()
}

pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_END: &[u8] = b"\n\0";

/// Named tensors plus free-form architecture and metadata descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: Value,
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: Value,
    meta: Value,
    tensors: Vec<TensorHeader>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            architecture: self.architecture.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorHeader { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
        };
        let mut buf = serde_json::to_vec(&header).map_err(|e| Error::Contract(format!("header: {e}")))?;
        buf.extend_from_slice(HEADER_END);
        for (_, t) in &self.tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + HEADER_END.len() {
            return Err(Error::Corrupt("checkpoint too short".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let end = body
            .windows(HEADER_END.len())
            .position(|w| w == HEADER_END)
            .ok_or_else(|| Error::Corrupt("missing header terminator".into()))?;
        let header: Header =
            serde_json::from_slice(&body[..end]).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: header.format_version, expected: CHECKPOINT_VERSION });
        }
        let mut data = &body[end + HEADER_END.len()..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for th in header.tensors {
            let n: usize = th.shape.iter().product();
            if data.len() < n * 8 {
                return Err(Error::Corrupt(format!("tensor {} truncated", th.name)));
            }
            let (chunk, rest) = data.split_at(n * 8);
            let values = chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((th.name, Tensor::new(th.shape, values)?));
            data = rest;
        }
        if !data.is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes after tensors", data.len())));
        }
        Ok(Self { architecture: header.architecture, meta: header.meta, tensors })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// One row of the attack report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReportRow {
    pub ticker: String,
    pub method: String,
    pub eps_pct: f64,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub gen_slope: f64,
    pub ls_slope: f64,
}

/// Write any serde rows with a header to `path`.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn write_attack_report(path: &Path, rows: &[AttackReportRow]) -> Result<()> {
    write_rows(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows_one_series() {
        let s = parse_csv("ticker,date,adjprc\nA,2020-01-02,10.5\nA,2020-01-03,11\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].adjprc, vec![10.5, 11.0]);
    }

    #[test]
    fn rows_are_sorted_by_date() {
        let s = parse_csv("ticker,date,adjprc\nA,2020-01-03,2\nA,2020-01-02,1\n").unwrap();
        assert_eq!(s[0].adjprc, vec![1.0, 2.0]);
    }

    #[test]
    fn duplicate_date_is_named() {
        let err = parse_csv("ticker,date,adjprc\nA,2020-01-02,1\nB,2020-01-02,1\nA,2020-01-02,2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate") && msg.contains("2020-01-02") && msg.contains('A'), "{msg}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_csv("ticker,date,adjprc\nA,2020-01-02,1\nA,2020-13-40,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_csv("ticker,date,adjprc\nA,2020-01-02,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn non_positive_price_is_domain_error() {
        let err = parse_csv("ticker,date,adjprc\nA,2020-01-02,0\n").unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn edges_go_to_lower_bin() {
        assert_eq!(bin_index(0.0, 0.0, 8.0, 8), 0);
        assert_eq!(bin_index(1.0, 0.0, 8.0, 8), 0);
        assert_eq!(bin_index(1.5, 0.0, 8.0, 8), 1);
        assert_eq!(bin_index(8.0, 0.0, 8.0, 8), 7);
        assert_eq!(bin_index(5.0, 5.0, 5.0, 8), 0);
    }

    #[test]
    fn median_even_length() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn gbm_closed_forms() {
        let s = synth_gbm(1, 120, 50.0, 0.0, 0.0, 1).unwrap();
        assert!(s[0].adjprc.iter().all(|&p| p == 50.0));
        let s = synth_gbm(1, 120, 2.0, 0.001, 0.0, 1).unwrap();
        assert!((s[0].adjprc[99] - 2.0 * 0.099f64.exp()).abs() < 1e-12);
        assert!(matches!(synth_gbm(1, 120, 0.0, 0.0, 0.1, 1), Err(Error::Domain { .. })));
    }

    #[test]
    fn business_days_skip_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        let wd: Vec<Weekday> = d.iter().map(|d| d.weekday()).collect();
        assert_eq!(wd, vec![Weekday::Fri, Weekday::Mon, Weekday::Tue]);
    }

    #[test]
    fn checkpoint_version_mismatch() {
        let ck = Checkpoint { architecture: Value::Null, meta: Value::Null, tensors: vec![] };
        let mut bytes = ck.to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes).replace("\"format_version\":1", "\"format_version\":9");
        bytes = text.into_bytes();
        bytes.truncate(bytes.len() - 4);
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Version { found: 9, expected: 1 })));
    }
}
