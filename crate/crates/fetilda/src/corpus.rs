//! Corpus ingestion, target construction and chronological splitting.
//!
//! Documents arrive as JSON-lines (`doc_id`, `entity_id`, `fiscal_year`,
//! `section`, `text`), targets as CSV (`entity_id`, `fiscal_year`, `metric`,
//! `value`, `hist_value`). Eight financial KPI targets can instead be derived
//! from raw fundamentals, and volatility targets from price series. Splits
//! are chronological; targets are min-max scaled on the training split only.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::error::{FetildaError, Result};

/// 10-K section a document was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Section {
    Item1A,
    Item7_7A,
    Item7,
}

impl std::str::FromStr for Section {
    type Err = FetildaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Item1A" => Ok(Section::Item1A),
            "Item7_7A" => Ok(Section::Item7_7A),
            "Item7" => Ok(Section::Item7),
            other => Err(FetildaError::Corpus(format!("unknown section '{other}'"))),
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Section::Item1A => "Item1A",
            Section::Item7_7A => "Item7_7A",
            Section::Item7 => "Item7",
        };
        f.write_str(s)
    }
}

/// Regression target metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
pub enum Metric {
    ROA,
    ROE,
    EPS,
    TQR,
    T1CR,
    LR,
    Z,
    MBR,
    VOL,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::ROA,
        Metric::ROE,
        Metric::EPS,
        Metric::TQR,
        Metric::T1CR,
        Metric::LR,
        Metric::Z,
        Metric::MBR,
        Metric::VOL,
    ];
}

impl std::str::FromStr for Metric {
    type Err = FetildaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ROA" => Ok(Metric::ROA),
            "ROE" => Ok(Metric::ROE),
            "EPS" => Ok(Metric::EPS),
            "TQR" => Ok(Metric::TQR),
            "T1CR" => Ok(Metric::T1CR),
            "LR" => Ok(Metric::LR),
            "Z" => Ok(Metric::Z),
            "MBR" => Ok(Metric::MBR),
            "VOL" => Ok(Metric::VOL),
            other => Err(FetildaError::Corpus(format!("unknown metric '{other}'"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Metric::ROA => "ROA",
            Metric::ROE => "ROE",
            Metric::EPS => "EPS",
            Metric::TQR => "TQR",
            Metric::T1CR => "T1CR",
            Metric::LR => "LR",
            Metric::Z => "Z",
            Metric::MBR => "MBR",
            Metric::VOL => "VOL",
        };
        f.write_str(s)
    }
}

/// One ingested document.
#[derive(Debug, Clone, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub entity_id: String,
    pub fiscal_year: i32,
    pub section: Section,
    pub text: String,
}

/// One target observation: current value plus the prior period's value.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRecord {
    pub entity_id: String,
    pub fiscal_year: i32,
    pub metric: Metric,
    pub value: f64,
    pub hist_value: f64,
}

/// A document joined with its target for one metric.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub doc_id: String,
    pub entity_id: String,
    pub fiscal_year: i32,
    pub y_hist: f64,
    pub y: f64,
}

/// Parse the JSONL document file and the CSV target file.
pub fn load_corpus(
    docs_path: &Path,
    targets_path: &Path,
) -> Result<(Vec<RawDocument>, Vec<TargetRecord>)> {
    let docs = load_documents(docs_path)?;
    let targets = load_targets(targets_path)?;
    Ok((docs, targets))
}

pub fn load_documents(path: &Path) -> Result<Vec<RawDocument>> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument =
            serde_json::from_str(line).map_err(|e| FetildaError::ParseLine {
                path: path_str.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if doc.text.is_empty() {
            return Err(FetildaError::ParseLine {
                path: path_str.clone(),
                line: i + 1,
                message: format!("document '{}' has empty text", doc.doc_id),
            });
        }
        if !seen.insert(doc.doc_id.clone()) {
            return Err(FetildaError::ParseLine {
                path: path_str.clone(),
                line: i + 1,
                message: format!("duplicate doc_id '{}'", doc.doc_id),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_targets(path: &Path) -> Result<Vec<TargetRecord>> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let err_at = |message: String| FetildaError::ParseLine {
            path: path_str.clone(),
            line,
            message,
        };
        let row = row.map_err(|e| err_at(e.to_string()))?;
        if row.len() != 5 {
            return Err(err_at(format!("expected 5 fields, got {}", row.len())));
        }
        let entity_id = row[0].to_string();
        let fiscal_year: i32 = row[1]
            .parse()
            .map_err(|_| err_at(format!("bad fiscal_year '{}'", &row[1])))?;
        let metric: Metric = row[2].parse().map_err(|e: FetildaError| err_at(e.to_string()))?;
        let value: f64 = row[3]
            .parse()
            .map_err(|_| err_at(format!("non-numeric value '{}'", &row[3])))?;
        let hist_value: f64 = row[4]
            .parse()
            .map_err(|_| err_at(format!("non-numeric hist_value '{}'", &row[4])))?;
        if !seen.insert((entity_id.clone(), fiscal_year, metric)) {
            return Err(err_at(format!(
                "duplicate target ({entity_id}, {fiscal_year}, {metric})"
            )));
        }
        out.push(TargetRecord { entity_id, fiscal_year, metric, value, hist_value });
    }
    Ok(out)
}

/// Join documents with their targets for one metric. Documents without a
/// matching target are excluded and reported; the result is sorted by
/// (fiscal_year, doc_id).
pub fn pair_examples(
    docs: &[RawDocument],
    targets: &[TargetRecord],
    metric: Metric,
) -> (Vec<LabeledExample>, Vec<String>) {
    let mut index: BTreeMap<(&str, i32), &TargetRecord> = BTreeMap::new();
    for t in targets.iter().filter(|t| t.metric == metric) {
        index.insert((t.entity_id.as_str(), t.fiscal_year), t);
    }
    let mut examples = Vec::new();
    let mut excluded = Vec::new();
    for doc in docs {
        match index.get(&(doc.entity_id.as_str(), doc.fiscal_year)) {
            Some(t) => examples.push(LabeledExample {
                doc_id: doc.doc_id.clone(),
                entity_id: doc.entity_id.clone(),
                fiscal_year: doc.fiscal_year,
                y_hist: t.hist_value,
                y: t.value,
            }),
            None => excluded.push(format!(
                "document '{}' ({} {}): no {} target",
                doc.doc_id, doc.entity_id, doc.fiscal_year, metric
            )),
        }
    }
    examples.sort_by(|a, b| {
        (a.fiscal_year, a.doc_id.as_str()).cmp(&(b.fiscal_year, b.doc_id.as_str()))
    });
    (examples, excluded)
}

// ── KPI computation from fundamentals ───────────────────────────────────────

/// Named balance-sheet / income-statement line items for one entity-year.
#[derive(Debug, Clone, Deserialize)]
pub struct Fundamentals {
    pub entity_id: String,
    pub fiscal_year: i32,
    pub net_income: f64,
    pub total_assets: f64,
    pub total_equity: f64,
    pub preferred_dividends: f64,
    pub common_shares: f64,
    pub equity_market_value: f64,
    pub liabilities_book_value: f64,
    pub equity_book_value: f64,
    pub avg_total_assets: f64,
    pub avg_equity: f64,
    pub tier1_capital: f64,
    pub risk_weighted_assets: f64,
    pub market_cap: f64,
    pub book_value: f64,
}

/// Sample standard deviation (n−1 denominator).
fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

/// Compute the eight KPI targets per entity-year and attach each record's
/// prior-year value as `hist_value`. Records with a zero denominator or no
/// prior-year value are skipped and reported.
///
/// `roa_window`: number of trailing years (ending at the record's year) used
/// for σ(ROA) in the Z-score; `None` uses the entity's full ROA history.
pub fn compute_kpis(
    rows: &[Fundamentals],
    roa_window: Option<usize>,
) -> (Vec<TargetRecord>, Vec<String>) {
    let mut report = Vec::new();

    // Per (entity, year, metric) raw values.
    let mut values: BTreeMap<(String, i32, Metric), f64> = BTreeMap::new();
    // ROA history per entity for the Z-score denominator.
    let mut roa_series: BTreeMap<&str, Vec<(i32, f64)>> = BTreeMap::new();

    let ratio = |entity: &str,
                     year: i32,
                     metric: Metric,
                     num: f64,
                     den: f64,
                     values: &mut BTreeMap<(String, i32, Metric), f64>,
                     report: &mut Vec<String>| {
        if den == 0.0 {
            report.push(format!("{entity} {year} {metric}: zero denominator, skipped"));
        } else {
            values.insert((entity.to_string(), year, metric), num / den);
        }
    };

    for f in rows {
        let e = f.entity_id.as_str();
        let y = f.fiscal_year;
        ratio(e, y, Metric::ROA, f.net_income, f.total_assets, &mut values, &mut report);
        ratio(e, y, Metric::ROE, f.net_income, f.total_equity, &mut values, &mut report);
        ratio(
            e,
            y,
            Metric::EPS,
            f.net_income - f.preferred_dividends,
            f.common_shares,
            &mut values,
            &mut report,
        );
        ratio(
            e,
            y,
            Metric::TQR,
            f.equity_market_value + f.liabilities_book_value,
            f.equity_book_value + f.liabilities_book_value,
            &mut values,
            &mut report,
        );
        ratio(e, y, Metric::LR, f.avg_total_assets, f.avg_equity, &mut values, &mut report);
        ratio(
            e,
            y,
            Metric::T1CR,
            f.tier1_capital,
            f.risk_weighted_assets,
            &mut values,
            &mut report,
        );
        ratio(e, y, Metric::MBR, f.market_cap, f.book_value, &mut values, &mut report);
        if let Some(&roa) = values.get(&(f.entity_id.clone(), y, Metric::ROA)) {
            roa_series.entry(e).or_default().push((y, roa));
        }
    }

    // Z = (ROA + CAR) / σ(ROA) over the configured window.
    for f in rows {
        let e = f.entity_id.as_str();
        let y = f.fiscal_year;
        let Some(&roa) = values.get(&(f.entity_id.clone(), y, Metric::ROA)) else {
            report.push(format!("{e} {y} Z: ROA unavailable, skipped"));
            continue;
        };
        if f.total_assets == 0.0 {
            report.push(format!("{e} {y} Z: zero denominator, skipped"));
            continue;
        }
        let car = f.total_equity / f.total_assets;
        // Default window: the entity's full ROA history; otherwise the
        // trailing `w` years ending at the record's year.
        let mut series: Vec<f64> = roa_series
            .get(e)
            .map(|s| {
                s.iter()
                    .filter(|(year, _)| match roa_window {
                        None => true,
                        Some(w) => *year <= y && *year > y - w as i32,
                    })
                    .map(|(_, v)| *v)
                    .collect()
            })
            .unwrap_or_default();
        series.sort_by(f64::total_cmp);
        match sample_std(&series) {
            Some(sigma) if sigma > 0.0 => {
                values.insert((f.entity_id.clone(), y, Metric::Z), (roa + car) / sigma);
            }
            _ => report.push(format!(
                "{e} {y} Z: σ(ROA) undefined over {} observation(s), skipped",
                series.len()
            )),
        }
    }

    // Attach prior-year history; first observations are skipped.
    let mut out = Vec::new();
    for ((entity, year, metric), &value) in &values {
        match values.get(&(entity.clone(), year - 1, *metric)) {
            Some(&hist) => out.push(TargetRecord {
                entity_id: entity.clone(),
                fiscal_year: *year,
                metric: *metric,
                value,
                hist_value: hist,
            }),
            None => report.push(format!(
                "{entity} {year} {metric}: no prior-year value, skipped"
            )),
        }
    }
    (out, report)
}

/// Volatility of simple net returns over the trailing window:
/// `R_t = S_t/S_{t−1} − 1`, `v = sqrt(Σ_{i=t−n..t}(R_i − R̄)² / n)` with
/// `R̄` the mean over the n+1 window returns.
pub fn compute_volatility(prices: &[f64], n: usize) -> Result<f64> {
    if prices.len() < n + 2 {
        return Err(FetildaError::Corpus(format!(
            "need at least {} prices for window {n}, got {}",
            n + 2,
            prices.len()
        )));
    }
    if let Some(bad) = prices.iter().find(|&&p| p <= 0.0) {
        return Err(FetildaError::Corpus(format!("non-positive price {bad}")));
    }
    let returns: Vec<f64> = prices.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let window = &returns[returns.len() - (n + 1)..];
    let mean = window.iter().sum::<f64>() / (n + 1) as f64;
    let ss: f64 = window.iter().map(|r| (r - mean) * (r - mean)).sum();
    Ok((ss / n as f64).sqrt())
}

// ── Splits ──────────────────────────────────────────────────────────────────

/// How to partition a corpus.
#[derive(Debug, Clone)]
pub enum SplitSpec {
    /// Sort by (fiscal_year, doc_id); first `train_fraction` to train, the
    /// remainder split val/test by `val_fraction_of_rest`.
    Chronological {
        train_fraction: f64,
        val_fraction_of_rest: f64,
    },
    /// Fixed year ranges: years ≤ `train_end_year` form train+val (split by
    /// order), each year in `test_years` becomes its own test set.
    Fin10k {
        train_end_year: i32,
        val_fraction: f64,
        test_years: (i32, i32),
    },
}

impl SplitSpec {
    /// First 80% train, remaining 20% split 50/50 into val and test.
    pub fn banks_default() -> Self {
        SplitSpec::Chronological { train_fraction: 0.8, val_fraction_of_rest: 0.5 }
    }

    /// Reports through 2000 as train+val (80/20 by order), 2001–2006 as
    /// per-year test sets.
    pub fn fin10k_default() -> Self {
        SplitSpec::Fin10k { train_end_year: 2000, val_fraction: 0.2, test_years: (2001, 2006) }
    }
}

/// Partitioned corpus. `tests` holds one or more labelled test sets (one for
/// the chronological protocol, one per year for the FIN10K protocol).
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub tests: Vec<(String, Vec<LabeledExample>)>,
    /// Examples outside the configured year ranges (FIN10K mode only).
    pub dropped: usize,
}

impl Splits {
    pub fn total(&self) -> usize {
        self.train.len()
            + self.val.len()
            + self.tests.iter().map(|(_, t)| t.len()).sum::<usize>()
    }

    /// CSV manifest: `doc_id,split`.
    pub fn manifest_csv(&self) -> String {
        let mut out = String::from("doc_id,split\n");
        for e in &self.train {
            out.push_str(&format!("{},train\n", e.doc_id));
        }
        for e in &self.val {
            out.push_str(&format!("{},val\n", e.doc_id));
        }
        for (label, test) in &self.tests {
            for e in test {
                out.push_str(&format!("{},{}\n", e.doc_id, label));
            }
        }
        out
    }
}

/// Chronologically partition `examples` according to `spec`.
pub fn make_splits(examples: &[LabeledExample], spec: &SplitSpec) -> Result<Splits> {
    let mut ordered: Vec<LabeledExample> = examples.to_vec();
    ordered.sort_by(|a, b| {
        (a.fiscal_year, a.doc_id.as_str()).cmp(&(b.fiscal_year, b.doc_id.as_str()))
    });
    let splits = match *spec {
        SplitSpec::Chronological { train_fraction, val_fraction_of_rest } => {
            if !(0.0 < train_fraction && train_fraction <= 1.0) {
                return Err(FetildaError::Corpus(format!(
                    "train_fraction {train_fraction} outside (0, 1]"
                )));
            }
            let n = ordered.len();
            let n_train = (n as f64 * train_fraction).round() as usize;
            let rest = n - n_train.min(n);
            let n_val = (rest as f64 * val_fraction_of_rest).round() as usize;
            let train = ordered[..n_train.min(n)].to_vec();
            let val = ordered[n_train.min(n)..n_train.min(n) + n_val].to_vec();
            let test = ordered[n_train.min(n) + n_val..].to_vec();
            Splits { train, val, tests: vec![("test".to_string(), test)], dropped: 0 }
        }
        SplitSpec::Fin10k { train_end_year, val_fraction, test_years } => {
            let pool: Vec<LabeledExample> = ordered
                .iter()
                .filter(|e| e.fiscal_year <= train_end_year)
                .cloned()
                .collect();
            let n_val = (pool.len() as f64 * val_fraction).round() as usize;
            let n_train = pool.len() - n_val.min(pool.len());
            let train = pool[..n_train].to_vec();
            let val = pool[n_train..].to_vec();
            let mut tests = Vec::new();
            for year in test_years.0..=test_years.1 {
                let set: Vec<LabeledExample> = ordered
                    .iter()
                    .filter(|e| e.fiscal_year == year)
                    .cloned()
                    .collect();
                if !set.is_empty() {
                    tests.push((year.to_string(), set));
                }
            }
            let kept: usize =
                train.len() + val.len() + tests.iter().map(|(_, t)| t.len()).sum::<usize>();
            Splits { train, val, tests, dropped: ordered.len() - kept }
        }
    };
    if splits.train.is_empty() {
        return Err(FetildaError::Corpus("empty training split".into()));
    }
    if splits.val.is_empty() {
        return Err(FetildaError::Corpus("empty validation split".into()));
    }
    if splits.tests.iter().all(|(_, t)| t.is_empty()) || splits.tests.is_empty() {
        return Err(FetildaError::Corpus("empty test split".into()));
    }
    Ok(splits)
}

// ── Target scaling ──────────────────────────────────────────────────────────

/// Min-max scaler fitted on the training split only. Disabled mode is the
/// identity (FIN10K protocol).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
    pub enabled: bool,
}

impl Scaler {
    pub fn identity() -> Self {
        Scaler { min: 0.0, max: 1.0, enabled: false }
    }

    /// Fit on training targets. With scaling enabled the targets must contain
    /// at least two distinct values.
    pub fn fit(train_targets: &[f64], enabled: bool) -> Result<Self> {
        if !enabled {
            return Ok(Self::identity());
        }
        if train_targets.is_empty() {
            return Err(FetildaError::Corpus("cannot fit scaler on empty targets".into()));
        }
        let min = train_targets.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = train_targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max <= min {
            return Err(FetildaError::Corpus(
                "min-max scaling requires at least two distinct target values".into(),
            ));
        }
        Ok(Scaler { min, max, enabled: true })
    }

    /// Train min → 0, train max → 1; out-of-range values map linearly
    /// outside [0, 1].
    pub fn apply(&self, x: f64) -> f64 {
        if self.enabled {
            (x - self.min) / (self.max - self.min)
        } else {
            x
        }
    }

    pub fn invert(&self, y: f64) -> f64 {
        if self.enabled {
            y * (self.max - self.min) + self.min
        } else {
            y
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &std::path::Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn doc_line(doc_id: &str, entity: &str, year: i32, section: &str) -> String {
        format!(
            r#"{{"doc_id":"{doc_id}","entity_id":"{entity}","fiscal_year":{year},"section":"{section}","text":"the bank did well"}}"#
        )
    }

    #[test]
    fn loads_three_documents_and_targets() {
        let dir = tempfile::tempdir().unwrap();
        let docs = write_file(
            dir.path(),
            "docs.jsonl",
            &format!(
                "{}\n{}\n{}\n",
                doc_line("d1", "bank_a", 2006, "Item7_7A"),
                doc_line("d2", "bank_b", 2006, "Item7_7A"),
                doc_line("d3", "bank_a", 2007, "Item1A"),
            ),
        );
        let targets = write_file(
            dir.path(),
            "targets.csv",
            "entity_id,fiscal_year,metric,value,hist_value\n\
             bank_a,2006,ROA,0.05,0.04\n\
             bank_b,2006,ROA,0.06,0.05\n\
             bank_a,2007,ROA,0.07,0.05\n",
        );
        let (docs, targets) = load_corpus(&docs, &targets).unwrap();
        assert_eq!(docs.len(), 3);
        assert_eq!(targets.len(), 3);
    }

    #[test]
    fn non_numeric_target_value_errors_with_row() {
        let dir = tempfile::tempdir().unwrap();
        let targets = write_file(
            dir.path(),
            "targets.csv",
            "entity_id,fiscal_year,metric,value,hist_value\n\
             bank_a,2006,ROA,0.05,0.04\n\
             bank_b,2006,ROA,oops,0.05\n",
        );
        let err = load_targets(&targets).unwrap_err().to_string();
        assert!(err.contains(":3:") && err.contains("oops"), "got {err}");
    }

    #[test]
    fn malformed_jsonl_errors_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let docs = write_file(
            dir.path(),
            "docs.jsonl",
            &format!("{}\nnot json at all\n", doc_line("d1", "a", 2006, "Item7")),
        );
        let err = load_documents(&docs).unwrap_err().to_string();
        assert!(err.contains(":2:"), "got {err}");
    }

    #[test]
    fn duplicate_doc_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let docs = write_file(
            dir.path(),
            "docs.jsonl",
            &format!(
                "{}\n{}\n",
                doc_line("d1", "a", 2006, "Item7"),
                doc_line("d1", "b", 2007, "Item7")
            ),
        );
        let err = load_documents(&docs).unwrap_err().to_string();
        assert!(err.contains("duplicate doc_id 'd1'"), "got {err}");
    }

    #[test]
    fn pairing_mirrors_target_attrition() {
        // 5321 documents, only 2500 with a matching target: 2500 usable.
        let mut docs = Vec::new();
        for i in 0..5321 {
            docs.push(RawDocument {
                doc_id: format!("d{i:04}"),
                entity_id: format!("e{i:04}"),
                fiscal_year: 2006 + (i % 11) as i32,
                section: Section::Item7_7A,
                text: "x".into(),
            });
        }
        let targets: Vec<TargetRecord> = docs
            .iter()
            .take(2500)
            .map(|d| TargetRecord {
                entity_id: d.entity_id.clone(),
                fiscal_year: d.fiscal_year,
                metric: Metric::ROA,
                value: 0.05,
                hist_value: 0.04,
            })
            .collect();
        let (examples, excluded) = pair_examples(&docs, &targets, Metric::ROA);
        assert_eq!(examples.len(), 2500);
        assert_eq!(excluded.len(), 5321 - 2500);
    }

    #[test]
    fn kpi_formulas_match_direct_oracles() {
        let f = Fundamentals {
            entity_id: "e".into(),
            fiscal_year: 2007,
            net_income: 10.0,
            total_assets: 200.0,
            total_equity: 50.0,
            preferred_dividends: 2.0,
            common_shares: 16.0,
            equity_market_value: 100.0,
            liabilities_book_value: 100.0,
            equity_book_value: 100.0,
            avg_total_assets: 210.0,
            avg_equity: 42.0,
            tier1_capital: 30.0,
            risk_weighted_assets: 120.0,
            market_cap: 90.0,
            book_value: 60.0,
        };
        // Prior year so that hist attaches; vary net income for a ROA series.
        let mut f2005 = f.clone();
        f2005.fiscal_year = 2005;
        f2005.net_income = 2.0;
        let mut f2006 = f.clone();
        f2006.fiscal_year = 2006;
        f2006.net_income = 6.0;
        let (records, _report) = compute_kpis(&[f2005, f2006, f.clone()], None);
        let get = |m: Metric| {
            records
                .iter()
                .find(|r| r.fiscal_year == 2007 && r.metric == m)
                .unwrap_or_else(|| panic!("missing {m}"))
                .value
        };
        assert!((get(Metric::ROA) - 10.0 / 200.0).abs() < 1e-12);
        assert!((get(Metric::ROE) - 10.0 / 50.0).abs() < 1e-12);
        assert!((get(Metric::EPS) - (10.0 - 2.0) / 16.0).abs() < 1e-12);
        assert!((get(Metric::TQR) - 1.0).abs() < 1e-12); // EqMV = EqBV = LiabBV
        assert!((get(Metric::LR) - 210.0 / 42.0).abs() < 1e-12);
        assert!((get(Metric::T1CR) - 30.0 / 120.0).abs() < 1e-12);
        assert!((get(Metric::MBR) - 90.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn z_score_uses_sample_std_of_roa_series() {
        // ROA series 0.01, 0.02, 0.03 via net income over constant assets.
        let base = |year: i32, ni: f64| Fundamentals {
            entity_id: "e".into(),
            fiscal_year: year,
            net_income: ni,
            total_assets: 100.0,
            total_equity: 10.0,
            preferred_dividends: 0.0,
            common_shares: 1.0,
            equity_market_value: 1.0,
            liabilities_book_value: 1.0,
            equity_book_value: 1.0,
            avg_total_assets: 1.0,
            avg_equity: 1.0,
            tier1_capital: 1.0,
            risk_weighted_assets: 1.0,
            market_cap: 1.0,
            book_value: 1.0,
        };
        let rows = vec![base(2005, 1.0), base(2006, 2.0), base(2007, 3.0)];
        let (records, _) = compute_kpis(&rows, None);
        let z2006 = records
            .iter()
            .find(|r| r.fiscal_year == 2006 && r.metric == Metric::Z)
            .unwrap();
        // Direct oracle: CAR = 10/100; σ = sample std of the full ROA series.
        let series = [0.01, 0.02, 0.03];
        let mean: f64 = series.iter().sum::<f64>() / 3.0;
        let sigma = (series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (series.len() as f64 - 1.0))
            .sqrt();
        let expect = (0.02 + 0.10) / sigma;
        assert!(
            (z2006.value - expect).abs() < 1e-9,
            "z {} vs {expect}",
            z2006.value
        );
        // Prior-year history attached from the 2005 Z value.
        let z2005_value = (0.01 + 0.10) / sigma;
        assert!((z2006.hist_value - z2005_value).abs() < 1e-9);
    }

    #[test]
    fn zero_denominator_is_skipped_with_report() {
        let mut f = Fundamentals {
            entity_id: "e".into(),
            fiscal_year: 2006,
            net_income: 1.0,
            total_assets: 0.0,
            total_equity: 1.0,
            preferred_dividends: 0.0,
            common_shares: 1.0,
            equity_market_value: 1.0,
            liabilities_book_value: 1.0,
            equity_book_value: 1.0,
            avg_total_assets: 1.0,
            avg_equity: 1.0,
            tier1_capital: 1.0,
            risk_weighted_assets: 1.0,
            market_cap: 1.0,
            book_value: 1.0,
        };
        let mut f2 = f.clone();
        f2.fiscal_year = 2007;
        f.total_assets = 0.0;
        let (records, report) = compute_kpis(&[f, f2], None);
        assert!(records.iter().all(|r| r.metric != Metric::ROA));
        assert!(report.iter().any(|r| r.contains("ROA") && r.contains("zero denominator")));
    }

    #[test]
    fn volatility_of_constant_prices_is_zero() {
        let v = compute_volatility(&[50.0; 10], 3).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn volatility_matches_hand_evaluated_formula() {
        // Prices give returns +0.1, −0.1, +0.1; window n = 2 uses all three.
        let prices = [100.0, 110.0, 99.0, 108.9];
        let v = compute_volatility(&prices, 2).unwrap();
        let returns = [0.1, -0.1, 0.1];
        let mean: f64 = returns.iter().sum::<f64>() / 3.0;
        let expect =
            (returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 2.0).sqrt();
        assert!((v - expect).abs() < 1e-9, "v {v} vs {expect}");
    }

    #[test]
    fn volatility_is_scale_invariant() {
        let prices = [100.0, 103.0, 98.5, 104.2, 101.0, 99.9];
        let scaled: Vec<f64> = prices.iter().map(|p| p * 7.0).collect();
        let a = compute_volatility(&prices, 3).unwrap();
        let b = compute_volatility(&scaled, 3).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn volatility_equals_two_pass_reference() {
        // Independent two-pass mean/deviation implementation.
        let prices = [12.0, 12.5, 11.8, 12.1, 13.0, 12.2, 12.9, 13.3];
        let n = 4;
        let v = compute_volatility(&prices, n).unwrap();
        let mut rets = Vec::new();
        for t in 1..prices.len() {
            rets.push(prices[t] / prices[t - 1] - 1.0);
        }
        let tail = &rets[rets.len() - (n + 1)..];
        let mut mean = 0.0;
        for r in tail {
            mean += r;
        }
        mean /= (n + 1) as f64;
        let mut ss = 0.0;
        for r in tail {
            ss += (r - mean) * (r - mean);
        }
        let reference = (ss / n as f64).sqrt();
        assert!((v - reference).abs() < 1e-12);
    }

    #[test]
    fn volatility_rejects_bad_input() {
        assert!(compute_volatility(&[1.0, 2.0], 3).is_err());
        assert!(compute_volatility(&[1.0, -2.0, 1.0, 1.0, 1.0], 2).is_err());
    }

    fn example(doc: &str, year: i32) -> LabeledExample {
        LabeledExample {
            doc_id: doc.into(),
            entity_id: format!("e_{doc}"),
            fiscal_year: year,
            y_hist: 0.0,
            y: 1.0,
        }
    }

    #[test]
    fn chronological_split_80_10_10() {
        let examples: Vec<LabeledExample> =
            (0..10).map(|i| example(&format!("d{i}"), 2000 + i)).collect();
        let splits = make_splits(&examples, &SplitSpec::banks_default()).unwrap();
        assert_eq!(splits.train.len(), 8);
        assert_eq!(splits.val.len(), 1);
        assert_eq!(splits.tests[0].1.len(), 1);
        // Chronological: newest example lands in test.
        assert_eq!(splits.tests[0].1[0].fiscal_year, 2009);
    }

    #[test]
    fn fin10k_split_uses_fixed_year_ranges() {
        let mut examples = Vec::new();
        for year in 1996..=2006 {
            for i in 0..10 {
                examples.push(example(&format!("d{year}_{i}"), year));
            }
        }
        let splits = make_splits(&examples, &SplitSpec::fin10k_default()).unwrap();
        // Years 1996–2000: 50 examples, 80/20 by order.
        assert_eq!(splits.train.len(), 40);
        assert_eq!(splits.val.len(), 10);
        assert!(splits.train.iter().all(|e| e.fiscal_year <= 2000));
        assert_eq!(splits.tests.len(), 6);
        assert_eq!(splits.tests[0].0, "2001");
        assert!(splits.tests.iter().all(|(_, t)| t.len() == 10));
        assert_eq!(splits.dropped, 0);
    }

    #[test]
    fn same_year_ties_break_by_doc_id() {
        let examples = vec![example("b", 2000), example("c", 2000), example("a", 2000)];
        let splits = make_splits(
            &examples,
            &SplitSpec::Chronological { train_fraction: 0.34, val_fraction_of_rest: 0.5 },
        )
        .unwrap();
        assert_eq!(splits.train[0].doc_id, "a");
        assert_eq!(splits.total(), 3);
    }

    #[test]
    fn empty_split_is_an_error() {
        let examples = vec![example("a", 2000)];
        assert!(make_splits(&examples, &SplitSpec::banks_default()).is_err());
    }

    #[test]
    fn scaler_maps_train_range_to_unit_interval() {
        let s = Scaler::fit(&[2.0, 4.0], true).unwrap();
        assert!((s.apply(3.0) - 0.5).abs() < 1e-15);
        assert!((s.apply(5.0) - 1.5).abs() < 1e-15); // linear extrapolation
        assert!((s.invert(s.apply(2.7)) - 2.7).abs() < 1e-12);
    }

    #[test]
    fn scaler_round_trips_random_values() {
        let s = Scaler::fit(&[-3.0, 11.0, 4.0], true).unwrap();
        let mut rng = numcore::DetRng::new(2, 0);
        for _ in 0..1000 {
            let x = rng.uniform_in(-100.0, 100.0);
            assert!((s.invert(s.apply(x)) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn disabled_scaler_is_identity() {
        let s = Scaler::fit(&[5.0, 5.0], false).unwrap();
        assert_eq!(s.apply(17.5), 17.5);
        assert_eq!(s.invert(17.5), 17.5);
    }

    #[test]
    fn scaler_rejects_all_equal_targets() {
        assert!(Scaler::fit(&[3.0, 3.0, 3.0], true).is_err());
    }
}
