//! Annualization and rendering of the premia comparison and descriptive
//! statistics tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::panel::{create, format_value};
use crate::stats::StatsRow;
use crate::three_pass::{RiskPremiaEstimate, Stars};

pub const WEEKS_PER_YEAR: f64 = 52.0;

/// Simple (non-compounded) annualization of a weekly percent figure.
pub fn annualize(weekly_pct: f64) -> f64 {
    WEEKS_PER_YEAR * weekly_pct
}

/// One estimator's entry in a table row.
#[derive(Debug, Clone, PartialEq)]
pub struct PremiaCell {
    pub lambda: f64,
    pub pvalue: Option<f64>,
    pub stars: Stars,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PremiaRow {
    pub factor: String,
    pub three_pass: Option<PremiaCell>,
    pub fama_macbeth: Option<PremiaCell>,
}

/// Side-by-side premia, sorted by three-pass p-value (ascending, missing
/// last) with ties broken by factor name.
#[derive(Debug, Clone, PartialEq)]
pub struct PremiaTable {
    pub rows: Vec<PremiaRow>,
}

fn cells(est: &RiskPremiaEstimate) -> BTreeMap<&str, PremiaCell> {
    est.factor_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            (
                name.as_str(),
                PremiaCell {
                    lambda: est.lambda_g[j],
                    pvalue: est.pvalues[j],
                    stars: Stars::from_pvalue(est.pvalues[j]),
                },
            )
        })
        .collect()
}

pub fn render_premia(gx: Option<&RiskPremiaEstimate>, fm: Option<&RiskPremiaEstimate>) -> Result<PremiaTable> {
    let gx_cells = gx.map(cells);
    let fm_cells = fm.map(cells);
    let names: Vec<String> = match (gx, fm) {
        (Some(a), Some(b)) => {
            let mut x: Vec<&String> = a.factor_names.iter().collect();
            let mut y: Vec<&String> = b.factor_names.iter().collect();
            x.sort();
            y.sort();
            if x != y {
                return Err(Error::HeaderMismatch(
                    "three-pass and Fama-MacBeth estimates cover different factors".into(),
                ));
            }
            a.factor_names.clone()
        }
        (Some(a), None) => a.factor_names.clone(),
        (None, Some(b)) => b.factor_names.clone(),
        (None, None) => return Err(Error::InvalidArgument("no estimates to render".into())),
    };
    let mut rows: Vec<PremiaRow> = names
        .iter()
        .map(|name| PremiaRow {
            factor: name.clone(),
            three_pass: gx_cells.as_ref().map(|c| c[name.as_str()].clone()),
            fama_macbeth: fm_cells.as_ref().map(|c| c[name.as_str()].clone()),
        })
        .collect();
    let key = |r: &PremiaRow| {
        let primary = r.three_pass.as_ref().or(r.fama_macbeth.as_ref());
        primary
            .and_then(|c| c.pvalue)
            .filter(|p| !p.is_nan())
            .unwrap_or(f64::INFINITY)
    };
    rows.sort_by(|a, b| key(a).total_cmp(&key(b)).then_with(|| a.factor.cmp(&b.factor)));
    Ok(PremiaTable { rows })
}

fn fmt3(v: f64) -> String {
    // avoid printing "-0.000"
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn fmt1(v: f64) -> String {
    let s = format!("{v:.1}");
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

fn md_cells(cell: Option<&PremiaCell>) -> [String; 3] {
    match cell {
        Some(c) => [
            format!("{}{}", fmt3(c.lambda), c.stars.symbol()),
            c.pvalue.map(fmt3).unwrap_or_default(),
            fmt1(annualize(c.lambda)),
        ],
        None => [String::new(), String::new(), String::new()],
    }
}

impl PremiaTable {
    /// Markdown table with weekly premia and p-values at three decimals and
    /// annualized premia at one decimal.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "| Factor | Three-pass λ (weekly %) | p-value | Annualized % | Fama-MacBeth λ (weekly %) | p-value | Annualized % |\n",
        );
        out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
        for row in &self.rows {
            let [a, b, c] = md_cells(row.three_pass.as_ref());
            let [d, e, f] = md_cells(row.fama_macbeth.as_ref());
            writeln!(out, "| {} | {a} | {b} | {c} | {d} | {e} | {f} |", row.factor).expect("writing to a String");
        }
        out.push_str(
            "\n***, **, and * denote significance at the 1%, 5%, and 10% levels. \
             Annualized figures are 52 times the weekly premium (simple scaling, not compounded).\n",
        );
        out
    }

    /// Full-precision CSV of the same table.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::csv("premia table", e);
        wtr.write_record([
            "factor",
            "lambda_three_pass",
            "pvalue_three_pass",
            "stars_three_pass",
            "annualized_three_pass",
            "lambda_fama_macbeth",
            "pvalue_fama_macbeth",
            "stars_fama_macbeth",
            "annualized_fama_macbeth",
        ])
        .map_err(err)?;
        let fields = |c: Option<&PremiaCell>| -> [String; 4] {
            match c {
                Some(c) => [
                    format_value(c.lambda),
                    c.pvalue.map(format_value).unwrap_or_default(),
                    c.stars.symbol().to_string(),
                    format_value(annualize(c.lambda)),
                ],
                None => Default::default(),
            }
        };
        for row in &self.rows {
            let mut rec = vec![row.factor.clone()];
            rec.extend(fields(row.three_pass.as_ref()));
            rec.extend(fields(row.fama_macbeth.as_ref()));
            wtr.write_record(&rec).map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::csv("premia table", e))
    }

    pub fn write(&self, md_path: &Path, csv_path: &Path) -> Result<()> {
        let mut md = create(md_path)?;
        md.write_all(self.to_markdown().as_bytes())
            .map_err(|e| Error::io(md_path, e))?;
        self.write_csv_to(create(csv_path)?)
    }
}

/// Descriptive statistics for a set of named series.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptiveTable {
    pub rows: Vec<(String, StatsRow)>,
}

const STAT_NAMES: [&str; 10] = [
    "count", "mean", "std", "min", "25%", "50%", "75%", "max", "skewness", "kurtosis",
];

fn stat_values(s: &StatsRow) -> [f64; 10] {
    [
        s.count as f64,
        s.mean,
        s.std,
        s.min,
        s.q25,
        s.median,
        s.q75,
        s.max,
        s.skewness,
        s.kurtosis_fisher,
    ]
}

impl DescriptiveTable {
    /// `descriptives.csv`: one row per series, full precision.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::csv("descriptives", e);
        let mut header = vec!["series"];
        header.extend(STAT_NAMES);
        wtr.write_record(&header).map_err(err)?;
        for (name, s) in &self.rows {
            let mut rec = vec![name.clone(), s.count.to_string()];
            rec.extend(stat_values(s)[1..].iter().map(|v| format_value(*v)));
            wtr.write_record(&rec).map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::csv("descriptives", e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(create(path)?)
    }

    pub fn read_csv(path: &Path) -> Result<DescriptiveTable> {
        let context = path.display().to_string();
        let mut rdr = csv::Reader::from_reader(crate::panel::open(path)?);
        let mut rows = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(&context, e))?;
            let mut v = [0.0; 10];
            for (k, slot) in v.iter_mut().enumerate() {
                let cell = rec.get(k + 1).unwrap_or("");
                *slot = cell.parse().map_err(|_| Error::NonNumeric {
                    context: context.clone(),
                    row: r + 1,
                    column: STAT_NAMES[k].to_string(),
                    value: cell.to_string(),
                })?;
            }
            rows.push((
                rec[0].to_string(),
                StatsRow {
                    count: v[0] as usize,
                    mean: v[1],
                    std: v[2],
                    min: v[3],
                    q25: v[4],
                    median: v[5],
                    q75: v[6],
                    max: v[7],
                    skewness: v[8],
                    kurtosis_fisher: v[9],
                },
            ));
        }
        Ok(DescriptiveTable { rows })
    }

    /// Statistics down the rows, series across the columns, two decimals.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("|");
        for (name, _) in &self.rows {
            write!(out, " | {name}").expect("writing to a String");
        }
        out.push_str(" |\n|---|");
        out.push_str(&"---:|".repeat(self.rows.len()));
        out.push('\n');
        for (k, stat) in STAT_NAMES.iter().enumerate() {
            write!(out, "| {stat}").expect("writing to a String");
            for (_, s) in &self.rows {
                let v = stat_values(s)[k];
                let cell = format!("{v:.2}");
                let cell = if cell == "-0.00" { "0.00".to_string() } else { cell };
                write!(out, " | {cell}").expect("writing to a String");
            }
            out.push_str(" |\n");
        }
        out
    }
}
