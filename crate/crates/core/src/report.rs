//! Tables in the layout of the published results: `mean (95% BCI)` with a
//! significance mark, hazard ratio, and DIC/AUC footer rows.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fit::FittedModel;
use crate::kv::KeyValues;
use crate::matching::SweepRow;
use crate::models::{ModelKind, PriorSpec};
use crate::sampler::ParamSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigMark {
    #[default]
    None,
    /// 90% interval excludes zero.
    Star,
    /// 95% interval excludes zero.
    Bold,
}

impl SigMark {
    pub fn of(summary: &ParamSummary) -> SigMark {
        if summary.sig_05 {
            SigMark::Bold
        } else if summary.sig_10 {
            SigMark::Star
        } else {
            SigMark::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SigMark::None => "",
            SigMark::Star => "*",
            SigMark::Bold => "bold",
        }
    }
}

impl FromStr for SigMark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Ok(SigMark::None),
            "*" => Ok(SigMark::Star),
            "bold" => Ok(SigMark::Bold),
            _ => Err(Error::InvalidConfig(format!("unknown significance mark `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub parameter: String,
    pub mean: f64,
    pub bci_low: f64,
    pub bci_high: f64,
    /// Absent for the intercept and the random-effect precision.
    pub hazard_ratio: Option<f64>,
    pub sig: SigMark,
}

impl ReportRow {
    pub fn from_summary(s: &ParamSummary) -> ReportRow {
        ReportRow {
            parameter: s.name.clone(),
            mean: s.mean,
            bci_low: s.q025,
            bci_high: s.q975,
            hazard_ratio: (!matches!(s.name.as_str(), "intercept" | "tau")).then(|| s.hazard_ratio()),
            sig: SigMark::of(s),
        }
    }

    /// `m.mmm (l.lll, u.uuu)` followed by `*` for 10% significance or wrapped
    /// in `**` for 5%.
    pub fn estimate_cell(&self) -> String {
        let core = format!("{} ({}, {})", fixed3(self.mean), fixed3(self.bci_low), fixed3(self.bci_high));
        match self.sig {
            SigMark::None => core,
            SigMark::Star => format!("{core}*"),
            SigMark::Bold => format!("**{core}**"),
        }
    }

    /// Three decimals, or `-` without a hazard ratio.
    pub fn hazard_cell(&self) -> String {
        self.hazard_ratio.map_or_else(|| "-".to_string(), fixed3)
    }

    fn hazard_csv(&self) -> String {
        self.hazard_ratio.map(fixed3).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTable {
    pub title: String,
    pub rows: Vec<ReportRow>,
    /// Label and value, e.g. `("DIC", 491.418)`.
    pub footer: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Markdown,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Markdown => "md",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            _ => Err(Error::InvalidConfig(format!("unknown format `{s}`"))),
        }
    }
}

/// Three decimals, never `-0.000`.
pub fn fixed3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn csv_line(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    w.write_record(fields).expect("write to memory");
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 fields")
}

pub fn render_table(table: &ReportTable, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str("parameter,mean,bci_low,bci_high,hazard_ratio,sig\n");
            for r in &table.rows {
                out.push_str(&csv_line(&[
                    r.parameter.clone(),
                    fixed3(r.mean),
                    fixed3(r.bci_low),
                    fixed3(r.bci_high),
                    r.hazard_csv(),
                    r.sig.as_str().to_string(),
                ]));
            }
            for (label, v) in &table.footer {
                out.push_str(&csv_line(&[label.clone(), fixed3(*v), String::new(), String::new(), String::new(), String::new()]));
            }
        }
        Format::Markdown => {
            if !table.title.is_empty() {
                let _ = writeln!(out, "### {}\n", table.title);
            }
            out.push_str("| Parameter | Mean (95% BCI) | Hazard ratio |\n|---|---|---|\n");
            for r in &table.rows {
                let _ = writeln!(out, "| {} | {} | {} |", r.parameter, r.estimate_cell(), r.hazard_cell());
            }
            for (label, v) in &table.footer {
                let _ = writeln!(out, "| {label} | {} | |", fixed3(*v));
            }
        }
    }
    out
}

/// Parses the CSV emitted by [`render_table`].
pub fn parse_table_csv(text: &str) -> Result<ReportTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut table = ReportTable::default();
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::InvalidConfig(format!("bad number `{s}` in report")))
    };
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        if field(2).is_empty() {
            table.footer.push((field(0).to_string(), num(field(1))?));
        } else {
            table.rows.push(ReportRow {
                parameter: field(0).to_string(),
                mean: num(field(1))?,
                bci_low: num(field(2))?,
                bci_high: num(field(3))?,
                hazard_ratio: match field(4) {
                    "" => None,
                    v => Some(num(v)?),
                },
                sig: field(5).parse()?,
            });
        }
    }
    Ok(table)
}

/// Summary table of one fitted model.
pub fn fit_table(fitted: &FittedModel) -> ReportTable {
    ReportTable {
        title: fitted.kind.title().to_string(),
        rows: fitted.reported().iter().map(ReportRow::from_summary).collect(),
        footer: vec![("DIC".into(), fitted.dic.dic), ("AUC".into(), fitted.auc.auc)],
    }
}

/// Side-by-side tables, one column group per model. Parameters absent from
/// a model are shown as `-`.
pub fn render_comparison(tables: &[ReportTable], format: Format) -> String {
    let mut params: Vec<&str> = Vec::new();
    for t in tables {
        for r in &t.rows {
            if !params.contains(&r.parameter.as_str()) {
                params.push(&r.parameter);
            }
        }
    }
    // intercept leads and the precision closes, as in the fitted tables
    params.sort_by_key(|p| match *p {
        "intercept" => 0,
        "tau" => 2,
        _ => 1,
    });
    let mut footers: Vec<&str> = Vec::new();
    for t in tables {
        for (l, _) in &t.footer {
            if !footers.contains(&l.as_str()) {
                footers.push(l);
            }
        }
    }
    let find = |t: &ReportTable, p: &str| t.rows.iter().find(|r| r.parameter == p).cloned();
    let foot = |t: &ReportTable, l: &str| t.footer.iter().find(|(x, _)| x == l).map(|(_, v)| *v);

    let mut out = String::new();
    match format {
        Format::Csv => {
            let mut header = vec!["parameter".to_string()];
            for t in tables {
                let key = t.title.clone();
                for col in ["mean", "bci_low", "bci_high", "hazard_ratio", "sig"] {
                    header.push(format!("{key}:{col}"));
                }
            }
            out.push_str(&csv_line(&header));
            for p in &params {
                let mut line = vec![p.to_string()];
                for t in tables {
                    match find(t, p) {
                        Some(r) => line.extend([
                            fixed3(r.mean),
                            fixed3(r.bci_low),
                            fixed3(r.bci_high),
                            r.hazard_csv(),
                            r.sig.as_str().to_string(),
                        ]),
                        None => line.extend(["-".to_string(), String::new(), String::new(), String::new(), String::new()]),
                    }
                }
                out.push_str(&csv_line(&line));
            }
            for l in &footers {
                let mut line = vec![l.to_string()];
                for t in tables {
                    line.push(foot(t, l).map_or_else(|| "-".to_string(), fixed3));
                    line.extend(std::iter::repeat_n(String::new(), 4));
                }
                out.push_str(&csv_line(&line));
            }
        }
        Format::Markdown => {
            out.push_str("| Parameter |");
            for t in tables {
                let _ = write!(out, " {}: Mean (95% BCI) | Hazard ratio |", t.title);
            }
            out.push_str("\n|---|");
            for _ in tables {
                out.push_str("---|---|");
            }
            out.push('\n');
            for p in &params {
                let _ = write!(out, "| {p} |");
                for t in tables {
                    match find(t, p) {
                        Some(r) => {
                            let _ = write!(out, " {} | {} |", r.estimate_cell(), r.hazard_cell());
                        }
                        None => out.push_str(" - | - |"),
                    }
                }
                out.push('\n');
            }
            for l in &footers {
                let _ = write!(out, "| {l} |");
                for t in tables {
                    let _ = write!(out, " {} | |", foot(t, l).map_or_else(|| "-".to_string(), fixed3));
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn render_sweep(rows: &[SweepRow], format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str("m,n_strata,dropped,auc,dic\n");
            for r in rows {
                let _ = writeln!(out, "{},{},{},{},{}", r.m, r.n_strata, r.dropped, fixed3(r.auc), fixed3(r.dic));
            }
        }
        Format::Markdown => {
            out.push_str("| Ratio | Strata | Dropped | AUC | DIC |\n|---|---|---|---|---|\n");
            for r in rows {
                let _ = writeln!(out, "| {}:1 | {} | {} | {} | {} |", r.m, r.n_strata, r.dropped, fixed3(r.auc), fixed3(r.dic));
            }
        }
    }
    out
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Posterior means with enough context to score new windows.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFile {
    pub kind: ModelKind,
    pub features: Vec<String>,
    pub beta: Vec<f64>,
    pub intercept: Option<f64>,
    pub prior: PriorSpec,
    pub dataset_hash: String,
}

impl CoefficientFile {
    pub fn from_fit(fitted: &FittedModel, prior: &PriorSpec, features: &[String], dataset_hash: String) -> Self {
        let mean = |name: &str| fitted.summary.get(name).map(|p| p.mean);
        CoefficientFile {
            kind: fitted.kind,
            features: features.to_vec(),
            beta: features.iter().map(|f| mean(f).unwrap_or(f64::NAN)).collect(),
            intercept: mean("intercept"),
            prior: *prior,
            dataset_hash,
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("model_kind", self.kind)
            .set("features", self.features.join(","))
            .set("dataset_hash", &self.dataset_hash)
            .set("prior.coef_mean", self.prior.coef_mean)
            .set("prior.coef_variance", self.prior.coef_variance)
            .set("prior.intercept_mean", self.prior.intercept_mean)
            .set("prior.intercept_variance", self.prior.intercept_variance)
            .set("prior.tau_shape", self.prior.tau_shape)
            .set("prior.tau_rate", self.prior.tau_rate);
        if let Some(a) = self.intercept {
            kv.set("intercept", a);
        }
        for (f, b) in self.features.iter().zip(&self.beta) {
            kv.set(format!("beta.{f}"), b);
        }
        kv
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        let features: Vec<String> = kv
            .get("features")
            .unwrap_or("")
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let beta = features
            .iter()
            .map(|f| kv.require::<f64>(&format!("beta.{f}"), path))
            .collect::<Result<_>>()?;
        let intercept = match kv.get("intercept") {
            Some(_) => Some(kv.require("intercept", path)?),
            None => None,
        };
        let d = PriorSpec::default();
        let or = |key: &str, default: f64| -> Result<f64> {
            if kv.get(key).is_some() {
                kv.require(key, path)
            } else {
                Ok(default)
            }
        };
        Ok(CoefficientFile {
            kind: kv.require("model_kind", path)?,
            features,
            beta,
            intercept,
            prior: PriorSpec {
                coef_mean: or("prior.coef_mean", d.coef_mean)?,
                coef_variance: or("prior.coef_variance", d.coef_variance)?,
                intercept_mean: or("prior.intercept_mean", d.intercept_mean)?,
                intercept_variance: or("prior.intercept_variance", d.intercept_variance)?,
                tau_shape: or("prior.tau_shape", d.tau_shape)?,
                tau_rate: or("prior.tau_rate", d.tau_rate)?,
            },
            dataset_hash: kv.get("dataset_hash").unwrap_or("").to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_kv().write(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mean: f64, lo: f64, hi: f64, sig: SigMark) -> ReportRow {
        ReportRow {
            parameter: "avg_speed_s2".into(),
            mean,
            bci_low: lo,
            bci_high: hi,
            hazard_ratio: Some(mean.exp()),
            sig,
        }
    }

    #[test]
    fn cell_formats() {
        let r = row(-0.028, -0.058, 0.004, SigMark::Star);
        assert_eq!(format!("{} | {}", r.estimate_cell(), r.hazard_cell()), "-0.028 (-0.058, 0.004)* | 0.972");
        assert_eq!(row(0.0, -0.1, 0.1, SigMark::None).estimate_cell(), "0.000 (-0.100, 0.100)");
        assert_eq!(row(0.751, 0.1, 1.5, SigMark::Bold).estimate_cell(), "**0.751 (0.100, 1.500)**");
        assert_eq!(fixed3(-0.0001), "0.000");
    }

    #[test]
    fn sig_mark_convention() {
        let mut s = ParamSummary::from_draws("x", &[-1.0, 1.0]);
        assert_eq!(SigMark::of(&s), SigMark::None);
        s.sig_10 = true;
        assert_eq!(SigMark::of(&s), SigMark::Star);
        s.sig_05 = true;
        assert_eq!(SigMark::of(&s), SigMark::Bold);
    }

    #[test]
    fn empty_footer_omits_rows() {
        let t = ReportTable {
            title: "t".into(),
            rows: vec![row(0.1, 0.0, 0.2, SigMark::None)],
            footer: vec![],
        };
        let md = render_table(&t, Format::Markdown);
        assert!(!md.contains("DIC") && !md.contains("AUC"));
        assert_eq!(render_table(&t, Format::Csv).lines().count(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let t = ReportTable {
            title: String::new(),
            rows: vec![row(-0.028, -0.058, 0.004, SigMark::Star), row(0.7514, 0.01, 1.5, SigMark::Bold)],
            footer: vec![("DIC".into(), 491.4183), ("AUC".into(), 0.572)],
        };
        let back = parse_table_csv(&render_table(&t, Format::Csv)).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[1].sig, SigMark::Bold);
        assert!((back.rows[1].mean - 0.751).abs() < 5e-4);
        assert_eq!(back.footer[0], ("DIC".to_string(), 491.418));
    }

    #[test]
    fn comparison_has_a_group_per_model() {
        let mk = |title: &str, rows: Vec<ReportRow>| ReportTable {
            title: title.into(),
            rows,
            footer: vec![("DIC".into(), 1.0)],
        };
        let mut intercept = row(-2.0, -2.5, -1.5, SigMark::Bold);
        intercept.parameter = "intercept".into();
        let tables = [
            mk("A", vec![row(0.1, 0.0, 0.2, SigMark::None)]),
            mk("B", vec![intercept.clone(), row(0.1, 0.0, 0.2, SigMark::None)]),
            mk("C", vec![intercept, row(0.1, 0.0, 0.2, SigMark::None)]),
        ];
        let csv = render_comparison(&tables, Format::Csv);
        let header = csv.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 1 + 3 * 5);
        assert!(csv.contains("intercept,-,,,,,"));
        let md = render_comparison(&tables, Format::Markdown);
        assert_eq!(md.lines().next().unwrap().matches("Mean (95% BCI)").count(), 3);
    }
}
