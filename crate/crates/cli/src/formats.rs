//! On-disk formats.
//!
//! Structured files are JSON documents with a `format_version`, a `kind`, the
//! component count `n` and the component `ids`; matrices are nested arrays in
//! row-major order and undefined correlations are `null`. Reals are written
//! in shortest round-trip form, so reading a file back gives identical bits.
//!
//! Tabular inputs are CSV:
//!
//! * portfolio: `id,lat,lon[,key=value...]`, optional `id,...` header
//! * observations: header of component ids, one sample per row, cells in
//!   `{0,1}` (0 = safe) or `{-1,+1}`; the two encodings cannot be mixed
//! * failure probabilities: `id,pf`, optional header
//! * correlation matrix: `n` rows of `n` numbers, optional header of ids

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use isingrisk::model::{
    Component, Couplings, IsingParameters, MomentSet, ObservationSet, Portfolio, SpinConfiguration,
};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

pub type Matrix = Vec<Vec<f64>>;

pub fn to_rows(m: &DMatrix<f64>) -> Matrix {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &Matrix, n: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::input(format!("{what} must be {n}×{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: String,
    pub n: usize,
    pub ids: Vec<String>,
}

impl Header {
    pub fn new(kind: &str, ids: &[String]) -> Self {
        Self { format_version: FORMAT_VERSION, kind: kind.to_string(), n: ids.len(), ids: ids.to_vec() }
    }

    fn check(&self, kind: &str, path: &Path) -> Result<(), CliError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::input(format!(
                "{}: unsupported format_version {}",
                path.display(),
                self.format_version
            )));
        }
        if self.kind != kind {
            return Err(CliError::input(format!("{}: expected a {kind} file, found {}", path.display(), self.kind)));
        }
        if self.ids.len() != self.n {
            return Err(CliError::input(format!("{}: n = {} but {} ids", path.display(), self.n, self.ids.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsFile {
    #[serde(flatten)]
    pub header: Header,
    pub m1: Vec<f64>,
    pub m2: Matrix,
    /// Derived; ignored on read.
    pub rho: Vec<Vec<Option<f64>>>,
}

impl MomentsFile {
    pub const KIND: &'static str = "moments";

    pub fn new(ids: &[String], m: &MomentSet) -> Self {
        let rho = m.rho();
        Self {
            header: Header::new(Self::KIND, ids),
            m1: m.m1().to_vec(),
            m2: to_rows(m.m2()),
            rho: (0..m.n()).map(|i| (0..m.n()).map(|j| rho[(i, j)]).collect()).collect(),
        }
    }

    pub fn moments(&self) -> Result<MomentSet, CliError> {
        let n = self.header.n;
        if self.m1.len() != n {
            return Err(CliError::input(format!("m1 has {} entries, expected {n}", self.m1.len())));
        }
        Ok(MomentSet::new(self.m1.clone(), from_rows(&self.m2, n, "m2")?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    #[serde(flatten)]
    pub header: Header,
    pub h: Vec<f64>,
    pub j: Matrix,
}

impl ParamsFile {
    pub const KIND: &'static str = "params";

    pub fn new(ids: &[String], p: &IsingParameters) -> Self {
        Self { header: Header::new(Self::KIND, ids), h: p.h().to_vec(), j: to_rows(&p.couplings().to_dense()) }
    }

    pub fn params(&self) -> Result<IsingParameters, CliError> {
        let n = self.header.n;
        if self.h.len() != n {
            return Err(CliError::input(format!("h has {} entries, expected {n}", self.h.len())));
        }
        let j = from_rows(&self.j, n, "j")?;
        let violations = isingrisk::validate(&self.h, &j);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(CliError::input(format!("invalid parameters: {}", list.join(", "))));
        }
        Ok(IsingParameters::new(self.h.clone(), Couplings::from_fn(n, |a, b| j[(a, b)]))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub d_lo: f64,
    pub d_hi: f64,
    pub mean_distance: f64,
    pub rho: Option<f64>,
    pub pair_count: usize,
}

/// Fitted `ρ(d) = 1/(1 + a·d)` with the binned data behind it, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoModelFile {
    pub format_version: u32,
    pub kind: String,
    pub a: f64,
    pub unit: String,
    #[serde(default)]
    pub objective: Option<f64>,
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default)]
    pub bin_width: Option<f64>,
    #[serde(default)]
    pub bins: Vec<BinRecord>,
}

impl RhoModelFile {
    pub const KIND: &'static str = "rho_model";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    #[serde(flatten)]
    pub header: Header,
    pub samples: u64,
    pub m1: Vec<f64>,
    pub m2: Matrix,
    pub m1_se: Option<Vec<f64>>,
    pub m2_se: Option<Matrix>,
    pub pf: Vec<f64>,
    /// Fraction of samples with `k` failures, `k = 0..=n`.
    pub count_hist: Vec<f64>,
}

impl SummaryFile {
    pub const KIND: &'static str = "sample_summary";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    #[serde(flatten)]
    pub header: Header,
    pub estimator: String,
    pub tying: String,
    pub converged: bool,
    pub iters_used: usize,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub tol: f64,
    pub window: usize,
    pub final_residual: f64,
    pub max_m1_residual: f64,
    pub max_m2_residual: f64,
    pub final_standard_error: Option<f64>,
    pub residual_trajectory: Vec<f64>,
    pub block_residual_trajectory: Vec<f64>,
    pub log_likelihood_trajectory: Vec<f64>,
}

impl FitDiagnostics {
    pub const KIND: &'static str = "fit_diagnostics";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldFile {
    #[serde(flatten)]
    pub header: Header,
    pub m: Vec<f64>,
    pub c: Option<Matrix>,
    pub iterations: usize,
    pub converged: bool,
}

impl MeanFieldFile {
    pub const KIND: &'static str = "meanfield_forward";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub header: Header,
    pub samples: u64,
    pub per_component_pf: Vec<f64>,
    pub failure_count_hist: Vec<f64>,
    pub expected_failures: f64,
    pub mode_failures: usize,
    pub exceedance: Vec<Exceedance>,
    pub h_bar: f64,
    pub j_bar: Option<f64>,
    pub h: Vec<f64>,
    pub avg_interaction: Option<Vec<f64>>,
    pub ranking_by_pf: Vec<String>,
    pub ranking_by_h: Vec<String>,
    pub independence_gap: Vec<Option<f64>>,
}

impl ReportFile {
    pub const KIND: &'static str = "report";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub k: usize,
    pub probability: f64,
}

/// Peeks at the `kind` of a structured file.
pub fn read_kind(path: &Path) -> Result<String, CliError> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    let k: Kind = read_json_raw(path)?;
    Ok(k.kind)
}

fn read_json_raw<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(s)
}

pub fn read_moments(path: &Path) -> Result<(Vec<String>, MomentSet), CliError> {
    let f: MomentsFile = read_json_raw(path)?;
    f.header.check(MomentsFile::KIND, path)?;
    Ok((f.header.ids.clone(), f.moments()?))
}

pub fn read_params(path: &Path) -> Result<(Vec<String>, IsingParameters), CliError> {
    let f: ParamsFile = read_json_raw(path)?;
    f.header.check(ParamsFile::KIND, path)?;
    Ok((f.header.ids.clone(), f.params()?))
}

pub fn read_summary(path: &Path) -> Result<SummaryFile, CliError> {
    let f: SummaryFile = read_json_raw(path)?;
    f.header.check(SummaryFile::KIND, path)?;
    if f.pf.len() != f.header.n || f.count_hist.len() != f.header.n + 1 {
        return Err(CliError::input(format!("{}: inconsistent summary lengths", path.display())));
    }
    Ok(f)
}

pub fn read_rho_model(path: &Path) -> Result<RhoModelFile, CliError> {
    let f: RhoModelFile = read_json_raw(path)?;
    if f.kind != RhoModelFile::KIND {
        return Err(CliError::input(format!(
            "{}: expected a {} file, found {}",
            path.display(),
            RhoModelFile::KIND,
            f.kind
        )));
    }
    Ok(f)
}

pub fn read_report(path: &Path) -> Result<ReportFile, CliError> {
    let f: ReportFile = read_json_raw(path)?;
    f.header.check(ReportFile::KIND, path)?;
    Ok(f)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// `<out>.meta.json` next to a primary output.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(file))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_records(path: &Path) -> Result<Vec<csv::StringRecord>, CliError> {
    let mut out = Vec::new();
    for rec in csv_reader(path)?.records() {
        let rec = rec.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        out.push(rec);
    }
    Ok(out)
}

fn parse_f64(cell: &str, path: &Path, line: u64, what: &str) -> Result<f64, CliError> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::input(format!("{}:{line}: invalid {what} {cell:?}", path.display())))
}

pub fn read_portfolio(path: &Path) -> Result<Portfolio, CliError> {
    let mut comps = Vec::new();
    for (k, rec) in csv_records(path)?.into_iter().enumerate() {
        let line = line_of(&rec);
        if k == 0 && rec.get(0).is_some_and(|c| c.eq_ignore_ascii_case("id")) {
            continue;
        }
        if rec.len() < 3 {
            return Err(CliError::input(format!("{}:{line}: expected id,lat,lon", path.display())));
        }
        let mut attributes = Vec::new();
        for extra in rec.iter().skip(3) {
            let (key, value) = extra.split_once('=').ok_or_else(|| {
                CliError::input(format!("{}:{line}: attribute {extra:?} is not key=value", path.display()))
            })?;
            attributes.push((key.to_string(), value.to_string()));
        }
        comps.push(Component {
            id: rec[0].to_string(),
            latitude: parse_f64(&rec[1], path, line, "latitude")?,
            longitude: parse_f64(&rec[2], path, line, "longitude")?,
            attributes,
        });
    }
    if comps.is_empty() {
        return Err(CliError::input(format!("{}: no components", path.display())));
    }
    Ok(Portfolio::new(comps)?)
}

pub fn write_portfolio(path: &Path, portfolio: &Portfolio) -> Result<(), CliError> {
    let mut w = text_writer(path)?;
    let io = |e: std::io::Error| CliError::input(format!("{}: {e}", path.display()));
    writeln!(w, "id,lat,lon").map_err(io)?;
    for c in portfolio.components() {
        write!(w, "{},{},{}", c.id, c.latitude, c.longitude).map_err(io)?;
        for (k, v) in &c.attributes {
            write!(w, ",{k}={v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Binary,
    Signed,
}

pub fn read_observations(path: &Path) -> Result<(Vec<String>, ObservationSet), CliError> {
    let records = csv_records(path)?;
    let (head, rows) =
        records.split_first().ok_or_else(|| CliError::input(format!("{}: empty file, no samples", path.display())))?;
    let ids: Vec<String> = head.iter().map(str::to_string).collect();
    let n = ids.len();
    let mut encoding: Option<(Encoding, u64)> = None;
    let mut samples = Vec::with_capacity(rows.len());
    for rec in rows {
        let line = line_of(rec);
        if rec.len() != n {
            return Err(CliError::input(format!(
                "{}:{line}: {} cells, header names {n} components",
                path.display(),
                rec.len()
            )));
        }
        let mut spins = Vec::with_capacity(n);
        for cell in rec.iter() {
            let (spin, enc) = match cell {
                "0" => (-1, Some(Encoding::Binary)),
                "1" => (1, None),
                "+1" => (1, Some(Encoding::Signed)),
                "-1" => (-1, Some(Encoding::Signed)),
                other => {
                    return Err(CliError::input(format!("{}:{line}: invalid cell {other:?}", path.display())));
                }
            };
            if let Some(e) = enc {
                match encoding {
                    None => encoding = Some((e, line)),
                    Some((prev, first)) if prev != e => {
                        return Err(CliError::input(format!(
                            "{}:{line}: mixed encodings ({{0,1}} and {{-1,+1}}; first seen on line {first})",
                            path.display()
                        )));
                    }
                    _ => {}
                }
            }
            spins.push(spin);
        }
        samples.push(SpinConfiguration::new(spins)?);
    }
    if samples.is_empty() {
        return Err(CliError::input(format!("{}: no samples", path.display())));
    }
    Ok((ids, ObservationSet::new(samples)?))
}

/// Writes samples as an observations CSV in the `{0,1}` encoding.
pub fn write_observations(path: &Path, ids: &[String], obs: &ObservationSet) -> Result<(), CliError> {
    let mut w = text_writer(path)?;
    let io = |e: std::io::Error| CliError::input(format!("{}: {e}", path.display()));
    writeln!(w, "{}", ids.join(",")).map_err(io)?;
    let mut line = String::with_capacity(2 * ids.len());
    for s in obs.samples() {
        line.clear();
        for (k, &x) in s.spins().iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push(if x == 1 { '1' } else { '0' });
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_pf(path: &Path) -> Result<(Vec<String>, Vec<f64>), CliError> {
    let mut ids = Vec::new();
    let mut pf = Vec::new();
    for (k, rec) in csv_records(path)?.into_iter().enumerate() {
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(CliError::input(format!("{}:{line}: expected id,pf", path.display())));
        }
        if k == 0 && rec[1].parse::<f64>().is_err() {
            continue;
        }
        let v = parse_f64(&rec[1], path, line, "probability")?;
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::input(format!("{}:{line}: probability {v} outside [0, 1]", path.display())));
        }
        ids.push(rec[0].to_string());
        pf.push(v);
    }
    if pf.is_empty() {
        return Err(CliError::input(format!("{}: no components", path.display())));
    }
    Ok((ids, pf))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in csv_records(path)?.into_iter().enumerate() {
        let line = line_of(&rec);
        if k == 0 && rec.iter().any(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        rows.push(rec.iter().map(|c| parse_f64(c, path, line, "matrix entry")).collect::<Result<_, _>>()?);
    }
    let n = rows.len();
    if n == 0 {
        return Err(CliError::input(format!("{}: empty matrix", path.display())));
    }
    from_rows(&rows, n, &path.display().to_string())
}

pub fn text_writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn observation_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let (ids, obs) = read_observations(&write(dir.path(), "a.csv", "a,b\n0,1\n1,1\n")).unwrap();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(obs.samples()[0].spins(), &[-1, 1]);
        let (_, obs) = read_observations(&write(dir.path(), "b.csv", "a,b\n-1,+1\n1,-1\n")).unwrap();
        assert_eq!(obs.samples()[1].spins(), &[1, -1]);
        let err = read_observations(&write(dir.path(), "c.csv", "a,b\n0,1\n-1,1\n")).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
        let err = read_observations(&write(dir.path(), "d.csv", "a,b\n")).unwrap_err();
        assert!(err.to_string().contains("no samples"));
        let err = read_observations(&write(dir.path(), "e.csv", "a,b\n0,2\n")).unwrap_err();
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn portfolio_with_attributes() {
        let dir = tempfile::tempdir().unwrap();
        let p = read_portfolio(&write(dir.path(), "p.csv", "id,lat,lon\nx,36.2,36.1,floors=3\ny,36.3,36.2\n")).unwrap();
        assert_eq!(p.components()[0].attributes, vec![("floors".to_string(), "3".to_string())]);
        let out = dir.path().join("q.csv");
        write_portfolio(&out, &p).unwrap();
        assert_eq!(read_portfolio(&out).unwrap(), p);
        assert!(read_portfolio(&write(dir.path(), "r.csv", "x,abc,1\n")).is_err());
    }

    #[test]
    fn params_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let j = Couplings::from_fn(3, |i, k| 0.1 / 3.0 * (i + 2 * k) as f64 + 1e-17);
        let p = IsingParameters::new(vec![std::f64::consts::PI, -1.0 / 7.0, 2.5e-300], j).unwrap();
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let path = dir.path().join("p.json");
        write_json(&path, &ParamsFile::new(&ids, &p)).unwrap();
        let (back_ids, back) = read_params(&path).unwrap();
        assert_eq!(back_ids, ids);
        assert_eq!(back, p);
    }

    #[test]
    fn asymmetric_params_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{"format_version":1,"kind":"params","n":2,"ids":["a","b"],"h":[0,0],"j":[[0,0.5],[0.4,0]]}"#;
        let err = read_params(&write(dir.path(), "p.json", text)).unwrap_err();
        assert!(err.to_string().contains("asymmetric at (0,1)"), "{err}");
    }

    #[test]
    fn kind_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{"format_version":1,"kind":"params","n":1,"ids":["a"],"h":[0],"j":[[0]]}"#;
        let p = write(dir.path(), "p.json", text);
        assert_eq!(read_kind(&p).unwrap(), "params");
        assert!(read_moments(&p).is_err());
    }

    #[test]
    fn pf_and_matrix_csv() {
        let dir = tempfile::tempdir().unwrap();
        let (ids, pf) = read_pf(&write(dir.path(), "pf.csv", "id,pf\na,0.25\nb,0.5\n")).unwrap();
        assert_eq!((ids.len(), pf), (2, vec![0.25, 0.5]));
        let m = read_matrix_csv(&write(dir.path(), "r.csv", "a,b\n1,0.5\n0.5,1\n")).unwrap();
        assert_eq!(m[(0, 1)], 0.5);
        assert!(read_matrix_csv(&write(dir.path(), "s.csv", "1,0.5\n")).is_err());
    }
}
