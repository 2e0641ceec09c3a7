//! CSV matrices and the versioned text model file.
//!
//! Matrices are plain delimited text, one matrix row per line, optionally
//! preceded by a header line. Numbers are written with 17 significant digits so
//! that reading them back yields the same bits.
//!
//! A model file looks like
//!
//! ```text
//! pairkrr-model
//! format_version = 1
//! method = two-step
//! m = 3
//! q = 2
//! lambda_u = 1.0000000000000000e-1
//! lambda_v = 1.0000000000000000e-1
//! kernel_u = linear
//! kernel_v = rbf
//! kernel_v_bandwidth = 5.0000000000000000e-1
//! [coefficients 3 2]
//! ...rows...
//! [eig_k_values 1 3]
//! ...
//! ```
//!
//! Kernel models store the coefficients and both eigendecompositions; filter
//! models store the weights (`alpha = a1,a2,a3,a4`) and the training labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, KernelKind};
use crate::matrix::{DenseMatrix, EigenDecomposition};
use crate::models::{DualCoefficients, FilterWeights, Hyperparameters, LabelMatrix, Method, TrainedModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &str = "pairkrr-model";

/// CSV dialect: a single-byte delimiter and an optional header line. The
/// decimal separator is always `.`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            header: false,
        }
    }
}

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_matrix<R: Read>(reader: R, opts: CsvOptions) -> Result<DenseMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                line,
                expected,
                found: record.len(),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::ParseCell {
                    line,
                    col: col + 1,
                    value: cell.to_string(),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("no data rows".into()));
    }
    DenseMatrix::from_rows(&rows)
}

pub fn load_matrix(path: &Path, opts: CsvOptions) -> Result<DenseMatrix> {
    let file = File::open(path)?;
    read_matrix(BufReader::new(file), opts).map_err(|e| match e {
        Error::EmptyInput(_) => Error::EmptyInput(path.display().to_string()),
        other => other,
    })
}

pub fn write_matrix<W: Write>(writer: W, m: &DenseMatrix, delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    for i in 0..m.rows() {
        wtr.write_record((0..m.cols()).map(|j| format_f64(m[(i, j)])))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes through a temporary file in the target directory and renames it into
/// place, so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_matrix(m: &DenseMatrix, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_matrix(w, m, b','))
}

fn push_kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    writeln!(out, "{key} = {value}").expect("writing to a String cannot fail");
}

fn push_block(out: &mut String, name: &str, m: &DMatrix<f64>) {
    writeln!(out, "[{name} {} {}]", m.nrows(), m.ncols()).expect("writing to a String cannot fail");
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_f64(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
}

fn push_kernel(out: &mut String, side: &str, cfg: KernelConfig) {
    push_kv(out, &format!("kernel_{side}"), cfg.kind);
    if let Some(b) = cfg.bandwidth {
        push_kv(out, &format!("kernel_{side}_bandwidth"), format_f64(b));
    }
    if let Some(t) = cfg.theta {
        push_kv(out, &format!("kernel_{side}_theta"), format_f64(t));
    }
}

/// Serializes a model to the text format.
pub fn model_to_string(model: &TrainedModel) -> String {
    let mut out = String::new();
    out.push_str(MODEL_MAGIC);
    out.push('\n');
    push_kv(&mut out, "format_version", MODEL_FORMAT_VERSION);
    push_kv(&mut out, "method", model.method());
    let (m, q) = model.dims();
    push_kv(&mut out, "m", m);
    push_kv(&mut out, "q", q);
    match model.hyperparameters() {
        Hyperparameters::IndependentTask { lambda_u } => push_kv(&mut out, "lambda_u", format_f64(lambda_u)),
        Hyperparameters::Kronecker { lambda } => push_kv(&mut out, "lambda", format_f64(lambda)),
        Hyperparameters::Okkls => {}
        Hyperparameters::TwoStep { lambda_u, lambda_v } => {
            push_kv(&mut out, "lambda_u", format_f64(lambda_u));
            push_kv(&mut out, "lambda_v", format_f64(lambda_v));
        }
        Hyperparameters::Filter(w) => {
            let a: Vec<String> = w.alphas().iter().map(|&v| format_f64(v)).collect();
            push_kv(&mut out, "alpha", a.join(","));
        }
    }
    let (ku, kv) = model.kernels();
    push_kernel(&mut out, "u", ku);
    push_kernel(&mut out, "v", kv);
    if let Some(a) = model.coefficients() {
        push_block(&mut out, "coefficients", a.matrix().as_matrix());
    }
    for (name, eig) in [("eig_k", model.eig_k()), ("eig_g", model.eig_g())] {
        if let Some(eig) = eig {
            let values = DMatrix::from_row_slice(1, eig.dim(), eig.values());
            push_block(&mut out, &format!("{name}_values"), &values);
            push_block(&mut out, &format!("{name}_vectors"), eig.vectors());
        }
    }
    if let Some(y) = model.labels() {
        push_block(&mut out, "labels", y.matrix().as_matrix());
    }
    out
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let text = model_to_string(model);
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

struct ParsedModel {
    header: BTreeMap<String, String>,
    blocks: BTreeMap<String, DMatrix<f64>>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

fn parse_model_text<R: BufRead>(reader: R) -> Result<ParsedModel> {
    let mut lines = reader.lines().enumerate();
    let first = lines.next().map(|(_, l)| l).transpose()?;
    if first.as_deref().map(str::trim) != Some(MODEL_MAGIC) {
        return Err(format_err(format!("missing '{MODEL_MAGIC}' first line")));
    }
    let mut header = BTreeMap::new();
    let mut blocks = BTreeMap::new();
    let mut current: Option<(String, usize, usize, Vec<f64>)> = None;

    fn finish(current: Option<(String, usize, usize, Vec<f64>)>, blocks: &mut BTreeMap<String, DMatrix<f64>>) -> Result<()> {
        if let Some((name, r, c, data)) = current {
            if data.len() != r * c {
                return Err(format_err(format!("section [{name}] declares {r}x{c} but holds {} values", data.len())));
            }
            blocks.insert(name, DMatrix::from_row_slice(r, c, &data));
        }
        Ok(())
    }

    for (idx, line) in lines {
        let line = line?;
        let line = line.trim();
        let lineno = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            finish(current.take(), &mut blocks)?;
            let parts: Vec<&str> = inner.split_whitespace().collect();
            let [name, r, c] = parts[..] else {
                return Err(format_err(format!("line {lineno}: malformed section header")));
            };
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| format_err(format!("line {lineno}: bad dimension {s:?}")))
            };
            current = Some((name.to_string(), parse(r)?, parse(c)?, Vec::new()));
            continue;
        }
        match current.as_mut() {
            Some((name, _, cols, data)) => {
                let before = data.len();
                for cell in line.split(',') {
                    let cell = cell.trim();
                    let v: f64 = cell
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| format_err(format!("line {lineno}: bad number {cell:?} in [{name}]")))?;
                    data.push(v);
                }
                if data.len() - before != *cols {
                    return Err(format_err(format!("line {lineno}: expected {cols} values in [{name}]")));
                }
            }
            None => {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| format_err(format!("line {lineno}: expected 'key = value'")))?;
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
    }
    finish(current, &mut blocks)?;
    Ok(ParsedModel { header, blocks })
}

impl ParsedModel {
    fn get(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| format_err(format!("missing header key {key:?}")))
    }

    fn float(&self, key: &str) -> Result<f64> {
        let s = self.get(key)?;
        s.parse().map_err(|_| format_err(format!("{key}: cannot parse {s:?}")))
    }

    fn opt_float(&self, key: &str) -> Result<Option<f64>> {
        match self.header.get(key) {
            Some(_) => self.float(key).map(Some),
            None => Ok(None),
        }
    }

    fn usize(&self, key: &str) -> Result<usize> {
        let s = self.get(key)?;
        s.parse().map_err(|_| format_err(format!("{key}: cannot parse {s:?}")))
    }

    fn block(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let b = self
            .blocks
            .remove(name)
            .ok_or_else(|| format_err(format!("missing section [{name}]")))?;
        if b.shape() != (rows, cols) {
            return Err(format_err(format!(
                "section [{name}] is {}x{}, expected {rows}x{cols}",
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(b)
    }

    fn kernel(&self, side: &str) -> Result<KernelConfig> {
        let kind: KernelKind = self.get(&format!("kernel_{side}"))?.parse()?;
        Ok(KernelConfig {
            kind,
            bandwidth: self.opt_float(&format!("kernel_{side}_bandwidth"))?,
            theta: self.opt_float(&format!("kernel_{side}_theta"))?,
        })
    }

    fn eig(&mut self, name: &str, n: usize) -> Result<EigenDecomposition> {
        let values = self.block(&format!("{name}_values"), 1, n)?;
        let vectors = self.block(&format!("{name}_vectors"), n, n)?;
        EigenDecomposition::from_parts(vectors, values.iter().copied().collect())
    }
}

pub fn read_model<R: BufRead>(reader: R) -> Result<TrainedModel> {
    let mut parsed = parse_model_text(reader)?;
    let version: u32 = parsed
        .get("format_version")?
        .parse()
        .map_err(|_| format_err("format_version is not an integer"))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let method: Method = parsed.get("method")?.parse()?;
    let (m, q) = (parsed.usize("m")?, parsed.usize("q")?);
    if m == 0 || q == 0 {
        return Err(format_err("dimensions must be positive"));
    }
    let hyper = match method {
        Method::IndependentTask => Hyperparameters::IndependentTask {
            lambda_u: parsed.float("lambda_u")?,
        },
        Method::Kronecker => Hyperparameters::Kronecker {
            lambda: parsed.float("lambda")?,
        },
        Method::Okkls => Hyperparameters::Okkls,
        Method::TwoStep => Hyperparameters::TwoStep {
            lambda_u: parsed.float("lambda_u")?,
            lambda_v: parsed.float("lambda_v")?,
        },
        Method::Filter => {
            let raw = parsed.get("alpha")?;
            let vals: Vec<f64> = raw
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| format_err(format!("alpha: cannot parse {raw:?}")))?;
            let alphas: [f64; 4] = vals
                .try_into()
                .map_err(|_| format_err("alpha needs exactly four values"))?;
            Hyperparameters::Filter(FilterWeights::new(alphas)?)
        }
    };
    let kernels = (parsed.kernel("u")?, parsed.kernel("v")?);
    if method == Method::Filter {
        let labels = parsed.block("labels", m, q)?;
        return TrainedModel::from_parts(
            hyper,
            None,
            None,
            kernels,
            Some(LabelMatrix::new(DenseMatrix::new(labels)?)?),
        );
    }
    let a = parsed.block("coefficients", m, q)?;
    let eig_k = parsed.eig("eig_k", m)?;
    let eig_g = parsed.eig("eig_g", q)?;
    TrainedModel::from_parts(
        hyper,
        Some(DualCoefficients::new(DenseMatrix::new(a)?)),
        Some((eig_k, eig_g)),
        kernels,
        None,
    )
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    read_model(BufReader::new(File::open(path)?))
}
