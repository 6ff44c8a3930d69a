//! Dataset files: CSV tables and the binary tensor container.
//!
//! CSV: a header row, one sample per line, feature columns followed by an
//! integer `label` column.
//!
//! Container: the 8-byte magic `FLOWPRN1`, a little-endian `u64` header
//! length, a JSON header
//! `{"dtype": "f64le", "count": N, "sample_shape": [...], "num_classes": C}`,
//! then `N * prod(sample_shape)` little-endian `f64` values followed by `N`
//! little-endian `u64` labels.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CONTAINER_MAGIC: &[u8; 8] = b"FLOWPRN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Container,
}

impl DataFormat {
    /// `.csv` files are tables; everything else is read as a container.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Container,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "container" | "tensor" => Ok(DataFormat::Container),
            other => Err(Error::Config(format!("unknown data format `{other}`"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContainerHeader {
    dtype: String,
    count: usize,
    sample_shape: Vec<usize>,
    num_classes: usize,
}

/// Loads a dataset in file order. Labels are checked against `num_classes`
/// when given, otherwise the class count is one more than the largest label.
pub fn load_dataset(path: &Path, format: DataFormat, num_classes: Option<usize>) -> Result<Dataset> {
    match format {
        DataFormat::Csv => load_csv(path, num_classes),
        DataFormat::Container => load_container(path, num_classes),
    }
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

fn check_labels(path: &Path, labels: &[usize], lines: &[usize], num_classes: Option<usize>) -> Result<usize> {
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    if let Some(i) = labels.iter().position(|&l| l >= classes) {
        return Err(parse_err(
            path,
            lines[i],
            format!("label {} outside class range 0..{classes}", labels[i]),
        ));
    }
    Ok(classes)
}

fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let text = super::read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(parse_err(path, 1, "missing header"));
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < 2 || columns.last() != Some(&"label") {
        return Err(parse_err(path, 1, "header must list feature columns followed by `label`"));
    }
    let features = columns.len() - 1;
    let (mut inputs, mut labels, mut line_numbers) = (Vec::new(), Vec::new(), Vec::new());
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} fields, found {}", columns.len(), fields.len()),
            ));
        }
        let values = fields[..features]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line_no, format!("invalid number `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = fields[features]
            .parse::<usize>()
            .map_err(|_| parse_err(path, line_no, format!("invalid label `{}`", fields[features])))?;
        inputs.push(Tensor::vector(values));
        labels.push(label);
        line_numbers.push(line_no);
    }
    if inputs.is_empty() {
        return Err(parse_err(path, 1, "no samples"));
    }
    let classes = check_labels(path, &labels, &line_numbers, num_classes)?;
    Dataset::new(inputs, labels, classes, Split::Train)
}

fn load_container(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let bytes = super::read_file(path)?;
    let corrupt = |detail: &str| Error::Dataset(format!("{}: {detail}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CONTAINER_MAGIC {
        return Err(corrupt("missing FLOWPRN1 magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: ContainerHeader = serde_json::from_slice(&bytes[16..header_end])?;
    if header.dtype != "f64le" {
        return Err(corrupt(&format!("unsupported dtype `{}`", header.dtype)));
    }
    let per_sample: usize = header.sample_shape.iter().product();
    if header.count == 0 || per_sample == 0 {
        return Err(corrupt("empty container"));
    }
    let expected = header.count * per_sample * 8 + header.count * 8;
    let payload = &bytes[header_end..];
    if payload.len() != expected {
        return Err(corrupt(&format!("payload has {} bytes, expected {expected}", payload.len())));
    }
    let (values, label_bytes) = payload.split_at(header.count * per_sample * 8);
    let floats: Vec<f64> = values
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let inputs = floats
        .chunks(per_sample)
        .map(|c| Tensor::new(header.sample_shape.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = label_bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let classes = num_classes.unwrap_or(header.num_classes);
    if let Some(i) = labels.iter().position(|&l| l >= classes) {
        return Err(corrupt(&format!("sample {i}: label {} outside class range 0..{classes}", labels[i])));
    }
    Dataset::new(inputs, labels, classes, Split::Train)
}

/// Writes `data` as a container file.
pub fn save_container(data: &Dataset, path: &Path) -> Result<()> {
    let header = serde_json::to_vec(&ContainerHeader {
        dtype: "f64le".into(),
        count: data.len(),
        sample_shape: data.sample_shape().to_vec(),
        num_classes: data.num_classes(),
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + data.len() * (data.inputs()[0].len() + 1) * 8);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for x in data.inputs() {
        for v in x.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &l in data.labels() {
        out.extend_from_slice(&(l as u64).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a vector dataset as CSV with `x1..xd,label` columns.
pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    if data.sample_shape().len() != 1 {
        return Err(Error::Dataset("CSV holds vector samples only".into()));
    }
    let d = data.sample_shape()[0];
    let mut out: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    out.push("label".into());
    let mut text = out.join(",");
    text.push('\n');
    for (x, l) in data.inputs().iter().zip(data.labels()) {
        let row: Vec<String> = x.data().iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&row.join(","));
        text.push_str(&format!(",{l}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}
