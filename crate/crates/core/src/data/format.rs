//! Manifest + blob dataset format.
//!
//! The blob starts with the 4-byte magic `HCE1` and a little-endian `u32`
//! version (1), followed by raw little-endian `f32` matrices in row-major
//! order. The manifest is UTF-8 JSON lines: a header object first, then one
//! record per sample giving byte offsets (from blob start), shapes, edges
//! and label.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sample::{Limits, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BLOB_MAGIC: &[u8; 4] = b"HCE1";
pub const FORMAT_VERSION: u32 = 1;
const BLOB_HEADER_LEN: u64 = 8;

/// Embedding widths shared by every sample in a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub d_text: usize,
    pub d_img: usize,
    /// 0 when no sample carries knowledge.
    pub d_know: usize,
    pub p: usize,
}

impl DatasetHeader {
    pub fn patch_count(&self) -> usize {
        self.p * self.p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_knowledge(&self) -> bool {
        self.samples.iter().any(|s| s.knowledge.is_some())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLine {
    magic: String,
    version: u32,
    blob: String,
    count: usize,
    #[serde(flatten)]
    dims: DatasetHeader,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    label: u8,
    n: usize,
    r: usize,
    m: usize,
    p: usize,
    text_offset: u64,
    image_offset: u64,
    #[serde(default)]
    know_offset: Option<u64>,
    edges_text: Vec<(usize, usize)>,
    #[serde(default)]
    edges_know: Option<Vec<(usize, usize)>>,
}

pub fn manifest_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, "jsonl")
}

pub fn blob_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, "bin")
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Loads `<prefix>.jsonl` + `<prefix>.bin`.
pub fn load_dataset(prefix: &Path, limits: &Limits) -> Result<Dataset> {
    load_manifest(&manifest_path(prefix), &blob_path(prefix), limits)
}

pub fn write_dataset(dataset: &Dataset, prefix: &Path) -> Result<()> {
    write_manifest(dataset, &manifest_path(prefix), &blob_path(prefix))
}

pub fn load_manifest(manifest: &Path, blob: &Path, limits: &Limits) -> Result<Dataset> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let bytes = fs::read(blob).map_err(|e| Error::io(blob, e))?;
    let format_err = |path: &Path, detail: String| Error::Format {
        path: path.to_owned(),
        detail,
    };

    if bytes.len() < BLOB_HEADER_LEN as usize {
        return Err(Error::Truncated {
            path: blob.to_owned(),
            position: bytes.len() as u64,
            detail: "blob shorter than its header".into(),
        });
    }
    if &bytes[..4] != BLOB_MAGIC {
        return Err(format_err(blob, format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format_err(blob, format!("unsupported blob version {version}")));
    }

    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| format_err(manifest, "missing header line".into()))?;
    let header: HeaderLine = serde_json::from_str(first).map_err(|e| format_err(manifest, format!("header: {e}")))?;
    if header.magic != "HCE1" || header.version != FORMAT_VERSION {
        return Err(format_err(
            manifest,
            format!("bad magic/version {}/{}", header.magic, header.version),
        ));
    }
    let dims = header.dims;

    let mut samples = Vec::with_capacity(header.count);
    let mut regions: Vec<(u64, u64, String)> = Vec::new();
    for (lineno, line) in lines {
        let rec: RecordLine =
            serde_json::from_str(line).map_err(|e| format_err(manifest, format!("line {}: {e}", lineno + 1)))?;
        let data_err = |detail: String| Error::data(&rec.id, detail);
        if rec.p != dims.p || rec.r != rec.p * rec.p {
            return Err(data_err(format!(
                "grid side {} and patch count {} disagree (header p = {})",
                rec.p, rec.r, dims.p
            )));
        }
        let mut read = |offset: u64, rows: usize, cols: usize, what: &str| -> Result<Tensor<f64>> {
            let len = (rows * cols * 4) as u64;
            if offset < BLOB_HEADER_LEN || !offset.is_multiple_of(4) {
                return Err(data_err(format!(
                    "{what} offset {offset} is not a valid float position"
                )));
            }
            let end = offset + len;
            if end > bytes.len() as u64 {
                return Err(Error::Truncated {
                    path: blob.to_owned(),
                    position: bytes.len() as u64,
                    detail: format!(
                        "sample `{}` {what} needs bytes {offset}..{end}, blob ends at {}",
                        rec.id,
                        bytes.len()
                    ),
                });
            }
            regions.push((offset, end, rec.id.clone()));
            let data = bytes[offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            Tensor::from_vec(rows, cols, data).map_err(|_| data_err(format!("{what} contains non-finite values")))
        };
        let text_t = read(rec.text_offset, rec.n, dims.d_text, "text")?;
        let image_t = read(rec.image_offset, rec.r, dims.d_img, "image")?;
        let knowledge = match (rec.m, rec.know_offset) {
            (0, _) => None,
            (m, Some(off)) => Some(read(off, m, dims.d_know, "knowledge")?),
            (_, None) => return Err(data_err("m > 0 but know_offset missing".into())),
        };
        let sample = Sample {
            id: rec.id.clone(),
            label: rec.label,
            text: text_t,
            image: image_t,
            knowledge,
            text_edges: rec.edges_text,
            knowledge_edges: if rec.m == 0 { None } else { rec.edges_know },
            grid_side: rec.p,
        };
        sample.validate(limits)?;
        samples.push(sample);
    }
    if samples.len() != header.count {
        return Err(format_err(
            manifest,
            format!("header announces {} records, found {}", header.count, samples.len()),
        ));
    }

    regions.sort();
    for pair in regions.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(format_err(
                blob,
                format!(
                    "regions of `{}` and `{}` overlap at byte {}",
                    pair[0].2, pair[1].2, pair[1].0
                ),
            ));
        }
    }
    Ok(Dataset { header: dims, samples })
}

pub fn write_manifest(dataset: &Dataset, manifest: &Path, blob: &Path) -> Result<()> {
    let dims = dataset.header;
    let mut blob_bytes: Vec<u8> = Vec::new();
    blob_bytes.extend_from_slice(BLOB_MAGIC);
    blob_bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let mut append = |t: &Tensor<f64>| -> u64 {
        let off = blob_bytes.len() as u64;
        for &v in t.data() {
            blob_bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        off
    };

    let mut out = Vec::new();
    let blob_name = blob
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let header = HeaderLine {
        magic: "HCE1".into(),
        version: FORMAT_VERSION,
        blob: blob_name,
        count: dataset.samples.len(),
        dims,
    };
    out.push(serde_json::to_string(&header).expect("header serializes"));
    for s in &dataset.samples {
        let check = |t: &Tensor<f64>, width: usize, what: &str| {
            if t.cols() == width {
                Ok(())
            } else {
                Err(Error::data(
                    &s.id,
                    format!("{what} width {} but header says {width}", t.cols()),
                ))
            }
        };
        check(&s.text, dims.d_text, "text")?;
        check(&s.image, dims.d_img, "image")?;
        if let Some(k) = &s.knowledge {
            check(k, dims.d_know, "knowledge")?;
        }
        let text_offset = append(&s.text);
        let image_offset = append(&s.image);
        let know_offset = s.knowledge.as_ref().map(&mut append);
        let rec = RecordLine {
            id: s.id.clone(),
            label: s.label,
            n: s.text_len(),
            r: s.patch_count(),
            m: s.knowledge_len(),
            p: s.grid_side,
            text_offset,
            image_offset,
            know_offset,
            edges_text: s.text_edges.clone(),
            edges_know: s.knowledge_edges.clone(),
        };
        out.push(serde_json::to_string(&rec).expect("record serializes"));
    }

    fs::write(blob, &blob_bytes).map_err(|e| Error::io(blob, e))?;
    let file = fs::File::create(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut w = BufWriter::new(file);
    for line in out {
        writeln!(w, "{line}").map_err(|e| Error::io(manifest, e))?;
    }
    w.flush().map_err(|e| Error::io(manifest, e))
}
