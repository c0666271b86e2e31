// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary activation files and the token-text sidecar.
//!
//! Activation file, little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ACTV"
//! 4       4     u32 version (1)
//! 8       4     u32 D
//! 12      1     u8 dtype: 0 = f32, 1 = bf16
//! 13      8     u64 row count N
//! 21      4     u32 metadata length M
//! 25      M     UTF-8 metadata, one `key=value` per line
//! 25+M    ...   row-major data, N rows of W values (W = D, or 2D when the
//!               metadata holds `targets=1`: x_in then x_out per row)
//! ...     ceil(N/8)  valid-mask bits, row r at byte r/8, bit r%8 (LSB first)
//! ```
//!
//! Recognized metadata keys: `position` (e.g. `L15R`), `model` (source model
//! tag) and `targets`. Other keys are preserved.
//!
//! Token sidecar: for each row in order, `u32` byte length then UTF-8 bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use half::bf16;
use ndarray::Array2;

use super::{ActivationBatch, ActivationSource};
use crate::bytes::{put_string, put_u32, put_u64, put_u8, LeReader};
use crate::error::{check_dim, Result, SaeError};

pub const ACTIVATION_MAGIC: &[u8; 4] = b"ACTV";
pub const ACTIVATION_VERSION: u32 = 1;
const ROW_COUNT_OFFSET: u64 = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    Bf16,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            Self::F32 => 0,
            Self::Bf16 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::Bf16 => 2,
        }
    }
}

/// Header metadata of an activation file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActivationMeta {
    /// Capture position label such as `L15R`.
    pub position: String,
    /// Tag of the model the activations came from.
    pub model: String,
    pub extra: BTreeMap<String, String>,
}

impl ActivationMeta {
    pub fn new(position: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            position: position.into(),
            model: model.into(),
            extra: BTreeMap::new(),
        }
    }

    fn render(&self, targets: bool) -> String {
        let mut out = format!(
            "position={}\nmodel={}\ntargets={}\n",
            self.position,
            self.model,
            u8::from(targets)
        );
        for (k, v) in &self.extra {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    fn parse(text: &str) -> std::result::Result<(Self, bool), String> {
        let mut meta = Self::default();
        let mut targets = false;
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("metadata line without '=': {line:?}"))?;
            match k {
                "position" => meta.position = v.to_owned(),
                "model" => meta.model = v.to_owned(),
                "targets" => targets = v == "1",
                _ => {
                    meta.extra.insert(k.to_owned(), v.to_owned());
                }
            }
        }
        Ok((meta, targets))
    }
}

/// Streaming writer; the row count is patched in on [`finish`](Self::finish).
pub struct ActivationFileWriter {
    out: BufWriter<File>,
    d_model: usize,
    dtype: DType,
    targets: bool,
    rows: u64,
    mask: Vec<bool>,
}

impl ActivationFileWriter {
    pub fn create(
        path: impl AsRef<Path>,
        d_model: usize,
        dtype: DType,
        targets: bool,
        meta: &ActivationMeta,
    ) -> Result<Self> {
        let d32 = u32::try_from(d_model)
            .map_err(|_| SaeError::Contract(format!("D = {d_model} too large")))?;
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(ACTIVATION_MAGIC)?;
        put_u32(&mut out, ACTIVATION_VERSION)?;
        put_u32(&mut out, d32)?;
        put_u8(&mut out, dtype.code())?;
        put_u64(&mut out, 0)?;
        put_string(&mut out, &meta.render(targets))?;
        Ok(Self {
            out,
            d_model,
            dtype,
            targets,
            rows: 0,
            mask: Vec::new(),
        })
    }

    pub fn write_batch(&mut self, batch: &ActivationBatch) -> Result<()> {
        check_dim("batch width", self.d_model, batch.d_model())?;
        if batch.x_out.is_some() != self.targets {
            return Err(SaeError::Contract(
                "batch target presence does not match the file's targets flag".into(),
            ));
        }
        let mut buf = Vec::with_capacity(batch.len() * self.d_model * self.dtype.size() * 2);
        for r in 0..batch.len() {
            self.put_row(&mut buf, batch.x_in.row(r).iter().copied());
            if let Some(out) = &batch.x_out {
                self.put_row(&mut buf, out.row(r).iter().copied());
            }
        }
        self.out.write_all(&buf)?;
        self.mask.extend_from_slice(&batch.valid_mask);
        self.rows += batch.len() as u64;
        Ok(())
    }

    fn put_row(&self, buf: &mut Vec<u8>, vals: impl Iterator<Item = f32>) {
        match self.dtype {
            DType::F32 => vals.for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
            DType::Bf16 => {
                vals.for_each(|v| buf.extend_from_slice(&bf16::from_f32(v).to_le_bytes()))
            }
        }
    }

    /// Append the mask, patch the row count and flush. Returns rows written.
    pub fn finish(mut self) -> Result<u64> {
        let mut packed = vec![0u8; self.mask.len().div_ceil(8)];
        for (r, &v) in self.mask.iter().enumerate() {
            if v {
                packed[r / 8] |= 1 << (r % 8);
            }
        }
        self.out.write_all(&packed)?;
        let mut file = self.out.into_inner().map_err(|e| e.into_error())?;
        file.seek(SeekFrom::Start(ROW_COUNT_OFFSET))?;
        file.write_all(&self.rows.to_le_bytes())?;
        file.flush()?;
        Ok(self.rows)
    }
}

/// Write `batches` to a new file in one go.
pub fn write_activation_file(
    path: impl AsRef<Path>,
    batches: &[ActivationBatch],
    meta: &ActivationMeta,
    dtype: DType,
) -> Result<u64> {
    let first = batches
        .first()
        .ok_or_else(|| SaeError::Contract("need at least one batch to fix D".into()))?;
    let mut w =
        ActivationFileWriter::create(path, first.d_model(), dtype, first.x_out.is_some(), meta)?;
    for b in batches {
        w.write_batch(b)?;
    }
    w.finish()
}

/// Streaming reader over an activation file.
pub struct ActivationFileReader {
    data: BufReader<File>,
    d_model: usize,
    dtype: DType,
    targets: bool,
    rows: u64,
    meta: ActivationMeta,
    mask: Vec<bool>,
    cursor: u64,
    data_start: u64,
}

impl std::fmt::Debug for ActivationFileReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActivationFileReader")
            .field("d_model", &self.d_model)
            .field("dtype", &self.dtype)
            .field("rows", &self.rows)
            .field("meta", &self.meta)
            .finish()
    }
}

impl ActivationFileReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        let mut r = LeReader::new(BufReader::new(file));
        r.magic(ACTIVATION_MAGIC)?;
        let version = r.u32("version")?;
        if version != ACTIVATION_VERSION {
            return Err(SaeError::Parse {
                offset: 4,
                msg: format!("unsupported activation file version {version}"),
            });
        }
        let d_model = r.u32("D")? as usize;
        if d_model == 0 {
            return r.fail("D must be at least 1");
        }
        let dtype = match r.u8("dtype")? {
            0 => DType::F32,
            1 => DType::Bf16,
            other => {
                return Err(SaeError::Parse {
                    offset: 12,
                    msg: format!("unknown dtype code {other}"),
                })
            }
        };
        let rows = r.u64("row count")?;
        let meta_start = r.offset();
        let text = r.string("metadata")?;
        let (meta, targets) = ActivationMeta::parse(&text).map_err(|msg| SaeError::Parse {
            offset: meta_start,
            msg,
        })?;
        let data_start = r.offset();
        let width = d_model * if targets { 2 } else { 1 };
        let row_bytes = (width * dtype.size()) as u64;
        let data_end = data_start + rows * row_bytes;
        let mask_bytes = rows.div_ceil(8);
        if file_len < data_end + mask_bytes {
            return Err(SaeError::Parse {
                offset: file_len,
                msg: format!(
                    "truncated file: header promises {rows} rows ({} bytes) but file has {file_len}",
                    data_end + mask_bytes
                ),
            });
        }
        if file_len > data_end + mask_bytes {
            return Err(SaeError::Parse {
                offset: data_end + mask_bytes,
                msg: "trailing bytes after valid-mask".into(),
            });
        }
        let mut data = r.into_inner();
        data.seek(SeekFrom::Start(data_end))?;
        let mut packed = vec![0u8; mask_bytes as usize];
        data.read_exact(&mut packed)?;
        let mask = (0..rows as usize)
            .map(|i| packed[i / 8] >> (i % 8) & 1 == 1)
            .collect();
        data.seek(SeekFrom::Start(data_start))?;
        Ok(Self {
            data,
            d_model,
            dtype,
            targets,
            rows,
            meta,
            mask,
            cursor: 0,
            data_start,
        })
    }

    pub fn meta(&self) -> &ActivationMeta {
        &self.meta
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Fail unless the file width matches what the consumer was configured for.
    pub fn expect_d_model(&self, consumer: usize) -> Result<()> {
        check_dim(
            "activation file D (consumer vs header)",
            consumer,
            self.d_model,
        )
    }

    /// Restart the stream from the first row.
    pub fn rewind(&mut self) -> Result<()> {
        self.data.seek(SeekFrom::Start(self.data_start))?;
        self.cursor = 0;
        Ok(())
    }

    fn read_values(&mut self, count: usize) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; count * self.dtype.size()];
        self.data.read_exact(&mut raw)?;
        Ok(match self.dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            DType::Bf16 => raw
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
        })
    }

    /// Read everything left into one batch.
    pub fn read_all(&mut self) -> Result<ActivationBatch> {
        let remaining = (self.rows - self.cursor) as usize;
        match self.next_batch(remaining)? {
            Some(b) => Ok(b),
            None => {
                let empty = Array2::zeros((0, self.d_model));
                Ok(if self.targets {
                    ActivationBatch::with_targets(empty.clone(), empty)?
                } else {
                    ActivationBatch::new(empty)
                })
            }
        }
    }
}

impl ActivationSource for ActivationFileReader {
    fn d_model(&self) -> usize {
        self.d_model
    }

    fn has_targets(&self) -> bool {
        self.targets
    }

    fn next_batch(&mut self, n: usize) -> Result<Option<ActivationBatch>> {
        let n = (n as u64).min(self.rows - self.cursor) as usize;
        if n == 0 {
            return Ok(None);
        }
        let d = self.d_model;
        let width = if self.targets { 2 * d } else { d };
        let vals = self.read_values(n * width)?;
        let start = self.cursor as usize;
        self.cursor += n as u64;
        let valid = self.mask[start..start + n].to_vec();
        let batch = if self.targets {
            let all = Array2::from_shape_vec((n, width), vals).expect("sized");
            let x_in = all.slice(ndarray::s![.., ..d]).to_owned();
            let x_out = all.slice(ndarray::s![.., d..]).to_owned();
            ActivationBatch::with_targets(x_in, x_out)?
        } else {
            ActivationBatch::new(Array2::from_shape_vec((n, d), vals).expect("sized"))
        };
        batch.with_mask(valid).map(Some)
    }
}

/// Write one length-prefixed UTF-8 string per activation row.
pub fn write_token_sidecar<S: AsRef<str>>(path: impl AsRef<Path>, tokens: &[S]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in tokens {
        put_string(&mut out, t.as_ref())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_token_sidecar(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut r = LeReader::new(BufReader::new(file));
    let mut tokens = Vec::new();
    while r.offset() < len {
        tokens.push(r.string("token")?);
    }
    Ok(tokens)
}
