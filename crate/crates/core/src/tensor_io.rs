//! Binary dump format for token embeddings and per-layer activations.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! header : magic "SOCMDMP1" | u32 version = 1 | u32 record_count | u32 payload_kind (0 token, 1 layer)
//! token  : u32 text_id | u32 n | u32 d | n*d f32 (token-major)
//! layer  : u32 text_id | u32 layer_index | u32 n | u32 d | u32 head_count
//!          | H, attn_out, X_out (each n*d f32, token-major)
//!          | per head: n*n f32 attention (row-major)
//!                      u32 rows | u32 cols | rows*cols f32  (value projection, row-major)
//!                      u32 rows | u32 cols | rows*cols f32  (output projection, row-major)
//! ```
//!
//! Values are stored as `f32` and promoted to `f64` on read.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SOCMDMP1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Tolerance on attention row sums.
pub const ROW_SUM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Token,
    Layer,
}

impl PayloadKind {
    fn code(self) -> u32 {
        match self {
            PayloadKind::Token => 0,
            PayloadKind::Layer => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(PayloadKind::Token),
            1 => Ok(PayloadKind::Layer),
            other => Err(Error::Format(format!("unknown payload kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpHeader {
    pub version: u32,
    pub record_count: u32,
    pub payload_kind: PayloadKind,
}

/// One text's token embeddings; column `j` is token `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub text_id: u32,
    values: DMatrix<f64>,
}

impl TokenMatrix {
    pub fn new(text_id: u32, values: DMatrix<f64>) -> Result<Self> {
        check_matrix("token matrix", &values)?;
        Ok(TokenMatrix { text_id, values })
    }

    /// Builds a `d x n` matrix from `n` token vectors of equal length.
    pub fn from_columns(text_id: u32, columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.len();
        if n == 0 {
            return Err(Error::Validation("token list must have n >= 1".into()));
        }
        let d = columns[0].len();
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::Shape("token vectors differ in length".into()));
        }
        let values = DMatrix::from_fn(d, n, |i, j| columns[j][i]);
        TokenMatrix::new(text_id, values)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }
}

/// Attention weights and projection slices for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadRecord {
    /// `n x n`, row-stochastic.
    pub attention: DMatrix<f64>,
    /// `head_dim x d`.
    pub w_v: DMatrix<f64>,
    /// `d x head_dim`.
    pub w_o: DMatrix<f64>,
}

impl HeadRecord {
    /// The head's effective `d x d` map `W_o * W_v`.
    pub fn w_ov(&self) -> DMatrix<f64> {
        &self.w_o * &self.w_v
    }
}

/// Per-layer activations for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDumpRecord {
    pub text_id: u32,
    pub layer_index: u32,
    /// Input hidden states, `d x n`.
    pub h: DMatrix<f64>,
    /// Attention branch output after the output projection, `d x n`.
    pub attn_out: DMatrix<f64>,
    /// Layer output, `d x n`.
    pub x_out: DMatrix<f64>,
    pub heads: Vec<HeadRecord>,
}

impl LayerDumpRecord {
    /// Residual output `Y = H + attn_out`.
    pub fn residual(&self) -> DMatrix<f64> {
        &self.h + &self.attn_out
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn len(&self) -> usize {
        self.h.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.h.ncols() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let (d, n) = self.h.shape();
        check_matrix("H", &self.h)?;
        for (name, m) in [("attn_out", &self.attn_out), ("X_out", &self.x_out)] {
            if m.shape() != (d, n) {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {d}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            check_matrix(name, m)?;
        }
        if self.heads.is_empty() {
            return Err(Error::Validation("layer record has no heads".into()));
        }
        for (k, head) in self.heads.iter().enumerate() {
            if head.attention.shape() != (n, n) {
                return Err(Error::Shape(format!(
                    "head {k} attention is {}x{}, expected {n}x{n}",
                    head.attention.nrows(),
                    head.attention.ncols()
                )));
            }
            check_finite(&format!("head {k} attention"), &head.attention)?;
            check_row_stochastic(k, &head.attention)?;
            let (hv, dv) = head.w_v.shape();
            let (do_, ho) = head.w_o.shape();
            if dv != d || do_ != d || hv != ho {
                return Err(Error::Shape(format!(
                    "head {k} projections W_v {hv}x{dv}, W_o {do_}x{ho} do not compose for d={d}"
                )));
            }
            check_finite(&format!("head {k} W_v"), &head.w_v)?;
            check_finite(&format!("head {k} W_o"), &head.w_o)?;
        }
        Ok(())
    }
}

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "{name} has a non-finite entry at flat index {pos}"
        )));
    }
    Ok(())
}

fn check_matrix(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 {
        return Err(Error::Validation(format!("{name} must have d >= 1")));
    }
    if m.ncols() == 0 {
        return Err(Error::Validation(format!("{name} must have n >= 1")));
    }
    check_finite(name, m)
}

fn check_row_stochastic(head: usize, a: &DMatrix<f64>) -> Result<()> {
    for (i, row) in a.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Validation(format!(
                "head {head} attention row {i} sums to {sum}"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// writing

fn to_f32(v: f64) -> Result<f32> {
    let x = v as f32;
    if !x.is_finite() {
        return Err(Error::Validation(format!("{v} is not representable as f32")));
    }
    Ok(x)
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{what} {v} exceeds u32")))
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn new(kind: PayloadKind, count: usize) -> Result<Self> {
        let mut enc = Encoder { buf: Vec::new() };
        enc.buf.extend_from_slice(MAGIC);
        enc.u32(VERSION);
        enc.u32(dim_u32(count, "record count")?);
        enc.u32(kind.code());
        Ok(enc)
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.buf.extend_from_slice(&to_f32(v)?.to_le_bytes());
        Ok(())
    }

    /// Column-major iteration of a `d x n` matrix is token-major order.
    fn token_major(&mut self, m: &DMatrix<f64>) -> Result<()> {
        m.iter().try_for_each(|&v| self.f64(v))
    }

    fn row_major(&mut self, m: &DMatrix<f64>) -> Result<()> {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)])?;
            }
        }
        Ok(())
    }

    fn block(&mut self, m: &DMatrix<f64>) -> Result<()> {
        self.u32(dim_u32(m.nrows(), "rows")?);
        self.u32(dim_u32(m.ncols(), "cols")?);
        self.row_major(m)
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_token_dump(records: &[TokenMatrix]) -> Result<Vec<u8>> {
    let mut enc = Encoder::new(PayloadKind::Token, records.len())?;
    for r in records {
        check_matrix("token matrix", &r.values)?;
        enc.u32(r.text_id);
        enc.u32(dim_u32(r.len(), "n")?);
        enc.u32(dim_u32(r.dim(), "d")?);
        enc.token_major(&r.values)?;
    }
    Ok(enc.buf)
}

pub fn write_token_dump(records: &[TokenMatrix], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_token_dump(records)?;
    write_bytes(path.as_ref(), &bytes)
}

pub fn encode_layer_dump(records: &[LayerDumpRecord]) -> Result<Vec<u8>> {
    let mut enc = Encoder::new(PayloadKind::Layer, records.len())?;
    for r in records {
        r.validate()?;
        enc.u32(r.text_id);
        enc.u32(r.layer_index);
        enc.u32(dim_u32(r.len(), "n")?);
        enc.u32(dim_u32(r.dim(), "d")?);
        enc.u32(dim_u32(r.heads.len(), "head count")?);
        enc.token_major(&r.h)?;
        enc.token_major(&r.attn_out)?;
        enc.token_major(&r.x_out)?;
        for head in &r.heads {
            enc.row_major(&head.attention)?;
            enc.block(&head.w_v)?;
            enc.block(&head.w_o)?;
        }
    }
    Ok(enc.buf)
}

pub fn write_layer_dump(records: &[LayerDumpRecord], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_layer_dump(records)?;
    write_bytes(path.as_ref(), &bytes)
}

// ---------------------------------------------------------------------------
// reading

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn truncated(&self, what: &str, need: usize) -> Error {
        Error::Corruption {
            offset: self.pos,
            reason: format!(
                "truncated {what}: need {need} bytes, {} remain",
                self.bytes.len() - self.pos
            ),
        }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.truncated(what, len));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads `count` f32 values, checking the byte budget before allocating.
    fn f32s(&mut self, count: u64, what: &str) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(4)
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| Error::Corruption {
                offset: self.pos,
                reason: format!("{what} size overflows"),
            })?;
        let start = self.pos;
        let raw = self.take(len, what)?;
        let mut out = Vec::with_capacity(raw.len() / 4);
        for (k, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite {what} value at byte offset {}",
                    start + 4 * k
                )));
            }
            out.push(v as f64);
        }
        Ok(out)
    }

    fn token_major(&mut self, d: usize, n: usize, what: &str) -> Result<DMatrix<f64>> {
        let data = self.f32s(d as u64 * n as u64, what)?;
        Ok(DMatrix::from_vec(d, n, data))
    }

    fn row_major(&mut self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let data = self.f32s(rows as u64 * cols as u64, what)?;
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn block(&mut self, what: &str) -> Result<DMatrix<f64>> {
        let rows = self.u32(what)? as usize;
        let cols = self.u32(what)? as usize;
        self.row_major(rows, cols, what)
    }
}

pub fn decode_header(bytes: &[u8]) -> Result<DumpHeader> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        return Err(Error::Corruption {
            offset: bytes.len(),
            reason: "truncated header".into(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut dec = Decoder { bytes, pos: 8 };
    let version = dec.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let record_count = dec.u32("record count")?;
    let payload_kind = PayloadKind::from_code(dec.u32("payload kind")?)?;
    Ok(DumpHeader {
        version,
        record_count,
        payload_kind,
    })
}

fn expect_kind(header: &DumpHeader, kind: PayloadKind) -> Result<()> {
    if header.payload_kind != kind {
        return Err(Error::Format(format!(
            "expected {kind:?} payload, found {:?}",
            header.payload_kind
        )));
    }
    Ok(())
}

fn nonzero(v: u32, what: &str, offset: usize) -> Result<usize> {
    if v == 0 {
        return Err(Error::Validation(format!(
            "{what} = 0 in record at byte offset {offset}"
        )));
    }
    Ok(v as usize)
}

pub fn decode_token_dump(bytes: &[u8]) -> Result<Vec<TokenMatrix>> {
    let header = decode_header(bytes)?;
    expect_kind(&header, PayloadKind::Token)?;
    let mut dec = Decoder {
        bytes,
        pos: HEADER_LEN,
    };
    let mut out = Vec::new();
    for _ in 0..header.record_count {
        let start = dec.pos;
        let text_id = dec.u32("text_id")?;
        let n = nonzero(dec.u32("n")?, "n", start)?;
        let d = nonzero(dec.u32("d")?, "d", start)?;
        let values = dec.token_major(d, n, "token values")?;
        out.push(TokenMatrix { text_id, values });
    }
    trailing(&dec)?;
    Ok(out)
}

pub fn decode_layer_dump(bytes: &[u8]) -> Result<Vec<LayerDumpRecord>> {
    let header = decode_header(bytes)?;
    expect_kind(&header, PayloadKind::Layer)?;
    let mut dec = Decoder {
        bytes,
        pos: HEADER_LEN,
    };
    let mut out = Vec::new();
    for _ in 0..header.record_count {
        let start = dec.pos;
        let text_id = dec.u32("text_id")?;
        let layer_index = dec.u32("layer_index")?;
        let n = nonzero(dec.u32("n")?, "n", start)?;
        let d = nonzero(dec.u32("d")?, "d", start)?;
        let head_count = nonzero(dec.u32("head_count")?, "head_count", start)?;
        let h = dec.token_major(d, n, "H")?;
        let attn_out = dec.token_major(d, n, "attn_out")?;
        let x_out = dec.token_major(d, n, "X_out")?;
        let mut heads = Vec::new();
        for _ in 0..head_count {
            let attention = dec.row_major(n, n, "attention")?;
            let w_v = dec.block("W_v")?;
            let w_o = dec.block("W_o")?;
            heads.push(HeadRecord { attention, w_v, w_o });
        }
        let record = LayerDumpRecord {
            text_id,
            layer_index,
            h,
            attn_out,
            x_out,
            heads,
        };
        record.validate()?;
        out.push(record);
    }
    trailing(&dec)?;
    Ok(out)
}

fn trailing(dec: &Decoder<'_>) -> Result<()> {
    if dec.pos != dec.bytes.len() {
        return Err(Error::Corruption {
            offset: dec.pos,
            reason: format!("{} trailing bytes", dec.bytes.len() - dec.pos),
        });
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_token_dump(path: impl AsRef<Path>) -> Result<Vec<TokenMatrix>> {
    decode_token_dump(&read_file(path.as_ref())?)
}

pub fn read_layer_dump(path: impl AsRef<Path>) -> Result<Vec<LayerDumpRecord>> {
    decode_layer_dump(&read_file(path.as_ref())?)
}
