//! NPY v1.0 reader/writer for 2-D little-endian `f4`/`f8` arrays in C order.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE: usize = 10;
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Parsed NPY header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpyHeader {
    pub dtype: Dtype,
    pub shape: (usize, usize),
    /// Byte offset of the payload.
    pub data_offset: usize,
}

/// Embeddings widened to `f64`, with whether rows were L2-normalized on load.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub matrix: Array2<f64>,
    pub normalized: bool,
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

/// Parses the magic, version and header dict at the start of `bytes`.
pub fn parse_header(bytes: &[u8], path: &Path) -> Result<NpyHeader> {
    if bytes.len() < PREAMBLE {
        return Err(format_err(path, bytes.len(), "file ends inside the NPY preamble"));
    }
    if &bytes[..6] != MAGIC {
        return Err(format_err(path, 0, "missing \\x93NUMPY magic"));
    }
    if bytes[6..8] != [1, 0] {
        return Err(format_err(
            path,
            6,
            format!("unsupported NPY version {}.{} (only 1.0)", bytes[6], bytes[7]),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_offset = PREAMBLE + header_len;
    if bytes.len() < data_offset {
        return Err(format_err(
            path,
            bytes.len(),
            format!("header declares {header_len} bytes but the file ends first"),
        ));
    }
    let text = std::str::from_utf8(&bytes[PREAMBLE..data_offset])
        .map_err(|e| format_err(path, PREAMBLE + e.valid_up_to(), "header is not ASCII"))?;
    let dict = HeaderDict::parse(text).map_err(|(pos, msg)| format_err(path, PREAMBLE + pos, msg))?;

    let dtype = match dict.descr.as_str() {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => {
            return Err(format_err(
                path,
                PREAMBLE,
                format!("dtype '{other}' is not supported (expected '<f4' or '<f8')"),
            ))
        }
    };
    if dict.fortran_order {
        return Err(format_err(path, PREAMBLE, "Fortran-ordered arrays are not supported"));
    }
    let shape = match dict.shape.as_slice() {
        &[rows, cols] => (rows, cols),
        dims => {
            return Err(format_err(
                path,
                PREAMBLE,
                format!("expected a 2-D array, found rank {}", dims.len()),
            ))
        }
    };
    Ok(NpyHeader {
        dtype,
        shape,
        data_offset,
    })
}

/// Reads only the header of an NPY file.
pub fn read_header(path: &Path) -> Result<NpyHeader> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = vec![0u8; PREAMBLE];
    let got = read_up_to(&mut file, &mut head).map_err(|e| Error::io(path, e))?;
    head.truncate(got);
    if got == PREAMBLE && &head[..6] == MAGIC {
        let header_len = u16::from_le_bytes([head[8], head[9]]) as usize;
        let mut rest = vec![0u8; header_len];
        let got = read_up_to(&mut file, &mut rest).map_err(|e| Error::io(path, e))?;
        head.extend_from_slice(&rest[..got]);
    }
    let header = parse_header(&head, path)?;
    let expected = header.data_offset as u64 + payload_len(&header) as u64;
    let actual = file.metadata().map_err(|e| Error::io(path, e))?.len();
    check_length(path, expected, actual)?;
    Ok(header)
}

fn read_up_to(file: &mut fs::File, buf: &mut [u8]) -> std::io::Result<usize> {
    use std::io::Read;
    let mut filled = 0;
    while filled < buf.len() {
        match file.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

fn payload_len(h: &NpyHeader) -> usize {
    h.shape.0 * h.shape.1 * h.dtype.width()
}

fn check_length(path: &Path, expected: u64, actual: u64) -> Result<()> {
    if actual < expected {
        return Err(format_err(
            path,
            actual as usize,
            format!("payload truncated: expected {expected} bytes in total, found {actual}"),
        ));
    }
    if actual > expected {
        return Err(format_err(
            path,
            expected as usize,
            format!("{} unexpected trailing bytes after the payload", actual - expected),
        ));
    }
    Ok(())
}

/// Decodes a whole NPY image held in memory, widening to `f64`.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let header = parse_header(bytes, path)?;
    let expected = header.data_offset + payload_len(&header);
    check_length(path, expected as u64, bytes.len() as u64)?;
    let data = &bytes[header.data_offset..];
    let values: Vec<f64> = match header.dtype {
        Dtype::F32 => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Ok(Array2::from_shape_vec(header.shape, values).expect("length checked"))
}

/// Reads the raw `f32` payload of a `<f4` file without widening.
pub fn read_f32(path: &Path) -> Result<Array2<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes, path)?;
    if header.dtype != Dtype::F32 {
        return Err(format_err(path, PREAMBLE, "expected dtype '<f4'"));
    }
    check_length(path, (header.data_offset + payload_len(&header)) as u64, bytes.len() as u64)?;
    let values = bytes[header.data_offset..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Array2::from_shape_vec(header.shape, values).expect("length checked"))
}

/// Loads an embedding file, checks its width, and optionally L2-normalizes
/// its rows (zero rows are left as they are).
pub fn load_embeddings(path: &Path, expect_dim: Option<usize>, normalize: bool) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut matrix = decode(&bytes, path)?;
    if let Some(d) = expect_dim {
        if matrix.ncols() != d {
            return Err(Error::Shape(format!(
                "{}: expected {d} columns, found {}",
                path.display(),
                matrix.ncols()
            )));
        }
    }
    if matrix.ncols() == 0 {
        return Err(Error::Shape(format!("{}: embeddings have zero columns", path.display())));
    }
    if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
        let d = matrix.ncols();
        return Err(Error::InvalidInput(format!(
            "{}: non-finite value at row {}, column {}",
            path.display(),
            pos / d,
            pos % d
        )));
    }
    if normalize {
        for mut row in matrix.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
    Ok(EmbeddingMatrix {
        matrix,
        normalized: normalize,
    })
}

fn encode_header(dtype: Dtype, shape: (usize, usize)) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}, {}), }}",
        dtype.descr(),
        shape.0,
        shape.1
    );
    let unpadded = PREAMBLE + dict.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    let header_len = dict.len() + padding + 1;
    let mut out = Vec::with_capacity(PREAMBLE + header_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', padding));
    out.push(b'\n');
    out
}

pub fn write_f64(path: &Path, a: &Array2<f64>) -> Result<()> {
    let mut out = encode_header(Dtype::F64, a.dim());
    out.reserve(a.len() * 8);
    for v in a.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_f32(path: &Path, a: &Array2<f32>) -> Result<()> {
    let mut out = encode_header(Dtype::F32, a.dim());
    out.reserve(a.len() * 4);
    for v in a.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// The three keys of an NPY header dict.
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    /// Parses `{'descr': '<f4', 'fortran_order': False, 'shape': (3, 4), }`.
    /// Errors carry the byte position within the header text.
    fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut p = Cursor { s: text.as_bytes(), pos: 0 };
        p.skip_ws();
        p.expect(b'{')?;
        let (mut descr, mut fortran, mut shape) = (None, None, None);
        loop {
            p.skip_ws();
            if p.peek() == Some(b'}') {
                p.pos += 1;
                break;
            }
            let key_pos = p.pos;
            let key = p.string()?;
            p.skip_ws();
            p.expect(b':')?;
            p.skip_ws();
            match key.as_str() {
                "descr" => descr = Some(p.string()?),
                "fortran_order" => fortran = Some(p.boolean()?),
                "shape" => shape = Some(p.tuple()?),
                other => return Err((key_pos, format!("unexpected header key '{other}'"))),
            }
            p.skip_ws();
            match p.peek() {
                Some(b',') => p.pos += 1,
                Some(b'}') => {}
                _ => return Err((p.pos, "expected ',' or '}' in header dict".into())),
            }
        }
        p.skip_ws();
        if p.pos != text.len() {
            return Err((p.pos, "trailing characters after header dict".into()));
        }
        let missing = |k: &str| (0, format!("header dict lacks '{k}'"));
        Ok(Self {
            descr: descr.ok_or_else(|| missing("descr"))?,
            fortran_order: fortran.ok_or_else(|| missing("fortran_order"))?,
            shape: shape.ok_or_else(|| missing("shape"))?,
        })
    }
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\n' | b'\t' | b'\r')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> std::result::Result<(), (usize, String)> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err((self.pos, format!("expected '{}'", c as char)))
        }
    }

    fn string(&mut self) -> std::result::Result<String, (usize, String)> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err((self.pos, "expected a quoted string".into())),
        };
        let start = self.pos + 1;
        let end = self.s[start..]
            .iter()
            .position(|&c| c == quote)
            .ok_or((start, "unterminated string".to_string()))?;
        self.pos = start + end + 1;
        Ok(String::from_utf8_lossy(&self.s[start..start + end]).into_owned())
    }

    fn boolean(&mut self) -> std::result::Result<bool, (usize, String)> {
        for (word, value) in [("True", true), ("False", false)] {
            if self.s[self.pos..].starts_with(word.as_bytes()) {
                self.pos += word.len();
                return Ok(value);
            }
        }
        Err((self.pos, "expected True or False".into()))
    }

    fn tuple(&mut self) -> std::result::Result<Vec<usize>, (usize, String)> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b')') => {
                    self.pos += 1;
                    return Ok(dims);
                }
                Some(b'0'..=b'9') => {
                    let start = self.pos;
                    while matches!(self.peek(), Some(b'0'..=b'9')) {
                        self.pos += 1;
                    }
                    let digits = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
                    dims.push(digits.parse().map_err(|_| (start, "dimension overflows".to_string()))?);
                    self.skip_ws();
                    if self.peek() == Some(b',') {
                        self.pos += 1;
                    }
                }
                _ => return Err((self.pos, "expected a dimension or ')'".into())),
            }
        }
    }
}
