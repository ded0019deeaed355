//! Reading and writing the numpy npy format (version 1.0).
//!
//! Only little-endian, C-order arrays of `u8` (`|u1`), `i64` (`<i8`) and
//! `f64` (`<f8`) are supported.

use std::fmt::Write as _;

/// The npy magic prefix.
pub const MAGIC: [u8; 6] = *b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NpyError {
    #[error("bad npy magic prefix")]
    BadMagic,
    #[error("unsupported npy version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("fortran-order arrays are not supported")]
    FortranOrder,
    #[error("malformed npy header: {0}")]
    BadHeader(String),
    #[error("truncated npy payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    U8(Vec<u8>),
    I64(Vec<i64>),
    F64(Vec<f64>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::U8(v) => v.len(),
            NpyData::I64(v) => v.len(),
            NpyData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn descr(&self) -> &'static str {
        match self {
            NpyData::U8(_) => "|u1",
            NpyData::I64(_) => "<i8",
            NpyData::F64(_) => "<f8",
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            NpyData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::I64(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::F64(v) => v.clone(),
        }
    }
}

/// A row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self, NpyError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NpyError::BadHeader(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(NpyArray { shape, data })
    }
}

fn format_shape(shape: &[usize]) -> String {
    match shape {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        dims => {
            let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    }
}

/// Serializes an array as npy v1.0.
pub fn write_npy(array: &NpyArray) -> Vec<u8> {
    let mut header = String::new();
    let _ = write!(
        header,
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        array.data.descr(),
        format_shape(&array.shape)
    );
    // pad with spaces so that the data section starts on a 64-byte boundary
    let unpadded = PREAMBLE_LEN + header.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', padding));
    header.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + array.data.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &array.data {
        NpyData::U8(v) => out.extend_from_slice(v),
        NpyData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Minimal parser for the Python dict literal in the header.
struct DictParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> DictParser<'a> {
    fn err(&self, what: &str) -> NpyError {
        NpyError::BadHeader(format!("{what} at offset {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), NpyError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn string(&mut self) -> Result<String, NpyError> {
        self.skip_ws();
        let quote = match self.s.get(self.pos) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected a string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return Err(self.err("unterminated string"));
        }
        let value = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(value)
    }

    fn word(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.s[start..self.pos]).into_owned()
    }

    fn tuple(&mut self) -> Result<Vec<usize>, NpyError> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            if self.eat(b')') {
                return Ok(dims);
            }
            let w = self.word();
            let dim = w.trim_end_matches('L').parse::<usize>().map_err(|_| self.err("bad shape entry"))?;
            dims.push(dim);
            if !self.eat(b',') {
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }

    fn parse(mut self) -> Result<HeaderDict, NpyError> {
        self.expect(b'{')?;
        let (mut descr, mut fortran, mut shape) = (None, None, None);
        loop {
            if self.eat(b'}') {
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            match key.as_str() {
                "descr" => descr = Some(self.string()?),
                "fortran_order" => {
                    fortran = Some(match self.word().as_str() {
                        "True" => true,
                        "False" => false,
                        _ => return Err(self.err("fortran_order must be True or False")),
                    })
                }
                "shape" => shape = Some(self.tuple()?),
                other => return Err(NpyError::BadHeader(format!("unexpected key {other:?}"))),
            }
            if !self.eat(b',') {
                self.expect(b'}')?;
                break;
            }
        }
        Ok(HeaderDict {
            descr: descr.ok_or_else(|| NpyError::BadHeader("missing descr".into()))?,
            fortran_order: fortran.ok_or_else(|| NpyError::BadHeader("missing fortran_order".into()))?,
            shape: shape.ok_or_else(|| NpyError::BadHeader("missing shape".into()))?,
        })
    }
}

/// Parses npy v1.0 bytes.
pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray, NpyError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(NpyError::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(NpyError::Truncated { expected: PREAMBLE_LEN, found: bytes.len() });
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(NpyError::UnsupportedVersion(major, minor));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(NpyError::Truncated { expected: data_start, found: bytes.len() });
    }
    let dict = DictParser { s: &bytes[PREAMBLE_LEN..data_start], pos: 0 }.parse()?;
    if dict.fortran_order {
        return Err(NpyError::FortranOrder);
    }
    let count: usize = dict.shape.iter().product();
    let width = match dict.descr.as_str() {
        "|u1" | "<u1" | "u1" => 1,
        "<i8" | "<f8" => 8,
        other => return Err(NpyError::UnsupportedDtype(other.to_string())),
    };
    let payload = &bytes[data_start..];
    let expected = count * width;
    if payload.len() < expected {
        return Err(NpyError::Truncated { expected, found: payload.len() });
    }
    let payload = &payload[..expected];
    let data = match width {
        1 => NpyData::U8(payload.to_vec()),
        _ => {
            let words = payload.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).expect("chunk of 8"));
            if dict.descr == "<i8" {
                NpyData::I64(words.map(i64::from_le_bytes).collect())
            } else {
                NpyData::F64(words.map(f64::from_le_bytes).collect())
            }
        }
    };
    Ok(NpyArray { shape: dict.shape, data })
}
