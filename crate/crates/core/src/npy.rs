//! Reading and writing arrays in the numpy `.npy` format.
//!
//! Only the two element types used by the library are supported: `<f4` for
//! tensors and `|u1` for masks. Files are written as format version 1.0 with
//! C (row-major) order. Fortran-order files are rejected.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, Tensor};

/// The npy magic string.
pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

const ALIGN: usize = 64;
const GROWTH_DIGITS: usize = 21;

/// Element type stored in an array file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::U8 => "|u1",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }

    fn parse(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "|u1" => Ok(Dtype::U8),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

/// Contents of an array file, by element type.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Tensor<f32>),
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl Header {
    fn dict(&self) -> String {
        let shape = match self.shape.as_slice() {
            [d] => format!("({d},)"),
            dims => format!(
                "({})",
                dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
            ),
        };
        format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.dtype.descr(),
            shape
        )
    }

    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let mut dict = self.dict();
        // numpy reserves room for the first axis to grow to GROWTH_DIGITS
        // digits, which keeps our files byte-identical to np.save output.
        let first = self.shape.first().map_or(1, |d| d.to_string().len());
        dict.extend(std::iter::repeat_n(' ', GROWTH_DIGITS.saturating_sub(first)));
        // magic + version + u16 length + dict + '\n' is padded to ALIGN bytes.
        let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
        let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
        dict.extend(std::iter::repeat_n(' ', pad));
        dict.push('\n');
        w.write_all(MAGIC)?;
        w.write_all(&[1, 0])?;
        w.write_all(&(dict.len() as u16).to_le_bytes())?;
        w.write_all(dict.as_bytes())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 6];
        read_header_bytes(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::MalformedHeader("bad magic string".into()));
        }
        let mut version = [0u8; 2];
        read_header_bytes(r, &mut version)?;
        let len = match version[0] {
            1 => {
                let mut b = [0u8; 2];
                read_header_bytes(r, &mut b)?;
                u16::from_le_bytes(b) as usize
            }
            2 | 3 => {
                let mut b = [0u8; 4];
                read_header_bytes(r, &mut b)?;
                u32::from_le_bytes(b) as usize
            }
            v => {
                return Err(Error::MalformedHeader(format!(
                    "unsupported format version {v}.{}",
                    version[1]
                )))
            }
        };
        let mut raw = vec![0u8; len];
        read_header_bytes(r, &mut raw)?;
        let text = std::str::from_utf8(&raw)
            .map_err(|_| Error::MalformedHeader("header is not valid text".into()))?;
        parse_dict(text)
    }
}

fn read_header_bytes<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::MalformedHeader("file ends inside header".into()),
        _ => Error::Io(e),
    })
}

#[derive(Debug, PartialEq)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

struct DictParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl DictParser<'_> {
    fn err<T>(&self, what: &str) -> Result<T> {
        Err(Error::MalformedHeader(format!("{what} at byte {}", self.pos)))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&format!("expected '{}'", c as char))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return self.err("expected string"),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.s.len() {
            return self.err("unterminated string");
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn integer(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .map_or_else(|| self.err("expected integer"), Ok)
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'' | b'"') => self.string().map(Value::Str),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    if self.peek() == Some(b')') {
                        self.pos += 1;
                        break;
                    }
                    dims.push(self.integer()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return self.err("expected ',' or ')' in shape"),
                    }
                }
                Ok(Value::Tuple(dims))
            }
            _ => {
                let rest = &self.s[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Value::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Value::Bool(false))
                } else {
                    self.err("unrecognized value")
                }
            }
        }
    }
}

fn parse_dict(text: &str) -> Result<Header> {
    let mut p = DictParser {
        s: text.as_bytes(),
        pos: 0,
    };
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    p.expect(b'{')?;
    loop {
        if p.peek() == Some(b'}') {
            break;
        }
        let key = p.string()?;
        p.expect(b':')?;
        let value = p.value()?;
        match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr = Some(s),
            ("fortran_order", Value::Bool(b)) => fortran = Some(b),
            ("shape", Value::Tuple(t)) => shape = Some(t),
            (k, v) => {
                return Err(Error::MalformedHeader(format!(
                    "unexpected entry {k:?}: {v:?}"
                )))
            }
        }
        match p.peek() {
            Some(b',') => p.pos += 1,
            Some(b'}') => {}
            _ => return p.err("expected ',' or '}'"),
        }
    }
    let (Some(descr), Some(fortran), Some(shape)) = (descr, fortran, shape) else {
        return Err(Error::MalformedHeader(
            "header must define 'descr', 'fortran_order' and 'shape'".into(),
        ));
    };
    if fortran {
        return Err(Error::MalformedHeader("fortran_order=True is not supported".into()));
    }
    Ok(Header {
        dtype: Dtype::parse(&descr)?,
        shape,
    })
}

/// Reads an array of either supported element type.
pub fn read_array<R: Read>(r: &mut R) -> Result<ArrayData> {
    let header = Header::read(r)?;
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
    let expected = count * header.dtype.size();
    let mut payload = Vec::with_capacity(expected);
    r.take(expected as u64).read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    match header.dtype {
        Dtype::F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Tensor::new(&header.shape, data).map(ArrayData::F32)
        }
        Dtype::U8 => Ok(ArrayData::U8 {
            shape: header.shape,
            data: payload,
        }),
    }
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor<f32>) -> io::Result<()> {
    Header {
        dtype: Dtype::F32,
        shape: t.shape().to_vec(),
    }
    .write(w)?;
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn write_mask<W: Write>(w: &mut W, m: &BinaryMask) -> io::Result<()> {
    Header {
        dtype: Dtype::U8,
        shape: vec![m.height(), m.width()],
    }
    .write(w)?;
    w.write_all(m.data())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(e).at_path(path))
}

/// Reads a float tensor. `|u1` files are widened to `0.0`/`1.0`-style floats.
pub fn read_array_file(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let data = read_array(&mut open(path)?).map_err(|e| e.at_path(path))?;
    match data {
        ArrayData::F32(t) => Ok(t),
        ArrayData::U8 { shape, data } => {
            Tensor::new(&shape, data.into_iter().map(f32::from).collect()).map_err(|e| e.at_path(path))
        }
    }
}

/// Reads a rank-2 `|u1` mask whose values are all 0 or 1.
pub fn read_mask_file(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let mask = match read_array(&mut open(path)?) {
        Ok(ArrayData::U8 { shape, data }) => match shape.as_slice() {
            [h, w] => BinaryMask::new(*h, *w, data),
            _ => Err(Error::InvalidShape {
                shape,
                reason: "mask files must be rank 2".into(),
            }),
        },
        Ok(ArrayData::F32(_)) => Err(Error::UnsupportedDtype(
            "<f4 (mask files must be |u1)".into(),
        )),
        Err(e) => Err(e),
    };
    mask.map_err(|e| e.at_path(path))
}

pub fn write_array_file(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::Io(e).at_path(path))?);
    write_tensor(&mut w, t)
        .and_then(|_| w.flush())
        .map_err(|e| Error::Io(e).at_path(path))
}

pub fn write_mask_file(path: impl AsRef<Path>, m: &BinaryMask) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::Io(e).at_path(path))?);
    write_mask(&mut w, m)
        .and_then(|_| w.flush())
        .map_err(|e| Error::Io(e).at_path(path))
}
