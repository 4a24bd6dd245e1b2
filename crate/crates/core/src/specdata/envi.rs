//! ENVI header + raw payload reading and writing, plus 8-bit mask files
//! (single-band ENVI and binary PGM).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use super::cube::{check_wavelengths, default_class_name, HyperCube, Interleave, LabelMask, UNLABELED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I16,
    I32,
    F32,
    F64,
    U16,
    U32,
    I64,
    U64,
}

impl DataType {
    pub fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            1 => DataType::U8,
            2 => DataType::I16,
            3 => DataType::I32,
            4 => DataType::F32,
            5 => DataType::F64,
            12 => DataType::U16,
            13 => DataType::U32,
            14 => DataType::I64,
            15 => DataType::U64,
            other => return Err(Error::UnsupportedDataType(other)),
        })
    }

    pub fn code(self) -> u32 {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::I32 => 3,
            DataType::F32 => 4,
            DataType::F64 => 5,
            DataType::U16 => 12,
            DataType::U32 => 13,
            DataType::I64 => 14,
            DataType::U64 => 15,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 | DataType::U16 => 2,
            DataType::I32 | DataType::U32 | DataType::F32 => 4,
            DataType::F64 | DataType::I64 | DataType::U64 => 8,
        }
    }

    fn decode(self, b: &[u8], big_endian: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                if big_endian {
                    <$t>::from_be_bytes(a) as f64
                } else {
                    <$t>::from_le_bytes(a) as f64
                }
            }};
        }
        match self {
            DataType::U8 => b[0] as f64,
            DataType::I16 => rd!(i16, 2),
            DataType::U16 => rd!(u16, 2),
            DataType::I32 => rd!(i32, 4),
            DataType::U32 => rd!(u32, 4),
            DataType::F32 => rd!(f32, 4),
            DataType::F64 => rd!(f64, 8),
            DataType::I64 => rd!(i64, 8),
            DataType::U64 => rd!(u64, 8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

/// Parsed ENVI header. Keys this crate does not interpret are kept verbatim
/// in `extra`, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnviHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub data_type: DataType,
    pub interleave: Interleave,
    pub byte_order: ByteOrder,
    pub header_offset: usize,
    pub wavelengths: Option<Vec<f64>>,
    pub extra: Vec<(String, String)>,
}

fn normalize_key(k: &str) -> String {
    k.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase()
}

/// Splits a brace-enclosed list into trimmed items.
pub fn parse_list(value: &str) -> Vec<String> {
    let v = value.trim();
    let inner = v
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .unwrap_or(v);
    inner
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_count(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse::<usize>()
        .map_err(|_| Error::Header(format!("`{key}` is not a count: {v:?}")))
}

impl EnviHeader {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines
            .by_ref()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .ok_or_else(|| Error::Header("empty header".into()))?;
        if !first.eq_ignore_ascii_case("envi") {
            return Err(Error::Header(format!("missing ENVI magic, found {first:?}")));
        }

        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut open: Option<(String, String)> = None;
        for raw in lines {
            if let Some((key, mut value)) = open.take() {
                value.push(' ');
                value.push_str(raw.trim());
                if raw.contains('}') {
                    pairs.push((key, value));
                } else {
                    open = Some((key, value));
                }
                continue;
            }
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Header(format!("expected `key = value`, found {line:?}")))?;
            let key = normalize_key(k);
            if key.is_empty() {
                return Err(Error::Header(format!("empty key in {line:?}")));
            }
            let value = v.trim().to_string();
            if value.starts_with('{') && !value.contains('}') {
                open = Some((key, value));
            } else {
                pairs.push((key, value));
            }
        }
        if let Some((key, _)) = open {
            return Err(Error::Header(format!("unterminated list for `{key}`")));
        }

        let mut samples = None;
        let mut lines_n = None;
        let mut bands = None;
        let mut data_type = None;
        let mut interleave = Interleave::Bsq;
        let mut byte_order = ByteOrder::Little;
        let mut header_offset = 0;
        let mut wavelengths = None;
        let mut extra = Vec::new();
        for (key, value) in pairs {
            match key.as_str() {
                "samples" => samples = Some(parse_count(&key, &value)?),
                "lines" => lines_n = Some(parse_count(&key, &value)?),
                "bands" => bands = Some(parse_count(&key, &value)?),
                "header offset" => header_offset = parse_count(&key, &value)?,
                "data type" => {
                    let code = value
                        .trim()
                        .parse::<u32>()
                        .map_err(|_| Error::Header(format!("bad data type {value:?}")))?;
                    data_type = Some(DataType::from_code(code)?);
                }
                "interleave" => {
                    interleave = Interleave::parse(&value)
                        .ok_or_else(|| Error::Header(format!("unknown interleave {value:?}")))?
                }
                "byte order" => {
                    byte_order = match value.trim() {
                        "0" => ByteOrder::Little,
                        "1" => ByteOrder::Big,
                        other => return Err(Error::Header(format!("bad byte order {other:?}"))),
                    }
                }
                "wavelength" => {
                    let wl = parse_list(&value)
                        .iter()
                        .map(|s| {
                            s.parse::<f64>()
                                .map_err(|_| Error::Header(format!("bad wavelength {s:?}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    wavelengths = Some(wl);
                }
                _ => extra.push((key, value)),
            }
        }
        let missing = |k: &str| Error::Header(format!("missing `{k}`"));
        let hdr = EnviHeader {
            samples: samples.ok_or_else(|| missing("samples"))?,
            lines: lines_n.ok_or_else(|| missing("lines"))?,
            bands: bands.ok_or_else(|| missing("bands"))?,
            data_type: data_type.ok_or_else(|| missing("data type"))?,
            interleave,
            byte_order,
            header_offset,
            wavelengths,
            extra,
        };
        if hdr.samples == 0 || hdr.lines == 0 || hdr.bands == 0 {
            return Err(Error::Header("zero-sized dimension".into()));
        }
        if let Some(wl) = &hdr.wavelengths {
            if wl.len() != hdr.bands {
                return Err(Error::Header(format!(
                    "{} wavelengths for {} bands",
                    wl.len(),
                    hdr.bands
                )));
            }
        }
        Ok(hdr)
    }

    pub fn payload_len(&self) -> u64 {
        (self.samples * self.lines * self.bands * self.data_type.size()) as u64
    }

    pub fn extra(&self, key: &str) -> Option<&str> {
        let key = normalize_key(key);
        self.extra
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("ENVI\n");
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "lines = {}", self.lines);
        let _ = writeln!(s, "bands = {}", self.bands);
        let _ = writeln!(s, "header offset = {}", self.header_offset);
        let _ = writeln!(s, "data type = {}", self.data_type.code());
        let _ = writeln!(s, "interleave = {}", self.interleave.as_str());
        let bo = match self.byte_order {
            ByteOrder::Little => 0,
            ByteOrder::Big => 1,
        };
        let _ = writeln!(s, "byte order = {bo}");
        if let Some(wl) = &self.wavelengths {
            let items: Vec<String> = wl.iter().map(|w| format!("{w:?}")).collect();
            let _ = writeln!(s, "wavelength = {{{}}}", items.join(", "));
        }
        for (k, v) in &self.extra {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Position in the file-order payload of element `(row, col, band)`.
fn file_offset(il: Interleave, lines: usize, samples: usize, bands: usize, r: usize, c: usize, b: usize) -> usize {
    match il {
        Interleave::Bsq => b * lines * samples + r * samples + c,
        Interleave::Bil => r * bands * samples + b * samples + c,
        Interleave::Bip => r * samples * bands + c * bands + b,
    }
}

fn read_payload(hdr: &EnviHeader, data_path: &Path) -> Result<Array3<f64>> {
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    let expected = hdr.payload_len() + hdr.header_offset as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::PayloadSize {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let payload = &bytes[hdr.header_offset..];
    let size = hdr.data_type.size();
    let big = hdr.byte_order == ByteOrder::Big;
    let (lines, samples, bands) = (hdr.lines, hdr.samples, hdr.bands);
    let mut data = Array3::zeros((lines, samples, bands));
    for ((r, c, b), v) in data.indexed_iter_mut() {
        let k = file_offset(hdr.interleave, lines, samples, bands, r, c, b) * size;
        let x = hdr.data_type.decode(&payload[k..k + size], big);
        if !x.is_finite() {
            return Err(Error::NonFinite(format!(
                "payload at row {r}, col {c}, band {b}"
            )));
        }
        *v = x;
    }
    Ok(data)
}

pub fn read_header(header_path: &Path) -> Result<EnviHeader> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    EnviHeader::parse(&text)
}

/// Reads an ENVI cube. Missing `wavelength` metadata falls back to band
/// numbers starting at 1.
pub fn read_envi(header_path: &Path, data_path: &Path) -> Result<HyperCube> {
    let hdr = read_header(header_path)?;
    let data = read_payload(&hdr, data_path)?;
    let wl = match &hdr.wavelengths {
        Some(wl) => wl.clone(),
        None => {
            log::warn!(
                "{}: no wavelength list, using band numbers",
                header_path.display()
            );
            (1..=hdr.bands).map(|b| b as f64).collect()
        }
    };
    Ok(HyperCube::new(data, wl)?.with_interleave(hdr.interleave))
}

fn encode(dt: DataType, v: f64, out: &mut Vec<u8>) -> Result<()> {
    match dt {
        DataType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        DataType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        DataType::U8 => {
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(Error::invalid(format!("{v} does not fit an 8-bit label")));
            }
            out.push(v as u8)
        }
        other => {
            return Err(Error::invalid(format!(
                "writing data type {} is not supported",
                other.code()
            )))
        }
    }
    Ok(())
}

fn write_payload(data: &Array3<f64>, il: Interleave, dt: DataType, path: &Path) -> Result<()> {
    let (lines, samples, bands) = data.dim();
    let mut out = Vec::with_capacity(lines * samples * bands * dt.size());
    match il {
        Interleave::Bsq => {
            for b in 0..bands {
                for r in 0..lines {
                    for c in 0..samples {
                        encode(dt, data[[r, c, b]], &mut out)?;
                    }
                }
            }
        }
        Interleave::Bil => {
            for r in 0..lines {
                for b in 0..bands {
                    for c in 0..samples {
                        encode(dt, data[[r, c, b]], &mut out)?;
                    }
                }
            }
        }
        Interleave::Bip => {
            for r in 0..lines {
                for c in 0..samples {
                    for b in 0..bands {
                        encode(dt, data[[r, c, b]], &mut out)?;
                    }
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a cube as little-endian `f32` or `f64` ENVI.
pub fn write_envi(
    cube: &HyperCube,
    header_path: &Path,
    data_path: &Path,
    interleave: Interleave,
    data_type: DataType,
) -> Result<()> {
    if !matches!(data_type, DataType::F32 | DataType::F64) {
        return Err(Error::invalid("cubes are written as float32 or float64"));
    }
    check_wavelengths(cube.wavelengths_nm(), cube.bands())?;
    let hdr = EnviHeader {
        samples: cube.cols(),
        lines: cube.rows(),
        bands: cube.bands(),
        data_type,
        interleave,
        byte_order: ByteOrder::Little,
        header_offset: 0,
        wavelengths: Some(cube.wavelengths_nm().to_vec()),
        extra: vec![("wavelength units".into(), "Nanometers".into())],
    };
    fs::write(header_path, hdr.to_text()).map_err(|e| Error::io(header_path, e))?;
    write_payload(cube.data(), interleave, data_type, data_path)
}

/// Data file that conventionally accompanies `header_path`: the header path
/// without `.hdr`, or with `.img`/`.raw`/`.dat` if such a file exists.
pub fn data_path_for(header_path: &Path) -> PathBuf {
    let stem = header_path.with_extension("");
    if stem.exists() {
        return stem;
    }
    for ext in ["img", "raw", "dat", "bin"] {
        let p = header_path.with_extension(ext);
        if p.exists() {
            return p;
        }
    }
    stem
}

pub fn write_mask_envi(mask: &LabelMask, header_path: &Path, data_path: &Path) -> Result<()> {
    let (values, names): (Vec<String>, Vec<String>) = mask
        .palette()
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .unzip();
    let hdr = EnviHeader {
        samples: mask.cols(),
        lines: mask.rows(),
        bands: 1,
        data_type: DataType::U8,
        interleave: Interleave::Bsq,
        byte_order: ByteOrder::Little,
        header_offset: 0,
        wavelengths: None,
        extra: vec![
            ("class values".into(), format!("{{{}}}", values.join(", "))),
            ("class names".into(), format!("{{{}}}", names.join(", "))),
        ],
    };
    fs::write(header_path, hdr.to_text()).map_err(|e| Error::io(header_path, e))?;
    let bytes: Vec<u8> = mask.labels().iter().copied().collect();
    fs::write(data_path, bytes).map_err(|e| Error::io(data_path, e))
}

pub fn read_mask_envi(header_path: &Path, data_path: &Path) -> Result<LabelMask> {
    let hdr = read_header(header_path)?;
    if hdr.bands != 1 {
        return Err(Error::Header(format!(
            "label mask must have 1 band, found {}",
            hdr.bands
        )));
    }
    if hdr.data_type != DataType::U8 {
        return Err(Error::Header("label mask must be 8-bit (data type 1)".into()));
    }
    let data = read_payload(&hdr, data_path)?;
    let labels = data
        .index_axis(ndarray::Axis(2), 0)
        .mapv(|v| v as u8);
    let palette = match (hdr.extra("class values"), hdr.extra("class names")) {
        (Some(vals), Some(names)) => {
            let vals = parse_list(vals);
            let names = parse_list(names);
            if vals.len() != names.len() {
                return Err(Error::Header("class values/names length differ".into()));
            }
            let mut p = BTreeMap::new();
            for (v, n) in vals.iter().zip(names) {
                let v = v
                    .parse::<u8>()
                    .map_err(|_| Error::Header(format!("bad class value {v:?}")))?;
                p.insert(v, n);
            }
            p
        }
        _ => return LabelMask::with_default_palette(labels),
    };
    LabelMask::new(labels, palette)
}

pub fn write_pgm(mask: &LabelMask, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.cols(), mask.rows()).into_bytes();
    out.extend(mask.labels().iter().copied());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<LabelMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::invalid(format!("{}: {m}", path.display()));
    // magic, width, height, maxval separated by whitespace, `#` comments allowed
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    i += 1; // single whitespace before raster
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM dimension"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval > 255 {
        return Err(bad("16-bit PGM masks are not supported"));
    }
    let raster = bytes.get(i..).unwrap_or_default();
    if raster.len() != w * h {
        return Err(Error::PayloadSize {
            expected: (w * h) as u64,
            actual: raster.len() as u64,
        });
    }
    let labels = Array2::from_shape_vec((h, w), raster.to_vec()).map_err(|e| bad(&e.to_string()))?;
    LabelMask::with_default_palette(labels)
}

/// Sidecar legend mapping label values to class names.
pub fn legend_json(mask: &LabelMask) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    for (k, v) in mask.palette() {
        m.insert(k.to_string(), serde_json::Value::String(v.clone()));
    }
    m.insert(
        UNLABELED.to_string(),
        serde_json::Value::String(default_class_name(UNLABELED).into()),
    );
    serde_json::Value::Object(m)
}
