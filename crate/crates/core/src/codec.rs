//! Serde adapters storing `f64` arrays as base64 of little-endian bytes.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct Packed {
    shape: Vec<usize>,
    f64le: String,
}

fn pack(shape: Vec<usize>, values: impl Iterator<Item = f64>) -> Packed {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    Packed {
        shape,
        f64le: STANDARD.encode(bytes),
    }
}

fn unpack<E: serde::de::Error>(p: &Packed, dims: usize) -> Result<Vec<f64>, E> {
    if p.shape.len() != dims {
        return Err(E::custom(format!(
            "expected {dims}-d array, found shape {:?}",
            p.shape
        )));
    }
    let bytes = STANDARD.decode(&p.f64le).map_err(E::custom)?;
    let n: usize = p.shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(E::custom(format!(
            "array payload has {} bytes, shape {:?} needs {}",
            bytes.len(),
            p.shape,
            n * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub(crate) mod array1 {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        pack(vec![a.len()], a.iter().copied()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        let p = Packed::deserialize(d)?;
        Ok(Array1::from(unpack::<D::Error>(&p, 1)?))
    }
}

pub(crate) mod array2 {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        pack(vec![a.nrows(), a.ncols()], a.iter().copied()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let p = Packed::deserialize(d)?;
        let v = unpack::<D::Error>(&p, 2)?;
        Array2::from_shape_vec((p.shape[0], p.shape[1]), v).map_err(D::Error::custom)
    }
}
