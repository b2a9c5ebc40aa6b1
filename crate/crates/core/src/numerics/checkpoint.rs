//! Text checkpoint format: one JSON object, keys sorted, every parameter stored as
//! `{"shape":[r,c],"data":[...]}` with 17 significant digits per number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Entry {
    shape: [usize; 2],
    data: Vec<f64>,
}

/// Formats `v` with 17 significant digits, which round-trips every finite f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_checkpoint_string(store: &ParamStore) -> Result<String> {
    let mut out = String::from("{\n");
    let n = store.len();
    for (i, (name, p)) in store.iter().enumerate() {
        if !p.value.all_finite() {
            return Err(Error::Checkpoint(format!("parameter {name} holds a non-finite value")));
        }
        let (r, c) = p.value.shape();
        let name = serde_json::to_string(name)?;
        write!(out, "  {name}: {{\"shape\": [{r}, {c}], \"data\": [").unwrap();
        for (k, v) in p.value.data().iter().enumerate() {
            if k > 0 {
                out.push_str(", ");
            }
            out.push_str(&format_f64(*v));
        }
        out.push_str("]}");
        if i + 1 < n {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn from_checkpoint_str(text: &str) -> Result<ParamStore> {
    let entries: BTreeMap<String, Entry> = serde_json::from_str(text)?;
    let mut store = ParamStore::new();
    for (name, e) in entries {
        let [r, c] = e.shape;
        let value = Matrix::from_vec(r, c, e.data)
            .map_err(|err| Error::Checkpoint(format!("parameter {name}: {err}")))?;
        store.insert(name, value)?;
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_checkpoint_string(store)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    from_checkpoint_str(&std::fs::read_to_string(path)?)
}

/// Copies checkpoint values into `target`, requiring identical names and shapes.
pub fn restore_into(target: &mut ParamStore, source: &ParamStore) -> Result<()> {
    if target.len() != source.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model expects {}",
            source.len(),
            target.len()
        )));
    }
    for (name, p) in target.iter_mut() {
        let src = source
            .get(name)
            .map_err(|_| Error::Checkpoint(format!("checkpoint is missing {name}")))?;
        if src.value.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: checkpoint shape {:?}, model shape {:?}",
                src.value.shape(),
                p.value.shape()
            )));
        }
        p.value = src.value.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_sorted_and_17_digit() {
        let mut s = ParamStore::new();
        s.insert("z.w", Matrix::row_vector(&[0.1])).unwrap();
        s.insert("a.b", Matrix::from_rows(&[[1.0, -2.5]]).unwrap()).unwrap();
        let text = to_checkpoint_string(&s).unwrap();
        assert!(text.find("\"a.b\"").unwrap() < text.find("\"z.w\"").unwrap());
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("\"shape\": [1, 2]"));
    }

    #[test]
    fn rejects_non_finite() {
        let mut s = ParamStore::new();
        s.insert("w", Matrix::row_vector(&[f64::INFINITY])).unwrap();
        assert!(to_checkpoint_string(&s).is_err());
    }

    #[test]
    fn restore_checks_shapes() {
        let mut a = ParamStore::new();
        a.insert("w", Matrix::zeros(2, 2)).unwrap();
        let mut b = ParamStore::new();
        b.insert("w", Matrix::zeros(1, 4)).unwrap();
        assert!(restore_into(&mut a, &b).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..24)) {
            let mut s = ParamStore::new();
            let n = values.len();
            s.insert("p", Matrix::from_vec(1, n, values.clone()).unwrap()).unwrap();
            let back = from_checkpoint_str(&to_checkpoint_string(&s).unwrap()).unwrap();
            let got = back.value("p").unwrap().data();
            for (a, b) in got.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
