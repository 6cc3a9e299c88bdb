//! `mlp v1` text checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textio::{expect_header, fmt17, numbered_lines, parse_f64, parse_usize, read_text, write_text};

use super::matrix::Matrix;
use super::mlp::Mlp;

pub const CHECKPOINT_HEADER: &str = "mlp v1";

pub fn checkpoint_to_string<T: Scalar>(model: &Mlp<T>) -> String {
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    let dims: Vec<String> = model.layer_dims().iter().map(|d| d.to_string()).collect();
    out.push_str(&dims.join(" "));
    out.push('\n');
    let mut push_line = |vals: &[T]| {
        let mut first = true;
        for v in vals {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{}", fmt17(v.as_f64()));
        }
        out.push('\n');
    };
    for (w, b) in model.weights().iter().zip(model.biases()) {
        push_line(w.values());
        push_line(b);
    }
    out
}

pub fn checkpoint_from_str<T: Scalar>(path: &Path, text: &str) -> Result<Mlp<T>> {
    let mut lines = numbered_lines(text);
    expect_header(path, &mut lines, CHECKPOINT_HEADER)?;
    let (dn, dline) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 2, "missing layer dims"))?;
    let dims = dline
        .split_whitespace()
        .map(|f| parse_usize(path, dn, f))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() < 2 {
        return Err(Error::parse(path, dn, "need at least two layer dims"));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = read_values::<T>(path, &mut lines, fan_in * fan_out, "weight")?;
        weights.push(Matrix::from_vec(fan_out, fan_in, w)?);
        biases.push(read_values::<T>(path, &mut lines, fan_out, "bias")?);
    }
    if let Some((n, _)) = lines.next() {
        return Err(Error::parse(path, n, "trailing data after last layer"));
    }
    Mlp::from_parts(dims, weights, biases)
}

fn read_values<'a, T: Scalar>(
    path: &Path,
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    expected: usize,
    what: &str,
) -> Result<Vec<T>> {
    let (n, line) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 0, format!("missing {what} line")))?;
    let vals = line
        .split_whitespace()
        .map(|f| parse_f64(path, n, f).map(T::lit))
        .collect::<Result<Vec<T>>>()?;
    if vals.len() != expected {
        return Err(Error::parse(
            path,
            n,
            format!("{what} line has {} values, expected {expected}", vals.len()),
        ));
    }
    Ok(vals)
}

pub fn write_checkpoint<T: Scalar>(model: &Mlp<T>, path: &Path) -> Result<()> {
    write_text(path, &checkpoint_to_string(model))
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Mlp<T>> {
    checkpoint_from_str(path, &read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Mlp::<f64>::new_seeded(&[7, 5, 3, 4], 42).unwrap();
        let text = checkpoint_to_string(&m);
        assert!(text.starts_with("mlp v1\n7 5 3 4\n"));
        let back: Mlp<f64> = checkpoint_from_str(Path::new("m"), &text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn f32_round_trip() {
        let m = Mlp::<f32>::new_seeded(&[3, 4, 2], 1).unwrap();
        let back: Mlp<f32> = checkpoint_from_str(Path::new("m"), &checkpoint_to_string(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn wrong_arity_names_line() {
        let text = "mlp v1\n2 2\n1 2 3\n0 0\n";
        let err = checkpoint_from_str::<f64>(Path::new("bad"), text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn empty_and_bad_header() {
        assert!(checkpoint_from_str::<f64>(Path::new("e"), "").is_err());
        assert!(checkpoint_from_str::<f64>(Path::new("e"), "mlp v2\n1 1\n0\n0\n").is_err());
    }
}
