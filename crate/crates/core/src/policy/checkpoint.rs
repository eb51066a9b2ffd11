//! Text container for policy parameters.
//!
//! ```text
//! policy-params 1
//! shape <n_features> <hidden> <n_cells>
//! alpha_floor <value>
//! standardizer <center x4> <scale x4>
//! tensor <name> <dim>...
//! <row-major values, one row per line>
//! ...
//! end
//! ```
//!
//! Values are written in shortest round-trip exponent form so a reload is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{PolicyParams, PolicyShape, Standardizer, Tensor, TENSOR_NAMES};

pub const FORMAT_TAG: &str = "policy-params";
pub const FORMAT_VERSION: u32 = 1;

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:e}").unwrap();
    }
    s
}

pub fn format_params(params: &PolicyParams) -> String {
    let mut out = String::new();
    let sh = params.shape;
    writeln!(out, "{FORMAT_TAG} {FORMAT_VERSION}").unwrap();
    writeln!(out, "shape {} {} {}", sh.n_features, sh.hidden, sh.n_cells).unwrap();
    writeln!(out, "alpha_floor {:e}", params.alpha_floor).unwrap();
    let st = &params.standardizer;
    writeln!(out, "standardizer {} {}", join(&st.center), join(&st.scale)).unwrap();
    for (name, t) in TENSOR_NAMES.iter().zip(params.tensors()) {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(out, "tensor {name} {}", dims.join(" ")).unwrap();
        let row = *t.shape.last().unwrap_or(&1);
        for chunk in t.data.chunks(row.max(1)) {
            writeln!(out, "{}", join(chunk)).unwrap();
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    offset: usize,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1 + self.offset;
                Ok(l.trim())
            }
            None => Err(Error::Checkpoint(format!(
                "unexpected end of policy block after line {}",
                self.last
            ))),
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.last))
    }

    fn floats(&self, fields: &[&str]) -> Result<Vec<f64>> {
        fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| self.err(format!("bad number {f:?}"))))
            .collect()
    }

    fn keyword(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some(k) if k == key => Ok(fields.collect()),
            other => Err(self.err(format!("expected {key:?}, found {:?}", other.unwrap_or("")))),
        }
    }
}

/// Parses a policy block. `line_offset` is added to reported line numbers
/// when the block is embedded in a larger file.
pub fn parse_params(text: &str, line_offset: usize) -> Result<PolicyParams> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        offset: line_offset,
        last: line_offset,
    };
    let header = lines.keyword(FORMAT_TAG)?;
    match header.as_slice() {
        [v] if v.parse::<u32>().ok() == Some(FORMAT_VERSION) => {}
        _ => return Err(lines.err(format!("unsupported format version {header:?}"))),
    }
    let dims = lines.keyword("shape")?;
    let dims: Vec<usize> = dims
        .iter()
        .map(|d| d.parse().map_err(|_| lines.err(format!("bad size {d:?}"))))
        .collect::<Result<_>>()?;
    let [n_features, hidden, n_cells] = dims[..] else {
        return Err(lines.err("shape needs three sizes"));
    };
    let shape = PolicyShape {
        n_features,
        hidden,
        n_cells,
    };
    let floor = lines.keyword("alpha_floor")?;
    let floor = lines.floats(&floor)?;
    let [alpha_floor] = floor[..] else {
        return Err(lines.err("alpha_floor needs one value"));
    };
    let st = lines.keyword("standardizer")?;
    let st = lines.floats(&st)?;
    if st.len() != 8 {
        return Err(lines.err("standardizer needs 8 values"));
    }
    let standardizer = Standardizer {
        center: [st[0], st[1], st[2], st[3]],
        scale: [st[4], st[5], st[6], st[7]],
    };

    // template with the expected shapes; every value is overwritten below
    let mut params = PolicyParams::init(shape, standardizer, &mut ChaCha8Rng::seed_from_u64(0));
    params.alpha_floor = alpha_floor;
    for (name, slot) in TENSOR_NAMES.iter().zip(params.tensors_mut()) {
        let fields = lines.keyword("tensor")?;
        let (got, dims) = fields
            .split_first()
            .ok_or_else(|| lines.err("tensor line without a name"))?;
        if got != name {
            return Err(lines.err(format!("expected tensor {name}, found {got}")));
        }
        let dims: Vec<usize> = dims
            .iter()
            .map(|d| d.parse().map_err(|_| lines.err(format!("bad size {d:?}"))))
            .collect::<Result<_>>()?;
        if dims != slot.shape {
            return Err(lines.err(format!(
                "tensor {name} has shape {dims:?}, the declared network needs {:?}",
                slot.shape
            )));
        }
        let row = *dims.last().unwrap_or(&1);
        let mut data = Vec::with_capacity(slot.len());
        while data.len() < slot.len() {
            let line = lines.next()?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != row.min(slot.len() - data.len()) {
                return Err(lines.err(format!("tensor {name}: expected {row} values per row")));
            }
            data.extend(lines.floats(&fields)?);
        }
        *slot = Tensor { shape: dims, data };
    }
    if lines.next()? != "end" {
        return Err(lines.err("expected end of policy block"));
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter value".into()));
    }
    Ok(params)
}

pub fn save(params: &PolicyParams, path: &Path) -> Result<()> {
    std::fs::write(path, format_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<PolicyParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_params(&text, 0).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = PolicyParams::init(PolicyShape::default(), Standardizer::default(), &mut rng);
        p.critic_out.weight.data[3] = -1.234_567_890_123_456_7e-17;
        p.actor_out.bias.data[0] = f64::MIN_POSITIVE;
        let text = format_params(&p);
        let q = parse_params(&text, 0).unwrap();
        assert_eq!(p, q);
        assert_eq!(text, format_params(&q));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        let p = PolicyParams::init(
            PolicyShape::default(),
            Standardizer::default(),
            &mut ChaCha8Rng::seed_from_u64(2),
        );
        save(&p, &path).unwrap();
        assert_eq!(load(&path).unwrap(), p);
    }

    #[test]
    fn rejects_damaged_blocks() {
        let p = PolicyParams::init(
            PolicyShape::default(),
            Standardizer::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let text = format_params(&p);
        assert!(parse_params(&text.replace("policy-params 1", "policy-params 2"), 0).is_err());
        assert!(parse_params(
            &text.replace("tensor actor.out.weight 121 64", "tensor actor.out.weight 120 64"),
            0
        )
        .is_err());
        assert!(parse_params(&text.replace("\nend\n", "\n"), 0).is_err());
        let truncated: String = text.lines().take(30).collect::<Vec<_>>().join("\n");
        assert!(parse_params(&truncated, 0).is_err());
        let other = PolicyParams::init(
            PolicyShape {
                n_features: 8,
                hidden: 64,
                n_cells: 121,
            },
            Standardizer::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        assert_eq!(parse_params(&format_params(&other), 0).unwrap().shape.n_features, 8);
    }
}
