//! Plain-text network checkpoints.
//!
//! ```text
//! PACKCOOL-CKPT v1
//! nets 2
//! net policy tanh 3
//! 64 100
//! <64 lines of 100 floats>
//! 64 1
//! <64 lines of 1 float>
//! ...
//! ```
//!
//! Each layer is a weight matrix followed by its bias column, each introduced
//! by a `rows cols` line. Floats are written with 17 significant digits, so a
//! load/save round trip reproduces the file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpParams};

pub const MAGIC: &str = "PACKCOOL-CKPT v1";

/// The actor and critic of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: MlpParams,
    pub value: MlpParams,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "nets 2").unwrap();
        write_net(&mut out, "policy", &self.policy);
        write_net(&mut out, "value", &self.value);
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
            path,
        };
        let (_, first) = lines.next_line()?;
        if first != MAGIC {
            return Err(format_err(path, format!("expected version line {MAGIC:?}, found {first:?}")));
        }
        let count: usize = lines.keyed("nets")?.parse_one(path)?;
        let mut policy = None;
        let mut value = None;
        for _ in 0..count {
            let (name, net) = read_net(&mut lines)?;
            let slot = match name.as_str() {
                "policy" => &mut policy,
                "value" => &mut value,
                other => return Err(format_err(path, format!("unknown network {other:?}"))),
            };
            if slot.replace(net).is_some() {
                return Err(format_err(path, format!("network {name:?} appears twice")));
            }
        }
        if let Some((i, extra)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
            return Err(format_err(path, format!("line {}: trailing content {extra:?}", i + 1)));
        }
        match (policy, value) {
            (Some(policy), Some(value)) => Ok(Self { policy, value }),
            _ => Err(format_err(path, "checkpoint needs both a policy and a value network")),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn write_net(out: &mut String, name: &str, net: &MlpParams) {
    let layers = net.layers();
    writeln!(out, "net {name} {} {}", net.output_activation().name(), layers.len()).unwrap();
    let data = net.data();
    for layer in layers {
        writeln!(out, "{} {}", layer.rows, layer.cols).unwrap();
        for r in 0..layer.rows {
            let row = &data[layer.weight_offset + r * layer.cols..][..layer.cols];
            write_row(out, row);
        }
        writeln!(out, "{} 1", layer.rows).unwrap();
        for r in 0..layer.rows {
            write_row(out, &data[layer.bias_offset + r..][..1]);
        }
    }
}

fn write_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v:.16e}").unwrap();
    }
    out.push('\n');
}

struct Lines<'a, I> {
    inner: I,
    path: &'a Path,
}

struct Fields<'a> {
    line: usize,
    words: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn parse_one<T: std::str::FromStr>(&self, path: &Path) -> Result<T> {
        match self.words.as_slice() {
            [w] => w
                .parse()
                .map_err(|_| format_err(path, format!("line {}: cannot parse {w:?}", self.line))),
            _ => Err(format_err(path, format!("line {}: expected one field", self.line))),
        }
    }
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Lines<'a, I> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| format_err(self.path, "unexpected end of file"))
    }

    fn fields(&mut self) -> Result<Fields<'a>> {
        let (line, text) = self.next_line()?;
        Ok(Fields {
            line,
            words: text.split_whitespace().collect(),
        })
    }

    fn keyed(&mut self, key: &str) -> Result<Fields<'a>> {
        let mut f = self.fields()?;
        if f.words.first() != Some(&key) {
            return Err(format_err(self.path, format!("line {}: expected {key:?}", f.line)));
        }
        f.words.remove(0);
        Ok(f)
    }

    fn dims(&mut self) -> Result<(usize, usize)> {
        let f = self.fields()?;
        let bad = || format_err(self.path, format!("line {}: expected \"rows cols\"", f.line));
        match f.words.as_slice() {
            [r, c] => Ok((r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }

    fn matrix(&mut self, rows: usize, cols: usize, out: &mut Vec<f64>) -> Result<()> {
        for _ in 0..rows {
            let f = self.fields()?;
            if f.words.len() != cols {
                return Err(format_err(
                    self.path,
                    format!("line {}: expected {cols} values, found {}", f.line, f.words.len()),
                ));
            }
            for w in f.words {
                let v: f64 = w
                    .parse()
                    .map_err(|_| format_err(self.path, format!("line {}: bad number {w:?}", f.line)))?;
                out.push(v);
            }
        }
        Ok(())
    }
}

fn read_net<'a, I: Iterator<Item = (usize, &'a str)>>(lines: &mut Lines<'a, I>) -> Result<(String, MlpParams)> {
    let path = lines.path;
    let header = lines.keyed("net")?;
    let (name, act, n_layers) = match header.words.as_slice() {
        [name, act, n] => (name.to_string(), *act, *n),
        _ => return Err(format_err(path, format!("line {}: expected \"net NAME ACTIVATION LAYERS\"", header.line))),
    };
    let act = Activation::from_name(act)
        .ok_or_else(|| format_err(path, format!("line {}: unknown activation {act:?}", header.line)))?;
    let n_layers: usize = n_layers
        .parse()
        .map_err(|_| format_err(path, format!("line {}: bad layer count", header.line)))?;
    if n_layers == 0 {
        return Err(format_err(path, format!("line {}: network without layers", header.line)));
    }
    let mut sizes = Vec::with_capacity(n_layers + 1);
    let mut data = Vec::new();
    for _ in 0..n_layers {
        let (rows, cols) = lines.dims()?;
        match sizes.last() {
            None => sizes.push(cols),
            Some(&prev) if prev == cols => {}
            Some(&prev) => {
                return Err(format_err(path, format!("layer expects {cols} inputs after a layer of {prev}")));
            }
        }
        sizes.push(rows);
        lines.matrix(rows, cols, &mut data)?;
        let (b_rows, b_cols) = lines.dims()?;
        if (b_rows, b_cols) != (rows, 1) {
            return Err(format_err(path, format!("bias must be {rows}x1, found {b_rows}x{b_cols}")));
        }
        lines.matrix(rows, 1, &mut data)?;
    }
    let net = MlpParams::from_parts(&sizes, act, data).map_err(|e| format_err(path, e.to_string()))?;
    Ok((name, net))
}
