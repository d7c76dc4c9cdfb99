//! Text checkpoint format.
//!
//! ```text
//! QANMODEL v1
//! config d_in=32 trunk_dims=64,64,32 split_index=2 d_embed=16 quality_hidden=16 n_classes=100 margin=0.5 lambda_class=1
//! param trunk.0.weight 64 32 <64*32 row-major values>
//! param trunk.0.bias 64 1 <64 values>
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is exact. Momentum buffers are not stored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{QanError, Result};
use crate::model::{QanConfig, QanModel};

pub const MODEL_HEADER: &str = "QANMODEL v1";

pub fn to_string(model: &QanModel) -> String {
    let c = &model.config;
    let mut out = String::new();
    out.push_str(MODEL_HEADER);
    out.push('\n');
    let dims: Vec<String> = c.trunk_dims.iter().map(usize::to_string).collect();
    let _ = writeln!(
        out,
        "config d_in={} trunk_dims={} split_index={} d_embed={} quality_hidden={} n_classes={} margin={} lambda_class={}",
        c.d_in,
        dims.join(","),
        c.split_index,
        c.d_embed,
        c.quality_hidden,
        c.n_classes,
        c.margin,
        c.lambda_class
    );
    for p in model.params() {
        let _ = write!(out, "param {} {} {}", p.name, p.rows, p.cols);
        for v in &p.value {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn save(model: &QanModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_string(model)).map_err(|e| QanError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<QanModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| QanError::io(path, e))?;
    from_str(&text, &path.display().to_string())
}

pub fn from_str(text: &str, origin: &str) -> Result<QanModel> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    match lines.next() {
        Some((_, MODEL_HEADER)) => {}
        Some((n, other)) => {
            return Err(QanError::parse(
                origin,
                n,
                format!("expected `{MODEL_HEADER}`, found `{other}`"),
            ))
        }
        None => return Err(QanError::parse(origin, 1, "empty checkpoint")),
    }
    let (n, config_line) = lines
        .next()
        .ok_or_else(|| QanError::parse(origin, 2, "missing config line"))?;
    let config = parse_config(config_line, origin, n)?;
    config
        .validate()
        .map_err(|e| QanError::parse(origin, n, e.to_string()))?;

    let mut records: BTreeMap<String, (usize, usize, usize, Vec<f64>)> = BTreeMap::new();
    for (n, line) in lines {
        let mut tok = line.split_whitespace();
        if tok.next() != Some("param") {
            return Err(QanError::parse(origin, n, "expected `param` record"));
        }
        let name = tok
            .next()
            .ok_or_else(|| QanError::parse(origin, n, "missing parameter name"))?
            .to_string();
        let mut dim = || -> Result<usize> {
            tok.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| QanError::parse(origin, n, "bad parameter shape"))
        };
        let rows = dim()?;
        let cols = dim()?;
        let values = tok
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| QanError::parse(origin, n, format!("non-numeric value `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != rows * cols {
            return Err(QanError::parse(
                origin,
                n,
                format!("`{name}` declares {rows}x{cols} but has {} values", values.len()),
            ));
        }
        if records.insert(name.clone(), (n, rows, cols, values)).is_some() {
            return Err(QanError::parse(origin, n, format!("duplicate parameter `{name}`")));
        }
    }

    let mut model = QanModel::new(config, 0)?;
    for p in model.params_mut() {
        let (n, rows, cols, values) = records
            .remove(&p.name)
            .ok_or_else(|| QanError::parse(origin, 0, format!("missing parameter `{}`", p.name)))?;
        if (rows, cols) != (p.rows, p.cols) {
            return Err(QanError::parse(
                origin,
                n,
                format!(
                    "`{}` has shape {rows}x{cols}, config requires {}x{}",
                    p.name, p.rows, p.cols
                ),
            ));
        }
        p.value = values;
    }
    if let Some((name, (n, ..))) = records.into_iter().next() {
        return Err(QanError::parse(origin, n, format!("unknown parameter `{name}`")));
    }
    model.touch();
    Ok(model)
}

fn parse_config(line: &str, origin: &str, n: usize) -> Result<QanConfig> {
    let err = |m: String| QanError::parse(origin, n, m);
    let mut tok = line.split_whitespace();
    if tok.next() != Some("config") {
        return Err(err("expected `config` line".into()));
    }
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for t in tok {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| err(format!("malformed config entry `{t}`")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| err(format!("missing config key `{k}`")))
    };
    let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| err(format!("bad integer for `{k}`"))) };
    let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| err(format!("bad number for `{k}`"))) };
    let trunk_dims = get("trunk_dims")?
        .split(',')
        .map(|d| d.parse().map_err(|_| err(format!("bad trunk dim `{d}`"))))
        .collect::<Result<Vec<usize>>>()?;
    Ok(QanConfig {
        d_in: int("d_in")?,
        trunk_dims,
        split_index: int("split_index")?,
        d_embed: int("d_embed")?,
        quality_hidden: int("quality_hidden")?,
        n_classes: int("n_classes")?,
        margin: real("margin")?,
        lambda_class: real("lambda_class")?,
    })
}
