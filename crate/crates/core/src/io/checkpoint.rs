//! Plain-text model checkpoints.
//!
//! ```text
//! protoflow checkpoint v1
//! step 2
//! classes 0 1 2 3
//! field time 8 3.141592653589793 2 per_class
//! tensor encoder.w1 32 4
//! <one line of values per row>
//! ...
//! end
//! ```
//!
//! The `field` line is `field none`, `field static <time config>` or
//! `field time <time config>`. Values use the shortest round-trip decimal form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::flowfield::{FlowField, TimeEncodingConfig, TimeNormalization};
use crate::model::{Encoder, Head};
use crate::numkit::linalg::{Matrix, RealVector};
use crate::numkit::mlp::Mlp2Params;
use crate::stream::ClassId;
use crate::trainer::ModelState;

pub const CHECKPOINT_HEADER: &str = "protoflow checkpoint v1";
const MAX_TENSOR_LEN: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub model: ModelState,
}

fn normalization_name(n: TimeNormalization) -> &'static str {
    match n {
        TimeNormalization::PerClass => "per_class",
        TimeNormalization::Global => "global",
    }
}

fn write_tensor(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let _ = writeln!(out, "tensor {name} {rows} {cols}");
    for r in 0..rows {
        let row: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn write_mlp(out: &mut String, prefix: &str, p: &Mlp2Params) {
    write_tensor(out, &format!("{prefix}.w1"), p.w1.rows(), p.w1.cols(), p.w1.as_slice());
    write_tensor(out, &format!("{prefix}.b1"), 1, p.b1.dim(), p.b1.as_slice());
    write_tensor(out, &format!("{prefix}.w2"), p.w2.rows(), p.w2.cols(), p.w2.as_slice());
    write_tensor(out, &format!("{prefix}.b2"), 1, p.b2.dim(), p.b2.as_slice());
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> String {
    let m = &ckpt.model;
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_HEADER}");
    let _ = writeln!(out, "step {}", ckpt.step);
    let classes: Vec<String> = m.head.classes().iter().map(|c| c.to_string()).collect();
    let _ = writeln!(out, "classes {}", classes.join(" "));
    match &m.field {
        None => {
            let _ = writeln!(out, "field none");
        }
        Some(f) => {
            let t = &f.time;
            let kind = if f.time_conditioned { "time" } else { "static" };
            let _ = writeln!(
                out,
                "field {kind} {} {} {} {}",
                t.d_tau,
                t.omega0,
                t.omega_base,
                normalization_name(t.normalization)
            );
        }
    }
    write_mlp(&mut out, "encoder", &m.encoder.params);
    let h = &m.head;
    write_tensor(&mut out, "head.weights", h.weights.rows(), h.weights.cols(), h.weights.as_slice());
    write_tensor(&mut out, "head.bias", 1, h.bias.len(), &h.bias);
    if let Some(f) = &m.field {
        write_mlp(&mut out, "field", &f.params);
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { line: self.line, msg: msg.into() })
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim_end_matches('\r'))
            }
            None => {
                self.line += 1;
                self.err("unexpected end of checkpoint")
            }
        }
    }

    /// Next line split into words, requiring the first word to be `key`.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let l = self.next()?;
        let mut words = l.split_ascii_whitespace();
        if words.next() != Some(key) {
            return self.err(format!("expected `{key}`"));
        }
        Ok(words.collect())
    }

    fn number<T: std::str::FromStr>(&self, word: &str, what: &str) -> Result<T> {
        word.parse().or_else(|_| self.err(format!("bad {what} `{word}`")))
    }

    fn real(&self, word: &str) -> Result<f64> {
        let v: f64 = self.number(word, "value")?;
        if v.is_finite() {
            Ok(v)
        } else {
            self.err(format!("non-finite value `{word}`"))
        }
    }

    fn tensor(&mut self, name: &str) -> Result<(usize, usize, Vec<f64>)> {
        let words = self.keyed("tensor")?;
        if words.len() != 3 || words[0] != name {
            return self.err(format!("expected `tensor {name} <rows> <cols>`"));
        }
        let rows: usize = self.number(words[1], "row count")?;
        let cols: usize = self.number(words[2], "column count")?;
        if rows == 0 || cols == 0 || rows.checked_mul(cols).is_none_or(|n| n > MAX_TENSOR_LEN) {
            return self.err(format!("unsupported shape {rows}x{cols}"));
        }
        let mut data = Vec::new();
        for _ in 0..rows {
            let l = self.next()?;
            let before = data.len();
            for w in l.split_ascii_whitespace() {
                data.push(self.real(w)?);
            }
            if data.len() - before != cols {
                return self.err(format!("expected {cols} values, found {}", data.len() - before));
            }
        }
        Ok((rows, cols, data))
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        let (r, c, d) = self.tensor(name)?;
        Matrix::from_vec(r, c, d)
    }

    fn vector(&mut self, name: &str) -> Result<RealVector> {
        let (r, _, d) = self.tensor(name)?;
        if r != 1 {
            return self.err(format!("{name} must have one row"));
        }
        RealVector::new(d)
    }

    fn mlp(&mut self, prefix: &str) -> Result<Mlp2Params> {
        let w1 = self.matrix(&format!("{prefix}.w1"))?;
        let b1 = self.vector(&format!("{prefix}.b1"))?;
        let w2 = self.matrix(&format!("{prefix}.w2"))?;
        let b2 = self.vector(&format!("{prefix}.b2"))?;
        if b1.dim() != w1.rows() || w2.cols() != w1.rows() || b2.dim() != w2.rows() {
            return self.err(format!("{prefix} tensor shapes disagree"));
        }
        Ok(Mlp2Params { w1, b1, w2, b2 })
    }
}

pub fn decode_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = Lines { inner: text.lines().enumerate(), line: 0 };
    if lines.next()? != CHECKPOINT_HEADER {
        return lines.err(format!("expected `{CHECKPOINT_HEADER}`"));
    }
    let w = lines.keyed("step")?;
    if w.len() != 1 {
        return lines.err("expected `step <t>`");
    }
    let step: usize = lines.number(w[0], "step")?;
    let classes: Vec<ClassId> = lines
        .keyed("classes")?
        .iter()
        .map(|c| lines.number(c, "class id"))
        .collect::<Result<_>>()?;
    let mut sorted = classes.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if classes.is_empty() || sorted.len() != classes.len() {
        return lines.err("class ids must be non-empty and distinct");
    }
    let fw = lines.keyed("field")?;
    let field_time = match fw.as_slice() {
        ["none"] => None,
        [kind @ ("time" | "static"), d_tau, omega0, omega_base, norm] => {
            let normalization = match *norm {
                "per_class" => TimeNormalization::PerClass,
                "global" => TimeNormalization::Global,
                other => return lines.err(format!("unknown normalization `{other}`")),
            };
            let time = TimeEncodingConfig {
                d_tau: lines.number(d_tau, "d_tau")?,
                omega0: lines.real(omega0)?,
                omega_base: lines.real(omega_base)?,
                normalization,
            };
            if let Err(e) = time.validate() {
                return lines.err(e.to_string());
            }
            Some((*kind == "time", time))
        }
        _ => return lines.err("expected `field none|time|static ...`"),
    };

    let encoder = Encoder { params: lines.mlp("encoder")? };
    let weights = lines.matrix("head.weights")?;
    let bias = lines.vector("head.bias")?.into_vec();
    let d = encoder.feature_dim();
    if weights.cols() != d {
        return lines.err("head width differs from encoder output");
    }
    let head = match Head::from_parts(classes, weights, bias) {
        Ok(h) => h,
        Err(e) => return lines.err(e.to_string()),
    };
    let field = match field_time {
        None => None,
        Some((time_conditioned, time)) => {
            let params = lines.mlp("field")?;
            let input = d + if time_conditioned { time.d_tau } else { 0 };
            if params.input_dim() != input || params.output_dim() != d {
                return lines.err("field shape does not match the feature and time dimensions");
            }
            Some(FlowField { params, time_conditioned, time })
        }
    };
    if lines.next()? != "end" {
        return lines.err("expected `end`");
    }
    if lines.inner.any(|(_, l)| !l.trim().is_empty()) {
        return lines.err("content after `end`");
    }
    Ok(Checkpoint {
        step,
        model: ModelState { encoder, head, field },
    })
}
