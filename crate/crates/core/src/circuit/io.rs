//! Line-oriented text encoding of circuits:
//!
//! ```text
//! PC v1 <num_vars> <num_roots>
//! <domain size>            (one line per variable)
//! <id> I <var> <p0> <p1> ...
//! <id> P <child ids...>
//! <id> S <child id>:<weight> ...
//! ROOTS <ids...>
//! ```
//!
//! Unit ids are consecutive from 0 in topological order. Reals are written
//! with 17 significant digits, which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::io::{Read, Write};

use super::{Circuit, Unit, UnitKind};
use crate::error::{PcError, Result};

fn fmt_real(out: &mut String, x: f64) {
    let _ = write!(out, "{x:.16e}");
}

impl Circuit {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "PC v1 {} {}", self.num_vars(), self.num_heads());
        for d in self.domains() {
            let _ = writeln!(out, "{d}");
        }
        for (id, unit) in self.units().iter().enumerate() {
            let _ = write!(out, "{id}");
            match &unit.kind {
                UnitKind::Input { var, probs } => {
                    let _ = write!(out, " I {var}");
                    for &p in probs {
                        out.push(' ');
                        fmt_real(&mut out, p);
                    }
                }
                UnitKind::Product => {
                    out.push_str(" P");
                    for c in &unit.children {
                        let _ = write!(out, " {c}");
                    }
                }
                UnitKind::Sum { weights } => {
                    out.push_str(" S");
                    for (c, &w) in unit.children.iter().zip(weights) {
                        let _ = write!(out, " {c}:");
                        fmt_real(&mut out, w);
                    }
                }
            }
            out.push('\n');
        }
        out.push_str("ROOTS");
        for r in self.roots() {
            let _ = write!(out, " {r}");
        }
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Circuit> {
        Parser::new(text).parse()
    }
}

pub fn write_circuit<W: Write>(circuit: &Circuit, mut w: W) -> Result<()> {
    w.write_all(circuit.to_text().as_bytes())?;
    Ok(())
}

pub fn read_circuit<R: Read>(mut r: R) -> Result<Circuit> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let text =
        std::str::from_utf8(&buf).map_err(|e| PcError::parse(e.valid_up_to(), "invalid UTF-8"))?;
    Circuit::from_text(text)
}

struct Line<'a> {
    offset: usize,
    tokens: Vec<(usize, &'a str)>,
}

struct Parser<'a> {
    lines: Vec<Line<'a>>,
    pos: usize,
    end: usize,
}

fn tokenize(offset: usize, line: &str) -> Vec<(usize, &str)> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push((offset + s, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push((offset + s, &line[s..]));
    }
    tokens
}

fn number<T: std::str::FromStr>(tok: (usize, &str), what: &str) -> Result<T> {
    tok.1
        .parse()
        .map_err(|_| PcError::parse(tok.0, format!("expected {what}, found `{}`", tok.1)))
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let mut lines = Vec::new();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let tokens = tokenize(offset, raw);
            if !tokens.is_empty() {
                lines.push(Line { offset, tokens });
            }
            offset += raw.len();
        }
        Parser {
            lines,
            pos: 0,
            end: text.len(),
        }
    }

    fn next_line(&mut self, what: &str) -> Result<&Line<'a>> {
        let end = self.end;
        let line = self
            .lines
            .get(self.pos)
            .ok_or_else(|| PcError::parse(end, format!("unexpected end of input, expected {what}")))?;
        self.pos += 1;
        Ok(line)
    }

    fn parse(mut self) -> Result<Circuit> {
        let header = self.next_line("header")?;
        let t = &header.tokens;
        if t.len() != 4 || t[0].1 != "PC" || t[1].1 != "v1" {
            return Err(PcError::parse(
                header.offset,
                "expected header `PC v1 <num_vars> <num_roots>`",
            ));
        }
        let num_vars: usize = number(t[2], "variable count")?;
        let num_roots: usize = number(t[3], "root count")?;
        let header_offset = header.offset;
        if num_roots == 0 {
            return Err(PcError::parse(header_offset, "circuit declares no roots"));
        }

        let mut domains = Vec::with_capacity(num_vars);
        for _ in 0..num_vars {
            let line = self.next_line("domain size")?;
            if line.tokens.len() != 1 {
                return Err(PcError::parse(line.offset, "expected a single domain size"));
            }
            let d: usize = number(line.tokens[0], "domain size")?;
            if d == 0 {
                return Err(PcError::parse(line.offset, "domain size must be positive"));
            }
            domains.push(d);
        }

        let mut units: Vec<Unit> = Vec::new();
        loop {
            let line = self.next_line("unit or ROOTS line")?;
            let offset = line.offset;
            let t = &line.tokens;
            if t[0].1 == "ROOTS" {
                let roots = t[1..]
                    .iter()
                    .map(|&tok| {
                        let r: usize = number(tok, "root id")?;
                        if r >= units.len() {
                            return Err(PcError::parse(tok.0, format!("root {r} does not exist")));
                        }
                        Ok(r)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if roots.len() != num_roots {
                    return Err(PcError::parse(
                        offset,
                        format!("header declares {num_roots} roots, found {}", roots.len()),
                    ));
                }
                if let Some(extra) = self.lines.get(self.pos) {
                    return Err(PcError::parse(extra.offset, "trailing content after ROOTS"));
                }
                return Circuit::new(domains, units, roots)
                    .map_err(|e| PcError::parse(offset, e.to_string()));
            }
            let id: usize = number(t[0], "unit id")?;
            if id != units.len() {
                return Err(PcError::parse(
                    t[0].0,
                    format!("expected unit id {}, found {id}", units.len()),
                ));
            }
            if t.len() < 2 {
                return Err(PcError::parse(offset, format!("unit {id} has no kind")));
            }
            let unit = match t[1].1 {
                "I" => {
                    if t.len() < 3 {
                        return Err(PcError::parse(offset, format!("input unit {id} has no variable")));
                    }
                    let var: usize = number(t[2], "variable index")?;
                    let probs = t[3..]
                        .iter()
                        .map(|&tok| number::<f64>(tok, "probability"))
                        .collect::<Result<Vec<_>>>()?;
                    Unit::input(var, probs)
                }
                "P" => {
                    let children = t[2..]
                        .iter()
                        .map(|&tok| number::<usize>(tok, "child id"))
                        .collect::<Result<Vec<_>>>()?;
                    Unit::product(children)
                }
                "S" => {
                    let mut children = Vec::with_capacity(t.len() - 2);
                    let mut weights = Vec::with_capacity(t.len() - 2);
                    for &(off, tok) in &t[2..] {
                        let (c, w) = tok.split_once(':').ok_or_else(|| {
                            PcError::parse(off, format!("expected `<child>:<weight>`, found `{tok}`"))
                        })?;
                        children.push(number::<usize>((off, c), "child id")?);
                        weights.push(number::<f64>((off + c.len() + 1, w), "weight")?);
                    }
                    Unit::sum(children, weights)
                }
                other => {
                    return Err(PcError::parse(
                        t[1].0,
                        format!("unknown unit kind `{other}` for unit {id}"),
                    ))
                }
            };
            Circuit::check_unit(&domains, id, &unit).map_err(|e| {
                let msg = match e {
                    PcError::InvalidArgument(m) => m,
                    other => other.to_string(),
                };
                PcError::parse(offset, msg)
            })?;
            units.push(unit);
        }
    }
}
