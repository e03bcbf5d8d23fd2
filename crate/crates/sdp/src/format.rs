//! Sparse text serialization of [`SdpProblem`].
//!
//! Line oriented, whitespace separated, `#` starts a comment. Indices are
//! 1-based; variable index `0` in a block line denotes the constant term.
//!
//! ```text
//! orbstab-sdp 1
//! vars <N>
//! objective <nnz>
//! <var> <c_var>                      (nnz lines)
//! equalities <rows> <nnz>
//! <row> <var> <value>                (nnz lines)
//! <row> <rhs>                        (rows lines)
//! blocks <count>
//! block <dim> <nnz>
//! <var> <row> <col> <value>          (nnz lines, row <= col)
//! ```
//!
//! Floats are written in shortest round-trip form, so writing a parsed
//! document reproduces it byte for byte.

use std::fmt::Write as _;

use crate::{BlockEntry, EqualityEntry, PsdBlock, SdpError, SdpProblem};

const MAGIC: &str = "orbstab-sdp 1";

pub fn write(p: &SdpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "vars {}", p.num_vars);
    let nz: Vec<_> = p.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).collect();
    let _ = writeln!(out, "objective {}", nz.len());
    for (i, c) in nz {
        let _ = writeln!(out, "{} {:?}", i + 1, c);
    }
    let _ = writeln!(out, "equalities {} {}", p.eq_rhs.len(), p.eq_entries.len());
    for e in &p.eq_entries {
        let _ = writeln!(out, "{} {} {:?}", e.row + 1, e.var + 1, e.value);
    }
    for (r, b) in p.eq_rhs.iter().enumerate() {
        let _ = writeln!(out, "{} {:?}", r + 1, b);
    }
    let _ = writeln!(out, "blocks {}", p.blocks.len());
    for b in &p.blocks {
        let _ = writeln!(out, "block {} {}", b.dim, b.entries.len());
        for e in &b.entries {
            let v = e.var.map_or(0, |v| v + 1);
            let _ = writeln!(out, "{} {} {} {:?}", v, e.row + 1, e.col + 1, e.value);
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_tokens(&mut self) -> Result<Vec<&'a str>, SdpError> {
        for (i, raw) in self.inner.by_ref() {
            self.line = i + 1;
            let body = raw.split('#').next().unwrap_or("");
            let toks: Vec<&str> = body.split_whitespace().collect();
            if !toks.is_empty() {
                return Ok(toks);
            }
        }
        Err(self.err("unexpected end of document"))
    }

    fn err(&self, msg: &str) -> SdpError {
        SdpError::Parse { line: self.line, msg: msg.to_string() }
    }

    fn keyword(&mut self, key: &str, count: usize) -> Result<Vec<usize>, SdpError> {
        let t = self.next_tokens()?;
        if t[0] != key || t.len() != count + 1 {
            return Err(self.err(&format!("expected `{key}` with {count} value(s)")));
        }
        t[1..].iter().map(|s| self.int(s)).collect()
    }

    fn int(&self, s: &str) -> Result<usize, SdpError> {
        s.parse().map_err(|_| self.err(&format!("bad integer `{s}`")))
    }

    fn float(&self, s: &str) -> Result<f64, SdpError> {
        s.parse().map_err(|_| self.err(&format!("bad number `{s}`")))
    }

    fn index(&self, s: &str, bound: usize) -> Result<usize, SdpError> {
        let i = self.int(s)?;
        if i == 0 || i > bound {
            return Err(self.err(&format!("index {i} outside 1..={bound}")));
        }
        Ok(i - 1)
    }

    fn record(&mut self, width: usize) -> Result<Vec<&'a str>, SdpError> {
        let t = self.next_tokens()?;
        if t.len() != width {
            return Err(self.err(&format!("expected {width} fields")));
        }
        Ok(t)
    }
}

pub fn parse(text: &str) -> Result<SdpProblem, SdpError> {
    let mut lines = Lines { inner: text.lines().enumerate(), line: 0 };
    let head = lines.next_tokens()?;
    if head.join(" ") != MAGIC {
        return Err(lines.err("missing `orbstab-sdp 1` header"));
    }
    let n = lines.keyword("vars", 1)?[0];
    let mut p = SdpProblem::new(n);
    let nnz = lines.keyword("objective", 1)?[0];
    for _ in 0..nnz {
        let t = lines.record(2)?;
        let i = lines.index(t[0], n)?;
        p.objective[i] = lines.float(t[1])?;
    }
    let eq = lines.keyword("equalities", 2)?;
    let (rows, nnz) = (eq[0], eq[1]);
    for _ in 0..nnz {
        let t = lines.record(3)?;
        p.eq_entries.push(EqualityEntry {
            row: lines.index(t[0], rows)?,
            var: lines.index(t[1], n)?,
            value: lines.float(t[2])?,
        });
    }
    p.eq_rhs = vec![0.0; rows];
    for _ in 0..rows {
        let t = lines.record(2)?;
        let r = lines.index(t[0], rows)?;
        p.eq_rhs[r] = lines.float(t[1])?;
    }
    let count = lines.keyword("blocks", 1)?[0];
    for _ in 0..count {
        let h = lines.keyword("block", 2)?;
        let mut b = PsdBlock::new(h[0]);
        for _ in 0..h[1] {
            let t = lines.record(4)?;
            let v = lines.int(t[0])?;
            if v > n {
                return Err(lines.err(&format!("variable {v} outside 0..={n}")));
            }
            let row = lines.index(t[1], b.dim)?;
            let col = lines.index(t[2], b.dim)?;
            if row > col {
                return Err(lines.err("block entries must satisfy row <= col"));
            }
            b.entries.push(BlockEntry {
                var: v.checked_sub(1),
                row,
                col,
                value: lines.float(t[3])?,
            });
        }
        p.blocks.push(b);
    }
    if lines.next_tokens().is_ok() {
        return Err(lines.err("trailing content"));
    }
    p.check()?;
    Ok(p)
}
