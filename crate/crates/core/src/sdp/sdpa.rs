//! Sparse SDPA text format (`.dat-s`).
//!
//! SDPA states `min cᵀx s.t. Σ F_i x_i − F_0 ⪰ 0`; an [`SdpProblem`] maps onto
//! it with `c = −objective`, `F_j = A_j` and `F_0 = −C`. Linear equalities
//! become a trailing diagonal block holding both `E y − f ≥ 0` and
//! `f − E y ≥ 0`. Values are written with 17 significant digits.

use std::fmt::Write as _;

use super::{AffineBlock, SdpProblem};
use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders `p` in sparse SDPA format.
pub fn write_sdpa(p: &SdpProblem, title: &str) -> String {
    let mut out = String::new();
    let mut struct_line: Vec<String> = p.block_dims().iter().map(|d| d.to_string()).collect();
    let eq_block = (!p.equalities.is_empty()).then(|| {
        struct_line.push(format!("-{}", 2 * p.equalities.len()));
        struct_line.len()
    });
    for line in title.lines() {
        let _ = writeln!(out, "\"{line}");
    }
    let _ = writeln!(out, "{} = mDIM", p.num_scalars);
    let _ = writeln!(out, "{} = nBLOCK", struct_line.len());
    let _ = writeln!(out, "{}", struct_line.join(" "));
    let c: Vec<String> = p.objective.iter().map(|b| num(-b)).collect();
    let _ = writeln!(out, "{}", c.join(" "));

    let mut entry = |mat: usize, blk: usize, m: &SymMatrix, sign: f64| {
        let d = m.dim();
        for i in 0..d {
            for j in i..d {
                let v = m.get(i, j);
                if v != 0.0 {
                    let _ = writeln!(out, "{mat} {blk} {} {} {}", i + 1, j + 1, num(sign * v));
                }
            }
        }
    };
    for (k, blk) in p.blocks.iter().enumerate() {
        entry(0, k + 1, &blk.constant, -1.0);
        let mut terms: Vec<_> = blk.terms.iter().collect();
        terms.sort_by_key(|(j, _)| *j);
        for (j, a) in terms {
            entry(j + 1, k + 1, a, 1.0);
        }
    }
    if let Some(blk) = eq_block {
        for (i, eq) in p.equalities.iter().enumerate() {
            let (up, down) = (2 * i + 1, 2 * i + 2);
            if eq.rhs != 0.0 {
                let _ = writeln!(out, "0 {blk} {up} {up} {}", num(eq.rhs));
                let _ = writeln!(out, "0 {blk} {down} {down} {}", num(-eq.rhs));
            }
            for (j, a) in &eq.coeffs {
                if *a != 0.0 {
                    let _ = writeln!(out, "{} {blk} {up} {up} {}", j + 1, num(*a));
                    let _ = writeln!(out, "{} {blk} {down} {down} {}", j + 1, num(-a));
                }
            }
        }
    }
    out
}

/// A parsed SDPA file, kept close to the on-disk layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpaProblem {
    pub c: Vec<f64>,
    /// Negative sizes denote diagonal blocks.
    pub block_struct: Vec<i64>,
    /// `(matrix number, block, row, column, value)`, 1-based as on disk.
    pub entries: Vec<(usize, usize, usize, usize, f64)>,
}

fn perr(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        field: field.into(),
        message: message.into(),
    }
}

/// Parses sparse SDPA text. Separators `, ( ) { }` are treated as blanks.
pub fn parse_sdpa(text: &str) -> Result<SdpaProblem> {
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.peek() {
        let t = line.trim_start();
        if t.starts_with('"') || t.starts_with('*') {
            lines.next();
        } else {
            break;
        }
    }
    let body: String = lines
        .map(|l| {
            // trailing text after the numbers on the header lines (e.g. "= mDIM")
            l.split(['"', '*', '='])
                .next()
                .unwrap_or("")
                .replace([',', '(', ')', '{', '}'], " ")
        })
        .collect::<Vec<_>>()
        .join("\n");
    let mut tokens = body.split_whitespace();

    let mut next_int = |field: &str| -> Result<i64> {
        let tok = tokens
            .next()
            .ok_or_else(|| perr(field, "unexpected end of input"))?;
        tok.parse::<i64>()
            .map_err(|_| perr(field, format!("expected an integer, got `{tok}`")))
    };
    let m = next_int("mDIM")?;
    let nblock = next_int("nBLOCK")?;
    if !(0..=1_000_000).contains(&m) {
        return Err(perr("mDIM", format!("out of range: {m}")));
    }
    if !(1..=100_000).contains(&nblock) {
        return Err(perr("nBLOCK", format!("out of range: {nblock}")));
    }
    let mut block_struct = Vec::with_capacity(nblock as usize);
    for k in 0..nblock {
        let d = next_int(&format!("blockStruct[{k}]"))?;
        if d == 0 || d.unsigned_abs() > 100_000 {
            return Err(perr(format!("blockStruct[{k}]"), format!("bad size {d}")));
        }
        block_struct.push(d);
    }

    let rest: Vec<&str> = tokens.collect();
    let m = m as usize;
    if rest.len() < m {
        return Err(perr("c", "unexpected end of input"));
    }
    let parse_f = |field: String, tok: &str| -> Result<f64> {
        let v = tok
            .parse::<f64>()
            .map_err(|_| perr(field.clone(), format!("expected a number, got `{tok}`")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(perr(field, "non-finite value"))
        }
    };
    let c = rest[..m]
        .iter()
        .enumerate()
        .map(|(i, t)| parse_f(format!("c[{i}]"), t))
        .collect::<Result<Vec<_>>>()?;
    let tail = &rest[m..];
    if !tail.len().is_multiple_of(5) {
        return Err(perr("entries", "trailing partial entry"));
    }
    let mut entries = Vec::with_capacity(tail.len() / 5);
    for (n, e) in tail.chunks(5).enumerate() {
        let field = |what: &str| format!("entries[{n}].{what}");
        let idx = |what: &str, t: &str| -> Result<usize> {
            t.parse::<usize>()
                .map_err(|_| perr(field(what), format!("expected an index, got `{t}`")))
        };
        let mat = idx("matno", e[0])?;
        let blk = idx("blkno", e[1])?;
        let i = idx("i", e[2])?;
        let j = idx("j", e[3])?;
        let v = parse_f(field("value"), e[4])?;
        if mat > m {
            return Err(perr(field("matno"), format!("{mat} exceeds mDIM {m}")));
        }
        if blk == 0 || blk > block_struct.len() {
            return Err(perr(field("blkno"), format!("{blk} out of range")));
        }
        let size = block_struct[blk - 1];
        let d = size.unsigned_abs() as usize;
        if i == 0 || j == 0 || i > d || j > d {
            return Err(perr(
                field("i"),
                format!("({i}, {j}) outside a {d}x{d} block"),
            ));
        }
        if size < 0 && i != j {
            return Err(perr(field("j"), "off-diagonal entry in a diagonal block"));
        }
        entries.push((mat, blk, i, j, v));
    }
    Ok(SdpaProblem {
        c,
        block_struct,
        entries,
    })
}

impl SdpaProblem {
    /// Converts back to block form (`max −cᵀy s.t. −F_0 + Σ F_j y_j ⪰ 0`).
    /// Diagonal blocks become ordinary blocks with diagonal coefficients.
    pub fn to_problem(&self) -> SdpProblem {
        let m = self.c.len();
        let dims: Vec<usize> = self
            .block_struct
            .iter()
            .map(|d| d.unsigned_abs() as usize)
            .collect();
        // mats[k][j]: dense accumulators, j = 0 is F_0
        let mut mats: Vec<Vec<Option<nalgebra::DMatrix<f64>>>> =
            dims.iter().map(|_| vec![None; m + 1]).collect();
        for &(mat, blk, i, j, v) in &self.entries {
            let d = dims[blk - 1];
            let acc = mats[blk - 1][mat].get_or_insert_with(|| nalgebra::DMatrix::zeros(d, d));
            acc[(i - 1, j - 1)] = v;
            acc[(j - 1, i - 1)] = v;
        }
        let mut p = SdpProblem::new(m);
        p.objective = self.c.iter().map(|v| -v).collect();
        for (k, &d) in dims.iter().enumerate() {
            let constant = mats[k][0]
                .take()
                .map(|f0| SymMatrix::from_lower_fn(d, |i, j| -f0[(i, j)]))
                .unwrap_or_else(|| SymMatrix::zeros(d));
            let mut blk = AffineBlock::new(format!("block{}", k + 1), constant);
            for (j, slot) in mats[k].iter_mut().enumerate().skip(1) {
                if let Some(f) = slot.take() {
                    blk.add_term(j - 1, SymMatrix::from_lower_fn(d, |r, c| f[(r, c)]));
                }
            }
            p.add_block(blk);
        }
        p
    }
}
