//! Line-oriented standard form.
//!
//! ```text
//! # comment
//! VARS <groups>
//! <cone> <size> <name>        # cone ∈ free|nonneg|soc|rsoc|psd; psd size = side
//! OBJ <nnz>
//! <col> <value>
//! EQ <rows> <nnz> <rhs-nnz>
//! A <row> <col> <value>
//! B <row> <value>
//! END
//! ```
//!
//! Floats are written in shortest round-trip exponent form, so a re-import
//! reproduces the program bit for bit.

use std::fmt::Write as _;
use std::io::{self, Write};

use thiserror::Error;

use super::{Cone, ConicProgram, LinExpr, ProgramBuilder, ProgramError};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn export_standard_form<W: Write>(p: &ConicProgram, mut out: W) -> Result<(), FormatError> {
    let mut s = String::new();
    let _ = writeln!(s, "# conic program: minimize c'x subject to Ax = b, x in K");
    let _ = writeln!(s, "# {} variables, {} equalities", p.num_vars(), p.num_equalities());
    let _ = writeln!(s, "VARS {}", p.groups().len());
    for g in p.groups() {
        let _ = writeln!(s, "{} {} {}", g.cone.tag(), g.cone.size_param(), g.name);
    }
    let obj: Vec<(usize, f64)> = p.objective().iter().copied().enumerate().filter(|e| e.1 != 0.0).collect();
    let _ = writeln!(s, "OBJ {}", obj.len());
    for (col, v) in obj {
        let _ = writeln!(s, "{col} {v:e}");
    }
    let nnz: usize = p.rows().iter().map(Vec::len).sum();
    let rhs: Vec<(usize, f64)> = p.rhs().iter().copied().enumerate().filter(|e| e.1 != 0.0).collect();
    let _ = writeln!(s, "EQ {} {} {}", p.num_equalities(), nnz, rhs.len());
    for (i, row) in p.rows().iter().enumerate() {
        for &(col, v) in row {
            let _ = writeln!(s, "A {i} {col} {v:e}");
        }
    }
    for (i, v) in rhs {
        let _ = writeln!(s, "B {i} {v:e}");
    }
    let _ = writeln!(s, "END");
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn import_standard_form(text: &str) -> Result<ConicProgram, FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let err = |line: usize, msg: &str| FormatError::Parse { line, msg: msg.to_string() };

    let mut next = |what: &str| lines.next().ok_or_else(|| err(0, &format!("unexpected end of input, expected {what}")));

    let (ln, l) = next("VARS")?;
    let ngroups: usize = section(l, "VARS", 1).map_err(|m| err(ln, &m))?[0];
    let mut b = ProgramBuilder::new();
    for _ in 0..ngroups {
        let (ln, l) = next("variable group")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err(ln, "expected '<cone> <size> <name>'"));
        }
        let k: usize = f[1].parse().map_err(|_| err(ln, "bad cone size"))?;
        let cone = match f[0] {
            "free" => Cone::Free(k),
            "nonneg" => Cone::Nonneg(k),
            "soc" => Cone::Soc(k),
            "rsoc" => Cone::Rsoc(k),
            "psd" => Cone::Psd(k),
            other => return Err(err(ln, &format!("unknown cone '{other}'"))),
        };
        if b.group(f[2]).is_some() {
            return Err(err(ln, "duplicate group name"));
        }
        b.declare(f[2], cone)?;
    }

    let (ln, l) = next("OBJ")?;
    let nobj = section(l, "OBJ", 1).map_err(|m| err(ln, &m))?[0];
    for _ in 0..nobj {
        let (ln, l) = next("objective entry")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 2 {
            return Err(err(ln, "expected '<col> <value>'"));
        }
        let col = f[0].parse().map_err(|_| err(ln, "bad column"))?;
        let v: f64 = f[1].parse().map_err(|_| err(ln, "bad value"))?;
        b.add_objective(col, v);
    }

    let (ln, l) = next("EQ")?;
    let h = section(l, "EQ", 3).map_err(|m| err(ln, &m))?;
    let (m, nnz, nrhs) = (h[0], h[1], h[2]);
    let mut rows = vec![LinExpr::zero(); m];
    let mut rhs = vec![0.0; m];
    for _ in 0..nnz {
        let (ln, l) = next("matrix entry")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 || f[0] != "A" {
            return Err(err(ln, "expected 'A <row> <col> <value>'"));
        }
        let i: usize = f[1].parse().map_err(|_| err(ln, "bad row"))?;
        let col: usize = f[2].parse().map_err(|_| err(ln, "bad column"))?;
        let v: f64 = f[3].parse().map_err(|_| err(ln, "bad value"))?;
        rows.get_mut(i).ok_or_else(|| err(ln, "row out of range"))?.add_term(col, v);
    }
    for _ in 0..nrhs {
        let (ln, l) = next("right-hand side entry")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 || f[0] != "B" {
            return Err(err(ln, "expected 'B <row> <value>'"));
        }
        let i: usize = f[1].parse().map_err(|_| err(ln, "bad row"))?;
        let v: f64 = f[2].parse().map_err(|_| err(ln, "bad value"))?;
        *rhs.get_mut(i).ok_or_else(|| err(ln, "row out of range"))? = v;
    }
    let (ln, l) = next("END")?;
    if l != "END" {
        return Err(err(ln, "expected END"));
    }
    for (e, v) in rows.into_iter().zip(rhs) {
        b.add_equality(e, v);
    }
    Ok(b.finish()?.0)
}

fn section(line: &str, name: &str, count: usize) -> Result<Vec<usize>, String> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.first() != Some(&name) || f.len() != count + 1 {
        return Err(format!("expected '{name}' header with {count} count(s)"));
    }
    f[1..].iter().map(|s| s.parse().map_err(|_| format!("bad count in {name} header"))).collect()
}
