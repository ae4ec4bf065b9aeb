//! SDPA sparse format (`.dat-s`) and SDPA solution files.
//!
//! An [`SdpInstance`] is the SDPA *dual* form `max <F0,Y> s.t. <Fi,Y> = ci,
//! Y PSD` with `Y = diag(X_1, ..., X_K, diag(y+, y-))`: each free variable
//! is split into a nonnegative pair living in one trailing diagonal block.
//! Two comment lines make the conversion reversible:
//!
//! ```text
//! *free-split-block <k>      1-based index of the split block
//! *objective-offset <v>
//! ```
//!
//! Layout: comment lines starting with `*`, then `mDIM`, `nBLOCK`, the block
//! sizes (negative = diagonal), the `c` vector, and 5-tuples `matno blkno i j
//! value` (1-indexed, upper triangle, `matno = 0` is `F0`).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::instance::{LinearForm, SdpInstance};
use crate::ipm::{Solution, SolverOptions, Status};
use crate::SdpError;

fn num(v: f64) -> String {
    format!("{v:e}")
}

/// Writes the instance in SDPA sparse format. Output is canonical: entries
/// are sorted and merged, so equal instances give identical bytes.
pub fn write_sdpa(inst: &SdpInstance) -> String {
    let mut inst = inst.clone();
    inst.canonicalize();
    let k = inst.blocks.len();
    let p = inst.n_free;
    let mut out = String::new();
    out.push_str("* block SDP in SDPA sparse format\n");
    if p > 0 {
        let _ = writeln!(out, "*free-split-block {}", k + 1);
    }
    if inst.objective_offset != 0.0 {
        let _ = writeln!(out, "*objective-offset {}", num(inst.objective_offset));
    }
    let _ = writeln!(out, "{}", inst.rows.len());
    let _ = writeln!(out, "{}", k + usize::from(p > 0));
    let mut sizes: Vec<String> = inst.blocks.iter().map(|d| d.to_string()).collect();
    if p > 0 {
        sizes.push(format!("-{}", 2 * p));
    }
    let _ = writeln!(out, "{}", sizes.join(" "));
    let c: Vec<String> = inst.rows.iter().map(|r| num(r.rhs)).collect();
    let _ = writeln!(out, "{}", c.join(" "));

    let mut emit = |matno: usize, form: &LinearForm, sign: f64| {
        for e in &form.entries {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                matno,
                e.block + 1,
                e.i + 1,
                e.j + 1,
                num(sign * e.value)
            );
        }
        for &(f, v) in &form.free {
            let _ = writeln!(out, "{} {} {} {} {}", matno, k + 1, f + 1, f + 1, num(sign * v));
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                matno,
                k + 1,
                p + f + 1,
                p + f + 1,
                num(-sign * v)
            );
        }
    };
    // F0 = -C so that maximizing <F0, Y> minimizes our objective.
    emit(0, &inst.objective, -1.0);
    for (r, row) in inst.rows.iter().enumerate() {
        emit(r + 1, &row.form, 1.0);
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> SdpError {
    SdpError::Parse {
        line,
        message: message.into(),
    }
}

/// Splits a header line into numbers, tolerating the `{ } ( ) ,` punctuation
/// some writers use.
fn numbers(line: &str) -> Vec<&str> {
    line.split(|c: char| c.is_whitespace() || "{}(),".contains(c))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Parses SDPA sparse format. Diagonal blocks other than an annotated
/// free-split block become independent 1x1 PSD blocks.
pub fn parse_sdpa(text: &str) -> Result<SdpInstance, SdpError> {
    let mut split_block: Option<usize> = None;
    let mut offset = 0.0;
    let mut body: Vec<(usize, &str)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('*').or_else(|| line.strip_prefix('"')) {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("free-split-block") {
                split_block = Some(
                    v.trim()
                        .parse()
                        .map_err(|_| parse_err(ln + 1, "bad free-split-block annotation"))?,
                );
            } else if let Some(v) = rest.strip_prefix("objective-offset") {
                offset = v
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(ln + 1, "bad objective-offset annotation"))?;
            }
            continue;
        }
        body.push((ln + 1, line));
    }
    let mut it = body.into_iter();
    let mut header = |what: &str| -> Result<(usize, Vec<String>), SdpError> {
        let (ln, line) = it
            .next()
            .ok_or_else(|| parse_err(0, format!("missing {what}")))?;
        Ok((ln, numbers(line).into_iter().map(String::from).collect()))
    };
    let (ln, f) = header("mDIM")?;
    let m: usize = f
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(ln, "bad mDIM"))?;
    let (ln, f) = header("nBLOCK")?;
    let nblock: usize = f
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(ln, "bad nBLOCK"))?;
    let (ln, f) = header("block structure")?;
    let sizes: Vec<i64> = f
        .iter()
        .take(nblock)
        .map(|s| s.parse::<i64>())
        .collect::<Result<_, _>>()
        .map_err(|_| parse_err(ln, "bad block structure"))?;
    if sizes.len() != nblock || sizes.contains(&0) {
        return Err(parse_err(ln, "block structure does not match nBLOCK"));
    }
    // The c vector may wrap over several lines.
    let mut c: Vec<f64> = Vec::with_capacity(m);
    let mut rest: Vec<(usize, &str)> = Vec::new();
    for (ln, line) in it.by_ref() {
        if c.len() < m {
            for tok in numbers(line) {
                c.push(tok.parse().map_err(|_| parse_err(ln, "bad c vector entry"))?);
            }
            if c.len() > m {
                return Err(parse_err(ln, "c vector longer than mDIM"));
            }
        } else {
            rest.push((ln, line));
        }
    }
    if c.len() != m {
        return Err(parse_err(0, "c vector shorter than mDIM"));
    }

    if let Some(sb) = split_block {
        if sb == 0 || sb > nblock || sizes[sb - 1] >= 0 || sizes[sb - 1] % 2 != 0 {
            return Err(parse_err(0, "free-split-block must name an even diagonal block"));
        }
    }

    // Map SDPA blocks to instance blocks.
    enum Target {
        Psd(usize),
        Diag(usize),
        Split(usize),
    }
    let mut inst = SdpInstance::new();
    let mut targets = Vec::with_capacity(nblock);
    for (b, &s) in sizes.iter().enumerate() {
        if Some(b + 1) == split_block {
            let p = (-s) as usize / 2;
            targets.push(Target::Split(p));
            inst.n_free = p;
        } else if s > 0 {
            targets.push(Target::Psd(inst.add_block(s as usize)));
        } else {
            let first = inst.blocks.len();
            for _ in 0..(-s) {
                inst.add_block(1);
            }
            targets.push(Target::Diag(first));
        }
    }

    let mut forms: Vec<LinearForm> = vec![LinearForm::new(); m + 1];
    for (ln, line) in rest {
        let f = numbers(line);
        if f.len() != 5 {
            return Err(parse_err(ln, "expected `matno blkno i j value`"));
        }
        let ints: Vec<usize> = f[..4]
            .iter()
            .map(|s| s.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(ln, "bad index"))?;
        let v: f64 = f[4].parse().map_err(|_| parse_err(ln, "bad value"))?;
        let (matno, blk, i, j) = (ints[0], ints[1], ints[2], ints[3]);
        if matno > m || blk == 0 || blk > nblock || i == 0 || j == 0 {
            return Err(parse_err(ln, "index out of range"));
        }
        let size = sizes[blk - 1].unsigned_abs() as usize;
        if i > size || j > size {
            return Err(parse_err(ln, "entry outside its block"));
        }
        // F0 enters with a minus sign (it is -C).
        let sign = if matno == 0 { -1.0 } else { 1.0 };
        let form = &mut forms[matno];
        match targets[blk - 1] {
            Target::Psd(k) => form.add_entry(k, i - 1, j - 1, sign * v),
            Target::Diag(first) => {
                if i != j {
                    return Err(parse_err(ln, "off-diagonal entry in diagonal block"));
                }
                form.add_entry(first + i - 1, 0, 0, sign * v);
            }
            Target::Split(p) => {
                if i != j {
                    return Err(parse_err(ln, "off-diagonal entry in diagonal block"));
                }
                // y+ columns carry the coefficient; the y- mirror is implied.
                if i <= p {
                    form.add_free(i - 1, sign * v);
                }
            }
        }
    }
    let mut forms = forms.into_iter();
    inst.objective = forms.next().unwrap();
    inst.objective.canonicalize();
    inst.objective_offset = offset;
    for (form, rhs) in forms.zip(c) {
        inst.add_row(form, rhs);
    }
    Ok(inst)
}

fn status_phase(s: Status) -> &'static str {
    // Our primal is the SDPA dual problem.
    match s {
        Status::Optimal => "pdOPT",
        Status::PrimalInfeasible => "pUNBD",
        Status::DualInfeasible => "dUNBD",
        Status::NumericalTrouble => "noINFO",
    }
}

fn phase_status(p: &str) -> Status {
    match p {
        "pdOPT" => Status::Optimal,
        "pUNBD" | "pFEAS_dINF" | "pdINF" => Status::PrimalInfeasible,
        "dUNBD" | "pINF_dFEAS" => Status::DualInfeasible,
        _ => Status::NumericalTrouble,
    }
}

fn write_block(out: &mut String, m: &DMatrix<f64>) {
    out.push('{');
    for i in 0..m.nrows() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('{');
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:+e}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('}');
    }
    out.push_str(" }\n");
}

/// Renders a solution in the SDPA output layout (`phase.value`,
/// `objValPrimal`, `objValDual`, `xVec`, `xMat`, `yMat`) for the SDPA form of
/// `inst` produced by [`write_sdpa`].
pub fn write_solution(inst: &SdpInstance, sol: &Solution) -> String {
    let p = inst.n_free;
    let mut out = String::new();
    let _ = writeln!(out, "phase.value  = {}", status_phase(sol.status));
    // SDPA primal objective is sum c_i x_i = -(our dual objective).
    let _ = writeln!(out, "objValPrimal = {:+e}", -(sol.dual_objective - inst.objective_offset));
    let _ = writeln!(out, "objValDual   = {:+e}", -(sol.primal_objective - inst.objective_offset));
    out.push_str("xVec = \n{");
    let xv: Vec<String> = sol.z.iter().map(|z| format!("{:+e}", -z)).collect();
    out.push_str(&xv.join(","));
    out.push_str("}\n");
    let split = |v: &[f64], s: bool| -> Vec<String> {
        let mut d = vec![0.0; 2 * p];
        for (f, &val) in v.iter().enumerate() {
            if s {
                // Dual slack of y+ and y- is the reduced cost; zero at optimum.
                d[f] = val;
                d[p + f] = val;
            } else {
                d[f] = val.max(0.0);
                d[p + f] = (-val).max(0.0);
            }
        }
        d.iter().map(|v| format!("{v:+e}")).collect()
    };
    out.push_str("xMat = \n{\n");
    for s in &sol.s {
        write_block(&mut out, s);
    }
    if p > 0 {
        let _ = writeln!(out, "{{{}}}", split(&vec![0.0; p], true).join(","));
    }
    out.push_str("}\n");
    out.push_str("yMat = \n{\n");
    for x in &sol.x {
        write_block(&mut out, x);
    }
    if p > 0 {
        let _ = writeln!(out, "{{{}}}", split(&sol.y, false).join(","));
    }
    out.push_str("}\n");
    out
}

/// Nested brace structure of numbers.
#[derive(Debug)]
enum Nest {
    Num(f64),
    List(Vec<Nest>),
}

fn parse_nest(s: &str, pos: &mut usize) -> Result<Nest, String> {
    let b = s.as_bytes();
    while *pos < b.len() && (b[*pos].is_ascii_whitespace() || b[*pos] == b',') {
        *pos += 1;
    }
    if *pos >= b.len() {
        return Err("unexpected end of solution file".into());
    }
    if b[*pos] == b'{' {
        *pos += 1;
        let mut items = Vec::new();
        loop {
            while *pos < b.len() && (b[*pos].is_ascii_whitespace() || b[*pos] == b',') {
                *pos += 1;
            }
            if *pos >= b.len() {
                return Err("unbalanced braces".into());
            }
            if b[*pos] == b'}' {
                *pos += 1;
                return Ok(Nest::List(items));
            }
            items.push(parse_nest(s, pos)?);
        }
    }
    let start = *pos;
    while *pos < b.len() && !(b[*pos].is_ascii_whitespace() || b"{},".contains(&b[*pos])) {
        *pos += 1;
    }
    s[start..*pos]
        .parse::<f64>()
        .map(Nest::Num)
        .map_err(|_| format!("bad number `{}`", &s[start..*pos]))
}

fn section<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    let idx = text.find(&format!("{name} ="))?;
    Some(&text[idx + name.len() + 2..])
}

fn flat(n: &Nest) -> Vec<f64> {
    match n {
        Nest::Num(v) => vec![*v],
        Nest::List(items) => items.iter().flat_map(flat).collect(),
    }
}

/// Parses an SDPA output file against the instance it was produced for.
pub fn parse_solution(inst: &SdpInstance, text: &str) -> Result<Solution, SdpError> {
    let err = |m: String| parse_err(0, m);
    let phase = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("phase.value"))
        .map(|r| r.trim_start_matches([' ', '=']).trim().to_string())
        .ok_or_else(|| err("missing phase.value".into()))?;
    let status = phase_status(&phase);

    let read = |name: &str| -> Result<Nest, SdpError> {
        let s = section(text, name).ok_or_else(|| err(format!("missing {name}")))?;
        let mut pos = 0;
        parse_nest(s, &mut pos).map_err(err)
    };
    let xvec = flat(&read("xVec")?);
    if xvec.len() != inst.rows.len() {
        return Err(err(format!(
            "xVec has {} entries, expected {}",
            xvec.len(),
            inst.rows.len()
        )));
    }
    let blocks_of = |n: Nest, name: &str| -> Result<(Vec<DMatrix<f64>>, Vec<f64>), SdpError> {
        let Nest::List(items) = n else {
            return Err(err(format!("{name} is not a list of blocks")));
        };
        let k = inst.blocks.len();
        let expect = k + usize::from(inst.n_free > 0);
        if items.len() != expect {
            return Err(err(format!("{name} has {} blocks, expected {expect}", items.len())));
        }
        let mut mats = Vec::with_capacity(k);
        let mut items = items.into_iter();
        for &d in &inst.blocks {
            let vals = flat(&items.next().unwrap());
            if vals.len() != d * d {
                return Err(err(format!("{name}: block of wrong size")));
            }
            mats.push(DMatrix::from_row_slice(d, d, &vals));
        }
        let diag = items.next().map(|n| flat(&n)).unwrap_or_default();
        if diag.len() != 2 * inst.n_free {
            return Err(err(format!("{name}: free-split block of wrong size")));
        }
        Ok((mats, diag))
    };
    let (s, _) = blocks_of(read("xMat")?, "xMat")?;
    let (x, diag) = blocks_of(read("yMat")?, "yMat")?;
    let p = inst.n_free;
    let y: Vec<f64> = (0..p).map(|f| diag[f] - diag[p + f]).collect();
    let z: Vec<f64> = xvec.iter().map(|v| -v).collect();

    let mut pobj = inst.objective_offset;
    for e in &inst.objective.entries {
        let v = x[e.block][(e.i, e.j)];
        pobj += if e.i == e.j { e.value * v } else { 2.0 * e.value * v };
    }
    for &(f, v) in &inst.objective.free {
        pobj += v * y[f];
    }
    let dobj = inst.objective_offset + inst.rows.iter().zip(&z).map(|(r, z)| r.rhs * z).sum::<f64>();
    Ok(Solution {
        status,
        x,
        y,
        z,
        s,
        primal_objective: pobj,
        dual_objective: dobj,
        iterations: 0,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        gap: f64::NAN,
    })
}

/// Drop-in SDPA-style solver: reads a `.dat-s` file, solves it in process,
/// and writes the solution in SDPA output layout.
pub fn solve_file(problem: &Path, output: &Path, opts: &SolverOptions) -> Result<Status, SdpError> {
    let text = std::fs::read_to_string(problem)?;
    let inst = parse_sdpa(&text)?;
    let sol = crate::ipm::solve(&inst, opts)?;
    std::fs::write(output, write_solution(&inst, &sol))?;
    Ok(sol.status)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_block() -> SdpInstance {
        let mut inst = SdpInstance::new();
        inst.add_block(2);
        inst.add_block(1);
        inst.add_free(1);
        let mut f = LinearForm::new();
        f.add_entry(0, 0, 1, 1.0);
        f.add_entry(1, 0, 0, -0.5);
        f.add_free(0, 2.0);
        inst.add_row(f, 1.25);
        let mut f = LinearForm::new();
        f.add_entry(0, 1, 1, 1.0);
        inst.add_row(f, 3.0);
        inst.objective.add_entry(0, 0, 0, 1.0);
        inst.objective.add_free(0, -0.1);
        inst
    }

    #[test]
    fn layout_is_exact() {
        let text = write_sdpa(&two_block());
        let expected = "\
* block SDP in SDPA sparse format
*free-split-block 3
2
3
2 1 -2
1.25e0 3e0
0 1 1 1 -1e0
0 3 1 1 1e-1
0 3 2 2 -1e-1
1 1 1 2 1e0
1 2 1 1 -5e-1
1 3 1 1 2e0
1 3 2 2 -2e0
2 1 2 2 1e0
";
        assert_eq!(text, expected);
    }

    #[test]
    fn round_trip_is_identity() {
        let inst = two_block();
        let text = write_sdpa(&inst);
        let back = parse_sdpa(&text).unwrap();
        let mut canon = inst.clone();
        canon.canonicalize();
        assert_eq!(back, canon);
        assert_eq!(write_sdpa(&back), text);
    }

    #[test]
    fn plain_diagonal_blocks_become_scalars() {
        let text = "\"comment\n1\n2\n{2, -2}\n{1.0}\n1 1 1 1 1\n1 2 2 2 1\n0 2 1 1 -1\n";
        let inst = parse_sdpa(text).unwrap();
        assert_eq!(inst.blocks, vec![2, 1, 1]);
        assert_eq!(inst.n_free, 0);
        assert_eq!(inst.rows[0].form.entries.len(), 2);
        assert_eq!(inst.objective.entries[0].block, 1);
        assert_eq!(inst.objective.entries[0].value, 1.0);
    }

    #[test]
    fn parse_errors_report_lines() {
        let bad = "1\n1\n2\n1\n1 1 1 x 1\n";
        match parse_sdpa(bad) {
            Err(SdpError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_sdpa("1\n1\n2\n1\n1 1 3 3 1\n").is_err());
        assert!(parse_sdpa("2\n1\n2\n1\n").is_err());
    }

    #[test]
    fn solution_file_round_trip() {
        let inst = two_block();
        let sol = crate::ipm::solve(&inst, &SolverOptions::default()).unwrap();
        let text = write_solution(&inst, &sol);
        let back = parse_solution(&inst, &text).unwrap();
        assert_eq!(back.status, sol.status);
        for (a, b) in back.x.iter().zip(&sol.x) {
            assert!((a - b).abs().max() < 1e-12 * (1.0 + b.abs().max()));
        }
        for (a, b) in back.y.iter().zip(&sol.y) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
        assert!((back.primal_objective - sol.primal_objective).abs() < 1e-9);
    }
}
