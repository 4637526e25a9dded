//! Textual specifications of graded/stratified Lie algebras.
//!
//! The file format is line oriented, `#` starts a comment:
//!
//! ```text
//! group h1
//! step 2
//! layer 1: X Y
//! layer 2: T
//! bracket [X,Y] = T
//! ```
//!
//! Structure constants are exact rationals and every structural invariant
//! (antisymmetry, grading, Jacobi) is checked in exact arithmetic.
//! Unspecified brackets are zero; the antisymmetric pair of each declared
//! bracket is filled in automatically.

use crate::report::ValidationReport;
use num_rational::Ratio;
use num_traits::Zero;
use std::fmt::Write as _;
use thiserror::Error;

pub type Rat = Ratio<i64>;

/// Raw text of a group specification plus where it came from.
#[derive(Debug, Clone)]
pub struct GroupSpecSource {
    pub text: String,
    pub origin: String,
}

impl GroupSpecSource {
    pub fn inline(text: &str) -> Self {
        Self {
            text: text.to_string(),
            origin: "<inline>".to_string(),
        }
    }

    pub fn from_file(path: &std::path::Path) -> std::io::Result<Self> {
        Ok(Self {
            text: std::fs::read_to_string(path)?,
            origin: path.display().to_string(),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {0}: syntax error: {1}")]
    Syntax(usize, String),
    #[error("line {1}: unknown symbol `{0}`")]
    UnknownSymbol(String, usize),
    #[error("line {2}: bracket [{0},{1}] declared twice")]
    DuplicateBracket(String, String, usize),
    #[error("grading violated: [e{0},e{1}] has a component on e{2} outside layer {3}")]
    GradingViolation(usize, usize, usize, usize),
    #[error("Jacobi identity violated on basis triple ({0},{1},{2})")]
    JacobiViolation(usize, usize, usize),
    #[error("antisymmetry violated at ({0},{1},{2})")]
    AntisymmetryViolation(usize, usize, usize),
    #[error("unknown builtin group `{0}`")]
    UnknownBuiltin(String),
    #[error("bad parameter for builtin `{0}`: {1}")]
    BadParameter(String, String),
}

/// A graded (possibly stratified) nilpotent Lie algebra in a fixed
/// homogeneous basis: every basis vector belongs to exactly one layer.
///
/// Identified with its simply connected Lie group in exponential
/// coordinates; see [`crate::algebra`] for the group operations.
#[derive(Debug, Clone)]
pub struct GradedAlgebra {
    pub name: String,
    /// Topological dimension n.
    pub dim: usize,
    /// Step s: highest nonempty layer.
    pub step: usize,
    /// Layer of each basis vector, 1-based, length `dim`.
    pub layer_of: Vec<usize>,
    /// Basis vector names, length `dim`.
    pub names: Vec<String>,
    /// Dense rational tensor: `[e_i, e_j] = sum_k c[i][j][k] e_k`.
    constants: Vec<Rat>,
    /// Same tensor in f64 for the numeric modules.
    constants_f64: Vec<f64>,
    /// True when layer-1 brackets generate every higher layer.
    pub stratified: bool,
}

impl PartialEq for GradedAlgebra {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.dim == other.dim
            && self.step == other.step
            && self.layer_of == other.layer_of
            && self.names == other.names
            && self.constants == other.constants
    }
}

impl GradedAlgebra {
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dim + j) * self.dim + k
    }

    pub fn structure_constant(&self, i: usize, j: usize, k: usize) -> Rat {
        self.constants[self.idx(i, j, k)]
    }

    pub fn structure_constant_f64(&self, i: usize, j: usize, k: usize) -> f64 {
        self.constants_f64[self.idx(i, j, k)]
    }

    /// Indices of the basis vectors in layer `l` (1-based layer).
    pub fn layer_indices(&self, l: usize) -> Vec<usize> {
        (0..self.dim).filter(|&i| self.layer_of[i] == l).collect()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        (1..=self.step).map(|l| self.layer_indices(l).len()).collect()
    }

    /// Homogeneous dimension `Q = sum_i i * dim V_i`.
    pub fn hom_dimension(&self) -> usize {
        self.layer_of.iter().sum()
    }

    /// Lie bracket of coefficient vectors, exact arithmetic.
    pub fn bracket_rat(&self, x: &[Rat], y: &[Rat]) -> Vec<Rat> {
        let n = self.dim;
        let mut out = vec![Rat::zero(); n];
        for i in 0..n {
            if x[i].is_zero() {
                continue;
            }
            for j in 0..n {
                if y[j].is_zero() {
                    continue;
                }
                for k in 0..n {
                    let c = self.constants[self.idx(i, j, k)];
                    if !c.is_zero() {
                        out[k] += x[i] * y[j] * c;
                    }
                }
            }
        }
        out
    }

    /// Lie bracket of coefficient vectors in f64.
    pub fn bracket(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let xy = x[i] * y[j];
                if xy == 0.0 {
                    continue;
                }
                for k in 0..n {
                    let c = self.constants_f64[self.idx(i, j, k)];
                    if c != 0.0 {
                        out[k] += xy * c;
                    }
                }
            }
        }
        out
    }

    /// Canonical spec-format text; `parse_group_spec` inverts this.
    pub fn to_spec_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "group {}", self.name).unwrap();
        writeln!(s, "step {}", self.step).unwrap();
        for l in 1..=self.step {
            let names: Vec<&str> = self
                .layer_indices(l)
                .iter()
                .map(|&i| self.names[i].as_str())
                .collect();
            writeln!(s, "layer {}: {}", l, names.join(" ")).unwrap();
        }
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                let terms: Vec<String> = (0..self.dim)
                    .filter(|&k| !self.structure_constant(i, j, k).is_zero())
                    .map(|k| {
                        let c = self.structure_constant(i, j, k);
                        format!("{}/{}*{}", c.numer(), c.denom(), self.names[k])
                    })
                    .collect();
                if !terms.is_empty() {
                    writeln!(
                        s,
                        "bracket [{},{}] = {}",
                        self.names[i],
                        self.names[j],
                        terms.join(" + ")
                    )
                    .unwrap();
                }
            }
        }
        s
    }
}

/// Assemble an algebra from raw parts, running the full validation.
/// `constants` is the dense tensor in row-major `(i, j, k)` order.
pub fn assemble_algebra(
    name: &str,
    step: usize,
    layer_of: Vec<usize>,
    names: Vec<String>,
    constants: Vec<Rat>,
) -> Result<GradedAlgebra, ParseError> {
    let dim = layer_of.len();
    assert_eq!(names.len(), dim);
    assert_eq!(constants.len(), dim * dim * dim);
    let mut algebra = GradedAlgebra {
        name: name.to_string(),
        dim,
        step,
        layer_of,
        names,
        constants_f64: constants.iter().map(|c| rat_to_f64(*c)).collect(),
        constants,
        stratified: false,
    };
    algebra.stratified = is_stratified(&algebra);
    let report = validate_algebra(&algebra);
    if let Some(v) = report.violations.first() {
        return Err(violation_to_error(v));
    }
    Ok(algebra)
}

/// Direct product of two graded algebras: coordinates concatenated, brackets
/// block diagonal, layers preserved.
pub fn direct_product(a: &GradedAlgebra, b: &GradedAlgebra) -> GradedAlgebra {
    let dim = a.dim + b.dim;
    let step = a.step.max(b.step);
    let mut layer_of = a.layer_of.clone();
    layer_of.extend(b.layer_of.iter().copied());
    let mut names: Vec<String> = a.names.iter().map(|n| format!("a_{n}")).collect();
    names.extend(b.names.iter().map(|n| format!("b_{n}")));
    let mut constants = vec![Rat::zero(); dim * dim * dim];
    let idx = |i: usize, j: usize, k: usize| (i * dim + j) * dim + k;
    for i in 0..a.dim {
        for j in 0..a.dim {
            for k in 0..a.dim {
                constants[idx(i, j, k)] = a.structure_constant(i, j, k);
            }
        }
    }
    for i in 0..b.dim {
        for j in 0..b.dim {
            for k in 0..b.dim {
                constants[idx(a.dim + i, a.dim + j, a.dim + k)] = b.structure_constant(i, j, k);
            }
        }
    }
    assemble_algebra(
        &format!("{}x{}", a.name, b.name),
        step,
        layer_of,
        names,
        constants,
    )
    .expect("a direct product of valid algebras is valid")
}

fn parse_rational(tok: &str) -> Option<Rat> {
    if let Some((p, q)) = tok.split_once('/') {
        let p: i64 = p.trim().parse().ok()?;
        let q: i64 = q.trim().parse().ok()?;
        if q == 0 {
            return None;
        }
        Some(Rat::new(p, q))
    } else {
        let p: i64 = tok.trim().parse().ok()?;
        Some(Rat::from_integer(p))
    }
}

struct Builder {
    name: String,
    step: Option<usize>,
    names: Vec<String>,
    layer_of: Vec<usize>,
    brackets: Vec<(usize, usize, Vec<(Rat, usize)>, usize)>,
}

impl Builder {
    fn lookup(&self, name: &str, line: usize) -> Result<usize, ParseError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ParseError::UnknownSymbol(name.to_string(), line))
    }
}

/// Parse and fully validate a group specification.
pub fn parse_group_spec(src: &GroupSpecSource) -> Result<GradedAlgebra, ParseError> {
    let mut b = Builder {
        name: "g".to_string(),
        step: None,
        names: Vec::new(),
        layer_of: Vec::new(),
        brackets: Vec::new(),
    };

    for (lineno0, raw) in src.text.lines().enumerate() {
        let lineno = lineno0 + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match head {
            "group" => {
                if rest.is_empty() {
                    return Err(ParseError::Syntax(lineno, "missing group name".into()));
                }
                b.name = rest.to_string();
            }
            "step" => {
                let s: usize = rest
                    .parse()
                    .map_err(|_| ParseError::Syntax(lineno, format!("bad step `{rest}`")))?;
                if s == 0 {
                    return Err(ParseError::Syntax(lineno, "step must be >= 1".into()));
                }
                b.step = Some(s);
            }
            "layer" => {
                let (l, names) = rest
                    .split_once(':')
                    .ok_or_else(|| ParseError::Syntax(lineno, "expected `layer <i>: ...`".into()))?;
                let l: usize = l
                    .trim()
                    .parse()
                    .map_err(|_| ParseError::Syntax(lineno, format!("bad layer index `{l}`")))?;
                let step = b
                    .step
                    .ok_or_else(|| ParseError::Syntax(lineno, "`step` must precede `layer`".into()))?;
                if l == 0 || l > step {
                    return Err(ParseError::Syntax(lineno, format!("layer {l} outside 1..={step}")));
                }
                for name in names.split_whitespace() {
                    if b.names.iter().any(|n| n == name) {
                        return Err(ParseError::Syntax(lineno, format!("duplicate basis name `{name}`")));
                    }
                    b.names.push(name.to_string());
                    b.layer_of.push(l);
                }
            }
            "bracket" => {
                let (lhs, rhs) = rest
                    .split_once('=')
                    .ok_or_else(|| ParseError::Syntax(lineno, "expected `bracket [a,b] = ...`".into()))?;
                let lhs = lhs.trim();
                let inner = lhs
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .ok_or_else(|| ParseError::Syntax(lineno, format!("expected `[a,b]`, got `{lhs}`")))?;
                let (a, bb) = inner
                    .split_once(',')
                    .ok_or_else(|| ParseError::Syntax(lineno, "expected two names in bracket".into()))?;
                let ia = b.lookup(a.trim(), lineno)?;
                let ib = b.lookup(bb.trim(), lineno)?;
                let mut terms = Vec::new();
                for term in rhs.split('+') {
                    let term = term.trim();
                    if term.is_empty() || term == "0" {
                        continue;
                    }
                    let (coef, name) = match term.split_once('*') {
                        Some((c, n)) => {
                            let c = parse_rational(c).ok_or_else(|| {
                                ParseError::Syntax(lineno, format!("bad coefficient `{c}`"))
                            })?;
                            (c, n.trim())
                        }
                        None => {
                            if let Some(n) = term.strip_prefix('-') {
                                (Rat::from_integer(-1), n.trim())
                            } else {
                                (Rat::from_integer(1), term)
                            }
                        }
                    };
                    let k = b.lookup(name, lineno)?;
                    terms.push((coef, k));
                }
                if b
                    .brackets
                    .iter()
                    .any(|&(x, y, _, _)| (x, y) == (ia, ib) || (x, y) == (ib, ia))
                {
                    return Err(ParseError::DuplicateBracket(a.trim().into(), bb.trim().into(), lineno));
                }
                b.brackets.push((ia, ib, terms, lineno));
            }
            _ => {
                return Err(ParseError::Syntax(lineno, format!("unknown declaration `{head}`")));
            }
        }
    }

    let step = b.step.ok_or_else(|| ParseError::Syntax(0, "missing `step`".into()))?;
    if b.names.is_empty() {
        return Err(ParseError::Syntax(0, "no basis vectors declared".into()));
    }
    let dim = b.names.len();
    let mut constants = vec![Rat::zero(); dim * dim * dim];
    let idx = |i: usize, j: usize, k: usize| (i * dim + j) * dim + k;
    for (i, j, terms, _lineno) in &b.brackets {
        for &(c, k) in terms {
            constants[idx(*i, *j, k)] += c;
            constants[idx(*j, *i, k)] -= c;
        }
    }

    let mut algebra = GradedAlgebra {
        name: b.name,
        dim,
        step,
        layer_of: b.layer_of,
        names: b.names,
        constants_f64: constants.iter().map(|c| rat_to_f64(*c)).collect(),
        constants,
        stratified: false,
    };
    algebra.stratified = is_stratified(&algebra);

    let report = validate_algebra(&algebra);
    if let Some(v) = report.violations.first() {
        return Err(violation_to_error(v));
    }
    Ok(algebra)
}

fn rat_to_f64(r: Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn violation_to_error(v: &crate::report::Violation) -> ParseError {
    let nums: Vec<usize> = v
        .witness
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().unwrap_or(0))
        .collect();
    let g = |i: usize| nums.get(i).copied().unwrap_or(0);
    match v.kind.as_str() {
        "antisymmetry" => ParseError::AntisymmetryViolation(g(0), g(1), g(2)),
        "grading" => ParseError::GradingViolation(g(0), g(1), g(2), g(3)),
        "jacobi" => ParseError::JacobiViolation(g(0), g(1), g(2)),
        _ => ParseError::Syntax(0, v.witness.clone()),
    }
}

/// Check all four structural invariants; violations are report entries,
/// never errors, so callers can collect every defect at once.
pub fn validate_algebra(a: &GradedAlgebra) -> ValidationReport {
    let mut rep = ValidationReport::new();
    let n = a.dim;

    for (i, &l) in a.layer_of.iter().enumerate() {
        if l == 0 || l > a.step {
            rep.push("layer-range", format!("e{i} in layer {l}, step {}", a.step), 0.0);
        }
    }

    // antisymmetry
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let s = a.structure_constant(i, j, k) + a.structure_constant(j, i, k);
                if !s.is_zero() {
                    rep.push("antisymmetry", format!("({i},{j},{k})"), rat_to_f64(s).abs());
                }
            }
        }
    }

    // grading: nonzero c[i][j][k] forces layer(k) = layer(i) + layer(j)
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if !a.structure_constant(i, j, k).is_zero()
                    && a.layer_of[k] != a.layer_of[i] + a.layer_of[j]
                {
                    rep.push(
                        "grading",
                        format!("({i},{j},{k}) layer {}", a.layer_of[i] + a.layer_of[j]),
                        0.0,
                    );
                }
            }
        }
    }

    // Jacobi on all basis triples, exact
    let mut basis = vec![vec![Rat::zero(); n]; n];
    for (i, e) in basis.iter_mut().enumerate() {
        e[i] = Rat::from_integer(1);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let mut defect = a.bracket_rat(&basis[i], &a.bracket_rat(&basis[j], &basis[k]));
                let t2 = a.bracket_rat(&basis[j], &a.bracket_rat(&basis[k], &basis[i]));
                let t3 = a.bracket_rat(&basis[k], &a.bracket_rat(&basis[i], &basis[j]));
                for m in 0..n {
                    defect[m] += t2[m] + t3[m];
                }
                if defect.iter().any(|d| !d.is_zero()) {
                    let mag = defect.iter().map(|d| rat_to_f64(*d).abs()).fold(0.0, f64::max);
                    rep.push("jacobi", format!("({i},{j},{k})"), mag);
                }
            }
        }
    }

    // stratified generation, reported only when the flag claims it
    if a.stratified && !is_stratified(a) {
        rep.push("stratified", "layer-1 brackets do not span higher layers".into(), 0.0);
    }

    rep
}

/// True when `[V_1, V_j]` spans `V_{j+1}` for every `j < s` and the top
/// layer is nonempty.
fn is_stratified(a: &GradedAlgebra) -> bool {
    if a.layer_indices(a.step).is_empty() {
        return false;
    }
    let n = a.dim;
    let mut basis = vec![vec![Rat::zero(); n]; n];
    for (i, e) in basis.iter_mut().enumerate() {
        e[i] = Rat::from_integer(1);
    }
    for l in 1..a.step {
        let target = a.layer_indices(l + 1);
        if target.is_empty() {
            return false;
        }
        let mut rows: Vec<Vec<Rat>> = Vec::new();
        for &i in &a.layer_indices(1) {
            for &j in &a.layer_indices(l) {
                let br = a.bracket_rat(&basis[i], &basis[j]);
                rows.push(target.iter().map(|&k| br[k]).collect());
            }
        }
        if rational_rank(rows) < target.len() {
            return false;
        }
    }
    true
}

/// Rank of a rational matrix by exact Gaussian elimination.
pub(crate) fn rational_rank(mut rows: Vec<Vec<Rat>>) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let cols = rows[0].len();
    let mut rank = 0;
    for c in 0..cols {
        let Some(pivot) = (rank..rows.len()).find(|&r| !rows[r][c].is_zero()) else {
            continue;
        };
        rows.swap(rank, pivot);
        let inv = rows[rank][c].recip();
        for x in rows[rank].iter_mut() {
            *x *= inv;
        }
        for r in 0..rows.len() {
            if r != rank && !rows[r][c].is_zero() {
                let f = rows[r][c];
                for c2 in 0..cols {
                    let sub = rows[rank][c2] * f;
                    rows[r][c2] -= sub;
                }
            }
        }
        rank += 1;
        if rank == rows.len() {
            break;
        }
    }
    rank
}

/// Built-in groups: `heis(n)`, `abelian(n)` and the Engel group.
pub fn builtin(name: &str, params: &[usize]) -> Result<GradedAlgebra, ParseError> {
    match name {
        "heis" => {
            let n = *params
                .first()
                .ok_or_else(|| ParseError::BadParameter("heis".into(), "missing n".into()))?;
            if n == 0 {
                return Err(ParseError::BadParameter("heis".into(), "n must be >= 1".into()));
            }
            let mut text = String::new();
            writeln!(text, "group heis{n}").unwrap();
            writeln!(text, "step 2").unwrap();
            let xs: Vec<String> = (1..=n).map(|i| format!("X{i}")).collect();
            let ys: Vec<String> = (1..=n).map(|i| format!("Y{i}")).collect();
            writeln!(text, "layer 1: {} {}", xs.join(" "), ys.join(" ")).unwrap();
            writeln!(text, "layer 2: T").unwrap();
            for i in 1..=n {
                writeln!(text, "bracket [X{i},Y{i}] = T").unwrap();
            }
            parse_group_spec(&GroupSpecSource::inline(&text))
        }
        "abelian" => {
            let n = *params
                .first()
                .ok_or_else(|| ParseError::BadParameter("abelian".into(), "missing n".into()))?;
            if n == 0 {
                return Err(ParseError::BadParameter("abelian".into(), "n must be >= 1".into()));
            }
            let names: Vec<String> = (1..=n).map(|i| format!("E{i}")).collect();
            let text = format!("group abelian{n}\nstep 1\nlayer 1: {}\n", names.join(" "));
            parse_group_spec(&GroupSpecSource::inline(&text))
        }
        "engel" => {
            let text = "group engel\nstep 3\nlayer 1: X1 X2\nlayer 2: X3\nlayer 3: X4\n\
                        bracket [X1,X2] = X3\nbracket [X1,X3] = X4\n";
            parse_group_spec(&GroupSpecSource::inline(text))
        }
        other => Err(ParseError::UnknownBuiltin(other.to_string())),
    }
}

/// Parse a group tag of the form `heis:2`, `abelian:3`, `engel`, or a path
/// to a spec file.
pub fn resolve_group(tag: &str) -> Result<GradedAlgebra, ParseError> {
    if let Some((name, param)) = tag.split_once(':') {
        let p: usize = param
            .parse()
            .map_err(|_| ParseError::BadParameter(name.into(), format!("bad parameter `{param}`")))?;
        return builtin(name, &[p]);
    }
    if matches!(tag, "heis" | "abelian" | "engel") {
        return builtin(tag, &[1]);
    }
    let src = GroupSpecSource::from_file(std::path::Path::new(tag))
        .map_err(|e| ParseError::Syntax(0, format!("cannot read `{tag}`: {e}")))?;
    parse_group_spec(&src)
}
