//! Scalar expression trees for vector-field right-hand sides.
//!
//! The grammar covers `+ - * / ^`, unary minus, the functions `exp`, `log`,
//! `sin`, `cos`, `tanh`, `abs`, numeric literals and named variables.
//! Variables are resolved against a [`Scope`] at parse time, so evaluation
//! is a plain slice lookup with no hashing.

use std::fmt;

/// Parse failure with 1-based source coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tanh => x.tanh(),
            Func::Abs => x.abs(),
        }
    }
}

/// Expression tree with variables resolved to slot indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Ordered variable names; the position of a name is its evaluation slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scope {
    names: Vec<String>,
}

impl Scope {
    pub fn new(names: Vec<String>) -> Self {
        Scope { names }
    }

    /// `x1..xn, u1..um, v1..vl` — the variables visible to a drift field.
    pub fn system(n: usize, m: usize, l: usize) -> Self {
        let mut names = Vec::with_capacity(n + m + l);
        for i in 1..=n {
            names.push(format!("x{i}"));
        }
        for i in 1..=m {
            names.push(format!("u{i}"));
        }
        for i in 1..=l {
            names.push(format!("v{i}"));
        }
        Scope { names }
    }

    /// `x1..xn, u1..um` — the variables visible to impulse fields and costs.
    pub fn state_control(n: usize, m: usize) -> Self {
        Scope::system(n, m, 0)
    }

    /// The single variable `t`, for time-dependent control pieces.
    pub fn time() -> Self {
        Scope::new(vec!["t".to_string()])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }
}

impl Expr {
    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::Var(i) => vars[*i],
            Expr::Neg(e) => -e.eval(vars),
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.eval(vars), b.eval(vars));
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(y),
                }
            }
            Expr::Call(f, e) => f.apply(e.eval(vars)),
        }
    }

    /// Symbolic partial derivative with respect to slot `var`.
    ///
    /// `abs` differentiates to `g' * g/|g|`, which is NaN at a zero of `g`;
    /// fields built from `abs` are not differentiable there anyway.
    pub fn derivative(&self, var: usize) -> Expr {
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(i) => Expr::Num(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(e) => neg(e.derivative(var)),
            Expr::Bin(op, a, b) => {
                let (da, db) = (a.derivative(var), b.derivative(var));
                match op {
                    BinOp::Add => add(da, db),
                    BinOp::Sub => sub(da, db),
                    BinOp::Mul => add(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    BinOp::Div => {
                        // (a/b)' = (a'b - ab') / b^2
                        let num = sub(mul(da, (**b).clone()), mul((**a).clone(), db));
                        div(num, mul((**b).clone(), (**b).clone()))
                    }
                    BinOp::Pow => {
                        if let Expr::Num(p) = **b {
                            // a^p with constant p: p * a^(p-1) * a'
                            mul(
                                mul(Expr::Num(p), pow((**a).clone(), Expr::Num(p - 1.0))),
                                da,
                            )
                        } else {
                            // a^b = exp(b log a): a^b * (b' log a + b a'/a)
                            let t1 = mul(db, Expr::Call(Func::Log, Box::new((**a).clone())));
                            let t2 = div(mul((**b).clone(), da), (**a).clone());
                            mul(pow((**a).clone(), (**b).clone()), add(t1, t2))
                        }
                    }
                }
            }
            Expr::Call(f, e) => {
                let de = e.derivative(var);
                let inner = (**e).clone();
                let outer = match f {
                    Func::Exp => Expr::Call(Func::Exp, Box::new(inner)),
                    Func::Log => return div(de, inner),
                    Func::Sin => Expr::Call(Func::Cos, Box::new(inner)),
                    Func::Cos => return neg(mul(Expr::Call(Func::Sin, Box::new(inner)), de)),
                    Func::Tanh => {
                        let th = Expr::Call(Func::Tanh, Box::new(inner));
                        sub(Expr::Num(1.0), mul(th.clone(), th))
                    }
                    Func::Abs => {
                        let a = Expr::Call(Func::Abs, Box::new(inner.clone()));
                        div(inner, a)
                    }
                };
                mul(outer, de)
            }
        }
    }

    /// Fully parenthesized rendering; parses back to an identical tree.
    pub fn pretty(&self, scope: &Scope) -> String {
        match self {
            Expr::Num(c) => {
                if *c < 0.0 {
                    format!("({c})")
                } else {
                    format!("{c}")
                }
            }
            Expr::Var(i) => scope.name(*i).to_string(),
            Expr::Neg(e) => format!("(-{})", e.pretty(scope)),
            Expr::Bin(op, a, b) => {
                format!("({} {} {})", a.pretty(scope), op.symbol(), b.pretty(scope))
            }
            Expr::Call(f, e) => format!("{}({})", f.name(), e.pretty(scope)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(c) if *c == 0.0)
    }
}

// Smart constructors that fold the trivial cases so derivatives stay small.

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        (Expr::Num(x), _) if *x == 0.0 => b,
        (_, Expr::Num(y)) if *y == 0.0 => a,
        _ => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        (_, Expr::Num(y)) if *y == 0.0 => a,
        (Expr::Num(x), _) if *x == 0.0 => neg(b),
        _ => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        (Expr::Num(x), _) if *x == 0.0 => Expr::Num(0.0),
        (_, Expr::Num(y)) if *y == 0.0 => Expr::Num(0.0),
        (Expr::Num(x), _) if *x == 1.0 => b,
        (_, Expr::Num(y)) if *y == 1.0 => a,
        _ => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), _) if *x == 0.0 => Expr::Num(0.0),
        (_, Expr::Num(y)) if *y == 1.0 => a,
        _ => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match &b {
        Expr::Num(y) if *y == 1.0 => a,
        Expr::Num(y) if *y == 0.0 => Expr::Num(1.0),
        _ => Expr::Bin(BinOp::Pow, Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(x) => Expr::Num(-x),
        Expr::Neg(inner) => *inner,
        _ => Expr::Neg(Box::new(a)),
    }
}

// ---------------------------------------------------------------------------
// Tokenizer and parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn tokenize(src: &str, line0: usize, col0: usize) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut line = line0;
    let mut col = col0;
    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let mut push = |tok: Tok| out.push(Token { tok, line: tline, col: tcol });
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            ' ' | '\t' | '\r' => {}
            '+' => push(Tok::Plus),
            '-' => push(Tok::Minus),
            '*' => push(Tok::Star),
            '/' => push(Tok::Slash),
            '^' => push(Tok::Caret),
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            ',' => push(Tok::Comma),
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text.parse().map_err(|_| ParseError {
                    line: tline,
                    col: tcol,
                    message: format!("invalid number `{text}`"),
                })?;
                out.push(Token { tok: Tok::Num(v), line: tline, col: tcol });
                col += i - start;
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                out.push(Token { tok: Tok::Ident(text), line: tline, col: tcol });
                col += i - start;
                continue;
            }
            _ => {
                return Err(ParseError {
                    line: tline,
                    col: tcol,
                    message: format!("unexpected character `{c}`"),
                })
            }
        }
        i += 1;
        col += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    scope: &'a Scope,
    end_line: usize,
    end_col: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .map(|t| (t.line, t.col))
            .unwrap_or((self.end_line, self.end_col))
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn err(&self, message: String) -> ParseError {
        let (line, col) = self.here();
        ParseError { line, col, message }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if *t == tok => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    // Precedence climbing. Binding powers: +,- (1); *,/ (2); unary - (3);
    // ^ (4, right associative, binds tighter than unary minus).
    fn parse_expr(&mut self, min_bp: u8) -> Result<Expr, ParseError> {
        let mut lhs = match self.bump() {
            Some(Token { tok: Tok::Num(v), .. }) => Expr::Num(v),
            Some(Token { tok: Tok::Ident(name), line, col }) => {
                if self.peek() == Some(&Tok::LParen) {
                    let f = Func::from_name(&name).ok_or(ParseError {
                        line,
                        col,
                        message: format!("unknown function `{name}`"),
                    })?;
                    self.pos += 1;
                    let arg = self.parse_expr(0)?;
                    self.expect(Tok::RParen, "`)` to close function call")?;
                    Expr::Call(f, Box::new(arg))
                } else {
                    let idx = self.scope.lookup(&name).ok_or(ParseError {
                        line,
                        col,
                        message: format!("unknown identifier `{name}`"),
                    })?;
                    Expr::Var(idx)
                }
            }
            Some(Token { tok: Tok::Minus, .. }) => {
                let operand = self.parse_expr(3)?;
                neg_raw(operand)
            }
            Some(Token { tok: Tok::LParen, .. }) => {
                let e = self.parse_expr(0)?;
                self.expect(Tok::RParen, "`)`")?;
                e
            }
            Some(t) => {
                return Err(ParseError {
                    line: t.line,
                    col: t.col,
                    message: format!("unexpected token `{:?}`", t.tok),
                })
            }
            None => return Err(self.err("unexpected end of expression".to_string())),
        };

        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                Some(Tok::Caret) => BinOp::Pow,
                _ => break,
            };
            let (l_bp, r_bp) = match op {
                BinOp::Add | BinOp::Sub => (1, 2),
                BinOp::Mul | BinOp::Div => (2, 3),
                BinOp::Pow => (4, 4), // right associative
            };
            if l_bp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.parse_expr(r_bp)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }
}

// Unsimplified negation: keeps `-x` as written so round-trips are exact.
fn neg_raw(e: Expr) -> Expr {
    match e {
        Expr::Num(v) => Expr::Num(-v),
        other => Expr::Neg(Box::new(other)),
    }
}

/// Parse one scalar expression. `line0`/`col0` locate `src` in its file.
pub fn parse_scalar(
    src: &str,
    scope: &Scope,
    line0: usize,
    col0: usize,
) -> Result<Expr, ParseError> {
    let toks = tokenize(src, line0, col0)?;
    let end = toks
        .last()
        .map(|t| (t.line, t.col + 1))
        .unwrap_or((line0, col0));
    let mut p = Parser { toks, pos: 0, scope, end_line: end.0, end_col: end.1 };
    let e = p.parse_expr(0)?;
    if p.pos != p.toks.len() {
        return Err(p.err("trailing input after expression".to_string()));
    }
    Ok(e)
}

/// Parse a comma-separated expression vector: `(e1, e2, ...)`, or a bare
/// scalar, which denotes a vector of length 1.
pub fn parse_vector(
    src: &str,
    scope: &Scope,
    line0: usize,
    col0: usize,
) -> Result<Vec<Expr>, ParseError> {
    let toks = tokenize(src, line0, col0)?;
    let end = toks
        .last()
        .map(|t| (t.line, t.col + 1))
        .unwrap_or((line0, col0));
    let mut p = Parser { toks, pos: 0, scope, end_line: end.0, end_col: end.1 };

    // A leading `(` opens a tuple only if a top-level comma follows; otherwise
    // it is an ordinary parenthesized scalar.
    let tuple = if p.peek() == Some(&Tok::LParen) {
        let mut depth = 0usize;
        let mut found_comma = false;
        for t in &p.toks {
            match t.tok {
                Tok::LParen => depth += 1,
                Tok::RParen => depth -= 1,
                Tok::Comma if depth == 1 => {
                    found_comma = true;
                    break;
                }
                _ => {}
            }
        }
        found_comma
    } else {
        false
    };

    let mut out = Vec::new();
    if tuple {
        p.pos += 1;
        loop {
            out.push(p.parse_expr(0)?);
            match p.peek() {
                Some(Tok::Comma) => {
                    p.pos += 1;
                }
                Some(Tok::RParen) => {
                    p.pos += 1;
                    break;
                }
                _ => return Err(p.err("expected `,` or `)` in expression vector".to_string())),
            }
        }
    } else {
        out.push(p.parse_expr(0)?);
    }
    if p.pos != p.toks.len() {
        return Err(p.err("trailing input after expression".to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope_xy() -> Scope {
        Scope::new(vec!["x".into(), "y".into()])
    }

    #[test]
    fn precedence_and_associativity() {
        let s = scope_xy();
        let e = parse_scalar("2 + 3 * 4", &s, 1, 1).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), 14.0);
        let e = parse_scalar("2 ^ 3 ^ 2", &s, 1, 1).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), 512.0);
        let e = parse_scalar("-2 ^ 2", &s, 1, 1).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), -4.0);
        let e = parse_scalar("2 * -3", &s, 1, 1).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), -6.0);
        let e = parse_scalar("(2 + 3) * 4", &s, 1, 1).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), 20.0);
    }

    #[test]
    fn functions_and_vars() {
        let s = scope_xy();
        let e = parse_scalar("exp(x) * cos(y) + tanh(x - y)", &s, 1, 1).unwrap();
        let (x, y) = (0.3f64, -0.7f64);
        let expect = x.exp() * y.cos() + (x - y).tanh();
        assert!((e.eval(&[x, y]) - expect).abs() < 1e-15);
    }

    #[test]
    fn unknown_identifier_has_position() {
        let s = scope_xy();
        let err = parse_scalar("x + z3", &s, 4, 9).unwrap_err();
        assert_eq!(err.line, 4);
        assert_eq!(err.col, 13);
        assert!(err.message.contains("z3"));
    }

    #[test]
    fn syntax_error_position() {
        let s = scope_xy();
        let err = parse_scalar("x + * y", &s, 1, 1).unwrap_err();
        assert_eq!(err.col, 5);
    }

    #[test]
    fn vector_forms() {
        let s = scope_xy();
        let v = parse_vector("(x, y, 1)", &s, 1, 1).unwrap();
        assert_eq!(v.len(), 3);
        let v = parse_vector("x * y", &s, 1, 1).unwrap();
        assert_eq!(v.len(), 1);
        // Parenthesized scalar is not a tuple.
        let v = parse_vector("(x + y)", &s, 1, 1).unwrap();
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn derivative_basics() {
        let s = scope_xy();
        let e = parse_scalar("x^3 + sin(x*y)", &s, 1, 1).unwrap();
        let dx = e.derivative(0);
        let (x, y) = (0.4f64, 1.3f64);
        let expect = 3.0 * x * x + y * (x * y).cos();
        assert!((dx.eval(&[x, y]) - expect).abs() < 1e-12);
        let dy = e.derivative(1);
        let expect = x * (x * y).cos();
        assert!((dy.eval(&[x, y]) - expect).abs() < 1e-12);
    }

    #[test]
    fn derivative_general_pow() {
        let s = scope_xy();
        let e = parse_scalar("x ^ y", &s, 1, 1).unwrap();
        let dx = e.derivative(0);
        let (x, y) = (1.7f64, 2.3f64);
        assert!((dx.eval(&[x, y]) - y * x.powf(y - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn pretty_round_trip() {
        let s = scope_xy();
        for src in [
            "x + y * 2",
            "-x ^ 2 - exp(y / (x + 3))",
            "abs(x) * tanh(y) - 0.5",
            "2 ^ 3 ^ 2 / x",
        ] {
            let e = parse_scalar(src, &s, 1, 1).unwrap();
            let printed = e.pretty(&s);
            let e2 = parse_scalar(&printed, &s, 1, 1).unwrap();
            assert_eq!(e, e2, "round trip of `{src}` via `{printed}`");
        }
    }
}
