//! A small closed expression grammar for coefficients, sources and test
//! functions.
//!
//! Grammar: numbers, `pi`, variables, `+ - * / ^`, parentheses and the
//! functions `sin`, `cos`, `exp`, `sqrt`. Variables are bound by a
//! [`VarSet`] at parse time so evaluation is a flat slice lookup.
//!
//! Expressions that must be periodic in some variables (coefficients in
//! `y`/`s`, oscillatory test factors) are checked with
//! [`Expr::check_periodic`]: every occurrence of a periodic variable must sit
//! inside a `sin`/`cos` whose argument is affine with slopes in `2πℤ`.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{HomogError, Result};

/// Ordered set of variable names an expression may reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarSet {
    names: Vec<&'static str>,
    aliases: Vec<(&'static str, usize)>,
}

impl VarSet {
    /// Cell variables: `y1, y2, s` (`y` aliases `y1`).
    pub fn cell() -> Self {
        VarSet {
            names: vec!["y1", "y2", "s"],
            aliases: vec![("y", 0)],
        }
    }

    /// Macroscopic variables: `x1, x2, t` (`x` aliases `x1`).
    pub fn macroscopic() -> Self {
        VarSet {
            names: vec!["x1", "x2", "t"],
            aliases: vec![("x", 0)],
        }
    }

    /// Microscopic spatial variables only: `y1, y2`.
    pub fn cell_space() -> Self {
        VarSet {
            names: vec!["y1", "y2"],
            aliases: vec![("y", 0)],
        }
    }

    /// Microscopic time only: `s`.
    pub fn cell_time() -> Self {
        VarSet {
            names: vec!["s"],
            aliases: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn lookup(&self, name: &str) -> Option<usize> {
        self.names
            .iter()
            .position(|n| *n == name)
            .or_else(|| self.aliases.iter().find(|(a, _)| *a == name).map(|(_, i)| *i))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression bound to a [`VarSet`].
#[derive(Debug, Clone)]
pub struct Expr {
    source: String,
    root: Node,
    vars: VarSet,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.vars == other.vars
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    pub fn parse(src: &str, vars: &VarSet) -> Result<Self> {
        let tokens = tokenize(src).map_err(|msg| expr_err(src, msg))?;
        let mut p = Parser {
            tokens: &tokens,
            pos: 0,
            vars,
        };
        let root = p.expr().map_err(|msg| expr_err(src, msg))?;
        if p.pos != tokens.len() {
            return Err(expr_err(src, format!("unexpected token {:?}", tokens[p.pos])));
        }
        Ok(Expr {
            source: src.trim().to_string(),
            root: fold(root),
            vars: vars.clone(),
        })
    }

    pub fn constant(value: f64, vars: &VarSet) -> Self {
        Expr {
            source: format!("{value}"),
            root: Node::Const(value),
            vars: vars.clone(),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn vars(&self) -> &VarSet {
        &self.vars
    }

    /// Evaluates with `args[i]` bound to the i-th variable of the set.
    /// Missing trailing arguments are treated as zero.
    pub fn eval(&self, args: &[f64]) -> f64 {
        eval(&self.root, args)
    }

    /// Returns the constant value when the expression references no variable.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        depends(&self.root, var)
    }

    /// Verifies periodicity (period 1) in every variable listed in `periodic`.
    pub fn check_periodic(&self, periodic: &[usize]) -> Result<()> {
        check_periodic(&self.root, periodic, self.vars.len())
            .map_err(|msg| expr_err(&self.source, msg))
    }
}

fn expr_err(src: &str, msg: impl Into<String>) -> HomogError {
    HomogError::Expression {
        expr: src.to_string(),
        msg: msg.into(),
    }
}

fn eval(node: &Node, args: &[f64]) -> f64 {
    match node {
        Node::Const(c) => *c,
        Node::Var(i) => args.get(*i).copied().unwrap_or(0.0),
        Node::Neg(a) => -eval(a, args),
        Node::Add(a, b) => eval(a, args) + eval(b, args),
        Node::Sub(a, b) => eval(a, args) - eval(b, args),
        Node::Mul(a, b) => eval(a, args) * eval(b, args),
        Node::Div(a, b) => eval(a, args) / eval(b, args),
        Node::Pow(a, b) => {
            let base = eval(a, args);
            match **b {
                Node::Const(e) if e.fract() == 0.0 && e.abs() < 64.0 => base.powi(e as i32),
                _ => base.powf(eval(b, args)),
            }
        }
        Node::Call(f, a) => {
            let v = eval(a, args);
            match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Sqrt => v.sqrt(),
            }
        }
    }
}

fn depends(node: &Node, var: usize) -> bool {
    match node {
        Node::Const(_) => false,
        Node::Var(i) => *i == var,
        Node::Neg(a) | Node::Call(_, a) => depends(a, var),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            depends(a, var) || depends(b, var)
        }
    }
}

/// Constant folding so `2*pi*3` and friends become single constants.
fn fold(node: Node) -> Node {
    use Node::*;
    let bin = |a: Box<Node>, b: Box<Node>, mk: fn(Box<Node>, Box<Node>) -> Node| {
        let (a, b) = (fold(*a), fold(*b));
        let n = mk(Box::new(a), Box::new(b));
        match &n {
            Add(x, y) | Sub(x, y) | Mul(x, y) | Div(x, y) | Pow(x, y) => {
                if let (Const(_), Const(_)) = (&**x, &**y) {
                    return Const(eval(&n, &[]));
                }
            }
            _ => {}
        }
        n
    };
    match node {
        Neg(a) => match fold(*a) {
            Const(c) => Const(-c),
            other => Neg(Box::new(other)),
        },
        Call(f, a) => match fold(*a) {
            Const(c) => Const(eval(&Call(f, Box::new(Const(c))), &[])),
            other => Call(f, Box::new(other)),
        },
        Add(a, b) => bin(a, b, Add),
        Sub(a, b) => bin(a, b, Sub),
        Mul(a, b) => bin(a, b, Mul),
        Div(a, b) => bin(a, b, Div),
        Pow(a, b) => bin(a, b, Pow),
        other => other,
    }
}

/// Affine form `c + Σ k_i v_i` of a subtree, if it is affine.
fn affine(node: &Node, nvars: usize) -> Option<(f64, Vec<f64>)> {
    use Node::*;
    match node {
        Const(c) => Some((*c, vec![0.0; nvars])),
        Var(i) => {
            let mut k = vec![0.0; nvars];
            k[*i] = 1.0;
            Some((0.0, k))
        }
        Neg(a) => affine(a, nvars).map(|(c, k)| (-c, k.into_iter().map(|v| -v).collect())),
        Add(a, b) | Sub(a, b) => {
            let (ca, ka) = affine(a, nvars)?;
            let (cb, kb) = affine(b, nvars)?;
            let sign = if matches!(node, Add(..)) { 1.0 } else { -1.0 };
            Some((
                ca + sign * cb,
                ka.iter().zip(&kb).map(|(x, y)| x + sign * y).collect(),
            ))
        }
        Mul(a, b) => {
            let (ca, ka) = affine(a, nvars)?;
            let (cb, kb) = affine(b, nvars)?;
            if ka.iter().all(|v| *v == 0.0) {
                Some((ca * cb, kb.iter().map(|v| v * ca).collect()))
            } else if kb.iter().all(|v| *v == 0.0) {
                Some((ca * cb, ka.iter().map(|v| v * cb).collect()))
            } else {
                None
            }
        }
        Div(a, b) => {
            let (ca, ka) = affine(a, nvars)?;
            let (cb, kb) = affine(b, nvars)?;
            if kb.iter().any(|v| *v != 0.0) {
                return None;
            }
            Some((ca / cb, ka.iter().map(|v| v / cb).collect()))
        }
        _ => None,
    }
}

fn check_periodic(
    node: &Node,
    periodic: &[usize],
    nvars: usize,
) -> std::result::Result<(), String> {
    use Node::*;
    match node {
        Const(_) => Ok(()),
        Var(i) => {
            if periodic.contains(i) {
                Err(format!(
                    "variable #{i} appears outside a sin/cos with a 2π-integer argument"
                ))
            } else {
                Ok(())
            }
        }
        Call(Func::Sin, a) | Call(Func::Cos, a) if periodic.iter().any(|v| depends(a, *v)) => {
            let (_, slopes) = affine(a, nvars)
                .ok_or_else(|| "trigonometric argument is not affine".to_string())?;
            for &v in periodic {
                let turns = slopes[v] / (2.0 * PI);
                if (turns - turns.round()).abs() > 1e-9 {
                    return Err(format!(
                        "slope {} in variable #{v} is not an integer multiple of 2π",
                        slopes[v]
                    ));
                }
            }
            Ok(())
        }
        Neg(a) | Call(_, a) => check_periodic(a, periodic, nvars),
        Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => {
            check_periodic(a, periodic, nvars)?;
            check_periodic(b, periodic, nvars)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> std::result::Result<Vec<Token>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| format!("bad number `{text}`"))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Token::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Token::RParen);
            i += 1;
        } else {
            return Err(format!("unexpected character `{c}`"));
        }
    }
    if out.is_empty() {
        return Err("empty expression".into());
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a VarSet,
}

type PResult = std::result::Result<Node, String>;

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn expr(&mut self) -> PResult {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> PResult {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> PResult {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> PResult {
        let tok = self.peek().cloned().ok_or("unexpected end of expression")?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Node::Const(v)),
            Token::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Token::Ident(name) => {
                if let Some(Token::LParen) = self.peek() {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        _ => return Err(format!("unknown function `{name}`")),
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Node::Const(PI));
                }
                self.vars
                    .lookup(&name)
                    .map(Node::Var)
                    .ok_or_else(|| format!("unknown variable `{name}`"))
            }
            other => Err(format!("unexpected token {other:?}")),
        }
    }

    fn expect_rparen(&mut self) -> std::result::Result<(), String> {
        match self.peek() {
            Some(Token::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err("missing `)`".into()),
        }
    }
}
