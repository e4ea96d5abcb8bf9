//! LTL syntax, a small text parser and exact evaluation on lasso words.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::LassoWord;
use crate::error::{Error, Result};

/// Core LTL. `F`, `G`, `->` and `false` are sugar over these constructors.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LtlFormula {
    True,
    Prop(String),
    Not(Box<LtlFormula>),
    And(Box<LtlFormula>, Box<LtlFormula>),
    Or(Box<LtlFormula>, Box<LtlFormula>),
    Next(Box<LtlFormula>),
    Until(Box<LtlFormula>, Box<LtlFormula>),
}

impl LtlFormula {
    pub fn prop(p: &str) -> Self {
        LtlFormula::Prop(p.to_string())
    }

    pub fn ff() -> Self {
        Self::not(LtlFormula::True)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Self) -> Self {
        LtlFormula::Not(Box::new(f))
    }

    pub fn and(a: Self, b: Self) -> Self {
        LtlFormula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Self, b: Self) -> Self {
        LtlFormula::Or(Box::new(a), Box::new(b))
    }

    pub fn next(f: Self) -> Self {
        LtlFormula::Next(Box::new(f))
    }

    pub fn until(a: Self, b: Self) -> Self {
        LtlFormula::Until(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Self, b: Self) -> Self {
        Self::or(Self::not(a), b)
    }

    pub fn eventually(f: Self) -> Self {
        Self::until(LtlFormula::True, f)
    }

    pub fn always(f: Self) -> Self {
        Self::not(Self::eventually(Self::not(f)))
    }

    /// Conjunction of a nonempty list (`true` when empty).
    pub fn all(fs: impl IntoIterator<Item = Self>) -> Self {
        fs.into_iter().reduce(Self::and).unwrap_or(LtlFormula::True)
    }

    /// Disjunction of a list (`false` when empty).
    pub fn any(fs: impl IntoIterator<Item = Self>) -> Self {
        fs.into_iter().reduce(Self::or).unwrap_or_else(Self::ff)
    }

    /// Propositions in order of first appearance.
    pub fn props(&self) -> Vec<String> {
        fn walk(f: &LtlFormula, out: &mut Vec<String>) {
            match f {
                LtlFormula::True => {}
                LtlFormula::Prop(p) => {
                    if !out.contains(p) {
                        out.push(p.clone())
                    }
                }
                LtlFormula::Not(a) | LtlFormula::Next(a) => walk(a, out),
                LtlFormula::And(a, b) | LtlFormula::Or(a, b) | LtlFormula::Until(a, b) => {
                    walk(a, out);
                    walk(b, out)
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }
}

impl fmt::Display for LtlFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LtlFormula::True => write!(f, "true"),
            LtlFormula::Prop(p) => write!(f, "{}", p),
            LtlFormula::Not(a) => write!(f, "!({})", a),
            LtlFormula::And(a, b) => write!(f, "({}) & ({})", a, b),
            LtlFormula::Or(a, b) => write!(f, "({}) | ({})", a, b),
            LtlFormula::Next(a) => write!(f, "X ({})", a),
            LtlFormula::Until(a, b) => write!(f, "({}) U ({})", a, b),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Not,
    And,
    Or,
    Implies,
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let err = |msg: String| Error::ParseError { line: 1, msg };
    let mut out = Vec::new();
    let cs: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '(' => {
                out.push(Tok::LParen);
                i += 1
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1
            }
            '!' => {
                out.push(Tok::Not);
                i += 1
            }
            '&' => {
                i += if cs.get(i + 1) == Some(&'&') { 2 } else { 1 };
                out.push(Tok::And)
            }
            '|' => {
                i += if cs.get(i + 1) == Some(&'|') { 2 } else { 1 };
                out.push(Tok::Or)
            }
            '-' if cs.get(i + 1) == Some(&'>') => {
                out.push(Tok::Implies);
                i += 2
            }
            c if c.is_alphanumeric() || c == '_' => {
                let start = i;
                while i < cs.len() && (cs[i].is_alphanumeric() || cs[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Ident(cs[start..i].iter().collect()));
            }
            c => return Err(err(format!("unexpected character '{}'", c))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(Error::ParseError { line: 1, msg: format!("{} at token {}", msg, self.pos) })
    }

    fn implication(&mut self) -> Result<LtlFormula> {
        let lhs = self.disjunction()?;
        if self.peek() == Some(&Tok::Implies) {
            self.pos += 1;
            let rhs = self.implication()?;
            return Ok(LtlFormula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<LtlFormula> {
        let mut f = self.conjunction()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            f = LtlFormula::or(f, self.conjunction()?);
        }
        Ok(f)
    }

    fn conjunction(&mut self) -> Result<LtlFormula> {
        let mut f = self.until()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            f = LtlFormula::and(f, self.until()?);
        }
        Ok(f)
    }

    fn until(&mut self) -> Result<LtlFormula> {
        let lhs = self.unary()?;
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "U") {
            self.pos += 1;
            let rhs = self.until()?;
            return Ok(LtlFormula::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<LtlFormula> {
        match self.peek().cloned() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(LtlFormula::not(self.unary()?))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let f = self.implication()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                Ok(f)
            }
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                match s.as_str() {
                    "G" => Ok(LtlFormula::always(self.unary()?)),
                    "F" => Ok(LtlFormula::eventually(self.unary()?)),
                    "X" => Ok(LtlFormula::next(self.unary()?)),
                    "true" => Ok(LtlFormula::True),
                    "false" => Ok(LtlFormula::ff()),
                    "U" => self.err("misplaced 'U'"),
                    _ => Ok(LtlFormula::Prop(s)),
                }
            }
            _ => self.err("expected a formula"),
        }
    }
}

/// Parses `! & | -> U X F G true false` with parentheses.
/// Unary operators bind tightest, then `U`, `&`, `|`, `->`.
pub fn parse_ltl(s: &str) -> Result<LtlFormula> {
    let mut p = Parser { toks: tokenize(s)?, pos: 0 };
    let f = p.implication()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(f)
}

#[derive(Clone, Debug)]
enum Node {
    True,
    Prop(Option<usize>),
    Not(usize),
    And(usize, usize),
    Or(usize, usize),
    Next(usize),
    Until(usize, usize),
}

/// Formula flattened in post-order with propositions resolved against an AP list.
#[derive(Clone, Debug)]
pub struct CompiledLtl {
    nodes: Vec<Node>,
}

impl CompiledLtl {
    /// Propositions missing from `ap` are treated as always false.
    pub fn new(f: &LtlFormula, ap: &[String]) -> Self {
        fn go(f: &LtlFormula, ap: &[String], nodes: &mut Vec<Node>) -> usize {
            let n = match f {
                LtlFormula::True => Node::True,
                LtlFormula::Prop(p) => Node::Prop(ap.iter().position(|a| a == p)),
                LtlFormula::Not(a) => Node::Not(go(a, ap, nodes)),
                LtlFormula::Next(a) => Node::Next(go(a, ap, nodes)),
                LtlFormula::And(a, b) => {
                    let (x, y) = (go(a, ap, nodes), go(b, ap, nodes));
                    Node::And(x, y)
                }
                LtlFormula::Or(a, b) => {
                    let (x, y) = (go(a, ap, nodes), go(b, ap, nodes));
                    Node::Or(x, y)
                }
                LtlFormula::Until(a, b) => {
                    let (x, y) = (go(a, ap, nodes), go(b, ap, nodes));
                    Node::Until(x, y)
                }
            };
            nodes.push(n);
            nodes.len() - 1
        }
        let mut nodes = Vec::new();
        go(f, ap, &mut nodes);
        CompiledLtl { nodes }
    }

    /// Truth at position 0 of `prefix . cycle^omega`; letters are bitmasks over the AP.
    pub fn eval(&self, prefix: &[u32], cycle: &[u32]) -> bool {
        let p = prefix.len();
        let c = cycle.len();
        let n = p + c;
        let letter = |i: usize| if i < p { prefix[i] } else { cycle[i - p] };
        let succ = |i: usize| if i + 1 < n { i + 1 } else { p };
        let mut val: Vec<Vec<bool>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v: Vec<bool> = match *node {
                Node::True => vec![true; n],
                Node::Prop(None) => vec![false; n],
                Node::Prop(Some(k)) => (0..n).map(|i| letter(i) >> k & 1 == 1).collect(),
                Node::Not(a) => val[a].iter().map(|x| !x).collect(),
                Node::And(a, b) => (0..n).map(|i| val[a][i] && val[b][i]).collect(),
                Node::Or(a, b) => (0..n).map(|i| val[a][i] || val[b][i]).collect(),
                Node::Next(a) => (0..n).map(|i| val[a][succ(i)]).collect(),
                Node::Until(a, b) => {
                    let (va, vb) = (&val[a], &val[b]);
                    let mut u = vec![false; n];
                    // on the cycle, one full turn decides the until
                    for (i, ui) in u.iter_mut().enumerate().skip(p) {
                        let mut j = i;
                        for _ in 0..c {
                            if vb[j] {
                                *ui = true;
                                break;
                            }
                            if !va[j] {
                                break;
                            }
                            j = succ(j);
                        }
                    }
                    for i in (0..p).rev() {
                        u[i] = vb[i] || (va[i] && u[succ(i)]);
                    }
                    u
                }
            };
            val.push(v);
        }
        val.last().map(|v| v[0]).unwrap_or(true)
    }
}

/// Satisfaction of `f` by a lasso whose label-sets range over `ap`.
pub fn ltl_eval_lasso(f: &LtlFormula, ap: &[String], w: &LassoWord) -> bool {
    let cf = CompiledLtl::new(f, ap);
    let bits = |ls: &[crate::model::LabelSet]| ls.iter().map(|l| l.0 as u32).collect::<Vec<_>>();
    cf.eval(&bits(&w.prefix), &bits(&w.cycle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LabelSet;

    fn ap() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn w(prefix: &[u64], cycle: &[u64]) -> LassoWord {
        LassoWord::new(prefix.iter().map(|&b| LabelSet(b)).collect(), cycle.iter().map(|&b| LabelSet(b)).collect())
    }

    #[test]
    fn parser_precedence() {
        let f = parse_ltl("G F a & b -> !a U b").unwrap();
        let g = LtlFormula::implies(
            LtlFormula::and(LtlFormula::always(LtlFormula::eventually(LtlFormula::prop("a"))), LtlFormula::prop("b")),
            LtlFormula::until(LtlFormula::not(LtlFormula::prop("a")), LtlFormula::prop("b")),
        );
        assert_eq!(f, g);
        assert!(parse_ltl("a &").is_err());
        assert!(parse_ltl("(a").is_err());
    }

    #[test]
    fn display_round_trips() {
        let f = parse_ltl("G (a -> X (!a U b)) | F G b").unwrap();
        assert_eq!(parse_ltl(&f.to_string()).unwrap(), f);
    }

    #[test]
    fn hand_checked_lassos() {
        let gfa = parse_ltl("G F a").unwrap();
        assert!(ltl_eval_lasso(&gfa, &ap(), &w(&[0, 0], &[0, 1])));
        assert!(!ltl_eval_lasso(&gfa, &ap(), &w(&[1, 1], &[0])));
        let until = parse_ltl("a U b").unwrap();
        assert!(ltl_eval_lasso(&until, &ap(), &w(&[1, 1], &[2])));
        assert!(!ltl_eval_lasso(&until, &ap(), &w(&[1, 0], &[2])));
        assert!(!ltl_eval_lasso(&until, &ap(), &w(&[], &[1])));
        let x = parse_ltl("X X b").unwrap();
        assert!(ltl_eval_lasso(&x, &ap(), &w(&[0], &[0, 2])));
        assert!(!ltl_eval_lasso(&x, &ap(), &w(&[0], &[2, 0])));
    }

    #[test]
    fn unrolling_preserves_truth() {
        let fs = ["G F a", "F G b", "a U b", "G (a -> X (!a U b))", "X (a & !b)"];
        let mut words = Vec::new();
        super::super::for_each_lasso(4, 2, 3, |p, c| words.push((p.to_vec(), c.to_vec())));
        for f in fs {
            let cf = CompiledLtl::new(&parse_ltl(f).unwrap(), &ap());
            for (p, c) in &words {
                let mut p2 = p.clone();
                p2.push(c[0]);
                let mut c2 = c[1..].to_vec();
                c2.push(c[0]);
                assert_eq!(cf.eval(p, c), cf.eval(&p2, &c2), "{f} on {p:?}.{c:?}");
            }
        }
    }
}
