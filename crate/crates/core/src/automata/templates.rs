//! Hand-built Rabin automata for the supported task shapes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{dra_intersection, Dra, Letter, LtlFormula, RabinPair};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateSpec {
    /// Every word.
    True,
    /// `G F p1 & ... & G F pk`.
    Surveillance(Vec<String>),
    /// `F p`.
    Reach(String),
    /// `F (p & F q)`.
    SeqReach(String, String),
    /// `!a U b`: reach `b` without touching `a` first.
    AvoidReach(String, String),
    /// `G (p -> F q)`.
    Response(String, String),
    /// `G (p -> X (!p U q))`.
    UntilGuard(String, String),
    /// Prefix task, then `F G (s1 | ... | sm)`.
    SafeReturn { prefix: Box<TemplateSpec>, stay: Vec<String> },
    /// Language intersection.
    And(Box<TemplateSpec>, Box<TemplateSpec>),
}

impl TemplateSpec {
    pub fn formula(&self) -> LtlFormula {
        use LtlFormula as L;
        let p = |s: &str| L::prop(s);
        match self {
            TemplateSpec::True => L::True,
            TemplateSpec::Surveillance(ps) => L::all(ps.iter().map(|x| L::always(L::eventually(p(x))))),
            TemplateSpec::Reach(a) => L::eventually(p(a)),
            TemplateSpec::SeqReach(a, b) => L::eventually(L::and(p(a), L::eventually(p(b)))),
            TemplateSpec::AvoidReach(a, b) => L::until(L::not(p(a)), p(b)),
            TemplateSpec::Response(a, b) => L::always(L::implies(p(a), L::eventually(p(b)))),
            TemplateSpec::UntilGuard(a, b) => {
                L::always(L::implies(p(a), L::next(L::until(L::not(p(a)), p(b)))))
            }
            TemplateSpec::SafeReturn { prefix, stay } => {
                L::and(prefix.formula(), L::eventually(L::always(L::any(stay.iter().map(|x| p(x))))))
            }
            TemplateSpec::And(a, b) => L::and(a.formula(), b.formula()),
        }
    }

    /// Propositions in order of first appearance.
    pub fn props(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut add = |xs: &[String]| {
            for x in xs {
                if !out.contains(x) {
                    out.push(x.clone());
                }
            }
        };
        match self {
            TemplateSpec::True => {}
            TemplateSpec::Surveillance(ps) => add(ps),
            TemplateSpec::Reach(a) => add(std::slice::from_ref(a)),
            TemplateSpec::SeqReach(a, b)
            | TemplateSpec::AvoidReach(a, b)
            | TemplateSpec::Response(a, b)
            | TemplateSpec::UntilGuard(a, b) => {
                add(&[a.clone(), b.clone()])
            }
            TemplateSpec::SafeReturn { prefix, stay } => {
                add(&prefix.props());
                add(stay)
            }
            TemplateSpec::And(a, b) => {
                add(&a.props());
                add(&b.props())
            }
        }
        out
    }
}

impl fmt::Display for TemplateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateSpec::True => write!(f, "true"),
            TemplateSpec::Surveillance(ps) => write!(f, "surveil({})", ps.join(", ")),
            TemplateSpec::Reach(a) => write!(f, "reach({})", a),
            TemplateSpec::SeqReach(a, b) => write!(f, "seq({}, {})", a, b),
            TemplateSpec::AvoidReach(a, b) => write!(f, "avoid_reach({}, {})", a, b),
            TemplateSpec::Response(a, b) => write!(f, "response({}, {})", a, b),
            TemplateSpec::UntilGuard(a, b) => write!(f, "until({}, {})", a, b),
            TemplateSpec::SafeReturn { prefix, stay } => write!(f, "safe_return({}; {})", prefix, stay.join(", ")),
            TemplateSpec::And(a, b) => write!(f, "{} && {}", a, b),
        }
    }
}

fn split_top(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

impl FromStr for TemplateSpec {
    type Err = Error;

    /// `true`, `surveil(a, b)`, `reach(a)`, `seq(a, b)`, `response(a, b)`,
    /// `until(a, b)`, `safe_return(<prefix>; s1, s2)`, joined with `&&`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::UnsupportedTemplate(format!("{}: '{}'", m, s.trim()));
        let parts: Vec<&str> = s.split("&&").collect();
        if parts.len() > 1 {
            let mut it = parts.into_iter().map(str::parse::<TemplateSpec>);
            let first = it.next().unwrap()?;
            return it.try_fold(first, |acc, t| Ok(TemplateSpec::And(Box::new(acc), Box::new(t?))));
        }
        let s = s.trim();
        if s == "true" {
            return Ok(TemplateSpec::True);
        }
        let open = s.find('(').ok_or_else(|| bad("expected name(args)"))?;
        if !s.ends_with(')') {
            return Err(bad("missing ')'"));
        }
        let name = s[..open].trim();
        let inner = &s[open + 1..s.len() - 1];
        let names = |x: &str| -> Result<Vec<String>> {
            let v: Vec<String> = x.split(',').map(|t| t.trim().to_string()).collect();
            if v.iter().any(|t| t.is_empty() || !t.chars().all(|c| c.is_alphanumeric() || c == '_')) {
                return Err(bad("bad proposition list"));
            }
            Ok(v)
        };
        let two = |x: &str| -> Result<(String, String)> {
            let v = names(x)?;
            match <[String; 2]>::try_from(v) {
                Ok([a, b]) => Ok((a, b)),
                Err(_) => Err(bad("expected two propositions")),
            }
        };
        match name {
            "surveil" => Ok(TemplateSpec::Surveillance(names(inner)?)),
            "reach" => {
                let v = names(inner)?;
                if v.len() != 1 {
                    return Err(bad("expected one proposition"));
                }
                Ok(TemplateSpec::Reach(v[0].clone()))
            }
            "seq" => two(inner).map(|(a, b)| TemplateSpec::SeqReach(a, b)),
            "avoid_reach" => two(inner).map(|(a, b)| TemplateSpec::AvoidReach(a, b)),
            "response" => two(inner).map(|(a, b)| TemplateSpec::Response(a, b)),
            "until" => two(inner).map(|(a, b)| TemplateSpec::UntilGuard(a, b)),
            "safe_return" => {
                let halves = split_top(inner, ';');
                if halves.len() != 2 {
                    return Err(bad("expected 'prefix; stay props'"));
                }
                let prefix: TemplateSpec = halves[0].parse()?;
                Ok(TemplateSpec::SafeReturn { prefix: Box::new(prefix), stay: names(halves[1])? })
            }
            _ => Err(bad("unknown template")),
        }
    }
}

impl TemplateSpec {
    /// Recognizes an LTL formula as a conjunction of template shapes, so
    /// formulas in the text grammar map onto hand-built automata.
    pub fn from_formula(f: &LtlFormula) -> Result<Self> {
        fn conjuncts<'a>(f: &'a LtlFormula, out: &mut Vec<&'a LtlFormula>) {
            match f {
                LtlFormula::And(a, b) => {
                    conjuncts(a, out);
                    conjuncts(b, out);
                }
                LtlFormula::True => {}
                other => out.push(other),
            }
        }
        // `F G (s1 | ... | sm)` yields its stay propositions
        fn stay_set(c: &LtlFormula) -> Option<Vec<String>> {
            fn disjuncts(f: &LtlFormula, out: &mut Vec<String>) -> bool {
                match f {
                    LtlFormula::Or(a, b) => disjuncts(a, out) && disjuncts(b, out),
                    LtlFormula::Prop(p) => {
                        out.push(p.clone());
                        true
                    }
                    _ => false,
                }
            }
            let LtlFormula::Until(t, g) = c else { return None };
            let LtlFormula::Not(g) = g.as_ref() else { return None };
            let LtlFormula::Until(t2, inner) = g.as_ref() else { return None };
            let LtlFormula::Not(inner) = inner.as_ref() else { return None };
            let mut out = Vec::new();
            (**t == LtlFormula::True && **t2 == LtlFormula::True && disjuncts(inner, &mut out)).then_some(out)
        }
        let mut parts = Vec::new();
        conjuncts(f, &mut parts);
        let mut stay: Option<Vec<String>> = None;
        let mut watch: Vec<String> = Vec::new();
        let mut rest: Vec<TemplateSpec> = Vec::new();
        for c in parts {
            if let Some(s) = stay_set(c) {
                if stay.replace(s).is_some() {
                    return Err(Error::UnsupportedTemplate("more than one persistence conjunct".into()));
                }
                continue;
            }
            let props = c.props();
            let mut cands: Vec<TemplateSpec> = Vec::new();
            for a in &props {
                cands.push(TemplateSpec::Reach(a.clone()));
                cands.push(TemplateSpec::Surveillance(vec![a.clone()]));
                for b in props.iter().filter(|b| *b != a) {
                    let (a, b) = (a.clone(), b.clone());
                    cands.push(TemplateSpec::SeqReach(a.clone(), b.clone()));
                    cands.push(TemplateSpec::AvoidReach(a.clone(), b.clone()));
                    cands.push(TemplateSpec::Response(a.clone(), b.clone()));
                    cands.push(TemplateSpec::UntilGuard(a, b));
                }
            }
            match cands.into_iter().find(|t| t.formula() == *c) {
                Some(TemplateSpec::Surveillance(mut p)) => watch.append(&mut p),
                Some(t) => rest.push(t),
                None => return Err(Error::UnsupportedTemplate(format!("no template matches '{}'", c))),
            }
        }
        if !watch.is_empty() {
            rest.insert(0, TemplateSpec::Surveillance(watch));
        }
        let join = |xs: Vec<TemplateSpec>| {
            xs.into_iter().reduce(|a, b| TemplateSpec::And(Box::new(a), Box::new(b))).unwrap_or(TemplateSpec::True)
        };
        Ok(match stay {
            None => join(rest),
            Some(stay) => match rest.len() {
                0 => TemplateSpec::SafeReturn { prefix: Box::new(TemplateSpec::True), stay },
                1 if matches!(rest[0], TemplateSpec::Reach(_) | TemplateSpec::SeqReach(..)) => {
                    TemplateSpec::SafeReturn { prefix: Box::new(rest.remove(0)), stay }
                }
                _ => TemplateSpec::And(
                    Box::new(join(rest)),
                    Box::new(TemplateSpec::SafeReturn { prefix: Box::new(TemplateSpec::True), stay }),
                ),
            },
        })
    }
}

struct Alphabet {
    ap: Vec<String>,
}

impl Alphabet {
    fn new(spec: &TemplateSpec) -> Self {
        Alphabet { ap: spec.props() }
    }

    fn bit(&self, p: &str) -> Letter {
        1 << self.ap.iter().position(|a| a == p).expect("proposition registered")
    }

    fn build(self, n: usize, init: usize, pairs: Vec<RabinPair>, step: impl Fn(usize, Letter) -> usize) -> Result<Dra> {
        let nl = 1usize << self.ap.len();
        let delta = (0..n).flat_map(|q| (0..nl).map(move |l| (q, l as Letter))).map(|(q, l)| step(q, l)).collect();
        Dra::new(self.ap, n, delta, init, pairs)
    }
}

/// Deterministic acceptor for a finite prefix task: state index `done` is
/// absorbing and reached exactly when the prefix is satisfied.
struct PrefixDfa {
    n: usize,
    done: usize,
    step: Box<dyn Fn(usize, Letter) -> usize>,
}

fn prefix_dfa(spec: &TemplateSpec, al: &Alphabet) -> Result<PrefixDfa> {
    match spec {
        TemplateSpec::True => Ok(PrefixDfa { n: 1, done: 0, step: Box::new(|_, _| 0) }),
        TemplateSpec::Reach(a) => {
            let pa = al.bit(a);
            Ok(PrefixDfa { n: 2, done: 1, step: Box::new(move |q, l| if q == 1 || l & pa != 0 { 1 } else { 0 }) })
        }
        TemplateSpec::SeqReach(a, b) => {
            let (pa, pb) = (al.bit(a), al.bit(b));
            Ok(PrefixDfa { n: 3, done: 2, step: Box::new(move |q, l| seq_step(q, l, pa, pb)) })
        }
        other => Err(Error::UnsupportedTemplate(format!("'{}' cannot be the prefix of a safe return", other))),
    }
}

fn seq_step(q: usize, l: Letter, pa: Letter, pb: Letter) -> usize {
    match q {
        0 if l & pa != 0 => {
            if l & pb != 0 {
                2
            } else {
                1
            }
        }
        0 => 0,
        1 if l & pb != 0 => 2,
        1 => 1,
        _ => 2,
    }
}

/// Rabin automaton recognizing exactly the words satisfying `spec.formula()`.
pub fn template_dra(spec: &TemplateSpec) -> Result<Dra> {
    let al = Alphabet::new(spec);
    match spec {
        TemplateSpec::True => Ok(Dra::accept_all(al.ap)),
        TemplateSpec::Surveillance(ps) => {
            if ps.is_empty() {
                return Err(Error::UnsupportedTemplate("surveillance needs at least one proposition".into()));
            }
            let bits: Vec<Letter> = ps.iter().map(|p| al.bit(p)).collect();
            let k = bits.len();
            // states 0..k wait for p_i; state k marks a completed round
            al.build(k + 1, 0, vec![RabinPair::new([], [k])], move |q, l| {
                let mut i = if q == k { 0 } else { q };
                while i < k && l & bits[i] != 0 {
                    i += 1;
                }
                i
            })
        }
        TemplateSpec::Reach(a) => {
            let pa = al.bit(a);
            al.build(2, 0, vec![RabinPair::new([], [1])], move |q, l| if q == 1 || l & pa != 0 { 1 } else { 0 })
        }
        TemplateSpec::SeqReach(a, b) => {
            let (pa, pb) = (al.bit(a), al.bit(b));
            al.build(3, 0, vec![RabinPair::new([], [2])], move |q, l| seq_step(q, l, pa, pb))
        }
        TemplateSpec::AvoidReach(a, b) => {
            let (pa, pb) = (al.bit(a), al.bit(b));
            // 0 waiting, 1 reached, 2 failed
            al.build(3, 0, vec![RabinPair::new([], [1])], move |q, l| match q {
                0 if l & pb != 0 => 1,
                0 if l & pa != 0 => 2,
                q => q,
            })
        }
        TemplateSpec::Response(a, b) => {
            let (pa, pb) = (al.bit(a), al.bit(b));
            // 0 idle, 1 request pending
            al.build(2, 0, vec![RabinPair::new([], [0])], move |q, l| {
                if l & pb != 0 {
                    0
                } else if l & pa != 0 {
                    1
                } else {
                    q
                }
            })
        }
        TemplateSpec::UntilGuard(a, b) => {
            let (pa, pb) = (al.bit(a), al.bit(b));
            // 0 idle, 1 waiting, 2 violated, 3 waiting again right after a discharge
            al.build(4, 0, vec![RabinPair::new([2], [0, 3])], move |q, l| {
                let (p, r) = (l & pa != 0, l & pb != 0);
                match q {
                    0 => usize::from(p),
                    1 | 3 => match (r, p) {
                        (true, true) => 3,
                        (true, false) => 0,
                        (false, true) => 2,
                        (false, false) => 1,
                    },
                    _ => 2,
                }
            })
        }
        TemplateSpec::SafeReturn { prefix, stay } => {
            if stay.is_empty() {
                return Err(Error::UnsupportedTemplate("safe return needs a stay proposition".into()));
            }
            let PrefixDfa { n, done, step } = prefix_dfa(prefix, &al)?;
            let stay_mask: Letter = stay.iter().map(|s| al.bit(s)).fold(0, |a, b| a | b);
            // prefix states keep their index when `done` is last; then done-outside, done-inside
            debug_assert_eq!(done, n - 1);
            let out = done;
            let inside = out + 1;
            let pairs = vec![RabinPair::new((0..=out).collect::<Vec<_>>(), [inside])];
            al.build(out + 2, 0, pairs, move |q, l| {
                if q >= out || step(q, l) == done {
                    if l & stay_mask != 0 {
                        inside
                    } else {
                        out
                    }
                } else {
                    step(q, l)
                }
            })
        }
        TemplateSpec::And(a, b) => dra_intersection(&template_dra(a)?, &template_dra(b)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_counts() {
        let t = |s: &str| template_dra(&s.parse().unwrap()).unwrap().num_states;
        assert_eq!(t("surveil(a)"), 2);
        assert_eq!(t("surveil(a, b, c)"), 4);
        assert_eq!(t("reach(a)"), 2);
        assert_eq!(t("seq(a, b)"), 3);
        assert_eq!(t("avoid_reach(a, b)"), 3);
        assert_eq!(t("response(a, b)"), 2);
        assert_eq!(t("safe_return(reach(ex); bs)"), 3);
        assert_eq!(t("safe_return(true; bs)"), 2);
        assert_eq!(t("true"), 1);
    }

    #[test]
    fn parse_display_round_trip() {
        for s in ["surveil(a, b)", "safe_return(seq(a, b); s, t)", "reach(a) && response(b, c)", "until(p, q)", "avoid_reach(d, ex)"] {
            let t: TemplateSpec = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!("reach(a, b)".parse::<TemplateSpec>().is_err());
        assert!("foo(a)".parse::<TemplateSpec>().is_err());
        assert!("safe_return(surveil(a); s)".parse::<TemplateSpec>().and_then(|t| template_dra(&t)).is_err());
    }

    #[test]
    fn surveillance_consumes_greedily() {
        let d = template_dra(&"surveil(a, b)".parse().unwrap()).unwrap();
        assert_eq!(d.step(0, 0b11), 2);
        assert_eq!(d.step(0, 0b01), 1);
        assert_eq!(d.step(1, 0b01), 1);
        assert_eq!(d.step(2, 0b00), 0);
    }

    #[test]
    fn ltl_text_maps_to_templates() {
        use crate::automata::parse_ltl;
        use crate::oracle::{lasso_mismatches, LassoBudget};
        let cases = [
            ("true", "true"),
            ("G F a & G F b", "surveil(a, b)"),
            ("F a", "reach(a)"),
            ("F (a & F b)", "seq(a, b)"),
            ("!a U b", "avoid_reach(a, b)"),
            ("G (a -> F b)", "response(a, b)"),
            ("G (a -> X (!a U b))", "until(a, b)"),
            ("F G bs", "safe_return(true; bs)"),
            ("F a & F G (b | c)", "safe_return(reach(a); b, c)"),
            ("G F a & F G b", "surveil(a) && safe_return(true; b)"),
        ];
        for (text, want) in cases {
            let f = parse_ltl(text).unwrap();
            let t = TemplateSpec::from_formula(&f).unwrap();
            assert_eq!(t.to_string(), want);
            let budget = LassoBudget { random: 500, max_prefix: 3, ..Default::default() };
            assert_eq!(lasso_mismatches(&template_dra(&t).unwrap(), &f, budget).1, 0, "{}", text);
        }
        for text in ["G a", "X a", "F G a & F G b"] {
            assert!(TemplateSpec::from_formula(&parse_ltl(text).unwrap()).is_err(), "{}", text);
        }
    }
}
