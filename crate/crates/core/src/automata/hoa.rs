//! HOA v1 import and export for state-based deterministic Rabin automata.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Dra, Letter, RabinPair, MAX_DRA_AP};
use crate::error::{Error, Result};

fn perr<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::ParseError { line, msg: msg.into() })
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Int(usize),
    Str(String),
    Sym(char),
}

fn tokenize(line: &str, ln: usize) -> Result<Vec<Tok>> {
    let cs: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '"' {
            let mut s = String::new();
            i += 1;
            while i < cs.len() && cs[i] != '"' {
                if cs[i] == '\\' && i + 1 < cs.len() {
                    i += 1;
                }
                s.push(cs[i]);
                i += 1;
            }
            if i >= cs.len() {
                return perr(ln, "unterminated string");
            }
            i += 1;
            out.push(Tok::Str(s));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < cs.len() && cs[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = cs[start..i].iter().collect();
            out.push(Tok::Int(s.parse().map_err(|_| Error::ParseError { line: ln, msg: "bad integer".into() })?));
        } else if c.is_alphabetic() || c == '_' || c == '-' || c == '@' {
            let start = i;
            while i < cs.len() && (cs[i].is_alphanumeric() || matches!(cs[i], '_' | '-' | '@' | ':' | '.')) {
                i += 1;
            }
            out.push(Tok::Word(cs[start..i].iter().collect()));
        } else {
            out.push(Tok::Sym(c));
            i += 1;
        }
    }
    Ok(out)
}

/// Label expression over AP indices.
#[derive(Clone, Debug)]
enum Label {
    True,
    False,
    Ap(usize),
    Not(Box<Label>),
    And(Box<Label>, Box<Label>),
    Or(Box<Label>, Box<Label>),
}

impl Label {
    fn eval(&self, l: Letter) -> bool {
        match self {
            Label::True => true,
            Label::False => false,
            Label::Ap(i) => l >> i & 1 == 1,
            Label::Not(a) => !a.eval(l),
            Label::And(a, b) => a.eval(l) && b.eval(l),
            Label::Or(a, b) => a.eval(l) || b.eval(l),
        }
    }
}

struct LabelParser<'a> {
    toks: &'a [Tok],
    pos: usize,
    ln: usize,
    nap: usize,
}

impl LabelParser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn or(&mut self) -> Result<Label> {
        let mut l = self.and()?;
        while self.peek() == Some(&Tok::Sym('|')) {
            self.pos += 1;
            l = Label::Or(Box::new(l), Box::new(self.and()?));
        }
        Ok(l)
    }

    fn and(&mut self) -> Result<Label> {
        let mut l = self.atom()?;
        while self.peek() == Some(&Tok::Sym('&')) {
            self.pos += 1;
            l = Label::And(Box::new(l), Box::new(self.atom()?));
        }
        Ok(l)
    }

    fn atom(&mut self) -> Result<Label> {
        let t = self.peek().cloned();
        self.pos += 1;
        match t {
            Some(Tok::Sym('!')) => Ok(Label::Not(Box::new(self.atom()?))),
            Some(Tok::Sym('(')) => {
                let l = self.or()?;
                if self.peek() != Some(&Tok::Sym(')')) {
                    return perr(self.ln, "expected ')' in label");
                }
                self.pos += 1;
                Ok(l)
            }
            Some(Tok::Word(w)) if w == "t" => Ok(Label::True),
            Some(Tok::Word(w)) if w == "f" => Ok(Label::False),
            Some(Tok::Int(i)) if i < self.nap => Ok(Label::Ap(i)),
            Some(Tok::Int(i)) => perr(self.ln, format!("AP index {} out of range", i)),
            _ => perr(self.ln, "bad label expression"),
        }
    }
}

/// Parses `Fin(a) & Inf(b) | ...` into (fin set, inf set) pairs.
fn parse_acceptance(toks: &[Tok], ln: usize) -> Result<Vec<(usize, usize)>> {
    if toks == [Tok::Word("f".into())] {
        return Ok(Vec::new());
    }
    let mut pairs = Vec::new();
    let mut i = 0;
    let term = |i: &mut usize| -> Result<(String, usize)> {
        let name = match toks.get(*i) {
            Some(Tok::Word(w)) if w == "Fin" || w == "Inf" => w.clone(),
            _ => return perr(ln, "expected Fin(..) or Inf(..)"),
        };
        match (toks.get(*i + 1), toks.get(*i + 2), toks.get(*i + 3)) {
            (Some(Tok::Sym('(')), Some(Tok::Int(k)), Some(Tok::Sym(')'))) => {
                *i += 4;
                Ok((name, *k))
            }
            _ => perr(ln, "malformed acceptance atom"),
        }
    };
    loop {
        let mut paren = false;
        if toks.get(i) == Some(&Tok::Sym('(')) {
            paren = true;
            i += 1;
        }
        let a = term(&mut i)?;
        if toks.get(i) != Some(&Tok::Sym('&')) {
            return Err(Error::UnsupportedAcceptance("each disjunct must be Fin(i) & Inf(j)".into()));
        }
        i += 1;
        let b = term(&mut i)?;
        if paren {
            if toks.get(i) != Some(&Tok::Sym(')')) {
                return perr(ln, "expected ')' in acceptance");
            }
            i += 1;
        }
        match (a.0.as_str(), b.0.as_str()) {
            ("Fin", "Inf") => pairs.push((a.1, b.1)),
            ("Inf", "Fin") => pairs.push((b.1, a.1)),
            _ => return Err(Error::UnsupportedAcceptance("each disjunct must be Fin(i) & Inf(j)".into())),
        }
        match toks.get(i) {
            None => return Ok(pairs),
            Some(Tok::Sym('|')) => i += 1,
            _ => return Err(Error::UnsupportedAcceptance("acceptance is not a Rabin condition".into())),
        }
    }
}

/// Parses a deterministic, state-based Rabin automaton in HOA v1 format.
/// Letters without an outgoing edge lead to an added rejecting sink.
pub fn parse_hoa(text: &str) -> Result<Dra> {
    let mut states: Option<usize> = None;
    let mut start: Option<usize> = None;
    let mut ap: Option<Vec<String>> = None;
    let mut acc: Option<Vec<(usize, usize)>> = None;
    let mut seen_header = false;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut body_line = 0;
    for (ln, line) in lines.by_ref() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t == "--BODY--" {
            body_line = ln;
            break;
        }
        let (key, rest) = match t.split_once(':') {
            Some(kv) => kv,
            None => return perr(ln, "expected 'name: value'"),
        };
        let toks = tokenize(rest, ln)?;
        match key.trim() {
            "HOA" => {
                if toks != [Tok::Word("v1".into())] {
                    return perr(ln, "only HOA v1 is supported");
                }
                seen_header = true;
            }
            "States" => match toks.as_slice() {
                [Tok::Int(n)] => states = Some(*n),
                _ => return perr(ln, "bad States"),
            },
            "Start" => {
                if start.is_some() {
                    return Err(Error::NondeterministicAutomaton { state: 0 });
                }
                match toks.as_slice() {
                    [Tok::Int(n)] => start = Some(*n),
                    _ => return Err(Error::NondeterministicAutomaton { state: 0 }),
                }
            }
            "AP" => {
                let n = match toks.first() {
                    Some(Tok::Int(n)) => *n,
                    _ => return perr(ln, "bad AP"),
                };
                let names: Vec<String> = toks[1..]
                    .iter()
                    .map(|t| match t {
                        Tok::Str(s) => Ok(s.clone()),
                        _ => perr(ln, "AP names must be quoted"),
                    })
                    .collect::<Result<_>>()?;
                if names.len() != n {
                    return perr(ln, "AP count does not match names");
                }
                if n > MAX_DRA_AP {
                    return Err(Error::AlphabetMismatch(format!("{} propositions exceed {}", n, MAX_DRA_AP)));
                }
                ap = Some(names);
            }
            "acc-name" => match toks.first() {
                Some(Tok::Word(w)) if w == "Rabin" => {}
                Some(Tok::Word(w)) => return Err(Error::UnsupportedAcceptance(format!("acc-name {}", w))),
                _ => return perr(ln, "bad acc-name"),
            },
            "Acceptance" => {
                if toks.is_empty() {
                    return perr(ln, "bad Acceptance");
                }
                acc = Some(parse_acceptance(&toks[1..], ln)?);
            }
            _ => {}
        }
    }
    if !seen_header {
        return perr(1, "missing 'HOA: v1'");
    }
    if body_line == 0 {
        return perr(text.lines().count(), "missing --BODY--");
    }
    let n = states.ok_or(Error::ParseError { line: body_line, msg: "missing States".into() })?;
    let ap = ap.unwrap_or_default();
    let acc = acc.ok_or(Error::ParseError { line: body_line, msg: "missing Acceptance".into() })?;
    let initial = start.ok_or(Error::ParseError { line: body_line, msg: "missing Start".into() })?;
    let nl = 1usize << ap.len();
    let mut edges: Vec<Vec<(Label, usize)>> = vec![Vec::new(); n];
    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut current: Option<usize> = None;
    let mut ended = false;
    for (ln, line) in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t == "--END--" {
            ended = true;
            break;
        }
        if let Some(rest) = t.strip_prefix("State:") {
            let toks = tokenize(rest, ln)?;
            let q = match toks.first() {
                Some(Tok::Int(q)) if *q < n => *q,
                _ => return perr(ln, "bad state id"),
            };
            let mut i = 1;
            if matches!(toks.get(i), Some(Tok::Str(_))) {
                i += 1;
            }
            if toks.get(i) == Some(&Tok::Sym('[')) {
                return perr(ln, "state labels are not supported");
            }
            if toks.get(i) == Some(&Tok::Sym('{')) {
                i += 1;
                while let Some(Tok::Int(k)) = toks.get(i) {
                    sets[q].push(*k);
                    i += 1;
                }
                if toks.get(i) != Some(&Tok::Sym('}')) {
                    return perr(ln, "expected '}'");
                }
            }
            current = Some(q);
            continue;
        }
        let q = current.ok_or(Error::ParseError { line: ln, msg: "edge before any State".into() })?;
        let toks = tokenize(t, ln)?;
        if toks.first() != Some(&Tok::Sym('[')) {
            return perr(ln, "edges need explicit labels");
        }
        let close = toks.iter().position(|x| *x == Tok::Sym(']')).ok_or(Error::ParseError {
            line: ln,
            msg: "expected ']'".into(),
        })?;
        let mut lp = LabelParser { toks: &toks[1..close], pos: 0, ln, nap: ap.len() };
        let label = lp.or()?;
        if lp.pos != close - 1 {
            return perr(ln, "trailing tokens in label");
        }
        let dst = match toks.get(close + 1) {
            Some(Tok::Int(d)) if *d < n => *d,
            _ => return perr(ln, "bad edge destination"),
        };
        match toks.get(close + 2) {
            None => {}
            Some(Tok::Sym('{')) => return Err(Error::UnsupportedAcceptance("transition-based acceptance".into())),
            Some(Tok::Sym('&')) => return Err(Error::NondeterministicAutomaton { state: q }),
            _ => return perr(ln, "trailing tokens after edge"),
        }
        edges[q].push((label, dst));
    }
    if !ended {
        return perr(text.lines().count(), "missing --END--");
    }
    let sink = n;
    let mut delta = vec![sink; (n + 1) * nl];
    let mut used_sink = false;
    for q in 0..n {
        for l in 0..nl {
            let mut hit = edges[q].iter().filter(|(lab, _)| lab.eval(l as Letter)).map(|e| e.1);
            match (hit.next(), hit.next()) {
                (Some(d), None) => delta[q * nl + l] = d,
                (Some(_), Some(_)) => return Err(Error::NondeterministicAutomaton { state: q }),
                (None, _) => used_sink = true,
            }
        }
    }
    let total = if used_sink { n + 1 } else { n };
    delta.truncate(total * nl);
    let member = |k: usize| -> Vec<usize> { (0..n).filter(|&q| sets[q].contains(&k)).collect() };
    let mut pairs: Vec<RabinPair> = acc.iter().map(|&(f, i)| RabinPair::new(member(f), member(i))).collect();
    if pairs.is_empty() {
        pairs.push(RabinPair::new([], []));
    }
    Dra::new(ap, total, delta, initial, pairs)
}

fn minterm(l: usize, nap: usize) -> String {
    if nap == 0 {
        return "t".into();
    }
    (0..nap).map(|i| if l >> i & 1 == 1 { i.to_string() } else { format!("!{}", i) }).collect::<Vec<_>>().join("&")
}

/// Writes the automaton as HOA v1 with one acceptance-set pair per Rabin pair.
pub fn serialize_hoa(d: &Dra) -> String {
    let mut s = String::new();
    let nl = d.num_letters();
    let _ = writeln!(s, "HOA: v1");
    let _ = writeln!(s, "States: {}", d.num_states);
    let _ = writeln!(s, "Start: {}", d.initial);
    let names: Vec<String> = d.ap.iter().map(|a| format!("\"{}\"", a)).collect();
    let _ = writeln!(s, "AP: {}{}{}", d.ap.len(), if names.is_empty() { "" } else { " " }, names.join(" "));
    let _ = writeln!(s, "acc-name: Rabin {}", d.pairs.len());
    let cond: Vec<String> = (0..d.pairs.len()).map(|i| format!("(Fin({})&Inf({}))", 2 * i, 2 * i + 1)).collect();
    let _ = writeln!(s, "Acceptance: {} {}", 2 * d.pairs.len(), cond.join(" | "));
    let _ = writeln!(s, "properties: trans-labels explicit-labels state-acc deterministic complete");
    let _ = writeln!(s, "--BODY--");
    for q in 0..d.num_states {
        let mut acc = Vec::new();
        for (i, p) in d.pairs.iter().enumerate() {
            if p.in_fin(q) {
                acc.push(2 * i);
            }
            if p.in_inf(q) {
                acc.push(2 * i + 1);
            }
        }
        if acc.is_empty() {
            let _ = writeln!(s, "State: {}", q);
        } else {
            let a: Vec<String> = acc.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "State: {} {{{}}}", q, a.join(" "));
        }
        let mut by_dst: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for l in 0..nl {
            by_dst.entry(d.step(q, l as Letter)).or_default().push(l);
        }
        for (dst, letters) in by_dst {
            let label = if letters.len() == nl {
                "t".to_string()
            } else {
                letters.iter().map(|&l| minterm(l, d.ap.len())).collect::<Vec<_>>().join(" | ")
            };
            let _ = writeln!(s, "[{}] {}", label, dst);
        }
    }
    let _ = writeln!(s, "--END--");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{template_dra, TemplateSpec};

    const GFA: &str = r#"HOA: v1
name: "GF a"
States: 2
Start: 0
AP: 1 "a"
acc-name: Rabin 1
Acceptance: 2 Fin(0) & Inf(1)
--BODY--
State: 0
[!0] 0
[0] 1
State: 1 {1}
[!0] 0
[0] 1
--END--
"#;

    #[test]
    fn parses_hand_written_file() {
        let d = parse_hoa(GFA).unwrap();
        assert_eq!(d.num_states, 2);
        assert_eq!(d.pairs, vec![RabinPair::new([], [1])]);
        assert!(d.accepts_letters(&[], &[0, 1]));
        assert!(!d.accepts_letters(&[1], &[0]));
    }

    #[test]
    fn round_trip_preserves_structure() {
        for t in ["surveil(a, b)", "safe_return(seq(a, b); s)", "until(a, b)"] {
            let d = template_dra(&t.parse::<TemplateSpec>().unwrap()).unwrap();
            assert_eq!(parse_hoa(&serialize_hoa(&d)).unwrap(), d);
        }
    }

    #[test]
    fn missing_edges_go_to_sink() {
        let text = GFA.replace("[!0] 0\n[0] 1\nState: 1", "[0] 1\nState: 1");
        let d = parse_hoa(&text).unwrap();
        assert_eq!(d.num_states, 3);
        assert!(!d.accepts_letters(&[0], &[1]));
    }

    #[test]
    fn rejects_unsupported_inputs() {
        let e = parse_hoa(&GFA.replace("[0] 1\nState: 1", "[0] 1 {1}\nState: 1")).unwrap_err();
        assert!(matches!(e, Error::UnsupportedAcceptance(_)));
        let e = parse_hoa(&GFA.replace("[!0] 0\n[0] 1\nState: 1", "[t] 0\n[0] 1\nState: 1")).unwrap_err();
        assert!(matches!(e, Error::NondeterministicAutomaton { state: 0 }));
        let e = parse_hoa(&GFA.replace("acc-name: Rabin 1", "acc-name: Buchi")).unwrap_err();
        assert!(matches!(e, Error::UnsupportedAcceptance(_)));
        let e = parse_hoa(&GFA.replace("States: 2", "States: x")).unwrap_err();
        assert!(matches!(e, Error::ParseError { line: 3, .. }));
    }
}
