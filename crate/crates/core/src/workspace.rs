//! Workspace maps: ASCII office grids and depth-map terrains, and their
//! conversion into labeled MDPs.
//!
//! A map file is a sequence of `[section]` blocks. Lines starting with `;`
//! are comments.
//!
//! ```text
//! [map]
//! ######
//! #a..b#
//! #.x^.#
//! ######
//! [legend]
//! a = ex
//! b = bs
//! [motion]
//! p_intent = 0.8
//! p_drift_left = 0.1
//! p_drift_right = 0.1
//! p_stay = 0
//! [costs]
//! north = 1
//! east = 1
//! south = 1
//! west = 1
//! [start]
//! 1 1
//! ```
//!
//! Cell characters: `#` blocked, `.` free, `x` pit (absorbing), `^ > v <`
//! one-way cells that can only be entered moving in the arrow direction, and
//! legend characters for labeled free cells. Terrain maps add a `[depth]`
//! grid and a `[terrain]` block with `delta_up_max` and `delta_down_max`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Choice, LabelSet, LabeledMdp, StateId};

const RESERVED: &str = ".#x^>v<";

/// Compass directions in action order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    North,
    East,
    South,
    West,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    pub fn name(self) -> &'static str {
        ["north", "east", "south", "west"][self as usize]
    }

    fn delta(self) -> (i64, i64) {
        [(-1, 0), (0, 1), (1, 0), (0, -1)][self as usize]
    }

    fn left(self) -> Dir {
        Dir::ALL[(self as usize + 3) % 4]
    }

    fn right(self) -> Dir {
        Dir::ALL[(self as usize + 1) % 4]
    }

    fn arrow(c: char) -> Option<Dir> {
        match c {
            '^' => Some(Dir::North),
            '>' => Some(Dir::East),
            'v' => Some(Dir::South),
            '<' => Some(Dir::West),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motion {
    pub p_intent: f64,
    pub p_drift_left: f64,
    pub p_drift_right: f64,
    pub p_stay: f64,
}

impl Default for Motion {
    fn default() -> Self {
        Motion { p_intent: 0.8, p_drift_left: 0.1, p_drift_right: 0.1, p_stay: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    /// One row of cell characters per grid row.
    pub cells: Vec<Vec<char>>,
    /// Label list of every legend character.
    pub legend: BTreeMap<char, Vec<String>>,
    pub motion: Motion,
    /// Cost per move action, in `Dir::ALL` order.
    pub costs: [f64; 4],
    /// `(row, col)` of the initial cell.
    pub initial: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerrainSpec {
    pub grid: GridSpec,
    /// Depth in meters; larger is deeper.
    pub depth: Vec<Vec<f64>>,
    /// Largest depth decrease a single move can climb.
    pub delta_up_max: f64,
    /// Largest descent considered safe; only checked for consistency.
    pub delta_down_max: f64,
}

fn grid_err(line: usize, msg: impl Into<String>) -> Error {
    Error::ParseError { line, msg: msg.into() }
}

/// Section name, first line number and numbered lines.
type Section = (String, usize, Vec<(usize, String)>);

/// Splits a map file into sections.
fn sections(text: &str) -> Result<Vec<Section>> {
    let mut out: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        let n = i + 1;
        if line.trim_start().starts_with(';') {
            continue;
        }
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') && t.len() > 2 && t[1..t.len() - 1].chars().all(|c| c.is_ascii_lowercase()) {
            if out.iter().any(|s| s.0 == t[1..t.len() - 1]) {
                return Err(grid_err(n, format!("duplicate section {}", t)));
            }
            out.push((t[1..t.len() - 1].to_string(), n, Vec::new()));
            continue;
        }
        if t.is_empty() {
            continue;
        }
        match out.last_mut() {
            Some(s) => s.2.push((n, line.to_string())),
            None => return Err(grid_err(n, "content before the first section")),
        }
    }
    Ok(out)
}

fn key_values(lines: &[(usize, String)]) -> Result<BTreeMap<String, (usize, f64)>> {
    let mut kv = BTreeMap::new();
    for (n, l) in lines {
        let (k, v) = l.split_once('=').ok_or_else(|| grid_err(*n, "expected key = value"))?;
        let v: f64 = v.trim().parse().map_err(|_| grid_err(*n, format!("bad number '{}'", v.trim())))?;
        kv.insert(k.trim().to_string(), (*n, v));
    }
    Ok(kv)
}

fn take(kv: &mut BTreeMap<String, (usize, f64)>, key: &str, default: Option<f64>, line: usize) -> Result<f64> {
    match kv.remove(key) {
        Some((_, v)) => Ok(v),
        None => default.ok_or_else(|| grid_err(line, format!("missing key {}", key))),
    }
}

fn fmt_num(v: f64) -> String {
    format!("{}", v)
}

impl GridSpec {
    pub fn height(&self) -> usize {
        self.cells.len()
    }

    pub fn width(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    pub fn cell(&self, r: usize, c: usize) -> char {
        self.cells[r][c]
    }

    pub fn is_blocked(&self, r: usize, c: usize) -> bool {
        self.cells[r][c] == '#'
    }

    /// Labels of every labeled cell.
    pub fn cell_labels(&self) -> BTreeMap<(usize, usize), Vec<String>> {
        let mut out = BTreeMap::new();
        for (r, row) in self.cells.iter().enumerate() {
            for (c, ch) in row.iter().enumerate() {
                if let Some(l) = self.legend.get(ch) {
                    if !l.is_empty() {
                        out.insert((r, c), l.clone());
                    }
                }
            }
        }
        out
    }

    /// Sorted proposition names used by the legend.
    pub fn propositions(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.legend.values().flatten().collect();
        set.into_iter().cloned().collect()
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGrid(m));
        if self.height() == 0 || self.width() == 0 {
            return bad("empty grid".into());
        }
        if self.cells.iter().any(|r| r.len() != self.width()) {
            return bad("rows have different widths".into());
        }
        for row in &self.cells {
            for ch in row {
                if !RESERVED.contains(*ch) && !self.legend.contains_key(ch) {
                    return bad(format!("character '{}' is not in the legend", ch));
                }
            }
        }
        if let Some(c) = self.legend.keys().find(|c| RESERVED.contains(**c) || c.is_whitespace()) {
            return bad(format!("legend character '{}' is reserved", c));
        }
        let m = &self.motion;
        let probs = [m.p_intent, m.p_drift_left, m.p_drift_right, m.p_stay];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("motion probabilities must be in [0, 1] and sum to 1".into());
        }
        if self.costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return bad("action costs must be positive".into());
        }
        let (r, c) = self.initial;
        if r >= self.height() || c >= self.width() || self.is_blocked(r, c) {
            return bad(format!("initial cell ({}, {}) is outside the grid or blocked", r, c));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(parse_map(text)?.0)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; parsing it yields an equal spec.
    pub fn serialize(&self) -> String {
        let mut s = String::from("[map]\n");
        for row in &self.cells {
            s.extend(row.iter());
            s.push('\n');
        }
        s.push_str("[legend]\n");
        for (c, l) in &self.legend {
            let _ = writeln!(s, "{} = {}", c, l.join(", "));
        }
        let m = &self.motion;
        let _ = write!(
            s,
            "[motion]\np_intent = {}\np_drift_left = {}\np_drift_right = {}\np_stay = {}\n",
            fmt_num(m.p_intent),
            fmt_num(m.p_drift_left),
            fmt_num(m.p_drift_right),
            fmt_num(m.p_stay)
        );
        s.push_str("[costs]\n");
        for d in Dir::ALL {
            let _ = writeln!(s, "{} = {}", d.name(), fmt_num(self.costs[d as usize]));
        }
        let _ = writeln!(s, "[start]\n{} {}", self.initial.0, self.initial.1);
        s
    }

    /// Splits every cell into `factor x factor` sub-cells. Labels stay on the
    /// top-left sub-cell only, so feature regions keep their size.
    pub fn refine(&self, factor: usize) -> Result<GridSpec> {
        if factor == 0 {
            return Err(Error::InvalidGrid("refinement factor must be positive".into()));
        }
        let mut cells = Vec::with_capacity(self.height() * factor);
        for row in &self.cells {
            for i in 0..factor {
                let mut out = Vec::with_capacity(row.len() * factor);
                for &ch in row {
                    for j in 0..factor {
                        let labeled = self.legend.contains_key(&ch);
                        out.push(if labeled && (i, j) != (0, 0) { '.' } else { ch });
                    }
                }
                cells.push(out);
            }
        }
        let g = GridSpec {
            cells,
            legend: self.legend.clone(),
            motion: self.motion,
            costs: self.costs,
            initial: (self.initial.0 * factor, self.initial.1 * factor),
        };
        g.check()?;
        Ok(g)
    }
}

fn parse_map(text: &str) -> Result<(GridSpec, Option<TerrainSpec>)> {
    let secs = sections(text)?;
    let get = |name: &str| secs.iter().find(|s| s.0 == name);
    for s in &secs {
        if !["map", "legend", "motion", "costs", "start", "depth", "terrain"].contains(&s.0.as_str()) {
            return Err(grid_err(s.1, format!("unknown section [{}]", s.0)));
        }
    }
    let map = get("map").ok_or_else(|| grid_err(1, "missing [map] section"))?;
    let cells: Vec<Vec<char>> = map.2.iter().map(|(_, l)| l.trim().chars().collect()).collect();
    let mut legend = BTreeMap::new();
    if let Some(sec) = get("legend") {
        for (n, l) in &sec.2 {
            let (k, v) = l.split_once('=').ok_or_else(|| grid_err(*n, "expected c = labels"))?;
            let mut ks = k.trim().chars();
            let (Some(c), None) = (ks.next(), ks.next()) else {
                return Err(grid_err(*n, "legend key must be one character"));
            };
            let labels: Vec<String> =
                v.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect();
            if let Some(p) = labels.iter().find(|p| !p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')) {
                return Err(grid_err(*n, format!("bad proposition '{}'", p)));
            }
            if legend.insert(c, labels).is_some() {
                return Err(grid_err(*n, format!("duplicate legend entry '{}'", c)));
            }
        }
    }
    let motion = match get("motion") {
        Some(sec) => {
            let mut kv = key_values(&sec.2)?;
            let d = Motion::default();
            let m = Motion {
                p_intent: take(&mut kv, "p_intent", Some(d.p_intent), sec.1)?,
                p_drift_left: take(&mut kv, "p_drift_left", Some(d.p_drift_left), sec.1)?,
                p_drift_right: take(&mut kv, "p_drift_right", Some(d.p_drift_right), sec.1)?,
                p_stay: take(&mut kv, "p_stay", Some(d.p_stay), sec.1)?,
            };
            if let Some((k, (n, _))) = kv.into_iter().next() {
                return Err(grid_err(n, format!("unknown key {}", k)));
            }
            m
        }
        None => Motion::default(),
    };
    let mut costs = [1.0; 4];
    if let Some(sec) = get("costs") {
        let mut kv = key_values(&sec.2)?;
        for d in Dir::ALL {
            costs[d as usize] = take(&mut kv, d.name(), Some(1.0), sec.1)?;
        }
        if let Some((k, (n, _))) = kv.into_iter().next() {
            return Err(grid_err(n, format!("unknown key {}", k)));
        }
    }
    let start = get("start").ok_or_else(|| grid_err(1, "missing [start] section"))?;
    let initial = match start.2.as_slice() {
        [(n, l)] => {
            let v: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| grid_err(*n, format!("bad cell index '{}'", t))))
                .collect::<Result<_>>()?;
            match v.as_slice() {
                [r, c] => (*r, *c),
                _ => return Err(grid_err(*n, "expected: row col")),
            }
        }
        _ => return Err(grid_err(start.1, "expected one line: row col")),
    };
    let grid = GridSpec { cells, legend, motion, costs, initial };
    grid.check()?;
    let terrain = match (get("depth"), get("terrain")) {
        (None, None) => None,
        (Some(dsec), Some(tsec)) => {
            let mut depth = Vec::new();
            for (n, l) in &dsec.2 {
                let row: Vec<f64> = l
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| grid_err(*n, format!("bad depth '{}'", t))))
                    .collect::<Result<_>>()?;
                depth.push(row);
            }
            let mut kv = key_values(&tsec.2)?;
            let t = TerrainSpec {
                delta_up_max: take(&mut kv, "delta_up_max", None, tsec.1)?,
                delta_down_max: take(&mut kv, "delta_down_max", None, tsec.1)?,
                grid: grid.clone(),
                depth,
            };
            if let Some((k, (n, _))) = kv.into_iter().next() {
                return Err(grid_err(n, format!("unknown key {}", k)));
            }
            t.check()?;
            Some(t)
        }
        _ => return Err(grid_err(1, "[depth] and [terrain] must appear together")),
    };
    Ok((grid, terrain))
}

impl TerrainSpec {
    pub fn check(&self) -> Result<()> {
        self.grid.check()?;
        let bad = |m: String| Err(Error::InvalidTerrain(m));
        if self.depth.len() != self.grid.height() || self.depth.iter().any(|r| r.len() != self.grid.width()) {
            return bad("depth grid does not match the map size".into());
        }
        if self.depth.iter().flatten().any(|d| !d.is_finite()) {
            return bad("depths must be finite".into());
        }
        if !(self.delta_up_max >= 0.0 && self.delta_up_max <= self.delta_down_max) {
            return bad("need 0 <= delta_up_max <= delta_down_max".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_map(text)?.1.ok_or_else(|| Error::InvalidTerrain("missing [depth] and [terrain] sections".into()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn serialize(&self) -> String {
        let mut s = self.grid.serialize();
        s.push_str("[depth]\n");
        for row in &self.depth {
            let cells: Vec<String> = row.iter().map(|&d| fmt_num(d)).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        let _ = write!(
            s,
            "[terrain]\ndelta_up_max = {}\ndelta_down_max = {}\n",
            fmt_num(self.delta_up_max),
            fmt_num(self.delta_down_max)
        );
        s
    }

    /// Flat terrain over a grid.
    pub fn flat(grid: GridSpec) -> Self {
        let depth = vec![vec![0.0; grid.width()]; grid.height()];
        TerrainSpec { grid, depth, delta_up_max: 0.0, delta_down_max: 0.0 }
    }
}

/// Shared construction: `passable(from, to)` decides whether a move may
/// enter `to` from `from`.
fn build(g: &GridSpec, passable: impl Fn((usize, usize), (usize, usize)) -> bool) -> Result<LabeledMdp> {
    g.check()?;
    let (h, w) = (g.height(), g.width());
    let mut index = vec![vec![None; w]; h];
    let mut cells = Vec::new();
    for (r, row) in index.iter_mut().enumerate() {
        for (c, slot) in row.iter_mut().enumerate() {
            if !g.is_blocked(r, c) {
                *slot = Some(cells.len());
                cells.push((r, c));
            }
        }
    }
    let ap = g.propositions();
    let labels: Vec<LabelSet> = cells
        .iter()
        .map(|&(r, c)| {
            let names = g.legend.get(&g.cell(r, c)).map(Vec::as_slice).unwrap_or(&[]);
            LabelSet::from_indices(names.iter().map(|n| ap.iter().position(|a| a == n).expect("legend proposition")))
        })
        .collect();
    let target = |(r, c): (usize, usize), d: Dir| -> Option<StateId> {
        let (dr, dc) = d.delta();
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
            return None;
        }
        let to = (nr as usize, nc as usize);
        let y = index[to.0][to.1]?;
        if let Some(only) = Dir::arrow(g.cell(to.0, to.1)) {
            if only != d {
                return None;
            }
        }
        passable((r, c), to).then_some(y)
    };
    let m = g.motion;
    let mut choices = Vec::with_capacity(cells.len());
    for (x, &cell) in cells.iter().enumerate() {
        let pit = g.cell(cell.0, cell.1) == 'x';
        let mut row = Vec::with_capacity(4);
        for d in Dir::ALL {
            let mut mass: BTreeMap<StateId, f64> = BTreeMap::new();
            if pit {
                mass.insert(x, 1.0);
            } else {
                for (dir, p) in [(d, m.p_intent), (d.left(), m.p_drift_left), (d.right(), m.p_drift_right)] {
                    if p > 0.0 {
                        *mass.entry(target(cell, dir).unwrap_or(x)).or_insert(0.0) += p;
                    }
                }
                if m.p_stay > 0.0 {
                    *mass.entry(x).or_insert(0.0) += m.p_stay;
                }
            }
            let total: f64 = mass.values().sum();
            let succ = mass.into_iter().map(|(y, p)| (y, p / total)).collect();
            row.push(Choice::new(d as usize, g.costs[d as usize], succ));
        }
        choices.push(row);
    }
    let initial = index[g.initial.0][g.initial.1].expect("initial cell is free");
    let actions = Dir::ALL.iter().map(|d| d.name().to_string()).collect();
    let mut model = LabeledMdp::new(ap, actions, labels, initial, choices)?;
    model.coords = Some(cells.iter().map(|&(r, c)| (r as i64, c as i64)).collect());
    Ok(model)
}

pub fn grid_to_mdp(g: &GridSpec) -> Result<LabeledMdp> {
    build(g, |_, _| true)
}

/// Moves climbing more than `delta_up_max` are infeasible; descents always
/// succeed, so deep regions can be one-way.
pub fn terrain_to_mdp(t: &TerrainSpec) -> Result<LabeledMdp> {
    t.check()?;
    build(&t.grid, |(r, c), (nr, nc)| t.depth[r][c] - t.depth[nr][nc] <= t.delta_up_max + 1e-12)
}

/// Value grid as CSV, one line per map row; blocked cells are empty.
pub fn value_grid_csv(m: &LabeledMdp, values: &[f64]) -> Result<String> {
    let coords = m.coords.as_ref().ok_or_else(|| Error::InvalidConfig("model has no coordinates".into()))?;
    let h = coords.iter().map(|c| c.0).max().unwrap_or(-1) + 1;
    let w = coords.iter().map(|c| c.1).max().unwrap_or(-1) + 1;
    let mut grid = vec![vec![String::new(); w.max(0) as usize]; h.max(0) as usize];
    for (x, &(r, c)) in coords.iter().enumerate() {
        if r >= 0 && c >= 0 {
            grid[r as usize][c as usize] = format!("{:.6}", values[x]);
        }
    }
    Ok(grid.into_iter().map(|r| r.join(",") + "\n").collect())
}

/// Value list as CSV with coordinates.
pub fn value_list_csv(m: &LabeledMdp, values: &[f64]) -> String {
    let mut s = String::from("x,row,col,label,value\n");
    for (x, v) in values.iter().enumerate() {
        let (r, c) = m.coords.as_ref().map_or((-1, -1), |cs| cs[x]);
        let _ = writeln!(s, "{},{},{},{},{:.6}", x, r, c, m.labels[x].display(&m.ap), v);
    }
    s
}

/// Bundled maps.
pub mod corpus {
    pub const OFFICE: &str = include_str!("../corpus/office.map");
    pub const SWEEP: &str = include_str!("../corpus/sweep.map");
    pub const HARDWARE: &str = include_str!("../corpus/hardware.map");
    pub const TERRAIN: &str = include_str!("../corpus/terrain.map");
    pub const SCALING: &str = include_str!("../corpus/scaling.map");

    /// `(name, text, is_terrain)` of every bundled map.
    pub const ALL: [(&str, &str, bool); 5] = [
        ("office", OFFICE, false),
        ("sweep", SWEEP, false),
        ("hardware", HARDWARE, false),
        ("terrain", TERRAIN, true),
        ("scaling", SCALING, false),
    ];
}
