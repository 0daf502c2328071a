//! Built-in fixture models and the plain-text fixture format.
//!
//! ```text
//! # comment lines carry provenance
//! states 3
//! horizon 10
//! homogeneous true
//! initial
//! 0.5 0.3 0.2
//! potential            (inhomogeneous files write `potential <epoch>`)
//! 1.0 0.6 0.3
//! transition           (or `transition <epoch>`, followed by d rows)
//! 0.6 0.3 0.1
//! ...
//! values               (optional numeric state labels)
//! reversing            (optional reversing measure)
//! pinned <name> <v1> [v2 ...]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::FiniteStateModel;
use crate::error::{Error, Result};

const BASE_TRANSITION: [f64; 9] = [0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.25, 0.25, 0.5];
const ALT_TRANSITION: [f64; 9] = [0.3, 0.3, 0.4, 0.45, 0.35, 0.2, 0.1, 0.6, 0.3];
const BASE_POTENTIAL: [f64; 3] = [1.0, 0.6, 0.3];

/// Time-homogeneous 3-state model with strictly positive transitions, horizon 10.
pub fn three_state() -> FiniteStateModel {
    FiniteStateModel::homogeneous(
        DVector::from_vec(vec![0.5, 0.3, 0.2]),
        DMatrix::from_row_slice(3, 3, &BASE_TRANSITION),
        DVector::from_row_slice(&BASE_POTENTIAL),
        10,
    )
    .expect("built-in fixture is valid")
}

/// 3-state model with alternating transitions and rotating potentials, horizon 10.
pub fn three_state_inhomogeneous() -> FiniteStateModel {
    let horizon = 10;
    let transitions = (1..=horizon)
        .map(|n| {
            let rows = if n % 2 == 1 {
                &BASE_TRANSITION
            } else {
                &ALT_TRANSITION
            };
            DMatrix::from_row_slice(3, 3, rows)
        })
        .collect();
    let potentials = (0..=horizon)
        .map(|n| DVector::from_fn(3, |x, _| BASE_POTENTIAL[(x + n) % 3]))
        .collect();
    FiniteStateModel::inhomogeneous(
        DVector::from_vec(vec![0.5, 0.3, 0.2]),
        transitions,
        potentials,
    )
    .expect("built-in fixture is valid")
}

/// Two states, `M` reversible with respect to `(0.4, 0.6)`, `G = (1, 0.7)`, horizon 200.
pub fn two_state_reversible() -> FiniteStateModel {
    FiniteStateModel::homogeneous(
        DVector::from_vec(vec![0.5, 0.5]),
        DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8]),
        DVector::from_vec(vec![1.0, 0.7]),
        200,
    )
    .and_then(|m| m.with_reversing_measure(DVector::from_vec(vec![0.4, 0.6])))
    .expect("built-in fixture is valid")
}

/// `M(x, dy) = eta_0(dy)`, `G = 1`, `eta_0` uniform on the values `{-1, +1}`.
pub fn iid_toy(horizon: usize) -> FiniteStateModel {
    FiniteStateModel::iid_toy(vec![-1.0, 1.0], vec![0.5, 0.5], horizon)
        .expect("built-in fixture is valid")
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 4] = [
    "three-state",
    "three-state-inhomogeneous",
    "two-state-reversible",
    "iid-toy",
];

pub fn builtin(name: &str) -> Option<FiniteStateModel> {
    match name {
        "three-state" => Some(three_state()),
        "three-state-inhomogeneous" => Some(three_state_inhomogeneous()),
        "two-state-reversible" => Some(two_state_reversible()),
        "iid-toy" => Some(iid_toy(10)),
        _ => None,
    }
}

/// A parsed fixture file: the model and its pinned regression values.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub model: FiniteStateModel,
    pub pinned: BTreeMap<String, Vec<f64>>,
}

impl Fixture {
    pub fn pinned(&self, name: &str) -> Option<&[f64]> {
        self.pinned.get(name).map(Vec::as_slice)
    }
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, raw) in self.inner.by_ref() {
            let line = raw.trim();
            if !line.is_empty() && !line.starts_with('#') {
                return Some((i + 1, line));
            }
        }
        None
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::FixtureParse {
        line,
        message: message.into(),
    }
}

fn parse_numbers(line: usize, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| parse_err(line, format!("not a number: {t}")))
        })
        .collect()
}

fn read_row(lines: &mut Lines<'_>, d: usize, what: &str) -> Result<Vec<f64>> {
    let (line, text) = lines
        .next_content()
        .ok_or_else(|| parse_err(0, format!("unexpected end of file in {what}")))?;
    let row = parse_numbers(line, text)?;
    if row.len() != d {
        return Err(parse_err(
            line,
            format!("{what} row has {} entries, expected {d}", row.len()),
        ));
    }
    Ok(row)
}

fn epoch_arg(line: usize, arg: Option<&str>, homogeneous: bool) -> Result<usize> {
    match (arg, homogeneous) {
        (None, true) => Ok(0),
        (Some(a), false) => a
            .parse()
            .map_err(|_| parse_err(line, format!("bad epoch {a}"))),
        (None, false) => Err(parse_err(line, "inhomogeneous fixtures need an epoch")),
        (Some(_), true) => Err(parse_err(line, "homogeneous fixtures take no epoch")),
    }
}

pub fn parse_fixture(text: &str) -> Result<Fixture> {
    let mut lines = Lines {
        inner: text.lines().enumerate().peekable(),
    };
    let mut header = |key: &str| -> Result<(usize, String)> {
        let (line, content) = lines
            .next_content()
            .ok_or_else(|| parse_err(0, format!("missing `{key}`")))?;
        match content.split_once(char::is_whitespace) {
            Some((k, v)) if k == key => Ok((line, v.trim().to_string())),
            _ => Err(parse_err(line, format!("expected `{key} <value>`"))),
        }
    };
    let (l, d) = header("states")?;
    let d: usize = d.parse().map_err(|_| parse_err(l, "bad state count"))?;
    let (l, horizon) = header("horizon")?;
    let horizon: usize = horizon.parse().map_err(|_| parse_err(l, "bad horizon"))?;
    let (l, hom) = header("homogeneous")?;
    let homogeneous: bool = hom
        .parse()
        .map_err(|_| parse_err(l, "expected true or false"))?;

    let mut initial = None;
    let mut values = None;
    let mut reversing = None;
    let mut potentials: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    let mut transitions: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    let mut pinned = BTreeMap::new();
    while let Some((line, content)) = lines.next_content() {
        let mut words = content.split_whitespace();
        let key = words.next().unwrap_or_default();
        match key {
            "initial" => initial = Some(DVector::from_vec(read_row(&mut lines, d, "initial")?)),
            "values" => values = Some(read_row(&mut lines, d, "values")?),
            "reversing" => {
                reversing = Some(DVector::from_vec(read_row(&mut lines, d, "reversing")?))
            }
            "potential" => {
                let n = epoch_arg(line, words.next(), homogeneous)?;
                potentials.insert(n, DVector::from_vec(read_row(&mut lines, d, "potential")?));
            }
            "transition" => {
                let n = epoch_arg(line, words.next(), homogeneous)?;
                let mut rows = Vec::with_capacity(d * d);
                for _ in 0..d {
                    rows.extend(read_row(&mut lines, d, "transition")?);
                }
                transitions.insert(n, DMatrix::from_row_slice(d, d, &rows));
            }
            "pinned" => {
                let name = words
                    .next()
                    .ok_or_else(|| parse_err(line, "pinned value needs a name"))?;
                let rest: Vec<&str> = words.collect();
                pinned.insert(name.to_string(), parse_numbers(line, &rest.join(" "))?);
            }
            other => return Err(parse_err(line, format!("unknown section `{other}`"))),
        }
    }
    let initial = initial.ok_or_else(|| parse_err(0, "missing `initial` block"))?;
    let mut model = if homogeneous {
        let m = transitions
            .remove(&0)
            .ok_or_else(|| parse_err(0, "missing `transition` block"))?;
        let g = potentials
            .remove(&0)
            .ok_or_else(|| parse_err(0, "missing `potential` block"))?;
        FiniteStateModel::homogeneous(initial, m, g, horizon)?
    } else {
        let ms = (1..=horizon)
            .map(|n| {
                transitions
                    .remove(&n)
                    .ok_or_else(|| parse_err(0, format!("missing transition {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let gs = (0..=horizon)
            .map(|n| {
                potentials
                    .remove(&n)
                    .ok_or_else(|| parse_err(0, format!("missing potential {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        FiniteStateModel::inhomogeneous(initial, ms, gs)?
    };
    if let Some(v) = values {
        model = model.with_values(v)?;
    }
    if let Some(mu) = reversing {
        model = model.with_reversing_measure(mu)?;
    }
    Ok(Fixture { model, pinned })
}

pub fn load_fixture(path: &Path) -> Result<Fixture> {
    parse_fixture(&std::fs::read_to_string(path)?)
}

fn write_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let row: Vec<String> = values.map(|v| format!("{v:?}")).collect();
    let _ = writeln!(out, "{}", row.join(" "));
}

/// Render a model in the fixture format (no pinned values).
pub fn format_fixture(model: &FiniteStateModel) -> String {
    let d = model.dim();
    let h = model.horizon();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "states {d}\nhorizon {h}\nhomogeneous {}",
        model.is_homogeneous()
    );
    out.push_str("initial\n");
    write_row(&mut out, model.initial().iter().cloned());
    out.push_str("values\n");
    write_row(&mut out, model.values().iter().cloned());
    if let Some(mu) = model.reversing_measure() {
        out.push_str("reversing\n");
        write_row(&mut out, mu.iter().cloned());
    }
    let (potential_epochs, transition_epochs) = if model.is_homogeneous() {
        (0..=0, 1..=1)
    } else {
        (0..=h, 1..=h)
    };
    for n in potential_epochs {
        if model.is_homogeneous() {
            out.push_str("potential\n");
        } else {
            let _ = writeln!(out, "potential {n}");
        }
        write_row(&mut out, model.potential_vector(n).iter().cloned());
    }
    for n in transition_epochs {
        if model.is_homogeneous() {
            out.push_str("transition\n");
        } else {
            let _ = writeln!(out, "transition {n}");
        }
        for row in model.transition(n).row_iter() {
            write_row(&mut out, row.iter().cloned());
        }
    }
    out
}
