//! Per-thread, mean and total statistics tables.
//!
//! Values are kept as exact tick sums with a divisor, so means never pass
//! through floating point. Formatting rounds half away from zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::{ProfError, ProfileSet};
use crate::profiler::format::ProfileData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scope {
    #[default]
    PerThread,
    Mean,
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SortKey {
    #[default]
    Excl,
    Incl,
    Calls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Units {
    S,
    Ms,
    #[default]
    Us,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Table,
    Csv,
}

macro_rules! from_str_table {
    ($ty:ty, $what:literal, $($s:literal => $v:expr),+) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(format!(concat!("unknown ", $what, " {:?} (expected {})"), other, [$($s),+].join("|"))),
                }
            }
        }
    };
}

from_str_table!(Scope, "scope", "per-thread" => Scope::PerThread, "mean" => Scope::Mean, "total" => Scope::Total);
from_str_table!(SortKey, "sort key", "excl" => SortKey::Excl, "incl" => SortKey::Incl, "calls" => SortKey::Calls);
from_str_table!(Units, "units", "s" => Units::S, "ms" => Units::Ms, "us" => Units::Us);
from_str_table!(Format, "format", "table" => Format::Table, "csv" => Format::Csv);

impl Units {
    fn ticks_per_unit(self) -> i128 {
        match self {
            Units::S => 1_000_000,
            Units::Ms => 1_000,
            Units::Us => 1,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Units::S => "s",
            Units::Ms => "ms",
            Units::Us => "us",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReportOptions {
    pub scope: Scope,
    pub sort: SortKey,
    pub units: Units,
    pub format: Format,
}

/// One function's sums over the identities of a table. The displayed value
/// is `sum / table.divisor`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggRow {
    pub name: String,
    pub calls: i128,
    pub subrs: i128,
    pub excl: i128,
    pub incl: i128,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub label: String,
    pub divisor: i128,
    pub rows: Vec<AggRow>,
}

fn sums(datas: &[&ProfileData]) -> Vec<AggRow> {
    let mut acc: BTreeMap<&str, AggRow> = BTreeMap::new();
    for d in datas {
        for f in &d.functions {
            let row = acc.entry(&f.name).or_insert_with(|| AggRow {
                name: f.name.clone(),
                calls: 0,
                subrs: 0,
                excl: 0,
                incl: 0,
            });
            row.calls += f.calls as i128;
            row.subrs += f.subrs as i128;
            row.excl += f.excl_us as i128;
            row.incl += f.incl_us as i128;
        }
    }
    acc.into_values().collect()
}

fn sort_rows(rows: &mut [AggRow], key: SortKey) {
    let k = |r: &AggRow| match key {
        SortKey::Excl => r.excl,
        SortKey::Incl => r.incl,
        SortKey::Calls => r.calls,
    };
    rows.sort_by(|a, b| k(b).cmp(&k(a)).then_with(|| a.name.cmp(&b.name)));
}

/// Builds the tables for `scope`. Per-thread yields one table per identity;
/// mean and total yield one table whose rows cover every function name,
/// with functions absent from an identity counting as zero.
pub fn aggregate(set: &ProfileSet, scope: Scope, sort: SortKey) -> Result<Vec<Table>, ProfError> {
    if set.is_empty() {
        return Err(ProfError::Report(format!("no profile files in {}", set.dir.display())));
    }
    let mut tables = match scope {
        Scope::PerThread => set
            .entries
            .iter()
            .map(|(id, d)| Table {
                label: id.to_string(),
                divisor: 1,
                rows: sums(&[d]),
            })
            .collect(),
        Scope::Mean | Scope::Total => {
            let all: Vec<&ProfileData> = set.entries.values().collect();
            vec![Table {
                label: if scope == Scope::Mean { "mean" } else { "total" }.to_string(),
                divisor: if scope == Scope::Mean { all.len() as i128 } else { 1 },
                rows: sums(&all),
            }]
        }
    };
    for t in &mut tables {
        sort_rows(&mut t.rows, sort);
    }
    Ok(tables)
}

/// `num / den` rounded half away from zero to `places` decimals.
pub fn format_ratio(num: i128, den: i128, places: u32) -> String {
    assert!(den > 0, "divisor must be positive");
    let scale = 10i128.pow(places);
    let neg = num < 0;
    let n = num.abs() * scale;
    let mut q = n / den;
    if (n % den) * 2 >= den {
        q += 1;
    }
    let mut s = String::new();
    if neg && q != 0 {
        s.push('-');
    }
    if places == 0 {
        write!(s, "{q}").unwrap();
    } else {
        write!(s, "{}.{:0width$}", q / scale, q % scale, width = places as usize).unwrap();
    }
    s
}

/// Counts print as integers when exact, otherwise with 3 decimals.
fn format_count(sum: i128, divisor: i128) -> String {
    if sum % divisor == 0 {
        (sum / divisor).to_string()
    } else {
        format_ratio(sum, divisor, 3)
    }
}

pub fn format_time(ticks: i128, divisor: i128, units: Units) -> String {
    match units {
        Units::Us => format_count(ticks, divisor),
        u => format_ratio(ticks, divisor * u.ticks_per_unit(), 3),
    }
}

fn row_cells(t: &Table, r: &AggRow, units: Units) -> [String; 4] {
    [
        format_time(r.excl, t.divisor, units),
        format_time(r.incl, t.divisor, units),
        format_count(r.calls, t.divisor),
        format_count(r.subrs, t.divisor),
    ]
}

fn render_table(out: &mut String, t: &Table, units: Units) {
    let u = units.suffix();
    let header = [
        format!("excl({u})"),
        format!("incl({u})"),
        "calls".into(),
        "subrs".into(),
    ];
    let cells: Vec<[String; 4]> = t.rows.iter().map(|r| row_cells(t, r, units)).collect();
    let mut widths = header.clone().map(|h| h.len());
    for c in &cells {
        for (w, v) in widths.iter_mut().zip(c) {
            *w = (*w).max(v.len());
        }
    }
    let line = |out: &mut String, cols: &[String; 4], name: &str| {
        for (w, v) in widths.iter().zip(cols) {
            write!(out, "{v:>w$}  ").unwrap();
        }
        writeln!(out, "{name}").unwrap();
    };
    line(out, &header, "name");
    for (r, c) in t.rows.iter().zip(&cells) {
        line(out, c, &r.name);
    }
}

/// Renders tables as aligned text (columns separated by at least two
/// spaces, function name last) or CSV.
pub fn render(tables: &[Table], opts: &ReportOptions) -> String {
    match opts.format {
        Format::Table => {
            let mut out = String::new();
            for (i, t) in tables.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                match opts.scope {
                    Scope::PerThread => writeln!(out, "profile {}", t.label).unwrap(),
                    _ => writeln!(out, "{} over {} profiles", t.label, t.divisor.max(1)).unwrap(),
                }
                render_table(&mut out, t, opts.units);
            }
            out
        }
        Format::Csv => {
            let u = opts.units.suffix();
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "scope",
                "name",
                &format!("excl_{u}"),
                &format!("incl_{u}"),
                "calls",
                "subrs",
            ])
            .unwrap();
            for t in tables {
                for r in &t.rows {
                    let [excl, incl, calls, subrs] = row_cells(t, r, opts.units);
                    w.write_record([t.label.as_str(), &r.name, &excl, &incl, &calls, &subrs])
                        .unwrap();
                }
            }
            String::from_utf8(w.into_inner().unwrap()).unwrap()
        }
    }
}

impl Table {
    pub fn row(&self, name: &str) -> Option<&AggRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Mean or per-thread value compared exactly: `sum / divisor == num / den`.
    pub fn value_eq(&self, sum: i128, num: i128, den: i128) -> bool {
        sum * den == num * self.divisor
    }
}
