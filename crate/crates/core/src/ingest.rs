//! Shot-level CSV ingestion, per-hole aggregation and cohort filtering.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Category, Error, Result};

/// One recorded shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub golfer_season_id: String,
    pub tournament_id: String,
    pub round: u32,
    pub hole: u8,
    pub category: Category,
    pub strokes_gained: f64,
}

impl ShotRecord {
    pub fn hole_key(&self) -> HoleKey {
        HoleKey {
            tournament_id: self.tournament_id.clone(),
            round: self.round,
            hole: self.hole,
        }
    }
}

/// Identifies one hole played: tournament, round and hole number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HoleKey {
    pub tournament_id: String,
    pub round: u32,
    pub hole: u8,
}

/// Strokes under expected for one golfer-season, category and hole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleOutcome {
    pub golfer_season_id: String,
    pub category: Category,
    pub hole_key: HoleKey,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub min_holes: usize,
}

impl CohortConfig {
    pub const DEFAULT_MIN_HOLES: usize = 150;

    pub fn new(min_holes: usize) -> Result<Self> {
        if min_holes == 0 {
            return Err(Error::InvalidConfig("min_holes must be at least 1".into()));
        }
        Ok(Self { min_holes })
    }
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            min_holes: Self::DEFAULT_MIN_HOLES,
        }
    }
}

/// Maps the logical shot fields onto CSV header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub golfer_season: String,
    pub tournament: String,
    pub round: String,
    pub hole: String,
    pub category: String,
    pub strokes_gained: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            golfer_season: "golfer_season".into(),
            tournament: "tournament".into(),
            round: "round".into(),
            hole: "hole".into(),
            category: "category".into(),
            strokes_gained: "strokes_gained".into(),
        }
    }
}

impl ColumnMapping {
    const FIELDS: [&'static str; 6] = [
        "golfer_season",
        "tournament",
        "round",
        "hole",
        "category",
        "strokes_gained",
    ];

    fn columns(&self) -> [(&'static str, &str); 6] {
        [
            ("golfer_season", &self.golfer_season),
            ("tournament", &self.tournament),
            ("round", &self.round),
            ("hole", &self.hole),
            ("category", &self.category),
            ("strokes_gained", &self.strokes_gained),
        ]
    }

    fn slot(&mut self, field: &str) -> Option<&mut String> {
        Some(match field {
            "golfer_season" => &mut self.golfer_season,
            "tournament" => &mut self.tournament,
            "round" => &mut self.round,
            "hole" => &mut self.hole,
            "category" => &mut self.category,
            "strokes_gained" => &mut self.strokes_gained,
            _ => return None,
        })
    }
}

impl FromStr for ColumnMapping {
    type Err = Error;

    /// Parses `field=column` pairs separated by commas, e.g.
    /// `golfer_season=player_year,strokes_gained=sg`. Unlisted fields keep
    /// their default column names.
    fn from_str(s: &str) -> Result<Self> {
        let mut mapping = ColumnMapping::default();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (field, column) = pair
                .split_once('=')
                .ok_or_else(|| Error::InvalidMapping(format!("`{pair}` is not field=column")))?;
            let (field, column) = (field.trim(), column.trim());
            if column.is_empty() {
                return Err(Error::InvalidMapping(format!("empty column name for `{field}`")));
            }
            let slot = mapping.slot(field).ok_or_else(|| {
                Error::InvalidMapping(format!(
                    "unknown field `{field}` (expected one of {})",
                    ColumnMapping::FIELDS.join(", ")
                ))
            })?;
            *slot = column.to_string();
        }
        Ok(mapping)
    }
}

/// A rejected data row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedShots {
    pub records: Vec<ShotRecord>,
    pub errors: Vec<RowError>,
}

impl ParsedShots {
    /// Fails on the first row error, if any.
    pub fn into_strict(self) -> Result<Vec<ShotRecord>> {
        match self.errors.into_iter().next() {
            Some(e) => Err(Error::Row {
                line: e.line,
                message: e.message,
            }),
            None => Ok(self.records),
        }
    }
}

/// Reads shot records from a headed CSV stream.
///
/// Malformed rows are collected in [`ParsedShots::errors`] with their
/// 1-based line number (the header is line 1); well-formed rows are
/// returned in input order. A header without one of the mapped columns is
/// a hard error.
pub fn parse_shots<R: io::Read>(reader: R, mapping: &ColumnMapping) -> Result<ParsedShots> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 6];
    for (slot, (field, column)) in idx.iter_mut().zip(mapping.columns()) {
        *slot = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| Error::MissingColumn {
                field,
                column: column.to_string(),
            })?;
    }

    let mut out = ParsedShots::default();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line());
                match parse_row(&record, &idx) {
                    Ok(shot) => out.records.push(shot),
                    Err(message) => out.errors.push(RowError { line, message }),
                }
            }
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

fn parse_row(record: &csv::StringRecord, idx: &[usize; 6]) -> std::result::Result<ShotRecord, String> {
    let get = |i: usize| {
        record
            .get(idx[i])
            .ok_or_else(|| format!("missing value for `{}`", ColumnMapping::FIELDS[i]))
    };
    let golfer = get(0)?;
    if golfer.is_empty() {
        return Err("empty golfer_season".into());
    }
    let tournament = get(1)?;
    let round: u32 = get(2)?
        .parse()
        .map_err(|_| format!("round `{}` is not a positive integer", get(2).unwrap_or("")))?;
    if round == 0 {
        return Err("round must be at least 1".into());
    }
    let hole_raw = get(3)?;
    let hole: u8 = hole_raw
        .parse()
        .ok()
        .filter(|h| (1..=18).contains(h))
        .ok_or_else(|| format!("hole `{hole_raw}` is not in 1..=18"))?;
    let category: Category = get(4)?
        .parse()
        .map_err(|e: crate::category::UnknownCategory| e.to_string())?;
    let sg_raw = get(5)?;
    let strokes_gained: f64 = sg_raw
        .parse()
        .map_err(|_| format!("strokes_gained `{sg_raw}` is not a number"))?;
    if !strokes_gained.is_finite() {
        return Err(format!("strokes_gained `{sg_raw}` is not finite"));
    }
    Ok(ShotRecord {
        golfer_season_id: golfer.to_string(),
        tournament_id: tournament.to_string(),
        round,
        hole,
        category,
        strokes_gained,
    })
}

/// Writes shots with the default column names.
pub fn write_shots_csv<W: io::Write>(writer: W, shots: &[ShotRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ColumnMapping::FIELDS)?;
    for s in shots {
        w.write_record([
            s.golfer_season_id.as_str(),
            s.tournament_id.as_str(),
            &s.round.to_string(),
            &s.hole.to_string(),
            s.category.as_str(),
            &s.strokes_gained.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sums strokes gained per (golfer-season, category, hole).
///
/// Every category uses the sum rule; a hole with several recorded drives
/// (re-tee after a penalty) contributes their total. Output is sorted by
/// golfer, category and hole, and values within a hole are summed in sorted
/// order so the result does not depend on input order.
pub fn aggregate_holes(shots: &[ShotRecord]) -> Vec<HoleOutcome> {
    let mut groups: BTreeMap<(&str, Category, HoleKey), Vec<f64>> = BTreeMap::new();
    for s in shots {
        groups
            .entry((s.golfer_season_id.as_str(), s.category, s.hole_key()))
            .or_default()
            .push(s.strokes_gained);
    }
    groups
        .into_iter()
        .map(|((golfer, category, hole_key), mut values)| {
            values.sort_by(f64::total_cmp);
            HoleOutcome {
                golfer_season_id: golfer.to_string(),
                category,
                hole_key,
                x: values.iter().sum(),
            }
        })
        .collect()
}

/// Distinct holes played per golfer-season, across all categories.
pub fn holes_played(outcomes: &[HoleOutcome]) -> BTreeMap<String, usize> {
    let mut holes: HashMap<&str, HashSet<&HoleKey>> = HashMap::new();
    for o in outcomes {
        holes
            .entry(o.golfer_season_id.as_str())
            .or_default()
            .insert(&o.hole_key);
    }
    holes.into_iter().map(|(g, set)| (g.to_string(), set.len())).collect()
}

/// Keeps golfer-seasons with at least `cfg.min_holes` distinct holes.
pub fn filter_cohort(outcomes: &[HoleOutcome], cfg: &CohortConfig) -> Vec<HoleOutcome> {
    let played = holes_played(outcomes);
    outcomes
        .iter()
        .filter(|o| played[&o.golfer_season_id] >= cfg.min_holes)
        .cloned()
        .collect()
}

/// How many holes had exactly `shots` shots of a category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotCount {
    pub category: Category,
    pub shots: usize,
    pub holes: usize,
}

pub fn shots_per_hole(shots: &[ShotRecord]) -> Vec<ShotCount> {
    let mut per_hole: HashMap<(&str, Category, HoleKey), usize> = HashMap::new();
    for s in shots {
        *per_hole
            .entry((s.golfer_season_id.as_str(), s.category, s.hole_key()))
            .or_default() += 1;
    }
    let mut freq: BTreeMap<(Category, usize), usize> = BTreeMap::new();
    for ((_, category, _), n) in per_hole {
        *freq.entry((category, n)).or_default() += 1;
    }
    freq.into_iter()
        .map(|((category, shots), holes)| ShotCount { category, shots, holes })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct OutcomeRow {
    golfer_season: String,
    category: Category,
    tournament: String,
    round: u32,
    hole: u8,
    x: f64,
}

/// Writes `golfer_season,category,tournament,round,hole,x`.
pub fn write_outcomes_csv<W: io::Write>(writer: W, outcomes: &[HoleOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for o in outcomes {
        w.serialize(OutcomeRow {
            golfer_season: o.golfer_season_id.clone(),
            category: o.category,
            tournament: o.hole_key.tournament_id.clone(),
            round: o.hole_key.round,
            hole: o.hole_key.hole,
            x: o.x,
        })?;
    }
    if outcomes.is_empty() {
        w.write_record(["golfer_season", "category", "tournament", "round", "hole", "x"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_outcomes_csv<R: io::Read>(reader: R) -> Result<Vec<HoleOutcome>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize::<OutcomeRow>()
        .map(|row| {
            let row = row?;
            Ok(HoleOutcome {
                golfer_season_id: row.golfer_season,
                category: row.category,
                hole_key: HoleKey {
                    tournament_id: row.tournament,
                    round: row.round,
                    hole: row.hole,
                },
                x: row.x,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "golfer_season,tournament,round,hole,category,strokes_gained\n";

    fn shot(golfer: &str, hole: u8, category: Category, sg: f64) -> ShotRecord {
        ShotRecord {
            golfer_season_id: golfer.into(),
            tournament_id: "t1".into(),
            round: 1,
            hole,
            category,
            strokes_gained: sg,
        }
    }

    fn outcomes_for(golfer: &str, holes: usize) -> Vec<HoleOutcome> {
        (0..holes)
            .map(|j| HoleOutcome {
                golfer_season_id: golfer.into(),
                category: Category::Putting,
                hole_key: HoleKey {
                    tournament_id: format!("t{}", j / 72),
                    round: (j % 72 / 18 + 1) as u32,
                    hole: (j % 18 + 1) as u8,
                },
                x: 0.0,
            })
            .collect()
    }

    #[test]
    fn parses_single_valid_row() {
        let csv = format!("{HEADER}a-2015,t1,1,7,drive,-0.05\n");
        let parsed = parse_shots(csv.as_bytes(), &ColumnMapping::default()).unwrap();
        assert!(parsed.errors.is_empty());
        assert_eq!(parsed.records, vec![shot("a-2015", 7, Category::Driving, -0.05)]);
    }

    #[test]
    fn unknown_category_is_a_row_error_on_line_2() {
        let csv = format!("{HEADER}a,t1,1,7,chipping,0.1\n");
        let parsed = parse_shots(csv.as_bytes(), &ColumnMapping::default()).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].line, 2);
        assert!(parsed.errors[0].message.contains("chipping"));
        assert!(matches!(parsed.into_strict(), Err(Error::Row { line: 2, .. })));
    }

    #[test]
    fn header_only_is_empty() {
        let parsed = parse_shots(HEADER.as_bytes(), &ColumnMapping::default()).unwrap();
        assert_eq!(parsed, ParsedShots::default());
    }

    #[test]
    fn bad_rows_are_collected_not_dropped() {
        let csv = format!(
            "{HEADER}a,t1,1,1,putt,0.1\na,t1,1,2,putt,abc\na,t1,1,19,putt,0.1\na,t1,1,3,putt,NaN\na,t1,1\na,t1,1,4,putt,0.2\n"
        );
        let parsed = parse_shots(csv.as_bytes(), &ColumnMapping::default()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        let lines: Vec<u64> = parsed.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![3, 4, 5, 6]);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "golfer_season,tournament,round,hole,category\n";
        let err = parse_shots(csv.as_bytes(), &ColumnMapping::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::MissingColumn {
                field: "strokes_gained",
                ..
            }
        ));
    }

    #[test]
    fn custom_mapping() {
        let mapping: ColumnMapping = "golfer_season=player, strokes_gained=sg".parse().unwrap();
        let csv = "player,tournament,round,hole,category,sg\nx,t,2,18,Putting,1.5\n";
        let parsed = parse_shots(csv.as_bytes(), &mapping).unwrap();
        assert_eq!(parsed.records[0].golfer_season_id, "x");
        assert_eq!(parsed.records[0].strokes_gained, 1.5);
        assert!("bogus=col".parse::<ColumnMapping>().is_err());
        assert!("hole".parse::<ColumnMapping>().is_err());
    }

    #[test]
    fn putts_on_one_hole_are_summed() {
        let out = aggregate_holes(&[
            shot("a", 1, Category::Putting, 0.3),
            shot("a", 1, Category::Putting, -0.1),
        ]);
        assert_eq!(out.len(), 1);
        assert!((out[0].x - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_drive_and_missing_category() {
        let out = aggregate_holes(&[
            shot("a", 7, Category::Driving, -0.05),
            shot("a", 7, Category::Putting, 0.1),
        ]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].category, Category::Driving);
        assert_eq!(out[0].x, -0.05);
        assert!(out.iter().all(|o| o.category != Category::Approaching));
    }

    #[test]
    fn repeated_drives_are_summed() {
        let out = aggregate_holes(&[
            shot("a", 3, Category::Driving, -1.2),
            shot("a", 3, Category::Driving, 0.2),
        ]);
        assert_eq!(out.len(), 1);
        assert!((out[0].x + 1.0).abs() < 1e-15);
    }

    #[test]
    fn filter_boundary_is_inclusive() {
        let mut outcomes = outcomes_for("short", 149);
        outcomes.extend(outcomes_for("exact", 150));
        let kept = filter_cohort(&outcomes, &CohortConfig::default());
        assert_eq!(kept.len(), 150);
        assert!(kept.iter().all(|o| o.golfer_season_id == "exact"));
        assert!(filter_cohort(&[], &CohortConfig::default()).is_empty());
        assert!(CohortConfig::new(0).is_err());
    }

    #[test]
    fn filter_counts_holes_across_categories() {
        // 100 putting holes plus 60 other driving-only holes = 160 distinct.
        let mut outcomes = outcomes_for("g", 100);
        let mut drives = outcomes_for("g", 160);
        drives.drain(..100);
        for d in &mut drives {
            d.category = Category::Driving;
        }
        outcomes.extend(drives);
        assert_eq!(filter_cohort(&outcomes, &CohortConfig::default()).len(), 160);
    }

    #[test]
    fn shot_counts() {
        let counts = shots_per_hole(&[
            shot("a", 1, Category::Putting, 0.0),
            shot("a", 1, Category::Putting, 0.0),
            shot("a", 2, Category::Putting, 0.0),
            shot("a", 2, Category::Driving, 0.0),
        ]);
        assert_eq!(
            counts,
            vec![
                ShotCount {
                    category: Category::Driving,
                    shots: 1,
                    holes: 1
                },
                ShotCount {
                    category: Category::Putting,
                    shots: 1,
                    holes: 1
                },
                ShotCount {
                    category: Category::Putting,
                    shots: 2,
                    holes: 1
                },
            ]
        );
    }

    #[test]
    fn outcomes_csv_round_trip() {
        let out = aggregate_holes(&[
            shot("a", 1, Category::Putting, 0.1),
            shot("b", 2, Category::Approaching, -0.7),
        ]);
        let mut buf = Vec::new();
        write_outcomes_csv(&mut buf, &out).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("golfer_season,category,tournament,round,hole,x\n"));
        assert_eq!(read_outcomes_csv(buf.as_slice()).unwrap(), out);
    }
}
