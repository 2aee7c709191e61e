//! Ingestion of raw incident records: parsing, validation, de-duplication
//! and redistribution of default-dated (January 1) occurrences.
//!
//! Input is delimited text with a header row and three columns (entity key,
//! occurrence date, report date; names configurable). Rows that cannot
//! contribute a delay observation are rejected with a reason code rather
//! than aborting the parse; an empty surviving set is fatal.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dates::days_between;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("no valid event records after parsing ({rejected} rejected)")]
    Empty { rejected: usize },
    #[error("record {entity_id:?} reported {reported_on} before occurrence {occurred_on}")]
    NegativeDelay {
        entity_id: String,
        occurred_on: NaiveDate,
        reported_on: NaiveDate,
    },
}

/// One incident: who it happened to, when it happened, when it became known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub entity_id: String,
    pub occurred_on: NaiveDate,
    pub reported_on: NaiveDate,
}

impl EventRecord {
    /// Reporting delay in whole days; non-negative for any record admitted
    /// into an [`EventSet`].
    pub fn delay_days(&self) -> i64 {
        days_between(self.occurred_on, self.reported_on)
    }
}

/// A validated set of incident records together with the data cutoff
/// (the latest report date present in the set).
#[derive(Debug, Clone)]
pub struct EventSet {
    records: Vec<EventRecord>,
    cutoff: NaiveDate,
}

impl EventSet {
    /// Builds a set from records, validating the non-negative-delay
    /// invariant and computing the cutoff. Records are kept in canonical
    /// order (occurrence, report, entity) so downstream output is stable.
    pub fn new(mut records: Vec<EventRecord>) -> Result<Self, IngestError> {
        if records.is_empty() {
            return Err(IngestError::Empty { rejected: 0 });
        }
        for r in &records {
            if r.reported_on < r.occurred_on {
                return Err(IngestError::NegativeDelay {
                    entity_id: r.entity_id.clone(),
                    occurred_on: r.occurred_on,
                    reported_on: r.reported_on,
                });
            }
        }
        records.sort_by(|a, b| {
            (a.occurred_on, a.reported_on, &a.entity_id).cmp(&(
                b.occurred_on,
                b.reported_on,
                &b.entity_id,
            ))
        });
        let cutoff = records
            .iter()
            .map(|r| r.reported_on)
            .max()
            .expect("non-empty");
        Ok(Self { records, cutoff })
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn cutoff(&self) -> NaiveDate {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Largest observed delay in days over the whole set.
    pub fn max_delay_days(&self) -> i64 {
        self.records
            .iter()
            .map(|r| r.delay_days())
            .max()
            .unwrap_or(0)
    }
}

/// Column names and delimiter for the delimited-text event format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub entity: String,
    pub occurred: String,
    pub reported: String,
    pub delimiter: char,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            entity: "entity_id".to_string(),
            occurred: "occurred_on".to_string(),
            reported: "reported_on".to_string(),
            delimiter: ',',
        }
    }
}

/// Why a row was rejected during parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    MissingEntity,
    MissingOccurrence,
    MissingReported,
    MalformedOccurrence,
    MalformedReported,
    NegativeDelay,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MissingEntity => "missing_entity",
            Self::MissingOccurrence => "missing_occurrence",
            Self::MissingReported => "missing_reported",
            Self::MalformedOccurrence => "malformed_occurrence",
            Self::MalformedReported => "malformed_reported",
            Self::NegativeDelay => "negative_delay",
        }
    }
}

/// A rejected input row: 1-based line number, raw fields, reason.
#[derive(Debug, Clone)]
pub struct Reject {
    pub line: u64,
    pub entity_id: String,
    pub occurred_on: String,
    pub reported_on: String,
    pub reason: RejectReason,
}

#[derive(Debug)]
pub struct ParseOutcome {
    pub events: EventSet,
    pub rejects: Vec<Reject>,
}

/// Parses delimited text into an [`EventSet`], collecting per-row rejects.
///
/// Rows with no occurrence date are dropped and counted; malformed dates and
/// report-before-occurrence rows are rejected with their line number. An
/// empty surviving set is a fatal error.
pub fn parse_events<R: Read>(
    reader: R,
    schema: &ColumnSchema,
) -> Result<ParseOutcome, IngestError> {
    let (records, rejects) = parse_records(reader, schema)?;
    if records.is_empty() {
        return Err(IngestError::Empty {
            rejected: rejects.len(),
        });
    }
    let events = EventSet::new(records)?;
    Ok(ParseOutcome { events, rejects })
}

/// Parsing without set construction. Lets callers merge several input
/// shards into one [`EventSet`] before validating non-emptiness.
pub fn parse_records<R: Read>(
    reader: R,
    schema: &ColumnSchema,
) -> Result<(Vec<EventRecord>, Vec<Reject>), IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let entity_idx = col(&schema.entity)?;
    let occurred_idx = col(&schema.occurred)?;
    let reported_idx = col(&schema.reported)?;

    let mut records = Vec::new();
    let mut rejects = Vec::new();

    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i as u64 + 2; // 1-based, after the header
        let field = |idx: usize| row.get(idx).unwrap_or("").trim().to_string();
        let entity_id = field(entity_idx);
        let occurred_raw = field(occurred_idx);
        let reported_raw = field(reported_idx);

        let mut reject = |reason| {
            rejects.push(Reject {
                line,
                entity_id: entity_id.clone(),
                occurred_on: occurred_raw.clone(),
                reported_on: reported_raw.clone(),
                reason,
            })
        };

        if entity_id.is_empty() {
            reject(RejectReason::MissingEntity);
            continue;
        }
        if occurred_raw.is_empty() {
            reject(RejectReason::MissingOccurrence);
            continue;
        }
        if reported_raw.is_empty() {
            reject(RejectReason::MissingReported);
            continue;
        }
        let occurred_on = match occurred_raw.parse::<NaiveDate>() {
            Ok(d) => d,
            Err(_) => {
                reject(RejectReason::MalformedOccurrence);
                continue;
            }
        };
        let reported_on = match reported_raw.parse::<NaiveDate>() {
            Ok(d) => d,
            Err(_) => {
                reject(RejectReason::MalformedReported);
                continue;
            }
        };
        if reported_on < occurred_on {
            reject(RejectReason::NegativeDelay);
            continue;
        }
        records.push(EventRecord {
            entity_id,
            occurred_on,
            reported_on,
        });
    }

    Ok((records, rejects))
}

/// Writes an [`EventSet`] in the same delimited format `parse_events` reads.
pub fn write_events<W: Write>(
    writer: W,
    events: &EventSet,
    schema: &ColumnSchema,
) -> Result<(), csv::Error> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_writer(writer);
    wtr.write_record([&schema.entity, &schema.occurred, &schema.reported])?;
    for r in events.records() {
        wtr.write_record([
            r.entity_id.as_str(),
            &r.occurred_on.to_string(),
            &r.reported_on.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Collapses same-entity records whose occurrence dates fall within 7 days
/// of the previously kept record. The survivor is the record with the
/// earliest occurrence date, ties broken by earliest report date.
pub fn dedupe(events: EventSet) -> EventSet {
    const WINDOW_DAYS: i64 = 7;

    let mut by_entity: BTreeMap<String, Vec<EventRecord>> = BTreeMap::new();
    for r in events.records.into_iter() {
        by_entity.entry(r.entity_id.clone()).or_default().push(r);
    }

    let mut kept = Vec::new();
    for (_, mut group) in by_entity {
        group.sort_by_key(|r| (r.occurred_on, r.reported_on));
        let mut last_kept: Option<NaiveDate> = None;
        for r in group {
            let keep = match last_kept {
                None => true,
                Some(prev) => days_between(prev, r.occurred_on) > WINDOW_DAYS,
            };
            if keep {
                last_kept = Some(r.occurred_on);
                kept.push(r);
            }
        }
    }
    EventSet::new(kept).expect("dedup keeps at least one record per entity")
}

/// What to do with the January-1 occurrence spikes produced by sources that
/// default the occurrence date when only the year is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefaultDatePolicy {
    /// Move the excess proportionally onto other days of the same year.
    Redistribute,
    /// Drop the excess records entirely.
    Exclude,
    /// Leave the records untouched.
    Keep,
}

/// Redistributes each year's excess of January-1 occurrences onto other days
/// of that year, sampled with probability proportional to each day's existing
/// occurrence count and restricted per record to days on or before its report
/// date. `Exclude` drops the same excess instead of moving it.
///
/// The excess above the year's baseline daily level (median daily count over
/// non-January-1 days) is selected uniformly at random among that year's
/// January-1 records. Report dates are never changed, so delays stay
/// non-negative; with `Redistribute` the total count per year and per entity
/// is preserved.
pub fn adjust_default_dates(events: EventSet, policy: DefaultDatePolicy, seed: u64) -> EventSet {
    if matches!(policy, DefaultDatePolicy::Keep) {
        return events;
    }
    let cutoff = events.cutoff;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = events.records;

    // Daily occurrence counts per year, excluding Jan 1.
    let mut daily: BTreeMap<i32, BTreeMap<NaiveDate, u64>> = BTreeMap::new();
    let mut jan1_indices: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let year = r.occurred_on.year();
        if r.occurred_on.month() == 1 && r.occurred_on.day() == 1 {
            jan1_indices.entry(year).or_default().push(i);
        } else {
            *daily
                .entry(year)
                .or_default()
                .entry(r.occurred_on)
                .or_insert(0) += 1;
        }
    }

    let mut drop_indices = Vec::new();
    for (&year, indices) in &jan1_indices {
        let counts = daily.get(&year).cloned().unwrap_or_default();
        let baseline = median_daily_count(year, &counts, cutoff);
        let keep = (baseline.round() as usize).min(indices.len());
        let excess = indices.len() - keep;
        if excess == 0 {
            continue;
        }

        // Uniformly choose which Jan-1 records stay put.
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut rng);
        let moved = &shuffled[keep..];

        match policy {
            DefaultDatePolicy::Exclude => drop_indices.extend_from_slice(moved),
            DefaultDatePolicy::Redistribute => {
                for &idx in moved {
                    let limit = records[idx].reported_on;
                    if let Some(day) = sample_target_day(year, &counts, limit, cutoff, &mut rng) {
                        records[idx].occurred_on = day;
                    }
                }
            }
            DefaultDatePolicy::Keep => unreachable!(),
        }
    }

    if !drop_indices.is_empty() {
        drop_indices.sort_unstable();
        for &idx in drop_indices.iter().rev() {
            records.swap_remove(idx);
        }
    }
    EventSet::new(records).expect("adjustment keeps records valid")
}

/// Median daily occurrence count over the year's non-January-1 days, counting
/// days with zero events. For the cutoff year only days up to the cutoff are
/// in scope (later days cannot carry occurrences).
fn median_daily_count(year: i32, counts: &BTreeMap<NaiveDate, u64>, cutoff: NaiveDate) -> f64 {
    let jan1 = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid date");
    let year_end = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid date");
    let last = year_end.min(cutoff);
    let n_days = days_between(jan1, last).max(0) as usize; // non-Jan-1 days
    if n_days == 0 {
        return 0.0;
    }
    let mut values: Vec<u64> = counts.values().copied().collect();
    values.resize(n_days, 0); // days without events
    values.sort_unstable();
    if n_days % 2 == 1 {
        values[n_days / 2] as f64
    } else {
        (values[n_days / 2 - 1] + values[n_days / 2]) as f64 / 2.0
    }
}

/// Draws a replacement occurrence day within `year`, no later than `limit`,
/// weighted by existing daily counts; falls back to a uniform draw over the
/// eligible days when no weighted day qualifies. Returns `None` when the
/// record cannot be moved at all (reported on January 1 of its own year).
fn sample_target_day(
    year: i32,
    counts: &BTreeMap<NaiveDate, u64>,
    limit: NaiveDate,
    cutoff: NaiveDate,
    rng: &mut ChaCha8Rng,
) -> Option<NaiveDate> {
    let eligible: Vec<(&NaiveDate, &u64)> = counts.iter().filter(|(d, _)| **d <= limit).collect();
    if !eligible.is_empty() {
        let weights: Vec<u64> = eligible.iter().map(|(_, c)| **c).collect();
        if let Ok(dist) = WeightedIndex::new(&weights) {
            return Some(*eligible[dist.sample(rng)].0);
        }
    }

    // Degenerate year: no weighted days at or before the report date.
    let jan2 = NaiveDate::from_ymd_opt(year, 1, 2).expect("valid date");
    let year_end = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid date");
    let last = year_end.min(limit).min(cutoff);
    if last < jan2 {
        return None;
    }
    let span = days_between(jan2, last) as u64;
    let offset = rng.random_range(0..=span);
    Some(jan2 + chrono::Days::new(offset))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn rec(entity: &str, occurred: NaiveDate, reported: NaiveDate) -> EventRecord {
        EventRecord {
            entity_id: entity.to_string(),
            occurred_on: occurred,
            reported_on: reported,
        }
    }

    #[test]
    fn parse_computes_delays_and_cutoff() {
        let csv = "entity_id,occurred_on,reported_on\n\
                   acme,2014-09-01,2018-11-30\n\
                   beta,2018-01-01,2018-02-01\n";
        let out = parse_events(csv.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(out.events.len(), 2);
        assert!(out.rejects.is_empty());
        assert_eq!(out.events.cutoff(), date(2018, 11, 30));
        let acme = out
            .events
            .records()
            .iter()
            .find(|r| r.entity_id == "acme")
            .unwrap();
        assert_eq!(acme.delay_days(), 1551);
    }

    #[test]
    fn parse_rejects_bad_rows_with_line_numbers() {
        let csv = "entity_id,occurred_on,reported_on\n\
                   a,,2018-02-01\n\
                   x,2018-05-02,2018-05-01\n\
                   b,not-a-date,2018-02-01\n\
                   ok,2018-01-01,2018-01-05\n";
        let out = parse_events(csv.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(out.events.len(), 1);
        let reasons: Vec<(u64, RejectReason)> =
            out.rejects.iter().map(|r| (r.line, r.reason)).collect();
        assert_eq!(
            reasons,
            vec![
                (2, RejectReason::MissingOccurrence),
                (3, RejectReason::NegativeDelay),
                (4, RejectReason::MalformedOccurrence),
            ]
        );
    }

    #[test]
    fn parse_empty_result_is_fatal() {
        let csv = "entity_id,occurred_on,reported_on\na,,2018-02-01\n";
        let err = parse_events(csv.as_bytes(), &ColumnSchema::default()).unwrap_err();
        assert!(matches!(err, IngestError::Empty { rejected: 1 }));
    }

    #[test]
    fn parse_respects_custom_schema() {
        let csv = "who;when;known\nacme;2018-01-01;2018-01-05\n";
        let schema = ColumnSchema {
            entity: "who".into(),
            occurred: "when".into(),
            reported: "known".into(),
            delimiter: ';',
        };
        let out = parse_events(csv.as_bytes(), &schema).unwrap();
        assert_eq!(out.events.len(), 1);
    }

    #[test]
    fn events_roundtrip_through_writer() {
        let events = EventSet::new(vec![
            rec("a", date(2018, 1, 1), date(2018, 3, 1)),
            rec("b", date(2018, 2, 1), date(2018, 4, 1)),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_events(&mut buf, &events, &ColumnSchema::default()).unwrap();
        let back = parse_events(buf.as_slice(), &ColumnSchema::default()).unwrap();
        assert_eq!(back.events.records(), events.records());
    }

    #[test]
    fn dedupe_keeps_earliest_within_week() {
        let events = EventSet::new(vec![
            rec("a", date(2018, 1, 1), date(2018, 3, 1)),
            rec("a", date(2018, 1, 5), date(2018, 4, 1)),
        ])
        .unwrap();
        let deduped = dedupe(events);
        assert_eq!(deduped.len(), 1);
        assert_eq!(deduped.records()[0].occurred_on, date(2018, 1, 1));
        assert_eq!(deduped.records()[0].reported_on, date(2018, 3, 1));
    }

    #[test]
    fn dedupe_keeps_separated_and_distinct_entities() {
        let events = EventSet::new(vec![
            rec("a", date(2018, 1, 1), date(2018, 3, 1)),
            rec("a", date(2018, 3, 1), date(2018, 4, 1)),
            rec("b", date(2018, 1, 1), date(2018, 3, 1)),
        ])
        .unwrap();
        assert_eq!(dedupe(events).len(), 3);
    }

    #[test]
    fn dedupe_is_idempotent() {
        let mut records = Vec::new();
        for day in [1, 3, 9, 10, 20, 28] {
            records.push(rec("a", date(2018, 1, day), date(2018, 6, 1)));
        }
        records.push(rec("b", date(2018, 1, 2), date(2018, 5, 1)));
        let once = dedupe(EventSet::new(records).unwrap());
        let twice = dedupe(once.clone());
        assert_eq!(once.records(), twice.records());
    }

    fn spike_year() -> EventSet {
        // 400 default-dated records plus a 10/day baseline through November.
        let mut records = Vec::new();
        for i in 0..400 {
            records.push(rec(
                &format!("jan1-{i}"),
                date(2018, 1, 1),
                date(2018, 12, 31),
            ));
        }
        for m in 1..=11u32 {
            for d in 1..=28u32 {
                if m == 1 && d == 1 {
                    continue;
                }
                for i in 0..10 {
                    records.push(rec(
                        &format!("base-{m}-{d}-{i}"),
                        date(2018, m, d),
                        date(2018, 12, 31),
                    ));
                }
            }
        }
        EventSet::new(records).unwrap()
    }

    #[test]
    fn redistribution_moves_excess_and_preserves_totals() {
        let events = spike_year();
        let total = events.len();
        let per_entity = |set: &EventSet| -> BTreeMap<String, usize> {
            let mut counts = BTreeMap::new();
            for r in set.records() {
                *counts.entry(r.entity_id.clone()).or_insert(0) += 1;
            }
            counts
        };
        let entities_before = per_entity(&events);
        let adjusted = adjust_default_dates(events, DefaultDatePolicy::Redistribute, 7);
        assert_eq!(adjusted.len(), total);
        assert_eq!(per_entity(&adjusted), entities_before);
        let jan1_left = adjusted
            .records()
            .iter()
            .filter(|r| r.occurred_on == date(2018, 1, 1))
            .count();
        // Baseline is 10/day until December, 0 after; the median over the
        // whole year sits at 10, so roughly 390 of 400 move.
        assert!(jan1_left <= 12, "jan1_left = {jan1_left}");
        for r in adjusted.records() {
            assert!(r.reported_on >= r.occurred_on);
            assert_eq!(r.occurred_on.year(), 2018);
        }
    }

    #[test]
    fn redistribution_is_seed_reproducible() {
        let a = adjust_default_dates(spike_year(), DefaultDatePolicy::Redistribute, 42);
        let b = adjust_default_dates(spike_year(), DefaultDatePolicy::Redistribute, 42);
        let c = adjust_default_dates(spike_year(), DefaultDatePolicy::Redistribute, 43);
        assert_eq!(a.records(), b.records());
        assert_ne!(a.records(), c.records());
    }

    #[test]
    fn redistribution_no_excess_moves_nothing() {
        // Jan-1 count equals the median daily count.
        let mut records = Vec::new();
        for m in 1..=12u32 {
            for d in 1..=28u32 {
                for i in 0..3 {
                    records.push(rec(
                        &format!("e-{m}-{d}-{i}"),
                        date(2018, m, d),
                        date(2018, 12, 31),
                    ));
                }
            }
        }
        let before = EventSet::new(records).unwrap();
        let after = adjust_default_dates(before.clone(), DefaultDatePolicy::Redistribute, 1);
        assert_eq!(before.records(), after.records());
    }

    #[test]
    fn redistribution_respects_report_date() {
        // One Jan-1 record reported Feb 1 among a year of events; if moved it
        // must stay within [Jan 1, Feb 1].
        let mut records = vec![rec("early", date(2018, 1, 1), date(2018, 2, 1))];
        for i in 0..50 {
            records.push(rec(
                &format!("late-{i}"),
                date(2018, 6, 15),
                date(2018, 12, 31),
            ));
        }
        let adjusted = adjust_default_dates(
            EventSet::new(records).unwrap(),
            DefaultDatePolicy::Redistribute,
            11,
        );
        let early = adjusted
            .records()
            .iter()
            .find(|r| r.entity_id == "early")
            .unwrap();
        assert!(early.occurred_on <= date(2018, 2, 1));
        assert!(early.occurred_on >= date(2018, 1, 1));
    }

    #[test]
    fn exclude_policy_drops_excess() {
        let events = spike_year();
        let total = events.len();
        let adjusted = adjust_default_dates(events, DefaultDatePolicy::Exclude, 7);
        assert!(adjusted.len() < total);
        let jan1_left = adjusted
            .records()
            .iter()
            .filter(|r| r.occurred_on == date(2018, 1, 1))
            .count();
        assert!(jan1_left <= 12);
    }
}
