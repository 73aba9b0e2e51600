//! Episode files: one record per (episode, landmark) with the columns
//! `ID, admission_id, LM, eventtime, type` followed by predictor columns.
//!
//! CSV encodes missing values as `NA` (empty cells and `na` are accepted on
//! read). JSON files hold an array of flat objects with `null` for missing.
//! Floats are written in shortest round-trip form, so values survive a
//! read/write cycle bit for bit.
//!
//! `eventtime` and `type` may be absent for rows whose outcome is not yet
//! known; they read as NaN and censored, which episode validation rejects.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::episode::{Episode, EventType, LandmarkRow};
use super::schema::PredictorSchema;
use super::stack::StackedDataset;
use crate::error::{Error, Result};

pub const NA_TOKEN: &str = "NA";

const ID: &str = "ID";
const ADMISSION: &str = "admission_id";
const LM: &str = "LM";
const EVENT_TIME: &str = "eventtime";
const TYPE: &str = "type";

/// A flat (episode, landmark) record as it appears in a file.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode_id: u64,
    pub admission_id: u64,
    pub s: u32,
    pub event_time: f64,
    pub event_type: EventType,
    pub values: Vec<Option<f64>>,
}

fn is_na(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "na")
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Validation(format!("record {line}: cannot parse {what} `{field}`")))
}

fn parse_u64(field: &str, what: &str, line: usize) -> Result<u64> {
    field
        .trim()
        .parse::<u64>()
        .map_err(|_| Error::Validation(format!("record {line}: cannot parse {what} `{field}`")))
}

pub fn read_records_csv<R: Read>(reader: R, schema: &PredictorSchema) -> Result<Vec<EpisodeRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::Validation(format!("episode file lacks column `{name}`")))
    };
    let (id_c, lm_c) = (need(ID)?, need(LM)?);
    let (et_c, ty_c) = (col(EVENT_TIME), col(TYPE));
    let adm_c = col(ADMISSION);
    let pred_cols = schema.names().map(need).collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let episode_id = parse_u64(&rec[id_c], ID, line)?;
        let admission_id = match adm_c {
            Some(c) if !is_na(&rec[c]) => parse_u64(&rec[c], ADMISSION, line)?,
            _ => episode_id,
        };
        let s = parse_u64(&rec[lm_c], LM, line)? as u32;
        let event_time = match et_c {
            Some(c) if !is_na(&rec[c]) => parse_f64(&rec[c], EVENT_TIME, line)?,
            _ => f64::NAN,
        };
        let event_type = match ty_c {
            Some(c) if !is_na(&rec[c]) => EventType::try_from(parse_u64(&rec[c], TYPE, line)? as u8)?,
            _ => EventType::Censored,
        };
        let values = pred_cols
            .iter()
            .zip(schema.names())
            .map(|(&c, name)| {
                let f = &rec[c];
                if is_na(f) {
                    Ok(None)
                } else {
                    parse_f64(f, name, line).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(EpisodeRecord { episode_id, admission_id, s, event_time, event_type, values });
    }
    Ok(out)
}

pub fn write_records_csv<W: Write>(writer: W, schema: &PredictorSchema, records: &[EpisodeRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![ID, ADMISSION, LM, EVENT_TIME, TYPE];
    header.extend(schema.names());
    wtr.write_record(&header)?;
    for r in records {
        let mut fields = vec![
            r.episode_id.to_string(),
            r.admission_id.to_string(),
            r.s.to_string(),
            r.event_time.to_string(),
            r.event_type.code().to_string(),
        ];
        fields.extend(r.values.iter().map(|v| match v {
            Some(x) => x.to_string(),
            None => NA_TOKEN.to_string(),
        }));
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records_json<R: Read>(reader: R, schema: &PredictorSchema) -> Result<Vec<EpisodeRecord>> {
    let items: Vec<Map<String, Value>> = serde_json::from_reader(reader)?;
    let num = |obj: &Map<String, Value>, key: &str, line: usize| -> Result<f64> {
        obj.get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Validation(format!("record {line}: missing numeric `{key}`")))
    };
    let int = |obj: &Map<String, Value>, key: &str, line: usize| -> Result<u64> {
        obj.get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Validation(format!("record {line}: missing integer `{key}`")))
    };
    items
        .iter()
        .enumerate()
        .map(|(line, obj)| {
            let episode_id = int(obj, ID, line)?;
            let admission_id = match obj.get(ADMISSION) {
                Some(Value::Null) | None => episode_id,
                Some(_) => int(obj, ADMISSION, line)?,
            };
            let values = schema
                .names()
                .map(|name| match obj.get(name) {
                    Some(Value::Null) => Ok(None),
                    Some(v) => v.as_f64().map(Some).ok_or_else(|| {
                        Error::Validation(format!("record {line}: `{name}` is not a number"))
                    }),
                    None => Err(Error::Validation(format!("record {line}: missing column `{name}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EpisodeRecord {
                episode_id,
                admission_id,
                s: int(obj, LM, line)? as u32,
                event_time: match obj.get(EVENT_TIME) {
                    Some(Value::Null) | None => f64::NAN,
                    Some(_) => num(obj, EVENT_TIME, line)?,
                },
                event_type: match obj.get(TYPE) {
                    Some(Value::Null) | None => EventType::Censored,
                    Some(_) => EventType::try_from(int(obj, TYPE, line)? as u8)?,
                },
                values,
            })
        })
        .collect()
}

pub fn write_records_json<W: Write>(mut writer: W, schema: &PredictorSchema, records: &[EpisodeRecord]) -> Result<()> {
    writeln!(writer, "[")?;
    for (i, r) in records.iter().enumerate() {
        let mut obj = Map::new();
        obj.insert(ID.into(), r.episode_id.into());
        obj.insert(ADMISSION.into(), r.admission_id.into());
        obj.insert(LM.into(), r.s.into());
        obj.insert(EVENT_TIME.into(), r.event_time.into());
        obj.insert(TYPE.into(), r.event_type.code().into());
        for (name, v) in schema.names().zip(&r.values) {
            obj.insert(name.into(), v.map_or(Value::Null, Value::from));
        }
        let sep = if i + 1 == records.len() { "" } else { "," };
        writeln!(writer, "{}{sep}", serde_json::to_string(&obj)?)?;
    }
    writeln!(writer, "]")?;
    Ok(())
}

/// Flattens episodes into one record per landmark row.
pub fn episodes_to_records(episodes: &[Episode]) -> Vec<EpisodeRecord> {
    episodes
        .iter()
        .flat_map(|ep| {
            ep.rows.iter().map(move |row| EpisodeRecord {
                episode_id: ep.episode_id,
                admission_id: ep.admission_id,
                s: row.s,
                event_time: ep.event_time,
                event_type: ep.event_type,
                values: row.values.clone(),
            })
        })
        .collect()
}

pub fn stacked_to_records(data: &StackedDataset) -> Vec<EpisodeRecord> {
    data.rows
        .iter()
        .map(|r| EpisodeRecord {
            episode_id: r.episode_id,
            admission_id: r.admission_id,
            s: r.s,
            event_time: r.event_time,
            event_type: r.event_type,
            values: r.values.clone(),
        })
        .collect()
}

/// Groups records into episodes, keeping first-appearance order.
///
/// The episode's event is read from its record with the largest `eventtime`,
/// so both raw episode files and stacked files (where early rows carry
/// administratively censored times) load to the same episodes.
pub fn records_to_episodes(records: &[EpisodeRecord], schema: &PredictorSchema) -> Result<Vec<Episode>> {
    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, Vec<&EpisodeRecord>> = HashMap::new();
    for r in records {
        groups
            .entry(r.episode_id)
            .or_insert_with(|| {
                order.push(r.episode_id);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let mut recs = groups.remove(&id).unwrap_or_default();
            recs.sort_by_key(|r| r.s);
            let last = recs
                .iter()
                .max_by(|a, b| {
                    a.event_time
                        .total_cmp(&b.event_time)
                        .then((a.event_type != EventType::Censored).cmp(&(b.event_type != EventType::Censored)))
                })
                .expect("group is nonempty");
            let (event_time, event_type, admission_id) = (last.event_time, last.event_type, last.admission_id);
            let rows = recs.iter().map(|r| LandmarkRow::new(r.s, r.values.clone())).collect();
            Episode::new(id, admission_id, event_time, event_type, rows, schema)
        })
        .collect()
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn read_records(path: &Path, schema: &PredictorSchema) -> Result<Vec<EpisodeRecord>> {
    let file = BufReader::new(File::open(path)?);
    if is_json(path) {
        read_records_json(file, schema)
    } else {
        read_records_csv(file, schema)
    }
}

pub fn write_records(path: &Path, schema: &PredictorSchema, records: &[EpisodeRecord]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    if is_json(path) {
        write_records_json(file, schema, records)
    } else {
        write_records_csv(file, schema, records)
    }
}

pub fn read_episodes(path: &Path, schema: &PredictorSchema) -> Result<Vec<Episode>> {
    records_to_episodes(&read_records(path, schema)?, schema)
}

pub fn write_episodes(path: &Path, schema: &PredictorSchema, episodes: &[Episode]) -> Result<()> {
    write_records(path, schema, &episodes_to_records(episodes))
}
