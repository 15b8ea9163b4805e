//! Telemetry CSV ingestion (VED-style) and the matching writer.
//!
//! Rows are grouped by `(vehicle_id, trip_id)`, sorted by timestamp,
//! split wherever consecutive samples are more than `gap_factor · dt` apart,
//! and linearly resampled onto a uniform `dt` grid. Pack power is taken from
//! the power column when present, otherwise from voltage times current.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TripSample, TripTrace};
use crate::error::{Error, Result};

/// Column names and resampling rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub vehicle_id: String,
    pub trip_id: String,
    pub timestamp_s: String,
    pub speed_mps: String,
    pub accel_mps2: String,
    pub grade_rad: String,
    pub ambient_c: String,
    pub aux_w: String,
    pub pack_power_w: String,
    pub pack_voltage_v: String,
    pub pack_current_a: String,
    pub dt_s: f64,
    pub gap_factor: f64,
    pub default_ambient_c: f64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            vehicle_id: "vehicle_id".into(),
            trip_id: "trip_id".into(),
            timestamp_s: "timestamp_s".into(),
            speed_mps: "speed_mps".into(),
            accel_mps2: "accel_mps2".into(),
            grade_rad: "grade_rad".into(),
            ambient_c: "ambient_c".into(),
            aux_w: "aux_w".into(),
            pack_power_w: "pack_power_w".into(),
            pack_voltage_v: "pack_voltage_v".into(),
            pack_current_a: "pack_current_a".into(),
            dt_s: 1.0,
            gap_factor: 5.0,
            default_ambient_c: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestReport {
    pub trips: Vec<TripTrace>,
    pub skipped_rows: usize,
}

enum PowerSource {
    Direct(usize),
    VoltageCurrent(usize, usize),
}

struct Columns {
    vehicle: usize,
    trip: usize,
    time: usize,
    speed: usize,
    accel: Option<usize>,
    grade: Option<usize>,
    ambient: Option<usize>,
    aux: Option<usize>,
    power: PowerSource,
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, schema: &CsvSchema) -> Result<Self> {
        let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let find = |name: &str| index.get(name).copied();
        let need = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
        let power = match find(&schema.pack_power_w) {
            Some(i) => PowerSource::Direct(i),
            None => match (find(&schema.pack_voltage_v), find(&schema.pack_current_a)) {
                (Some(v), Some(i)) => PowerSource::VoltageCurrent(v, i),
                (Some(_), None) => return Err(Error::MissingColumn(schema.pack_current_a.clone())),
                (None, Some(_)) => return Err(Error::MissingColumn(schema.pack_voltage_v.clone())),
                (None, None) => return Err(Error::MissingColumn(schema.pack_power_w.clone())),
            },
        };
        Ok(Self {
            vehicle: need(&schema.vehicle_id)?,
            trip: need(&schema.trip_id)?,
            time: need(&schema.timestamp_s)?,
            speed: need(&schema.speed_mps)?,
            accel: find(&schema.accel_mps2),
            grade: find(&schema.grade_rad),
            ambient: find(&schema.ambient_c),
            aux: find(&schema.aux_w),
            power,
        })
    }
}

/// One parsed raw row. `accel` stays optional so it can be derived later.
#[derive(Clone, Copy)]
struct RawRow {
    t: f64,
    speed: f64,
    accel: Option<f64>,
    grade: f64,
    ambient: f64,
    aux: f64,
    power: f64,
}

fn parse_row(rec: &csv::StringRecord, cols: &Columns, schema: &CsvSchema) -> Option<(String, String, RawRow)> {
    let req = |i: usize| -> Option<f64> { rec.get(i)?.trim().parse::<f64>().ok().filter(|v| v.is_finite()) };
    let opt = |i: Option<usize>| -> std::result::Result<Option<f64>, ()> {
        match i.and_then(|i| rec.get(i)).map(str::trim) {
            None | Some("") => Ok(None),
            Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some).ok_or(()),
        }
    };
    let vehicle = rec.get(cols.vehicle)?.trim().to_string();
    let trip = rec.get(cols.trip)?.trim().to_string();
    if vehicle.is_empty() || trip.is_empty() {
        return None;
    }
    let power = match cols.power {
        PowerSource::Direct(i) => req(i)?,
        PowerSource::VoltageCurrent(v, i) => req(v)? * req(i)?,
    };
    let row = RawRow {
        t: req(cols.time)?,
        speed: req(cols.speed)?,
        accel: opt(cols.accel).ok()?,
        grade: opt(cols.grade).ok()?.unwrap_or(0.0),
        ambient: opt(cols.ambient).ok()?.unwrap_or(schema.default_ambient_c),
        aux: opt(cols.aux).ok()?.unwrap_or(0.0),
        power,
    };
    Some((vehicle, trip, row))
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<IngestReport> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<IngestReport> {
    if !(schema.dt_s > 0.0) || !(schema.gap_factor > 0.0) {
        return Err(Error::Config("schema dt_s and gap_factor must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = Columns::resolve(&headers, schema)?;

    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<RawRow>> = HashMap::new();
    let mut skipped = 0;
    for rec in rdr.records() {
        let parsed = rec.ok().and_then(|r| parse_row(&r, &cols, schema));
        let Some((vehicle, trip, row)) = parsed else {
            skipped += 1;
            continue;
        };
        let key = (vehicle, trip);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(row);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} unparseable telemetry rows");
    }

    let mut trips = Vec::new();
    for key in order {
        let mut rows = groups.remove(&key).unwrap_or_default();
        rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        rows.dedup_by(|b, a| a.t == b.t);
        let segments = split_on_gaps(&rows, schema.gap_factor * schema.dt_s);
        let multi = segments.len() > 1;
        for (part, seg) in segments.into_iter().enumerate() {
            let trip_id = if multi { format!("{}#{}", key.1, part) } else { key.1.clone() };
            trips.push(TripTrace {
                vehicle_id: key.0.clone(),
                trip_id,
                dt_s: schema.dt_s,
                samples: resample(seg, schema.dt_s),
            });
        }
    }
    Ok(IngestReport { trips, skipped_rows: skipped })
}

fn split_on_gaps(rows: &[RawRow], max_gap: f64) -> Vec<&[RawRow]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..rows.len() {
        if rows[i].t - rows[i - 1].t > max_gap {
            out.push(&rows[start..i]);
            start = i;
        }
    }
    if start < rows.len() {
        out.push(&rows[start..]);
    }
    out
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else {
        a + w * (b - a)
    }
}

fn resample(rows: &[RawRow], dt: f64) -> Vec<TripSample> {
    let t0 = rows[0].t;
    let t_end = rows[rows.len() - 1].t;
    let n = ((t_end - t0) / dt + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    let mut accel_known = true;
    for r in 0..n {
        let t = t0 + r as f64 * dt;
        while j + 1 < rows.len() && rows[j + 1].t <= t {
            j += 1;
        }
        let a = rows[j];
        let (b, w) = if j + 1 < rows.len() && t > a.t {
            let b = rows[j + 1];
            (b, (t - a.t) / (b.t - a.t))
        } else {
            (a, 0.0)
        };
        let accel = match (a.accel, b.accel) {
            (Some(x), Some(y)) => lerp(x, y, w),
            _ => {
                accel_known = false;
                0.0
            }
        };
        out.push(TripSample {
            t_s: t,
            speed_mps: lerp(a.speed, b.speed, w),
            accel_mps2: accel,
            grade_rad: lerp(a.grade, b.grade, w),
            ambient_c: lerp(a.ambient, b.ambient, w),
            aux_w: lerp(a.aux, b.aux, w),
            pack_power_w: lerp(a.power, b.power, w),
        });
    }
    if !accel_known {
        // Forward differences of the resampled speed.
        for r in 0..out.len() {
            out[r].accel_mps2 = if r + 1 < out.len() {
                (out[r + 1].speed_mps - out[r].speed_mps) / dt
            } else if r > 0 {
                out[r - 1].accel_mps2
            } else {
                0.0
            };
        }
    }
    out
}

/// Writes trips with the default schema column names.
pub fn write_trips_csv<W: Write>(out: W, trips: &[TripTrace]) -> Result<()> {
    let s = CsvSchema::default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        &s.vehicle_id, &s.trip_id, &s.timestamp_s, &s.speed_mps, &s.accel_mps2, &s.grade_rad, &s.ambient_c, &s.aux_w,
        &s.pack_power_w,
    ])?;
    for trip in trips {
        for x in &trip.samples {
            w.write_record([
                trip.vehicle_id.clone(),
                trip.trip_id.clone(),
                x.t_s.to_string(),
                x.speed_mps.to_string(),
                x.accel_mps2.to_string(),
                x.grade_rad.to_string(),
                x.ambient_c.to_string(),
                x.aux_w.to_string(),
                x.pack_power_w.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
