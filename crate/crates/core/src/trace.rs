//! Voltage trace records and their CSV encoding.

use std::io::{self, Write};

use crate::device::DeviceState;
use crate::time::SimTime;

pub const TRACE_HEADER: &str = "time_s,voltage_V,state";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub voltage: f64,
    pub state: DeviceState,
}

/// Anything that accepts trace records in time order.
pub trait TraceSink {
    fn record(&mut self, rec: TraceRecord) -> io::Result<()>;
}

impl TraceSink for Vec<TraceRecord> {
    fn record(&mut self, rec: TraceRecord) -> io::Result<()> {
        self.push(rec);
        Ok(())
    }
}

/// Discards everything; used when no trace was requested.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _rec: TraceRecord) -> io::Result<()> {
        Ok(())
    }
}

/// Writes `time_s,voltage_V,state` rows.
pub struct CsvTraceWriter<W: Write> {
    out: W,
    last_time: Option<SimTime>,
    rows: usize,
}

impl<W: Write> CsvTraceWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{TRACE_HEADER}")?;
        Ok(CsvTraceWriter {
            out,
            last_time: None,
            rows: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> TraceSink for CsvTraceWriter<W> {
    fn record(&mut self, rec: TraceRecord) -> io::Result<()> {
        if let Some(last) = self.last_time {
            if rec.time < last {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    format!("trace time went backwards: {} after {}", rec.time, last),
                ));
            }
        }
        self.last_time = Some(rec.time);
        self.rows += 1;
        writeln!(self.out, "{},{:.9},{}", rec.time, rec.voltage, rec.state)
    }
}

/// Parses one trace row back; the inverse of the writer's format.
pub fn parse_trace_row(line: &str) -> Option<(f64, f64, DeviceState)> {
    let mut it = line.trim().split(',');
    let t = it.next()?.parse().ok()?;
    let v = it.next()?.parse().ok()?;
    let s = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((t, v, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writer_formats_rows_and_rejects_regression() {
        let mut w = CsvTraceWriter::new(Vec::new()).unwrap();
        w.record(TraceRecord {
            time: SimTime::from_secs_f64(80.0),
            voltage: 3.25,
            state: DeviceState::Sleep,
        })
        .unwrap();
        w.record(TraceRecord {
            time: SimTime::from_secs_f64(80.0),
            voltage: 3.25,
            state: DeviceState::Tx,
        })
        .unwrap();
        let err = w
            .record(TraceRecord {
                time: SimTime::from_secs_f64(79.0),
                voltage: 3.0,
                state: DeviceState::Tx,
            })
            .unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidInput);
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1], "80.000000000,3.250000000,Sleep");
        assert_eq!(lines[2], "80.000000000,3.250000000,Tx");
        assert_eq!(lines.len(), 3);
        assert_eq!(
            parse_trace_row(lines[2]),
            Some((80.0, 3.25, DeviceState::Tx))
        );
    }
}
