//! Event log written by traced runs (`events.log`).
//!
//! One record per line, tab-separated. Every record starts with the virtual
//! time in nanoseconds and the record kind; the remaining fields are fixed
//! per kind. Header records (time 0) describe the topology the auditor needs.
//!
//! | kind          | fields after `time kind`                                  |
//! |---------------|-----------------------------------------------------------|
//! | `config`      | e qw qa                                                   |
//! | `nic`         | link bandwidth_bps                                        |
//! | `layer`       | layer degraded_lo_ns degraded_hi_ns                       |
//! | `bookie`      | bookie journal_layer ledger_layer                         |
//! | `publish`     | msg producer key key_seq partition broker                 |
//! | `send`        | msg broker                                                |
//! | `nic_tx`      | link msg bits start_ns depart_ns                          |
//! | `enqueue`     | bookie msg                                                |
//! | `fsync_start` | bookie fsync_id duration_ns contended(0/1)                |
//! | `fsync_end`   | bookie fsync_id                                           |
//! | `bookie_ack`  | bookie msg fsync_id                                       |
//! | `broker_ack`  | broker msg bookie                                         |
//! | `publish_ack` | msg latency_ns ensemble_ns                                |
//! | `sync_tick`   | bookie flushed_bytes                                      |
//! | `contention`  | layer start_ns end_ns burst_bytes                         |
//! | `gc_pause`    | process length_ns                                         |
//! | `deliver`     | msg key key_seq consumer                                  |

use std::fmt::Display;
use std::io::{self, Write};

use crate::time::SimTime;

pub struct TraceWriter<'a> {
    out: Option<&'a mut dyn Write>,
    error: Option<io::Error>,
    records: u64,
}

impl<'a> TraceWriter<'a> {
    pub fn disabled() -> Self {
        TraceWriter { out: None, error: None, records: 0 }
    }

    pub fn new(out: &'a mut dyn Write) -> Self {
        TraceWriter { out: Some(out), error: None, records: 0 }
    }

    pub fn enabled(&self) -> bool {
        self.out.is_some() && self.error.is_none()
    }

    pub fn record(&mut self, t: SimTime, kind: &str, fields: &[&dyn Display]) {
        if !self.enabled() {
            return;
        }
        let out = self.out.as_mut().expect("enabled");
        let mut res = write!(out, "{}\t{kind}", t.as_nanos());
        for f in fields {
            if res.is_ok() {
                res = write!(out, "\t{f}");
            }
        }
        if res.is_ok() {
            res = writeln!(out);
        }
        match res {
            Ok(()) => self.records += 1,
            Err(e) => self.error = Some(e),
        }
    }

    /// Flushes and reports the first write error, if any.
    pub fn finish(mut self) -> io::Result<u64> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        if let Some(out) = self.out.as_mut() {
            out.flush()?;
        }
        Ok(self.records)
    }
}
