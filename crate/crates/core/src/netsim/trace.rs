use std::io::{self, Write};

use serde::Serialize;

use super::{EndpointAddress, MessageKind, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Send,
    Deliver,
    Drop,
}

/// Why the simulator discarded a datagram.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DropReason {
    Loss,
    Unroutable,
    Filtered,
    HairpinDisabled,
    TableFull,
    PortExhausted,
    NodeDown,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub time_us: u64,
    #[serde(rename = "type")]
    pub kind: TraceKind,
    pub src: EndpointAddress,
    pub dst: EndpointAddress,
    #[serde(rename = "kind", serialize_with = "ser_kind")]
    pub message: MessageKind,
    /// Datagram sequence number, shared by the send and its outcome.
    pub seq: u64,
    #[serde(skip)]
    pub reason: Option<DropReason>,
}

fn ser_kind<S: serde::Serializer>(k: &MessageKind, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(k.name())
}

/// Ordered list of send/deliver/drop records.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventTrace {
    pub entries: Vec<TraceEntry>,
}

impl EventTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter()
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub(crate) fn push(&mut self, entry: TraceEntry) {
        self.entries.push(entry);
    }

    pub fn last_time(&self) -> Option<SimTime> {
        self.entries.last().map(|e| SimTime(e.time_us))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_fields() {
        let t = EventTrace {
            entries: vec![TraceEntry {
                time_us: 10_000,
                kind: TraceKind::Deliver,
                src: EndpointAddress::from_parts(0x0102_0304, 5),
                dst: EndpointAddress::from_parts(0x0A00_0002, 4000),
                message: MessageKind::Probe,
                seq: 3,
                reason: None,
            }],
        };
        assert_eq!(
            t.to_jsonl(),
            "{\"time_us\":10000,\"type\":\"deliver\",\"src\":\"1.2.3.4:5\",\"dst\":\"10.0.0.2:4000\",\"kind\":\"PROBE\",\"seq\":3}\n"
        );
    }
}
