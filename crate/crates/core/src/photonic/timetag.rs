use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Basis;

/// Detector channel. Ids are the on-disk channel bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    L,
    R,
    D,
    A,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::L, Channel::R, Channel::D, Channel::A];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Channel::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown channel id {id}")))
    }

    /// Basis and bit this detector reports.
    pub fn decode(self) -> (Basis, u8) {
        match self {
            Channel::L => (Basis::Y, 0),
            Channel::R => (Basis::Y, 1),
            Channel::D => (Basis::X, 0),
            Channel::A => (Basis::X, 1),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Channel::L => "L",
            Channel::R => "R",
            Channel::D => "D",
            Channel::A => "A",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(Channel::L),
            "R" => Ok(Channel::R),
            "D" => Ok(Channel::D),
            "A" => Ok(Channel::A),
            other => Err(Error::invalid(format!("unknown channel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTag {
    pub channel: Channel,
    pub time_ps: u64,
}

const RECORD_LEN: usize = 9;

/// Writes little-endian records: 8-byte picosecond timestamp, 1-byte channel.
pub fn write_tags_binary<W: Write>(tags: &[TimeTag], mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(tags.len() * RECORD_LEN);
    for t in tags {
        buf.extend_from_slice(&t.time_ps.to_le_bytes());
        buf.push(t.channel.id());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tags_binary<R: Read>(mut r: R) -> Result<Vec<TimeTag>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % RECORD_LEN != 0 {
        return Err(Error::integrity(format!(
            "time-tag stream length {} is not a multiple of {RECORD_LEN}",
            buf.len()
        )));
    }
    buf.chunks_exact(RECORD_LEN)
        .map(|rec| {
            let mut ts = [0u8; 8];
            ts.copy_from_slice(&rec[..8]);
            Ok(TimeTag {
                time_ps: u64::from_le_bytes(ts),
                channel: Channel::from_id(rec[8])?,
            })
        })
        .collect()
}

pub fn write_tags_csv<W: Write>(tags: &[TimeTag], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["time_ps", "channel"])?;
    for t in tags {
        wtr.write_record([t.time_ps.to_string(), t.channel.label().to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_tags_csv<R: Read>(r: R) -> Result<Vec<TimeTag>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let time_ps = rec
            .get(0)
            .ok_or_else(|| Error::invalid("missing time_ps"))?
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::invalid(format!("time_ps: {e}")))?;
        let channel = Channel::parse(rec.get(1).ok_or_else(|| Error::invalid("missing channel"))?.trim())?;
        out.push(TimeTag { channel, time_ps });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tag_strategy() -> impl Strategy<Value = TimeTag> {
        (any::<u64>(), 0u8..4).prop_map(|(t, c)| TimeTag {
            time_ps: t,
            channel: Channel::from_id(c).unwrap(),
        })
    }

    proptest! {
        #[test]
        fn binary_and_csv_roundtrip(tags in proptest::collection::vec(tag_strategy(), 0..64)) {
            let mut bin = Vec::new();
            write_tags_binary(&tags, &mut bin).unwrap();
            prop_assert_eq!(bin.len(), tags.len() * 9);
            prop_assert_eq!(read_tags_binary(bin.as_slice()).unwrap(), tags.clone());
            let mut text = Vec::new();
            write_tags_csv(&tags, &mut text).unwrap();
            prop_assert_eq!(read_tags_csv(text.as_slice()).unwrap(), tags);
        }
    }

    #[test]
    fn binary_layout_is_little_endian() {
        let tags = [TimeTag {
            channel: Channel::A,
            time_ps: 0x0102_0304_0506_0708,
        }];
        let mut bin = Vec::new();
        write_tags_binary(&tags, &mut bin).unwrap();
        assert_eq!(bin, [8, 7, 6, 5, 4, 3, 2, 1, 3]);
    }

    #[test]
    fn truncated_or_bad_channel_rejected() {
        assert!(read_tags_binary([0u8; 10].as_slice()).is_err());
        let mut bad = [0u8; 9];
        bad[8] = 7;
        assert!(read_tags_binary(bad.as_slice()).is_err());
    }
}
