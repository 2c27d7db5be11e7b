//! Sensor packet wire format.
//!
//! Every datagram is `GRT1`, sensor id (u8), sequence number (u32 LE),
//! device timestamp in ms since the epoch (u64 LE), channel count (u8) and
//! that many f32 LE values.

use std::fmt;

use gaitrt_core::gait::Foot;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"GRT1";
pub const HEADER_LEN: usize = 4 + 1 + 4 + 8 + 1;
pub const IMU_CHANNELS: usize = 9;
pub const INSOLE_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("packet of {0} bytes is shorter than its header")]
    Short(usize),
    #[error("unknown sensor id {0}")]
    UnknownSensor(u8),
    #[error("sensor {sensor} carries {got} channels, expected {expected}")]
    ChannelCount { sensor: SensorId, got: usize, expected: usize },
    #[error("payload is {got} bytes, header announces {expected}")]
    Length { got: usize, expected: usize },
}

/// The six body-worn sensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SensorId {
    RightShank,
    RightFoot,
    LeftShank,
    LeftFoot,
    RightInsole,
    LeftInsole,
}

impl SensorId {
    pub const ALL: [SensorId; 6] = [
        SensorId::RightShank,
        SensorId::RightFoot,
        SensorId::LeftShank,
        SensorId::LeftFoot,
        SensorId::RightInsole,
        SensorId::LeftInsole,
    ];

    pub fn wire_id(self) -> u8 {
        match self {
            SensorId::RightShank => 0,
            SensorId::RightFoot => 1,
            SensorId::LeftShank => 2,
            SensorId::LeftFoot => 3,
            SensorId::RightInsole => 16,
            SensorId::LeftInsole => 17,
        }
    }

    pub fn from_wire(id: u8) -> Option<SensorId> {
        SensorId::ALL.into_iter().find(|s| s.wire_id() == id)
    }

    /// Dense index in [`SensorId::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_insole(self) -> bool {
        matches!(self, SensorId::RightInsole | SensorId::LeftInsole)
    }

    pub fn n_channels(self) -> usize {
        if self.is_insole() {
            INSOLE_CHANNELS
        } else {
            IMU_CHANNELS
        }
    }

    pub fn foot(self) -> Foot {
        match self {
            SensorId::RightShank | SensorId::RightFoot | SensorId::RightInsole => Foot::Right,
            _ => Foot::Left,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorId::RightShank => "imu_rs",
            SensorId::RightFoot => "imu_rf",
            SensorId::LeftShank => "imu_ls",
            SensorId::LeftFoot => "imu_lf",
            SensorId::RightInsole => "insole_r",
            SensorId::LeftInsole => "insole_l",
        }
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorPacket {
    pub sensor: SensorId,
    pub seq: u32,
    pub device_ms: u64,
    pub values: Vec<f32>,
}

impl SensorPacket {
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * self.values.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(self.sensor.wire_id());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.device_ms.to_le_bytes());
        out.push(self.values.len() as u8);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<SensorPacket, PacketError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(PacketError::BadMagic(bytes[..4].try_into().expect("four bytes")));
            }
            return Err(PacketError::Short(bytes.len()));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
        if &magic != MAGIC {
            return Err(PacketError::BadMagic(magic));
        }
        let sensor = SensorId::from_wire(bytes[4]).ok_or(PacketError::UnknownSensor(bytes[4]))?;
        let seq = u32::from_le_bytes(bytes[5..9].try_into().expect("four bytes"));
        let device_ms = u64::from_le_bytes(bytes[9..17].try_into().expect("eight bytes"));
        let n = bytes[17] as usize;
        if n != sensor.n_channels() {
            return Err(PacketError::ChannelCount {
                sensor,
                got: n,
                expected: sensor.n_channels(),
            });
        }
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 4 * n {
            return Err(PacketError::Length {
                got: payload.len(),
                expected: 4 * n,
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        Ok(SensorPacket {
            sensor,
            seq,
            device_ms,
            values,
        })
    }
}
