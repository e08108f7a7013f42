//! Photodetection records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Detector that registered a photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// The only detector of the single-qubit setup.
    Single,
    /// Sum-mode detector, monitoring `(a1 + a2)/sqrt 2`.
    Plus,
    /// Difference-mode detector, monitoring `(a1 - a2)/sqrt 2`.
    Minus,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Single => "single",
            Channel::Plus => "plus",
            Channel::Minus => "minus",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Channel::Single),
            "plus" => Ok(Channel::Plus),
            "minus" => Ok(Channel::Minus),
            other => Err(Error::InvalidParameter {
                name: "channel",
                reason: format!("unknown channel {other:?}"),
            }),
        }
    }
}

/// Ordered detection events `(time, channel)` observed up to `final_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord<T> {
    events: Vec<(T, Channel)>,
    final_time: T,
}

impl<T: Real> DetectionRecord<T> {
    pub fn empty(final_time: T) -> Self {
        Self {
            events: Vec::new(),
            final_time,
        }
    }

    /// Checked constructor: times strictly increasing, all in `[0, final_time]`.
    pub fn new(events: Vec<(T, Channel)>, final_time: T) -> Result<Self> {
        let mut prev: Option<T> = None;
        for &(t, _) in &events {
            if t < T::zero() || t > final_time || prev.is_some_and(|p| t <= p) {
                return Err(Error::InvalidParameter {
                    name: "record",
                    reason: format!("event time {t} out of order or outside [0, {final_time}]"),
                });
            }
            prev = Some(t);
        }
        Ok(Self { events, final_time })
    }

    pub(crate) fn push(&mut self, t: T, channel: Channel) {
        self.events.push((t, channel));
    }

    pub(crate) fn set_final_time(&mut self, t: T) {
        self.final_time = t;
    }

    pub fn events(&self) -> &[(T, Channel)] {
        &self.events
    }

    pub fn final_time(&self) -> T {
        self.final_time
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.events.iter().filter(|e| e.1 == channel).count()
    }

    /// Times of events on `channel`.
    pub fn times(&self, channel: Channel) -> impl Iterator<Item = T> + '_ {
        self.events.iter().filter(move |e| e.1 == channel).map(|e| e.0)
    }

    /// Events strictly before `t`.
    pub fn before(&self, t: T) -> Self {
        Self {
            events: self.events.iter().copied().filter(|e| e.0 < t).collect(),
            final_time: t,
        }
    }

    /// Appends `later` with its times shifted by `offset`.
    pub fn concat(&self, later: &Self, offset: T) -> Result<Self> {
        let mut events = self.events.clone();
        events.extend(later.events.iter().map(|&(t, ch)| (t + offset, ch)));
        Self::new(events, later.final_time + offset)
    }
}
