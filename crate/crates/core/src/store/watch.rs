use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, TryRecvError};

use crate::clock::Micros;
use crate::model::{Kind, VersionedObject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventType {
    Added,
    Updated,
    Deleted,
}

impl EventType {
    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Added => "ADDED",
            EventType::Updated => "UPDATED",
            EventType::Deleted => "DELETED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatchEvent {
    pub event_type: EventType,
    pub object: VersionedObject,
    pub store_version: u64,
    pub committed_at: Micros,
}

/// Result of polling a watch stream.
#[derive(Debug)]
pub enum Poll {
    Event(Arc<WatchEvent>),
    Empty,
    /// The store cancelled this stream (buffer overflow or an injected fault);
    /// the consumer has to relist.
    Closed,
}

/// Ordered event stream for one kind of one store.
#[derive(Debug)]
pub struct WatchStream {
    pub(crate) kind: Kind,
    pub(crate) rx: Receiver<Arc<WatchEvent>>,
}

impl WatchStream {
    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn try_next(&self) -> Poll {
        match self.rx.try_recv() {
            Ok(ev) => Poll::Event(ev),
            Err(TryRecvError::Empty) => Poll::Empty,
            Err(TryRecvError::Disconnected) => Poll::Closed,
        }
    }

    pub fn next_timeout(&self, timeout: Duration) -> Poll {
        match self.rx.recv_timeout(timeout) {
            Ok(ev) => Poll::Event(ev),
            Err(RecvTimeoutError::Timeout) => Poll::Empty,
            Err(RecvTimeoutError::Disconnected) => Poll::Closed,
        }
    }
}
