use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::{Condvar, Mutex};

/// Receive-side message store for one rank, keyed by exact (source, tag).
pub(crate) struct Mailbox {
    inner: Mutex<Inner>,
    cv: Condvar,
    /// Per-channel bound; `send` blocks while the channel is full.
    capacity: Option<usize>,
}

#[derive(Default)]
struct Inner {
    queues: HashMap<(usize, i32), VecDeque<Vec<u8>>>,
    closed: HashSet<usize>,
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) struct SourceClosed;

impl Mailbox {
    pub fn new(capacity: Option<usize>) -> Self {
        Mailbox {
            inner: Mutex::new(Inner::default()),
            cv: Condvar::new(),
            capacity,
        }
    }

    pub fn push(&self, src: usize, tag: i32, payload: Vec<u8>) {
        let mut inner = self.inner.lock().unwrap();
        if let Some(cap) = self.capacity {
            while inner.queues.get(&(src, tag)).is_some_and(|q| q.len() >= cap) {
                inner = self.cv.wait(inner).unwrap();
            }
        }
        inner.queues.entry((src, tag)).or_default().push_back(payload);
        self.cv.notify_all();
    }

    /// Blocks until a message on (src, tag) is available. Queued messages are
    /// still delivered after the source closes.
    pub fn pop(&self, src: usize, tag: i32) -> Result<Vec<u8>, SourceClosed> {
        let mut inner = self.inner.lock().unwrap();
        loop {
            if let Some(msg) = inner.queues.get_mut(&(src, tag)).and_then(|q| q.pop_front()) {
                self.cv.notify_all();
                return Ok(msg);
            }
            if inner.closed.contains(&src) {
                return Err(SourceClosed);
            }
            inner = self.cv.wait(inner).unwrap();
        }
    }

    pub fn close_source(&self, src: usize) {
        self.inner.lock().unwrap().closed.insert(src);
        self.cv.notify_all();
    }
}
