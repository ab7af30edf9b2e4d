//! In-process topic bus with MQTT-style wildcards.
//!
//! Topics are `/`-separated. In a subscription pattern `+` matches exactly one
//! segment and a trailing `#` matches any remainder. Each subscription has a
//! bounded buffer; when it is full the oldest message is dropped and counted.
//! Messages published before a subscription exists are not replayed.

pub mod bridge;

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use thiserror::Error;

pub const DEFAULT_BUFFER: usize = 10_000;

pub const DATA_PREFIX: &str = "dalton/data";
pub const CMD_PREFIX: &str = "dalton/cmd";
pub const ACK_PREFIX: &str = "dalton/ack";
pub const PERSISTED_PREFIX: &str = "dalton/persisted";
pub const HHI_PREFIX: &str = "dalton/hhi";

pub fn data_topic(device_id: &str) -> String {
    format!("{DATA_PREFIX}/{device_id}")
}
pub fn cmd_topic(device_id: &str) -> String {
    format!("{CMD_PREFIX}/{device_id}")
}
pub fn ack_topic(device_id: &str) -> String {
    format!("{ACK_PREFIX}/{device_id}")
}
pub fn persisted_topic(device_id: &str) -> String {
    format!("{PERSISTED_PREFIX}/{device_id}")
}
pub fn hhi_topic(site_id: &str) -> String {
    format!("{HHI_PREFIX}/{site_id}")
}

/// Last segment of a topic, the device or site id for the topic families above.
pub fn topic_leaf(topic: &str) -> &str {
    topic.rsplit('/').next().unwrap_or(topic)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("bus is closed")]
    BusClosed,
    #[error("invalid topic `{0}`")]
    InvalidTopic(String),
    #[error("broker connection failed: {0}")]
    ConnectFailed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: String,
    pub payload: Vec<u8>,
    /// Per-topic publish sequence, starting at 1.
    pub seq: u64,
}

impl Message {
    pub fn payload_str(&self) -> Option<&str> {
        std::str::from_utf8(&self.payload).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishReport {
    pub seq: u64,
    /// Number of subscriptions the message was queued on.
    pub delivered: usize,
}

fn check_topic(topic: &str) -> Result<(), BusError> {
    if topic.is_empty() || topic.split('/').any(|s| s.is_empty() || s == "+" || s == "#") {
        return Err(BusError::InvalidTopic(topic.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicPattern(Vec<String>);

impl TopicPattern {
    pub fn parse(pattern: &str) -> Result<Self, BusError> {
        let segs: Vec<String> = pattern.split('/').map(str::to_string).collect();
        let bad = pattern.is_empty()
            || segs.iter().enumerate().any(|(i, s)| {
                s.is_empty()
                    || (s == "#" && i != segs.len() - 1)
                    || (s.len() > 1 && (s.contains('+') || s.contains('#')))
            });
        if bad {
            return Err(BusError::InvalidTopic(pattern.to_string()));
        }
        Ok(TopicPattern(segs))
    }

    pub fn matches(&self, topic: &str) -> bool {
        let mut parts = topic.split('/');
        for seg in &self.0 {
            if seg == "#" {
                return true;
            }
            match parts.next() {
                Some(p) if seg == "+" || seg == p => {}
                _ => return false,
            }
        }
        parts.next().is_none()
    }
}

impl std::fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

struct Queue {
    buf: Mutex<VecDeque<Message>>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
    closed: AtomicBool,
}

impl Queue {
    fn push(&self, msg: Message) {
        let mut buf = self.buf.lock();
        if buf.len() >= self.capacity {
            buf.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        buf.push_back(msg);
        self.ready.notify_all();
    }

    fn close(&self) {
        let _guard = self.buf.lock();
        self.closed.store(true, Ordering::SeqCst);
        self.ready.notify_all();
    }
}

struct Entry {
    id: u64,
    pattern: TopicPattern,
    queue: Arc<Queue>,
}

#[derive(Default)]
struct Inner {
    closed: bool,
    next_id: u64,
    seqs: HashMap<String, u64>,
    subs: Vec<Entry>,
}

#[derive(Clone)]
pub struct Bus {
    inner: Arc<Mutex<Inner>>,
    buffer: usize,
}

impl Default for Bus {
    fn default() -> Self {
        Bus::new()
    }
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.lock();
        f.debug_struct("Bus")
            .field("subscriptions", &inner.subs.len())
            .field("closed", &inner.closed)
            .finish()
    }
}

impl Bus {
    pub fn new() -> Self {
        Bus::with_buffer(DEFAULT_BUFFER)
    }

    pub fn with_buffer(buffer: usize) -> Self {
        Bus {
            inner: Arc::new(Mutex::new(Inner::default())),
            buffer: buffer.max(1),
        }
    }

    pub fn publish(&self, topic: &str, payload: impl Into<Vec<u8>>) -> Result<PublishReport, BusError> {
        check_topic(topic)?;
        let mut inner = self.inner.lock();
        if inner.closed {
            return Err(BusError::BusClosed);
        }
        let seq = {
            let s = inner.seqs.entry(topic.to_string()).or_insert(0);
            *s += 1;
            *s
        };
        let msg = Message {
            topic: topic.to_string(),
            payload: payload.into(),
            seq,
        };
        let mut delivered = 0;
        for sub in inner.subs.iter().filter(|s| s.pattern.matches(topic)) {
            sub.queue.push(msg.clone());
            delivered += 1;
        }
        Ok(PublishReport { seq, delivered })
    }

    pub fn subscribe(&self, pattern: &str) -> Result<Subscription, BusError> {
        let pattern = TopicPattern::parse(pattern)?;
        let mut inner = self.inner.lock();
        if inner.closed {
            return Err(BusError::BusClosed);
        }
        inner.next_id += 1;
        let id = inner.next_id;
        let queue = Arc::new(Queue {
            buf: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            capacity: self.buffer,
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
        });
        inner.subs.push(Entry {
            id,
            pattern: pattern.clone(),
            queue: queue.clone(),
        });
        Ok(Subscription {
            id,
            pattern,
            queue,
            bus: Arc::downgrade(&self.inner),
        })
    }

    pub fn subscriber_count(&self, topic: &str) -> usize {
        self.inner.lock().subs.iter().filter(|s| s.pattern.matches(topic)).count()
    }

    /// Closes the bus; later publishes and subscribes fail and blocked
    /// receivers wake up once their buffers drain.
    pub fn close(&self) {
        let mut inner = self.inner.lock();
        inner.closed = true;
        for sub in &inner.subs {
            sub.queue.close();
        }
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().closed
    }
}

pub struct Subscription {
    id: u64,
    pattern: TopicPattern,
    queue: Arc<Queue>,
    bus: Weak<Mutex<Inner>>,
}

impl std::fmt::Debug for Subscription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscription").field("pattern", &self.pattern.to_string()).finish()
    }
}

impl Subscription {
    pub fn pattern(&self) -> &TopicPattern {
        &self.pattern
    }

    pub fn try_recv(&self) -> Option<Message> {
        self.queue.buf.lock().pop_front()
    }

    /// Waits up to `timeout` for a message. Returns `BusClosed` once the bus is
    /// closed and the buffer is empty.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Message>, BusError> {
        let deadline = Instant::now() + timeout;
        let mut buf = self.queue.buf.lock();
        loop {
            if let Some(m) = buf.pop_front() {
                return Ok(Some(m));
            }
            if self.queue.closed.load(Ordering::SeqCst) {
                return Err(BusError::BusClosed);
            }
            if self.queue.ready.wait_until(&mut buf, deadline).timed_out() {
                return Ok(buf.pop_front());
            }
        }
    }

    pub fn drain(&self) -> Vec<Message> {
        self.queue.buf.lock().drain(..).collect()
    }

    pub fn pending(&self) -> usize {
        self.queue.buf.lock().len()
    }

    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(inner) = self.bus.upgrade() {
            inner.lock().subs.retain(|s| s.id != self.id);
        }
    }
}
