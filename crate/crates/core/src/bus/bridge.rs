//! Optional bridge between the in-process bus and an external MQTT v5 broker.
//!
//! Device data and acks arriving from the broker are republished on the bus,
//! with duplicate `(device_id, seq)` deliveries suppressed. Commands published
//! on the bus are forwarded to the broker at QoS 1.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rumqttc::v5::mqttbytes::QoS;
use rumqttc::v5::{Client, Event, Incoming, MqttOptions};
use serde::Deserialize;

use super::{Bus, BusError, ACK_PREFIX, CMD_PREFIX, DATA_PREFIX};
use crate::model::Reading;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeConfig {
    pub enabled: bool,
    pub host: String,
    pub port: u16,
    pub client_id: String,
    pub keep_alive_s: u64,
    pub connect_timeout_ms: u64,
    /// Sequence numbers remembered per device for duplicate suppression.
    pub dedup_horizon: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            enabled: false,
            host: "127.0.0.1".into(),
            port: 1883,
            client_id: "dalton-hub".into(),
            keep_alive_s: 30,
            connect_timeout_ms: 5_000,
            dedup_horizon: 1_024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Health {
    Ok,
    Degraded,
}

#[derive(Debug, Clone)]
pub struct HealthFlag(Arc<AtomicU8>);

impl Default for HealthFlag {
    fn default() -> Self {
        HealthFlag(Arc::new(AtomicU8::new(0)))
    }
}

impl HealthFlag {
    pub fn get(&self) -> Health {
        if self.0.load(Ordering::SeqCst) == 0 {
            Health::Ok
        } else {
            Health::Degraded
        }
    }

    pub fn set(&self, h: Health) {
        self.0.store(matches!(h, Health::Degraded) as u8, Ordering::SeqCst);
    }
}

/// Remembers the most recent `horizon` sequence numbers of each device.
#[derive(Debug)]
pub struct InboundDedup {
    horizon: usize,
    seen: HashMap<String, (VecDeque<u64>, HashSet<u64>)>,
}

impl InboundDedup {
    pub fn new(horizon: usize) -> Self {
        InboundDedup {
            horizon: horizon.max(1),
            seen: HashMap::new(),
        }
    }

    /// True the first time a pair is seen within the horizon.
    pub fn admit(&mut self, device_id: &str, seq: u64) -> bool {
        let (order, set) = self.seen.entry(device_id.to_string()).or_default();
        if !set.insert(seq) {
            return false;
        }
        order.push_back(seq);
        if order.len() > self.horizon {
            if let Some(old) = order.pop_front() {
                set.remove(&old);
            }
        }
        true
    }
}

/// Which end of the broker link this process is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeSide {
    /// Receives device data and acks, sends commands.
    Hub,
    /// Receives commands, sends device data and acks.
    Devices,
}

impl BridgeSide {
    fn inbound(self) -> &'static [&'static str] {
        match self {
            BridgeSide::Hub => &[DATA_PREFIX, ACK_PREFIX],
            BridgeSide::Devices => &[CMD_PREFIX],
        }
    }

    fn outbound(self) -> &'static [&'static str] {
        match self {
            BridgeSide::Hub => &[CMD_PREFIX],
            BridgeSide::Devices => &[DATA_PREFIX, ACK_PREFIX],
        }
    }
}

pub struct Bridge {
    health: HealthFlag,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl Bridge {
    /// Connects and starts forwarding. Fails with `ConnectFailed` (and marks
    /// `health` degraded) when no connection is acknowledged in time.
    pub fn start(cfg: &BridgeConfig, bus: &Bus, health: HealthFlag) -> Result<Bridge, BusError> {
        Self::start_as(BridgeSide::Hub, cfg, bus, health)
    }

    pub fn start_as(side: BridgeSide, cfg: &BridgeConfig, bus: &Bus, health: HealthFlag) -> Result<Bridge, BusError> {
        let mut opts = MqttOptions::new(cfg.client_id.clone(), cfg.host.clone(), cfg.port);
        opts.set_keep_alive(Duration::from_secs(cfg.keep_alive_s.max(5)));
        let (client, mut connection) = Client::new(opts, 64);
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel::<Result<(), String>>();

        let inbound = {
            let bus = bus.clone();
            let stop = stop.clone();
            let health = health.clone();
            let horizon = cfg.dedup_horizon;
            std::thread::spawn(move || {
                let mut dedup = InboundDedup::new(horizon);
                let mut announced = false;
                while !stop.load(Ordering::SeqCst) {
                    match connection.recv_timeout(Duration::from_millis(200)) {
                        Ok(Ok(Event::Incoming(Incoming::ConnAck(_)))) => {
                            health.set(Health::Ok);
                            if !announced {
                                announced = true;
                                let _ = tx.send(Ok(()));
                            }
                        }
                        Ok(Ok(Event::Incoming(Incoming::Publish(p)))) => {
                            let topic = String::from_utf8_lossy(&p.topic).to_string();
                            if topic.starts_with(DATA_PREFIX) {
                                if let Ok(r) = Reading::from_json(&p.payload) {
                                    if !dedup.admit(&r.device_id, r.seq) {
                                        continue;
                                    }
                                }
                            }
                            if bus.publish(&topic, p.payload.to_vec()).is_err() {
                                break;
                            }
                        }
                        Ok(Ok(_)) => {}
                        Ok(Err(e)) => {
                            health.set(Health::Degraded);
                            if !announced {
                                let _ = tx.send(Err(e.to_string()));
                                break;
                            }
                            log::warn!("mqtt bridge: {e}");
                            std::thread::sleep(Duration::from_millis(500));
                        }
                        Err(rumqttc::v5::RecvTimeoutError::Timeout) => {}
                        Err(rumqttc::v5::RecvTimeoutError::Disconnected) => break,
                    }
                }
            })
        };

        let connected = rx.recv_timeout(Duration::from_millis(cfg.connect_timeout_ms));
        let failure = match connected {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(e),
            Err(_) => Some(format!("no CONNACK from {}:{} in {} ms", cfg.host, cfg.port, cfg.connect_timeout_ms)),
        };
        if let Some(reason) = failure {
            health.set(Health::Degraded);
            stop.store(true, Ordering::SeqCst);
            let _ = client.disconnect();
            let _ = inbound.join();
            return Err(BusError::ConnectFailed(reason));
        }

        for prefix in side.inbound() {
            client
                .subscribe(format!("{prefix}/+"), QoS::AtLeastOnce)
                .map_err(|e| BusError::ConnectFailed(e.to_string()))?;
        }

        let subs = side
            .outbound()
            .iter()
            .map(|prefix| bus.subscribe(&format!("{prefix}/+")))
            .collect::<Result<Vec<_>, _>>()?;
        let outbound = {
            let stop = stop.clone();
            std::thread::spawn(move || {
                let started = Instant::now();
                while !stop.load(Ordering::SeqCst) {
                    for sub in &subs {
                        match sub.recv_timeout(Duration::from_millis(50)) {
                            Ok(Some(m)) => {
                                if let Err(e) = client.publish(m.topic, QoS::AtLeastOnce, false, m.payload) {
                                    log::warn!("mqtt bridge publish failed after {:?}: {e}", started.elapsed());
                                }
                            }
                            Ok(None) => {}
                            Err(_) => return,
                        }
                    }
                }
                let _ = client.disconnect();
            })
        };

        Ok(Bridge {
            health,
            stop,
            threads: vec![inbound, outbound],
        })
    }

    pub fn health(&self) -> Health {
        self.health.get()
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_within_horizon() {
        let mut d = InboundDedup::new(3);
        assert!(d.admit("a", 1));
        assert!(!d.admit("a", 1));
        assert!(d.admit("b", 1));
        assert!(d.admit("a", 2));
        assert!(d.admit("a", 3));
        assert!(d.admit("a", 4));
        // seq 1 fell out of the horizon
        assert!(d.admit("a", 1));
    }

    #[test]
    fn unreachable_broker_degrades() {
        let cfg = BridgeConfig {
            enabled: true,
            port: 1,
            connect_timeout_ms: 3_000,
            ..BridgeConfig::default()
        };
        let health = HealthFlag::default();
        let bus = Bus::new();
        let r = Bridge::start(&cfg, &bus, health.clone());
        assert!(matches!(r, Err(BusError::ConnectFailed(_))));
        assert_eq!(health.get(), Health::Degraded);
    }

    #[test]
    fn disabled_by_default() {
        assert!(!BridgeConfig::default().enabled);
    }
}
