//! Lock-step simulation of a household against the hub pipeline on a manual
//! clock.

use std::sync::Arc;

use super::{ScenarioSpec, SimError, Simulator};
use crate::bus::Bus;
use crate::clock::ManualClock;
use crate::model::TimestampMs;
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError};
use crate::store::Store;

pub struct CoSim {
    pub sim: Simulator,
    pub pipeline: Pipeline,
    pub clock: ManualClock,
    pub bus: Bus,
}

impl CoSim {
    pub fn new(spec: ScenarioSpec, store: Arc<Store>, cfg: PipelineConfig) -> Result<Self, CoSimError> {
        let bus = Bus::new();
        let clock = ManualClock::new(spec.start_ms);
        let pipeline = Pipeline::new(bus.clone(), store, Arc::new(clock.clone()), cfg)?;
        let mut sim = Simulator::new(spec)?;
        sim.attach(&bus)?;
        Ok(CoSim { sim, pipeline, clock, bus })
    }

    pub fn now_ms(&self) -> TimestampMs {
        self.sim.now_ms()
    }

    /// One second: the devices publish, the hub drains the bus, then runs
    /// its housekeeping at the new time.
    pub fn step(&mut self) -> Result<(), CoSimError> {
        let now = self.sim.now_ms();
        self.clock.set(now);
        self.sim.step(1.0)?;
        self.pipeline.pump()?;
        self.pipeline.tick(now)?;
        Ok(())
    }

    pub fn run(&mut self, seconds: u64) -> Result<(), CoSimError> {
        for _ in 0..seconds {
            self.step()?;
        }
        Ok(())
    }

    /// Steps until `pred` holds or `max_seconds` elapse. Returns the number of
    /// steps taken when it held.
    pub fn run_until(&mut self, max_seconds: u64, mut pred: impl FnMut(&CoSim) -> bool) -> Result<Option<u64>, CoSimError> {
        for i in 0..max_seconds {
            if pred(self) {
                return Ok(Some(i));
            }
            self.step()?;
        }
        Ok(pred(self).then_some(max_seconds))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CoSimError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Bus(#[from] crate::bus::BusError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CommandStatus, FaultKind};
    use crate::store::{FaultFilter, StoreOptions};

    const HOUSE: &str = r#"
site_id = "h9"
mode = "VENTILATED"
[[rooms]]
label = "kitchen"
volume = "SMALL"
infiltration = 0.001
[[rooms]]
label = "living"
volume = "LARGE"
infiltration = 0.001
[[edges]]
a = "kitchen"
b = "living"
flow = 0.01
[[devices]]
device_id = "h9-kitchen"
room = "kitchen"
[[devices]]
device_id = "h9-living"
room = "living"
[[faults]]
device_id = "h9-living"
kind = "STUCK_MAX"
at_s = 20
[sensor]
noise = 0.002
"#;

    #[test]
    fn stuck_device_is_rebooted_and_acks() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path(), StoreOptions::default()).unwrap());
        let mut co = CoSim::new(ScenarioSpec::from_toml(HOUSE).unwrap(), store.clone(), PipelineConfig::default()).unwrap();
        co.run(60).unwrap();
        let faults = store.query_faults(&FaultFilter::default());
        let stuck: Vec<_> = faults.iter().filter(|f| f.kind == FaultKind::StuckMax).collect();
        assert_eq!(stuck.len(), 1, "{faults:?}");
        let cmd = co.pipeline.command(stuck[0].recovery_cmd_id.as_ref().unwrap()).unwrap();
        assert_eq!(cmd.status, CommandStatus::Acked);
        assert_eq!(co.sim.fault_of("h9-living").unwrap(), None);
        assert_eq!(store.query_series("h9-kitchen", None, i64::MIN, i64::MAX).len(), 60);
    }
}
