mod common;

use std::time::{Duration, Instant};

use common::*;

#[test]
fn serve_answers_then_shuts_down_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hub.cfg");
    std::fs::write(&cfg, hub_config(&dir.path().join("data"), Some("h1_ventilated"))).unwrap();
    let started = Instant::now();
    let hub = Hub::start(&cfg);
    let resp = hub.get("/api/v1/devices");
    assert_eq!(resp.status(), 200);
    assert!(started.elapsed() < Duration::from_secs(2), "{:?}", started.elapsed());
    std::thread::sleep(Duration::from_millis(1500));
    assert!(hub.interrupt().success());
    let store = dalton_core::store::Store::open(dir.path().join("data"), Default::default()).unwrap();
    assert!(store.reading_count() >= 5);
}

#[test]
fn bad_config_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hub.cfg");
    std::fs::write(&cfg, "[pipeline]\nstuck_runs = 3\n").unwrap();
    let out = dalton(&["serve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stuck_runs"));

    std::fs::write(&cfg, "[gateway]\nheartbeat_s = 0\n").unwrap();
    let out = dalton(&["serve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gateway.heartbeat_s"));
}

#[test]
fn busy_port_exits_3() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hub.cfg");
    std::fs::write(&cfg, format!("data_dir = \"data\"\n[gateway]\nbind = \"127.0.0.1:{port}\"\n")).unwrap();
    let out = dalton(&["serve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn data_dir_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hub.cfg");
    std::fs::write(&cfg, "data_dir = \"ignored\"\n").unwrap();
    std::env::set_var("DALTON_DATA_DIR", dir.path().join("elsewhere"));
    let loaded = dalton_cli::config::HubConfig::load(&cfg).unwrap();
    std::env::remove_var("DALTON_DATA_DIR");
    assert_eq!(loaded.data_dir, dir.path().join("elsewhere"));
}

#[test]
fn sim_is_deterministic_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let log = dir.path().join(name);
        let out = dalton(&[
            "sim",
            scenario("h1_pull_inward").to_str().unwrap(),
            "--duration",
            "10m",
            "--seed",
            seed,
            "--fast",
            "--offline",
            "--out",
            log.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (std::fs::read(log).unwrap(), String::from_utf8(out.stdout).unwrap())
    };
    let (a, summary) = run("a.ndjson", "7");
    let (b, _) = run("b.ndjson", "7");
    let (c, _) = run("c.ndjson", "8");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(summary.contains("devices           5"), "{summary}");
    assert!(summary.contains("readings emitted  3000"), "{summary}");
    assert!(summary.contains("faults injected   0"), "{summary}");
}

#[test]
fn shipped_scenarios_run_fast() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["h1_ventilated", "h1_natural", "h1_pull_inward"] {
        let started = Instant::now();
        let log = dir.path().join(format!("{name}.ndjson"));
        let out = dalton(&["sim", scenario(name).to_str().unwrap(), "--fast", "--offline", "--out", log.to_str().unwrap()]);
        assert!(out.status.success());
        assert!(started.elapsed() < Duration::from_secs(60));
    }
}

#[test]
fn unknown_scenario_exits_2() {
    let out = dalton(&["sim", "no-such.scn", "--offline", "--fast"]);
    assert_eq!(out.status.code(), Some(2));
}

fn sim_log(dir: &std::path::Path, name: &str, duration: &str) -> std::path::PathBuf {
    let log = dir.join(format!("{name}.ndjson"));
    let out = dalton(&[
        "sim",
        scenario(name).to_str().unwrap(),
        "--duration",
        duration,
        "--fast",
        "--offline",
        "--out",
        log.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    log
}

#[test]
fn hhi_compares_inputs_side_by_side() {
    let dir = tempfile::tempdir().unwrap();
    let v = sim_log(dir.path(), "h1_ventilated", "2h");
    let p = sim_log(dir.path(), "h1_pull_inward", "2h");
    let out_file = dir.path().join("points.ndjson");
    let calib = repo_root().join("calibration/default.json");
    let out = dalton(&[
        "hhi",
        v.to_str().unwrap(),
        p.to_str().unwrap(),
        "--calib",
        calib.to_str().unwrap(),
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    let mean = |label: &std::path::Path| -> f64 {
        let row = table.lines().find(|l| l.starts_with(label.to_str().unwrap())).unwrap();
        row.split_whitespace().nth(2).unwrap().parse().unwrap()
    };
    assert!(mean(&v) > mean(&p), "{table}");
    let points: Vec<serde_json::Value> = std::fs::read_to_string(&out_file)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(points.len(), 2 * 111);
    assert!(points.iter().all(|p| p["input"].is_string() && p["category"].is_string() && p.get("iaqi").is_none()));
}

#[test]
fn hhi_single_device_adds_iaqi_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let log = sim_log(dir.path(), "single_device", "1h");
    let csv = dir.path().join("points.csv");
    let out = dalton(&["hhi", log.to_str().unwrap(), "--stride", "5m", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("mean_iaqi"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "input,ts_ms,hhi,c1,c2,category,device_count,iaqi");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| !r.ends_with(',')));
}

#[test]
fn hhi_clean_trace_is_all_healthy() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("clean.ndjson");
    let lines: Vec<String> = (0..1200)
        .map(|i| {
            format!(
                r#"{{"device_id":"h1-a","seq":{},"ts_ms":{},"values":{{"co2_ppm":415,"voc_ppb":220,"pm2_5_ugm3":0,"pm10_ugm3":0,"temp_c":24,"rh_pct":50}}}}"#,
                i + 1,
                1_700_000_000_000i64 + i * 1000
            )
        })
        .collect();
    std::fs::write(&log, lines.join("\n")).unwrap();
    let out = dalton(&["hhi", log.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 11);
    assert!(stdout.lines().all(|l| l.contains("\"hhi\":1000.0")));
    let table = String::from_utf8(out.stderr).unwrap();
    let row = table.lines().nth(1).unwrap();
    assert!(row.contains("100.0%        0.0%        0.0%"), "{table}");
}

#[test]
fn hhi_missing_calibration_entries_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let log = sim_log(dir.path(), "single_device", "15m");
    let mut cal: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(repo_root().join("calibration/default.json")).unwrap()).unwrap();
    cal["bounds"].as_object_mut().unwrap().remove("voc_ppb");
    let calib = dir.path().join("partial.json");
    std::fs::write(&calib, cal.to_string()).unwrap();
    let out = dalton(&["hhi", log.to_str().unwrap(), "--calib", calib.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("voc_ppb"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn hhi_reads_a_store_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hub.cfg");
    std::fs::write(&cfg, hub_config(&dir.path().join("data"), Some("h1_ventilated"))).unwrap();
    let hub = Hub::start(&cfg);
    std::thread::sleep(Duration::from_millis(2500));
    assert!(hub.interrupt().success());
    let mut cal: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(repo_root().join("calibration/default.json")).unwrap()).unwrap();
    cal["tau_ms"] = 2000.into();
    cal["stride_ms"] = 1000.into();
    let calib = dir.path().join("short.json");
    std::fs::write(&calib, cal.to_string()).unwrap();
    let out = dalton(&["hhi", dir.path().join("data").to_str().unwrap(), "--calib", calib.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().lines().count() >= 1);
}
