use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn netflow(args: &[&str], env_workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_netflow"));
    cmd.args(args).env_remove("NETFLOW_WORKERS");
    if let Some(w) = env_workers {
        cmd.env("NETFLOW_WORKERS", w);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Small scenario so the whole pipeline runs in seconds.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        r#"seed = 3
out = "out"

[smooth]
samples = 150

[simulate.scenario]
nodes = 3
len = 48
inflow = {{ kind = "balanced", floor = 0.05 }}
baseline = {{ kind = "sinusoid", level = 8.0, amplitude = 0.5, period = 48.0, phase = 12.0 }}
origin_effects = [-0.3, 0.0, 0.3]
destination_effects = [2.0, -0.4, 0.0, 0.4]
affinity_bumps = [{{ origin = 1, destination = 2, center = 20.0, width = 4.0, height = 1.0 }}]
{extra}
"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    std::fs::read(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

const STAGES: [&str; 6] = [
    "simulate", "filter", "smooth", "gravity", "evaluate", "report",
];
const OUTPUTS: [&str; 12] = [
    "flows.csv",
    "occupancy.csv",
    "truth.csv",
    "filtered.csv",
    "smoothed.csv",
    "transitions.csv",
    "gravity.csv",
    "credible.csv",
    "forecasts.csv",
    "scores.csv",
    "report.csv",
    "manifest_report.json",
];

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    for out in ["a", "b"] {
        let o = netflow(
            &[
                "simulate",
                "--config",
                cfg,
                "--out",
                dir.path().join(out).to_str().unwrap(),
            ],
            None,
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "flows.csv",
        "occupancy.csv",
        "truth.csv",
        "manifest_simulate.json",
    ] {
        assert_eq!(
            read(&dir.path().join("a"), f),
            read(&dir.path().join("b"), f),
            "{f}"
        );
    }
    let o = netflow(
        &[
            "simulate",
            "--config",
            cfg,
            "--seed",
            "4",
            "--out",
            dir.path().join("c").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code(&o), 0);
    assert_ne!(
        read(&dir.path().join("a"), "flows.csv"),
        read(&dir.path().join("c"), "flows.csv")
    );
}

#[test]
fn full_pipeline_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    let runs = [
        ("k1", Some("1"), None),
        ("k3", None, Some("3")),
        ("k2", Some("2"), None),
    ];
    for (out, flag, env) in runs {
        let out = dir.path().join(out);
        for stage in STAGES {
            let mut args = vec![stage, "--config", cfg, "--out", out.to_str().unwrap()];
            if let Some(w) = flag {
                args.extend(["--workers", w]);
            }
            let o = netflow(&args, env);
            assert_eq!(
                code(&o),
                0,
                "{stage}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
        }
    }
    for f in OUTPUTS {
        let base = read(&dir.path().join("k1"), f);
        assert!(!base.is_empty());
        assert_eq!(
            base,
            read(&dir.path().join("k3"), f),
            "{f} differs between 1 and 3 workers"
        );
        assert_eq!(
            base,
            read(&dir.path().join("k2"), f),
            "{f} differs between 1 and 2 workers"
        );
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    // Dependency: nothing simulated yet.
    assert_eq!(code(&netflow(&["filter", "--out", out], None)), 4);
    assert_eq!(code(&netflow(&["report", "--out", out], None)), 4);

    // Parse/config errors.
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\ndiscount = 1.7\n").unwrap();
    assert_eq!(
        code(&netflow(
            &["filter", "--config", bad.to_str().unwrap()],
            None
        )),
        2
    );
    assert_eq!(
        code(&netflow(
            &["filter", "--config", "/nonexistent/run.toml"],
            None
        )),
        2
    );
    assert_eq!(code(&netflow(&["bogus"], None)), 2);
    assert_eq!(code(&netflow(&["filter", "--workers", "x"], None)), 2);
    assert_eq!(code(&netflow(&["filter", "--out", out], Some("many"))), 2);

    let flows = dir.path().join("flows.csv");
    std::fs::write(&flows, "t,origin,destination,count\n1,1,0,3\n1,1,0,4\n").unwrap();
    let cfg = dir.path().join("panel.toml");
    std::fs::write(
        &cfg,
        format!("out = \"out\"\n[panel]\nflows = {:?}\n", flows),
    )
    .unwrap();
    let o = netflow(&["filter", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(
        String::from_utf8_lossy(&o.stderr).contains(":3:"),
        "line number reported"
    );

    // Numerical: a prior so diffuse that no gamma matches it.
    std::fs::write(&flows, "t,origin,destination,count\n1,1,0,3\n2,1,0,4\n").unwrap();
    std::fs::write(
        &cfg,
        format!(
            "out = \"out\"\n[model]\nprior_variance = 1e300\n[panel]\nflows = {:?}\n",
            flows
        ),
    )
    .unwrap();
    assert_eq!(
        code(&netflow(
            &["filter", "--config", cfg.to_str().unwrap()],
            None
        )),
        3
    );

    assert_eq!(code(&netflow(&["--help"], None)), 0);
}

#[test]
fn external_panel_without_occupancy() {
    let dir = tempfile::tempdir().unwrap();
    let flows = dir.path().join("flows.csv");
    let mut text = String::from("t,origin,destination,count\n");
    for t in 0..=30 {
        text.push_str(&format!(
            "{t},0,1,{}\n{t},1,0,{}\n{t},1,1,{}\n",
            5 + t % 3,
            4 + t % 2,
            6
        ));
    }
    std::fs::write(&flows, text).unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "out = \"res\"\n[smooth]\nsamples = 100\n[panel]\nflows = {:?}\n",
            flows
        ),
    )
    .unwrap();
    for stage in ["filter", "smooth", "gravity", "evaluate", "report"] {
        let o = netflow(&[stage, "--config", cfg.to_str().unwrap()], None);
        assert_eq!(
            code(&o),
            0,
            "{stage}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let report = String::from_utf8(read(&dir.path().join("res"), "report.csv")).unwrap();
    assert!(report.starts_with("figure,series,index_i,index_j,t,value,lo95,hi95\n"));
    for figure in [
        "rates,observed",
        "rates,filtered",
        "rates,smoothed",
        "transitions,smoothed",
        "gravity,baseline",
        "credible,cv",
    ] {
        assert!(report.contains(figure), "{figure}");
    }
}
