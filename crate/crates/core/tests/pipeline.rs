mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::toy_dir;
use routeguard::experiment::{AllocationKind, Pipeline, ReportRow, StageName};

fn run_toy(out: &Path, seed: Option<u64>) {
    Pipeline::from_file(&toy_dir().join("toy.toml"), seed, Some(out.to_path_buf())).unwrap().run_all().unwrap();
}

fn report(out: &Path) -> Vec<ReportRow> {
    csv::Reader::from_path(out.join("report.csv")).unwrap().deserialize().map(Result::unwrap).collect()
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_toy(a.path(), None);
    run_toy(b.path(), None);
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 15);
    for n in &names {
        assert_eq!(fs::read(a.path().join(n)).unwrap(), fs::read(b.path().join(n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn seed_override_changes_samples_only() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_toy(a.path(), None);
    run_toy(b.path(), Some(7));
    let read = |d: &Path, n: &str| fs::read(d.join(n)).unwrap();
    assert_eq!(read(a.path(), "allocations.csv"), read(b.path(), "allocations.csv"));
    assert_ne!(read(a.path(), "evaluations.csv"), read(b.path(), "evaluations.csv"));
}

#[test]
fn report_covers_every_budget_and_arm() {
    let out = tempfile::tempdir().unwrap();
    run_toy(out.path(), None);
    let rows: Vec<ReportRow> = report(out.path()).into_iter().filter(|r| r.type_id == "all").collect();
    for budget in [0.0, 1.0, 2.0, 3.0] {
        for kind in [AllocationKind::Optimized, AllocationKind::Random] {
            let r = rows.iter().find(|r| r.budget == budget && r.kind == kind);
            let r = r.unwrap_or_else(|| panic!("missing {kind:?} at {budget}"));
            assert_eq!(r.trials, 600);
            assert!(r.mean_true_cost >= r.full_info_cost - 1e-9);
        }
    }
}

#[test]
fn stages_run_one_at_a_time() {
    let out = tempfile::tempdir().unwrap();
    let p = Pipeline::from_file(&toy_dir().join("toy.toml"), None, Some(out.path().to_path_buf())).unwrap();
    let err = p.run_stage(StageName::Routes).unwrap_err().to_string();
    assert!(err.contains("routes"), "{err}");
    for s in StageName::ALL {
        p.run_stage(s).unwrap();
    }
    assert!(out.path().join("manifest.json").exists());
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_routeguard");
    let out = tempfile::tempdir().unwrap();
    let ok = Command::new(bin)
        .args(["run", "--jobs", "2", "--config"])
        .arg(toy_dir().join("toy.toml"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.path().join("report.csv").exists());

    let bad = tempfile::tempdir().unwrap();
    let cfg = bad.path().join("bad.toml");
    fs::write(&cfg, fs::read_to_string(toy_dir().join("toy.toml")).unwrap().replace("toy_net.tntp", "missing.tntp")).unwrap();
    let fail = Command::new(bin).args(["ingest", "--config"]).arg(&cfg).arg("--out").arg(bad.path()).output().unwrap();
    assert!(!fail.status.success());
    let msg = String::from_utf8_lossy(&fail.stderr);
    assert!(msg.contains("ingest"), "{msg}");

    let unknown = Command::new(bin).args(["run", "--stage", "nope", "--config"]).arg(&cfg).output().unwrap();
    assert!(!unknown.status.success());
}

/// Grid city with GeoJSON node coordinates, written in TNTP form.
fn write_grid_city(dir: &Path, side: usize) {
    let id = |r: usize, c: usize| r * side + c + 1;
    let mut links = Vec::new();
    for r in 0..side {
        for c in 0..side {
            if c + 1 < side {
                links.push((id(r, c), id(r, c + 1)));
                links.push((id(r, c + 1), id(r, c)));
            }
            if r + 1 < side {
                links.push((id(r, c), id(r + 1, c)));
                links.push((id(r + 1, c), id(r, c)));
            }
        }
    }
    let n = side * side;
    let mut net = format!(
        "<NUMBER OF ZONES> 4\n<NUMBER OF NODES> {n}\n<FIRST THRU NODE> 1\n<NUMBER OF LINKS> {}\n<END OF METADATA>\n~ init term capacity length fft B power speed toll type ;\n",
        links.len()
    );
    for (i, (t, h)) in links.iter().enumerate() {
        let cap = 800.0 + 100.0 * (i % 7) as f64;
        let fft = 1.0 + 0.1 * (i % 5) as f64;
        net.push_str(&format!("{t} {h} {cap} 1 {fft} 0.15 4 0 0 1 ;\n"));
    }
    fs::write(dir.join("grid_net.tntp"), net).unwrap();
    let (a, b, c, d) = (id(0, 0), id(side - 1, side - 1), id(0, side - 1), id(side - 1, 0));
    let trips = format!(
        "<NUMBER OF ZONES> {n}\n<TOTAL OD FLOW> 0\n<END OF METADATA>\nOrigin {a}\n{b} : 900 ;\n{c} : 10 ;\nOrigin {c}\n{d} : 700 ;\n"
    );
    fs::write(dir.join("grid_trips.tntp"), trips).unwrap();
    let features: Vec<String> = (0..side)
        .flat_map(|r| (0..side).map(move |c| (r, c)))
        .map(|(r, c)| {
            format!(
                r#"{{"type":"Feature","properties":{{"id":{}}},"geometry":{{"type":"Point","coordinates":[{}.0,{}.0]}}}}"#,
                id(r, c),
                c,
                r
            )
        })
        .collect();
    fs::write(dir.join("grid_nodes.geojson"), format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, features.join(","))).unwrap();
}

#[test]
fn coordinate_partition_scenario_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    write_grid_city(dir.path(), 9);
    let cfg = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/anaheim/anaheim.toml"))
        .unwrap()
        .replace("../../../../data/Anaheim/Anaheim_net.tntp", "grid_net.tntp")
        .replace("../../../../data/Anaheim/Anaheim_trips.tntp", "grid_trips.tntp")
        .replace("../../../../data/Anaheim/anaheim_nodes.geojson", "grid_nodes.geojson")
        .replace("trials = 100", "trials = 5");
    let path = dir.path().join("grid.toml");
    fs::write(&path, cfg).unwrap();
    let out = dir.path().join("out");
    Pipeline::from_file(&path, None, None).unwrap().run_all().unwrap();
    let allocs: Vec<routeguard::experiment::AllocationRecord> =
        serde_json::from_reader(fs::File::open(out.join("allocations.json")).unwrap()).unwrap();
    let counts: Vec<usize> = allocs.iter().map(|a| a.selected.len()).collect();
    assert_eq!(counts[0], 27);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
    let routed: routeguard::Network = serde_json::from_reader(fs::File::open(out.join("routed_network.json")).unwrap()).unwrap();
    assert_eq!(routed.od_pairs().len(), 2);
    assert_eq!(routed.num_routes(), 8);
    let rows = report(&out);
    assert!(rows.iter().any(|r| r.budget == 5.0 && r.kind == AllocationKind::Random));
}
