use std::fs;
use std::path::Path;

use factconf::numerics::sample_covariance;
use factconf::panel::{load_panel_dir, orient, write_panel, Orientation, Schema};
use factconf::sim::{generate, SimScenario};
use factconf::Error;

fn write_grid(dir: &Path, skip: Option<(u32, u32)>) {
    let mut e = String::from("unit_id,time_id,value\n");
    let mut y = e.clone();
    for u in 1..=2 {
        for t in 1..=2 {
            if skip == Some((u, t)) {
                continue;
            }
            e.push_str(&format!("{u},{t},{}\n", u * 10 + t));
            y.push_str(&format!("{u},{t},{}\n", u * 100 + t));
        }
    }
    fs::write(dir.join("exposure.csv"), e).unwrap();
    fs::write(dir.join("outcome.csv"), y).unwrap();
}

#[test]
fn smallest_complete_grid() {
    let tmp = tempfile::tempdir().unwrap();
    write_grid(tmp.path(), None);
    let p = load_panel_dir(tmp.path(), &Schema::default()).unwrap();
    assert_eq!((p.n_units(), p.n_times()), (2, 2));
    assert_eq!(p.exposures[(1, 0)], 21.0);
    assert_eq!(p.outcomes[(0, 1)], 102.0);
}

#[test]
fn missing_cell_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    write_grid(tmp.path(), Some((2, 1)));
    match load_panel_dir(tmp.path(), &Schema::default()) {
        Err(Error::MissingCell { unit, time, .. }) => assert_eq!((unit.as_str(), time.as_str()), ("2", "1")),
        other => panic!("expected a missing cell, got {other:?}"),
    }
}

#[test]
fn renamed_columns_via_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "site,day,dose\na,1,1.5\na,2,2.5\nb,1,3.5\nb,2,4.5\n";
    fs::write(tmp.path().join("exposure.csv"), body).unwrap();
    fs::write(tmp.path().join("outcome.csv"), body).unwrap();
    let schema = Schema { unit: "site".into(), time: "day".into(), value: "dose".into() };
    let p = load_panel_dir(tmp.path(), &schema).unwrap();
    assert_eq!(p.unit_ids, vec!["a", "b"]);
    assert_eq!(p.exposures[(1, 1)], 4.5);
}

#[test]
fn non_numeric_value_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write_grid(tmp.path(), None);
    fs::write(tmp.path().join("outcome.csv"), "unit_id,time_id,value\n1,1,x\n1,2,1\n2,1,1\n2,2,1\n").unwrap();
    assert!(matches!(load_panel_dir(tmp.path(), &Schema::default()), Err(Error::NonNumericValue { .. })));
}

#[test]
fn harness_panels_round_trip_exactly() {
    for name in ["linear-fixed", "interference", "nonlinear"] {
        let draw = generate(&SimScenario::from_name(name, 0).unwrap(), 4).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_panel(tmp.path(), &draw.panel).unwrap();
        let back = load_panel_dir(tmp.path(), &Schema::default()).unwrap();
        assert_eq!(back, draw.panel, "{name}");
    }
}

#[test]
fn orientation_keeps_replicate_covariance() {
    let draw = generate(&SimScenario::from_name("linear-fixed", 0).unwrap(), 1).unwrap();
    let space = orient(&draw.panel, Orientation::ReplicateOverSpace);
    assert_eq!(space.exposures.shape(), (100, 50));
    let back = orient(&space, Orientation::ReplicateOverTime);
    assert_eq!(back, draw.panel);
    // Covariance across units of the time-indexed vectors, computed both ways.
    let direct = sample_covariance(&draw.panel.exposures, true).unwrap();
    let via = sample_covariance(&space.exposures.transpose(), true).unwrap();
    assert!((direct - via).amax() < 1e-12);
}
