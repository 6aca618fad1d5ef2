use std::fs;

use sbcert_core::rng::StreamSeed;
use sbcert_core::sampling::{draw_dataset, load_dataset, save_dataset, sidecar_path, Dataset};
use sbcert_core::system::{build_platoon, Agent};
use sbcert_core::Error;

fn platoon_dataset(n: usize, n_hat: usize) -> Dataset {
    let p = build_platoon(2, 0.01).unwrap();
    draw_dataset(&p.network.agents[1], &p.regions[1], n, n_hat, &StreamSeed::new(42), 1, "agent-1").unwrap()
}

#[test]
fn round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = platoon_dataset(250, 11);
    let path = dir.path().join("sub/agent-1.csv");
    save_dataset(&d, &path).unwrap();
    assert!(sidecar_path(&path).exists());
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, d);
}

#[test]
fn row_count_is_n_times_n_hat_plus_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = platoon_dataset(37, 5);
    let path = dir.path().join("d.csv");
    save_dataset(&d, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let data_rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(data_rows, 37 * 6);
}

#[test]
fn deterministic_agents_store_one_successor() {
    let agent = Agent::Linear(
        sbcert_core::system::LinearAgent::from_rows(&[vec![0.5]], &[0.0], &[vec![0.02]], &[vec![0.0]], sbcert_core::system::NoiseKind::None)
            .unwrap(),
    );
    let region = sbcert_core::region::RegionSpec::new(
        sbcert_core::region::BoxRegion::from_intervals(&[[1.0, 4.0]]).unwrap(),
        sbcert_core::region::BoxRegion::from_intervals(&[[1.0, 2.0]]).unwrap(),
        sbcert_core::region::BoxRegion::from_intervals(&[[3.5, 4.0]]).unwrap(),
        sbcert_core::region::BoxRegion::from_intervals(&[[0.0, 4.0]]).unwrap(),
    )
    .unwrap();
    let d = draw_dataset(&agent, &region, 10, 11, &StreamSeed::new(1), 0, "a").unwrap();
    assert_eq!(d.n_hat, 1);
    assert!(d.points.iter().all(|p| p.successors.len() == 1));
}

#[test]
fn truncated_file_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let d = platoon_dataset(20, 3);
    let path = dir.path().join("d.csv");
    save_dataset(&d, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // drop the last successor row
    fs::write(&path, lines[..lines.len() - 1].join("\n") + "\n").unwrap();
    let err = load_dataset(&path).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
    // drop whole points
    fs::write(&path, lines[..lines.len() - 8].join("\n") + "\n").unwrap();
    assert!(matches!(load_dataset(&path).unwrap_err(), Error::Parse { .. }));
}

#[test]
fn malformed_number_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = platoon_dataset(5, 2);
    let path = dir.path().join("d.csv");
    save_dataset(&d, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // line 6 (1-based) is the second successor row of point 1
    lines[5] = lines[5].replace('e', "x");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    match load_dataset(&path).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 6),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn tampered_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = platoon_dataset(30, 1);
    let path = dir.path().join("d.csv");
    save_dataset(&d, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let flipped: Vec<String> = text
        .lines()
        .map(|l| if l.starts_with("point,3,") { format!("{}{}", &l[..l.len() - 3], if l.ends_with("0,0") { "1,0" } else { "0,0" }) } else { l.to_string() })
        .collect();
    fs::write(&path, flipped.join("\n") + "\n").unwrap();
    assert!(load_dataset(&path).is_err());
}

#[test]
fn prefixes_share_points() {
    let d = platoon_dataset(40, 2);
    let p = d.prefix(10);
    assert_eq!(p.len(), 10);
    assert_eq!(p.points[..], d.points[..10]);
    // drawing fewer points yields exactly the prefix
    assert_eq!(platoon_dataset(10, 2).points, p.points);
}
