use std::path::Path;
use std::process::{Command, Output};

use geocut_core::io::{ContourFile, GraphCache};
use geocut_core::Point;

fn geocut(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geocut"))
        .current_dir(dir)
        .args(args)
        .env_remove("GEOCUT_ZETA")
        .output()
        .expect("run geocut")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn synth_disk(dir: &Path, size: &str) {
    let o = geocut(dir, &["synth", "--shape", "disk", "--size", size, "--sigma", "0.025", "--out-image", "d.png", "--out-gt", "g.png"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn build_graph_on_blank_and_disk() {
    let dir = tempfile::tempdir().unwrap();
    let blank = image::GrayImage::from_pixel(40, 30, image::Luma([128]));
    blank.save(dir.path().join("blank.png")).unwrap();
    let o = geocut(dir.path(), &["build-graph", "blank.png", "-o", "blank.json"]);
    assert_eq!(code(&o), 0);
    assert_eq!(GraphCache::load(&dir.path().join("blank.json")).unwrap().graph.node_count(), 0);

    synth_disk(dir.path(), "96");
    let o = geocut(dir.path(), &["build-graph", "d.png", "-o", "graph.json"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("nodes "));
    assert!(GraphCache::load(&dir.path().join("graph.json")).unwrap().graph.node_count() >= 1);
}

#[test]
fn input_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    synth_disk(dir.path(), "64");
    assert_eq!(code(&geocut(dir.path(), &["build-graph", "missing.png", "-o", "x.json"])), 2);
    assert_eq!(code(&geocut(dir.path(), &["build-graph", "d.png", "--zeta", "0", "-o", "x.json"])), 2);
    assert_eq!(code(&geocut(dir.path(), &["build-graph", "d.png", "--zeta", "-3", "-o", "x.json"])), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_geocut"))
        .current_dir(dir.path())
        .args(["build-graph", "d.png", "-o", "x.json"])
        .env("GEOCUT_ZETA", "-1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(code(&geocut(dir.path(), &["build-graph", "d.png", "--metric", "bogus", "-o", "x.json"])), 2);
    std::fs::write(dir.path().join("bad.toml"), "[graph]\nbeta = -1.0\n").unwrap();
    assert_eq!(code(&geocut(dir.path(), &["build-graph", "d.png", "--config", "bad.toml", "-o", "x.json"])), 2);
    assert_eq!(code(&geocut(dir.path(), &["build-graph", "d.png", "-o", "no/such/dir/x.json"])), 2);
}

#[test]
fn segment_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_disk(d, "96");
    assert_eq!(code(&geocut(d, &["build-graph", "d.png", "-o", "graph.json"])), 0);

    let o = geocut(d, &["segment", "d.png", "--graph", "graph.json", "--landmark", "47.5,47.5", "-o", "c.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("energy") && text.contains("grouping"), "{text}");
    let c: ContourFile = serde_json::from_str(&std::fs::read_to_string(d.join("c.json")).unwrap()).unwrap();
    let poly = geocut_core::Curve::closed(c.polygon.clone()).unwrap();
    assert!(poly.len() >= 3 && poly.contains_point(Point::new(47.5, 47.5)).unwrap());
    assert!(d.join("c.png").exists());

    let again = geocut(d, &["segment", "d.png", "--graph", "graph.json", "--landmark", "47.5,47.5", "-o", "c2.json", "--overlay", "o2.png"]);
    assert_eq!(code(&again), 0);
    assert_eq!(std::fs::read(d.join("c.json")).unwrap(), std::fs::read(d.join("c2.json")).unwrap());

    assert_eq!(code(&geocut(d, &["segment", "d.png", "--graph", "graph.json", "--landmark", "500,20", "-o", "x.json"])), 3);
    assert_eq!(code(&geocut(d, &["segment", "d.png", "--graph", "graph.json", "--landmark", "-4,20", "-o", "x.json"])), 3);
    // A vertex away from the gate of the closed disk trace lies on an impassable proposal.
    let on_edge = c.polygon[c.polygon.len() / 2];
    let arg = format!("{},{}", on_edge.x.round(), on_edge.y.round());
    assert_eq!(code(&geocut(d, &["segment", "d.png", "--graph", "graph.json", "--landmark", &arg, "-o", "x.json"])), 3);

    // Background click with no edge around it: the cut reaches the border without crossing anything.
    assert_eq!(code(&geocut(d, &["segment", "d.png", "--graph", "graph.json", "--landmark", "3,3", "-o", "x.json"])), 4);

    // Cache and image of different sizes.
    assert_eq!(code(&geocut(d, &["synth", "--size", "64", "--out-image", "small.png", "--out-gt", "small_gt.png"])), 0);
    assert_eq!(code(&geocut(d, &["segment", "small.png", "--graph", "graph.json", "--landmark", "30,30", "-o", "x.json"])), 2);
}

#[test]
fn eval_table_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |out: &str| {
        let o = geocut(d, &["eval", "--size", "64", "--landmarks", "2", "--seed", "4", "--csv", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a.lines().count(), 16);
    assert_eq!(a, run("b.csv"));
    assert_eq!(std::fs::read_to_string(d.join("a.csv")).unwrap(), a);

    synth_disk(d, "64");
    let o = geocut(d, &["eval", "--image", "d.png", "--gt", "g.png", "--landmarks", "2", "--json", "r.json"]);
    assert_eq!(code(&o), 0);
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(rows[0]["image"], "d");
    assert_eq!(code(&geocut(d, &["eval", "--image", "d.png", "--landmarks", "2"])), 2);
    assert_eq!(code(&geocut(d, &["eval", "--image", "d.png", "--gt", "nope.png"])), 2);
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mk = |seed: &str, name: &str| {
        let o = geocut(d, &["synth", "--shape", "star", "--size", "64", "--sigma", "0.1", "--seed", seed, "--out-image", name, "--out-gt", "gt.png"]);
        assert_eq!(code(&o), 0);
        std::fs::read(d.join(name)).unwrap()
    };
    assert_eq!(mk("1", "a.png"), mk("1", "b.png"));
    assert_ne!(mk("1", "a.png"), mk("2", "c.png"));
    let clean = geocut(d, &["synth", "--shape", "c-shape", "--size", "64", "--sigma", "0", "--out-image", "c.pgm", "--out-gt", "cg.pgm"]);
    assert_eq!(code(&clean), 0);
    let img = image::open(d.join("c.pgm")).unwrap().to_luma8();
    assert!(img.pixels().all(|p| p[0] == 255 || p[0] == 128));
    assert_eq!(code(&geocut(d, &["synth", "--shape", "hexagon", "--out-image", "h.png", "--out-gt", "hg.png"])), 2);
}
