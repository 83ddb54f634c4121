use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn atp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atp"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_i1_exact() {
    let o = atp(&[
        "solve",
        "--instance",
        path(&data("i1.json")),
        "--method",
        "exact",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("plan: [[3,2,0],[0,1,4]]"), "{out}");
    assert!(out.contains("objective: 37\n"));
    assert!(out.contains("method: exact"));
}

#[test]
fn solve_fp_with_verify_reports_gap() {
    let o = atp(&[
        "solve",
        "--instance",
        path(&data("i1.json")),
        "--method",
        "fp",
        "--verify",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let gap: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("gap: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(gap <= 0.37, "{out}");
}

#[test]
fn solve_uniform_gains() {
    let o = atp(&["solve", "--instance", path(&data("uniform.json"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("objective: 25\n"));
}

#[test]
fn solve_rejects_bad_input() {
    let o = atp(&["solve", "--instance", path(&data("unbalanced.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("UnbalancedInstance"));

    let o = atp(&["solve", "--instance", path(&data("frozen.json"))]);
    assert_eq!(o.status.code(), Some(2), "not an instance document");

    let o = atp(&["solve", "--instance", "/nonexistent/instance.json"]);
    assert_eq!(o.status.code(), Some(2));

    let o = atp(&[
        "solve",
        "--instance",
        path(&data("i1.json")),
        "--method",
        "simplex",
    ]);
    assert_eq!(o.status.code(), Some(2), "clap usage errors exit 2");
}

#[test]
fn oracle_lists_vertices() {
    let o = atp(&["oracle", "--instance", path(&data("i1.json"))]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("6 vertices"), "{out}");
    let marked: Vec<&str> = out.lines().filter(|l| l.starts_with('*')).collect();
    assert_eq!(marked.len(), 1);
    assert!(
        marked[0].starts_with("* (1,4) plan [[3,2,0],[0,1,4]] objective 37"),
        "{}",
        marked[0]
    );

    let o = atp(&["oracle", "--instance", path(&data("unit2.json"))]);
    assert!(stdout(&o).starts_with("2 vertices"));
}

#[test]
fn oracle_refuses_large_problems() {
    let o = atp(&["oracle", "--instance", path(&data("six.json"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("DimensionTooLarge"));
}

#[test]
fn run_writes_golden_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let o = atp(&[
        "run",
        "--config",
        path(&data("small_run.json")),
        "--seeds",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let got = std::fs::read_to_string(&out).unwrap();
    let want = std::fs::read_to_string(data("small_run.golden.csv")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn run_noiseless_solution_before_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let o = atp(&[
        "run",
        "--config",
        path(&data("noiseless.json")),
        "--seeds",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let value = |prefix: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(prefix)).unwrap();
        let v = line.rsplit(": ").next().unwrap();
        if v == "not reached" {
            f64::INFINITY
        } else {
            v.parse().unwrap()
        }
    };
    let coincidence = value("median rounds to coincidence");
    let angle = value("median rounds to angle");
    assert!(coincidence <= angle, "{text}");
}

#[test]
fn run_with_total_dropout_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let o = atp(&[
        "run",
        "--config",
        path(&data("frozen.json")),
        "--seeds",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = std::fs::read_to_string(&out).unwrap();
    rdr = rdr
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().to_string() + "\n")
        .collect();
    let values: Vec<&str> = rdr.lines().collect();
    assert_eq!(values.len(), 20);
    assert!(values.iter().all(|v| *v == values[0]), "{values:?}");
}

#[test]
fn run_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let o = atp(&[
        "run",
        "--config",
        path(&data("noiseless.json")),
        "--seeds",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = atp(&[
        "run",
        "--config",
        path(&data("human.json")),
        "--seeds",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = atp(&[
        "run",
        "--config",
        path(&data("i1.json")),
        "--seeds",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_answers_healthz() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_atp"))
        .args([
            "serve",
            "--listen",
            "127.0.0.1:0",
            "--data",
            dir.path().to_str().unwrap(),
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .unwrap()
        .to_string();
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "GET /healthz HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
}

#[test]
fn serve_fails_on_occupied_port() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let o = atp(&[
        "serve",
        "--listen",
        &addr,
        "--data",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("cannot bind"));
}

#[test]
fn serve_fails_on_unusable_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    std::fs::write(&file, "x").unwrap();
    let o = atp(&[
        "serve",
        "--listen",
        "127.0.0.1:0",
        "--data",
        file.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("data dir"));
}
