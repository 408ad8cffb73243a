use std::path::PathBuf;
use std::time::{Duration, Instant};

use smoothcert::certify::{self, CertifyParams};
use smoothcert::dataset::{self, SyntheticKind, SyntheticModel};
use smoothcert::oracle::{ClassifierOracle, Endpoint, ExternalOptions, ExternalOracle, LinearModel, OracleError, Transport};
use smoothcert::partition::make_diagonal_partition;

const BIN: &str = env!("CARGO_BIN_EXE_smoothcert");

fn options(timeout_ms: u64, connections: usize) -> ExternalOptions {
    ExternalOptions {
        timeout: Duration::from_millis(timeout_ms),
        max_connections: connections,
    }
}

fn serve_endpoint(model_path: &std::path::Path) -> Endpoint {
    Endpoint::new(Transport::Subprocess(vec![
        BIN.into(),
        "serve".into(),
        "--model".into(),
        format!("linear:{}", model_path.display()),
    ]))
}

/// A shell adapter: `script` runs after the child reads the hello line.
fn shell(script: &str) -> Endpoint {
    Endpoint::new(Transport::Subprocess(vec!["sh".into(), "-c".into(), format!("read hello; {script}")]))
}

const READY_2X4: &str = r#"echo '{"type":"ready","classes":2,"input_dim":4}'"#;

fn write_model(dir: &tempfile::TempDir, model: &LinearModel) -> PathBuf {
    let path = dir.path().join("model.txt");
    std::fs::write(&path, model.to_text()).unwrap();
    path
}

#[test]
fn subprocess_server_gives_identical_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, model) = dataset::generate(SyntheticKind::LinearMargin, 32, 2, 4, 5).unwrap();
    let SyntheticModel::Linear(model) = model else { unreachable!() };
    let external = ExternalOracle::connect(serve_endpoint(&write_model(&dir, &model)).expect_input_dim(32), options(10_000, 2))
        .unwrap();
    assert_eq!((external.num_classes(), external.input_dim()), (2, 32));

    let idx = make_diagonal_partition(4, 8).unwrap();
    let mut params = CertifyParams::new(0.5);
    params.n = 3000;
    params.batch_size = 400;
    params.workers = 2;
    for i in 0..ds.len() {
        params.seed = 100 + i as u64;
        let x = ds.image(i).unwrap();
        let local = certify::certify_drs(&model, &model, &x, &idx, &params).unwrap();
        let remote = certify::certify_drs(&external, &external, &x, &idx, &params).unwrap();
        assert_eq!(local, remote, "image {i}");
    }
}

#[test]
fn declared_shape_must_match_expectation() {
    let err = ExternalOracle::connect(shell(&format!("{READY_2X4}; cat >/dev/null")).expect_input_dim(8), options(2000, 1))
        .err()
        .unwrap();
    match err {
        OracleError::HandshakeMismatch { expected, declared } => {
            assert!(expected.contains('8'), "{expected}");
            assert!(declared.contains('4'), "{declared}");
        }
        other => panic!("expected handshake mismatch, got {other}"),
    }
    let err = ExternalOracle::connect(shell(r#"echo '{"type":"ready","classes":1,"input_dim":4}'"#), options(2000, 1))
        .err()
        .unwrap();
    assert!(matches!(err, OracleError::HandshakeMismatch { .. }), "{err}");
}

#[test]
fn truncated_response_is_malformed() {
    let oracle = ExternalOracle::connect(
        shell(&format!(r#"{READY_2X4}; read req; printf '{{"type":"labels","id":0,"lab'"#)),
        options(2000, 1),
    )
    .unwrap();
    let err = oracle.classify_batch(&[0.0; 4], 1).unwrap_err();
    assert!(matches!(err, OracleError::MalformedResponse(_)), "{err}");
}

#[test]
fn silent_adapter_times_out() {
    let oracle = ExternalOracle::connect(shell(&format!("{READY_2X4}; read req; exec sleep 30")), options(300, 1)).unwrap();
    let start = Instant::now();
    let err = oracle.classify_batch(&[0.0; 8], 2).unwrap_err();
    assert!(matches!(err, OracleError::Timeout(_)), "{err}");
    assert!(start.elapsed() < Duration::from_secs(5));
    // Dropping the oracle must not wait for the sleeping child.
    let start = Instant::now();
    drop(oracle);
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn silent_handshake_times_out() {
    let start = Instant::now();
    let err = ExternalOracle::connect(shell("exec sleep 30"), options(300, 1)).err().unwrap();
    assert!(matches!(err, OracleError::Timeout(_)), "{err}");
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn bad_label_payloads_are_rejected() {
    let cases = [
        (r#"{"type":"labels","id":0,"labels":[7]}"#, "outside"),
        (r#"{"type":"labels","id":0,"labels":[0,1]}"#, "labels for"),
        (r#"{"type":"labels","id":9,"labels":[0]}"#, "request"),
        (r#"{"type":"ready","classes":2,"input_dim":4}"#, "expected labels"),
    ];
    for (reply, needle) in cases {
        let oracle =
            ExternalOracle::connect(shell(&format!("{READY_2X4}; read req; echo '{reply}'; cat >/dev/null")), options(2000, 1))
                .unwrap();
        match oracle.classify_batch(&[0.0; 4], 1).unwrap_err() {
            OracleError::MalformedResponse(m) => assert!(m.contains(needle), "{m}"),
            other => panic!("{reply}: expected malformed response, got {other}"),
        }
    }
}

#[test]
fn remote_errors_surface_with_message() {
    let oracle = ExternalOracle::connect(
        shell(&format!(
            r#"{READY_2X4}; read req; echo '{{"type":"error","id":0,"msg":"model exploded"}}'; cat >/dev/null"#
        )),
        options(2000, 1),
    )
    .unwrap();
    match oracle.classify_batch(&[0.0; 4], 1).unwrap_err() {
        OracleError::Remote(m) => assert_eq!(m, "model exploded"),
        other => panic!("expected remote error, got {other}"),
    }
}

#[test]
fn adapter_exit_is_a_transport_failure() {
    let oracle = ExternalOracle::connect(shell(&format!("{READY_2X4}; read req; exit 0")), options(2000, 1)).unwrap();
    let err = oracle.classify_batch(&[0.0; 4], 1).unwrap_err();
    assert!(matches!(err, OracleError::Transport(_)), "{err}");
}

#[test]
fn missing_program_fails_to_connect() {
    let err = ExternalOracle::connect(
        Endpoint::new(Transport::Subprocess(vec!["/nonexistent/adapter".into()])),
        options(1000, 1),
    )
    .err()
    .unwrap();
    assert!(matches!(err, OracleError::Transport(_) | OracleError::Io(_)), "{err}");
}
