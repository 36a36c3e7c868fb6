use wbsr::io::read_matrix_file;
use wbsr::pipeline::{Experiment, ExperimentConfig, RecoveryReport, REPORT_SCHEMA_VERSION};
use wbsr::IndexSet;

const CONFIG: &str = r#"
seed = 12
s = 16.0
p = 0.8
mesh_n = 63
epsilon = 5e-4
m_test = 30

[operator]
mean = { breakpoints = [0.5], values = [1.0, 2.0] }
amplitude = 0.1
decay = { kind = "geometric", q = 0.5 }

[weights]
rule = "polynomial"
c = 1.2
alpha = 0.5

[solver]
dual_tolerance = 1e-9

[outputs]
report = "run.json"
"#;

#[test]
fn written_outputs_are_consistent() {
    let config = ExperimentConfig::from_toml_str(CONFIG).unwrap();
    let exp = Experiment::run(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    exp.write_outputs(dir.path()).unwrap();

    let text = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
    let report: RecoveryReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.schema_version, REPORT_SCHEMA_VERSION);
    assert_eq!(report.config, config);
    assert_eq!(report.n_lambda, exp.lambda.len());
    assert!(!report.degraded);
    assert!(report.errors.linf_rel < 0.02, "{:?}", report.errors);

    let lambda = IndexSet::from_text(&std::fs::read_to_string(dir.path().join("lambda.txt")).unwrap()).unwrap();
    assert_eq!(lambda.members(), exp.lambda.members());
    assert!(lambda.is_downward_closed());

    let nodal = read_matrix_file(dir.path().join("coefficients.csv")).unwrap();
    assert_eq!(nodal.shape(), (exp.lambda.len(), 63));
    // the mean mode carries the bulk of the solution and is positive for a positive load
    assert!(nodal.row(0).iter().all(|&v| v > 0.0));
}
