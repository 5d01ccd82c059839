mod common;

use common::{fixture, identity_stub, script, STUB_ARGS};
use fairgen::synthesis::{run_external, ExternalPhase, SynthesisError, SynthesizerSpec};
use fairgen::table::{load_csv, DataTable, Schema};

fn train_table(rows: usize) -> (common::Fixture, DataTable) {
    let fx = fixture(rows, 11);
    let schema = Schema::load(&fx.schema).unwrap();
    let table = load_csv(&fx.data, &schema).unwrap();
    (fx, table)
}

#[test]
fn identity_stub_round_trips() {
    let (fx, train) = train_table(40);
    let stub = identity_stub(fx.dir.path());
    let workdir = fx.path("work");
    let spec = SynthesizerSpec::external(stub.to_string_lossy(), 0);
    let result = run_external(&spec, &train, 25, 7, &workdir).unwrap();
    assert_eq!(result.table.len(), 25);
    assert_eq!(result.table.rows(), &train.rows()[..25]);
    assert!(result.log.contains("fitted with seed 7"));
    assert_eq!(std::fs::read_to_string(workdir.join("run.log")).unwrap(), result.log);
    assert_eq!(result.model_fingerprint.len(), 64);
    let written: Schema = Schema::load(workdir.join("schema.json")).unwrap();
    assert_eq!(&written, train.schema());
}

#[test]
fn arguments_follow_the_protocol_exactly() {
    let (fx, train) = train_table(20);
    let argv = fx.path("argv.txt");
    let stub = script(
        fx.dir.path(),
        "recorder.sh",
        &format!(
            r#"echo "$@" >> {argv}
{STUB_ARGS}
case $phase in
  fit) mkdir -p "$model";;
  sample) head -n $((n + 1)) "$(dirname "$model")/train.csv" > "$out";;
esac
"#,
            argv = argv.display()
        ),
    );
    let workdir = fx.path("wd");
    // a command prefix with its own arguments is split shell-style
    let spec = SynthesizerSpec::external(format!("sh {}", stub.display()), 0);
    run_external(&spec, &train, 5, 42, &workdir).unwrap();
    let wd = workdir.display();
    let expected = format!(
        "fit --data {wd}/train.csv --schema {wd}/schema.json --model-dir {wd}/model --seed 42\n\
         sample --model-dir {wd}/model --n 5 --out {wd}/synth.csv --seed 42\n"
    );
    assert_eq!(std::fs::read_to_string(argv).unwrap(), expected);
}

#[test]
fn nonzero_exit_is_command_failed_with_stderr() {
    let (fx, train) = train_table(20);
    let stub = script(fx.dir.path(), "crash.sh", "echo 'out of memory in fit' >&2\nexit 3\n");
    let spec = SynthesizerSpec::external(stub.to_string_lossy(), 0);
    let workdir = fx.path("wd");
    match run_external(&spec, &train, 5, 0, &workdir) {
        Err(SynthesisError::CommandFailed { phase, code, diagnostics }) => {
            assert_eq!(phase, ExternalPhase::Fit);
            assert_eq!(code, Some(3));
            assert!(diagnostics.contains("out of memory in fit"));
        }
        other => panic!("expected CommandFailed, got {other:?}"),
    }
    assert!(std::fs::read_to_string(workdir.join("run.log")).unwrap().contains("out of memory in fit"));
}

#[test]
fn sample_phase_failure_names_the_phase() {
    let (fx, train) = train_table(20);
    let stub = script(
        fx.dir.path(),
        "half.sh",
        &format!("{STUB_ARGS}\nif [ $phase = sample ]; then echo 'no model' >&2; exit 1; fi\nmkdir -p \"$model\"\n"),
    );
    let spec = SynthesizerSpec::external(stub.to_string_lossy(), 0);
    assert!(matches!(
        run_external(&spec, &train, 5, 0, &fx.path("wd")),
        Err(SynthesisError::CommandFailed { phase: ExternalPhase::Sample, code: Some(1), .. })
    ));
}

#[test]
fn missing_command_is_command_failed() {
    let (fx, train) = train_table(20);
    let spec = SynthesizerSpec::external("/definitely/not/a/generator", 0);
    assert!(matches!(
        run_external(&spec, &train, 5, 0, &fx.path("wd")),
        Err(SynthesisError::CommandFailed { phase: ExternalPhase::Fit, code: None, .. })
    ));
}

#[test]
fn unknown_category_is_schema_mismatch() {
    let (fx, train) = train_table(20);
    let stub = script(
        fx.dir.path(),
        "alien.sh",
        &format!(
            "{STUB_ARGS}\ncase $phase in\n  fit) mkdir -p \"$model\";;\n  sample) printf 'age,hours,workclass,sex,race,income\\n30,40,Martian,Male,White,>50K\\n' > \"$out\";;\nesac\n"
        ),
    );
    let spec = SynthesizerSpec::external(stub.to_string_lossy(), 0);
    match run_external(&spec, &train, 1, 0, &fx.path("wd")) {
        Err(SynthesisError::SchemaMismatch(inner)) => assert!(inner.to_string().contains("Martian")),
        other => panic!("expected SchemaMismatch, got {other:?}"),
    }
}

#[test]
fn missing_column_is_schema_mismatch() {
    let (fx, train) = train_table(20);
    let stub = script(
        fx.dir.path(),
        "narrow.sh",
        &format!(
            "{STUB_ARGS}\ncase $phase in\n  fit) mkdir -p \"$model\";;\n  sample) printf 'age,hours\\n30,40\\n' > \"$out\";;\nesac\n"
        ),
    );
    let spec = SynthesizerSpec::external(stub.to_string_lossy(), 0);
    assert!(matches!(run_external(&spec, &train, 1, 0, &fx.path("wd")), Err(SynthesisError::SchemaMismatch(_))));
}

#[test]
fn wrong_row_count_and_missing_output_violate_the_protocol() {
    let (fx, train) = train_table(30);
    let short = script(
        fx.dir.path(),
        "short.sh",
        &format!("{STUB_ARGS}\ncase $phase in\n  fit) mkdir -p \"$model\"; cp \"$data\" \"$model/t.csv\";;\n  sample) head -n 3 \"$model/t.csv\" > \"$out\";;\nesac\n"),
    );
    let silent = script(fx.dir.path(), "silent.sh", "exit 0\n");
    for command in [short, silent] {
        let spec = SynthesizerSpec::external(command.to_string_lossy(), 0);
        assert!(matches!(
            run_external(&spec, &train, 10, 0, &fx.path("wd")),
            Err(SynthesisError::ProtocolViolation(_))
        ));
    }
}

#[test]
fn zero_rows_are_rejected_before_launch() {
    let (fx, train) = train_table(10);
    let spec = SynthesizerSpec::external(identity_stub(fx.dir.path()).to_string_lossy(), 0);
    assert!(matches!(run_external(&spec, &train, 0, 0, &fx.path("wd")), Err(SynthesisError::InvalidSpec(_))));
}

#[test]
fn synthesize_dispatches_to_the_external_driver() {
    let (fx, train) = train_table(30);
    let spec = SynthesizerSpec::external(identity_stub(fx.dir.path()).to_string_lossy(), 5);
    let result = spec.synthesize(&train, 30, 1, &fx.path("wd")).unwrap();
    assert_eq!(result.table.rows(), train.rows());
    assert_eq!(result.rows_requested, 30);
}
