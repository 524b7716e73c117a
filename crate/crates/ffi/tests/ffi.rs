use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use looped_mlp_ffi::*;

const COUNTDOWN: &str = "
.data n 3
.data one 1
.text
loop: SUBLEQ one n HALT
      SUBLEQ @0 @0 loop
";

fn last_error() -> String {
    unsafe { CStr::from_ptr(lm_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn machine(source: &str, backend: LmBackend) -> *mut LmMachine {
    let src = CString::new(source).unwrap();
    let mut m = ptr::null_mut();
    let status = unsafe { lm_machine_new(src.as_ptr(), 4, 8, 8, 8, backend as u32, &mut m) };
    assert_eq!(status, LmStatus::Ok, "{}", last_error());
    m
}

#[test]
fn run_and_read_back() {
    for backend in [LmBackend::Mlp, LmBackend::MlpLowered, LmBackend::Oracle] {
        let m = machine(COUNTDOWN, backend);
        let (mut iterations, mut halted) = (0u64, 0i32);
        unsafe {
            assert_eq!(
                lm_machine_run(m, 100, &mut iterations, &mut halted),
                LmStatus::Ok
            );
            assert_eq!(halted, 1);
            assert_eq!(iterations, 5);
            let mut n = -1;
            assert_eq!(lm_machine_read_word(m, 1, &mut n), LmStatus::Ok);
            assert_eq!(n, 0);
            let name = CString::new("one").unwrap();
            assert_eq!(
                lm_machine_read_symbol(m, name.as_ptr(), &mut n),
                LmStatus::Ok
            );
            assert_eq!(n, 1);
            let mut pc = 0usize;
            assert_eq!(lm_machine_pc(m, &mut pc), LmStatus::Ok);
            assert_eq!(pc, 10);
            lm_machine_free(m);
        }
    }
}

#[test]
fn stepping_reports_halt() {
    let m = machine(".text\nSUBLEQ @0 @0 HALT\n", LmBackend::Mlp);
    let mut halted = 0;
    unsafe {
        assert_eq!(lm_machine_step(m, &mut halted), LmStatus::Ok);
        assert_eq!(halted, 1);
        assert_eq!(lm_machine_step(m, ptr::null_mut()), LmStatus::Ok);
        lm_machine_free(m);
    }
}

#[test]
fn errors_set_status_and_message() {
    let bad = CString::new(".text\nSUBLEQ missing missing HALT\n").unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(
            lm_machine_new(bad.as_ptr(), 4, 8, 8, 8, 0, &mut m),
            LmStatus::Assembly
        );
        assert!(last_error().contains("missing"), "{}", last_error());
        assert!(m.is_null());
        let ok = CString::new(COUNTDOWN).unwrap();
        assert_eq!(
            lm_machine_new(ok.as_ptr(), 4, 8, 8, 8, 9, &mut m),
            LmStatus::InvalidArgument
        );
        assert_eq!(
            lm_machine_new(ok.as_ptr(), 2, 8, 8, 8, 0, &mut m),
            LmStatus::Config
        );
        assert_eq!(
            lm_machine_new(ptr::null(), 4, 8, 8, 8, 0, &mut m),
            LmStatus::NullPointer
        );
        assert_eq!(
            lm_machine_run(ptr::null_mut(), 1, ptr::null_mut(), ptr::null_mut()),
            LmStatus::NullPointer
        );

        let m = machine(COUNTDOWN, LmBackend::Oracle);
        let mut v = 0;
        assert_eq!(
            lm_machine_read_word(m, 99, &mut v),
            LmStatus::InvalidArgument
        );
        assert_eq!(
            lm_machine_run(m, 0, ptr::null_mut(), ptr::null_mut()),
            LmStatus::Runtime
        );
        lm_machine_free(m);
        lm_machine_free(ptr::null_mut());
    }
}

#[test]
fn core_queries() {
    let mut layers = 0;
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(
            lm_core_counted_layers(6, 8, 32, 16, &mut layers),
            LmStatus::Ok
        );
        assert!(layers <= 23);
        assert_eq!(
            lm_core_export_weights(2, 4, 1, 2, 0, &mut json),
            LmStatus::Ok
        );
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        lm_string_free(json);
        let back = looped_mlp::ir::import_weights(text.as_bytes()).unwrap();
        assert_eq!(looped_mlp::ir::counted_layers(&back), {
            let mut n = 0;
            lm_core_counted_layers(2, 4, 1, 2, &mut n);
            n
        });
        lm_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/looped_mlp.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "lm_machine_new",
        "lm_machine_step",
        "lm_machine_run",
        "lm_machine_read_word",
        "lm_machine_read_symbol",
        "lm_machine_pc",
        "lm_machine_free",
        "lm_core_counted_layers",
        "lm_core_export_weights",
        "lm_string_free",
        "lm_last_error_message",
        "LM_STATUS_OK",
        "LM_BACKEND_MLP_LOWERED",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let probe = dir.path().join("probe.c");
    std::fs::write(
        &probe,
        "#include \"looped_mlp.h\"\nint main(void) { LmMachine *m = 0; return lm_machine_free(m), LM_STATUS_OK; }\n",
    )
    .unwrap();
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&probe)
        .status()
    {
        Ok(status) => assert!(status.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler; skipped syntax check"),
    }
}
