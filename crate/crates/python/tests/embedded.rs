//! Runs the Python smoke test against the module linked into this binary.

use std::ffi::CString;

use pyo3::prelude::*;
use tegraph_py::tegraph_py;

#[test]
fn smoke_script_passes_in_embedded_interpreter() {
    pyo3::append_to_inittab!(tegraph_py);
    Python::initialize();
    let script =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/python/smoke_test.py"))
            .unwrap();
    Python::attach(|py| {
        let globals = pyo3::types::PyDict::new(py);
        globals.set_item("__name__", "__main__").unwrap();
        let code = CString::new(script).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("smoke script failed: {e}");
        }
    });
}
