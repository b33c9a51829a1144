//! Shared fixtures for unit tests: a small runnable Python bundle and
//! helpers to write bundle directories on disk.

use std::fs;

use tempfile::TempDir;

use crate::bundle::{load_bundle, BugBundle};
use crate::diff;

pub struct BundleFixture {
    /// Keeps the on-disk bundle alive for the bundle's lifetime.
    #[allow(dead_code)]
    pub dir: TempDir,
    pub bundle: BugBundle,
}

pub const CALC_MANIFEST: &str = "\
id = calc-div-zero
title = divide() crashes when dividing by zero
description = Calling divide(1, 0) raises an unhandled exception and the calculator crashes.\\nZeroDivisionError: division by zero\\nExpected: divide returns None when the divisor is zero.
language_tag = python
oracle_brt_command = python3 tests/test_div_zero.py
regression_test_commands = python3 tests/test_calc_basic.py
";

pub const CALC_PY: &str = r#""""Tiny calculator helpers."""


def add(a, b):
    return a + b


def divide(a, b):
    return a / b
"#;

pub const CALC_BASIC_TEST: &str = r#"import sys

sys.path.insert(0, ".")

from calc import add, divide

assert add(2, 3) == 5
assert divide(6, 3) == 2
print("ok")
"#;

pub const CALC_GT_DIFF: &str = "--- a/calc.py\n\
+++ b/calc.py\n\
@@ -6,4 +6,6 @@\n \n \n def divide(a, b):\n\
+    if b == 0:\n\
+        return None\n     return a / b\n\
--- /dev/null\n\
+++ b/tests/test_div_zero.py\n\
@@ -0,0 +1,9 @@\n\
+import sys\n\
+\n\
+sys.path.insert(0, \".\")\n\
+\n\
+from calc import divide\n\
+\n\
+assert divide(1, 0) is None\n\
+assert divide(8, 2) == 4\n\
+print(\"ok\")\n";

pub fn calc_snapshot() -> Vec<(&'static str, String)> {
    vec![
        ("calc.py", CALC_PY.to_string()),
        ("tests/test_calc_basic.py", CALC_BASIC_TEST.to_string()),
    ]
}

pub fn write_bundle(manifest: &str, files: &[(&str, String)], gt_diff: &str) -> TempDir {
    let dir = TempDir::new().expect("create bundle dir");
    fs::write(dir.path().join("manifest"), manifest).unwrap();
    fs::write(dir.path().join("ground_truth.diff"), gt_diff).unwrap();
    let snap = dir.path().join("snapshot");
    fs::create_dir_all(&snap).unwrap();
    for (rel, content) in files {
        let full = snap.join(rel);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).unwrap();
        }
        fs::write(full, content).unwrap();
    }
    dir
}

pub fn load_fixture(manifest: &str, files: &[(&str, String)], gt_diff: &str) -> BundleFixture {
    let dir = write_bundle(manifest, files, gt_diff);
    let bundle = load_bundle(dir.path()).expect("fixture bundle loads");
    BundleFixture { dir, bundle }
}

pub fn calc_bundle() -> BundleFixture {
    load_fixture(CALC_MANIFEST, &calc_snapshot(), CALC_GT_DIFF)
}

pub fn calc_bundle_with_oracle(oracle: &str) -> BundleFixture {
    let manifest = CALC_MANIFEST.replace(
        "oracle_brt_command = python3 tests/test_div_zero.py",
        &format!("oracle_brt_command = {}", oracle),
    );
    load_fixture(&manifest, &calc_snapshot(), CALC_GT_DIFF)
}

pub fn calc_bundle_with_build(build: &str) -> BundleFixture {
    let manifest = format!("{}build_command = {}\n", CALC_MANIFEST, build);
    load_fixture(&manifest, &calc_snapshot(), CALC_GT_DIFF)
}

/// A bundle whose ground-truth patch has exactly `target_lines` unidiff
/// body lines but is otherwise healthy. Used for the size warning check.
pub fn oversized_bundle(target_lines: usize) -> BundleFixture {
    let gen_py = "def value():\n    return 0\n";
    let gen_fixed = "def value():\n    return 1\n";
    let test_py = "import sys\n\nsys.path.insert(0, \".\")\n\nfrom gen import value\n\nassert value() == 1\n";
    // fix contributes 2 body lines, the new test 7; the rest comes from
    // rewriting a data table at 2 lines per row.
    assert!(target_lines >= 9 && (target_lines - 9) % 2 == 0);
    let rows = (target_lines - 9) / 2;
    let table_old: String = (0..rows).map(|i| format!("row{} 0\n", i)).collect();
    let table_new: String = (0..rows).map(|i| format!("row{} 1\n", i)).collect();

    let mut diffs = Vec::new();
    diffs.push(diff::diff_file("gen.py", Some(gen_py), Some(gen_fixed), 3).unwrap());
    if rows > 0 {
        diffs.push(diff::diff_file("table.txt", Some(&table_old), Some(&table_new), 3).unwrap());
    }
    diffs.push(diff::diff_file("tests/test_value.py", None, Some(test_py), 3).unwrap());
    let gt = diff::render_patch(&diffs);

    let manifest = "\
id = oversized
title = value() returns the wrong constant
description = value() should return 1.
language_tag = python
oracle_brt_command = python3 tests/test_value.py
";
    let files = vec![
        ("gen.py", gen_py.to_string()),
        ("table.txt", table_old),
    ];
    load_fixture(manifest, &files, &gt)
}

