#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tempfile::TempDir;

pub const CASE_Q: &str = "What is the income of the Company A in 2024?";
pub const CASE_SQL: &str =
    "SELECT SUM(shouldincome_after) AS total_income FROM revenue_by_quarter WHERE YEAR(ftime) = 2024 AND cname = 'Company A'";

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &target);
        } else {
            std::fs::copy(e.path(), target).unwrap();
        }
    }
}

/// A private copy of the core fixtures, so sessions and reports stay out of the tree.
pub fn workspace() -> TempDir {
    let tmp = TempDir::new().unwrap();
    let src = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures");
    copy_dir(&src, tmp.path());
    let _ = std::fs::remove_dir_all(tmp.path().join("sessions"));
    tmp
}
