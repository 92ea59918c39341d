#![allow(dead_code)]

pub mod metrics;
pub mod oracle;
pub mod trees;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use navbench::model::{load_screen, UIScreen};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn suite_dir() -> PathBuf {
    fixtures().join("suite")
}

pub fn read(path: impl AsRef<Path>) -> String {
    let path = path.as_ref();
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Screen fixture from `fixtures/screens/`.
pub fn screen(name: &str) -> Arc<UIScreen> {
    let path = fixtures().join("screens").join(name);
    let bytes = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    Arc::new(load_screen(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
}

/// Recursively copy `from` into `to`.
pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Malformed action lines and the failure each must produce.
pub const MALFORMED: &[(&str, &str)] = &[
    ("", "unknown_verb"),
    ("   ", "unknown_verb"),
    ("tap [3]", "unknown_verb"),
    ("clicks [3]", "unknown_verb"),
    ("cl ick [3]", "unknown_verb"),
    ("scroll [1] [up]", "unknown_verb"),
    ("type [0] [hi]", "unknown_verb"),
    ("PRESSED [back]", "unknown_verb"),
    ("[3]", "unknown_verb"),
    ("3 click", "unknown_verb"),
    ("Action: click [3]", "unknown_verb"),
    ("swipeup [1]", "unknown_verb"),
    ("longpress [2]", "unknown_verb"),
    ("stop", "unknown_verb"),
    ("\u{1F44D} click [1]", "unknown_verb"),
    ("click", "arity"),
    ("click [3] [4]", "arity"),
    ("click [3", "arity"),
    ("click 3", "arity"),
    ("click [[3]]", "arity"),
    ("click_elem(3)", "arity"),
    ("click(3)", "arity"),
    ("click [1] extra", "arity"),
    ("longclick", "arity"),
    ("text", "arity"),
    ("text [1]", "arity"),
    ("text [1] hello", "arity"),
    ("text [1] [hi] junk", "arity"),
    ("swipe [1]", "arity"),
    ("swipe [1,2]", "arity"),
    ("swipe [1] [up] [down]", "arity"),
    ("press", "arity"),
    ("press [back] [home]", "arity"),
    ("click [-1]", "bad_index_literal"),
    ("click [abc]", "bad_index_literal"),
    ("click [99999999999]", "bad_index_literal"),
    ("click []", "bad_index_literal"),
    ("click [ ]", "bad_index_literal"),
    ("longclick [1.5]", "bad_index_literal"),
    ("click [1 2]", "bad_index_literal"),
    ("text [x] [hi]", "bad_index_literal"),
    ("swipe [one] [up]", "bad_index_literal"),
    ("click [+3]", "bad_index_literal"),
    ("click [0x10]", "bad_index_literal"),
    ("click [\u{663}]", "bad_index_literal"),
    ("click [1,x]", "bad_coordinate"),
    ("click [1,2,3]", "bad_coordinate"),
    ("click [,5]", "bad_coordinate"),
    ("click [5,]", "bad_coordinate"),
    ("click [-1,5]", "bad_coordinate"),
    ("longclick [1.5,2]", "bad_coordinate"),
    ("text [1,] [hi]", "bad_coordinate"),
    ("swipe [1,1] [2]", "bad_coordinate"),
    ("swipe [0,0] [up]", "bad_coordinate"),
    ("click [4294967296,1]", "bad_coordinate"),
    ("swipe [1] [north]", "bad_direction"),
    ("swipe [1] []", "bad_direction"),
    ("swipe [1] [upward]", "bad_direction"),
    ("swipe [1] [3,4]", "bad_direction"),
    ("press [menu]", "bad_key"),
    ("press []", "bad_key"),
    ("press [3]", "bad_key"),
    ("press [st op]", "bad_key"),
    ("press [power]", "bad_key"),
    ("press [BACKSPACE]", "bad_key"),
    ("text [1] [a\nb]", "multiline_text"),
    ("text [1,1] [line\rbreak]", "multiline_text"),
    ("text [0] [x\n]", "multiline_text"),
];
