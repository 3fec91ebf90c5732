//! Shell-only fixture repositories and bug artifacts for harness tests.
//!
//! Each fixture is a tiny library of shell functions with test files that
//! print `PASS <id>` or `FAIL <id>`. Artifacts pair it with an awk parser.
//! Diffs are produced by git from real edits, never written by hand.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

#[derive(Debug, Clone, Copy)]
pub enum Edit {
    /// Replace the first occurrence of `find`.
    Replace {
        path: &'static str,
        find: &'static str,
        with: &'static str,
    },
    Append {
        path: &'static str,
        text: &'static str,
    },
    Write {
        path: &'static str,
        content: &'static str,
    },
}

impl Edit {
    pub fn path(&self) -> &'static str {
        match self {
            Edit::Replace { path, .. } | Edit::Append { path, .. } | Edit::Write { path, .. } => path,
        }
    }

    pub fn apply(&self, root: &Path) -> io::Result<()> {
        let full = root.join(self.path());
        match self {
            Edit::Replace { find, with, .. } => {
                let text = fs::read_to_string(&full)?;
                if !text.contains(find) {
                    return Err(io::Error::other(format!("{:?} not found in {}", find, self.path())));
                }
                fs::write(&full, text.replacen(find, with, 1))
            }
            Edit::Append { text, .. } => {
                let mut s = fs::read_to_string(&full)?;
                s.push_str(text);
                fs::write(&full, s)
            }
            Edit::Write { content, .. } => {
                if let Some(parent) = full.parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::write(&full, content)
            }
        }
    }
}

pub struct FixtureSpec {
    pub name: &'static str,
    pub files: &'static [(&'static str, &'static str)],
    pub test_files: &'static [&'static str],
    /// Two independent breakages, one per source file.
    pub bug: [Edit; 2],
    /// Makes the assertions broken by `bug` vacuous, one per test file.
    pub weaken: [Edit; 2],
    /// Comment-only changes to the two bug files.
    pub inert_src: [Edit; 2],
    /// Comment-only changes to the two test files.
    pub inert_test: [Edit; 2],
    /// A further breakage of a test the bug leaves passing.
    pub extra_break: Edit,
    /// Rewrites a test file so every assertion it reports passes.
    pub tamper: Edit,
}

pub const TEST_SCRIPT: &str = "#!/bin/bash
for t in tests/test_*.sh; do
  bash \"$t\"
done
";

pub const PARSER: &str = r#"#!/bin/sh
awk '
BEGIN { printf "{"; n = 0 }
($1 == "PASS" || $1 == "FAIL") && NF == 2 && !seen[$2]++ {
  printf "%s\"%s\": \"%s\"", (n++ ? ", " : ""), $2, ($1 == "PASS" ? "passed" : "failed")
}
END { print "}" }
'
"#;

const CHECK_LIB: &str = "check() {
  if [ \"$2\" = \"$3\" ]; then echo \"PASS $1\"; else echo \"FAIL $1\"; fi
}
";

pub static CALC: FixtureSpec = FixtureSpec {
    name: "calc",
    files: &[
        ("README", "calc: integer helpers\n"),
        (
            "src/arith.sh",
            "add() { echo $(( $1 + $2 )); }
sub() { echo $(( $1 - $2 )); }
mul() { echo $(( $1 * $2 )); }
",
        ),
        (
            "src/fmt.sh",
            "pad() { printf '%05d\\n' \"$1\"; }
sign() {
  if [ \"$1\" -lt 0 ]; then echo neg
  elif [ \"$1\" -eq 0 ]; then echo zero
  else echo pos
  fi
}
",
        ),
        ("tests/lib.sh", CHECK_LIB),
        (
            "tests/test_arith.sh",
            ". src/arith.sh
. tests/lib.sh
check arith_add_small 5 \"$(add 2 3)\"
check arith_add_zero 7 \"$(add 7 0)\"
check arith_sub 4 \"$(sub 9 5)\"
check arith_mul 42 \"$(mul 6 7)\"
",
        ),
        (
            "tests/test_fmt.sh",
            ". src/fmt.sh
. tests/lib.sh
check fmt_pad 00042 \"$(pad 42)\"
check fmt_sign_neg neg \"$(sign -3)\"
check fmt_sign_zero zero \"$(sign 0)\"
check fmt_sign_pos pos \"$(sign 8)\"
",
        ),
    ],
    test_files: &["tests/test_arith.sh", "tests/test_fmt.sh"],
    bug: [
        Edit::Replace {
            path: "src/arith.sh",
            find: "add() { echo $(( $1 + $2 )); }",
            with: "add() { echo $(( $1 + $2 + ($2 == 0) )); }",
        },
        Edit::Replace {
            path: "src/fmt.sh",
            find: "elif [ \"$1\" -eq 0 ]",
            with: "elif [ \"$1\" -eq 1 ]",
        },
    ],
    weaken: [
        Edit::Replace {
            path: "tests/test_arith.sh",
            find: "check arith_add_zero 7 \"$(add 7 0)\"",
            with: "check arith_add_zero 7 7",
        },
        Edit::Replace {
            path: "tests/test_fmt.sh",
            find: "check fmt_sign_zero zero \"$(sign 0)\"",
            with: "check fmt_sign_zero zero zero",
        },
    ],
    inert_src: [
        Edit::Append {
            path: "src/arith.sh",
            text: "# integer arithmetic only\n",
        },
        Edit::Append {
            path: "src/fmt.sh",
            text: "# output helpers\n",
        },
    ],
    inert_test: [
        Edit::Append {
            path: "tests/test_arith.sh",
            text: "# arithmetic cases\n",
        },
        Edit::Append {
            path: "tests/test_fmt.sh",
            text: "# formatting cases\n",
        },
    ],
    extra_break: Edit::Replace {
        path: "src/arith.sh",
        find: "mul() { echo $(( $1 * $2 )); }",
        with: "mul() { echo $(( $1 * $2 + 1 )); }",
    },
    tamper: Edit::Write {
        path: "tests/test_arith.sh",
        content: "echo PASS arith_add_small
echo PASS arith_add_zero
echo PASS arith_sub
echo PASS arith_mul
",
    },
};

pub static INVENTORY: FixtureSpec = FixtureSpec {
    name: "inventory",
    files: &[
        ("README", "inventory: stock and pricing\n"),
        (
            "src/stock.sh",
            "restock() { echo $(( $1 + $2 )); }
take() {
  if [ \"$2\" -gt \"$1\" ]; then echo short; else echo $(( $1 - $2 )); fi
}
",
        ),
        (
            "src/price.sh",
            "total() { echo $(( $1 * $2 )); }
discount() { echo $(( $1 - $1 * $2 / 100 )); }
",
        ),
        ("tests/lib.sh", CHECK_LIB),
        (
            "tests/test_stock.sh",
            ". src/stock.sh
. tests/lib.sh
check stock_restock 15 \"$(restock 10 5)\"
check stock_take 7 \"$(take 10 3)\"
check stock_take_all 0 \"$(take 4 4)\"
check stock_short short \"$(take 2 9)\"
",
        ),
        (
            "tests/test_price.sh",
            ". src/price.sh
. tests/lib.sh
check price_total 60 \"$(total 12 5)\"
check price_discount 90 \"$(discount 100 10)\"
check price_no_discount 80 \"$(discount 80 0)\"
",
        ),
    ],
    test_files: &["tests/test_price.sh", "tests/test_stock.sh"],
    bug: [
        Edit::Replace {
            path: "src/stock.sh",
            find: "if [ \"$2\" -gt \"$1\" ]",
            with: "if [ \"$2\" -ge \"$1\" ]",
        },
        Edit::Replace {
            path: "src/price.sh",
            find: "$1 * $2 / 100",
            with: "$1 * $2 / 10",
        },
    ],
    weaken: [
        Edit::Replace {
            path: "tests/test_stock.sh",
            find: "check stock_take_all 0 \"$(take 4 4)\"",
            with: "check stock_take_all 0 0",
        },
        Edit::Replace {
            path: "tests/test_price.sh",
            find: "check price_discount 90 \"$(discount 100 10)\"",
            with: "check price_discount 90 90",
        },
    ],
    inert_src: [
        Edit::Append {
            path: "src/stock.sh",
            text: "# counts are whole units\n",
        },
        Edit::Append {
            path: "src/price.sh",
            text: "# prices are in cents\n",
        },
    ],
    inert_test: [
        Edit::Append {
            path: "tests/test_stock.sh",
            text: "# stock cases\n",
        },
        Edit::Append {
            path: "tests/test_price.sh",
            text: "# price cases\n",
        },
    ],
    extra_break: Edit::Replace {
        path: "src/price.sh",
        find: "total() { echo $(( $1 * $2 )); }",
        with: "total() { echo $(( $1 * $2 * 2 )); }",
    },
    tamper: Edit::Write {
        path: "tests/test_price.sh",
        content: "echo PASS price_total
echo PASS price_discount
echo PASS price_no_discount
",
    },
};

/// Thresholds under which golden artifacts pass and each mutant fails only
/// its target check.
pub const GOLDEN_MIN_PASSING: usize = 5;
pub const GOLDEN_MIN_CHANGED_FILES: usize = 2;
pub const GOLDEN_MIN_FAILING: usize = 1;

/// Single-check mutants of a golden artifact, in check order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutant {
    UncoveredWeaken,
    BrokenParser,
    FailingBaseline,
    SingleFileBug,
    InertBug,
    InertWeaken,
    IdleBugFile,
}

impl Mutant {
    pub const ALL: [Mutant; 7] = [
        Mutant::UncoveredWeaken,
        Mutant::BrokenParser,
        Mutant::FailingBaseline,
        Mutant::SingleFileBug,
        Mutant::InertBug,
        Mutant::InertWeaken,
        Mutant::IdleBugFile,
    ];

    /// One-based number of the check this mutant must fail.
    pub fn target_check(self) -> usize {
        Mutant::ALL.iter().position(|m| *m == self).unwrap() + 1
    }
}

/// The five artifact files as text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactFiles {
    pub test_script: String,
    pub test_files: Vec<String>,
    pub test_parser: String,
    pub bug_inject: String,
    pub test_weaken: String,
}

impl ArtifactFiles {
    /// Writes the canonical layout (without `meta.json`).
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("test_script.sh"), &self.test_script)?;
        let mut list = self.test_files.join("\n");
        list.push('\n');
        fs::write(dir.join("test_files.txt"), list)?;
        fs::write(dir.join("test_parser.py"), &self.test_parser)?;
        fs::write(dir.join("bug_inject.diff"), &self.bug_inject)?;
        fs::write(dir.join("test_weaken.diff"), &self.test_weaken)?;
        Ok(())
    }
}

fn git(dir: &Path, args: &[&str]) -> io::Result<Vec<u8>> {
    let out = Command::new("git")
        .current_dir(dir)
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_AUTHOR_NAME", "fixture")
        .env("GIT_AUTHOR_EMAIL", "fixture@localhost")
        .env("GIT_AUTHOR_DATE", "2000-01-01T00:00:00+0000")
        .env("GIT_COMMITTER_NAME", "fixture")
        .env("GIT_COMMITTER_EMAIL", "fixture@localhost")
        .env("GIT_COMMITTER_DATE", "2000-01-01T00:00:00+0000")
        .args(args)
        .output()?;
    if !out.status.success() {
        return Err(io::Error::other(format!(
            "git {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    Ok(out.stdout)
}

fn write_files(root: &Path, files: &[(&str, &str)]) -> io::Result<()> {
    for (path, content) in files {
        let full = root.join(path);
        fs::create_dir_all(full.parent().unwrap())?;
        fs::write(full, content)?;
    }
    Ok(())
}

fn commit_all(root: &Path, message: &str) -> io::Result<()> {
    git(root, &["add", "-A"])?;
    git(root, &["commit", "-q", "--allow-empty", "-m", message])?;
    Ok(())
}

/// A fixture materialized as a committed git repository in a temp directory.
pub struct Fixture {
    pub spec: &'static FixtureSpec,
    dir: TempDir,
}

impl Fixture {
    pub fn new(spec: &'static FixtureSpec) -> io::Result<Self> {
        let dir = tempfile::Builder::new()
            .prefix(&format!("sspr-fixture-{}-", spec.name))
            .tempdir()?;
        write_files(dir.path(), spec.files)?;
        git(dir.path(), &["init", "-q", "--initial-branch=main"])?;
        commit_all(dir.path(), "fixture")?;
        Ok(Fixture { spec, dir })
    }

    pub fn calc() -> io::Result<Self> {
        Self::new(&CALC)
    }

    pub fn inventory() -> io::Result<Self> {
        Self::new(&INVENTORY)
    }

    pub fn all() -> io::Result<Vec<Self>> {
        Ok(vec![Self::calc()?, Self::inventory()?])
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    /// Diff produced by `change`, taken against the tree with `base` applied.
    pub fn diff(&self, base: &[Edit], change: &[Edit]) -> io::Result<String> {
        let scratch = tempfile::tempdir()?;
        write_files(scratch.path(), self.spec.files)?;
        for e in base {
            e.apply(scratch.path())?;
        }
        git(scratch.path(), &["init", "-q", "--initial-branch=main"])?;
        commit_all(scratch.path(), "base")?;
        for e in change {
            e.apply(scratch.path())?;
        }
        git(scratch.path(), &["add", "-A"])?;
        let out = git(scratch.path(), &["diff", "--cached", "--no-color", "--no-renames"])?;
        String::from_utf8(out).map_err(io::Error::other)
    }

    pub fn golden(&self) -> io::Result<ArtifactFiles> {
        let s = self.spec;
        Ok(ArtifactFiles {
            test_script: TEST_SCRIPT.to_owned(),
            test_files: s.test_files.iter().map(|f| f.to_string()).collect(),
            test_parser: PARSER.to_owned(),
            bug_inject: self.diff(&[], &s.bug)?,
            test_weaken: self.diff(&s.bug, &s.weaken)?,
        })
    }

    pub fn mutant(&self, m: Mutant) -> io::Result<ArtifactFiles> {
        let s = self.spec;
        let mut a = self.golden()?;
        match m {
            Mutant::UncoveredWeaken => {
                let dropped = s.weaken[1].path();
                a.test_files.retain(|f| f != dropped);
            }
            Mutant::BrokenParser => a.test_parser = "#!/bin/sh\ncat >/dev/null\necho '[]'\n".into(),
            Mutant::FailingBaseline => a.test_script.push_str("echo \"FAIL sanity_probe\"\n"),
            Mutant::SingleFileBug => {
                a.bug_inject = self.diff(&[], &s.bug[..1])?;
                a.test_weaken = self.diff(&s.bug[..1], &s.weaken)?;
            }
            Mutant::InertBug => {
                a.bug_inject = self.diff(&[], &s.inert_src)?;
                a.test_weaken = self.diff(&s.inert_src, &s.weaken)?;
            }
            Mutant::InertWeaken => a.test_weaken = self.diff(&s.bug, &s.inert_test)?,
            Mutant::IdleBugFile => {
                let bug = [s.bug[0], s.inert_src[1]];
                a.bug_inject = self.diff(&[], &bug)?;
                a.test_weaken = self.diff(&bug, &s.weaken)?;
            }
        }
        Ok(a)
    }

    /// The idle-file mutant with its non-contributing file dropped.
    pub fn idle_file_removed(&self) -> io::Result<ArtifactFiles> {
        let s = self.spec;
        let mut a = self.golden()?;
        a.bug_inject = self.diff(&[], &s.bug[..1])?;
        a.test_weaken = self.diff(&s.bug[..1], &s.weaken)?;
        Ok(a)
    }

    /// An unsuccessful repair of the golden bug: it leaves the bug in place
    /// and breaks one more test. Relative to the buggy, weakened tree.
    pub fn failed_patch_breaking_more(&self) -> io::Result<String> {
        let s = self.spec;
        let base: Vec<Edit> = s.bug.iter().chain(&s.weaken).copied().collect();
        self.diff(&base, &[s.extra_break])
    }

    /// A prediction that only rewrites a test file, relative to the buggy,
    /// weakened tree.
    pub fn tamper_patch(&self) -> io::Result<String> {
        let s = self.spec;
        let base: Vec<Edit> = s.bug.iter().chain(&s.weaken).copied().collect();
        self.diff(&base, &[s.tamper])
    }

    /// Test ids reported by the fixture's tests, sorted.
    pub fn test_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .spec
            .files
            .iter()
            .filter(|(p, _)| self.spec.test_files.contains(p))
            .flat_map(|(_, c)| c.lines())
            .filter_map(|l| l.strip_prefix("check "))
            .map(|l| l.split_whitespace().next().unwrap().to_owned())
            .collect();
        ids.sort();
        ids
    }

    /// Copies the fixture repository (with history) to `dest`.
    pub fn copy_to(&self, dest: &Path) -> io::Result<PathBuf> {
        let out = Command::new("cp")
            .arg("-a")
            .arg(self.root())
            .arg(dest)
            .output()?;
        if !out.status.success() {
            return Err(io::Error::other(String::from_utf8_lossy(&out.stderr).into_owned()));
        }
        Ok(dest.to_owned())
    }
}
