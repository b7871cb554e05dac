//! Manifest CSV: header `path,accent,age_group,gender`, one clip per row.
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Accent, AgeGroup, DatasetError, Gender, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["path", "accent", "age_group", "gender"];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleRecord {
    pub audio_path: PathBuf,
    pub accent: Accent,
    pub age_group: AgeGroup,
    pub gender: Gender,
}

impl SampleRecord {
    pub fn new(audio_path: impl Into<PathBuf>, accent: Accent, age_group: AgeGroup, gender: Gender) -> Self {
        Self {
            audio_path: audio_path.into(),
            accent,
            age_group,
            gender,
        }
    }

    /// Label ids in head order: accent, gender, age group.
    pub fn task_labels(&self) -> [usize; 3] {
        [self.accent.id(), self.gender.id(), self.age_group.id()]
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base, path)
}

/// Parses manifest text. `source` only labels error messages.
pub fn parse_manifest(text: &str, base_dir: &Path, source: &Path) -> Result<Vec<SampleRecord>> {
    let whole = |msg: String| DatasetError::Manifest {
        path: source.to_path_buf(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| whole(e.to_string()))?.clone();
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(MANIFEST_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| whole(format!("missing column `{name}`")))?;
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // row numbers count data rows from 1, header excluded
        let row_no = i + 1;
        let row_err = |msg: String| DatasetError::ManifestRow {
            path: source.to_path_buf(),
            row: row_no,
            msg,
        };
        let row = row.map_err(|e| row_err(e.to_string()))?;
        let field = |c: usize| row.get(cols[c]).ok_or_else(|| row_err(format!("missing `{}`", MANIFEST_HEADER[c])));
        let label = |c: usize, count: usize| -> Result<usize> {
            let raw = field(c)?;
            let id: usize = raw
                .parse()
                .map_err(|_| row_err(format!("{} `{raw}` is not a class id", MANIFEST_HEADER[c])))?;
            if id >= count {
                return Err(row_err(format!(
                    "{} {id} out of range 0..{}",
                    MANIFEST_HEADER[c],
                    count - 1
                )));
            }
            Ok(id)
        };
        let raw_path = field(0)?;
        if raw_path.is_empty() {
            return Err(row_err("empty path".into()));
        }
        let accent = Accent::from_id(label(1, Accent::COUNT)?).unwrap();
        let age_group = AgeGroup::from_id(label(2, AgeGroup::COUNT)?).unwrap();
        let gender = Gender::from_id(label(3, Gender::COUNT)?).unwrap();
        let p = Path::new(raw_path);
        let audio_path = if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        if !seen.insert(audio_path.clone()) {
            log::warn!("{}: row {row_no}: duplicate path {}", source.display(), audio_path.display());
        }
        records.push(SampleRecord::new(audio_path, accent, age_group, gender));
    }
    Ok(records)
}

/// Writes records with paths relative to the manifest's directory where
/// possible.
pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut out = MANIFEST_HEADER.join(",");
    out.push('\n');
    for r in records {
        let shown = r.audio_path.strip_prefix(base).unwrap_or(&r.audio_path);
        let shown = shown.to_string_lossy();
        if shown.contains(',') || shown.contains('\n') {
            return Err(DatasetError::Manifest {
                path: path.to_path_buf(),
                msg: format!("path {shown:?} contains a comma or newline"),
            });
        }
        out.push_str(&format!(
            "{shown},{},{},{}\n",
            r.accent.id(),
            r.age_group.id(),
            r.gender.id()
        ));
    }
    fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<SampleRecord>> {
        parse_manifest(text, Path::new("/data"), Path::new("m.csv"))
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("path,accent,age_group,gender\n").unwrap().is_empty());
    }

    #[test]
    fn direct_parse_and_relative_resolution() {
        let recs = parse("path,accent,age_group,gender\na.wav,5,4,1\n/abs/b.wav,0,0,0\n").unwrap();
        assert_eq!(
            recs[0],
            SampleRecord::new("/data/a.wav", Accent::Mandarin, AgeGroup::FiftyPlus, Gender::Female)
        );
        assert_eq!(recs[1].audio_path, PathBuf::from("/abs/b.wav"));
        assert_eq!(recs[0].task_labels(), [5, 1, 4]);
    }

    #[test]
    fn column_order_is_free() {
        let recs = parse("gender,path,age_group,accent\n1,a.wav,2,3\n").unwrap();
        assert_eq!(recs[0].accent, Accent::American);
        assert_eq!(recs[0].age_group, AgeGroup::Thirties);
    }

    #[test]
    fn out_of_range_names_row_and_value() {
        let err = parse("path,accent,age_group,gender\nok.wav,0,0,0\na.wav,6,0,0\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, DatasetError::ManifestRow { row: 2, .. }), "{msg}");
        assert!(msg.contains("accent 6"), "{msg}");
    }

    #[test]
    fn missing_column() {
        let err = parse("path,accent,gender\na.wav,1,1\n").unwrap_err();
        assert!(err.to_string().contains("age_group"));
    }

    #[test]
    fn duplicates_are_kept() {
        let recs = parse("path,accent,age_group,gender\na.wav,1,1,1\na.wav,1,1,1\n").unwrap();
        assert_eq!(recs.len(), 2);
    }

    #[test]
    fn write_then_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            SampleRecord::new(dir.path().join("x/a.wav"), Accent::German, AgeGroup::Twenties, Gender::Male),
            SampleRecord::new("/elsewhere/b.wav", Accent::India, AgeGroup::Under20, Gender::Female),
        ];
        let m = dir.path().join("m.csv");
        write_manifest(&m, &recs).unwrap();
        assert!(fs::read_to_string(&m).unwrap().contains("\nx/a.wav,2,1,0\n"));
        assert_eq!(load_manifest(&m).unwrap(), recs);
    }
}
