use std::path::Path;

use super::{Result, TrainError};

pub const LOG_HEADER: [&str; 8] = [
    "epoch",
    "train_loss",
    "acc_accent_train",
    "acc_gender_train",
    "acc_age_train",
    "acc_accent_val",
    "acc_gender_val",
    "acc_age_val",
];

/// Accuracies are indexed accent, gender, age; `None` when the model has no
/// head for the task or the split is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: [Option<f64>; 3],
    pub val_acc: [Option<f64>; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| TrainError::Log(format!("bad number {s:?}")))
}

impl TrainingLog {
    pub fn push(&mut self, r: EpochRecord) {
        self.records.push(r);
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(LOG_HEADER).expect("in-memory write");
        for r in &self.records {
            let mut row = vec![r.epoch.to_string(), r.train_loss.to_string()];
            row.extend(r.train_acc.iter().chain(&r.val_acc).map(|v| opt(*v)));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| TrainError::Log(e.to_string()))?;
        if header.iter().ne(LOG_HEADER) {
            return Err(TrainError::Log(format!("unexpected header {header:?}")));
        }
        let mut log = Self::default();
        for row in rd.records() {
            let row = row.map_err(|e| TrainError::Log(e.to_string()))?;
            let f: Vec<&str> = row.iter().collect();
            let epoch = f[0].parse().map_err(|_| TrainError::Log(format!("bad epoch {:?}", f[0])))?;
            let train_loss = parse_opt(f[1])?.ok_or_else(|| TrainError::Log("missing train_loss".into()))?;
            log.push(EpochRecord {
                epoch,
                train_loss,
                train_acc: [parse_opt(f[2])?, parse_opt(f[3])?, parse_opt(f[4])?],
                val_acc: [parse_opt(f[5])?, parse_opt(f[6])?, parse_opt(f[7])?],
            });
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}
