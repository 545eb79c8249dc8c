use std::fmt::Write as _;
use std::path::Path;

use super::{EpochRecord, StepRecord};
use crate::error::{Error, Result};

/// One row per epoch: stage, λ, learning rate, mean training loss and the
/// validation breakdown of every head.
pub fn write_train_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("stage,lambda,epoch,learning_rate,train_loss,val_loss");
    for h in 1..=4 {
        write!(s, ",val_e_b{h},val_e_r{h}").unwrap();
    }
    s.push_str(",improved\n");
    for r in history {
        write!(
            s,
            "{},{},{},{},{:e},{:e}",
            r.stage, r.lambda, r.epoch, r.learning_rate, r.train_loss, r.validation.total
        )
        .unwrap();
        for h in &r.validation.heads {
            write!(s, ",{:e},{:e}", h.e_b, h.e_r).unwrap();
        }
        writeln!(s, ",{}", r.improved).unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// One row per optimizer step with the batch total loss (full precision).
pub fn write_step_log(path: &Path, steps: &[StepRecord]) -> Result<()> {
    let mut s = String::from("stage,epoch,step,loss\n");
    for r in steps {
        writeln!(s, "{},{},{},{:e}", r.stage, r.epoch, r.step, r.loss).unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
