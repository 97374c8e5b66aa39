use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::CliError;

/// 17 significant digits in scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvOut {
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create<S: AsRef<str>>(path: &Path, header: &[S]) -> Result<Self, CliError> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(BufWriter::new(File::create(path)?));
        writer.write_record(header.iter().map(|h| h.as_ref()))?;
        Ok(CsvOut { writer })
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<(), CliError> {
        self.writer.write_record(fields.iter().map(|f| f.as_ref()))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush()?;
        Ok(())
    }
}
