pub mod job;
pub mod oracle;
