pub mod audit;
pub mod cache;
pub mod cdx;
pub mod config;
pub mod corpus;
pub mod endpoint;
pub mod era;
pub mod fetch;
pub mod linkformat;
pub mod memento;
pub mod metrics;
pub mod parse_report;
pub mod probe;
pub mod report;
pub mod resolve;
pub mod timestamp;
pub mod urlkey;
pub mod zones;
