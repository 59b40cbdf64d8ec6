//! Built-in scenarios addressable by name: `example3`, `mac`, `congestion-demo`.

pub mod congestion;
pub mod example3;
pub mod mac;

pub const NAMES: [&str; 3] = ["example3", "mac", "congestion-demo"];
