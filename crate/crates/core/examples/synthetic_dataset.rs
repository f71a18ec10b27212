//! Writes a synthetic moving-blob vs static dataset as PNG frames plus a
//! manifest.
//!
//! ```text
//! cargo run -p fightnet-core --example synthetic_dataset -- data/synthetic 10 16 36 7
//! ```
//! Arguments: output directory, clips per class, frames per clip, frame
//! side, seed.

use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = PathBuf::from(args.first().map_or("data/synthetic", String::as_str));
    let num = |i: usize, default: u64| args.get(i).map_or(Ok(default), |s| s.parse::<u64>());
    let (Ok(per_class), Ok(frames), Ok(size), Ok(seed)) = (num(1, 10), num(2, 16), num(3, 36), num(4, 7)) else {
        eprintln!("usage: synthetic_dataset [dir] [per_class] [frames] [size] [seed]");
        return ExitCode::from(2);
    };
    match fightnet::pipeline::write_synthetic_dataset(&dir, per_class as usize, frames as usize, size as usize, seed) {
        Ok(m) => {
            println!("wrote {} clips to {}", m.len(), dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
