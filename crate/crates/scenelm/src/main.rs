fn main() {
    if let Err(e) = scenelm::cli::run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
