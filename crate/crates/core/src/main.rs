fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = reactxgb::cli::run(args) {
        eprintln!("error[{}]: {}", e.class(), e);
        std::process::exit(match e.class() {
            "config" => 2,
            "missing-artifact" => 3,
            _ => 1,
        });
    }
}
