fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(rbc::cli::dispatch(&argv));
}
