fn main() {
    std::process::exit(dcg::cli::run(std::env::args_os()));
}
