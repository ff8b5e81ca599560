fn main() {
    std::process::exit(kwsfcm::cli::run(std::env::args_os()));
}
