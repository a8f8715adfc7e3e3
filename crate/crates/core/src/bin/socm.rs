fn main() {
    std::process::exit(socm::cli::run(std::env::args_os()));
}
