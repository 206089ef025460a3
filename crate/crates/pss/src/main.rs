fn main() {
    std::process::exit(pss::cli::run(std::env::args_os()));
}
