fn main() {
    std::process::exit(fcnscape::cli::run(std::env::args_os()));
}
