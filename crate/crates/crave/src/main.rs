fn main() {
    std::process::exit(crave::harness::cli::run(std::env::args_os()));
}
