fn main() {
    std::process::exit(cyclekit::cli::run(std::env::args_os()));
}
