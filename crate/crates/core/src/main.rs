fn main() {
    std::process::exit(facecond::cli::run(std::env::args_os()));
}
