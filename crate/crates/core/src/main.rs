fn main() {
    std::process::exit(tuplecrf::cli::run(std::env::args_os()));
}
