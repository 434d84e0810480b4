fn main() {
    std::process::exit(numpro::cli::run(std::env::args_os()));
}
