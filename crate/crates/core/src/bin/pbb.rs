fn main() {
    std::process::exit(pbb::cli::run(std::env::args_os()));
}
