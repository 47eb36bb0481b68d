fn main() {
    std::process::exit(edue::cli::run(std::env::args_os()));
}
