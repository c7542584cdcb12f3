fn main() {
    std::process::exit(hetriever::cli::run(std::env::args_os()));
}
