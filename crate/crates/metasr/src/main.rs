fn main() {
    std::process::exit(metasr::cli::run(std::env::args_os()));
}
