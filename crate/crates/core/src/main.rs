fn main() {
    std::process::exit(streamnav::cli::run(std::env::args_os()));
}
