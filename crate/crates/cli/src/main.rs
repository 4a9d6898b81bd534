fn main() {
    std::process::exit(foaa_cli::run(std::env::args_os()));
}
