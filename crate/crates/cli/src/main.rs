fn main() {
    std::process::exit(multifruit_cli::run(std::env::args_os()));
}
