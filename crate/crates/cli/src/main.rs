fn main() {
    std::process::exit(snic_cli::run(std::env::args_os()));
}
