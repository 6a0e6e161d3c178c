fn main() {
    std::process::exit(adw_cli::run(std::env::args_os()));
}
