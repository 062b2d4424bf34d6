fn main() {
    std::process::exit(gdv_cli::run(std::env::args_os()));
}
