fn main() {
    std::process::exit(nets_cli::run(std::env::args_os()));
}
