fn main() {
    std::process::exit(dpwo::cli::cli_main(std::env::args_os()));
}
