fn main() {
    std::process::exit(tilelab::cli::cli_main(std::env::args_os()));
}
